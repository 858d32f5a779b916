//! Gradient-weighted class activation maps.
//!
//! For a chosen feature map A (C channels over h×w) and a scalar target
//! score y, each channel gets the weight α_k = mean over positions of
//! ∂y/∂A_k, and the map is ReLU(Σ_k α_k A_k). The map is bilinearly
//! upsampled to the crop and divided by its maximum.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::class::DamageClass;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::model::{EncodedInput, Model};
use crate::raster::{resize_bilinear, RgbImage};

#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    /// Rectified map at feature resolution, row-major h×w.
    pub map: Vec<f32>,
    pub h: usize,
    pub w: usize,
    /// Upsampled map in [0, 1], row-major side×side.
    pub upsampled: Vec<f32>,
    pub side: usize,
    pub target_class: DamageClass,
    pub layer_name: String,
}

/// Rectified weighted channel sum from activations and gradients (both
/// C×h×w), plus its max-normalised upsampling to `side`×`side`.
pub fn cam_from_parts(acts: &[f32], grads: &[f32], c: usize, h: usize, w: usize, side: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let plane = h * w;
    if acts.len() != c * plane || grads.len() != c * plane {
        return Err(Error::ShapeMismatch(format!("activations/gradients are not {c}x{h}x{w}")));
    }
    let mut map = vec![0.0f64; plane];
    for k in 0..c {
        let g = &grads[k * plane..(k + 1) * plane];
        let alpha = g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        let a = &acts[k * plane..(k + 1) * plane];
        for (m, &v) in map.iter_mut().zip(a) {
            *m += alpha * v as f64;
        }
    }
    let map: Vec<f32> = map.into_iter().map(|v| v.max(0.0) as f32).collect();
    let mut up = resize_bilinear(&map, w, h, 1, side, side);
    let peak = up.iter().copied().fold(0.0f32, f32::max);
    if peak > 0.0 {
        up.iter_mut().for_each(|v| *v /= peak);
    }
    Ok((map, up))
}

/// ∂score/∂(head outputs) for the class-evidence score of each head: the
/// target logit (4-way head), the sum of the threshold logits whose code
/// bits are set for the target (ordinal head), or the scalar itself
/// (regression head).
pub fn target_score_gradient(loss: LossKind, target: DamageClass) -> Vec<f32> {
    match loss {
        LossKind::CrossEntropy => {
            let mut g = vec![0.0; 4];
            g[target.index()] = 1.0;
            g
        }
        LossKind::OrdinalCrossEntropy => (0..3).map(|k| if k < target.index() { 1.0 } else { 0.0 }).collect(),
        LossKind::Mse => vec![1.0],
    }
}

/// Class activation map of `input` for `target` at feature map `layer`,
/// computed with the model in evaluation mode.
pub fn grad_cam(model: &mut Model, input: &EncodedInput, target: DamageClass, layer: &str) -> Result<CamMap> {
    let idx = model.layer_index(layer)?;
    model.forward(&[input], false, true, true)?;
    let dscore = target_score_gradient(model.config().loss, target);
    let out = model.backward(&dscore, false, Some(idx));
    model.zero_grad();
    let acts = model.backbone.features.get(idx).cloned().ok_or_else(|| Error::UnknownLayer(layer.into()))?;
    model.backbone.features.clear();
    let grads = out.captured.ok_or_else(|| Error::UnknownLayer(layer.into()))?.grad;
    let (map, upsampled) = cam_from_parts(&acts.sample(0), &grads.sample(0), acts.c, acts.h, acts.w, input.side)?;
    Ok(CamMap { map, h: acts.h, w: acts.w, upsampled, side: input.side, target_class: target, layer_name: layer.into() })
}

/// Anchor colours of the viridis ramp at 0, 1/8, ..., 1.
const VIRIDIS: [[f32; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

pub const COLORMAP_NAME: &str = "viridis";

/// Ramp colour for a value in [0, 1] (clamped), as unrounded RGB.
pub fn colormap(v: f32) -> [f32; 3] {
    let t = v.clamp(0.0, 1.0) * 8.0;
    let i = (libm::floorf(t) as usize).min(7);
    let f = t - i as f32;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f, a[2] + (b[2] - a[2]) * f]
}

/// Blends the coloured map onto the crop: (1 − alpha)·crop + alpha·colour.
pub fn overlay(cam: &CamMap, crop: &RgbImage, alpha: f32) -> Result<RgbImage> {
    if crop.width() != cam.side || crop.height() != cam.side {
        return Err(Error::ShapeMismatch(format!("map is {0}x{0}, crop is {1}x{2}", cam.side, crop.width(), crop.height())));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParams(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut out = crop.clone();
    for y in 0..cam.side {
        for x in 0..cam.side {
            let px = crop.pixel(x, y);
            let col = colormap(cam.upsampled[y * cam.side + x]);
            let mut o = [0u8; 3];
            for c in 0..3 {
                let v = (1.0 - alpha) * px[c] as f32 + alpha * col[c];
                o[c] = libm::roundf(v).clamp(0.0, 255.0) as u8;
            }
            out.put_pixel(x, y, o);
        }
    }
    Ok(out)
}

/// Renders the upsampled map alone through the colour ramp.
pub fn heatmap(cam: &CamMap) -> RgbImage {
    let mut img = RgbImage::new(cam.side, cam.side);
    for y in 0..cam.side {
        for x in 0..cam.side {
            let c = colormap(cam.upsampled[y * cam.side + x]);
            img.put_pixel(x, y, c.map(|v| libm::roundf(v) as u8));
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_toy_closed_form() {
        let acts = [1.0, 2.0, 3.0, 4.0];
        let grads = [0.5; 4];
        let (map, up) = cam_from_parts(&acts, &grads, 1, 2, 2, 4).unwrap();
        assert_eq!(map, vec![0.5, 1.0, 1.5, 2.0]);
        assert_eq!(up[15], 1.0);
        assert_eq!(up.iter().copied().fold(0.0, f32::max), 1.0);
        assert_eq!(up[0], 0.25);
    }

    #[test]
    fn constant_activations_give_constant_map() {
        let acts = [0.7, 0.7, 0.7, 0.7, 0.7, 0.7, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0];
        let grads = [0.3, -1.0, 2.0, 0.1, 0.0, 0.4, 1.0, 1.0, -2.0, 0.5, 0.5, 0.0];
        let (map, up) = cam_from_parts(&acts, &grads, 2, 2, 3, 5).unwrap();
        assert!(map.iter().all(|&v| v == map[0]));
        assert!(up.iter().all(|&v| v == up[0]));
    }

    #[test]
    fn negative_sum_is_rectified() {
        let (map, up) = cam_from_parts(&[1.0, 2.0, 3.0, 4.0], &[-1.0; 4], 1, 2, 2, 3).unwrap();
        assert!(map.iter().all(|&v| v == 0.0));
        assert!(up.iter().all(|&v| v == 0.0));
    }

    fn zero_cam(side: usize) -> CamMap {
        CamMap {
            map: vec![0.0; 4],
            h: 2,
            w: 2,
            upsampled: vec![0.0; side * side],
            side,
            target_class: DamageClass::NO_DAMAGE,
            layer_name: "layer4".into(),
        }
    }

    #[test]
    fn overlay_blends() {
        let mut crop = RgbImage::new(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                crop.put_pixel(x, y, [(x * 60) as u8, (y * 60) as u8, 100]);
            }
        }
        let cam = zero_cam(4);
        assert_eq!(overlay(&cam, &crop, 0.0).unwrap(), crop);
        assert_eq!(overlay(&cam, &crop, 1.0).unwrap(), RgbImage::filled(4, 4, [68, 1, 84]));
        let half = overlay(&cam, &crop, 0.5).unwrap();
        // reference: (p + zero colour) / 2, rounded half away from zero
        for y in 0..4 {
            for x in 0..4 {
                let p = crop.pixel(x, y);
                let want = [
                    ((p[0] as f32 + 68.0) / 2.0).round() as u8,
                    ((p[1] as f32 + 1.0) / 2.0).round() as u8,
                    ((p[2] as f32 + 84.0) / 2.0).round() as u8,
                ];
                assert_eq!(half.pixel(x, y), want);
            }
        }
        assert!(overlay(&cam, &RgbImage::new(3, 4), 0.5).is_err());
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(colormap(0.0), [68.0, 1.0, 84.0]);
        assert_eq!(colormap(1.0), [253.0, 231.0, 37.0]);
        assert_eq!(colormap(-3.0), colormap(0.0));
    }
}
