//! Interleaved 8-bit RGB rasters and bilinear resampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::BBox;

/// Row-major, channel-interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!("{} bytes for a {}x{} RGB raster", data.len(), width, height)));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies the pixels inside `b`, which must already lie within the image.
    pub fn sub_image(&self, b: &BBox) -> RgbImage {
        let (x0, y0) = (b.x_min as usize, b.y_min as usize);
        let (w, h) = (b.width() as usize, b.height() as usize);
        let mut out = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            out.extend_from_slice(&self.data[row..row + w * 3]);
        }
        RgbImage { width: w, height: h, data: out }
    }

    /// Resamples to `out_w` x `out_h` with bilinear interpolation on
    /// half-pixel centres.
    pub fn resize(&self, out_w: usize, out_h: usize) -> RgbImage {
        let src: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        let dst = resize_bilinear(&src, self.width, self.height, 3, out_w, out_h);
        let data = dst.into_iter().map(|v| libm::roundf(v).clamp(0.0, 255.0) as u8).collect();
        RgbImage { width: out_w, height: out_h, data }
    }
}

/// Bilinear resampling of an interleaved `channels`-plane buffer. Sample
/// positions use half-pixel centres and clamp at the borders, so every
/// output value is a convex combination of input values and a same-size
/// resize is the identity.
pub fn resize_bilinear(src: &[f32], in_w: usize, in_h: usize, channels: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    assert_eq!(src.len(), in_w * in_h * channels);
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = libm::floor(s) as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(out_w, in_w);
    let ys = taps(out_h, in_h);
    let mut dst = vec![0.0f32; out_w * out_h * channels];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..channels {
                let at = |x: usize, y: usize| src[(y * in_w + x) * channels + c];
                let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * fx;
                let bot = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * fx;
                dst[(oy * out_w + ox) * channels + c] = top + (bot - top) * fy;
            }
        }
    }
    dst
}

/// Extracts `bbox` grown by `pad` and clipped to the image, resampled to a
/// square `out_side` crop.
pub fn crop_building(image: &RgbImage, bbox: &BBox, pad: u32, out_side: usize) -> Result<RgbImage> {
    let region = bbox.expand_clamped(pad, image.width(), image.height())?;
    let sub = image.sub_image(&region);
    if sub.width() == out_side && sub.height() == out_side {
        return Ok(sub);
    }
    Ok(sub.resize(out_side, out_side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.put_pixel(x, y, [(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]);
            }
        }
        img
    }

    #[test]
    fn constant_image_gives_constant_crop() {
        let img = RgbImage::filled(100, 80, [17, 200, 3]);
        let b = BBox::new(10, 5, 57, 41).unwrap();
        let crop = crop_building(&img, &b, 3, 32).unwrap();
        assert_eq!(crop, RgbImage::filled(32, 32, [17, 200, 3]));
    }

    #[test]
    fn same_size_crop_is_a_copy() {
        let img = ramp(64, 64);
        let b = BBox::new(10, 20, 42, 52).unwrap();
        let crop = crop_building(&img, &b, 0, 32).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(crop.pixel(x, y), img.pixel(x + 10, y + 20));
            }
        }
        // identity also holds through the resampler itself
        let sub = img.sub_image(&b);
        assert_eq!(sub.resize(32, 32), sub);
    }

    #[test]
    fn overhanging_box_is_clamped() {
        let img = ramp(40, 40);
        // 5 px past the right edge
        let b = BBox::new(28, 4, 45, 21).unwrap();
        let crop = crop_building(&img, &b, 0, 12).unwrap();
        assert_eq!((crop.width(), crop.height()), (12, 12));
        // reference: the clamped 12x17 region, resampled by hand-indexed taps
        let region = BBox::new(28, 4, 40, 21).unwrap();
        let reference = img.sub_image(&region).resize(12, 12);
        assert_eq!(crop, reference);
        // columns map 1:1 because the clamped width equals the output side
        for y in 0..12 {
            let sy = (y as f64 + 0.5) * 17.0 / 12.0 - 0.5;
            let y0 = sy.floor() as usize;
            let fy = sy - y0 as f64;
            for x in 0..12 {
                let a = img.pixel(28 + x, 4 + y0);
                let b = img.pixel(28 + x, 4 + y0 + 1);
                for c in 0..3 {
                    let want = (a[c] as f64 * (1.0 - fy) + b[c] as f64 * fy).round() as u8;
                    let got = crop.pixel(x, y)[c];
                    assert!((want as i32 - got as i32).abs() <= 1, "({x},{y},{c})");
                }
            }
        }
        assert!(crop_building(&img, &BBox::new(50, 0, 60, 10).unwrap(), 0, 8).is_err());
    }

    proptest! {
        #[test]
        fn resampled_values_stay_in_input_range(
            w in 2usize..20, h in 2usize..20, ow in 1usize..30, oh in 1usize..30,
            seed in proptest::collection::vec(0u8..=255, 400..401),
        ) {
            let data: Vec<u8> = (0..w * h * 3).map(|i| seed[i % seed.len()]).collect();
            let img = RgbImage::from_raw(w, h, data.clone()).unwrap();
            let lo = *data.iter().min().unwrap();
            let hi = *data.iter().max().unwrap();
            let out = img.resize(ow, oh);
            prop_assert!(out.as_raw().iter().all(|&v| v >= lo && v <= hi));
        }
    }
}
