//! Synthetic pre/post scene pairs with class-dependent damage.
//!
//! Each scene is a textured ground plane with rectangular buildings of
//! flat roof colours. The post image equals the pre image except inside
//! damaged buildings:
//!
//! * minor: mild per-pixel speckle,
//! * major: strong speckle plus a debris patch over part of the roof,
//! * destroyed: the whole footprint replaced by rubble.
//!
//! Damage intensity grows with the class index, so the mean absolute
//! pre/post difference per class is monotone.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::class::{DamageClass, DisasterType};
use crate::error::{Error, Result};
use crate::geom::{rect_polygon, BBox};
use crate::raster::RgbImage;
use crate::scene::{BuildingAnnotation, ScenePair};

const MINOR_SPECKLE: f32 = 20.0;
const MAJOR_SPECKLE: f32 = 45.0;
const PLACEMENT_RETRIES: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub n_scenes: usize,
    pub buildings_per_scene: usize,
    pub image_side: usize,
    pub class_mix: [f64; 4],
    /// Ground texture amplitude as a fraction of full scale.
    pub noise_floor: f64,
    pub seed: u64,
    pub min_box: usize,
    pub max_box: usize,
    /// Tint debris and rubble by disaster type so the type carries signal.
    pub type_bias: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_scenes: 4,
            buildings_per_scene: 20,
            image_side: 1024,
            class_mix: [0.25; 4],
            noise_floor: 0.05,
            seed: 0,
            min_box: 30,
            max_box: 90,
            type_bias: false,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.class_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.class_mix.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::InvalidParams(format!("class mix {:?} must be fractions summing to 1", self.class_mix)));
        }
        if self.n_scenes == 0 {
            return Err(Error::InvalidParams("need at least one scene".into()));
        }
        if self.min_box < 2 || self.min_box > self.max_box || self.max_box + 2 >= self.image_side {
            return Err(Error::InvalidParams(format!(
                "box sides {}..={} do not fit a {} px image",
                self.min_box, self.max_box, self.image_side
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_floor) {
            return Err(Error::InvalidParams("noise floor must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn total_buildings(&self) -> usize {
        self.n_scenes * self.buildings_per_scene
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthBuilding {
    pub uid: String,
    pub bbox: BBox,
    pub label: DamageClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub scene_id: String,
    pub disaster_type: DisasterType,
    pub pre: RgbImage,
    pub post: RgbImage,
    pub buildings: Vec<SynthBuilding>,
}

impl SynthScene {
    pub fn to_scene_pair(&self) -> ScenePair {
        let annotations = self
            .buildings
            .iter()
            .map(|b| BuildingAnnotation {
                polygon: rect_polygon(&b.bbox),
                raw_label: b.label.subtype().into(),
                uid: b.uid.clone(),
            })
            .collect();
        ScenePair {
            scene_id: self.scene_id.clone(),
            pre_image: self.pre.clone(),
            post_image: self.post.clone(),
            annotations,
            disaster_type: self.disaster_type,
        }
    }
}

/// Labels for every building of the run, in scene order. Class counts follow
/// `class_mix` exactly up to largest-remainder rounding over the whole run.
pub fn plan_labels(params: &SynthParams) -> Vec<DamageClass> {
    let total = params.total_buildings();
    let raw: Vec<f64> = params.class_mix.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|&r| libm::floor(r) as usize).collect();
    let mut rest: Vec<usize> = (0..4).collect();
    rest.sort_by(|&a, &b| {
        let (fa, fb) = (raw[a] - counts[a] as f64, raw[b] - counts[b] as f64);
        fb.partial_cmp(&fa).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let short = total - counts.iter().sum::<usize>();
    for &c in rest.iter().take(short) {
        counts[c] += 1;
    }
    let mut labels: Vec<DamageClass> =
        counts.iter().enumerate().flat_map(|(c, &n)| core::iter::repeat_n(DamageClass::ALL[c], n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    labels.shuffle(&mut rng);
    labels
}

fn scene_rng(params: &SynthParams, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn clamp_u8(v: f32) -> u8 {
    libm::roundf(v).clamp(0.0, 255.0) as u8
}

fn ground<R: Rng>(side: usize, noise_floor: f64, rng: &mut R) -> RgbImage {
    // coarse random lattice, bilinearly interpolated, plus fine grain
    let cell = 64usize;
    let n = side / cell + 2;
    let lattice: Vec<f32> = (0..n * n).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let base = [rng.random_range(70.0f32..110.0), rng.random_range(90.0f32..130.0), rng.random_range(50.0f32..80.0)];
    let amp = noise_floor as f32 * 255.0;
    let mut img = RgbImage::new(side, side);
    for y in 0..side {
        let gy = y as f32 / cell as f32;
        let (y0, fy) = (gy as usize, gy - libm::floorf(gy));
        for x in 0..side {
            let gx = x as f32 / cell as f32;
            let (x0, fx) = (gx as usize, gx - libm::floorf(gx));
            let at = |i: usize, j: usize| lattice[j * n + i];
            let top = at(x0, y0) + (at(x0 + 1, y0) - at(x0, y0)) * fx;
            let bot = at(x0, y0 + 1) + (at(x0 + 1, y0 + 1) - at(x0, y0 + 1)) * fx;
            let low = (top + (bot - top) * fy) * 2.0 * amp;
            let grain = rng.random_range(-amp..=amp);
            img.put_pixel(x, y, base.map(|b| clamp_u8(b + low + grain)));
        }
    }
    img
}

fn place_boxes<R: Rng>(params: &SynthParams, index: usize, rng: &mut R) -> Result<Vec<BBox>> {
    let side = params.image_side as i64;
    let mut boxes: Vec<BBox> = Vec::with_capacity(params.buildings_per_scene);
    for _ in 0..params.buildings_per_scene {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let w = rng.random_range(params.min_box..=params.max_box) as i64;
            let h = rng.random_range(params.min_box..=params.max_box) as i64;
            let x = rng.random_range(1..side - w);
            let y = rng.random_range(1..side - h);
            let b = BBox { x_min: x, y_min: y, x_max: x + w, y_max: y + h };
            // one pixel of ground between neighbours
            let grown = BBox { x_min: x - 1, y_min: y - 1, x_max: x + w + 1, y_max: y + h + 1 };
            if boxes.iter().all(|o| !o.overlaps(&grown)) {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasiblePacking { scene: index, requested: params.buildings_per_scene });
        }
    }
    Ok(boxes)
}

fn debris_tint(t: DisasterType, bias: bool) -> [f32; 3] {
    if !bias {
        return [0.0; 3];
    }
    match t {
        DisasterType::Earthquake => [10.0, 10.0, 10.0],
        DisasterType::Fire => [-25.0, -30.0, -30.0],
        DisasterType::Flooding => [-20.0, 0.0, 30.0],
        DisasterType::Tsunami => [-10.0, 15.0, 25.0],
        DisasterType::Volcano => [30.0, -10.0, -20.0],
        DisasterType::Wind => [20.0, 15.0, -5.0],
    }
}

fn damage<R: Rng>(post: &mut RgbImage, b: &BBox, class: DamageClass, tint: [f32; 3], rng: &mut R) {
    let (x0, y0, x1, y1) = (b.x_min as usize, b.y_min as usize, b.x_max as usize, b.y_max as usize);
    let speckle = |img: &mut RgbImage, sigma: f32, rng: &mut R| {
        let n = Normal::new(0.0f32, sigma).unwrap();
        for y in y0..y1 {
            for x in x0..x1 {
                let p = img.pixel(x, y);
                img.put_pixel(x, y, p.map(|v| clamp_u8(v as f32 + n.sample(rng))));
            }
        }
    };
    let rubble_at = |x: usize, y: usize, cells: &[[f32; 3]], cw: usize| cells[(y - y0) / 3 * cw + (x - x0) / 3];
    match class.ordinal() {
        0 => {}
        1 => speckle(post, MINOR_SPECKLE, rng),
        2 => {
            speckle(post, MAJOR_SPECKLE, rng);
            let (w, h) = (x1 - x0, y1 - y0);
            let pw = (w as f32 * rng.random_range(0.55f32..0.75)) as usize;
            let ph = (h as f32 * rng.random_range(0.55f32..0.75)) as usize;
            let px = x0 + rng.random_range(0..=w - pw);
            let py = y0 + rng.random_range(0..=h - ph);
            let grey = rng.random_range(60.0f32..90.0);
            for y in py..py + ph {
                for x in px..px + pw {
                    let v = grey + rng.random_range(-12.0f32..12.0);
                    post.put_pixel(x, y, [clamp_u8(v + 10.0 + tint[0]), clamp_u8(v + tint[1]), clamp_u8(v - 8.0 + tint[2])]);
                }
            }
        }
        _ => {
            let cw = (x1 - x0).div_ceil(3);
            let ch = (y1 - y0).div_ceil(3);
            let cells: Vec<[f32; 3]> = (0..cw * ch)
                .map(|_| {
                    let v = rng.random_range(35.0f32..105.0);
                    [v + 12.0 + tint[0], v + 4.0 + tint[1], v - 6.0 + tint[2]]
                })
                .collect();
            for y in y0..y1 {
                for x in x0..x1 {
                    let c = rubble_at(x, y, &cells, cw);
                    let grain = rng.random_range(-10.0f32..10.0);
                    post.put_pixel(x, y, c.map(|v| clamp_u8(v + grain)));
                }
            }
        }
    }
}

/// Renders scene `index` with the labels planned for its buildings.
pub fn generate_scene(params: &SynthParams, index: usize, labels: &[DamageClass]) -> Result<SynthScene> {
    params.validate()?;
    if labels.len() != params.buildings_per_scene {
        return Err(Error::InvalidParams(format!("{} labels for {} buildings", labels.len(), params.buildings_per_scene)));
    }
    let mut rng = scene_rng(params, index);
    let disaster_type = *DisasterType::ALL.choose(&mut rng).unwrap();
    let scene_id = format!("synth-{}_{:08}", disaster_type.tag(), index);
    let mut pre = ground(params.image_side, params.noise_floor, &mut rng);
    let boxes = place_boxes(params, index, &mut rng)?;
    for b in &boxes {
        let roof = [rng.random_range(140.0f32..235.0), rng.random_range(140.0f32..235.0), rng.random_range(140.0f32..235.0)];
        for y in b.y_min as usize..b.y_max as usize {
            for x in b.x_min as usize..b.x_max as usize {
                let grain = rng.random_range(-2.0f32..=2.0);
                pre.put_pixel(x, y, roof.map(|v| clamp_u8(v + grain)));
            }
        }
    }
    let mut post = pre.clone();
    let tint = debris_tint(disaster_type, params.type_bias);
    let buildings = boxes
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(j, (b, &label))| {
            damage(&mut post, b, label, tint, &mut rng);
            SynthBuilding { uid: format!("{scene_id}-b{j:03}"), bbox: *b, label }
        })
        .collect();
    Ok(SynthScene { scene_id, disaster_type, pre, post, buildings })
}

/// Generates every scene of the run in memory.
pub fn generate(params: &SynthParams) -> Result<Vec<SynthScene>> {
    params.validate()?;
    let labels = plan_labels(params);
    let per = params.buildings_per_scene;
    (0..params.n_scenes).map(|i| generate_scene(params, i, &labels[i * per..(i + 1) * per])).collect()
}

/// Mean absolute per-channel pre/post difference inside `bbox`.
pub fn mean_abs_difference(pre: &RgbImage, post: &RgbImage, bbox: &BBox) -> Result<f64> {
    let region = bbox.expand_clamped(0, pre.width(), pre.height())?;
    let (a, b) = (pre.sub_image(&region), post.sub_image(&region));
    let sum: u64 = a.as_raw().iter().zip(b.as_raw()).map(|(&x, &y)| (x as i32 - y as i32).unsigned_abs() as u64).sum();
    Ok(sum as f64 / a.as_raw().len() as f64)
}

/// Per-class mean of [`mean_abs_difference`] over a set of buildings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeparabilityReport {
    pub mean_difference: [Option<f64>; 4],
    pub counts: [usize; 4],
}

impl SeparabilityReport {
    pub fn accumulate(items: impl IntoIterator<Item = (DamageClass, f64)>) -> Self {
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        for (c, d) in items {
            sums[c.index()] += d;
            counts[c.index()] += 1;
        }
        let mut mean_difference = [None; 4];
        for c in 0..4 {
            if counts[c] > 0 {
                mean_difference[c] = Some(sums[c] / counts[c] as f64);
            }
        }
        Self { mean_difference, counts }
    }

    /// True when every present class has a larger statistic than every
    /// present lower class.
    pub fn strictly_increasing(&self) -> bool {
        let present: Vec<f64> = self.mean_difference.iter().flatten().copied().collect();
        present.windows(2).all(|w| w[0] < w[1])
    }
}
