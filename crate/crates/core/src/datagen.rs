//! Procedural source/target domain generators with controllable inter-domain
//! shift and intra-domain difficulty spread.
//!
//! Segmentation scenes are a background class plus randomly placed shapes
//! with class-consistent colors. A target-role config additionally applies a
//! global hue/brightness offset and blur (`domain_shift`) and a per-image
//! difficulty draw (`intra_variance`) realized as additive noise and
//! label-preserving occluders. The per-image difficulty is recorded as
//! metadata so tests can check that entropy ranking actually tracks it; the
//! training API never sees it, and target-role training datasets carry no
//! labels at all.
//!
//! The classification track generates two-moons samples; the target domain is
//! the source rotated by `domain_shift` degrees with per-sample noise.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::LabelMap;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainRole {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Eval,
}

/// Occluded area per unit of per-image difficulty.
const OCCLUSION_PER_DIFFICULTY: f64 = 0.25;
const TEXTURE_NOISE: f32 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub role: DomainRole,
    pub split: SplitTag,
    pub height: usize,
    pub width: usize,
    pub class_count: usize,
    pub image_count: usize,
    /// Inclusive range of shapes per scene.
    pub shapes_min: usize,
    pub shapes_max: usize,
    /// Per-class base colors; derived from the class index when absent.
    #[serde(default)]
    pub palette: Option<Vec<[f32; 3]>>,
    /// Global hue/brightness offset plus blur strength.
    pub domain_shift: f64,
    /// Upper bound of the per-image difficulty draw.
    pub intra_variance: f64,
    /// Shape classes sampled with low probability.
    pub rare_classes: BTreeSet<usize>,
    /// Relative sampling weight of a rare class (non-rare classes weigh 1).
    pub rare_weight: f64,
    pub seed: u64,
}

impl DomainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "image size must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be >= 2".into()));
        }
        if self.image_count == 0 {
            return Err(Error::Config("image_count must be positive".into()));
        }
        if self.shapes_min > self.shapes_max || self.shapes_max == 0 {
            return Err(Error::Config(format!(
                "bad shapes range {}..={}",
                self.shapes_min, self.shapes_max
            )));
        }
        if self.domain_shift < 0.0 || self.intra_variance < 0.0 {
            return Err(Error::Config(
                "domain_shift and intra_variance must be non-negative".into(),
            ));
        }
        if self.rare_classes.iter().any(|&c| c == 0 || c >= self.class_count) {
            return Err(Error::Config(
                "rare classes must be shape classes in [1, class_count)".into(),
            ));
        }
        if let Some(p) = &self.palette {
            if p.len() != self.class_count {
                return Err(Error::Config(format!(
                    "palette has {} colors for {} classes",
                    p.len(),
                    self.class_count
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.rare_weight) {
            return Err(Error::Config("rare_weight must be in [0,1]".into()));
        }
        Ok(())
    }

    fn color_of(&self, class: usize) -> [f32; 3] {
        if let Some(p) = &self.palette {
            return p[class];
        }
        if class == 0 {
            return [0.22, 0.22, 0.26];
        }
        // Golden-angle hue walk keeps shape classes well separated.
        let hue = (class as f32 * 0.618_034) % 1.0;
        hsv_to_rgb(hue, 0.65, 0.85)
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i32).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub id: String,
    pub image: Tensor,
    label: Option<LabelMap>,
    /// Per-image difficulty draw; metadata for test oracles, never exposed to
    /// the training views.
    difficulty: Option<f64>,
}

impl DatasetItem {
    pub fn new(id: String, image: Tensor, label: Option<LabelMap>, difficulty: Option<f64>) -> Self {
        DatasetItem {
            id,
            image,
            label,
            difficulty,
        }
    }

    pub fn label(&self) -> Option<&LabelMap> {
        self.label.as_ref()
    }

    pub fn difficulty(&self) -> Option<f64> {
        self.difficulty
    }
}

/// A generated image set. Training code only sees it through the
/// [`Dataset::unlabeled`] / [`Dataset::labeled`] views.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: SplitTag,
    items: Vec<DatasetItem>,
}

impl Dataset {
    pub fn new(split: SplitTag, items: Vec<DatasetItem>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for it in &items {
            if !seen.insert(it.id.as_str()) {
                return Err(Error::Input(format!("duplicate image id {:?}", it.id)));
            }
        }
        Ok(Dataset { split, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    /// Label-free training view.
    pub fn unlabeled(&self) -> UnlabeledSet<'_> {
        UnlabeledSet {
            items: self
                .items
                .iter()
                .map(|it| (it.id.as_str(), &it.image))
                .collect(),
        }
    }

    /// Labeled view; errors if any item lacks a label.
    pub fn labeled(&self) -> Result<LabeledSet<'_>> {
        let mut items = Vec::with_capacity(self.items.len());
        for it in &self.items {
            let Some(label) = &it.label else {
                return Err(Error::Input(format!("image {:?} carries no label", it.id)));
            };
            items.push((it.id.as_str(), &it.image, label));
        }
        Ok(LabeledSet { items })
    }
}

#[derive(Debug, Clone)]
pub struct UnlabeledSet<'a> {
    pub items: Vec<(&'a str, &'a Tensor)>,
}

#[derive(Debug, Clone)]
pub struct LabeledSet<'a> {
    pub items: Vec<(&'a str, &'a Tensor, &'a LabelMap)>,
}

/// Source keeps labels for training; target keeps them only on eval splits.
fn retains_labels(cfg: &DomainConfig) -> bool {
    cfg.role == DomainRole::Source || cfg.split == SplitTag::Eval
}

pub fn gen_segmentation_domain(cfg: &DomainConfig) -> Result<Dataset> {
    cfg.validate()?;
    let keep_labels = retains_labels(cfg);
    let items = (0..cfg.image_count)
        .map(|idx| {
            let (image, label, difficulty) = gen_scene(cfg, idx);
            DatasetItem {
                id: format!("img{idx:05}"),
                image,
                label: keep_labels.then_some(label),
                difficulty: Some(difficulty),
            }
        })
        .collect();
    Dataset::new(cfg.split, items)
}

fn gen_scene(cfg: &DomainConfig, idx: usize) -> (Tensor, LabelMap, f64) {
    let mut img_rng = rng::stream(cfg.seed, &format!("image-{idx}"));
    let mut diff_rng = rng::stream(cfg.seed, &format!("difficulty-{idx}"));
    let (h, w) = (cfg.height, cfg.width);
    let hw = h * w;

    // Shapes paint the label map; colors come later from the labels.
    let mut labels = vec![0u32; hw];
    let shape_count =
        cfg.shapes_min + rng::index(&mut img_rng, cfg.shapes_max - cfg.shapes_min + 1);
    let weights: Vec<f64> = (1..cfg.class_count)
        .map(|c| if cfg.rare_classes.contains(&c) { cfg.rare_weight } else { 1.0 })
        .collect();
    let total_weight: f64 = weights.iter().sum();
    for _ in 0..shape_count {
        let mut pick = f64::from(rng::uniform01(&mut img_rng)) * total_weight;
        let mut class = 1usize;
        for (i, wt) in weights.iter().enumerate() {
            pick -= wt;
            if pick <= 0.0 {
                class = i + 1;
                break;
            }
        }
        let round = rng::uniform01(&mut img_rng) < 0.5;
        let cy = rng::index(&mut img_rng, h) as f32;
        let cx = rng::index(&mut img_rng, w) as f32;
        let ry = rng::uniform(&mut img_rng, 2.0, h as f32 / 3.0);
        let rx = rng::uniform(&mut img_rng, 2.0, w as f32 / 3.0);
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f32 - cy) / ry;
                let dx = (x as f32 - cx) / rx;
                let inside = if round {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    labels[y * w + x] = class as u32;
                }
            }
        }
    }

    // Color from labels plus per-pixel texture noise.
    let mut image = vec![0.0f32; 3 * hw];
    for px in 0..hw {
        let color = cfg.color_of(labels[px] as usize);
        for ch in 0..3 {
            image[ch * hw + px] =
                color[ch] + rng::uniform(&mut img_rng, -TEXTURE_NOISE, TEXTURE_NOISE);
        }
    }

    // Global domain shift: hue rotation mix, brightness offset, blur mix.
    let shift = cfg.domain_shift as f32;
    if shift > 0.0 {
        let mix = (0.3 * shift).min(1.0);
        for px in 0..hw {
            let (r, g, b) = (image[px], image[hw + px], image[2 * hw + px]);
            image[px] += mix * (g - r);
            image[hw + px] += mix * (b - g);
            image[2 * hw + px] += mix * (r - b);
        }
        let bright = 0.15 * shift;
        for v in image.iter_mut() {
            *v += bright;
        }
        let beta = (0.45 * shift).min(0.8);
        let blurred = box_blur3(&image, h, w);
        for (v, bl) in image.iter_mut().zip(&blurred) {
            *v += beta * (*bl - *v);
        }
    }

    // Per-image difficulty: additive noise sigma drawn from
    // [0, intra_variance], occluders covering a proportional area.
    let difficulty = f64::from(rng::uniform(&mut diff_rng, 0.0, cfg.intra_variance as f32));
    if difficulty > 0.0 {
        let sigma = difficulty as f32;
        for v in image.iter_mut() {
            *v += sigma * rng::normal(&mut diff_rng);
        }
        let occ_target = (OCCLUSION_PER_DIFFICULTY * difficulty * hw as f64) as usize;
        let mut covered = 0usize;
        let mut attempts = 0;
        while covered < occ_target && attempts < 16 {
            attempts += 1;
            let cy = rng::index(&mut diff_rng, h);
            let cx = rng::index(&mut diff_rng, w);
            let ry = 2 + rng::index(&mut diff_rng, h / 4);
            let rx = 2 + rng::index(&mut diff_rng, w / 4);
            for y in cy.saturating_sub(ry)..(cy + ry).min(h) {
                for x in cx.saturating_sub(rx)..(cx + rx).min(w) {
                    let px = y * w + x;
                    for ch in 0..3 {
                        image[ch * hw + px] = 0.5 + rng::uniform(&mut diff_rng, -0.35, 0.35);
                    }
                    covered += 1;
                }
            }
        }
    }

    let image = Tensor::new(vec![3, h, w], image).expect("generated pixels are finite");
    let label = LabelMap::new(cfg.class_count, h, w, labels).expect("labels constructed in range");
    (image, label, difficulty)
}

fn box_blur3(image: &[f32], h: usize, w: usize) -> Vec<f32> {
    let hw = h * w;
    let mut out = vec![0.0f32; 3 * hw];
    for ch in 0..3 {
        let plane = &image[ch * hw..][..hw];
        let oplane = &mut out[ch * hw..][..hw];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                let mut n = 0.0f32;
                for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        let (yy, xx) = (y as i32 + dy, x as i32 + dx);
                        if yy >= 0 && yy < h as i32 && xx >= 0 && xx < w as i32 {
                            acc += plane[yy as usize * w + xx as usize];
                            n += 1.0;
                        }
                    }
                }
                oplane[y * w + x] = acc / n;
            }
        }
    }
    out
}

/// Two-moons samples as `[2,1,1]` feature tensors with 1x1 label maps.
/// Classes alternate by index, so the set is balanced by construction. The
/// target domain rotates every sample by `domain_shift` degrees and adds
/// per-sample noise with sigma drawn from `[0, intra_variance]`.
pub fn gen_classification_domain(cfg: &DomainConfig) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.class_count != 2 {
        return Err(Error::Config(
            "classification track generates two moons; class_count must be 2".into(),
        ));
    }
    let keep_labels = retains_labels(cfg);
    let theta = (cfg.domain_shift as f32).to_radians();
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let items = (0..cfg.image_count)
        .map(|idx| {
            let mut img_rng = rng::stream(cfg.seed, &format!("sample-{idx}"));
            let mut diff_rng = rng::stream(cfg.seed, &format!("sample-difficulty-{idx}"));
            let class = (idx % 2) as u32;
            let t = rng::uniform(&mut img_rng, 0.0, std::f32::consts::PI);
            let (mut x, mut y) = if class == 0 {
                (t.cos() - 0.5, t.sin() - 0.25)
            } else {
                (0.5 - t.cos(), 0.25 - t.sin())
            };
            x += 0.08 * rng::normal(&mut img_rng);
            y += 0.08 * rng::normal(&mut img_rng);
            if cfg.domain_shift > 0.0 {
                let (rx, ry) = (x * cos_t - y * sin_t, x * sin_t + y * cos_t);
                x = rx;
                y = ry;
            }
            let difficulty = f64::from(rng::uniform(&mut diff_rng, 0.0, cfg.intra_variance as f32));
            if difficulty > 0.0 {
                x += difficulty as f32 * rng::normal(&mut diff_rng);
                y += difficulty as f32 * rng::normal(&mut diff_rng);
            }
            DatasetItem {
                id: format!("img{idx:05}"),
                image: Tensor::new(vec![2, 1, 1], vec![x, y]).expect("finite sample"),
                label: keep_labels
                    .then(|| LabelMap::new(2, 1, 1, vec![class]).expect("binary label")),
                difficulty: Some(difficulty),
            }
        })
        .collect();
    Dataset::new(cfg.split, items)
}
