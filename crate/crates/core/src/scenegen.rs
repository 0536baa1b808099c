//! Seeded synthetic scenes with known building footprints.
//!
//! The background is a Voronoi partition whose cells take one of the
//! background profiles. Buildings are rectangles, optionally rotated, placed
//! without overlap by rejection sampling. A building pixel is painted when its
//! center lies inside the footprint under the same rule the rasterizer uses,
//! so rasterizing the returned annotations reproduces the painted pixels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::{
    AnnotationSet, BuildingClass, MultibandImage, Polygon, DEFAULT_PIXEL_SIZE_M, MAX_BANDS,
};
use crate::rasterize::point_in_polygon;
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfiles {
    pub residential: Vec<f32>,
    pub non_residential: Vec<f32>,
    /// One or more background profiles, assigned to Voronoi cells in turn.
    pub background: Vec<Vec<f32>>,
}

impl SpectralProfiles {
    /// Buildings sit between a dark and a bright background; the two building
    /// classes differ by an alternating-sign offset.
    pub fn separated(bands: usize) -> Self {
        let offset = |sign: f32| -> Vec<f32> {
            (0..bands)
                .map(|b| 0.5 + sign * if b % 2 == 0 { 0.08 } else { -0.08 })
                .collect()
        };
        Self {
            residential: offset(1.0),
            non_residential: offset(-1.0),
            background: vec![vec![0.15; bands], vec![0.85; bands]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub pixel_size_m: f64,
    pub n_residential: usize,
    pub n_nonresidential: usize,
    /// Inclusive side-length range in pixels.
    pub building_size_range: [usize; 2],
    /// Minimum empty pixels between building bounding boxes.
    pub gap: usize,
    /// Maximum absolute rotation in degrees; 0 keeps rectangles axis-aligned.
    pub max_rotation_deg: f64,
    pub background_cells: usize,
    pub spectral_profiles: SpectralProfiles,
    /// Required L2 distance between every pair of distinct profiles.
    pub min_separation: f64,
    pub noise_sigma: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            bands: 8,
            pixel_size_m: DEFAULT_PIXEL_SIZE_M,
            n_residential: 14,
            n_nonresidential: 8,
            building_size_range: [8, 18],
            gap: 2,
            max_rotation_deg: 0.0,
            background_cells: 12,
            spectral_profiles: SpectralProfiles::separated(8),
            min_separation: 0.1,
            noise_sigma: 0.05,
            max_attempts: 2000,
            seed: 0,
        }
    }
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl SceneConfig {
    /// Default scene with `bands` bands and matching separated profiles.
    pub fn with_bands(bands: usize) -> Self {
        Self {
            bands,
            spectral_profiles: SpectralProfiles::separated(bands),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("scene dimensions must be positive".into()));
        }
        if self.bands == 0 || self.bands > MAX_BANDS {
            return Err(Error::Config(format!("bands must be in 1..={MAX_BANDS}")));
        }
        let [lo, hi] = self.building_size_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "invalid building size range [{lo}, {hi}]"
            )));
        }
        if self.n_residential + self.n_nonresidential > 0 && hi > self.width.min(self.height) {
            return Err(Error::Config(format!(
                "buildings up to {hi} px do not fit a {}x{} image",
                self.width, self.height
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(self.pixel_size_m > 0.0) {
            return Err(Error::Config("pixel_size_m must be > 0".into()));
        }
        if !(0.0..90.0).contains(&self.max_rotation_deg) {
            return Err(Error::Config("max_rotation_deg must be in [0, 90)".into()));
        }
        if self.background_cells == 0 {
            return Err(Error::Config("background_cells must be >= 1".into()));
        }
        let p = &self.spectral_profiles;
        if p.background.is_empty() {
            return Err(Error::Config(
                "at least one background profile is required".into(),
            ));
        }
        let mut all: Vec<(&str, &[f32])> = vec![
            ("residential", &p.residential),
            ("non_residential", &p.non_residential),
        ];
        all.extend(p.background.iter().map(|b| ("background", b.as_slice())));
        for (name, v) in &all {
            if v.len() != self.bands {
                return Err(Error::Config(format!(
                    "{name} profile has {} values, expected {}",
                    v.len(),
                    self.bands
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("{name} profile is not finite")));
            }
        }
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                if all[i].0 == "background" && all[j].0 == "background" {
                    continue;
                }
                let d = l2(all[i].1, all[j].1);
                if d < self.min_separation {
                    return Err(Error::Config(format!(
                        "{} and {} profiles are {d:.4} apart, below min_separation {}",
                        all[i].0, all[j].0, self.min_separation
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn image_area_km2(&self) -> f64 {
        self.width as f64 * self.height as f64 * self.pixel_size_m * self.pixel_size_m / 1e6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: MultibandImage,
    pub annotations: AnnotationSet,
}

fn footprint(cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> Vec<[f64; 2]> {
    let (s, c) = angle.sin_cos();
    [(-w, -h), (w, -h), (w, h), (-w, h)]
        .iter()
        .map(|&(dx, dy)| {
            let (dx, dy) = (dx / 2.0, dy / 2.0);
            [cx + dx * c - dy * s, cy + dx * s + dy * c]
        })
        .collect()
}

/// Image and annotations for `cfg`; identical for identical configs.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let (w, h, c) = (cfg.width, cfg.height, cfg.bands);
    let mut layout = stream_rng(cfg.seed, stream::SCENE_LAYOUT);

    let seeds: Vec<(f64, f64)> = (0..cfg.background_cells)
        .map(|_| {
            (
                layout.random_range(0.0..w as f64),
                layout.random_range(0.0..h as f64),
            )
        })
        .collect();

    let mut classes = vec![BuildingClass::Residential; cfg.n_residential];
    classes.extend(std::iter::repeat_n(
        BuildingClass::NonResidential,
        cfg.n_nonresidential,
    ));
    let [lo, hi] = cfg.building_size_range;
    let gap = cfg.gap as f64;
    let mut boxes: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut polygons = Vec::with_capacity(classes.len());
    for (index, &class_label) in classes.iter().enumerate() {
        let mut placed = false;
        for _ in 0..cfg.max_attempts {
            let bw = layout.random_range(lo..=hi) as f64;
            let bh = layout.random_range(lo..=hi) as f64;
            let angle = if cfg.max_rotation_deg > 0.0 {
                layout
                    .random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
                    .to_radians()
            } else {
                0.0
            };
            let (s, co) = (angle.sin().abs(), angle.cos().abs());
            let (ew, eh) = (bw * co + bh * s, bw * s + bh * co);
            if ew > w as f64 || eh > h as f64 {
                continue;
            }
            let (cx, cy) = if angle == 0.0 {
                // Integer corners keep axis-aligned footprints on pixel edges.
                let x0 = layout.random_range(0..=w - bw as usize) as f64;
                let y0 = layout.random_range(0..=h - bh as usize) as f64;
                (x0 + bw / 2.0, y0 + bh / 2.0)
            } else {
                (
                    layout.random_range(ew / 2.0..=w as f64 - ew / 2.0),
                    layout.random_range(eh / 2.0..=h as f64 - eh / 2.0),
                )
            };
            let bbox = (cx - ew / 2.0, cy - eh / 2.0, cx + ew / 2.0, cy + eh / 2.0);
            let clear = boxes.iter().all(|b| {
                bbox.0 >= b.2 + gap
                    || b.0 >= bbox.2 + gap
                    || bbox.1 >= b.3 + gap
                    || b.1 >= bbox.3 + gap
            });
            if !clear {
                continue;
            }
            boxes.push(bbox);
            polygons.push(Polygon::new(class_label, footprint(cx, cy, bw, bh, angle)));
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Congestion {
                index,
                attempts: cfg.max_attempts,
            });
        }
    }

    let profiles = &cfg.spectral_profiles;
    let mut labels: Vec<Option<usize>> = vec![None; w * h];
    for (pi, poly) in polygons.iter().enumerate() {
        let (x0, y0, x1, y1) = poly.bounds();
        let xs = (x0.floor().max(0.0) as usize)..(x1.ceil().min(w as f64) as usize);
        let ys = (y0.floor().max(0.0) as usize)..(y1.ceil().min(h as f64) as usize);
        for y in ys {
            for x in xs.clone() {
                if point_in_polygon((x as f64 + 0.5, y as f64 + 0.5), poly) {
                    labels[y * w + x] = Some(pi);
                }
            }
        }
    }

    let mut data = vec![0f32; c * w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let profile: &[f32] = match labels[i] {
                Some(pi) => match polygons[pi].class_label {
                    BuildingClass::NonResidential => &profiles.non_residential,
                    _ => &profiles.residential,
                },
                None => {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let cell = seeds
                        .iter()
                        .enumerate()
                        .map(|(k, s)| (k, (s.0 - px).powi(2) + (s.1 - py).powi(2)))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .map(|(k, _)| k)
                        .expect("at least one cell");
                    &profiles.background[cell % profiles.background.len()]
                }
            };
            for b in 0..c {
                data[b * w * h + i] = profile[b];
            }
        }
    }
    if cfg.noise_sigma > 0.0 {
        let mut noise_rng = stream_rng(cfg.seed, stream::SCENE_NOISE);
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
        for v in data.iter_mut() {
            *v += normal.sample(&mut noise_rng) as f32;
        }
    }
    let image = MultibandImage::new(w, h, c, cfg.pixel_size_m, data)?;
    Ok(Scene {
        image,
        annotations: AnnotationSet { polygons },
    })
}
