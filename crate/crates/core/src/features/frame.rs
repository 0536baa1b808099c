use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::store::{ColumnMeaning, FeatureMatrix};
use crate::error::{Error, Result};
use crate::raster_io::MultibandImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Out-of-image neighbors take the value of the nearest edge pixel.
    #[default]
    Replicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    /// Frame half-width: each pixel sees a `(2k+1) x (2k+1)` neighborhood.
    pub k: usize,
    #[serde(default)]
    pub padding: Padding,
}

impl FrameConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            padding: Padding::Replicate,
        }
    }

    pub fn window(&self) -> usize {
        2 * self.k + 1
    }

    pub fn dim(&self, bands: usize) -> usize {
        bands * self.window() * self.window()
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let limit = width.min(height) / 2;
        if self.k > limit {
            return Err(Error::Config(format!(
                "frame width k={} exceeds min(width, height)/2 = {limit} for a {width}x{height} image",
                self.k
            )));
        }
        Ok(())
    }

    pub fn col_meaning(&self, bands: usize) -> Vec<ColumnMeaning> {
        let k = self.k as i32;
        let mut out = Vec::with_capacity(self.dim(bands));
        for dy in -k..=k {
            for dx in -k..=k {
                for band in 0..bands as u32 {
                    out.push(ColumnMeaning::Frame { dy, dx, band });
                }
            }
        }
        out
    }
}

/// Writes frame features for image rows `y0..y0 + out.len() / (width * dim)`.
pub(crate) fn fill_frame_rows(
    image: &MultibandImage,
    cfg: &FrameConfig,
    y0: usize,
    out: &mut [f32],
) {
    let (w, h, c) = (image.width(), image.height(), image.bands());
    let dim = cfg.dim(c);
    let k = cfg.k as isize;
    let planes: Vec<&[f32]> = (0..c).map(|b| image.band(b)).collect();
    for (ry, row_out) in out.chunks_exact_mut(w * dim).enumerate() {
        let y = (y0 + ry) as isize;
        for x in 0..w as isize {
            let px = &mut row_out[x as usize * dim..(x as usize + 1) * dim];
            let mut j = 0;
            for dy in -k..=k {
                let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                for dx in -k..=k {
                    let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                    let idx = sy * w + sx;
                    for plane in &planes {
                        px[j] = plane[idx];
                        j += 1;
                    }
                }
            }
        }
    }
}

pub fn expand_frame_features(image: &MultibandImage, cfg: &FrameConfig) -> Result<FeatureMatrix> {
    cfg.validate(image.width(), image.height())?;
    let dim = cfg.dim(image.bands());
    let w = image.width();
    let mut data = vec![0f32; image.pixel_count() * dim];
    data.par_chunks_mut(w * dim)
        .enumerate()
        .for_each(|(y, chunk)| fill_frame_rows(image, cfg, y, chunk));
    FeatureMatrix::new(
        image.pixel_count(),
        dim,
        data,
        cfg.col_meaning(image.bands()),
    )
}
