//! Histogram of oriented gradients over tiled, non-overlapping blocks.
//!
//! The gradient is taken on the band-mean channel with central differences
//! (one-sided at the borders). Each pixel votes its gradient magnitude into
//! the two orientation bins nearest its unsigned angle; bin `b` is centered on
//! `b * 180 / bins` degrees. Cell histograms are grouped into blocks of
//! `block[0] x block[1]` cells and L2-normalized as `v / sqrt(|v|^2 + eps^2)`.
//! Every pixel receives the descriptor of the block containing its cell.

use serde::{Deserialize, Serialize};

use super::store::{ColumnMeaning, FeatureMatrix};
use crate::error::{Error, Result};
use crate::raster_io::MultibandImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationRange {
    #[default]
    Unsigned0To180,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelReduction {
    #[default]
    BandMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HogConfig {
    pub cell_size: usize,
    pub bins: usize,
    /// Cells per block as `[width, height]`.
    pub block: [usize; 2],
    pub epsilon: f64,
    #[serde(default)]
    pub orientation_range: OrientationRange,
    #[serde(default)]
    pub channel_reduction: ChannelReduction,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_size: 8,
            bins: 9,
            block: [2, 2],
            epsilon: 1e-12,
            orientation_range: OrientationRange::Unsigned0To180,
            channel_reduction: ChannelReduction::BandMean,
        }
    }
}

impl HogConfig {
    pub fn dim(&self) -> usize {
        self.block[0] * self.block[1] * self.bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_size < 2 {
            return Err(Error::Config(format!(
                "HOG cell_size must be >= 2, got {}",
                self.cell_size
            )));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!(
                "HOG bins must be >= 2, got {}",
                self.bins
            )));
        }
        if self.block[0] == 0 || self.block[1] == 0 {
            return Err(Error::Config(
                "HOG block must contain at least one cell".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "HOG epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn col_meaning(&self) -> Vec<ColumnMeaning> {
        (0..self.block[0] * self.block[1])
            .flat_map(|cell| {
                (0..self.bins).map(move |bin| ColumnMeaning::Hog {
                    cell: cell as u32,
                    bin: bin as u32,
                })
            })
            .collect()
    }
}

/// Per-cell orientation histograms, row-major over cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellHistograms {
    pub cells_x: usize,
    pub cells_y: usize,
    pub bins: usize,
    pub data: Vec<f64>,
}

impl CellHistograms {
    pub fn cell(&self, cx: usize, cy: usize) -> &[f64] {
        let i = (cy * self.cells_x + cx) * self.bins;
        &self.data[i..i + self.bins]
    }
}

fn band_mean(image: &MultibandImage) -> Vec<f64> {
    let n = image.pixel_count();
    let mut out = vec![0f64; n];
    for b in 0..image.bands() {
        for (o, &v) in out.iter_mut().zip(image.band(b)) {
            *o += v as f64;
        }
    }
    let c = image.bands() as f64;
    out.iter_mut().for_each(|v| *v /= c);
    out
}

/// Derivative along one axis: central inside, one-sided at the ends.
#[inline]
fn diff(get: impl Fn(usize) -> f64, i: usize, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else if i == 0 {
        get(1) - get(0)
    } else if i == n - 1 {
        get(n - 1) - get(n - 2)
    } else {
        (get(i + 1) - get(i - 1)) / 2.0
    }
}

/// Gradient `(gx, gy)` per pixel, `x` to the right and `y` down the rows.
pub fn gradients(image: &MultibandImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (image.width(), image.height());
    let ch = band_mean(image);
    let mut gx = vec![0f64; w * h];
    let mut gy = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            gx[y * w + x] = diff(|i| ch[y * w + i], x, w);
            gy[y * w + x] = diff(|j| ch[j * w + x], y, h);
        }
    }
    (gx, gy)
}

fn check_size(image: &MultibandImage, cfg: &HogConfig) -> Result<()> {
    cfg.validate()?;
    if image.width() < cfg.cell_size || image.height() < cfg.cell_size {
        return Err(Error::Config(format!(
            "image {}x{} is smaller than one {}-pixel HOG cell",
            image.width(),
            image.height(),
            cfg.cell_size
        )));
    }
    Ok(())
}

pub fn cell_histograms(image: &MultibandImage, cfg: &HogConfig) -> Result<CellHistograms> {
    check_size(image, cfg)?;
    let (w, h) = (image.width(), image.height());
    let cells_x = w / cfg.cell_size;
    let cells_y = h / cfg.cell_size;
    let bins = cfg.bins;
    let bin_width = 180.0 / bins as f64;
    let (gx, gy) = gradients(image);
    let mut data = vec![0f64; cells_x * cells_y * bins];
    for y in 0..h {
        let cy = (y / cfg.cell_size).min(cells_y - 1);
        for x in 0..w {
            let i = y * w + x;
            let mag = gx[i].hypot(gy[i]);
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            if angle >= 180.0 {
                angle = 0.0;
            }
            let pos = angle / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as usize) % bins;
            let b1 = (b0 + 1) % bins;
            let cx = (x / cfg.cell_size).min(cells_x - 1);
            let base = (cy * cells_x + cx) * bins;
            data[base + b0] += mag * (1.0 - frac);
            data[base + b1] += mag * frac;
        }
    }
    Ok(CellHistograms {
        cells_x,
        cells_y,
        bins,
        data,
    })
}

/// Normalized block descriptors, row-major over blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDescriptors {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    cell_size: usize,
    cells_x: usize,
    cells_y: usize,
    block: [usize; 2],
}

impl BlockDescriptors {
    pub fn block(&self, bx: usize, by: usize) -> &[f32] {
        let i = (by * self.blocks_x + bx) * self.dim;
        &self.data[i..i + self.dim]
    }

    /// Descriptor assigned to pixel `(x, y)`.
    pub fn for_pixel(&self, x: usize, y: usize) -> &[f32] {
        let cx = (x / self.cell_size).min(self.cells_x - 1);
        let cy = (y / self.cell_size).min(self.cells_y - 1);
        self.block(cx / self.block[0], cy / self.block[1])
    }
}

pub fn block_descriptors(image: &MultibandImage, cfg: &HogConfig) -> Result<BlockDescriptors> {
    let cells = cell_histograms(image, cfg)?;
    let [bw, bh] = cfg.block;
    let blocks_x = cells.cells_x.div_ceil(bw);
    let blocks_y = cells.cells_y.div_ceil(bh);
    let dim = cfg.dim();
    let mut data = Vec::with_capacity(blocks_x * blocks_y * dim);
    let mut v = vec![0f64; dim];
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            v.iter_mut().for_each(|e| *e = 0.0);
            for j in 0..bh {
                for i in 0..bw {
                    let (cx, cy) = (bx * bw + i, by * bh + j);
                    if cx < cells.cells_x && cy < cells.cells_y {
                        let off = (j * bw + i) * cfg.bins;
                        v[off..off + cfg.bins].copy_from_slice(cells.cell(cx, cy));
                    }
                }
            }
            let norm = (v.iter().map(|e| e * e).sum::<f64>() + cfg.epsilon * cfg.epsilon).sqrt();
            data.extend(v.iter().map(|e| (e / norm) as f32));
        }
    }
    Ok(BlockDescriptors {
        blocks_x,
        blocks_y,
        dim,
        data,
        cell_size: cfg.cell_size,
        cells_x: cells.cells_x,
        cells_y: cells.cells_y,
        block: cfg.block,
    })
}

pub fn compute_hog(image: &MultibandImage, cfg: &HogConfig) -> Result<FeatureMatrix> {
    let blocks = block_descriptors(image, cfg)?;
    let (w, h) = (image.width(), image.height());
    let mut data = Vec::with_capacity(w * h * blocks.dim);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(blocks.for_pixel(x, y));
        }
    }
    FeatureMatrix::new(w * h, blocks.dim, data, cfg.col_meaning())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> MultibandImage {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(f(x, y));
            }
        }
        MultibandImage::new(w, h, 1, 1.24, data).unwrap()
    }

    fn totals(cells: &CellHistograms) -> Vec<f64> {
        let mut t = vec![0.0; cells.bins];
        for c in cells.data.chunks(cells.bins) {
            for (a, b) in t.iter_mut().zip(c) {
                *a += b;
            }
        }
        t
    }

    #[test]
    fn constant_image_gives_zero_descriptor() {
        let img = gray(16, 16, |_, _| 0.7);
        let x = compute_hog(&img, &HogConfig::default()).unwrap();
        assert_eq!(x.cols(), 36);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_edge_fills_bin_zero() {
        // Left half 0, right half 1 on 16x16. Central differences give
        // gx = 0.5 at columns 7 and 8 of every row, gy = 0: angle 0 exactly.
        let img = gray(16, 16, |x, _| if x >= 8 { 1.0 } else { 0.0 });
        let cells = cell_histograms(&img, &HogConfig::default()).unwrap();
        let t = totals(&cells);
        assert!((t[0] - 16.0 * 2.0 * 0.5).abs() < 1e-12);
        assert!(t[1..].iter().all(|&v| v == 0.0));
        // Column 7 lies in cell 0, column 8 in cell 1.
        assert!((cells.cell(0, 0)[0] - 8.0 * 0.5).abs() < 1e-12);
        assert!((cells.cell(1, 0)[0] - 8.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn transposed_edge_moves_mass_ninety_degrees() {
        // 90 degrees sits midway between the 80 and 100 degree bins.
        let img = gray(16, 16, |_, y| if y >= 8 { 1.0 } else { 0.0 });
        let t = totals(&cell_histograms(&img, &HogConfig::default()).unwrap());
        assert!((t[4] - 8.0).abs() < 1e-12);
        assert!((t[5] - 8.0).abs() < 1e-12);
        let rest: f64 = t
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 4 && *i != 5)
            .map(|(_, v)| v)
            .sum();
        assert_eq!(rest, 0.0);
        // With an even bin count the 90 degree bin exists and takes all the mass.
        let cfg = HogConfig {
            bins: 10,
            ..HogConfig::default()
        };
        let t = totals(&cell_histograms(&img, &cfg).unwrap());
        assert!((t[5] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn descriptor_is_unit_norm_when_nonzero() {
        let img = gray(16, 16, |x, y| ((x * 7 + y * 3) % 5) as f32);
        let x = compute_hog(&img, &HogConfig::default()).unwrap();
        let n: f64 = x.row(0).iter().map(|&v| (v as f64).powi(2)).sum();
        assert!((n - 1.0).abs() < 1e-5);
    }

    #[test]
    fn pixels_share_their_block_descriptor() {
        let img = gray(40, 24, |x, y| ((x * x + 3 * y) % 11) as f32);
        let x = compute_hog(&img, &HogConfig::default()).unwrap();
        // 5x3 cells -> 3x2 blocks; pixels (0,0) and (15,15) share block 0.
        assert_eq!(x.row(0), x.row(15 * 40 + 15));
        assert_ne!(x.row(0), x.row(16));
        // Partial block at the right edge still yields finite values.
        assert!(x.row(39).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn smaller_than_cell_is_config_error() {
        let img = gray(7, 16, |_, _| 0.0);
        assert!(matches!(
            compute_hog(&img, &HogConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cell_translation_shifts_histograms() {
        let f = |x: usize, y: usize| (((x * 13) ^ (y * 7)) % 17) as f32;
        let a = gray(48, 48, f);
        let b = gray(48, 48, |x, y| if x >= 8 { f(x - 8, y) } else { f(0, y) });
        let ha = cell_histograms(&a, &HogConfig::default()).unwrap();
        let hb = cell_histograms(&b, &HogConfig::default()).unwrap();
        // Interior cells away from the seam and the right border.
        for cy in 1..5 {
            for cx in 2..5 {
                let (p, q) = (ha.cell(cx - 1, cy), hb.cell(cx, cy));
                for (u, v) in p.iter().zip(q) {
                    assert!((u - v).abs() < 1e-9);
                }
            }
        }
    }
}
