//! Per-pixel feature vectors: frame expansion over a `(2k+1)^2` neighborhood,
//! optionally followed by HOG block descriptors.

mod frame;
mod hog;
mod store;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::MultibandImage;

pub use frame::{expand_frame_features, FrameConfig, Padding};
pub use hog::{
    block_descriptors, cell_histograms, compute_hog, gradients, BlockDescriptors, CellHistograms,
    ChannelReduction, HogConfig, OrientationRange,
};
pub use store::{
    load_features, save_features, ColumnMeaning, DiskFeatures, FeatureMatrix, FeatureSource,
    FeatureWriter, RowSubset,
};

/// The feature layout a model was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub frame: FrameConfig,
    pub hog: Option<HogConfig>,
}

impl FeatureSpec {
    pub fn new(k: usize, hog: Option<HogConfig>) -> Self {
        Self {
            frame: FrameConfig::new(k),
            hog,
        }
    }

    pub fn dim(&self, bands: usize) -> usize {
        self.frame.dim(bands) + self.hog.map_or(0, |h| h.dim())
    }

    pub fn validate(&self, image: &MultibandImage) -> Result<()> {
        self.frame.validate(image.width(), image.height())?;
        if let Some(h) = &self.hog {
            h.validate()?;
            if image.width() < h.cell_size || image.height() < h.cell_size {
                return Err(Error::Config(format!(
                    "image {}x{} is smaller than one {}-pixel HOG cell",
                    image.width(),
                    image.height(),
                    h.cell_size
                )));
            }
        }
        Ok(())
    }

    pub fn col_meaning(&self, bands: usize) -> Vec<ColumnMeaning> {
        let mut m = self.frame.col_meaning(bands);
        if let Some(h) = &self.hog {
            m.extend(h.col_meaning());
        }
        m
    }
}

/// `[frame | hog]`; frame features only when `hog_cfg` is `None`.
pub fn assemble_features(
    image: &MultibandImage,
    frame_cfg: &FrameConfig,
    hog_cfg: Option<&HogConfig>,
) -> Result<FeatureMatrix> {
    let frame = expand_frame_features(image, frame_cfg)?;
    match hog_cfg {
        Some(cfg) => frame.hconcat(&compute_hog(image, cfg)?),
        None => Ok(frame),
    }
}

pub fn assemble_spec(image: &MultibandImage, spec: &FeatureSpec) -> Result<FeatureMatrix> {
    assemble_features(image, &spec.frame, spec.hog.as_ref())
}

/// Writes the assembled features of `image` to `path` one image row at a
/// time, never holding more than a row of feature vectors in memory.
pub fn assemble_to_disk(
    image: &MultibandImage,
    spec: &FeatureSpec,
    path: impl AsRef<Path>,
) -> Result<DiskFeatures> {
    spec.validate(image)?;
    let blocks = spec
        .hog
        .as_ref()
        .map(|h| block_descriptors(image, h))
        .transpose()?;
    let (w, c) = (image.width(), image.bands());
    let frame_dim = spec.frame.dim(c);
    let dim = spec.dim(c);
    let mut writer =
        FeatureWriter::create(path.as_ref(), image.pixel_count(), spec.col_meaning(c))?;
    let mut frame_row = vec![0f32; w * frame_dim];
    let mut row = vec![0f32; w * dim];
    for y in 0..image.height() {
        frame::fill_frame_rows(image, &spec.frame, y, &mut frame_row);
        for x in 0..w {
            let dst = &mut row[x * dim..(x + 1) * dim];
            dst[..frame_dim].copy_from_slice(&frame_row[x * frame_dim..(x + 1) * frame_dim]);
            if let Some(b) = &blocks {
                dst[frame_dim..].copy_from_slice(b.for_pixel(x, y));
            }
        }
        writer.append(&row)?;
    }
    let path = writer.finish()?;
    DiskFeatures::open(path)
}

/// Column-wise affine scaling to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

const STANDARDIZE_CHUNK: usize = 4096;

impl Standardizer {
    /// Two passes over `x` in fixed-size row chunks.
    pub fn fit<S: FeatureSource + ?Sized>(x: &S) -> Result<Self> {
        let (n, d) = (x.n_rows(), x.n_cols());
        if n == 0 {
            return Err(Error::Validation(
                "cannot standardize an empty feature set".into(),
            ));
        }
        let mut buf = vec![0f32; STANDARDIZE_CHUNK * d];
        let mut mean = vec![0f64; d];
        for_each_chunk(x, &mut buf, |rows| {
            for r in rows.chunks_exact(d) {
                for (m, &v) in mean.iter_mut().zip(r) {
                    *m += v as f64;
                }
            }
        })?;
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0f64; d];
        for_each_chunk(x, &mut buf, |rows| {
            for r in rows.chunks_exact(d) {
                for ((s, &v), m) in var.iter_mut().zip(r).zip(&mean) {
                    let e = v as f64 - m;
                    *s += e * e;
                }
            }
        })?;
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn apply(&self, row: &[f32], out: &mut [f64]) {
        for (((o, &v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.scale) {
            *o = (v as f64 - m) / s;
        }
    }
}

fn for_each_chunk<S: FeatureSource + ?Sized>(
    x: &S,
    buf: &mut [f32],
    mut f: impl FnMut(&[f32]),
) -> Result<()> {
    let d = x.n_cols();
    let n = x.n_rows();
    let mut idx = Vec::with_capacity(STANDARDIZE_CHUNK);
    let mut start = 0;
    while start < n {
        let end = (start + STANDARDIZE_CHUNK).min(n);
        idx.clear();
        idx.extend(start..end);
        let slice = &mut buf[..idx.len() * d];
        x.read_rows(&idx, slice)?;
        f(slice);
        start = end;
    }
    Ok(())
}
