//! Multiband rasters, polygon annotations, masks and probability maps, plus
//! the on-disk formats for each.
//!
//! * MBR: a one-line JSON header followed by band-planar little-endian `f32`
//!   samples, row-major within each plane.
//! * Annotations: JSON, vertex coordinates in pixel units of the image.
//! * Masks: binary PGM (`P5`, maxval 255).
//! * Rendered rasters: binary PPM (`P6`).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const DEFAULT_PIXEL_SIZE_M: f64 = 1.24;
pub const MAX_BANDS: usize = 16;
const MBR_DTYPE: &str = "f32le";

/// A `bands`-channel float raster stored plane by plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandImage {
    width: usize,
    height: usize,
    bands: usize,
    pixel_size_m: f64,
    data: Vec<f32>,
}

impl MultibandImage {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        pixel_size_m: f64,
        data: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if bands == 0 || bands > MAX_BANDS {
            return Err(Error::Validation(format!(
                "band count must be in 1..={MAX_BANDS}, got {bands}"
            )));
        }
        if !(pixel_size_m.is_finite() && pixel_size_m > 0.0) {
            return Err(Error::Validation(format!(
                "pixel_size_m must be positive, got {pixel_size_m}"
            )));
        }
        let expected = bands * width * height;
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected: expected * 4,
                actual: data.len() * 4,
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            bands,
            pixel_size_m,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, bands: usize) -> Result<Self> {
        Self::new(
            width,
            height,
            bands,
            DEFAULT_PIXEL_SIZE_M,
            vec![0.0; width * height * bands],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_size_m(&self) -> f64 {
        self.pixel_size_m
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The row-major plane of one band.
    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.pixel_count();
        &self.data[band * n..(band + 1) * n]
    }

    #[inline]
    pub fn get(&self, band: usize, x: usize, y: usize) -> f32 {
        self.data[band * self.pixel_count() + y * self.width + x]
    }
}

#[derive(Serialize, Deserialize)]
struct MbrHeader {
    width: usize,
    height: usize,
    bands: usize,
    pixel_size_m: f64,
    dtype: String,
}

fn header_usize(obj: &serde_json::Map<String, Value>, field: &str) -> Result<usize> {
    let v = obj
        .get(field)
        .ok_or_else(|| Error::format(field, "missing"))?;
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| Error::format(field, format!("expected a non-negative integer, got {v}")))
}

/// Splits an MBR-style file into its parsed JSON header and the payload.
pub(crate) fn split_json_header<'a>(
    bytes: &'a [u8],
    what: &str,
) -> Result<(Value, usize, &'a [u8])> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| {
        Error::format("header", format!("{what} header is not newline-terminated"))
    })?;
    let header: Value = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::format("header", format!("invalid JSON: {e}")))?;
    if !header.is_object() {
        return Err(Error::format("header", "expected a JSON object"));
    }
    Ok((header, nl + 1, &bytes[nl + 1..]))
}

fn decode_f32_le(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn decode_image(bytes: &[u8]) -> Result<MultibandImage> {
    let (header, _, payload) = split_json_header(bytes, "MBR")?;
    let obj = header.as_object().expect("checked object");
    let width = header_usize(obj, "width")?;
    let height = header_usize(obj, "height")?;
    let bands = header_usize(obj, "bands")?;
    let pixel_size_m = obj
        .get("pixel_size_m")
        .ok_or_else(|| Error::format("pixel_size_m", "missing"))?
        .as_f64()
        .ok_or_else(|| Error::format("pixel_size_m", "expected a number"))?;
    match obj.get("dtype").and_then(Value::as_str) {
        Some(MBR_DTYPE) => {}
        Some(other) => {
            return Err(Error::format(
                "dtype",
                format!("unsupported dtype {other:?}, expected {MBR_DTYPE:?}"),
            ))
        }
        None => return Err(Error::format("dtype", "missing")),
    }
    if width == 0 {
        return Err(Error::format("width", "must be at least 1"));
    }
    if height == 0 {
        return Err(Error::format("height", "must be at least 1"));
    }
    if bands == 0 || bands > MAX_BANDS {
        return Err(Error::format(
            "bands",
            format!("must be in 1..={MAX_BANDS}"),
        ));
    }
    if !(pixel_size_m.is_finite() && pixel_size_m > 0.0) {
        return Err(Error::format("pixel_size_m", "must be positive"));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bands))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("width", "dimensions overflow"))?;
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    MultibandImage::new(width, height, bands, pixel_size_m, decode_f32_le(payload))
}

pub fn encode_image(image: &MultibandImage) -> Vec<u8> {
    let header = MbrHeader {
        width: image.width,
        height: image.height,
        bands: image.bands,
        pixel_size_m: image.pixel_size_m,
        dtype: MBR_DTYPE.to_string(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(image.data.len() * 4);
    for v in &image.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<MultibandImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn save_image(image: &MultibandImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_image(image))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildingClass {
    Residential,
    NonResidential,
    UnclassifiedBuilding,
}

impl BuildingClass {
    pub const ALL: [BuildingClass; 3] = [
        BuildingClass::Residential,
        BuildingClass::NonResidential,
        BuildingClass::UnclassifiedBuilding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuildingClass::Residential => "residential",
            BuildingClass::NonResidential => "non_residential",
            BuildingClass::UnclassifiedBuilding => "unclassified_building",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

pub type Ring = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    #[serde(rename = "class")]
    pub class_label: BuildingClass,
    pub exterior: Ring,
    #[serde(default)]
    pub holes: Vec<Ring>,
}

impl Polygon {
    pub fn new(class_label: BuildingClass, exterior: Ring) -> Self {
        Self {
            class_label,
            exterior,
            holes: Vec::new(),
        }
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        for (r, ring) in self.rings().enumerate() {
            let which = if r == 0 {
                "exterior".to_string()
            } else {
                format!("hole {}", r - 1)
            };
            if ring.len() < 3 {
                return Err(Error::Validation(format!(
                    "polygon {index}: {which} has {} vertices, need at least 3",
                    ring.len()
                )));
            }
            if ring.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::Validation(format!(
                    "polygon {index}: {which} has a non-finite coordinate"
                )));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box `(min_x, min_y, max_x, max_y)` of the exterior.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.exterior.iter().fold(
            (
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ),
            |(a, b, c, d), p| (a.min(p[0]), b.min(p[1]), c.max(p[0]), d.max(p[1])),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub polygons: Vec<Polygon>,
}

impl AnnotationSet {
    pub fn validate(&self) -> Result<()> {
        self.polygons
            .iter()
            .enumerate()
            .try_for_each(|(i, p)| p.validate(i))
    }
}

#[derive(Deserialize)]
struct RawPolygon {
    class: String,
    exterior: Ring,
    #[serde(default)]
    holes: Vec<Ring>,
}

#[derive(Deserialize)]
struct RawAnnotations {
    polygons: Vec<RawPolygon>,
}

pub fn parse_annotations(text: &str) -> Result<AnnotationSet> {
    let raw: RawAnnotations = serde_json::from_str(text)
        .map_err(|e| Error::format("polygons", format!("invalid annotation JSON: {e}")))?;
    let mut polygons = Vec::with_capacity(raw.polygons.len());
    for (i, p) in raw.polygons.into_iter().enumerate() {
        let class_label = BuildingClass::parse(&p.class).ok_or_else(|| {
            Error::Validation(format!("polygon {i}: unknown class {:?}", p.class))
        })?;
        let polygon = Polygon {
            class_label,
            exterior: p.exterior,
            holes: p.holes,
        };
        polygon.validate(i)?;
        polygons.push(polygon);
    }
    Ok(AnnotationSet { polygons })
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

pub fn encode_annotations(ann: &AnnotationSet) -> Result<Vec<u8>> {
    ann.validate()?;
    let mut out = serde_json::to_vec(ann).expect("annotations serialize");
    out.push(b'\n');
    Ok(out)
}

pub fn save_annotations(ann: &AnnotationSet, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_annotations(ann)?)
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

pub const MASK_NEGATIVE: u8 = 0;
pub const MASK_POSITIVE: u8 = 255;
pub const STAGE2_RESIDENTIAL: u8 = 128;
pub const STAGE2_NON_RESIDENTIAL: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPalette {
    /// 0 = negative, 255 = positive.
    Binary,
    /// 0 = not a building, 128 = residential, 255 = non-residential.
    Stage2,
}

impl MaskPalette {
    pub fn allows(self, v: u8) -> bool {
        match self {
            MaskPalette::Binary => v == MASK_NEGATIVE || v == MASK_POSITIVE,
            MaskPalette::Stage2 => {
                v == MASK_NEGATIVE || v == STAGE2_RESIDENTIAL || v == STAGE2_NON_RESIDENTIAL
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    palette: MaskPalette,
    values: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, palette: MaskPalette, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::shape(
                format!("{} mask values", width * height),
                values.len(),
            ));
        }
        if let Some(i) = values.iter().position(|&v| !palette.allows(v)) {
            return Err(Error::Validation(format!(
                "mask value {} at index {i} is outside the {palette:?} palette",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            palette,
            values,
        })
    }

    pub fn from_bools(width: usize, height: usize, positive: &[bool]) -> Result<Self> {
        let values = positive
            .iter()
            .map(|&p| if p { MASK_POSITIVE } else { MASK_NEGATIVE })
            .collect();
        Self::new(width, height, MaskPalette::Binary, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn palette(&self) -> MaskPalette {
        self.palette
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Non-zero pixels, i.e. the positive class of a binary mask or any
    /// building of a stage-2 mask.
    pub fn positives(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v != MASK_NEGATIVE).collect()
    }

    pub fn count_positive(&self) -> usize {
        self.values.iter().filter(|&&v| v != MASK_NEGATIVE).count()
    }
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.values);
    out
}

/// Reads the next whitespace-delimited PNM header token, skipping `#` comments.
fn pnm_token(bytes: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return None;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok()?.parse().ok()
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format("magic", "not a binary PGM (expected P5)"));
    }
    let mut pos = 2;
    let width = pnm_token(bytes, &mut pos).ok_or_else(|| Error::format("width", "missing"))?;
    let height = pnm_token(bytes, &mut pos).ok_or_else(|| Error::format("height", "missing"))?;
    let maxval = pnm_token(bytes, &mut pos).ok_or_else(|| Error::format("maxval", "missing"))?;
    if maxval != 255 {
        return Err(Error::format(
            "maxval",
            format!("expected 255, got {maxval}"),
        ));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format("header", "missing separator before raster"));
    }
    pos += 1;
    let payload = &bytes[pos..];
    let expected = width * height;
    if payload.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let palette = if payload.iter().all(|&v| MaskPalette::Binary.allows(v)) {
        MaskPalette::Binary
    } else {
        MaskPalette::Stage2
    };
    Mask::new(width, height, palette, payload.to_vec())
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(mask))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes)
}

// ---------------------------------------------------------------------------
// Probability masks
// ---------------------------------------------------------------------------

/// Per-pixel probabilities in `[0, 1]`, persisted as a single-band MBR.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask {
    width: usize,
    height: usize,
    pixel_size_m: f64,
    probs: Vec<f32>,
}

impl ProbabilityMask {
    pub fn new(width: usize, height: usize, pixel_size_m: f64, probs: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "probability mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if probs.len() != width * height {
            return Err(Error::shape(
                format!("{} probabilities", width * height),
                probs.len(),
            ));
        }
        if let Some(i) = probs
            .iter()
            .position(|p| !(p.is_finite() && (0.0..=1.0).contains(p)))
        {
            return Err(Error::Validation(format!(
                "probability {} at index {i} is outside [0, 1]",
                probs[i]
            )));
        }
        if !(pixel_size_m.is_finite() && pixel_size_m > 0.0) {
            return Err(Error::Validation(format!(
                "pixel_size_m must be positive, got {pixel_size_m}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixel_size_m,
            probs,
        })
    }

    /// Builds a mask from `f64` predictions, rounding each to `f32`.
    pub fn from_f64(width: usize, height: usize, pixel_size_m: f64, probs: &[f64]) -> Result<Self> {
        Self::new(
            width,
            height,
            pixel_size_m,
            probs.iter().map(|&p| p as f32).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_size_m(&self) -> f64 {
        self.pixel_size_m
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn probs_f64(&self) -> Vec<f64> {
        self.probs.iter().map(|&p| p as f64).collect()
    }
}

pub fn save_probability_mask(mask: &ProbabilityMask, path: impl AsRef<Path>) -> Result<()> {
    let image = MultibandImage::new(
        mask.width,
        mask.height,
        1,
        mask.pixel_size_m,
        mask.probs.clone(),
    )?;
    save_image(&image, path)
}

pub fn load_probability_mask(path: impl AsRef<Path>) -> Result<ProbabilityMask> {
    let image = load_image(path)?;
    if image.bands != 1 {
        return Err(Error::format(
            "bands",
            format!("probability masks have 1 band, found {}", image.bands),
        ));
    }
    ProbabilityMask::new(image.width, image.height, image.pixel_size_m, image.data)
}

// ---------------------------------------------------------------------------
// RGB output
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, i: usize) -> [u8; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn save_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_ppm(image))
}
