//! Polygon annotations to ground-truth masks.
//!
//! Pixels are sampled at their centers `(x + 0.5, y + 0.5)` and tested with
//! the even-odd rule over all rings of a polygon, so holes are excluded. Edges
//! are half-open in y (lower endpoint included, upper excluded) and a crossing
//! is counted only when it lies strictly right of the sample. Centers on a
//! left or bottom edge are therefore inside, on a right or top edge outside.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::{
    AnnotationSet, BuildingClass, Mask, MaskPalette, Polygon, Ring, MASK_POSITIVE,
    STAGE2_NON_RESIDENTIAL, STAGE2_RESIDENTIAL,
};

/// The fill configuration applied by this module. There is exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillRule {
    pub rule: &'static str,
    pub sample_point: &'static str,
}

pub const FILL_RULE: FillRule = FillRule {
    rule: "even_odd",
    sample_point: "pixel_center",
};

#[inline]
fn edge_crossing(a: [f64; 2], b: [f64; 2], y: f64) -> Option<f64> {
    if (a[1] <= y) != (b[1] <= y) {
        Some(a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]))
    } else {
        None
    }
}

fn ring_edges(ring: &Ring) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
    let n = ring.len();
    (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
}

fn signed_area(ring: &Ring) -> f64 {
    ring_edges(ring)
        .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
        .sum::<f64>()
        / 2.0
}

fn is_degenerate(polygon: &Polygon) -> bool {
    signed_area(&polygon.exterior) == 0.0
}

pub fn point_in_polygon(point: (f64, f64), polygon: &Polygon) -> bool {
    if is_degenerate(polygon) {
        return false;
    }
    let (px, py) = point;
    let mut inside = false;
    for ring in polygon.rings() {
        for (a, b) in ring_edges(ring) {
            if let Some(x) = edge_crossing(a, b, py) {
                if px < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// Fills `row` (one raster row at center height `yc`) with `value` wherever
/// the polygon covers a pixel center.
fn fill_row(polygon: &Polygon, yc: f64, row: &mut [u8], value: u8, xs: &mut Vec<f64>) {
    xs.clear();
    for ring in polygon.rings() {
        for (a, b) in ring_edges(ring) {
            if let Some(x) = edge_crossing(a, b, yc) {
                xs.push(x);
            }
        }
    }
    if xs.is_empty() {
        return;
    }
    xs.sort_by(f64::total_cmp);
    // A center is inside iff an odd number of crossings lie strictly to its right.
    let mut right = 0usize;
    for (i, px) in row.iter_mut().enumerate() {
        let xc = i as f64 + 0.5;
        while right < xs.len() && xs[right] <= xc {
            right += 1;
        }
        if (xs.len() - right) % 2 == 1 {
            *px = value;
        }
    }
}

/// Vertical extent over every ring; a hole reaching past the exterior still
/// flips parity under the even-odd rule.
fn y_extent(polygon: &Polygon) -> (f64, f64) {
    polygon
        .rings()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[1]), hi.max(p[1]))
        })
}

fn paint(polygons: &[(&Polygon, u8)], width: usize, values: &mut [u8]) {
    values
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            let yc = y as f64 + 0.5;
            let mut xs = Vec::new();
            for &(polygon, value) in polygons {
                let (min_y, max_y) = y_extent(polygon);
                if yc < min_y || yc > max_y {
                    continue;
                }
                fill_row(polygon, yc, row, value, &mut xs);
            }
        });
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Config(format!(
            "raster dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Binary mask: 255 where any polygon whose class passes `class_filter`
/// covers the pixel center. `None` admits every class.
pub fn rasterize_annotations(
    ann: &AnnotationSet,
    width: usize,
    height: usize,
    class_filter: Option<&[BuildingClass]>,
) -> Result<Mask> {
    check_dims(width, height)?;
    ann.validate()?;
    let selected: Vec<(&Polygon, u8)> = ann
        .polygons
        .iter()
        .filter(|p| class_filter.is_none_or(|f| f.contains(&p.class_label)))
        .filter(|p| !is_degenerate(p))
        .map(|p| (p, MASK_POSITIVE))
        .collect();
    let mut values = vec![0u8; width * height];
    paint(&selected, width, &mut values);
    Mask::new(width, height, MaskPalette::Binary, values)
}

/// Stage-2 palette mask: residential 128, non-residential 255, everything
/// else (including unclassified buildings) 0. Where polygons of both classes
/// overlap, non-residential wins.
pub fn rasterize_stage2(ann: &AnnotationSet, width: usize, height: usize) -> Result<Mask> {
    check_dims(width, height)?;
    ann.validate()?;
    let mut selected: Vec<(&Polygon, u8)> = Vec::new();
    for (class, value) in [
        (BuildingClass::Residential, STAGE2_RESIDENTIAL),
        (BuildingClass::NonResidential, STAGE2_NON_RESIDENTIAL),
    ] {
        selected.extend(
            ann.polygons
                .iter()
                .filter(|p| p.class_label == class && !is_degenerate(p))
                .map(|p| (p, value)),
        );
    }
    let mut values = vec![0u8; width * height];
    paint(&selected, width, &mut values);
    Mask::new(width, height, MaskPalette::Stage2, values)
}
