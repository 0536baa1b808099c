use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::{
    Mask, MaskPalette, RgbImage, MASK_NEGATIVE, STAGE2_NON_RESIDENTIAL, STAGE2_RESIDENTIAL,
};

const RED: [u8; 3] = [255, 0, 0];
const GREEN: [u8; 3] = [0, 255, 0];
const BLUE: [u8; 3] = [0, 0, 255];
const BLACK: [u8; 3] = [0, 0, 0];
const GRAY: [u8; 3] = [128, 128, 128];
const WHITE: [u8; 3] = [255, 255, 255];
const YELLOW: [u8; 3] = [255, 255, 0];

/// TP red, FP green, FN blue, TN black.
pub fn render_confusion_mask(pred: &Mask, truth: &Mask) -> Result<RgbImage> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::shape(
            format!("{}x{} mask", truth.width(), truth.height()),
            format!("{}x{} mask", pred.width(), pred.height()),
        ));
    }
    let data = pred
        .positives()
        .into_iter()
        .zip(truth.positives())
        .flat_map(|(p, t)| match (p, t) {
            (true, true) => RED,
            (true, false) => GREEN,
            (false, true) => BLUE,
            (false, false) => BLACK,
        })
        .collect();
    Ok(RgbImage {
        width: pred.width(),
        height: pred.height(),
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Mode {
    /// Residential gray, non-residential white.
    Truth,
    /// Residential red, non-residential yellow.
    Prediction,
}

pub fn render_stage2_mask(mask: &Mask, mode: Stage2Mode) -> Result<RgbImage> {
    if mask.palette() != MaskPalette::Stage2 {
        if let Some(i) = mask.values().iter().position(|&v| v != MASK_NEGATIVE) {
            // A binary mask with buildings cannot say which class they are.
            return Err(Error::Validation(format!(
                "value {} at index {i} is not a stage-2 palette entry",
                mask.values()[i]
            )));
        }
    }
    let (res, nonres) = match mode {
        Stage2Mode::Truth => (GRAY, WHITE),
        Stage2Mode::Prediction => (RED, YELLOW),
    };
    let data = mask
        .values()
        .iter()
        .flat_map(|&v| match v {
            STAGE2_RESIDENTIAL => res,
            STAGE2_NON_RESIDENTIAL => nonres,
            _ => BLACK,
        })
        .collect();
    Ok(RgbImage {
        width: mask.width(),
        height: mask.height(),
        data,
    })
}
