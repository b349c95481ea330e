//! Image path: preprocessing, 8×8 patching, 40-of-64 masking and the masked
//! linear autoencoder that compresses an image into the 40-D feature vector.

mod encoder;
mod patch;

pub use encoder::{
    encode_features, train_encoder, AutoencoderParams, EncoderConfig, EncoderModel, EncoderTraining,
    MaskedObjective,
};
pub use patch::{
    patchify, select_mask, unpatchify, MaskSelection, PatchGrid, GRID, KEPT_PATCHES, PATCHES,
    PATCH_LEN, PATCH_SIDE,
};

use crate::error::{Error, Result};
use crate::types::{GrayImage, IMAGE_SIDE};

/// Center-crop to a square, bilinear-resample to 224×224, clamp to `[0, 1]`.
pub fn preprocess(raw: &GrayImage) -> Result<GrayImage> {
    if raw.height == 0 || raw.width == 0 || raw.data.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    if raw.data.len() != raw.height * raw.width {
        return Err(Error::invalid("image buffer does not match its dimensions"));
    }
    if raw.height == IMAGE_SIDE && raw.width == IMAGE_SIDE {
        let data = raw.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        return GrayImage::new(IMAGE_SIDE, IMAGE_SIDE, data);
    }
    let side = raw.height.min(raw.width);
    let top = (raw.height - side) / 2;
    let left = (raw.width - side) / 2;
    let scale = side as f64 / IMAGE_SIDE as f64;
    let max = (side - 1) as f64;
    // Pixel-centre aligned sample positions.
    let coords: Vec<(usize, usize, f64)> = (0..IMAGE_SIDE)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(side - 1);
            (lo, hi, s - lo as f64)
        })
        .collect();
    let mut out = GrayImage::filled(IMAGE_SIDE, IMAGE_SIDE, 0.0);
    for (r, &(r0, r1, fr)) in coords.iter().enumerate() {
        for (c, &(c0, c1, fc)) in coords.iter().enumerate() {
            let px = |rr: usize, cc: usize| raw.get(top + rr, left + cc);
            let a = px(r0, c0) * (1.0 - fc) + px(r0, c1) * fc;
            let b = px(r1, c0) * (1.0 - fc) + px(r1, c1) * fc;
            out.set(r, c, (a * (1.0 - fr) + b * fr).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}
