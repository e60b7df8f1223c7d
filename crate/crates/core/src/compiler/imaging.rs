//! Crop compositing for image-plane guidance.

use image::{Rgba, RgbaImage};
use thiserror::Error;

use crate::geometry::{BoundingBox2D, CameraIntrinsics, GeometryError};
use crate::vision::{crop_rect, SegmentationMask};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImagingError {
    #[error("crop is {crop:?} but mask is {mask:?}")]
    DimensionMismatch { crop: (u32, u32), mask: (u32, u32) },
    #[error("image decode: {0}")]
    Decode(String),
}

/// The pixels of `image` under `bbox`, using [`crop_rect`].
pub fn crop(image: &RgbaImage, bbox: &BoundingBox2D) -> RgbaImage {
    let (x, y, w, h) = crop_rect(bbox);
    let w = w.min(image.width().saturating_sub(x)).max(1);
    let h = h.min(image.height().saturating_sub(y)).max(1);
    image::imageops::crop_imm(image, x, y, w, h).to_image()
}

/// Triples the blue channel of masked pixels (saturating at 255) and makes
/// unmasked pixels fully transparent. Red, green and alpha of masked pixels
/// are kept.
pub fn enhance_blue(crop: &RgbaImage, mask: &SegmentationMask) -> Result<RgbaImage, ImagingError> {
    if (crop.width(), crop.height()) != (mask.width, mask.height) {
        return Err(ImagingError::DimensionMismatch {
            crop: (crop.width(), crop.height()),
            mask: (mask.width, mask.height),
        });
    }
    Ok(RgbaImage::from_fn(crop.width(), crop.height(), |x, y| {
        let Rgba([r, g, b, a]) = *crop.get_pixel(x, y);
        if mask.get(x, y) {
            Rgba([r, g, b.saturating_mul(3), a])
        } else {
            Rgba([r, g, b, 0])
        }
    }))
}

/// Physical size of the image plane showing `bbox` at depth `d`.
pub fn image_plane_scale(bbox: &BoundingBox2D, d: f64, k: &CameraIntrinsics) -> Result<(f64, f64), GeometryError> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(GeometryError::NonPositiveDepth(d));
    }
    Ok((bbox.width() * d / k.fx, bbox.height() * d / k.fy))
}
