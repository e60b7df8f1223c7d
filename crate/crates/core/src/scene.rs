//! Scene snapshots and their on-disk bundle format.
//!
//! A scene bundle is a directory holding `meta.json`, a PNG color image and
//! a raw depth file (little-endian `f32`, row-major, meters). The metadata
//! document names both files and carries their dimensions, the camera
//! intrinsics and the camera pose (row-major rotation plus translation).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, CameraPose, CaptureGeometry, DepthMap, GeometryError};

pub const META_FILE: &str = "meta.json";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid metadata: {reason}")]
    Meta { path: PathBuf, reason: String },
    #[error("color image: {0}")]
    Image(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub file: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    pub image: FileRef,
    pub depth: FileRef,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

/// PNG-encoded color frame. Decoding happens on demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    png: Arc<[u8]>,
    width: u32,
    height: u32,
}

impl ColorImage {
    pub fn from_png(png: Vec<u8>) -> Result<Self, SceneError> {
        let reader = image::ImageReader::with_format(std::io::Cursor::new(&png), image::ImageFormat::Png);
        let (width, height) = reader.into_dimensions().map_err(|e| SceneError::Image(e.to_string()))?;
        Ok(ColorImage { png: png.into(), width, height })
    }

    pub fn from_rgba(img: &image::RgbaImage) -> Self {
        let png = encode_png(img);
        ColorImage { png: png.into(), width: img.width(), height: img.height() }
    }

    pub fn png(&self) -> &[u8] {
        &self.png
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn decode(&self) -> Result<image::RgbaImage, SceneError> {
        image::load_from_memory_with_format(&self.png, image::ImageFormat::Png)
            .map(|i| i.to_rgba8())
            .map_err(|e| SceneError::Image(e.to_string()))
    }
}

/// Deterministic PNG encoding of an RGBA buffer.
pub fn encode_png(img: &image::RgbaImage) -> Vec<u8> {
    let mut out = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .expect("encoding an in-memory PNG cannot fail");
    out
}

/// One captured moment: color, depth, intrinsics and the camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSnapshot {
    /// Content hash of image, depth and camera parameters.
    pub id: String,
    /// Human-readable scene label carried in the metadata, if any.
    pub scene_id: Option<String>,
    pub image: ColorImage,
    pub depth: Arc<DepthMap>,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

impl SceneSnapshot {
    pub fn new(
        scene_id: Option<String>,
        image: ColorImage,
        depth: DepthMap,
        intrinsics: CameraIntrinsics,
        pose: CameraPose,
    ) -> Result<Self, SceneError> {
        if (image.width, image.height) != (intrinsics.width, intrinsics.height) {
            return Err(SceneError::Image(format!(
                "image is {}x{} but intrinsics describe {}x{}",
                image.width, image.height, intrinsics.width, intrinsics.height
            )));
        }
        let mut hasher = Sha256::new();
        hasher.update(image.png());
        hasher.update(depth.width().to_le_bytes());
        hasher.update(depth.height().to_le_bytes());
        hasher.update(depth.to_le_bytes());
        hasher.update(serde_json::to_vec(&(&intrinsics, &pose)).expect("serializable"));
        let id = hex::encode(&hasher.finalize()[..8]);
        Ok(SceneSnapshot { id, scene_id, image, depth: Arc::new(depth), intrinsics, pose })
    }

    pub fn from_meta(meta: &SceneMeta, png: Vec<u8>, depth_bytes: &[u8]) -> Result<Self, SceneError> {
        let image = ColorImage::from_png(png)?;
        if (image.width, image.height) != (meta.image.width, meta.image.height) {
            return Err(SceneError::Image(format!(
                "PNG is {}x{}, metadata says {}x{}",
                image.width, image.height, meta.image.width, meta.image.height
            )));
        }
        let depth = DepthMap::from_le_bytes(meta.depth.width, meta.depth.height, depth_bytes)?;
        SceneSnapshot::new(meta.scene_id.clone(), image, depth, meta.intrinsics, meta.pose)
    }

    pub fn load(dir: &Path) -> Result<Self, SceneError> {
        let meta_path = dir.join(META_FILE);
        let text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: SceneMeta = serde_json::from_str(&text)
            .map_err(|e| SceneError::Meta { path: meta_path.clone(), reason: e.to_string() })?;
        let image_path = dir.join(&meta.image.file);
        let png = std::fs::read(&image_path).map_err(io_err(&image_path))?;
        let depth_path = dir.join(&meta.depth.file);
        let depth = std::fs::read(&depth_path).map_err(io_err(&depth_path))?;
        Self::from_meta(&meta, png, &depth)
    }

    pub fn meta(&self) -> SceneMeta {
        SceneMeta {
            scene_id: self.scene_id.clone(),
            image: FileRef { file: "color.png".into(), width: self.image.width, height: self.image.height },
            depth: FileRef { file: "depth.f32".into(), width: self.depth.width(), height: self.depth.height() },
            intrinsics: self.intrinsics,
            pose: self.pose,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), SceneError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let meta = self.meta();
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(io_err(&p))
        };
        write(&meta.image.file, self.image.png())?;
        write(&meta.depth.file, &self.depth.to_le_bytes())?;
        write(META_FILE, serde_json::to_string_pretty(&meta).expect("serializable").as_bytes())
    }

    pub fn geometry(&self) -> CaptureGeometry<'_> {
        CaptureGeometry { depth: &self.depth, intrinsics: &self.intrinsics, pose: &self.pose }
    }

    /// A flat gray frame over uniform depth; used for tests and demos.
    pub fn synthetic(width: u32, height: u32, focal: f64, depth: f32, pose: CameraPose) -> Self {
        let img = image::RgbaImage::from_pixel(width, height, image::Rgba([128, 128, 128, 255]));
        let k = CameraIntrinsics::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
            .expect("synthetic intrinsics are valid");
        let depth = DepthMap::uniform((width / 4).max(1), (height / 4).max(1), depth);
        SceneSnapshot::new(Some("synthetic".into()), ColorImage::from_rgba(&img), depth, k, pose)
            .expect("synthetic snapshot is consistent")
    }
}
