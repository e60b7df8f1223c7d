//! Gesture and tool asset library.
//!
//! The manifest maps ids such as `gesture/pinch` or `tool/whisk` to mesh
//! files. Every mesh follows one convention: the contact point sits at the
//! origin and a tool's functional end lies on its local -y side, so
//! aligning local +y with a surface normal puts the working end on the
//! surface.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUILTIN_MANIFEST: &str = include_str!("../../data/assets/manifest.json");

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("{path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error("asset {0:?} is not in the library")]
    Unknown(String),
    #[error("generating asset {id:?} failed: {reason}")]
    Generation { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub mesh: String,
    /// Model-space point that touches the target.
    #[serde(default)]
    pub contact_point: [f64; 3],
    /// Model axis the functional end points along, for tools.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional_end: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetManifest {
    pub version: u32,
    pub assets: BTreeMap<String, AssetEntry>,
}

/// Reference from a primitive to the mesh it renders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub library_id: String,
    pub fallback_generated: bool,
}

/// Stand-in returned by a generative hook.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaceholderAsset {
    pub id: String,
}

/// Produces an asset for a tool missing from the curated library.
pub trait GenerativeHook: Send + Sync {
    fn generate(&self, tool: &str) -> Result<PlaceholderAsset, String>;
}

/// Default hook: no mesh generation, just a stable placeholder id.
#[derive(Debug, Default, Clone, Copy)]
pub struct PlaceholderHook;

impl GenerativeHook for PlaceholderHook {
    fn generate(&self, tool: &str) -> Result<PlaceholderAsset, String> {
        Ok(PlaceholderAsset { id: format!("generated/tool/{}", slug(tool)) })
    }
}

/// Lowercase ASCII words joined by `_`.
pub fn slug(name: &str) -> String {
    name.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Clone)]
pub struct AssetLibrary {
    manifest: AssetManifest,
    root: Option<PathBuf>,
    hook: Option<Arc<dyn GenerativeHook>>,
}

impl std::fmt::Debug for AssetLibrary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AssetLibrary")
            .field("assets", &self.manifest.assets.len())
            .field("root", &self.root)
            .field("hook", &self.hook.is_some())
            .finish()
    }
}

impl AssetLibrary {
    /// The manifest shipped with the crate, with the placeholder hook.
    pub fn builtin() -> Self {
        let manifest = serde_json::from_str(BUILTIN_MANIFEST).expect("bundled asset manifest is valid");
        AssetLibrary { manifest, root: None, hook: Some(Arc::new(PlaceholderHook)) }
    }

    pub fn load(path: &Path) -> Result<Self, AssetError> {
        let err = |reason: String| AssetError::Manifest { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let manifest = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(AssetLibrary { manifest, root: path.parent().map(Path::to_path_buf), hook: Some(Arc::new(PlaceholderHook)) })
    }

    pub fn with_hook(mut self, hook: Option<Arc<dyn GenerativeHook>>) -> Self {
        self.hook = hook;
        self
    }

    pub fn manifest(&self) -> &AssetManifest {
        &self.manifest
    }

    pub fn get(&self, id: &str) -> Option<&AssetEntry> {
        self.manifest.assets.get(id)
    }

    /// Absolute mesh path, when the library was loaded from disk.
    pub fn mesh_path(&self, id: &str) -> Option<PathBuf> {
        Some(self.root.as_ref()?.join(&self.get(id)?.mesh))
    }

    pub fn gesture(&self, name: &str) -> Result<AssetRef, AssetError> {
        let id = format!("gesture/{name}");
        if self.manifest.assets.contains_key(&id) {
            Ok(AssetRef { library_id: id, fallback_generated: false })
        } else {
            Err(AssetError::Unknown(id))
        }
    }

    /// Curated tool if present, else whatever the generative hook makes.
    pub fn tool(&self, name: &str) -> Result<AssetRef, AssetError> {
        let id = format!("tool/{}", slug(name));
        if self.manifest.assets.contains_key(&id) {
            return Ok(AssetRef { library_id: id, fallback_generated: false });
        }
        let hook = self.hook.as_ref().ok_or_else(|| AssetError::Unknown(id.clone()))?;
        let placeholder = hook.generate(name).map_err(|reason| AssetError::Generation { id, reason })?;
        Ok(AssetRef { library_id: placeholder.id, fallback_generated: true })
    }
}
