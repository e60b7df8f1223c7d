//! Fixture-backed provider for offline runs.
//!
//! A fixture directory holds `provider.json`:
//!
//! ```json
//! {
//!   "plan": [{"file": "plan.json"}],
//!   "bbox": {"s1/orange start button": "{name: Start button, pos: [412, 655, 450, 710]}"},
//!   "translation": {"basket": {"file": "replies/basket.txt"}},
//!   "rotation": {"s3/toaster oven door": "{rotation: [x, CCW]}"},
//!   "segmentation": {"s3/120,80,400,520": "masks/door.png"},
//!   "unavailable": ["segmentation"],
//!   "refuse": ["bbox"]
//! }
//! ```
//!
//! Prompt replies are looked up by `"<scene_id>/<component>"` and then by
//! `"<component>"` alone, where the component is lowercased with runs of
//! whitespace collapsed. Plan replies are indexed by attempt; later
//! attempts reuse the last entry. Segmentation masks are keyed by scene and
//! [`BoundingBox2D::key`], fall back to an ellipse inscribed in the crop,
//! and are resized to the crop if their dimensions differ. The value
//! `"empty"` yields an all-false mask. Capabilities listed under
//! `unavailable` never answer, so the caller's timeout decides the outcome.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;

use super::provider::{Capabilities, Capability, PromptRequest, ProviderError, SegmentReply, SegmentRequest, VisionProvider};
use super::{crop_rect, SegmentationMask};
use crate::geometry::BoundingBox2D;

pub const FIXTURE_PROVIDER_FILE: &str = "provider.json";

/// A reply given inline or read from a file next to `provider.json`.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum ReplySource {
    Text(String),
    File { file: String },
    Inline { text: String },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSpec {
    #[serde(default)]
    pub plan: Vec<ReplySource>,
    #[serde(default)]
    pub bbox: BTreeMap<String, ReplySource>,
    #[serde(default)]
    pub translation: BTreeMap<String, ReplySource>,
    #[serde(default)]
    pub rotation: BTreeMap<String, ReplySource>,
    /// Mask PNG paths, or `"empty"`.
    #[serde(default)]
    pub segmentation: BTreeMap<String, String>,
    /// Declared capabilities; all of them when absent.
    #[serde(default)]
    pub capabilities: Option<BTreeSet<Capability>>,
    #[serde(default)]
    pub unavailable: BTreeSet<Capability>,
    #[serde(default)]
    pub refuse: BTreeSet<Capability>,
}

#[derive(Debug, Clone)]
enum MaskSource {
    Png(SegmentationMask),
    Empty,
}

/// Deterministic provider answering from fixture data held in memory.
#[derive(Debug, Clone)]
pub struct MockProvider {
    name: String,
    capabilities: Capabilities,
    plan: Vec<String>,
    prompts: BTreeMap<Capability, BTreeMap<String, String>>,
    masks: BTreeMap<String, MaskSource>,
    unavailable: BTreeSet<Capability>,
    refuse: BTreeSet<Capability>,
}

/// Lowercases and collapses whitespace so lookups ignore formatting noise.
pub fn normalize_component(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn read_reply(root: &Path, src: &ReplySource) -> Result<String, ProviderError> {
    match src {
        ReplySource::Text(t) | ReplySource::Inline { text: t } => Ok(t.clone()),
        ReplySource::File { file } => {
            let p = root.join(file);
            std::fs::read_to_string(&p).map_err(|e| ProviderError::Transport(format!("{}: {e}", p.display())))
        }
    }
}

impl MockProvider {
    /// Loads `provider.json` and every file it references from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, ProviderError> {
        let path = dir.join(FIXTURE_PROVIDER_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| ProviderError::Transport(format!("{}: {e}", path.display())))?;
        let spec: MockSpec = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Transport(format!("{}: {e}", path.display())))?;
        let name = format!("mock:{}", dir.file_name().and_then(|n| n.to_str()).unwrap_or("fixture"));
        Self::from_spec(name, dir, &spec)
    }

    pub fn from_spec(name: impl Into<String>, root: &Path, spec: &MockSpec) -> Result<Self, ProviderError> {
        let plan = spec.plan.iter().map(|s| read_reply(root, s)).collect::<Result<Vec<_>, _>>()?;
        let mut prompts = BTreeMap::new();
        for (cap, table) in [
            (Capability::Bbox, &spec.bbox),
            (Capability::Translation, &spec.translation),
            (Capability::Rotation, &spec.rotation),
        ] {
            let mut out = BTreeMap::new();
            for (key, src) in table {
                out.insert(normalize_key(key), read_reply(root, src)?);
            }
            prompts.insert(cap, out);
        }
        let mut masks = BTreeMap::new();
        for (key, file) in &spec.segmentation {
            let source = if file == "empty" {
                MaskSource::Empty
            } else {
                let p: PathBuf = root.join(file);
                let bytes = std::fs::read(&p).map_err(|e| ProviderError::Transport(format!("{}: {e}", p.display())))?;
                MaskSource::Png(
                    SegmentationMask::from_png(&bytes).map_err(|e| ProviderError::Transport(format!("{}: {e}", p.display())))?,
                )
            };
            masks.insert(key.clone(), source);
        }
        let capabilities = match &spec.capabilities {
            Some(set) => set.iter().copied().collect(),
            None => Capabilities::all(),
        };
        Ok(MockProvider {
            name: name.into(),
            capabilities,
            plan,
            prompts,
            masks,
            unavailable: spec.unavailable.clone(),
            refuse: spec.refuse.clone(),
        })
    }

    async fn gate(&self, capability: Capability) -> Result<(), ProviderError> {
        if self.unavailable.contains(&capability) {
            std::future::pending::<()>().await;
        }
        if self.refuse.contains(&capability) {
            return Err(ProviderError::Refusal(format!("fixture refuses {capability} requests")));
        }
        Ok(())
    }

    fn lookup_prompt(&self, request: &PromptRequest) -> Result<String, ProviderError> {
        let component = request.slots.get("key_component").map(|s| normalize_component(s)).unwrap_or_default();
        let table = self.prompts.get(&request.capability);
        let scene = request.frames.last().and_then(|f| f.scene_id.as_deref());
        let mut keys = Vec::new();
        if let Some(scene) = scene {
            keys.push(format!("{scene}/{component}"));
        }
        keys.push(component.clone());
        keys.iter()
            .find_map(|k| table.and_then(|t| t.get(k)))
            .cloned()
            .ok_or_else(|| ProviderError::Transport(format!("no fixture reply for {} {:?}", request.capability, keys[0])))
    }
}

/// Normalizes the component part of a `scene/component` fixture key.
fn normalize_key(key: &str) -> String {
    match key.split_once('/') {
        Some((scene, component)) => format!("{scene}/{}", normalize_component(component)),
        None => normalize_component(key),
    }
}

/// Nearest-neighbor resample to `w`x`h`.
fn resize_mask(mask: &SegmentationMask, w: u32, h: u32) -> SegmentationMask {
    if (mask.width, mask.height) == (w, h) {
        return mask.clone();
    }
    let bits = (0..h)
        .flat_map(|y| {
            (0..w).map(move |x| {
                let sx = ((x as u64 * mask.width as u64) / w as u64) as u32;
                let sy = ((y as u64 * mask.height as u64) / h as u64) as u32;
                mask.get(sx, sy)
            })
        })
        .collect();
    SegmentationMask { width: w, height: h, bits }
}

#[async_trait]
impl VisionProvider for MockProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    async fn complete(&self, request: &PromptRequest) -> Result<String, ProviderError> {
        self.gate(request.capability).await?;
        match request.capability {
            Capability::Plan => {
                let idx = (request.attempt as usize).min(self.plan.len().saturating_sub(1));
                self.plan.get(idx).cloned().ok_or_else(|| ProviderError::Transport("fixture has no plan reply".into()))
            }
            Capability::Segmentation => Err(ProviderError::Unsupported(Capability::Segmentation)),
            _ => self.lookup_prompt(request),
        }
    }

    async fn segment(&self, request: &SegmentRequest) -> Result<SegmentReply, ProviderError> {
        self.gate(Capability::Segmentation).await?;
        let (_, _, w, h) = crop_rect(&request.bbox);
        let key = request.bbox.key();
        let stored = request
            .frame
            .scene_id
            .as_deref()
            .and_then(|scene| self.masks.get(&format!("{scene}/{key}")))
            .or_else(|| self.masks.get(&key));
        let mask = match stored {
            Some(MaskSource::Png(m)) => resize_mask(m, w, h),
            Some(MaskSource::Empty) => SegmentationMask { width: w, height: h, bits: vec![false; (w * h) as usize] },
            None => SegmentationMask::inscribed_ellipse(w, h),
        };
        Ok(SegmentReply { mask, reported_latency: Some(Duration::ZERO) })
    }
}

/// Mask key for a box, matching what [`MockProvider`] looks up.
pub fn mask_key(scene_id: &str, bbox: &BoundingBox2D) -> String {
    format!("{scene_id}/{}", bbox.key())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::ColorImage;
    use crate::vision::Frame;

    fn frame(scene: &str) -> Frame {
        let img = image::RgbaImage::new(4, 4);
        Frame { scene_id: Some(scene.into()), image: ColorImage::from_rgba(&img) }
    }

    fn request(cap: Capability, component: &str, scene: &str, attempt: u32) -> PromptRequest {
        PromptRequest {
            capability: cap,
            prompt: String::new(),
            slots: [("key_component".to_string(), component.to_string())].into(),
            frames: vec![frame(scene)],
            attempt,
        }
    }

    fn provider(json: &str) -> MockProvider {
        let spec: MockSpec = serde_json::from_str(json).unwrap();
        MockProvider::from_spec("mock:test", Path::new("."), &spec).unwrap()
    }

    #[tokio::test]
    async fn scene_specific_key_wins_over_plain_key() {
        let p = provider(r#"{"bbox": {"s1/Start  Button": "A", "start button": "B"}}"#);
        assert_eq!(p.complete(&request(Capability::Bbox, "start button", "s1", 0)).await.unwrap(), "A");
        assert_eq!(p.complete(&request(Capability::Bbox, "Start Button", "s2", 0)).await.unwrap(), "B");
        assert!(p.complete(&request(Capability::Bbox, "lid", "s1", 0)).await.is_err());
    }

    #[tokio::test]
    async fn plan_replies_follow_attempts() {
        let p = provider(r#"{"plan": ["first", {"text": "second"}]}"#);
        for (attempt, want) in [(0, "first"), (1, "second"), (5, "second")] {
            assert_eq!(p.complete(&request(Capability::Plan, "", "s", attempt)).await.unwrap(), want);
        }
    }

    #[tokio::test]
    async fn default_and_empty_masks() {
        let p = provider(r#"{"segmentation": {"s1/0,0,1,1": "empty"}}"#);
        let tiny = BoundingBox2D::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let r = p.segment(&SegmentRequest { frame: frame("s1"), bbox: tiny }).await.unwrap();
        assert!(r.mask.is_empty());
        let r = p.segment(&SegmentRequest { frame: frame("s2"), bbox: tiny }).await.unwrap();
        assert_eq!(r.mask.count(), 1);
    }

    #[test]
    fn resize_keeps_structure() {
        let m = SegmentationMask::inscribed_ellipse(10, 10);
        let r = resize_mask(&m, 20, 20);
        assert_eq!((r.width, r.height), (20, 20));
        assert!(r.get(10, 10));
        assert!(!r.get(0, 0));
    }
}
