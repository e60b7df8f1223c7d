use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SegmentationMask;
use crate::geometry::BoundingBox2D;
use crate::scene::{ColorImage, SceneSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Plan,
    Bbox,
    Translation,
    Rotation,
    Segmentation,
}

impl Capability {
    pub const ALL: [Capability; 5] =
        [Capability::Plan, Capability::Bbox, Capability::Translation, Capability::Rotation, Capability::Segmentation];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities(u8);

impl Capabilities {
    pub fn all() -> Self {
        Capabilities::from_iter(Capability::ALL)
    }

    pub fn none() -> Self {
        Capabilities(0)
    }

    pub fn contains(self, c: Capability) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn with(self, c: Capability) -> Self {
        Capabilities(self.0 | c.bit())
    }

    pub fn without(self, c: Capability) -> Self {
        Capabilities(self.0 & !c.bit())
    }
}

impl FromIterator<Capability> for Capabilities {
    fn from_iter<I: IntoIterator<Item = Capability>>(iter: I) -> Self {
        iter.into_iter().fold(Capabilities::none(), Capabilities::with)
    }
}

/// An image sent along with a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub scene_id: Option<String>,
    pub image: ColorImage,
}

impl From<&SceneSnapshot> for Frame {
    fn from(s: &SceneSnapshot) -> Self {
        Frame { scene_id: s.scene_id.clone(), image: s.image.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct PromptRequest {
    pub capability: Capability,
    pub prompt: String,
    /// Slot values the prompt was rendered from. Fixture lookups use these.
    pub slots: BTreeMap<String, String>,
    pub frames: Vec<Frame>,
    /// 0 for the first try, incremented on every retry.
    pub attempt: u32,
}

#[derive(Debug, Clone)]
pub struct SegmentRequest {
    pub frame: Frame,
    pub bbox: BoundingBox2D,
}

#[derive(Debug, Clone)]
pub struct SegmentReply {
    pub mask: SegmentationMask,
    /// Processing time reported by a remote segmentation host.
    pub reported_latency: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider does not support {0}")]
    Unsupported(Capability),
    #[error("provider refused: {0}")]
    Refusal(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
}

/// A backend that can answer prompts with images and segment boxes.
///
/// Implementations must be cancel-safe: dropping a returned future must not
/// leave shared state inconsistent.
#[async_trait]
pub trait VisionProvider: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    async fn complete(&self, request: &PromptRequest) -> Result<String, ProviderError>;

    async fn segment(&self, request: &SegmentRequest) -> Result<SegmentReply, ProviderError>;
}
