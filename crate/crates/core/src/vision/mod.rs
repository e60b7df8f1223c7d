//! Access to the external language and vision models.
//!
//! [`VisionProvider`] is the transport-level abstraction (send a prompt
//! with images, get text back; segment a box). [`VisionGateway`] sits on
//! top of a provider and owns prompts, reply parsing, retries, timeouts,
//! concurrency limits and latency accounting.

mod gateway;
mod http;
mod latency;
mod mock;
mod prompts;
mod provider;
pub mod reply;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{BoundingBox2D, BoxUnits, Point2};

pub use gateway::{plan_prompt, GatewayConfig, GatewayError, PlanResponse, RetryPolicy, VisionGateway, BRAND_HINT};
pub use http::{ConfigError, EndpointConfig, HttpProvider, Limits, ProviderConfig, SegmentationEndpoint};
pub use latency::{CallKind, CallOutcome, CallTag, LatencyLog, LatencySample};
pub use mock::{mask_key, normalize_component, MockProvider, MockSpec, ReplySource, FIXTURE_PROVIDER_FILE};
pub use prompts::{render_prompt, slot_map, PromptError, TemplateId};
pub use provider::{Capabilities, Capability, Frame, PromptRequest, ProviderError, SegmentReply, SegmentRequest, VisionProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBoxResult {
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox2D,
    pub units: BoxUnits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox2D,
    pub units: BoxUnits,
    pub target: Point2,
    /// Set when the reported target fell outside the image and was clamped.
    pub target_clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationAxis {
    X,
    Y,
    Z,
}

impl FromStr for RotationAxis {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let s = s.trim().to_lowercase();
        let s = s.trim_end_matches("-axis").trim_end_matches(" axis").trim_end_matches("axis").trim();
        match s {
            "x" => Ok(RotationAxis::X),
            "y" => Ok(RotationAxis::Y),
            "z" => Ok(RotationAxis::Z),
            _ => Err(()),
        }
    }
}

/// Rotation sense as seen looking from the positive side of the axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RotationDirection {
    #[serde(rename = "CW")]
    Clockwise,
    #[serde(rename = "CCW")]
    Counterclockwise,
}

impl RotationDirection {
    pub fn reversed(self) -> Self {
        match self {
            RotationDirection::Clockwise => RotationDirection::Counterclockwise,
            RotationDirection::Counterclockwise => RotationDirection::Clockwise,
        }
    }

    /// +1 for counterclockwise (right-hand rule about the axis), -1 otherwise.
    pub fn sign(self) -> f64 {
        match self {
            RotationDirection::Clockwise => -1.0,
            RotationDirection::Counterclockwise => 1.0,
        }
    }
}

impl FromStr for RotationDirection {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let folded: String = s.trim().to_lowercase().chars().filter(|c| c.is_ascii_alphabetic()).collect();
        match folded.as_str() {
            "cw" | "clockwise" => Ok(RotationDirection::Clockwise),
            "ccw" | "counterclockwise" | "anticlockwise" => Ok(RotationDirection::Counterclockwise),
            _ => Err(()),
        }
    }
}

impl fmt::Display for RotationDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RotationDirection::Clockwise => "CW",
            RotationDirection::Counterclockwise => "CCW",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationResult {
    pub axis: RotationAxis,
    pub direction: RotationDirection,
}

/// Pixel rectangle `(x, y, width, height)` covering a box, at least 1x1.
pub fn crop_rect(bbox: &BoundingBox2D) -> (u32, u32, u32, u32) {
    let x0 = bbox.x_min.floor().max(0.0) as u32;
    let y0 = bbox.y_min.floor().max(0.0) as u32;
    let x1 = (bbox.x_max.ceil() as u32).max(x0 + 1);
    let y1 = (bbox.y_max.ceil() as u32).max(y0 + 1);
    (x0, y0, x1 - x0, y1 - y0)
}

/// Binary mask over a box crop, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl SegmentationMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width as usize * height as usize).then_some(SegmentationMask { width, height, bits })
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.bits.len().max(1) as f64
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Ellipse inscribed in a `width`x`height` crop, sampled at pixel centers.
    pub fn inscribed_ellipse(width: u32, height: u32) -> Self {
        let (a, b) = (width as f64 / 2.0, height as f64 / 2.0);
        let bits = (0..height)
            .flat_map(|y| {
                (0..width).map(move |x| {
                    let dx = (x as f64 + 0.5 - a) / a;
                    let dy = (y as f64 + 0.5 - b) / b;
                    dx * dx + dy * dy <= 1.0
                })
            })
            .collect();
        SegmentationMask { width, height, bits }
    }

    /// Grayscale or RGBA PNG; luminance above 127 is "inside".
    pub fn from_png(bytes: &[u8]) -> Result<Self, String> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| e.to_string())?
            .to_luma8();
        let bits = img.pixels().map(|p| p.0[0] > 127).collect();
        Ok(SegmentationMask { width: img.width(), height: img.height(), bits })
    }

    pub fn to_png(&self) -> Vec<u8> {
        let img = image::GrayImage::from_fn(self.width, self.height, |x, y| image::Luma([if self.get(x, y) { 255 } else { 0 }]));
        let mut out = Vec::new();
        img.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png).expect("in-memory PNG");
        out
    }
}
