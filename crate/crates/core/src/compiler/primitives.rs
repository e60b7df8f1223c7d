//! World-space guidance primitives and the per-step scene graph.

use std::collections::BTreeMap;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::assets::AssetRef;
use crate::geometry::{mat3_row_major, project, CameraIntrinsics, CameraPose, EdgeLengths, Mat3, Point2, Vec3, WorldPoint};
use crate::plan::{ToolMotion, VisualType};
use crate::vision::RotationDirection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub position: WorldPoint,
    /// Columns are the local x, y and z axes in world coordinates.
    #[serde(with = "mat3_row_major")]
    pub orientation: Mat3,
    pub scale: Vec3,
}

impl Transform {
    pub fn new(position: WorldPoint, orientation: Mat3) -> Self {
        Transform { position, orientation, scale: Vec3::new(1.0, 1.0, 1.0) }
    }

    pub fn with_scale(mut self, scale: Vec3) -> Self {
        self.scale = scale;
        self
    }
}

/// Reference to an image stored in the scene graph's image table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub width: u32,
    pub height: u32,
}

/// Straight-line motion between two world points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPath {
    pub start: WorldPoint,
    pub end: WorldPoint,
    /// Seconds for one pass from start to end.
    pub duration: f64,
    /// Seconds held at the end before looping.
    pub pause: f64,
    #[serde(rename = "loop")]
    pub looping: bool,
}

impl MotionPath {
    pub fn is_static(&self) -> bool {
        self.start == self.end
    }

    /// Position at time `t` seconds into the animation.
    pub fn sample(&self, t: f64) -> WorldPoint {
        let period = self.duration + self.pause;
        let t = if self.looping && period > 0.0 { t.rem_euclid(period) } else { t };
        let s = (t / self.duration).clamp(0.0, 1.0);
        if s == 0.0 {
            self.start
        } else if s == 1.0 {
            self.end
        } else {
            self.start + (self.end - self.start) * s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Box3d {
        /// Bottom-left, bottom-right, top-left, top-right.
        corners: [WorldPoint; 4],
        edges: EdgeLengths,
    },
    ParticleEmitter {
        center: WorldPoint,
        min_edge: f64,
    },
    ImagePlaneAnimation {
        crop: ImageRef,
        plane_width: f64,
        plane_height: f64,
        motion: MotionPath,
    },
    ArcArrow {
        /// Unit rotation axis in world coordinates.
        axis: Vec3,
        /// Sense seen from the positive side of the axis.
        direction: RotationDirection,
        radius: f64,
        sweep_deg: f64,
        center: WorldPoint,
        /// Points along the arc in the direction of motion.
        polyline: Vec<WorldPoint>,
    },
    GesturePlacement {
        gesture: String,
        asset: AssetRef,
    },
    ToolPlacement {
        tool: String,
        asset: AssetRef,
        motion: ToolMotion,
        surface_normal: Vec3,
        /// Translation the tool animates along, for linear motions.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<MotionPath>,
    },
    TimerWidget {
        seconds: u32,
        expired: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Box3d,
    ParticleEmitter,
    ImagePlaneAnimation,
    ArcArrow,
    GesturePlacement,
    ToolPlacement,
    TimerWidget,
}

impl PrimitiveKind {
    /// Kinds a step of the given type may emit.
    pub fn allowed_for(t: VisualType) -> &'static [PrimitiveKind] {
        use PrimitiveKind::*;
        match t {
            VisualType::Highlight => &[Box3d, ParticleEmitter],
            VisualType::Movement => &[ImagePlaneAnimation, ArcArrow],
            VisualType::HandGesture => &[GesturePlacement],
            VisualType::Tool => &[ToolPlacement, ArcArrow],
            VisualType::Widget => &[TimerWidget],
        }
    }
}

impl Payload {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Payload::Box3d { .. } => PrimitiveKind::Box3d,
            Payload::ParticleEmitter { .. } => PrimitiveKind::ParticleEmitter,
            Payload::ImagePlaneAnimation { .. } => PrimitiveKind::ImagePlaneAnimation,
            Payload::ArcArrow { .. } => PrimitiveKind::ArcArrow,
            Payload::GesturePlacement { .. } => PrimitiveKind::GesturePlacement,
            Payload::ToolPlacement { .. } => PrimitiveKind::ToolPlacement,
            Payload::TimerWidget { .. } => PrimitiveKind::TimerWidget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidancePrimitive {
    pub transform: Transform,
    #[serde(flatten)]
    pub payload: Payload,
    /// Saved camera pose of the snapshot the primitive was built from.
    pub anchor_pose: CameraPose,
    /// Pixel where `transform.position` lands in the snapshot image, for
    /// clients checking their own projection. Absent if behind the camera.
    pub reference_projection: Option<Point2>,
}

impl GuidancePrimitive {
    pub fn new(transform: Transform, payload: Payload, pose: &CameraPose, k: &CameraIntrinsics) -> Self {
        let reference_projection = project(&transform.position, k, pose).ok();
        GuidancePrimitive { transform, payload, anchor_pose: *pose, reference_projection }
    }

    pub fn kind(&self) -> PrimitiveKind {
        self.payload.kind()
    }
}

/// PNG bytes, base64 in serialized form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub width: u32,
    pub height: u32,
    pub png: Vec<u8>,
}

impl EncodedImage {
    /// Content id: first 16 hex digits of the SHA-256 of the PNG.
    pub fn id(&self) -> String {
        hex::encode(&Sha256::digest(&self.png)[..8])
    }
}

#[derive(Serialize, Deserialize)]
struct EncodedImageWire {
    width: u32,
    height: u32,
    png_base64: String,
}

impl Serialize for EncodedImage {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        EncodedImageWire { width: self.width, height: self.height, png_base64: B64.encode(&self.png) }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for EncodedImage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = EncodedImageWire::deserialize(d)?;
        let png = B64.decode(w.png_base64.as_bytes()).map_err(serde::de::Error::custom)?;
        Ok(EncodedImage { width: w.width, height: w.height, png })
    }
}

/// Everything a client needs to render one step. Deterministic for a
/// given step, snapshot and set of provider replies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub step_index: usize,
    pub visual_type: VisualType,
    pub instruction: String,
    pub snapshot_id: String,
    pub primitives: Vec<GuidancePrimitive>,
    pub warnings: Vec<String>,
    pub images: BTreeMap<String, EncodedImage>,
}

impl SceneGraph {
    pub fn kinds(&self) -> Vec<PrimitiveKind> {
        self.primitives.iter().map(GuidancePrimitive::kind).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene graph serialization is infallible")
    }
}

/// Wall-clock breakdown of one compile.
///
/// `vision` sums the durations of every provider call; calls that ran
/// concurrently contribute their shared time to `overlap` as well, so
/// `total >= vision + geometry - overlap`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    #[serde(with = "secs")]
    pub vision: Duration,
    #[serde(with = "secs")]
    pub geometry: Duration,
    #[serde(with = "secs")]
    pub overlap: Duration,
    #[serde(with = "secs")]
    pub total: Duration,
}

/// Durations as fractional seconds.
pub mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledStep {
    pub scene: SceneGraph,
    pub timing: StepTiming,
}
