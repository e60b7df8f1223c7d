//! Turns one plan step and one scene snapshot into world-space guidance.
//!
//! Each visual type has its own generator. All of them ask the vision
//! gateway where the key component is, lift the relevant pixels into the
//! world through the snapshot's depth map and camera, and emit primitives
//! anchored to the snapshot's pose.

pub mod assets;
pub mod imaging;
mod primitives;

use std::future::Future;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::geometry::{
    any_perpendicular, bbox_to_world_corners, face_pose_orientation, surface_normal, AxisFrame, BoundingBox2D, BoxCorners,
    GeometryError, Mat3, Vec3, WorldPoint,
};
use crate::plan::{MovementKind, PlanStep, SchemaViolation, StepDocument, StepPayload, ToolMotion};
use crate::scene::{encode_png, SceneSnapshot};
use crate::vision::{CallTag, Frame, GatewayError, RotationDirection, SegmentationMask, VisionGateway};

use assets::{AssetError, AssetLibrary};
use imaging::{crop, enhance_blue, image_plane_scale, ImagingError};

pub use primitives::{
    secs, CompiledStep, EncodedImage, GuidancePrimitive, ImageRef, MotionPath, Payload, PrimitiveKind, SceneGraph, StepTiming,
    Transform,
};

/// Highlight boxes with any edge shorter than this (meters) become particles.
pub const PARTICLE_EDGE_THRESHOLD: f64 = 0.05;
/// Points on a rendered arc arrow.
pub const ARC_SEGMENTS: usize = 32;
pub const ARC_SWEEP_DEG: f64 = 180.0;

/// Whether a highlight with this shortest edge renders as particles.
pub fn uses_particles(min_edge: f64) -> bool {
    min_edge < PARTICLE_EDGE_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnimationTiming {
    pub duration: f64,
    pub pause: f64,
    pub looping: bool,
}

impl Default for AnimationTiming {
    fn default() -> Self {
        AnimationTiming { duration: 2.0, pause: 0.5, looping: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validation,
    Vision,
    Geometry,
    Imaging,
    Asset,
}

#[derive(Debug, Error)]
pub enum CompileErrorKind {
    #[error("step is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<SchemaViolation>),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Asset(#[from] AssetError),
}

#[derive(Debug, Error)]
#[error("step {step_index} failed at {stage:?}: {kind}")]
pub struct CompileError {
    pub step_index: usize,
    pub stage: Stage,
    pub kind: CompileErrorKind,
}

/// Accumulates stage durations for [`StepTiming`].
struct StageClock {
    started: Instant,
    vision_sum: Duration,
    vision_wall: Duration,
    geometry: Duration,
}

impl StageClock {
    fn start() -> Self {
        StageClock { started: Instant::now(), vision_sum: Duration::ZERO, vision_wall: Duration::ZERO, geometry: Duration::ZERO }
    }

    fn finish(self) -> StepTiming {
        StepTiming {
            vision: self.vision_sum,
            geometry: self.geometry,
            overlap: self.vision_sum.saturating_sub(self.vision_wall),
            total: self.started.elapsed(),
        }
    }
}

async fn timed<T>(fut: impl Future<Output = T>) -> (T, Duration) {
    let t = Instant::now();
    let out = fut.await;
    (out, t.elapsed())
}

/// Per-compile state: the step being built, its snapshot and the clock.
struct StepBuild<'a> {
    index: usize,
    step: &'a PlanStep,
    snap: &'a SceneSnapshot,
    frame: Frame,
    clock: StageClock,
    warnings: Vec<String>,
    images: std::collections::BTreeMap<String, EncodedImage>,
    primitives: Vec<GuidancePrimitive>,
}

impl<'a> StepBuild<'a> {
    fn fail(&self, stage: Stage, kind: impl Into<CompileErrorKind>) -> CompileError {
        CompileError { step_index: self.index, stage, kind: kind.into() }
    }

    fn tag(&self) -> CallTag {
        CallTag::step(self.index, self.step.visual_type)
    }

    async fn vision<T>(&mut self, fut: impl Future<Output = Result<T, GatewayError>>) -> Result<T, CompileError> {
        let (out, d) = timed(fut).await;
        self.clock.vision_sum += d;
        self.clock.vision_wall += d;
        out.map_err(|e| self.fail(Stage::Vision, e))
    }

    /// Two provider calls run concurrently.
    async fn vision_pair<A, B>(
        &mut self,
        a: impl Future<Output = Result<A, GatewayError>>,
        b: impl Future<Output = Result<B, GatewayError>>,
    ) -> Result<(A, B), CompileError> {
        let t = Instant::now();
        let ((ra, da), (rb, db)) = tokio::join!(timed(a), timed(b));
        self.clock.vision_wall += t.elapsed();
        self.clock.vision_sum += da + db;
        let a = ra.map_err(|e| self.fail(Stage::Vision, e))?;
        let b = rb.map_err(|e| self.fail(Stage::Vision, e))?;
        Ok((a, b))
    }

    fn geometry<T, E: Into<CompileErrorKind>>(&mut self, stage: Stage, f: impl FnOnce(&mut Self) -> Result<T, E>) -> Result<T, CompileError> {
        let t = Instant::now();
        let out = f(self);
        self.clock.geometry += t.elapsed();
        out.map_err(|e| CompileError { step_index: self.index, stage, kind: e.into() })
    }

    fn push(&mut self, transform: Transform, payload: Payload) {
        let p = GuidancePrimitive::new(transform, payload, &self.snap.pose, &self.snap.intrinsics);
        self.primitives.push(p);
    }

    fn corners(&self, bbox: &BoundingBox2D) -> Result<BoxCorners, GeometryError> {
        bbox_to_world_corners(bbox, &self.snap.depth, &self.snap.intrinsics, &self.snap.pose)
    }

    fn face(&self, anchor: &WorldPoint) -> Mat3 {
        face_pose_orientation(anchor, &self.snap.pose)
    }

    /// Blue-enhanced, masked crop of `bbox`, stored in the image table.
    fn highlight_crop(&mut self, bbox: &BoundingBox2D, mask: &SegmentationMask) -> Result<ImageRef, CompileErrorKind> {
        let rgba = self.snap.image.decode().map_err(|e| ImagingError::Decode(e.to_string()))?;
        let enhanced = enhance_blue(&crop(&rgba, bbox), mask)?;
        let encoded = EncodedImage { width: enhanced.width(), height: enhanced.height(), png: encode_png(&enhanced) };
        let r = ImageRef { id: encoded.id(), width: encoded.width, height: encoded.height };
        self.images.insert(r.id.clone(), encoded);
        Ok(r)
    }

    fn finish(self) -> CompiledStep {
        CompiledStep {
            scene: SceneGraph {
                step_index: self.index,
                visual_type: self.step.visual_type,
                instruction: self.step.instruction.clone(),
                snapshot_id: self.snap.id.clone(),
                primitives: self.primitives,
                warnings: self.warnings,
                images: self.images,
            },
            timing: self.clock.finish(),
        }
    }
}

/// Points of an arc of `sweep` about `axis` through `center`, ordered in
/// the direction of motion. The arc is centered on the camera side of the
/// axis; a clockwise arc is the counterclockwise one reversed.
pub fn arc_polyline(
    center: &WorldPoint,
    axis: &Vec3,
    direction: RotationDirection,
    radius: f64,
    sweep_deg: f64,
    toward: &Vec3,
) -> (Vec3, Vec<WorldPoint>) {
    let r0 = (toward - axis * axis.dot(toward)).try_normalize(1e-9).unwrap_or_else(|| any_perpendicular(axis));
    let r1 = axis.cross(&r0);
    let half = sweep_deg.to_radians() / 2.0;
    let mut points: Vec<WorldPoint> = (0..=ARC_SEGMENTS)
        .map(|i| {
            let theta = -half + sweep_deg.to_radians() * i as f64 / ARC_SEGMENTS as f64;
            center + (r0 * theta.cos() + r1 * theta.sin()) * radius
        })
        .collect();
    if direction == RotationDirection::Clockwise {
        points.reverse();
    }
    (r0, points)
}

/// Arc arrow primitive parts: transform (local z along the axis) and payload.
fn arc_arrow(center: WorldPoint, axis: Vec3, direction: RotationDirection, radius: f64, toward: &Vec3) -> (Transform, Payload) {
    let (r0, polyline) = arc_polyline(&center, &axis, direction, radius, ARC_SWEEP_DEG, toward);
    let orientation = Mat3::from_columns(&[r0, axis.cross(&r0), axis]);
    let transform = Transform::new(center, orientation).with_scale(Vec3::repeat(radius));
    let payload = Payload::ArcArrow { axis, direction, radius, sweep_deg: ARC_SWEEP_DEG, center, polyline };
    (transform, payload)
}

/// Rotation about the local x axis by `deg` degrees.
fn rot_x(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Tool frame: local +y along `normal`, local -z toward `forward_hint`
/// projected into the surface plane. Returns `None` for the forward axis
/// when the hint is parallel to the normal.
fn tool_frame(normal: &Vec3, forward_hint: &Vec3) -> Option<Mat3> {
    let f = (forward_hint - normal * normal.dot(forward_hint)).try_normalize(1e-6)?;
    let y = *normal;
    let z = -f;
    let x = y.cross(&z);
    Some(Mat3::from_columns(&[x, y, z]))
}

/// Compiles steps against one session's initial frame.
#[derive(Debug, Clone)]
pub struct Compiler {
    gateway: VisionGateway,
    assets: Arc<AssetLibrary>,
    animation: AnimationTiming,
}

impl Compiler {
    pub fn new(gateway: VisionGateway, assets: Arc<AssetLibrary>) -> Self {
        Compiler { gateway, assets, animation: AnimationTiming::default() }
    }

    pub fn with_animation(mut self, animation: AnimationTiming) -> Self {
        self.animation = animation;
        self
    }

    pub fn gateway(&self) -> &VisionGateway {
        &self.gateway
    }

    pub fn assets(&self) -> &AssetLibrary {
        &self.assets
    }

    /// Validates a raw step document before compiling it; an invalid step
    /// never reaches the gateway.
    pub async fn compile_document(
        &self,
        initial: &SceneSnapshot,
        index: usize,
        doc: &StepDocument,
        snap: &SceneSnapshot,
    ) -> Result<CompiledStep, CompileError> {
        let step = PlanStep::from_document(index, doc)
            .map_err(|v| CompileError { step_index: index, stage: Stage::Validation, kind: CompileErrorKind::Invalid(v) })?;
        self.compile_step(initial, index, &step, snap).await
    }

    /// Compiles step `index` against `snap`. `initial` is the session's
    /// first snapshot, which fixes the rotation axes.
    pub async fn compile_step(
        &self,
        initial: &SceneSnapshot,
        index: usize,
        step: &PlanStep,
        snap: &SceneSnapshot,
    ) -> Result<CompiledStep, CompileError> {
        let mut b = StepBuild {
            index,
            step,
            snap,
            frame: Frame::from(snap),
            clock: StageClock::start(),
            warnings: Vec::new(),
            images: Default::default(),
            primitives: Vec::new(),
        };
        match &step.payload {
            StepPayload::Highlight => self.highlight(&mut b).await?,
            StepPayload::Movement(MovementKind::Translation) => self.translation(&mut b).await?,
            StepPayload::Movement(MovementKind::Rotation) => self.rotation(&mut b, initial).await?,
            StepPayload::Gesture(g) => self.gesture(&mut b, g.name()).await?,
            StepPayload::Tool { motion, tool } => self.tool(&mut b, *motion, tool).await?,
            StepPayload::Widget { seconds } => self.widget(&mut b, *seconds).await?,
        }
        debug_assert!(b.primitives.iter().all(|p| PrimitiveKind::allowed_for(step.visual_type).contains(&p.kind())));
        Ok(b.finish())
    }

    async fn bbox(&self, b: &mut StepBuild<'_>) -> Result<BoundingBox2D, CompileError> {
        let tag = b.tag();
        let frame = b.frame.clone();
        let r = b.vision(self.gateway.request_bounding_box(&frame, b.step.target(), tag)).await?;
        Ok(r.bbox)
    }

    async fn highlight(&self, b: &mut StepBuild<'_>) -> Result<(), CompileError> {
        let bbox = self.bbox(b).await?;
        b.geometry(Stage::Geometry, |b| {
            let corners = b.corners(&bbox)?;
            let center = corners.center();
            let min_edge = corners.edges.min();
            if uses_particles(min_edge) {
                let scale = Vec3::repeat(corners.edges.max().max(1e-3));
                let t = Transform::new(center, b.face(&center)).with_scale(scale);
                b.push(t, Payload::ParticleEmitter { center, min_edge });
            } else {
                let t = Transform::new(center, Mat3::identity());
                b.push(t, Payload::Box3d { corners: corners.as_array(), edges: corners.edges });
            }
            Ok::<_, GeometryError>(())
        })
    }

    async fn translation(&self, b: &mut StepBuild<'_>) -> Result<(), CompileError> {
        let tag = b.tag();
        let frame = b.frame.clone();
        let moved = b
            .vision(self.gateway.request_translation_target(&frame, b.step.target(), &b.step.instruction, tag))
            .await?;
        if moved.target_clamped {
            b.warnings.push("translation target was outside the image and has been clamped".into());
        }
        let mask = b.vision(self.gateway.request_segmentation(&frame, &moved.bbox, tag)).await?;
        let crop = b.geometry(Stage::Imaging, |b| b.highlight_crop(&moved.bbox, &mask))?;
        let animation = self.animation;
        b.geometry(Stage::Geometry, |b| {
            let g = b.snap.geometry();
            let center = moved.bbox.center();
            let d0 = g.depth_at(center)?;
            let start = g.lift_at_depth(center, d0)?;
            let d1 = match g.depth_at(moved.target) {
                Ok(d) => d,
                Err(GeometryError::Hole { .. }) => {
                    b.warnings.push("no depth at the translation target; reusing the start depth".into());
                    d0
                }
                Err(e) => return Err(e),
            };
            let end = g.lift_at_depth(moved.target, d1)?;
            let (plane_width, plane_height) = image_plane_scale(&moved.bbox, d0, &b.snap.intrinsics)?;
            let motion = MotionPath {
                start,
                end,
                duration: animation.duration,
                pause: animation.pause,
                looping: animation.looping && start != end,
            };
            if motion.is_static() {
                b.warnings.push("translation target equals the start; plane is static".into());
            }
            let t = Transform::new(start, b.face(&start)).with_scale(Vec3::new(plane_width, plane_height, 1.0));
            b.push(t, Payload::ImagePlaneAnimation { crop, plane_width, plane_height, motion });
            Ok(())
        })
    }

    async fn rotation(&self, b: &mut StepBuild<'_>, initial: &SceneSnapshot) -> Result<(), CompileError> {
        let tag = b.tag();
        let frame = b.frame.clone();
        let first = Frame::from(initial);
        let target = b.step.target().to_string();
        let instruction = b.step.instruction.clone();
        let (found, rotation) = b
            .vision_pair(
                self.gateway.request_bounding_box(&frame, &target, tag),
                self.gateway.request_rotation_info(&first, &frame, &target, &instruction, tag),
            )
            .await?;
        let bbox = found.bbox;
        let mask = b.vision(self.gateway.request_segmentation(&frame, &bbox, tag)).await?;
        let crop = b.geometry(Stage::Imaging, |b| b.highlight_crop(&bbox, &mask))?;
        let axes = AxisFrame::from_initial_pose(&initial.pose);
        let animation = self.animation;
        b.geometry(Stage::Geometry, |b| {
            let corners = b.corners(&bbox)?;
            let center = corners.center();
            let axis = axes.axis(rotation.axis);
            let radius = corners.edges.max() / 2.0;
            let toward = b.snap.pose.origin() - center;
            let (t, p) = arc_arrow(center, axis, rotation.direction, radius, &toward);
            b.push(t, p);

            let g = b.snap.geometry();
            let d = g.depth_at(bbox.center())?;
            let anchor = g.lift_at_depth(bbox.center(), d)?;
            let (plane_width, plane_height) = image_plane_scale(&bbox, d, &b.snap.intrinsics)?;
            let motion = MotionPath { start: anchor, end: anchor, duration: animation.duration, pause: animation.pause, looping: false };
            let t = Transform::new(anchor, b.face(&anchor)).with_scale(Vec3::new(plane_width, plane_height, 1.0));
            b.push(t, Payload::ImagePlaneAnimation { crop, plane_width, plane_height, motion });
            Ok::<_, GeometryError>(())
        })
    }

    async fn gesture(&self, b: &mut StepBuild<'_>, name: &str) -> Result<(), CompileError> {
        let asset = self.assets.gesture(name).map_err(|e| b.fail(Stage::Asset, e))?;
        let bbox = self.bbox(b).await?;
        b.geometry(Stage::Geometry, |b| {
            let at = b.snap.geometry().lift(bbox.center())?;
            let t = Transform::new(at, b.face(&at));
            b.push(t, Payload::GesturePlacement { gesture: name.to_string(), asset });
            Ok::<_, GeometryError>(())
        })
    }

    async fn tool(&self, b: &mut StepBuild<'_>, motion: ToolMotion, tool: &str) -> Result<(), CompileError> {
        let asset = self.assets.tool(tool).map_err(|e| b.fail(Stage::Asset, e))?;
        let bbox = self.bbox(b).await?;
        let animation = self.animation;
        b.geometry(Stage::Geometry, |b| {
            let g = b.snap.geometry();
            let bl = g.lift(bbox.bottom_left())?;
            let br = g.lift(bbox.bottom_right())?;
            let center = g.lift(bbox.center())?;
            let camera = b.snap.pose.origin();
            let normal = surface_normal(&bl, &br, &center, &camera)?;
            let bottom = g.lift(bbox.bottom_center())?;
            let orientation = match tool_frame(&normal, &(bottom - center)) {
                Some(r) => r,
                None => {
                    b.warnings.push("tool heading is undefined at the bottom-center; facing the camera instead".into());
                    tool_frame(&normal, &(camera - center))
                        .or_else(|| tool_frame(&normal, &any_perpendicular(&normal)))
                        .expect("a perpendicular hint always yields a frame")
                }
            };
            let linear = |from, to| -> Result<MotionPath, GeometryError> {
                Ok(MotionPath {
                    start: g.lift(from)?,
                    end: g.lift(to)?,
                    duration: animation.duration,
                    pause: animation.pause,
                    looping: animation.looping,
                })
            };
            let path = match motion {
                ToolMotion::UpAndDown => Some(linear(bbox.top_center(), bbox.bottom_center())?),
                ToolMotion::LeftAndRight => Some(linear(bbox.mid_left(), bbox.mid_right())?),
                ToolMotion::Rotate | ToolMotion::Clockwise | ToolMotion::Counterclockwise => None,
            };
            let t = Transform::new(center, orientation);
            b.push(t, Payload::ToolPlacement { tool: tool.to_string(), asset, motion, surface_normal: normal, path });

            if path.is_none() {
                let turn = if motion == ToolMotion::Counterclockwise { -90.0 } else { 90.0 };
                let arc_frame = orientation * rot_x(turn);
                let axis = arc_frame.column(2).into_owned();
                let corners = b.corners(&bbox)?;
                let radius = corners.edges.max() / 2.0;
                let (t, p) = arc_arrow(center, axis, RotationDirection::Counterclockwise, radius, &(camera - center));
                b.push(t, p);
            }
            Ok::<_, GeometryError>(())
        })
    }

    async fn widget(&self, b: &mut StepBuild<'_>, seconds: u32) -> Result<(), CompileError> {
        let bbox = self.bbox(b).await?;
        b.geometry(Stage::Geometry, |b| {
            let at = b.snap.geometry().lift(bbox.top_center())?;
            let t = Transform::new(at, b.face(&at));
            b.push(t, Payload::TimerWidget { seconds, expired: seconds == 0 });
            Ok::<_, GeometryError>(())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn particle_threshold_is_strict() {
        assert!(uses_particles(0.049));
        assert!(!uses_particles(0.05));
        assert!(!uses_particles(0.051));
    }

    #[test]
    fn arc_parity_and_shape() {
        let c = WorldPoint::new(0.0, 0.0, -1.0);
        let axis = Vec3::x();
        let toward = Vec3::z();
        let (_, ccw) = arc_polyline(&c, &axis, RotationDirection::Counterclockwise, 0.15, 180.0, &toward);
        let (_, cw) = arc_polyline(&c, &axis, RotationDirection::Clockwise, 0.15, 180.0, &toward);
        assert_eq!(ccw.len(), ARC_SEGMENTS + 1);
        let mut rev = cw.clone();
        rev.reverse();
        assert_eq!(ccw, rev);
        for p in &ccw {
            assert_relative_eq!((p - c).norm(), 0.15, epsilon = 1e-12);
            assert_relative_eq!((p - c).dot(&axis), 0.0, epsilon = 1e-12);
        }
        // A positive turn about +x carries +z toward -y, so the
        // counterclockwise arc runs from +y through +z to -y.
        assert_relative_eq!(ccw[0].y, 0.15, epsilon = 1e-12);
        assert_relative_eq!(ccw[ARC_SEGMENTS / 2].z, -0.85, epsilon = 1e-12);
        assert_relative_eq!(ccw[ARC_SEGMENTS].y, -0.15, epsilon = 1e-12);
    }

    #[test]
    fn tool_frame_is_right_handed() {
        let r = tool_frame(&Vec3::z(), &Vec3::new(0.0, -1.0, 0.3)).unwrap();
        assert_relative_eq!(r.column(1).into_owned(), Vec3::z(), epsilon = 1e-12);
        assert_relative_eq!(r.column(2).into_owned(), Vec3::y(), epsilon = 1e-12);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        assert!(tool_frame(&Vec3::z(), &Vec3::z()).is_none());
    }

    #[test]
    fn quarter_turns_about_x() {
        let r = rot_x(90.0);
        assert_relative_eq!(r * Vec3::z(), -Vec3::y(), epsilon = 1e-12);
        assert_relative_eq!(rot_x(-90.0) * Vec3::z(), Vec3::y(), epsilon = 1e-12);
    }
}
