//! Camera model, depth sampling and the 2D/3D conversions used to anchor
//! guidance in the world.
//!
//! Conventions: world and camera frames are right-handed with x to the
//! right, y up and z toward the viewer, so the camera looks along -z.
//! Pixel `u` grows to the right and `v` grows downward.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type WorldPoint = Point3<f64>;

/// Largest radius, in depth-grid cells, searched when filling a depth hole.
pub const HOLE_FILL_RADIUS: usize = 7;
/// Points closer than this to the camera plane (or behind it) do not project.
pub const BEHIND_CAMERA_EPS: f64 = 1e-6;
const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid depth map: {0}")]
    InvalidDepth(String),
    #[error("pixel ({u:.1}, {v:.1}) is outside the {width}x{height} image")]
    OutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("no valid depth within {radius} cells of pixel ({u:.1}, {v:.1})")]
    Hole { u: f64, v: f64, radius: usize },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("bounding box has zero area")]
    ZeroAreaBox,
}

/// Serde helper: 3x3 matrices as a row-major list of 9 numbers.
pub mod mat3_row_major {
    use super::Mat3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat3, s: S) -> Result<S::Ok, S::Error> {
        let rows: [f64; 9] = std::array::from_fn(|i| m[(i / 3, i % 3)]);
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat3, D::Error> {
        let rows = <[f64; 9]>::deserialize(d)?;
        Ok(Mat3::from_row_slice(&rows))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics")]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct RawIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = GeometryError;

    fn try_from(r: RawIntrinsics) -> Result<Self, GeometryError> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy, width, height })
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose")]
pub struct CameraPose {
    #[serde(with = "mat3_row_major")]
    pub rotation: Mat3,
    pub translation: Vec3,
}

#[derive(Deserialize)]
struct RawPose {
    #[serde(with = "mat3_row_major")]
    rotation: Mat3,
    translation: Vec3,
}

impl TryFrom<RawPose> for CameraPose {
    type Error = GeometryError;

    fn try_from(r: RawPose) -> Result<Self, GeometryError> {
        CameraPose::new(r.rotation, r.translation)
    }
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        check_rotation(&rotation).map_err(GeometryError::InvalidPose)?;
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidPose("translation is not finite".into()));
        }
        Ok(CameraPose { rotation, translation })
    }

    pub fn identity() -> Self {
        CameraPose { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(t: Vec3) -> Self {
        CameraPose { rotation: Mat3::identity(), translation: t }
    }

    pub fn origin(&self) -> WorldPoint {
        Point3::from(self.translation)
    }

    pub fn right(&self) -> Vec3 {
        self.rotation.column(0).into()
    }

    pub fn up(&self) -> Vec3 {
        self.rotation.column(1).into()
    }

    /// Unit vector pointing from the scene toward the camera (camera +z).
    pub fn backward(&self) -> Vec3 {
        self.rotation.column(2).into()
    }

    pub fn to_camera(&self, q: &WorldPoint) -> Vec3 {
        self.rotation.transpose() * (q.coords - self.translation)
    }

    pub fn to_world(&self, p_cam: &Vec3) -> WorldPoint {
        Point3::from(self.rotation * p_cam + self.translation)
    }
}

/// Checks `RᵀR = I` and `det R = +1` within 1e-9.
pub fn check_rotation(r: &Mat3) -> Result<(), String> {
    if !r.iter().all(|x| x.is_finite()) {
        return Err("rotation has non-finite entries".into());
    }
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    if err > ORTHONORMAL_TOL {
        return Err(format!("rotation is not orthonormal (max |RᵀR - I| = {err:e})"));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(format!("rotation determinant is {det}, expected +1"));
    }
    Ok(())
}

/// Depth in meters, row-major. Zero or NaN cells are holes.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidDepth("empty grid".into()));
        }
        if values.len() != width as usize * height as usize {
            return Err(GeometryError::InvalidDepth(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_infinite() || *v < 0.0) {
            return Err(GeometryError::InvalidDepth("depth values must be finite and non-negative".into()));
        }
        Ok(DepthMap { width, height, values })
    }

    pub fn uniform(width: u32, height: u32, depth: f32) -> Self {
        DepthMap { width, height, values: vec![depth; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width as usize + x]
    }

    pub fn set(&mut self, x: usize, y: usize, depth: f32) {
        let w = self.width as usize;
        self.values[y * w + x] = depth;
    }

    pub fn from_le_bytes(width: u32, height: u32, bytes: &[u8]) -> Result<Self, GeometryError> {
        if !bytes.len().is_multiple_of(4) {
            return Err(GeometryError::InvalidDepth(format!("{} bytes is not a multiple of 4", bytes.len())));
        }
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        DepthMap::new(width, height, values)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

fn valid_depth(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

fn median(values: &mut [f32]) -> f64 {
    values.sort_by(f32::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    }
}

/// Pixel coordinates: `u` to the right, `v` downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub fn new(u: f64, v: f64) -> Self {
        Point2 { u, v }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Depth at pixel `p` of an `image_width`x`image_height` image.
///
/// The pixel is scaled to the depth grid and the nearest cell is read. A
/// hole is filled with the median of the valid cells in the smallest
/// square window (radius up to [`HOLE_FILL_RADIUS`]) that has any.
pub fn sample_depth(depth: &DepthMap, p: Point2, image_width: u32, image_height: u32) -> Result<f64, GeometryError> {
    let (iw, ih) = (image_width as f64, image_height as f64);
    if !(p.u.is_finite() && p.v.is_finite()) || p.u < 0.0 || p.v < 0.0 || p.u > iw || p.v > ih {
        return Err(GeometryError::OutOfBounds { u: p.u, v: p.v, width: image_width, height: image_height });
    }
    let (dw, dh) = (depth.width as usize, depth.height as usize);
    let x = ((p.u * dw as f64 / iw).floor() as usize).min(dw - 1);
    let y = ((p.v * dh as f64 / ih).floor() as usize).min(dh - 1);

    let d = depth.get(x, y);
    if valid_depth(d) {
        return Ok(d as f64);
    }
    let mut window = Vec::new();
    for r in 1..=HOLE_FILL_RADIUS {
        window.clear();
        for yy in y.saturating_sub(r)..=(y + r).min(dh - 1) {
            for xx in x.saturating_sub(r)..=(x + r).min(dw - 1) {
                let v = depth.get(xx, yy);
                if valid_depth(v) {
                    window.push(v);
                }
            }
        }
        if !window.is_empty() {
            return Ok(median(&mut window));
        }
    }
    Err(GeometryError::Hole { u: p.u, v: p.v, radius: HOLE_FILL_RADIUS })
}

/// Lifts pixel `p` at depth `d` (meters along the optical axis) into the world.
pub fn unproject(p: Point2, d: f64, k: &CameraIntrinsics, pose: &CameraPose) -> Result<WorldPoint, GeometryError> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(GeometryError::NonPositiveDepth(d));
    }
    let cam = Vec3::new((p.u - k.cx) * d / k.fx, -(p.v - k.cy) * d / k.fy, -d);
    Ok(pose.to_world(&cam))
}

pub fn project(q: &WorldPoint, k: &CameraIntrinsics, pose: &CameraPose) -> Result<Point2, GeometryError> {
    let c = pose.to_camera(q);
    if c.z >= -BEHIND_CAMERA_EPS {
        return Err(GeometryError::BehindCamera);
    }
    let depth = -c.z;
    Ok(Point2 { u: k.cx + k.fx * c.x / depth, v: k.cy - k.fy * c.y / depth })
}

/// Unit normal of the plane through `bl`, `br`, `c`, oriented toward the camera.
pub fn surface_normal(bl: &WorldPoint, br: &WorldPoint, c: &WorldPoint, camera_origin: &WorldPoint) -> Result<Vec3, GeometryError> {
    let cross = (br - bl).cross(&(c - bl));
    let norm = cross.norm();
    if !(norm >= 1e-9) {
        return Err(GeometryError::Degenerate("surface points are collinear".into()));
    }
    let n = cross / norm;
    Ok(if n.dot(&(camera_origin - c)) < 0.0 { -n } else { n })
}

/// Axis-aligned pixel box in `[y_min, x_min, y_max, x_max]` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox2D {
    pub y_min: f64,
    pub x_min: f64,
    pub y_max: f64,
    pub x_max: f64,
}

/// How a provider-supplied box was interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxUnits {
    Pixels,
    /// Coordinates in 0..=1000, rescaled to the image.
    Normalized1000,
}

impl BoundingBox2D {
    pub fn new(y_min: f64, x_min: f64, y_max: f64, x_max: f64) -> Result<Self, GeometryError> {
        let b = BoundingBox2D { y_min, x_min, y_max, x_max };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<(), GeometryError> {
        let all = [self.y_min, self.x_min, self.y_max, self.x_max];
        if !all.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite coordinate".into()));
        }
        if !(self.y_min < self.y_max && self.x_min < self.x_max) {
            return Err(GeometryError::InvalidBox(format!(
                "expected y_min < y_max and x_min < x_max, got {:?}",
                all
            )));
        }
        Ok(())
    }

    /// Interprets a `[y_min, x_min, y_max, x_max]` reply for a given image.
    ///
    /// Coordinates that all fit in 0..=1000 on an image wider or taller than
    /// 1000 px are taken as normalized and rescaled. The result is clamped
    /// to the image; boxes that are inverted or collapse to zero area after
    /// clamping are rejected.
    pub fn from_provider(raw: [f64; 4], image_width: u32, image_height: u32) -> Result<(Self, BoxUnits), GeometryError> {
        if !raw.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite coordinate".into()));
        }
        let [y_min, x_min, y_max, x_max] = raw;
        if y_min > y_max || x_min > x_max {
            return Err(GeometryError::InvalidBox(format!("expected y_min < y_max and x_min < x_max, got {raw:?}")));
        }
        let max_coord = raw.iter().cloned().fold(f64::MIN, f64::max);
        let (w, h) = (image_width as f64, image_height as f64);
        let units = if max_coord <= 1000.0 && image_width.max(image_height) > 1000 {
            BoxUnits::Normalized1000
        } else {
            BoxUnits::Pixels
        };
        let (sx, sy) = match units {
            BoxUnits::Pixels => (1.0, 1.0),
            BoxUnits::Normalized1000 => (w / 1000.0, h / 1000.0),
        };
        let b = BoundingBox2D {
            y_min: (y_min * sy).clamp(0.0, h - 1.0),
            x_min: (x_min * sx).clamp(0.0, w - 1.0),
            y_max: (y_max * sy).clamp(0.0, h - 1.0),
            x_max: (x_max * sx).clamp(0.0, w - 1.0),
        };
        if b.area() <= 0.0 {
            return Err(GeometryError::ZeroAreaBox);
        }
        Ok((b, units))
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> Point2 {
        Point2::new((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn top_center(&self) -> Point2 {
        Point2::new((self.x_min + self.x_max) / 2.0, self.y_min)
    }

    pub fn bottom_center(&self) -> Point2 {
        Point2::new((self.x_min + self.x_max) / 2.0, self.y_max)
    }

    pub fn mid_left(&self) -> Point2 {
        Point2::new(self.x_min, (self.y_min + self.y_max) / 2.0)
    }

    pub fn mid_right(&self) -> Point2 {
        Point2::new(self.x_max, (self.y_min + self.y_max) / 2.0)
    }

    pub fn bottom_left(&self) -> Point2 {
        Point2::new(self.x_min, self.y_max)
    }

    pub fn bottom_right(&self) -> Point2 {
        Point2::new(self.x_max, self.y_max)
    }

    pub fn top_left(&self) -> Point2 {
        Point2::new(self.x_min, self.y_min)
    }

    pub fn top_right(&self) -> Point2 {
        Point2::new(self.x_max, self.y_min)
    }

    /// Compact `y_min,x_min,y_max,x_max` form used as a lookup key.
    pub fn key(&self) -> String {
        format!("{},{},{},{}", self.y_min, self.x_min, self.y_max, self.x_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeLengths {
    pub bottom: f64,
    pub top: f64,
    pub left: f64,
    pub right: f64,
}

impl EdgeLengths {
    pub fn min(&self) -> f64 {
        self.bottom.min(self.top).min(self.left).min(self.right)
    }

    pub fn max(&self) -> f64 {
        self.bottom.max(self.top).max(self.left).max(self.right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCorners {
    pub bl: WorldPoint,
    pub br: WorldPoint,
    pub tl: WorldPoint,
    pub tr: WorldPoint,
    pub edges: EdgeLengths,
}

impl BoxCorners {
    pub fn center(&self) -> WorldPoint {
        Point3::from((self.bl.coords + self.br.coords + self.tl.coords + self.tr.coords) / 4.0)
    }

    pub fn as_array(&self) -> [WorldPoint; 4] {
        [self.bl, self.br, self.tl, self.tr]
    }
}

/// The frame a snapshot was captured in: everything needed to lift pixels.
#[derive(Debug, Clone, Copy)]
pub struct CaptureGeometry<'a> {
    pub depth: &'a DepthMap,
    pub intrinsics: &'a CameraIntrinsics,
    pub pose: &'a CameraPose,
}

impl CaptureGeometry<'_> {
    pub fn depth_at(&self, p: Point2) -> Result<f64, GeometryError> {
        sample_depth(self.depth, p, self.intrinsics.width, self.intrinsics.height)
    }

    pub fn lift(&self, p: Point2) -> Result<WorldPoint, GeometryError> {
        unproject(p, self.depth_at(p)?, self.intrinsics, self.pose)
    }

    pub fn lift_at_depth(&self, p: Point2, d: f64) -> Result<WorldPoint, GeometryError> {
        unproject(p, d, self.intrinsics, self.pose)
    }
}

/// Lifts each box corner with its own sampled depth.
pub fn bbox_to_world_corners(
    bbox: &BoundingBox2D,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<BoxCorners, GeometryError> {
    let g = CaptureGeometry { depth, intrinsics: k, pose };
    let bl = g.lift(bbox.bottom_left())?;
    let br = g.lift(bbox.bottom_right())?;
    let tl = g.lift(bbox.top_left())?;
    let tr = g.lift(bbox.top_right())?;
    let edges = EdgeLengths {
        bottom: (br - bl).norm(),
        top: (tr - tl).norm(),
        left: (tl - bl).norm(),
        right: (tr - br).norm(),
    };
    Ok(BoxCorners { bl, br, tl, tr, edges })
}

const WORLD_UP: Vec3 = Vec3::new(0.0, 1.0, 0.0);

/// Billboard frame at `anchor` facing the camera of `saved_pose`.
///
/// Columns are the frame axes: +z points at the camera origin, +x is
/// horizontal. When the view ray is within 1° of vertical the camera's up
/// vector replaces world up.
pub fn face_pose_orientation(anchor: &WorldPoint, saved_pose: &CameraPose) -> Mat3 {
    let to_camera = saved_pose.origin() - anchor;
    let z = to_camera.try_normalize(1e-12).unwrap_or_else(|| saved_pose.backward());
    let near_vertical = z.dot(&WORLD_UP).abs() >= 1f64.to_radians().cos();
    let up_candidates = if near_vertical {
        [saved_pose.up(), -saved_pose.backward(), saved_pose.right()]
    } else {
        [WORLD_UP, saved_pose.up(), saved_pose.right()]
    };
    let x = up_candidates
        .iter()
        .find_map(|up| up.cross(&z).try_normalize(1e-6))
        .unwrap_or_else(|| any_perpendicular(&z));
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}

/// A unit vector perpendicular to `v` (assumed unit length).
pub fn any_perpendicular(v: &Vec3) -> Vec3 {
    let helper = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    v.cross(&helper).normalize()
}

/// World axes named by the first frame of a session: x to the right in
/// that photo, y physically up, z toward the viewer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisFrame {
    pub x: Vec3,
    pub y: Vec3,
    pub z: Vec3,
}

impl AxisFrame {
    pub fn from_initial_pose(pose: &CameraPose) -> Self {
        let horizontal = |v: Vec3| Vec3::new(v.x, 0.0, v.z).try_normalize(1e-6);
        let x = horizontal(pose.right())
            .or_else(|| horizontal(-pose.up()).map(|f| f.cross(&WORLD_UP)))
            .unwrap_or_else(Vec3::x);
        let y = WORLD_UP;
        let z = x.cross(&y);
        AxisFrame { x, y, z }
    }

    pub fn axis(&self, name: crate::vision::RotationAxis) -> Vec3 {
        use crate::vision::RotationAxis;
        match name {
            RotationAxis::X => self.x,
            RotationAxis::Y => self.y,
            RotationAxis::Z => self.z,
        }
    }
}
