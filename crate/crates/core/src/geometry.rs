//! Pinhole camera model, trajectory projection and PnP extrinsic recovery.
//!
//! All world-to-camera transforms follow `q = R·p + t` with the camera looking
//! down +z, x to the right and y down in the image.

use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix6, Rotation3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::path::{Path2D, PathPoint};

/// Camera-frame depth at or below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;
/// Relative singular-value tolerance for collinear/coplanar world points.
pub const DEGENERACY_TOLERANCE: f64 = 1e-8;
pub const PNP_MIN_POINTS: usize = 6;
pub const PNP_MAX_ITERATIONS: usize = 100;
pub const PNP_STEP_TOLERANCE: f64 = 1e-10;
/// Default minimum fraction of in-frame projected points.
pub const DEFAULT_MIN_VISIBILITY: f64 = 0.9;

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive camera depth {depth}")]
    BehindCamera { depth: f64 },
    #[error("no trajectory frame projects with positive depth")]
    AllBehindCamera,
    #[error("PnP needs at least {PNP_MIN_POINTS} correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("world points are {0} within tolerance")]
    DegenerateConfiguration(&'static str),
    #[error("Gauss-Newton refinement did not converge")]
    NoConvergence,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid extrinsics: {0}")]
    InvalidExtrinsics(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
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

    fn try_from(r: RawIntrinsics) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return bad("focal lengths must be positive");
        }
        if width == 0 || height == 0 {
            return bad("image size must be at least 1x1");
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return bad("principal point must lie inside the image");
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains_pixel(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x < self.width as f64 && px.y >= 0.0 && px.y < self.height as f64
    }
}

/// Rigid world-to-camera transform with an orthonormal, right-handed rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExtrinsics", into = "RawExtrinsics")]
pub struct CameraExtrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawExtrinsics {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<RawExtrinsics> for CameraExtrinsics {
    type Error = GeometryError;

    fn try_from(r: RawExtrinsics) -> Result<Self, Self::Error> {
        let rot = Matrix3::from_fn(|i, j| r.rotation[i][j]);
        CameraExtrinsics::new_orthonormalized(rot, Vector3::from(r.translation))
    }
}

impl From<CameraExtrinsics> for RawExtrinsics {
    fn from(e: CameraExtrinsics) -> Self {
        let r = e.rotation;
        RawExtrinsics {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [e.translation.x, e.translation.y, e.translation.z],
        }
    }
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

/// Closest rotation matrix in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidExtrinsics("non-finite translation".into()));
        }
        let err = orthonormality_error(&rotation);
        if !(err < ORTHONORMAL_TOLERANCE) || rotation.determinant() <= 0.0 {
            return Err(GeometryError::InvalidExtrinsics(format!(
                "rotation is not a proper rotation (orthonormality error {err:e})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    /// Accepts a rotation that is orthonormal up to `1e-3` (e.g. printed with
    /// limited precision) and snaps it to the nearest proper rotation.
    pub fn new_orthonormalized(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let err = orthonormality_error(&rotation);
        if !(err < 1e-3) || rotation.determinant() <= 0.0 {
            return Err(GeometryError::InvalidExtrinsics(format!(
                "rotation is not close to a proper rotation (orthonormality error {err:e})"
            )));
        }
        Self::new(nearest_rotation(&rotation), translation)
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera at `eye` looking at `target`; `up` is the world direction that
    /// should appear upward in the image.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self, GeometryError> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidArgument("eye and target coincide".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidArgument("up is parallel to the viewing direction".into()))?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::new(rotation, -(rotation * eye))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Geodesic angle (radians) between two rotations.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let d = a.transpose() * b;
    let sin_part = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm() / 2.0;
    let cos_part = (d.trace() - 1.0) / 2.0;
    sin_part.atan2(cos_part)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EEFrame {
    pub step: u64,
    pub position: [f64; 3],
    pub gripper_open: bool,
}

/// Time-ordered end-effector samples for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct Trajectory {
    frames: Vec<EEFrame>,
    pub instruction: String,
    pub camera_id: String,
}

#[derive(Deserialize)]
struct RawTrajectory {
    frames: Vec<EEFrame>,
    #[serde(default)]
    instruction: String,
    #[serde(default)]
    camera_id: String,
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = GeometryError;

    fn try_from(r: RawTrajectory) -> Result<Self, Self::Error> {
        Trajectory::new(r.frames, r.instruction, r.camera_id)
    }
}

impl Trajectory {
    pub fn new(frames: Vec<EEFrame>, instruction: impl Into<String>, camera_id: impl Into<String>) -> Result<Self, GeometryError> {
        if frames.is_empty() {
            return Err(GeometryError::InvalidTrajectory("no frames".into()));
        }
        if frames.windows(2).any(|w| w[1].step <= w[0].step) {
            return Err(GeometryError::InvalidTrajectory("steps must be strictly increasing".into()));
        }
        if frames.iter().any(|f| !f.position.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::InvalidTrajectory("non-finite position".into()));
        }
        Ok(Self { frames, instruction: instruction.into(), camera_id: camera_id.into() })
    }

    pub fn frames(&self) -> &[EEFrame] {
        &self.frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub world: [f64; 3],
    pub pixel: [f64; 2],
}

pub fn project_point(p: &Vector3<f64>, intr: &CameraIntrinsics, extr: &CameraExtrinsics) -> Result<Vector2<f64>, GeometryError> {
    let q = extr.to_camera(p);
    if q.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera { depth: q.z });
    }
    Ok(Vector2::new(intr.fx * q.x / q.z + intr.cx, intr.fy * q.y / q.z + intr.cy))
}

/// Projects every frame and normalizes by image size.
///
/// Points that land outside the image are kept in the path. Frames behind
/// the camera have no image position; they are left out of the path but
/// still count against visibility, which is `in-frame points / frames`.
pub fn project_trajectory(
    traj: &Trajectory,
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> Result<(Path2D, f64), GeometryError> {
    let (w, h) = (intr.width as f64, intr.height as f64);
    let mut points = Vec::with_capacity(traj.frames.len());
    let mut visible = 0usize;
    for f in &traj.frames {
        match project_point(&Vector3::from(f.position), intr, extr) {
            Ok(px) => {
                if intr.contains_pixel(&px) {
                    visible += 1;
                }
                points.push(PathPoint::new(px.x / w, px.y / h, f.gripper_open));
            }
            Err(GeometryError::BehindCamera { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let path = Path2D::new_unbounded(points).map_err(|_| GeometryError::AllBehindCamera)?;
    Ok((path, visible as f64 / traj.frames.len() as f64))
}

pub fn reprojection_rmse(
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> Result<f64, GeometryError> {
    if corrs.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let mut sum = 0.0;
    for c in corrs {
        let px = project_point(&Vector3::from(c.world), intr, extr)?;
        sum += (px - Vector2::from(c.pixel)).norm_squared();
    }
    Ok((sum / corrs.len() as f64).sqrt())
}

fn check_configuration(world: &[Vector3<f64>]) -> Result<(), GeometryError> {
    let n = world.len() as f64;
    let centroid = world.iter().sum::<Vector3<f64>>() / n;
    let scatter = world.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    // singular values of the centered point cloud
    let mut sv: Vec<f64> = scatter.symmetric_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] == 0.0 || sv[1] <= DEGENERACY_TOLERANCE * sv[0] {
        return Err(GeometryError::DegenerateConfiguration("collinear"));
    }
    if sv[2] <= DEGENERACY_TOLERANCE * sv[0] {
        return Err(GeometryError::DegenerateConfiguration("coplanar"));
    }
    Ok(())
}

/// Similarity transform moving the centroid to the origin with mean
/// distance `target` from it.
fn normalizing_scale<const D: usize>(pts: &[nalgebra::SVector<f64, D>], target: f64) -> (nalgebra::SVector<f64, D>, f64) {
    let n = pts.len() as f64;
    let centroid = pts.iter().sum::<nalgebra::SVector<f64, D>>() / n;
    let mean = pts.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let scale = if mean > 0.0 { target / mean } else { 1.0 };
    (centroid, scale)
}

/// Linear pose estimate from normalized image rays.
fn dlt_pose(world: &[Vector3<f64>], rays: &[Vector2<f64>]) -> Result<CameraExtrinsics, GeometryError> {
    let (cw, sw) = normalizing_scale(world, 3f64.sqrt());
    let (ci, si) = normalizing_scale(rays, 2f64.sqrt());

    let n = world.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (pw, pi)) in world.iter().zip(rays).enumerate() {
        let x = (pw - cw) * sw;
        let u = (pi - ci) * si;
        let xh = [x.x, x.y, x.z, 1.0];
        for k in 0..4 {
            a[(2 * i, k)] = xh[k];
            a[(2 * i, 8 + k)] = -u.x * xh[k];
            a[(2 * i + 1, 4 + k)] = xh[k];
            a[(2 * i + 1, 8 + k)] = -u.y * xh[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::NoConvergence)?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(GeometryError::NoConvergence)?;
    let h = v_t.row(min_idx);
    let p_norm = nalgebra::Matrix3x4::from_fn(|r, c| h[4 * r + c]);

    let t_img_inv = Matrix3::new(1.0 / si, 0.0, ci.x, 0.0, 1.0 / si, ci.y, 0.0, 0.0, 1.0);
    let t_world = Matrix4::new(
        sw, 0.0, 0.0, -sw * cw.x,
        0.0, sw, 0.0, -sw * cw.y,
        0.0, 0.0, sw, -sw * cw.z,
        0.0, 0.0, 0.0, 1.0,
    );
    let mut p = t_img_inv * p_norm * t_world;
    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let scale = m.singular_values().mean();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(GeometryError::DegenerateConfiguration("rank deficient"));
    }
    let rotation = nearest_rotation(&m);
    let translation = p.column(3).into_owned() / scale;
    CameraExtrinsics::new(rotation, translation)
}

fn residuals_and_cost(
    world: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
) -> Option<f64> {
    let mut cost = 0.0;
    for (pw, px) in world.iter().zip(pixels) {
        let q = extr.to_camera(pw);
        if q.z <= MIN_DEPTH {
            return None;
        }
        let r = Vector2::new(intr.fx * q.x / q.z + intr.cx, intr.fy * q.y / q.z + intr.cy) - px;
        cost += r.norm_squared();
    }
    Some(cost)
}

/// Recovers world-to-camera extrinsics from 3D–2D correspondences.
///
/// A normalized linear DLT gives the initial pose (its rotation block is
/// projected onto SO(3)), which Gauss–Newton then refines on pixel
/// reprojection residuals with a left-multiplied axis-angle update. A step
/// that would raise the cost is halved; when no halving helps, the current
/// pose is already at the minimum.
pub fn solve_pnp(corrs: &[Correspondence], intr: &CameraIntrinsics) -> Result<CameraExtrinsics, GeometryError> {
    if corrs.len() < PNP_MIN_POINTS {
        return Err(GeometryError::TooFewPoints(corrs.len()));
    }
    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| Vector3::from(c.world)).collect();
    let pixels: Vec<Vector2<f64>> = corrs.iter().map(|c| Vector2::from(c.pixel)).collect();
    if world.iter().any(|p| !p.iter().all(|v| v.is_finite()))
        || pixels.iter().any(|p| !p.iter().all(|v| v.is_finite()))
    {
        return Err(GeometryError::InvalidArgument("non-finite correspondence".into()));
    }
    check_configuration(&world)?;

    let rays: Vec<Vector2<f64>> = pixels
        .iter()
        .map(|p| Vector2::new((p.x - intr.cx) / intr.fx, (p.y - intr.cy) / intr.fy))
        .collect();
    let mut pose = dlt_pose(&world, &rays)?;
    let mut cost = residuals_and_cost(&world, &pixels, intr, &pose).ok_or(GeometryError::NoConvergence)?;

    for _ in 0..PNP_MAX_ITERATIONS {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (pw, px) in world.iter().zip(&pixels) {
            let rp = pose.rotation * pw;
            let q = rp + pose.translation;
            let iz = 1.0 / q.z;
            let r = Vector2::new(intr.fx * q.x * iz + intr.cx, intr.fy * q.y * iz + intr.cy) - px;
            let dq = nalgebra::Matrix2x3::new(
                intr.fx * iz, 0.0, -intr.fx * q.x * iz * iz,
                0.0, intr.fy * iz, -intr.fy * q.y * iz * iz,
            );
            // dq/dω = -[R p]×, dq/dt = I
            let j_rot = dq * -rp.cross_matrix();
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&j_rot);
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dq);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let delta = match jtj.cholesky() {
            Some(ch) => -ch.solve(&jtr),
            None => return Err(GeometryError::NoConvergence),
        };
        if !delta.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NoConvergence);
        }

        let mut step = delta;
        let mut accepted = None;
        for _ in 0..20 {
            let omega = Vector3::new(step[0], step[1], step[2]);
            let rot = Rotation3::new(omega).into_inner() * pose.rotation;
            let cand = CameraExtrinsics {
                rotation: rot,
                translation: pose.translation + Vector3::new(step[3], step[4], step[5]),
            };
            if let Some(c) = residuals_and_cost(&world, &pixels, intr, &cand) {
                if c <= cost {
                    accepted = Some((cand, c));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, c)) => {
                pose = cand;
                cost = c;
            }
            None => break,
        }
        if step.norm() < PNP_STEP_TOLERANCE {
            break;
        }
    }

    CameraExtrinsics::new(nearest_rotation(&pose.rotation), pose.translation)
        .map_err(|_| GeometryError::NoConvergence)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum AlignmentRejection {
    Rmse { rmse: f64 },
    Visibility { visibility: f64 },
    Error { message: String },
}

impl AlignmentRejection {
    pub fn code(&self) -> &'static str {
        match self {
            AlignmentRejection::Rmse { .. } => "rmse",
            AlignmentRejection::Visibility { .. } => "visibility",
            AlignmentRejection::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AlignmentPartition {
    /// Input indices of kept trajectories, in input order.
    pub kept: Vec<usize>,
    pub rejected: Vec<(usize, AlignmentRejection)>,
}

/// Splits trajectories into well- and poorly-calibrated sets.
///
/// A trajectory is kept iff the reprojection RMSE of its correspondences is
/// at most `threshold` pixels and its projected visibility reaches
/// `min_visibility`.
pub fn filter_by_alignment(
    items: &[(Trajectory, Vec<Correspondence>)],
    intr: &CameraIntrinsics,
    extrinsics: &[CameraExtrinsics],
    threshold: f64,
    min_visibility: f64,
) -> Result<AlignmentPartition, GeometryError> {
    if !(threshold > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("threshold must be positive, got {threshold}")));
    }
    if items.len() != extrinsics.len() {
        return Err(GeometryError::InvalidArgument(format!(
            "{} trajectories but {} extrinsics",
            items.len(),
            extrinsics.len()
        )));
    }
    let mut out = AlignmentPartition::default();
    for (i, ((traj, corrs), extr)) in items.iter().zip(extrinsics).enumerate() {
        match alignment_verdict(traj, corrs, intr, extr, threshold, min_visibility) {
            None => out.kept.push(i),
            Some(reason) => out.rejected.push((i, reason)),
        }
    }
    Ok(out)
}

/// `None` when the trajectory passes both checks.
pub fn alignment_verdict(
    traj: &Trajectory,
    corrs: &[Correspondence],
    intr: &CameraIntrinsics,
    extr: &CameraExtrinsics,
    threshold: f64,
    min_visibility: f64,
) -> Option<AlignmentRejection> {
    let rmse = match reprojection_rmse(corrs, intr, extr) {
        Ok(v) => v,
        Err(e) => return Some(AlignmentRejection::Error { message: e.to_string() }),
    };
    if !(rmse <= threshold) {
        return Some(AlignmentRejection::Rmse { rmse });
    }
    match project_trajectory(traj, intr, extr) {
        Ok((_, vis)) if vis >= min_visibility => None,
        Ok((_, visibility)) => Some(AlignmentRejection::Visibility { visibility }),
        Err(e) => Some(AlignmentRejection::Error { message: e.to_string() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn frame(step: u64, p: [f64; 3], open: bool) -> EEFrame {
        EEFrame { step, position: p, gripper_open: open }
    }

    fn cube_corners() -> Vec<Vector3<f64>> {
        let mut v = Vec::new();
        for x in [-0.5, 0.5] {
            for y in [-0.5, 0.5] {
                for z in [-0.5, 0.5] {
                    v.push(Vector3::new(x, y, z));
                }
            }
        }
        v
    }

    fn synth(world: &[Vector3<f64>], intr: &CameraIntrinsics, extr: &CameraExtrinsics) -> Vec<Correspondence> {
        world
            .iter()
            .map(|p| {
                // independent pinhole arithmetic, not project_point
                let q = extr.rotation() * p + extr.translation();
                Correspondence {
                    world: [p.x, p.y, p.z],
                    pixel: [intr.fx * q.x / q.z + intr.cx, intr.fy * q.y / q.z + intr.cy],
                }
            })
            .collect()
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 0.0, 10, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 9.5, 0.0, 10, 1).is_ok());
        let bad: Result<CameraIntrinsics, _> =
            serde_json::from_str(r#"{"fx":-1,"fy":1,"cx":0,"cy":0,"width":1,"height":1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn extrinsics_validation() {
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraExtrinsics::new(reflect, Vector3::zeros()).is_err());
        assert!(CameraExtrinsics::new(Matrix3::identity() * 1.001, Vector3::zeros()).is_err());
        let e = CameraExtrinsics::new_orthonormalized(Matrix3::identity() * 1.0001, Vector3::zeros()).unwrap();
        assert!(orthonormality_error(e.rotation()) < 1e-12);
    }

    #[test]
    fn extrinsics_json_roundtrip() {
        let e = CameraExtrinsics::look_at(Vector3::new(1.0, -2.0, 0.7), Vector3::new(0.1, 0.2, 0.0), Vector3::z())
            .unwrap();
        let s = serde_json::to_string(&e).unwrap();
        let back: CameraExtrinsics = serde_json::from_str(&s).unwrap();
        assert!((back.rotation() - e.rotation()).abs().max() < 1e-15);
        assert_eq!(back.translation(), e.translation());
    }

    #[test]
    fn project_point_examples() {
        let (k, id) = (cam100(), CameraExtrinsics::identity());
        assert_eq!(project_point(&Vector3::new(0.0, 0.0, 1.0), &k, &id).unwrap(), Vector2::new(50.0, 50.0));
        // u = 100 * 0.5 / 1 + 50
        assert_eq!(project_point(&Vector3::new(0.5, 0.0, 1.0), &k, &id).unwrap(), Vector2::new(100.0, 50.0));
        assert!(matches!(
            project_point(&Vector3::new(0.0, 0.0, -1.0), &k, &id),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn project_point_depth_scale_covariant() {
        let (k, id) = (cam100(), CameraExtrinsics::identity());
        let p = Vector3::new(0.1, -0.2, 1.5);
        let a = project_point(&p, &k, &id).unwrap();
        let b = project_point(&(p * 2.0), &k, &id).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn project_trajectory_single_frame() {
        let t = Trajectory::new(vec![frame(0, [0.0, 0.0, 1.0], true)], "x", "front").unwrap();
        let (path, vis) = project_trajectory(&t, &cam100(), &CameraExtrinsics::identity()).unwrap();
        assert_eq!(path.points(), &[PathPoint::new(0.5, 0.5, true)]);
        assert_eq!(vis, 1.0);
    }

    #[test]
    fn project_trajectory_half_visible() {
        let frames = vec![
            frame(0, [0.0, 0.0, 1.0], true),
            frame(1, [0.1, 0.0, 1.0], true),
            frame(2, [2.0, 0.0, 1.0], false),
            frame(3, [-2.0, 0.0, 1.0], false),
        ];
        let t = Trajectory::new(frames, "x", "front").unwrap();
        let (path, vis) = project_trajectory(&t, &cam100(), &CameraExtrinsics::identity()).unwrap();
        assert_eq!(vis, 0.5);
        assert_eq!(path.len(), 4);
        assert!(!path.is_in_frame());
    }

    #[test]
    fn project_trajectory_all_behind() {
        let t = Trajectory::new(vec![frame(0, [0.0, 0.0, -1.0], true), frame(1, [0.0, 0.0, 0.0], true)], "", "")
            .unwrap();
        assert_eq!(
            project_trajectory(&t, &cam100(), &CameraExtrinsics::identity()),
            Err(GeometryError::AllBehindCamera)
        );
    }

    #[test]
    fn project_trajectory_matches_per_point_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = CameraIntrinsics::new(320.0, 300.0, 160.0, 120.0, 320, 240).unwrap();
        let e = CameraExtrinsics::look_at(
            Vector3::new(rng.random_range(-1.0..1.0), -2.0, rng.random_range(0.5..1.5)),
            Vector3::zeros(),
            Vector3::z(),
        )
        .unwrap();
        let frames: Vec<EEFrame> = (0..50)
            .map(|i| {
                let a = i as f64 / 49.0 * std::f64::consts::PI;
                frame(i, [0.3 * a.cos(), 0.3 * a.sin(), 0.1 * a.sin()], i < 25)
            })
            .collect();
        let t = Trajectory::new(frames.clone(), "arc", "front").unwrap();
        let (path, vis) = project_trajectory(&t, &k, &e).unwrap();
        assert_eq!(path.len(), 50);
        let mut inside = 0;
        for (f, q) in frames.iter().zip(path.points()) {
            let px = project_point(&Vector3::from(f.position), &k, &e).unwrap();
            assert_eq!(q.x, px.x / 320.0);
            assert_eq!(q.y, px.y / 240.0);
            assert_eq!(q.gripper_open, f.gripper_open);
            if px.x >= 0.0 && px.x < 320.0 && px.y >= 0.0 && px.y < 240.0 {
                inside += 1;
            }
        }
        assert_eq!(vis, inside as f64 / 50.0);
    }

    #[test]
    fn trajectory_validation() {
        assert!(Trajectory::new(vec![], "", "").is_err());
        assert!(Trajectory::new(vec![frame(1, [0.0; 3], true), frame(1, [0.0; 3], true)], "", "").is_err());
        assert!(Trajectory::new(vec![frame(0, [f64::INFINITY, 0.0, 0.0], true)], "", "").is_err());
    }

    #[test]
    fn pnp_recovers_cube_pose() {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap();
        let truth = CameraExtrinsics::look_at(Vector3::new(2.0, -3.0, 1.5), Vector3::new(0.1, 0.0, 0.0), Vector3::z())
            .unwrap();
        let corrs = synth(&cube_corners(), &k, &truth);
        let est = solve_pnp(&corrs, &k).unwrap();
        assert!(rotation_angle_between(est.rotation(), truth.rotation()) < 1e-6);
        assert!((est.translation() - truth.translation()).norm() < 1e-6);
        assert!(orthonormality_error(est.rotation()) < 1e-9);
        assert!(reprojection_rmse(&corrs, &k, &est).unwrap() < 1e-6);
    }

    #[test]
    fn pnp_too_few_points() {
        let k = cam100();
        let corrs = synth(&cube_corners()[..5], &k, &CameraExtrinsics::look_at(
            Vector3::new(0.0, -3.0, 0.0), Vector3::zeros(), Vector3::z()).unwrap());
        assert_eq!(solve_pnp(&corrs, &k), Err(GeometryError::TooFewPoints(5)));
    }

    #[test]
    fn pnp_degenerate_configurations() {
        let k = cam100();
        let line: Vec<Correspondence> = (0..8)
            .map(|i| Correspondence { world: [i as f64 * 0.1, 0.0, 3.0], pixel: [50.0 + i as f64, 50.0] })
            .collect();
        assert_eq!(solve_pnp(&line, &k), Err(GeometryError::DegenerateConfiguration("collinear")));
        let plane: Vec<Correspondence> = (0..8)
            .map(|i| Correspondence {
                world: [(i % 3) as f64 * 0.1, (i / 3) as f64 * 0.1, 3.0],
                pixel: [50.0 + i as f64, 50.0 - i as f64],
            })
            .collect();
        assert_eq!(solve_pnp(&plane, &k), Err(GeometryError::DegenerateConfiguration("coplanar")));
    }

    #[test]
    fn rmse_examples() {
        let k = CameraIntrinsics::new(400.0, 400.0, 200.0, 150.0, 400, 300).unwrap();
        let e = CameraExtrinsics::look_at(Vector3::new(0.5, -2.5, 1.0), Vector3::zeros(), Vector3::z()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let world: Vec<Vector3<f64>> = (0..25)
            .map(|_| Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))
            .collect();
        let mut corrs = synth(&world, &k, &e);
        assert!(reprojection_rmse(&corrs, &k, &e).unwrap() < 1e-9);
        corrs[7].pixel[0] += 3.0;
        corrs[7].pixel[1] += 4.0;
        // sqrt((3^2 + 4^2) / 25) = 1
        assert!((reprojection_rmse(&corrs, &k, &e).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(reprojection_rmse(&[], &k, &e), Err(GeometryError::EmptyInput));
    }

    #[test]
    fn rmse_propagates_behind_camera() {
        let c = [Correspondence { world: [0.0, 0.0, -1.0], pixel: [50.0, 50.0] }];
        assert!(matches!(
            reprojection_rmse(&c, &cam100(), &CameraExtrinsics::identity()),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn filter_examples() {
        let k = cam100();
        let id = CameraExtrinsics::identity();
        let traj = Trajectory::new(vec![frame(0, [0.0, 0.0, 1.0], true), frame(1, [0.1, 0.1, 1.0], true)], "", "")
            .unwrap();
        let world: Vec<Vector3<f64>> = cube_corners().iter().map(|p| p + Vector3::new(0.0, 0.0, 3.0)).collect();
        let exact = synth(&world, &k, &id);
        let mut off = exact.clone();
        for c in &mut off {
            c.pixel[0] += 10.0;
        }
        let items = vec![(traj.clone(), exact), (traj, off)];
        let part = filter_by_alignment(&items, &k, &[id, id], 5.0, DEFAULT_MIN_VISIBILITY).unwrap();
        assert_eq!(part.kept, vec![0]);
        assert_eq!(part.rejected.len(), 1);
        assert_eq!(part.rejected[0].0, 1);
        assert_eq!(part.rejected[0].1.code(), "rmse");
        assert!(filter_by_alignment(&items, &k, &[id, id], 0.0, 0.9).is_err());
        assert!(filter_by_alignment(&items, &k, &[id], 5.0, 0.9).is_err());
    }

    #[test]
    fn filter_rejects_poor_visibility() {
        let k = cam100();
        let id = CameraExtrinsics::identity();
        let traj = Trajectory::new(vec![frame(0, [0.0, 0.0, 1.0], true), frame(1, [5.0, 0.0, 1.0], true)], "", "")
            .unwrap();
        let world: Vec<Vector3<f64>> = cube_corners().iter().map(|p| p + Vector3::new(0.0, 0.0, 3.0)).collect();
        let items = vec![(traj, synth(&world, &k, &id))];
        let part = filter_by_alignment(&items, &k, &[id], 5.0, 0.9).unwrap();
        assert_eq!(part.rejected[0].1, AlignmentRejection::Visibility { visibility: 0.5 });
    }

    #[test]
    fn rotation_angle_small() {
        let a = Rotation3::new(Vector3::new(0.1, 0.2, -0.3)).into_inner();
        let b = Rotation3::new(Vector3::new(0.0, 0.0, 1e-8)).into_inner() * a;
        assert!((rotation_angle_between(&a, &b) - 1e-8).abs() < 1e-14);
    }
}
