//! Normalized 2D image-plane paths with per-point gripper state.
//!
//! A [`Path2D`] is the ordered list `[(x, y, gripper_open)]` where `x` and
//! `y` are pixel coordinates divided by image width and height. Gripper
//! transitions are never stored; [`events`] derives them from consecutive
//! states.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default RDP tolerance in normalized units.
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Default sample count for the fixed-count representation.
pub const DEFAULT_RESAMPLE_COUNT: usize = 20;
/// Default standard deviation of training-time path noise.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("path must contain at least one point")]
    Empty,
    #[error("point {index} has coordinate ({x}, {y}) outside [0, 1]")]
    OutOfRange { index: usize, x: f64, y: f64 },
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("resample count must be at least 2, got {0}")]
    InvalidCount(usize),
    #[error("sigma must be non-negative, got {0}")]
    InvalidSigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub gripper_open: bool,
}

impl PathPoint {
    pub const fn new(x: f64, y: f64, gripper_open: bool) -> Self {
        Self { x, y, gripper_open }
    }

    pub fn in_frame(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    fn distance(&self, other: &PathPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Ordered, non-empty list of path points.
///
/// [`Path2D::new`] enforces the unit square. Projection output may leave the
/// frame, so [`Path2D::new_unbounded`] only requires finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PathPoint>", into = "Vec<PathPoint>")]
pub struct Path2D {
    points: Vec<PathPoint>,
}

impl Path2D {
    pub fn new(points: Vec<PathPoint>) -> Result<Self, PathError> {
        let path = Self::new_unbounded(points)?;
        if let Some((index, p)) = path.points.iter().enumerate().find(|(_, p)| !p.in_frame()) {
            return Err(PathError::OutOfRange { index, x: p.x, y: p.y });
        }
        Ok(path)
    }

    pub fn new_unbounded(points: Vec<PathPoint>) -> Result<Self, PathError> {
        if points.is_empty() {
            return Err(PathError::Empty);
        }
        if let Some(index) = points.iter().position(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(PathError::NonFinite { index });
        }
        Ok(Self { points })
    }

    /// Builds an in-frame path from `(x, y, gripper_open)` triples.
    pub fn from_triples(triples: &[(f64, f64, bool)]) -> Result<Self, PathError> {
        Self::new(triples.iter().map(|&(x, y, g)| PathPoint::new(x, y, g)).collect())
    }

    pub fn points(&self) -> &[PathPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> &PathPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &PathPoint {
        &self.points[self.points.len() - 1]
    }

    pub fn is_in_frame(&self) -> bool {
        self.points.iter().all(PathPoint::in_frame)
    }

    /// Copy of this path with every coordinate clamped into `[0, 1]`.
    pub fn clamped(&self) -> Path2D {
        Path2D {
            points: self
                .points
                .iter()
                .map(|p| PathPoint::new(p.x.clamp(0.0, 1.0), p.y.clamp(0.0, 1.0), p.gripper_open))
                .collect(),
        }
    }

    pub fn into_points(self) -> Vec<PathPoint> {
        self.points
    }
}

impl TryFrom<Vec<PathPoint>> for Path2D {
    type Error = PathError;

    fn try_from(points: Vec<PathPoint>) -> Result<Self, Self::Error> {
        Path2D::new_unbounded(points)
    }
}

impl From<Path2D> for Vec<PathPoint> {
    fn from(path: Path2D) -> Self {
        path.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperEventKind {
    Close,
    Open,
}

/// A gripper state change taking effect at `points[index]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GripperEvent {
    pub index: usize,
    pub kind: GripperEventKind,
}

pub fn events(path: &Path2D) -> Vec<GripperEvent> {
    path.points
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].gripper_open != w[1].gripper_open)
        .map(|(i, w)| GripperEvent {
            index: i + 1,
            kind: if w[1].gripper_open { GripperEventKind::Open } else { GripperEventKind::Close },
        })
        .collect()
}

pub fn path_length(path: &Path2D) -> f64 {
    path.points.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// Distance from `p` to the closed segment `a`–`b` in the (x, y) plane.
pub fn point_segment_distance(p: &PathPoint, a: &PathPoint, b: &PathPoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    (p.x - (a.x + t * dx)).hypot(p.y - (a.y + t * dy))
}

/// Indices that can never be removed by simplification: both endpoints and
/// the two points on either side of every gripper transition.
pub fn protected_indices(path: &Path2D) -> Vec<usize> {
    let mut idx = vec![0, path.len() - 1];
    for ev in events(path) {
        idx.push(ev.index - 1);
        idx.push(ev.index);
    }
    idx.sort_unstable();
    idx.dedup();
    idx
}

/// Ramer–Douglas–Peucker simplification with gripper-event protection.
///
/// The path is split at protected points and each piece is simplified on its
/// own, so every protected point survives. Within a piece, the interior
/// point farthest from the chord (first one on ties) is kept when its
/// distance is strictly greater than `epsilon`.
pub fn rdp_simplify(path: &Path2D, epsilon: f64) -> Result<Path2D, PathError> {
    if !(epsilon > 0.0) {
        return Err(PathError::InvalidEpsilon(epsilon));
    }
    let pts = &path.points;
    let mut keep = vec![false; pts.len()];
    let protected = protected_indices(path);
    for &i in &protected {
        keep[i] = true;
    }
    let mut stack: Vec<(usize, usize)> = protected.windows(2).map(|w| (w[0], w[1])).collect();
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let mut best = (lo, f64::NEG_INFINITY);
        for i in lo + 1..hi {
            let d = point_segment_distance(&pts[i], &pts[lo], &pts[hi]);
            if d > best.1 {
                best = (i, d);
            }
        }
        if best.1 > epsilon {
            keep[best.0] = true;
            stack.push((best.0, hi));
            stack.push((lo, best.0));
        }
    }
    Ok(Path2D {
        points: pts.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect(),
    })
}

/// Arc-length positions of the `n` evenly spaced samples.
fn sample_positions(total: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| if k + 1 == n { total } else { total * k as f64 / (n - 1) as f64 })
        .collect()
}

/// Resamples to `n` points at equal arc-length spacing.
///
/// Each sample takes the gripper state of the segment it lies on (the state
/// of the segment's start point; a sample on a vertex belongs to the segment
/// that starts there). The point at every gripper event is then inserted at
/// its original coordinates unless a sample already coincides with it, so
/// the output holds between `n` and `n + events` points.
///
/// A zero-length path yields its first point repeated `n` times followed by
/// the event points.
pub fn resample_fixed(path: &Path2D, n: usize) -> Result<Path2D, PathError> {
    if n < 2 {
        return Err(PathError::InvalidCount(n));
    }
    let pts = &path.points;
    let evs = events(path);
    let mut cum = Vec::with_capacity(pts.len());
    cum.push(0.0);
    for w in pts.windows(2) {
        cum.push(cum[cum.len() - 1] + w[0].distance(&w[1]));
    }
    let total = cum[cum.len() - 1];

    if total == 0.0 {
        let mut out = vec![pts[0]; n];
        out.extend(evs.iter().map(|e| pts[e.index]));
        return Ok(Path2D { points: out });
    }

    let last_seg = pts.len() - 2;
    let mut samples: Vec<(f64, PathPoint)> = sample_positions(total, n)
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            if k + 1 == n {
                return (s, pts[pts.len() - 1]);
            }
            // last segment whose start lies at or before s
            let seg = cum[..=last_seg].partition_point(|&c| c <= s).saturating_sub(1);
            let len = cum[seg + 1] - cum[seg];
            let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
            let (a, b) = (&pts[seg], &pts[seg + 1]);
            (s, PathPoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.gripper_open))
        })
        .collect();

    for ev in &evs {
        let p = pts[ev.index];
        let s = cum[ev.index];
        if samples.iter().any(|(sp, q)| *sp == s && *q == p) {
            continue;
        }
        // after every sample at or before s whose state is the pre-event state
        let at = samples.partition_point(|(sp, q)| *sp < s || (*sp == s && q.gripper_open != p.gripper_open));
        samples.insert(at, (s, p));
    }
    Ok(Path2D { points: samples.into_iter().map(|(_, p)| p).collect() })
}

/// Adds independent `N(0, sigma)` noise to every `x` and `y`, then clamps to
/// `[0, 1]`. Gripper states are untouched. Deterministic for a given seed.
pub fn add_noise(path: &Path2D, sigma: f64, seed: u64) -> Result<Path2D, PathError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(PathError::InvalidSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(path.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated above");
    let points = path
        .points
        .iter()
        .map(|p| {
            let x = (p.x + normal.sample(&mut rng)).clamp(0.0, 1.0);
            let y = (p.y + normal.sample(&mut rng)).clamp(0.0, 1.0);
            PathPoint::new(x, y, p.gripper_open)
        })
        .collect();
    Ok(Path2D { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn open(xy: &[(f64, f64)]) -> Path2D {
        Path2D::new(xy.iter().map(|&(x, y)| PathPoint::new(x, y, true)).collect()).unwrap()
    }

    fn xy(path: &Path2D) -> Vec<(f64, f64)> {
        path.points().iter().map(|p| (p.x, p.y)).collect()
    }

    #[test]
    fn constructor_rejects_empty_and_out_of_range() {
        assert_eq!(Path2D::new(vec![]), Err(PathError::Empty));
        assert!(matches!(
            Path2D::from_triples(&[(0.5, 1.2, true)]),
            Err(PathError::OutOfRange { index: 0, .. })
        ));
        assert!(Path2D::new_unbounded(vec![PathPoint::new(1.2, -0.1, true)]).is_ok());
        assert!(matches!(
            Path2D::new_unbounded(vec![PathPoint::new(f64::NAN, 0.0, true)]),
            Err(PathError::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn events_examples() {
        assert!(events(&open(&[(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)])).is_empty());

        let p = Path2D::from_triples(&[
            (0.1, 0.1, true),
            (0.2, 0.2, false),
            (0.3, 0.3, false),
            (0.4, 0.4, true),
        ])
        .unwrap();
        assert_eq!(
            events(&p),
            vec![
                GripperEvent { index: 1, kind: GripperEventKind::Close },
                GripperEvent { index: 3, kind: GripperEventKind::Open },
            ]
        );

        let alt: Vec<_> = (0..5).map(|i| (0.1 * i as f64, 0.0, i % 2 == 0)).collect();
        let alt = Path2D::from_triples(&alt).unwrap();
        // enumerate transitions by hand: 0->1, 1->2, 2->3, 3->4
        let expected = (1..5).filter(|&i| (i % 2 == 0) != ((i - 1) % 2 == 0)).count();
        assert_eq!(expected, 4);
        assert_eq!(events(&alt).len(), expected);
    }

    #[test]
    fn path_length_examples() {
        assert_eq!(path_length(&open(&[(0.3, 0.3)])), 0.0);
        assert_eq!(path_length(&open(&[(0.0, 0.0), (1.0, 0.0)])), 1.0);
        let tri = open(&[(0.0, 0.0), (0.3, 0.0), (0.3, 0.4)]);
        assert!((path_length(&tri) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn rdp_removes_collinear_interior() {
        let p = open(&[(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)]);
        for eps in [1e-9, 0.05, 1.0] {
            assert_eq!(xy(&rdp_simplify(&p, eps).unwrap()), vec![(0.0, 0.0), (1.0, 0.0)]);
        }
    }

    #[test]
    fn rdp_threshold_on_exact_distance() {
        let p = open(&[(0.0, 0.0), (0.5, 0.1), (1.0, 0.0)]);
        assert_eq!(rdp_simplify(&p, 0.05).unwrap().len(), 3);
        assert_eq!(xy(&rdp_simplify(&p, 0.15).unwrap()), vec![(0.0, 0.0), (1.0, 0.0)]);
    }

    #[test]
    fn rdp_keeps_event_points() {
        let p = Path2D::from_triples(&[
            (0.0, 0.0, true),
            (0.5, 0.0, true),
            (0.5, 0.0, false),
            (1.0, 0.0, false),
        ])
        .unwrap();
        assert_eq!(rdp_simplify(&p, 1.0).unwrap(), p);
    }

    #[test]
    fn rdp_rejects_nonpositive_epsilon() {
        let p = open(&[(0.0, 0.0)]);
        assert_eq!(rdp_simplify(&p, 0.0), Err(PathError::InvalidEpsilon(0.0)));
        assert!(rdp_simplify(&p, f64::NAN).is_err());
    }

    #[test]
    fn rdp_single_point() {
        let p = open(&[(0.2, 0.3)]);
        assert_eq!(rdp_simplify(&p, 0.05).unwrap(), p);
    }

    #[test]
    fn resample_straight_segment() {
        let p = open(&[(0.0, 0.0), (1.0, 0.0)]);
        let r = resample_fixed(&p, 5).unwrap();
        assert_eq!(xy(&r), vec![(0.0, 0.0), (0.25, 0.0), (0.5, 0.0), (0.75, 0.0), (1.0, 0.0)]);
    }

    #[test]
    fn resample_degenerate_repeats_point() {
        let p = open(&[(0.4, 0.6), (0.4, 0.6)]);
        let r = resample_fixed(&p, 3).unwrap();
        assert_eq!(xy(&r), vec![(0.4, 0.6); 3]);
    }

    #[test]
    fn resample_l_shape_corner_at_sample_six() {
        let p = open(&[(0.0, 0.0), (0.6, 0.0), (0.6, 0.4)]);
        let r = resample_fixed(&p, 11).unwrap();
        assert_eq!(r.len(), 11);
        // arc-length table: s_k = 0.1 k; the corner sits at s = 0.6
        for (k, q) in r.points().iter().enumerate() {
            let s = 0.1 * k as f64;
            let (ex, ey) = if s <= 0.6 { (s, 0.0) } else { (0.6, s - 0.6) };
            assert!((q.x - ex).abs() < 1e-12 && (q.y - ey).abs() < 1e-12, "k={k} {q:?}");
        }
        assert!((r.points()[6].x - 0.6).abs() < 1e-12 && r.points()[6].y.abs() < 1e-12);
    }

    #[test]
    fn resample_inserts_event_points() {
        let p = Path2D::from_triples(&[(0.0, 0.0, true), (0.33, 0.0, false), (1.0, 0.0, false)])
            .unwrap();
        let r = resample_fixed(&p, 5).unwrap();
        assert_eq!(r.len(), 6);
        assert!(r.points().contains(&PathPoint::new(0.33, 0.0, false)));
        assert_eq!(events(&r).len(), 1);
        let states: Vec<bool> = r.points().iter().map(|q| q.gripper_open).collect();
        assert_eq!(states, vec![true, true, false, false, false, false]);
    }

    #[test]
    fn resample_does_not_duplicate_coinciding_event() {
        // event point sits exactly on sample s = 0.5
        let p = Path2D::from_triples(&[(0.0, 0.0, true), (0.5, 0.0, false), (1.0, 0.0, false)])
            .unwrap();
        let r = resample_fixed(&p, 5).unwrap();
        assert_eq!(r.len(), 5);
        assert_eq!(events(&r), vec![GripperEvent { index: 2, kind: GripperEventKind::Close }]);
    }

    #[test]
    fn resample_rejects_small_n() {
        let p = open(&[(0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(resample_fixed(&p, 1), Err(PathError::InvalidCount(1)));
    }

    #[test]
    fn noise_zero_sigma_identity_and_determinism() {
        let p = open(&[(0.1, 0.2), (0.5, 0.5), (0.9, 0.1)]);
        assert_eq!(add_noise(&p, 0.0, 7).unwrap(), p);
        assert_eq!(add_noise(&p, 0.01, 7).unwrap(), add_noise(&p, 0.01, 7).unwrap());
        assert_ne!(add_noise(&p, 0.01, 7).unwrap(), add_noise(&p, 0.01, 8).unwrap());
        assert!(add_noise(&p, -1.0, 0).is_err());
    }

    #[test]
    fn noise_sample_std_matches_sigma() {
        let p = open(&[(0.5, 0.5)]);
        let n = 100_000;
        let (mut sx, mut sxx, mut sy, mut syy) = (0.0, 0.0, 0.0, 0.0);
        for seed in 0..n {
            let q = add_noise(&p, 0.01, seed).unwrap().points()[0];
            let (dx, dy) = (q.x - 0.5, q.y - 0.5);
            sx += dx;
            sxx += dx * dx;
            sy += dy;
            syy += dy * dy;
        }
        let nf = n as f64;
        let std_x = ((sxx - sx * sx / nf) / (nf - 1.0)).sqrt();
        let std_y = ((syy - sy * sy / nf) / (nf - 1.0)).sqrt();
        assert!((0.0095..=0.0105).contains(&std_x), "{std_x}");
        assert!((0.0095..=0.0105).contains(&std_y), "{std_y}");
    }

    #[test]
    fn noise_preserves_gripper_states() {
        let p = Path2D::from_triples(&[(0.0, 0.0, true), (0.5, 0.5, false), (1.0, 1.0, true)]).unwrap();
        let q = add_noise(&p, 0.2, 3).unwrap();
        let a: Vec<bool> = p.points().iter().map(|p| p.gripper_open).collect();
        let b: Vec<bool> = q.points().iter().map(|p| p.gripper_open).collect();
        assert_eq!(a, b);
    }

    fn arb_path(max_len: usize) -> impl Strategy<Value = Path2D> {
        prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, prop::bool::weighted(0.8)), 1..=max_len)
            .prop_map(|v| Path2D::from_triples(&v).unwrap())
    }

    proptest! {
        #[test]
        fn rdp_output_is_protected_subsequence(p in arb_path(40), eps in 0.001..0.3f64) {
            let s = rdp_simplify(&p, eps).unwrap();
            let mut it = p.points().iter();
            for q in s.points() {
                prop_assert!(it.any(|r| r == q));
            }
            for i in protected_indices(&p) {
                prop_assert!(s.points().contains(&p.points()[i]));
            }
        }

        #[test]
        fn rdp_is_idempotent(p in arb_path(40), eps in 0.001..0.3f64) {
            let once = rdp_simplify(&p, eps).unwrap();
            prop_assert_eq!(rdp_simplify(&once, eps).unwrap(), once);
        }

        #[test]
        fn resample_positions_equally_spaced(total in 1e-3..10.0f64, n in 2usize..64) {
            let s = sample_positions(total, n);
            let gap = total / (n - 1) as f64;
            for w in s.windows(2) {
                prop_assert!((w[1] - w[0] - gap).abs() < 1e-9);
            }
        }

        #[test]
        fn resample_keeps_event_count(p in arb_path(20), n in 2usize..40) {
            let r = resample_fixed(&p, n).unwrap();
            prop_assert!(r.len() >= n && r.len() <= n + events(&p).len());
            let kinds = |q: &Path2D| events(q).into_iter().map(|e| e.kind).collect::<Vec<_>>();
            if path_length(&p) > 0.0 {
                prop_assert_eq!(kinds(&r), kinds(&p));
            }
        }

        #[test]
        fn noise_stays_in_unit_square(p in arb_path(30), sigma in 0.0..0.5f64, seed in any::<u64>()) {
            prop_assert!(add_noise(&p, sigma, seed).unwrap().is_in_frame());
        }
    }
}
