//! Closest-point queries on segments and capsules, and the configuration-space
//! derivative of the nearest point on a moving segment.

use nalgebra::{DMatrix, Matrix3, Vector3};

pub const MIN_SEGMENT_LENGTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate segment (length {0:e} m)")]
    DegenerateSegment(f64),
    #[error("negative capsule radius {0}")]
    NegativeRadius(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl Segment {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Result<Self, GeometryError> {
        let s = Self { a, b };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let len = self.length();
        if !(len > MIN_SEGMENT_LENGTH) {
            return Err(GeometryError::DegenerateSegment(len));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn direction(&self) -> Vector3<f64> {
        (self.b - self.a) / self.length()
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.a + (self.b - self.a) * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestPointResult {
    pub point: Vector3<f64>,
    /// Segment parameter in `[0, 1]`.
    pub t: f64,
    /// True iff the unclamped projection fell strictly inside the segment.
    pub interior: bool,
}

pub fn closest_point_on_segment(seg: &Segment, p: &Vector3<f64>) -> Result<ClosestPointResult, GeometryError> {
    seg.validate()?;
    let ab = seg.b - seg.a;
    let raw = (p - seg.a).dot(&ab) / ab.norm_squared();
    let interior = raw > 0.0 && raw < 1.0;
    let t = raw.clamp(0.0, 1.0);
    let point = if t == 0.0 {
        seg.a
    } else if t == 1.0 {
        seg.b
    } else {
        seg.a + ab * t
    };
    Ok(ClosestPointResult { point, t, interior })
}

/// Distance from `p` to the infinite line through the segment.
pub fn line_distance(seg: &Segment, p: &Vector3<f64>) -> f64 {
    let l = seg.direction();
    let pd = p - seg.a;
    (pd - l * pd.dot(&l)).norm()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentPair {
    pub on_first: Vector3<f64>,
    pub on_second: Vector3<f64>,
    pub s: f64,
    pub t: f64,
    pub distance: f64,
}

/// Closest points between two segments.
///
/// Parallel segments with overlapping projections resolve to the middle of
/// the overlap. The pair is evaluated in a canonical order so that swapping the
/// arguments only swaps the outputs.
pub fn segment_segment_closest(s1: &Segment, s2: &Segment) -> Result<SegmentPair, GeometryError> {
    s1.validate()?;
    s2.validate()?;
    if canonical_first(s1, s2) {
        Ok(closest_ordered(s1, s2))
    } else {
        let r = closest_ordered(s2, s1);
        Ok(SegmentPair { on_first: r.on_second, on_second: r.on_first, s: r.t, t: r.s, distance: r.distance })
    }
}

fn canonical_first(s1: &Segment, s2: &Segment) -> bool {
    let k1 = [s1.a.x, s1.a.y, s1.a.z, s1.b.x, s1.b.y, s1.b.z];
    let k2 = [s2.a.x, s2.a.y, s2.a.z, s2.b.x, s2.b.y, s2.b.z];
    for (x, y) in k1.iter().zip(&k2) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    true
}

fn project_param(seg: &Segment, p: &Vector3<f64>) -> f64 {
    let ab = seg.b - seg.a;
    ((p - seg.a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
}

fn closest_ordered(s1: &Segment, s2: &Segment) -> SegmentPair {
    let d1 = s1.b - s1.a;
    let d2 = s2.b - s2.a;
    let r = s1.a - s2.a;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;

    let (s, t) = if denom <= 1e-12 * a * e {
        // Parallel: project the second segment onto the first.
        let t0 = (s2.a - s1.a).dot(&d1) / a;
        let t1 = (s2.b - s1.a).dot(&d1) / a;
        let lo = t0.min(t1).max(0.0);
        let hi = t0.max(t1).min(1.0);
        let s = if lo <= hi {
            0.5 * (lo + hi)
        } else if t0.max(t1) < 0.0 {
            0.0
        } else {
            1.0
        };
        let t = project_param(s2, &s1.at(s));
        let s = if lo <= hi { s } else { project_param(s1, &s2.at(t)) };
        (s, t)
    } else {
        let mut s = ((b * f - c * e) / denom).clamp(0.0, 1.0);
        let mut t = (b * s + f) / e;
        if t < 0.0 {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else if t > 1.0 {
            t = 1.0;
            s = ((b - c) / a).clamp(0.0, 1.0);
        }
        (s, t)
    };
    let p1 = s1.at(s);
    let p2 = s2.at(t);
    SegmentPair { on_first: p1, on_second: p2, s, t, distance: (p1 - p2).norm() }
}

/// Signed surface distance between two capsules; negative when they overlap.
pub fn capsule_clearance(s1: &Segment, r1: f64, s2: &Segment, r2: f64) -> Result<f64, GeometryError> {
    for r in [r1, r2] {
        if !(r >= 0.0) {
            return Err(GeometryError::NegativeRadius(r));
        }
    }
    Ok(segment_segment_closest(s1, s2)?.distance - (r1 + r2))
}

/// Nearest point on a moving segment to a fixed point, with its derivative.
#[derive(Clone, Debug)]
pub struct MovingClosestPoint {
    pub closest: ClosestPointResult,
    /// `p_c - a`.
    pub offset: Vector3<f64>,
    /// 3×n derivative of the nearest point with respect to the joints.
    pub jacobian: DMatrix<f64>,
}

/// Derivative of the nearest point on a segment whose endpoints move with
/// Jacobians `jac_a` and `jac_b`, toward a fixed point `target`.
///
/// In the interior the nearest point `a + (p_d . l) l` slides along the
/// segment as the axis swings:
/// `(I - l l^T) J_a + (l p_d^T + (p_d . l) I) dl/dq`, with
/// `dl/dq = (I - l l^T)(J_b - J_a) / |b - a|`. When the projection is clamped
/// the nearest point rides the endpoint and inherits its Jacobian.
pub fn moving_closest_point(
    seg: &Segment,
    jac_a: &DMatrix<f64>,
    jac_b: &DMatrix<f64>,
    target: &Vector3<f64>,
) -> Result<MovingClosestPoint, GeometryError> {
    let closest = closest_point_on_segment(seg, target)?;
    let offset = target - seg.a;
    let jacobian = if closest.interior {
        let len = seg.length();
        let l = seg.direction();
        let perp = Matrix3::identity() - l * l.transpose();
        let dl = perp * (jac_b - jac_a) / len;
        let swing = l * offset.transpose() + Matrix3::identity() * offset.dot(&l);
        let m = perp * jac_a + swing * dl;
        DMatrix::from_column_slice(3, m.ncols(), m.as_slice())
    } else if closest.t == 0.0 {
        jac_a.clone()
    } else {
        jac_b.clone()
    };
    Ok(MovingClosestPoint { closest, offset, jacobian })
}
