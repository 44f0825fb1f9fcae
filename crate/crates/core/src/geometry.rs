//! Camera poses, 2D viewing frustums and graded field-of-view overlap.
//!
//! A camera sees a triangle: apex at the camera position, two rays at
//! `heading ± fov/2`, each `range` meters long. The graded similarity of two
//! cameras is the intersection-over-union of their triangles, computed by
//! clipping one convex polygon against the half-planes of the other.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest accepted range / fov, in meters / radians.
const DEGENERATE_EPS: f64 = 1e-9;
/// Intersections smaller than this fraction of the smaller frustum are zero.
const SLIVER_FRACTION: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("range must be finite and > 0, got {0}")]
    InvalidRange(f64),
    #[error("fov angle must lie in (0, pi) radians, got {0}")]
    InvalidFov(f64),
    #[error("non-finite pose coordinate")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    heading: f64,
    fov_angle: f64,
    range: f64,
}

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = theta.rem_euclid(TAU);
    // rem_euclid may round up to exactly TAU for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Absolute circular difference of two headings, in `[0, π]`.
pub fn heading_difference(a: f64, b: f64) -> f64 {
    let d = (normalize_angle(a) - normalize_angle(b)).abs();
    d.min(TAU - d)
}

impl CameraPose {
    pub fn new(
        id: u32,
        x: f64,
        y: f64,
        heading: f64,
        fov_angle: f64,
        range: f64,
    ) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && heading.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !range.is_finite() || range <= DEGENERATE_EPS {
            return Err(GeometryError::InvalidRange(range));
        }
        if !fov_angle.is_finite() || fov_angle <= DEGENERATE_EPS || fov_angle >= PI {
            return Err(GeometryError::InvalidFov(fov_angle));
        }
        Ok(Self {
            id,
            x,
            y,
            heading: normalize_angle(heading),
            fov_angle,
            range,
        })
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn fov_angle(&self) -> f64 {
        self.fov_angle
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn distance_to(&self, other: &CameraPose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct FrustumPolygon {
    vertices: Vec<[f64; 2]>,
}

impl FrustumPolygon {
    /// Wraps a vertex list that the caller guarantees is convex and CCW.
    pub fn from_ccw(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// Point-in-convex-polygon test, boundary inclusive.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            cross(a, b, p) >= 0.0
        })
    }
}

/// Graded similarity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityLabel(f64);

impl SimilarityLabel {
    pub fn new(psi: f64) -> Option<Self> {
        (0.0..=1.0).contains(&psi).then_some(Self(psi))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn frustum_polygon(pose: &CameraPose) -> FrustumPolygon {
    let half = pose.fov_angle / 2.0;
    let ray = |angle: f64| {
        [
            pose.x + pose.range * angle.cos(),
            pose.y + pose.range * angle.sin(),
        ]
    };
    // right ray first, then left ray: counter-clockwise around the apex
    FrustumPolygon {
        vertices: vec![
            [pose.x, pose.y],
            ray(pose.heading - half),
            ray(pose.heading + half),
        ],
    }
}

#[inline]
fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Shoelace area (positive for CCW input).
pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice
}

/// Keeps the part of `subject` on the left of the directed edge `a -> b`.
fn clip_halfplane(subject: &[[f64; 2]], a: [f64; 2], b: [f64; 2], out: &mut Vec<[f64; 2]>) {
    out.clear();
    let n = subject.len();
    for i in 0..n {
        let s = subject[i];
        let e = subject[(i + 1) % n];
        let sd = cross(a, b, s);
        let ed = cross(a, b, e);
        let s_in = sd >= 0.0;
        let e_in = ed >= 0.0;
        if s_in != e_in {
            let t = sd / (sd - ed);
            out.push([s[0] + (e[0] - s[0]) * t, s[1] + (e[1] - s[1]) * t]);
        }
        if e_in {
            out.push(e);
        }
    }
}

fn lexicographic(a: &[[f64; 2]], b: &[[f64; 2]]) -> Ordering {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Area of the intersection of two convex CCW polygons.
///
/// The operands are put in a canonical order before clipping so the result
/// is bit-for-bit symmetric.
pub fn convex_polygon_intersection_area(a: &FrustumPolygon, b: &FrustumPolygon) -> f64 {
    let (subject, clip) = match lexicographic(&a.vertices, &b.vertices) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let mut current = subject.vertices.clone();
    let mut scratch = Vec::with_capacity(current.len() + clip.vertices.len());
    let n = clip.vertices.len();
    for i in 0..n {
        clip_halfplane(
            &current,
            clip.vertices[i],
            clip.vertices[(i + 1) % n],
            &mut scratch,
        );
        std::mem::swap(&mut current, &mut scratch);
        if current.len() < 3 {
            return 0.0;
        }
    }
    polygon_area(&current).max(0.0)
}

/// Intersection-over-union of the two cameras' frustum triangles.
pub fn fov_overlap(a: &CameraPose, b: &CameraPose) -> SimilarityLabel {
    let fa = frustum_polygon(a);
    let fb = frustum_polygon(b);
    if fa == fb {
        return SimilarityLabel(1.0);
    }
    let reach = a.range.max(b.range);
    if a.distance_to(b) > 2.0 * reach {
        return SimilarityLabel(0.0);
    }
    let inter = convex_polygon_intersection_area(&fa, &fb);
    let union = fa.area() + fb.area() - inter;
    // numerical slivers (e.g. frustums touching only at an apex) count as disjoint
    if union <= 0.0 || inter <= SLIVER_FRACTION * fa.area().min(fb.area()) {
        return SimilarityLabel(0.0);
    }
    SimilarityLabel((inter / union).clamp(0.0, 1.0))
}

/// Binary positive rule: position within `dist_thresh` (inclusive) and
/// heading difference strictly below `angle_thresh`.
pub fn is_positive(a: &CameraPose, b: &CameraPose, dist_thresh: f64, angle_thresh: f64) -> bool {
    a.distance_to(b) <= dist_thresh && heading_difference(a.heading, b.heading) < angle_thresh
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose(x: f64, y: f64, heading: f64, fov: f64, range: f64) -> CameraPose {
        CameraPose::new(0, x, y, heading, fov, range).unwrap()
    }

    fn close(a: [f64; 2], b: [f64; 2]) -> bool {
        (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12
    }

    #[test]
    fn frustum_of_axis_aligned_camera() {
        let f = frustum_polygon(&pose(0.0, 0.0, 0.0, PI / 2.0, 1.0));
        let v = f.vertices();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(v[0], [0.0, 0.0]));
        assert!(close(v[1], [h, -h]));
        assert!(close(v[2], [h, h]));
        assert!(f.area() > 0.0);
    }

    #[test]
    fn frustum_of_backward_camera() {
        let f = frustum_polygon(&pose(5.0, 5.0, PI, PI / 3.0, 2.0));
        let v = f.vertices();
        assert!(close(v[0], [5.0, 5.0]));
        let a1 = PI - PI / 6.0;
        let a2 = PI + PI / 6.0;
        assert!(close(v[1], [5.0 + 2.0 * a1.cos(), 5.0 + 2.0 * a1.sin()]));
        assert!(close(v[2], [5.0 + 2.0 * a2.cos(), 5.0 + 2.0 * a2.sin()]));
        assert!(f.area() > 0.0);
    }

    #[test]
    fn pose_rejects_degenerate_values() {
        assert!(CameraPose::new(0, 0.0, 0.0, 0.0, PI / 2.0, 0.0).is_err());
        assert!(CameraPose::new(0, 0.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(CameraPose::new(0, 0.0, 0.0, 0.0, PI, 1.0).is_err());
        assert!(CameraPose::new(0, f64::NAN, 0.0, 0.0, 1.0, 1.0).is_err());
        let p = CameraPose::new(0, 0.0, 0.0, -PI / 2.0, 1.0, 1.0).unwrap();
        assert!((p.heading() - 1.5 * PI).abs() < 1e-15);
        assert_eq!(normalize_angle(-1e-300), 0.0);
    }

    #[test]
    fn square_overlap() {
        let sq = |dx: f64| {
            FrustumPolygon::from_ccw(vec![[dx, 0.0], [dx + 1.0, 0.0], [dx + 1.0, 1.0], [dx, 1.0]])
        };
        let a = sq(0.0);
        let b = sq(0.5);
        assert!((convex_polygon_intersection_area(&a, &b) - 0.5).abs() < 1e-12);
        assert!((convex_polygon_intersection_area(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(convex_polygon_intersection_area(&a, &sq(3.0)), 0.0);
    }

    #[test]
    fn overlap_special_cases() {
        let a = pose(1.0, 2.0, 0.3, 1.0, 10.0);
        assert_eq!(fov_overlap(&a, &a).value(), 1.0);
        let far = pose(100.0, 2.0, 0.3, 1.0, 10.0);
        assert_eq!(fov_overlap(&a, &far).value(), 0.0);
        // facing away from each other, touching apexes only
        let back = pose(1.0, 2.0, 0.3 + PI, 1.0, 10.0);
        assert_eq!(fov_overlap(&a, &back).value(), 0.0);
    }

    #[test]
    fn positive_rule_thresholds() {
        let d = 40f64.to_radians();
        let a = pose(0.0, 0.0, 0.0, 1.0, 10.0);
        let b = pose(10.0, 0.0, 10f64.to_radians(), 1.0, 10.0);
        assert!(is_positive(&a, &b, 25.0, d));
        let c = pose(30.0, 0.0, 0.0, 1.0, 10.0);
        assert!(!is_positive(&a, &c, 25.0, d));
        let e = pose(25.0, 0.0, 39.9f64.to_radians(), 1.0, 10.0);
        assert!(is_positive(&a, &e, 25.0, d));
        let f = pose(0.0, 0.0, 40.0001f64.to_radians(), 1.0, 10.0);
        assert!(!is_positive(&a, &f, 25.0, d));
        // circular difference across 0
        let g = pose(0.0, 0.0, 350f64.to_radians(), 1.0, 10.0);
        assert!(is_positive(&a, &g, 25.0, d));
    }

    #[test]
    fn overlap_decays_along_view_axis() {
        let base = pose(0.0, 0.0, 0.7, 1.2, 20.0);
        let mut prev = 1.0;
        for step in 1..200 {
            let t = step as f64 * 0.25;
            let moved = pose(t * 0.7f64.cos(), t * 0.7f64.sin(), 0.7, 1.2, 20.0);
            let psi = fov_overlap(&base, &moved).value();
            assert!(
                psi <= prev + 1e-12,
                "psi increased at t={t}: {psi} > {prev}"
            );
            prev = psi;
        }
        assert_eq!(prev, 0.0);
    }

    #[test]
    fn overlap_is_symmetric_and_bounded_over_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let mut p = || {
                pose(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.1..3.0),
                    rng.random_range(1.0..15.0),
                )
            };
            let a = p();
            let b = p();
            let ab = fov_overlap(&a, &b).value();
            let ba = fov_overlap(&b, &a).value();
            assert!((0.0..=1.0).contains(&ab));
            assert!((ab - ba).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn frustum_area_identity(
            x in -50.0..50.0f64, y in -50.0..50.0f64,
            h in -10.0..10.0f64, fov in 0.01..3.1f64, r in 0.1..100.0f64,
        ) {
            let p = pose(x, y, h, fov, r);
            let f = frustum_polygon(&p);
            let expected = r * r * (fov / 2.0).sin() * (fov / 2.0).cos();
            prop_assert!((f.area() - expected).abs() <= 1e-9 * expected.max(1.0));
            prop_assert!(f.contains([x, y]));
        }
    }
}
