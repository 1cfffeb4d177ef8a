//! Object layouts and yaw-rotated box geometry.
//!
//! Frame convention: `z` is up and the floor is `z = 0`. Boxes only rotate
//! about `z`, so a box is a vertical prism over its footprint and two boxes
//! intersect iff their footprints intersect and their height intervals
//! overlap.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Smallest half-extent a box may have (1 mm).
pub const MIN_HALF_EXTENT: f64 = 1e-3;

const SEPARATION_TOL: f64 = 1e-9;

/// Placement of one object: translation `t`, half-extents `s`, and yaw
/// stored as `(cos r, sin r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub t: [f64; 3],
    pub s: [f64; 3],
    pub rot: [f64; 2],
}

impl Layout {
    pub fn new(t: [f64; 3], s: [f64; 3], yaw: f64) -> Self {
        Self {
            t,
            s,
            rot: [yaw.cos(), yaw.sin()],
        }
    }

    pub fn yaw(&self) -> f64 {
        self.rot[1].atan2(self.rot[0])
    }

    /// Flattens to the 8 regression targets `[t, s, cos, sin]`.
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.t[0], self.t[1], self.t[2], self.s[0], self.s[1], self.s[2], self.rot[0],
            self.rot[1],
        ]
    }

    pub fn from_array(v: &[f64; 8]) -> Self {
        Self {
            t: [v[0], v[1], v[2]],
            s: [v[3], v[4], v[5]],
            rot: [v[6], v[7]],
        }
    }

    /// Clamps sizes to 1 mm and renormalizes the rotation pair. A zero pair
    /// becomes yaw 0.
    pub fn sanitized(mut self) -> Self {
        for s in &mut self.s {
            if !(*s >= MIN_HALF_EXTENT) {
                *s = MIN_HALF_EXTENT;
            }
        }
        let norm = self.rot[0].hypot(self.rot[1]);
        self.rot = if norm > 1e-12 && norm.is_finite() {
            [self.rot[0] / norm, self.rot[1] / norm]
        } else {
            [1.0, 0.0]
        };
        self
    }

    pub fn is_valid(&self) -> bool {
        let unit = (self.rot[0] * self.rot[0] + self.rot[1] * self.rot[1] - 1.0).abs() <= 1e-6;
        unit && self.s.iter().all(|&s| s > 0.0)
            && self.t.iter().chain(&self.s).all(|v| v.is_finite())
    }

    pub fn to_box(&self) -> OrientedBox {
        OrientedBox::new(self.t, self.s, self.rot)
    }

    /// Rotates a vector from the object's local frame into the world frame.
    pub fn local_to_world(&self, local: [f64; 3]) -> [f64; 3] {
        let [c, s] = self.rot;
        [
            self.t[0] + local[0] * c - local[1] * s,
            self.t[1] + local[0] * s + local[1] * c,
            self.t[2] + local[2],
        ]
    }
}

/// Box rotated about the vertical axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedBox {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// `(cos yaw, sin yaw)`, unit length.
    pub rot: [f64; 2],
}

impl OrientedBox {
    pub fn new(center: [f64; 3], half_extents: [f64; 3], rot: [f64; 2]) -> Self {
        let norm = rot[0].hypot(rot[1]);
        let rot = if norm > 1e-12 {
            [rot[0] / norm, rot[1] / norm]
        } else {
            [1.0, 0.0]
        };
        Self {
            center,
            half_extents: half_extents.map(|h| if h >= MIN_HALF_EXTENT { h } else { MIN_HALF_EXTENT }),
            rot,
        }
    }

    pub fn from_yaw(center: [f64; 3], half_extents: [f64; 3], yaw: f64) -> Self {
        Self::new(center, half_extents, [yaw.cos(), yaw.sin()])
    }

    pub fn yaw(&self) -> f64 {
        self.rot[1].atan2(self.rot[0])
    }

    pub fn z_range(&self) -> (f64, f64) {
        (
            self.center[2] - self.half_extents[2],
            self.center[2] + self.half_extents[2],
        )
    }

    pub fn footprint_area(&self) -> f64 {
        4.0 * self.half_extents[0] * self.half_extents[1]
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents[0] * self.half_extents[1] * self.half_extents[2]
    }

    /// Local x and y axes of the footprint in world coordinates.
    fn axes(&self) -> [[f64; 2]; 2] {
        let [c, s] = self.rot;
        [[c, s], [-s, c]]
    }

    /// Footprint corners in counter-clockwise order.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let [ax, ay] = self.axes();
        let (hx, hy) = (self.half_extents[0], self.half_extents[1]);
        let [cx, cy] = [self.center[0], self.center[1]];
        let corner = |sx: f64, sy: f64| {
            [
                cx + sx * hx * ax[0] + sy * hy * ay[0],
                cy + sx * hx * ax[1] + sy * hy * ay[1],
            ]
        };
        [
            corner(-1.0, -1.0),
            corner(1.0, -1.0),
            corner(1.0, 1.0),
            corner(-1.0, 1.0),
        ]
    }

    /// Whether a world point lies inside the box (closed).
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let [ax, ay] = self.axes();
        let lx = d[0] * ax[0] + d[1] * ax[1];
        let ly = d[0] * ay[0] + d[1] * ay[1];
        lx.abs() <= self.half_extents[0]
            && ly.abs() <= self.half_extents[1]
            && (p[2] - self.center[2]).abs() <= self.half_extents[2]
    }

    /// Same box translated by `delta`.
    pub fn translated(&self, delta: [f64; 3]) -> Self {
        let mut out = *self;
        for k in 0..3 {
            out.center[k] += delta[k];
        }
        out
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        let key = |b: &Self| {
            [
                b.center[0],
                b.center[1],
                b.center[2],
                b.half_extents[0],
                b.half_extents[1],
                b.half_extents[2],
                b.rot[0],
                b.rot[1],
            ]
        };
        let (ka, kb) = (key(self), key(other));
        for (x, y) in ka.iter().zip(&kb) {
            match x.total_cmp(y) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }
}

/// Evaluates a binary box predicate with arguments in canonical order, so
/// results are bitwise symmetric.
fn symmetric<T>(a: &OrientedBox, b: &OrientedBox, f: impl Fn(&OrientedBox, &OrientedBox) -> T) -> T {
    if a.canonical_cmp(b) == Ordering::Greater {
        f(b, a)
    } else {
        f(a, b)
    }
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc.abs()
}

/// Sutherland-Hodgman clip of `subject` against the convex CCW polygon `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area (m²) of the intersection of two boxes' ground-plane footprints.
pub fn footprint_overlap_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    symmetric(a, b, |a, b| {
        if !footprints_intersect(a, b) {
            return 0.0;
        }
        let area = polygon_area(&clip_convex(&a.footprint(), &b.footprint()));
        area.min(a.footprint_area()).min(b.footprint_area()).max(0.0)
    })
}

/// 2D separating-axis test on footprints; touching edges do not count.
pub fn footprints_intersect(a: &OrientedBox, b: &OrientedBox) -> bool {
    symmetric(a, b, |a, b| {
        let d = [b.center[0] - a.center[0], b.center[1] - a.center[1]];
        let (aa, ba) = (a.axes(), b.axes());
        for axis in aa.iter().chain(ba.iter()) {
            let ra = a.half_extents[0] * dot2(aa[0], *axis).abs()
                + a.half_extents[1] * dot2(aa[1], *axis).abs();
            let rb = b.half_extents[0] * dot2(ba[0], *axis).abs()
                + b.half_extents[1] * dot2(ba[1], *axis).abs();
            if dot2(d, *axis).abs() >= ra + rb - SEPARATION_TOL {
                return false;
            }
        }
        true
    })
}

/// Whether two box volumes intersect (positive-volume overlap).
pub fn boxes_intersect_3d(a: &OrientedBox, b: &OrientedBox) -> bool {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    if a1.min(b1) - a0.max(b0) <= SEPARATION_TOL {
        return false;
    }
    footprints_intersect(a, b)
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box(center: [f64; 3]) -> OrientedBox {
        OrientedBox::from_yaw(center, [0.5, 0.5, 0.5], 0.0)
    }

    /// Monte-Carlo estimate of footprint overlap: sample the bounding square
    /// of `a` and count points inside both footprints.
    fn mc_overlap(a: &OrientedBox, b: &OrientedBox, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
        let r = a.half_extents[0].hypot(a.half_extents[1]);
        let side = 2.0 * r;
        let mut hits = 0usize;
        for _ in 0..samples {
            let p = [
                a.center[0] - r + side * rng.random::<f64>(),
                a.center[1] - r + side * rng.random::<f64>(),
            ];
            let inside = |bx: &OrientedBox| {
                bx.contains([p[0], p[1], bx.center[2]])
            };
            if inside(a) && inside(b) {
                hits += 1;
            }
        }
        hits as f64 / samples as f64 * side * side
    }

    #[test]
    fn identical_unit_boxes_overlap_one() {
        let a = unit_box([0.0; 3]);
        assert!((footprint_overlap_area(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distant_boxes_do_not_overlap() {
        let a = unit_box([0.0; 3]);
        let b = unit_box([10.0, 0.0, 0.0]);
        assert_eq!(footprint_overlap_area(&a, &b), 0.0);
    }

    #[test]
    fn offset_two_by_two_boxes_match_monte_carlo() {
        let a = OrientedBox::from_yaw([0.0, 0.0, 0.5], [1.0, 1.0, 0.5], 0.0);
        let b = OrientedBox::from_yaw([1.0, 1.0, 0.5], [1.0, 1.0, 0.5], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let oracle = mc_overlap(&a, &b, 1_000_000, &mut rng);
        let exact = footprint_overlap_area(&a, &b);
        assert!((oracle - 1.0).abs() < 0.01, "oracle {oracle}");
        assert!((exact - oracle).abs() <= 0.01 * oracle, "{exact} vs {oracle}");
        assert!((exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_overlap_matches_monte_carlo() {
        let a = OrientedBox::from_yaw([0.0, 0.0, 0.5], [1.0, 0.5, 0.5], 0.3);
        let b = OrientedBox::from_yaw([0.6, 0.2, 0.5], [0.7, 0.4, 0.5], -0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let oracle = mc_overlap(&a, &b, 1_000_000, &mut rng);
        let exact = footprint_overlap_area(&a, &b);
        assert!((exact - oracle).abs() <= 0.01 * oracle + 1e-3, "{exact} vs {oracle}");
    }

    #[test]
    fn coincident_boxes_intersect() {
        let a = unit_box([0.0; 3]);
        assert!(boxes_intersect_3d(&a, &a));
    }

    #[test]
    fn stacked_boxes_with_gap_do_not_intersect() {
        let a = unit_box([0.0, 0.0, 0.5]);
        let b = unit_box([0.0, 0.0, 2.5]);
        assert!(!boxes_intersect_3d(&a, &b));
        assert!(footprint_overlap_area(&a, &b) > 0.99);
    }

    /// Point-sampling oracle for volume intersection, with the sampled
    /// overlap fraction as a margin.
    fn mc_volume_overlap(a: &OrientedBox, b: &OrientedBox, n: usize, rng: &mut ChaCha8Rng) -> f64 {
        let r = a.half_extents[0].hypot(a.half_extents[1]);
        let h = a.half_extents[2];
        let mut hits = 0usize;
        for _ in 0..n {
            let p = [
                a.center[0] + r * (2.0 * rng.random::<f64>() - 1.0),
                a.center[1] + r * (2.0 * rng.random::<f64>() - 1.0),
                a.center[2] + h * (2.0 * rng.random::<f64>() - 1.0),
            ];
            if a.contains(p) && b.contains(p) {
                hits += 1;
            }
        }
        hits as f64 / n as f64 * (2.0 * r) * (2.0 * r) * (2.0 * h)
    }

    #[test]
    fn rotated_corner_graze_matches_volume_oracle() {
        let a = OrientedBox::from_yaw([0.0, 0.0, 0.5], [0.5, 0.5, 0.5], 0.0);
        let diag = std::f64::consts::FRAC_1_SQRT_2;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Corner of a 45° box pushed into the face of `a` by 5 cm.
        let hit = OrientedBox::from_yaw([0.5 + diag - 0.05, 0.0, 0.5], [0.5, 0.5, 0.5], std::f64::consts::FRAC_PI_4);
        assert!(boxes_intersect_3d(&a, &hit));
        assert!(mc_volume_overlap(&a, &hit, 200_000, &mut rng) > 0.0);
        // Same box pulled 5 cm clear of the face.
        let miss = OrientedBox::from_yaw([0.5 + diag + 0.05, 0.0, 0.5], [0.5, 0.5, 0.5], std::f64::consts::FRAC_PI_4);
        assert!(!boxes_intersect_3d(&a, &miss));
        assert_eq!(mc_volume_overlap(&a, &miss, 200_000, &mut rng), 0.0);
    }

    #[test]
    fn intersection_agrees_with_monte_carlo_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut checked = 0;
        for _ in 0..1000 {
            let mut rb = || {
                OrientedBox::from_yaw(
                    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)],
                    [rng.random_range(0.1..0.8), rng.random_range(0.1..0.8), rng.random_range(0.1..0.8)],
                    rng.random_range(-3.2..3.2),
                )
            };
            let (a, b) = (rb(), rb());
            let est = mc_volume_overlap(&a, &b, 4000, &mut rng);
            let margin = 0.01 * a.volume().min(b.volume());
            let sat = boxes_intersect_3d(&a, &b);
            if est > margin {
                assert!(sat, "oracle saw overlap {est} but SAT disagreed: {a:?} {b:?}");
                checked += 1;
            }
            if !sat {
                assert_eq!(est, 0.0);
            }
        }
        assert!(checked > 100);
    }

    fn arb_box() -> impl Strategy<Value = OrientedBox> {
        (
            -2.0..2.0f64,
            -2.0..2.0f64,
            0.0..2.0f64,
            0.0..1.5f64,
            0.0..1.5f64,
            0.0..1.0f64,
            -4.0..4.0f64,
        )
            .prop_map(|(x, y, z, hx, hy, hz, yaw)| OrientedBox::from_yaw([x, y, z], [hx, hy, hz], yaw))
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = footprint_overlap_area(&a, &b);
            let ba = footprint_overlap_area(&b, &a);
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!(ab >= 0.0);
            prop_assert!(ab <= a.footprint_area().min(b.footprint_area()) + 1e-12);
            prop_assert_eq!(boxes_intersect_3d(&a, &b), boxes_intersect_3d(&b, &a));
            if !footprints_intersect(&a, &b) {
                prop_assert_eq!(ab, 0.0);
            }
        }
    }

    #[test]
    fn degenerate_extents_are_clamped() {
        let b = OrientedBox::from_yaw([0.0; 3], [0.0, -1.0, 1e-5], 0.0);
        assert!(b.half_extents.iter().all(|&h| h == MIN_HALF_EXTENT));
    }

    #[test]
    fn sanitized_layout_is_valid() {
        let l = Layout {
            t: [0.0; 3],
            s: [0.0, 1.0, f64::NAN],
            rot: [3.0, 4.0],
        }
        .sanitized();
        assert!(l.is_valid());
        assert!((l.rot[0] - 0.6).abs() < 1e-12);
    }
}
