use super::Tolerances;
use crate::mesh::Vec3;

/// Crossing of a segment `p + t (q - p)` with a triangle `abc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentHit {
    pub t: f64,
    /// Weights of `a`, `b`, `c`; they sum to one.
    pub barycentric: [f64; 3],
}

impl SegmentHit {
    pub fn point_on_segment(&self, p: &Vec3, q: &Vec3) -> Vec3 {
        p + (q - p) * self.t
    }

    pub fn point_on_triangle(&self, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
        let [b1, b2, b3] = self.barycentric;
        a * b1 + b * b2 + c * b3
    }
}

/// [`segment_triangle_intersect_with`] under the default tolerances.
pub fn segment_triangle_intersect(
    p: &Vec3,
    q: &Vec3,
    a: &Vec3,
    b: &Vec3,
    c: &Vec3,
) -> Option<SegmentHit> {
    segment_triangle_intersect_with(p, q, a, b, c, &Tolerances::default())
}

/// Segment/triangle crossing test (Möller–Trumbore).
///
/// A crossing needs `t` strictly inside `(ε_t, 1 - ε_t)` and every
/// barycentric weight `>= -ε_bary`. Segments parallel to the triangle plane,
/// including coplanar overlap, never cross.
pub fn segment_triangle_intersect_with(
    p: &Vec3,
    q: &Vec3,
    a: &Vec3,
    b: &Vec3,
    c: &Vec3,
    tol: &Tolerances,
) -> Option<SegmentHit> {
    let dir = q - p;
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    let scale = dir.norm() * e1.cross(&e2).norm();
    if !(det.abs() > PARALLEL_SINE * scale) {
        return None;
    }
    let inv = 1.0 / det;
    let s = p - a;
    let t_cross = s.cross(&e1);
    let t = inv * e2.dot(&t_cross);
    if !(t > tol.parametric && t < 1.0 - tol.parametric) {
        return None;
    }
    let u = inv * s.dot(&h);
    let v = inv * dir.dot(&t_cross);
    let barycentric = [1.0 - u - v, u, v];
    if barycentric.iter().any(|&w| w < -tol.barycentric) {
        return None;
    }
    Some(SegmentHit { t, barycentric })
}

/// Segments whose direction makes a sine below this with the triangle plane
/// count as parallel.
const PARALLEL_SINE: f64 = 1e-12;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    const A: [f64; 3] = [0., 0., 0.];
    const B: [f64; 3] = [1., 0., 0.];
    const C: [f64; 3] = [0., 1., 0.];

    fn tri() -> (Vec3, Vec3, Vec3) {
        (Vec3::from(A), Vec3::from(B), Vec3::from(C))
    }

    #[test]
    fn axis_aligned_crossing() {
        let (a, b, c) = tri();
        let hit = segment_triangle_intersect(&v(0.25, 0.25, -1.), &v(0.25, 0.25, 1.), &a, &b, &c)
            .unwrap();
        assert_close!(hit.t, 0.5, 1e-15);
        assert_close!(hit.barycentric[0], 0.5, 1e-15);
        assert_close!(hit.barycentric[1], 0.25, 1e-15);
        assert_close!(hit.barycentric[2], 0.25, 1e-15);
    }

    #[test]
    fn parallel_segment_misses() {
        let (a, b, c) = tri();
        assert!(segment_triangle_intersect(&v(0.1, 0.1, 1.), &v(0.5, 0.2, 1.), &a, &b, &c).is_none());
        // coplanar overlap is not a crossing
        assert!(segment_triangle_intersect(&v(-1., 0.2, 0.), &v(2., 0.2, 0.), &a, &b, &c).is_none());
    }

    #[test]
    fn endpoint_on_face_is_not_a_crossing() {
        let (a, b, c) = tri();
        assert!(segment_triangle_intersect(&v(0.2, 0.2, 0.), &v(0.2, 0.2, 1.), &a, &b, &c).is_none());
        assert!(segment_triangle_intersect(&v(0.2, 0.2, -1.), &v(0.2, 0.2, 0.), &a, &b, &c).is_none());
    }

    #[test]
    fn outside_triangle_misses() {
        let (a, b, c) = tri();
        assert!(segment_triangle_intersect(&v(0.8, 0.8, -1.), &v(0.8, 0.8, 1.), &a, &b, &c).is_none());
        assert!(segment_triangle_intersect(&v(0.2, 0.2, 0.5), &v(0.2, 0.2, 2.), &a, &b, &c).is_none());
    }

    #[test]
    fn edge_of_triangle_counts_within_slack() {
        let (a, b, c) = tri();
        let hit = segment_triangle_intersect(&v(0.5, 0.0, -1.), &v(0.5, 0.0, 1.), &a, &b, &c).unwrap();
        assert!(hit.barycentric[2].abs() < 1e-15);
    }

    /// Independent route: clip against the plane via signed heights, then
    /// locate the plane point with sub-triangle areas.
    fn half_space_oracle(p: &Vec3, q: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<SegmentHit> {
        let n = (b - a).cross(&(c - a));
        let hp = n.dot(&(p - a));
        let hq = n.dot(&(q - a));
        if hp == hq {
            return None;
        }
        let t = hp / (hp - hq);
        if !(t > 1e-9 && t < 1.0 - 1e-9) {
            return None;
        }
        let x = p + (q - p) * t;
        let nn = n.norm_squared();
        let bary = [
            n.dot(&(b - x).cross(&(c - x))) / nn,
            n.dot(&(c - x).cross(&(a - x))) / nn,
            n.dot(&(a - x).cross(&(b - x))) / nn,
        ];
        if bary.iter().any(|&w| w < -1e-9) {
            return None;
        }
        Some(SegmentHit { t, barycentric: bary })
    }

    #[test]
    fn agrees_with_half_space_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pt = |rng: &mut ChaCha8Rng| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let (mut hits, mut compared) = (0, 0);
        for _ in 0..10_000 {
            let (p, q, a, b, c) = (pt(&mut rng), pt(&mut rng), pt(&mut rng), pt(&mut rng), pt(&mut rng));
            if crate::mesh::triangle_normal(&a, &b, &c).is_none() {
                continue;
            }
            let oracle = half_space_oracle(&p, &q, &a, &b, &c);
            // skip configurations within reach of a tolerance boundary
            if let Some(h) = half_space_oracle_loose(&p, &q, &a, &b, &c) {
                let margin = h
                    .barycentric
                    .iter()
                    .fold(h.t.abs().min((1.0 - h.t).abs()), |m, w| m.min(w.abs()));
                if margin < 1e-7 {
                    continue;
                }
            }
            compared += 1;
            let got = segment_triangle_intersect(&p, &q, &a, &b, &c);
            match (got, oracle) {
                (None, None) => {}
                (Some(g), Some(o)) => {
                    hits += 1;
                    assert_close!(g.t, o.t, 1e-9);
                    for k in 0..3 {
                        assert_close!(g.barycentric[k], o.barycentric[k], 1e-9);
                    }
                    let on_seg = g.point_on_segment(&p, &q);
                    let on_tri = g.point_on_triangle(&a, &b, &c);
                    assert!((on_seg - on_tri).norm() < 1e-7);
                }
                (g, o) => panic!("disagreement: {g:?} vs {o:?}"),
            }
        }
        assert!(compared > 9_000);
        assert!(hits > 500, "too few crossings exercised: {hits}");
    }

    /// Plane point and weights without any acceptance test.
    fn half_space_oracle_loose(p: &Vec3, q: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<SegmentHit> {
        let n = (b - a).cross(&(c - a));
        let (hp, hq) = (n.dot(&(p - a)), n.dot(&(q - a)));
        if hp == hq {
            return None;
        }
        let t = hp / (hp - hq);
        let x = p + (q - p) * t;
        let nn = n.norm_squared();
        Some(SegmentHit {
            t,
            barycentric: [
                n.dot(&(b - x).cross(&(c - x))) / nn,
                n.dot(&(c - x).cross(&(a - x))) / nn,
                n.dot(&(a - x).cross(&(b - x))) / nn,
            ],
        })
    }

    proptest::proptest! {
        #[test]
        fn reversed_segment_gives_complementary_t(
            p in proptest::array::uniform3(-1.0f64..1.0),
            q in proptest::array::uniform3(-1.0f64..1.0),
        ) {
            let (a, b, c) = (v(-1., -1., 0.1), v(1.5, -0.5, -0.1), v(0., 1.2, 0.));
            let (p, q) = (Vec3::from(p), Vec3::from(q));
            if let (Some(f), Some(r)) = (
                segment_triangle_intersect(&p, &q, &a, &b, &c),
                segment_triangle_intersect(&q, &p, &a, &b, &c),
            ) {
                proptest::prop_assert!((f.t - (1.0 - r.t)).abs() < 1e-9);
            }
        }
    }
}
