//! Smoothing of zone corrections into the surrounding surface.
//!
//! Zone support vertices carry their projected corrections as fixed
//! (Dirichlet) values. Every other vertex within `rings` edges of them is
//! relaxed by uniform Jacobi sweeps toward the mean of its neighbours, so the
//! correction fades out over a few rings instead of tearing the velocity
//! field. Pinned vertices are held at zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mesh::{Adjacency, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub rings: usize,
    pub iterations: usize,
    /// Sweeps stop once no value moves by more than this.
    pub tolerance: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            rings: 2,
            iterations: 20,
            tolerance: 1e-9,
        }
    }
}

/// Per-vertex displacement of one mesh with its fixed vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    values: Vec<Vec3>,
    fixed: Vec<bool>,
}

impl DisplacementField {
    pub fn zeros(vertex_count: usize) -> Self {
        Self {
            values: vec![Vec3::zeros(); vertex_count],
            fixed: vec![false; vertex_count],
        }
    }

    /// Fixes `v` at `value`; repeated calls accumulate.
    pub fn add_dirichlet(&mut self, v: usize, value: Vec3) {
        if self.fixed[v] {
            self.values[v] += value;
        } else {
            self.fixed[v] = true;
            self.values[v] = value;
        }
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn value(&self, v: usize) -> Vec3 {
        self.values[v]
    }

    pub fn is_dirichlet(&self, v: usize) -> bool {
        self.fixed[v]
    }

    pub fn dirichlet(&self) -> impl Iterator<Item = usize> + '_ {
        self.fixed.iter().enumerate().filter(|(_, &f)| f).map(|(v, _)| v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionStats {
    pub sweeps: usize,
    pub last_delta: f64,
    pub active: usize,
}

/// Relaxes the free vertices within `config.rings` of the Dirichlet set.
///
/// `pinned` vertices (may be empty) are treated as Dirichlet at zero unless
/// already fixed.
pub fn diffuse(
    field: &mut DisplacementField,
    adjacency: &Adjacency,
    pinned: &[bool],
    config: &DiffusionConfig,
) -> DiffusionStats {
    for (v, &p) in pinned.iter().enumerate() {
        if p && !field.fixed[v] {
            field.fixed[v] = true;
            field.values[v] = Vec3::zeros();
        }
    }
    let sources: Vec<usize> = field.dirichlet().collect();
    let distances = adjacency.ring_distances(&sources, config.rings);
    let active: Vec<usize> = distances
        .iter()
        .enumerate()
        .filter(|&(v, d)| d.is_some() && !field.fixed[v])
        .map(|(v, _)| v)
        .collect();

    let mut stats = DiffusionStats {
        sweeps: 0,
        last_delta: 0.0,
        active: active.len(),
    };
    if active.is_empty() {
        return stats;
    }
    for _ in 0..config.iterations {
        let prev = &field.values;
        let next: Vec<Vec3> = active
            .par_iter()
            .map(|&v| {
                let nbrs = adjacency.neighbors(v);
                if nbrs.is_empty() {
                    return Vec3::zeros();
                }
                nbrs.iter().map(|&u| prev[u]).sum::<Vec3>() / nbrs.len() as f64
            })
            .collect();
        let delta = active
            .iter()
            .zip(&next)
            .map(|(&v, x)| (x - prev[v]).amax())
            .fold(0.0, f64::max);
        for (&v, x) in active.iter().zip(next) {
            field.values[v] = x;
        }
        stats.sweeps += 1;
        stats.last_delta = delta;
        if delta < config.tolerance {
            break;
        }
    }
    stats
}

/// `positions += field`.
pub fn apply_field(field: &DisplacementField, positions: &mut [Vec3]) {
    for (x, d) in positions.iter_mut().zip(&field.values) {
        *x += d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> Adjacency {
        let edges: Vec<[usize; 2]> = (1..n).map(|i| [i - 1, i]).collect();
        Adjacency::from_edges(n, &edges)
    }

    fn converged() -> DiffusionConfig {
        DiffusionConfig {
            rings: 10,
            iterations: 10_000,
            tolerance: 1e-14,
        }
    }

    #[test]
    fn zero_rings_leave_the_field() {
        let sheet = primitives::grid_sheet(6, 6, 1.0, 1.0);
        let adj = Adjacency::from_faces(sheet.faces(), sheet.vertex_count());
        let mut field = DisplacementField::zeros(sheet.vertex_count());
        field.add_dirichlet(20, Vec3::new(0.1, 0.2, 0.3));
        let before = field.clone();
        let stats = diffuse(&mut field, &adj, &[], &DiffusionConfig { rings: 0, ..Default::default() });
        assert_eq!(field, before);
        assert_eq!(stats.sweeps, 0);
    }

    #[test]
    fn path_midpoint_is_the_average() {
        let adj = path(3);
        let mut field = DisplacementField::zeros(3);
        field.add_dirichlet(0, Vec3::zeros());
        field.add_dirichlet(2, Vec3::x());
        diffuse(&mut field, &adj, &[], &converged());
        assert!((field.value(1) - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn longer_path_is_linear() {
        let adj = path(6);
        let mut field = DisplacementField::zeros(6);
        field.add_dirichlet(0, Vec3::zeros());
        field.add_dirichlet(5, Vec3::new(0.0, 1.0, -2.0));
        diffuse(&mut field, &adj, &[], &converged());
        for v in 1..5 {
            let s = v as f64 / 5.0;
            assert!((field.value(v) - Vec3::new(0.0, s, -2.0 * s)).norm() < 1e-10);
        }
    }

    #[test]
    fn single_source_obeys_the_maximum_principle() {
        let sheet = primitives::grid_sheet(10, 10, 1.0, 1.0);
        let adj = Adjacency::from_faces(sheet.faces(), sheet.vertex_count());
        let source = 5 * 11 + 5;
        let v = Vec3::new(0.2, -0.1, 0.4);
        let mut field = DisplacementField::zeros(sheet.vertex_count());
        field.add_dirichlet(source, v);
        diffuse(&mut field, &adj, &[], &DiffusionConfig { rings: 3, iterations: 500, tolerance: 1e-14 });
        for &u in adj.neighbors(source) {
            let x = field.value(u);
            for c in 0..3 {
                let (lo, hi) = (v[c].min(0.0), v[c].max(0.0));
                assert!(x[c] > lo && x[c] < hi, "component {c} of {x} outside ({lo}, {hi})");
            }
        }
    }

    #[test]
    fn dirichlet_values_and_locality() {
        let sphere = primitives::icosphere(1.0, 2);
        let adj = Adjacency::from_faces(sphere.faces(), sphere.vertex_count());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let mut field = DisplacementField::zeros(sphere.vertex_count());
            let mut sources = Vec::new();
            for _ in 0..rng.gen_range(1..4) {
                let v = rng.gen_range(0..sphere.vertex_count());
                field.add_dirichlet(v, Vec3::from_fn(|_, _| rng.gen_range(-0.1..0.1)));
                sources.push(v);
            }
            let fixed = field.clone();
            let config = DiffusionConfig::default();
            diffuse(&mut field, &adj, &[], &config);
            let reach = adj.ring_distances(&sources, config.rings);
            let bound = fixed.max_magnitude();
            for v in 0..sphere.vertex_count() {
                if fixed.is_dirichlet(v) {
                    assert_eq!(field.value(v), fixed.value(v));
                } else if reach[v].is_none() {
                    assert_eq!(field.value(v), Vec3::zeros());
                }
                for c in 0..3 {
                    let lo = fixed.dirichlet().map(|u| fixed.value(u)[c]).fold(0.0, f64::min);
                    let hi = fixed.dirichlet().map(|u| fixed.value(u)[c]).fold(0.0, f64::max);
                    assert!(field.value(v)[c] >= lo - 1e-15 && field.value(v)[c] <= hi + 1e-15);
                }
            }
            let mut moved = sphere.vertices().to_vec();
            apply_field(&field, &mut moved);
            let max_move = moved
                .iter()
                .zip(sphere.vertices())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(max_move <= bound * 3f64.sqrt() + 1e-15);
        }
    }

    #[test]
    fn pinned_vertices_stay_at_zero() {
        let adj = path(5);
        let mut field = DisplacementField::zeros(5);
        field.add_dirichlet(0, Vec3::x());
        let pinned = [false, false, true, false, false];
        diffuse(&mut field, &adj, &pinned, &converged());
        assert_eq!(field.value(2), Vec3::zeros());
        assert_eq!(field.value(3), Vec3::zeros());
        assert!((field.value(1) - Vec3::x() * 0.5).norm() < 1e-12);
    }

    #[test]
    fn extra_sweep_after_convergence_is_negligible() {
        let sheet = primitives::grid_sheet(8, 8, 1.0, 1.0);
        let adj = Adjacency::from_faces(sheet.faces(), sheet.vertex_count());
        let mut field = DisplacementField::zeros(sheet.vertex_count());
        field.add_dirichlet(40, Vec3::new(0.0, 0.0, 0.05));
        field.add_dirichlet(12, Vec3::new(0.01, 0.0, 0.0));
        let config = DiffusionConfig { rings: 3, iterations: 10_000, tolerance: 1e-12 };
        let stats = diffuse(&mut field, &adj, &[], &config);
        assert!(stats.sweeps < config.iterations);
        let before = field.clone();
        diffuse(&mut field, &adj, &[], &DiffusionConfig { iterations: 1, ..config });
        for (a, b) in field.values().iter().zip(before.values()) {
            assert!((a - b).amax() <= 1e-12);
        }
    }

    #[test]
    fn zero_field_and_dirichlet_only_application() {
        let mut positions = vec![Vec3::zeros(), Vec3::x()];
        let field = DisplacementField::zeros(2);
        apply_field(&field, &mut positions);
        assert_eq!(positions, vec![Vec3::zeros(), Vec3::x()]);

        let mut field = DisplacementField::zeros(2);
        field.add_dirichlet(1, Vec3::new(0.0, 0.0, 0.3));
        diffuse(&mut field, &path(2), &[], &DiffusionConfig { rings: 0, ..Default::default() });
        apply_field(&field, &mut positions);
        assert_eq!(positions[1], Vec3::x() + Vec3::new(0.0, 0.0, 0.3));
        assert_eq!(positions[0], Vec3::zeros());
    }
}
