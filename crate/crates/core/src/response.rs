//! Mass-weighted minimum-displacement projection for one impact zone.
//!
//! Each stencil contributes the linear constraint
//! `D(x) = n · (x0 - (x1 + x2 + x3) / 3)` with its normal frozen at build
//! time, i.e. the row `(n, -n/3, -n/3, -n/3)`. For the zone's `k` rows `J`
//! and diagonal masses `M`, the closest configuration (in the `M` norm) with
//! `J x' = d` is
//!
//! ```text
//! (J M⁻¹ Jᵀ) λ = J x - d,      x' = x - M⁻¹ Jᵀ λ.
//! ```
//!
//! Multipliers are unrestricted in sign; with this sign convention a
//! penetrating stencil gets `λ < 0`. Pinned vertices have `M⁻¹ = 0`.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{Cholesky, DMatrix, DVector, SVD};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::Serialize;
use thiserror::Error;

use crate::mesh::{inverse_mass, Vec3};
use crate::stencil::{ImpactZone, PenetrationStencil, VertexKey};

/// Zones up to this many rows are factored directly.
pub const DIRECT_SOLVE_MAX_ROWS: usize = 64;
/// Relative residual a solve has to reach.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Tikhonov shift relative to the mean diagonal of the Gram matrix.
pub const REGULARIZATION: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ResponseError {
    #[error("impact zone has no constraints")]
    EmptyZone,
    #[error("post-response distance must be finite and non-negative, got {0}")]
    InvalidPostDistance(f64),
    #[error("every vertex of the zone is pinned")]
    Immovable,
    #[error("multiplier solve stalled at relative residual {residual:e} after {iterations} iterations")]
    Unconverged { residual: f64, iterations: usize },
}

/// `∇D` of one stencil: four vertices and their coefficient blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub vertices: [VertexKey; 4],
    pub blocks: [Vec3; 4],
    /// `row · x` at assembly time (the stencil's signed distance).
    pub distance: f64,
}

impl ConstraintRow {
    /// `row · x` for the given per-mesh positions.
    pub fn evaluate(&self, positions: &[Vec<Vec3>]) -> f64 {
        self.vertices
            .iter()
            .zip(&self.blocks)
            .map(|(k, b)| b.dot(&position(positions, *k)))
            .sum()
    }

    /// Exact identity of vertices and coefficients.
    fn key(&self) -> ([VertexKey; 4], [[u64; 3]; 4]) {
        (self.vertices, self.blocks.map(|b| [b.x.to_bits(), b.y.to_bits(), b.z.to_bits()]))
    }
}

fn position(positions: &[Vec<Vec3>], key: VertexKey) -> Vec3 {
    positions[key.mesh.0 as usize][key.vertex]
}

fn mass(masses: &[&[f64]], key: VertexKey) -> f64 {
    masses[key.mesh.0 as usize][key.vertex]
}

/// Signed distance of the apex from the face plane along the stored normal,
/// measured from the face centroid.
pub fn signed_distance(stencil: &PenetrationStencil, positions: &[Vec<Vec3>]) -> f64 {
    let [x0, x1, x2, x3] = stencil.vertices().map(|k| position(positions, k));
    stencil.normal.dot(&(x0 - (x1 + x2 + x3) / 3.0))
}

pub fn constraint_gradient(stencil: &PenetrationStencil) -> ConstraintRow {
    let n = stencil.normal;
    let third = -n / 3.0;
    ConstraintRow {
        vertices: stencil.vertices(),
        blocks: [n, third, third, third],
        distance: stencil.distance,
    }
}

/// The assembled multiplier system of one zone.
#[derive(Debug, Clone)]
pub struct ZoneSystem {
    pub rows: Vec<ConstraintRow>,
    /// Sorted support vertices and their inverse masses.
    pub support: Vec<VertexKey>,
    pub inverse_masses: Vec<f64>,
    /// `J M⁻¹ Jᵀ`.
    pub gram: CsrMatrix<f64>,
    /// `J x - d`.
    pub rhs: DVector<f64>,
    pub regularization: f64,
}

impl ZoneSystem {
    /// A bare system, for solving a given Gram matrix directly.
    pub fn from_matrix(gram: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        let gram = CsrMatrix::from(&gram);
        let regularization = regularization_for(&gram);
        Self {
            rows: Vec::new(),
            support: Vec::new(),
            inverse_masses: Vec::new(),
            gram,
            rhs,
            regularization,
        }
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    /// Entry `(i, j)` of `A`.
    pub fn gram_entry(&self, i: usize, j: usize) -> f64 {
        self.gram.get_entry(i, j).map_or(0.0, |e| e.into_value())
    }

    /// `A + σI` as a dense matrix.
    pub fn regularized(&self) -> DMatrix<f64> {
        let k = self.len();
        DMatrix::from(&self.gram) + DMatrix::identity(k, k) * self.regularization
    }

    /// `(A + σI) p`.
    pub fn apply(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.gram.row_iter().zip(p.iter()).map(|(row, &pi)| {
                let off: f64 = row.col_indices().iter().zip(row.values()).map(|(&j, &v)| v * p[j]).sum();
                off + self.regularization * pi
            }),
        )
    }

    /// Frobenius norm of `A + σI`.
    pub fn norm(&self) -> f64 {
        let sigma = self.regularization;
        let squares: f64 = self
            .gram
            .triplet_iter()
            .map(|(i, j, &v)| if i == j { (v + sigma).powi(2) - sigma * sigma } else { v * v })
            .sum();
        (squares + self.len() as f64 * sigma * sigma).sqrt()
    }

    fn diagonal(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), (0..self.len()).map(|i| self.gram_entry(i, i) + self.regularization))
    }

    /// Gershgorin bounds on the spectrum of `A + σI` as (lower, upper).
    pub fn gershgorin_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (i, row) in self.gram.row_iter().enumerate() {
            let mut diagonal = self.regularization;
            let mut radius = 0.0;
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                if j == i {
                    diagonal += v;
                } else {
                    radius += v.abs();
                }
            }
            lo = lo.min(diagonal - radius);
            hi = hi.max(diagonal + radius);
        }
        (lo, hi)
    }

    /// Condition number estimate from the Gershgorin bounds; `None` when the
    /// lower bound is not positive.
    pub fn condition_estimate(&self) -> Option<f64> {
        let (lo, hi) = self.gershgorin_bounds();
        (lo > 0.0).then(|| hi / lo)
    }
}

fn trace(gram: &CsrMatrix<f64>) -> f64 {
    gram.triplet_iter().filter(|(i, j, _)| i == j).map(|(_, _, &v)| v).sum()
}

fn regularization_for(gram: &CsrMatrix<f64>) -> f64 {
    let k = gram.nrows();
    if k == 0 {
        return 0.0;
    }
    REGULARIZATION * trace(gram) / k as f64
}

/// Builds `A = J M⁻¹ Jᵀ` and `rhs = J x - d` for a zone. Rows identical in
/// vertices and coefficients are merged.
///
/// `positions` and `masses` are indexed by mesh id.
pub fn assemble_zone_system(
    zone: &ImpactZone,
    positions: &[Vec<Vec3>],
    masses: &[&[f64]],
    post_distance: f64,
) -> Result<ZoneSystem, ResponseError> {
    if !(post_distance >= 0.0 && post_distance.is_finite()) {
        return Err(ResponseError::InvalidPostDistance(post_distance));
    }
    let mut rows: Vec<ConstraintRow> = Vec::with_capacity(zone.stencils.len());
    let mut seen = HashSet::new();
    for stencil in &zone.stencils {
        let mut row = constraint_gradient(stencil);
        if !seen.insert(row.key()) {
            continue;
        }
        row.distance = row.evaluate(positions);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ResponseError::EmptyZone);
    }

    let mut incidence: BTreeMap<VertexKey, Vec<(usize, Vec3)>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        for (key, block) in row.vertices.iter().zip(&row.blocks) {
            incidence.entry(*key).or_default().push((i, *block));
        }
    }

    let k = rows.len();
    let mut coo = CooMatrix::new(k, k);
    let mut support = Vec::with_capacity(incidence.len());
    let mut inverse_masses = Vec::with_capacity(incidence.len());
    for (key, entries) in &incidence {
        let w = inverse_mass(mass(masses, *key));
        support.push(*key);
        inverse_masses.push(w);
        if w == 0.0 {
            continue;
        }
        for &(i, bi) in entries {
            for &(j, bj) in entries {
                coo.push(i, j, w * bi.dot(&bj));
            }
        }
    }
    let gram = CsrMatrix::from(&coo);
    let rhs = DVector::from_iterator(k, rows.iter().map(|r| r.distance - post_distance));
    let regularization = regularization_for(&gram);
    Ok(ZoneSystem {
        rows,
        support,
        inverse_masses,
        gram,
        rhs,
        regularization,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Cholesky,
    ConjugateGradient,
}

#[derive(Debug, Clone)]
pub struct Multipliers {
    pub lambda: DVector<f64>,
    /// `‖(A + σI) λ - rhs‖ / (‖rhs‖ + ‖A + σI‖ ‖λ‖)`.
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// Solves `(A + σI) λ = rhs`.
///
/// The residual is measured normwise, relative to `‖rhs‖ + ‖A + σI‖ ‖λ‖`:
/// with a rank-deficient `A` and inconsistent right-hand side the multipliers
/// grow like `1/σ` along the null space of `Jᵀ`, which leaves the
/// displacement untouched but would swamp a plain `‖r‖ / ‖rhs‖` test.
pub fn solve_multipliers(system: &ZoneSystem) -> Result<Multipliers, ResponseError> {
    let k = system.len();
    if k == 0 {
        return Err(ResponseError::EmptyZone);
    }
    if trace(&system.gram) == 0.0 {
        return Err(ResponseError::Immovable);
    }
    if system.rhs.iter().all(|&r| r == 0.0) {
        return Ok(Multipliers {
            lambda: DVector::zeros(k),
            residual: 0.0,
            iterations: 0,
            method: SolveMethod::Cholesky,
        });
    }

    if k <= DIRECT_SOLVE_MAX_ROWS {
        let a = system.regularized();
        if let Some(chol) = Cholesky::new(a.clone()) {
            let mut lambda = chol.solve(&system.rhs);
            // one refinement step
            let r = &system.rhs - &a * &lambda;
            lambda += chol.solve(&r);
            let residual = relative_residual(system, &lambda);
            if residual < RESIDUAL_TOLERANCE {
                return Ok(Multipliers {
                    lambda,
                    residual,
                    iterations: 1,
                    method: SolveMethod::Cholesky,
                });
            }
        }
    }
    conjugate_gradient(system, 4 * k)
}

fn relative_residual(system: &ZoneSystem, x: &DVector<f64>) -> f64 {
    let b = &system.rhs;
    let r = b - system.apply(x);
    let scale = b.norm() + system.norm() * x.norm();
    if scale == 0.0 {
        0.0
    } else {
        r.norm() / scale
    }
}

/// Jacobi-preconditioned conjugate gradient, stopping on the normwise
/// residual.
fn conjugate_gradient(system: &ZoneSystem, max_iterations: usize) -> Result<Multipliers, ResponseError> {
    let b = &system.rhs;
    let a_norm = system.norm();
    let b_norm = b.norm();
    let inv_diag = system.diagonal().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 });
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut residual = 1.0;
    for it in 1..=max_iterations {
        let ap = system.apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if r.norm() < RESIDUAL_TOLERANCE * (b_norm + a_norm * x.norm()) || it % 50 == 0 {
            // the recursive residual drifts; confirm against the true one
            r = b - system.apply(&x);
            residual = r.norm() / (b_norm + a_norm * x.norm());
            if residual < RESIDUAL_TOLERANCE {
                return Ok(Multipliers {
                    lambda: x,
                    residual,
                    iterations: it,
                    method: SolveMethod::ConjugateGradient,
                });
            }
        }
        z = r.component_mul(&inv_diag);
        let rz_next = r.dot(&z);
        p = &z + &p * (rz_next / rz);
        rz = rz_next;
    }
    residual = residual.min(relative_residual(system, &x));
    if residual < RESIDUAL_TOLERANCE {
        return Ok(Multipliers {
            lambda: x,
            residual,
            iterations: max_iterations,
            method: SolveMethod::ConjugateGradient,
        });
    }
    Err(ResponseError::Unconverged {
        residual,
        iterations: max_iterations,
    })
}

/// Per-vertex corrections `-M⁻¹ Jᵀ λ` over the zone support (pinned
/// vertices get zero).
pub fn displacements(system: &ZoneSystem, lambda: &DVector<f64>) -> Vec<(VertexKey, Vec3)> {
    let mut acc: BTreeMap<VertexKey, Vec3> = BTreeMap::new();
    for (row, &l) in system.rows.iter().zip(lambda.iter()) {
        for (key, block) in row.vertices.iter().zip(&row.blocks) {
            *acc.entry(*key).or_insert_with(Vec3::zeros) -= block * l;
        }
    }
    system
        .support
        .iter()
        .zip(&system.inverse_masses)
        .map(|(key, &w)| (*key, acc.get(key).copied().unwrap_or_else(Vec3::zeros) * w))
        .collect()
}

/// Corrections `-M⁻¹ Jᵀ λ` computed without forming `λ`.
///
/// With `B = J M^-1/2` the corrections are `-M^-1/2 z` where
/// `(BᵀB + σI) z = Bᵀ rhs`, the same vector as `Bᵀ (BBᵀ + σI)⁻¹ rhs`. Small
/// zones apply the regularized inverse through the SVD of `B`, larger ones run
/// CG on the displacement system. When
/// more rows meet at a vertex than it has degrees of freedom the `λ` form
/// carries a `1/σ` component that has to cancel in `Jᵀ λ`; this form never
/// creates it.
pub fn solve_displacements(system: &ZoneSystem) -> Result<Vec<(VertexKey, Vec3)>, ResponseError> {
    let mut column = vec![usize::MAX; system.support.len()];
    let mut n = 0;
    for (c, &w) in column.iter_mut().zip(&system.inverse_masses) {
        if w > 0.0 {
            *c = n;
            n += 1;
        }
    }
    let zero = || system.support.iter().map(|key| (*key, Vec3::zeros())).collect();
    if n == 0 {
        return Err(ResponseError::Immovable);
    }
    if system.rhs.iter().all(|&r| r == 0.0) {
        return Ok(zero());
    }

    let k = system.len();
    let mut coo = CooMatrix::new(k, 3 * n);
    for (i, row) in system.rows.iter().enumerate() {
        for (key, block) in row.vertices.iter().zip(&row.blocks) {
            let s = system.support.binary_search(key).expect("row vertex in support");
            if column[s] == usize::MAX {
                continue;
            }
            let scaled = block * system.inverse_masses[s].sqrt();
            for d in 0..3 {
                coo.push(i, 3 * column[s] + d, scaled[d]);
            }
        }
    }
    let b = CsrMatrix::from(&coo);
    let bt = b.transpose();
    let sigma = system.regularization;

    let z = if k <= DIRECT_SOLVE_MAX_ROWS {
        // Tikhonov filter s / (s² + σ) applied through the SVD of B
        let svd = SVD::new(DMatrix::from(&b), true, true);
        let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        let coefficients = (u.transpose() * &system.rhs)
            .zip_map(&svd.singular_values, |c, sv| c * sv / (sv * sv + sigma));
        v_t.transpose() * coefficients
    } else {
        let g = dense_product(&bt, &system.rhs);
        let apply = |p: &DVector<f64>| dense_product(&bt, &dense_product(&b, p)) + p * sigma;
        conjugate_gradient_in_range(apply, &g, 4 * 3 * n)?
    };

    let mut corrections: Vec<(VertexKey, Vec3)> = zero();
    for (s, (_, dx)) in corrections.iter_mut().enumerate() {
        if column[s] != usize::MAX {
            let c = 3 * column[s];
            *dx = -Vec3::new(z[c], z[c + 1], z[c + 2]) * system.inverse_masses[s].sqrt();
        }
    }
    Ok(corrections)
}

fn dense_product(m: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.nrows(),
        m.row_iter()
            .map(|row| row.col_indices().iter().zip(row.values()).map(|(&j, &v)| v * x[j]).sum::<f64>()),
    )
}

/// Unpreconditioned CG from zero, to `‖r‖ < tol ‖b‖`. Iterates stay in the
/// Krylov space of `b`, so directions where the operator is only `σI` are
/// never entered; a diagonal preconditioner would leak into them.
fn conjugate_gradient_in_range(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    max_iterations: usize,
) -> Result<DVector<f64>, ResponseError> {
    let target = RESIDUAL_TOLERANCE * b.norm();
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for it in 1..=max_iterations {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if r.norm() < target || it % 50 == 0 {
            r = b - apply(&x);
            if r.norm() < target {
                return Ok(x);
            }
        }
        let rr_next = r.dot(&r);
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    let residual = (b - apply(&x)).norm();
    if residual < target {
        return Ok(x);
    }
    Err(ResponseError::Unconverged {
        residual: residual / b.norm(),
        iterations: max_iterations,
    })
}

/// Applies `x' = x - M⁻¹ Jᵀ λ` to the support vertices and returns the
/// corrections.
pub fn apply_displacements(
    system: &ZoneSystem,
    lambda: &DVector<f64>,
    positions: &mut [Vec<Vec3>],
) -> Vec<(VertexKey, Vec3)> {
    let corrections = displacements(system, lambda);
    for (key, dx) in &corrections {
        positions[key.mesh.0 as usize][key.vertex] += dx;
    }
    corrections
}

/// Solve diagnostics for the run report.
#[derive(Debug, Clone, Serialize)]
pub struct ZoneDiagnostics {
    pub rows: usize,
    pub support: usize,
    pub condition_estimate: Option<f64>,
    pub residual: f64,
    pub max_abs_multiplier: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

/// A solved zone: corrections for every support vertex.
#[derive(Debug, Clone)]
pub struct ZoneSolution {
    pub corrections: Vec<(VertexKey, Vec3)>,
    pub rows: Vec<ConstraintRow>,
    pub diagnostics: ZoneDiagnostics,
}

/// Assemble, solve and compute corrections without touching positions.
pub fn solve_zone(
    zone: &ImpactZone,
    positions: &[Vec<Vec3>],
    masses: &[&[f64]],
    post_distance: f64,
) -> Result<ZoneSolution, ResponseError> {
    let system = assemble_zone_system(zone, positions, masses, post_distance)?;
    let solved = solve_multipliers(&system)?;
    let corrections = solve_displacements(&system)?;
    let diagnostics = ZoneDiagnostics {
        rows: system.len(),
        support: system.support.len(),
        condition_estimate: system.condition_estimate(),
        residual: solved.residual,
        max_abs_multiplier: solved.lambda.amax(),
        iterations: solved.iterations,
        method: solved.method,
    };
    Ok(ZoneSolution {
        corrections,
        rows: system.rows,
        diagnostics,
    })
}

/// Full projection of one zone, applied in place.
pub fn zone_response(
    zone: &ImpactZone,
    positions: &mut [Vec<Vec3>],
    masses: &[&[f64]],
    post_distance: f64,
) -> Result<ZoneDiagnostics, ResponseError> {
    let solution = solve_zone(zone, positions, masses, post_distance)?;
    for (key, dx) in &solution.corrections {
        positions[key.mesh.0 as usize][key.vertex] += dx;
    }
    Ok(solution.diagnostics)
}
