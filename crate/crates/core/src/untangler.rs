//! The outer repair loop: detect, classify, build stencils, project each
//! impact zone, diffuse, repeat until a certifying detection pass is clean.

use std::time::{Duration, Instant};

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcd::{
    find_intersections_brute_force, find_intersections_with, find_self_intersections, EdgeFaceIntersection, MeshId,
    MeshRef, Tolerances,
};
use crate::diffusion::{apply_field, diffuse, DiffusionConfig, DisplacementField};
use crate::mesh::{triangle_normal, Adjacency, EdgeSet, TriangleMesh, Vec3};
use crate::response::{solve_zone, ResponseError, ZoneDiagnostics};
use crate::stencil::{build_stencils, classify_vertices, partition_impact_zones, PenetrationStencil, StencilError};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum UntangleError {
    #[error("neither mesh is oriented; at least one must carry a front side")]
    NoOrientedMesh,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} positions for mesh {mesh}, got {got}")]
    PositionCount { mesh: usize, expected: usize, got: usize },
    #[error(transparent)]
    Stencil(#[from] StencilError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UntangleConfig {
    /// Target signed distance after each projection (metres).
    pub post_distance: f64,
    pub max_iterations: usize,
    pub diffusion: DiffusionConfig,
    pub tolerances: Tolerances,
    /// With both meshes oriented, swap the face side every iteration instead
    /// of testing both directions at once.
    pub alternate: bool,
    /// Halve later corrections once the crossing count has risen three
    /// iterations in a row.
    pub damping_guard: bool,
    /// Count crossings of each mesh with itself at the end (report only).
    pub report_self_intersections: bool,
}

impl Default for UntangleConfig {
    fn default() -> Self {
        Self {
            post_distance: 0.0,
            max_iterations: 100,
            diffusion: DiffusionConfig::default(),
            tolerances: Tolerances::default(),
            alternate: true,
            damping_guard: false,
            report_self_intersections: false,
        }
    }
}

impl UntangleConfig {
    pub fn validate(&self) -> Result<(), UntangleError> {
        if self.max_iterations == 0 {
            return Err(UntangleError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.post_distance >= 0.0 && self.post_distance.is_finite()) {
            return Err(UntangleError::InvalidConfig(format!(
                "post_distance must be finite and non-negative, got {}",
                self.post_distance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UntangleStatus {
    Resolved,
    IterationBudgetExhausted,
}

/// Edge side and face side of one detection direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Direction {
    pub edges: MeshId,
    pub faces: MeshId,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub directions: Vec<Direction>,
    pub intersections: usize,
    pub illegal_vertices: usize,
    pub stencils: usize,
    pub zones: usize,
    pub max_abs_distance: f64,
    pub unconverged_zones: usize,
    pub max_correction: f64,
    pub damping: f64,
    pub zone_diagnostics: Vec<ZoneDiagnostics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub detect_ms: f64,
    pub stencil_ms: f64,
    pub solve_ms: f64,
    pub diffuse_ms: f64,
    pub certify_ms: f64,
}

impl PhaseTimings {
    fn add(slot: &mut f64, d: Duration) {
        *slot += d.as_secs_f64() * 1e3;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UntangleReport {
    pub schema: u32,
    pub status: UntangleStatus,
    pub iterations: usize,
    pub final_intersections: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub damping_engaged_at: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_intersections: Option<[usize; 2]>,
    pub per_iteration: Vec<IterationStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<PhaseTimings>,
}

impl UntangleReport {
    pub fn is_resolved(&self) -> bool {
        self.status == UntangleStatus::Resolved
    }
}

/// A mesh pair prepared for repeated untangling at changing positions.
///
/// Mesh 0 and mesh 1 keep their connectivity, masses and orientation flags;
/// only positions are passed per call.
#[derive(Debug, Clone)]
pub struct Untangler {
    meshes: [TriangleMesh; 2],
    edges: [EdgeSet; 2],
    adjacency: [Adjacency; 2],
    pinned: [Vec<bool>; 2],
}

impl Untangler {
    pub fn new(a: &TriangleMesh, b: &TriangleMesh) -> Result<Self, UntangleError> {
        if !a.is_oriented() && !b.is_oriented() {
            return Err(UntangleError::NoOrientedMesh);
        }
        let prep = |m: &TriangleMesh| {
            (
                EdgeSet::build(m.faces()),
                Adjacency::from_faces(m.faces(), m.vertex_count()),
                (0..m.vertex_count()).map(|v| m.is_pinned(v)).collect::<Vec<_>>(),
            )
        };
        let (ea, aa, pa) = prep(a);
        let (eb, ab, pb) = prep(b);
        Ok(Self {
            meshes: [a.clone(), b.clone()],
            edges: [ea, eb],
            adjacency: [aa, ab],
            pinned: [pa, pb],
        })
    }

    pub fn mesh(&self, i: usize) -> &TriangleMesh {
        &self.meshes[i]
    }

    pub fn positions(&self) -> [Vec<Vec3>; 2] {
        [self.meshes[0].vertices().to_vec(), self.meshes[1].vertices().to_vec()]
    }

    /// Detection directions for iteration `iteration`.
    pub fn directions(&self, iteration: usize, alternate: bool) -> Vec<Direction> {
        let ab = Direction { edges: MeshId(0), faces: MeshId(1) };
        let ba = Direction { edges: MeshId(1), faces: MeshId(0) };
        match (self.meshes[0].is_oriented(), self.meshes[1].is_oriented()) {
            (true, true) if alternate => vec![if iteration % 2 == 0 { ab } else { ba }],
            (true, true) => vec![ab, ba],
            (true, false) => vec![ba],
            _ => vec![ab],
        }
    }

    /// Every direction whose face side is oriented.
    pub fn certification_directions(&self) -> Vec<Direction> {
        let mut out = Vec::new();
        if self.meshes[1].is_oriented() {
            out.push(Direction { edges: MeshId(0), faces: MeshId(1) });
        }
        if self.meshes[0].is_oriented() {
            out.push(Direction { edges: MeshId(1), faces: MeshId(0) });
        }
        out
    }

    fn set_positions(&mut self, positions: &[Vec<Vec3>]) -> Result<(), UntangleError> {
        for (i, p) in positions.iter().enumerate().take(2) {
            let expected = self.meshes[i].vertex_count();
            if p.len() != expected {
                return Err(UntangleError::PositionCount { mesh: i, expected, got: p.len() });
            }
            self.meshes[i].vertices_mut().copy_from_slice(p);
        }
        Ok(())
    }

    fn mesh_ref(&self, id: MeshId) -> MeshRef<'_> {
        let i = id.0 as usize;
        MeshRef { id, mesh: &self.meshes[i], edges: &self.edges[i] }
    }

    /// Crossings along the given directions at the current positions.
    pub fn detect(&self, directions: &[Direction], tol: &Tolerances) -> Vec<EdgeFaceIntersection> {
        directions
            .iter()
            .flat_map(|d| find_intersections_with(self.mesh_ref(d.edges), self.mesh_ref(d.faces), tol))
            .collect()
    }

    /// All-pairs scan over the certification directions.
    pub fn detect_brute_force(&self, tol: &Tolerances) -> Vec<EdgeFaceIntersection> {
        self.certification_directions()
            .iter()
            .flat_map(|d| find_intersections_brute_force(self.mesh_ref(d.edges), self.mesh_ref(d.faces), tol))
            .collect()
    }

    /// Stencils for the given crossings at the current positions. Crossings
    /// of collapsed faces are dropped.
    pub fn stencils(&self, hits: &[EdgeFaceIntersection]) -> Result<Vec<PenetrationStencil>, UntangleError> {
        let usable: Vec<EdgeFaceIntersection> = hits
            .iter()
            .filter(|h| {
                let [a, b, c] = self.meshes[h.face_mesh.0 as usize].face_positions(h.face);
                triangle_normal(&a, &b, &c).is_some()
            })
            .cloned()
            .collect();
        let refs = [&self.meshes[0], &self.meshes[1]];
        Ok(build_stencils(&usable, &refs)?)
    }

    /// One detect/respond/diffuse pass. Positions are updated in place.
    pub fn step(
        &mut self,
        positions: &mut [Vec<Vec3>],
        iteration: usize,
        config: &UntangleConfig,
        damping: f64,
    ) -> Result<IterationStats, UntangleError> {
        let mut timings = PhaseTimings::default();
        self.step_timed(positions, iteration, config, damping, &mut timings)
    }

    fn step_timed(
        &mut self,
        positions: &mut [Vec<Vec3>],
        iteration: usize,
        config: &UntangleConfig,
        damping: f64,
        timings: &mut PhaseTimings,
    ) -> Result<IterationStats, UntangleError> {
        self.set_positions(positions)?;
        let directions = self.directions(iteration, config.alternate);

        let t = Instant::now();
        let hits = self.detect(&directions, &config.tolerances);
        PhaseTimings::add(&mut timings.detect_ms, t.elapsed());

        let t = Instant::now();
        let refs = [&self.meshes[0], &self.meshes[1]];
        let illegal_vertices = classify_vertices(&hits, &refs)?.illegal_count();
        let stencils = self.stencils(&hits)?;
        let zones = partition_impact_zones(&stencils);
        PhaseTimings::add(&mut timings.stencil_ms, t.elapsed());

        let mut stats = IterationStats {
            iteration,
            directions: directions.clone(),
            intersections: hits.len(),
            illegal_vertices,
            stencils: stencils.len(),
            zones: zones.len(),
            max_abs_distance: stencils.iter().map(|s| s.distance.abs()).fold(0.0, f64::max),
            unconverged_zones: 0,
            max_correction: 0.0,
            damping,
            zone_diagnostics: Vec::new(),
        };
        if zones.is_empty() {
            return Ok(stats);
        }

        let t = Instant::now();
        let masses = [self.meshes[0].masses(), self.meshes[1].masses()];
        let solved: Vec<Result<_, ResponseError>> = zones
            .par_iter()
            .map(|z| solve_zone(z, positions, &masses, config.post_distance))
            .collect();
        PhaseTimings::add(&mut timings.solve_ms, t.elapsed());

        let t = Instant::now();
        let mut fields = [
            DisplacementField::zeros(self.meshes[0].vertex_count()),
            DisplacementField::zeros(self.meshes[1].vertex_count()),
        ];
        for result in solved {
            match result {
                Ok(solution) => {
                    for (key, dx) in solution.corrections {
                        let dx = dx * damping;
                        stats.max_correction = stats.max_correction.max(dx.norm());
                        fields[key.mesh.0 as usize].add_dirichlet(key.vertex, dx);
                    }
                    stats.zone_diagnostics.push(solution.diagnostics);
                }
                Err(e) => {
                    debug!("iteration {iteration}: zone skipped: {e}");
                    stats.unconverged_zones += 1;
                }
            }
        }
        // Meshes supplying apexes get their corrections smoothed; a pure
        // face side takes them as they are.
        for (i, field) in fields.iter_mut().enumerate() {
            if directions.iter().any(|d| d.edges.0 as usize == i) {
                diffuse(field, &self.adjacency[i], &self.pinned[i], &config.diffusion);
            }
            apply_field(field, &mut positions[i]);
        }
        PhaseTimings::add(&mut timings.diffuse_ms, t.elapsed());
        self.set_positions(positions)?;
        Ok(stats)
    }

    /// Number of crossings over every certification direction.
    pub fn certify(&mut self, positions: &[Vec<Vec3>], tol: &Tolerances) -> Result<usize, UntangleError> {
        self.set_positions(positions)?;
        Ok(self.detect(&self.certification_directions(), tol).len())
    }

    /// Repeats [`Untangler::step`] until a certification pass is clean or the
    /// budget runs out. `observer` sees the positions after every step.
    pub fn run(
        &mut self,
        positions: &mut [Vec<Vec3>],
        config: &UntangleConfig,
        mut observer: impl FnMut(&IterationStats, &[Vec<Vec3>]),
    ) -> Result<UntangleReport, UntangleError> {
        config.validate()?;
        let mut timings = PhaseTimings::default();
        let mut per_iteration: Vec<IterationStats> = Vec::new();
        let mut damping = 1.0;
        let mut damping_engaged_at = None;
        let mut rising = 0usize;
        let mut resolved = false;

        for iteration in 0..config.max_iterations {
            let stats = self.step_timed(positions, iteration, config, damping, &mut timings)?;
            debug!(
                "iteration {iteration}: {} crossings, {} stencils, {} zones",
                stats.intersections, stats.stencils, stats.zones
            );
            if let Some(prev) = per_iteration.last() {
                if stats.intersections > prev.intersections {
                    rising += 1;
                } else {
                    rising = 0;
                }
            }
            if config.damping_guard && rising >= 3 && damping_engaged_at.is_none() {
                damping = 0.5;
                damping_engaged_at = Some(iteration);
                info!("crossing count rose three times in a row; damping corrections from now on");
            }
            let clean = stats.intersections == 0;
            observer(&stats, positions);
            per_iteration.push(stats);
            if clean {
                let t = Instant::now();
                let remaining = self.certify(positions, &config.tolerances)?;
                PhaseTimings::add(&mut timings.certify_ms, t.elapsed());
                if remaining == 0 {
                    resolved = true;
                    break;
                }
            }
        }

        let final_intersections = if resolved {
            0
        } else {
            let t = Instant::now();
            let n = self.certify(positions, &config.tolerances)?;
            PhaseTimings::add(&mut timings.certify_ms, t.elapsed());
            n
        };
        let status = if final_intersections == 0 {
            UntangleStatus::Resolved
        } else {
            UntangleStatus::IterationBudgetExhausted
        };
        let self_intersections = config.report_self_intersections.then(|| {
            [0, 1].map(|i| find_self_intersections(self.mesh_ref(MeshId(i as u32)), &config.tolerances).len())
        });
        Ok(UntangleReport {
            schema: REPORT_SCHEMA,
            status,
            iterations: per_iteration.len(),
            final_intersections,
            damping_engaged_at,
            self_intersections,
            per_iteration,
            timings: Some(timings),
        })
    }
}

/// One pass over a mesh pair; returns the moved meshes.
pub fn untangle_step(
    a: &TriangleMesh,
    b: &TriangleMesh,
    iteration: usize,
    config: &UntangleConfig,
) -> Result<(TriangleMesh, TriangleMesh, IterationStats), UntangleError> {
    config.validate()?;
    let mut untangler = Untangler::new(a, b)?;
    let mut positions = untangler.positions();
    let stats = untangler.step(&mut positions, iteration, config, 1.0)?;
    let [pa, pb] = positions;
    Ok((with_positions(a, pa), with_positions(b, pb), stats))
}

/// Repairs a mesh pair until certified clean or out of iterations.
pub fn untangle(
    a: &TriangleMesh,
    b: &TriangleMesh,
    config: &UntangleConfig,
) -> Result<(TriangleMesh, TriangleMesh, UntangleReport), UntangleError> {
    untangle_with_observer(a, b, config, |_, _| {})
}

pub fn untangle_with_observer(
    a: &TriangleMesh,
    b: &TriangleMesh,
    config: &UntangleConfig,
    observer: impl FnMut(&IterationStats, &[Vec<Vec3>]),
) -> Result<(TriangleMesh, TriangleMesh, UntangleReport), UntangleError> {
    let mut untangler = Untangler::new(a, b)?;
    let mut positions = untangler.positions();
    let report = untangler.run(&mut positions, config, observer)?;
    let [pa, pb] = positions;
    Ok((with_positions(a, pa), with_positions(b, pb), report))
}

fn with_positions(mesh: &TriangleMesh, positions: Vec<Vec3>) -> TriangleMesh {
    mesh.with_vertices(positions).expect("vertex count is preserved")
}
