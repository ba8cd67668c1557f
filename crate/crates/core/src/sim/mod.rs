//! A small mass-spring harness that drives the untangler over time.
//!
//! Semi-implicit Euler with gravity, edge springs and an ideal-gas pressure
//! term. On scheduled steps the two meshes are untangled and every corrected
//! vertex picks up the correction as velocity (`v += Δx / Δt`).

mod forces;
mod scene;

use std::fs;
use std::io;
use std::path::Path;

use log::{debug, info};
use serde::Serialize;
use thiserror::Error;

use crate::mesh::{save_obj, EdgeSet, MeshError, TriangleMesh, Vec3};
use crate::untangler::{UntangleError, UntangleStatus, Untangler};

pub use forces::{pressure_force, spring_force};
pub use scene::{lumped_masses, CollisionSchedule, MeshSource, MeshSpec, PinKeyword, PinSpec, Primitive, SceneConfig};

pub const SIM_REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scene field `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Untangle(#[from] UntangleError),
    #[error("non-finite {what} at step {step}, mesh {mesh:?}, vertex {vertex}")]
    NonFinite {
        what: &'static str,
        step: usize,
        mesh: String,
        vertex: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Positions and velocities of one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub pinned: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub meshes: Vec<MeshState>,
    pub time: f64,
    pub step: usize,
    pub dt: f64,
}

impl SimState {
    pub fn positions(&self) -> Vec<Vec<Vec3>> {
        self.meshes.iter().map(|m| m.positions.clone()).collect()
    }
}

#[derive(Debug, Clone)]
struct MeshModel {
    mesh: TriangleMesh,
    springs: Vec<(usize, usize, f64)>,
    inverse_masses: Vec<f64>,
    gravity_scale: f64,
    stiffness: f64,
    damping: f64,
    pressure: Option<f64>,
}

/// Outcome of one scheduled untangle call.
#[derive(Debug, Clone, Serialize)]
pub struct CollisionRecord {
    pub step: usize,
    pub initial_intersections: usize,
    pub iterations: usize,
    pub final_intersections: usize,
    pub status: UntangleStatus,
    pub moved_vertices: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub step: usize,
    pub time: f64,
    /// Crossings found by a certification pass; `None` without an oriented
    /// mesh pair.
    pub crossings: Option<usize>,
    pub centroids: Vec<Vec3>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub schema: u32,
    pub scene: String,
    pub steps: usize,
    pub dt: f64,
    pub collision_interval: usize,
    pub first_contact_step: Option<usize>,
    pub unresolved_calls: usize,
    pub max_untangle_iterations: usize,
    pub frames: Vec<FrameRecord>,
    pub collisions: Vec<CollisionRecord>,
}

impl SimReport {
    /// Index of the first frame recorded at or after `step`.
    pub fn frame_at_or_after(&self, step: usize) -> Option<usize> {
        self.frames.iter().position(|f| f.step >= step)
    }
}

pub struct Simulation {
    scene: SceneConfig,
    models: Vec<MeshModel>,
    state: SimState,
    untangler: Option<Untangler>,
    gravity: Vec3,
}

impl Simulation {
    pub fn new(scene: SceneConfig) -> Result<Self, SimError> {
        scene.validate()?;
        let mut models = Vec::with_capacity(scene.meshes.len());
        let mut states = Vec::with_capacity(scene.meshes.len());
        for spec in &scene.meshes {
            let mesh = spec.build()?;
            if spec.pressure.is_some() {
                let edges = EdgeSet::build(mesh.faces());
                if !edges.is_closed() {
                    return Err(SimError::Invalid(format!("mesh {:?}: pressure needs a closed mesh", spec.name)));
                }
            }
            let edges = EdgeSet::build(mesh.faces());
            let springs = edges
                .edges()
                .iter()
                .map(|&[i, j]| (i, j, (mesh.vertices()[j] - mesh.vertices()[i]).norm()))
                .collect();
            let pinned: Vec<bool> = (0..mesh.vertex_count()).map(|v| mesh.is_pinned(v)).collect();
            let v0 = Vec3::from(spec.velocity);
            states.push(MeshState {
                positions: mesh.vertices().to_vec(),
                velocities: pinned.iter().map(|&p| if p { Vec3::zeros() } else { v0 }).collect(),
                pinned,
            });
            models.push(MeshModel {
                inverse_masses: mesh.inverse_masses(),
                mesh,
                springs,
                gravity_scale: spec.gravity_scale,
                stiffness: spec.stiffness,
                damping: spec.damping,
                pressure: spec.pressure,
            });
        }
        let untangler = match models.as_slice() {
            [a, b] if a.mesh.is_oriented() || b.mesh.is_oriented() => Some(Untangler::new(&a.mesh, &b.mesh)?),
            _ => None,
        };
        Ok(Self {
            gravity: Vec3::from(scene.gravity),
            state: SimState {
                meshes: states,
                time: 0.0,
                step: 0,
                dt: scene.dt,
            },
            scene,
            models,
            untangler,
        })
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.scene
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// The meshes at their current positions.
    pub fn meshes(&self) -> Vec<TriangleMesh> {
        self.models
            .iter()
            .zip(&self.state.meshes)
            .map(|(m, s)| m.mesh.with_vertices(s.positions.clone()).expect("same vertex count"))
            .collect()
    }

    /// Current crossing count over the certification directions.
    pub fn crossings(&mut self) -> Result<Option<usize>, SimError> {
        let positions = self.state.positions();
        let tol = self.scene.untangle.tolerances;
        match &mut self.untangler {
            Some(u) => Ok(Some(u.certify(&positions, &tol)?)),
            None => Ok(None),
        }
    }

    fn forces(&self, i: usize) -> Result<Vec<Vec3>, SimError> {
        let model = &self.models[i];
        let state = &self.state.meshes[i];
        let (x, v) = (&state.positions, &state.velocities);
        let mut f: Vec<Vec3> = model
            .mesh
            .masses()
            .iter()
            .map(|&m| if m.is_finite() { self.gravity * (model.gravity_scale * m) } else { Vec3::zeros() })
            .collect();
        if model.stiffness > 0.0 || model.damping > 0.0 {
            for &(a, b, rest) in &model.springs {
                let fa = spring_force(&x[a], &x[b], &v[a], &v[b], rest, model.stiffness, model.damping);
                f[a] += fa;
                f[b] -= fa;
            }
        }
        if let Some(c) = model.pressure {
            for (acc, p) in f.iter_mut().zip(forces::pressure_force_closed(model.mesh.faces(), x, c)?) {
                *acc += p;
            }
        }
        Ok(f)
    }

    /// Advances one time step, handling collisions when scheduled.
    pub fn step(&mut self) -> Result<Option<CollisionRecord>, SimError> {
        let dt = self.state.dt;
        let step = self.state.step + 1;
        for i in 0..self.models.len() {
            let forces = self.forces(i)?;
            let model = &self.models[i];
            let state = &mut self.state.meshes[i];
            for (v, f) in forces.iter().enumerate() {
                if state.pinned[v] {
                    continue;
                }
                state.velocities[v] += f * (dt * model.inverse_masses[v]);
                state.positions[v] += state.velocities[v] * dt;
                if !(state.positions[v].iter().all(|c| c.is_finite()) && state.velocities[v].iter().all(|c| c.is_finite())) {
                    return Err(SimError::NonFinite {
                        what: "state",
                        step,
                        mesh: model.mesh.name().to_owned(),
                        vertex: v,
                    });
                }
            }
        }
        self.state.step = step;
        self.state.time = step as f64 * dt;

        if !self.scene.collision.is_due(step) {
            return Ok(None);
        }
        let Some(untangler) = &mut self.untangler else {
            return Ok(None);
        };
        let before = self.state.positions();
        let mut positions = before.clone();
        let report = untangler.run(&mut positions, &self.scene.untangle, |_, _| {})?;
        // corrections undo penetration built up over the whole interval
        let elapsed = dt * self.scene.collision.interval as f64;
        let mut moved = 0;
        for (i, mesh) in self.state.meshes.iter_mut().enumerate() {
            for (v, (new, old)) in positions[i].iter().zip(&before[i]).enumerate() {
                if new != old {
                    mesh.velocities[v] += (new - old) / elapsed;
                    moved += 1;
                }
            }
            mesh.positions.clone_from(&positions[i]);
        }
        let record = CollisionRecord {
            step,
            initial_intersections: report.per_iteration.first().map_or(0, |s| s.intersections),
            iterations: report.iterations,
            final_intersections: report.final_intersections,
            status: report.status,
            moved_vertices: moved,
        };
        if record.initial_intersections > 0 {
            debug!(
                "step {step}: {} crossings resolved in {} iterations ({:?})",
                record.initial_intersections, record.iterations, record.status
            );
        }
        Ok(Some(record))
    }

    fn frame(&mut self, frame: usize) -> Result<FrameRecord, SimError> {
        Ok(FrameRecord {
            frame,
            step: self.state.step,
            time: self.state.time,
            crossings: self.crossings()?,
            centroids: self.state.meshes.iter().map(|m| crate::mesh::centroid(&m.positions)).collect(),
        })
    }

    fn write_frame(&self, dir: &Path, frame: usize) -> Result<(), SimError> {
        for mesh in self.meshes() {
            save_obj(&mesh, dir.join(format!("{}_{frame:04}.obj", mesh.name())))?;
        }
        Ok(())
    }
}

/// Runs a whole scene. Frames are written to `out_dir` when given.
pub fn run_scenario(scene: &SceneConfig, out_dir: Option<&Path>) -> Result<SimReport, SimError> {
    let mut sim = Simulation::new(scene.clone())?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut frames = vec![sim.frame(0)?];
    if let Some(dir) = out_dir {
        sim.write_frame(dir, 0)?;
    }
    let mut collisions = Vec::new();
    let mut first_contact_step = None;
    for _ in 0..scene.steps {
        if let Some(record) = sim.step()? {
            if first_contact_step.is_none() && record.initial_intersections > 0 {
                first_contact_step = Some(record.step);
            }
            collisions.push(record);
        }
        if sim.state.step % scene.output_interval == 0 {
            let index = frames.len();
            frames.push(sim.frame(index)?);
            if let Some(dir) = out_dir {
                sim.write_frame(dir, index)?;
            }
        }
    }
    let report = SimReport {
        schema: SIM_REPORT_SCHEMA,
        scene: scene.name.clone(),
        steps: scene.steps,
        dt: scene.dt,
        collision_interval: scene.collision.interval,
        first_contact_step,
        unresolved_calls: collisions
            .iter()
            .filter(|c: &&CollisionRecord| c.status != UntangleStatus::Resolved)
            .count(),
        max_untangle_iterations: collisions.iter().map(|c| c.iterations).max().unwrap_or(0),
        frames,
        collisions,
    };
    info!(
        "{}: {} steps, {} collision calls, {} unresolved",
        report.scene,
        report.steps,
        report.collisions.len(),
        report.unresolved_calls
    );
    Ok(report)
}
