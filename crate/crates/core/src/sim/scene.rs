use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::mesh::{load_obj, primitives, EdgeSet, LoadOptions, TriangleMesh, Vec3};
use crate::untangler::UntangleConfig;

fn default_dt() -> f64 {
    0.005
}

fn default_output_interval() -> usize {
    8
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.8]
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_name() -> String {
    "scene".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub steps: usize,
    /// A frame is recorded every this many steps.
    #[serde(default = "default_output_interval")]
    pub output_interval: usize,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub collision: CollisionSchedule,
    #[serde(default)]
    pub untangle: UntangleConfig,
    pub meshes: Vec<MeshSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionSchedule {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Handle collisions every `interval` steps.
    #[serde(default = "one_step")]
    pub interval: usize,
    /// No collision handling before this step.
    #[serde(default)]
    pub start_step: usize,
}

fn one_step() -> usize {
    1
}

impl Default for CollisionSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: 1,
            start_step: 0,
        }
    }
}

impl CollisionSchedule {
    /// Whether collisions are handled right after step `step` (1-based).
    pub fn is_due(&self, step: usize) -> bool {
        self.enabled && step >= self.start_step && step % self.interval == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub name: String,
    pub source: MeshSource,
    #[serde(default)]
    pub oriented: bool,
    /// Mass per unit area, lumped to vertices.
    #[serde(default = "one")]
    pub density: f64,
    #[serde(default)]
    pub pinned: PinSpec,
    #[serde(default = "one")]
    pub gravity_scale: f64,
    /// Edge spring stiffness (N/m); zero disables springs.
    #[serde(default)]
    pub stiffness: f64,
    /// Axial spring damping (N·s/m).
    #[serde(default)]
    pub damping: f64,
    /// `p·V` constant of the enclosed gas; closed meshes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure: Option<f64>,
    #[serde(default)]
    pub translate: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshSource {
    /// OBJ file, relative paths resolved against the scene file.
    Obj(PathBuf),
    Primitive(Primitive),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    GridSheet {
        cells_x: usize,
        cells_y: usize,
        width: f64,
        height: f64,
    },
    Icosphere {
        radius: f64,
        subdivisions: u32,
    },
    Torus {
        major_radius: f64,
        minor_radius: f64,
        segments_major: usize,
        segments_minor: usize,
    },
    Cone {
        radius: f64,
        height: f64,
        segments: usize,
    },
    UnitCube,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinKeyword {
    None,
    All,
    /// Vertices on open edges.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PinSpec {
    Keyword(PinKeyword),
    Indices(Vec<usize>),
}

impl Default for PinSpec {
    fn default() -> Self {
        PinSpec::Keyword(PinKeyword::None)
    }
}

impl SceneConfig {
    /// Parses a scene; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| SimError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Reads a scene file; relative OBJ paths become relative to its folder.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let mut scene = Self::from_json(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for mesh in &mut scene.meshes {
            if let MeshSource::Obj(p) = &mut mesh.source {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |m: String| Err(SimError::Invalid(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if self.output_interval == 0 {
            return invalid("output_interval must be at least 1".into());
        }
        if self.collision.interval == 0 {
            return invalid("collision.interval must be at least 1".into());
        }
        if self.meshes.is_empty() || self.meshes.len() > 2 {
            return invalid(format!("scenes hold one or two meshes, got {}", self.meshes.len()));
        }
        if self.collision.enabled {
            if self.meshes.len() != 2 {
                return invalid("collision handling needs exactly two meshes".into());
            }
            if !self.meshes.iter().any(|m| m.oriented) {
                return invalid("collision handling needs an oriented mesh".into());
            }
        }
        for m in &self.meshes {
            if !(m.density > 0.0) {
                return invalid(format!("mesh {:?}: density must be positive", m.name));
            }
            if m.stiffness < 0.0 || m.damping < 0.0 {
                return invalid(format!("mesh {:?}: stiffness and damping must be non-negative", m.name));
            }
        }
        self.untangle.validate().map_err(|e| SimError::Invalid(e.to_string()))
    }
}

impl MeshSpec {
    /// Geometry, orientation and lumped masses (pinned vertices infinite).
    pub fn build(&self) -> Result<TriangleMesh, SimError> {
        let mesh = match &self.source {
            MeshSource::Obj(path) => load_obj(path, &LoadOptions::default())?,
            MeshSource::Primitive(p) => p.build(),
        };
        let offset = Vec3::from(self.translate);
        let mesh = mesh.translated(offset).with_name(self.name.clone()).with_oriented(self.oriented);

        let mut masses = lumped_masses(&mesh, self.density);
        for v in self.pinned_vertices(&mesh)? {
            masses[v] = f64::INFINITY;
        }
        Ok(mesh.with_masses(masses)?)
    }

    fn pinned_vertices(&self, mesh: &TriangleMesh) -> Result<Vec<usize>, SimError> {
        Ok(match &self.pinned {
            PinSpec::Keyword(PinKeyword::None) => Vec::new(),
            PinSpec::Keyword(PinKeyword::All) => (0..mesh.vertex_count()).collect(),
            PinSpec::Keyword(PinKeyword::Boundary) => {
                let edges = EdgeSet::build(mesh.faces());
                let mut out: Vec<usize> = edges.boundary_edges().flat_map(|e| edges.edge(e)).collect();
                out.sort_unstable();
                out.dedup();
                out
            }
            PinSpec::Indices(list) => {
                if let Some(&bad) = list.iter().find(|&&v| v >= mesh.vertex_count()) {
                    return Err(SimError::Invalid(format!(
                        "mesh {:?}: pinned vertex {bad} out of range ({} vertices)",
                        self.name,
                        mesh.vertex_count()
                    )));
                }
                list.clone()
            }
        })
    }
}

impl Primitive {
    pub fn build(&self) -> TriangleMesh {
        match *self {
            Primitive::GridSheet { cells_x, cells_y, width, height } => {
                primitives::grid_sheet(cells_x, cells_y, width, height)
            }
            Primitive::Icosphere { radius, subdivisions } => primitives::icosphere(radius, subdivisions),
            Primitive::Torus {
                major_radius,
                minor_radius,
                segments_major,
                segments_minor,
            } => primitives::torus(major_radius, minor_radius, segments_major, segments_minor),
            Primitive::Cone { radius, height, segments } => primitives::cone(radius, height, segments),
            Primitive::UnitCube => primitives::unit_cube(),
        }
    }
}

/// A third of the incident face area per vertex, times `density`.
pub fn lumped_masses(mesh: &TriangleMesh, density: f64) -> Vec<f64> {
    let mut masses = vec![0.0; mesh.vertex_count()];
    for (f, face) in mesh.faces().iter().enumerate() {
        let [a, b, c] = mesh.face_positions(f);
        let share = crate::mesh::triangle_area(&a, &b, &c) * density / 3.0;
        for &v in face {
            masses[v] += share;
        }
    }
    // isolated vertices still need a finite positive mass
    let floor = masses.iter().copied().filter(|&m| m > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { density };
    for m in &mut masses {
        if *m == 0.0 {
            *m = floor;
        }
    }
    masses
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "steps": 10,
        "meshes": [
            {"name": "ball", "source": {"primitive": {"kind": "icosphere", "radius": 1.0, "subdivisions": 1}}, "oriented": true, "pinned": "all"},
            {"name": "sheet", "source": {"primitive": {"kind": "grid_sheet", "cells_x": 4, "cells_y": 4, "width": 1.0, "height": 1.0}}, "pinned": [0, 4]}
        ]
    }"#;

    #[test]
    fn defaults_fill_in() {
        let scene = SceneConfig::from_json(MINIMAL).unwrap();
        assert_eq!(scene.dt, 0.005);
        assert_eq!(scene.output_interval, 8);
        assert_eq!(scene.gravity, [0.0, 0.0, -9.8]);
        assert_eq!(scene.collision, CollisionSchedule::default());
        assert_eq!(scene.meshes[1].pinned, PinSpec::Indices(vec![0, 4]));
        scene.validate().unwrap();
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad = MINIMAL.replace("\"radius\": 1.0", "\"radius\": \"big\"");
        let err = SceneConfig::from_json(&bad).unwrap_err().to_string();
        // tagged enums buffer their content, so the path ends at the variant
        assert!(err.contains("meshes[0].source.primitive"), "{err}");
        assert!(err.contains("expected f64"), "{err}");

        let bad = MINIMAL.replace("\"steps\": 10", "\"stepz\": 10");
        assert!(SceneConfig::from_json(&bad).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut scene = SceneConfig::from_json(MINIMAL).unwrap();
        scene.collision.interval = 0;
        assert!(scene.validate().is_err());
        let mut scene = SceneConfig::from_json(MINIMAL).unwrap();
        scene.dt = 0.0;
        assert!(scene.validate().is_err());
        let mut scene = SceneConfig::from_json(MINIMAL).unwrap();
        scene.meshes[0].oriented = false;
        assert!(scene.validate().is_err());
    }

    #[test]
    fn pins_and_masses() {
        let scene = SceneConfig::from_json(MINIMAL).unwrap();
        let ball = scene.meshes[0].build().unwrap();
        assert!((0..ball.vertex_count()).all(|v| ball.is_pinned(v)));
        let sheet = scene.meshes[1].build().unwrap();
        assert!(sheet.is_pinned(0) && sheet.is_pinned(4) && !sheet.is_pinned(1));
        // total mass of the free vertices plus pinned shares equals area * density
        let total = lumped_masses(&sheet, 2.0).iter().sum::<f64>();
        assert_close!(total, 2.0, 1e-12);

        let mut boundary = scene.meshes[1].clone();
        boundary.pinned = PinSpec::Keyword(PinKeyword::Boundary);
        let sheet = boundary.build().unwrap();
        let pinned = (0..sheet.vertex_count()).filter(|&v| sheet.is_pinned(v)).count();
        assert_eq!(pinned, 16);
    }

    #[test]
    fn collision_schedule() {
        let s = CollisionSchedule { enabled: true, interval: 8, start_step: 10 };
        assert!(!s.is_due(8));
        assert!(s.is_due(16));
        assert!(!s.is_due(17));
        let off = CollisionSchedule { enabled: false, ..s };
        assert!(!off.is_due(16));
    }
}
