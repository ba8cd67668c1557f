//! Triangle meshes: storage, validation, OBJ IO, derived topology and a few
//! geometric queries.
//!
//! Winding convention: a face `[a, b, c]` is counterclockwise when viewed from
//! its front side, so the front normal is `normalize((b - a) x (c - a))`.

mod obj;
pub mod primitives;
mod topology;

use std::sync::Arc;

use nalgebra::Vector3;
use thiserror::Error;

pub use obj::{load_obj, read_obj, save_obj, write_obj, LoadOptions};
pub use topology::{Adjacency, EdgeSet, VertexRings};

/// 3-vector in meters (positions, displacements) or unitless (normals).
pub type Vec3 = Vector3<f64>;

/// Faces with area below this value (m²) are rejected.
pub const AREA_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: non-triangular face ({count} vertices)")]
    NonTriangularFace { line: usize, count: usize },
    #[error("face {face}: vertex index {index} out of range ({vertex_count} vertices)")]
    IndexOutOfRange {
        face: usize,
        index: i64,
        vertex_count: usize,
    },
    #[error("face {face} repeats a vertex index")]
    RepeatedIndex { face: usize },
    #[error("face {face} is degenerate (area {area:e} m²)")]
    DegenerateFace { face: usize, area: f64 },
    #[error("vertex {vertex} has invalid mass {mass}")]
    InvalidMass { vertex: usize, mass: f64 },
    #[error("expected {expected} per-vertex values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("mesh is not closed ({open_edges} edges without exactly two incident faces)")]
    OpenMesh { open_edges: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A triangle mesh with per-vertex masses and an orientation flag.
///
/// Connectivity and masses are shared between copies; moving the mesh means
/// building a new one with [`TriangleMesh::with_vertices`].
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    name: String,
    vertices: Vec<Vec3>,
    faces: Arc<[[usize; 3]]>,
    masses: Arc<[f64]>,
    oriented: bool,
}

impl TriangleMesh {
    /// Builds a mesh with unit masses and no orientation.
    pub fn new(
        name: impl Into<String>,
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        let n = vertices.len();
        for (f, face) in faces.iter().enumerate() {
            for &i in face {
                if i >= n {
                    return Err(MeshError::IndexOutOfRange {
                        face: f,
                        index: i as i64,
                        vertex_count: n,
                    });
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(MeshError::RepeatedIndex { face: f });
            }
            let area = triangle_area(&vertices[face[0]], &vertices[face[1]], &vertices[face[2]]);
            if !(area >= AREA_TOLERANCE) {
                return Err(MeshError::DegenerateFace { face: f, area });
            }
        }
        Ok(Self {
            name: name.into(),
            masses: vec![1.0; n].into(),
            vertices,
            faces: faces.into(),
            oriented: false,
        })
    }

    pub fn with_oriented(mut self, oriented: bool) -> Self {
        self.oriented = oriented;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_uniform_mass(self, mass: f64) -> Result<Self, MeshError> {
        let n = self.vertices.len();
        self.with_masses(vec![mass; n])
    }

    /// Replaces the per-vertex masses. `f64::INFINITY` marks a pinned vertex.
    pub fn with_masses(mut self, masses: Vec<f64>) -> Result<Self, MeshError> {
        if masses.len() != self.vertices.len() {
            return Err(MeshError::LengthMismatch {
                expected: self.vertices.len(),
                got: masses.len(),
            });
        }
        if let Some((vertex, &mass)) = masses.iter().enumerate().find(|(_, m)| !(**m > 0.0)) {
            return Err(MeshError::InvalidMass { vertex, mass });
        }
        self.masses = masses.into();
        Ok(self)
    }

    /// Pins the listed vertices (infinite mass).
    pub fn with_pinned(self, pinned: &[usize]) -> Result<Self, MeshError> {
        let mut masses = self.masses.to_vec();
        for &v in pinned {
            if v >= masses.len() {
                return Err(MeshError::IndexOutOfRange {
                    face: usize::MAX,
                    index: v as i64,
                    vertex_count: masses.len(),
                });
            }
            masses[v] = f64::INFINITY;
        }
        self.with_masses(masses)
    }

    /// Same connectivity, masses and flags at new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self, MeshError> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::LengthMismatch {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        Ok(Self {
            name: self.name.clone(),
            vertices,
            faces: Arc::clone(&self.faces),
            masses: Arc::clone(&self.masses),
            oriented: self.oriented,
        })
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        let vertices = self.vertices.iter().map(|v| v + offset).collect();
        self.with_vertices(vertices).expect("same vertex count")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    /// Moves vertices in place; faces are not re-validated.
    pub fn vertices_mut(&mut self) -> &mut [Vec3] {
        &mut self.vertices
    }

    pub fn into_vertices(self) -> Vec<Vec3> {
        self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn is_oriented(&self) -> bool {
        self.oriented
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_pinned(&self, v: usize) -> bool {
        self.masses[v].is_infinite()
    }

    /// Inverse masses, zero for pinned vertices.
    pub fn inverse_masses(&self) -> Vec<f64> {
        self.masses.iter().map(|&m| inverse_mass(m)).collect()
    }

    pub fn face_positions(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unit front-face normal of `face`.
    pub fn face_normal(&self, face: usize) -> Result<Vec3, MeshError> {
        let [a, b, c] = self.face_positions(face);
        triangle_normal(&a, &b, &c).ok_or_else(|| MeshError::DegenerateFace {
            face,
            area: triangle_area(&a, &b, &c),
        })
    }

    pub fn face_centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.face_positions(face);
        (a + b + c) / 3.0
    }

    /// Signed enclosed volume; positive when faces wind outward.
    pub fn enclosed_volume(&self) -> Result<f64, MeshError> {
        let edges = EdgeSet::build(self.faces());
        let open_edges = edges.incidence().iter().filter(|f| f.len() != 2).count();
        if open_edges > 0 {
            return Err(MeshError::OpenMesh { open_edges });
        }
        Ok(signed_volume(&self.vertices, &self.faces))
    }

    /// Mean of the vertex positions.
    pub fn centroid(&self) -> Vec3 {
        centroid(&self.vertices)
    }
}

pub fn inverse_mass(mass: f64) -> f64 {
    if mass.is_infinite() {
        0.0
    } else {
        1.0 / mass
    }
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Unit normal of the counterclockwise triangle `abc`, or `None` below
/// [`AREA_TOLERANCE`].
pub fn triangle_normal(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<Vec3> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if 0.5 * len >= AREA_TOLERANCE {
        Some(n / len)
    } else {
        None
    }
}

/// Divergence-theorem volume: sum of signed tetrahedra against the origin.
pub fn signed_volume(positions: &[Vec3], faces: &[[usize; 3]]) -> f64 {
    faces
        .iter()
        .map(|&[a, b, c]| positions[a].dot(&positions[b].cross(&positions[c])))
        .sum::<f64>()
        / 6.0
}

pub fn centroid(positions: &[Vec3]) -> Vec3 {
    if positions.is_empty() {
        return Vec3::zeros();
    }
    positions.iter().sum::<Vec3>() / positions.len() as f64
}
