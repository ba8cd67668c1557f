//! Discrete edge-face collision detection between two static meshes.
//!
//! Face boxes (inflated by `ε_box`) go into a [`Bvh`]; each edge box queries
//! it and surviving pairs run the exact segment/triangle test. A brute-force
//! all-pairs scan with the same exact test is kept alongside as the oracle.
//!
//! Coplanar edge-in-face overlap is not reported as a crossing.

mod aabb;
mod bvh;
mod intersect;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{EdgeSet, TriangleMesh, Vec3};

pub use aabb::Aabb;
pub use bvh::Bvh;
pub use intersect::{segment_triangle_intersect, segment_triangle_intersect_with, SegmentHit};

#[derive(Debug, Error)]
pub enum DcdError {
    #[error("cannot build a BVH over zero primitives")]
    EmptyBvh,
}

/// Identifies one of the meshes taking part in a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeshId(pub u32);

/// Slack used by detection. Defaults: box 1e-6 m, barycentric 1e-9,
/// parametric 1e-9.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub box_inflation: f64,
    pub barycentric: f64,
    pub parametric: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            box_inflation: 1e-6,
            barycentric: 1e-9,
            parametric: 1e-9,
        }
    }
}

/// One edge crossing one face.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeFaceIntersection {
    pub edge_mesh: MeshId,
    /// Index into the edge mesh's [`EdgeSet`].
    pub edge: usize,
    pub edge_vertices: [usize; 2],
    pub face_mesh: MeshId,
    pub face: usize,
    /// Position along the edge, from `edge_vertices[0]` to `edge_vertices[1]`.
    pub t: f64,
    pub barycentric: [f64; 3],
    pub point: Vec3,
}

/// A mesh taking part in detection, with its cached edge set.
#[derive(Debug, Clone, Copy)]
pub struct MeshRef<'a> {
    pub id: MeshId,
    pub mesh: &'a TriangleMesh,
    pub edges: &'a EdgeSet,
}

/// All crossings of `edge_mesh` edges through `face_mesh` faces, with mesh
/// ids 0 and 1 and default tolerances.
pub fn find_intersections(edge_mesh: &TriangleMesh, face_mesh: &TriangleMesh) -> Vec<EdgeFaceIntersection> {
    let edges = EdgeSet::build(edge_mesh.faces());
    let face_edges = EdgeSet::build(face_mesh.faces());
    find_intersections_with(
        MeshRef { id: MeshId(0), mesh: edge_mesh, edges: &edges },
        MeshRef { id: MeshId(1), mesh: face_mesh, edges: &face_edges },
        &Tolerances::default(),
    )
}

/// BVH-accelerated edge/face crossings, sorted by `(edge, face)`.
pub fn find_intersections_with(
    edge_side: MeshRef<'_>,
    face_side: MeshRef<'_>,
    tol: &Tolerances,
) -> Vec<EdgeFaceIntersection> {
    let face_mesh = face_side.mesh;
    if face_mesh.face_count() == 0 || edge_side.edges.is_empty() {
        return Vec::new();
    }
    let boxes: Vec<Aabb> = (0..face_mesh.face_count())
        .map(|f| Aabb::from_points(&face_mesh.face_positions(f)).inflated(tol.box_inflation))
        .collect();
    let bvh = Bvh::build(&boxes).expect("non-empty face list");
    let positions = edge_side.mesh.vertices();

    edge_side
        .edges
        .edges()
        .par_iter()
        .enumerate()
        .flat_map_iter(|(e, &[u, v])| {
            let query = Aabb::from_points([&positions[u], &positions[v]]).inflated(tol.box_inflation);
            let mut candidates = Vec::new();
            bvh.query(&query, |f| candidates.push(f));
            candidates.sort_unstable();
            candidates
                .into_iter()
                .filter_map(move |f| edge_face_test(edge_side, e, face_side, f, tol))
        })
        .collect()
}

/// Exhaustive all-pairs scan; the reference for [`find_intersections_with`].
pub fn find_intersections_brute_force(
    edge_side: MeshRef<'_>,
    face_side: MeshRef<'_>,
    tol: &Tolerances,
) -> Vec<EdgeFaceIntersection> {
    let mut out = Vec::new();
    for e in 0..edge_side.edges.len() {
        for f in 0..face_side.mesh.face_count() {
            if let Some(hit) = edge_face_test(edge_side, e, face_side, f, tol) {
                out.push(hit);
            }
        }
    }
    out
}

/// Crossings between edges and faces of the same mesh that share no vertex.
/// Used for reporting only.
pub fn find_self_intersections(mesh: MeshRef<'_>, tol: &Tolerances) -> Vec<EdgeFaceIntersection> {
    find_intersections_with(mesh, mesh, tol)
        .into_iter()
        .filter(|hit| {
            let face = mesh.mesh.faces()[hit.face];
            !hit.edge_vertices.iter().any(|v| face.contains(v))
        })
        .collect()
}

fn edge_face_test(
    edge_side: MeshRef<'_>,
    edge: usize,
    face_side: MeshRef<'_>,
    face: usize,
    tol: &Tolerances,
) -> Option<EdgeFaceIntersection> {
    let [u, v] = edge_side.edges.edge(edge);
    let positions = edge_side.mesh.vertices();
    let (p, q) = (positions[u], positions[v]);
    let [a, b, c] = face_side.mesh.face_positions(face);
    let hit = segment_triangle_intersect_with(&p, &q, &a, &b, &c, tol)?;
    Some(EdgeFaceIntersection {
        edge_mesh: edge_side.id,
        edge,
        edge_vertices: [u, v],
        face_mesh: face_side.id,
        face,
        t: hit.t,
        barycentric: hit.barycentric,
        point: hit.point_on_segment(&p, &q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    fn single_edge_mesh() -> TriangleMesh {
        // a thin triangle whose long edge pierces the unit triangle at (0.25, 0.25, 0)
        TriangleMesh::new(
            "needle",
            vec![
                Vec3::new(0.25, 0.25, -1.0),
                Vec3::new(0.25, 0.25, 1.0),
                Vec3::new(3.0, 3.0, 1.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    fn unit_triangle() -> TriangleMesh {
        TriangleMesh::new(
            "floor",
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap()
        .with_oriented(true)
    }

    #[test]
    fn disjoint_spheres_have_no_crossings() {
        let a = primitives::icosphere(1.0, 2);
        let b = a.translated(Vec3::new(3.0, 0.0, 0.0)).with_oriented(true);
        assert!(find_intersections(&a, &b).is_empty());
    }

    #[test]
    fn piercing_edge_gives_one_record() {
        let hits = find_intersections(&single_edge_mesh(), &unit_triangle());
        assert_eq!(hits.len(), 1);
        let h = &hits[0];
        assert_eq!(h.edge_vertices, [0, 1]);
        assert_eq!((h.edge_mesh, h.face_mesh, h.face), (MeshId(0), MeshId(1), 0));
        assert_close!(h.t, 0.5, 1e-12);
        assert!((h.point - Vec3::new(0.25, 0.25, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn overlapping_icospheres_match_brute_force() {
        let a = primitives::icosphere(1.0, 2);
        let b = primitives::icosphere(1.0, 2)
            .translated(Vec3::new(1.6, 0.1, 0.05))
            .with_oriented(true);
        let (ea, eb) = (EdgeSet::build(a.faces()), EdgeSet::build(b.faces()));
        let tol = Tolerances::default();
        let ra = MeshRef { id: MeshId(0), mesh: &a, edges: &ea };
        let rb = MeshRef { id: MeshId(1), mesh: &b, edges: &eb };
        let fast = find_intersections_with(ra, rb, &tol);
        let slow = find_intersections_brute_force(ra, rb, &tol);
        assert!(!fast.is_empty());
        assert_eq!(fast, slow);
    }

    #[test]
    fn self_intersections_skip_adjacent_faces() {
        let sphere = primitives::icosphere(1.0, 1);
        let edges = EdgeSet::build(sphere.faces());
        let r = MeshRef { id: MeshId(0), mesh: &sphere, edges: &edges };
        assert!(find_self_intersections(r, &Tolerances::default()).is_empty());
    }

    #[test]
    fn records_serialize_as_json() {
        let hits = find_intersections(&single_edge_mesh(), &unit_triangle());
        let json = serde_json::to_value(&hits[0]).unwrap();
        assert_eq!(json["edge_mesh"], 0);
        assert_eq!(json["point"].as_array().unwrap().len(), 3);
    }
}
