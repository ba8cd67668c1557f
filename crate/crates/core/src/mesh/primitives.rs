//! Procedural meshes used by scenarios and test fixtures. All closed shapes
//! wind outward; the sheet faces +z.

use std::collections::HashMap;
use std::f64::consts::TAU;

use super::{TriangleMesh, Vec3};

fn build(name: &str, vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> TriangleMesh {
    TriangleMesh::new(name, vertices, faces).expect("primitive meshes are valid")
}

/// Axis-aligned cube spanning `[0, 1]³`, 12 triangles.
pub fn unit_cube() -> TriangleMesh {
    let vertices = (0..8)
        .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1],
        [4, 5, 7],
        [4, 7, 6],
        [0, 1, 5],
        [0, 5, 4],
        [2, 6, 7],
        [2, 7, 3],
        [0, 4, 6],
        [0, 6, 2],
        [1, 3, 7],
        [1, 7, 5],
    ];
    build("cube", vertices, faces)
}

/// Icosahedron refined `subdivisions` times, vertices projected onto the
/// sphere. Level 2 has 162 vertices and 320 faces.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut refined = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            refined.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = refined;
    }

    let vertices = vertices.into_iter().map(|v| v * radius).collect();
    build("icosphere", vertices, faces)
}

/// Torus around the z axis. `major_segments * minor_segments` vertices.
pub fn torus(
    major_radius: f64,
    minor_radius: f64,
    major_segments: usize,
    minor_segments: usize,
) -> TriangleMesh {
    let (nu, nv) = (major_segments, minor_segments);
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let phi = TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let theta = TAU * j as f64 / nv as f64;
            let ring = major_radius + minor_radius * theta.cos();
            vertices.push(Vec3::new(
                ring * phi.cos(),
                ring * phi.sin(),
                minor_radius * theta.sin(),
            ));
        }
    }
    let idx = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    build("torus", vertices, faces)
}

/// Flat rectangular sheet in the z = 0 plane centered at the origin, split
/// into `cells_x * cells_y` quads of two triangles each.
pub fn grid_sheet(cells_x: usize, cells_y: usize, width: f64, height: f64) -> TriangleMesh {
    let mut vertices = Vec::with_capacity((cells_x + 1) * (cells_y + 1));
    for j in 0..=cells_y {
        for i in 0..=cells_x {
            vertices.push(Vec3::new(
                width * (i as f64 / cells_x as f64 - 0.5),
                height * (j as f64 / cells_y as f64 - 0.5),
                0.0,
            ));
        }
    }
    let idx = |i: usize, j: usize| j * (cells_x + 1) + i;
    let mut faces = Vec::with_capacity(2 * cells_x * cells_y);
    for j in 0..cells_y {
        for i in 0..cells_x {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            // alternate the diagonal so the sheet has no preferred shear direction
            if (i + j) % 2 == 0 {
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            } else {
                faces.push([a, b, d]);
                faces.push([b, c, d]);
            }
        }
    }
    build("sheet", vertices, faces)
}

/// Closed cone with its base disk at z = 0 and apex at z = `height`.
/// Vertex 0 is the apex, vertex 1 the base center.
pub fn cone(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    let mut vertices = vec![Vec3::new(0.0, 0.0, height), Vec3::zeros()];
    for i in 0..segments {
        let a = TAU * i as f64 / segments as f64;
        vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), 0.0));
    }
    let rim = |i: usize| 2 + i % segments;
    let mut faces = Vec::with_capacity(2 * segments);
    for i in 0..segments {
        faces.push([rim(i), rim(i + 1), 0]);
        faces.push([1, rim(i + 1), rim(i)]);
    }
    build("cone", vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::EdgeSet;

    fn outward(mesh: &TriangleMesh) -> bool {
        let c = mesh.centroid();
        (0..mesh.face_count())
            .all(|f| mesh.face_normal(f).unwrap().dot(&(mesh.face_centroid(f) - c)) > 0.0)
    }

    #[test]
    fn closed_primitives_wind_outward() {
        for mesh in [unit_cube(), icosphere(1.0, 2), cone(0.5, 1.0, 16)] {
            assert!(EdgeSet::build(mesh.faces()).is_closed(), "{}", mesh.name());
            assert!(outward(&mesh), "{}", mesh.name());
            assert!(mesh.enclosed_volume().unwrap() > 0.0);
        }
        let t = torus(1.0, 0.3, 24, 24);
        assert_eq!(t.vertex_count(), 576);
        assert!(EdgeSet::build(t.faces()).is_closed());
        assert!(t.enclosed_volume().unwrap() > 0.0);
    }

    #[test]
    fn icosphere_counts() {
        let s = icosphere(2.0, 2);
        assert_eq!((s.vertex_count(), s.face_count()), (162, 320));
        assert!(s.vertices().iter().all(|v| (v.norm() - 2.0).abs() < 1e-12));
    }

    #[test]
    fn sheet_faces_up() {
        let s = grid_sheet(4, 3, 2.0, 1.0);
        assert_eq!(s.vertex_count(), 20);
        for f in 0..s.face_count() {
            assert_eq!(s.face_normal(f).unwrap(), Vec3::z());
        }
    }

    #[test]
    fn torus_volume_close_to_analytic() {
        let t = torus(1.0, 0.25, 48, 32);
        let exact = 2.0 * std::f64::consts::PI.powi(2) * 1.0 * 0.25f64.powi(2);
        let v = t.enclosed_volume().unwrap();
        assert!((v - exact).abs() / exact < 0.02, "{v} vs {exact}");
    }
}
