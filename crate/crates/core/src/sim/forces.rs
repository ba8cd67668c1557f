use super::SimError;
use crate::mesh::{signed_volume, EdgeSet, TriangleMesh, Vec3};

/// Hooke spring with axial damping; the force acting on `xi`.
pub fn spring_force(xi: &Vec3, xj: &Vec3, vi: &Vec3, vj: &Vec3, rest: f64, stiffness: f64, damping: f64) -> Vec3 {
    let d = xj - xi;
    let len = d.norm();
    if len == 0.0 {
        return Vec3::zeros();
    }
    let axis = d / len;
    let stretch = stiffness * (len - rest);
    let rate = damping * (vj - vi).dot(&axis);
    axis * (stretch + rate)
}

/// Internal gas pressure `p = c / V` pushing every face outward with
/// `p · area · n`, split evenly over the face's vertices.
pub fn pressure_force(mesh: &TriangleMesh, positions: &[Vec3], coefficient: f64) -> Result<Vec<Vec3>, SimError> {
    let edges = EdgeSet::build(mesh.faces());
    let open_edges = edges.incidence().iter().filter(|f| f.len() != 2).count();
    if open_edges > 0 {
        return Err(crate::mesh::MeshError::OpenMesh { open_edges }.into());
    }
    pressure_force_closed(mesh.faces(), positions, coefficient)
}

/// [`pressure_force`] without the closedness check.
pub(crate) fn pressure_force_closed(
    faces: &[[usize; 3]],
    positions: &[Vec3],
    coefficient: f64,
) -> Result<Vec<Vec3>, SimError> {
    let volume = signed_volume(positions, faces);
    if !(volume > 0.0) {
        return Err(SimError::Invalid(format!("pressurized mesh has non-positive volume {volume}")));
    }
    let p = coefficient / volume;
    let mut forces = vec![Vec3::zeros(); positions.len()];
    for &[a, b, c] in faces {
        // |cross| / 2 is the area and cross / |cross| the normal
        let f = (positions[b] - positions[a]).cross(&(positions[c] - positions[a])) * (p / 6.0);
        forces[a] += f;
        forces[b] += f;
        forces[c] += f;
    }
    Ok(forces)
}
