//! Penetration stencils: which vertices sit on the wrong side of a crossed
//! oriented face, and how the resulting constraints group into impact zones.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::dcd::{EdgeFaceIntersection, MeshId};
use crate::mesh::{MeshError, TriangleMesh, Vec3};

#[derive(Debug, Error)]
pub enum StencilError {
    #[error("face {face} of mesh {} is not on an oriented mesh", mesh.0)]
    UnorientedFace { mesh: MeshId, face: usize },
    #[error("mesh {} is not part of this query", .0 .0)]
    UnknownMesh(MeshId),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// A vertex of one of the participating meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VertexKey {
    pub mesh: MeshId,
    pub vertex: usize,
}

impl VertexKey {
    pub fn new(mesh: MeshId, vertex: usize) -> Self {
        Self { mesh, vertex }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VertexLegality {
    /// Front side of every crossed face it was tested against.
    Legal,
    /// Back side of at least one crossed face.
    Illegal,
    /// Not an endpoint of any crossing edge.
    Unknown,
}

/// Per-vertex legality for one detection pass.
#[derive(Debug, Clone, Default)]
pub struct LegalityMap {
    verdicts: BTreeMap<VertexKey, VertexLegality>,
}

impl LegalityMap {
    pub fn get(&self, key: VertexKey) -> VertexLegality {
        self.verdicts.get(&key).copied().unwrap_or(VertexLegality::Unknown)
    }

    pub fn illegal(&self) -> impl Iterator<Item = VertexKey> + '_ {
        self.verdicts
            .iter()
            .filter(|(_, v)| **v == VertexLegality::Illegal)
            .map(|(k, _)| *k)
    }

    pub fn illegal_count(&self) -> usize {
        self.illegal().count()
    }

    pub fn classified(&self) -> impl Iterator<Item = (VertexKey, VertexLegality)> + '_ {
        self.verdicts.iter().map(|(k, v)| (*k, *v))
    }
}

/// Apex `x0` behind the oriented face `x1 x2 x3`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenetrationStencil {
    pub apex: VertexKey,
    pub face_mesh: MeshId,
    pub face: usize,
    pub face_vertices: [usize; 3],
    /// Face normal when the stencil was built; held fixed afterwards.
    pub normal: Vec3,
    /// `n · (x0 - centroid)`, negative.
    pub distance: f64,
}

impl PenetrationStencil {
    /// Apex first, then the three face vertices.
    pub fn vertices(&self) -> [VertexKey; 4] {
        let [a, b, c] = self.face_vertices;
        [
            self.apex,
            VertexKey::new(self.face_mesh, a),
            VertexKey::new(self.face_mesh, b),
            VertexKey::new(self.face_mesh, c),
        ]
    }

    fn dedup_key(&self) -> (VertexKey, MeshId, [usize; 3]) {
        let mut face = self.face_vertices;
        face.sort_unstable();
        (self.apex, self.face_mesh, face)
    }
}

/// Stencils connected through shared vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactZone {
    pub stencils: Vec<PenetrationStencil>,
    /// Sorted union of all stencil vertices.
    pub support: Vec<VertexKey>,
}

fn mesh_of<'a>(meshes: &[&'a TriangleMesh], id: MeshId) -> Result<&'a TriangleMesh, StencilError> {
    meshes
        .get(id.0 as usize)
        .copied()
        .ok_or(StencilError::UnknownMesh(id))
}

/// Signed distances of both edge endpoints to the plane of the crossed face.
fn endpoint_heights(
    hit: &EdgeFaceIntersection,
    meshes: &[&TriangleMesh],
) -> Result<(Vec3, [f64; 2]), StencilError> {
    let face_mesh = mesh_of(meshes, hit.face_mesh)?;
    let edge_mesh = mesh_of(meshes, hit.edge_mesh)?;
    let normal = face_mesh.face_normal(hit.face)?;
    let centroid = face_mesh.face_centroid(hit.face);
    let heights = hit
        .edge_vertices
        .map(|v| normal.dot(&(edge_mesh.vertices()[v] - centroid)));
    Ok((normal, heights))
}

/// Legal/Illegal verdicts for every endpoint of a crossing edge. A vertex
/// behind any face it crosses is Illegal, whatever the other faces say.
///
/// `meshes` is indexed by [`MeshId`].
pub fn classify_vertices(
    intersections: &[EdgeFaceIntersection],
    meshes: &[&TriangleMesh],
) -> Result<LegalityMap, StencilError> {
    let mut map = LegalityMap::default();
    for hit in intersections {
        let (_, heights) = endpoint_heights(hit, meshes)?;
        for (&v, h) in hit.edge_vertices.iter().zip(heights) {
            let verdict = if h < 0.0 {
                VertexLegality::Illegal
            } else {
                VertexLegality::Legal
            };
            let slot = map
                .verdicts
                .entry(VertexKey::new(hit.edge_mesh, v))
                .or_insert(verdict);
            if verdict == VertexLegality::Illegal {
                *slot = VertexLegality::Illegal;
            }
        }
    }
    Ok(map)
}

/// One stencil per (back-side endpoint, crossed face), exact duplicates
/// dropped, in intersection order.
pub fn build_stencils(
    intersections: &[EdgeFaceIntersection],
    meshes: &[&TriangleMesh],
) -> Result<Vec<PenetrationStencil>, StencilError> {
    let mut seen = HashSet::new();
    let mut stencils = Vec::new();
    for hit in intersections {
        let face_mesh = mesh_of(meshes, hit.face_mesh)?;
        if !face_mesh.is_oriented() {
            return Err(StencilError::UnorientedFace {
                mesh: hit.face_mesh,
                face: hit.face,
            });
        }
        let (normal, heights) = endpoint_heights(hit, meshes)?;
        for (&v, distance) in hit.edge_vertices.iter().zip(heights) {
            if !(distance < 0.0) {
                continue;
            }
            let stencil = PenetrationStencil {
                apex: VertexKey::new(hit.edge_mesh, v),
                face_mesh: hit.face_mesh,
                face: hit.face,
                face_vertices: face_mesh.faces()[hit.face],
                normal,
                distance,
            };
            if seen.insert(stencil.dedup_key()) {
                stencils.push(stencil);
            }
        }
    }
    Ok(stencils)
}

/// Groups stencils sharing any vertex. Zones come out ordered by their
/// smallest vertex key; stencils keep their input order.
pub fn partition_impact_zones(stencils: &[PenetrationStencil]) -> Vec<ImpactZone> {
    let mut ids: BTreeMap<VertexKey, usize> = BTreeMap::new();
    for s in stencils {
        for key in s.vertices() {
            let next = ids.len();
            ids.entry(key).or_insert(next);
        }
    }
    let mut sets = DisjointSets::new(ids.len());
    for s in stencils {
        let [first, rest @ ..] = s.vertices().map(|k| ids[&k]);
        for other in rest {
            sets.union(first, other);
        }
    }

    // BTreeMap iteration is key-ordered, so each root first appears at its
    // smallest key.
    let mut zone_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut zones: Vec<ImpactZone> = Vec::new();
    for (&key, &id) in &ids {
        let root = sets.find(id);
        let zone = *zone_of_root.entry(root).or_insert_with(|| {
            zones.push(ImpactZone {
                stencils: Vec::new(),
                support: Vec::new(),
            });
            zones.len() - 1
        });
        zones[zone].support.push(key);
    }
    for s in stencils {
        let root = sets.find(ids[&s.apex]);
        zones[zone_of_root[&root]].stencils.push(s.clone());
    }
    zones
}

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcd::find_intersections;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn floor() -> TriangleMesh {
        TriangleMesh::new(
            "floor",
            vec![Vec3::new(-1., -1., 0.), Vec3::new(2., -1., 0.), Vec3::new(-1., 2., 0.)],
            vec![[0, 1, 2]],
        )
        .unwrap()
        .with_oriented(true)
    }

    /// Triangle whose edge 0-1 stands vertically through the floor.
    fn post(bottom: f64, top: f64) -> TriangleMesh {
        TriangleMesh::new(
            "post",
            vec![
                Vec3::new(0.2, 0.2, bottom),
                Vec3::new(0.2, 0.2, top),
                Vec3::new(5.0, 0.2, top),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn lower_endpoint_is_illegal() {
        let (edge, face) = (post(-1.0, 1.0), floor());
        let hits = find_intersections(&edge, &face);
        let map = classify_vertices(&hits, &[&edge, &face]).unwrap();
        assert_eq!(map.get(VertexKey::new(MeshId(0), 0)), VertexLegality::Illegal);
        assert_eq!(map.get(VertexKey::new(MeshId(0), 1)), VertexLegality::Legal);
        assert_eq!(map.get(VertexKey::new(MeshId(0), 2)), VertexLegality::Unknown);
    }

    #[test]
    fn single_crossing_gives_single_stencil() {
        let (edge, face) = (post(-0.4, 1.0), floor());
        let hits = find_intersections(&edge, &face);
        let stencils = build_stencils(&hits, &[&edge, &face]).unwrap();
        assert_eq!(stencils.len(), 1);
        let s = &stencils[0];
        assert_eq!(s.apex, VertexKey::new(MeshId(0), 0));
        assert_eq!(s.normal, Vec3::z());
        assert_close!(s.distance, -0.4, 1e-12);
    }

    #[test]
    fn unoriented_face_is_rejected() {
        let (edge, face) = (post(-1.0, 1.0), floor().with_oriented(false));
        let hits = find_intersections(&edge, &face);
        assert!(matches!(
            build_stencils(&hits, &[&edge, &face]),
            Err(StencilError::UnorientedFace { .. })
        ));
    }

    #[test]
    fn shared_back_vertex_collapses_to_one_stencil() {
        // Un-oriented face with one vertex under the oriented floor: both of
        // its edges to that vertex cross the floor, producing the same stencil.
        let tent = TriangleMesh::new(
            "tent",
            vec![
                Vec3::new(0.2, 0.2, -0.5),
                Vec3::new(0.0, 0.6, 0.5),
                Vec3::new(0.6, 0.0, 0.5),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let face = floor();
        let hits = find_intersections(&tent, &face);
        assert_eq!(hits.len(), 2);
        let stencils = build_stencils(&hits, &[&tent, &face]).unwrap();
        assert_eq!(stencils.len(), 1);
        assert_eq!(stencils[0].apex.vertex, 0);
    }

    #[test]
    fn conflicting_verdicts_resolve_to_illegal() {
        // Roof of two oriented slopes meeting at a ridge; the probe edge runs
        // under the ridge and crosses both. Each endpoint is in front of one
        // slope and behind the other.
        let wedge = TriangleMesh::new(
            "wedge",
            vec![
                Vec3::new(0.0, -2.0, 0.0),
                Vec3::new(0.0, 2.0, 0.0),
                Vec3::new(-1.0, -2.0, -1.0),
                Vec3::new(-1.0, 2.0, -1.0),
                Vec3::new(1.0, -2.0, -1.0),
                Vec3::new(1.0, 2.0, -1.0),
            ],
            // left slope faces up-left, right slope faces up-right
            vec![[0, 3, 2], [0, 1, 3], [0, 5, 1], [0, 4, 5]],
        )
        .unwrap()
        .with_oriented(true);
        let probe = TriangleMesh::new(
            "probe",
            vec![
                Vec3::new(-0.8, 0.3, -0.5),
                Vec3::new(0.9, 0.3, -0.5),
                Vec3::new(0.0, 0.5, 3.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let hits = find_intersections(&probe, &wedge);
        let crossing_edge: Vec<_> = hits.iter().filter(|h| h.edge_vertices == [0, 1]).collect();
        assert_eq!(crossing_edge.len(), 2, "{hits:?}");
        let map = classify_vertices(&hits, &[&probe, &wedge]).unwrap();
        // each endpoint is legal for one slope and illegal for the other
        assert_eq!(map.get(VertexKey::new(MeshId(0), 0)), VertexLegality::Illegal);
        assert_eq!(map.get(VertexKey::new(MeshId(0), 1)), VertexLegality::Illegal);
        let stencils = build_stencils(&hits, &[&probe, &wedge]).unwrap();
        for s in &stencils {
            assert_eq!(map.get(s.apex), VertexLegality::Illegal);
            assert!(s.distance < 0.0);
        }
    }

    fn stencil(apex: usize, face: [usize; 3]) -> PenetrationStencil {
        PenetrationStencil {
            apex: VertexKey::new(MeshId(0), apex),
            face_mesh: MeshId(1),
            face: 0,
            face_vertices: face,
            normal: Vec3::z(),
            distance: -1.0,
        }
    }

    #[test]
    fn sharing_a_face_vertex_merges_zones() {
        let zones = partition_impact_zones(&[stencil(0, [0, 1, 2]), stencil(1, [2, 3, 4])]);
        assert_eq!(zones.len(), 1);
        assert_eq!(zones[0].stencils.len(), 2);
        assert_eq!(zones[0].support.len(), 7);
    }

    #[test]
    fn disjoint_stencils_stay_apart() {
        let zones = partition_impact_zones(&[stencil(5, [3, 4, 5]), stencil(1, [0, 1, 2])]);
        assert_eq!(zones.len(), 2);
        // ordered by smallest vertex key: apex 1 of mesh 0 comes first
        assert_eq!(zones[0].stencils[0].apex.vertex, 1);
        assert_eq!(zones[1].stencils[0].apex.vertex, 5);
    }

    /// Components of the stencil graph (edge = shared vertex) by BFS.
    fn bfs_components(stencils: &[PenetrationStencil]) -> Vec<Vec<usize>> {
        let n = stencils.len();
        let shares = |i: usize, j: usize| {
            let vi = stencils[i].vertices();
            stencils[j].vertices().iter().any(|k| vi.contains(k))
        };
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                for j in 0..n {
                    if !seen[j] && shares(i, j) {
                        seen[j] = true;
                        comp.push(j);
                        queue.push_back(j);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps.sort();
        comps
    }

    #[test]
    fn zones_match_bfs_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let count = rng.gen_range(1..=200);
            let pool = rng.gen_range(10..400);
            let stencils: Vec<PenetrationStencil> = (0..count)
                .map(|_| {
                    let mut face = [0; 3];
                    loop {
                        face = face.map(|_| rng.gen_range(0..pool));
                        if face[0] != face[1] && face[1] != face[2] && face[0] != face[2] {
                            break;
                        }
                    }
                    stencil(rng.gen_range(0..pool), face)
                })
                .collect();
            let zones = partition_impact_zones(&stencils);
            let expected = bfs_components(&stencils);
            let supports: Vec<HashSet<VertexKey>> =
                zones.iter().map(|z| z.support.iter().copied().collect()).collect();
            for comp in &expected {
                let keys: HashSet<VertexKey> =
                    comp.iter().flat_map(|&i| stencils[i].vertices()).collect();
                assert!(supports.contains(&keys));
            }
            assert_eq!(zones.len(), expected.len());
            // partition: pairwise vertex-disjoint, every stencil placed once
            let total: usize = zones.iter().map(|z| z.stencils.len()).sum();
            assert_eq!(total, stencils.len());
            for (i, a) in supports.iter().enumerate() {
                for b in &supports[i + 1..] {
                    assert!(a.is_disjoint(b));
                }
            }
            // ordering by smallest key
            for w in zones.windows(2) {
                assert!(w[0].support[0] < w[1].support[0]);
            }
        }
    }
}
