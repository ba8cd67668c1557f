use std::collections::{BTreeMap, VecDeque};

/// Deduplicated undirected edges with their incident faces.
///
/// Edges are stored as `[lo, hi]` sorted lexicographically, so edge indices
/// are a pure function of the face list.
#[derive(Debug, Clone)]
pub struct EdgeSet {
    edges: Vec<[usize; 2]>,
    incidence: Vec<Vec<usize>>,
}

impl EdgeSet {
    pub fn build(faces: &[[usize; 3]]) -> Self {
        let mut map: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for (f, &[a, b, c]) in faces.iter().enumerate() {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                map.entry([u.min(v), u.max(v)]).or_default().push(f);
            }
        }
        let (edges, incidence) = map.into_iter().unzip();
        Self { edges, incidence }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> [usize; 2] {
        self.edges[i]
    }

    /// Faces incident to each edge, parallel to [`EdgeSet::edges`].
    pub fn incidence(&self) -> &[Vec<usize>] {
        &self.incidence
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&e| self.incidence[e].len() == 1)
    }

    /// Edges shared by more than two faces.
    pub fn non_manifold_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&e| self.incidence[e].len() > 2)
    }

    pub fn is_closed(&self) -> bool {
        self.incidence.iter().all(|f| f.len() == 2)
    }
}

/// One-ring vertex adjacency (sorted neighbor lists).
#[derive(Debug, Clone)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn from_faces(faces: &[[usize; 3]], vertex_count: usize) -> Self {
        let edges = EdgeSet::build(faces);
        Self::from_edges(vertex_count, edges.edges())
    }

    pub fn from_edges(vertex_count: usize, edges: &[[usize; 2]]) -> Self {
        let mut neighbors = vec![Vec::new(); vertex_count];
        for &[a, b] in edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Self { neighbors }
    }

    pub fn vertex_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    /// Multi-source BFS distances, `None` beyond `max_rings`.
    pub fn ring_distances(&self, sources: &[usize], max_rings: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.neighbors.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v].expect("queued vertices have a distance");
            if d == max_rings {
                continue;
            }
            for &w in &self.neighbors[v] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Sorted vertices within `k` edges of `v`, including `v`.
    pub fn ring(&self, v: usize, k: usize) -> Vec<usize> {
        self.ring_distances(&[v], k)
            .iter()
            .enumerate()
            .filter_map(|(w, d)| d.map(|_| w))
            .collect()
    }
}

/// k-ring of every vertex.
#[derive(Debug, Clone)]
pub struct VertexRings {
    k: usize,
    rings: Vec<Vec<usize>>,
}

impl VertexRings {
    pub fn new(adjacency: &Adjacency, k: usize) -> Self {
        let rings = (0..adjacency.vertex_count())
            .map(|v| adjacency.ring(v, k))
            .collect();
        Self { k, rings }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ring(&self, v: usize) -> &[usize] {
        &self.rings[v]
    }
}
