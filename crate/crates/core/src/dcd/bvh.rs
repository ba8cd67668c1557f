use super::{Aabb, DcdError};
use crate::mesh::Vec3;

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { primitive: usize },
    Internal { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

/// Binary bounding-volume hierarchy with one primitive per leaf.
///
/// Built top-down by splitting at the median centroid along the longest axis
/// of the centroid bounds. Node 0 is the root.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    primitive_count: usize,
}

impl Bvh {
    pub fn build(boxes: &[Aabb]) -> Result<Self, DcdError> {
        if boxes.is_empty() {
            return Err(DcdError::EmptyBvh);
        }
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        let centers: Vec<Vec3> = boxes.iter().map(Aabb::center).collect();
        let mut nodes = Vec::with_capacity(2 * boxes.len() - 1);
        build_node(&mut nodes, boxes, &centers, &mut order);
        Ok(Self {
            nodes,
            primitive_count: boxes.len(),
        })
    }

    pub fn primitive_count(&self) -> usize {
        self.primitive_count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Leaf { .. }))
            .count()
    }

    pub fn root_bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Calls `visit` for every primitive whose box overlaps `query`.
    pub fn query(&self, query: &Aabb, mut visit: impl FnMut(usize)) {
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if !node.bounds.overlaps(query) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { primitive } => visit(primitive),
                NodeKind::Internal { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
    }

    /// Primitives whose boxes contain `p`, ascending.
    pub fn query_point(&self, p: &Vec3) -> Vec<usize> {
        let mut hits = Vec::new();
        self.query(&Aabb::new(*p, *p), |i| hits.push(i));
        hits.sort_unstable();
        hits
    }

    /// Checks the structural invariants; used by tests.
    pub fn validate(&self) -> bool {
        let mut seen = vec![0usize; self.primitive_count];
        for node in &self.nodes {
            match node.kind {
                NodeKind::Leaf { primitive } => seen[primitive] += 1,
                NodeKind::Internal { left, right } => {
                    if !node.bounds.contains(&self.nodes[left].bounds)
                        || !node.bounds.contains(&self.nodes[right].bounds)
                    {
                        return false;
                    }
                }
            }
        }
        seen.iter().all(|&c| c == 1)
    }
}

fn build_node(nodes: &mut Vec<Node>, boxes: &[Aabb], centers: &[Vec3], order: &mut [usize]) -> usize {
    let bounds = order
        .iter()
        .fold(Aabb::empty(), |acc, &i| acc.union(&boxes[i]));
    let index = nodes.len();
    if let [primitive] = *order {
        nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf { primitive },
        });
        return index;
    }
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf { primitive: usize::MAX },
    });

    let axis = Aabb::from_points(order.iter().map(|&i| &centers[i])).longest_axis();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centers[a][axis]
            .total_cmp(&centers[b][axis])
            .then(a.cmp(&b))
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(nodes, boxes, centers, lo);
    let right = build_node(nodes, boxes, centers, hi);
    nodes[index].kind = NodeKind::Internal { left, right };
    index
}
