//! Bounding volume hierarchy over arbitrary primitives.
//!
//! The tree stores only primitive indices and boxes; exact distance and
//! intersection tests are supplied by the caller as closures, so the same
//! structure serves triangle meshes (closest point, ray parity) and strand
//! ribbons (occlusion rays).

use crate::math::{Aabb, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, first: usize, count: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    /// Builds a median-split tree from per-primitive boxes.
    pub fn build(boxes: &[Aabb]) -> Self {
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        let mut nodes = Vec::with_capacity(2 * boxes.len() / LEAF_SIZE + 1);
        if !boxes.is_empty() {
            build_node(boxes, &mut order, 0, boxes.len(), &mut nodes);
        }
        Self { nodes, order }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nearest primitive under a caller-supplied squared distance.
    ///
    /// `dist2(i)` must return the exact squared distance from the query to
    /// primitive `i`; the boxes are used only for pruning. Ties keep the
    /// lowest primitive index.
    pub fn nearest<F>(&self, query: &Vec3, mut dist2: F) -> Option<(usize, f64)>
    where
        F: FnMut(usize) -> f64,
    {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let bd = node.bounds().distance_squared(query);
            if let Some((_, bd_best)) = best {
                if bd > bd_best {
                    continue;
                }
            }
            match node {
                Node::Leaf { first, count, .. } => {
                    for &prim in &self.order[*first..*first + *count] {
                        let d = dist2(prim);
                        best = match best {
                            Some((bi, bdist)) if d > bdist || (d == bdist && prim > bi) => {
                                Some((bi, bdist))
                            }
                            _ => Some((prim, d)),
                        };
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_squared(query);
                    let dr = self.nodes[*right].bounds().distance_squared(query);
                    // Visit the nearer child first.
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }

    /// Calls `visit(i)` for each primitive whose box the ray segment enters.
    /// Traversal stops early when `visit` returns `true`.
    pub fn any_ray_hit<F>(&self, origin: &Vec3, dir: &Vec3, t_max: f64, mut visit: F) -> bool
    where
        F: FnMut(usize) -> bool,
    {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = dir.map(|x| 1.0 / x);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds().ray_entry(origin, &inv, t_max).is_none() {
                continue;
            }
            match node {
                Node::Leaf { first, count, .. } => {
                    for &prim in &self.order[*first..*first + *count] {
                        if visit(prim) {
                            return true;
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        false
    }

    /// Calls `visit(i)` for every primitive whose box the ray segment enters.
    pub fn for_each_ray_candidate<F>(&self, origin: &Vec3, dir: &Vec3, t_max: f64, mut visit: F)
    where
        F: FnMut(usize),
    {
        self.any_ray_hit(origin, dir, t_max, |i| {
            visit(i);
            false
        });
    }
}

fn build_node(
    boxes: &[Aabb],
    order: &mut [usize],
    first: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let bounds = order[first..end]
        .iter()
        .fold(Aabb::empty(), |acc, &i| acc.union(&boxes[i]));
    let count = end - first;
    let index = nodes.len();
    if count <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, first, count });
        return index;
    }
    let centroids = order[first..end]
        .iter()
        .fold(Aabb::empty(), |mut acc, &i| {
            acc.grow(&boxes[i].center());
            acc
        });
    let extent = centroids.max - centroids.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = first + count / 2;
    order[first..end].select_nth_unstable_by(count / 2, |&a, &b| {
        boxes[a].center()[axis]
            .total_cmp(&boxes[b].center()[axis])
            .then(a.cmp(&b))
    });
    // Placeholder, patched once children exist.
    nodes.push(Node::Leaf { bounds, first, count });
    let left = build_node(boxes, order, first, mid, nodes);
    let right = build_node(boxes, order, mid, end, nodes);
    nodes[index] = Node::Inner { bounds, left, right };
    index
}
