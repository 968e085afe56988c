//! Exact nearest-neighbour queries over 3D points.
//!
//! Results are bit-identical to an exhaustive scan that keeps the first
//! (lowest-index) point among equal squared distances: leaf distances use
//! [`dist_sq`], and a subtree is skipped only when the squared distance to
//! its cell is strictly larger than the best squared distance found so far.
//! The cell bound sums per-axis offsets in the same x, y, z order as
//! [`dist_sq`], and rounding is monotone, so it never exceeds the computed
//! distance of a point inside the cell.

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 8;

/// Squared Euclidean distance, summed in x, y, z order.
#[inline(always)]
pub fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Exhaustive nearest neighbour: `(index, squared distance)`.
pub fn nearest_brute(points: &[Vec3], q: &Vec3) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = dist_sq(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let slice = &self.order[start..end];
        let (mut lo, mut hi) = (self.points[slice[0]], self.points[slice[0]]);
        for &i in slice {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] == lo[axis] {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point to `q` as `(index, squared distance)`; lowest index wins
    /// ties. Returns `(usize::MAX, inf)` for an empty tree.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        if !self.nodes.is_empty() {
            self.search(0, q, [0.0; 3], &mut best);
        }
        best
    }

    fn search(&self, node: usize, q: &Vec3, offsets: [f64; 3], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist_sq(&self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                // Left holds coordinates <= value, right >= value.
                let delta = q[axis] - value;
                let (near, far, gap) = if delta < 0.0 {
                    (left, right, value - q[axis])
                } else {
                    (right, left, delta)
                };
                self.search(near, q, offsets, best);
                let mut far_offsets = offsets;
                far_offsets[axis] = gap;
                let [ox, oy, oz] = far_offsets;
                if !(ox * ox + oy * oy + oz * oz > best.1) {
                    self.search(far, q, far_offsets, best);
                }
            }
        }
    }
}
