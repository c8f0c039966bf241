use std::cmp::Ordering;

use crate::cloud::{dist2, Point};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Exact nearest-neighbour index over a fixed point set.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point>,
    /// Original index of each entry of `points`.
    index: Vec<usize>,
    nodes: Vec<Node>,
}

/// Result of a nearest-neighbour query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nearest {
    pub index: usize,
    /// Squared Euclidean distance.
    pub dist2: f64,
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Less => true,
        Ordering::Equal => a.1 < b.1,
        Ordering::Greater => false,
    }
}

impl KdTree {
    pub fn build(points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain(
                "cannot build a kd-tree over no points".into(),
            ));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        build_node(points, &mut order, 0, &mut nodes);
        Ok(KdTree {
            points: order.iter().map(|&i| points[i]).collect(),
            index: order,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Closest point to `query`; equal distances resolve to the smaller index.
    pub fn nearest(&self, query: &Point) -> Nearest {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, query, &mut best);
        Nearest {
            index: best.1,
            dist2: best.0,
        }
    }

    fn search(&self, node: usize, q: &Point, best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let cand = (dist2(&self.points[i], q), self.index[i]);
                    if better(cand, *best) {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_node(
    points: &[Point],
    order: &mut [usize],
    offset: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let axis = (0..3)
        .map(|a| {
            let (lo, hi) = order
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(points[i][a]), hi.max(points[i][a]))
                });
            (hi - lo, a)
        })
        .max_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)))
        .expect("three axes")
        .1;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[order[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(points, lo, offset, nodes);
    let right = build_node(points, hi, offset + mid, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}
