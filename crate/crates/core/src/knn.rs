//! k-d tree for exact m-nearest-neighbour queries in the scaled input space.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{arg_err, shape_err};
use crate::Result;

const LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
struct Node {
    start: usize,
    end: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    children: Option<(usize, usize)>,
}

/// Static k-d tree over the rows of a point matrix.
#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    /// Row-major copy of the points.
    points: Vec<f64>,
    /// Point ids, permuted so every node owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let (n, dim) = x.shape();
        let mut points = Vec::with_capacity(n * dim);
        for i in 0..n {
            points.extend(x.row(i).iter());
        }
        let mut tree = Self { dim, points, order: (0..n).collect(), nodes: Vec::new() };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut lo = alloc::vec![f64::INFINITY; self.dim];
        let mut hi = alloc::vec![f64::NEG_INFINITY; self.dim];
        for &i in &self.order[start..end] {
            for k in 0..self.dim {
                let v = self.points[i * self.dim + k];
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node { start, end, lo, hi, children: None });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let node = &self.nodes[id];
        let axis = (0..self.dim)
            .max_by(|&a, &b| (node.hi[a] - node.lo[a]).total_cmp(&(node.hi[b] - node.lo[b])))
            .unwrap_or(0);
        if !(node.hi[axis] > node.lo[axis]) {
            return id;
        }
        let mid = start + (end - start) / 2;
        let (dim, points) = (self.dim, &self.points);
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| points[a * dim + axis].total_cmp(&points[b * dim + axis]));
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    fn box_dist2(&self, node: &Node, q: &[f64]) -> f64 {
        (0..self.dim)
            .map(|k| {
                let d = if q[k] < node.lo[k] {
                    node.lo[k] - q[k]
                } else if q[k] > node.hi[k] {
                    q[k] - node.hi[k]
                } else {
                    0.0
                };
                d * d
            })
            .sum()
    }

    fn search(&self, id: usize, q: &[f64], m: usize, heap: &mut BinaryHeap<Candidate>) {
        let node = &self.nodes[id];
        if heap.len() == m && self.box_dist2(node, q) > heap.peek().map_or(f64::INFINITY, |c| c.d2) {
            return;
        }
        match node.children {
            None => {
                for &i in &self.order[node.start..node.end] {
                    let p = self.point(i);
                    let d2: f64 = (0..self.dim).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum();
                    let cand = Candidate { d2, idx: i };
                    if heap.len() < m {
                        heap.push(cand);
                    } else if heap.peek().is_some_and(|worst| cand < *worst) {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Some((l, r)) => {
                let (dl, dr) = (self.box_dist2(&self.nodes[l], q), self.box_dist2(&self.nodes[r], q));
                let (first, second) = if dl <= dr { (l, r) } else { (r, l) };
                self.search(first, q, m, heap);
                self.search(second, q, m, heap);
            }
        }
    }

    /// The `m` nearest points to `query` by Euclidean distance, closest first,
    /// ties going to the lower index.
    pub fn nearest(&self, query: &[f64], m: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        if query.len() != self.dim {
            return Err(shape_err!("query of length {} for a {}-d tree", query.len(), self.dim));
        }
        if m > self.len() {
            return Err(arg_err!("{m} neighbours requested from {} points", self.len()));
        }
        if m == 0 {
            return Ok((Vec::new(), Vec::new()));
        }
        let mut heap = BinaryHeap::with_capacity(m + 1);
        self.search(0, query, m, &mut heap);
        let found = heap.into_sorted_vec();
        Ok((found.iter().map(|c| c.idx).collect(), found.iter().map(|c| c.d2.sqrt()).collect()))
    }
}
