//! Exact k-nearest-neighbor search over 3-D points.
//!
//! The tree is stored implicitly: the points of a subtree occupy a contiguous
//! slice of `order`, its splitting point sits at the slice midpoint, and the
//! two halves are the children. Results are ordered by `(distance², index)`,
//! so ties between equidistant points always resolve to the lowest index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist2.sqrt()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

struct HeapEntry(Neighbor);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    /// Split axis of the node whose splitting point is `order[k]`.
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build_rec(&points, &mut order, &mut axes);
        KdTree {
            points,
            order,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vec3 {
        &self.points[index]
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// The `k` nearest points to `query`, closest first.
    pub fn nearest(&self, query: &Vec3, k: usize) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(query, k, 0, self.order.len(), &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|e| e.0).collect();
        out.sort_by(Neighbor::key_cmp);
        out
    }

    pub fn nearest_one(&self, query: &Vec3) -> Option<Neighbor> {
        self.nearest(query, 1).pop()
    }

    /// Like [`nearest`](Self::nearest) but never returns point `exclude`.
    pub fn nearest_excluding(&self, query: &Vec3, k: usize, exclude: usize) -> Vec<Neighbor> {
        let mut out = self.nearest(query, k + 1);
        match out.iter().position(|n| n.index == exclude) {
            Some(pos) => {
                out.remove(pos);
            }
            None => out.truncate(k),
        }
        out
    }

    fn search(
        &self,
        q: &Vec3,
        k: usize,
        lo: usize,
        hi: usize,
        heap: &mut BinaryHeap<HeapEntry>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &idx in &self.order[lo..hi] {
                self.offer(q, idx, k, heap);
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - self.points[idx][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, k, near.0, near.1, heap);
        self.offer(q, idx, k, heap);
        let full = heap.len() == k;
        // Equal distances still need a visit: a lower index may be waiting there.
        if !full || diff * diff <= heap.peek().map_or(f64::INFINITY, |e| e.0.dist2) {
            self.search(q, k, far.0, far.1, heap);
        }
    }

    #[inline]
    fn offer(&self, q: &Vec3, idx: usize, k: usize, heap: &mut BinaryHeap<HeapEntry>) {
        let cand = Neighbor {
            index: idx,
            dist2: (self.points[idx] - q).norm_squared(),
        };
        if heap.len() < k {
            heap.push(HeapEntry(cand));
        } else if cand.key_cmp(&heap.peek().unwrap().0) == Ordering::Less {
            heap.pop();
            heap.push(HeapEntry(cand));
        }
    }
}

fn build_rec(points: &[Vec3], order: &mut [usize], axes: &mut [u8]) {
    let n = order.len();
    if n <= LEAF_SIZE {
        return;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &idx in order.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[idx][a]);
            hi[a] = hi[a].max(points[idx][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then(a.cmp(&b))
    });
    axes[mid] = axis as u8;
    let (left, right) = order.split_at_mut(mid);
    let (left_axes, right_axes) = axes.split_at_mut(mid);
    build_rec(points, left, left_axes);
    build_rec(points, &mut right[1..], &mut right_axes[1..]);
}

/// O(N) reference scan with the same ordering rules as [`KdTree::nearest`].
pub fn brute_force_nearest(points: &[Vec3], query: &Vec3, k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = points
        .iter()
        .enumerate()
        .map(|(index, p)| Neighbor {
            index,
            dist2: (p - query).norm_squared(),
        })
        .collect();
    all.sort_by(Neighbor::key_cmp);
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect()
    }

    #[test]
    fn empty_tree_returns_nothing() {
        let tree = KdTree::build(Vec::new());
        assert!(tree.nearest(&Vec3::zeros(), 5).is_empty());
        assert!(tree.nearest_one(&Vec3::zeros()).is_none());
    }

    #[test]
    fn single_point_is_always_nearest() {
        let tree = KdTree::build(vec![Vec3::new(1.0, 2.0, 3.0)]);
        for q in [Vec3::zeros(), Vec3::new(100.0, -4.0, 0.0)] {
            let n = tree.nearest(&q, 3);
            assert_eq!(n.len(), 1);
            assert_eq!(n[0].index, 0);
        }
    }

    #[test]
    fn matches_brute_force_on_random_points() {
        let points = random_points(1000, 7);
        let tree = KdTree::build(points.clone());
        let queries = random_points(200, 8);
        for q in &queries {
            assert_eq!(tree.nearest(q, 50), brute_force_nearest(&points, q, 50));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        // A lattice has many equidistant neighbors.
        let mut points = Vec::new();
        for x in 0..12 {
            for y in 0..12 {
                for z in 0..3 {
                    points.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        points.extend(points.clone());
        let tree = KdTree::build(points.clone());
        for q in [Vec3::new(5.0, 5.0, 1.0), Vec3::new(0.5, 0.5, 0.5)] {
            for k in [1, 4, 7, 20] {
                assert_eq!(tree.nearest(&q, k), brute_force_nearest(&points, &q, k));
            }
        }
    }

    #[test]
    fn nearest_excluding_skips_self() {
        let points = random_points(100, 3);
        let tree = KdTree::build(points.clone());
        let n = tree.nearest_excluding(&points[10], 1, 10);
        assert_ne!(n[0].index, 10);
        let brute = brute_force_nearest(&points, &points[10], 2);
        assert_eq!(n[0], brute[1]);
    }
}
