//! Nonlocal KNN-graph matting Laplacian.
//!
//! Each voxel carries a feature `(v, s·x/nx, s·y/ny, s·z/nz)`. Voxels are
//! linked to their `k` nearest neighbours under the L1 feature distance,
//! with affinity `1 − ‖f_i − f_j‖₁ / 4`, and `L = D − A` over the
//! symmetrized graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseSymMatrix;
use crate::volume::VolumeGrid;

pub const FEATURE_DIM: usize = 4;

pub type Feature = [f64; FEATURE_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k_neighbors: usize,
    pub spatial_weight: f64,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams {
            k_neighbors: 10,
            spatial_weight: 1.0,
        }
    }
}

pub fn build_features(vol: &VolumeGrid, spatial_weight: f64) -> Vec<Feature> {
    let g = vol.geom;
    let [nx, ny, nz] = g.dims.map(|d| d as f64);
    (0..g.len())
        .map(|i| {
            let [x, y, z] = g.coords(i);
            [
                vol.values[i] as f64,
                spatial_weight * x as f64 / nx,
                spatial_weight * y as f64 / ny,
                spatial_weight * z as f64 / nz,
            ]
        })
        .collect()
}

#[inline]
pub fn l1_distance(a: &Feature, b: &Feature) -> f64 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs() + (a[3] - b[3]).abs()
}

/// Clamped to `[0, 1]`; distances beyond the feature dimension count (only
/// possible with spatial weights above 1) give zero affinity.
#[inline]
pub fn affinity(a: &Feature, b: &Feature) -> f64 {
    (1.0 - l1_distance(a, b) / FEATURE_DIM as f64).max(0.0)
}

/// Candidate ordered by distance, then by voxel index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const LEAF_SIZE: usize = 16;

enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Exact k-d tree over the feature rows.
struct KdTree<'a> {
    points: &'a [Feature],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    fn new(points: &'a [Feature]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        tree.build(0, points.len());
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; FEATURE_DIM];
        let mut hi = [f64::NEG_INFINITY; FEATURE_DIM];
        for &i in &self.order[start..end] {
            for d in 0..FEATURE_DIM {
                lo[d] = lo[d].min(self.points[i][d]);
                hi[d] = hi[d].max(self.points[i][d]);
            }
        }
        let dim = (0..FEATURE_DIM)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap();
        if hi[dim] <= lo[dim] {
            // all points identical
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = (start + end) / 2;
        let pts = self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| pts[a][dim].total_cmp(&pts[b][dim]));
        let value = pts[self.order[mid]][dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    /// The `k` nearest points to `self.points[query]`, excluding itself.
    fn query(&self, query: usize, k: usize) -> Vec<usize> {
        let q = &self.points[query];
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut offsets = [0.0f64; FEATURE_DIM];
        self.search(0, q, query, k, 0.0, &mut offsets, &mut heap);
        let mut found = heap.into_vec();
        found.sort();
        found.into_iter().map(|c| c.index).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        node: usize,
        q: &Feature,
        query: usize,
        k: usize,
        bound: f64,
        offsets: &mut [f64; FEATURE_DIM],
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if i == query {
                        continue;
                    }
                    let c = Candidate {
                        dist: l1_distance(q, &self.points[i]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                // points equal to the split value can sit on either side
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, query, k, bound, offsets, heap);
                let old = offsets[dim];
                let new_bound = bound - old + diff.abs();
                let visit = heap.len() < k || new_bound <= heap.peek().unwrap().dist;
                if visit {
                    offsets[dim] = diff.abs();
                    self.search(far, q, query, k, new_bound, offsets, heap);
                    offsets[dim] = old;
                }
            }
        }
    }
}

/// Exact `k` nearest neighbours of every voxel under L1 feature distance;
/// ties resolve to the smaller linear index. Lists are sorted nearest first.
pub fn knn_graph(features: &[Feature], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = features.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in [1, {n})"
        )));
    }
    let tree = KdTree::new(features);
    Ok((0..n).into_par_iter().map(|i| tree.query(i, k)).collect())
}

/// `L = D − A` with `A(i, j) = affinity(f_i, f_j)` on the union of the
/// neighbour relations (max-symmetrized; the L1 affinity is already
/// symmetric, so both directions agree).
pub fn build_knn_laplacian(features: &[Feature], neighbors: &[Vec<usize>]) -> Result<SparseSymMatrix> {
    let n = features.len();
    if neighbors.len() != n {
        return Err(Error::Shape(format!(
            "{} neighbour lists for {n} features",
            neighbors.len()
        )));
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            if j >= n || j == i {
                return Err(Error::InvalidArgument(format!(
                    "invalid neighbour {j} for voxel {i}"
                )));
            }
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let rows: Vec<Vec<(usize, f64)>> = adj
        .into_par_iter()
        .enumerate()
        .map(|(i, mut list)| {
            list.sort_unstable();
            list.dedup();
            let mut row = Vec::with_capacity(list.len() + 1);
            let mut degree = 0.0;
            for &j in &list {
                let a = affinity(&features[i], &features[j]);
                degree += a;
                row.push((j, -a));
            }
            row.push((i, degree));
            row
        })
        .collect();
    SparseSymMatrix::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(features: &[Feature], k: usize) -> Vec<Vec<usize>> {
        (0..features.len())
            .map(|i| {
                let mut all: Vec<(f64, usize)> = (0..features.len())
                    .filter(|&j| j != i)
                    .map(|j| (l1_distance(&features[i], &features[j]), j))
                    .collect();
                all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                all.into_iter().take(k).map(|p| p.1).collect()
            })
            .collect()
    }

    fn random_volume(dims: [usize; 3], seed: u64) -> VolumeGrid {
        let geom = Geometry::new(dims, [1.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VolumeGrid::new(geom, (0..geom.len()).map(|_| rng.random::<f32>()).collect(), Unit::Normalized).unwrap()
    }

    #[test]
    fn features_match_voxel_loop() {
        let geom = Geometry::cube(4, 1.0);
        let vol = VolumeGrid::from_fn(geom, Unit::Normalized, |x, _, _| x as f32 / 3.0).unwrap();
        let f = build_features(&vol, 1.0);
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let i = geom.index(x, y, z);
                    let expect = [x as f32 as f64 / 3.0, x as f64 / 4.0, y as f64 / 4.0, z as f64 / 4.0];
                    assert_eq!(f[i][1..], expect[1..]);
                    assert_eq!(f[i][0], (x as f32 / 3.0) as f64);
                }
            }
        }
        assert_eq!(f[0][1..], [0.0; 3]);
    }

    #[test]
    fn zero_spatial_weight_links_equal_intensities() {
        let geom = Geometry::new([6, 1, 1], [1.0; 3]).unwrap();
        let vol = VolumeGrid::new(geom, vec![0.1, 0.9, 0.5, 0.5, 0.9, 0.1], Unit::Normalized).unwrap();
        let f = build_features(&vol, 0.0);
        let nn = knn_graph(&f, 1).unwrap();
        assert_eq!(nn, vec![vec![5], vec![4], vec![3], vec![2], vec![1], vec![0]]);
    }

    #[test]
    fn two_voxels() {
        let f = vec![[0.2, 0.0, 0.0, 0.0], [0.7, 0.5, 0.0, 0.0]];
        assert_eq!(knn_graph(&f, 1).unwrap(), vec![vec![1], vec![0]]);
        assert!(matches!(knn_graph(&f, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn matches_brute_force_on_random_volume() {
        let vol = random_volume([3, 3, 3], 17);
        let f = build_features(&vol, 1.0);
        assert_eq!(knn_graph(&f, 5).unwrap(), brute_force(&f, 5));
        let vol = random_volume([9, 8, 7], 4);
        let f = build_features(&vol, 1.0);
        assert_eq!(knn_graph(&f, 10).unwrap(), brute_force(&f, 10));
    }

    #[test]
    fn duplicate_rows_prefer_smaller_indices() {
        let f = vec![[0.5; 4]; 40];
        let nn = knn_graph(&f, 3).unwrap();
        assert_eq!(nn[0], vec![1, 2, 3]);
        assert_eq!(nn[2], vec![0, 1, 3]);
        assert_eq!(nn[39], vec![0, 1, 2]);
        // many ties on a constant volume with spatial weight 0
        let vol = VolumeGrid::filled(Geometry::cube(5, 1.0), 0.25, Unit::Normalized).unwrap();
        let f = build_features(&vol, 0.0);
        assert_eq!(knn_graph(&f, 7).unwrap(), brute_force(&f, 7));
    }

    #[test]
    fn large_spatial_weight_gives_geometric_neighbourhood() {
        let vol = VolumeGrid::filled(Geometry::cube(6, 1.0), 0.5, Unit::Normalized).unwrap();
        let f = build_features(&vol, 100.0);
        let nn = knn_graph(&f, 6).unwrap();
        let g = vol.geom;
        let c = g.index(3, 3, 3);
        let mut got = nn[c].clone();
        got.sort();
        let mut expect = vec![
            g.index(2, 3, 3),
            g.index(4, 3, 3),
            g.index(3, 2, 3),
            g.index(3, 4, 3),
            g.index(3, 3, 2),
            g.index(3, 3, 4),
        ];
        expect.sort();
        assert_eq!(got, expect);
        // under L1 the 24 nearest are exactly the radius-2 diamond
        let nn24 = knn_graph(&f, 24).unwrap();
        for &j in &nn24[c] {
            let d: usize = g.coords(j).iter().map(|&v| v.abs_diff(3)).sum();
            assert!((1..=2).contains(&d));
        }
    }

    #[test]
    fn identical_pair_block() {
        let f = vec![[0.3, 0.1, 0.1, 0.1], [0.3, 0.1, 0.1, 0.1]];
        let l = build_knn_laplacian(&f, &[vec![1], vec![0]]).unwrap();
        assert_eq!(l.to_dense(), vec![vec![1.0, -1.0], vec![-1.0, 1.0]]);
    }

    #[test]
    fn laplacian_matches_dense_reference() {
        let vol = random_volume([3, 3, 3], 8);
        let f = build_features(&vol, 1.0);
        let nn = knn_graph(&f, 4).unwrap();
        let l = build_knn_laplacian(&f, &nn).unwrap();
        let n = f.len();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for &j in &nn[i] {
                let w = 1.0 - l1_distance(&f[i], &f[j]) / 4.0;
                a[i][j] = f64::max(a[i][j], w);
                a[j][i] = f64::max(a[j][i], w);
            }
        }
        for i in 0..n {
            let deg: f64 = a[i].iter().sum();
            for j in 0..n {
                let expect = if i == j { deg } else { -a[i][j] };
                assert!((l.get(i, j) - expect).abs() <= 1e-12);
            }
        }
        assert!(l.mul_vec(&vec![1.0; n]).iter().all(|v| v.abs() <= 1e-9));
    }
}
