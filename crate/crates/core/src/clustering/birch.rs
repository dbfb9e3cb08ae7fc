//! BIRCH: a clustering-feature (CF) tree summarises the data in one pass and
//! k-means groups the leaf subclusters into the final clusters.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_fit, KMeansConfig};
use super::meanshift::estimate_bandwidth;
use super::{check_finite, ClusterError, ClusterMethod, ClusterModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirchConfig {
    #[serde(default = "default_branching")]
    pub branching_factor: usize,
    /// Maximum subcluster radius; estimated when absent.
    #[serde(default)]
    pub threshold: Option<f64>,
    pub global_k: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_branching() -> usize {
    50
}

impl BirchConfig {
    pub fn new(global_k: usize, seed: u64) -> Self {
        Self {
            branching_factor: default_branching(),
            threshold: None,
            global_k,
            seed,
        }
    }
}

/// Count, linear sum and squared-norm sum of a set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringFeature {
    pub count: usize,
    pub linear_sum: Array1<f64>,
    pub squared_sum: f64,
}

impl ClusteringFeature {
    pub fn empty(dims: usize) -> Self {
        Self {
            count: 0,
            linear_sum: Array1::zeros(dims),
            squared_sum: 0.0,
        }
    }

    pub fn from_point(p: ArrayView1<'_, f64>) -> Self {
        let mut cf = Self::empty(p.len());
        cf.absorb(p);
        cf
    }

    pub fn absorb(&mut self, p: ArrayView1<'_, f64>) {
        self.count += 1;
        self.linear_sum += &p;
        self.squared_sum += p.dot(&p);
    }

    pub fn merge(&mut self, other: &ClusteringFeature) {
        self.count += other.count;
        self.linear_sum += &other.linear_sum;
        self.squared_sum += other.squared_sum;
    }

    pub fn centroid(&self) -> Array1<f64> {
        &self.linear_sum / self.count.max(1) as f64
    }

    /// Root-mean-square distance of the members to their centroid:
    /// `sqrt(ss / n - |ls / n|^2)`.
    pub fn radius(&self) -> f64 {
        Self::radius_of(self.count, &self.linear_sum, self.squared_sum)
    }

    /// Radius this feature would have after absorbing `p`.
    pub fn radius_with(&self, p: ArrayView1<'_, f64>) -> f64 {
        let ls = &self.linear_sum + &p;
        Self::radius_of(self.count + 1, &ls, self.squared_sum + p.dot(&p))
    }

    fn radius_of(count: usize, ls: &Array1<f64>, ss: f64) -> f64 {
        if count == 0 {
            return 0.0;
        }
        let n = count as f64;
        let c2 = ls.dot(ls) / (n * n);
        (ss / n - c2).max(0.0).sqrt()
    }

    fn distance_to(&self, p: ArrayView1<'_, f64>) -> f64 {
        let c = self.centroid();
        c.iter().zip(p.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

#[derive(Debug, Clone)]
struct Entry {
    cf: ClusteringFeature,
    child: Option<usize>,
    /// Row indices absorbed by a leaf entry.
    members: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Node {
    leaf: bool,
    entries: Vec<Entry>,
}

/// Height-balanced CF tree. Leaf entries are the subclusters.
#[derive(Debug, Clone)]
pub struct CfTree {
    threshold: f64,
    branching_factor: usize,
    dims: usize,
    nodes: Vec<Node>,
    root: usize,
}

impl CfTree {
    pub fn new(dims: usize, threshold: f64, branching_factor: usize) -> Result<Self, ClusterError> {
        if branching_factor < 2 {
            return Err(ClusterError::InvalidConfig(
                "branching_factor must be at least 2".into(),
            ));
        }
        if !(threshold > 0.0) {
            return Err(ClusterError::InvalidConfig(format!(
                "threshold must be positive, got {threshold}"
            )));
        }
        Ok(Self {
            threshold,
            branching_factor,
            dims,
            nodes: vec![Node {
                leaf: true,
                entries: Vec::new(),
            }],
            root: 0,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Inserts row `index` with coordinates `p`.
    pub fn insert(&mut self, p: ArrayView1<'_, f64>, index: usize) {
        assert_eq!(p.len(), self.dims, "point dimensionality");
        if let Some((a, b)) = self.insert_at(self.root, p, index) {
            self.nodes.push(Node {
                leaf: false,
                entries: vec![a, b],
            });
            self.root = self.nodes.len() - 1;
        }
    }

    fn closest_entry(&self, node: usize, p: ArrayView1<'_, f64>) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.nodes[node].entries.iter().enumerate() {
            let d = e.cf.distance_to(p);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    fn insert_at(
        &mut self,
        node: usize,
        p: ArrayView1<'_, f64>,
        index: usize,
    ) -> Option<(Entry, Entry)> {
        let closest = self.closest_entry(node, p);
        if self.nodes[node].leaf {
            let threshold = self.threshold;
            let entries = &mut self.nodes[node].entries;
            match closest {
                Some(e) if entries[e].cf.radius_with(p) <= threshold => {
                    entries[e].cf.absorb(p);
                    entries[e].members.push(index);
                }
                _ => entries.push(Entry {
                    cf: ClusteringFeature::from_point(p),
                    child: None,
                    members: vec![index],
                }),
            }
        } else {
            let e = closest.expect("internal nodes are never empty");
            let child = self.nodes[node].entries[e]
                .child
                .expect("internal entry has a child");
            match self.insert_at(child, p, index) {
                None => self.nodes[node].entries[e].cf.absorb(p),
                Some((a, b)) => {
                    let entries = &mut self.nodes[node].entries;
                    entries[e] = a;
                    entries.push(b);
                }
            }
        }
        if self.nodes[node].entries.len() > self.branching_factor {
            Some(self.split(node))
        } else {
            None
        }
    }

    /// Splits an overfull node around its farthest pair of entries.
    fn split(&mut self, node: usize) -> (Entry, Entry) {
        let leaf = self.nodes[node].leaf;
        let entries = std::mem::take(&mut self.nodes[node].entries);
        let centroids: Vec<Array1<f64>> = entries.iter().map(|e| e.cf.centroid()).collect();
        let sq = |a: &Array1<f64>, b: &Array1<f64>| -> f64 {
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let (mut sa, mut sb, mut far) = (0, 1, -1.0);
        for i in 0..entries.len() {
            for j in (i + 1)..entries.len() {
                let d = sq(&centroids[i], &centroids[j]);
                if d > far {
                    (sa, sb, far) = (i, j, d);
                }
            }
        }
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for (i, e) in entries.into_iter().enumerate() {
            let to_left = i == sa
                || (i != sb
                    && sq(&centroids[i], &centroids[sa]) <= sq(&centroids[i], &centroids[sb]));
            if to_left {
                left.push(e);
            } else {
                right.push(e);
            }
        }
        let summarise = |group: &[Entry]| {
            let mut cf = ClusteringFeature::empty(self.dims);
            for e in group {
                cf.merge(&e.cf);
            }
            cf
        };
        let (cf_left, cf_right) = (summarise(&left), summarise(&right));
        self.nodes[node].entries = left;
        self.nodes.push(Node {
            leaf,
            entries: right,
        });
        let new_node = self.nodes.len() - 1;
        (
            Entry {
                cf: cf_left,
                child: Some(node),
                members: Vec::new(),
            },
            Entry {
                cf: cf_right,
                child: Some(new_node),
                members: Vec::new(),
            },
        )
    }

    /// Leaf subclusters with the rows they absorbed, in tree order.
    pub fn leaf_entries(&self) -> Vec<(&ClusteringFeature, &[usize])> {
        let mut out = Vec::new();
        self.collect_leaves(self.root, &mut out);
        out
    }

    fn collect_leaves<'a>(
        &'a self,
        node: usize,
        out: &mut Vec<(&'a ClusteringFeature, &'a [usize])>,
    ) {
        for e in &self.nodes[node].entries {
            match e.child {
                Some(c) => self.collect_leaves(c, out),
                None => out.push((&e.cf, &e.members)),
            }
        }
    }

    /// Every entry of the tree (leaf and internal) with all rows beneath it.
    pub fn all_entries(&self) -> Vec<(&ClusteringFeature, Vec<usize>)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            for e in &node.entries {
                let members = match e.child {
                    None => e.members.clone(),
                    Some(c) => self.subtree_members(c),
                };
                out.push((&e.cf, members));
            }
        }
        out
    }

    fn subtree_members(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for e in &self.nodes[node].entries {
            match e.child {
                Some(c) => out.extend(self.subtree_members(c)),
                None => out.extend_from_slice(&e.members),
            }
        }
        out
    }

    pub fn subcluster_centroids(&self) -> Array2<f64> {
        let leaves = self.leaf_entries();
        let mut out = Array2::zeros((leaves.len(), self.dims));
        for (mut row, (cf, _)) in out.outer_iter_mut().zip(leaves) {
            row.assign(&cf.centroid());
        }
        out
    }

    pub fn build(
        x: ArrayView2<'_, f64>,
        threshold: f64,
        branching_factor: usize,
    ) -> Result<Self, ClusterError> {
        let mut tree = Self::new(x.ncols(), threshold, branching_factor)?;
        for (i, row) in x.outer_iter().enumerate() {
            tree.insert(row, i);
        }
        Ok(tree)
    }
}

/// Builds the CF tree, clusters the leaf centroids with k-means
/// (`k = global_k`) and assigns every row to its nearest final centroid.
///
/// The default threshold is half the 0.1-quantile pairwise distance. When a
/// threshold leaves fewer than `global_k` subclusters it is halved and the
/// tree rebuilt.
pub fn birch_fit(x: ArrayView2<'_, f64>, cfg: &BirchConfig) -> Result<ClusterModel, ClusterError> {
    let start = Instant::now();
    let n = x.nrows();
    if cfg.global_k == 0 {
        return Err(ClusterError::InvalidConfig(
            "global_k must be at least 1".into(),
        ));
    }
    if n < cfg.global_k {
        return Err(ClusterError::TooFewRows {
            rows: n,
            required: cfg.global_k,
        });
    }
    check_finite(x)?;
    let mut threshold = match cfg.threshold {
        Some(t) => t,
        None => 0.5 * estimate_bandwidth(x, 0.1, 1000, cfg.seed)?,
    };

    let mut tree = CfTree::build(x, threshold, cfg.branching_factor)?;
    let mut halvings = 0;
    while tree.leaf_entries().len() < cfg.global_k {
        if halvings == 60 {
            return Err(ClusterError::InvalidConfig(format!(
                "fewer than {} distinct subclusters",
                cfg.global_k
            )));
        }
        threshold *= 0.5;
        halvings += 1;
        tree = CfTree::build(x, threshold, cfg.branching_factor)?;
    }

    let subclusters = tree.subcluster_centroids();
    let global = kmeans_fit(
        subclusters.view(),
        &KMeansConfig::new(cfg.global_k, cfg.seed),
    )?;
    let mut model = ClusterModel::from_centroids(ClusterMethod::Birch, global.centroids, x, 0.0)?;
    model.fit_seconds = start.elapsed().as_secs_f64();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::kmeans_fit;
    use ndarray::{array, Axis};

    #[test]
    fn radius_of_two_points() {
        let mut cf = ClusteringFeature::from_point(array![0.0].view());
        cf.absorb(array![2.0].view());
        assert_eq!((cf.count, cf.linear_sum[0], cf.squared_sum), (2, 2.0, 4.0));
        assert_eq!(cf.radius(), 1.0);
        let single = ClusteringFeature::from_point(array![0.0].view());
        assert_eq!(single.radius_with(array![2.0].view()), 1.0);
    }

    #[test]
    fn wide_threshold_absorbs_everything() {
        let x = array![[0.0, 1.0], [2.0, 3.0], [4.0, 8.0], [1.0, 0.0]];
        let tree = CfTree::build(x.view(), 100.0, 50).unwrap();
        assert_eq!(tree.leaf_entries().len(), 1);
        let cfg = BirchConfig {
            threshold: Some(100.0),
            ..BirchConfig::new(1, 0)
        };
        let m = birch_fit(x.view(), &cfg).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        assert!((&m.centroids.row(0) - &mean)
            .iter()
            .all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn tiny_threshold_matches_kmeans_partition() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let cfg = BirchConfig {
            threshold: Some(1e-6),
            ..BirchConfig::new(2, 0)
        };
        let b = birch_fit(x.view(), &cfg).unwrap();
        let k = kmeans_fit(x.view(), &KMeansConfig::new(2, 0)).unwrap();
        let same = |a: &[usize], b: &[usize]| {
            (0..4).all(|i| (0..4).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
        };
        assert!(same(&b.assignments, &k.assignments));
    }

    #[test]
    fn splits_keep_the_tree_consistent() {
        let x = Array2::from_shape_fn((200, 2), |(i, j)| ((i * 37 + j * 11) % 101) as f64 * 0.1);
        let tree = CfTree::build(x.view(), 0.05, 3).unwrap();
        let mut seen: Vec<usize> = tree
            .leaf_entries()
            .iter()
            .flat_map(|(_, m)| m.to_vec())
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..200).collect::<Vec<_>>());
        for (cf, members) in tree.all_entries() {
            assert_eq!(cf.count, members.len());
        }
    }

    #[test]
    fn falls_back_to_a_smaller_threshold() {
        let x = array![[0.0], [0.1], [5.0], [5.1]];
        let cfg = BirchConfig {
            threshold: Some(1000.0),
            ..BirchConfig::new(2, 0)
        };
        let m = birch_fit(x.view(), &cfg).unwrap();
        assert_eq!(m.k(), 2);
        assert_ne!(m.assignments[0], m.assignments[2]);
    }

    #[test]
    fn rejects_bad_config() {
        let x = array![[0.0], [1.0]];
        assert!(birch_fit(x.view(), &BirchConfig::new(3, 0)).is_err());
        assert!(CfTree::new(1, 1.0, 1).is_err());
        assert!(CfTree::new(1, 0.0, 5).is_err());
    }
}
