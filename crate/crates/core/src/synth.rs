//! Synthetic graphs: homophily-controlled multi-class graphs with
//! class-conditional features, and two-class regular graphs with 1-D
//! Gaussian features for the aggregation experiments.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{edge_homophily, Graph, Labels};
use crate::linalg::DenseMatrix;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Where node features come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureSource {
    /// Per-class pools drawn from `N(separation · e_c, noise² I)` in
    /// `dim` dimensions.
    GaussianPool {
        dim: usize,
        separation: f64,
        noise: f64,
        pool_size: usize,
    },
    /// Rows of an existing feature matrix, pooled by their labels.
    Imported { features: DenseMatrix, labels: Vec<usize> },
}

impl Default for FeatureSource {
    fn default() -> Self {
        FeatureSource::GaussianPool {
            dim: 50,
            separation: 1.0,
            noise: 1.0,
            pool_size: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub homophily: f64,
    pub avg_degree: f64,
    pub features: FeatureSource,
    pub seed: u64,
}

impl Default for SynSpec {
    /// Sized like the syn-cora graphs: 1490 nodes, 5 classes.
    fn default() -> Self {
        Self {
            num_nodes: 1490,
            num_classes: 5,
            homophily: 0.5,
            avg_degree: 4.0,
            features: FeatureSource::default(),
            seed: 0,
        }
    }
}

impl SynSpec {
    pub fn num_edges(&self) -> usize {
        (self.num_nodes as f64 * self.avg_degree / 2.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(SynthError::InvalidSpec(format!("homophily {} outside [0, 1]", self.homophily)));
        }
        if self.num_classes < 2 || self.num_nodes < self.num_classes {
            return Err(SynthError::InvalidSpec("need at least 2 classes and one node per class".into()));
        }
        let stubs = self.num_nodes as f64 * self.avg_degree;
        if self.avg_degree < 0.0 || (stubs - stubs.round()).abs() > 1e-9 || !(stubs.round() as u64).is_multiple_of(2) {
            return Err(SynthError::InvalidSpec(format!(
                "avg_degree * num_nodes = {stubs} must be an even integer"
            )));
        }
        match &self.features {
            FeatureSource::GaussianPool {
                dim,
                noise,
                pool_size,
                ..
            } => {
                if *dim < self.num_classes || *pool_size == 0 || *noise < 0.0 {
                    return Err(SynthError::InvalidSpec(
                        "gaussian pool needs dim >= num_classes, pool_size >= 1, noise >= 0".into(),
                    ));
                }
            }
            FeatureSource::Imported { features, labels } => {
                if features.rows() != labels.len() {
                    return Err(SynthError::InvalidSpec("imported pool rows/labels mismatch".into()));
                }
                for c in 0..self.num_classes {
                    if !labels.contains(&c) {
                        return Err(SynthError::InvalidSpec(format!("imported pool has no rows of class {c}")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A generated graph with labels and features.
#[derive(Debug, Clone)]
pub struct SynGraph {
    pub graph: Graph,
    pub labels: Labels,
    pub features: DenseMatrix,
    pub realized_homophily: f64,
}

/// Balanced labels in random order.
fn balanced_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    labels
}

/// Edges are placed one slot at a time. Exactly `round(h·M)` slots are
/// intra-class, in random order; each slot takes a uniformly random
/// unused pair of the required kind.
pub fn gen_homophily_graph(spec: &SynSpec) -> Result<SynGraph> {
    spec.validate()?;
    let n = spec.num_nodes;
    let mut label_rng = stream_rng(spec.seed, Stream::Labels);
    let labels = balanced_labels(n, spec.num_classes, &mut label_rng);

    let m = spec.num_edges();
    let intra = (spec.homophily * m as f64).round() as usize;
    let cross = m - intra;
    let counts = {
        let mut c = vec![0usize; spec.num_classes];
        labels.iter().for_each(|&y| c[y] += 1);
        c
    };
    let intra_pairs: usize = counts.iter().map(|&k| k * k.saturating_sub(1) / 2).sum();
    let cross_pairs = n * (n - 1) / 2 - intra_pairs;
    if intra > intra_pairs || cross > cross_pairs {
        return Err(SynthError::Infeasible(format!(
            "need {intra} intra / {cross} cross edges, only {intra_pairs} / {cross_pairs} pairs exist"
        )));
    }

    let mut rng = stream_rng(spec.seed, Stream::Graph);
    let mut slots: Vec<bool> = (0..m).map(|i| i < intra).collect();
    slots.shuffle(&mut rng);
    let mut present = std::collections::HashSet::with_capacity(m);
    let mut edges = Vec::with_capacity(m);
    for want_same in slots {
        loop {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u == v || (labels[u] == labels[v]) != want_same {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if present.insert(key) {
                edges.push(key);
                break;
            }
        }
    }
    let graph = Graph::from_edge_list(n, &edges).expect("generated edges are in range");
    let labels = Labels::new(labels, spec.num_classes).expect("labels in range");
    let features = draw_features(spec, &labels)?;
    let realized_homophily = edge_homophily(&graph, &labels).expect("lengths agree").value;
    Ok(SynGraph {
        graph,
        labels,
        features,
        realized_homophily,
    })
}

fn draw_features(spec: &SynSpec, labels: &Labels) -> Result<DenseMatrix> {
    let mut rng = stream_rng(spec.seed, Stream::Features);
    let pools: Vec<DenseMatrix> = match &spec.features {
        FeatureSource::GaussianPool {
            dim,
            separation,
            noise,
            pool_size,
        } => {
            let normal = Normal::new(0.0, *noise).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
            (0..spec.num_classes)
                .map(|c| {
                    DenseMatrix::from_fn(*pool_size, *dim, |_, j| {
                        let mean = if j == c { *separation } else { 0.0 };
                        mean + normal.sample(&mut rng)
                    })
                })
                .collect()
        }
        FeatureSource::Imported { features, labels: pool_labels } => (0..spec.num_classes)
            .map(|c| {
                let rows: Vec<usize> = (0..pool_labels.len()).filter(|&i| pool_labels[i] == c).collect();
                features.select_rows(&rows)
            })
            .collect(),
    };
    let dim = pools[0].cols();
    let mut out = DenseMatrix::zeros(labels.len(), dim);
    for (v, &y) in labels.values().iter().enumerate() {
        let pool = &pools[y];
        let pick = rng.gen_range(0..pool.rows());
        out.row_mut(v).copy_from_slice(pool.row(pick));
    }
    Ok(out)
}

/// Two 1-D Gaussian classes on a regular graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianClassSpec {
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma2: f64,
    pub degree: usize,
    pub homophily: f64,
}

impl GaussianClassSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(SynthError::InvalidSpec("sigmas must be positive".into()));
        }
        if self.degree == 0 {
            return Err(SynthError::InvalidSpec("degree must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(SynthError::InvalidSpec(format!("homophily {} outside [0, 1]", self.homophily)));
        }
        Ok(())
    }

    /// Same-class neighbors per node: `round(h·d)`.
    pub fn same_class_degree(&self) -> usize {
        (self.homophily * self.degree as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct GaussianGraph {
    pub graph: Graph,
    pub labels: Labels,
    /// `N × 1` features.
    pub features: DenseMatrix,
    /// `round(h·d) / d`, the homophily the construction actually realizes.
    pub realized_homophily: f64,
    /// Node that received one same-class stub fewer to fix stub parity.
    pub parity_adjusted: Option<usize>,
}

/// `d`-regular graph on `n` nodes split into two equal classes (class 1
/// is label 0, nodes `0..n/2`). Each node pairs `round(h·d)` stubs inside
/// its class and the rest across; features are `N(μ_c, σ_c²)`.
pub fn gen_gaussian_regular(spec: &GaussianClassSpec, n: usize, seed: u64) -> Result<GaussianGraph> {
    spec.validate()?;
    if n < 2 || !n.is_multiple_of(2) {
        return Err(SynthError::InvalidSpec(format!("need an even node count, got {n}")));
    }
    let half = n / 2;
    let same = spec.same_class_degree();
    let across = spec.degree - same;
    if same >= half || across > half {
        return Err(SynthError::Infeasible(format!(
            "degree split {same}+{across} does not fit classes of {half}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Graph);
    let mut parity_adjusted = None;
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(n * spec.degree / 2);
    for class in 0..2 {
        let nodes = class * half..(class + 1) * half;
        let mut stubs: Vec<usize> = nodes.clone().flat_map(|v| std::iter::repeat_n(v, same)).collect();
        if stubs.len() % 2 == 1 {
            let v = nodes.end - 1;
            let pos = stubs.iter().rposition(|&s| s == v).expect("node has stubs");
            stubs.remove(pos);
            parity_adjusted = Some(v);
        }
        stubs.shuffle(&mut rng);
        pairs.extend(stubs.chunks(2).map(|c| (c[0], c[1])));
    }
    let left: Vec<usize> = (0..half).flat_map(|v| std::iter::repeat_n(v, across)).collect();
    let mut right: Vec<usize> = (half..n).flat_map(|v| std::iter::repeat_n(v, across)).collect();
    right.shuffle(&mut rng);
    pairs.extend(left.into_iter().zip(right));
    repair_pairing(&mut pairs, half, &mut rng)?;

    let graph = Graph::from_edge_list(n, &pairs).expect("in range");
    debug_assert_eq!(graph.num_edges(), pairs.len());
    let labels = Labels::new((0..n).map(|v| usize::from(v >= half)).collect(), 2).expect("binary");
    let mut feat_rng = stream_rng(seed, Stream::Features);
    let class1 = Normal::new(spec.mu1, spec.sigma1).expect("sigma > 0");
    let class2 = Normal::new(spec.mu2, spec.sigma2).expect("sigma > 0");
    let features = DenseMatrix::from_fn(n, 1, |v, _| {
        if v < half {
            class1.sample(&mut feat_rng)
        } else {
            class2.sample(&mut feat_rng)
        }
    });
    Ok(GaussianGraph {
        graph,
        labels,
        features,
        realized_homophily: same as f64 / spec.degree as f64,
        parity_adjusted,
    })
}

/// Removes self-loops and repeated pairs by degree-preserving swaps with
/// randomly chosen partner pairs of the same kind (intra-class pairs swap
/// with intra-class pairs of the same class, cross pairs with cross pairs),
/// so both the degree sequence and the intra/cross split are unchanged.
fn repair_pairing(pairs: &mut [(usize, usize)], half: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    let kind = |(u, v): (usize, usize)| match (u < half, v < half) {
        (true, true) => 0u8,
        (false, false) => 1,
        _ => 2,
    };
    let key = |(u, v): (usize, usize)| (u.min(v), u.max(v));
    let mut count: HashMap<(usize, usize), usize> = HashMap::with_capacity(pairs.len());
    for &p in pairs.iter() {
        *count.entry(key(p)).or_default() += 1;
    }
    let is_bad = |p: (usize, usize), count: &HashMap<(usize, usize), usize>| p.0 == p.1 || count[&key(p)] > 1;
    let mut by_kind: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, &p) in pairs.iter().enumerate() {
        by_kind[kind(p) as usize].push(i);
    }
    let mut bad: Vec<usize> = (0..pairs.len()).filter(|&i| is_bad(pairs[i], &count)).collect();
    let budget = 1000 * (pairs.len() + 10);
    let mut attempts = 0;
    while let Some(i) = bad.pop() {
        if !is_bad(pairs[i], &count) {
            continue;
        }
        attempts += 1;
        if attempts > budget {
            return Err(SynthError::Infeasible("could not remove self-loops/multi-edges".into()));
        }
        let pool = &by_kind[kind(pairs[i]) as usize];
        let j = pool[rng.gen_range(0..pool.len())];
        if j == i {
            bad.push(i);
            continue;
        }
        let (a, b) = pairs[i];
        let (c, d) = pairs[j];
        // cross pairs keep (left, right) orientation
        let (p, q) = if kind(pairs[i]) == 2 || rng.gen_bool(0.5) {
            ((a, d), (c, b))
        } else {
            ((a, c), (b, d))
        };
        let dec = |count: &mut HashMap<(usize, usize), usize>, e| {
            *count.get_mut(&key(e)).expect("present") -= 1;
        };
        dec(&mut count, (a, b));
        dec(&mut count, (c, d));
        let ok = p.0 != p.1
            && q.0 != q.1
            && key(p) != key(q)
            && count.get(&key(p)).copied().unwrap_or(0) == 0
            && count.get(&key(q)).copied().unwrap_or(0) == 0;
        if ok {
            pairs[i] = p;
            pairs[j] = q;
            *count.entry(key(p)).or_default() += 1;
            *count.entry(key(q)).or_default() += 1;
        } else {
            *count.entry(key((a, b))).or_default() += 1;
            *count.entry(key((c, d))).or_default() += 1;
            bad.push(i);
        }
    }
    Ok(())
}

/// Mean of each node's neighbors' features (the node itself excluded);
/// isolated nodes get zeros.
pub fn mean_aggregate(graph: &Graph, features: &DenseMatrix) -> DenseMatrix {
    assert_eq!(graph.num_nodes(), features.rows());
    let mut out = DenseMatrix::zeros(features.rows(), features.cols());
    for v in 0..graph.num_nodes() {
        let nbrs = graph.neighbors(v);
        if nbrs.is_empty() {
            continue;
        }
        let row = out.row_mut(v);
        for &u in nbrs {
            for (o, x) in row.iter_mut().zip(features.row(u)) {
                *o += x;
            }
        }
        let k = nbrs.len() as f64;
        row.iter_mut().for_each(|o| *o /= k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::small;

    fn spec(h: f64, n: usize, deg: f64, seed: u64) -> SynSpec {
        SynSpec {
            num_nodes: n,
            num_classes: 5,
            homophily: h,
            avg_degree: deg,
            features: FeatureSource::GaussianPool {
                dim: 8,
                separation: 1.0,
                noise: 1.0,
                pool_size: 50,
            },
            seed,
        }
    }

    #[test]
    fn extreme_homophily_is_exact() {
        for (h, want) in [(1.0, 1.0), (0.0, 0.0)] {
            let g = gen_homophily_graph(&spec(h, 500, 4.0, 1)).unwrap();
            assert_eq!(edge_homophily(&g.graph, &g.labels).unwrap().value, want);
            assert_eq!(g.graph.num_edges(), 1000);
        }
    }

    #[test]
    fn intermediate_homophily_lands_in_band() {
        let g = gen_homophily_graph(&spec(0.3, 1500, 4.0, 7)).unwrap();
        let h = edge_homophily(&g.graph, &g.labels).unwrap().value;
        assert!((0.28..=0.32).contains(&h), "{h}");
        assert!(g.graph.validate().is_empty());
        assert_eq!(g.labels.class_counts(), vec![300; 5]);
        assert_eq!(g.features.shape(), (1500, 8));
    }

    #[test]
    fn homophily_concentrates_across_seeds() {
        let hs: Vec<f64> = (0..20)
            .map(|s| gen_homophily_graph(&spec(0.6, 1500, 4.0, s)).unwrap().realized_homophily)
            .collect();
        let mean = hs.iter().sum::<f64>() / 20.0;
        let std = (hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
        assert!(std < 0.01);
        assert!(hs.iter().all(|h| (h - 0.6).abs() <= 0.02));
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let a = gen_homophily_graph(&spec(0.4, 300, 4.0, 3)).unwrap();
        let b = gen_homophily_graph(&spec(0.4, 300, 4.0, 3)).unwrap();
        let c = gen_homophily_graph(&spec(0.4, 300, 4.0, 4)).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features, b.features);
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn infeasible_and_invalid_specs() {
        // classes of one node cannot host intra-class edges
        let tiny = SynSpec {
            num_nodes: 5,
            num_classes: 5,
            homophily: 1.0,
            avg_degree: 2.0,
            features: FeatureSource::GaussianPool {
                dim: 5,
                separation: 1.0,
                noise: 1.0,
                pool_size: 1,
            },
            seed: 0,
        };
        assert!(matches!(gen_homophily_graph(&tiny), Err(SynthError::Infeasible(_))));
        assert!(gen_homophily_graph(&spec(1.3, 100, 4.0, 0)).is_err());
        assert!(gen_homophily_graph(&spec(0.5, 101, 3.0, 0)).is_err());
    }

    #[test]
    fn imported_pool_rows_are_reused_by_class() {
        let pool = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        let s = SynSpec {
            num_nodes: 30,
            num_classes: 3,
            homophily: 0.5,
            avg_degree: 2.0,
            features: FeatureSource::Imported {
                features: pool,
                labels: vec![0, 1, 2],
            },
            seed: 2,
        };
        let g = gen_homophily_graph(&s).unwrap();
        for v in 0..30 {
            assert_eq!(g.features.row(v), &[g.labels.get(v) as f64; 2]);
        }
    }

    fn gspec(h: f64, d: usize) -> GaussianClassSpec {
        GaussianClassSpec {
            mu1: 0.0,
            sigma1: 1.0,
            mu2: 2.0,
            sigma2: 1.0,
            degree: d,
            homophily: h,
        }
    }

    #[test]
    fn gaussian_regular_h1_d2_is_intra_class_cycles() {
        let g = gen_gaussian_regular(&gspec(1.0, 2), 40, 3).unwrap();
        assert!(g.graph.degrees().iter().all(|&d| d == 2));
        assert_eq!(edge_homophily(&g.graph, &g.labels).unwrap().value, 1.0);
        assert!(g.parity_adjusted.is_none());
    }

    #[test]
    fn gaussian_regular_degrees_and_homophily() {
        for (h, d) in [(0.0, 3), (0.3, 10), (0.5, 4), (0.8, 5), (1.0, 6)] {
            let g = gen_gaussian_regular(&gspec(h, d), 400, 11).unwrap();
            assert!(g.graph.validate().is_empty());
            assert!(g.graph.degrees().iter().all(|&k| k == d), "h={h} d={d}");
            let measured = edge_homophily(&g.graph, &g.labels).unwrap().value;
            assert!((measured - g.realized_homophily).abs() < 1e-12);
            for v in 0..400 {
                let same = g.graph.neighbors(v).iter().filter(|&&u| g.labels.get(u) == g.labels.get(v)).count();
                assert_eq!(same, gspec(h, d).same_class_degree());
            }
        }
    }

    #[test]
    fn gaussian_regular_parity_fix_is_reported() {
        // 5 nodes per class with 1 same-class stub each: odd stub count
        let g = gen_gaussian_regular(&gspec(0.5, 2), 10, 0).unwrap();
        let adjusted = g.parity_adjusted.expect("parity fix");
        assert_eq!(g.graph.degree(adjusted), 1);
        assert_eq!(g.graph.degrees().iter().filter(|&&k| k != 2).count(), 2);
        assert!(gen_gaussian_regular(&gspec(0.5, 2), 11, 0).is_err());
    }

    #[test]
    fn aggregated_class_mean_matches_formula() {
        let s = gspec(0.7, 10);
        let g = gen_gaussian_regular(&s, 10_000, 5).unwrap();
        let agg = mean_aggregate(&g.graph, &g.features);
        let vals: Vec<f64> = (0..5000).map(|v| agg[(v, 0)]).collect();
        let mean = vals.iter().sum::<f64>() / 5000.0;
        let h = g.realized_homophily;
        let want = h * s.mu1 + (1.0 - h) * s.mu2;
        let sd = ((h * s.sigma1.powi(2) + (1.0 - h) * s.sigma2.powi(2)) / s.degree as f64).sqrt();
        assert!((mean - want).abs() < 3.0 * sd / 5000f64.sqrt());
    }

    #[test]
    fn mean_aggregate_examples() {
        let two = Graph::from_edge_list(2, &[(0, 1)]).unwrap();
        let x = DenseMatrix::from_rows(&[[1.0], [3.0]]);
        assert_eq!(mean_aggregate(&two, &x), DenseMatrix::from_rows(&[[3.0], [1.0]]));
        let tri = small::complete(3);
        let x = DenseMatrix::from_rows(&[[0.0], [3.0], [6.0]]);
        assert_eq!(mean_aggregate(&tri, &x), DenseMatrix::from_rows(&[[4.5], [3.0], [1.5]]));
        let empty = Graph::empty(3);
        assert_eq!(mean_aggregate(&empty, &x), DenseMatrix::zeros(3, 1));
    }
}
