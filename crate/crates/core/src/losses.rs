//! Feature-space loss functionals and their sample-space (expectation)
//! counterparts.
//!
//! The working object is the raw feature table `f(x)` (one row per node).
//! The weighted view `F_x = sqrt(w_x) f(x)` ties the matrix forms to the
//! expectation forms: `Tr(F^T L F)` equals the weighted pairwise alignment
//! sum, and `LSE(F F^T) - ||F||^2` equals the log-partition uniformity
//! expectation, so the InfoNCE objective decomposes exactly into the two.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use ndarray::{Array1, Array2};

use crate::graph::{AugmentationGraph, WeightMode};
use crate::{Error, Result};

/// An n-by-m table of raw (unconstrained) feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    raw: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(raw: Array2<f64>) -> Result<Self> {
        for ((i, j), v) in raw.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
        Ok(Self { raw })
    }

    pub fn n(&self) -> usize {
        self.raw.nrows()
    }

    pub fn m(&self) -> usize {
        self.raw.ncols()
    }

    pub fn raw(&self) -> &Array2<f64> {
        &self.raw
    }

    pub fn into_raw(self) -> Array2<f64> {
        self.raw
    }

    /// The weighted view against `g`: row `x` is `sqrt(w_x) * f(x)`.
    /// Recomputed on every call so it can never go stale.
    pub fn weighted(&self, g: &AugmentationGraph) -> Result<Array2<f64>> {
        self.check_bound(g)?;
        let mut out = self.raw.clone();
        for (i, &w) in g.node_weights().iter().enumerate() {
            let s = w.sqrt();
            for j in 0..self.m() {
                out[[i, j]] *= s;
            }
        }
        Ok(out)
    }

    pub fn check_bound(&self, g: &AugmentationGraph) -> Result<()> {
        if self.n() != g.n() {
            return Err(Error::ShapeMismatch {
                left: (self.n(), self.m()),
                right: (g.n(), g.n()),
            });
        }
        Ok(())
    }

    /// Gram matrix of the raw rows, `G_ij = f(i) . f(j)`, exactly symmetric.
    pub fn gram(&self) -> Array2<f64> {
        let n = self.n();
        let mut g = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = self.raw.row(i).dot(&self.raw.row(j));
                g[[i, j]] = v;
                g[[j, i]] = v;
            }
        }
        g
    }
}

/// Per-group ring buffers of stored feature rows, oldest first.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    capacity: usize,
    buffers: BTreeMap<usize, VecDeque<Array1<f64>>>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter(
                "memory bank capacity must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            buffers: BTreeMap::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends a snapshot for `group`, dropping the oldest beyond capacity.
    pub fn push(&mut self, group: usize, feature: Array1<f64>) {
        let buf = self.buffers.entry(group).or_default();
        buf.push_back(feature);
        while buf.len() > self.capacity {
            buf.pop_front();
        }
    }

    pub fn len(&self, group: usize) -> usize {
        self.buffers.get(&group).map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.values().all(VecDeque::is_empty)
    }

    /// Stored snapshots for `group`, oldest first.
    pub fn snapshots(&self, group: usize) -> Option<&VecDeque<Array1<f64>>> {
        self.buffers.get(&group)
    }

    /// Mean of the stored snapshots for `group`.
    pub fn aggregated(&self, group: usize) -> Result<Array1<f64>> {
        let buf = self
            .buffers
            .get(&group)
            .filter(|b| !b.is_empty())
            .ok_or(Error::EmptyBank(group))?;
        let mut sum = buf[0].clone();
        for snap in buf.iter().skip(1) {
            sum += snap;
        }
        Ok(sum / buf.len() as f64)
    }
}

/// Laplacian quadratic form `Tr(F^T L F)` over the weighted view.
///
/// In degree-consistent weight mode this equals the pairwise expectation
/// `1/2 sum_{x,x'} P_d(x,x') ||f(x) - f(x')||^2` (asserted in debug builds).
pub fn alignment_loss(f: &FeatureMatrix, g: &AugmentationGraph) -> Result<f64> {
    let w = f.weighted(g)?;
    let lw = g.laplacian().dot(&w);
    let value = (&w * &lw).sum();

    // The pairwise identity needs the joint marginal to match the node
    // weights, which holds in degree-consistent mode on graphs without
    // isolated nodes (an isolated node has a zero joint row but a
    // substituted positive weight).
    #[cfg(debug_assertions)]
    {
        if g.weight_mode() == WeightMode::DegreeConsistent && g.isolated_nodes().is_empty() {
            let pairwise = alignment_loss_pairwise(f, g)?;
            debug_assert!(
                (value - pairwise).abs() <= 1e-9 * (1.0 + value.abs()),
                "alignment matrix form {value} vs pairwise form {pairwise}"
            );
        }
    }

    Ok(value)
}

/// Expectation form of the alignment loss: a double loop over the joint
/// pair distribution of `g`.
pub fn alignment_loss_pairwise(f: &FeatureMatrix, g: &AugmentationGraph) -> Result<f64> {
    f.check_bound(g)?;
    let p = g.joint_distribution();
    let raw = f.raw();
    let n = f.n();
    let m = f.m();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if p[[i, j]] == 0.0 {
                continue;
            }
            let mut dist2 = 0.0;
            for k in 0..m {
                let d = raw[[i, k]] - raw[[j, k]];
                dist2 += d * d;
            }
            acc += p[[i, j]] * dist2;
        }
    }
    Ok(0.5 * acc)
}

/// Log-partition uniformity loss
/// `E_x log E_x' exp(f(x).f(x')/tau) - E_x ||f(x)||^2 / tau`,
/// expectations weighted by the node weights of `g`. Computed with per-row
/// max subtraction so large similarities do not overflow.
pub fn uniformity_loss(f: &FeatureMatrix, g: &AugmentationGraph, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::BadTemperature(temperature));
    }
    f.check_bound(g)?;
    let gram = f.gram();
    let w = g.node_weights();
    let n = f.n();

    let mut lse = 0.0;
    for i in 0..n {
        let mut row_max = f64::NEG_INFINITY;
        for j in 0..n {
            let z = gram[[i, j]] / temperature;
            if z > row_max {
                row_max = z;
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            sum += w[j] * ((gram[[i, j]] / temperature) - row_max).exp();
        }
        lse += w[i] * (sum.ln() + row_max);
    }

    let mut norms = 0.0;
    for i in 0..n {
        norms += w[i] * gram[[i, i]] / temperature;
    }
    Ok(lse - norms)
}

/// The feature-space InfoNCE objective: `alignment / tau + uniformity(tau)`.
/// At `tau = 1` this is exactly the sum of the two losses, and it matches
/// the sample-space InfoNCE evaluated with the joint distribution of `g`.
pub fn infonce_feature_space(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    temperature: f64,
) -> Result<f64> {
    Ok(alignment_loss(f, g)? / temperature + uniformity_loss(f, g, temperature)?)
}

/// Sample-space InfoNCE by direct double loop over the joint distribution:
/// `-E_{x,x+}[f(x).f(x+)]/tau + E_x log E_x' exp(f(x).f(x')/tau)`.
pub fn infonce_sample_space(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    temperature: f64,
) -> Result<f64> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::BadTemperature(temperature));
    }
    f.check_bound(g)?;
    let p = g.joint_distribution();
    let gram = f.gram();
    let w = g.node_weights();
    let n = f.n();

    let mut pull = 0.0;
    for i in 0..n {
        for j in 0..n {
            pull += p[[i, j]] * gram[[i, j]] / temperature;
        }
    }
    let mut push = 0.0;
    for i in 0..n {
        let mut row_max = f64::NEG_INFINITY;
        for j in 0..n {
            let z = gram[[i, j]] / temperature;
            if z > row_max {
                row_max = z;
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            sum += w[j] * ((gram[[i, j]] / temperature) - row_max).exp();
        }
        push += w[i] * (sum.ln() + row_max);
    }
    Ok(push - pull)
}

/// Multi-stage alignment loss `-E_x f(x)^T zbar(group(x))` where `zbar` is
/// the per-group mean of the snapshots stored in `bank`.
pub fn multi_stage_alignment_loss(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    bank: &MemoryBank,
) -> Result<f64> {
    f.check_bound(g)?;
    let groups = g.groups().ok_or(Error::MissingGroups)?;
    let w = g.node_weights();
    let mut acc = 0.0;
    let mut cache: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
    for i in 0..f.n() {
        let gid = groups[i];
        if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(gid) {
            e.insert(bank.aggregated(gid)?);
        }
        let z = &cache[&gid];
        acc += w[i] * f.raw().row(i).dot(z);
    }
    Ok(-acc)
}

/// Which set the attention coefficients normalize over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationSet {
    /// All nodes (the whole node set as the batch).
    All,
    /// Graph neighbors of the anchor only.
    Neighborhood,
}

/// Attention coefficients `a(x, x') = exp(beta f(x).f(x')) / sum_{S(x)}`,
/// computed from the current raw features and treated as constants.
/// Rows whose normalization set is empty are left all-zero.
pub fn attention_coefficients(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    beta: f64,
    set: NormalizationSet,
) -> Result<Array2<f64>> {
    if !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta must be finite, got {beta}")));
    }
    f.check_bound(g)?;
    let gram = f.gram();
    let n = f.n();
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let in_set = |j: usize| match set {
            NormalizationSet::All => true,
            NormalizationSet::Neighborhood => g.adjacency().entries()[[i, j]] > 0.0,
        };
        let mut row_max = f64::NEG_INFINITY;
        for j in 0..n {
            if in_set(j) {
                let z = beta * gram[[i, j]];
                if z > row_max {
                    row_max = z;
                }
            }
        }
        if row_max == f64::NEG_INFINITY {
            continue;
        }
        let mut denom = 0.0;
        for j in 0..n {
            if in_set(j) {
                let e = (beta * gram[[i, j]] - row_max).exp();
                out[[i, j]] = e;
                denom += e;
            }
        }
        for j in 0..n {
            out[[i, j]] /= denom;
        }
    }
    Ok(out)
}

/// Attention-reweighted alignment loss
/// `1/2 sum_{x,x+} P_d(x,x+) a(x,x+) ||f(x) - f(x+)||^2`.
pub fn attention_alignment_loss(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    beta: f64,
    set: NormalizationSet,
) -> Result<f64> {
    let attn = attention_coefficients(f, g, beta, set)?;
    let p = g.joint_distribution();
    let raw = f.raw();
    let n = f.n();
    let m = f.m();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c = p[[i, j]] * attn[[i, j]];
            if c == 0.0 {
                continue;
            }
            let mut dist2 = 0.0;
            for k in 0..m {
                let d = raw[[i, k]] - raw[[j, k]];
                dist2 += d * d;
            }
            acc += c * dist2;
        }
    }
    Ok(0.5 * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph;
    use crate::numerics::SymmetricMatrix;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg64;

    fn swap_graph() -> AugmentationGraph {
        let a = SymmetricMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        graph::AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent).unwrap()
    }

    fn random_instance(n: usize, m: usize, seed: u64) -> (AugmentationGraph, FeatureMatrix) {
        let mut rng = Pcg64::seed_from_u64(seed);
        let a = SymmetricMatrix::from_fn(n, |i, j| {
            if i != j && rng.gen::<f64>() < 0.5 {
                rng.gen_range(0.1..2.0)
            } else {
                0.0
            }
        });
        let g = graph::AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent).unwrap();
        let raw = Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0));
        (g, FeatureMatrix::new(raw).unwrap())
    }

    #[test]
    fn alignment_zero_for_identical_rows() {
        let g = swap_graph();
        let f = FeatureMatrix::new(array![[0.7, -0.2], [0.7, -0.2]]).unwrap();
        let v = alignment_loss(&f, &g).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn alignment_two_node_hand_value() {
        // Swap graph: joint P_d(0,1) = P_d(1,0) = 1/2.
        // f0 = (1,0), f1 = (0,0): both forms give 1/2.
        let g = swap_graph();
        let f = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let v = alignment_loss(&f, &g).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "got {v}");
        let p = alignment_loss_pairwise(&f, &g).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn alignment_matrix_equals_pairwise_oracle() {
        let (g, f) = random_instance(16, 3, 77);
        let a = alignment_loss(&f, &g).unwrap();
        let b = alignment_loss_pairwise(&f, &g).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn alignment_nonnegative() {
        for seed in 0..20 {
            let (g, f) = random_instance(10, 4, seed);
            assert!(alignment_loss(&f, &g).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn uniformity_zero_features() {
        let (g, _) = random_instance(6, 2, 1);
        let f = FeatureMatrix::new(Array2::zeros((6, 2))).unwrap();
        let v = uniformity_loss(&f, &g, 1.0).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn uniformity_two_equal_unit_rows() {
        // Uniform weights, both rows (1,0): log(e) - 1 = 0.
        let a = SymmetricMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let g = graph::AugmentationGraph::from_adjacency(a, WeightMode::Uniform).unwrap();
        let f = FeatureMatrix::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let v = uniformity_loss(&f, &g, 1.0).unwrap();
        assert!(v.abs() < 1e-12, "got {v}");
    }

    #[test]
    fn uniformity_prefers_spread_rows() {
        let a = SymmetricMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let g = graph::AugmentationGraph::from_adjacency(a, WeightMode::Uniform).unwrap();
        let spread = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let v = uniformity_loss(&spread, &g, 1.0).unwrap();
        let expect = ((std::f64::consts::E + 1.0) / 2.0).ln() - 1.0;
        assert!((v - expect).abs() < 1e-12, "got {v}, want {expect}");
        // Strictly smaller than the collapsed case (0), confirming the
        // uniformity preference for spread features.
        assert!(v < 0.0);
    }

    #[test]
    fn infonce_equals_sample_space() {
        for seed in [3u64, 8, 21] {
            let (g, f) = random_instance(8, 4, seed);
            for tau in [1.0, 0.5] {
                let a = infonce_feature_space(&f, &g, tau).unwrap();
                let b = infonce_sample_space(&f, &g, tau).unwrap();
                assert!((a - b).abs() < 1e-10, "tau {tau}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn infonce_zero_features_is_zero() {
        let (g, _) = random_instance(5, 3, 2);
        let f = FeatureMatrix::new(Array2::zeros((5, 3))).unwrap();
        assert!(infonce_feature_space(&f, &g, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn infonce_not_scale_invariant() {
        let (g, f) = random_instance(6, 3, 4);
        let scaled = FeatureMatrix::new(f.raw().mapv(|v| 2.0 * v)).unwrap();
        let a = infonce_feature_space(&f, &g, 1.0).unwrap();
        let b = infonce_feature_space(&scaled, &g, 1.0).unwrap();
        assert!((a - b).abs() > 1e-9);
    }

    #[test]
    fn multi_stage_self_alignment() {
        let (g, f) = random_instance(6, 3, 9);
        let g = g.with_groups(vec![0, 0, 1, 1, 2, 2]).unwrap();
        let mut bank = MemoryBank::new(4).unwrap();
        // Store exactly the current per-group weighted mean features.
        let w = g.node_weights();
        for gid in 0..3 {
            let idx = [2 * gid, 2 * gid + 1];
            let wsum: f64 = idx.iter().map(|&i| w[i]).sum();
            let mut z = Array1::<f64>::zeros(3);
            for &i in &idx {
                z = z + f.raw().row(i).to_owned() * (w[i] / wsum);
            }
            bank.push(gid, z);
        }
        let loss = multi_stage_alignment_loss(&f, &g, &bank).unwrap();
        // Equals -E_x f(x)^T z(group x), which for self-stored means is
        // -sum_x w_x f(x).zbar; check against direct evaluation.
        let mut want = 0.0;
        for i in 0..6 {
            let z = bank.aggregated(i / 2).unwrap();
            want -= w[i] * f.raw().row(i).dot(&z);
        }
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn multi_stage_singleton_groups_self_alignment_is_negative_norm() {
        // One node per group with the bank holding exactly the current
        // features: the loss reduces to -E ||f||^2.
        let (g, f) = random_instance(5, 3, 29);
        let g = g.with_groups(vec![0, 1, 2, 3, 4]).unwrap();
        let mut bank = MemoryBank::new(2).unwrap();
        for i in 0..5 {
            bank.push(i, f.raw().row(i).to_owned());
        }
        let loss = multi_stage_alignment_loss(&f, &g, &bank).unwrap();
        let w = g.node_weights();
        let want: f64 = -(0..5)
            .map(|i| w[i] * f.raw().row(i).dot(&f.raw().row(i)))
            .sum::<f64>();
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn multi_stage_bank_of_identical_snapshots_matches_single() {
        let (g, f) = random_instance(4, 2, 30);
        let g = g.with_groups(vec![0, 0, 1, 1]).unwrap();
        let snap0 = Array1::from(vec![0.3, -0.4]);
        let snap1 = Array1::from(vec![-1.0, 0.2]);

        let mut single = MemoryBank::new(1).unwrap();
        single.push(0, snap0.clone());
        single.push(1, snap1.clone());

        let mut multi = MemoryBank::new(3).unwrap();
        for _ in 0..2 {
            multi.push(0, snap0.clone());
            multi.push(1, snap1.clone());
        }

        let a = multi_stage_alignment_loss(&f, &g, &single).unwrap();
        let b = multi_stage_alignment_loss(&f, &g, &multi).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn multi_stage_empty_bank_names_group() {
        let (g, f) = random_instance(4, 2, 31);
        let g = g.with_groups(vec![0, 0, 1, 1]).unwrap();
        let mut bank = MemoryBank::new(2).unwrap();
        bank.push(0, Array1::zeros(2));
        match multi_stage_alignment_loss(&f, &g, &bank) {
            Err(Error::EmptyBank(1)) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn memory_bank_eviction_keeps_insertion_order() {
        let mut bank = MemoryBank::new(2).unwrap();
        for v in 0..4 {
            bank.push(7, Array1::from(vec![v as f64]));
        }
        let snaps = bank.snapshots(7).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[0][0], 2.0);
        assert_eq!(snaps[1][0], 3.0);
    }

    #[test]
    fn attention_beta_zero_is_uniform_scaling() {
        let (g, f) = random_instance(7, 3, 12);
        let a = attention_alignment_loss(&f, &g, 0.0, NormalizationSet::All).unwrap();
        let vanilla = alignment_loss_pairwise(&f, &g).unwrap();
        assert!((a - vanilla / 7.0).abs() < 1e-12, "{a} vs {}", vanilla / 7.0);
    }

    #[test]
    fn attention_identical_rows_zero() {
        let (g, _) = random_instance(5, 2, 13);
        let f = FeatureMatrix::new(Array2::from_elem((5, 2), 0.9)).unwrap();
        for beta in [0.0, 1.0, 5.0] {
            let v = attention_alignment_loss(&f, &g, beta, NormalizationSet::All).unwrap();
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn attention_double_loop_oracle() {
        let (g, f) = random_instance(9, 3, 14);
        let beta = 1.7;
        let got = attention_alignment_loss(&f, &g, beta, NormalizationSet::All).unwrap();

        // Fully naive reference: softmax without stabilization.
        let p = g.joint_distribution();
        let raw = f.raw();
        let mut want = 0.0;
        for i in 0..9 {
            let mut denom = 0.0;
            for j in 0..9 {
                denom += (beta * raw.row(i).dot(&raw.row(j))).exp();
            }
            for j in 0..9 {
                let attn = (beta * raw.row(i).dot(&raw.row(j))).exp() / denom;
                let mut d2 = 0.0;
                for k in 0..3 {
                    let d = raw[[i, k]] - raw[[j, k]];
                    d2 += d * d;
                }
                want += 0.5 * p[[i, j]] * attn * d2;
            }
        }
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn attention_neighborhood_normalization() {
        let a = SymmetricMatrix::new(array![
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 0.0]
        ])
        .unwrap();
        let g = graph::AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent).unwrap();
        let f = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.5]]).unwrap();
        let attn = attention_coefficients(&f, &g, 2.0, NormalizationSet::Neighborhood).unwrap();
        // Non-neighbors carry no attention mass; neighbor rows sum to 1.
        assert_eq!(attn[[0, 0]], 0.0);
        assert_eq!(attn[[0, 2]], 0.0);
        assert_eq!(attn[[0, 1]], 1.0);
        let row1: f64 = attn.row(1).sum();
        assert!((row1 - 1.0).abs() < 1e-12);
        assert_eq!(attn[[1, 1]], 0.0);
    }

    #[test]
    fn attention_isolated_node_has_zero_row_in_neighborhood_mode() {
        let a = SymmetricMatrix::new(array![
            [0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0]
        ])
        .unwrap();
        let g = graph::AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent).unwrap();
        let f = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 1.0], [0.3, 0.3]]).unwrap();
        let attn = attention_coefficients(&f, &g, 1.0, NormalizationSet::Neighborhood).unwrap();
        assert!(attn.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prop1_equivalence_sweep() {
        for seed in 0..100 {
            let n = 4 + (seed as usize % 13) * 4; // up to 52
            let m = 1 + (seed as usize % 8);
            let (g, f) = random_instance(n.min(64), m, seed);
            let lhs = infonce_sample_space(&f, &g, 1.0).unwrap();
            let rhs = alignment_loss(&f, &g).unwrap() + uniformity_loss(&f, &g, 1.0).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9, "seed {seed}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn prop1_holds_in_uniform_mode_too() {
        for seed in 0..20 {
            let (g, f) = random_instance(12, 3, seed + 500);
            let g = g.with_weight_mode(WeightMode::Uniform).unwrap();
            let lhs = infonce_sample_space(&f, &g, 1.0).unwrap();
            let rhs = alignment_loss(&f, &g).unwrap() + uniformity_loss(&f, &g, 1.0).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9, "seed {seed}: {lhs} vs {rhs}");
        }
    }
}
