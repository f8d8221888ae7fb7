//! Discrete-time update rules on the working feature rows, and the
//! trajectory runner.
//!
//! Updates act on the raw feature table (the object that is initialized
//! uniformly and message-passed in the synthetic experiment). The data-side
//! rules propagate with the graph's normalized adjacency; the feature-side
//! rules propagate with the affinity graph rebuilt from the current features
//! at every step.
//!
//! Two conventions worth spelling out:
//! - The stop-gradient uniformity update `[(1+a)I - a Abar']F` is the exact
//!   gradient step of the uniformity loss with the target branch frozen.
//! - The plain uniformity update is implemented as the exact gradient step
//!   `[(1+2a)I - a Abar'_sym]F` with `Abar'_sym = Abar' + Abar'^T`; the
//!   coefficient on the mixing term is half the one usually quoted next to
//!   the sum form, which double-counts the two transpose halves. The finite
//!   difference checks in `oracle` pin the implemented direction.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use crate::analysis;
use crate::graph::{class_indices, class_subgraph, AugmentationGraph, WeightMode};
use crate::losses::{
    alignment_loss, attention_coefficients, uniformity_loss, FeatureMatrix, MemoryBank,
    NormalizationSet,
};
use crate::numerics::{stable_row_softmax_weighted, SymmetricMatrix};
use crate::{Error, Result};

/// Entry magnitude beyond which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Whether the feature-side softmax weights columns by node weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityWeighting {
    /// Literal softmax of the Gram rows.
    Unweighted,
    /// Columns weighted by the graph's node weights, so the fake conditional
    /// can match a non-regular data conditional.
    Weighted,
}

/// The feature-side "fake" graph: elementwise-exponentiated similarities and
/// their normalizations, rebuilt from the current features.
#[derive(Debug, Clone)]
pub struct AffinityGraph {
    /// `exp(G/tau - shift)` with `G` the raw Gram matrix; strictly positive
    /// whenever `G/tau - shift` stays above the exp underflow range.
    pub a_exp: SymmetricMatrix,
    /// Global shift applied inside the exponential (0 when all scores are
    /// nonpositive); it cancels exactly in every normalized quantity.
    pub shift: f64,
    /// Row normalizers of the stored `a_exp` (weighted in weighted mode).
    pub d_exp: Vec<f64>,
    /// Row-stochastic normalization (the fake conditional).
    pub a_bar: Array2<f64>,
    /// `a_bar + a_bar^T`, stored as a general (non-symmetric) matrix.
    pub a_bar_sym: Array2<f64>,
}

/// Builds the affinity graph from raw features with the literal (unweighted)
/// softmax normalization.
pub fn affinity_graph(f: &FeatureMatrix, temperature: f64) -> Result<AffinityGraph> {
    affinity_graph_with(f, temperature, None)
}

/// Affinity graph with optional node-weight column multipliers inside the
/// softmax normalization.
pub fn affinity_graph_with(
    f: &FeatureMatrix,
    temperature: f64,
    weights: Option<&[f64]>,
) -> Result<AffinityGraph> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::BadTemperature(temperature));
    }
    let n = f.n();
    let gram = f.gram();

    let mut max_score = f64::NEG_INFINITY;
    for v in gram.iter() {
        let z = v / temperature;
        if z > max_score {
            max_score = z;
        }
    }
    let shift = max_score.max(0.0);

    let a_exp = SymmetricMatrix::from_fn(n, |i, j| (gram[[i, j]] / temperature - shift).exp());
    let d_exp: Vec<f64> = (0..n)
        .map(|i| match weights {
            None => a_exp.entries().row(i).sum(),
            Some(w) => (0..n).map(|j| w[j] * a_exp.entries()[[i, j]]).sum(),
        })
        .collect();

    let a_bar = stable_row_softmax_weighted(&gram, temperature, weights)?;
    let a_bar_sym = &a_bar + &a_bar.t();

    Ok(AffinityGraph {
        a_exp,
        shift,
        d_exp,
        a_bar,
        a_bar_sym,
    })
}

fn resolve_weighting(
    g: &AugmentationGraph,
    weighting: AffinityWeighting,
) -> Option<&[f64]> {
    match weighting {
        AffinityWeighting::Unweighted => None,
        AffinityWeighting::Weighted => Some(g.node_weights()),
    }
}

/// One gradient-descent step on the alignment loss:
/// `F' = [(1-2a)I + 2a Abar]F`, identical to the per-node local update and
/// to `F - a * 2LF`.
pub fn alignment_step(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    alpha: f64,
) -> Result<FeatureMatrix> {
    f.check_bound(g)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
    }
    let prop = g.normalized_adjacency().dot(f.raw());
    let keep = 1.0 - 2.0 * alpha;
    let mix = 2.0 * alpha;
    let out = f.raw().mapv(|v| keep * v) + prop.mapv(|v| mix * v);
    FeatureMatrix::new(out)
}

/// One uniformity step. Without stop gradient this is the exact descent step
/// `[(1+2a)I - a Abar'_sym]F`; with stop gradient it is
/// `[(1+a)I - a Abar']F`. Negative `alpha` is permitted (gradient ascent;
/// `alpha = -1` with stop gradient reproduces the self-attention update).
pub fn uniformity_step(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    alpha: f64,
    temperature: f64,
    stop_gradient: bool,
) -> Result<FeatureMatrix> {
    uniformity_step_with(f, g, alpha, temperature, stop_gradient, AffinityWeighting::Unweighted)
}

pub fn uniformity_step_with(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    alpha: f64,
    temperature: f64,
    stop_gradient: bool,
    weighting: AffinityWeighting,
) -> Result<FeatureMatrix> {
    f.check_bound(g)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
    }
    let aff = affinity_graph_with(f, temperature, resolve_weighting(g, weighting))?;
    let out = if stop_gradient {
        let prop = aff.a_bar.dot(f.raw());
        let keep = 1.0 + alpha;
        azip_combine(f.raw(), &prop, keep, -alpha)
    } else {
        let prop = aff.a_bar_sym.dot(f.raw());
        let keep = 1.0 + 2.0 * alpha;
        azip_combine(f.raw(), &prop, keep, -alpha)
    };
    FeatureMatrix::new(out)
}

// Elementwise `c1 * a + c2 * b`, evaluated in a fixed order so equalities
// between rules hold bit-for-bit.
fn azip_combine(a: &Array2<f64>, b: &Array2<f64>, c1: f64, c2: f64) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(a.dim());
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = c1 * a[[i, j]] + c2 * b[[i, j]];
    }
    out
}

/// One combined contrastive step (stop-gradient form):
/// `F' = F + a (Abar - Abar') F`.
pub fn contrastive_step(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    alpha: f64,
    temperature: f64,
) -> Result<FeatureMatrix> {
    contrastive_step_with(f, g, alpha, temperature, AffinityWeighting::Unweighted)
}

pub fn contrastive_step_with(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    alpha: f64,
    temperature: f64,
    weighting: AffinityWeighting,
) -> Result<FeatureMatrix> {
    f.check_bound(g)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
    }
    let aff = affinity_graph_with(f, temperature, resolve_weighting(g, weighting))?;
    let data_prop = g.normalized_adjacency().dot(f.raw());
    let fake_prop = aff.a_bar.dot(f.raw());
    let mut out = f.raw().clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v += alpha * (data_prop[[i, j]] - fake_prop[[i, j]]);
    }
    FeatureMatrix::new(out)
}

/// The self-attention update `F' = Abar' F` with `Abar'` the row-softmax of
/// the raw Gram matrix (temperature 1).
pub fn self_attention_step(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    let aff = affinity_graph(f, 1.0)?;
    FeatureMatrix::new(aff.a_bar.dot(f.raw()))
}

/// Graph-convolution step with flexible step size:
/// `F' = [(1-dt)I + dt Abar]F`; `dt = 1` is the canonical convolution and
/// `dt = 2a` reproduces the alignment step bit-for-bit.
pub fn dgc_step(f: &FeatureMatrix, g: &AugmentationGraph, delta_t: f64) -> Result<FeatureMatrix> {
    f.check_bound(g)?;
    if !delta_t.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "delta_t must be finite, got {delta_t}"
        )));
    }
    let prop = g.normalized_adjacency().dot(f.raw());
    let keep = 1.0 - delta_t;
    let out = f.raw().mapv(|v| keep * v) + prop.mapv(|v| delta_t * v);
    FeatureMatrix::new(out)
}

/// Attention-reweighted alignment step:
/// `F'_x = (1-2a) F_x + 2a sum_{x+} Abar_{x,x+} attn(x,x+) F_{x+}`,
/// with the attention coefficients frozen at the pre-step features.
pub fn attention_alignment_step(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    alpha: f64,
    beta: f64,
    set: NormalizationSet,
) -> Result<FeatureMatrix> {
    f.check_bound(g)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
    }
    let attn = attention_coefficients(f, g, beta, set)?;
    let abar = g.normalized_adjacency();
    let n = f.n();
    let mut mixed = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            mixed[[i, j]] = abar[[i, j]] * attn[[i, j]];
        }
    }
    let prop = mixed.dot(f.raw());
    let keep = 1.0 - 2.0 * alpha;
    let mix = 2.0 * alpha;
    let out = f.raw().mapv(|v| keep * v) + prop.mapv(|v| mix * v);
    FeatureMatrix::new(out)
}

/// Weighted within-group mean of the raw feature rows.
fn group_mean_features(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
) -> Result<Vec<(usize, Array1<f64>)>> {
    let groups = g.groups().ok_or(Error::MissingGroups)?;
    let w = g.node_weights();
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();

    let mut out = Vec::with_capacity(ids.len());
    for gid in ids {
        let members: Vec<usize> = (0..f.n()).filter(|&i| groups[i] == gid).collect();
        let wsum: f64 = members.iter().map(|&i| w[i]).sum();
        let mut z = Array1::<f64>::zeros(f.m());
        for &i in &members {
            z = z + f.raw().row(i).to_owned() * (w[i] / wsum);
        }
        out.push((gid, z));
    }
    Ok(out)
}

/// One multi-stage aggregation step. The current per-group features are
/// pushed into the bank first (so the first call seeds it with the initial
/// features, and after `t` steps the oldest snapshot is from step
/// `t - capacity`), then every row moves toward its group's bank mean:
/// `F'_x = F_x + a * zbar(group(x))`.
pub fn multi_stage_step(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    bank: &mut MemoryBank,
    alpha: f64,
) -> Result<FeatureMatrix> {
    f.check_bound(g)?;
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
    }
    let groups = g.groups().ok_or(Error::MissingGroups)?;

    for (gid, z) in group_mean_features(f, g)? {
        bank.push(gid, z);
    }

    let mut out = f.raw().clone();
    for i in 0..f.n() {
        let z = bank.aggregated(groups[i])?;
        for k in 0..f.m() {
            out[[i, k]] += alpha * z[k];
        }
    }
    FeatureMatrix::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreprocessMode {
    None,
    Center,
    L2Normalize,
    CenterThenNormalize,
}

/// Feature preprocessing: centering subtracts the w-weighted mean row;
/// normalization rescales each raw row to unit Euclidean norm.
pub fn preprocess(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    mode: PreprocessMode,
) -> Result<FeatureMatrix> {
    match mode {
        PreprocessMode::None => Ok(f.clone()),
        PreprocessMode::Center => center(f, g),
        PreprocessMode::L2Normalize => l2_normalize(f),
        PreprocessMode::CenterThenNormalize => l2_normalize(&center(f, g)?),
    }
}

fn center(f: &FeatureMatrix, g: &AugmentationGraph) -> Result<FeatureMatrix> {
    f.check_bound(g)?;
    let w = g.node_weights();
    let m = f.m();
    let mut mean = vec![0.0; m];
    for i in 0..f.n() {
        for k in 0..m {
            mean[k] += w[i] * f.raw()[[i, k]];
        }
    }
    let mut out = f.raw().clone();
    for i in 0..f.n() {
        for k in 0..m {
            out[[i, k]] -= mean[k];
        }
    }
    FeatureMatrix::new(out)
}

fn l2_normalize(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut out = f.raw().clone();
    for i in 0..f.n() {
        let norm = f.raw().row(i).dot(&f.raw().row(i)).sqrt();
        if norm < 1e-30 {
            return Err(Error::ZeroNormRow(i));
        }
        for k in 0..f.m() {
            out[[i, k]] /= norm;
        }
    }
    FeatureMatrix::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    Alignment,
    Uniformity,
    UniformitySg,
    Contrastive,
    AttentionAlignment,
    MultiStage,
    SelfAttention,
    Dgc,
}

impl UpdateRule {
    /// Rules whose propagation factor is `1 - 2 a lambda`; large steps can
    /// overshoot and oscillate.
    pub fn is_alignment_family(self) -> bool {
        matches!(
            self,
            UpdateRule::Alignment
                | UpdateRule::Contrastive
                | UpdateRule::AttentionAlignment
                | UpdateRule::Dgc
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            UpdateRule::Alignment => "alignment",
            UpdateRule::Uniformity => "uniformity",
            UpdateRule::UniformitySg => "uniformity_sg",
            UpdateRule::Contrastive => "contrastive",
            UpdateRule::AttentionAlignment => "attention_alignment",
            UpdateRule::MultiStage => "multi_stage",
            UpdateRule::SelfAttention => "self_attention",
            UpdateRule::Dgc => "dgc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    /// Independent uniform entries in `[lo, hi)`.
    UniformBox { lo: f64, hi: f64 },
    /// The caller provides the initial features.
    Given,
}

/// How the runner resolves the feature-side softmax weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffinityWeightingConfig {
    /// Weighted on degree-consistent graphs, unweighted on uniform ones.
    FollowGraph,
    Unweighted,
    Weighted,
}

impl AffinityWeightingConfig {
    pub fn resolve(self, g: &AugmentationGraph) -> AffinityWeighting {
        match self {
            AffinityWeightingConfig::Unweighted => AffinityWeighting::Unweighted,
            AffinityWeightingConfig::Weighted => AffinityWeighting::Weighted,
            AffinityWeightingConfig::FollowGraph => match g.weight_mode() {
                WeightMode::Uniform => AffinityWeighting::Unweighted,
                WeightMode::DegreeConsistent => AffinityWeighting::Weighted,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct DynamicsConfig {
    pub rule: UpdateRule,
    pub alpha: f64,
    pub steps: usize,
    pub temperature: f64,
    pub beta: f64,
    pub stages: usize,
    pub delta_t: f64,
    pub preprocess: PreprocessMode,
    pub init: InitSpec,
    pub dim: usize,
    pub seed: u64,
    pub snapshot_every: usize,
    pub normalization_set: NormalizationSet,
    pub affinity_weighting: AffinityWeightingConfig,
    pub record_snapshots: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            rule: UpdateRule::Contrastive,
            alpha: 0.1,
            steps: 1000,
            temperature: 1.0,
            beta: 1.0,
            stages: 1,
            delta_t: 1.0,
            preprocess: PreprocessMode::None,
            init: InitSpec::UniformBox { lo: -1.0, hi: 1.0 },
            dim: 2,
            seed: 17,
            snapshot_every: 10,
            normalization_set: NormalizationSet::All,
            affinity_weighting: AffinityWeightingConfig::FollowGraph,
            record_snapshots: false,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::InvalidParameter("alpha must be finite".into()));
        }
        if self.rule.is_alignment_family() && !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be > 0 for rule {}, got {}",
                self.rule.name(),
                self.alpha
            )));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::BadTemperature(self.temperature));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidParameter("beta must be finite".into()));
        }
        if self.stages == 0 {
            return Err(Error::InvalidParameter("stages must be positive".into()));
        }
        if !self.delta_t.is_finite() {
            return Err(Error::InvalidParameter("delta_t must be finite".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::InvalidParameter(
                "snapshot_every must be positive".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        if let InitSpec::UniformBox { lo, hi } = self.init {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "init box [{lo}, {hi}) is empty or non-finite"
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic initial features for `n` nodes under `cfg.init`.
pub fn initial_features(cfg: &DynamicsConfig, n: usize) -> Result<FeatureMatrix> {
    cfg.validate()?;
    match cfg.init {
        InitSpec::Given => Err(Error::InvalidParameter(
            "init = given requires caller-provided features".into(),
        )),
        InitSpec::UniformBox { lo, hi } => {
            let mut rng = Pcg64::seed_from_u64(cfg.seed);
            let raw = Array2::from_shape_fn((n, cfg.dim), |_| rng.gen_range(lo..hi));
            FeatureMatrix::new(raw)
        }
    }
}

/// One logged point of a trajectory.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub l_align: f64,
    pub l_unif: f64,
    pub l_total: f64,
    /// Per-class subspace distance, aligned with `TrajectoryRecord::class_ids`.
    pub d_m: Vec<f64>,
    pub residual: f64,
    pub snapshot: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct DivergenceEvent {
    pub step: usize,
    pub node: usize,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub class_ids: Vec<usize>,
    pub records: Vec<StepRecord>,
    pub warnings: Vec<String>,
    pub diverged: Option<DivergenceEvent>,
    pub final_features: FeatureMatrix,
}

/// Applies the configured rule `steps` times, recording losses and metrics
/// at step 0, every `snapshot_every` steps, and the final step. On
/// divergence the run stops early, the partial record is returned, and
/// `diverged` carries the step and offending node.
pub fn run(
    g: &AugmentationGraph,
    f0: &FeatureMatrix,
    cfg: &DynamicsConfig,
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    f0.check_bound(g)?;

    let mut warnings: Vec<String> = g.warnings().to_vec();
    if cfg.rule.is_alignment_family() && cfg.alpha >= 0.5 {
        warnings.push(format!(
            "alpha = {} >= 0.5 for rule {}: the contraction factor |1 - 2 a lambda| can exceed 1 and oscillate",
            cfg.alpha,
            cfg.rule.name()
        ));
    }

    let weighting = cfg.affinity_weighting.resolve(g);

    // Per-class projections are recomputed once per run; the graph is
    // immutable while the dynamics run.
    let class_ids = g.class_ids();
    let mut class_nodes: Vec<Vec<usize>> = Vec::with_capacity(class_ids.len());
    let mut class_e1: Vec<Array1<f64>> = Vec::with_capacity(class_ids.len());
    for &k in &class_ids {
        let idx = class_indices(g, k)?;
        let sub = class_subgraph(g, k)?;
        class_e1.push(analysis::top_eigenvector(&sub)?);
        class_nodes.push(idx);
    }

    let data_cond = analysis::data_conditional(g);
    let mut bank = MemoryBank::new(cfg.stages)?;
    if cfg.rule == UpdateRule::MultiStage && g.groups().is_none() {
        return Err(Error::MissingGroups);
    }

    let mut f = f0.clone();
    let mut records: Vec<StepRecord> = Vec::new();
    let mut diverged = None;

    let record_step = |f: &FeatureMatrix, step: usize, snap: bool| -> Result<StepRecord> {
        let l_align = alignment_loss(f, g)?;
        let l_unif = uniformity_loss(f, g, cfg.temperature)?;
        let l_total = l_align / cfg.temperature + l_unif;
        let mut d_m = Vec::with_capacity(class_ids.len());
        for (idx, e1) in class_nodes.iter().zip(&class_e1) {
            let rows = select_rows(f.raw(), idx);
            d_m.push(analysis::projection_residual(&rows, e1));
        }
        let model = analysis::model_conditional_with(f, g, cfg.temperature, weighting)?;
        let residual = analysis::conditional_residual(&data_cond, &model);
        Ok(StepRecord {
            step,
            l_align,
            l_unif,
            l_total,
            d_m,
            residual,
            snapshot: snap.then(|| f.raw().clone()),
        })
    };

    records.push(record_step(&f, 0, cfg.record_snapshots)?);

    for t in 1..=cfg.steps {
        let next = match cfg.rule {
            UpdateRule::Alignment => alignment_step(&f, g, cfg.alpha)?,
            UpdateRule::Uniformity => {
                uniformity_step_with(&f, g, cfg.alpha, cfg.temperature, false, weighting)?
            }
            UpdateRule::UniformitySg => {
                uniformity_step_with(&f, g, cfg.alpha, cfg.temperature, true, weighting)?
            }
            UpdateRule::Contrastive => {
                contrastive_step_with(&f, g, cfg.alpha, cfg.temperature, weighting)?
            }
            UpdateRule::AttentionAlignment => {
                attention_alignment_step(&f, g, cfg.alpha, cfg.beta, cfg.normalization_set)?
            }
            UpdateRule::MultiStage => multi_stage_step(&f, g, &mut bank, cfg.alpha)?,
            UpdateRule::SelfAttention => self_attention_step(&f)?,
            UpdateRule::Dgc => dgc_step(&f, g, cfg.delta_t)?,
        };
        let next = preprocess(&next, g, cfg.preprocess)?;

        if let Some(node) = divergent_node(next.raw()) {
            diverged = Some(DivergenceEvent { step: t, node });
            warnings.push(format!(
                "divergence at step {t}: |entry| > {DIVERGENCE_LIMIT:.1e} at node {node}"
            ));
            break;
        }
        f = next;

        if t % cfg.snapshot_every == 0 || t == cfg.steps {
            records.push(record_step(&f, t, cfg.record_snapshots)?);
        }
    }

    Ok(TrajectoryRecord {
        class_ids,
        records,
        warnings,
        diverged,
        final_features: f,
    })
}

fn divergent_node(raw: &Array2<f64>) -> Option<usize> {
    for ((i, _), v) in raw.indexed_iter() {
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Some(i);
        }
    }
    None
}

pub(crate) fn select_rows(raw: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((idx.len(), raw.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&raw.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_threshold_graph, AugmentationGraph};
    use crate::numerics::frobenius_distance;
    use ndarray::array;

    fn swap_graph() -> AugmentationGraph {
        let a = SymmetricMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent).unwrap()
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
        let g = AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent).unwrap();
        let raw = Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..1.0));
        (g, FeatureMatrix::new(raw).unwrap())
    }

    #[test]
    fn affinity_zero_features_uniform() {
        let f = FeatureMatrix::new(Array2::zeros((4, 2))).unwrap();
        let aff = affinity_graph(&f, 1.0).unwrap();
        for v in aff.a_bar.iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        for v in aff.a_exp.entries().iter() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        assert_eq!(aff.shift, 0.0);
    }

    #[test]
    fn affinity_two_equal_unit_rows() {
        let f = FeatureMatrix::new(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let aff = affinity_graph(&f, 1.0).unwrap();
        for v in aff.a_bar.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn affinity_rows_match_softmax_and_sum_identity() {
        let (_, f) = random_instance(7, 3, 50);
        let aff = affinity_graph(&f, 0.8).unwrap();
        let softmax =
            crate::numerics::stable_row_softmax(&f.gram(), 0.8).unwrap();
        assert!(frobenius_distance(&aff.a_bar, &softmax).unwrap() < 1e-12);
        for i in 0..7 {
            let s: f64 = aff.a_bar.row(i).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
        // a_bar_sym is the sum of the row- and column-normalized forms,
        // checked against an independent reconstruction from a_exp / d_exp.
        let n = 7;
        for i in 0..n {
            for j in 0..n {
                let direct = aff.a_exp.entries()[[i, j]] / aff.d_exp[i]
                    + aff.a_exp.entries()[[i, j]] / aff.d_exp[j];
                assert!((aff.a_bar_sym[[i, j]] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affinity_large_scores_are_stable() {
        let f = FeatureMatrix::new(array![[30.0, 0.0], [-30.0, 0.0], [0.0, 30.0]]).unwrap();
        let aff = affinity_graph(&f, 1.0).unwrap();
        assert!(aff.shift > 0.0);
        for i in 0..3 {
            let s: f64 = aff.a_bar.row(i).sum();
            assert!((s - 1.0).abs() < 1e-10);
            assert!(aff.a_bar.row(i).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn alignment_step_identity_on_self_loops() {
        // Abar = I for a diagonal-only adjacency.
        let a = SymmetricMatrix::new(array![[2.0, 0.0], [0.0, 3.0]]).unwrap();
        let g = AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent).unwrap();
        let f = FeatureMatrix::new(array![[1.0, -2.0], [0.5, 0.25]]).unwrap();
        let out = alignment_step(&f, &g, 0.3).unwrap();
        assert!(frobenius_distance(out.raw(), f.raw()).unwrap() < 1e-15);
    }

    #[test]
    fn alignment_step_swaps_rows_at_half_step() {
        let g = swap_graph();
        let f = FeatureMatrix::new(array![[1.0, 2.0], [-3.0, 4.0]]).unwrap();
        let out = alignment_step(&f, &g, 0.5).unwrap();
        assert_eq!(out.raw()[[0, 0]], -3.0);
        assert_eq!(out.raw()[[0, 1]], 4.0);
        assert_eq!(out.raw()[[1, 0]], 1.0);
        assert_eq!(out.raw()[[1, 1]], 2.0);
    }

    #[test]
    fn alignment_step_constant_rows_fixed_on_regular_graph() {
        // Cycle graph C4 is regular, so constant rows are a consensus fixed point.
        let a = SymmetricMatrix::new(array![
            [0.0, 1.0, 0.0, 1.0],
            [1.0, 0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0, 1.0],
            [1.0, 0.0, 1.0, 0.0]
        ])
        .unwrap();
        let g = AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent).unwrap();
        let f = FeatureMatrix::new(Array2::from_elem((4, 3), 0.8)).unwrap();
        let out = alignment_step(&f, &g, 0.2).unwrap();
        assert!(frobenius_distance(out.raw(), f.raw()).unwrap() < 1e-12);
    }

    #[test]
    fn alignment_step_equals_gradient_form() {
        let (g, f) = random_instance(10, 4, 60);
        let alpha = 0.17;
        let step = alignment_step(&f, &g, alpha).unwrap();
        // F - a * 2 L F via an independent evaluation.
        let lf = g.laplacian().dot(f.raw());
        let grad_form = f.raw() - &lf.mapv(|v| 2.0 * alpha * v);
        assert!(frobenius_distance(step.raw(), &grad_form).unwrap() < 1e-12);
    }

    #[test]
    fn alignment_step_matches_local_update() {
        let (g, f) = random_instance(12, 3, 61);
        let alpha = 0.07;
        let step = alignment_step(&f, &g, alpha).unwrap();
        let abar = g.normalized_adjacency();
        for x in 0..12 {
            for k in 0..3 {
                let mut agg = 0.0;
                for other in 0..12 {
                    agg += abar[[x, other]] * f.raw()[[other, k]];
                }
                let local = (1.0 - 2.0 * alpha) * f.raw()[[x, k]] + 2.0 * alpha * agg;
                assert!((step.raw()[[x, k]] - local).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniformity_zero_alpha_is_identity() {
        let (g, f) = random_instance(6, 2, 62);
        for sg in [true, false] {
            let out = uniformity_step(&f, &g, 0.0, 1.0, sg).unwrap();
            assert!(frobenius_distance(out.raw(), f.raw()).unwrap() < 1e-15);
        }
    }

    #[test]
    fn uniformity_zero_features_fixed_point() {
        let (g, _) = random_instance(5, 2, 63);
        let f = FeatureMatrix::new(Array2::zeros((5, 2))).unwrap();
        for sg in [true, false] {
            let out = uniformity_step(&f, &g, 0.3, 1.0, sg).unwrap();
            assert!(frobenius_distance(out.raw(), f.raw()).unwrap() < 1e-15);
        }
    }

    #[test]
    fn uniformity_sg_at_minus_one_is_self_attention_bitwise() {
        let (g, f) = random_instance(9, 4, 64);
        let a = uniformity_step(&f, &g, -1.0, 1.0, true).unwrap();
        let b = self_attention_step(&f).unwrap();
        for (x, y) in a.raw().iter().zip(b.raw().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn contrastive_alpha_zero_identity() {
        let (g, f) = random_instance(7, 3, 65);
        let out = contrastive_step(&f, &g, 0.0, 1.0).unwrap();
        assert!(frobenius_distance(out.raw(), f.raw()).unwrap() < 1e-15);
    }

    #[test]
    fn contrastive_recomposition_oracle() {
        // Displacement of the combined rule equals the alignment displacement
        // at alpha/2 plus the stop-gradient uniformity displacement at alpha,
        // both evaluated at the same pre-step features.
        let (g, f) = random_instance(8, 3, 66);
        let alpha = 0.23;
        let combined = contrastive_step(&f, &g, alpha, 1.0).unwrap();
        let align = alignment_step(&f, &g, alpha / 2.0).unwrap();
        let unif = uniformity_step(&f, &g, alpha, 1.0, true).unwrap();
        let mut recomposed = f.raw().clone();
        for ((i, j), v) in recomposed.indexed_iter_mut() {
            *v += (align.raw()[[i, j]] - f.raw()[[i, j]]) + (unif.raw()[[i, j]] - f.raw()[[i, j]]);
        }
        assert!(frobenius_distance(combined.raw(), &recomposed).unwrap() < 1e-12);
    }

    #[test]
    fn self_attention_equal_rows_stay_equal() {
        let f = FeatureMatrix::new(Array2::from_elem((5, 3), 0.4)).unwrap();
        let out = self_attention_step(&f).unwrap();
        assert!(frobenius_distance(out.raw(), f.raw()).unwrap() < 1e-12);
    }

    #[test]
    fn self_attention_contracts_pairwise_distances() {
        let (_, f) = random_instance(8, 3, 67);
        let max_pairwise = |raw: &Array2<f64>| {
            let mut best = 0.0f64;
            for i in 0..8 {
                for j in 0..8 {
                    let mut d2 = 0.0;
                    for k in 0..3 {
                        let d = raw[[i, k]] - raw[[j, k]];
                        d2 += d * d;
                    }
                    best = best.max(d2.sqrt());
                }
            }
            best
        };
        let mut cur = f;
        let mut prev = max_pairwise(cur.raw());
        for _ in 0..50 {
            cur = self_attention_step(&cur).unwrap();
            let now = max_pairwise(cur.raw());
            assert!(now <= prev + 1e-12, "{now} > {prev}");
            prev = now;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn dgc_unit_step_is_plain_convolution() {
        let (g, f) = random_instance(6, 2, 68);
        let out = dgc_step(&f, &g, 1.0).unwrap();
        let conv = g.normalized_adjacency().dot(f.raw());
        assert!(frobenius_distance(out.raw(), &conv).unwrap() < 1e-15);
    }

    #[test]
    fn dgc_zero_step_identity() {
        let (g, f) = random_instance(6, 2, 69);
        let out = dgc_step(&f, &g, 0.0).unwrap();
        assert!(frobenius_distance(out.raw(), f.raw()).unwrap() < 1e-15);
    }

    #[test]
    fn dgc_two_alpha_equals_alignment_bitwise() {
        let (g, f) = random_instance(9, 3, 70);
        let alpha = 0.13;
        let a = alignment_step(&f, &g, alpha).unwrap();
        let b = dgc_step(&f, &g, 2.0 * alpha).unwrap();
        for (x, y) in a.raw().iter().zip(b.raw().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn attention_step_beta_zero_is_rescaled_alignment() {
        let (g, f) = random_instance(8, 3, 71);
        let alpha = 0.11;
        let n = 8.0;
        let att = attention_alignment_step(&f, &g, alpha, 0.0, NormalizationSet::All).unwrap();
        let prop = g.normalized_adjacency().dot(f.raw());
        let mut want = f.raw().mapv(|v| (1.0 - 2.0 * alpha) * v);
        for ((i, j), v) in want.indexed_iter_mut() {
            *v += 2.0 * alpha * prop[[i, j]] / n;
        }
        assert!(frobenius_distance(att.raw(), &want).unwrap() < 1e-12);
    }

    #[test]
    fn attention_step_identical_rows_closed_form() {
        let (g, _) = random_instance(6, 2, 72);
        let c = 0.65;
        let f = FeatureMatrix::new(Array2::from_elem((6, 2), c)).unwrap();
        let alpha = 0.2;
        let beta = 3.0;
        let out = attention_alignment_step(&f, &g, alpha, beta, NormalizationSet::All).unwrap();
        // With identical rows the attention is uniform (1/n) and the update
        // per node is (1-2a) c + 2a * (row sum of Abar / n) * c.
        let abar = g.normalized_adjacency();
        for i in 0..6 {
            let rowsum: f64 = abar.row(i).sum();
            let want = (1.0 - 2.0 * alpha) * c + 2.0 * alpha * rowsum / 6.0 * c;
            for k in 0..2 {
                assert!((out.raw()[[i, k]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_step_double_loop_oracle() {
        let (g, f) = random_instance(7, 3, 73);
        let alpha = 0.09;
        let beta = 2.2;
        let out = attention_alignment_step(&f, &g, alpha, beta, NormalizationSet::All).unwrap();
        let raw = f.raw();
        let abar = g.normalized_adjacency();
        for x in 0..7 {
            let mut denom = 0.0;
            for j in 0..7 {
                denom += (beta * raw.row(x).dot(&raw.row(j))).exp();
            }
            for k in 0..3 {
                let mut agg = 0.0;
                for j in 0..7 {
                    let attn = (beta * raw.row(x).dot(&raw.row(j))).exp() / denom;
                    agg += abar[[x, j]] * attn * raw[[j, k]];
                }
                let want = (1.0 - 2.0 * alpha) * raw[[x, k]] + 2.0 * alpha * agg;
                assert!((out.raw()[[x, k]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multi_stage_moves_toward_bank_mean() {
        let (g, f) = random_instance(6, 3, 74);
        let g = g.with_groups(vec![0, 0, 0, 1, 1, 1]).unwrap();
        let mut bank = MemoryBank::new(1).unwrap();
        let out = multi_stage_step(&f, &g, &mut bank, 0.1).unwrap();
        // Ascent direction: the displacement has positive inner product with
        // the group target for every node.
        for i in 0..6 {
            let gid = i / 3;
            let z = bank.aggregated(gid).unwrap();
            let mut dot = 0.0;
            for k in 0..3 {
                dot += (out.raw()[[i, k]] - f.raw()[[i, k]]) * z[k];
            }
            let znorm: f64 = z.iter().map(|v| v * v).sum();
            if znorm > 1e-12 {
                assert!(dot > 0.0, "node {i}: displacement not aligned with target");
            }
        }
    }

    #[test]
    fn multi_stage_bank_bookkeeping() {
        let (g, f) = random_instance(4, 2, 75);
        let g = g.with_groups(vec![0, 0, 1, 1]).unwrap();
        let mut bank = MemoryBank::new(3).unwrap();
        let mut cur = f.clone();
        let mut group0_means: Vec<Array1<f64>> = Vec::new();
        for _ in 0..5 {
            let idx = [0usize, 1];
            let w = g.node_weights();
            let wsum: f64 = idx.iter().map(|&i| w[i]).sum();
            let mut z = Array1::<f64>::zeros(2);
            for &i in &idx {
                z = z + cur.raw().row(i).to_owned() * (w[i] / wsum);
            }
            group0_means.push(z);
            cur = multi_stage_step(&cur, &g, &mut bank, 0.1).unwrap();
        }
        // After 5 steps with capacity 3, the oldest snapshot is the
        // pre-update features of step 3, i.e. the state after step 2.
        assert_eq!(bank.len(0), 3);
        let snaps = bank.snapshots(0).unwrap();
        for (a, b) in snaps[0].iter().zip(group0_means[2].iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn preprocess_center_idempotent() {
        let (g, f) = random_instance(6, 3, 76);
        let once = preprocess(&f, &g, PreprocessMode::Center).unwrap();
        let twice = preprocess(&once, &g, PreprocessMode::Center).unwrap();
        assert!(frobenius_distance(once.raw(), twice.raw()).unwrap() < 1e-12);
    }

    #[test]
    fn preprocess_normalize_idempotent_on_unit_rows() {
        let f = FeatureMatrix::new(array![[1.0, 0.0], [0.0, -1.0]]).unwrap();
        let (g, _) = random_instance(2, 2, 77);
        let out = preprocess(&f, &g, PreprocessMode::L2Normalize).unwrap();
        assert!(frobenius_distance(out.raw(), f.raw()).unwrap() < 1e-15);
    }

    #[test]
    fn preprocess_center_then_normalize_only_guarantees_unit_rows() {
        let (g, f) = random_instance(8, 3, 78);
        let out = preprocess(&f, &g, PreprocessMode::CenterThenNormalize).unwrap();
        for i in 0..8 {
            let norm = out.raw().row(i).dot(&out.raw().row(i)).sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn preprocess_zero_row_errors() {
        let (g, _) = random_instance(2, 2, 79);
        let f = FeatureMatrix::new(array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        match preprocess(&f, &g, PreprocessMode::L2Normalize) {
            Err(Error::ZeroNormRow(1)) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn run_zero_steps_records_initial_only() {
        let (g, f) = random_instance(5, 2, 80);
        let cfg = DynamicsConfig {
            steps: 0,
            rule: UpdateRule::Alignment,
            ..Default::default()
        };
        let rec = run(&g, &f, &cfg).unwrap();
        assert_eq!(rec.records.len(), 1);
        assert_eq!(rec.records[0].step, 0);
        assert!(frobenius_distance(rec.final_features.raw(), f.raw()).unwrap() == 0.0);
    }

    #[test]
    fn run_is_deterministic_and_strictly_increasing() {
        let points = {
            let cfg = crate::graph::GaussianMixtureConfig {
                means: vec![[-1.0, 0.0], [1.0, 0.0]],
                variance: 0.7,
                points_per_class: 12,
                seed: 4,
            };
            crate::graph::build_synthetic_gaussians(&cfg).unwrap()
        };
        let g = build_threshold_graph(&points.0, 0.9, false, WeightMode::DegreeConsistent)
            .unwrap()
            .with_labels(points.1)
            .unwrap();
        let cfg = DynamicsConfig {
            rule: UpdateRule::Contrastive,
            steps: 40,
            snapshot_every: 7,
            ..Default::default()
        };
        let f0 = initial_features(&cfg, g.n()).unwrap();
        let a = run(&g, &f0, &cfg).unwrap();
        let b = run(&g, &f0, &cfg).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.step, rb.step);
            assert_eq!(ra.l_total.to_bits(), rb.l_total.to_bits());
        }
        for w in a.records.windows(2) {
            assert!(w[0].step < w[1].step);
        }
        // Final step is always recorded.
        assert_eq!(a.records.last().unwrap().step, 40);
    }

    #[test]
    fn run_divergence_aborts_with_step_and_node() {
        let (g, f) = random_instance(5, 2, 81);
        // Pure uniformity without normalization at a large step size blows
        // up the feature norms quickly.
        let cfg = DynamicsConfig {
            rule: UpdateRule::Uniformity,
            alpha: 40.0,
            steps: 400,
            snapshot_every: 1000,
            ..Default::default()
        };
        let rec = run(&g, &f, &cfg).unwrap();
        let event = rec.diverged.expect("run should diverge");
        assert!(event.step >= 1);
        assert!(event.node < 5);
        assert!(rec.warnings.iter().any(|w| w.contains("divergence")));
    }

    #[test]
    fn run_warns_on_large_alpha() {
        let (g, f) = random_instance(4, 2, 82);
        let cfg = DynamicsConfig {
            rule: UpdateRule::Alignment,
            alpha: 0.6,
            steps: 1,
            ..Default::default()
        };
        let rec = run(&g, &f, &cfg).unwrap();
        assert!(rec.warnings.iter().any(|w| w.contains("0.6")));
    }
}
