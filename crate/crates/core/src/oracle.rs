//! Independent brute-force verifiers that cross-check the implementation:
//! central finite differences against the update rules, double-loop loss
//! evaluation against the matrix forms, per-step contraction bounds, and
//! constructed equilibrium instances.
//!
//! Every check owns an RNG stream derived from `(seed, check name)`, so a
//! report is reproducible from its name, seed, and sizes alone.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use crate::analysis;
use crate::dynamics::{
    alignment_step, contrastive_step, dgc_step, self_attention_step, uniformity_step,
};
use crate::graph::{class_subgraph, AugmentationGraph, WeightMode};
use crate::losses::{alignment_loss, infonce_feature_space, uniformity_loss, FeatureMatrix};
use crate::numerics::{frobenius_norm, SymmetricMatrix};
use crate::{Error, Result};

/// Outcome of one verifier run. `pass` holds exactly when
/// `discrepancy <= tolerance`.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub context: String,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, discrepancy: f64, tolerance: f64, context: String) -> Self {
        Self {
            name: name.into(),
            pass: discrepancy <= tolerance,
            discrepancy,
            tolerance,
            context,
        }
    }

    /// The machine-readable report line emitted by the check runner.
    pub fn report_line(&self) -> String {
        format!(
            "CHECK name={} pass={} disc={:e} tol={:e} context=[{}]",
            self.name, self.pass, self.discrepancy, self.tolerance, self.context
        )
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic RNG stream for a named check.
pub fn rng_for(seed: u64, name: &str) -> Pcg64 {
    Pcg64::seed_from_u64(seed ^ fnv1a(name))
}

/// Random features with entries uniform in `[-scale, scale)`.
pub fn random_features(n: usize, m: usize, scale: f64, rng: &mut Pcg64) -> FeatureMatrix {
    let raw = Array2::from_shape_fn((n, m), |_| rng.gen_range(-scale..scale));
    FeatureMatrix::new(raw).expect("uniform entries are finite")
}

/// Random weighted graph with the given edge density (no self-loops).
pub fn random_graph(n: usize, density: f64, mode: WeightMode, rng: &mut Pcg64) -> AugmentationGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < density {
                edges.push((i, j, rng.gen_range(0.1..2.0)));
            }
        }
    }
    let a = SymmetricMatrix::from_fn(n, |i, j| {
        edges
            .iter()
            .find(|&&(a, b, _)| (a, b) == (i, j))
            .map_or(0.0, |&(_, _, w)| w)
    });
    AugmentationGraph::from_adjacency(a, mode).expect("nonnegative weights")
}

/// Random labeled graph with no cross-class edges and every class connected
/// (a within-class spanning path plus random extra edges).
pub fn random_label_preserving_graph(
    n: usize,
    classes: usize,
    mode: WeightMode,
    rng: &mut Pcg64,
) -> AugmentationGraph {
    assert!(classes >= 1 && n >= 2 * classes, "need at least 2 nodes per class");
    let mut labels = vec![0usize; n];
    for (i, label) in labels.iter_mut().enumerate() {
        *label = i % classes;
    }
    let mut weights = std::collections::HashMap::new();
    for k in 0..classes {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
        for w in members.windows(2) {
            weights.insert((w[0], w[1]), rng.gen_range(0.3..1.5));
        }
        for a in 0..members.len() {
            for b in (a + 1)..members.len() {
                let key = (members[a], members[b]);
                if !weights.contains_key(&key) && rng.gen::<f64>() < 0.3 {
                    weights.insert(key, rng.gen_range(0.3..1.5));
                }
            }
        }
    }
    let a = SymmetricMatrix::from_fn(n, |i, j| {
        let key = if i < j { (i, j) } else { (j, i) };
        weights.get(&key).copied().unwrap_or(0.0)
    });
    AugmentationGraph::from_adjacency(a, mode)
        .expect("nonnegative weights")
        .with_labels(labels)
        .expect("labels sized to n")
}

/// Central-difference gradient of `loss` with respect to every raw feature
/// entry: `(loss(f + h E_ij) - loss(f - h E_ij)) / 2h`.
pub fn finite_diff_gradient<F>(loss: F, f: &FeatureMatrix, h: f64) -> Result<Array2<f64>>
where
    F: Fn(&FeatureMatrix) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("fd step must be > 0, got {h}")));
    }
    let (n, m) = (f.n(), f.m());
    let mut grad = Array2::<f64>::zeros((n, m));
    let mut probe = f.raw().clone();
    for i in 0..n {
        for j in 0..m {
            let orig = probe[[i, j]];
            probe[[i, j]] = orig + h;
            let plus = loss(&FeatureMatrix::new(probe.clone())?)?;
            probe[[i, j]] = orig - h;
            let minus = loss(&FeatureMatrix::new(probe.clone())?)?;
            probe[[i, j]] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
            grad[[i, j]] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCheckRule {
    Alignment,
    Uniformity,
    Contrastive,
}

impl GradCheckRule {
    pub fn name(self) -> &'static str {
        match self {
            GradCheckRule::Alignment => "alignment",
            GradCheckRule::Uniformity => "uniformity",
            GradCheckRule::Contrastive => "contrastive",
        }
    }
}

/// Compares the step displacement of a rule against the finite-difference
/// gradient of its matching loss. The check passes when the displacement is
/// anti-parallel to the gradient: `cos(F' - F, grad) <= -(1 - tol)`.
/// The measured scale ratio `||F' - F|| / (alpha ||grad||)` is recorded in
/// the context, not asserted (the update equations absorb w- and
/// temperature-dependent constants).
///
/// A vanishing displacement together with a vanishing gradient (a fixed
/// point) passes with zero discrepancy.
pub fn verify_update_gradient(
    rule: GradCheckRule,
    g: &AugmentationGraph,
    f: &FeatureMatrix,
    temperature: f64,
    alpha: f64,
    tol: f64,
    h: f64,
) -> Result<CheckReport> {
    let name = format!("grad_{}", rule.name());
    let stepped = match rule {
        GradCheckRule::Alignment => alignment_step(f, g, alpha)?,
        GradCheckRule::Uniformity => uniformity_step(f, g, alpha, temperature, false)?,
        GradCheckRule::Contrastive => contrastive_step(f, g, alpha, temperature)?,
    };
    let grad = match rule {
        GradCheckRule::Alignment => finite_diff_gradient(|x| alignment_loss(x, g), f, h)?,
        GradCheckRule::Uniformity => {
            finite_diff_gradient(|x| uniformity_loss(x, g, temperature), f, h)?
        }
        GradCheckRule::Contrastive => {
            finite_diff_gradient(|x| infonce_feature_space(x, g, temperature), f, h)?
        }
    };

    let disp = stepped.raw() - f.raw();
    let disp_norm = frobenius_norm(&disp);
    let grad_norm = frobenius_norm(&grad);
    let scale = 1.0 + frobenius_norm(f.raw());

    if disp_norm <= 1e-12 * scale && grad_norm <= 1e-7 * scale {
        let context = format!(
            "n={} m={} alpha={alpha} tau={temperature} h={h} fixed_point displacement={disp_norm:.3e} grad={grad_norm:.3e}",
            f.n(),
            f.m()
        );
        return Ok(CheckReport::new(name, 0.0, tol, context));
    }

    let dot: f64 = disp.iter().zip(grad.iter()).map(|(a, b)| a * b).sum();
    let cosine = dot / (disp_norm * grad_norm);
    let scale_ratio = disp_norm / (alpha.abs() * grad_norm);
    let context = format!(
        "n={} m={} alpha={alpha} tau={temperature} h={h} cosine={cosine:.9} scale_ratio={scale_ratio:.6}",
        f.n(),
        f.m()
    );
    Ok(CheckReport::new(name, 1.0 + cosine, tol, context))
}

/// Runs alignment dynamics on a labeled, label-preserving graph and asserts
/// the per-step, per-class contraction bound
/// `d_M(F_k^{t+1}) <= |1 - 2 a lambda_k| d_M(F_k^t) + 1e-9`.
pub fn verify_contraction(
    g: &AugmentationGraph,
    alpha: f64,
    steps: usize,
    seed: u64,
) -> Result<CheckReport> {
    let labels = g.labels().ok_or(Error::MissingLabels)?;
    for i in 0..g.n() {
        for j in (i + 1)..g.n() {
            if g.adjacency().entries()[[i, j]] > 0.0 && labels[i] != labels[j] {
                return Err(Error::CrossClassEdge { i, j });
            }
        }
    }

    let tol = 1e-9;
    let class_ids = g.class_ids();
    let mut class_nodes = Vec::new();
    let mut class_e1 = Vec::new();
    let mut class_factor = Vec::new();
    for &k in &class_ids {
        let idx = crate::graph::class_indices(g, k)?;
        let sub = class_subgraph(g, k)?;
        class_e1.push(analysis::top_eigenvector(&sub)?);
        class_factor.push(analysis::contraction_factor(&sub, alpha)?);
        class_nodes.push(idx);
    }

    let mut rng = rng_for(seed, "contraction_init");
    let mut f = random_features(g.n(), 2, 1.0, &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let next = alignment_step(&f, g, alpha)?;
        for (c, idx) in class_nodes.iter().enumerate() {
            let before = analysis::projection_residual(
                &crate::dynamics::select_rows(f.raw(), idx),
                &class_e1[c],
            );
            let after = analysis::projection_residual(
                &crate::dynamics::select_rows(next.raw(), idx),
                &class_e1[c],
            );
            worst = worst.max(after - class_factor[c] * before);
        }
        f = next;
    }

    let context = format!(
        "n={} classes={} alpha={alpha} steps={steps} seed={seed} factors={:?}",
        g.n(),
        class_ids.len(),
        class_factor
            .iter()
            .map(|v| (v * 1e6).round() / 1e6)
            .collect::<Vec<_>>()
    );
    Ok(CheckReport::new(
        "contraction",
        worst.max(0.0),
        tol,
        context,
    ))
}

/// Double-loop sample-space InfoNCE against the feature-space decomposition,
/// recomputed here from the raw adjacency and weights.
pub fn verify_prop1(g: &AugmentationGraph, f: &FeatureMatrix, temperature: f64) -> Result<CheckReport> {
    f.check_bound(g)?;
    let n = g.n();
    let a = g.adjacency().entries();
    let w = g.node_weights();
    let raw = f.raw();

    // Substituted degrees, mirroring the graph's isolated-node convention.
    let degrees: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let min_positive = degrees
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let dsub: Vec<f64> = degrees
        .iter()
        .map(|&d| if d > 0.0 { d } else if min_positive.is_finite() { min_positive } else { 1.0 })
        .collect();

    let dot = |i: usize, j: usize| raw.row(i).dot(&raw.row(j));

    let mut pull = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pd = (w[i] * w[j]).sqrt() * a[[i, j]] / (dsub[i] * dsub[j]).sqrt();
            pull += pd * dot(i, j) / temperature;
        }
    }
    let mut push = 0.0;
    for i in 0..n {
        let mut z = 0.0;
        for j in 0..n {
            z += w[j] * (dot(i, j) / temperature).exp();
        }
        push += w[i] * z.ln();
    }
    let sample_space = push - pull;

    let feature_space =
        alignment_loss(f, g)? / temperature + uniformity_loss(f, g, temperature)?;
    let disc = (sample_space - feature_space).abs();
    let context = format!(
        "n={n} m={} tau={temperature} sample={sample_space:.12} feature={feature_space:.12}",
        f.m()
    );
    Ok(CheckReport::new("prop1", disc, 1e-9, context))
}

/// Bit-level equality of two feature tables, reported as a check.
pub fn bit_equality_report(name: &str, a: &FeatureMatrix, b: &FeatureMatrix) -> CheckReport {
    let mut max_diff = 0.0f64;
    let mut bit_equal = a.raw().dim() == b.raw().dim();
    if bit_equal {
        for (x, y) in a.raw().iter().zip(b.raw().iter()) {
            if x.to_bits() != y.to_bits() {
                bit_equal = false;
            }
            max_diff = max_diff.max((x - y).abs());
        }
    } else {
        max_diff = f64::INFINITY;
    }
    let context = format!("n={} m={} bit_equal={bit_equal}", a.n(), a.m());
    CheckReport::new(name, if bit_equal { 0.0 } else { max_diff.max(f64::MIN_POSITIVE) }, 0.0, context)
}

/// Two-node instance solving the softmax equation exactly:
/// `A = [[e^2, 1], [1, e^2]]` with features `(1, 0)` and `(-1, 0)`.
pub fn construct_two_node_equilibrium() -> (AugmentationGraph, FeatureMatrix) {
    let e2 = std::f64::consts::E * std::f64::consts::E;
    let a = SymmetricMatrix::from_fn(2, |i, j| if i == j { e2 } else { 1.0 });
    let g = AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent)
        .expect("positive entries");
    let f = FeatureMatrix::new(ndarray::array![[1.0, 0.0], [-1.0, 0.0]]).expect("finite");
    (g, f)
}

/// Equilibrium instance fitted numerically at size `n`: features sit on a
/// circle of the given radius, and the adjacency is the (symmetrized
/// circulant) softmax of their Gram matrix, so the data conditional matches
/// the model conditional by construction.
pub fn construct_circulant_equilibrium(
    n: usize,
    radius: f64,
    temperature: f64,
) -> Result<(AugmentationGraph, FeatureMatrix)> {
    if n < 3 {
        return Err(Error::InvalidParameter("need n >= 3".into()));
    }
    let mut raw = Array2::<f64>::zeros((n, 2));
    for i in 0..n {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        raw[[i, 0]] = radius * theta.cos();
        raw[[i, 1]] = radius * theta.sin();
    }
    let f = FeatureMatrix::new(raw)?;

    // Softmax template from row 0, symmetrized over the circulant distance.
    let gram = f.gram();
    let mut row0 = vec![0.0; n];
    let mut row_max = f64::NEG_INFINITY;
    for j in 0..n {
        row_max = row_max.max(gram[[0, j]] / temperature);
    }
    let mut denom = 0.0;
    for j in 0..n {
        row0[j] = (gram[[0, j]] / temperature - row_max).exp();
        denom += row0[j];
    }
    for v in row0.iter_mut() {
        *v /= denom;
    }
    let template: Vec<f64> = (0..n)
        .map(|k| 0.5 * (row0[k] + row0[(n - k) % n]))
        .collect();

    let a = SymmetricMatrix::from_fn(n, |i, j| {
        let d = (j as isize - i as isize).rem_euclid(n as isize) as usize;
        let d = d.min(n - d);
        template[d]
    });
    let g = AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent)?;
    Ok((g, f))
}

/// The default verifier battery used by the command-line `check` runner.
pub fn standard_suite(seed: u64, n: usize, m: usize) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();

    {
        let mut rng = rng_for(seed, "prop1");
        let g = random_graph(n, 0.5, WeightMode::DegreeConsistent, &mut rng);
        let f = random_features(n, m, 1.0, &mut rng);
        reports.push(verify_prop1(&g, &f, 1.0)?);
    }
    {
        let mut rng = rng_for(seed, "prop1_uniform");
        let g = random_graph(n, 0.5, WeightMode::Uniform, &mut rng);
        let f = random_features(n, m, 1.0, &mut rng);
        let mut rep = verify_prop1(&g, &f, 1.0)?;
        rep.name = "prop1_uniform_weights".into();
        reports.push(rep);
    }
    {
        let mut rng = rng_for(seed, "grad_alignment");
        let g = random_graph(n, 0.5, WeightMode::Uniform, &mut rng);
        let f = random_features(n, m, 1.0, &mut rng);
        reports.push(verify_update_gradient(
            GradCheckRule::Alignment,
            &g,
            &f,
            1.0,
            0.1,
            1e-6,
            1e-5,
        )?);
    }
    {
        let mut rng = rng_for(seed, "grad_uniformity");
        let g = random_graph(n, 0.5, WeightMode::Uniform, &mut rng);
        let f = random_features(n, m, 1.0, &mut rng);
        reports.push(verify_update_gradient(
            GradCheckRule::Uniformity,
            &g,
            &f,
            1.0,
            0.1,
            1e-3,
            1e-5,
        )?);
    }
    {
        let mut rng = rng_for(seed, "grad_contrastive");
        let g = random_graph(n, 0.5, WeightMode::Uniform, &mut rng);
        let f = random_features(n, m, 0.4, &mut rng);
        reports.push(verify_update_gradient(
            GradCheckRule::Contrastive,
            &g,
            &f,
            1.0,
            0.1,
            1e-2,
            1e-5,
        )?);
    }
    {
        let (g, f) = construct_two_node_equilibrium();
        let mut rep =
            verify_update_gradient(GradCheckRule::Contrastive, &g, &f, 1.0, 0.1, 1e-2, 1e-5)?;
        rep.name = "grad_contrastive_equilibrium".into();
        reports.push(rep);
    }
    {
        let mut rng = rng_for(seed, "contraction_graph");
        let g = random_label_preserving_graph(n.max(6), 3, WeightMode::DegreeConsistent, &mut rng);
        reports.push(verify_contraction(&g, 0.1, 30, seed)?);
    }
    {
        let mut rng = rng_for(seed, "equiv_self_attention");
        let g = random_graph(n, 0.5, WeightMode::Uniform, &mut rng);
        let f = random_features(n, m, 1.0, &mut rng);
        let a = uniformity_step(&f, &g, -1.0, 1.0, true)?;
        let b = self_attention_step(&f)?;
        reports.push(bit_equality_report("equiv_self_attention", &a, &b));
    }
    {
        let mut rng = rng_for(seed, "equiv_dgc");
        let g = random_graph(n, 0.5, WeightMode::DegreeConsistent, &mut rng);
        let f = random_features(n, m, 1.0, &mut rng);
        let alpha = 0.13;
        let a = alignment_step(&f, &g, alpha)?;
        let b = dgc_step(&f, &g, 2.0 * alpha)?;
        reports.push(bit_equality_report("equiv_dgc", &a, &b));
    }
    {
        let (g, f) = construct_circulant_equilibrium(8, 1.2, 1.0)?;
        let stepped = contrastive_step(&f, &g, 0.1, 1.0)?;
        let disp = frobenius_norm(&(stepped.raw() - f.raw()));
        reports.push(CheckReport::new(
            "prop3_stationarity",
            disp,
            1e-10,
            "n=8 circulant equilibrium, displacement norm".into(),
        ));
        let residual = analysis::equilibrium_residual(&f, &g, 1.0)?;
        reports.push(CheckReport::new(
            "prop3_residual",
            residual,
            1e-8,
            "n=8 circulant equilibrium, conditional residual".into(),
        ));
    }

    Ok(reports)
}
