//! Metrics for the guarantees and qualitative behavior of the dynamics:
//! distance to the top-eigenvector subspace (per-class clustering), data and
//! model conditionals with their residual (equilibrium), and clustering /
//! collapse diagnostics.

use ndarray::{Array1, Array2};

use crate::dynamics::AffinityWeighting;
use crate::graph::{algebraic_connectivity, AugmentationGraph};
use crate::losses::FeatureMatrix;
use crate::numerics::{
    stable_row_softmax_weighted, sym_eigendecompose, SymmetricMatrix, DEFAULT_EIGEN_TOL,
};

use crate::{Error, Result};

/// Unit top eigenvector of the graph's normalized adjacency, recomputed from
/// scratch (deterministic sign convention from the eigensolver).
pub fn top_eigenvector(g: &AugmentationGraph) -> Result<Array1<f64>> {
    let n = g.n();
    let mut sym = g.normalized_adjacency().clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (sym[[i, j]] + sym[[j, i]]);
            sym[[i, j]] = v;
            sym[[j, i]] = v;
        }
    }
    let eig = sym_eigendecompose(&SymmetricMatrix::new(sym)?, DEFAULT_EIGEN_TOL)?;
    Ok(eig.eigenvector(0))
}

/// The one-dimensional projection context for a class: the top eigenvector
/// of the class subgraph's normalized adjacency.
#[derive(Debug, Clone)]
pub struct SubspaceProjection {
    pub class_id: Option<usize>,
    pub e1: Array1<f64>,
}

impl SubspaceProjection {
    pub fn for_graph(g: &AugmentationGraph) -> Result<Self> {
        Ok(Self {
            class_id: None,
            e1: top_eigenvector(g)?,
        })
    }

    pub fn for_class(g: &AugmentationGraph, k: usize) -> Result<Self> {
        let sub = crate::graph::class_subgraph(g, k)?;
        Ok(Self {
            class_id: Some(k),
            e1: top_eigenvector(&sub)?,
        })
    }

    pub fn residual(&self, rows: &Array2<f64>) -> f64 {
        projection_residual(rows, &self.e1)
    }
}

/// `|| F - e1 (e1^T F) ||_F`: the orthogonal-projection residual of `rows`
/// onto `span{e1 (x) y}`.
pub fn projection_residual(rows: &Array2<f64>, e1: &Array1<f64>) -> f64 {
    let (n, m) = rows.dim();
    debug_assert_eq!(n, e1.len());
    let mut coeff = vec![0.0; m];
    for j in 0..m {
        for i in 0..n {
            coeff[j] += e1[i] * rows[[i, j]];
        }
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..m {
            let d = rows[[i, j]] - e1[i] * coeff[j];
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Distance of the class feature rows to the one-dimensional subspace
/// spanned by the class subgraph's top eigenvector, recomputed per call.
pub fn subspace_distance(class_rows: &Array2<f64>, g_k: &AugmentationGraph) -> Result<f64> {
    if class_rows.nrows() != g_k.n() {
        return Err(Error::ShapeMismatch {
            left: class_rows.dim(),
            right: (g_k.n(), g_k.n()),
        });
    }
    let e1 = top_eigenvector(g_k)?;
    Ok(projection_residual(class_rows, &e1))
}

/// Per-step contraction factor `|1 - 2 a lambda|` of the alignment dynamics
/// on a class subgraph with algebraic connectivity `lambda`.
pub fn contraction_factor(g_k: &AugmentationGraph, alpha: f64) -> Result<f64> {
    let lambda = algebraic_connectivity(g_k)?;
    Ok((1.0 - 2.0 * alpha * lambda).abs())
}

/// Model (Boltzmann) conditional: row-softmax of the feature Gram matrix at
/// the given temperature.
pub fn model_conditional(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    temperature: f64,
) -> Result<Array2<f64>> {
    model_conditional_with(f, g, temperature, AffinityWeighting::Unweighted)
}

pub fn model_conditional_with(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    temperature: f64,
    weighting: AffinityWeighting,
) -> Result<Array2<f64>> {
    f.check_bound(g)?;
    let weights = match weighting {
        AffinityWeighting::Unweighted => None,
        AffinityWeighting::Weighted => Some(g.node_weights()),
    };
    stable_row_softmax_weighted(&f.gram(), temperature, weights)
}

/// Ground-truth data conditional `P_d(x'|x) = A_{xx'} / deg(x)`, with
/// isolated rows flagged and left as zeros.
#[derive(Debug, Clone)]
pub struct DataConditional {
    pub rows: Array2<f64>,
    pub flagged: Vec<usize>,
}

pub fn data_conditional(g: &AugmentationGraph) -> DataConditional {
    let n = g.n();
    let mut rows = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let d = g.degrees()[i];
        if d > 0.0 {
            for j in 0..n {
                rows[[i, j]] = g.adjacency().entries()[[i, j]] / d;
            }
        }
    }
    DataConditional {
        rows,
        flagged: g.isolated_nodes().to_vec(),
    }
}

/// Frobenius distance between the two conditionals over unflagged rows.
pub fn conditional_residual(data: &DataConditional, model: &Array2<f64>) -> f64 {
    let n = data.rows.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        if data.flagged.contains(&i) {
            continue;
        }
        for j in 0..n {
            let d = data.rows[[i, j]] - model[[i, j]];
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Frobenius distance between the data conditional and the model
/// conditional, restricted to rows of non-isolated nodes.
pub fn equilibrium_residual(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    temperature: f64,
) -> Result<f64> {
    equilibrium_residual_with(f, g, temperature, AffinityWeighting::Unweighted)
}

pub fn equilibrium_residual_with(
    f: &FeatureMatrix,
    g: &AugmentationGraph,
    temperature: f64,
    weighting: AffinityWeighting,
) -> Result<f64> {
    let data = data_conditional(g);
    let model = model_conditional_with(f, g, temperature, weighting)?;
    Ok(conditional_residual(&data, &model))
}

#[derive(Debug, Clone)]
pub struct ClusteringReport {
    /// Leave-one-out 1-nearest-neighbor accuracy on the raw features.
    pub nn_accuracy: f64,
    pub intra_mean: f64,
    pub inter_mean: f64,
    /// exp(entropy of normalized singular values) of the feature matrix.
    pub effective_rank: f64,
    /// Classes with a single sample (excluded from nn accuracy).
    pub flagged_classes: Vec<usize>,
}

/// Exponential of the entropy of the normalized singular values. One for a
/// rank-one matrix, `min(n, m)` for orthogonal rows of equal norm, zero for
/// an all-zero matrix.
pub fn effective_rank(raw: &Array2<f64>) -> Result<f64> {
    let (n, m) = raw.dim();
    // Singular values via the spectrum of the smaller Gram matrix.
    let k = n.min(m);
    let gram = if m <= n {
        SymmetricMatrix::from_fn(m, |i, j| raw.column(i).dot(&raw.column(j)))
    } else {
        SymmetricMatrix::from_fn(n, |i, j| raw.row(i).dot(&raw.row(j)))
    };
    let eig = sym_eigendecompose(&gram, DEFAULT_EIGEN_TOL)?;
    let sigmas: Vec<f64> = eig.eigenvalues[..k]
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    let total: f64 = sigmas.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let mut entropy = 0.0;
    for &s in &sigmas {
        let p = s / total;
        if p > 1e-15 {
            entropy -= p * p.ln();
        }
    }
    Ok(entropy.exp())
}

/// Between-class over within-class scatter (sums of squared deviations from
/// the class means and the global mean). Near zero when features carry no
/// class information; grows as classes concentrate around separated means.
pub fn scatter_ratio(f: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
    let (n, m) = (f.n(), f.m());
    if labels.len() != n {
        return Err(Error::InvalidParameter(format!(
            "labels length {} != feature rows {n}",
            labels.len()
        )));
    }
    let raw = f.raw();
    let mut mu = vec![0.0; m];
    for i in 0..n {
        for k in 0..m {
            mu[k] += raw[[i, k]] / n as f64;
        }
    }
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut between = 0.0;
    let mut within = 0.0;
    for &c in &classes {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let nk = idx.len() as f64;
        let mut muk = vec![0.0; m];
        for &i in &idx {
            for k in 0..m {
                muk[k] += raw[[i, k]] / nk;
            }
        }
        for k in 0..m {
            let d = muk[k] - mu[k];
            between += nk * d * d;
        }
        for &i in &idx {
            for k in 0..m {
                let d = raw[[i, k]] - muk[k];
                within += d * d;
            }
        }
    }
    if within <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(between / within)
}

/// Sum of squared pairwise feature distances (the quantity pair-normalizing
/// preprocessors preserve).
pub fn total_pairwise_distance(raw: &Array2<f64>) -> f64 {
    let (n, m) = raw.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for k in 0..m {
                let d = raw[[i, k]] - raw[[j, k]];
                d2 += d * d;
            }
            acc += d2;
        }
    }
    acc
}

/// Clustering and collapse diagnostics of a labeled feature table.
pub fn clustering_report(f: &FeatureMatrix, labels: &[usize]) -> Result<ClusteringReport> {
    let n = f.n();
    if labels.len() != n {
        return Err(Error::InvalidParameter(format!(
            "labels length {} != feature rows {n}",
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(
            "clustering report needs at least 2 rows".into(),
        ));
    }
    let raw = f.raw();

    let mut dist = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut d2 = 0.0;
            for k in 0..f.m() {
                let d = raw[[i, k]] - raw[[j, k]];
                d2 += d * d;
            }
            let d = d2.sqrt();
            dist[[i, j]] = d;
            dist[[j, i]] = d;
        }
    }

    let mut class_counts = std::collections::BTreeMap::new();
    for &l in labels {
        *class_counts.entry(l).or_insert(0usize) += 1;
    }
    let flagged_classes: Vec<usize> = class_counts
        .iter()
        .filter(|(_, &c)| c < 2)
        .map(|(&k, _)| k)
        .collect();

    let mut correct = 0usize;
    let mut evaluated = 0usize;
    for i in 0..n {
        if class_counts[&labels[i]] < 2 {
            continue;
        }
        let mut best = usize::MAX;
        for j in 0..n {
            if j != i && (best == usize::MAX || dist[[i, j]] < dist[[i, best]]) {
                best = j;
            }
        }
        evaluated += 1;
        if labels[best] == labels[i] {
            correct += 1;
        }
    }
    let nn_accuracy = if evaluated > 0 {
        correct as f64 / evaluated as f64
    } else {
        f64::NAN
    };

    let mut intra_sum = 0.0;
    let mut intra_count = 0usize;
    let mut inter_sum = 0.0;
    let mut inter_count = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if labels[i] == labels[j] {
                intra_sum += dist[[i, j]];
                intra_count += 1;
            } else {
                inter_sum += dist[[i, j]];
                inter_count += 1;
            }
        }
    }
    let intra_mean = if intra_count > 0 {
        intra_sum / intra_count as f64
    } else {
        f64::NAN
    };
    let inter_mean = if inter_count > 0 {
        inter_sum / inter_count as f64
    } else {
        f64::NAN
    };

    Ok(ClusteringReport {
        nn_accuracy,
        intra_mean,
        inter_mean,
        effective_rank: effective_rank(raw)?,
        flagged_classes,
    })
}
