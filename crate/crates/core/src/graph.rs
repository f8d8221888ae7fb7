//! The data-side augmentation graph: a symmetric nonnegative adjacency over
//! augmented views, a node-weight marginal, and the derived normalized
//! adjacency and Laplacian.
//!
//! Two weight conventions are supported. In `DegreeConsistent` mode the node
//! weights are the degree marginal `w_x = deg(x) / sum(deg)`, so the scaled
//! adjacency is a genuine joint distribution with marginal `w`. In `Uniform`
//! mode `w_x = 1/n`, matching the analytical convention used when the graph
//! is (weighted-)regular. The mode is recorded on the graph.
//!
//! Isolated nodes are kept rather than dropped so node indexing stays stable
//! across artifacts; they are flagged, a warning is recorded, and wherever an
//! inverse degree is needed the minimum positive degree is substituted.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use crate::numerics::{sym_eigendecompose, SymmetricMatrix, DEFAULT_EIGEN_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// `w_x` proportional to the degree of `x` (joint-consistent marginal).
    DegreeConsistent,
    /// `w_x = 1/n` regardless of degrees.
    Uniform,
}

#[derive(Debug, Clone)]
pub struct AugmentationGraph {
    adjacency: SymmetricMatrix,
    node_weights: Vec<f64>,
    weight_mode: WeightMode,
    degrees: Vec<f64>,
    normalized_adjacency: Array2<f64>,
    isolated: Vec<usize>,
    warnings: Vec<String>,
    labels: Option<Vec<usize>>,
    groups: Option<Vec<usize>>,
}

impl PartialEq for AugmentationGraph {
    fn eq(&self, other: &Self) -> bool {
        self.adjacency == other.adjacency
            && self.node_weights == other.node_weights
            && self.weight_mode == other.weight_mode
            && self.labels == other.labels
            && self.groups == other.groups
    }
}

impl AugmentationGraph {
    /// Builds a graph from a symmetric nonnegative adjacency matrix,
    /// deriving degrees, the normalized adjacency, and node weights under
    /// the requested mode.
    pub fn from_adjacency(adjacency: SymmetricMatrix, weight_mode: WeightMode) -> Result<Self> {
        let n = adjacency.n();
        for i in 0..n {
            for j in 0..n {
                if adjacency.entries()[[i, j]] < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "adjacency entry ({i}, {j}) is negative"
                    )));
                }
            }
        }

        let degrees: Vec<f64> = (0..n).map(|i| adjacency.entries().row(i).sum()).collect();
        let isolated: Vec<usize> = (0..n).filter(|&i| degrees[i] == 0.0).collect();
        let mut warnings = Vec::new();
        for &i in &isolated {
            warnings.push(format!("node {i} is isolated (zero degree)"));
        }

        // Substitute the minimum positive degree wherever an inverse degree
        // is needed; isolated rows of A are zero so the normalized adjacency
        // is unaffected, but the degree marginal stays positive.
        let min_positive = degrees
            .iter()
            .copied()
            .filter(|&d| d > 0.0)
            .fold(f64::INFINITY, f64::min);
        let substituted: Vec<f64> = degrees
            .iter()
            .map(|&d| {
                if d > 0.0 {
                    d
                } else if min_positive.is_finite() {
                    min_positive
                } else {
                    1.0
                }
            })
            .collect();

        let inv_sqrt: Vec<f64> = substituted.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut normalized_adjacency = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                normalized_adjacency[[i, j]] =
                    inv_sqrt[i] * adjacency.entries()[[i, j]] * inv_sqrt[j];
            }
        }

        let node_weights = match weight_mode {
            WeightMode::Uniform => vec![1.0 / n as f64; n],
            WeightMode::DegreeConsistent => {
                let total: f64 = substituted.iter().sum();
                substituted.iter().map(|d| d / total).collect()
            }
        };

        Ok(Self {
            adjacency,
            node_weights,
            weight_mode,
            degrees,
            normalized_adjacency,
            isolated,
            warnings,
            labels: None,
            groups: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::InvalidParameter(format!(
                "labels length {} != node count {}",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Result<Self> {
        if groups.len() != self.n() {
            return Err(Error::InvalidParameter(format!(
                "groups length {} != node count {}",
                groups.len(),
                self.n()
            )));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    /// Rebuilds the same adjacency (and labels/groups) under another weight mode.
    pub fn with_weight_mode(&self, mode: WeightMode) -> Result<Self> {
        let mut g = Self::from_adjacency(self.adjacency.clone(), mode)?;
        g.labels = self.labels.clone();
        g.groups = self.groups.clone();
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn adjacency(&self) -> &SymmetricMatrix {
        &self.adjacency
    }

    /// Normalized adjacency `D^{-1/2} A D^{-1/2}` (isolated-safe).
    pub fn normalized_adjacency(&self) -> &Array2<f64> {
        &self.normalized_adjacency
    }

    /// Symmetrically normalized Laplacian `I - normalized_adjacency`.
    pub fn laplacian(&self) -> Array2<f64> {
        let mut l = -self.normalized_adjacency.clone();
        for i in 0..self.n() {
            l[[i, i]] += 1.0;
        }
        l
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    pub fn weight_mode(&self) -> WeightMode {
        self.weight_mode
    }

    /// Raw degrees of the adjacency (zero for isolated nodes).
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn isolated_nodes(&self) -> &[usize] {
        &self.isolated
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Joint pair distribution `P_d(x, x') = sqrt(w_x w_x') * Abar_{xx'}`.
    /// Under degree-consistent weights this is exactly `A / sum(A)`.
    pub fn joint_distribution(&self) -> Array2<f64> {
        let n = self.n();
        let mut p = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                p[[i, j]] = (self.node_weights[i] * self.node_weights[j]).sqrt()
                    * self.normalized_adjacency[[i, j]];
            }
        }
        p
    }

    /// Distinct class ids in ascending order; empty when unlabeled.
    pub fn class_ids(&self) -> Vec<usize> {
        match &self.labels {
            None => Vec::new(),
            Some(labels) => {
                let mut ids: Vec<usize> = labels.clone();
                ids.sort_unstable();
                ids.dedup();
                ids
            }
        }
    }
}

/// Node indices belonging to class `k`.
pub fn class_indices(g: &AugmentationGraph, k: usize) -> Result<Vec<usize>> {
    let labels = g.labels().ok_or(Error::MissingLabels)?;
    let idx: Vec<usize> = (0..g.n()).filter(|&i| labels[i] == k).collect();
    if idx.is_empty() {
        return Err(Error::EmptyClass(k));
    }
    Ok(idx)
}

/// Induced subgraph on `nodes` (in the given order). Node weights are
/// renormalized by rebuilding them from the sliced adjacency under the
/// parent's weight mode, which keeps the degree-consistency invariant; when
/// the slice drops no incident edges (a class of a label-preserving graph)
/// this coincides with rescaling the parent weights. Labels and groups are
/// sliced too.
pub fn induced_subgraph(g: &AugmentationGraph, nodes: &[usize]) -> Result<AugmentationGraph> {
    if nodes.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let m = nodes.len();
    let a = SymmetricMatrix::from_fn(m, |i, j| g.adjacency().entries()[[nodes[i], nodes[j]]]);
    let mut sub = AugmentationGraph::from_adjacency(a, g.weight_mode())?;

    if let Some(labels) = g.labels() {
        sub.labels = Some(nodes.iter().map(|&i| labels[i]).collect());
    }
    if let Some(groups) = g.groups() {
        sub.groups = Some(nodes.iter().map(|&i| groups[i]).collect());
    }
    Ok(sub)
}

/// Induced subgraph on the nodes of class `k`.
pub fn class_subgraph(g: &AugmentationGraph, k: usize) -> Result<AugmentationGraph> {
    let idx = class_indices(g, k)?;
    induced_subgraph(g, &idx)
}

/// Second-smallest eigenvalue of `L = I - Abar`, in `[0, 2]`; zero iff the
/// graph is disconnected.
///
/// For components that carry edges the eigensolver route `1 - lambda_2(Abar)`
/// already vanishes on disconnected graphs. An isolated vertex, however,
/// contributes `Abar` eigenvalue 0 instead of 1 (its row is all zero), which
/// would make the formula report a spurious positive value, so disconnection
/// is decided by union-find and returns exactly zero.
pub fn algebraic_connectivity(g: &AugmentationGraph) -> Result<f64> {
    let n = g.n();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "algebraic connectivity needs at least 2 nodes".into(),
        ));
    }
    if !is_connected(g) {
        return Ok(0.0);
    }
    let abar = SymmetricMatrix::new(symmetrized_copy(g.normalized_adjacency()))?;
    let eig = sym_eigendecompose(&abar, DEFAULT_EIGEN_TOL)?;
    // Eigenvalues of L are 1 - lambda_i(Abar); the second smallest of L is
    // 1 minus the second largest of Abar.
    let lambda2 = eig.eigenvalues[1];
    Ok((1.0 - lambda2).max(0.0))
}

// Abar is symmetric in exact arithmetic; rounding of the two d_i^{-1/2}
// products can differ in the last ulp, so re-symmetrize before handing the
// matrix to the eigensolver's exactness check.
fn symmetrized_copy(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut out = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

/// Connected component id per node (0-based, in order of first appearance),
/// computed by union-find over positive off-diagonal adjacency entries.
pub fn connected_components(g: &AugmentationGraph) -> Vec<usize> {
    let n = g.n();
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }

    for i in 0..n {
        for j in (i + 1)..n {
            if g.adjacency().entries()[[i, j]] > 0.0 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }

    let mut ids = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        let root = find(&mut parent, i);
        if ids[root] == usize::MAX {
            ids[root] = next;
            next += 1;
        }
        ids[i] = ids[root];
    }
    ids
}

pub fn is_connected(g: &AugmentationGraph) -> bool {
    connected_components(g).iter().all(|&c| c == 0)
}

/// Nodes of the largest connected component (ties broken by smallest id).
pub fn largest_component_nodes(g: &AugmentationGraph) -> Vec<usize> {
    let comps = connected_components(g);
    let k = comps.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    for &c in &comps {
        sizes[c] += 1;
    }
    let best = (0..k).max_by_key(|&c| (sizes[c], usize::MAX - c)).unwrap_or(0);
    (0..g.n()).filter(|&i| comps[i] == best).collect()
}

/// Configuration for the synthetic two-dimensional Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GaussianMixtureConfig {
    pub means: Vec<[f64; 2]>,
    /// Per-coordinate variance (std = sqrt(variance)).
    pub variance: f64,
    pub points_per_class: usize,
    pub seed: u64,
}

impl GaussianMixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::InvalidParameter("at least one mean required".into()));
        }
        if !(self.variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "variance must be > 0, got {}",
                self.variance
            )));
        }
        if self.points_per_class == 0 {
            return Err(Error::InvalidParameter(
                "points_per_class must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn sample_standard_normal_pair(rng: &mut Pcg64) -> (f64, f64) {
    // Box-Muller; 1 - u keeps the log argument strictly positive.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Samples `points_per_class` points around each mean, class-major order,
/// deterministic for a fixed seed. Returns the n-by-2 point matrix and the
/// class label of each row.
pub fn build_synthetic_gaussians(cfg: &GaussianMixtureConfig) -> Result<(Array2<f64>, Vec<usize>)> {
    cfg.validate()?;
    let classes = cfg.means.len();
    let n = classes * cfg.points_per_class;
    let std = cfg.variance.sqrt();
    let mut rng = Pcg64::seed_from_u64(cfg.seed);

    let mut points = Array2::<f64>::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for (k, mean) in cfg.means.iter().enumerate() {
        for p in 0..cfg.points_per_class {
            let (z0, z1) = sample_standard_normal_pair(&mut rng);
            let row = k * cfg.points_per_class + p;
            points[[row, 0]] = mean[0] + std * z0;
            points[[row, 1]] = mean[1] + std * z1;
            labels.push(k);
        }
    }
    Ok((points, labels))
}

/// Unweighted threshold graph: `A_ij = 1` iff `i != j` and
/// `||x_i - x_j||_2 <= epsilon`, plus unit self-loops when requested.
pub fn build_threshold_graph(
    points: &Array2<f64>,
    epsilon: f64,
    self_loops: bool,
    weight_mode: WeightMode,
) -> Result<AugmentationGraph> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "threshold graph needs at least 2 points".into(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let d = points.ncols();
    let a = SymmetricMatrix::from_fn(n, |i, j| {
        if i == j {
            if self_loops {
                1.0
            } else {
                0.0
            }
        } else {
            let mut dist2 = 0.0;
            for k in 0..d {
                let diff = points[[i, k]] - points[[j, k]];
                dist2 += diff * diff;
            }
            if dist2.sqrt() <= epsilon {
                1.0
            } else {
                0.0
            }
        }
    });
    AugmentationGraph::from_adjacency(a, weight_mode)
}

/// Serializes a graph as the text edge-list format: a `# nodes=N` header,
/// then one `i j w` line per stored edge with `i <= j` (diagonal entries are
/// stored as `i i w`). Weights print in shortest round-trip form.
pub fn save_edge_list(g: &AugmentationGraph) -> String {
    let n = g.n();
    let mut out = format!("# nodes={n}\n");
    for i in 0..n {
        for j in i..n {
            let w = g.adjacency().entries()[[i, j]];
            if w > 0.0 {
                out.push_str(&format!("{i} {j} {w}\n"));
            }
        }
    }
    out
}

/// Parses the edge-list format written by [`save_edge_list`]. Node weights
/// are rebuilt in degree-consistent mode; use
/// [`AugmentationGraph::with_weight_mode`] to switch.
pub fn load_edge_list(text: &str) -> Result<AugmentationGraph> {
    let mut lines = text.lines().enumerate();
    let (first_no, first) = lines.next().ok_or_else(|| Error::EdgeListParse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let header = first.trim();
    let n: usize = header
        .strip_prefix("# nodes=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::EdgeListParse {
            line: first_no + 1,
            msg: format!("expected '# nodes=N' header, got '{header}'"),
        })?;
    if n == 0 {
        return Err(Error::EdgeListParse {
            line: first_no + 1,
            msg: "node count must be positive".into(),
        });
    }

    let mut entries = Array2::<f64>::zeros((n, n));
    let mut seen = std::collections::HashMap::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::EdgeListParse {
                line: line_no,
                msg: format!("expected 'i j w', got '{line}'"),
            });
        }
        let i: usize = fields[0].parse().map_err(|_| Error::EdgeListParse {
            line: line_no,
            msg: format!("bad node id '{}'", fields[0]),
        })?;
        let j: usize = fields[1].parse().map_err(|_| Error::EdgeListParse {
            line: line_no,
            msg: format!("bad node id '{}'", fields[1]),
        })?;
        let w: f64 = fields[2].parse().map_err(|_| Error::EdgeListParse {
            line: line_no,
            msg: format!("bad weight '{}'", fields[2]),
        })?;
        if i >= n || j >= n {
            return Err(Error::EdgeListParse {
                line: line_no,
                msg: format!("node id out of range (n = {n})"),
            });
        }
        if i > j {
            return Err(Error::EdgeListParse {
                line: line_no,
                msg: format!("edges must be stored with i <= j, got {i} {j}"),
            });
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::EdgeListParse {
                line: line_no,
                msg: format!("weight must be positive and finite, got {w}"),
            });
        }
        if let Some(&prev) = seen.get(&(i, j)) {
            if prev != w {
                return Err(Error::ConflictingEdge {
                    line: line_no,
                    i,
                    j,
                    a: prev,
                    b: w,
                });
            }
            continue;
        }
        seen.insert((i, j), w);
        entries[[i, j]] = w;
        entries[[j, i]] = w;
    }

    let a = SymmetricMatrix::new(entries)?;
    AugmentationGraph::from_adjacency(a, WeightMode::DegreeConsistent)
}
