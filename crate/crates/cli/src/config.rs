//! Flat `key = value` run configuration with dotted section prefixes and
//! `--set key=value` overrides. Unknown keys are rejected; numeric ranges
//! and referenced paths are validated before any compute.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mpcl_core::dynamics::{
    AffinityWeightingConfig, DynamicsConfig, InitSpec, PreprocessMode, UpdateRule,
};
use mpcl_core::graph::{GaussianMixtureConfig, WeightMode};
use mpcl_core::losses::NormalizationSet;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphSource {
    Synth,
    Edges,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub synth: GaussianMixtureConfig,
    pub graph_source: GraphSource,
    pub edges_path: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub groups_path: Option<PathBuf>,
    pub epsilon: f64,
    pub self_loops: bool,
    pub weight_mode: WeightMode,
    pub dynamics: DynamicsConfig,
    pub init_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub plot: bool,
    pub analyze_features: Option<PathBuf>,
    pub analyze_graph: Option<PathBuf>,
    pub analyze_labels: Option<PathBuf>,
    pub check_seed: u64,
    pub check_n: usize,
    pub check_m: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: GaussianMixtureConfig {
                means: vec![[-1.0, 0.0], [1.0, 0.0]],
                variance: 0.7,
                points_per_class: 100,
                seed: 12,
            },
            graph_source: GraphSource::Synth,
            edges_path: None,
            labels_path: None,
            groups_path: None,
            epsilon: 0.4,
            self_loops: false,
            weight_mode: WeightMode::DegreeConsistent,
            dynamics: DynamicsConfig {
                seed: 12,
                ..DynamicsConfig::default()
            },
            init_path: None,
            output_dir: PathBuf::from("out"),
            plot: true,
            analyze_features: None,
            analyze_graph: None,
            analyze_labels: None,
            check_seed: 0,
            check_n: 16,
            check_m: 4,
        }
    }
}

fn parse_kv_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError(format!("line {}: expected 'key = value', got '{line}'", idx + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| ConfigError(format!("{key}: expected a number, got '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| ConfigError(format!("{key}: expected a nonnegative integer, got '{v}'")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| ConfigError(format!("{key}: expected a nonnegative integer, got '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError(format!("{key}: expected true/false, got '{v}'"))),
    }
}

/// Semicolon-separated list of comma-separated 2-D points: `-1,0; 1,0`.
fn parse_means(key: &str, v: &str) -> Result<Vec<[f64; 2]>> {
    let mut means = Vec::new();
    for part in v.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let coords: Vec<&str> = part.split(',').map(str::trim).collect();
        if coords.len() != 2 {
            return Err(ConfigError(format!(
                "{key}: expected 'x,y' pairs separated by ';', got '{part}'"
            )));
        }
        means.push([parse_f64(key, coords[0])?, parse_f64(key, coords[1])?]);
    }
    if means.is_empty() {
        return Err(ConfigError(format!("{key}: at least one mean required")));
    }
    Ok(means)
}

impl RunConfig {
    /// Loads the optional config file, then applies `--set` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                parse_kv_text(&text)?
            }
        };
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (key, v) in map {
            match key.as_str() {
                "synth.means" => cfg.synth.means = parse_means(key, v)?,
                "synth.variance" => cfg.synth.variance = parse_f64(key, v)?,
                "synth.points_per_class" => cfg.synth.points_per_class = parse_usize(key, v)?,
                "synth.seed" => cfg.synth.seed = parse_u64(key, v)?,
                "graph.source" => {
                    cfg.graph_source = match v.as_str() {
                        "synth" => GraphSource::Synth,
                        "edges" => GraphSource::Edges,
                        _ => {
                            return Err(ConfigError(format!(
                                "{key}: expected synth|edges, got '{v}'"
                            )))
                        }
                    }
                }
                "graph.edges_path" => cfg.edges_path = Some(PathBuf::from(v)),
                "graph.labels_path" => cfg.labels_path = Some(PathBuf::from(v)),
                "graph.groups_path" => cfg.groups_path = Some(PathBuf::from(v)),
                "graph.epsilon" => cfg.epsilon = parse_f64(key, v)?,
                "graph.self_loops" => cfg.self_loops = parse_bool(key, v)?,
                "graph.weight_mode" => {
                    cfg.weight_mode = match v.as_str() {
                        "degree" => WeightMode::DegreeConsistent,
                        "uniform" => WeightMode::Uniform,
                        _ => {
                            return Err(ConfigError(format!(
                                "{key}: expected degree|uniform, got '{v}'"
                            )))
                        }
                    }
                }
                "dynamics.rule" => {
                    cfg.dynamics.rule = match v.as_str() {
                        "alignment" => UpdateRule::Alignment,
                        "uniformity" => UpdateRule::Uniformity,
                        "uniformity_sg" => UpdateRule::UniformitySg,
                        "contrastive" => UpdateRule::Contrastive,
                        "attention_alignment" => UpdateRule::AttentionAlignment,
                        "multi_stage" => UpdateRule::MultiStage,
                        "self_attention" => UpdateRule::SelfAttention,
                        "dgc" => UpdateRule::Dgc,
                        _ => return Err(ConfigError(format!("{key}: unknown rule '{v}'"))),
                    }
                }
                "dynamics.alpha" => cfg.dynamics.alpha = parse_f64(key, v)?,
                "dynamics.steps" => cfg.dynamics.steps = parse_usize(key, v)?,
                "dynamics.temperature" => cfg.dynamics.temperature = parse_f64(key, v)?,
                "dynamics.beta" => cfg.dynamics.beta = parse_f64(key, v)?,
                "dynamics.stages" => cfg.dynamics.stages = parse_usize(key, v)?,
                "dynamics.delta_t" => cfg.dynamics.delta_t = parse_f64(key, v)?,
                "dynamics.preprocess" => {
                    cfg.dynamics.preprocess = match v.as_str() {
                        "none" => PreprocessMode::None,
                        "center" => PreprocessMode::Center,
                        "l2_normalize" => PreprocessMode::L2Normalize,
                        "center_then_normalize" => PreprocessMode::CenterThenNormalize,
                        _ => {
                            return Err(ConfigError(format!(
                                "{key}: expected none|center|l2_normalize|center_then_normalize, got '{v}'"
                            )))
                        }
                    }
                }
                "dynamics.init" => match v.as_str() {
                    "uniform_box" => {
                        if !matches!(cfg.dynamics.init, InitSpec::UniformBox { .. }) {
                            cfg.dynamics.init = InitSpec::UniformBox { lo: -1.0, hi: 1.0 };
                        }
                    }
                    "given" => cfg.dynamics.init = InitSpec::Given,
                    _ => {
                        return Err(ConfigError(format!(
                            "{key}: expected uniform_box|given, got '{v}'"
                        )))
                    }
                },
                "dynamics.init_lo" => {
                    let lo = parse_f64(key, v)?;
                    cfg.dynamics.init = match cfg.dynamics.init {
                        InitSpec::UniformBox { hi, .. } => InitSpec::UniformBox { lo, hi },
                        other => other,
                    };
                }
                "dynamics.init_hi" => {
                    let hi = parse_f64(key, v)?;
                    cfg.dynamics.init = match cfg.dynamics.init {
                        InitSpec::UniformBox { lo, .. } => InitSpec::UniformBox { lo, hi },
                        other => other,
                    };
                }
                "dynamics.init_path" => cfg.init_path = Some(PathBuf::from(v)),
                "dynamics.dim" => cfg.dynamics.dim = parse_usize(key, v)?,
                "dynamics.seed" => cfg.dynamics.seed = parse_u64(key, v)?,
                "dynamics.snapshot_every" => cfg.dynamics.snapshot_every = parse_usize(key, v)?,
                "dynamics.normalization_set" => {
                    cfg.dynamics.normalization_set = match v.as_str() {
                        "all" => NormalizationSet::All,
                        "neighborhood" => NormalizationSet::Neighborhood,
                        _ => {
                            return Err(ConfigError(format!(
                                "{key}: expected all|neighborhood, got '{v}'"
                            )))
                        }
                    }
                }
                "dynamics.affinity_weighting" => {
                    cfg.dynamics.affinity_weighting = match v.as_str() {
                        "follow" => AffinityWeightingConfig::FollowGraph,
                        "unweighted" => AffinityWeightingConfig::Unweighted,
                        "weighted" => AffinityWeightingConfig::Weighted,
                        _ => {
                            return Err(ConfigError(format!(
                                "{key}: expected follow|unweighted|weighted, got '{v}'"
                            )))
                        }
                    }
                }
                "output.dir" => cfg.output_dir = PathBuf::from(v),
                "output.plot" => cfg.plot = parse_bool(key, v)?,
                "analyze.features" => cfg.analyze_features = Some(PathBuf::from(v)),
                "analyze.graph" => cfg.analyze_graph = Some(PathBuf::from(v)),
                "analyze.labels" => cfg.analyze_labels = Some(PathBuf::from(v)),
                "check.seed" => cfg.check_seed = parse_u64(key, v)?,
                "check.n" => cfg.check_n = parse_usize(key, v)?,
                "check.m" => cfg.check_m = parse_usize(key, v)?,
                _ => return Err(ConfigError(format!("unknown config key '{key}'"))),
            }
        }
        Ok(cfg)
    }

    /// Validation shared by synth/run before any compute.
    pub fn validate_for_run(&self) -> Result<()> {
        self.synth
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        self.dynamics
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(ConfigError(format!(
                "graph.epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.graph_source == GraphSource::Edges {
            let p = self
                .edges_path
                .as_ref()
                .ok_or_else(|| ConfigError("graph.source = edges requires graph.edges_path".into()))?;
            if !p.exists() {
                return Err(ConfigError(format!("graph.edges_path {} does not exist", p.display())));
            }
        }
        for (key, path) in [
            ("graph.labels_path", &self.labels_path),
            ("graph.groups_path", &self.groups_path),
            ("dynamics.init_path", &self.init_path),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigError(format!("{key} {} does not exist", p.display())));
                }
            }
        }
        if matches!(self.dynamics.init, InitSpec::Given) && self.init_path.is_none() {
            return Err(ConfigError(
                "dynamics.init = given requires dynamics.init_path".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        cfg.validate_for_run().unwrap();
        assert_eq!(cfg.synth.points_per_class, 100);
        assert_eq!(cfg.epsilon, 0.4);
    }

    #[test]
    fn file_and_overrides() {
        let text = "# comment\ndynamics.alpha = 0.2\nsynth.means = 0,0; 2,2; -2,1\n";
        let map = parse_kv_text(text).unwrap();
        let mut cfg = RunConfig::from_map(&map).unwrap();
        assert_eq!(cfg.dynamics.alpha, 0.2);
        assert_eq!(cfg.synth.means.len(), 3);

        let overrides = vec![("dynamics.alpha".to_string(), "0.3".to_string())];
        let mut map2 = map.clone();
        for (k, v) in &overrides {
            map2.insert(k.clone(), v.clone());
        }
        cfg = RunConfig::from_map(&map2).unwrap();
        assert_eq!(cfg.dynamics.alpha, 0.3);
    }

    #[test]
    fn unknown_key_rejected() {
        let map = parse_kv_text("dynamics.alhpa = 0.1\n").unwrap();
        let err = RunConfig::from_map(&map).unwrap_err();
        assert!(err.0.contains("unknown config key"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_kv_text("dynamics.alpha 0.1\n").unwrap_err();
        assert!(err.0.contains("line 1"));
    }

    #[test]
    fn init_box_keys() {
        let map = parse_kv_text("dynamics.init_lo = -2\ndynamics.init_hi = 2\n").unwrap();
        let cfg = RunConfig::from_map(&map).unwrap();
        match cfg.dynamics.init {
            InitSpec::UniformBox { lo, hi } => {
                assert_eq!(lo, -2.0);
                assert_eq!(hi, 2.0);
            }
            other => panic!("unexpected init {other:?}"),
        }
    }

    #[test]
    fn bad_values_rejected() {
        for line in [
            "dynamics.rule = warp",
            "graph.weight_mode = metric",
            "synth.variance = banana",
            "output.plot = maybe",
        ] {
            let map = parse_kv_text(&format!("{line}\n")).unwrap();
            assert!(RunConfig::from_map(&map).is_err(), "accepted: {line}");
        }
    }
}
