//! The four CLI commands: `synth`, `run`, `analyze`, `check`.

use std::path::Path;

use mpcl_core::analysis;
use mpcl_core::dynamics::{self, InitSpec, PreprocessMode, TrajectoryRecord};
use mpcl_core::graph::{
    build_synthetic_gaussians, build_threshold_graph, load_edge_list, save_edge_list,
    AugmentationGraph,
};
use mpcl_core::losses::FeatureMatrix;
use mpcl_core::oracle;

use crate::config::{GraphSource, RunConfig};
use crate::io::{self, DirLock};
use crate::svg;

/// Process exit codes: 0 success, 1 check failure, 2 config error,
/// 3 runtime divergence.
pub enum CommandError {
    Config(String),
    CheckFailure(usize),
    Divergence(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::CheckFailure(_) => 1,
            CommandError::Config(_) => 2,
            CommandError::Divergence(_) => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CommandError::Config(m) => format!("error: {m}"),
            CommandError::CheckFailure(n) => format!("error: {n} check(s) failed"),
            CommandError::Divergence(m) => format!("error: {m}"),
        }
    }
}

type Result<T> = std::result::Result<T, CommandError>;

fn config_err<E: std::fmt::Display>(e: E) -> CommandError {
    CommandError::Config(e.to_string())
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    cfg.validate_for_run().map_err(config_err)?;
    let _lock = DirLock::acquire(&cfg.output_dir).map_err(CommandError::Config)?;

    let (points, labels) = build_synthetic_gaussians(&cfg.synth).map_err(config_err)?;
    let graph = build_threshold_graph(&points, cfg.epsilon, cfg.self_loops, cfg.weight_mode)
        .map_err(config_err)?
        .with_labels(labels.clone())
        .map_err(config_err)?;

    for w in graph.warnings() {
        eprintln!("warning: {w}");
    }
    let edge_count = save_edge_list(&graph).lines().count().saturating_sub(1);
    if edge_count == 0 {
        eprintln!("warning: generated graph has no edges (epsilon too small?)");
    }

    io::write_file(&cfg.output_dir.join("points.csv"), &io::points_csv(&points, &labels))
        .map_err(CommandError::Config)?;
    io::write_file(&cfg.output_dir.join("labels.csv"), &io::labels_csv(&labels))
        .map_err(CommandError::Config)?;
    io::write_file(&cfg.output_dir.join("graph.edges"), &save_edge_list(&graph))
        .map_err(CommandError::Config)?;
    println!(
        "synth: wrote points.csv, labels.csv, graph.edges in {} (n={}, edges={})",
        cfg.output_dir.display(),
        graph.n(),
        edge_count
    );
    Ok(())
}

fn build_graph(cfg: &RunConfig) -> Result<AugmentationGraph> {
    let mut graph = match cfg.graph_source {
        GraphSource::Synth => {
            let (points, labels) = build_synthetic_gaussians(&cfg.synth).map_err(config_err)?;
            build_threshold_graph(&points, cfg.epsilon, cfg.self_loops, cfg.weight_mode)
                .map_err(config_err)?
                .with_labels(labels)
                .map_err(config_err)?
        }
        GraphSource::Edges => {
            let path = cfg.edges_path.as_ref().expect("validated");
            let text = std::fs::read_to_string(path)
                .map_err(|e| CommandError::Config(format!("cannot read {}: {e}", path.display())))?;
            load_edge_list(&text)
                .map_err(config_err)?
                .with_weight_mode(cfg.weight_mode)
                .map_err(config_err)?
        }
    };
    if let Some(path) = &cfg.labels_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CommandError::Config(format!("cannot read {}: {e}", path.display())))?;
        let labels = io::read_labels_csv(&text).map_err(CommandError::Config)?;
        graph = graph.with_labels(labels).map_err(config_err)?;
    }
    if let Some(path) = &cfg.groups_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CommandError::Config(format!("cannot read {}: {e}", path.display())))?;
        let groups = io::read_labels_csv(&text).map_err(CommandError::Config)?;
        graph = graph.with_groups(groups).map_err(config_err)?;
    }
    Ok(graph)
}

fn trajectory_csv(rec: &TrajectoryRecord) -> String {
    let mut out = String::from("step,L_align,L_unif,L_total");
    for k in &rec.class_ids {
        out.push_str(&format!(",dM_class_{k}"));
    }
    out.push_str(",residual\n");
    for r in &rec.records {
        out.push_str(&format!(
            "{},{},{},{}",
            r.step,
            io::fmt_f64(r.l_align),
            io::fmt_f64(r.l_unif),
            io::fmt_f64(r.l_total)
        ));
        for d in &r.d_m {
            out.push(',');
            out.push_str(&io::fmt_f64(*d));
        }
        out.push(',');
        out.push_str(&io::fmt_f64(r.residual));
        out.push('\n');
    }
    if let Some(event) = &rec.diverged {
        // Error marker row: the divergence step with NaN metrics, plus a
        // comment carrying the details.
        out.push_str(&format!("{}", event.step));
        for _ in 0..(3 + rec.class_ids.len() + 1) {
            out.push_str(",NaN");
        }
        out.push('\n');
        out.push_str(&format!(
            "# error=divergence step={} node={}\n",
            event.step, event.node
        ));
    }
    out
}

pub fn cmd_run(cfg: &RunConfig) -> Result<()> {
    cfg.validate_for_run().map_err(config_err)?;
    let _lock = DirLock::acquire(&cfg.output_dir).map_err(CommandError::Config)?;

    let graph = build_graph(cfg)?;
    let f0 = match cfg.dynamics.init {
        InitSpec::Given => {
            let path = cfg.init_path.as_ref().expect("validated");
            let text = std::fs::read_to_string(path)
                .map_err(|e| CommandError::Config(format!("cannot read {}: {e}", path.display())))?;
            let raw = io::read_features_csv(&text).map_err(CommandError::Config)?;
            if raw.nrows() != graph.n() {
                return Err(CommandError::Config(format!(
                    "initial features have {} rows but the graph has {} nodes",
                    raw.nrows(),
                    graph.n()
                )));
            }
            FeatureMatrix::new(raw).map_err(config_err)?
        }
        InitSpec::UniformBox { .. } => {
            dynamics::initial_features(&cfg.dynamics, graph.n()).map_err(config_err)?
        }
    };

    let mut run_cfg = cfg.dynamics.clone();
    run_cfg.record_snapshots = true;
    let before_spread = analysis::total_pairwise_distance(f0.raw());
    let rec = dynamics::run(&graph, &f0, &run_cfg).map_err(config_err)?;

    for w in &rec.warnings {
        eprintln!("warning: {w}");
    }
    if run_cfg.preprocess != PreprocessMode::None {
        let after_spread = analysis::total_pairwise_distance(rec.final_features.raw());
        println!(
            "total_pairwise_distance_ratio={}",
            io::fmt_f64(after_spread / before_spread)
        );
    }

    io::write_file(&cfg.output_dir.join("trajectory.csv"), &trajectory_csv(&rec))
        .map_err(CommandError::Config)?;
    io::write_file(
        &cfg.output_dir.join("features_final.csv"),
        &io::features_csv(rec.final_features.raw()),
    )
    .map_err(CommandError::Config)?;
    for r in &rec.records {
        if let Some(snap) = &r.snapshot {
            io::write_file(
                &cfg.output_dir.join(format!("snapshots/step_{:06}.csv", r.step)),
                &io::features_csv(snap),
            )
            .map_err(CommandError::Config)?;
        }
    }
    if cfg.plot && rec.final_features.m() == 2 {
        let svg = svg::scatter(rec.final_features.raw(), graph.labels());
        io::write_file(&cfg.output_dir.join("plot.svg"), &svg).map_err(CommandError::Config)?;
    }

    if let Some(event) = &rec.diverged {
        return Err(CommandError::Divergence(format!(
            "run diverged at step {} (node {}); partial trajectory written to {}",
            event.step,
            event.node,
            cfg.output_dir.display()
        )));
    }
    println!(
        "run: rule={} steps={} records={} outputs in {}",
        cfg.dynamics.rule.name(),
        cfg.dynamics.steps,
        rec.records.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<()> {
    let features_path = cfg
        .analyze_features
        .as_ref()
        .ok_or_else(|| CommandError::Config("analyze requires analyze.features".into()))?;
    let graph_path = cfg
        .analyze_graph
        .as_ref()
        .ok_or_else(|| CommandError::Config("analyze requires analyze.graph".into()))?;
    let labels_path = cfg
        .analyze_labels
        .as_ref()
        .ok_or_else(|| CommandError::Config("analyze requires analyze.labels".into()))?;

    let read = |p: &Path| {
        std::fs::read_to_string(p)
            .map_err(|e| CommandError::Config(format!("cannot read {}: {e}", p.display())))
    };
    let raw = io::read_features_csv(&read(features_path)?).map_err(CommandError::Config)?;
    let graph = load_edge_list(&read(graph_path)?)
        .map_err(config_err)?
        .with_weight_mode(cfg.weight_mode)
        .map_err(config_err)?;
    let labels = io::read_labels_csv(&read(labels_path)?).map_err(CommandError::Config)?;
    if raw.nrows() != graph.n() || labels.len() != graph.n() {
        return Err(CommandError::Config(format!(
            "size mismatch: features {} rows, graph {} nodes, labels {}",
            raw.nrows(),
            graph.n(),
            labels.len()
        )));
    }

    let f = FeatureMatrix::new(raw).map_err(config_err)?;
    let report = analysis::clustering_report(&f, &labels).map_err(config_err)?;
    let residual =
        analysis::equilibrium_residual(&f, &graph, cfg.dynamics.temperature).map_err(config_err)?;

    println!("nn_accuracy={}", io::fmt_f64(report.nn_accuracy));
    println!("intra_mean={}", io::fmt_f64(report.intra_mean));
    println!("inter_mean={}", io::fmt_f64(report.inter_mean));
    println!("effective_rank={}", io::fmt_f64(report.effective_rank));
    println!("residual={}", io::fmt_f64(residual));
    if !report.flagged_classes.is_empty() {
        let ids: Vec<String> = report.flagged_classes.iter().map(|c| c.to_string()).collect();
        println!("flagged_single_sample_classes={}", ids.join(";"));
    }
    Ok(())
}

pub fn cmd_check(cfg: &RunConfig) -> Result<()> {
    let reports =
        oracle::standard_suite(cfg.check_seed, cfg.check_n, cfg.check_m).map_err(config_err)?;
    let mut failures = 0;
    for rep in &reports {
        println!("{}", rep.report_line());
        if !rep.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CommandError::CheckFailure(failures));
    }
    Ok(())
}
