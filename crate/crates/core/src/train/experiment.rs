use rayon::prelude::*;

use super::{
    balance_diagnostics, evaluate_counterfactual, generalization_eval, train, train_with_validation, EvalReport,
    TrainOutcome,
};
use crate::config::{derive_seed, RunConfig};
use crate::error::{Error, Result};
use crate::graph::partition_graph;
use crate::model::Model;
use crate::sim::{simulate_trajectory, InterventionSpec, ObservationalDataset, SimParams};

/// Everything one simulate, train and evaluate pass produced.
pub struct Experiment {
    pub dataset: ObservationalDataset,
    pub trained: TrainOutcome,
    pub report: EvalReport,
}

fn evaluate(cfg: &RunConfig, model: &Model, data: &ObservationalDataset) -> Result<EvalReport> {
    let spec = InterventionSpec::ratio(cfg.start_time(), cfg.eval.flip_ratio, cfg.eval_seed());
    let mut report = evaluate_counterfactual(model, data, &spec, cfg.eval.horizon)?;
    if cfg.eval.balance {
        report.balance = Some(balance_diagnostics(model, data, &cfg.probe_config())?);
    }
    report.config_hash = cfg.config_hash()?;
    Ok(report)
}

/// Scores a trained model under the config's evaluation section.
pub fn evaluate_with_config(cfg: &RunConfig, model: &Model, data: &ObservationalDataset) -> Result<EvalReport> {
    evaluate(cfg, model, data)
}

fn fit(cfg: &RunConfig, data: &ObservationalDataset) -> Result<TrainOutcome> {
    let model = Model::new(cfg.model_config(), data.params.static_dim, cfg.model_seed())?;
    train(data, model, &cfg.train_config())
}

pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let graph = cfg.build_graph()?;
    let dataset = simulate_trajectory(&graph, &cfg.sim_params())?;
    let trained = fit(cfg, &dataset)?;
    let report = evaluate(cfg, &trained.model, &dataset)?;
    Ok(Experiment {
        dataset,
        trained,
        report,
    })
}

/// Partitions the configured graph, simulates one trajectory per part with
/// distinct seeds, trains on the training part (selecting on the validation
/// part) and evaluates on the test part.
pub fn run_generalization(cfg: &RunConfig) -> Result<(TrainOutcome, EvalReport)> {
    cfg.validate()?;
    let graph = cfg.build_graph()?;
    let partition = partition_graph(&graph, cfg.graph.partition, cfg.graph_seed())?;
    let base = cfg.sim_params();
    let sim_on = |g, k: u64| {
        let p = SimParams {
            seed: if k == 0 { base.seed } else { derive_seed(base.seed, k) },
            ..base.clone()
        };
        simulate_trajectory(g, &p)
    };
    let train_data = sim_on(&partition.train_graph, 0)?;
    let valid_data = sim_on(&partition.valid_graph, 1)?;
    let test_data = sim_on(&partition.test_graph, 2)?;
    let model = Model::new(cfg.model_config(), base.static_dim, cfg.model_seed())?;
    let trained = train_with_validation(&train_data, Some(&valid_data), model, &cfg.train_config())?;
    let spec = InterventionSpec::ratio(cfg.start_time(), cfg.eval.flip_ratio, cfg.eval_seed());
    let mut report = generalization_eval(&trained.model, &partition, &test_data, &spec, cfg.eval.horizon)?;
    if cfg.eval.balance {
        report.balance = Some(balance_diagnostics(&trained.model, &test_data, &cfg.probe_config())?);
    }
    report.config_hash = cfg.config_hash()?;
    Ok((trained, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    FlipRatio,
    Confounding,
    AlphaGrid,
    AltRatio,
}

impl SweepKind {
    pub fn parse(s: &str) -> Result<SweepKind> {
        match s {
            "flip_ratio" => Ok(SweepKind::FlipRatio),
            "confounding" => Ok(SweepKind::Confounding),
            "alpha_grid" => Ok(SweepKind::AlphaGrid),
            "alt_ratio" => Ok(SweepKind::AltRatio),
            _ => Err(Error::param(format!(
                "unknown sweep kind {s:?}, expected flip_ratio, confounding, alpha_grid or alt_ratio"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::FlipRatio => "flip_ratio",
            SweepKind::Confounding => "confounding",
            SweepKind::AlphaGrid => "alpha_grid",
            SweepKind::AltRatio => "alt_ratio",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GridPoint {
    Value(f64),
    /// `(alpha_A, alpha_G)`.
    Pair(f64, f64),
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub point: GridPoint,
    /// Error text for a failed point.
    pub outcome: std::result::Result<EvalReport, String>,
}

/// The base config with one grid point applied.
pub fn apply_point(kind: SweepKind, point: GridPoint, base: &RunConfig) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match (kind, point) {
        (SweepKind::FlipRatio, GridPoint::Value(r)) => cfg.eval.flip_ratio = r,
        (SweepKind::Confounding, GridPoint::Value(g)) => {
            cfg.sim.gamma_a = g;
            cfg.sim.gamma_f = g;
            cfg.sim.gamma_n = g / 3.0;
            cfg.sim.gamma_g = g / 3.0;
        }
        (SweepKind::AlphaGrid, GridPoint::Pair(a, g)) => {
            cfg.train.variant = None;
            cfg.train.alpha_a = a;
            cfg.train.alpha_g = g;
        }
        (SweepKind::AltRatio, GridPoint::Value(k)) => {
            if !(k >= 0.0 && k.fract() == 0.0) {
                return Err(Error::param(format!("alternation ratio {k} is not a non-negative integer")));
            }
            cfg.train.alt_ratio = k as usize;
        }
        (kind, point) => {
            return Err(Error::param(format!("grid point {point:?} does not fit a {} sweep", kind.name())));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One train and evaluate per grid point, each from the base seeds with its
/// own state; up to `jobs` points run at once. Failed points are reported
/// in their row. A flip-ratio sweep shares one trained model, since
/// training does not depend on the flip ratio.
pub fn sweep(kind: SweepKind, grid: &[GridPoint], base: &RunConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::param("sweep grid is empty"));
    }
    base.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::param(format!("cannot start {jobs} sweep workers: {e}")))?;
    let rows = if kind == SweepKind::FlipRatio {
        let shared = (|| -> Result<(ObservationalDataset, Model)> {
            let graph = base.build_graph()?;
            let data = simulate_trajectory(&graph, &base.sim_params())?;
            let trained = fit(base, &data)?;
            Ok((data, trained.model))
        })();
        match shared {
            Ok((data, model)) => pool.install(|| {
                grid.par_iter()
                    .map(|&point| SweepRow {
                        point,
                        outcome: apply_point(kind, point, base)
                            .and_then(|cfg| evaluate(&cfg, &model, &data))
                            .map_err(|e| e.to_string()),
                    })
                    .collect()
            }),
            Err(e) => grid
                .iter()
                .map(|&point| SweepRow {
                    point,
                    outcome: Err(e.to_string()),
                })
                .collect(),
        }
    } else {
        pool.install(|| {
            grid.par_iter()
                .map(|&point| SweepRow {
                    point,
                    outcome: apply_point(kind, point, base)
                        .and_then(|cfg| run_experiment(&cfg))
                        .map(|e| e.report)
                        .map_err(|e| e.to_string()),
                })
                .collect()
        })
    };
    Ok(rows)
}
