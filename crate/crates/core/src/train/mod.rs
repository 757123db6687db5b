//! Alternating adversarial training, counterfactual evaluation, balance
//! probes and sweeps.

mod balance;
mod eval;
mod experiment;
mod export;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diff::{AdamState, Tape};
use crate::error::{Error, Result};
use crate::model::{check_alphas, loss_outcome, GraphContext, Group, Model, Scaler};
use crate::rng;
use crate::sim::ObservationalDataset;

pub use balance::{balance_diagnostics, probe_balance, BalanceReport, ProbeConfig};
pub use eval::{
    degree_bucket_label, evaluate_counterfactual, generalization_eval, ConstantPredictor, DegreeBucket, EvalReport,
    OraclePredictor, OutcomePredictor, DEGREE_EDGES,
};
pub use experiment::{
    apply_point, evaluate_with_config, run_experiment, run_generalization, sweep, Experiment, GridPoint, SweepKind,
    SweepRow,
};
pub use export::{export_latents, write_history, write_report, write_sweep_table, LATENT_COLUMNS_PREFIX};

/// Ablation variants and the balancing weights they fix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    /// No balancing.
    N,
    /// Treatment balancing only.
    T,
    /// Interference balancing only.
    I,
}

impl Variant {
    pub fn alphas(self) -> (f64, f64) {
        match self {
            Variant::Full => (0.5, 0.5),
            Variant::N => (0.0, 0.0),
            Variant::T => (1.0, 0.0),
            Variant::I => (0.0, 1.0),
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "full" => Ok(Variant::Full),
            "N" | "n" => Ok(Variant::N),
            "T" | "t" => Ok(Variant::T),
            "I" | "i" => Ok(Variant::I),
            _ => Err(Error::param(format!("unknown variant {s:?}, expected full, N, T or I"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub alpha_a: f64,
    pub alpha_g: f64,
    /// Full-objective steps per outcome-only step.
    pub alt_ratio: usize,
    pub epochs: usize,
    pub substeps: usize,
    pub seed: u64,
    /// When set, overrides `alpha_a` and `alpha_g`.
    pub variant: Option<Variant>,
    /// Fraction of nodes held out of the outcome loss for checkpoint
    /// selection. Zero keeps the final iterate.
    pub valid_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            alpha_a: 0.5,
            alpha_g: 0.5,
            alt_ratio: 4,
            epochs: 5000,
            substeps: 4,
            seed: 0,
            variant: None,
            valid_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn alphas(&self) -> (f64, f64) {
        self.variant.map_or((self.alpha_a, self.alpha_g), Variant::alphas)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, g) = self.alphas();
        check_alphas(a, g)?;
        if self.epochs < 1 {
            return Err(Error::param("epochs must be at least 1"));
        }
        if self.substeps < 1 {
            return Err(Error::param("substeps must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::param(format!("valid_fraction {} outside [0, 1)", self.valid_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    /// `L` on all five groups with gradient reversal.
    Full,
    /// `L_Y` on encoder, vector field and outcome head.
    Outcome,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Full => "L",
            StepKind::Outcome => "L_Y",
        }
    }
}

/// Step type at 1-based iteration `w`: every `(K+1)`-th is outcome-only.
pub fn schedule(iteration: usize, alt_ratio: usize) -> StepKind {
    if iteration % (alt_ratio + 1) == 0 {
        StepKind::Outcome
    } else {
        StepKind::Full
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub kind: StepKind,
    /// Objective that was differentiated.
    pub loss: f64,
    pub outcome: f64,
    pub treatment: Option<f64>,
    pub interference: Option<f64>,
    /// `L_Y` on held-out nodes before this step's update.
    pub valid_outcome: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation `L_Y`, or the final iterate.
    pub model: Model,
    pub final_model: Model,
    pub history: Vec<LossRecord>,
    /// Iterations applied before the selected checkpoint.
    pub best_iteration: usize,
    pub best_valid: Option<f64>,
}

impl TrainOutcome {
    pub fn count(&self, kind: StepKind) -> usize {
        self.history.iter().filter(|r| r.kind == kind).count()
    }
}

/// Node rows used for fitting and for checkpoint selection.
fn split_nodes(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_valid = (fraction * n as f64).round() as usize;
    if n_valid >= n {
        return Err(Error::param(format!("validation split leaves no training nodes out of {n}")));
    }
    if fraction > 0.0 && n_valid == 0 {
        return Err(Error::param(format!("validation fraction {fraction} selects no nodes out of {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    let mut valid = order[..n_valid].to_vec();
    let mut train = order[n_valid..].to_vec();
    valid.sort_unstable();
    train.sort_unstable();
    Ok((train, valid))
}

/// Trains with a node holdout drawn from `config.valid_fraction`.
pub fn train(dataset: &ObservationalDataset, model: Model, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_validation(dataset, None, model, config)
}

/// Like [`train`]; a separate validation trajectory, when given, replaces
/// the node holdout and all nodes of `dataset` are used for fitting.
pub fn train_with_validation(
    dataset: &ObservationalDataset,
    validation: Option<&ObservationalDataset>,
    mut model: Model,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (alpha_a, alpha_g) = config.alphas();
    let n = dataset.num_nodes();
    if dataset.static_covariates.cols() != model.static_dim {
        return Err(Error::dim(
            "train",
            &[model.static_dim],
            &[dataset.static_covariates.cols()],
        ));
    }
    let (train_rows, valid_rows) = match validation {
        Some(_) => ((0..n).collect(), Vec::new()),
        None => split_nodes(n, config.valid_fraction, config.seed)?,
    };
    model.config.substeps = config.substeps;
    model.scaler = Scaler::fit(
        dataset
            .covariates
            .iter()
            .flat_map(|row| train_rows.iter().map(move |&i| &row[i])),
    );
    let scale = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| r.iter().map(|&v| model.scaler.apply(v)).collect())
            .collect()
    };
    let targets = scale(dataset.outcomes());
    let valid_targets = validation.map(|v| scale(v.outcomes()));
    let ctx = GraphContext::new(&dataset.graph);
    let valid_ctx = validation.map(|v| GraphContext::new(&v.graph));
    let train_subset = (train_rows.len() < n).then_some(train_rows.as_slice());
    let x0 = &dataset.covariates[0];

    let mut adam = AdamState::new(&model.params, config.learning_rate);
    let outcome_groups = [Group::Encoder, Group::OdeFunc, Group::OutcomeHead];
    let outcome_idx = model.indices(&outcome_groups);
    let all_idx = model.indices(&Group::ALL);

    let validate = |m: &Model, tape: Option<(&Tape, &[crate::diff::Var])>| -> Result<Option<f64>> {
        if let (Some(v), Some(vt), Some(vctx)) = (validation, &valid_targets, &valid_ctx) {
            let pred = m.predict(&v.covariates[0], &v.static_covariates, &v.treatments, vctx)?;
            let (mut sum, mut count) = (0.0, 0usize);
            for (p, y) in pred.outcomes.iter().zip(vt) {
                for (pi, yi) in p.iter().zip(y) {
                    sum += (m.scaler.apply(*pi) - yi).powi(2);
                    count += 1;
                }
            }
            return Ok(Some(sum / count as f64));
        }
        if valid_rows.is_empty() {
            return Ok(None);
        }
        let (sum, count) = match tape {
            Some((tape, outcomes)) => {
                let mut acc = (0.0, 0usize);
                for (p, y) in outcomes.iter().zip(&targets) {
                    let vals = tape.value(*p);
                    for &i in &valid_rows {
                        acc.0 += (vals[i] - y[i]).powi(2);
                        acc.1 += 1;
                    }
                }
                acc
            }
            None => {
                let pred = m.predict(x0, &dataset.static_covariates, &dataset.treatments, &ctx)?;
                let mut acc = (0.0, 0usize);
                for (p, y) in pred.outcomes.iter().zip(&targets) {
                    for &i in &valid_rows {
                        acc.0 += (m.scaler.apply(p[i]) - y[i]).powi(2);
                        acc.1 += 1;
                    }
                }
                acc
            }
        };
        Ok(Some(sum / count as f64))
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut consider = |valid: Option<f64>, iteration: usize, m: &Model| {
        if let Some(v) = valid {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, iteration, m.clone()));
            }
        }
    };

    for w in 1..=config.epochs {
        let kind = schedule(w, config.alt_ratio);
        let groups: &[Group] = match kind {
            StepKind::Full => &Group::ALL,
            StepKind::Outcome => &outcome_groups,
        };
        let mut tape = Tape::new();
        let b = model.bind(&mut tape, groups);
        let fwd = model
            .forward(&mut tape, &b, x0, &dataset.static_covariates, &dataset.treatments, &ctx)
            .map_err(|e| match e {
                Error::Solve { .. } => Error::Training {
                    iteration: w,
                    reason: e.to_string(),
                },
                e => e,
            })?;
        let ly = loss_outcome(&mut tape, &fwd.outcomes, &targets, train_subset)?;
        let mut record = LossRecord {
            iteration: w,
            kind,
            loss: 0.0,
            outcome: tape.scalar(ly),
            treatment: None,
            interference: None,
            valid_outcome: validate(&model, Some((&tape, &fwd.outcomes)))?,
        };
        consider(record.valid_outcome, w - 1, &model);
        let mut root = ly;
        if kind == StepKind::Full {
            if alpha_a > 0.0 {
                let la = model.loss_treatment(&mut tape, &b, &fwd.latents, &dataset.treatments, train_subset, true)?;
                record.treatment = Some(tape.scalar(la));
                let weighted = tape.scale(la, alpha_a)?;
                root = tape.add(root, weighted)?;
            }
            if alpha_g > 0.0 {
                let lg = model.loss_interference(
                    &mut tape,
                    &b,
                    &fwd.latents,
                    &dataset.treatments,
                    &dataset.interference,
                    train_subset,
                    true,
                )?;
                record.interference = Some(tape.scalar(lg));
                let weighted = tape.scale(lg, alpha_g)?;
                root = tape.add(root, weighted)?;
            }
        }
        record.loss = tape.scalar(root);
        if !record.loss.is_finite() {
            return Err(Error::Training {
                iteration: w,
                reason: format!("loss is {}", record.loss),
            });
        }
        tape.backward(root)?;
        model.params.collect_grads(&tape, &b.bindings);
        let which = match kind {
            StepKind::Full => &all_idx,
            StepKind::Outcome => &outcome_idx,
        };
        adam.step(&mut model.params, which)?;
        if model.params.check_finite().is_err() {
            return Err(Error::Training {
                iteration: w,
                reason: "parameters became non-finite".into(),
            });
        }
        history.push(record);
    }
    let last = validate(&model, None)?;
    consider(last, config.epochs, &model);
    let (best_valid, best_iteration, best_model) = match best {
        Some((v, it, m)) => (Some(v), it, m),
        None => (None, config.epochs, model.clone()),
    };
    Ok(TrainOutcome {
        model: best_model,
        final_model: model,
        history,
        best_iteration,
        best_valid,
    })
}
