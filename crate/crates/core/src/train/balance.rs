//! Post-hoc balance probes on frozen latents.
//!
//! A fresh one-hidden-layer network is fit on a node split of the latent
//! trajectories and scored on the held-out nodes: a classifier `Z -> A`
//! and a regressor `[Z, A] -> G`. Chance-level scores mean the latents
//! carry no recoverable treatment or interference signal.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diff::{AdamState, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{GraphContext, Model};
use crate::rng;
use crate::sim::ObservationalDataset;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub treatment_accuracy: f64,
    pub interference_r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Fraction of nodes scored; the rest fit the probe.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 16,
            iterations: 300,
            learning_rate: 0.01,
            holdout_fraction: 0.3,
            seed: 0,
        }
    }
}

/// Latents of the factual solve, probed per [`probe_balance`].
pub fn balance_diagnostics(model: &Model, dataset: &ObservationalDataset, config: &ProbeConfig) -> Result<BalanceReport> {
    let ctx = GraphContext::new(&dataset.graph);
    let pred = model.predict(
        &dataset.covariates[0],
        &dataset.static_covariates,
        &dataset.treatments,
        &ctx,
    )?;
    probe_balance(&pred.latents, &dataset.treatments, &dataset.interference, config)
}

/// `latents[t]` is `N x L`; treatments and interference are `(T+1) x N`.
pub fn probe_balance(
    latents: &[Tensor],
    treatments: &[Vec<u8>],
    interference: &[Vec<f64>],
    config: &ProbeConfig,
) -> Result<BalanceReport> {
    if latents.is_empty() || latents.len() != treatments.len() || latents.len() != interference.len() {
        return Err(Error::dim("probe_balance", &[latents.len()], &[treatments.len(), interference.len()]));
    }
    let n = latents[0].rows();
    let n_hold = (config.holdout_fraction * n as f64).round() as usize;
    if !(config.holdout_fraction > 0.0 && config.holdout_fraction < 1.0) || n_hold == 0 || n_hold >= n {
        return Err(Error::param(format!(
            "holdout fraction {} gives a degenerate split of {n} nodes",
            config.holdout_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(config.seed, 0));
    let (held, fit) = order.split_at(n_hold);

    let features = |nodes: &[usize], with_a: bool| -> Result<Tensor> {
        let cols = latents[0].cols() + usize::from(with_a);
        let mut data = Vec::with_capacity(nodes.len() * latents.len() * cols);
        for (t, z) in latents.iter().enumerate() {
            for &i in nodes {
                data.extend_from_slice(z.row(i));
                if with_a {
                    data.push(treatments[t][i] as f64);
                }
            }
        }
        Tensor::new(nodes.len() * latents.len(), cols, data)
    };
    let labels = |nodes: &[usize]| -> Vec<u8> { treatments.iter().flat_map(|row| nodes.iter().map(|&i| row[i])).collect() };
    let targets =
        |nodes: &[usize]| -> Vec<f64> { interference.iter().flat_map(|row| nodes.iter().map(|&i| row[i])).collect() };

    let (mut xa_fit, mut xa_held) = (features(fit, false)?, features(held, false)?);
    standardize(&mut xa_fit, &mut xa_held);
    let (a_fit, a_held) = (labels(fit), labels(held));
    let classifier = Probe::fit(&xa_fit, Target::Class(&a_fit), config, 1)?;
    let logits = classifier.predict(&xa_held)?;
    let correct = a_held
        .iter()
        .enumerate()
        .filter(|&(r, &a)| u8::from(logits.get(r, 1) > logits.get(r, 0)) == a)
        .count();
    let treatment_accuracy = correct as f64 / a_held.len() as f64;

    let (mut xg_fit, mut xg_held) = (features(fit, true)?, features(held, true)?);
    standardize(&mut xg_fit, &mut xg_held);
    let (g_fit, g_held) = (targets(fit), targets(held));
    let regressor = Probe::fit(&xg_fit, Target::Value(&g_fit), config, 2)?;
    let pred = regressor.predict(&xg_held)?;
    let mean = g_held.iter().sum::<f64>() / g_held.len() as f64;
    let sst: f64 = g_held.iter().map(|g| (g - mean).powi(2)).sum();
    let sse: f64 = g_held.iter().zip(pred.data()).map(|(g, p)| (g - p).powi(2)).sum();
    let interference_r2 = if sst > 0.0 { 1.0 - sse / sst } else { 0.0 };
    Ok(BalanceReport {
        treatment_accuracy,
        interference_r2,
    })
}

/// Column standardization with statistics of the fitting split.
fn standardize(fit: &mut Tensor, held: &mut Tensor) {
    let (rows, cols) = (fit.rows(), fit.cols());
    for c in 0..cols {
        let mean = (0..rows).map(|r| fit.get(r, c)).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|r| (fit.get(r, c) - mean).powi(2)).sum::<f64>() / rows as f64;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        for t in [&mut *fit, &mut *held] {
            for r in 0..t.rows() {
                let v = (t.get(r, c) - mean) / std;
                t.set(r, c, v);
            }
        }
    }
}

enum Target<'a> {
    Class(&'a [u8]),
    Value(&'a [f64]),
}

struct Probe {
    params: ParamSet,
}

impl Probe {
    fn fit(x: &Tensor, target: Target, config: &ProbeConfig, stream: u64) -> Result<Probe> {
        let out = match target {
            Target::Class(_) => 2,
            Target::Value(_) => 1,
        };
        let mut rng = rng::stream(config.seed, stream);
        let mut params = ParamSet::new();
        params.push_glorot("w1", x.cols(), config.hidden, &mut rng);
        params.push("b1", Tensor::zeros(1, config.hidden));
        params.push_glorot("w2", config.hidden, out, &mut rng);
        params.push("b2", Tensor::zeros(1, out));
        let mut adam = AdamState::new(&params, config.learning_rate);
        let rows = x.rows();
        let target_tensor = match target {
            Target::Class(a) => {
                let mut onehot = Vec::with_capacity(2 * rows);
                for &ai in a {
                    onehot.extend_from_slice(if ai == 1 { &[0.0, 1.0] } else { &[1.0, 0.0] });
                }
                Tensor::new(rows, 2, onehot)?
            }
            Target::Value(g) => Tensor::column(g.to_vec()),
        };
        let classify = out == 2;
        let all = [0, 1, 2, 3];
        for _ in 0..config.iterations {
            let mut tape = Tape::new();
            let mut bindings = crate::diff::Bindings::default();
            let vars: Vec<_> = (0..4).map(|i| params.bind(&mut tape, i, true, &mut bindings)).collect();
            let xv = tape.constant(x.clone());
            let y = forward(&mut tape, xv, &vars)?;
            let t = tape.constant(target_tensor.clone());
            let loss = if classify {
                let lp = tape.log_softmax(y)?;
                let picked = tape.mul(lp, t)?;
                let s = tape.sum(picked)?;
                tape.scale(s, -1.0 / rows as f64)?
            } else {
                let d = tape.sub(y, t)?;
                let sq = tape.square(d)?;
                tape.mean_all(sq)?
            };
            tape.backward(loss)?;
            params.collect_grads(&tape, &bindings);
            adam.step(&mut params, &all)?;
        }
        Ok(Probe { params })
    }

    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut bindings = crate::diff::Bindings::default();
        let vars: Vec<_> = (0..4).map(|i| self.params.bind(&mut tape, i, false, &mut bindings)).collect();
        let xv = tape.constant(x.clone());
        let y = forward(&mut tape, xv, &vars)?;
        Ok(tape.tensor(y))
    }
}

fn forward(tape: &mut Tape, x: crate::diff::Var, p: &[crate::diff::Var]) -> Result<crate::diff::Var> {
    let h = tape.matmul(x, p[0])?;
    let h = tape.add_row(h, p[1])?;
    let h = tape.tanh(h)?;
    let y = tape.matmul(h, p[2])?;
    tape.add_row(y, p[3])
}
