//! Treatment-induced graph ODE.
//!
//! `Z⁰ = f([X⁰, V])`, `dZ/dt = φ(Z, A)` solved by Euler between unit-spaced
//! observation times, `Ŷ = d_Y(Z)`. Two adversarial heads read the latents
//! through gradient reversal: `d_A` classifies the treatment and `d_G`
//! regresses the interference summary from `[Z, A]`.

mod solver;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diff::checkpoint;
use crate::diff::{Bindings, NeighborMean, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;

pub use solver::{solve_euler, OdeSystem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub head_hidden: usize,
    /// Euler steps per unit observation interval.
    pub substeps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 64,
            encoder_hidden: 64,
            head_hidden: 64,
            substeps: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.encoder_hidden == 0 || self.head_hidden == 0 {
            return Err(Error::param("model widths must be positive"));
        }
        if self.substeps == 0 {
            return Err(Error::param("substeps must be at least 1"));
        }
        Ok(())
    }
}

/// Parameter groups, updated selectively by the training schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Encoder,
    OdeFunc,
    OutcomeHead,
    TreatmentHead,
    InterferenceHead,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Encoder,
        Group::OdeFunc,
        Group::OutcomeHead,
        Group::TreatmentHead,
        Group::InterferenceHead,
    ];

    fn prefix(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::OdeFunc => "ode",
            Group::OutcomeHead => "outcome",
            Group::TreatmentHead => "treatment",
            Group::InterferenceHead => "interference",
        }
    }

    fn of(name: &str) -> Option<Group> {
        let prefix = name.split('.').next()?;
        Group::ALL.into_iter().find(|g| g.prefix() == prefix)
    }
}

/// Affine standardization applied to the health state on the way in and
/// undone on predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

impl Default for Scaler {
    fn default() -> Self {
        Scaler { mean: 0.0, std: 1.0 }
    }
}

impl Scaler {
    /// Fit on every value; a constant input keeps unit scale.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for &v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Scaler::default();
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Scaler { mean, std }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Graph-derived constants reused across forward passes.
#[derive(Clone, Debug)]
pub struct GraphContext {
    pub agg: Arc<NeighborMean>,
    /// `N x 1`, 1 for nodes with at least one neighbor.
    pub mask: Tensor,
}

impl GraphContext {
    pub fn new(graph: &Graph) -> Self {
        let agg = Arc::new(NeighborMean::new((0..graph.num_nodes()).map(|i| graph.neighbors(i))));
        let mask = agg.nonempty_mask();
        GraphContext { agg, mask }
    }

    pub fn num_nodes(&self) -> usize {
        self.agg.num_rows()
    }
}

/// Parameter variables of one tape.
pub struct Bound {
    vars: Vec<Var>,
    pub bindings: Bindings,
}

impl Bound {
    fn get(&self, idx: usize) -> Var {
        self.vars[idx]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layout {
    enc_w1: usize,
    enc_b1: usize,
    enc_w2: usize,
    enc_b2: usize,
    ode_w_self: usize,
    ode_b_self: usize,
    ode_w_nbr: usize,
    ode_b_nbr: usize,
    out_w: usize,
    out_b: usize,
    trt_w1: usize,
    trt_b1: usize,
    trt_w2: usize,
    trt_b2: usize,
    itf_w1: usize,
    itf_b1: usize,
    itf_w2: usize,
    itf_b2: usize,
}

const PARAM_NAMES: [&str; 18] = [
    "encoder.w1",
    "encoder.b1",
    "encoder.w2",
    "encoder.b2",
    "ode.w_self",
    "ode.b_self",
    "ode.w_nbr",
    "ode.b_nbr",
    "outcome.w",
    "outcome.b",
    "treatment.w1",
    "treatment.b1",
    "treatment.w2",
    "treatment.b2",
    "interference.w1",
    "interference.b1",
    "interference.w2",
    "interference.b2",
];

impl Layout {
    fn from_params(params: &ParamSet) -> Result<Self> {
        let idx = |name: &str| {
            params
                .index_of(name)
                .ok_or_else(|| Error::param(format!("missing model parameter {name}")))
        };
        Ok(Layout {
            enc_w1: idx(PARAM_NAMES[0])?,
            enc_b1: idx(PARAM_NAMES[1])?,
            enc_w2: idx(PARAM_NAMES[2])?,
            enc_b2: idx(PARAM_NAMES[3])?,
            ode_w_self: idx(PARAM_NAMES[4])?,
            ode_b_self: idx(PARAM_NAMES[5])?,
            ode_w_nbr: idx(PARAM_NAMES[6])?,
            ode_b_nbr: idx(PARAM_NAMES[7])?,
            out_w: idx(PARAM_NAMES[8])?,
            out_b: idx(PARAM_NAMES[9])?,
            trt_w1: idx(PARAM_NAMES[10])?,
            trt_b1: idx(PARAM_NAMES[11])?,
            trt_w2: idx(PARAM_NAMES[12])?,
            trt_b2: idx(PARAM_NAMES[13])?,
            itf_w1: idx(PARAM_NAMES[14])?,
            itf_b1: idx(PARAM_NAMES[15])?,
            itf_w2: idx(PARAM_NAMES[16])?,
            itf_b2: idx(PARAM_NAMES[17])?,
        })
    }
}

/// Output of one factual forward pass.
pub struct Forward {
    /// `N x L` latent per observation time.
    pub latents: Vec<Var>,
    /// `N x 1` standardized outcome prediction per observation time.
    pub outcomes: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub static_dim: usize,
    pub scaler: Scaler,
    pub params: ParamSet,
    layout: Layout,
}

impl Model {
    /// Glorot-initialized weights and zero biases.
    pub fn new(config: ModelConfig, static_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let (l, he, hh) = (config.latent_dim, config.encoder_hidden, config.head_hidden);
        let mut rng = rng::stream(seed, 0);
        let mut p = ParamSet::new();
        let zero_row = |c: usize| Tensor::zeros(1, c);
        p.push_glorot(PARAM_NAMES[0], 1 + static_dim, he, &mut rng);
        p.push(PARAM_NAMES[1], zero_row(he));
        p.push_glorot(PARAM_NAMES[2], he, l, &mut rng);
        p.push(PARAM_NAMES[3], zero_row(l));
        p.push_glorot(PARAM_NAMES[4], l + 1, l, &mut rng);
        p.push(PARAM_NAMES[5], zero_row(l));
        p.push_glorot(PARAM_NAMES[6], l + 1, l, &mut rng);
        p.push(PARAM_NAMES[7], zero_row(l));
        p.push_glorot(PARAM_NAMES[8], l, 1, &mut rng);
        p.push(PARAM_NAMES[9], zero_row(1));
        p.push_glorot(PARAM_NAMES[10], l, hh, &mut rng);
        p.push(PARAM_NAMES[11], zero_row(hh));
        p.push_glorot(PARAM_NAMES[12], hh, 2, &mut rng);
        p.push(PARAM_NAMES[13], zero_row(2));
        p.push_glorot(PARAM_NAMES[14], l + 1, hh, &mut rng);
        p.push(PARAM_NAMES[15], zero_row(hh));
        p.push_glorot(PARAM_NAMES[16], hh, 1, &mut rng);
        p.push(PARAM_NAMES[17], zero_row(1));
        let layout = Layout::from_params(&p)?;
        Ok(Model {
            config,
            static_dim,
            scaler: Scaler::default(),
            params: p,
            layout,
        })
    }

    pub fn group_of(&self, idx: usize) -> Group {
        Group::of(&self.params.get(idx).name).expect("model parameter names carry a group prefix")
    }

    /// Parameter indices belonging to any of `groups`.
    pub fn indices(&self, groups: &[Group]) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| groups.contains(&self.group_of(i)))
            .collect()
    }

    /// Sets every parameter of `group` to zero.
    pub fn zero_group(&mut self, group: Group) {
        for i in self.indices(&[group]) {
            self.params.get_mut(i).value.data_mut().fill(0.0);
        }
    }

    /// Records every parameter on the tape; those in `trainable` get gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: &[Group]) -> Bound {
        let mut bindings = Bindings::default();
        let vars = (0..self.params.len())
            .map(|i| {
                let train = trainable.contains(&self.group_of(i));
                self.params.bind(tape, i, train, &mut bindings)
            })
            .collect();
        Bound { vars, bindings }
    }

    fn affine(&self, tape: &mut Tape, b: &Bound, x: Var, w: usize, bias: usize) -> Result<Var> {
        let h = tape.matmul(x, b.get(w))?;
        tape.add_row(h, b.get(bias))
    }

    /// `Z⁰ = W₂ tanh(W₁ [X⁰, V] + b₁) + b₂`, `N x L`. `x0` is in original units.
    pub fn encode_initial(&self, tape: &mut Tape, b: &Bound, x0: &[f64], static_covariates: &Tensor) -> Result<Var> {
        let n = x0.len();
        if static_covariates.rows() != n || static_covariates.cols() != self.static_dim {
            return Err(Error::dim(
                "encode_initial",
                &[n, self.static_dim],
                &static_covariates.shape(),
            ));
        }
        let mut input = Vec::with_capacity(n * (1 + self.static_dim));
        for (i, &x) in x0.iter().enumerate() {
            input.push(self.scaler.apply(x));
            input.extend_from_slice(static_covariates.row(i));
        }
        let input = tape.constant(Tensor::new(n, 1 + self.static_dim, input)?);
        let l = &self.layout;
        let h = self.affine(tape, b, input, l.enc_w1, l.enc_b1)?;
        let h = tape.tanh(h)?;
        self.affine(tape, b, h, l.enc_w2, l.enc_b2)
    }

    /// `tanh(W_self [Z_i, A_i] + b_self + 1[deg > 0] (mean_j W_nbr [Z_j, A_j] + b_nbr))`.
    pub fn ode_rhs(&self, tape: &mut Tape, b: &Bound, z: Var, treatments: &[u8], ctx: &GraphContext) -> Result<Var> {
        let [n, _] = tape.shape(z);
        if treatments.len() != n || ctx.num_nodes() != n {
            return Err(Error::dim("ode_rhs", &[n], &[treatments.len(), ctx.num_nodes()]));
        }
        let a = tape.constant(treatment_column(treatments)?);
        let za = tape.concat(&[z, a])?;
        let l = &self.layout;
        let own = self.affine(tape, b, za, l.ode_w_self, l.ode_b_self)?;
        let agg = tape.neighbor_mean(za, &ctx.agg)?;
        let nbr = tape.matmul(agg, b.get(l.ode_w_nbr))?;
        let mask = tape.constant(ctx.mask.clone());
        let nbr_bias = tape.matmul(mask, b.get(l.ode_b_nbr))?;
        let pre = tape.add(own, nbr)?;
        let pre = tape.add(pre, nbr_bias)?;
        tape.tanh(pre)
    }

    /// Latents at every observation time. `treatments[k]` drives interval
    /// `[k, k+1]`; `intervals` intervals are integrated.
    pub fn solve(
        &self,
        tape: &mut Tape,
        b: &Bound,
        z0: Var,
        treatments: &[Vec<u8>],
        intervals: usize,
        ctx: &GraphContext,
    ) -> Result<Vec<Var>> {
        if treatments.len() < intervals {
            return Err(Error::dim("solve", &[intervals], &[treatments.len()]));
        }
        let mut sys = LatentOde {
            model: self,
            tape,
            bound: b,
            treatments,
            ctx,
        };
        solve_euler(&mut sys, z0, intervals, self.config.substeps)
    }

    /// Standardized outcome `Z W_Y + b_Y`, `N x 1`.
    pub fn decode_outcome(&self, tape: &mut Tape, b: &Bound, z: Var) -> Result<Var> {
        self.affine(tape, b, z, self.layout.out_w, self.layout.out_b)
    }

    /// Encode, solve over all `treatments.len() - 1` intervals, decode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bound,
        x0: &[f64],
        static_covariates: &Tensor,
        treatments: &[Vec<u8>],
        ctx: &GraphContext,
    ) -> Result<Forward> {
        let z0 = self.encode_initial(tape, b, x0, static_covariates)?;
        let latents = self.solve(tape, b, z0, treatments, treatments.len().saturating_sub(1), ctx)?;
        let outcomes = latents
            .iter()
            .map(|&z| self.decode_outcome(tape, b, z))
            .collect::<Result<_>>()?;
        Ok(Forward { latents, outcomes })
    }

    /// Two treatment logits per row of `z`.
    pub fn treatment_logits(&self, tape: &mut Tape, b: &Bound, z: Var) -> Result<Var> {
        let l = &self.layout;
        let h = self.affine(tape, b, z, l.trt_w1, l.trt_b1)?;
        let h = tape.tanh(h)?;
        self.affine(tape, b, h, l.trt_w2, l.trt_b2)
    }

    /// Interference prediction from `[Z, A]`, `N x 1`.
    pub fn interference_pred(&self, tape: &mut Tape, b: &Bound, z: Var, treatments: &[u8]) -> Result<Var> {
        let a = tape.constant(treatment_column(treatments)?);
        let za = tape.concat(&[z, a])?;
        let l = &self.layout;
        let h = self.affine(tape, b, za, l.itf_w1, l.itf_b1)?;
        let h = tape.tanh(h)?;
        self.affine(tape, b, h, l.itf_w2, l.itf_b2)
    }

    /// Mean cross-entropy of `d_A(r(Z))` against the observed treatments over
    /// the selected rows and every timestamp. `reverse = false` replaces the
    /// reversal with the identity.
    pub fn loss_treatment(
        &self,
        tape: &mut Tape,
        b: &Bound,
        latents: &[Var],
        treatments: &[Vec<u8>],
        rows: Option<&[usize]>,
        reverse: bool,
    ) -> Result<Var> {
        check_len("loss_treatment", latents.len(), treatments.len())?;
        let mut total = None;
        let mut count = 0;
        for (&z, a) in latents.iter().zip(treatments) {
            let (z, a) = subset(tape, z, a, rows)?;
            let z = if reverse { tape.reverse_grad(z) } else { z };
            let logits = self.treatment_logits(tape, b, z)?;
            let logp = tape.log_softmax(logits)?;
            if let Some(bad) = a.iter().find(|&&v| v > 1) {
                return Err(Error::Domain(format!("treatment {bad} is not binary")));
            }
            let mut onehot = Vec::with_capacity(2 * a.len());
            for &ai in &a {
                onehot.extend_from_slice(if ai == 1 { &[0.0, 1.0] } else { &[1.0, 0.0] });
            }
            let onehot = tape.constant(Tensor::new(a.len(), 2, onehot)?);
            let picked = tape.mul(logp, onehot)?;
            let s = tape.sum(picked)?;
            total = Some(accumulate(tape, total, s)?);
            count += a.len();
        }
        finish_mean(tape, total, count, -1.0)
    }

    /// Mean squared error of `d_G(r([Z, A]))` against the interference summary.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_interference(
        &self,
        tape: &mut Tape,
        b: &Bound,
        latents: &[Var],
        treatments: &[Vec<u8>],
        interference: &[Vec<f64>],
        rows: Option<&[usize]>,
        reverse: bool,
    ) -> Result<Var> {
        check_len("loss_interference", latents.len(), treatments.len())?;
        check_len("loss_interference", latents.len(), interference.len())?;
        let mut total = None;
        let mut count = 0;
        for ((&z, a), g) in latents.iter().zip(treatments).zip(interference) {
            if g.len() != a.len() {
                return Err(Error::dim("loss_interference", &[a.len()], &[g.len()]));
            }
            let (z, a) = subset(tape, z, a, rows)?;
            let g: Vec<f64> = match rows {
                Some(r) => r.iter().map(|&i| g[i]).collect(),
                None => g.clone(),
            };
            let z = if reverse { tape.reverse_grad(z) } else { z };
            let pred = self.interference_pred(tape, b, z, &a)?;
            let target = tape.constant(Tensor::column(g));
            let diff = tape.sub(pred, target)?;
            let sq = tape.square(diff)?;
            let s = tape.sum(sq)?;
            total = Some(accumulate(tape, total, s)?);
            count += a.len();
        }
        finish_mean(tape, total, count, 1.0)
    }

    /// Factual predictions in original units, without gradients.
    pub fn predict(
        &self,
        x0: &[f64],
        static_covariates: &Tensor,
        treatments: &[Vec<u8>],
        ctx: &GraphContext,
    ) -> Result<Prediction> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, &[]);
        let fwd = self.forward(&mut tape, &b, x0, static_covariates, treatments, ctx)?;
        Ok(self.collect(&tape, &fwd.latents, &fwd.outcomes))
    }

    /// Rollout that integrates `cf_treatments` up to `start`, then continues
    /// from the latent reached there. Callers pass a path that agrees with the
    /// factual one before `start`, so the first leg is the factual solve.
    pub fn predict_counterfactual(
        &self,
        x0: &[f64],
        static_covariates: &Tensor,
        cf_treatments: &[Vec<u8>],
        start: usize,
        ctx: &GraphContext,
    ) -> Result<Prediction> {
        if start >= cf_treatments.len() {
            return Err(Error::param(format!(
                "rollout start {start} is beyond horizon {}",
                cf_treatments.len().saturating_sub(1)
            )));
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, &[]);
        let z0 = self.encode_initial(&mut tape, &b, x0, static_covariates)?;
        let mut latents = self.solve(&mut tape, &b, z0, cf_treatments, start, ctx)?;
        let z_start = *latents.last().expect("solve returns z0");
        let rest = self.solve(
            &mut tape,
            &b,
            z_start,
            &cf_treatments[start..],
            cf_treatments.len() - 1 - start,
            ctx,
        )?;
        latents.extend_from_slice(&rest[1..]);
        let outcomes = latents
            .iter()
            .map(|&z| self.decode_outcome(&mut tape, &b, z))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.collect(&tape, &latents, &outcomes))
    }

    fn collect(&self, tape: &Tape, latents: &[Var], outcomes: &[Var]) -> Prediction {
        Prediction {
            latents: latents.iter().map(|&z| tape.tensor(z)).collect(),
            outcomes: outcomes
                .iter()
                .map(|&y| tape.value(y).iter().map(|&v| self.scaler.invert(v)).collect())
                .collect(),
        }
    }

    pub fn save(&self, dir: &Path, mut meta: toml::Table) -> Result<()> {
        let config = toml::Table::try_from(&self.config).map_err(|e| Error::format("model config", dir, e))?;
        meta.insert("model".into(), toml::Value::Table(config));
        meta.insert("static_dim".into(), toml::Value::Integer(self.static_dim as i64));
        meta.insert("scaler_mean".into(), toml::Value::Float(self.scaler.mean));
        meta.insert("scaler_std".into(), toml::Value::Float(self.scaler.std));
        checkpoint::write_checkpoint(dir, &self.params, meta)
    }

    /// Loads a checkpoint and returns the model plus the remaining metadata.
    pub fn load(dir: &Path) -> Result<(Model, toml::Table)> {
        let (params, mut meta) = checkpoint::read_checkpoint(dir)?;
        let origin = dir.join(checkpoint::MANIFEST_FILE);
        let bad = |what: &str| Error::format("checkpoint metadata", &origin, format!("missing or invalid {what}"));
        let config: ModelConfig = match meta.remove("model") {
            Some(toml::Value::Table(t)) => t.try_into().map_err(|_| bad("model"))?,
            _ => return Err(bad("model")),
        };
        let static_dim = match meta.remove("static_dim") {
            Some(toml::Value::Integer(d)) if d > 0 => d as usize,
            _ => return Err(bad("static_dim")),
        };
        let mut float = |key: &str| match meta.remove(key) {
            Some(toml::Value::Float(v)) => Ok(v),
            _ => Err(bad(key)),
        };
        let scaler = Scaler {
            mean: float("scaler_mean")?,
            std: float("scaler_std")?,
        };
        let reference = Model::new(config.clone(), static_dim, 0)?;
        if reference.params.len() != params.len()
            || reference
                .params
                .iter()
                .zip(params.iter())
                .any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(Error::format("checkpoint", &origin, "parameter shapes do not match the model config"));
        }
        let layout = Layout::from_params(&params)?;
        Ok((
            Model {
                config,
                static_dim,
                scaler,
                params,
                layout,
            },
            meta,
        ))
    }
}

/// Latents and original-unit outcome predictions per observation time.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub latents: Vec<Tensor>,
    pub outcomes: Vec<Vec<f64>>,
}

/// Mean of `(Ŷ − Y)²` over the selected rows and every timestamp. `targets`
/// must already be on the prediction's scale.
pub fn loss_outcome(tape: &mut Tape, predictions: &[Var], targets: &[Vec<f64>], rows: Option<&[usize]>) -> Result<Var> {
    check_len("loss_outcome", predictions.len(), targets.len())?;
    let mut total = None;
    let mut count = 0;
    for (&p, y) in predictions.iter().zip(targets) {
        let [n, c] = tape.shape(p);
        if n != y.len() || c != 1 {
            return Err(Error::dim("loss_outcome", &[n, c], &[y.len(), 1]));
        }
        let (p, y) = match rows {
            Some(r) => (tape.select_rows(p, r)?, r.iter().map(|&i| y[i]).collect()),
            None => (p, y.clone()),
        };
        let n = y.len();
        let target = tape.constant(Tensor::column(y));
        let diff = tape.sub(p, target)?;
        let sq = tape.square(diff)?;
        let s = tape.sum(sq)?;
        total = Some(accumulate(tape, total, s)?);
        count += n;
    }
    finish_mean(tape, total, count, 1.0)
}

/// `L_Y + α_A L_A + α_G L_G`.
pub fn loss_total(tape: &mut Tape, outcome: Var, treatment: Var, interference: Var, alpha_a: f64, alpha_g: f64) -> Result<Var> {
    check_alphas(alpha_a, alpha_g)?;
    let a = tape.scale(treatment, alpha_a)?;
    let g = tape.scale(interference, alpha_g)?;
    let l = tape.add(outcome, a)?;
    tape.add(l, g)
}

pub fn check_alphas(alpha_a: f64, alpha_g: f64) -> Result<()> {
    if !(alpha_a >= 0.0 && alpha_g >= 0.0) {
        return Err(Error::param(format!(
            "balancing weights must be non-negative, got alpha_A={alpha_a}, alpha_G={alpha_g}"
        )));
    }
    Ok(())
}

fn treatment_column(a: &[u8]) -> Result<Tensor> {
    if let Some(bad) = a.iter().find(|&&v| v > 1) {
        return Err(Error::Domain(format!("treatment {bad} is not binary")));
    }
    Ok(Tensor::column(a.iter().map(|&v| v as f64).collect()))
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::dim(op, &[a], &[b]));
    }
    Ok(())
}

fn subset(tape: &mut Tape, z: Var, a: &[u8], rows: Option<&[usize]>) -> Result<(Var, Vec<u8>)> {
    if tape.shape(z)[0] != a.len() {
        return Err(Error::dim("latent rows", &tape.shape(z), &[a.len()]));
    }
    Ok(match rows {
        Some(r) => (tape.select_rows(z, r)?, r.iter().map(|&i| a[i]).collect()),
        None => (z, a.to_vec()),
    })
}

fn accumulate(tape: &mut Tape, total: Option<Var>, s: Var) -> Result<Var> {
    match total {
        Some(t) => tape.add(t, s),
        None => Ok(s),
    }
}

fn finish_mean(tape: &mut Tape, total: Option<Var>, count: usize, sign: f64) -> Result<Var> {
    match total {
        Some(t) if count > 0 => tape.scale(t, sign / count as f64),
        _ => Err(Error::param("loss over an empty node set")),
    }
}

struct LatentOde<'a> {
    model: &'a Model,
    tape: &'a mut Tape,
    bound: &'a Bound,
    treatments: &'a [Vec<u8>],
    ctx: &'a GraphContext,
}

impl OdeSystem for LatentOde<'_> {
    type State = Var;

    fn rhs(&mut self, z: &Var, interval: usize) -> Result<Var> {
        self.model
            .ode_rhs(self.tape, self.bound, *z, &self.treatments[interval], self.ctx)
    }

    fn step(&mut self, z: &Var, h: f64, dz: &Var) -> Result<Var> {
        let d = self.tape.scale(*dz, h)?;
        self.tape.add(*z, d)
    }

    fn is_finite(&self, z: &Var) -> bool {
        self.tape.value(*z).iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests;
