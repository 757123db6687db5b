//! PK-PD observational data for interacting units under confounded
//! treatment assignment.
//!
//! Per observation time `t`: treatment probabilities come from the running
//! mean of each unit's own and neighbors' health state plus static
//! confounders; doses decay by half each step; the health state `X` then
//! follows a log-growth PK-PD law integrated by explicit Euler until `t+1`.
//! The outcome `Y` is `X` itself.

mod io;
mod oracle;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::{sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;

pub use io::{read_dataset, write_dataset, DATASET_FILES};
pub use oracle::{counterfactual_oracle, CounterfactualTrajectory, Flip, InterventionSpec};

const STREAM_STATIC: u64 = 0;
const STREAM_MECHANISM: u64 = 1;
const STREAM_INITIAL: u64 = 2;
const STREAM_TREATMENT: u64 = 3;
const STREAM_NOISE: u64 = 4;

/// Simulation parameters. `w_a` and `w_x` are the static confounding
/// mechanisms; leave them empty to draw them from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub gamma_a: f64,
    pub gamma_n: f64,
    pub gamma_f: f64,
    pub gamma_g: f64,
    pub delta_a: f64,
    pub delta_n: f64,
    pub rho_u: f64,
    pub rho_n: f64,
    pub rho_f: f64,
    pub rho_g: f64,
    pub beta_a: f64,
    pub beta_n: f64,
    pub carrying_capacity: f64,
    pub full_dose: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub noise_std: f64,
    pub static_dim: usize,
    pub w_a: Vec<f64>,
    pub w_x: Vec<f64>,
    pub dt: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            gamma_a: 10.0,
            gamma_n: 3.3,
            gamma_f: 10.0,
            gamma_g: 3.3,
            delta_a: 5.0,
            delta_n: 5.0,
            rho_u: -0.001,
            rho_n: -0.00033,
            rho_f: 0.001,
            rho_g: 0.00033,
            beta_a: 0.03,
            beta_n: 0.01,
            carrying_capacity: 15.0,
            full_dose: 1.0,
            x_min: 0.1,
            x_max: 10.0,
            noise_std: 0.01,
            static_dim: 10,
            w_a: Vec::new(),
            w_x: Vec::new(),
            dt: 0.25,
            horizon: 10,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Parameter(msg));
        if !(self.x_min > 0.0) {
            return fail(format!("x_min must be positive, got {}", self.x_min));
        }
        if !(self.x_max > self.x_min) {
            return fail(format!("x_max {} must exceed x_min {}", self.x_max, self.x_min));
        }
        if !(self.carrying_capacity > 0.0) {
            return fail(format!("carrying capacity must be positive, got {}", self.carrying_capacity));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return fail(format!("dt must lie in (0, 1], got {}", self.dt));
        }
        let sub = (1.0 / self.dt).round();
        if (sub * self.dt - 1.0).abs() > 1e-9 {
            return fail(format!("dt {} does not divide the unit observation interval", self.dt));
        }
        if self.horizon < 1 {
            return fail("horizon must be at least 1".into());
        }
        if !(self.noise_std >= 0.0) {
            return fail(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        if self.static_dim < 1 {
            return fail("static_dim must be at least 1".into());
        }
        for (name, w) in [("w_a", &self.w_a), ("w_x", &self.w_x)] {
            if !w.is_empty() && w.len() != self.static_dim {
                return fail(format!("{name} has length {}, expected {}", w.len(), self.static_dim));
            }
        }
        let scalars = [
            self.gamma_a, self.gamma_n, self.gamma_f, self.gamma_g, self.delta_a, self.delta_n, self.rho_u,
            self.rho_n, self.rho_f, self.rho_g, self.beta_a, self.beta_n, self.full_dose,
        ];
        if scalars.iter().any(|v| !v.is_finite()) {
            return fail("simulation coefficients must be finite".into());
        }
        Ok(())
    }

    /// Euler substeps per unit observation interval.
    pub fn substeps(&self) -> usize {
        ((1.0 / self.dt).round() as usize).max(1)
    }

    /// Fills empty mechanism vectors with draws from `Normal(0, 1/sqrt(d_v))`.
    pub fn with_mechanisms(mut self) -> Self {
        let mut rng = rng::stream(self.seed, STREAM_MECHANISM);
        let normal = Normal::new(0.0, 1.0 / (self.static_dim.max(1) as f64).sqrt()).expect("positive std");
        if self.w_a.is_empty() {
            self.w_a = (0..self.static_dim).map(|_| normal.sample(&mut rng)).collect();
        } else {
            // keep the stream aligned whether or not w_a was supplied
            (0..self.static_dim).for_each(|_| {
                let _: f64 = normal.sample(&mut rng);
            });
        }
        if self.w_x.is_empty() {
            self.w_x = (0..self.static_dim).map(|_| normal.sample(&mut rng)).collect();
        }
        self
    }
}

/// One simulated observational trajectory. Matrices indexed by time are
/// stored as `horizon + 1` rows of `N` values.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationalDataset {
    pub graph: Graph,
    pub params: SimParams,
    /// `N x d_v`.
    pub static_covariates: Tensor,
    pub covariates: Vec<Vec<f64>>,
    pub treatments: Vec<Vec<u8>>,
    pub interference: Vec<Vec<f64>>,
    pub dose: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    /// Euler substeps at which some state left `[x_min, x_max]` and was clamped back.
    pub clamp_events: usize,
}

impl ObservationalDataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn horizon(&self) -> usize {
        self.covariates.len() - 1
    }

    /// The outcome is the health state itself.
    pub fn outcomes(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn timestamps(&self) -> Vec<f64> {
        (0..=self.horizon()).map(|t| t as f64).collect()
    }

    /// `E_i = w_a . V_i`, the static confounder acting on treatment.
    pub fn treatment_confounder(&self) -> Vec<f64> {
        project(&self.static_covariates, &self.params.w_a)
    }

    /// `O_i = w_x . V_i`, the static confounder acting on outcome.
    pub fn outcome_confounder(&self) -> Vec<f64> {
        project(&self.static_covariates, &self.params.w_x)
    }

    pub fn treatment_rate(&self) -> f64 {
        let total: usize = self.treatments.iter().flatten().map(|&a| a as usize).sum();
        total as f64 / (self.treatments.len() * self.num_nodes()) as f64
    }

    pub fn mean_interference(&self) -> f64 {
        let total: f64 = self.interference.iter().flatten().sum();
        total / (self.interference.len() * self.num_nodes()) as f64
    }

    /// Running mean `X̄_i^t` of the health state up to and including `t`.
    pub fn running_mean(&self, t: usize) -> Vec<f64> {
        let n = self.num_nodes();
        let mut acc = vec![0.0; n];
        for row in &self.covariates[..=t] {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        }
        acc.iter().map(|a| a / (t + 1) as f64).collect()
    }
}

fn project(v: &Tensor, w: &[f64]) -> Vec<f64> {
    (0..v.rows())
        .map(|i| v.row(i).iter().zip(w).map(|(a, b)| a * b).sum())
        .collect()
}

/// I.i.d. standard normal static covariates, `N x d_v`.
pub fn sample_static_covariates(num_nodes: usize, static_dim: usize, seed: u64) -> Result<Tensor> {
    if static_dim < 1 {
        return Err(Error::param("static covariate dimension must be at least 1"));
    }
    let mut rng = rng::stream(seed, STREAM_STATIC);
    let data = (0..num_nodes * static_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Tensor::new(num_nodes, static_dim, data)
}

/// `σ(γ_a(δ_a − X̄_i) + γ_n(δ_n − X̄_nbr) + γ_f E_i + γ_g E_nbr)`. Neighbor
/// means are `None` for isolated nodes and then contribute nothing.
pub fn treatment_probability(
    xbar: f64,
    nbr_xbar_mean: Option<f64>,
    confounder: f64,
    nbr_confounder_mean: Option<f64>,
    params: &SimParams,
) -> f64 {
    let own = params.gamma_a * (params.delta_a - xbar) + params.gamma_f * confounder;
    let nbr_x = nbr_xbar_mean.map_or(0.0, |m| params.gamma_n * (params.delta_n - m));
    let nbr_e = nbr_confounder_mean.map_or(0.0, |m| params.gamma_g * m);
    sigmoid(own + nbr_x + nbr_e)
}

/// `D^t = D̃·1[treated at t] + D^{t-1}/2`.
pub fn update_dose(prev_dose: f64, treated_now: u8, params: &SimParams) -> f64 {
    let fresh = if treated_now == 1 { params.full_dose } else { 0.0 };
    fresh + prev_dose / 2.0
}

/// Neighbor aggregates entering the PK-PD law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborTerms {
    pub x_mean: f64,
    pub static_mean: f64,
    pub dose_mean: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PkpdTerms {
    pub x: f64,
    pub dose: f64,
    /// `O_i`.
    pub static_term: f64,
    /// `None` for isolated nodes.
    pub neighbors: Option<NeighborTerms>,
    pub noise: f64,
}

/// `dX/dt = X (ρ_u ln(K/X) + ρ_n ln(K/X̃) + ρ_f O + ρ_g Ō + β_a D + β_n D̄ + e)`.
pub fn pkpd_derivative(terms: &PkpdTerms, params: &SimParams) -> Result<f64> {
    let k = params.carrying_capacity;
    if !(terms.x > 0.0) {
        return Err(Error::Domain(format!("PK-PD state must be positive, got {}", terms.x)));
    }
    let mut rate = params.rho_u * (k / terms.x).ln()
        + params.rho_f * terms.static_term
        + params.beta_a * terms.dose
        + terms.noise;
    if let Some(nbr) = terms.neighbors {
        if !(nbr.x_mean > 0.0) {
            return Err(Error::Domain(format!(
                "neighbor mean state must be positive, got {}",
                nbr.x_mean
            )));
        }
        rate += params.rho_n * (k / nbr.x_mean).ln() + params.rho_g * nbr.static_mean + params.beta_n * nbr.dose_mean;
    }
    Ok(terms.x * rate)
}

/// Quantities fixed for the whole trajectory.
struct Context<'a> {
    graph: &'a Graph,
    params: &'a SimParams,
    static_terms: Vec<f64>,
    nbr_static: Vec<f64>,
}

impl<'a> Context<'a> {
    fn new(graph: &'a Graph, params: &'a SimParams, static_covariates: &Tensor) -> Self {
        let static_terms = project(static_covariates, &params.w_x);
        let nbr_static = (0..graph.num_nodes())
            .map(|i| graph.neighbor_mean(i, &static_terms))
            .collect();
        Context {
            graph,
            params,
            static_terms,
            nbr_static,
        }
    }

    /// Advances `x` from observation time `t` to `t + 1` with doses and noise
    /// held at their time-`t` values. Returns the number of clamping events.
    fn integrate_interval(&self, x: &mut [f64], dose: &[f64], noise: &[f64], t: usize) -> Result<usize> {
        let p = self.params;
        let n = x.len();
        let steps = p.substeps();
        let h = 1.0 / steps as f64;
        let nbr_dose: Vec<f64> = (0..n).map(|i| self.graph.neighbor_mean(i, dose)).collect();
        let mut clamps = 0;
        let mut deriv = vec![0.0; n];
        for _ in 0..steps {
            for i in 0..n {
                let neighbors = (self.graph.degree(i) > 0).then(|| NeighborTerms {
                    x_mean: self.graph.neighbor_mean(i, x),
                    static_mean: self.nbr_static[i],
                    dose_mean: nbr_dose[i],
                });
                let terms = PkpdTerms {
                    x: x[i],
                    dose: dose[i],
                    static_term: self.static_terms[i],
                    neighbors,
                    noise: noise[i],
                };
                deriv[i] = pkpd_derivative(&terms, p).map_err(|e| Error::Simulation {
                    node: i,
                    time: t,
                    reason: e.to_string(),
                })?;
            }
            for i in 0..n {
                let next = x[i] + h * deriv[i];
                if !next.is_finite() {
                    return Err(Error::Simulation {
                        node: i,
                        time: t,
                        reason: format!("state became {next}"),
                    });
                }
                if next < p.x_min || next > p.x_max {
                    clamps += 1;
                }
                x[i] = next.clamp(p.x_min, p.x_max);
            }
        }
        Ok(clamps)
    }
}

/// Simulates one observational trajectory on `graph`.
pub fn simulate_trajectory(graph: &Graph, params: &SimParams) -> Result<ObservationalDataset> {
    params.validate()?;
    let params = params.clone().with_mechanisms();
    let n = graph.num_nodes();
    let horizon = params.horizon;
    let static_covariates = sample_static_covariates(n, params.static_dim, params.seed)?;
    let ctx = Context::new(graph, &params, &static_covariates);
    let confounder = project(&static_covariates, &params.w_a);
    let nbr_confounder: Vec<f64> = (0..n).map(|i| graph.neighbor_mean(i, &confounder)).collect();

    let mut init_rng = rng::stream(params.seed, STREAM_INITIAL);
    let mut treat_rng = rng::stream(params.seed, STREAM_TREATMENT);
    let mut noise_rng = rng::stream(params.seed, STREAM_NOISE);
    let noise_dist = Normal::new(0.0, params.noise_std).expect("validated noise std");

    let mut x: Vec<f64> = (0..n)
        .map(|_| init_rng.random_range(params.x_min..=params.x_max))
        .collect();
    let mut running_sum = vec![0.0; n];
    let mut prev_dose = vec![0.0; n];
    let mut clamp_events = 0;

    let mut covariates = Vec::with_capacity(horizon + 1);
    let mut treatments = Vec::with_capacity(horizon + 1);
    let mut interference = Vec::with_capacity(horizon + 1);
    let mut dose = Vec::with_capacity(horizon + 1);
    let mut noise = Vec::with_capacity(horizon + 1);

    for t in 0..=horizon {
        for (s, xi) in running_sum.iter_mut().zip(&x) {
            *s += xi;
        }
        let xbar: Vec<f64> = running_sum.iter().map(|s| s / (t + 1) as f64).collect();
        let a: Vec<u8> = (0..n)
            .map(|i| {
                let isolated = graph.degree(i) == 0;
                let p = treatment_probability(
                    xbar[i],
                    (!isolated).then(|| graph.neighbor_mean(i, &xbar)),
                    confounder[i],
                    (!isolated).then_some(nbr_confounder[i]),
                    &params,
                );
                u8::from(treat_rng.random::<f64>() < p)
            })
            .collect();
        let d: Vec<f64> = prev_dose
            .iter()
            .zip(&a)
            .map(|(&prev, &ai)| update_dose(prev, ai, &params))
            .collect();
        let g = graph.interference_summary(&a)?;
        let e: Vec<f64> = (0..n).map(|_| noise_dist.sample(&mut noise_rng)).collect();

        covariates.push(x.clone());
        if t < horizon {
            clamp_events += ctx.integrate_interval(&mut x, &d, &e, t)?;
        }
        treatments.push(a);
        interference.push(g);
        prev_dose.clone_from(&d);
        dose.push(d);
        noise.push(e);
    }

    Ok(ObservationalDataset {
        graph: graph.clone(),
        params,
        static_covariates,
        covariates,
        treatments,
        interference,
        dose,
        noise,
        clamp_events,
    })
}

#[cfg(test)]
mod tests;
