use rand::seq::index;

use super::{update_dose, Context, ObservationalDataset};
use crate::error::{Error, Result};
use crate::rng;

/// Which observed treatments to flip inside the window `[start_time, T]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Flip {
    /// Flip `round(ratio * count)` uniformly chosen (node, time) entries.
    Ratio { ratio: f64, seed: u64 },
    /// One row per timestamp in the window, `N` entries each; 1 flips.
    Mask(Vec<Vec<u8>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterventionSpec {
    pub start_time: usize,
    pub flip: Flip,
}

impl InterventionSpec {
    pub fn ratio(start_time: usize, ratio: f64, seed: u64) -> Self {
        InterventionSpec {
            start_time,
            flip: Flip::Ratio { ratio, seed },
        }
    }

    /// Full `(T+1) x N` treatment matrix under the intervention.
    pub fn apply(&self, factual: &[Vec<u8>]) -> Result<Vec<Vec<u8>>> {
        let horizon = factual.len().saturating_sub(1);
        let n = factual.first().map_or(0, Vec::len);
        if self.start_time > horizon {
            return Err(Error::Parameter(format!(
                "intervention start {} is beyond horizon {horizon}",
                self.start_time
            )));
        }
        let window = horizon + 1 - self.start_time;
        let mut out = factual.to_vec();
        match &self.flip {
            Flip::Ratio { ratio, seed } => {
                if !(0.0..=1.0).contains(ratio) {
                    return Err(Error::Parameter(format!("flip ratio {ratio} outside [0, 1]")));
                }
                let total = window * n;
                let count = (ratio * total as f64).round() as usize;
                let mut rng = rng::stream(*seed, 0);
                for k in index::sample(&mut rng, total, count.min(total)) {
                    let (t, i) = (self.start_time + k / n, k % n);
                    out[t][i] ^= 1;
                }
            }
            Flip::Mask(mask) => {
                if mask.len() != window || mask.iter().any(|r| r.len() != n) {
                    return Err(Error::dim("flip mask", &[window, n], &[mask.len(), mask.first().map_or(0, Vec::len)]));
                }
                for (k, row) in mask.iter().enumerate() {
                    for (i, &m) in row.iter().enumerate() {
                        if m > 1 {
                            return Err(Error::Domain(format!("flip mask entry {m} is not binary")));
                        }
                        out[self.start_time + k][i] ^= m;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Counterfactual replay. Rows before `start_time` equal the factual ones.
#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualTrajectory {
    pub start_time: usize,
    pub outcomes: Vec<Vec<f64>>,
    pub treatments: Vec<Vec<u8>>,
    pub interference: Vec<Vec<f64>>,
    pub dose: Vec<Vec<f64>>,
}

/// Re-integrates the PK-PD dynamics from the factual state at `start_time`
/// under the intervened treatments, reusing the persisted noise draws.
pub fn counterfactual_oracle(dataset: &ObservationalDataset, spec: &InterventionSpec) -> Result<CounterfactualTrajectory> {
    let treatments = spec.apply(&dataset.treatments)?;
    let start = spec.start_time;
    let horizon = dataset.horizon();
    let params = &dataset.params;
    let ctx = Context::new(&dataset.graph, params, &dataset.static_covariates);

    let mut outcomes = dataset.covariates[..start].to_vec();
    let mut interference = dataset.interference[..start].to_vec();
    let mut dose = dataset.dose[..start].to_vec();
    let mut x = dataset.covariates[start].clone();
    let mut prev_dose = if start == 0 {
        vec![0.0; dataset.num_nodes()]
    } else {
        dataset.dose[start - 1].clone()
    };
    for t in start..=horizon {
        let d: Vec<f64> = prev_dose
            .iter()
            .zip(&treatments[t])
            .map(|(&prev, &a)| update_dose(prev, a, params))
            .collect();
        interference.push(dataset.graph.interference_summary(&treatments[t])?);
        outcomes.push(x.clone());
        if t < horizon {
            ctx.integrate_interval(&mut x, &d, &dataset.noise[t], t)?;
        }
        prev_dose.clone_from(&d);
        dose.push(d);
    }
    Ok(CounterfactualTrajectory {
        start_time: start,
        outcomes,
        treatments,
        interference,
        dose,
    })
}
