use serde::Serialize;

use super::BalanceReport;
use crate::error::{Error, Result};
use crate::graph::GraphPartition;
use crate::model::{GraphContext, Model};
use crate::sim::{counterfactual_oracle, Flip, InterventionSpec, ObservationalDataset};

/// Anything that can roll a dataset forward under an alternative treatment
/// path. `treatments` agrees with the factual path before `start`.
pub trait OutcomePredictor {
    /// `(T+1) x N` outcomes in original units.
    fn rollout(&self, dataset: &ObservationalDataset, treatments: &[Vec<u8>], start: usize) -> Result<Vec<Vec<f64>>>;
}

impl OutcomePredictor for Model {
    fn rollout(&self, dataset: &ObservationalDataset, treatments: &[Vec<u8>], start: usize) -> Result<Vec<Vec<f64>>> {
        let ctx = GraphContext::new(&dataset.graph);
        let pred = self.predict_counterfactual(
            &dataset.covariates[0],
            &dataset.static_covariates,
            treatments,
            start,
            &ctx,
        )?;
        Ok(pred.outcomes)
    }
}

/// The simulator itself, as a perfect predictor.
pub struct OraclePredictor;

impl OutcomePredictor for OraclePredictor {
    fn rollout(&self, dataset: &ObservationalDataset, treatments: &[Vec<u8>], start: usize) -> Result<Vec<Vec<f64>>> {
        let mask = (start..treatments.len())
            .map(|t| {
                treatments[t]
                    .iter()
                    .zip(&dataset.treatments[t])
                    .map(|(a, b)| a ^ b)
                    .collect()
            })
            .collect();
        let spec = InterventionSpec {
            start_time: start,
            flip: Flip::Mask(mask),
        };
        Ok(counterfactual_oracle(dataset, &spec)?.outcomes)
    }
}

/// Predicts the same value everywhere.
pub struct ConstantPredictor(pub f64);

impl OutcomePredictor for ConstantPredictor {
    fn rollout(&self, dataset: &ObservationalDataset, treatments: &[Vec<u8>], _: usize) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![self.0; dataset.num_nodes()]; treatments.len()])
    }
}

/// Upper edges of the degree buckets `(0,5], (5,10], ..., (40,50]`; a
/// leading bucket holds isolated nodes and a trailing one degrees above 50.
pub const DEGREE_EDGES: [usize; 7] = [0, 5, 10, 20, 30, 40, 50];

pub fn degree_bucket_label(k: usize) -> String {
    match k {
        0 => "0".into(),
        k if k < DEGREE_EDGES.len() => format!("({},{}]", DEGREE_EDGES[k - 1], DEGREE_EDGES[k]),
        _ => format!(">{}", DEGREE_EDGES[DEGREE_EDGES.len() - 1]),
    }
}

fn degree_bucket(degree: usize) -> usize {
    DEGREE_EDGES
        .iter()
        .position(|&e| degree <= e)
        .unwrap_or(DEGREE_EDGES.len())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegreeBucket {
    pub label: String,
    pub nodes: usize,
    /// `NaN` when the bucket is empty.
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// MSE at `start_time + k` for `k = 1..=horizon`.
    pub per_step_mse: Vec<f64>,
    pub overall_mse: f64,
    pub degree_buckets: Vec<DegreeBucket>,
    pub balance: Option<BalanceReport>,
    pub start_time: usize,
    pub flipped: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Rolls `predictor` forward from `spec.start_time` under the intervened
/// treatments and scores it against the simulator oracle on the next
/// `horizon` observation times, over all nodes.
pub fn evaluate_counterfactual(
    predictor: &dyn OutcomePredictor,
    dataset: &ObservationalDataset,
    spec: &InterventionSpec,
    horizon: usize,
) -> Result<EvalReport> {
    let t_max = dataset.horizon();
    if horizon < 1 || spec.start_time + horizon > t_max {
        return Err(Error::Parameter(format!(
            "start {} plus horizon {horizon} exceeds the dataset horizon {t_max}",
            spec.start_time
        )));
    }
    let truth = counterfactual_oracle(dataset, spec)?;
    let pred = predictor.rollout(dataset, &truth.treatments, spec.start_time)?;
    let n = dataset.num_nodes();
    if pred.len() != t_max + 1 || pred.iter().any(|r| r.len() != n) {
        return Err(Error::dim("predictor output", &[t_max + 1, n], &[pred.len()]));
    }
    let mut per_step = Vec::with_capacity(horizon);
    let mut per_node = vec![0.0; n];
    for k in 1..=horizon {
        let t = spec.start_time + k;
        let mut sum = 0.0;
        for i in 0..n {
            let e = (pred[t][i] - truth.outcomes[t][i]).powi(2);
            per_node[i] += e;
            sum += e;
        }
        per_step.push(sum / n as f64);
    }
    if per_step.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("counterfactual predictions are not finite".into()));
    }
    let overall = per_node.iter().sum::<f64>() / (n * horizon) as f64;
    let mut buckets: Vec<(usize, f64)> = vec![(0, 0.0); DEGREE_EDGES.len() + 1];
    for (i, e) in per_node.iter().enumerate() {
        let b = &mut buckets[degree_bucket(dataset.graph.degree(i))];
        b.0 += 1;
        b.1 += e;
    }
    let flipped = (spec.start_time..=t_max)
        .map(|t| {
            truth.treatments[t]
                .iter()
                .zip(&dataset.treatments[t])
                .filter(|(a, b)| a != b)
                .count()
        })
        .sum();
    Ok(EvalReport {
        per_step_mse: per_step,
        overall_mse: overall,
        degree_buckets: buckets
            .into_iter()
            .enumerate()
            .map(|(k, (count, sum))| DegreeBucket {
                label: degree_bucket_label(k),
                nodes: count,
                mse: if count == 0 { f64::NAN } else { sum / (count * horizon) as f64 },
            })
            .collect(),
        balance: None,
        start_time: spec.start_time,
        flipped,
        seed: match spec.flip {
            Flip::Ratio { seed, .. } => seed,
            Flip::Mask(_) => 0,
        },
        config_hash: String::new(),
    })
}

/// Scores a model trained on one part of a partition on a trajectory
/// simulated over the disjoint test subgraph. The model encodes the test
/// trajectory's own initial state.
pub fn generalization_eval(
    model: &Model,
    partition: &GraphPartition,
    test_data: &ObservationalDataset,
    spec: &InterventionSpec,
    horizon: usize,
) -> Result<EvalReport> {
    partition.check_disjoint()?;
    if test_data.graph != partition.test_graph {
        return Err(Error::param("test trajectory was not simulated on the partition's test subgraph"));
    }
    evaluate_counterfactual(model, test_data, spec, horizon)
}
