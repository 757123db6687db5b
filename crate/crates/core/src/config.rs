//! Run configuration: one TOML file with `[graph]`, `[sim]`, `[model]`,
//! `[train]`, `[eval]` and `[output]` sections. Unknown keys are rejected.
//!
//! A top-level `seed` feeds every section; a `seed` inside a section
//! overrides it for that section only. `GODEFLOW_SEED` replaces the
//! top-level seed.

use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{generate_synthetic_graph, DegreeProfile, Graph};
use crate::model::ModelConfig;
use crate::rng;
use crate::sim::SimParams;
use crate::train::{ProbeConfig, TrainConfig};

pub const SEED_ENV: &str = "GODEFLOW_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub graph: GraphSection,
    pub sim: SimParams,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub output: OutputSection,
    /// Explicit `[sim] seed`, if any.
    #[serde(skip)]
    pub sim_seed: Option<u64>,
    /// Explicit `[train] seed`, if any.
    #[serde(skip)]
    pub train_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    /// `flickr` or `blogcatalog`; `mean_degree`/`degree_std` override it.
    pub profile: String,
    pub mean_degree: Option<f64>,
    pub degree_std: Option<f64>,
    pub num_nodes: usize,
    /// Train/valid/test node fractions for the generalization protocol.
    pub partition: [f64; 3],
    pub seed: Option<u64>,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection {
            profile: "flickr".into(),
            mean_degree: None,
            degree_std: None,
            num_nodes: 500,
            partition: [0.6, 0.2, 0.2],
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub head_hidden: usize,
    pub seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            latent_dim: m.latent_dim,
            encoder_hidden: m.encoder_hidden,
            head_hidden: m.head_hidden,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub flip_ratio: f64,
    pub horizon: usize,
    /// Defaults to `T - horizon`.
    pub start_time: Option<usize>,
    /// Run the post-hoc balance probes.
    pub balance: bool,
    pub probe_hidden: usize,
    pub probe_iterations: usize,
    pub probe_learning_rate: f64,
    pub probe_holdout: f64,
    pub seed: Option<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        EvalSection {
            flip_ratio: 0.5,
            horizon: 5,
            start_time: None,
            balance: true,
            probe_hidden: p.hidden,
            probe_iterations: p.iterations,
            probe_learning_rate: p.learning_rate,
            probe_holdout: p.holdout_fraction,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs") }
    }
}

/// Independent seed for one purpose, derived from the top-level seed.
/// Kept below 2^63 so resolved configs stay representable in TOML.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    rng::stream(seed, 1000 + purpose).next_u64() >> 1
}

const PURPOSE_GRAPH: u64 = 0;
const PURPOSE_SIM: u64 = 1;
const PURPOSE_MODEL: u64 = 2;
const PURPOSE_TRAIN: u64 = 3;
const PURPOSE_EVAL: u64 = 4;

impl RunConfig {
    /// Parses TOML text. `GODEFLOW_SEED` is not consulted here.
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::format("run config", origin, e.to_string());
        let mut table: toml::Table = text.parse().map_err(|e| bad(&e))?;
        let mut take_seed = |section: &str| -> Result<Option<u64>> {
            match table.get_mut(section) {
                Some(toml::Value::Table(t)) => match t.remove("seed") {
                    None => Ok(None),
                    Some(toml::Value::Integer(s)) if s >= 0 => Ok(Some(s as u64)),
                    Some(v) => Err(bad(&format!("[{section}] seed must be a non-negative integer, got {v}"))),
                },
                _ => Ok(None),
            }
        };
        let sim_seed = take_seed("sim")?;
        let train_seed = take_seed("train")?;
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| bad(&e))?;
        cfg.sim_seed = sim_seed;
        cfg.train_seed = train_seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `GODEFLOW_SEED`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::from_toml_str(&text, path)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse::<i64>()
                .ok()
                .filter(|s| *s >= 0)
                .ok_or_else(|| Error::param(format!("{SEED_ENV}={v:?} is not an integer in [0, 2^63)")))?
                as u64;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.profile()?;
        if self.graph.num_nodes < 2 {
            return Err(Error::param("graph.num_nodes must be at least 2"));
        }
        self.sim.validate()?;
        self.model_config().validate()?;
        self.train.validate()?;
        let e = &self.eval;
        if !(0.0..=1.0).contains(&e.flip_ratio) {
            return Err(Error::param(format!("eval.flip_ratio {} outside [0, 1]", e.flip_ratio)));
        }
        if e.horizon < 1 || e.horizon > self.sim.horizon {
            return Err(Error::param(format!(
                "eval.horizon {} must lie in [1, sim.horizon = {}]",
                e.horizon, self.sim.horizon
            )));
        }
        if self.start_time() + e.horizon > self.sim.horizon {
            return Err(Error::param(format!(
                "eval.start_time {} plus horizon {} exceeds sim.horizon {}",
                self.start_time(),
                e.horizon,
                self.sim.horizon
            )));
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<DegreeProfile> {
        let base = match self.graph.profile.to_ascii_lowercase().as_str() {
            "flickr" => DegreeProfile::FLICKR,
            "blogcatalog" => DegreeProfile::BLOGCATALOG,
            "custom" => DegreeProfile {
                mean_degree: f64::NAN,
                degree_std: f64::NAN,
            },
            other => {
                return Err(Error::param(format!(
                    "unknown graph profile {other:?}, expected flickr, blogcatalog or custom"
                )))
            }
        };
        let p = DegreeProfile {
            mean_degree: self.graph.mean_degree.unwrap_or(base.mean_degree),
            degree_std: self.graph.degree_std.unwrap_or(base.degree_std),
        };
        if !(p.mean_degree >= 0.0 && p.degree_std >= 0.0) {
            return Err(Error::param("graph profile needs non-negative mean_degree and degree_std"));
        }
        Ok(p)
    }

    pub fn graph_seed(&self) -> u64 {
        self.graph.seed.unwrap_or_else(|| derive_seed(self.seed, PURPOSE_GRAPH))
    }

    pub fn model_seed(&self) -> u64 {
        self.model.seed.unwrap_or_else(|| derive_seed(self.seed, PURPOSE_MODEL))
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval.seed.unwrap_or_else(|| derive_seed(self.seed, PURPOSE_EVAL))
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            seed: self.sim_seed.unwrap_or_else(|| derive_seed(self.seed, PURPOSE_SIM)),
            ..self.sim.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.train_seed.unwrap_or_else(|| derive_seed(self.seed, PURPOSE_TRAIN)),
            ..self.train.clone()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            latent_dim: self.model.latent_dim,
            encoder_hidden: self.model.encoder_hidden,
            head_hidden: self.model.head_hidden,
            substeps: self.train.substeps,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            hidden: self.eval.probe_hidden,
            iterations: self.eval.probe_iterations,
            learning_rate: self.eval.probe_learning_rate,
            holdout_fraction: self.eval.probe_holdout,
            seed: self.eval_seed(),
        }
    }

    pub fn start_time(&self) -> usize {
        self.eval
            .start_time
            .unwrap_or(self.sim.horizon.saturating_sub(self.eval.horizon))
    }

    pub fn build_graph(&self) -> Result<Graph> {
        generate_synthetic_graph(self.graph.num_nodes, self.profile()?, self.graph_seed())
    }

    /// Same run with every derived seed written out explicitly.
    pub fn resolved(&self) -> RunConfig {
        let mut r = self.clone();
        r.graph.seed = Some(self.graph_seed());
        r.model.seed = Some(self.model_seed());
        r.eval.seed = Some(self.eval_seed());
        r.eval.start_time = Some(self.start_time());
        r.sim = self.sim_params();
        r.train = self.train_config();
        r.sim_seed = Some(r.sim.seed);
        r.train_seed = Some(r.train.seed);
        r
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("run config", "<memory>", e))
    }

    /// Hex SHA-256 of the resolved configuration text.
    pub fn config_hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.resolved().to_toml()?.as_bytes())))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style blob hash: SHA-256 over `"blob <len>\0"` followed by the bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}
