use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use godeflow::config::{blob_hash, RunConfig};
use godeflow::model::Model;
use godeflow::sim::{read_dataset, simulate_trajectory, write_dataset, ObservationalDataset, DATASET_FILES};
use godeflow::train::{
    evaluate_with_config, export_latents, sweep, train, write_history, write_report, write_sweep_table, EvalReport,
    GridPoint, SweepKind, Variant,
};

mod grid;

const RUN_MANIFEST: &str = "run.toml";

#[derive(Parser)]
#[command(name = "godeflow", version, about = "Counterfactual outcome estimation on graph dynamical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an observational dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on a simulated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// full, N, T or I.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint against the simulator's counterfactuals.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        flip_ratio: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and evaluate once per grid point.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// flip_ratio, confounding, alpha_grid or alt_ratio.
        #[arg(long)]
        kind: String,
        /// `a..b` (integers), `a:b:n` (n points) or a comma list. For
        /// alpha_grid the values span both axes.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write latent trajectories as CSV.
    ExportLatents {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

enum Failure {
    Usage(String),
    Runtime(godeflow::Error),
}

impl From<godeflow::Error> for Failure {
    fn from(e: godeflow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> Outcome<()> {
    match command {
        Command::Simulate { common, out } => simulate(&common, out),
        Command::Train {
            common,
            data,
            out,
            variant,
            epochs,
        } => train_cmd(&common, &data, out, variant, epochs),
        Command::Evaluate {
            common,
            checkpoint,
            data,
            flip_ratio,
            horizon,
            report,
        } => evaluate(&common, &checkpoint, &data, flip_ratio, horizon, report),
        Command::Sweep {
            common,
            kind,
            grid,
            out,
            jobs,
        } => sweep_cmd(&common, &kind, &grid, out, jobs),
        Command::ExportLatents {
            common,
            checkpoint,
            data,
            out,
        } => export(&common, &checkpoint, &data, &out),
    }
}

fn load_config(common: &Common) -> Outcome<RunConfig> {
    let cfg = match &common.config {
        Some(path) => {
            if !path.is_file() {
                return usage(format!("config file {} not found", path.display()));
            }
            RunConfig::load(path)
        }
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env().map(|()| cfg)
        }
    };
    cfg.map_err(|e| Failure::Usage(e.to_string()))
}

fn check_config(cfg: &RunConfig) -> Outcome<()> {
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))
}

/// Refuses a non-empty directory unless `force` is set.
fn prepare_dir(dir: &Path, force: bool) -> Outcome<()> {
    if dir.is_file() {
        return usage(format!("{} is a file, expected a directory", dir.display()));
    }
    let nonempty = dir.read_dir().is_ok_and(|mut it| it.next().is_some());
    if nonempty && !force {
        return usage(format!("{} exists and is not empty; pass --force to overwrite", dir.display()));
    }
    std::fs::create_dir_all(dir).map_err(godeflow::Error::from)?;
    Ok(())
}

fn prepare_file(path: &Path, force: bool) -> Outcome<()> {
    if path.exists() && !force {
        return usage(format!("{} exists; pass --force to overwrite", path.display()));
    }
    Ok(())
}

fn require_dir(dir: &Path, what: &str) -> Outcome<()> {
    if !dir.is_dir() {
        return usage(format!("{what} directory {} not found", dir.display()));
    }
    Ok(())
}

fn load_dataset(dir: &Path) -> Outcome<ObservationalDataset> {
    require_dir(dir, "dataset")?;
    Ok(read_dataset(dir)?)
}

fn load_model(dir: &Path) -> Outcome<Model> {
    require_dir(dir, "checkpoint")?;
    Ok(Model::load(dir)?.0)
}

/// Hashes of the named files under `dir`, keyed by file name.
fn file_hashes(dir: &Path, names: &[&str]) -> Outcome<toml::Table> {
    let mut t = toml::Table::new();
    for name in names {
        let bytes = std::fs::read(dir.join(name)).map_err(godeflow::Error::from)?;
        t.insert((*name).into(), toml::Value::String(blob_hash(&bytes)));
    }
    Ok(t)
}

/// Structured record of a run: command, resolved config and input hashes.
/// Holds no paths or clock readings so reruns reproduce it byte for byte.
fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, inputs: toml::Table) -> Outcome<()> {
    let resolved = cfg.resolved();
    let config = toml::Table::try_from(&resolved).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut m = toml::Table::new();
    m.insert("command".into(), command.into());
    m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("config_hash".into(), cfg.config_hash()?.into());
    m.insert("inputs".into(), toml::Value::Table(inputs));
    m.insert("config".into(), toml::Value::Table(config));
    let text = toml::to_string(&m).map_err(|e| Failure::Usage(e.to_string()))?;
    std::fs::write(dir.join(RUN_MANIFEST), text).map_err(godeflow::Error::from)?;
    Ok(())
}

fn simulate(common: &Common, out: Option<PathBuf>) -> Outcome<()> {
    let cfg = load_config(common)?;
    let out = out.unwrap_or_else(|| cfg.output.dir.join("data"));
    prepare_dir(&out, common.force)?;
    let graph = cfg.build_graph()?;
    let data = simulate_trajectory(&graph, &cfg.sim_params())?;
    write_dataset(&out, &data)?;
    write_manifest(&out, "simulate", &cfg, toml::Table::new())?;
    println!("nodes           {}", data.num_nodes());
    println!("edges           {}", data.graph.num_edges());
    println!("horizon         {}", data.horizon());
    println!("treatment rate  {:.4}", data.treatment_rate());
    println!("mean G          {:.4}", data.mean_interference());
    println!("clamp events    {}", data.clamp_events);
    println!("written to      {}", out.display());
    Ok(())
}

fn train_cmd(
    common: &Common,
    data_dir: &Path,
    out: Option<PathBuf>,
    variant: Option<String>,
    epochs: Option<usize>,
) -> Outcome<()> {
    let mut cfg = load_config(common)?;
    if let Some(v) = variant {
        cfg.train.variant = Some(Variant::parse(&v).map_err(|e| Failure::Usage(e.to_string()))?);
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    check_config(&cfg)?;
    let data = load_dataset(data_dir)?;
    let out = out.unwrap_or_else(|| cfg.output.dir.join("model"));
    prepare_dir(&out, common.force)?;
    let model = Model::new(cfg.model_config(), data.static_covariates.cols(), cfg.model_seed())?;
    let trained = train(&data, model, &cfg.train_config())?;
    let mut meta = toml::Table::new();
    meta.insert("best_iteration".into(), (trained.best_iteration as i64).into());
    trained.model.save(&out, meta)?;
    write_history(&out.join("history.csv"), &trained.history)?;
    write_manifest(&out, "train", &cfg, file_hashes(data_dir, &DATASET_FILES)?)?;
    let (a, g) = cfg.train.alphas();
    println!("alpha_A, alpha_G  {a}, {g}");
    println!("iterations        {}", trained.history.len());
    println!("best iteration    {}", trained.best_iteration);
    if let Some(v) = trained.best_valid {
        println!("best valid L_Y    {v:.6}");
    }
    println!("written to        {}", out.display());
    Ok(())
}

fn print_report(r: &EvalReport) {
    let head: Vec<String> = (1..=r.per_step_mse.len()).map(|k| format!("{k}-step")).collect();
    println!("{:>12} {:>12}", head.join("         "), "overall");
    let vals: Vec<String> = r.per_step_mse.iter().map(|v| format!("{v:.6}")).collect();
    println!("{} {:.6}", vals.join(" "), r.overall_mse);
    println!("flipped {} treatments from t={}", r.flipped, r.start_time);
    for b in &r.degree_buckets {
        println!("  degree {:>8}  nodes {:>5}  mse {:.6}", b.label, b.nodes, b.mse);
    }
    if let Some(b) = r.balance {
        println!("post-hoc treatment accuracy {:.4}", b.treatment_accuracy);
        println!("post-hoc interference R2    {:.4}", b.interference_r2);
    }
}

fn evaluate(
    common: &Common,
    checkpoint: &Path,
    data_dir: &Path,
    flip_ratio: Option<f64>,
    horizon: Option<usize>,
    report: Option<PathBuf>,
) -> Outcome<()> {
    let mut cfg = load_config(common)?;
    if let Some(r) = flip_ratio {
        cfg.eval.flip_ratio = r;
    }
    if let Some(h) = horizon {
        cfg.eval.horizon = h;
        cfg.eval.start_time = None;
    }
    let data = load_dataset(data_dir)?;
    cfg.sim.horizon = data.horizon();
    check_config(&cfg)?;
    if let Some(path) = &report {
        prepare_file(path, common.force)?;
    }
    let model = load_model(checkpoint)?;
    let r = evaluate_with_config(&cfg, &model, &data)?;
    print_report(&r);
    if let Some(path) = report {
        write_report(&path, &r)?;
    }
    Ok(())
}

fn sweep_cmd(common: &Common, kind: &str, grid_text: &str, out: Option<PathBuf>, jobs: usize) -> Outcome<()> {
    let cfg = load_config(common)?;
    let kind = SweepKind::parse(kind).map_err(|e| Failure::Usage(e.to_string()))?;
    let values = grid::parse(grid_text).map_err(Failure::Usage)?;
    let points: Vec<GridPoint> = match kind {
        SweepKind::AlphaGrid => values
            .iter()
            .flat_map(|&a| values.iter().map(move |&g| GridPoint::Pair(a, g)))
            .collect(),
        _ => values.into_iter().map(GridPoint::Value).collect(),
    };
    if points.is_empty() {
        return usage("sweep grid is empty");
    }
    let out = out.unwrap_or_else(|| cfg.output.dir.join(format!("sweep_{}", kind.name())));
    prepare_dir(&out, common.force)?;
    let rows = sweep(kind, &points, &cfg, jobs)?;
    write_sweep_table(&out.join("sweep.csv"), kind, &rows, cfg.eval.horizon)?;
    write_manifest(&out, "sweep", &cfg, toml::Table::new())?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    for row in &rows {
        match &row.outcome {
            Ok(r) => println!("{:?}  overall {:.6}", row.point, r.overall_mse),
            Err(e) => println!("{:?}  failed: {e}", row.point),
        }
    }
    println!("{} points, {failed} failed, table in {}", rows.len(), out.join("sweep.csv").display());
    Ok(())
}

fn export(common: &Common, checkpoint: &Path, data_dir: &Path, out: &Path) -> Outcome<()> {
    let data = load_dataset(data_dir)?;
    prepare_file(out, common.force)?;
    let model = load_model(checkpoint)?;
    let rows = export_latents(&model, &data, out)?;
    println!("{rows} rows written to {}", out.display());
    Ok(())
}
