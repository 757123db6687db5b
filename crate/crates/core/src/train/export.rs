//! CSV writers for latents, reports, loss histories and sweep tables.
//! Floats use the shortest text that parses back to the same value.

use std::path::Path;

use super::{EvalReport, GridPoint, LossRecord, SweepKind, SweepRow};
use crate::error::Result;
use crate::model::{GraphContext, Model};
use crate::sim::ObservationalDataset;

/// Latent coordinate columns are named `z0`, `z1`, ...
pub const LATENT_COLUMNS_PREFIX: &str = "z";

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::WriterBuilder::new().has_headers(false).from_path(path)?)
}

/// One row per (node, timestamp): `node,timestamp,z0..z{L-1},A,G`.
/// Returns the number of data rows.
pub fn export_latents(model: &Model, dataset: &ObservationalDataset, path: &Path) -> Result<usize> {
    let ctx = GraphContext::new(&dataset.graph);
    let pred = model.predict(
        &dataset.covariates[0],
        &dataset.static_covariates,
        &dataset.treatments,
        &ctx,
    )?;
    let dim = model.config.latent_dim;
    let mut w = writer(path)?;
    let mut header = vec!["node".to_string(), "timestamp".to_string()];
    header.extend((0..dim).map(|k| format!("{LATENT_COLUMNS_PREFIX}{k}")));
    header.push("A".into());
    header.push("G".into());
    w.write_record(&header)?;
    let mut rows = 0;
    for i in 0..dataset.num_nodes() {
        for (t, z) in pred.latents.iter().enumerate() {
            let mut rec = vec![i.to_string(), t.to_string()];
            rec.extend(z.row(i).iter().map(|&v| num(v)));
            rec.push(dataset.treatments[t][i].to_string());
            rec.push(num(dataset.interference[t][i]));
            w.write_record(&rec)?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

fn report_header(horizon: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=horizon).map(|k| format!("step_{k}")).collect();
    h.extend(
        ["overall", "treatment_accuracy", "interference_r2", "start_time", "flipped", "seed", "config_hash"]
            .map(String::from),
    );
    h
}

fn report_fields(r: &EvalReport) -> Vec<String> {
    let mut f: Vec<String> = r.per_step_mse.iter().map(|&v| num(v)).collect();
    f.push(num(r.overall_mse));
    f.push(opt(r.balance.map(|b| b.treatment_accuracy)));
    f.push(opt(r.balance.map(|b| b.interference_r2)));
    f.push(r.start_time.to_string());
    f.push(r.flipped.to_string());
    f.push(r.seed.to_string());
    f.push(r.config_hash.clone());
    f
}

/// Writes the step/overall table to `path` and the degree breakdown next
/// to it as `<stem>_degrees.csv`.
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(report_header(report.per_step_mse.len()))?;
    w.write_record(report_fields(report))?;
    w.flush()?;
    let stem = path.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
    let mut w = writer(&path.with_file_name(format!("{stem}_degrees.csv")))?;
    w.write_record(["degree", "nodes", "mse"])?;
    for b in &report.degree_buckets {
        w.write_record([b.label.clone(), b.nodes.to_string(), num(b.mse)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["iteration", "step", "loss", "outcome", "treatment", "interference", "valid_outcome"])?;
    for r in history {
        w.write_record([
            r.iteration.to_string(),
            r.kind.name().to_string(),
            num(r.loss),
            num(r.outcome),
            opt(r.treatment),
            opt(r.interference),
            opt(r.valid_outcome),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per grid point; failed points carry `status = failed` and the
/// error text.
pub fn write_sweep_table(path: &Path, kind: SweepKind, rows: &[SweepRow], horizon: usize) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<String> = match kind {
        SweepKind::AlphaGrid => vec!["alpha_a".into(), "alpha_g".into()],
        _ => vec![kind.name().into()],
    };
    header.push("status".into());
    header.extend(report_header(horizon));
    header.push("error".into());
    w.write_record(&header)?;
    for row in rows {
        let mut rec: Vec<String> = match row.point {
            GridPoint::Value(v) => vec![num(v)],
            GridPoint::Pair(a, g) => vec![num(a), num(g)],
        };
        match &row.outcome {
            Ok(r) => {
                rec.push("ok".into());
                rec.extend(report_fields(r));
                rec.push(String::new());
            }
            Err(e) => {
                rec.push("failed".into());
                rec.extend(std::iter::repeat_n(String::new(), horizon + 7));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
