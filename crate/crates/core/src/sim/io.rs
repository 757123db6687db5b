//! Dataset directories: `manifest.toml`, one headerless CSV per matrix
//! (row = timestamp, column = node; `V.csv` row = node) and `edges.txt`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ObservationalDataset, SimParams};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const DATASET_FILES: [&str; 9] = [
    "manifest.toml",
    "V.csv",
    "X.csv",
    "A.csv",
    "Y.csv",
    "G.csv",
    "D.csv",
    "noise.csv",
    "edges.txt",
];
const FORMAT: &str = "godeflow-dataset";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    num_nodes: usize,
    horizon: usize,
    static_dim: usize,
    clamp_events: usize,
    params: SimParams,
}

fn write_matrix<T: ToString>(path: &Path, rows: impl IntoIterator<Item = impl AsRef<[T]>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in rows {
        w.write_record(row.as_ref().iter().map(ToString::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// `{:?}` prints the shortest representation that parses back to the same bits.
struct Exact(f64);

impl std::fmt::Display for Exact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

fn exact_rows(rows: &[Vec<f64>]) -> impl Iterator<Item = Vec<Exact>> + '_ {
    rows.iter().map(|r| r.iter().map(|&v| Exact(v)).collect())
}

fn read_matrix<T: std::str::FromStr>(path: &Path, shape: [usize; 2]) -> Result<Vec<Vec<T>>>
where
    T::Err: std::fmt::Display,
{
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = Vec::with_capacity(shape[0]);
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<T>().map_err(|e| Error::format("dataset matrix", path, format!("{s:?}: {e}"))))
            .collect::<Result<Vec<T>>>()?;
        if row.len() != shape[1] {
            return Err(Error::format(
                "dataset matrix",
                path,
                format!("row {} has {} columns, expected {}", rows.len(), row.len(), shape[1]),
            ));
        }
        rows.push(row);
    }
    if rows.len() != shape[0] {
        return Err(Error::format(
            "dataset matrix",
            path,
            format!("{} rows, expected {}", rows.len(), shape[0]),
        ));
    }
    Ok(rows)
}

pub fn write_dataset(dir: &Path, data: &ObservationalDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        num_nodes: data.num_nodes(),
        horizon: data.horizon(),
        static_dim: data.static_covariates.cols(),
        clamp_events: data.clamp_events,
        params: data.params.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::format("dataset manifest", dir.join(DATASET_FILES[0]), e))?;
    std::fs::write(dir.join("manifest.toml"), text)?;
    let v = &data.static_covariates;
    let v_rows: Vec<Vec<f64>> = (0..v.rows()).map(|i| v.row(i).to_vec()).collect();
    write_matrix(&dir.join("V.csv"), exact_rows(&v_rows))?;
    write_matrix(&dir.join("X.csv"), exact_rows(&data.covariates))?;
    write_matrix(&dir.join("Y.csv"), exact_rows(data.outcomes()))?;
    write_matrix(&dir.join("A.csv"), &data.treatments)?;
    write_matrix(&dir.join("G.csv"), exact_rows(&data.interference))?;
    write_matrix(&dir.join("D.csv"), exact_rows(&data.dose))?;
    write_matrix(&dir.join("noise.csv"), exact_rows(&data.noise))?;
    data.graph.write_edge_list(&dir.join("edges.txt"))
}

pub fn read_dataset(dir: &Path) -> Result<ObservationalDataset> {
    let manifest_path = dir.join("manifest.toml");
    let text = std::fs::read_to_string(&manifest_path)?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::format("dataset manifest", &manifest_path, e))?;
    if m.format != FORMAT || m.version != 1 {
        return Err(Error::format(
            "dataset manifest",
            &manifest_path,
            format!("unsupported format {} v{}", m.format, m.version),
        ));
    }
    m.params.validate()?;
    let (n, rows) = (m.num_nodes, m.horizon + 1);
    let graph = Graph::read_edge_list(&dir.join("edges.txt"), Some(n))?;
    let v: Vec<Vec<f64>> = read_matrix(&dir.join("V.csv"), [n, m.static_dim])?;
    let static_covariates = Tensor::new(n, m.static_dim, v.concat())?;
    let covariates = read_matrix(&dir.join("X.csv"), [rows, n])?;
    let outcomes: Vec<Vec<f64>> = read_matrix(&dir.join("Y.csv"), [rows, n])?;
    if outcomes != covariates {
        return Err(Error::format("dataset", dir.join("Y.csv"), "outcomes differ from covariates"));
    }
    let treatments: Vec<Vec<u8>> = read_matrix(&dir.join("A.csv"), [rows, n])?;
    if treatments.iter().flatten().any(|&a| a > 1) {
        return Err(Error::format("dataset", dir.join("A.csv"), "treatments must be 0 or 1"));
    }
    Ok(ObservationalDataset {
        graph,
        params: m.params,
        static_covariates,
        covariates,
        treatments,
        interference: read_matrix(&dir.join("G.csv"), [rows, n])?,
        dose: read_matrix(&dir.join("D.csv"), [rows, n])?,
        noise: read_matrix(&dir.join("noise.csv"), [rows, n])?,
        clamp_events: m.clamp_events,
    })
}
