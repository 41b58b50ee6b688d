//! Dataset directories: a TOML manifest plus one whitespace table per trace.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{Dataset, DatasetMeta, DensityMatrix, Trace, TraceKind, TraceSpec};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    meta: DatasetMeta,
    traces: Vec<ManifestTrace>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestTrace {
    file: String,
    kind: TraceKind,
    spec: TraceSpec,
}

fn trace_file(index: usize) -> String {
    format!("trace_{index:03}.tsv")
}

pub fn manifest_string(dataset: &Dataset) -> Result<String> {
    let manifest = Manifest {
        meta: dataset.meta.clone(),
        traces: dataset
            .traces
            .iter()
            .enumerate()
            .map(|(i, t)| ManifestTrace {
                file: trace_file(i),
                kind: t.kind,
                spec: t.spec.clone(),
            })
            .collect(),
    };
    toml::to_string(&manifest).map_err(|e| Error::Parse {
        what: MANIFEST.into(),
        message: e.to_string(),
    })
}

/// One row per time sample, one column per θ bin, 10 significant digits.
pub fn matrix_string(trace: &Trace) -> String {
    let m = &trace.matrix;
    let mut out = format!("# {} t_samples={} theta_bins={}\n", trace.spec.id, m.n_t, m.n_theta);
    for row in m.slices() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:.9e}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str, what: &str) -> Result<DensityMatrix> {
    let parse_err = |message: String| Error::Parse {
        what: what.to_string(),
        message,
    };
    let mut values = Vec::new();
    let mut n_theta = None;
    let mut n_t = 0;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("line {}: {e}", line_no + 1)))?;
        match n_theta {
            None => n_theta = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(parse_err(format!(
                    "line {}: expected {n} columns, found {}",
                    line_no + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
        n_t += 1;
    }
    let n_theta = n_theta.ok_or_else(|| parse_err("empty matrix".into()))?;
    Ok(DensityMatrix {
        n_t,
        n_theta,
        values,
    })
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST), manifest_string(dataset)?)?;
    for (i, trace) in dataset.traces.iter().enumerate() {
        fs::write(dir.join(trace_file(i)), matrix_string(trace))?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
        what: dir.join(MANIFEST).display().to_string(),
        message: e.to_string(),
    })?;
    let mut seen = std::collections::HashSet::new();
    let mut traces = Vec::with_capacity(manifest.traces.len());
    for entry in manifest.traces {
        if !seen.insert(entry.spec.id.clone()) {
            return Err(Error::DuplicateTrace(entry.spec.id));
        }
        entry.spec.validate()?;
        let path = dir.join(&entry.file);
        let matrix = parse_matrix(&fs::read_to_string(&path)?, &path.display().to_string())?;
        if matrix.n_t != entry.spec.t_samples.len() || matrix.n_theta != entry.spec.theta_bins {
            return Err(Error::invalid(format!(
                "trace {}: matrix is {}x{}, spec expects {}x{}",
                entry.spec.id,
                matrix.n_t,
                matrix.n_theta,
                entry.spec.t_samples.len(),
                entry.spec.theta_bins
            )));
        }
        traces.push(Trace {
            kind: entry.spec.kind(),
            spec: entry.spec,
            matrix,
        });
    }
    if traces.is_empty() {
        return Err(Error::invalid("dataset has no traces"));
    }
    Ok(Dataset {
        meta: manifest.meta,
        traces,
    })
}
