//! CSV readers and writers.
//!
//! The formats here are plain numeric CSV with a fixed header row.
//! Floats are written with `Display`, which emits the shortest string
//! that parses back to the identical bits, so a write/read cycle is
//! exact. The reader is deliberately minimal (no quoting or escaping)
//! because every producer in this crate emits bare numbers.

use crate::nn::Tensor;
use crate::train::StepMetrics;
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Header of a training metrics file.
pub const METRICS_HEADER: &str = "step,loss_ae,loss_tc,grad_norm,wall_ms";

/// Writes one metrics row per line under a fixed header.
pub fn write_metrics_csv(path: &Path, rows: &[StepMetrics]) -> Result<()> {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.loss_ae, r.loss_tc, r.grad_norm, r.wall_ms
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a metrics file written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        other => {
            return Err(Error::Data(format!(
                "metrics header mismatch: got {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "metrics row {} has {} fields, expected 5",
                i + 2,
                fields.len()
            )));
        }
        let step = fields[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| Error::Data(format!("metrics row {}: {e}", i + 2)))?;
        let mut f = [0.0f64; 4];
        for (k, slot) in f.iter_mut().enumerate() {
            *slot = parse_field(fields[k + 1], i + 2)?;
        }
        rows.push(StepMetrics {
            step,
            loss_ae: f[0],
            loss_tc: f[1],
            grad_norm: f[2],
            wall_ms: f[3],
        });
    }
    Ok(rows)
}

/// Writes named scalar results with run provenance columns.
pub fn write_eval_csv(
    path: &Path,
    rows: &[(String, f64)],
    config_hash: u64,
    seed: u64,
) -> Result<()> {
    let mut out = String::from("metric,value,config_hash,seed\n");
    for (name, value) in rows {
        if name.contains(',') || name.contains('\n') {
            return Err(Error::Data(format!(
                "metric name {name:?} contains a delimiter"
            )));
        }
        out.push_str(&format!("{name},{value},{config_hash:016x},{seed}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes integrator paths as long-format rows. `times` holds the grid
/// (one entry per row of each path) and `paths[p]` is a `steps x d`
/// tensor for path `p`.
pub fn write_trajectory_csv(path: &Path, times: &[f64], paths: &[Tensor<f64>]) -> Result<()> {
    let d = match paths.first() {
        Some(p) => p.cols,
        None => return Err(Error::Data("no paths to write".into())),
    };
    let mut out = String::from("path_id,t");
    for j in 0..d {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for (pid, p) in paths.iter().enumerate() {
        if p.cols != d || p.rows != times.len() {
            return Err(Error::Shape(format!(
                "path {} is {}x{}, expected {}x{}",
                pid,
                p.rows,
                p.cols,
                times.len(),
                d
            )));
        }
        for (i, t) in times.iter().enumerate() {
            out.push_str(&format!("{pid},{t}"));
            for j in 0..d {
                out.push_str(&format!(",{}", p.get(i, j)));
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a headerless or single-header numeric CSV into a matrix. A
/// first row containing any unparsable field is treated as a header
/// and skipped; every following row must be fully numeric and equally
/// wide. The Unicode minus sign is accepted and normalized.
pub fn read_matrix_csv(path: &Path) -> Result<Tensor<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields
            .iter()
            .map(|f| f.trim().replace('\u{2212}', "-").parse::<f64>())
            .collect();
        match parsed {
            Ok(vals) => {
                if let Some(w) = width {
                    if vals.len() != w {
                        return Err(Error::Data(format!(
                            "csv row {} has {} fields, expected {}",
                            i + 1,
                            vals.len(),
                            w
                        )));
                    }
                } else {
                    width = Some(vals.len());
                }
                rows.push(vals);
            }
            Err(e) => {
                if rows.is_empty() && width.is_none() {
                    // header row
                    continue;
                }
                return Err(Error::Data(format!("csv row {}: {e}", i + 1)));
            }
        }
    }
    let w = width.ok_or_else(|| Error::Data("csv contains no numeric rows".into()))?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Tensor::from_vec(flat.len() / w, w, flat))
}

fn parse_field(s: &str, row: usize) -> Result<f64> {
    s.trim()
        .replace('\u{2212}', "-")
        .parse::<f64>()
        .map_err(|e| Error::Data(format!("metrics row {row}: {e}")))
}

/// Appends rows to an open writer in the metrics format, emitting the
/// header only when the stream is at offset zero.
pub fn stream_metrics<W: Write>(w: &mut W, at_start: bool, rows: &[StepMetrics]) -> Result<()> {
    if at_start {
        writeln!(w, "{METRICS_HEADER}")?;
    }
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.step, r.loss_ae, r.loss_tc, r.grad_norm, r.wall_ms
        )?;
    }
    Ok(())
}
