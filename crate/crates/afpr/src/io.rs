//! CSV and JSON interchange for signals, surfaces, masks, and traces.
//!
//! Every format here is deliberately plain so that the files can be loaded
//! into a notebook or plotted with standard tooling without a parser for
//! anything beyond CSV and JSON:
//!
//! - **Signal**: header `n,re,im`, one row per sample, indices ascending
//!   `0..N−1`.
//! - **Ambiguity surface**: header `p,k,value`, row-major over the `N×N`
//!   grid. Written files carry a JSON sidecar at `<path>.meta.json` with the
//!   grid size, since the CSV alone cannot distinguish an `N×N` surface from
//!   a truncated one.
//! - **Inner-product map**: header `p,k,re,im`, row-major (emission only —
//!   nothing downstream consumes one).
//! - **Sampling mask**: header `p,k,kept` with 0/1 entries, plus the same
//!   sidecar. Masks read back report [`MaskKind::Custom`]; the generating
//!   pattern is not recoverable from the table.
//! - **Solver trace**: header `t,mu,grad_norm,objective` with a trailing
//!   `dist_truth` column present exactly when the run was traced against a
//!   ground truth.
//! - **Batch outputs**: per-trial scenario rows, success-rate maps, and
//!   initializer comparisons as long-format tables (one grid cell per
//!   row), ready for pivoting or plotting as-is.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write→read cycle reproduces the value bit-for-bit. Configs and reports
//! are plain serde JSON via [`read_json`]/[`write_json`].
//!
//! Write functions take any [`Write`] sink so the CLI can point them at a
//! file or stdout; read functions take paths, which they also use to locate
//! sidecars and to label parse errors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{AmbiguityMap, InnerProductMap};
use crate::harness::{InitComparison, SuccessRateMap, TrialOutcome, TrialSummary};
use crate::sampling::{MaskKind, MaskMode, SamplingMask};
use crate::signal::ComplexSignal;
use crate::solver::SolverTrace;
use crate::{Error, Result};

/// Grid-size sidecar carried by surface and mask CSVs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct MetaSidecar {
    n_len: usize,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    name.into()
}

fn parse_err(path: &Path, line: usize, reason: impl std::fmt::Display) -> Error {
    Error::Parse { path: path.display().to_string(), reason: format!("line {line}: {reason}") }
}

/// Splits a CSV record, checks the column count, and parses every field.
fn fields<'a>(line: &'a str, want: usize, path: &Path, lineno: usize) -> Result<Vec<&'a str>> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if cols.len() != want {
        return Err(parse_err(path, lineno, format!("expected {want} columns, got {}", cols.len())));
    }
    Ok(cols)
}

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    what: &str,
    path: &Path,
    lineno: usize,
) -> Result<T> {
    raw.parse().map_err(|_| parse_err(path, lineno, format!("bad {what} value {raw:?}")))
}

/// Reads non-empty lines and verifies the header before yielding records.
fn read_records(path: &Path, header: &str) -> Result<Vec<(usize, String)>> {
    let file = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut saw_header = false;
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !saw_header {
            if line != header {
                return Err(parse_err(path, idx + 1, format!("expected header {header:?}")));
            }
            saw_header = true;
            continue;
        }
        records.push((idx + 1, line.to_owned()));
    }
    if !saw_header {
        return Err(parse_err(path, 1, "empty file"));
    }
    Ok(records)
}

/// Writes a signal as `n,re,im` rows.
pub fn write_signal(mut w: impl Write, x: &ComplexSignal) -> Result<()> {
    writeln!(w, "n,re,im")?;
    for (n, s) in x.samples().iter().enumerate() {
        writeln!(w, "{n},{},{}", s.re, s.im)?;
    }
    Ok(())
}

/// Writes a signal CSV to `path`.
pub fn write_signal_csv(path: impl AsRef<Path>, x: &ComplexSignal) -> Result<()> {
    write_signal(BufWriter::new(File::create(path)?), x)
}

/// Reads a signal CSV; rows must cover `0..N−1` in ascending order.
pub fn read_signal_csv(path: impl AsRef<Path>) -> Result<ComplexSignal> {
    let path = path.as_ref();
    let mut samples = Vec::new();
    for (lineno, line) in read_records(path, "n,re,im")? {
        let cols = fields(&line, 3, path, lineno)?;
        let n: usize = parse_field(cols[0], "index", path, lineno)?;
        if n != samples.len() {
            return Err(parse_err(path, lineno, format!("expected index {}, got {n}", samples.len())));
        }
        let re: f64 = parse_field(cols[1], "re", path, lineno)?;
        let im: f64 = parse_field(cols[2], "im", path, lineno)?;
        samples.push(Complex64::new(re, im));
    }
    ComplexSignal::new(samples)
}

/// Writes a surface as row-major `p,k,value` rows.
pub fn write_map(mut w: impl Write, a: &AmbiguityMap) -> Result<()> {
    writeln!(w, "p,k,value")?;
    let n = a.n_len();
    for p in 0..n {
        for k in 0..n {
            writeln!(w, "{p},{k},{}", a.get(p, k))?;
        }
    }
    Ok(())
}

/// Writes a surface CSV plus its `<path>.meta.json` sidecar.
pub fn write_map_csv(path: impl AsRef<Path>, a: &AmbiguityMap) -> Result<()> {
    let path = path.as_ref();
    write_map(BufWriter::new(File::create(path)?), a)?;
    write_json(sidecar_path(path), &MetaSidecar { n_len: a.n_len() })
}

/// Reads a surface CSV. The grid size comes from the sidecar when present
/// and is otherwise inferred from the row count, which must be a perfect
/// square either way.
pub fn read_map_csv(path: impl AsRef<Path>) -> Result<AmbiguityMap> {
    let path = path.as_ref();
    let records = read_records(path, "p,k,value")?;
    let n = match read_sidecar(path)? {
        Some(meta) => meta.n_len,
        None => {
            let n = (records.len() as f64).sqrt().round() as usize;
            if n * n != records.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    reason: format!("{} rows do not fill a square grid", records.len()),
                });
            }
            n
        }
    };
    let mut entries = vec![0.0f64; n * n];
    let mut filled = vec![false; n * n];
    for (lineno, line) in records {
        let cols = fields(&line, 3, path, lineno)?;
        let p: usize = parse_field(cols[0], "p", path, lineno)?;
        let k: usize = parse_field(cols[1], "k", path, lineno)?;
        if p >= n || k >= n {
            return Err(parse_err(path, lineno, format!("cell ({p},{k}) outside {n}×{n} grid")));
        }
        if std::mem::replace(&mut filled[p * n + k], true) {
            return Err(parse_err(path, lineno, format!("duplicate cell ({p},{k})")));
        }
        entries[p * n + k] = parse_field(cols[2], "value", path, lineno)?;
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            reason: format!("cell ({},{}) missing", missing / n, missing % n),
        });
    }
    AmbiguityMap::from_entries(n, entries)
}

fn read_sidecar(path: &Path) -> Result<Option<MetaSidecar>> {
    let sidecar = sidecar_path(path);
    if sidecar.exists() { read_json(sidecar).map(Some) } else { Ok(None) }
}

/// Writes an inner-product map as row-major `p,k,re,im` rows.
pub fn write_inner_map(mut w: impl Write, m: &InnerProductMap) -> Result<()> {
    writeln!(w, "p,k,re,im")?;
    let n = m.n_len();
    for p in 0..n {
        for k in 0..n {
            let v = m.get(p, k);
            writeln!(w, "{p},{k},{},{}", v.re, v.im)?;
        }
    }
    Ok(())
}

/// Writes a mask as `p,k,kept` rows with 0/1 entries.
pub fn write_mask(mut w: impl Write, mask: &SamplingMask) -> Result<()> {
    writeln!(w, "p,k,kept")?;
    let n = mask.n_len();
    for p in 0..n {
        for k in 0..n {
            writeln!(w, "{p},{k},{}", u8::from(mask.is_kept(p, k)))?;
        }
    }
    Ok(())
}

/// Writes a mask CSV plus its `<path>.meta.json` sidecar.
pub fn write_mask_csv(path: impl AsRef<Path>, mask: &SamplingMask) -> Result<()> {
    let path = path.as_ref();
    write_mask(BufWriter::new(File::create(path)?), mask)?;
    write_json(sidecar_path(path), &MetaSidecar { n_len: mask.n_len() })
}

/// Reads a mask CSV back under the given mode. The pattern arrives as an
/// explicit table, so the result reports [`MaskKind::Custom`].
pub fn read_mask_csv(path: impl AsRef<Path>, mode: MaskMode) -> Result<SamplingMask> {
    let path = path.as_ref();
    let records = read_records(path, "p,k,kept")?;
    let n = match read_sidecar(path)? {
        Some(meta) => meta.n_len,
        None => {
            let n = (records.len() as f64).sqrt().round() as usize;
            if n * n != records.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    reason: format!("{} rows do not fill a square grid", records.len()),
                });
            }
            n
        }
    };
    let mut kept = vec![false; n * n];
    let mut filled = vec![false; n * n];
    for (lineno, line) in records {
        let cols = fields(&line, 3, path, lineno)?;
        let p: usize = parse_field(cols[0], "p", path, lineno)?;
        let k: usize = parse_field(cols[1], "k", path, lineno)?;
        if p >= n || k >= n {
            return Err(parse_err(path, lineno, format!("cell ({p},{k}) outside {n}×{n} grid")));
        }
        if std::mem::replace(&mut filled[p * n + k], true) {
            return Err(parse_err(path, lineno, format!("duplicate cell ({p},{k})")));
        }
        kept[p * n + k] = match cols[2] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(path, lineno, format!("bad kept flag {other:?}"))),
        };
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            reason: format!("cell ({},{}) missing", missing / n, missing % n),
        });
    }
    SamplingMask::from_kept(n, kept, mode, MaskKind::Custom)
}

/// Writes a solver trace. The `dist_truth` column appears exactly when the
/// run recorded distances against a ground truth.
pub fn write_trace(mut w: impl Write, trace: &SolverTrace) -> Result<()> {
    let with_dist = trace.rows.first().is_some_and(|row| row.dist_truth.is_some());
    if with_dist {
        writeln!(w, "t,mu,grad_norm,objective,dist_truth")?;
    } else {
        writeln!(w, "t,mu,grad_norm,objective")?;
    }
    for row in &trace.rows {
        write!(w, "{},{},{},{}", row.t, row.mu, row.grad_norm, row.objective)?;
        match (with_dist, row.dist_truth) {
            (true, Some(d)) => writeln!(w, ",{d}")?,
            (true, None) => writeln!(w, ",")?,
            (false, _) => writeln!(w)?,
        }
    }
    Ok(())
}

/// Writes a trace CSV to `path`.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &SolverTrace) -> Result<()> {
    write_trace(BufWriter::new(File::create(path)?), trace)
}

/// Writes a scenario's per-trial table as CSV with header
/// `trial,waveform_seed,status,rel_error,data_fit,success,rungs,error`.
/// Numeric columns are empty on failed trials; the error column is empty
/// on recovered ones (commas in messages are replaced to keep the row
/// parseable).
pub fn write_trials(mut w: impl Write, trials: &[TrialSummary]) -> Result<()> {
    writeln!(w, "trial,waveform_seed,status,rel_error,data_fit,success,rungs,error")?;
    for t in trials {
        match &t.outcome {
            TrialOutcome::Recovered { rel_error, data_fit, success, rungs } => writeln!(
                w,
                "{},{},recovered,{},{},{},{},",
                t.trial, t.waveform_seed, rel_error, data_fit, success, rungs
            )?,
            TrialOutcome::Failed { error } => writeln!(
                w,
                "{},{},failed,,,,,{}",
                t.trial,
                t.waveform_seed,
                error.replace(',', ";")
            )?,
        }
    }
    Ok(())
}

/// Writes a per-trial CSV to `path`.
pub fn write_trials_csv(path: impl AsRef<Path>, trials: &[TrialSummary]) -> Result<()> {
    write_trials(BufWriter::new(File::create(path)?), trials)
}

/// Writes a success-rate map as plot-ready CSV with header
/// `delta,removal,rate`, one row per grid cell in row-major (δ-outer)
/// order.
pub fn write_success_map(mut w: impl Write, map: &SuccessRateMap) -> Result<()> {
    writeln!(w, "delta,removal,rate")?;
    for (d, delta) in map.delta_grid.iter().enumerate() {
        for (r, removal) in map.removal_grid.iter().enumerate() {
            writeln!(w, "{delta},{removal},{}", map.rates[d][r])?;
        }
    }
    Ok(())
}

/// Writes a success-rate map CSV to `path`.
pub fn write_success_map_csv(path: impl AsRef<Path>, map: &SuccessRateMap) -> Result<()> {
    write_success_map(BufWriter::new(File::create(path)?), map)
}

/// Writes an initializer comparison as plot-ready CSV with header
/// `removal,snr_db,seed_error,refined_error`; the SNR column is empty for
/// noiseless cells.
pub fn write_init_comparison(mut w: impl Write, table: &InitComparison) -> Result<()> {
    writeln!(w, "removal,snr_db,seed_error,refined_error")?;
    for (r, removal) in table.removal_grid.iter().enumerate() {
        for (s, snr) in table.snr_list.iter().enumerate() {
            let cell = &table.cells[r][s];
            match snr {
                Some(db) => writeln!(
                    w,
                    "{removal},{db},{},{}",
                    cell.seed_error, cell.refined_error
                )?,
                None => writeln!(
                    w,
                    "{removal},,{},{}",
                    cell.seed_error, cell.refined_error
                )?,
            }
        }
    }
    Ok(())
}

/// Writes an initializer-comparison CSV to `path`.
pub fn write_init_comparison_csv(
    path: impl AsRef<Path>,
    table: &InitComparison,
) -> Result<()> {
    write_init_comparison(BufWriter::new(File::create(path)?), table)
}

/// Reads any serde-deserializable JSON value from `path`.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    serde_json::from_reader(file).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Writes a value as pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    Ok(())
}

/// Serializes a value to the pretty JSON string used by [`write_json`].
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
