//! Output-file emission: atomic writes, CSV tables, the fit summary JSON
//! and the aligned benchmark text table.
//!
//! Floats are written with Rust's shortest round-trip formatting, so files
//! are byte-identical across reruns and parse back to the exact values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use locker::simbench::BenchReport;
use locker::tuning::{CvCell, EbicBreakdown, GridCell};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Writes `content` to `dir/name` via a temp file and rename.
pub fn write_atomic(dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, content).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Serializable mirror of the criterion breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EbicJson {
    pub dev: f64,
    pub df: f64,
    pub n0: usize,
    pub nu: f64,
    pub score: f64,
}

impl From<&EbicBreakdown> for EbicJson {
    fn from(b: &EbicBreakdown) -> Self {
        EbicJson {
            dev: b.dev,
            df: b.df,
            n0: b.n0,
            nu: b.nu,
            score: b.score,
        }
    }
}

/// Everything needed to reproduce and re-evaluate a fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub family: String,
    pub kernel: String,
    pub bandwidth: f64,
    pub degree: usize,
    pub l: usize,
    pub l_selected_by_cv: bool,
    /// Domain of the fitted model (after rescaling).
    pub domain: [f64; 2],
    /// Domain of the raw input times.
    pub input_domain: [f64; 2],
    pub rho: f64,
    pub lambda: f64,
    pub ebic: EbicJson,
    pub iterations: usize,
    pub converged: bool,
    pub active_set_size: usize,
    pub n_subjects: usize,
    pub total_pairs: usize,
    pub retained_pairs: usize,
    pub seed: u64,
    /// Stacked coefficients, intercept block first.
    pub gamma: Vec<f64>,
}

pub fn write_fit_summary(dir: &Path, summary: &FitSummary) -> Result<PathBuf, CliError> {
    let mut body = serde_json::to_string_pretty(summary)
        .map_err(|e| CliError::numeric(format!("summary serialization: {e}")))?;
    body.push('\n');
    write_atomic(dir, "fit_summary.json", &body)
}

pub fn read_fit_summary(path: &Path) -> Result<FitSummary, CliError> {
    let body = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&body)
        .map_err(|e| CliError::usage(format!("{}: not a fit summary: {e}", path.display())))
}

/// Curve grid CSV: `t,beta0_hat,beta1_hat` at `points` equally spaced t.
pub fn curves_csv(
    points: usize,
    domain: (f64, f64),
    mut beta: impl FnMut(f64) -> (f64, f64),
) -> String {
    let mut out = String::from("t,beta0_hat,beta1_hat\n");
    for i in 0..points {
        let t = domain.0 + (domain.1 - domain.0) * i as f64 / (points - 1) as f64;
        let (b0, b1) = beta(t);
        let _ = writeln!(out, "{t},{b0},{b1}");
    }
    out
}

/// Truth grid CSV: `t,beta0,beta1`.
pub fn truth_csv(points: usize, mut truth: impl FnMut(f64) -> (f64, f64)) -> String {
    let mut out = String::from("t,beta0,beta1\n");
    for i in 0..points {
        let t = i as f64 / (points - 1) as f64;
        let (b0, b1) = truth(t);
        let _ = writeln!(out, "{t},{b0},{b1}");
    }
    out
}

/// Observation CSV in the two-file schema.
pub fn observations_csv(rows: impl Iterator<Item = (String, f64, f64)>) -> String {
    let mut out = String::from("subject_id,time,value\n");
    for (id, time, value) in rows {
        let _ = writeln!(out, "{id},{time},{value}");
    }
    out
}

pub fn ebic_table_csv(table: &[GridCell]) -> String {
    let mut out = String::from("rho,lambda,dev,df,n0,score,error\n");
    for cell in table {
        match (&cell.ebic, &cell.error) {
            (Some(b), _) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},",
                    cell.rho, cell.lambda, b.dev, b.df, b.n0, b.score
                );
            }
            (None, err) => {
                let msg = err.as_deref().unwrap_or("failed").replace(',', ";");
                let _ = writeln!(out, "{},{},,,,,{}", cell.rho, cell.lambda, msg);
            }
        }
    }
    out
}

pub fn cv_table_csv(table: &[CvCell]) -> String {
    let mut out = String::from("l,fold,score,note\n");
    for cell in table {
        let score = cell.score.map(|s| s.to_string()).unwrap_or_default();
        let note = cell.note.as_deref().unwrap_or("").replace(',', ";");
        let _ = writeln!(out, "{},{},{},{}", cell.l, cell.fold, score, note);
    }
    out
}

fn fmt_opt_pair(p: Option<(f64, f64)>) -> (String, String) {
    match p {
        Some((m, s)) => (m.to_string(), s.to_string()),
        None => (String::new(), String::new()),
    }
}

/// One row per scenario. Wall-clock time is intentionally excluded so reruns
/// are byte-identical.
pub fn bench_csv(report: &BenchReport) -> String {
    let mut out = String::from(
        "scenario,family,sparse,synchronous,n,m,replicates,successes,failures,\
         ise0_mean,ise0_sd,ise1_mean,ise1_sd,tp_mean,tp_sd,fn_mean,fn_sd,\
         lambda_nonzero_rate,mean_bandwidth,clamp_rate\n",
    );
    for row in &report.rows {
        let sc = &row.scenario;
        let (tp_m, tp_s) = fmt_opt_pair(row.tp);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            sc.name,
            sc.family.name(),
            sc.sparse,
            sc.synchronous,
            sc.n,
            sc.m,
            row.replicates,
            row.successes,
            row.failures,
            row.ise0.0,
            row.ise0.1,
            row.ise1.0,
            row.ise1.1,
            tp_m,
            tp_s,
            row.fn_rate.0,
            row.fn_rate.1,
            row.lambda_nonzero_rate,
            row.mean_bandwidth,
            row.mean_clamp_rate,
        );
    }
    out
}

fn mean_sd_cell(p: Option<(f64, f64)>) -> String {
    match p {
        Some((m, s)) => format!("{m:.4} ({s:.4})"),
        None => "--".to_string(),
    }
}

/// Aligned plain-text table, one scenario per row, mean with sd in
/// parentheses.
pub fn bench_text(report: &BenchReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>4} {:>6} {:>4} {:>5} {:>18} {:>18} {:>18} {:>18}",
        "scenario", "n", "m", "R", "fail", "ISE0", "ISE1", "TP", "FN"
    );
    for row in &report.rows {
        let sc = &row.scenario;
        let _ = writeln!(
            out,
            "{:<28} {:>4} {:>6} {:>4} {:>5} {:>18} {:>18} {:>18} {:>18}",
            sc.name,
            sc.n,
            sc.m,
            row.replicates,
            row.failures,
            mean_sd_cell(Some(row.ise0)),
            mean_sd_cell(Some(row.ise1)),
            mean_sd_cell(row.tp),
            mean_sd_cell(Some(row.fn_rate)),
        );
    }
    out
}
