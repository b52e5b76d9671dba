//! Monte-Carlo convergence study: runs every (p, replicate) cell, then
//! writes `results.csv`, `summary.json`, one `fig_p<value>.svg` per exponent,
//! `config.echo` and `run.log`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{aggregate_levels, estimate_rate, monte_carlo_outcomes, McLevel, McRecord, PathError, RateEstimate};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fem::FemOperators;
use crate::mesh::Mesh;
use crate::plot;
use crate::psolver::InteriorSystem;

pub const CSV_HEADER: &str = "p,tau,replicate,E_total,E_maxL2,E_quasi";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentSummary {
    pub p: f64,
    pub levels: Vec<McLevel>,
    pub estimate: Option<RateEstimate>,
    pub estimate_error: Option<String>,
    /// Replicates with no row in the table.
    pub failed_replicates: Vec<usize>,
    #[serde(default)]
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tau_ref: f64,
    pub fit_taus: Vec<f64>,
    pub n_r: usize,
    pub exponents: Vec<ExponentSummary>,
}

impl Summary {
    pub fn failed_cells(&self) -> usize {
        self.exponents.iter().map(|e| e.failed_replicates.len()).sum()
    }
}

/// Aggregates the result table. Depends on nothing but the rows and the
/// configuration, so `summary.json` can be rebuilt from `results.csv`.
pub fn summarize(records: &[McRecord], cfg: &ExperimentConfig) -> Summary {
    let exponents = cfg
        .p_list
        .iter()
        .map(|&p| {
            let mut rows: Vec<McRecord> = records.iter().filter(|r| r.p == p).cloned().collect();
            rows.sort_by_key(|r| r.replicate);
            let present: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.replicate).collect();
            let failed_replicates = (0..cfg.n_r).filter(|r| !present.contains(r)).collect();
            let levels = aggregate_levels(&rows, &cfg.tau_ladder);
            let (estimate, estimate_error) = match estimate_rate(&levels, &cfg.fit_taus, cfg.tau_ref) {
                Ok(e) => (Some(e), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ExponentSummary {
                p,
                levels,
                estimate,
                estimate_error,
                failed_replicates,
                failures: Vec::new(),
            }
        })
        .collect();
    Summary {
        tau_ref: cfg.tau_ref,
        fit_taus: cfg.fit_taus.clone(),
        n_r: cfg.n_r,
        exponents,
    }
}

pub fn write_csv<W: Write>(records: &[McRecord], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{:?},{:?},{},{:e},{:e},{:e}",
            r.p, r.tau, r.replicate, r.error.total, r.error.max_l2_sq, r.error.quasi_sum
        )?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<McRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if n == 1 {
            if line.trim() != CSV_HEADER {
                return Err(Error::Parse { line: n, msg: format!("expected header {CSV_HEADER:?}") });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse { line: n, msg: format!("expected 6 fields, got {}", fields.len()) });
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: n, msg: format!("bad number {:?}", fields[k]) })
        };
        let replicate = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line: n, msg: format!("bad replicate {:?}", fields[2]) })?;
        out.push(McRecord {
            p: num(0)?,
            tau: num(1)?,
            replicate,
            error: PathError { total: num(3)?, max_l2_sq: num(4)?, quasi_sum: num(5)? },
        });
    }
    Ok(out)
}

pub fn figure_name(p: f64) -> String {
    format!("fig_p{p}.svg")
}

/// Writes one SVG per exponent into `dir`.
pub fn write_figures(summary: &Summary, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for e in &summary.exponents {
        let svg = plot::render(e.p, &e.levels, e.estimate.as_ref(), &summary.fit_taus);
        let path = dir.join(figure_name(e.p));
        fs::write(&path, svg)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summary: Summary,
    pub records: Vec<McRecord>,
    pub output_dir: PathBuf,
}

/// Runs the study on a pool of `workers` threads (`None`: one per core).
/// Failing cells are logged and listed in the summary; the run goes on.
pub fn run_experiment(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.echo"), cfg.echo())?;
    let mut log = BufWriter::new(File::create(dir.join("run.log"))?);

    let mesh = Arc::new(Mesh::unit_square(cfg.mesh_n)?);
    let system = InteriorSystem::new(FemOperators::assemble_shared(mesh)?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::input(format!("worker pool: {e}")))?;
    info!("running {} exponents x {} replicates on {} workers", cfg.p_list.len(), cfg.n_r, pool.current_num_threads());

    let mut records = Vec::new();
    let mut failures: Vec<(f64, Failure)> = Vec::new();
    for &p in &cfg.p_list {
        let outcomes = pool.install(|| monte_carlo_outcomes(cfg, p, &system));
        for o in outcomes {
            let line = match &o.result {
                Ok(_) => json!({
                    "event": "replicate", "p": p, "replicate": o.replicate, "status": "ok",
                    "newton_iterations": o.newton_iterations, "max_kkt_residual": o.max_kkt_residual,
                }),
                Err(msg) => json!({
                    "event": "replicate", "p": p, "replicate": o.replicate, "status": "failed",
                    "newton_iterations": o.newton_iterations, "message": msg,
                }),
            };
            writeln!(log, "{line}")?;
            match o.result {
                Ok(rows) => records.extend(rows),
                Err(message) => {
                    warn!("p={p} replicate {} failed: {message}", o.replicate);
                    failures.push((p, Failure { replicate: o.replicate, message }));
                }
            }
        }
    }

    let mut summary = summarize(&records, cfg);
    for (p, f) in failures {
        if let Some(e) = summary.exponents.iter_mut().find(|e| e.p == p) {
            e.failures.push(f);
        }
    }
    for e in &summary.exponents {
        let line = match &e.estimate {
            Some(r) => json!({
                "event": "rate", "p": e.p, "a_biased": r.a_biased, "slope_std": r.slope_std,
                "a_corrected": r.correction.map(|c| c.a), "alpha": r.correction.map(|c| c.alpha),
                "correction_error": r.correction_error,
            }),
            None => json!({ "event": "rate", "p": e.p, "error": e.estimate_error }),
        };
        writeln!(log, "{line}")?;
    }
    log.flush()?;

    write_csv(&records, BufWriter::new(File::create(dir.join("results.csv"))?))?;
    let json = serde_json::to_string_pretty(&summary).map_err(std::io::Error::from)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    write_figures(&summary, &dir)?;
    Ok(ExperimentReport { summary, records, output_dir: dir })
}

/// Re-renders figures from a persisted table. The configuration is taken
/// from `config.echo` next to the CSV when present; otherwise τ̃ is the
/// smallest step in the table and every larger step enters the fit.
pub fn replot(csv: &Path) -> Result<Vec<PathBuf>> {
    let records = read_csv(File::open(csv)?)?;
    if records.is_empty() {
        return Err(Error::input("results table has no rows"));
    }
    let dir = csv.parent().map(Path::to_path_buf).unwrap_or_default();
    let echo = dir.join("config.echo");
    let cfg = if echo.exists() {
        ExperimentConfig::parse(File::open(echo)?)?
    } else {
        let mut taus: Vec<f64> = Vec::new();
        let mut ps: Vec<f64> = Vec::new();
        for r in &records {
            if !taus.contains(&r.tau) {
                taus.push(r.tau);
            }
            if !ps.contains(&r.p) {
                ps.push(r.p);
            }
        }
        taus.sort_by(|a, b| b.total_cmp(a));
        let tau_ref = *taus.last().expect("nonempty");
        ExperimentConfig {
            p_list: ps,
            fit_taus: taus.iter().copied().filter(|&t| t > tau_ref).collect(),
            tau_ladder: taus,
            tau_ref,
            n_r: records.iter().map(|r| r.replicate + 1).max().unwrap_or(1),
            ..ExperimentConfig::default()
        }
    };
    write_figures(&summarize(&records, &cfg), &dir)
}
