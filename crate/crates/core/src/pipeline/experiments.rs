//! Batch and streaming error curves, and the two example reproductions.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::ExperimentConfig;
use super::hybrid::{radius, stream_state};
use super::timeline::{write_timeline, TimelineRecord};
use super::{fan_out, score, Replicate, Truth};
use crate::batch::estimate;
use crate::error::{Error, Result};
use crate::streaming::beta_threshold;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Paper,
    Desk,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::InvalidArgument(format!(
                "unknown scale {other:?}, expected paper or desk"
            ))),
        }
    }
}

const EXAMPLE1_PAPER: &str = include_str!("../../../../configs/example1_paper.json");
const EXAMPLE1_DESK: &str = include_str!("../../../../configs/example1_desk.json");
const EXAMPLE2_PAPER: &str = include_str!("../../../../configs/example2_paper.json");
const EXAMPLE2_DESK: &str = include_str!("../../../../configs/example2_desk.json");
const HYBRID_DESK: &str = include_str!("../../../../configs/hybrid_desk.json");
const DECAY_IN_K: &str = include_str!("../../../../configs/decay_in_k.json");

/// Names of the checked-in configurations.
pub const PRESETS: [&str; 6] = [
    "example1_paper",
    "example1_desk",
    "example2_paper",
    "example2_desk",
    "hybrid_desk",
    "decay_in_k",
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = match name {
        "example1_paper" => EXAMPLE1_PAPER,
        "example1_desk" => EXAMPLE1_DESK,
        "example2_paper" => EXAMPLE2_PAPER,
        "example2_desk" => EXAMPLE2_DESK,
        "hybrid_desk" => HYBRID_DESK,
        "decay_in_k" => DECAY_IN_K,
        other => return Err(Error::Config(format!("no preset named {other:?}"))),
    };
    ExperimentConfig::from_json(text)
}

/// Sample counts at which batch estimators are refit.
pub fn sample_grid(total: usize, every: Option<usize>) -> Vec<usize> {
    match every {
        Some(step) if step < total => {
            let mut grid: Vec<usize> = (1..=total / step).map(|i| i * step).collect();
            if grid.last() != Some(&total) {
                grid.push(total);
            }
            grid
        }
        _ => vec![total],
    }
}

/// Batch error-versus-sample-count curves for every order in the sweep and
/// every configured estimator. `t` holds the sample count. Rows are grouped
/// by order, then replicate, then sample count.
pub fn run_batch_curves(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<TimelineRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for k in cfg.orders() {
        let samples = cfg.sample_count(k);
        let grid = sample_grid(samples, cfg.record_every);
        let per_rep = fan_out(cfg.replicates, workers, |i| -> Result<Vec<TimelineRecord>> {
            let rep = Replicate::generate(cfg, i, k, samples + k - 1)?;
            let truth = if cfg.oracle {
                Some(Truth::new(&rep, false)?)
            } else {
                None
            };
            let mut rows = Vec::new();
            for &t in &grid {
                let data = rep.data.prefix(t);
                for &method in &cfg.estimators {
                    let est = estimate(&data, &cfg.solver.options(method))?;
                    let metrics = match &truth {
                        Some(truth) => score(&est.markov, truth)?,
                        None => Default::default(),
                    };
                    rows.push(TimelineRecord {
                        t,
                        estimator: method.tag().to_string(),
                        err_fro: metrics.err_fro,
                        err_spec: metrics.err_spec,
                        hankel_err: None,
                        d_err: metrics.d_err,
                        objective: Some(est.objective),
                        seed: rep.seed,
                        k,
                    });
                }
            }
            Ok(rows)
        })?;
        for rows in per_rep {
            out.extend(rows?);
        }
    }
    Ok(out)
}

/// Streaming error-versus-time curves for every rule and batch size, recorded
/// at multiples of `record_every` (default `k`). The objective column is the
/// mean ℓ2 loss over the `k` samples before `t`. Rows are grouped by
/// replicate, then rule, then batch size.
pub fn run_stream_curves(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<TimelineRecord>> {
    cfg.validate()?;
    let k = cfg.k;
    let every = cfg.record_every.unwrap_or(k).max(1);
    let per_rep = fan_out(cfg.replicates, workers, |i| -> Result<Vec<TimelineRecord>> {
        let rep = Replicate::generate(cfg, i, k, cfg.t_total)?;
        let truth = if cfg.oracle {
            Some(Truth::new(&rep, false)?)
        } else {
            None
        };
        let theory = rep.theory(cfg, k)?;
        let mut rows = Vec::new();
        for &rule in &cfg.stream.rules {
            for &bs in &cfg.stream.batch_sizes {
                let mut state = stream_state(cfg, &rep, rule, bs, &theory)?;
                let tag = state.tag();
                loop {
                    if state.t % every == 0 {
                        let markov = crate::markov::MarkovMatrix::new(state.g.clone(), state.m, k)?;
                        let metrics = match &truth {
                            Some(truth) => score(&markov, truth)?,
                            None => Default::default(),
                        };
                        rows.push(TimelineRecord {
                            t: state.t,
                            estimator: tag.clone(),
                            err_fro: metrics.err_fro,
                            err_spec: metrics.err_spec,
                            hankel_err: None,
                            d_err: metrics.d_err,
                            objective: recent_loss(&rep, state.t, &state.g),
                            seed: rep.seed,
                            k,
                        });
                    }
                    if state.t + k > cfg.t_total {
                        break;
                    }
                    let window = rep.data.window(state.t);
                    state.advance(&window)?;
                }
            }
        }
        Ok(rows)
    })?;
    let mut out = Vec::new();
    for rows in per_rep {
        out.extend(rows?);
    }
    Ok(out)
}

/// Mean ℓ2 loss over the samples at times `t−k..t`.
fn recent_loss(rep: &Replicate, t: usize, g: &crate::linalg::Matrix) -> Option<f64> {
    let window = rep.data.window(t.checked_sub(rep.g_star.k)?);
    if window.is_empty() {
        return None;
    }
    let total: f64 = window.iter().map(|s| (&s.y - g * &s.u).norm()).sum();
    Some(total / window.len() as f64)
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, File)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path)?;
    Ok((path, file))
}

/// Writes batch curves to `example1_k{k}.csv`, one file per order.
pub fn write_batch_curves(records: &[TimelineRecord], orders: &[usize], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for &k in orders {
        let rows: Vec<TimelineRecord> = records.iter().filter(|r| r.k == k).cloned().collect();
        let (path, file) = create(dir, &format!("example1_k{k}.csv"))?;
        write_timeline(&rows, file)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Batch estimator curves of the example1 preset at `scale`.
pub fn run_example1(scale: Scale, workers: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg = match scale {
        Scale::Paper => preset("example1_paper")?,
        Scale::Desk => preset("example1_desk")?,
    };
    example1_with(&cfg, workers, out_dir)
}

pub fn example1_with(cfg: &ExperimentConfig, workers: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let records = run_batch_curves(cfg, workers)?;
    write_batch_curves(&records, &cfg.orders(), out_dir)
}

/// Streaming curves of the example2 preset in `example2.csv`, plus per-seed theory
/// quantities in `example2_theory.csv`.
pub fn run_example2(scale: Scale, workers: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg = match scale {
        Scale::Paper => preset("example2_paper")?,
        Scale::Desk => preset("example2_desk")?,
    };
    example2_with(&cfg, workers, out_dir)
}

pub fn example2_with(cfg: &ExperimentConfig, workers: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let records = run_stream_curves(cfg, workers)?;
    let (curves, file) = create(out_dir, "example2.csv")?;
    write_timeline(&records, file)?;
    let (theory_path, file) = create(out_dir, "example2_theory.csv")?;
    write_theory(cfg, workers, file)?;
    Ok(vec![curves, theory_path])
}

pub const THEORY_HEADER: &str = "seed,k,q,nu,rho,t_star_scale,error_bound,radius,beta_threshold";

/// One row of theory quantities per replicate.
pub fn write_theory<W: Write>(cfg: &ExperimentConfig, workers: usize, out: W) -> Result<()> {
    let k = cfg.k;
    let rows = fan_out(cfg.replicates, workers, |i| -> Result<String> {
        // Only the system matters here; a single-window trajectory suffices.
        let rep = Replicate::generate(cfg, i, k, k)?;
        let th = rep.theory(cfg, k)?;
        let r = radius(cfg, &rep, k);
        Ok(format!(
            "{},{k},{},{},{},{},{},{r},{}",
            rep.seed,
            th.q,
            th.nu,
            th.rho,
            th.t_star_scale,
            th.error_bound,
            beta_threshold(r, th.q, cfg.sigma)
        ))
    })?;
    let mut out = BufWriter::new(out);
    writeln!(out, "{THEORY_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row?)?;
    }
    out.flush()?;
    Ok(())
}
