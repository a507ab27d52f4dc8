//! Experiment orchestration: the hybrid streaming-then-batch pipeline, the
//! example1 and example2 runs, and replicate fan-out.

pub mod config;
pub mod experiments;
pub mod hybrid;
pub mod timeline;

use std::fmt;

use log::warn;
use rayon::prelude::*;

use crate::batch::{theory_bounds, TheoryBounds, TheoryParams};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::markov::{build_dataset_with_order, true_markov, MarkovMatrix, RegressorDataset};
use crate::realization::{estimated_hankels, hankel_error, hankel_true_truncated, TruncatedHankel, TRUNC_TOL};
use crate::rng::{from_seed, replicate_seed, SimRng};
use crate::simkit::{simulate, verify_stability, StabilityCert, SystemModel, Trajectory};

pub use config::{ExperimentConfig, RuleKind, CONFIG_SCHEMA, SEED_ENV};
pub use experiments::{run_batch_curves, run_example1, run_example2, run_stream_curves, Scale};
pub use hybrid::{run_hybrid, run_hybrid_replicate, Controller, NoController};
pub use timeline::{read_timeline, write_timeline, TimelineRecord, TIMELINE_HEADER};

/// Records produced before a failure, together with the failure.
#[derive(Debug)]
pub struct PartialRun {
    pub records: Vec<TimelineRecord>,
    pub error: Error,
}

impl fmt::Display for PartialRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} records)", self.error, self.records.len())
    }
}

impl std::error::Error for PartialRun {}

impl From<Error> for PartialRun {
    fn from(error: Error) -> Self {
        PartialRun {
            records: Vec::new(),
            error,
        }
    }
}

/// Runs `job(i)` for `i in 0..count` on a pool of `workers` threads and
/// returns the results in index order.
pub fn fan_out<T, F>(count: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(&job).collect()))
}

/// Everything a replicate needs: its seed, system, truth and data.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    pub system: SystemModel,
    pub cert: StabilityCert,
    pub g_star: MarkovMatrix,
    pub trajectory: Trajectory,
    pub data: RegressorDataset,
}

impl Replicate {
    /// Draws the system (unless fixed) and a trajectory of `total` steps
    /// regressed at order `k`. Stream 0 of the replicate seed drives the
    /// simulation; stream 1 is left for the estimators.
    pub fn generate(cfg: &ExperimentConfig, index: usize, k: usize, total: usize) -> Result<Self> {
        let seed = replicate_seed(cfg.seed, index as u64);
        let mut rng = from_seed(seed);
        let system = cfg.build_system(&mut rng)?;
        let cert = verify_stability(&system, crate::realization::CERT_HORIZON)?;
        let attack = cfg.attack.model(system.n(), k)?;
        let x0 = cfg.x0.vector(system.n())?;
        let trajectory = simulate(&system, &attack, &x0, total, cfg.sigma, k, &mut rng)?;
        let data = build_dataset_with_order(&trajectory, k)?;
        Ok(Self {
            index,
            seed,
            g_star: true_markov(&system, k)?,
            system,
            cert,
            trajectory,
            data,
        })
    }

    pub fn estimator_rng(&self) -> SimRng {
        crate::rng::substream(self.seed, 1)
    }

    pub fn theory(&self, cfg: &ExperimentConfig, k: usize) -> Result<TheoryBounds> {
        theory_bounds(
            &self.system,
            &self.cert,
            &TheoryParams {
                p: cfg.attack.probability(k),
                k,
                sigma: cfg.sigma,
                eta: cfg.eta(),
                delta: cfg.delta,
                c_tstar: cfg.c_tstar,
            },
        )
    }
}

/// Ground truth used to score estimates.
#[derive(Debug, Clone)]
pub struct Truth {
    pub g_star: MarkovMatrix,
    pub d: Matrix,
    pub hankel: Option<TruncatedHankel>,
}

impl Truth {
    pub fn new(rep: &Replicate, with_hankel: bool) -> Result<Self> {
        let hankel = if with_hankel {
            Some(hankel_true_truncated(&rep.system, TRUNC_TOL)?)
        } else {
            None
        };
        Ok(Self {
            g_star: rep.g_star.clone(),
            d: rep.system.d.clone(),
            hankel,
        })
    }
}

/// Error columns of a record.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub err_fro: Option<f64>,
    pub err_spec: Option<f64>,
    pub hankel_err: Option<f64>,
    pub d_err: Option<f64>,
}

pub fn score(estimate: &MarkovMatrix, truth: &Truth) -> Result<Metrics> {
    let diff = &estimate.g - &truth.g_star.g;
    let hankel_err = match &truth.hankel {
        Some(h) => match estimated_hankels(estimate) {
            Ok((h0, _)) => Some(hankel_error(&h.hankel, &h0)?),
            Err(e) => {
                warn!("no Hankel error for this estimate: {e}");
                None
            }
        },
        None => None,
    };
    Ok(Metrics {
        err_fro: Some(diff.norm()),
        err_spec: Some(linalg::dense_spectral_norm(&diff)),
        hankel_err,
        d_err: Some(linalg::dense_spectral_norm(&(estimate.feedthrough() - &truth.d))),
    })
}

/// Mean per-sample ℓ2 loss `‖y_t − G U_t‖₂` over `data`.
pub fn mean_l2_loss(data: &RegressorDataset, g: &Matrix) -> Option<f64> {
    if data.is_empty() {
        return None;
    }
    Some(crate::batch::l2_objective(data, g) / data.len() as f64)
}
