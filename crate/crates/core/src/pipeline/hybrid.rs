//! Streaming estimates until the recovery time `T*`, then a single ℓ2 batch
//! solve held for the rest of the horizon.

use log::{info, warn};

use super::config::{ExperimentConfig, RuleKind};
use super::timeline::TimelineRecord;
use super::{fan_out, mean_l2_loss, score, Metrics, PartialRun, Replicate, Truth};
use crate::batch::{l2_estimator, BatchMethod, TheoryBounds};
use crate::error::Result;
use crate::markov::MarkovMatrix;
use crate::realization::{realize, RealizedModel};
use crate::streaming::{beta_threshold, default_radius, StepRule, StreamState};

/// Receives each realized model as the pipeline produces it.
pub trait Controller {
    fn update(&mut self, t: usize, model: &RealizedModel);
}

/// Controller that ignores its input.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoController;

impl Controller for NoController {
    fn update(&mut self, _t: usize, _model: &RealizedModel) {}
}

/// Projection radius from the configuration, or the loose bound built from
/// the system norms.
pub fn radius(cfg: &ExperimentConfig, rep: &Replicate, k: usize) -> f64 {
    cfg.stream.radius.unwrap_or_else(|| {
        default_radius(
            rep.system.d.norm(),
            rep.cert.psi,
            k,
            rep.system.c.norm(),
            rep.system.b.norm(),
        )
    })
}

pub fn step_rule(cfg: &ExperimentConfig, kind: RuleKind, rep: &Replicate, theory: &TheoryBounds) -> StepRule {
    let s = &cfg.stream;
    match kind {
        RuleKind::Best => StepRule::Best {
            alpha: s.alpha,
            point: s.point,
        },
        RuleKind::Polyak => StepRule::Polyak {
            alpha: s.alpha,
            point: s.point,
        },
        RuleKind::Projected => {
            let r = radius(cfg, rep, theory.k);
            let beta = s
                .beta
                .unwrap_or_else(|| 2.0 * beta_threshold(r, theory.q, cfg.sigma));
            let rule = StepRule::projected(beta, r);
            rule.check_beta(theory.q, cfg.sigma);
            rule
        }
    }
}

/// A streaming state for `kind`, with the oracle attached when the
/// configuration allows it.
pub fn stream_state(
    cfg: &ExperimentConfig,
    rep: &Replicate,
    kind: RuleKind,
    batch_size: usize,
    theory: &TheoryBounds,
) -> Result<StreamState> {
    let k = rep.g_star.k;
    let rule = step_rule(cfg, kind, rep, theory);
    let mut state = StreamState::new(rep.system.r(), rep.system.m(), k, rule, rep.estimator_rng())?;
    if cfg.oracle {
        state = state.with_oracle(rep.g_star.g.clone())?;
    }
    if batch_size > 1 {
        state = state.with_minibatch(batch_size, cfg.stream.buffer_cap)?;
    }
    Ok(state)
}

/// `T*` from the configuration, or the theory scale rounded up to a multiple
/// of `k` and capped at the largest multiple of `k` within `t_total`.
pub fn recovery_time(cfg: &ExperimentConfig, theory: &TheoryBounds) -> usize {
    let k = cfg.k;
    if let Some(t) = cfg.t_star {
        return t;
    }
    let cap = cfg.t_total / k * k;
    let scaled = (theory.t_star_scale / k as f64).ceil().max(1.0);
    let t = if scaled * (k as f64) > cap as f64 {
        warn!(
            "theory recovery time {:.0} exceeds t_total = {}; using {cap}",
            theory.t_star_scale, cfg.t_total
        );
        cap
    } else {
        scaled as usize * k
    };
    t.max(k)
}

fn record(
    cfg: &ExperimentConfig,
    rep: &Replicate,
    truth: Option<&Truth>,
    t: usize,
    estimator: &str,
    markov: &MarkovMatrix,
    controller: &mut dyn Controller,
) -> Result<TimelineRecord> {
    let metrics = match truth {
        Some(truth) => score(markov, truth)?,
        None => Metrics::default(),
    };
    match realize(markov, cfg.truncation_order()) {
        Ok(model) => controller.update(t, &model),
        Err(e) if e.is_numerical() => warn!("realization at t = {t} failed: {e}"),
        Err(e) => return Err(e),
    }
    Ok(TimelineRecord {
        t,
        estimator: estimator.to_string(),
        err_fro: metrics.err_fro,
        err_spec: metrics.err_spec,
        hankel_err: metrics.hankel_err,
        d_err: metrics.d_err,
        objective: mean_l2_loss(&rep.data.before_time(t), &markov.g),
        seed: rep.seed,
        k: markov.k,
    })
}

/// Timeline of replicate `index`: streaming records at `t = k, 2k, …` below
/// `T*`, then the batch ℓ2 estimate at `T*, T*+k, …, t_total`.
pub fn run_hybrid_replicate(
    cfg: &ExperimentConfig,
    index: usize,
    controller: &mut dyn Controller,
) -> std::result::Result<Vec<TimelineRecord>, PartialRun> {
    let k = cfg.k;
    let rep = Replicate::generate(cfg, index, k, cfg.t_total)?;
    let truth = if cfg.oracle {
        Some(Truth::new(&rep, true)?)
    } else {
        None
    };
    let theory = rep.theory(cfg, k)?;
    let t_star = recovery_time(cfg, &theory);
    let mut records = Vec::new();
    let fail = |records: Vec<TimelineRecord>, error| PartialRun { records, error };

    let mut state = match stream_state(cfg, &rep, cfg.stream.rules[0], cfg.stream.batch_sizes[0], &theory) {
        Ok(s) => s,
        Err(e) => return Err(fail(records, e)),
    };
    let tag = state.tag();
    while state.t + k < t_star {
        let window = rep.data.window(state.t);
        if let Err(e) = state.advance(&window) {
            return Err(fail(records, e));
        }
        let markov = match MarkovMatrix::new(state.g.clone(), state.m, k) {
            Ok(m) => m,
            Err(e) => return Err(fail(records, e)),
        };
        match record(cfg, &rep, truth.as_ref(), state.t, &tag, &markov, controller) {
            Ok(r) => records.push(r),
            Err(e) => return Err(fail(records, e)),
        }
    }

    let opts = cfg.solver.options(BatchMethod::L2);
    let batch = match l2_estimator(&rep.data.before_time(t_star), &opts) {
        Ok(b) => b,
        Err(e) => return Err(fail(records, e)),
    };
    if !batch.converged {
        warn!("batch l2 solve at T* = {t_star} did not meet its tolerance");
    }
    info!(
        "replicate {index}: switched to batch_l2 at T* = {t_star} (stationarity {:?})",
        batch.stationarity
    );
    let mut t = t_star;
    while t <= cfg.t_total {
        match record(cfg, &rep, truth.as_ref(), t, BatchMethod::L2.tag(), &batch.markov, controller) {
            Ok(r) => records.push(r),
            Err(e) => return Err(fail(records, e)),
        }
        t += k;
    }
    Ok(records)
}

/// All replicates, concatenated in replicate order. On failure the records
/// of every replicate that finished, plus the failing one's partial
/// timeline, are returned with the first error.
pub fn run_hybrid(cfg: &ExperimentConfig, workers: usize) -> std::result::Result<Vec<TimelineRecord>, PartialRun> {
    cfg.validate()?;
    let results = fan_out(cfg.replicates, workers, |i| {
        run_hybrid_replicate(cfg, i, &mut NoController)
    })?;
    let mut records = Vec::new();
    for result in results {
        match result {
            Ok(r) => records.extend(r),
            Err(PartialRun { records: part, error }) => {
                records.extend(part);
                return Err(PartialRun { records, error });
            }
        }
    }
    Ok(records)
}
