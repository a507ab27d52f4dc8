//! Stochastic subgradient descent on the per-sample loss
//! `f_t(G) = ‖y_{t+k−1} − G U_{t+k−1}‖₂`, producing estimates at multiples of
//! `k`.
//!
//! Three step rules are supported:
//!
//! * **best**: `θ = ⟨g, G − G*⟩ / ‖g‖²` (needs the true Markov matrix),
//! * **Polyak**: `θ = max((f_t(G) − f_t(G*)) / ‖g‖², 0)` (needs `f_t(G*)`),
//! * **projected**: `γ_t = kβ/(t+k)` followed by projection onto the
//!   Frobenius ball of radius `R` (needs no oracle).
//!
//! For the first two the applied step is chosen in `[αθ, (2−α)θ]`; either way
//! the distance to `G*` cannot grow.
//!
//! A zero residual yields the zero subgradient and the step is skipped, so the
//! division by `‖g‖²` never sees zero.

use std::collections::VecDeque;
use std::io::{BufWriter, Write};

use log::warn;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::batch::{MarkovEstimate, Provenance};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_dot, Matrix, Vector};
use crate::markov::{MarkovMatrix, RegressorDataset};
use crate::rng::SimRng;

/// Residual norms at or below this count as zero.
pub const ZERO_RESIDUAL: f64 = 1e-12;

/// Where inside `[αθ, (2−α)θ]` the step lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalPoint {
    Lower,
    #[default]
    Mid,
    Upper,
}

impl IntervalPoint {
    fn pick(self, alpha: f64, theta: f64) -> f64 {
        match self {
            IntervalPoint::Lower => alpha * theta,
            IntervalPoint::Mid => theta,
            IntervalPoint::Upper => (2.0 - alpha) * theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Best { alpha: f64, point: IntervalPoint },
    Polyak { alpha: f64, point: IntervalPoint },
    Projected { beta: f64, radius: f64 },
}

impl StepRule {
    pub fn best() -> Self {
        StepRule::Best {
            alpha: 1.0,
            point: IntervalPoint::Mid,
        }
    }

    pub fn polyak() -> Self {
        StepRule::Polyak {
            alpha: 1.0,
            point: IntervalPoint::Mid,
        }
    }

    pub fn projected(beta: f64, radius: f64) -> Self {
        StepRule::Projected { beta, radius }
    }

    pub fn needs_oracle(&self) -> bool {
        !matches!(self, StepRule::Projected { .. })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            StepRule::Best { .. } => "stream_best",
            StepRule::Polyak { .. } => "stream_polyak",
            StepRule::Projected { .. } => "stream_projected",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepRule::Best { alpha, .. } | StepRule::Polyak { alpha, .. } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "flexibility alpha must lie in (0, 1], got {alpha}"
                    )));
                }
            }
            StepRule::Projected { beta, radius } => {
                if !(beta > 0.0) || !(radius > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "projected rule needs beta > 0 and R > 0, got beta={beta}, R={radius}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Warns when `β` is at or below `√(2π)·R / ((1−2q)σ)`, the level the
    /// projected rule's convergence guarantee asks for.
    pub fn check_beta(&self, q: f64, sigma: f64) -> bool {
        if let StepRule::Projected { beta, radius } = *self {
            let threshold = beta_threshold(radius, q, sigma);
            if beta <= threshold {
                warn!("beta = {beta} is below the guarantee threshold {threshold:.4}");
                return false;
            }
        }
        true
    }
}

/// `√(2π)·R / ((1−2q)σ)`.
pub fn beta_threshold(radius: f64, q: f64, sigma: f64) -> f64 {
    (2.0 * std::f64::consts::PI).sqrt() * radius / ((1.0 - 2.0 * q) * sigma)
}

/// Radius `√(‖D‖_F² + ψ(k−1)‖C‖_F²‖B‖_F²)` from loose norm bounds.
pub fn default_radius(d_fro: f64, psi: f64, k: usize, c_fro: f64, b_fro: f64) -> f64 {
    (d_fro * d_fro + psi * (k as f64 - 1.0) * c_fro * c_fro * b_fro * b_fro).sqrt()
}

/// A subgradient of `f(G) = ‖y − G U‖₂` together with `f(G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgradient {
    pub g: Matrix,
    pub value: f64,
    pub zero_residual: bool,
}

pub fn subgradient(g: &Matrix, y: &Vector, u: &Vector) -> Subgradient {
    let resid = y - g * u;
    let value = resid.norm();
    if value <= ZERO_RESIDUAL {
        return Subgradient {
            g: Matrix::zeros(g.nrows(), g.ncols()),
            value,
            zero_residual: true,
        };
    }
    Subgradient {
        g: -(resid / value) * u.transpose(),
        value,
        zero_residual: false,
    }
}

/// Euclidean projection onto `{G : ‖G‖_F ≤ R}`.
pub fn project_ball(g: &Matrix, radius: f64) -> Matrix {
    let norm = g.norm();
    if norm <= radius {
        g.clone()
    } else {
        g * (radius / norm)
    }
}

/// One regression pair `(y_t, U_t^{(k)})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: usize,
    pub y: Vector,
    pub u: Vector,
}

impl RegressorDataset {
    /// The samples a streaming step at time `t` consumes: times
    /// `max(t, k−1)..=t+k−1`. The last one defines `f_t`.
    pub fn window(&self, t: usize) -> Vec<Sample> {
        let end = t + self.k - 1;
        let start = t.max(self.k - 1);
        (start..=end)
            .filter_map(|time| {
                self.index_of(time).map(|i| Sample {
                    time,
                    y: self.targets[i].clone(),
                    u: self.regressors[i].clone(),
                })
            })
            .collect()
    }
}

/// Norm summary written to the checkpoint ledger after every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub t: usize,
    pub g_fro: f64,
    pub error_fro: Option<f64>,
}

pub fn write_checkpoints<W: Write>(checkpoints: &[Checkpoint], out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "t,g_fro,err_fro")?;
    for c in checkpoints {
        let err = c.error_fro.map(|e| e.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{err}", c.t, c.g_fro)?;
    }
    out.flush()?;
    Ok(())
}

/// The iterate in force at `time`: the latest snapshot taken at or before it.
pub fn held_iterate(snapshots: &[(usize, Matrix)], time: usize) -> Option<&Matrix> {
    let idx = snapshots.partition_point(|(t, _)| *t <= time);
    idx.checked_sub(1).map(|i| &snapshots[i].1)
}

#[derive(Debug, Clone)]
struct SampleBuffer {
    samples: VecDeque<Sample>,
    cap: Option<usize>,
}

impl SampleBuffer {
    fn push(&mut self, sample: Sample) {
        if let Some(cap) = self.cap {
            while self.samples.len() >= cap.max(1) {
                self.samples.pop_front();
            }
        }
        self.samples.push_back(sample);
    }
}

/// Streaming estimator state. `t` is always a multiple of `k`; `g` is the
/// estimate `G^{(t)}`.
#[derive(Debug, Clone)]
pub struct StreamState {
    pub g: Matrix,
    pub t: usize,
    pub k: usize,
    pub m: usize,
    pub rule: StepRule,
    oracle: Option<Matrix>,
    history: Option<SampleBuffer>,
    batch_size: usize,
    last_time: Option<usize>,
    rng: SimRng,
    pub checkpoints: Vec<Checkpoint>,
    pub snapshots: Vec<(usize, Matrix)>,
    snapshot_every: Option<usize>,
    pub skipped_steps: usize,
}

impl StreamState {
    /// Starts from `G^{(0)} = 0`.
    pub fn new(r: usize, m: usize, k: usize, rule: StepRule, rng: SimRng) -> Result<Self> {
        if r == 0 || m == 0 || k == 0 {
            return Err(Error::Dimension(format!(
                "stream needs positive r, m, k; got {r}, {m}, {k}"
            )));
        }
        rule.validate()?;
        Ok(Self {
            g: Matrix::zeros(r, m * k),
            t: 0,
            k,
            m,
            rule,
            oracle: None,
            history: None,
            batch_size: 1,
            last_time: None,
            rng,
            checkpoints: Vec::new(),
            snapshots: Vec::new(),
            snapshot_every: None,
            skipped_steps: 0,
        })
    }

    /// Attaches the true Markov matrix (simulation mode only).
    pub fn with_oracle(mut self, g_star: Matrix) -> Result<Self> {
        if g_star.shape() != self.g.shape() {
            return Err(Error::Dimension(format!(
                "oracle is {:?}, iterate is {:?}",
                g_star.shape(),
                self.g.shape()
            )));
        }
        self.oracle = Some(g_star);
        Ok(self)
    }

    /// Averages subgradients over `batch_size` buffered samples per step.
    /// `cap` bounds the buffer (oldest samples are dropped first).
    pub fn with_minibatch(mut self, batch_size: usize, cap: Option<usize>) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        self.batch_size = batch_size;
        self.history = Some(SampleBuffer {
            samples: VecDeque::new(),
            cap,
        });
        Ok(self)
    }

    /// Keeps a full copy of the iterate every `every` steps.
    pub fn with_snapshots(mut self, every: usize) -> Self {
        self.snapshot_every = Some(every.max(1));
        self.snapshots.push((0, self.g.clone()));
        self
    }

    pub fn oracle(&self) -> Option<&Matrix> {
        self.oracle.as_ref()
    }

    pub fn is_minibatch(&self) -> bool {
        self.history.is_some()
    }

    pub fn buffered(&self) -> usize {
        self.history.as_ref().map_or(0, |h| h.samples.len())
    }

    /// `‖G^{(t)} − G*‖_F` when an oracle is attached.
    pub fn error(&self) -> Option<f64> {
        self.oracle.as_ref().map(|g_star| (&self.g - g_star).norm())
    }

    pub fn estimate(&self) -> Result<MarkovEstimate> {
        Ok(MarkovEstimate {
            markov: MarkovMatrix::new(self.g.clone(), self.m, self.k)?,
            provenance: Provenance::Streaming { t: self.t },
            objective: f64::NAN,
            stationarity: None,
            converged: true,
        })
    }

    fn tag_suffix(&self) -> &'static str {
        if self.is_minibatch() {
            "_minibatch"
        } else {
            ""
        }
    }

    /// Estimator tag such as `stream_projected` or `stream_best_minibatch`.
    pub fn tag(&self) -> String {
        format!("{}{}", self.rule.tag(), self.tag_suffix())
    }

    /// Performs the step at time `t` and moves to `t + k`. `window` must end
    /// with the sample at time `t + k − 1`; earlier samples in it feed the
    /// mini-batch buffer.
    pub fn advance(&mut self, window: &[Sample]) -> Result<()> {
        let expected = self.t + self.k - 1;
        let last = window
            .last()
            .ok_or_else(|| Error::Empty("streaming window has no samples".into()))?;
        if last.time != expected {
            return Err(Error::Misaligned {
                expected,
                got: last.time,
            });
        }
        if let Some(history) = self.history.as_mut() {
            for sample in window {
                if self.last_time.is_none_or(|prev| sample.time > prev) {
                    history.push(sample.clone());
                }
            }
        }
        self.last_time = Some(expected);

        if self.is_minibatch() {
            let picks = self.draw_batch(self.batch_size)?;
            let sg = self.batch_subgradient(&picks);
            let f_star = match (&self.rule, &self.oracle) {
                (StepRule::Polyak { .. }, Some(g_star)) => {
                    Some(self.batch_value(&picks, g_star))
                }
                (StepRule::Polyak { .. }, None) => return Err(Error::MissingOracle),
                _ => None,
            };
            self.apply(&sg, f_star)?;
        } else {
            let (y, u) = (&last.y, &last.u);
            match self.rule {
                StepRule::Best { .. } => step_best(self, y, u)?,
                StepRule::Polyak { .. } => {
                    let g_star = self.oracle.as_ref().ok_or(Error::MissingOracle)?;
                    let f_star = (y - g_star * u).norm();
                    step_polyak(self, y, u, f_star)?
                }
                StepRule::Projected { .. } => step_projected(self, y, u)?,
            }
        }
        self.record();
        Ok(())
    }

    fn record(&mut self) {
        self.checkpoints.push(Checkpoint {
            t: self.t,
            g_fro: self.g.norm(),
            error_fro: self.error(),
        });
        if let Some(every) = self.snapshot_every {
            if (self.t / self.k).is_multiple_of(every) {
                self.snapshots.push((self.t, self.g.clone()));
            }
        }
    }

    fn draw_batch(&mut self, batch_size: usize) -> Result<Vec<usize>> {
        let available = self.buffered();
        if available == 0 {
            return Err(Error::Empty("mini-batch buffer is empty".into()));
        }
        let amount = batch_size.min(available);
        let mut picks = index::sample(&mut self.rng, available, amount).into_vec();
        picks.sort_unstable();
        Ok(picks)
    }

    fn batch_subgradient(&self, picks: &[usize]) -> Subgradient {
        let history = self.history.as_ref().expect("mini-batch buffer");
        let mut g = Matrix::zeros(self.g.nrows(), self.g.ncols());
        let mut value = 0.0;
        for &i in picks {
            let s = &history.samples[i];
            let sg = subgradient(&self.g, &s.y, &s.u);
            g += &sg.g;
            value += sg.value;
        }
        let scale = 1.0 / picks.len() as f64;
        g *= scale;
        let zero = g.iter().all(|&v| v == 0.0);
        Subgradient {
            g,
            value: value * scale,
            zero_residual: zero,
        }
    }

    fn batch_value(&self, picks: &[usize], g: &Matrix) -> f64 {
        let history = self.history.as_ref().expect("mini-batch buffer");
        let total: f64 = picks
            .iter()
            .map(|&i| {
                let s = &history.samples[i];
                (&s.y - g * &s.u).norm()
            })
            .sum();
        total / picks.len() as f64
    }

    /// Applies one update along `sg` and advances time by `k`.
    fn apply(&mut self, sg: &Subgradient, f_star: Option<f64>) -> Result<()> {
        let gnorm_sq = sg.g.norm_squared();
        let skip = sg.zero_residual || gnorm_sq == 0.0;
        match self.rule {
            StepRule::Best { alpha, point } => {
                let g_star = self.oracle.as_ref().ok_or(Error::MissingOracle)?;
                if !skip {
                    let theta = frobenius_dot(&sg.g, &(&self.g - g_star)) / gnorm_sq;
                    let gamma = point.pick(alpha, theta);
                    self.g -= &sg.g * gamma;
                }
            }
            StepRule::Polyak { alpha, point } => {
                let f_star = f_star.ok_or(Error::MissingOracle)?;
                if !skip {
                    let theta = ((sg.value - f_star) / gnorm_sq).max(0.0);
                    let gamma = point.pick(alpha, theta);
                    self.g -= &sg.g * gamma;
                }
            }
            StepRule::Projected { beta, radius } => {
                if !skip {
                    let gamma = projected_step_size(self.k, beta, self.t);
                    let moved = &self.g - &sg.g * gamma;
                    self.g = project_ball(&moved, radius);
                }
            }
        }
        if skip {
            self.skipped_steps += 1;
        }
        self.t += self.k;
        Ok(())
    }
}

/// `γ_t = kβ / (t + k)`.
pub fn projected_step_size(k: usize, beta: f64, t: usize) -> f64 {
    k as f64 * beta / (t + k) as f64
}

/// Best-step update on the sample `(y, U)`; requires an attached oracle.
pub fn step_best(state: &mut StreamState, y: &Vector, u: &Vector) -> Result<()> {
    if !matches!(state.rule, StepRule::Best { .. }) {
        return Err(Error::InvalidArgument("state is not configured for the best rule".into()));
    }
    if state.oracle.is_none() {
        return Err(Error::MissingOracle);
    }
    let sg = subgradient(&state.g, y, u);
    state.apply(&sg, None)
}

/// Polyak update with the supplied `f_star = f_t(G*)`.
pub fn step_polyak(state: &mut StreamState, y: &Vector, u: &Vector, f_star: f64) -> Result<()> {
    if !matches!(state.rule, StepRule::Polyak { .. }) {
        return Err(Error::InvalidArgument("state is not configured for the Polyak rule".into()));
    }
    if !(f_star >= 0.0) {
        return Err(Error::InvalidArgument(format!("f_star must be >= 0, got {f_star}")));
    }
    let sg = subgradient(&state.g, y, u);
    state.apply(&sg, Some(f_star))
}

/// Projected update with step `kβ/(t+k)`.
pub fn step_projected(state: &mut StreamState, y: &Vector, u: &Vector) -> Result<()> {
    if !matches!(state.rule, StepRule::Projected { .. }) {
        return Err(Error::InvalidArgument("state is not configured for the projected rule".into()));
    }
    let sg = subgradient(&state.g, y, u);
    state.apply(&sg, None)
}

/// Average subgradient over `min(buffered, batch_size)` samples drawn
/// uniformly without replacement from the buffer.
pub fn minibatch_subgradient(state: &mut StreamState, batch_size: usize) -> Result<Matrix> {
    if state.history.is_none() {
        return Err(Error::InvalidArgument("mini-batching is not enabled".into()));
    }
    let picks = state.draw_batch(batch_size)?;
    Ok(state.batch_subgradient(&picks).g)
}

/// Runs a stream over `data` until time `t_end`, stepping at every multiple of
/// `k` whose window lies inside the data.
pub fn run_stream(state: &mut StreamState, data: &RegressorDataset, t_end: usize) -> Result<()> {
    while state.t + state.k <= t_end {
        let window = data.window(state.t);
        if window.is_empty() {
            break;
        }
        state.advance(&window)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use rand::Rng;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn vec1(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    fn loss(g: &Matrix, y: &Vector, u: &Vector) -> f64 {
        (y - g * u).norm()
    }

    #[test]
    fn subgradient_scalar() {
        let sg = subgradient(&scalar(0.0), &vec1(3.0), &vec1(2.0));
        assert_eq!(sg.g[(0, 0)], -2.0);
        assert!(!sg.zero_residual);
        let zero = subgradient(&scalar(1.5), &vec1(3.0), &vec1(2.0));
        assert!(zero.zero_residual);
        assert_eq!(zero.g, Matrix::zeros(1, 1));
    }

    #[test]
    fn subgradient_inequality_holds() {
        let mut rng = from_seed(3);
        for _ in 0..200 {
            let g = Matrix::from_fn(3, 4, |_, _| rng.random_range(-2.0..2.0));
            let other = Matrix::from_fn(3, 4, |_, _| rng.random_range(-2.0..2.0));
            let y = Vector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            let u = Vector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
            let sg = subgradient(&g, &y, &u);
            let lhs = loss(&other, &y, &u);
            let rhs = loss(&g, &y, &u) + frobenius_dot(&sg.g, &(&other - &g));
            assert!(lhs >= rhs - 1e-9);
        }
    }

    #[test]
    fn best_step_recovers_scalar_in_one_step() {
        let mut state = StreamState::new(1, 1, 1, StepRule::best(), from_seed(0))
            .unwrap()
            .with_oracle(scalar(1.0))
            .unwrap();
        state.g = scalar(5.0);
        step_best(&mut state, &vec1(1.0), &vec1(1.0)).unwrap();
        assert!((state.g[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn best_step_requires_oracle() {
        let mut state = StreamState::new(1, 1, 1, StepRule::best(), from_seed(0)).unwrap();
        assert!(matches!(
            step_best(&mut state, &vec1(1.0), &vec1(1.0)),
            Err(Error::MissingOracle)
        ));
        let mut polyak = StreamState::new(1, 1, 1, StepRule::polyak(), from_seed(0)).unwrap();
        let window = [Sample {
            time: 0,
            y: vec1(1.0),
            u: vec1(1.0),
        }];
        assert!(matches!(polyak.advance(&window), Err(Error::MissingOracle)));
    }

    #[test]
    fn polyak_step_formula_and_clamp() {
        // f(G) = |6 − 0.5·2| = 5, f* = 1, g = −2 so ‖g‖² = 4 and θ = 1.
        let mut state = StreamState::new(1, 1, 1, StepRule::polyak(), from_seed(0)).unwrap();
        state.g = scalar(0.5);
        step_polyak(&mut state, &vec1(6.0), &vec1(2.0), 1.0).unwrap();
        assert!((state.g[(0, 0)] - 2.5).abs() < 1e-15);

        let mut state = StreamState::new(1, 1, 1, StepRule::polyak(), from_seed(0)).unwrap();
        state.g = scalar(0.5);
        step_polyak(&mut state, &vec1(6.0), &vec1(2.0), 7.0).unwrap();
        assert_eq!(state.g[(0, 0)], 0.5);
    }

    #[test]
    fn alpha_one_collapses_interval() {
        for point in [IntervalPoint::Lower, IntervalPoint::Mid, IntervalPoint::Upper] {
            assert_eq!(point.pick(1.0, 0.7), 0.7);
        }
        assert_eq!(IntervalPoint::Lower.pick(0.5, 2.0), 1.0);
        assert_eq!(IntervalPoint::Upper.pick(0.5, 2.0), 3.0);
    }

    #[test]
    fn projected_step_sizes() {
        assert_eq!(projected_step_size(20, 2.0, 20), 1.0);
        assert_eq!(projected_step_size(20, 2.0, 0), 2.0);
    }

    #[test]
    fn projection_cases() {
        let g = Matrix::from_row_slice(1, 2, &[6.0, 8.0]);
        assert_eq!(project_ball(&g, 5.0), &g / 2.0);
        assert_eq!(project_ball(&g, 20.0), g);
    }

    #[test]
    fn projection_is_nonexpansive() {
        let mut rng = from_seed(19);
        for _ in 0..500 {
            let a = Matrix::from_fn(2, 3, |_, _| rng.random_range(-4.0..4.0));
            let b = Matrix::from_fn(2, 3, |_, _| rng.random_range(-4.0..4.0));
            let radius = rng.random_range(0.1..5.0);
            let lhs = (project_ball(&a, radius) - project_ball(&b, radius)).norm();
            assert!(lhs <= (&a - &b).norm() + 1e-12);
        }
    }

    #[test]
    fn advance_schedule_and_alignment() {
        let k = 3;
        let rule = StepRule::projected(1.0, 10.0);
        let mut state = StreamState::new(1, 1, k, rule, from_seed(1)).unwrap();
        let sample = |time| Sample {
            time,
            y: vec1(0.0),
            u: Vector::zeros(k),
        };
        for step in 1..=3 {
            let window = [sample(state.t + k - 1)];
            state.advance(&window).unwrap();
            assert_eq!(state.t, step * k);
            assert_eq!(state.g, Matrix::zeros(1, k));
        }
        assert_eq!(state.skipped_steps, 3);
        let err = state.advance(&[sample(4)]).unwrap_err();
        assert!(matches!(err, Error::Misaligned { expected: 11, got: 4 }));
        assert!(matches!(state.advance(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn minibatch_contracts() {
        let mut state = StreamState::new(1, 1, 1, StepRule::projected(1.0, 10.0), from_seed(2))
            .unwrap()
            .with_minibatch(4, None)
            .unwrap();
        assert!(matches!(
            minibatch_subgradient(&mut state, 1),
            Err(Error::Empty(_))
        ));
        let window: Vec<Sample> = (0..1)
            .map(|t| Sample {
                time: t,
                y: vec1(3.0),
                u: vec1(2.0),
            })
            .collect();
        state.advance(&window).unwrap();
        let g = minibatch_subgradient(&mut state, 1).unwrap();
        let direct = subgradient(&state.g, &vec1(3.0), &vec1(2.0)).g;
        assert_eq!(g, direct);

        let mut fresh = StreamState::new(1, 1, 1, StepRule::projected(1.0, 10.0), from_seed(2))
            .unwrap()
            .with_minibatch(8, None)
            .unwrap();
        for t in 0..5 {
            fresh
                .advance(&[Sample {
                    time: t,
                    y: vec1(0.0),
                    u: vec1(1.0),
                }])
                .unwrap();
        }
        // Every buffered sample has zero residual at G = 0.
        assert_eq!(minibatch_subgradient(&mut fresh, 8).unwrap(), Matrix::zeros(1, 1));
        let picks = fresh.draw_batch(8).unwrap();
        assert_eq!(picks, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn buffer_cap_drops_oldest() {
        let mut state = StreamState::new(1, 1, 1, StepRule::projected(1.0, 10.0), from_seed(2))
            .unwrap()
            .with_minibatch(2, Some(3))
            .unwrap();
        for t in 0..6 {
            state
                .advance(&[Sample {
                    time: t,
                    y: vec1(t as f64),
                    u: vec1(1.0),
                }])
                .unwrap();
        }
        assert_eq!(state.buffered(), 3);
    }

    #[test]
    fn hold_semantics_follow_snapshots() {
        let snaps = vec![(0, scalar(0.0)), (4, scalar(1.0)), (8, scalar(2.0))];
        assert_eq!(held_iterate(&snaps, 0), Some(&scalar(0.0)));
        assert_eq!(held_iterate(&snaps, 7), Some(&scalar(1.0)));
        assert_eq!(held_iterate(&snaps, 100), Some(&scalar(2.0)));
        assert_eq!(held_iterate(&snaps[1..], 2), None);
    }

    #[test]
    fn default_radius_formula() {
        let r = default_radius(1.0, 2.0, 3, 2.0, 0.5);
        assert!((r - (1.0f64 + 2.0 * 2.0 * 4.0 * 0.25).sqrt()).abs() < 1e-15);
        assert!(beta_threshold(1.0, 0.0, 1.0) > 2.5);
    }

    #[test]
    fn checkpoint_ledger_format() {
        let mut buf = Vec::new();
        write_checkpoints(
            &[
                Checkpoint {
                    t: 2,
                    g_fro: 1.5,
                    error_fro: Some(0.25),
                },
                Checkpoint {
                    t: 4,
                    g_fro: 2.0,
                    error_fro: None,
                },
            ],
            &mut buf,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,g_fro,err_fro\n2,1.5,0.25\n4,2,\n"
        );
    }
}
