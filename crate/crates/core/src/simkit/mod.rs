//! True systems, control inputs, sparse adversarial attacks and trajectories of
//! `x_{t+1} = A x_t + B u_t + w_t`, `y_t = C x_t + D u_t`.

mod io;

use std::fmt;
use std::sync::Arc;

use log::warn;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

pub use io::{read_binary_log, read_csv, write_binary_log, write_csv, TRAJECTORY_HEADER};

/// States with any coordinate beyond this magnitude abort a simulation.
pub const STATE_OVERFLOW: f64 = 1e300;
/// Floor applied to the spectral radius so `ψ` stays finite for nilpotent `A`.
pub const RHO_FLOOR: f64 = 1e-12;
/// Relative inflation applied to the measured spectral radius.
pub const RHO_INFLATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl SystemModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let m = b.ncols();
        let r = c.nrows();
        if b.nrows() != n || m == 0 {
            return Err(Error::Dimension(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || r == 0 {
            return Err(Error::Dimension(format!(
                "C must be rx{n} with r >= 1, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if d.nrows() != r || d.ncols() != m {
            return Err(Error::Dimension(format!(
                "D must be {r}x{m}, got {}x{}",
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn r(&self) -> usize {
        self.c.nrows()
    }
}

/// Certificate `‖A^t‖₂ ≤ ψ·ρ^t` for `t = 0..=t_check`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCert {
    pub psi: f64,
    pub rho: f64,
    pub t_check: usize,
}

impl StabilityCert {
    /// Bound `ψ·ρ^t` on `‖A^t‖₂`.
    pub fn bound(&self, t: usize) -> f64 {
        self.psi * self.rho.powi(t as i32)
    }
}

/// Draws `B`, `C`, `D` entrywise from Uniform[-1, 1] and `A` likewise before
/// rescaling it to the requested spectral norm.
pub fn gen_system<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    r: usize,
    target_spec_norm: f64,
    rng: &mut R,
) -> Result<SystemModel> {
    if n == 0 || m == 0 || r == 0 {
        return Err(Error::Dimension(format!(
            "system dimensions must be positive, got n={n}, m={m}, r={r}"
        )));
    }
    if !(target_spec_norm > 0.0 && target_spec_norm < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target spectral norm must lie in (0, 1), got {target_spec_norm}"
        )));
    }
    let mut uniform = |rows: usize, cols: usize| {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
    };
    let mut a = uniform(n, n);
    let b = uniform(n, m);
    let c = uniform(r, n);
    let d = uniform(r, m);
    let norm = linalg::spectral_norm(&a)?;
    if norm == 0.0 {
        return Err(Error::InvalidArgument("drew an all-zero A".into()));
    }
    a *= target_spec_norm / norm;
    SystemModel::new(a, b, c, d)
}

/// `total` i.i.d. draws from `N(0, σ² I_m)`.
pub fn gen_inputs<R: Rng + ?Sized>(
    total: usize,
    m: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Vector>> {
    if total == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "input horizon and width must be positive, got T={total}, m={m}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "input standard deviation must be positive, got {sigma}"
        )));
    }
    Ok((0..total)
        .map(|_| Vector::from_fn(m, |_, _| sigma * rng.sample::<f64, _>(StandardNormal)))
        .collect())
}

/// Which attack mean the sign-adaptive adversary uses for nonnegative state
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignMap {
    /// `x_i ≥ 0 → high`, `x_i < 0 → low`.
    #[default]
    NonNegativeHigh,
    /// `x_i ≥ 0 → low`, `x_i < 0 → high`.
    NonNegativeLow,
}

/// Callback producing an attack value from `(t, states x_0..=x_t, rng)`.
pub type AttackFn = dyn Fn(usize, &[Vector], &mut dyn RngCore) -> Vector + Send + Sync;

#[derive(Clone)]
pub enum AttackKind {
    None,
    IidGaussian {
        mean: Vector,
        cov_scale: f64,
    },
    SignAdaptive {
        low: f64,
        high: f64,
        cov_scale: f64,
        sign_map: SignMap,
    },
    Custom(Arc<AttackFn>),
}

impl fmt::Debug for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackKind::None => f.write_str("None"),
            AttackKind::IidGaussian { mean, cov_scale } => f
                .debug_struct("IidGaussian")
                .field("mean", &mean.as_slice())
                .field("cov_scale", cov_scale)
                .finish(),
            AttackKind::SignAdaptive {
                low,
                high,
                cov_scale,
                sign_map,
            } => f
                .debug_struct("SignAdaptive")
                .field("low", low)
                .field("high", high)
                .field("cov_scale", cov_scale)
                .field("sign_map", sign_map)
                .finish(),
            AttackKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Attacks occur at Bernoulli(`p`) times; their values follow `kind`.
#[derive(Debug, Clone)]
pub struct AttackModel {
    pub kind: AttackKind,
    pub p: f64,
}

impl AttackModel {
    pub fn none() -> Self {
        Self {
            kind: AttackKind::None,
            p: 0.0,
        }
    }

    pub fn new(kind: AttackKind, p: f64) -> Result<Self> {
        let model = Self { kind, p };
        model.validate()?;
        Ok(model)
    }

    /// The adversary of the reference experiments: means 300/1000 by state
    /// sign, covariance `25 I`.
    pub fn reference_sign_adaptive(p: f64) -> Result<Self> {
        Self::new(
            AttackKind::SignAdaptive {
                low: 300.0,
                high: 1000.0,
                cov_scale: 25.0,
                sign_map: SignMap::default(),
            },
            p,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::InvalidArgument(format!(
                "attack probability must lie in [0, 1), got {}",
                self.p
            )));
        }
        let cov = match &self.kind {
            AttackKind::IidGaussian { cov_scale, .. } => Some(*cov_scale),
            AttackKind::SignAdaptive { cov_scale, .. } => Some(*cov_scale),
            _ => None,
        };
        if let Some(cov) = cov {
            if !(cov >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "attack covariance scale must be nonnegative, got {cov}"
                )));
            }
        }
        Ok(())
    }

    /// Whether `p < 1/(2(k−1))`, the sparsity level the order-`k` recovery
    /// guarantees need. Logs a warning otherwise.
    pub fn check_sparsity(&self, k: usize) -> bool {
        let ok = k <= 1 || self.p < 1.0 / (2.0 * (k as f64 - 1.0));
        if !ok {
            warn!(
                "attack probability {} is not below 1/(2(k-1)) = {} for k = {k}",
                self.p,
                1.0 / (2.0 * (k as f64 - 1.0))
            );
        }
        ok
    }

    /// Draws `(ξ_t, w_t)` given the states realized so far; the last entry of
    /// `states` is the current state `x_t`.
    pub fn sample<R: Rng>(&self, t: usize, states: &[Vector], rng: &mut R) -> (bool, Vector) {
        let x = states.last().expect("attack sampling needs the current state");
        let n = x.len();
        if matches!(self.kind, AttackKind::None) {
            return (false, Vector::zeros(n));
        }
        let flag = rng.random_bool(self.p);
        if !flag {
            return (false, Vector::zeros(n));
        }
        let w = match &self.kind {
            AttackKind::None => unreachable!(),
            AttackKind::IidGaussian { mean, cov_scale } => {
                let sd = cov_scale.sqrt();
                Vector::from_fn(n, |i, _| {
                    mean[i] + sd * rng.sample::<f64, _>(StandardNormal)
                })
            }
            AttackKind::SignAdaptive {
                low,
                high,
                cov_scale,
                sign_map,
            } => {
                let sd = cov_scale.sqrt();
                Vector::from_fn(n, |i, _| {
                    let nonneg = x[i] >= 0.0;
                    let mean = match (sign_map, nonneg) {
                        (SignMap::NonNegativeHigh, true) | (SignMap::NonNegativeLow, false) => {
                            *high
                        }
                        _ => *low,
                    };
                    mean + sd * rng.sample::<f64, _>(StandardNormal)
                })
            }
            AttackKind::Custom(f) => f(t, states, rng),
        };
        (true, w)
    }
}

/// Single draw with no history beyond the current state.
pub fn sample_attack<R: Rng>(model: &AttackModel, x_t: &Vector, rng: &mut R) -> (bool, Vector) {
    model.sample(0, std::slice::from_ref(x_t), rng)
}

/// A simulated trajectory. All sequences are indexed by `t = 0..len()`; the
/// attack at `t` enters the state at `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub inputs: Vec<Vector>,
    pub states: Vec<Vector>,
    pub observations: Vec<Vector>,
    pub attack_flags: Vec<bool>,
    pub attack_values: Vec<Vector>,
    pub input_std: f64,
    pub k: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n(&self) -> usize {
        self.states.first().map_or(0, Vector::len)
    }

    pub fn m(&self) -> usize {
        self.inputs.first().map_or(0, Vector::len)
    }

    pub fn r(&self) -> usize {
        self.observations.first().map_or(0, Vector::len)
    }

    /// Copy of the first `len` steps.
    pub fn truncated(&self, len: usize) -> Trajectory {
        let len = len.min(self.len());
        Trajectory {
            inputs: self.inputs[..len].to_vec(),
            states: self.states[..len].to_vec(),
            observations: self.observations[..len].to_vec(),
            attack_flags: self.attack_flags[..len].to_vec(),
            attack_values: self.attack_values[..len].to_vec(),
            input_std: self.input_std,
            k: self.k,
        }
    }
}

/// Simulates `total` steps. Inputs are drawn first, then attacks step by step
/// after each state is realized, so adaptive adversaries see `x_t`.
#[allow(clippy::too_many_arguments)]
pub fn simulate<R: Rng>(
    sys: &SystemModel,
    attack: &AttackModel,
    x0: &Vector,
    total: usize,
    sigma: f64,
    k: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    check_horizon(sys, x0, total, k)?;
    attack.validate()?;
    if let AttackKind::IidGaussian { mean, .. } = &attack.kind {
        if mean.len() != sys.n() {
            return Err(Error::Dimension(format!(
                "attack mean has length {}, state dimension is {}",
                mean.len(),
                sys.n()
            )));
        }
    }
    let inputs = gen_inputs(total, sys.m(), sigma, rng)?;
    run(sys, x0, inputs, sigma, k, |t, states| attack.sample(t, states, rng))
}

/// Re-simulates from recorded inputs and attacks. Identical inputs give a
/// bitwise-identical trajectory.
pub fn simulate_replay(
    sys: &SystemModel,
    x0: &Vector,
    inputs: Vec<Vector>,
    attack_flags: &[bool],
    attack_values: &[Vector],
    sigma: f64,
    k: usize,
) -> Result<Trajectory> {
    let total = inputs.len();
    check_horizon(sys, x0, total, k)?;
    if attack_flags.len() != total || attack_values.len() != total {
        return Err(Error::Dimension(format!(
            "attack log covers {} / {} steps, inputs cover {total}",
            attack_flags.len(),
            attack_values.len()
        )));
    }
    if attack_values.iter().any(|w| w.len() != sys.n()) {
        return Err(Error::Dimension("attack value width differs from n".into()));
    }
    run(sys, x0, inputs, sigma, k, |t, _| {
        (attack_flags[t], attack_values[t].clone())
    })
}

fn check_horizon(sys: &SystemModel, x0: &Vector, total: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("Markov order k must be >= 1".into()));
    }
    if total < k {
        return Err(Error::InvalidArgument(format!(
            "horizon {total} is shorter than the Markov order {k}"
        )));
    }
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, system has n = {}",
            x0.len(),
            sys.n()
        )));
    }
    Ok(())
}

fn run<F>(
    sys: &SystemModel,
    x0: &Vector,
    inputs: Vec<Vector>,
    sigma: f64,
    k: usize,
    mut attack: F,
) -> Result<Trajectory>
where
    F: FnMut(usize, &[Vector]) -> (bool, Vector),
{
    let total = inputs.len();
    let mut states = Vec::with_capacity(total);
    let mut observations = Vec::with_capacity(total);
    let mut attack_flags = Vec::with_capacity(total);
    let mut attack_values = Vec::with_capacity(total);
    states.push(x0.clone());
    for (t, u) in inputs.iter().enumerate() {
        let x = &states[t];
        observations.push(&sys.c * x + &sys.d * u);
        let (flag, w) = attack(t, &states);
        let w = if flag { w } else { Vector::zeros(sys.n()) };
        if t + 1 < total {
            let next = &sys.a * x + &sys.b * u + &w;
            if next.iter().any(|v| !v.is_finite() || v.abs() > STATE_OVERFLOW) {
                return Err(Error::StateOverflow { t: t + 1 });
            }
            states.push(next);
        }
        attack_flags.push(flag);
        attack_values.push(w);
    }
    Ok(Trajectory {
        inputs,
        states,
        observations,
        attack_flags,
        attack_values,
        input_std: sigma,
        k,
    })
}

/// Measures `(ψ, ρ)` with `ρ` the spectral radius inflated by a relative
/// `1e-6` (floored at `1e-12`) and `ψ = max_{t ≤ t_check} ‖A^t‖₂ / ρ^t`.
pub fn verify_stability(sys: &SystemModel, t_check: usize) -> Result<StabilityCert> {
    let radius = linalg::spectral_radius(&sys.a);
    let rho = (radius * (1.0 + RHO_INFLATION)).max(RHO_FLOOR);
    if radius >= 1.0 || rho >= 1.0 {
        return Err(Error::Unstable(radius));
    }
    let n = sys.n();
    let mut power = Matrix::identity(n, n);
    let mut log_psi = 0.0f64;
    let ln_rho = rho.ln();
    for t in 0..=t_check {
        if t > 0 {
            power = &sys.a * &power;
        }
        let norm = linalg::dense_spectral_norm(&power);
        if norm == 0.0 {
            break;
        }
        log_psi = log_psi.max(norm.ln() - t as f64 * ln_rho);
    }
    Ok(StabilityCert {
        psi: log_psi.exp(),
        rho,
        t_check,
    })
}
