//! Experiment configuration (`advsysid-config/1` JSON documents).

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{BatchMethod, BatchOptions};
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::simkit::{gen_system, AttackKind, AttackModel, SignMap, SystemModel};
use crate::streaming::IntervalPoint;

pub const CONFIG_SCHEMA: &str = "advsysid-config/1";
/// Environment variable overriding the master seed.
pub const SEED_ENV: &str = "ADVSYSID_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Entries Uniform[-1, 1], `A` rescaled to the given spectral norm. With
    /// `seed` set, every replicate shares one system.
    Random {
        n: usize,
        m: usize,
        r: usize,
        spectral_norm: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        d: Vec<Vec<f64>>,
    },
}

impl SystemSpec {
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            SystemSpec::Random { n, m, r, .. } => (*n, *m, *r),
            SystemSpec::Explicit { a, b, c, .. } => (
                a.len(),
                b.first().map_or(0, Vec::len),
                c.len(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMapSpec {
    #[default]
    NonnegHigh,
    NonnegLow,
}

/// Attack distribution. A missing `p` means `p = 1/(2k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    None,
    IidGaussian {
        #[serde(default)]
        p: Option<f64>,
        /// Mean of every coordinate.
        mean: f64,
        cov_scale: f64,
    },
    SignAdaptive {
        #[serde(default)]
        p: Option<f64>,
        #[serde(default = "default_low")]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
        #[serde(default = "default_cov")]
        cov_scale: f64,
        #[serde(default)]
        sign_map: SignMapSpec,
    },
}

fn default_low() -> f64 {
    300.0
}

fn default_high() -> f64 {
    1000.0
}

fn default_cov() -> f64 {
    25.0
}

impl AttackSpec {
    pub fn probability(&self, k: usize) -> f64 {
        let explicit = match self {
            AttackSpec::None => return 0.0,
            AttackSpec::IidGaussian { p, .. } | AttackSpec::SignAdaptive { p, .. } => *p,
        };
        explicit.unwrap_or(1.0 / (2.0 * k as f64))
    }

    pub fn model(&self, n: usize, k: usize) -> Result<AttackModel> {
        let p = self.probability(k);
        let kind = match *self {
            AttackSpec::None => return Ok(AttackModel::none()),
            AttackSpec::IidGaussian {
                mean, cov_scale, ..
            } => AttackKind::IidGaussian {
                mean: Vector::from_element(n, mean),
                cov_scale,
            },
            AttackSpec::SignAdaptive {
                low,
                high,
                cov_scale,
                sign_map,
                ..
            } => AttackKind::SignAdaptive {
                low,
                high,
                cov_scale,
                sign_map: match sign_map {
                    SignMapSpec::NonnegHigh => SignMap::NonNegativeHigh,
                    SignMapSpec::NonnegLow => SignMap::NonNegativeLow,
                },
            },
        };
        AttackModel::new(kind, p)
    }

    /// A sub-Gaussian scale for the attack values: largest mean magnitude
    /// plus the per-coordinate standard deviation.
    pub fn scale(&self) -> f64 {
        match *self {
            AttackSpec::None => 0.0,
            AttackSpec::IidGaussian {
                mean, cov_scale, ..
            } => mean.abs() + cov_scale.sqrt(),
            AttackSpec::SignAdaptive {
                low,
                high,
                cov_scale,
                ..
            } => low.abs().max(high.abs()) + cov_scale.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl InitialState {
    pub fn vector(&self, n: usize) -> Result<Vector> {
        match self {
            InitialState::Zero => Ok(Vector::zeros(n)),
            InitialState::Constant { value } => Ok(Vector::from_element(n, *value)),
            InitialState::Explicit { values } => {
                if values.len() != n {
                    return Err(Error::Config(format!(
                        "x0 has {} entries, system has n = {n}",
                        values.len()
                    )));
                }
                Ok(Vector::from_vec(values.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Best,
    Polyak,
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSpec {
    /// Step rules to run; the hybrid pipeline uses the first.
    pub rules: Vec<RuleKind>,
    pub alpha: f64,
    pub point: IntervalPoint,
    /// Step scale of the projected rule. Defaults to twice the guarantee
    /// threshold.
    pub beta: Option<f64>,
    /// Projection radius. Defaults to the loose bound built from the system
    /// norms.
    pub radius: Option<f64>,
    /// Subgradient batch sizes to run; `1` is the plain stochastic method.
    pub batch_sizes: Vec<usize>,
    pub buffer_cap: Option<usize>,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            rules: vec![RuleKind::Projected],
            alpha: 1.0,
            point: IntervalPoint::Mid,
            beta: None,
            radius: None,
            batch_sizes: vec![1],
            buffer_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub smoothing_eps0: f64,
    pub smoothing_decay: f64,
    pub eps_min: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rel_tol: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let o = BatchOptions::default();
        Self {
            smoothing_eps0: o.smoothing_eps0,
            smoothing_decay: o.smoothing_decay,
            eps_min: o.eps_min,
            max_outer: o.max_outer,
            max_inner: o.max_inner,
            rel_tol: o.rel_tol,
        }
    }
}

impl SolverSpec {
    pub fn options(&self, method: BatchMethod) -> BatchOptions {
        BatchOptions {
            method,
            smoothing_eps0: self.smoothing_eps0,
            smoothing_decay: self.smoothing_decay,
            eps_min: self.eps_min,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            rel_tol: self.rel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    #[serde(default)]
    pub name: Option<String>,
    pub system: SystemSpec,
    /// Markov order.
    pub k: usize,
    /// Orders swept by batch experiments; empty means `[k]`.
    #[serde(default)]
    pub k_sweep: Vec<usize>,
    /// Input standard deviation.
    pub sigma: f64,
    pub attack: AttackSpec,
    #[serde(default)]
    pub x0: InitialState,
    /// Trajectory length for streaming and hybrid runs.
    pub t_total: usize,
    /// Recovery time at which the hybrid pipeline switches to the batch
    /// estimate. Defaults to the theory scale rounded up to a multiple of k.
    #[serde(default)]
    pub t_star: Option<usize>,
    /// Regression samples used by batch experiments; defaults to
    /// `t_total − k + 1`.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Spacing of the sample-count grid in batch experiments; defaults to a
    /// single point at the full sample count.
    #[serde(default)]
    pub record_every: Option<usize>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<BatchMethod>,
    #[serde(default)]
    pub stream: StreamSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Balanced-truncation order; defaults to `⌊k/2⌋`.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default = "default_c_tstar")]
    pub c_tstar: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Sub-Gaussian scale for the theory bounds; defaults to the attack scale.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Accept attack probabilities at or above `1/(2(k−1))`.
    #[serde(default)]
    pub allow_dense_attacks: bool,
    /// Whether ground-truth quantities may be used (simulation mode).
    #[serde(default = "default_true")]
    pub oracle: bool,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_estimators() -> Vec<BatchMethod> {
    vec![BatchMethod::L2, BatchMethod::L1, BatchMethod::LeastSquares]
}

fn default_replicates() -> usize {
    1
}

fn default_c_tstar() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("cannot parse configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read configuration {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Orders this configuration runs batch experiments for.
    pub fn orders(&self) -> Vec<usize> {
        if self.k_sweep.is_empty() {
            vec![self.k]
        } else {
            self.k_sweep.clone()
        }
    }

    pub fn truncation_order(&self) -> usize {
        self.d.unwrap_or(self.k / 2)
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or_else(|| self.attack.scale())
    }

    pub fn sample_count(&self, k: usize) -> usize {
        self.samples
            .unwrap_or_else(|| self.t_total.saturating_sub(k) + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.schema != CONFIG_SCHEMA {
            return fail(format!(
                "unsupported schema {:?}, expected {CONFIG_SCHEMA:?}",
                self.schema
            ));
        }
        let (n, m, r) = self.system.dims();
        if n == 0 || m == 0 || r == 0 {
            return fail("system dimensions must be positive".into());
        }
        if let SystemSpec::Random { spectral_norm, .. } = self.system {
            if !(spectral_norm > 0.0 && spectral_norm < 1.0) {
                return fail(format!("spectral_norm must lie in (0, 1), got {spectral_norm}"));
            }
        }
        if self.k == 0 || self.k_sweep.contains(&0) {
            return fail("Markov order k must be >= 1".into());
        }
        if !(self.sigma > 0.0) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.t_total < self.k {
            return fail(format!(
                "t_total = {} is shorter than k = {}",
                self.t_total, self.k
            ));
        }
        if self.replicates == 0 {
            return fail("replicates must be >= 1".into());
        }
        if let Some(t_star) = self.t_star {
            if t_star < self.k {
                return fail(format!("t_star = {t_star} must be at least k = {}", self.k));
            }
            if t_star % self.k != 0 {
                return fail(format!("t_star = {t_star} must be a multiple of k = {}", self.k));
            }
            if t_star > self.t_total {
                return fail(format!(
                    "t_star = {t_star} exceeds t_total = {}",
                    self.t_total
                ));
            }
        }
        if matches!(self.samples, Some(0)) || matches!(self.record_every, Some(0)) {
            return fail("samples and record_every must be positive".into());
        }
        for k in self.orders().into_iter().chain([self.k]) {
            let p = self.attack.probability(k);
            if !(0.0..1.0).contains(&p) {
                return fail(format!("attack probability {p} is outside [0, 1)"));
            }
            if k > 1 && p >= 1.0 / (2.0 * (k as f64 - 1.0)) && !self.allow_dense_attacks {
                return fail(format!(
                    "attack probability {p} is not below 1/(2(k-1)) for k = {k}; \
                     set allow_dense_attacks to run anyway"
                ));
            }
        }
        let d = self.truncation_order();
        if d == 0 || d > self.k / 2 {
            return fail(format!(
                "truncation order d = {d} must lie in [1, floor(k/2) = {}]",
                self.k / 2
            ));
        }
        if self.stream.rules.is_empty() || self.stream.batch_sizes.is_empty() {
            return fail("stream.rules and stream.batch_sizes must be nonempty".into());
        }
        if self.stream.batch_sizes.contains(&0) {
            return fail("batch sizes must be >= 1".into());
        }
        if !(self.stream.alpha > 0.0 && self.stream.alpha <= 1.0) {
            return fail(format!("stream.alpha must lie in (0, 1], got {}", self.stream.alpha));
        }
        if !self.oracle
            && self
                .stream
                .rules
                .iter()
                .any(|r| matches!(r, RuleKind::Best | RuleKind::Polyak))
        {
            return fail("best and polyak rules need the oracle; use the projected rule".into());
        }
        if self.estimators.is_empty() {
            return fail("estimators must be nonempty".into());
        }
        self.solver.options(BatchMethod::L2).validate()?;
        if let SystemSpec::Explicit { a, b, c, d } = &self.system {
            SystemModel::new(
                linalg::from_rows(a)?,
                linalg::from_rows(b)?,
                linalg::from_rows(c)?,
                linalg::from_rows(d)?,
            )?;
        }
        if let InitialState::Explicit { values } = &self.x0 {
            if values.len() != n {
                return fail(format!("x0 has {} entries, n = {n}", values.len()));
            }
        }
        Ok(())
    }

    /// The system for a replicate: the shared one when the spec fixes a
    /// seed, otherwise drawn from the replicate's generator.
    pub fn build_system<R: Rng>(&self, rng: &mut R) -> Result<SystemModel> {
        match &self.system {
            SystemSpec::Random {
                n,
                m,
                r,
                spectral_norm,
                seed,
            } => match seed {
                Some(seed) => gen_system(*n, *m, *r, *spectral_norm, &mut crate::rng::from_seed(*seed)),
                None => gen_system(*n, *m, *r, *spectral_norm, rng),
            },
            SystemSpec::Explicit { a, b, c, d } => SystemModel::new(
                linalg::from_rows(a)?,
                linalg::from_rows(b)?,
                linalg::from_rows(c)?,
                linalg::from_rows(d)?,
            ),
        }
    }
}
