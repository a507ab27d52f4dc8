//! Batch estimators of the Markov matrix and the quantities behind their
//! recovery guarantees.
//!
//! The robust estimators minimize `Σ_t ‖y_t − G U_t‖₂` (ℓ2) or
//! `Σ_t Σ_i |y_{t,i} − (G U_t)_i|` (ℓ1). Both are solved by iteratively
//! reweighted least squares on the smoothed objective
//! `Σ_t √(‖y_t − G U_t‖₂² + ε)`, with `ε` annealed geometrically from
//! `smoothing_eps0` down to `eps_min`. The ℓ1 problem is row-separable, so each
//! output coordinate is solved as its own one-dimensional ℓ2 problem.

use std::fmt;
use std::io::{BufWriter, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::markov::{MarkovMatrix, RegressorDataset};
use crate::simkit::{StabilityCert, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMethod {
    L2,
    L1,
    LeastSquares,
}

impl BatchMethod {
    pub fn tag(self) -> &'static str {
        match self {
            BatchMethod::L2 => "batch_l2",
            BatchMethod::L1 => "batch_l1",
            BatchMethod::LeastSquares => "least_squares",
        }
    }
}

impl fmt::Display for BatchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOptions {
    pub method: BatchMethod,
    pub smoothing_eps0: f64,
    pub smoothing_decay: f64,
    pub eps_min: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub rel_tol: f64,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            method: BatchMethod::L2,
            smoothing_eps0: 1.0,
            smoothing_decay: 0.1,
            eps_min: 1e-12,
            max_outer: 12,
            max_inner: 500,
            rel_tol: 1e-10,
        }
    }
}

impl BatchOptions {
    pub fn with_method(method: BatchMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.smoothing_eps0 > 0.0
            && self.eps_min > 0.0
            && self.eps_min <= self.smoothing_eps0
            && self.smoothing_decay > 0.0
            && self.smoothing_decay < 1.0
            && self.rel_tol > 0.0
            && self.max_outer >= 1
            && self.max_inner >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid batch options {self:?}")))
        }
    }

    /// Smoothing level of outer stage `stage`. The last allowed stage always
    /// runs at `eps_min`.
    fn smoothing(&self, stage: usize) -> f64 {
        if stage + 1 >= self.max_outer {
            return self.eps_min;
        }
        (self.smoothing_eps0 * self.smoothing_decay.powi(stage as i32)).max(self.eps_min)
    }
}

/// Where an estimate came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Batch { method: BatchMethod, samples: usize },
    Streaming { t: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovEstimate {
    pub markov: MarkovMatrix,
    pub provenance: Provenance,
    /// Unsmoothed objective of the producing method at the estimate.
    pub objective: f64,
    /// Norm of the smoothed-objective gradient at the returned iterate
    /// (robust estimators only).
    pub stationarity: Option<f64>,
    pub converged: bool,
}

impl MarkovEstimate {
    /// Row-major CSV with `#`-prefixed metadata lines.
    pub fn write_csv<W: Write>(&self, seed: Option<u64>, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        let (method, samples) = match self.provenance {
            Provenance::Batch { method, samples } => (method.tag().to_string(), samples),
            Provenance::Streaming { t } => ("streaming".to_string(), t),
        };
        writeln!(out, "# method={method}")?;
        writeln!(out, "# T={samples}")?;
        writeln!(out, "# k={}", self.markov.k)?;
        if let Some(seed) = seed {
            writeln!(out, "# seed={seed}")?;
        }
        if let Some(s) = self.stationarity {
            writeln!(out, "# stationarity={s:e}")?;
        }
        for row in self.markov.g.row_iter() {
            let fields: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(out, "{}", fields.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn estimate(data: &RegressorDataset, opts: &BatchOptions) -> Result<MarkovEstimate> {
    match opts.method {
        BatchMethod::L2 => l2_estimator(data, opts),
        BatchMethod::L1 => l1_estimator(data, opts),
        BatchMethod::LeastSquares => least_squares(data),
    }
}

/// `Σ_t ‖y_t − G U_t‖₂`.
pub fn l2_objective(data: &RegressorDataset, g: &Matrix) -> f64 {
    data.targets
        .iter()
        .zip(&data.regressors)
        .map(|(y, u)| (y - g * u).norm())
        .sum()
}

/// `Σ_t Σ_i |y_{t,i} − (G U_t)_i|`.
pub fn l1_objective(data: &RegressorDataset, g: &Matrix) -> f64 {
    data.targets
        .iter()
        .zip(&data.regressors)
        .map(|(y, u)| (y - g * u).lp_norm(1))
        .sum()
}

/// `Σ_t ‖y_t − G U_t‖₂²`.
pub fn squared_objective(data: &RegressorDataset, g: &Matrix) -> f64 {
    data.targets
        .iter()
        .zip(&data.regressors)
        .map(|(y, u)| (y - g * u).norm_squared())
        .sum()
}

fn check_nonempty(data: &RegressorDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("regression dataset has no samples".into()));
    }
    Ok(())
}

/// Minimum-norm least-squares coefficients `B` (`mk x r`) of `X B ≈ Y`.
fn min_norm_solve(x: &Matrix, y: &Matrix) -> Result<(Matrix, usize)> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * f64::EPSILON * x.nrows().max(x.ncols()) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let coef = svd
        .solve(y, cutoff)
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok((coef, rank))
}

/// Ordinary least squares via an SVD of the stacked regressors; the
/// minimum-norm solution is returned when they are rank deficient.
pub fn least_squares(data: &RegressorDataset) -> Result<MarkovEstimate> {
    check_nonempty(data)?;
    let x = data.design();
    let y = data.target_matrix();
    let (coef, rank) = min_norm_solve(&x, &y)?;
    if rank < data.width() {
        warn!(
            "regressor matrix has rank {rank} < mk = {}; returning the minimum-norm solution",
            data.width()
        );
    }
    let g = coef.transpose();
    let objective = squared_objective(data, &g);
    Ok(MarkovEstimate {
        markov: MarkovMatrix::new(g, data.m, data.k)?,
        provenance: Provenance::Batch {
            method: BatchMethod::LeastSquares,
            samples: data.len(),
        },
        objective,
        stationarity: None,
        converged: true,
    })
}

struct IrlsOutcome {
    coef: Matrix,
    stationarity: f64,
    converged: bool,
}

/// Solves `min_B Σ_t w_t ‖y_t − Bᵀ x_t‖²`. `xt` is `xᵀ`; `xw` is scratch
/// space shaped like `x`.
fn weighted_solve(x: &Matrix, xt: &Matrix, y: &Matrix, weights: &[f64], xw: &mut Matrix) -> Result<Matrix> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Singular("degenerate IRLS weights".into()));
    }
    xw.copy_from(x);
    for mut col in xw.column_iter_mut() {
        for (v, w) in col.iter_mut().zip(weights) {
            *v *= w;
        }
    }
    // Xᵀ W X and Xᵀ W Y with W = diag(weights).
    let normal = xt * &*xw;
    let rhs = xw.tr_mul(y);
    if let Some(chol) = normal.cholesky() {
        let coef = chol.solve(&rhs);
        if coef.iter().all(|v| v.is_finite()) {
            return Ok(coef);
        }
    }
    let mut xs = x.clone();
    let mut ys = y.clone();
    for (i, w) in weights.iter().enumerate() {
        let s = w.sqrt();
        xs.row_mut(i).scale_mut(s);
        ys.row_mut(i).scale_mut(s);
    }
    min_norm_solve(&xs, &ys).map(|(coef, _)| coef)
}

fn irls(x: &Matrix, y: &Matrix, opts: &BatchOptions) -> Result<IrlsOutcome> {
    let (mut coef, _) = min_norm_solve(x, y)?;
    let samples = x.nrows();
    let mut weights = vec![0.0; samples];
    let mut scratch = x.clone();
    let xt = x.transpose();
    let mut eps = opts.smoothing_eps0;
    let mut converged = false;
    for stage in 0..opts.max_outer {
        eps = opts.smoothing(stage);
        converged = false;
        for _ in 0..opts.max_inner {
            let resid = y - x * &coef;
            for (w, row) in weights.iter_mut().zip(resid.row_iter()) {
                *w = 1.0 / (row.norm_squared() + eps).sqrt();
            }
            let next = weighted_solve(x, &xt, y, &weights, &mut scratch)?;
            let step = (&next - &coef).norm();
            coef = next;
            if step <= opts.rel_tol * coef.norm() || step == 0.0 {
                converged = true;
                break;
            }
        }
        if eps <= opts.eps_min {
            break;
        }
    }
    let resid = y - x * &coef;
    let mut scaled = resid.clone();
    for (mut row, r) in scaled.row_iter_mut().zip(resid.row_iter()) {
        row /= (r.norm_squared() + eps).sqrt();
    }
    // Gradient of the smoothed objective is −Σ_t (r_t / √(‖r_t‖²+ε)) U_tᵀ.
    let stationarity = x.tr_mul(&scaled).norm();
    Ok(IrlsOutcome {
        coef,
        stationarity,
        converged,
    })
}

/// Robust ℓ2-norm estimator `argmin_G Σ_t ‖y_t − G U_t‖₂`.
pub fn l2_estimator(data: &RegressorDataset, opts: &BatchOptions) -> Result<MarkovEstimate> {
    check_nonempty(data)?;
    opts.validate()?;
    let x = data.design();
    let y = data.target_matrix();
    let out = irls(&x, &y, opts)?;
    if !out.converged {
        warn!(
            "l2 estimator did not reach rel_tol on T = {} (stationarity {:e})",
            data.len(),
            out.stationarity
        );
    }
    let g = out.coef.transpose();
    let objective = l2_objective(data, &g);
    Ok(MarkovEstimate {
        markov: MarkovMatrix::new(g, data.m, data.k)?,
        provenance: Provenance::Batch {
            method: BatchMethod::L2,
            samples: data.len(),
        },
        objective,
        stationarity: Some(out.stationarity),
        converged: out.converged,
    })
}

/// ℓ1-norm estimator: an independent least-absolute-deviations fit per output
/// coordinate.
pub fn l1_estimator(data: &RegressorDataset, opts: &BatchOptions) -> Result<MarkovEstimate> {
    check_nonempty(data)?;
    opts.validate()?;
    let x = data.design();
    let y = data.target_matrix();
    let r = data.r();
    let mut g = Matrix::zeros(r, data.width());
    let mut stationarity = 0.0f64;
    let mut converged = true;
    for i in 0..r {
        let yi = Matrix::from_column_slice(y.nrows(), 1, y.column(i).as_slice());
        let out = irls(&x, &yi, opts)?;
        g.row_mut(i).copy_from(&out.coef.transpose());
        stationarity = stationarity.hypot(out.stationarity);
        converged &= out.converged;
    }
    if !converged {
        warn!("l1 estimator did not reach rel_tol on T = {}", data.len());
    }
    let objective = l1_objective(data, &g);
    Ok(MarkovEstimate {
        markov: MarkovMatrix::new(g, data.m, data.k)?,
        provenance: Provenance::Batch {
            method: BatchMethod::L1,
            samples: data.len(),
        },
        objective,
        stationarity: Some(stationarity),
        converged,
    })
}

/// Inputs to [`theory_bounds`] beyond the system itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams {
    /// Attack probability `p`.
    pub p: f64,
    pub k: usize,
    /// Input standard deviation `σ`.
    pub sigma: f64,
    /// Sub-Gaussian scale `η` of the attacks and initial state.
    pub eta: f64,
    /// Failure probability `δ`.
    pub delta: f64,
    /// Constant multiplying the recovery-time scaling.
    pub c_tstar: f64,
}

/// Scalings of the ℓ2 estimator's recovery time and error floor. Hidden
/// constants are not included; `error_bound` and `t_star_scale` are scalings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryBounds {
    /// `q = 1 − (1−p)^{k−1}`, the chance an attack window is dirty.
    pub q: f64,
    /// `ν = ‖C‖₂/(1−2q) · (η/σ + √m ‖B‖₂)`.
    pub nu: f64,
    pub rho: f64,
    pub k: usize,
    pub t_star_scale: f64,
    pub c_tstar: f64,
    /// `ρ^{k−1} ν / (1−ρ)`.
    pub error_bound: f64,
}

impl TheoryBounds {
    pub fn margin(&self) -> f64 {
        1.0 - 2.0 * self.q
    }
}

/// Probability that at least one of `k − 1` Bernoulli(`p`) attacks fires.
pub fn dirty_window_probability(p: f64, k: usize) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    // 1 − (1−p)^{k−1} without cancellation for small p.
    -((k - 1) as f64 * (-p).ln_1p()).exp_m1()
}

pub fn theory_bounds(
    sys: &SystemModel,
    cert: &StabilityCert,
    params: &TheoryParams,
) -> Result<TheoryBounds> {
    let TheoryParams {
        p,
        k,
        sigma,
        eta,
        delta,
        c_tstar,
    } = *params;
    if k == 0 || !(0.0..1.0).contains(&p) || !(sigma > 0.0) || !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid theory parameters {params:?}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) || !(c_tstar > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1) and c_tstar must be positive, got {params:?}"
        )));
    }
    if k > 1 && p >= 1.0 / (2.0 * (k as f64 - 1.0)) {
        warn!("p = {p} is not below 1/(2(k-1)) for k = {k}");
    }
    let q = dirty_window_probability(p, k);
    let margin = 1.0 - 2.0 * q;
    if margin <= 0.0 {
        return Err(Error::AssumptionViolation { p, k, margin });
    }
    let m = sys.m() as f64;
    let c_norm = linalg::dense_spectral_norm(&sys.c);
    let b_norm = linalg::dense_spectral_norm(&sys.b);
    let nu = c_norm / margin * (eta / sigma + m.sqrt() * b_norm);
    let mk = m * k as f64;
    let t_star_scale = c_tstar * (k as f64 / (margin * margin))
        * (mk * (mk / margin).ln() + (1.0 / delta).ln());
    let rho = cert.rho;
    let error_bound = rho.powi(k as i32 - 1) * nu / (1.0 - rho);
    Ok(TheoryBounds {
        q,
        nu,
        rho,
        k,
        t_star_scale,
        c_tstar,
        error_bound,
    })
}
