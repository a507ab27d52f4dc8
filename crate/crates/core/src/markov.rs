//! Markov parameter matrices, stacked regressors and the attack-window
//! residual.
//!
//! With `U_t = [u_t; u_{t−1}; …; u_{t−k+1}]` (newest first) every observation
//! decomposes as
//!
//! ```text
//! y_t = G U_t + v_t + C A^{k−1} x_{t−k+1},   v_t = Σ_{j=1}^{k−1} C A^{j−1} w_{t−j}
//! ```
//!
//! where `G = [D | CB | CAB | … | CA^{k−2}B]`.

use std::io::{BufWriter, Write};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::simkit::{SystemModel, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovMatrix {
    pub g: Matrix,
    pub k: usize,
    pub m: usize,
}

impl MarkovMatrix {
    pub fn new(g: Matrix, m: usize, k: usize) -> Result<Self> {
        if m == 0 || k == 0 || g.ncols() != m * k || g.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "Markov matrix must be r x {m}*{k}, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
        Ok(Self { g, k, m })
    }

    pub fn zeros(r: usize, m: usize, k: usize) -> Self {
        Self {
            g: Matrix::zeros(r, m * k),
            k,
            m,
        }
    }

    pub fn r(&self) -> usize {
        self.g.nrows()
    }

    /// Block `i`: `D` for `i = 0`, `C A^{i−1} B` afterwards.
    pub fn block(&self, i: usize) -> Matrix {
        self.g.columns(i * self.m, self.m).into_owned()
    }

    pub fn feedthrough(&self) -> Matrix {
        self.block(0)
    }

    /// The blocks `CB, CAB, …, CA^{k−2}B`.
    pub fn impulse_blocks(&self) -> Vec<Matrix> {
        (1..self.k).map(|i| self.block(i)).collect()
    }
}

/// `[D | CB | CAB | … | CA^{k−2}B]`.
pub fn true_markov(sys: &SystemModel, k: usize) -> Result<MarkovMatrix> {
    if k == 0 {
        return Err(Error::InvalidArgument("Markov order k must be >= 1".into()));
    }
    let (m, r) = (sys.m(), sys.r());
    let mut g = Matrix::zeros(r, m * k);
    g.columns_mut(0, m).copy_from(&sys.d);
    let mut a_pow_b = sys.b.clone();
    for i in 1..k {
        g.columns_mut(i * m, m).copy_from(&(&sys.c * &a_pow_b));
        a_pow_b = &sys.a * &a_pow_b;
    }
    MarkovMatrix::new(g, m, k)
}

/// `U_t^{(k)}` from a sequence of inputs.
pub fn stacked_regressor(inputs: &[Vector], t: usize, k: usize) -> Vector {
    let m = inputs[t].len();
    let mut out = Vector::zeros(m * k);
    for j in 0..k {
        out.rows_mut(j * m, m).copy_from(&inputs[t - j]);
    }
    out
}

/// Regression pairs `(y_t, U_t^{(k)})` for `t = k−1..len−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorDataset {
    pub targets: Vec<Vector>,
    pub regressors: Vec<Vector>,
    pub times: Vec<usize>,
    pub k: usize,
    pub m: usize,
}

impl RegressorDataset {
    /// Number of samples `T`.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn r(&self) -> usize {
        self.targets.first().map_or(0, Vector::len)
    }

    pub fn width(&self) -> usize {
        self.m * self.k
    }

    /// The first `len` samples.
    pub fn prefix(&self, len: usize) -> RegressorDataset {
        let len = len.min(self.len());
        RegressorDataset {
            targets: self.targets[..len].to_vec(),
            regressors: self.regressors[..len].to_vec(),
            times: self.times[..len].to_vec(),
            k: self.k,
            m: self.m,
        }
    }

    /// Samples observed strictly before time `t`.
    pub fn before_time(&self, t: usize) -> RegressorDataset {
        self.prefix(self.times.partition_point(|&s| s < t))
    }

    /// Sample index holding time `t`, if present.
    pub fn index_of(&self, t: usize) -> Option<usize> {
        let first = *self.times.first()?;
        let idx = t.checked_sub(first)?;
        (idx < self.len()).then_some(idx)
    }

    /// Design matrix with rows `U_tᵀ` (`T x mk`).
    pub fn design(&self) -> Matrix {
        Matrix::from_fn(self.len(), self.width(), |i, j| self.regressors[i][j])
    }

    /// Targets stacked as rows (`T x r`).
    pub fn target_matrix(&self) -> Matrix {
        Matrix::from_fn(self.len(), self.r(), |i, j| self.targets[i][j])
    }

    /// Writes `t,y_1..y_r,U_1..U_mk`, one row per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=self.r()).map(|i| format!("y_{i}")));
        cols.extend((1..=self.width()).map(|i| format!("U_{i}")));
        writeln!(out, "{}", cols.join(","))?;
        for ((t, y), u) in self.times.iter().zip(&self.targets).zip(&self.regressors) {
            let mut row = vec![t.to_string()];
            row.extend(y.iter().map(f64::to_string));
            row.extend(u.iter().map(f64::to_string));
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn build_dataset(traj: &Trajectory) -> Result<RegressorDataset> {
    build_dataset_with_order(traj, traj.k)
}

/// As [`build_dataset`] but with an explicit order `k`.
pub fn build_dataset_with_order(traj: &Trajectory, k: usize) -> Result<RegressorDataset> {
    if k == 0 {
        return Err(Error::InvalidArgument("Markov order k must be >= 1".into()));
    }
    if traj.len() < k {
        return Err(Error::InvalidArgument(format!(
            "trajectory of length {} is shorter than k = {k}",
            traj.len()
        )));
    }
    let times: Vec<usize> = (k - 1..traj.len()).collect();
    Ok(RegressorDataset {
        targets: times.iter().map(|&t| traj.observations[t].clone()).collect(),
        regressors: times
            .iter()
            .map(|&t| stacked_regressor(&traj.inputs, t, k))
            .collect(),
        times,
        k,
        m: traj.m(),
    })
}

/// `v_t = Σ_{j=1}^{k−1} C A^{j−1} w_{t−j}`.
pub fn residual_v(sys: &SystemModel, traj: &Trajectory, t: usize) -> Result<Vector> {
    let k = traj.k;
    if t + 1 < k || t >= traj.len() {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside [{}, {})",
            k.saturating_sub(1),
            traj.len()
        )));
    }
    let mut v = Vector::zeros(sys.r());
    let mut ca = sys.c.clone();
    for j in 1..k {
        v += &ca * &traj.attack_values[t - j];
        ca = &ca * &sys.a;
    }
    Ok(v)
}

/// `C A^{k−1} x_{t−k+1}`, the initial-state tail of the decomposition.
pub fn state_tail(sys: &SystemModel, traj: &Trajectory, t: usize) -> Result<Vector> {
    let k = traj.k;
    if t + 1 < k || t >= traj.len() {
        return Err(Error::InvalidArgument(format!("time {t} out of range")));
    }
    let mut x = traj.states[t + 1 - k].clone();
    for _ in 1..k {
        x = &sys.a * x;
    }
    Ok(&sys.c * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorNorm {
    Frobenius,
    Spectral,
}

/// `‖G* − Ĝ‖` in the requested norm.
pub fn estimation_error(g_hat: &MarkovMatrix, g_star: &MarkovMatrix, norm: ErrorNorm) -> Result<f64> {
    if g_hat.g.shape() != g_star.g.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, truth is {:?}",
            g_hat.g.shape(),
            g_star.g.shape()
        )));
    }
    let diff = &g_star.g - &g_hat.g;
    Ok(match norm {
        ErrorNorm::Frobenius => diff.norm(),
        ErrorNorm::Spectral => linalg::dense_spectral_norm(&diff),
    })
}
