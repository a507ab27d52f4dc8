//! Block-Hankel matrices and Ho-Kalman balanced truncation.

use std::io::{BufWriter, Write};

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::markov::MarkovMatrix;
use crate::simkit::{verify_stability, StabilityCert, SystemModel};

/// Default truncation tolerance for "infinite" Hankel matrices.
pub const TRUNC_TOL: f64 = 1e-12;
/// Largest number of blocks a truncated Hankel may have.
pub const MAX_BLOCKS: usize = 2000;
/// Singular values at or below this cannot anchor a truncation.
pub const SIGMA_FLOOR: f64 = 1e-10;
/// Horizon of the stability certificate used for truncation.
pub const CERT_HORIZON: usize = 200;

/// `β x β` grid of `r x m` blocks; block `(i, j)` (0-indexed) is
/// `C A^{α+i+j} B`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockHankel {
    pub data: Matrix,
    pub alpha: usize,
    pub beta: usize,
    pub r: usize,
    pub m: usize,
}

impl BlockHankel {
    pub fn block(&self, i: usize, j: usize) -> Matrix {
        self.data
            .view((i * self.r, j * self.m), (self.r, self.m))
            .into_owned()
    }

    /// Whether blocks on each anti-diagonal agree to within `tol`.
    pub fn is_block_hankel(&self, tol: f64) -> bool {
        for i in 0..self.beta {
            for j in 0..self.beta {
                if i + 1 < self.beta && j > 0 {
                    let diff = (self.block(i, j) - self.block(i + 1, j - 1)).abs().max();
                    if diff > tol {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.data, out)
    }
}

/// Builds `H_{α,β}` from `params[p] = C A^p B`; powers beyond the list are
/// zero blocks.
pub fn hankel_from_markov(params: &[Matrix], alpha: usize, beta: usize) -> Result<BlockHankel> {
    if beta == 0 {
        return Err(Error::InvalidArgument("Hankel block size must be >= 1".into()));
    }
    let first = params
        .first()
        .ok_or_else(|| Error::Empty("no Markov parameters to build a Hankel from".into()))?;
    let (r, m) = first.shape();
    if params.iter().any(|p| p.shape() != (r, m)) {
        return Err(Error::Dimension("Markov parameter blocks differ in shape".into()));
    }
    let mut data = Matrix::zeros(r * beta, m * beta);
    for i in 0..beta {
        for j in 0..beta {
            if let Some(block) = params.get(alpha + i + j) {
                data.view_mut((i * r, j * m), (r, m)).copy_from(block);
            }
        }
    }
    Ok(BlockHankel {
        data,
        alpha,
        beta,
        r,
        m,
    })
}

/// Impulse blocks `C A^p B` for `p = 0..count`.
pub fn impulse_blocks(sys: &SystemModel, count: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(count);
    let mut ab = sys.b.clone();
    for _ in 0..count {
        out.push(&sys.c * &ab);
        ab = &sys.a * &ab;
    }
    out
}

/// `√2 ψ³ ρ^d ‖C‖₂ ‖B‖₂ / (1 − ρ²)`: bound on the part of `H_{0,∞}` outside
/// its leading `d x d` blocks.
pub fn tail_bound(cert: &StabilityCert, d: usize, c_norm: f64, b_norm: f64) -> f64 {
    let rho = cert.rho;
    2f64.sqrt() * cert.psi.powi(3) * rho.powi(d as i32) * c_norm * b_norm / (1.0 - rho * rho)
}

/// `H_{0,β}` of the true system with `β` large enough that `ψ ρ^β` falls to
/// `trunc_tol`, standing in for `H_{0,∞}`.
#[derive(Debug, Clone)]
pub struct TruncatedHankel {
    pub hankel: BlockHankel,
    pub cert: StabilityCert,
    /// Tail bound at the chosen `β`.
    pub tail_bound: f64,
}

pub fn hankel_true_truncated(sys: &SystemModel, trunc_tol: f64) -> Result<TruncatedHankel> {
    let cert = verify_stability(sys, CERT_HORIZON)?;
    let mut beta = 1;
    while beta < MAX_BLOCKS && cert.psi * cert.rho.powi(beta as i32) > trunc_tol {
        beta += 1;
    }
    let params = impulse_blocks(sys, 2 * beta - 1);
    let hankel = hankel_from_markov(&params, 0, beta)?;
    let c_norm = linalg::dense_spectral_norm(&sys.c);
    let b_norm = linalg::dense_spectral_norm(&sys.b);
    Ok(TruncatedHankel {
        hankel,
        cert,
        tail_bound: tail_bound(&cert, beta, c_norm, b_norm),
    })
}

/// Hankel block size used for an order-`k` estimate: `⌊k/2⌋`.
pub fn estimated_block_size(k: usize) -> usize {
    k / 2
}

/// `(H_{0,β}, H_{1,β})` from an estimated Markov matrix with `β = ⌊k/2⌋`.
pub fn estimated_hankels(markov: &MarkovMatrix) -> Result<(BlockHankel, BlockHankel)> {
    let beta = estimated_block_size(markov.k);
    if beta == 0 {
        return Err(Error::InvalidArgument(format!(
            "order k = {} is too small for a Hankel realization",
            markov.k
        )));
    }
    let params = markov.impulse_blocks();
    Ok((
        hankel_from_markov(&params, 0, beta)?,
        hankel_from_markov(&params, 1, beta)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealizedModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d_hat: Matrix,
    pub order: usize,
    /// Singular values of `H_{0,β}`, non-increasing.
    pub singular_values: Vec<f64>,
}

impl RealizedModel {
    pub fn with_feedthrough(mut self, d_hat: Matrix) -> Result<Self> {
        if d_hat.shape() != (self.c.nrows(), self.b.ncols()) {
            return Err(Error::Dimension(format!(
                "feedthrough is {:?}, model needs {}x{}",
                d_hat.shape(),
                self.c.nrows(),
                self.b.ncols()
            )));
        }
        self.d_hat = d_hat;
        Ok(self)
    }

    /// `Ĉ Â^i B̂` for `i = 0..count`.
    pub fn impulse_blocks(&self, count: usize) -> Vec<Matrix> {
        let mut out = Vec::with_capacity(count);
        let mut ab = self.b.clone();
        for _ in 0..count {
            out.push(&self.c * &ab);
            ab = &self.a * &ab;
        }
        out
    }

    /// Writes the four matrices as labelled CSV sections.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        for (name, mat) in [("A", &self.a), ("B", &self.b), ("C", &self.c), ("D", &self.d_hat)] {
            writeln!(out, "# {name} {}x{}", mat.nrows(), mat.ncols())?;
            write_matrix_csv(mat, &mut out)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `index,sigma` rows for scree plots.
    pub fn write_spectrum<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        writeln!(out, "index,sigma")?;
        for (i, s) in self.singular_values.iter().enumerate() {
            writeln!(out, "{},{s}", i + 1)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn write_matrix_csv<W: Write>(m: &Matrix, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Order-`order` balanced truncation from `H0 = H_{0,β} = UΣVᵀ` and the
/// shifted `H1 = H_{1,β}`:
///
/// ```text
/// C = (U_d Σ_d^{1/2})[rows 1..r],  B = (Σ_d^{1/2} V_dᵀ)[cols 1..m],
/// A = Σ_d^{−1/2} U_dᵀ H1 V_d Σ_d^{−1/2}
/// ```
///
/// The feedthrough is left at zero; attach it with
/// [`RealizedModel::with_feedthrough`].
pub fn balanced_truncation(h0: &BlockHankel, h1: &BlockHankel, order: usize) -> Result<RealizedModel> {
    if order == 0 {
        return Err(Error::InvalidArgument("truncation order must be >= 1".into()));
    }
    if h0.data.shape() != h1.data.shape() || (h0.r, h0.m) != (h1.r, h1.m) {
        return Err(Error::Dimension("H0 and H1 differ in shape".into()));
    }
    let max_order = h0.data.nrows().min(h0.data.ncols());
    if order > max_order {
        return Err(Error::InvalidArgument(format!(
            "truncation order {order} exceeds the Hankel rank bound {max_order}"
        )));
    }
    let svd = h0.data.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();
    let sigma_d = singular_values[order - 1];
    if sigma_d <= SIGMA_FLOOR {
        return Err(Error::RankDeficient {
            d: order,
            sigma_d,
            floor: SIGMA_FLOOR,
            singular_values,
        });
    }
    if let Some(next) = singular_values.get(order) {
        if *next > 1e-3 * sigma_d {
            warn!("truncating at order {order} drops sigma_{} = {next:e}", order + 1);
        }
    }
    let rows = h0.data.nrows();
    let cols = h0.data.ncols();
    let mut u_d = Matrix::zeros(rows, order);
    let mut v_d = Matrix::zeros(cols, order);
    for (c, &i) in idx.iter().take(order).enumerate() {
        u_d.set_column(c, &u.column(i));
        v_d.set_column(c, &v_t.row(i).transpose());
    }
    let root: Vec<f64> = singular_values[..order].iter().map(|s| s.sqrt()).collect();
    let mut obs = u_d.clone();
    let mut ctrl_t = v_d.clone();
    for (c, &s) in root.iter().enumerate() {
        obs.column_mut(c).scale_mut(s);
        ctrl_t.column_mut(c).scale_mut(s);
    }
    let c_d = obs.rows(0, h0.r).into_owned();
    let b_d = ctrl_t.rows(0, h0.m).transpose();
    let mut a_d = u_d.tr_mul(&h1.data) * &v_d;
    for i in 0..order {
        for j in 0..order {
            a_d[(i, j)] /= root[i] * root[j];
        }
    }
    Ok(RealizedModel {
        a: a_d,
        b: b_d,
        c: c_d,
        d_hat: Matrix::zeros(h0.r, h0.m),
        order,
        singular_values,
    })
}

/// Balanced truncation of an estimated Markov matrix, with `D̂` taken from its
/// first block.
pub fn realize(markov: &MarkovMatrix, order: usize) -> Result<RealizedModel> {
    let (h0, h1) = estimated_hankels(markov)?;
    balanced_truncation(&h0, &h1, order)?.with_feedthrough(markov.feedthrough())
}

/// Spectral norm of `H_ref − H_est` after zero-padding both to a common size.
pub fn hankel_error(h_ref: &BlockHankel, h_est: &BlockHankel) -> Result<f64> {
    if (h_ref.r, h_ref.m) != (h_est.r, h_est.m) {
        return Err(Error::Dimension(format!(
            "block shapes differ: {}x{} vs {}x{}",
            h_ref.r, h_ref.m, h_est.r, h_est.m
        )));
    }
    let rows = h_ref.data.nrows().max(h_est.data.nrows());
    let cols = h_ref.data.ncols().max(h_est.data.ncols());
    let mut diff = Matrix::zeros(rows, cols);
    diff.view_mut((0, 0), h_ref.data.shape()).copy_from(&h_ref.data);
    let mut est = diff.view_mut((0, 0), h_est.data.shape());
    est -= &h_est.data;
    Ok(linalg::dense_spectral_norm(&diff))
}

/// Similarity-invariant model quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovMatch {
    /// `max_{i ≤ horizon} ‖Ĉ Â^i B̂ − C A^i B‖₂`.
    pub impulse: f64,
    /// `‖D̂ − D‖₂`.
    pub feedthrough: f64,
}

pub fn markov_match_error(model: &RealizedModel, sys: &SystemModel, horizon: usize) -> Result<MarkovMatch> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    if model.c.nrows() != sys.r() || model.b.ncols() != sys.m() {
        return Err(Error::Dimension("model and system differ in r or m".into()));
    }
    let est = model.impulse_blocks(horizon + 1);
    let truth = impulse_blocks(sys, horizon + 1);
    let impulse = est
        .iter()
        .zip(&truth)
        .map(|(e, t)| linalg::dense_spectral_norm(&(e - t)))
        .fold(0.0, f64::max);
    Ok(MarkovMatch {
        impulse,
        feedthrough: linalg::dense_spectral_norm(&(&model.d_hat - &sys.d)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use crate::simkit::gen_system;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn scalar_system(a: f64) -> SystemModel {
        SystemModel::new(scalar(a), scalar(1.0), scalar(1.0), scalar(0.0)).unwrap()
    }

    #[test]
    fn scalar_placement() {
        let params: Vec<Matrix> = [1.0, 0.5, 0.25, 0.125].iter().map(|&v| scalar(v)).collect();
        let h = hankel_from_markov(&params, 0, 2).unwrap();
        assert_eq!(h.data, Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.25]));
        let single = hankel_from_markov(&params, 1, 1).unwrap();
        assert_eq!(single.data, scalar(0.5));
        assert!(hankel_from_markov(&params, 0, 0).is_err());
    }

    #[test]
    fn missing_blocks_are_zero() {
        let params = vec![scalar(1.0), scalar(2.0)];
        let h = hankel_from_markov(&params, 1, 2).unwrap();
        assert_eq!(h.data, Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn matches_direct_definition() {
        let sys = gen_system(4, 2, 3, 0.8, &mut from_seed(6)).unwrap();
        let (alpha, beta) = (1, 4);
        let h = hankel_from_markov(&impulse_blocks(&sys, alpha + 2 * beta), alpha, beta).unwrap();
        assert!(h.is_block_hankel(0.0));
        for i in 0..beta {
            for j in 0..beta {
                // Oracle: fresh power of A for every block.
                let mut p = Matrix::identity(4, 4);
                for _ in 0..alpha + i + j {
                    p = &p * &sys.a;
                }
                let expect = &sys.c * p * &sys.b;
                assert!((h.block(i, j) - expect).abs().max() <= 1e-12);
            }
        }
    }

    #[test]
    fn truncated_true_hankel_cases() {
        let nil = SystemModel::new(scalar(0.0), scalar(2.0), scalar(3.0), scalar(0.0)).unwrap();
        let th = hankel_true_truncated(&nil, TRUNC_TOL).unwrap();
        assert_eq!(th.hankel.beta, 1);
        assert_eq!(th.hankel.data, scalar(6.0));

        let geo = hankel_true_truncated(&scalar_system(0.5), TRUNC_TOL).unwrap();
        for i in 0..geo.hankel.beta {
            for j in 0..geo.hankel.beta {
                assert!((geo.hankel.data[(i, j)] - 0.5f64.powi((i + j) as i32)).abs() < 1e-15);
            }
        }
        let c = &geo.cert;
        let expect = 2f64.sqrt() * c.psi.powi(3) * c.rho.powi(geo.hankel.beta as i32)
            / (1.0 - c.rho * c.rho);
        assert!((geo.tail_bound - expect).abs() <= 1e-15 * expect.max(1.0));
    }

    #[test]
    fn scalar_round_trip() {
        let params = impulse_blocks(&scalar_system(0.5), 8);
        let beta = 4;
        let h0 = hankel_from_markov(&params, 0, beta).unwrap();
        let h1 = hankel_from_markov(&params, 1, beta).unwrap();
        let model = balanced_truncation(&h0, &h1, 1).unwrap();
        for (i, blk) in model.impulse_blocks(2 * beta - 1).iter().enumerate() {
            assert!((blk[(0, 0)] - 0.5f64.powi(i as i32)).abs() < 1e-8, "i = {i}");
        }
        assert!(model.singular_values[1] < 1e-12);
        assert!(model
            .singular_values
            .windows(2)
            .all(|w| w[0] >= w[1]));
    }

    #[test]
    fn zero_hankel_is_rank_deficient() {
        let z = hankel_from_markov(&[Matrix::zeros(2, 2)], 0, 3).unwrap();
        match balanced_truncation(&z, &z, 1) {
            Err(Error::RankDeficient { singular_values, .. }) => {
                assert_eq!(singular_values.len(), 6)
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        assert!(balanced_truncation(&z, &z, 0).is_err());
    }

    #[test]
    fn hankel_error_cases() {
        let sys = gen_system(3, 2, 2, 0.7, &mut from_seed(8)).unwrap();
        let params = impulse_blocks(&sys, 7);
        let h = hankel_from_markov(&params, 0, 4).unwrap();
        assert_eq!(hankel_error(&h, &h).unwrap(), 0.0);

        let mut zeroed = params.clone();
        zeroed[2] = Matrix::zeros(2, 2);
        let h_est = hankel_from_markov(&zeroed, 0, 4).unwrap();
        // Oracle: the difference places CA²B on the third anti-diagonal only.
        let mut only = vec![Matrix::zeros(2, 2); 7];
        only[2] = params[2].clone();
        let placed = hankel_from_markov(&only, 0, 4).unwrap();
        let expect = placed.data.clone().svd(false, false).singular_values.max();
        let err = hankel_error(&h, &h_est).unwrap();
        assert!((err - expect).abs() < 1e-12);

        let small = hankel_from_markov(&params, 0, 2).unwrap();
        let forward = hankel_error(&h, &small).unwrap();
        let backward = hankel_error(&small, &h).unwrap();
        assert!((forward - backward).abs() <= 1e-12 * forward);
        let other = hankel_from_markov(&[Matrix::zeros(1, 2)], 0, 2).unwrap();
        assert!(hankel_error(&h, &other).is_err());
    }

    #[test]
    fn markov_match_identical_is_zero() {
        let sys = gen_system(3, 1, 2, 0.6, &mut from_seed(2)).unwrap();
        let model = RealizedModel {
            a: sys.a.clone(),
            b: sys.b.clone(),
            c: sys.c.clone(),
            d_hat: sys.d.clone(),
            order: 3,
            singular_values: vec![],
        };
        let mm = markov_match_error(&model, &sys, 10).unwrap();
        assert_eq!(mm.impulse, 0.0);
        assert_eq!(mm.feedthrough, 0.0);
        assert!(markov_match_error(&model, &sys, 0).is_err());
    }
}
