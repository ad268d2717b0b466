//! Exact filter and Rauch-Tung-Striebel smoother for linear-Gaussian models.

use crate::error::{PompError, Result};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// `x_n = c + A x_{n-1} + w_n`, `w_n ~ N(0, Q)`;
/// `y_n = d + H x_n + v_n`, `v_n ~ N(0, R)`; `x_0 ~ N(m0, P0)`.
#[derive(Debug, Clone)]
pub struct LinearGaussian {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub d: DVector<f64>,
    pub r: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct KalmanOutput {
    pub loglik: f64,
    pub cond_loglik: Vec<f64>,
    /// Filter means `E[x_n | y_1:n]`, `n = 1..=N`.
    pub filter_means: Vec<DVector<f64>>,
    pub filter_covs: Vec<DMatrix<f64>>,
    /// Smoother means `E[x_n | y_1:N]`, `n = 1..=N`.
    pub smoother_means: Vec<DVector<f64>>,
    pub smoother_covs: Vec<DMatrix<f64>>,
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(PompError::InvalidArgument(format!("{name} is not square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(PompError::InvalidArgument(format!("{name} has non-finite entries")));
    }
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(1.0);
    if asym > 1e-10 * scale {
        return Err(PompError::InvalidArgument(format!("{name} is not symmetric")));
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
        return Err(PompError::InvalidArgument(format!("{name} is not positive semidefinite")));
    }
    Ok(())
}

impl LinearGaussian {
    fn validate(&self) -> Result<()> {
        let dx = self.a.nrows();
        let dy = self.h.nrows();
        let ok = self.a.ncols() == dx
            && self.c.len() == dx
            && self.q.shape() == (dx, dx)
            && self.h.ncols() == dx
            && self.d.len() == dy
            && self.r.shape() == (dy, dy)
            && self.m0.len() == dx
            && self.p0.shape() == (dx, dx);
        if !ok {
            return Err(PompError::InvalidArgument("inconsistent linear-Gaussian dimensions".into()));
        }
        check_psd("process covariance", &self.q)?;
        check_psd("measurement covariance", &self.r)?;
        check_psd("initial covariance", &self.p0)
    }

    /// Run the filter and smoother over observations `ys` (one row per time).
    pub fn run(&self, ys: &[Vec<f64>]) -> Result<KalmanOutput> {
        self.validate()?;
        let dy = self.h.nrows();
        let mut m = self.m0.clone();
        let mut p = self.p0.clone();
        let mut cond = Vec::with_capacity(ys.len());
        let (mut pm, mut pp, mut fm, mut fp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (n, y) in ys.iter().enumerate() {
            if y.len() != dy {
                return Err(PompError::InvalidData(format!("observation {} has wrong length", n + 1)));
            }
            let y = DVector::from_column_slice(y);
            m = &self.c + &self.a * &m;
            p = &self.a * &p * self.a.transpose() + &self.q;
            p = (&p + p.transpose()) * 0.5;
            pm.push(m.clone());
            pp.push(p.clone());
            let resid = y - (&self.d + &self.h * &m);
            let s = &self.h * &p * self.h.transpose() + &self.r;
            let chol = s.clone().cholesky().ok_or_else(|| {
                PompError::Numerical(format!("innovation covariance not positive definite at step {}", n + 1))
            })?;
            let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let sinv_r = chol.solve(&resid);
            cond.push(-0.5 * (dy as f64 * (2.0 * PI).ln() + logdet + resid.dot(&sinv_r)));
            let k = chol.solve(&(&self.h * &p)).transpose();
            m = &m + &k * resid;
            p = &p - &k * &self.h * &p;
            p = (&p + p.transpose()) * 0.5;
            fm.push(m.clone());
            fp.push(p.clone());
        }
        let (sm, sp) = rts(&self.a, &pm, &pp, &fm, &fp);
        Ok(KalmanOutput {
            loglik: cond.iter().sum(),
            cond_loglik: cond,
            filter_means: fm,
            filter_covs: fp,
            smoother_means: sm,
            smoother_covs: sp,
        })
    }
}

fn rts(
    a: &DMatrix<f64>,
    pm: &[DVector<f64>],
    pp: &[DMatrix<f64>],
    fm: &[DVector<f64>],
    fp: &[DMatrix<f64>],
) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let n = fm.len();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut sm = fm.to_vec();
    let mut sp = fp.to_vec();
    for k in (0..n - 1).rev() {
        let pred_inv = pp[k + 1]
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| pp[k + 1].clone().pseudo_inverse(1e-12).expect("pseudo-inverse"));
        let g = &fp[k] * a.transpose() * pred_inv;
        sm[k] = &fm[k] + &g * (&sm[k + 1] - &pm[k + 1]);
        sp[k] = &fp[k] + &g * (&sp[k + 1] - &pp[k + 1]) * g.transpose();
    }
    (sm, sp)
}
