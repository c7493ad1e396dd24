//! L1L1: l1 target fit, relaxed l1 off-target penalty and l1 current regularizer.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::conic::{Program, SolverOptions};
use super::shared::{polish, residuals, scale_of, Base};
use super::{finish, Outcome};
use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Montage, SolveReport, SolveStatus, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L1L1Params {
    /// Relaxation level of `psi_eps`.
    pub eps: f64,
    /// Weight of the l1 current regularizer.
    pub alpha_reg: f64,
    /// Coefficient of `|I|^2` added to the objective.
    #[serde(default)]
    pub ridge: f64,
}

impl L1L1Params {
    pub fn new(eps: f64, alpha_reg: f64) -> Self {
        Self {
            eps,
            alpha_reg,
            ridge: 0.0,
        }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.alpha_reg >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha_reg must be nonnegative, got {}", self.alpha_reg)));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidParameter(format!("ridge must be nonnegative, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// Elementwise `max(eps, |w|)`.
pub fn psi_eps(w: &[f64], eps: f64) -> Vec<f64> {
    w.iter().map(|v| v.abs().max(eps)).collect()
}

/// `zeta = |A_f|_1`, the largest absolute column sum.
pub fn zeta(ts: &TargetSpec) -> f64 {
    (0..ts.a_f.ncols())
        .map(|j| ts.a_f.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `nu = |E_des|_inf`.
pub fn nu(ts: &TargetSpec) -> f64 {
    ts.e_des.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// The L1L1 objective evaluated at a montage, ridge included.
pub fn l1l1_objective(ts: &TargetSpec, lp: &L1L1Params, currents: &[f64]) -> f64 {
    let iv = DVector::from_column_slice(currents);
    let nu = nu(ts);
    let fit: f64 = (&ts.a_f * &iv - &ts.e_des).iter().map(|v| v.abs()).sum();
    let off: Vec<f64> = (&ts.t_c * &iv).iter().map(|v| v / nu).collect();
    let psi: f64 = psi_eps(&off, lp.eps).iter().sum();
    let l1: f64 = currents.iter().map(|c| c.abs()).sum();
    fit + psi + lp.alpha_reg * zeta(ts) * l1 + lp.ridge * iv.norm_squared()
}

pub fn solve_l1l1(ts: &TargetSpec, cs: &ConstraintSet, lp: &L1L1Params) -> Result<(Montage, SolveReport)> {
    solve_l1l1_with(ts, cs, lp, &SolverOptions::default())
}

pub fn solve_l1l1_with(
    ts: &TargetSpec,
    cs: &ConstraintSet,
    lp: &L1L1Params,
    opts: &SolverOptions,
) -> Result<(Montage, SolveReport)> {
    cs.validate()?;
    lp.validate()?;
    let nu = nu(ts);
    if nu == 0.0 {
        return Err(Error::InvalidParameter("the off-target normalization |E_des|_inf is zero".into()));
    }
    let n = ts.n_electrodes();
    let k = ts.n_constraints();
    let rows = ts.t_c.nrows();
    let zeta = zeta(ts);
    let mut prog = Program::new();
    let base = Base::add(&mut prog, n, cs);
    let sigma = base.sigma;
    let r0 = prog.vars(k);
    let s0 = prog.vars(rows);
    // Residual variables are scaled by nu; the objective is divided by c.
    let c = scale_of([nu, 1.0].iter());
    for i in 0..k {
        prog.linear(r0 + i, nu / c);
        let mut pos: Vec<(usize, f64)> = (0..n).map(|j| (base.x + j, sigma * ts.a_f[(i, j)] / nu)).collect();
        let mut neg: Vec<(usize, f64)> = pos.iter().map(|&(j, v)| (j, -v)).collect();
        pos.push((r0 + i, -1.0));
        neg.push((r0 + i, -1.0));
        prog.le(&pos, ts.e_des[i] / nu);
        prog.le(&neg, -ts.e_des[i] / nu);
    }
    for r in 0..rows {
        prog.linear(s0 + r, 1.0 / c);
        let mut pos: Vec<(usize, f64)> = Vec::with_capacity(n + 1);
        for j in 0..n {
            let v = ts.t_c[(r, j)];
            if v != 0.0 {
                pos.push((base.x + j, sigma * v / nu));
            }
        }
        let mut neg: Vec<(usize, f64)> = pos.iter().map(|&(j, v)| (j, -v)).collect();
        pos.push((s0 + r, -1.0));
        neg.push((s0 + r, -1.0));
        prog.le(&pos, 0.0);
        prog.le(&neg, 0.0);
        prog.le(&[(s0 + r, -1.0)], -lp.eps);
    }
    let v0 = base.abs_vars();
    for j in 0..n {
        prog.linear(v0 + j, lp.alpha_reg * zeta * sigma / c);
        prog.quad(base.x + j, base.x + j, 2.0 * lp.ridge * sigma * sigma / c);
    }
    let sol = prog.solve(opts)?;
    let mut currents = base.currents(&sol);
    let duals = (sol.status == SolveStatus::Optimal).then(|| base.duals(&sol, c));
    if sol.status == SolveStatus::Optimal {
        polish(&mut currents, None);
    }
    let objective = l1l1_objective(ts, lp, &currents);
    let res = residuals(&currents, cs);
    Ok(Outcome::into_pair(finish("l1l1", sol, currents, objective, res, duals)))
}
