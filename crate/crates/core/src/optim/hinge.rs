//! HingePlace: one-sided penalties on off-target field components.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::conic::{Program, SolverOptions};
use super::shared::{polish, residuals, scale_of, Base};
use super::{finish, Outcome};
use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Montage, SolveReport, SolveStatus, TargetSpec, ToleranceBands};

/// Loss power and tolerance bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HingeParams {
    pub p: u32,
    pub bands: ToleranceBands,
    /// Coefficient of `|I|^2` added to the objective.
    #[serde(default)]
    pub ridge: f64,
}

impl HingeParams {
    pub fn new(p: u32, bands: ToleranceBands) -> Self {
        Self { p, bands, ridge: 0.0 }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    fn validate(&self, n_c: usize) -> Result<()> {
        if !(1..=3).contains(&self.p) {
            return Err(Error::InvalidParameter(format!("hinge power must be 1, 2 or 3, got {}", self.p)));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidParameter(format!("ridge must be nonnegative, got {}", self.ridge)));
        }
        self.bands.validate(n_c)
    }
}

/// Per-component hinge losses `max(0, e - tol+) + max(0, -e - tol-)`, stacked `[x; y; z]`.
pub fn hinge_losses(ts: &TargetSpec, bands: &ToleranceBands, currents: &[f64]) -> Vec<f64> {
    let e = &ts.t_c * DVector::from_column_slice(currents);
    let plus = bands.stacked_plus();
    let minus = bands.stacked_minus();
    e.iter()
        .zip(plus.iter().zip(&minus))
        .map(|(v, (tp, tm))| (v - tp).max(0.0) + (-v - tm).max(0.0))
        .collect()
}

/// `sum_c (gamma_c L_c)^p` plus the ridge term.
pub fn hinge_objective(ts: &TargetSpec, hp: &HingeParams, currents: &[f64]) -> f64 {
    let nc = ts.n_offtarget();
    let loss = hinge_losses(ts, &hp.bands, currents);
    let ridge: f64 = currents.iter().map(|c| c * c).sum::<f64>() * hp.ridge;
    loss.iter()
        .enumerate()
        .map(|(r, l)| (ts.gamma_c[r % nc] * l).powi(hp.p as i32))
        .sum::<f64>()
        + ridge
}

/// Minimizes the weighted hinge objective subject to `A_f I = E_des` and the shared constraints.
pub fn solve_hingeplace(ts: &TargetSpec, cs: &ConstraintSet, hp: &HingeParams) -> Result<(Montage, SolveReport)> {
    solve_hingeplace_with(ts, cs, hp, &SolverOptions::default())
}

pub fn solve_hingeplace_with(
    ts: &TargetSpec,
    cs: &ConstraintSet,
    hp: &HingeParams,
    opts: &SolverOptions,
) -> Result<(Montage, SolveReport)> {
    cs.validate()?;
    let nc = ts.n_offtarget();
    hp.validate(nc)?;
    let n = ts.n_electrodes();
    let rows = 3 * nc;
    let mut prog = Program::new();
    let base = Base::add(&mut prog, n, cs);
    let sigma = base.sigma;
    let tau = sigma * scale_of(ts.t_c.iter());
    let t0 = prog.vars(rows);
    let w0 = if hp.p == 3 { prog.vars(rows) } else { 0 };
    let gmax = scale_of(ts.gamma_c.iter());
    let pf = hp.p as i32;
    let c = (tau * gmax).powi(pf);
    let plus = hp.bands.stacked_plus();
    let minus = hp.bands.stacked_minus();

    for r in 0..rows {
        let g = ts.gamma_c[r % nc];
        let weight = (g * tau).powi(pf) / c;
        match hp.p {
            1 => prog.linear(t0 + r, weight),
            2 => prog.quad(t0 + r, t0 + r, 2.0 * weight),
            _ => prog.linear(w0 + r, weight),
        }
        let mut pos: Vec<(usize, f64)> = Vec::with_capacity(n + 1);
        let mut neg: Vec<(usize, f64)> = Vec::with_capacity(n + 1);
        for j in 0..n {
            let v = ts.t_c[(r, j)];
            if v != 0.0 {
                pos.push((base.x + j, sigma * v / tau));
                neg.push((base.x + j, -sigma * v / tau));
            }
        }
        pos.push((t0 + r, -1.0));
        neg.push((t0 + r, -1.0));
        prog.le(&pos, plus[r] / tau);
        prog.le(&neg, minus[r] / tau);
        if hp.p == 1 {
            prog.le(&[(t0 + r, -1.0)], 0.0);
        }
    }
    if hp.p == 3 {
        for r in 0..rows {
            prog.pow(
                1.0 / 3.0,
                [(vec![(w0 + r, -1.0)], 0.0), (Vec::new(), 1.0), (vec![(t0 + r, -1.0)], 0.0)],
            );
        }
    }
    if hp.ridge > 0.0 {
        for j in 0..n {
            prog.quad(base.x + j, base.x + j, 2.0 * hp.ridge * sigma * sigma / c);
        }
    }
    let mut target_rows = Vec::new();
    for k in 0..ts.n_constraints() {
        let rk = sigma * scale_of(ts.a_f.row(k).iter());
        let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (base.x + j, sigma * ts.a_f[(k, j)] / rk)).collect();
        target_rows.push((prog.eq(&coeffs, ts.e_des[k] / rk), rk));
    }

    let sol = prog.solve(opts)?;
    let mut currents = base.currents(&sol);
    let duals = (sol.status == SolveStatus::Optimal).then(|| {
        let mut d = base.duals(&sol, c);
        d.beta = target_rows.iter().map(|&(row, rk)| c * sol.z[row] / rk).collect();
        d
    });
    if sol.status == SolveStatus::Optimal {
        polish(&mut currents, Some((&ts.a_f, &ts.e_des)));
    }
    let objective = hinge_objective(ts, hp, &currents);
    let mut res = residuals(&currents, cs);
    res.target = Some((ts.target_field(&currents) - &ts.e_des).norm());
    let name = format!("hingeplace-p{}", hp.p);
    Ok(Outcome::into_pair(finish(&name, sol, currents, objective, res, duals)))
}
