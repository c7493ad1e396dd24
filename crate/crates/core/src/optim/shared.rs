//! Constraints common to every program, in scaled variables `x = I / I_safe`.

use nalgebra::{DMatrix, DVector};

use super::conic::{ConicSolution, Program};
use crate::model::{ConstraintSet, Duals, PrimalResiduals, SafetyBound};

/// Variable and row handles for the shared block.
pub(crate) struct Base {
    pub n: usize,
    /// First current variable.
    pub x: usize,
    /// Current scale (`I_safe`).
    pub sigma: f64,
    zero_sum: usize,
    l1: usize,
    upper: Vec<usize>,
    lower: Vec<usize>,
    abs_pos: Vec<usize>,
    abs_neg: Vec<usize>,
}

impl Base {
    /// Adds `1^T I = 0`, the per-electrode bound and the l1 epigraph.
    pub fn add(prog: &mut Program, n: usize, cs: &ConstraintSet) -> Self {
        let sigma = cs.i_safe;
        let x = prog.vars(n);
        let v = prog.vars(n);
        let all: Vec<(usize, f64)> = (0..n).map(|j| (x + j, 1.0)).collect();
        let zero_sum = prog.eq(&all, 0.0);
        let mut abs_pos = Vec::with_capacity(n);
        let mut abs_neg = Vec::with_capacity(n);
        for j in 0..n {
            abs_pos.push(prog.le(&[(x + j, 1.0), (v + j, -1.0)], 0.0));
            abs_neg.push(prog.le(&[(x + j, -1.0), (v + j, -1.0)], 0.0));
        }
        let budget: Vec<(usize, f64)> = (0..n).map(|j| (v + j, 1.0)).collect();
        let l1 = prog.le(&budget, cs.l1_budget() / sigma);
        let upper = (0..n).map(|j| prog.le(&[(x + j, 1.0)], 1.0)).collect();
        let lower = match cs.bound {
            SafetyBound::Symmetric => (0..n).map(|j| prog.le(&[(x + j, -1.0)], 1.0)).collect(),
            SafetyBound::UpperOnly => Vec::new(),
        };
        Self {
            n,
            x,
            sigma,
            zero_sum,
            l1,
            upper,
            lower,
            abs_pos,
            abs_neg,
        }
    }

    /// Index of the l1 epigraph variables.
    pub fn abs_vars(&self) -> usize {
        self.x + self.n
    }

    pub fn currents(&self, sol: &ConicSolution) -> Vec<f64> {
        (0..self.n).map(|j| self.sigma * sol.x[self.x + j]).collect()
    }

    /// Multipliers in current units given the objective scale `c`.
    pub fn duals(&self, sol: &ConicSolution, c: f64) -> Duals {
        let k = c / self.sigma;
        Duals {
            mu: k * sol.z[self.zero_sum],
            beta: Vec::new(),
            delta: k * sol.z[self.l1],
            nu: self.upper.iter().map(|&r| k * sol.z[r]).collect(),
            kappa: if self.lower.is_empty() {
                vec![0.0; self.n]
            } else {
                self.lower.iter().map(|&r| k * sol.z[r]).collect()
            },
            lambda: None,
        }
    }

    /// Per-electrode split of the l1 multiplier, `(z+ - z-) / delta`.
    #[allow(dead_code)]
    pub fn l1_signs(&self, sol: &ConicSolution) -> Vec<f64> {
        let d = sol.z[self.l1];
        self.abs_pos
            .iter()
            .zip(&self.abs_neg)
            .map(|(&p, &q)| if d > 0.0 { (sol.z[p] - sol.z[q]) / d } else { 0.0 })
            .collect()
    }
}

/// Minimal-norm correction onto `{1^T I = 0}` and optional `A I = e`.
pub(crate) fn polish(currents: &mut [f64], target: Option<(&DMatrix<f64>, &DVector<f64>)>) {
    let n = currents.len();
    let k = target.map_or(0, |(a, _)| a.nrows());
    let mut b = DMatrix::zeros(k + 1, n);
    let mut rhs = DVector::zeros(k + 1);
    b.row_mut(0).fill(1.0);
    if let Some((a, e)) = target {
        b.view_mut((1, 0), (k, n)).copy_from(a);
        rhs.rows_mut(1, k).copy_from(e);
    }
    let i = DVector::from_column_slice(currents);
    let resid = &b * &i - rhs;
    let gram = &b * b.transpose();
    let step = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&resid),
        None => match gram.pseudo_inverse(1e-14) {
            Ok(pinv) => pinv * resid,
            Err(_) => return,
        },
    };
    let corr = b.transpose() * step;
    for (c, d) in currents.iter_mut().zip(corr.iter()) {
        *c -= d;
    }
}

/// Shared-constraint residuals of a montage.
pub(crate) fn residuals(currents: &[f64], cs: &ConstraintSet) -> PrimalResiduals {
    let net: f64 = currents.iter().sum();
    let linf = match cs.bound {
        SafetyBound::Symmetric => currents.iter().fold(0.0f64, |m, c| m.max(c.abs())),
        SafetyBound::UpperOnly => currents.iter().fold(f64::NEG_INFINITY, |m, c| m.max(*c)),
    };
    let l1: f64 = currents.iter().map(|c| c.abs()).sum();
    PrimalResiduals {
        net_current: net.abs(),
        linf_excess: (linf - cs.i_safe).max(0.0),
        l1_excess: (l1 - cs.l1_budget()).max(0.0),
        target: None,
        energy_excess: None,
    }
}

/// Max absolute entry, or 1 for an all-zero input.
pub(crate) fn scale_of<'a>(it: impl IntoIterator<Item = &'a f64>) -> f64 {
    let m = it.into_iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}
