//! Thin builder over the Clarabel interior-point solver.
//!
//! Rows are stored in insertion order as `a . x + s = b` with `s` in the
//! row's cone; adjacent zero-cone and nonnegative-cone rows are merged into
//! single cone blocks at assembly.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Error, Result};
use crate::model::SolveStatus;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Zero,
    Nonneg,
    Soc,
    Pow(f64),
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol_gap_rel: f64,
    pub tol_gap_abs: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_gap_rel: 1e-10,
            tol_gap_abs: 1e-10,
            tol_feas: 1e-9,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Program {
    n: usize,
    p: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
    a: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    cones: Vec<(Kind, usize)>,
}

pub(crate) struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub iterations: u32,
    pub r_prim: f64,
    pub r_dual: f64,
    pub seconds: f64,
}

impl Program {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates `k` variables and returns the index of the first.
    pub fn vars(&mut self, k: usize) -> usize {
        let start = self.n;
        self.n += k;
        self.q.resize(self.n, 0.0);
        start
    }

    /// Adds `v` to the entry `(i, j)` of the symmetric quadratic term of `x^T P x / 2`.
    pub fn quad(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            self.p.push((r, c, v));
        }
    }

    pub fn linear(&mut self, i: usize, v: f64) {
        self.q[i] += v;
    }

    fn push(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.b.len();
        for &(j, v) in coeffs {
            debug_assert!(j < self.n, "variable index out of range");
            if v != 0.0 {
                self.a.push((row, j, v));
            }
        }
        self.b.push(rhs);
        row
    }

    fn extend_cone(&mut self, kind: Kind, dim: usize) {
        match self.cones.last_mut() {
            Some((k, d)) if *k == kind && matches!(kind, Kind::Zero | Kind::Nonneg) => *d += dim,
            _ => self.cones.push((kind, dim)),
        }
    }

    /// `a . x = rhs`.
    pub fn eq(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        self.extend_cone(Kind::Zero, 1);
        self.push(coeffs, rhs)
    }

    /// `a . x <= rhs`.
    pub fn le(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        self.extend_cone(Kind::Nonneg, 1);
        self.push(coeffs, rhs)
    }

    /// Second-order cone on `s_k = rhs_k - a_k . x`, first entry the bound.
    pub fn soc(&mut self, rows: &[(Vec<(usize, f64)>, f64)]) -> usize {
        self.extend_cone(Kind::Soc, rows.len());
        let first = self.b.len();
        for (c, r) in rows {
            self.push(c, *r);
        }
        first
    }

    /// Power cone `s0^alpha * s1^(1-alpha) >= |s2|` with `s_k = rhs_k - a_k . x`.
    pub fn pow(&mut self, alpha: f64, rows: [(Vec<(usize, f64)>, f64); 3]) -> usize {
        self.extend_cone(Kind::Pow(alpha), 3);
        let first = self.b.len();
        for (c, r) in &rows {
            self.push(c, *r);
        }
        first
    }

    pub fn solve(&self, opts: &SolverOptions) -> Result<ConicSolution> {
        let start = Instant::now();
        let n = self.n;
        let m = self.b.len();
        let p = csc(n, n, &self.p);
        let a = csc(m, n, &self.a);
        let cones: Vec<SupportedConeT<f64>> = self
            .cones
            .iter()
            .map(|&(k, d)| match k {
                Kind::Zero => SupportedConeT::ZeroConeT(d),
                Kind::Nonneg => SupportedConeT::NonnegativeConeT(d),
                Kind::Soc => SupportedConeT::SecondOrderConeT(d),
                Kind::Pow(alpha) => SupportedConeT::PowerConeT(alpha),
            })
            .collect();
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_gap_rel(opts.tol_gap_rel)
            .tol_gap_abs(opts.tol_gap_abs)
            .tol_feas(opts.tol_feas)
            .max_iter(opts.max_iter)
            .build()
            .map_err(|e| Error::Numerical(format!("solver settings rejected: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &self.q, &a, &self.b, &cones, settings)
            .map_err(|e| Error::Numerical(format!("solver setup failed: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::MaxIter,
            _ => SolveStatus::NumericalError,
        };
        Ok(ConicSolution {
            status,
            x: sol.x.clone(),
            z: sol.z.clone(),
            iterations: sol.iterations,
            r_prim: sol.r_prim,
            r_dual: sol.r_dual,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

fn csc(m: usize, n: usize, t: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let rows: Vec<usize> = t.iter().map(|e| e.0).collect();
    let cols: Vec<usize> = t.iter().map(|e| e.1).collect();
    let vals: Vec<f64> = t.iter().map(|e| e.2).collect();
    CscMatrix::new_from_triplets(m, n, rows, cols, vals)
}
