//! Invariant checks over a complete problem description.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, ForwardModel, RegionSpec, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

/// Numerical rank from singular values, relative cutoff `1e-10`.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let top = sv.iter().fold(0.0f64, |m, s| m.max(*s));
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-10 * top).count()
}

/// Orthonormal basis (as columns) of the zero-sum subspace of `R^n`.
pub fn zero_sum_basis(n: usize) -> DMatrix<f64> {
    // Helmert contrasts.
    let mut z = DMatrix::zeros(n, n.saturating_sub(1));
    for k in 1..n {
        let s = 1.0 / ((k * (k + 1)) as f64).sqrt();
        for j in 0..k {
            z[(j, k - 1)] = s;
        }
        z[(k, k - 1)] = -(k as f64) * s;
    }
    z
}

/// Lists violated invariants. Empty means valid.
///
/// Column rank of `A_c` is judged on zero-sum montages, the only ones a
/// program can produce; a reference electrode's zero column does not count
/// as a deficiency.
pub fn validate_problem(
    fm: &ForwardModel,
    rs: &RegionSpec,
    ts: &TargetSpec,
    cs: &ConstraintSet,
) -> Result<Vec<Diagnostic>> {
    let nc = rs.offtarget_idx.len();
    if ts.a_c.nrows() != 3 * nc {
        return Err(Error::dims("A_c rows (3|C|)", 3 * nc, ts.a_c.nrows()));
    }
    if ts.n_electrodes() != fm.n_electrodes() {
        return Err(Error::dims("electrode count", fm.n_electrodes(), ts.n_electrodes()));
    }
    let mut out = Vec::new();
    let m = fm.n_voxels();

    if fm.matrix().iter().any(|v| !v.is_finite()) {
        out.push(Diagnostic::error("forward matrix has non-finite entries"));
    }
    if fm.voxel_volumes().iter().any(|v| !(*v > 0.0)) {
        out.push(Diagnostic::error("nonpositive voxel volume"));
    }

    if rs.target_idx.iter().chain(&rs.offtarget_idx).any(|&i| i >= m) {
        out.push(Diagnostic::error("voxel index out of range"));
    }
    let mut in_f = vec![false; m];
    for &i in rs.target_idx.iter().filter(|&&i| i < m) {
        in_f[i] = true;
    }
    if rs.offtarget_idx.iter().any(|&i| i < m && in_f[i]) {
        out.push(Diagnostic::error("target and off-target sets overlap"));
    }
    if rs.direction_field.len() != rs.target_idx.len() {
        out.push(Diagnostic::error("direction field length differs from target set size"));
    }
    if rs
        .direction_field
        .iter()
        .any(|d| ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() - 1.0).abs() > 1e-12)
    {
        out.push(Diagnostic::error("direction vector not of unit norm"));
    }
    if rs.gamma_f.len() != rs.target_idx.len() || rs.gamma_f.iter().any(|g| !(*g > 0.0)) {
        out.push(Diagnostic::error("nonpositive target weight"));
    }
    if rs.gamma_c.len() != nc || rs.gamma_c.iter().any(|g| !(*g > 0.0)) {
        out.push(Diagnostic::error("nonpositive off-target weight"));
    }

    if cs.i_safe.is_nan() || cs.i_safe <= 0.0 {
        out.push(Diagnostic::error("I_safe must be positive"));
    }
    if cs.i_tot.is_nan() || cs.i_tot <= 0.0 {
        out.push(Diagnostic::error("I_tot must be positive"));
    } else if cs.i_tot_mul() < 1.0 {
        out.push(Diagnostic::warning("I_tot_mul below 1"));
    }

    if ts.e_des.iter().any(|v| !v.is_finite()) {
        out.push(Diagnostic::error("E_des has non-finite entries"));
    }
    if numerical_rank(&ts.a_f) < ts.a_f.nrows() {
        out.push(Diagnostic::warning("A_f not full row rank"));
    }
    let n = ts.n_electrodes();
    if n >= 2 {
        let restricted = &ts.a_c * zero_sum_basis(n);
        if numerical_rank(&restricted) < n - 1 {
            out.push(Diagnostic::warning("A_c not full column rank"));
        }
    }
    Ok(out)
}
