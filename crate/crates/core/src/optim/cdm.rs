//! Constrained directional maximization and the directional maximum.

use nalgebra::{DMatrix, DVector};

use super::conic::{Program, SolverOptions};
use super::lcmv::{min_energy, Target};
use super::shared::{polish, residuals, scale_of, Base};
use super::{finish, Outcome};
use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Montage, SolveReport, SolveStatus, TargetSpec};

/// Relative slack on the stage-one optimum used by the second stage.
pub const DIRMAX_SLACK: f64 = 1e-8;

/// Maximizes `row . I - ridge |I|^2`, optionally inside `|R I|^2 <= alpha`.
pub(crate) fn max_intensity(
    name: &str,
    row: &DVector<f64>,
    ball: Option<(&DMatrix<f64>, f64)>,
    ridge: f64,
    cs: &ConstraintSet,
    opts: &SolverOptions,
) -> Result<Outcome> {
    cs.validate()?;
    let n = row.len();
    let mut prog = Program::new();
    let base = Base::add(&mut prog, n, cs);
    let sigma = base.sigma;
    let c = sigma * scale_of(row.iter());
    for j in 0..n {
        prog.linear(base.x + j, -sigma * row[j] / c);
        prog.quad(base.x + j, base.x + j, 2.0 * ridge * sigma * sigma / c);
    }
    let mut ball_row = None;
    if let Some((r, alpha)) = ball {
        let k = sigma / alpha.sqrt();
        let mut rows = vec![(Vec::new(), 1.0)];
        for i in 0..r.nrows() {
            let coeffs: Vec<(usize, f64)> = (0..n)
                .filter(|&j| r[(i, j)] != 0.0)
                .map(|j| (base.x + j, -k * r[(i, j)]))
                .collect();
            rows.push((coeffs, 0.0));
        }
        ball_row = Some(prog.soc(&rows));
    }
    let sol = prog.solve(opts)?;
    let mut currents = base.currents(&sol);
    let duals = (sol.status == SolveStatus::Optimal).then(|| {
        let mut d = base.duals(&sol, c);
        if let (Some(first), Some((_, alpha))) = (ball_row, ball) {
            d.lambda = Some(c * sol.z[first] / (2.0 * alpha));
        }
        d
    });
    if sol.status == SolveStatus::Optimal {
        polish(&mut currents, None);
    }
    let iv = DVector::from_column_slice(&currents);
    let objective = row.dot(&iv) - ridge * iv.norm_squared();
    let mut res = residuals(&currents, cs);
    if let Some((r, alpha)) = ball {
        res.energy_excess = Some(((r * &iv).norm_squared() - alpha).max(0.0) / alpha);
    }
    Ok(finish(name, sol, currents, objective, res, duals))
}

/// CDM: maximize the aggregate target intensity subject to `|A_c I|^2 <= alpha`.
///
/// The target value `E_des` is ignored.
pub fn solve_cdm(ts: &TargetSpec, cs: &ConstraintSet, alpha: f64) -> Result<(Montage, SolveReport)> {
    solve_cdm_with(ts, cs, alpha, 0.0, &SolverOptions::default())
}

/// CDM with a ridge `ridge * |I|^2` subtracted from the objective.
pub fn solve_cdm_with(
    ts: &TargetSpec,
    cs: &ConstraintSet,
    alpha: f64,
    ridge: f64,
    opts: &SolverOptions,
) -> Result<(Montage, SolveReport)> {
    cdm_core(&ts.aggregate_row(), ts.energy_factor(), cs, alpha, ridge, opts).map(Outcome::into_pair)
}

pub(crate) fn cdm_core(
    row: &DVector<f64>,
    r: &DMatrix<f64>,
    cs: &ConstraintSet,
    alpha: f64,
    ridge: f64,
    opts: &SolverOptions,
) -> Result<Outcome> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("CDM energy bound must be positive, got {alpha}")));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParameter(format!("ridge must be nonnegative, got {ridge}")));
    }
    max_intensity("cdm", row, Some((r, alpha)), ridge, cs, opts)
}

/// Directional maximum: the least-energy montage among maximizers of the
/// aggregate target intensity. The report objective is `E_MAX`.
pub fn solve_directional_max(ts: &TargetSpec, cs: &ConstraintSet) -> Result<(Montage, SolveReport)> {
    solve_directional_max_with(ts, cs, &SolverOptions::default())
}

pub fn solve_directional_max_with(
    ts: &TargetSpec,
    cs: &ConstraintSet,
    opts: &SolverOptions,
) -> Result<(Montage, SolveReport)> {
    let row = ts.aggregate_row();
    let stage1 = max_intensity("directional-max/stage1", &row, None, 0.0, cs, opts)?;
    if stage1.report.status != SolveStatus::Optimal {
        return Ok(stage1.into_pair());
    }
    let opt = stage1.report.objective;
    let level = opt - DIRMAX_SLACK * opt.abs();
    let mut stage2 = min_energy(
        "directional-max",
        ts.energy_factor(),
        0.0,
        Target::AtLeast(&row, level),
        cs,
        opts,
    )?;
    stage2.report.objective = row.dot(&stage2.montage.to_vector());
    stage2.report.iterations += stage1.report.iterations;
    stage2.report.wall_time_s += stage1.report.wall_time_s;
    Ok(stage2.into_pair())
}

/// `(alpha_MAX, E_MAX, I_ME)` for a target specification.
pub fn compute_alpha_max_emax(ts: &TargetSpec, cs: &ConstraintSet) -> Result<(f64, f64, Montage)> {
    let (m, rep) = solve_directional_max(ts, cs)?;
    if rep.status != SolveStatus::Optimal {
        return Err(Error::Numerical(format!("directional maximum did not converge: {:?}", rep.status)));
    }
    Ok((ts.offtarget_energy(&m.currents), rep.objective, m))
}
