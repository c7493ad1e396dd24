//! Minimum off-target energy programs (LCMV-E and the second directional stage).

use nalgebra::{DMatrix, DVector};

use super::conic::{Program, SolverOptions};
use super::shared::{polish, residuals, scale_of, Base};
use super::{finish, Outcome};
use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Montage, SolveReport, SolveStatus, TargetSpec};

/// Linear target constraint attached to an energy program.
#[derive(Clone, Copy)]
pub(crate) enum Target<'a> {
    Equality(&'a DMatrix<f64>, &'a DVector<f64>),
    AtLeast(&'a DVector<f64>, f64),
}

/// Minimizes `|R I|^2 + ridge |I|^2` over the shared set plus a target constraint.
pub(crate) fn min_energy(
    name: &str,
    r: &DMatrix<f64>,
    ridge: f64,
    target: Target<'_>,
    cs: &ConstraintSet,
    opts: &SolverOptions,
) -> Result<Outcome> {
    cs.validate()?;
    let n = r.ncols();
    let mut prog = Program::new();
    let base = Base::add(&mut prog, n, cs);
    let sigma = base.sigma;
    let gram = r.transpose() * r;
    let c = 2.0 * sigma * sigma * (scale_of(gram.diagonal().iter()) + ridge);
    for i in 0..n {
        for j in i..n {
            let mut g = gram[(i, j)];
            if i == j {
                g += ridge;
            }
            prog.quad(base.x + i, base.x + j, 2.0 * sigma * sigma * g / c);
        }
    }
    let mut target_rows = Vec::new();
    match target {
        Target::Equality(a, e) => {
            for k in 0..a.nrows() {
                let rk = sigma * scale_of(a.row(k).iter());
                let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (base.x + j, sigma * a[(k, j)] / rk)).collect();
                target_rows.push((prog.eq(&coeffs, e[k] / rk), rk));
            }
        }
        Target::AtLeast(row, level) => {
            let rk = sigma * scale_of(row.iter());
            let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (base.x + j, -sigma * row[j] / rk)).collect();
            target_rows.push((prog.le(&coeffs, -level / rk), rk));
        }
    }
    let sol = prog.solve(opts)?;
    let mut currents = base.currents(&sol);
    let duals = (sol.status == SolveStatus::Optimal).then(|| {
        let mut d = base.duals(&sol, c);
        d.beta = target_rows.iter().map(|&(row, rk)| c * sol.z[row] / rk).collect();
        d
    });
    if sol.status == SolveStatus::Optimal {
        match target {
            Target::Equality(a, e) => polish(&mut currents, Some((a, e))),
            Target::AtLeast(..) => polish(&mut currents, None),
        }
    }
    let iv = DVector::from_column_slice(&currents);
    let objective = (r * &iv).norm_squared() + ridge * iv.norm_squared();
    let mut res = residuals(&currents, cs);
    res.target = Some(match target {
        Target::Equality(a, e) => (a * &iv - e).norm(),
        Target::AtLeast(row, level) => (level - row.dot(&iv)).max(0.0),
    });
    Ok(finish(name, sol, currents, objective, res, duals))
}

/// LCMV-E: minimize `|A_c I|^2` subject to `A_f I = E_des` and the shared constraints.
pub fn solve_lcmv_e(ts: &TargetSpec, cs: &ConstraintSet) -> Result<(Montage, SolveReport)> {
    solve_lcmv_e_with(ts, cs, 0.0, &SolverOptions::default())
}

/// LCMV-E with an optional ridge `ridge * |I|^2` and explicit solver options.
pub fn solve_lcmv_e_with(
    ts: &TargetSpec,
    cs: &ConstraintSet,
    ridge: f64,
    opts: &SolverOptions,
) -> Result<(Montage, SolveReport)> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParameter(format!("ridge must be nonnegative, got {ridge}")));
    }
    let out = min_energy(
        "lcmv-e",
        ts.energy_factor(),
        ridge,
        Target::Equality(&ts.a_f, &ts.e_des),
        cs,
        opts,
    )?;
    Ok(out.into_pair())
}
