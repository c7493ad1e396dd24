//! KKT residuals in current space.
//!
//! The l1 budget is handled through its epigraph: a single multiplier
//! `delta` and a subgradient `w in d|I|_1`, rather than one multiplier per
//! sign pattern.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Duals, Montage, SafetyBound, TargetSpec};

/// Smooth part of the objective, always posed as a minimization.
#[derive(Clone, Copy)]
pub enum KktObjective<'a> {
    /// `|R I|^2 + ridge |I|^2`.
    Energy { r: &'a DMatrix<f64>, ridge: f64 },
    /// `-row . I + ridge |I|^2`.
    Intensity { row: &'a DVector<f64>, ridge: f64 },
}

#[derive(Clone, Copy)]
pub enum KktTarget<'a> {
    None,
    /// `A I = e` with free multipliers `beta`.
    Equality { a: &'a DMatrix<f64>, e: &'a DVector<f64> },
    /// `row . I >= level` with a single multiplier `beta[0] >= 0`.
    AtLeast { row: &'a DVector<f64>, level: f64 },
}

#[derive(Clone, Copy)]
pub struct KktProblem<'a> {
    pub objective: KktObjective<'a>,
    pub target: KktTarget<'a>,
    /// `|R I|^2 <= alpha`.
    pub ball: Option<(&'a DMatrix<f64>, f64)>,
    pub cs: &'a ConstraintSet,
}

impl<'a> KktProblem<'a> {
    pub fn lcmv(ts: &'a TargetSpec, cs: &'a ConstraintSet) -> Self {
        Self {
            objective: KktObjective::Energy {
                r: ts.energy_factor(),
                ridge: 0.0,
            },
            target: KktTarget::Equality { a: &ts.a_f, e: &ts.e_des },
            ball: None,
            cs,
        }
    }

    pub fn cdm(ts: &'a TargetSpec, row: &'a DVector<f64>, cs: &'a ConstraintSet, alpha: f64) -> Self {
        Self {
            objective: KktObjective::Intensity { row, ridge: 0.0 },
            target: KktTarget::None,
            ball: Some((ts.energy_factor(), alpha)),
            cs,
        }
    }
}

/// Relative KKT residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn kkt_residuals(problem: &KktProblem<'_>, montage: &Montage, duals: Option<&Duals>) -> Result<KktResiduals> {
    let duals = duals.ok_or(Error::MissingDuals)?;
    let cs = problem.cs;
    let n = montage.len();
    let sigma = cs.i_safe;
    let i = montage.to_vector();
    if duals.nu.len() != n {
        return Err(Error::dims("upper-bound multipliers", n, duals.nu.len()));
    }
    if duals.kappa.len() != n {
        return Err(Error::dims("lower-bound multipliers", n, duals.kappa.len()));
    }
    if problem.ball.is_some() && duals.lambda.is_none() {
        return Err(Error::MissingDuals);
    }

    let (grad, fval) = match problem.objective {
        KktObjective::Energy { r, ridge } => {
            let ri = r * &i;
            ((r.transpose() * &ri) * 2.0 + &i * (2.0 * ridge), ri.norm_squared() + ridge * i.norm_squared())
        }
        KktObjective::Intensity { row, ridge } => (-row + &i * (2.0 * ridge), -row.dot(&i) + ridge * i.norm_squared()),
    };
    let mut scale = inf_norm(&grad);
    let mut g = grad.clone();
    let add = |g: &mut DVector<f64>, term: DVector<f64>, scale: &mut f64| {
        *scale = scale.max(inf_norm(&term));
        *g += term;
    };
    add(&mut g, DVector::from_element(n, duals.mu), &mut scale);
    add(&mut g, DVector::from_column_slice(&duals.nu), &mut scale);
    add(&mut g, -DVector::from_column_slice(&duals.kappa), &mut scale);

    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;

    match problem.target {
        KktTarget::None => {}
        KktTarget::Equality { a, e } => {
            if duals.beta.len() != a.nrows() {
                return Err(Error::dims("target multipliers", a.nrows(), duals.beta.len()));
            }
            let beta = DVector::from_column_slice(&duals.beta);
            add(&mut g, a.transpose() * beta, &mut scale);
            primal = primal.max(inf_norm(&(a * &i - e)) / (1.0 + inf_norm(e)));
        }
        KktTarget::AtLeast { row, level } => {
            let beta = *duals.beta.first().ok_or(Error::MissingDuals)?;
            add(&mut g, -row * beta, &mut scale);
            let slack = row.dot(&i) - level;
            primal = primal.max((-slack).max(0.0) / (1.0 + level.abs()));
            dual = dual.max((-beta).max(0.0));
            comp = comp.max((beta * slack).abs());
        }
    }
    if let Some((r, alpha)) = problem.ball {
        let lambda = duals.lambda.unwrap_or(0.0);
        let ri = r * &i;
        add(&mut g, (r.transpose() * &ri) * (2.0 * lambda), &mut scale);
        let slack = ri.norm_squared() - alpha;
        primal = primal.max(slack.max(0.0) / alpha);
        dual = dual.max((-lambda).max(0.0));
        comp = comp.max((lambda * slack).abs());
    }

    let delta = duals.delta;
    scale = scale.max(delta.abs());
    let thr = 1e-5 * sigma;
    for j in 0..n {
        let w = if i[j].abs() > thr {
            delta * i[j].signum()
        } else {
            (-g[j]).clamp(-delta.abs(), delta.abs())
        };
        g[j] += w;
    }

    let budget = cs.l1_budget();
    let l1 = montage.l1();
    primal = primal
        .max(montage.net().abs() / sigma)
        .max((l1 - budget).max(0.0) / budget);
    for j in 0..n {
        primal = primal.max((i[j] - sigma).max(0.0) / sigma);
        comp = comp.max((duals.nu[j] * (i[j] - sigma)).abs());
        dual = dual.max((-duals.nu[j]).max(0.0));
        if cs.bound == SafetyBound::Symmetric {
            primal = primal.max((-i[j] - sigma).max(0.0) / sigma);
            comp = comp.max((duals.kappa[j] * (-i[j] - sigma)).abs());
            dual = dual.max((-duals.kappa[j]).max(0.0));
        } else {
            dual = dual.max(duals.kappa[j].abs());
        }
    }
    dual = dual.max((-delta).max(0.0));
    comp = comp.max((delta * (l1 - budget)).abs());

    let denom = 1.0 + scale;
    Ok(KktResiduals {
        stationarity: inf_norm(&g) / denom,
        primal,
        dual: dual / denom,
        complementarity: comp / (1.0 + scale * sigma + fval.abs()),
    })
}
