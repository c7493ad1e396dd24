//! Target field magnitude maximization by alternating directions and CDM solves.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cdm::cdm_core;
use super::conic::SolverOptions;
use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Montage, SolveReport, SolveStatus, TargetSpec};

/// Iterate of the alternation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiconvexState {
    pub montage: Montage,
    pub directions: Vec<[f64; 3]>,
    /// `sum_i |t_i I|` after each CDM step.
    pub trace: Vec<f64>,
}

/// Field vector at target voxel `i` (rows `i`, `F+i`, `2F+i` of `t_f`).
fn voxel_field(ts: &TargetSpec, currents: &DVector<f64>, i: usize) -> [f64; 3] {
    let nf = ts.n_target();
    let mut e = [0.0; 3];
    for (a, v) in e.iter_mut().enumerate() {
        *v = ts.t_f.row(a * nf + i).dot(&currents.transpose());
    }
    e
}

/// `sum_i |t_i I|` over target voxels.
pub fn magnitude_objective(ts: &TargetSpec, currents: &[f64]) -> f64 {
    let iv = DVector::from_column_slice(currents);
    (0..ts.n_target())
        .map(|i| {
            let e = voxel_field(ts, &iv, i);
            (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
        })
        .sum()
}

/// `sum_i d_i^T t_i`, the linear functional for fixed directions.
pub fn direction_row(ts: &TargetSpec, dirs: &[[f64; 3]]) -> DVector<f64> {
    let nf = ts.n_target();
    let mut row = DVector::zeros(ts.n_electrodes());
    for (i, d) in dirs.iter().enumerate() {
        for a in 0..3 {
            row += ts.t_f.row(a * nf + i).transpose() * d[a];
        }
    }
    row
}

/// CDM with fixed per-voxel directions.
pub fn solve_fixed_direction_cdm(
    ts: &TargetSpec,
    cs: &ConstraintSet,
    alpha: f64,
    dirs: &[[f64; 3]],
) -> Result<(Montage, SolveReport)> {
    if dirs.len() != ts.n_target() {
        return Err(Error::dims("target directions", ts.n_target(), dirs.len()));
    }
    cdm_core(&direction_row(ts, dirs), ts.energy_factor(), cs, alpha, 0.0, &SolverOptions::default())
        .map(|o| o.into_pair())
}

/// Starts screened and converged by [`solve_magmax_biconvex`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiStart {
    /// Seeded random direction fields added to the deterministic starts.
    pub n_random: usize,
    /// Best starts after one CDM step that are run to convergence.
    pub keep: usize,
    pub seed: u64,
}

impl Default for MultiStart {
    fn default() -> Self {
        Self {
            n_random: 32,
            keep: 4,
            seed: 0,
        }
    }
}

/// Alternates a CDM solve for fixed directions with the direction update
/// `d_i = t_i I / |t_i I|` until the relative objective gain drops below `tol`,
/// from the default [`MultiStart`] set.
pub fn solve_magmax_biconvex(
    ts: &TargetSpec,
    cs: &ConstraintSet,
    alpha: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(BiconvexState, SolveReport)> {
    solve_magmax_biconvex_multistart(ts, cs, alpha, max_iters, tol, &MultiStart::default())
}

/// Unit fields `t_i I / |t_i I|` of a montage; zero-field voxels keep `fallback`.
fn achieved_directions(ts: &TargetSpec, currents: &DVector<f64>, fallback: &[[f64; 3]]) -> Vec<[f64; 3]> {
    (0..ts.n_target())
        .map(|i| {
            let e = voxel_field(ts, currents, i);
            let m = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            if m > 0.0 {
                [e[0] / m, e[1] / m, e[2] / m]
            } else {
                fallback[i]
            }
        })
        .collect()
}

/// Directions of the montage maximizing `sum_i |t_i I|^2 / |A_c I|^2` over zero-sum currents.
fn spectral_directions(ts: &TargetSpec, fallback: &[[f64; 3]]) -> Option<Vec<[f64; 3]>> {
    let n = ts.n_electrodes();
    if n < 2 {
        return None;
    }
    let mut basis = DMatrix::zeros(n, n - 1);
    for k in 0..n - 1 {
        let kk = (k + 1) as f64;
        let w = 1.0 / (kk * (kk + 1.0)).sqrt();
        for j in 0..=k {
            basis[(j, k)] = w;
        }
        basis[(k + 1, k)] = -kk * w;
    }
    let rb = ts.energy_factor() * &basis;
    let l = (rb.transpose() * &rb).cholesky()?;
    let linv = l.l().try_inverse()?;
    let tb = &ts.t_f * &basis;
    let s = &linv * (tb.transpose() * &tb) * linv.transpose();
    let eig = s.symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let currents = basis * (linv.transpose() * eig.eigenvectors.column(top));
    Some(achieved_directions(ts, &currents, fallback))
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Biconvex alternation from several starts: the target directions, the
/// spectral start, the three axis fields and `n_random` random fields. Each
/// is scored after one CDM step; the best `keep` are converged.
pub fn solve_magmax_biconvex_multistart(
    ts: &TargetSpec,
    cs: &ConstraintSet,
    alpha: f64,
    max_iters: usize,
    tol: f64,
    starts: &MultiStart,
) -> Result<(BiconvexState, SolveReport)> {
    let nf = ts.n_target();
    if ts.target_directions.len() != nf || nf == 0 {
        return Err(Error::InvalidParameter("magnitude maximization needs target directions".into()));
    }
    let start = Instant::now();
    let base = ts.target_directions.clone();
    let mut inits = vec![base.clone()];
    if let Some(d) = spectral_directions(ts, &base) {
        inits.push(d);
    }
    for a in 0..3 {
        let mut d = [0.0; 3];
        d[a] = 1.0;
        inits.push(vec![d; nf]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(starts.seed);
    for _ in 0..starts.n_random {
        inits.push((0..nf).map(|_| random_unit(&mut rng)).collect());
    }
    let mut scored = Vec::with_capacity(inits.len());
    for init in inits {
        let (st, rep) = solve_magmax_biconvex_from(ts, cs, alpha, 1, tol, init.clone())?;
        if rep.status == SolveStatus::Optimal {
            scored.push((rep.objective, init, st, rep));
        }
    }
    if scored.is_empty() {
        return solve_magmax_biconvex_from(ts, cs, alpha, max_iters, tol, base);
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best: Option<(BiconvexState, SolveReport)> = None;
    let mut iterations = 0;
    for (_, init, st1, rep1) in scored.into_iter().take(starts.keep.max(1)) {
        let (st, rep) = if max_iters <= 1 {
            (st1, rep1)
        } else {
            solve_magmax_biconvex_from(ts, cs, alpha, max_iters, tol, init)?
        };
        iterations += rep.iterations;
        let better = match &best {
            None => true,
            Some((_, b)) => {
                (rep.status == SolveStatus::Optimal && b.status != SolveStatus::Optimal)
                    || (rep.status == b.status && rep.objective > b.objective)
            }
        };
        if better {
            best = Some((st, rep));
        }
    }
    let (st, mut rep) = best.expect("at least one start is converged");
    rep.iterations = iterations;
    rep.wall_time_s = start.elapsed().as_secs_f64();
    Ok((st, rep))
}

/// As [`solve_magmax_biconvex`] from explicit initial directions.
pub fn solve_magmax_biconvex_from(
    ts: &TargetSpec,
    cs: &ConstraintSet,
    alpha: f64,
    max_iters: usize,
    tol: f64,
    init: Vec<[f64; 3]>,
) -> Result<(BiconvexState, SolveReport)> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("energy bound must be positive, got {alpha}")));
    }
    let nf = ts.n_target();
    if nf == 0 || ts.t_f.nrows() != 3 * nf {
        return Err(Error::InvalidParameter("magnitude maximization needs per-voxel target rows".into()));
    }
    if init.len() != nf {
        return Err(Error::dims("initial directions", nf, init.len()));
    }
    let start = Instant::now();
    let opts = SolverOptions::default();
    let mut dirs = init;
    let mut trace: Vec<f64> = Vec::new();
    let mut last = None;
    let mut iterations = 0;
    let mut status = SolveStatus::Optimal;
    for _ in 0..max_iters.max(1) {
        let out = cdm_core(&direction_row(ts, &dirs), ts.energy_factor(), cs, alpha, 0.0, &opts)?;
        iterations += out.report.iterations;
        if out.report.status != SolveStatus::Optimal {
            status = out.report.status;
            last = Some(out);
            break;
        }
        let obj = magnitude_objective(ts, &out.montage.currents);
        let iv = out.montage.to_vector();
        for (i, d) in dirs.iter_mut().enumerate() {
            let e = voxel_field(ts, &iv, i);
            let m = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            if m > 0.0 {
                *d = [e[0] / m, e[1] / m, e[2] / m];
            }
        }
        let prev = trace.last().copied();
        trace.push(obj);
        last = Some(out);
        if let Some(p) = prev {
            if obj < p - 1e-7 * p.abs().max(1e-300) {
                status = SolveStatus::NumericalError;
                break;
            }
            if obj - p <= tol * p.abs() {
                break;
            }
        }
    }
    let out = last.expect("at least one iteration runs");
    let mut report = out.report;
    report.program = "magmax-biconvex".into();
    report.status = status;
    report.objective = trace.last().copied().unwrap_or(f64::NAN);
    report.iterations = iterations;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((
        BiconvexState {
            montage: out.montage,
            directions: dirs,
            trace,
        },
        report,
    ))
}
