//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hingeplace::{ConstraintSet, Montage, TargetSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    let u: f64 = r.gen_range(1e-12..1.0);
    let v: f64 = r.gen_range(0.0..1.0);
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

pub fn random_unit(r: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [gauss(r), gauss(r), gauss(r)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Random zero-sum montage with entries of order `scale`.
pub fn random_zero_sum(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    let mut c: Vec<f64> = (0..n).map(|_| scale * gauss(r)).collect();
    let mean = c.iter().sum::<f64>() / n as f64;
    c.iter_mut().for_each(|v| *v -= mean);
    c
}

// ---------------------------------------------------------------- sphere

/// Potential in volts inside a homogeneous sphere of radius `big_r` and
/// conductivity `sigma` for 1 mA entering at surface direction `src`,
/// with the monopole term dropped.
///
/// Uses `sum_{l>=1} (2l+1)/l t^l P_l(x) = 2 (1/rho - 1) + ln(2 / (1 - t x + rho))`
/// with `rho = sqrt(1 - 2 t x + t^2)`.
pub fn homogeneous_potential(big_r: f64, sigma: f64, src: [f64; 3], p: [f64; 3]) -> f64 {
    let sn = (src[0] * src[0] + src[1] * src[1] + src[2] * src[2]).sqrt();
    let s = [src[0] / sn, src[1] / sn, src[2] / sn];
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let t = r / big_r;
    let x = if r > 0.0 { (s[0] * p[0] + s[1] * p[1] + s[2] * p[2]) / r } else { 0.0 };
    let rho = (1.0 - 2.0 * t * x + t * t).sqrt();
    let series = 2.0 * (1.0 / rho - 1.0) + (2.0 / (1.0 - t * x + rho)).ln();
    1e-3 * series / (4.0 * std::f64::consts::PI * sigma * big_r)
}

// ---------------------------------------------------------------- linear algebra

/// Orthonormal basis of `{x : sum x = 0}` by modified Gram-Schmidt on `e_j - e_{n-1}`.
pub fn zero_sum_basis_gs(n: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..n - 1 {
        let mut v = vec![0.0; n];
        v[j] = 1.0;
        v[n - 1] = -1.0;
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            v.iter_mut().zip(b).for_each(|(a, c)| *a -= d * c);
        }
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        basis.push(v.iter().map(|a| a / nv).collect());
    }
    basis
}

/// Rank by Gram-Schmidt on columns with relative threshold.
pub fn gs_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for j in 0..a.ncols() {
        let mut v = a.column(j).into_owned();
        for _ in 0..2 {
            for q in &kept {
                let d = q.dot(&v);
                v -= q * d;
            }
        }
        let nv = v.norm();
        if nv > rel_tol * scale * (a.nrows() as f64).sqrt() {
            kept.push(v / nv);
        }
    }
    kept.len()
}

// ---------------------------------------------------------------- instances

/// Random problem: one target row and `n_c` off-target voxels.
pub struct Instance {
    pub ts: TargetSpec,
    pub cs: ConstraintSet,
    /// Best single source/sink pair intensity at full current.
    pub pair_max: f64,
}

pub fn instance(seed: u64, n: usize, n_c: usize, i_safe: f64, i_tot_mul: f64, e_frac: f64) -> Instance {
    let mut r = rng(seed);
    let a: Vec<f64> = (0..n).map(|_| gauss(&mut r)).collect();
    let t_c = DMatrix::from_fn(3 * n_c, n, |_, _| gauss(&mut r));
    let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
    let pair_max = i_safe * (hi - lo);
    let ts = TargetSpec::new(
        DMatrix::from_row_slice(1, n, &a),
        DVector::from_element(1, e_frac * pair_max),
        t_c,
    )
    .unwrap();
    Instance {
        ts,
        cs: ConstraintSet::new(i_safe, i_tot_mul),
        pair_max,
    }
}

pub fn row_a(ts: &TargetSpec) -> Vec<f64> {
    ts.a_f.row(0).iter().copied().collect()
}

pub fn matvec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum()).collect()
}

pub fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Feasibility of the shared current constraints with slack `rel`.
pub fn feasible(i: &[f64], cs: &ConstraintSet, rel: f64) -> bool {
    let s = cs.i_safe * (1.0 + rel);
    i.iter().all(|v| v.abs() <= s) && i.iter().map(|v| v.abs()).sum::<f64>() <= cs.l1_factor * cs.i_tot * (1.0 + rel)
}

// ---------------------------------------------------------------- oracle objectives

pub fn energy(ts: &TargetSpec, i: &[f64]) -> f64 {
    matvec(&ts.t_c, i).iter().map(|v| v * v).sum()
}

pub fn hinge(ts: &TargetSpec, tol: f64, p: i32, i: &[f64]) -> f64 {
    matvec(&ts.t_c, i)
        .iter()
        .map(|e| ((e - tol).max(0.0) + (-e - tol).max(0.0)).powi(p))
        .sum()
}

pub fn l1l1(ts: &TargetSpec, eps: f64, alpha_reg: f64, i: &[f64]) -> f64 {
    let a = row_a(ts);
    let e = ts.e_des[0];
    let nu = e.abs();
    let zeta = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let fit = (dotv(&a, i) - e).abs();
    let off: f64 = matvec(&ts.t_c, i).iter().map(|v| (v.abs() / nu).max(eps)).sum();
    fit + off + alpha_reg * zeta * i.iter().map(|v| v.abs()).sum::<f64>()
}

// ---------------------------------------------------------------- affine parametrizations

/// `I = origin + sum_k x_k dirs_k` over an orthonormal set of directions.
pub struct Affine {
    pub origin: Vec<f64>,
    pub dirs: Vec<Vec<f64>>,
}

impl Affine {
    pub fn point(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.origin.clone();
        for (d, xi) in self.dirs.iter().zip(x) {
            p.iter_mut().zip(d).for_each(|(a, b)| *a += xi * b);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dirs.len()
    }

    /// Plane `c . I = d` in local coordinates.
    pub fn plane(&self, c: &[f64], d: f64) -> (Vec<f64>, f64) {
        (self.dirs.iter().map(|v| dotv(c, v)).collect(), d - dotv(c, &self.origin))
    }
}

/// Zero-sum subspace.
pub fn zero_sum_affine(n: usize) -> Affine {
    Affine {
        origin: vec![0.0; n],
        dirs: zero_sum_basis_gs(n),
    }
}

/// `{I : sum I = 0, a . I = e}`.
pub fn target_slice(a: &[f64], e: f64) -> Affine {
    let n = a.len();
    let q = zero_sum_basis_gs(n);
    let ap: Vec<f64> = q.iter().map(|b| dotv(b, a)).collect();
    let an = dotv(&ap, &ap);
    let mut origin = vec![0.0; n];
    for (b, c) in q.iter().zip(&ap) {
        origin.iter_mut().zip(b).for_each(|(o, v)| *o += e * c / an * v);
    }
    let mut rest: Vec<Vec<f64>> = Vec::new();
    let unit_ap: Vec<f64> = ap.iter().map(|v| v / an.sqrt()).collect();
    for k in 0..ap.len() {
        let mut v = vec![0.0; ap.len()];
        v[k] = 1.0;
        for u in std::iter::once(&unit_ap).chain(rest.iter()) {
            let d = dotv(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let nv = dotv(&v, &v).sqrt();
        if nv > 1e-8 && rest.len() + 1 < ap.len() {
            rest.push(v.iter().map(|a| a / nv).collect());
        }
    }
    let dirs = rest
        .iter()
        .map(|c| {
            let mut d = vec![0.0; n];
            for (b, ck) in q.iter().zip(c) {
                d.iter_mut().zip(b).for_each(|(o, v)| *o += ck * v);
            }
            d
        })
        .collect();
    Affine { origin, dirs }
}

// ---------------------------------------------------------------- search oracles

/// Minimizes `f` (infinite when infeasible) over a cube of half-width `half`
/// by repeated grid refinement.
pub fn grid_refine_min(
    dim: usize,
    half: f64,
    first: usize,
    later: usize,
    levels: usize,
    f: &dyn Fn(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let mut center = vec![0.0; dim];
    let mut h = half;
    let mut best = (center.clone(), f(&center));
    for level in 0..levels {
        let k = if level == 0 { first } else { later };
        let step = 2.0 * h / (k - 1) as f64;
        let mut idx = vec![0usize; dim];
        loop {
            let x: Vec<f64> = (0..dim).map(|d| center[d] - h + step * idx[d] as f64).collect();
            let v = f(&x);
            if v < best.1 {
                best = (x, v);
            }
            let mut d = 0;
            while d < dim {
                idx[d] += 1;
                if idx[d] < k {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == dim {
                break;
            }
        }
        center = best.0.clone();
        h = 4.0 * step;
    }
    best
}

fn solve_small(rows: &[&Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    match rows.len() {
        1 => {
            let a = rows[0][0];
            (a.abs() > 1e-12).then(|| vec![rhs[0] / a])
        }
        2 => {
            let (a, b, c, d) = (rows[0][0], rows[0][1], rows[1][0], rows[1][1]);
            let det = a * d - b * c;
            let scale = (a.abs() + b.abs()) * (c.abs() + d.abs());
            (det.abs() > 1e-12 * scale.max(1e-300))
                .then(|| vec![(rhs[0] * d - b * rhs[1]) / det, (a * rhs[1] - c * rhs[0]) / det])
        }
        3 => {
            let m = Matrix3::from_fn(|i, j| rows[i][j]);
            let scale: f64 = (0..3).map(|i| rows[i].iter().map(|v| v.abs()).sum::<f64>()).product();
            if m.determinant().abs() <= 1e-12 * scale.max(1e-300) {
                return None;
            }
            m.lu().solve(&Vector3::new(rhs[0], rhs[1], rhs[2])).map(|v| v.iter().copied().collect())
        }
        _ => unreachable!("dimension up to 3"),
    }
}

/// Minimum of a piecewise-linear convex `f` over a bounded polytope, by
/// evaluating every vertex of the arrangement of `planes` (all kink and
/// boundary planes, in local coordinates). `f` is infinite off the polytope.
pub fn vertex_min(dim: usize, planes: &[(Vec<f64>, f64)], f: &dyn Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let mut best = (vec![0.0; dim], f64::INFINITY);
    let n = planes.len();
    let mut visit = |sel: &[usize]| {
        let rows: Vec<&Vec<f64>> = sel.iter().map(|&k| &planes[k].0).collect();
        let rhs: Vec<f64> = sel.iter().map(|&k| planes[k].1).collect();
        if let Some(x) = solve_small(&rows, &rhs) {
            let v = f(&x);
            if v < best.1 {
                best = (x, v);
            }
        }
    };
    match dim {
        1 => (0..n).for_each(|a| visit(&[a])),
        2 => {
            for a in 0..n {
                for b in a + 1..n {
                    visit(&[a, b]);
                }
            }
        }
        3 => {
            for a in 0..n {
                for b in a + 1..n {
                    for c in b + 1..n {
                        visit(&[a, b, c]);
                    }
                }
            }
        }
        _ => panic!("vertex enumeration supports dimensions 1 to 3"),
    }
    best
}

/// Boundary planes of the current constraints in local coordinates:
/// `I_j = +-I_safe`, `I_j = 0` and every sign pattern of the l1 budget.
pub fn current_planes(aff: &Affine, cs: &ConstraintSet) -> Vec<(Vec<f64>, f64)> {
    let n = aff.origin.len();
    let mut out = Vec::new();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        out.push(aff.plane(&e, cs.i_safe));
        out.push(aff.plane(&e, -cs.i_safe));
        out.push(aff.plane(&e, 0.0));
    }
    for mask in 0..(1u32 << n) {
        let s: Vec<f64> = (0..n).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
        out.push(aff.plane(&s, cs.l1_factor * cs.i_tot));
    }
    out
}

/// Planes `row_k . I = +-level_k` for every row of `m`.
pub fn row_planes(aff: &Affine, m: &DMatrix<f64>, level: f64) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::new();
    for k in 0..m.nrows() {
        let row: Vec<f64> = m.row(k).iter().copied().collect();
        out.push(aff.plane(&row, level));
        out.push(aff.plane(&row, -level));
    }
    out
}

// ---------------------------------------------------------------- per-solver oracles (N = 4)

pub const FEAS: f64 = 1e-12;

pub fn oracle_lcmv(inst: &Instance) -> f64 {
    let aff = target_slice(&row_a(&inst.ts), inst.ts.e_des[0]);
    let f = |x: &[f64]| {
        let i = aff.point(x);
        if feasible(&i, &inst.cs, FEAS) { energy(&inst.ts, &i) } else { f64::INFINITY }
    };
    grid_refine_min(aff.dim(), 2.0 * inst.cs.i_safe, 201, 41, 14, &f).1
}

pub fn oracle_hinge_grid(inst: &Instance, tol: f64, p: i32) -> f64 {
    let aff = target_slice(&row_a(&inst.ts), inst.ts.e_des[0]);
    let f = |x: &[f64]| {
        let i = aff.point(x);
        if feasible(&i, &inst.cs, FEAS) { hinge(&inst.ts, tol, p, &i) } else { f64::INFINITY }
    };
    grid_refine_min(aff.dim(), 2.0 * inst.cs.i_safe, 201, 41, 14, &f).1
}

pub fn oracle_hinge_p1(inst: &Instance, tol: f64) -> f64 {
    let aff = target_slice(&row_a(&inst.ts), inst.ts.e_des[0]);
    let mut planes = current_planes(&aff, &inst.cs);
    planes.extend(row_planes(&aff, &inst.ts.t_c, tol));
    let f = |x: &[f64]| {
        let i = aff.point(x);
        if feasible(&i, &inst.cs, 1e-9) { hinge(&inst.ts, tol, 1, &i) } else { f64::INFINITY }
    };
    vertex_min(aff.dim(), &planes, &f).1
}

/// Maximum of `a . I` under the ball `|T_c I|^2 <= alpha`.
pub fn oracle_cdm(inst: &Instance, alpha: f64) -> f64 {
    let a = row_a(&inst.ts);
    let aff = zero_sum_affine(a.len());
    let f = |x: &[f64]| {
        let i = aff.point(x);
        if feasible(&i, &inst.cs, FEAS) && energy(&inst.ts, &i) <= alpha {
            -dotv(&a, &i)
        } else {
            f64::INFINITY
        }
    };
    -grid_refine_min(aff.dim(), 2.0 * inst.cs.i_safe, 61, 21, 16, &f).1
}

pub fn oracle_dirmax(inst: &Instance) -> f64 {
    let a = row_a(&inst.ts);
    let aff = zero_sum_affine(a.len());
    let planes = current_planes(&aff, &inst.cs);
    let f = |x: &[f64]| {
        let i = aff.point(x);
        if feasible(&i, &inst.cs, 1e-9) { -dotv(&a, &i) } else { f64::INFINITY }
    };
    -vertex_min(aff.dim(), &planes, &f).1
}

pub fn oracle_l1l1(inst: &Instance, eps: f64, alpha_reg: f64) -> f64 {
    let a = row_a(&inst.ts);
    let e = inst.ts.e_des[0];
    let aff = zero_sum_affine(a.len());
    let mut planes = current_planes(&aff, &inst.cs);
    planes.push(aff.plane(&a, e));
    planes.extend(row_planes(&aff, &inst.ts.t_c, eps * e.abs()));
    let f = |x: &[f64]| {
        let i = aff.point(x);
        if feasible(&i, &inst.cs, 1e-9) { l1l1(&inst.ts, eps, alpha_reg, &i) } else { f64::INFINITY }
    };
    vertex_min(aff.dim(), &planes, &f).1
}

/// Relative gap `|got - want| / max(|want|, floor)`.
pub fn rel_gap(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(floor)
}

pub fn l1_rel_percent(a: &Montage, b: &Montage) -> f64 {
    let num: f64 = a.currents.iter().zip(&b.currents).map(|(x, y)| (x - y).abs()).sum();
    100.0 * num / b.currents.iter().map(|y| y.abs()).sum::<f64>()
}
