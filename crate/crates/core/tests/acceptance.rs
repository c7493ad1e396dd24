//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::time::Instant;

use common::*;
use hingeplace::equivalence::{run_l1l1_sweep, run_theorem1_sweep, L1L1SweepConfig, Theorem1Config};
use hingeplace::focality::{run_focality_study, FocalityBench, FocalityConfig};
use hingeplace::metrics::jaccard;
use hingeplace::optim::*;
use hingeplace::sphere::{ElectrodeGrid, SphereModel, DEFAULT_RADII, DEFAULT_SERIES_ORDER};
use hingeplace::testbed::{equivalence_targets, spherical_point, Testbed, TestbedConfig};
use hingeplace::{ConstraintSet, Montage, SafetyBound, SolveStatus, TargetSpec, ToleranceBands};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// An optimal montage with the limits it was solved under.
struct Solved {
    tag: String,
    montage: Montage,
    cs: ConstraintSet,
    equality: Option<(DMatrix<f64>, DVector<f64>)>,
}

#[derive(Default)]
struct Pool(Vec<Solved>);

impl Pool {
    fn add(&mut self, tag: &str, montage: &Montage, cs: &ConstraintSet, eq: Option<&TargetSpec>) {
        self.0.push(Solved {
            tag: tag.to_string(),
            montage: montage.clone(),
            cs: *cs,
            equality: eq.map(|ts| (ts.a_f.clone(), ts.e_des.clone())),
        });
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn coarse_testbed(center: [f64; 3]) -> Testbed {
    let mut cfg = TestbedConfig::equivalence(center, 0.004);
    cfg.annulus_spacing = 0.006;
    Testbed::build(&SphereModel::default_head(), cfg).unwrap()
}

fn optimal(tag: &str, r: hingeplace::Result<(Montage, hingeplace::SolveReport)>) -> Result<Montage, String> {
    match r {
        Ok((m, rep)) if rep.status == SolveStatus::Optimal => Ok(m),
        Ok((_, rep)) => Err(format!("{tag}: status {:?}", rep.status)),
        Err(e) => Err(format!("{tag}: {e}")),
    }
}

fn c1(model: &SphereModel) -> Outcome {
    let t = Instant::now();
    let tab = run_theorem1_sweep(model, &Theorem1Config::default()).unwrap();
    let worst = tab.worst_cell_median();
    let secs = t.elapsed().as_secs_f64();
    let solved = tab.pairs.iter().filter(|p| p.diff_percent.is_some()).count();
    let all_cells = tab.cells.iter().all(|c| c.median_diff_percent.is_some());
    outcome(
        all_cells && worst.is_some_and(|w| w < 1.0) && secs < 900.0,
        format!(
            "{} cells, {solved}/{} pairs solved, worst cell median {:.2e}%, {secs:.0} s",
            tab.cells.len(),
            tab.pairs.len(),
            worst.unwrap_or(f64::NAN)
        ),
    )
}

fn c2(model: &SphereModel) -> Outcome {
    let upper = run_l1l1_sweep(model, &L1L1SweepConfig::default()).unwrap();
    let mut sym_cfg = L1L1SweepConfig {
        bound: SafetyBound::Symmetric,
        ..L1L1SweepConfig::default()
    };
    sym_cfg.grid.targets = vec![equivalence_targets()[0]];
    let sym = run_l1l1_sweep(model, &sym_cfg).unwrap();
    let wu = upper.worst_cell_median().unwrap_or(f64::NAN);
    let ws = sym.worst_cell_median().unwrap_or(f64::NAN);
    let full = |t: &hingeplace::equivalence::SweepTable| t.cells.iter().all(|c| c.median_diff_percent.is_some());
    outcome(
        wu < 1.0 && ws < 1.0 && full(&upper) && full(&sym),
        format!(
            "one-sided bound: {} cells, worst cell median {wu:.2e}%, overall {:.2e}%; symmetric bound: {} cells, worst {ws:.2e}%",
            upper.cells.len(),
            upper.overall_median().unwrap_or(f64::NAN),
            sym.cells.len()
        ),
    )
}

fn c3(pool: &mut Pool) -> Outcome {
    let mut worst = 0.0f64;
    let mut errors = Vec::new();
    for seed in 0..50 {
        let inst = instance(3000 + seed, 8, 30, 2.0, 2.0, 0.4);
        let hp = HingeParams::new(2, ToleranceBands::uniform(30, 0.0));
        let lc = optimal("lcmv", solve_lcmv_e(&inst.ts, &inst.cs));
        let hm = optimal("hp2", solve_hingeplace(&inst.ts, &inst.cs, &hp));
        match (lc, hm) {
            (Ok(a), Ok(b)) => {
                worst = worst.max(l1_rel_percent(&b, &a));
                pool.add("c3/lcmv", &a, &inst.cs, Some(&inst.ts));
                pool.add("c3/hp2", &b, &inst.cs, Some(&inst.ts));
            }
            (a, b) => errors.extend(a.err().into_iter().chain(b.err())),
        }
    }
    outcome(
        errors.is_empty() && worst < 0.1,
        format!("50 instances, worst difference {worst:.2e}%, {} failures", errors.len()),
    )
}

fn c4(pool: &Pool) -> Outcome {
    let mut bad = Vec::new();
    for s in &pool.0 {
        let c = &s.montage.currents;
        let net = c.iter().sum::<f64>().abs();
        let linf = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let l1: f64 = c.iter().map(|v| v.abs()).sum();
        let mut ok = net <= 1e-9 * s.cs.i_safe && linf <= s.cs.i_safe * (1.0 + 1e-8) && l1 <= 2.0 * s.cs.i_tot * (1.0 + 1e-8);
        if s.cs.bound == SafetyBound::UpperOnly {
            ok = net <= 1e-9 * s.cs.i_safe
                && c.iter().all(|v| *v <= s.cs.i_safe * (1.0 + 1e-8))
                && l1 <= 2.0 * s.cs.i_tot * (1.0 + 1e-8);
        }
        if let Some((a_f, e)) = &s.equality {
            let r = (a_f * DVector::from_column_slice(c) - e).norm();
            ok &= r <= 1e-6 * (1.0 + e.norm());
        }
        if !ok {
            bad.push(s.tag.clone());
        }
    }
    let mut tags: Vec<&str> = pool.0.iter().map(|s| s.tag.split('/').nth(1).unwrap_or("")).collect();
    tags.sort_unstable();
    tags.dedup();
    outcome(
        bad.is_empty(),
        format!("{} montages from {} programs, {} violations {:?}", pool.0.len(), tags.len(), bad.len(), bad),
    )
}

fn hinge_tol(inst: &Instance) -> f64 {
    let c = vec![inst.cs.i_safe, -inst.cs.i_safe, 0.0, 0.0];
    let e = matvec(&inst.ts.t_c, &c);
    0.3 * e.iter().map(|v| v.abs()).sum::<f64>() / e.len() as f64
}

fn c5(pool: &mut Pool) -> Outcome {
    let mut worst: Vec<(&str, f64)> = ["lcmv", "cdm", "hp1", "hp2", "hp3", "l1l1", "dirmax"].iter().map(|t| (*t, 0.0)).collect();
    let mut errors = Vec::new();
    let mut bump = |k: usize, v: f64| worst[k].1 = worst[k].1.max(v);
    for seed in 0..20 {
        let inst = instance(5000 + seed, 4, 12, 2.0, 1.5, 0.45);
        let (ts, cs) = (&inst.ts, &inst.cs);
        let tol = hinge_tol(&inst);
        let run = |tag: &str, r| optimal(tag, r);
        match run("lcmv", solve_lcmv_e(ts, cs)) {
            Ok(m) => {
                bump(0, rel_gap(energy(ts, &m.currents), oracle_lcmv(&inst), 1e-12));
                pool.add("c5/lcmv", &m, cs, Some(ts));
                let alpha = energy(ts, &m.currents);
                match run("cdm", solve_cdm(ts, cs, alpha)) {
                    Ok(c) => {
                        bump(1, rel_gap(dotv(&row_a(ts), &c.currents), oracle_cdm(&inst, alpha), 1e-12));
                        pool.add("c5/cdm", &c, cs, None);
                    }
                    Err(e) => errors.push(e),
                }
            }
            Err(e) => errors.push(e),
        }
        for p in 1..=3u32 {
            let hp = HingeParams::new(p, ToleranceBands::uniform(12, tol));
            match run("hp", solve_hingeplace(ts, cs, &hp)) {
                Ok(m) => {
                    let want = if p == 1 { oracle_hinge_p1(&inst, tol) } else { oracle_hinge_grid(&inst, tol, p as i32) };
                    bump(1 + p as usize, rel_gap(hinge(ts, tol, p as i32, &m.currents), want, 1e-9));
                    pool.add(&format!("c5/hp{p}"), &m, cs, Some(ts));
                }
                Err(e) => errors.push(e),
            }
        }
        let (eps, areg) = if seed % 2 == 0 { (0.05, 1e-3) } else { (0.5, 0.05) };
        match run("l1l1", solve_l1l1(ts, cs, &L1L1Params::new(eps, areg))) {
            Ok(m) => {
                bump(5, rel_gap(l1l1(ts, eps, areg, &m.currents), oracle_l1l1(&inst, eps, areg), 1e-9));
                pool.add("c5/l1l1", &m, cs, None);
            }
            Err(e) => errors.push(e),
        }
        match run("dirmax", solve_directional_max(ts, cs)) {
            Ok(m) => {
                bump(6, rel_gap(dotv(&row_a(ts), &m.currents), oracle_dirmax(&inst), 1e-12));
                pool.add("c5/dirmax", &m, cs, None);
            }
            Err(e) => errors.push(e),
        }
    }
    let pass = errors.is_empty() && worst.iter().all(|(_, w)| *w < 5e-3);
    let list: Vec<String> = worst.iter().map(|(t, w)| format!("{t} {:.1e}%", 100.0 * w)).collect();
    outcome(pass, format!("20 instances, worst gap per program: {}; {} failures", list.join(", "), errors.len()))
}

fn c6(pool: &mut Pool) -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for (t, (i_safe, mul)) in [(0usize, (200.0, 2.0)), (3, (260.0, 4.0))] {
        let tb = coarse_testbed(equivalence_targets()[t]);
        let ts = tb.target_spec(1.0).unwrap();
        let cs = ConstraintSet::new(i_safe, mul);
        let (a_max, e_max, me) = compute_alpha_max_emax(&ts, &cs).unwrap();
        pool.add("c6/dirmax", &me, &cs, None);
        let mut prev = f64::NEG_INFINITY;
        let mut worst_sat = 0.0f64;
        let lo: f64 = 1e-2;
        for k in 0..10 {
            let factor = lo * (4.0 / lo).powf(k as f64 / 9.0);
            let alpha = factor * a_max;
            match optimal("cdm", solve_cdm(&ts, &cs, alpha)) {
                Ok(m) => {
                    let e = ts.target_field(&m.currents)[0];
                    pass &= e >= prev - 1e-9 * e_max;
                    prev = e;
                    if factor >= 1.0 {
                        worst_sat = worst_sat.max((e - e_max).abs() / e_max);
                    }
                    pool.add("c6/cdm", &m, &cs, None);
                }
                Err(e) => {
                    pass = false;
                    notes.push(e);
                }
            }
        }
        pass &= worst_sat <= 1e-6;
        notes.push(format!("target {t}: saturated gap {worst_sat:.1e}"));
    }
    outcome(pass, format!("10-point alpha sweeps, monotone {pass}; {}", notes.join("; ")))
}

fn interior_points(seed: u64, n: usize, r_max: f64) -> Vec<[f64; 3]> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let d = random_unit(&mut r);
            let rad = r_max * r.gen_range(0.05f64..1.0).cbrt();
            [rad * d[0], rad * d[1], rad * d[2]]
        })
        .collect()
}

fn pair(n: usize, a: usize, b: usize) -> Montage {
    let mut c = vec![0.0; n];
    c[a] = 1.0;
    c[b] = -1.0;
    Montage::new(c)
}

fn c7() -> Outcome {
    let sigma = 0.33;
    let grid = ElectrodeGrid::default_patch(DEFAULT_RADII[3]);
    let pos = grid.positions().to_vec();
    let homog = SphereModel::new(DEFAULT_RADII, [sigma; 4], DEFAULT_SERIES_ORDER, grid).unwrap();
    let mut closed = 0.0f64;
    for (k, p) in interior_points(70, 100, 0.079).iter().enumerate() {
        let (a, b) = (k % 21, (k * 7 + 3) % 21);
        if a != b {
            let got = homog.potential_at(a, b, p).unwrap();
            let want = homogeneous_potential(DEFAULT_RADII[3], sigma, pos[a], *p)
                - homogeneous_potential(DEFAULT_RADII[3], sigma, pos[b], *p);
            closed = closed.max(rel_gap(got, want, 1e-12));
        }
    }
    let model = SphereModel::default_head();
    let pts = interior_points(71, 40, 0.079);
    let mut r = rng(72);
    let mut sup = 0.0f64;
    for _ in 0..5 {
        let m1 = random_zero_sum(&mut r, 21, 1.0);
        let m2 = random_zero_sum(&mut r, 21, 2.0);
        let s: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| a + b).collect();
        let e1 = model.efield_at(&Montage::new(m1), &pts).unwrap();
        let e2 = model.efield_at(&Montage::new(m2), &pts).unwrap();
        let es = model.efield_at(&Montage::new(s), &pts).unwrap();
        let scale = es.iter().flat_map(|e| e.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..pts.len() {
            for d in 0..3 {
                sup = sup.max((es[i][d] - e1[i][d] - e2[i][d]).abs() / scale);
            }
        }
    }
    let h = 1e-5;
    let mut fd = 0.0f64;
    for (k, p) in interior_points(73, 40, 0.078).iter().enumerate() {
        let (a, b) = (k % 21, (k * 5 + 1) % 21);
        if a == b {
            continue;
        }
        let e = model.efield_at(&pair(21, a, b), &[*p]).unwrap()[0];
        let mut g = [0.0; 3];
        for d in 0..3 {
            let (mut hi, mut lo) = (*p, *p);
            hi[d] += h;
            lo[d] -= h;
            g[d] = -(model.potential_at(a, b, &hi).unwrap() - model.potential_at(a, b, &lo).unwrap()) / (2.0 * h);
        }
        let en = dotv(&e, &e).sqrt();
        let diff = ((e[0] - g[0]).powi(2) + (e[1] - g[1]).powi(2) + (e[2] - g[2]).powi(2)).sqrt();
        fd = fd.max(diff / en);
    }
    outcome(
        closed < 1e-8 && sup < 1e-12 && fd < 1e-6,
        format!("closed form {closed:.1e}, superposition {sup:.1e}, finite difference {fd:.1e}"),
    )
}

fn c8(model: &SphereModel) -> Outcome {
    let rep = run_focality_study(model, &FocalityConfig::threshold_volume(0.003)).unwrap();
    let dec: Vec<String> = rep
        .cells
        .iter()
        .map(|c| format!("{:.1}", c.relative_decrease().unwrap_or(f64::NAN)))
        .collect();
    outcome(
        rep.never_worse() && rep.strictly_better_somewhere(),
        format!(
            "{} cells, V_Th decrease vs LCMV-E (%): [{}], {:.0} s",
            rep.cells.len(),
            dec.join(", "),
            rep.wall_time_s
        ),
    )
}

fn c9(model: &SphereModel, pool: &mut Pool) -> Outcome {
    let cfg = FocalityConfig::threshold_volume(0.003);
    let bench = FocalityBench::new(model, &cfg).unwrap();
    let cs = ConstraintSet::new(1.5 * bench.min_feasible_i_safe(2.0).unwrap(), 2.0);
    let e = cfg.e_des;
    let triplet = [0.5 * e; 3];
    let full_lc = bench.lcmv(&cs).unwrap();
    let full_hp = bench.hingeplace(&cs, 1, triplet).unwrap();
    pool.add("c9/lcmv", &full_lc, &cs, Some(&bench.spec));
    pool.add("c9/hp1", &full_hp, &cs, Some(&bench.spec));
    let (a_lc, a_hp) = (bench.active_set(&full_lc).unwrap(), bench.active_set(&full_hp).unwrap());
    let mut worst = 1.0f64;
    let mut errors = Vec::new();
    for seed in [1u64, 2, 3] {
        let keep = bench.testbed.subsample(0.04, 0.25, seed).unwrap();
        let ts = bench.testbed.target_spec_subset(e, &keep).unwrap();
        let hp = HingeParams::new(1, ToleranceBands::from_triplet(ts.n_offtarget(), triplet));
        match (optimal("lcmv", solve_lcmv_e(&ts, &cs)), optimal("hp1", solve_hingeplace(&ts, &cs, &hp))) {
            (Ok(l), Ok(h)) => {
                worst = worst.min(jaccard(&a_lc, &bench.active_set(&l).unwrap()));
                worst = worst.min(jaccard(&a_hp, &bench.active_set(&h).unwrap()));
                pool.add("c9/lcmv", &l, &cs, Some(&ts));
                pool.add("c9/hp1", &h, &cs, Some(&ts));
            }
            (a, b) => errors.extend(a.err().into_iter().chain(b.err())),
        }
    }
    outcome(
        errors.is_empty() && worst >= 0.9,
        format!("LCMV-E and HingePlace p=1 over 3 subsampling seeds, worst Jaccard {worst:.3}"),
    )
}

fn c10(pool: &mut Pool) -> Outcome {
    let mut worst_margin = f64::INFINITY;
    let mut monotone = true;
    let mut errors = Vec::new();
    let mut r = rng(10);
    for k in 0..10 {
        let center = spherical_point(0.075, 0.25 * r.gen::<f64>(), std::f64::consts::TAU * r.gen::<f64>());
        let tb = coarse_testbed(center);
        let ts = tb.target_spec(1.0).unwrap();
        let cs = ConstraintSet::new(200.0, if k % 2 == 0 { 2.0 } else { 4.0 });
        let (a_max, _, _) = compute_alpha_max_emax(&ts, &cs).unwrap();
        let alpha = if k < 5 { 0.2 } else { 0.5 } * a_max;
        let (st, rep) = match solve_magmax_biconvex(&ts, &cs, alpha, 50, 1e-8) {
            Ok(v) => v,
            Err(e) => {
                errors.push(e.to_string());
                continue;
            }
        };
        if rep.status != SolveStatus::Optimal {
            errors.push(format!("biconvex status {:?}", rep.status));
            continue;
        }
        monotone &= st.trace.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
        pool.add("c10/biconvex", &st.montage, &cs, None);
        let got = magnitude_objective(&ts, &st.montage.currents);
        let mut best = 0.0f64;
        for _ in 0..50 {
            let dirs: Vec<[f64; 3]> = (0..ts.n_target()).map(|_| random_unit(&mut r)).collect();
            if let Ok(m) = optimal("fixed", solve_fixed_direction_cdm(&ts, &cs, alpha, &dirs)) {
                best = best.max(magnitude_objective(&ts, &m.currents));
            }
        }
        worst_margin = worst_margin.min(got / best - 1.0);
    }
    outcome(
        errors.is_empty() && monotone && worst_margin >= 0.0,
        format!(
            "10 instances, traces monotone {monotone}, worst margin over 50 random directions {:+.2}%",
            100.0 * worst_margin
        ),
    )
}

fn main() {
    let model = SphereModel::default_head();
    let mut pool = Pool::default();
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|k| k.trim().parse().ok()).collect());
    let mut any_fail = false;
    let mut report = |k: usize, f: &mut dyn FnMut(&mut Pool) -> Outcome, pool: &mut Pool| {
        if only.as_ref().is_some_and(|o| !o.contains(&k)) {
            return;
        }
        let t = Instant::now();
        let o = f(pool);
        any_fail |= !o.pass;
        println!(
            "criterion {k:>2} {}: {} [{:.0} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    };
    report(1, &mut |_| c1(&model), &mut pool);
    report(2, &mut |_| c2(&model), &mut pool);
    report(3, &mut c3, &mut pool);
    report(5, &mut c5, &mut pool);
    report(6, &mut c6, &mut pool);
    report(7, &mut |_| c7(), &mut pool);
    report(8, &mut |_| c8(&model), &mut pool);
    report(9, &mut |p| c9(&model, p), &mut pool);
    report(10, &mut c10, &mut pool);
    report(4, &mut |p| c4(p), &mut pool);
    if any_fail {
        std::process::exit(1);
    }
}
