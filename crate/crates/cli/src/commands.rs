//! Command bodies. Each returns a JSON summary printed on stdout.

use std::path::Path;

use serde_json::{json, Value};

use hingeplace::equivalence::{cdm_alpha_from_lcmv, run_l1l1_sweep, run_theorem1_sweep};
use hingeplace::focality::run_focality_study;
use hingeplace::io::{
    csv_bytes, focality_csv, read_forward, read_json, sweep_csv, write_atomic, write_forward, write_json, MontageFile,
};
use hingeplace::metrics::{activation_map, v_th};
use hingeplace::optim::{
    solve_cdm, solve_directional_max, solve_hingeplace, solve_l1l1, solve_lcmv_e, solve_magmax_biconvex, HingeParams,
    L1L1Params,
};
use hingeplace::regions::build_target_spec;
use hingeplace::sphere::{radial_in_directions, ElectrodeGrid, SphereModel};
use hingeplace::testbed::Testbed;
use hingeplace::{ConstraintSet, RegionSpec, SolveStatus, ToleranceBands};

use crate::config::{
    region_path_for, ForwardConfig, MetricsConfig, Method, SolveConfig, SweepConfig, VerifyConfig, VerifyKind,
};
use crate::{CliError, EXIT_INFEASIBLE};

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

pub fn forward(cfg: &ForwardConfig) -> Result<Value, CliError> {
    let h = &cfg.head;
    let grid = ElectrodeGrid::default_patch(h.radii[3]);
    let model = SphereModel::new(h.radii, h.conductivities, h.series_order, grid)?;
    let tb = Testbed::build(&model, cfg.layout.clone())?;
    let manifest = write_forward(&cfg.out, &tb.forward)?;
    let region_out = cfg.region_out.clone().unwrap_or_else(|| region_path_for(&cfg.out));
    write_json(&region_out, &tb.regions)?;
    Ok(json!({
        "command": "forward",
        "manifest": path_str(&cfg.out),
        "region": path_str(&region_out),
        "rows": 3 * manifest.n_voxels,
        "cols": manifest.n_electrodes,
        "n_target": tb.regions.target_idx.len(),
        "n_offtarget": tb.regions.offtarget_idx.len(),
    }))
}

pub fn solve(cfg: &SolveConfig) -> Result<Value, CliError> {
    let fm = read_forward(&cfg.forward)?;
    let rs: RegionSpec = read_json(&cfg.region)?;
    let ts = build_target_spec(&fm, &rs, &[cfg.e_des], None)?;
    let cs = ConstraintSet::new(cfg.i_safe, cfg.i_tot_mul)
        .with_bound(cfg.bound)
        .with_l1_factor(cfg.l1_factor);
    let alpha = || -> Result<f64, CliError> {
        match cfg.alpha {
            Some(a) => Ok(a),
            None => {
                let (m, rep) = solve_lcmv_e(&ts, &cs)?;
                if !rep.is_optimal() {
                    return Err(status_error("lcmv_e (energy budget)", rep.status));
                }
                Ok(cdm_alpha_from_lcmv(&ts, &m))
            }
        }
    };
    let (montage, report, extra) = match cfg.method {
        Method::LcmvE => {
            let (m, r) = solve_lcmv_e(&ts, &cs)?;
            (m, r, Value::Null)
        }
        Method::Cdm => {
            let a = alpha()?;
            let (m, r) = solve_cdm(&ts, &cs, a)?;
            (m, r, json!({ "alpha": a }))
        }
        Method::DirectionalMax => {
            let (m, r) = solve_directional_max(&ts, &cs)?;
            (m, r, Value::Null)
        }
        Method::Hingeplace => {
            let bands = ToleranceBands::from_triplet(ts.n_offtarget(), cfg.tol);
            let hp = HingeParams::new(cfg.p, bands).with_ridge(cfg.ridge);
            let (m, r) = solve_hingeplace(&ts, &cs, &hp)?;
            (m, r, Value::Null)
        }
        Method::L1l1 => {
            let lp = L1L1Params::new(cfg.eps, cfg.alpha_reg).with_ridge(cfg.ridge);
            let (m, r) = solve_l1l1(&ts, &cs, &lp)?;
            (m, r, Value::Null)
        }
        Method::MagmaxBiconvex => {
            let a = alpha()?;
            let (st, r) = solve_magmax_biconvex(&ts, &cs, a, cfg.max_iters, cfg.rel_tol)?;
            (st.montage, r, json!({ "alpha": a, "trace": st.trace }))
        }
    };
    if !report.is_optimal() {
        return Err(status_error(&report.program, report.status));
    }
    let doc = MontageFile::new(fm.electrode_ids(), &montage, Some(report.clone()))?;
    write_json(&cfg.out, &doc)?;
    Ok(json!({
        "command": "solve",
        "program": report.program,
        "status": report.status,
        "objective": report.objective,
        "out": path_str(&cfg.out),
        "extra": extra,
    }))
}

fn status_error(program: &str, status: SolveStatus) -> CliError {
    let s = serde_json::to_value(status).ok().and_then(|v| v.as_str().map(str::to_string));
    let s = s.unwrap_or_default();
    CliError::new(EXIT_INFEASIBLE, s.clone(), format!("{program} finished with status {s}"))
}

pub fn verify(cfg: &VerifyConfig) -> Result<Value, CliError> {
    let model = SphereModel::default_head();
    let (name, table) = match cfg.kind {
        VerifyKind::Theorem1 => ("theorem1", run_theorem1_sweep(&model, &cfg.theorem1)?),
        VerifyKind::L1l1 => ("l1l1", run_l1l1_sweep(&model, &cfg.l1l1)?),
    };
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let (pairs, cells) = sweep_csv(&table)?;
    let pairs_path = cfg.out_dir.join(format!("{name}_pairs.csv"));
    let cells_path = cfg.out_dir.join(format!("{name}_cells.csv"));
    write_atomic(&pairs_path, &pairs)?;
    write_atomic(&cells_path, &cells)?;
    Ok(json!({
        "command": "verify",
        "kind": name,
        "pairs": path_str(&pairs_path),
        "cells": path_str(&cells_path),
        "worst_cell_median_percent": table.worst_cell_median(),
        "overall_median_percent": table.overall_median(),
        "wall_time_s": table.wall_time_s,
    }))
}

pub const METRICS_COLUMNS: [&str; 6] = ["v_th_m3", "n_active", "n_voxels", "e_des", "fraction", "activation_threshold"];

pub fn metrics(cfg: &MetricsConfig) -> Result<Value, CliError> {
    let fm = read_forward(&cfg.forward)?;
    let mf: MontageFile = read_json(&cfg.montage)?;
    if mf.electrode_ids != fm.electrode_ids() {
        return Err(CliError::input("montage electrode ids do not match the forward model"));
    }
    let montage = mf.montage()?;
    let fields = fm.field(&montage.currents)?;
    let dirs = radial_in_directions(fm.voxel_coords());
    let radial: Vec<f64> = fields
        .iter()
        .zip(&dirs)
        .map(|(e, d)| e[0] * d[0] + e[1] * d[1] + e[2] * d[2])
        .collect();
    let vth = v_th(&radial, cfg.e_des, cfg.fraction, fm.voxel_volumes())?;
    let (_, n_act) = activation_map(&fields, cfg.activation_direction, cfg.activation_threshold, &[])?;
    let row = (vth, n_act, fm.n_voxels(), cfg.e_des, cfg.fraction, cfg.activation_threshold);
    write_atomic(&cfg.out, &csv_bytes(&[row], &METRICS_COLUMNS)?)?;
    Ok(json!({
        "command": "metrics",
        "out": path_str(&cfg.out),
        "v_th_m3": vth,
        "n_active": n_act,
    }))
}

pub fn sweep(cfg: &SweepConfig) -> Result<Value, CliError> {
    let model = SphereModel::default_head();
    let report = run_focality_study(&model, &cfg.study)?;
    write_atomic(&cfg.out, &focality_csv(&report)?)?;
    Ok(json!({
        "command": "sweep",
        "out": path_str(&cfg.out),
        "cells": report.cells.len(),
        "never_worse": report.never_worse(),
        "strictly_better_somewhere": report.strictly_better_somewhere(),
        "wall_time_s": report.wall_time_s,
    }))
}
