//! Sweep harnesses for the CDM / LCMV-E equivalence and the L1L1 to
//! HingePlace reduction on the spherical testbed.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Montage, SafetyBound, SolveStatus, TargetSpec, ToleranceBands};
use crate::optim::{
    compute_alpha_max_emax, l1l1, solve_cdm_with, solve_hingeplace_with, solve_l1l1_with, solve_lcmv_e_with,
    HingeParams, L1L1Params, SolverOptions,
};
use crate::sphere::SphereModel;
use crate::testbed::{equivalence_targets, reference_pattern_pair, Testbed, TestbedConfig};

/// Off-target energy `|A_c I|^2` of a montage, the CDM budget matching an LCMV-E solution.
pub fn cdm_alpha_from_lcmv(ts: &TargetSpec, montage: &Montage) -> f64 {
    ts.offtarget_energy(&montage.currents)
}

/// Target intensities `A_f I` of a montage, the LCMV-E level matching a CDM solution.
pub fn lcmv_edes_from_cdm(ts: &TargetSpec, montage: &Montage) -> DVector<f64> {
    ts.target_field(&montage.currents)
}

/// `100 |a - b|_1 / |b|_1`.
pub fn montage_rel_diff(a: &Montage, b: &Montage) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims("montage length", b.len(), a.len()));
    }
    let den = b.l1();
    if den == 0.0 {
        return Err(Error::InvalidParameter("relative difference needs a nonzero reference montage".into()));
    }
    let num: f64 = a.currents.iter().zip(&b.currents).map(|(x, y)| (x - y).abs()).sum();
    Ok(100.0 * num / den)
}

/// HingePlace inputs that reproduce an L1L1 solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedHinge {
    pub e_des: DVector<f64>,
    pub i_tot: f64,
    pub bands: ToleranceBands,
}

/// `E_des = A_f I*`, `I_tot = |I*|_1 / 2` and uniform bands `nu * eps`.
pub fn hp_params_from_l1l1(ts: &TargetSpec, solution: &Montage, lp: &L1L1Params) -> ReducedHinge {
    let e_des = ts.target_field(&solution.currents);
    ReducedHinge {
        e_des,
        i_tot: solution.l1() / 2.0,
        bands: ToleranceBands::uniform(ts.n_offtarget(), l1l1::nu(ts) * lp.eps),
    }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// `n` points evenly spaced on a log scale from `a` to `b`.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.log10(), b.log10());
    (0..n).map(|k| 10f64.powf(la + (lb - la) * k as f64 / (n - 1) as f64)).collect()
}

/// Geometry and constraint grid shared by both sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub targets: Vec<[f64; 3]>,
    pub i_safe: Vec<f64>,
    pub i_tot_mul: Vec<f64>,
    pub target_spacing: f64,
    pub annulus_spacing: f64,
    /// Currents of the reference pattern whose target intensity sets `E_des`, mA.
    pub pattern_levels: Vec<f64>,
}

impl SweepGrid {
    fn default_with(levels: Vec<f64>, target_spacing: f64, annulus_spacing: f64) -> Self {
        Self {
            targets: equivalence_targets(),
            i_safe: vec![200.0, 220.0, 240.0, 280.0, 300.0],
            i_tot_mul: vec![2.0, 4.0, 6.0],
            target_spacing,
            annulus_spacing,
            pattern_levels: levels,
        }
    }

    fn testbed(&self, model: &SphereModel, target: usize) -> Result<Testbed> {
        let mut cfg = TestbedConfig::equivalence(self.targets[target], self.target_spacing);
        cfg.annulus_spacing = self.annulus_spacing;
        Testbed::build(model, cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.targets.is_empty() || self.i_safe.is_empty() || self.i_tot_mul.is_empty() {
            return Err(Error::InvalidParameter("sweep grid has an empty axis".into()));
        }
        if self.pattern_levels.is_empty() {
            return Err(Error::InvalidParameter("sweep needs at least one target level".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Config {
    pub grid: SweepGrid,
    pub solver: SolverOptionsConfig,
}

impl Default for Theorem1Config {
    /// Eleven levels from 80 to 120 mA of the reference pattern, 1 mm voxels.
    fn default() -> Self {
        let levels = (0..11).map(|k| 80.0 + 4.0 * k as f64).collect();
        Self {
            grid: SweepGrid::default_with(levels, 0.001, 0.001),
            solver: SolverOptionsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1L1SweepConfig {
    pub grid: SweepGrid,
    pub eps: Vec<f64>,
    pub alpha_reg: Vec<f64>,
    pub ridge: f64,
    pub bound: SafetyBound,
    pub solver: SolverOptionsConfig,
}

impl Default for L1L1SweepConfig {
    /// 5 x 5 log grids, eps in [0.01, 1] and alpha_reg in [1e-5, 0.1], one-sided safety bound.
    fn default() -> Self {
        Self {
            grid: SweepGrid::default_with(vec![100.0], 0.002, 0.005),
            eps: log_grid(1.0, 0.01, 5),
            alpha_reg: log_grid(0.1, 1e-5, 5),
            ridge: 1e-9,
            bound: SafetyBound::UpperOnly,
            solver: SolverOptionsConfig::default(),
        }
    }
}

/// Serializable mirror of [`SolverOptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptionsConfig {
    pub tol_gap_rel: f64,
    pub tol_gap_abs: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
}

impl Default for SolverOptionsConfig {
    fn default() -> Self {
        SolverOptions::default().into()
    }
}

impl From<SolverOptions> for SolverOptionsConfig {
    fn from(o: SolverOptions) -> Self {
        Self {
            tol_gap_rel: o.tol_gap_rel,
            tol_gap_abs: o.tol_gap_abs,
            tol_feas: o.tol_feas,
            max_iter: o.max_iter,
        }
    }
}

impl From<SolverOptionsConfig> for SolverOptions {
    fn from(o: SolverOptionsConfig) -> Self {
        Self {
            tol_gap_rel: o.tol_gap_rel,
            tol_gap_abs: o.tol_gap_abs,
            tol_feas: o.tol_feas,
            max_iter: o.max_iter,
        }
    }
}

/// One solved pair of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub target: usize,
    pub i_safe: f64,
    pub i_tot_mul: f64,
    /// Pattern level (CDM / LCMV-E sweep) or `eps` (L1L1 sweep).
    pub param_a: f64,
    /// `E_des` (CDM / LCMV-E sweep) or `alpha_reg` (L1L1 sweep).
    pub param_b: f64,
    /// Percent difference, absent when a solve failed or the pair was skipped.
    pub diff_percent: Option<f64>,
    pub flag: Option<String>,
}

/// Median over the pairs of one `(target, I_safe, I_tot_mul)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub target: usize,
    pub i_safe: f64,
    pub i_tot_mul: f64,
    pub median_diff_percent: Option<f64>,
    pub n_pairs: usize,
    pub n_flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub pairs: Vec<PairRecord>,
    pub cells: Vec<CellSummary>,
    pub wall_time_s: f64,
}

impl SweepTable {
    fn from_pairs(pairs: Vec<PairRecord>, wall_time_s: f64) -> Self {
        let mut cells: Vec<CellSummary> = Vec::new();
        let mut start = 0;
        while start < pairs.len() {
            let key = (pairs[start].target, pairs[start].i_safe, pairs[start].i_tot_mul);
            let mut end = start;
            while end < pairs.len() && (pairs[end].target, pairs[end].i_safe, pairs[end].i_tot_mul) == key {
                end += 1;
            }
            let block = &pairs[start..end];
            let mut d: Vec<f64> = block.iter().filter_map(|p| p.diff_percent).collect();
            cells.push(CellSummary {
                target: key.0,
                i_safe: key.1,
                i_tot_mul: key.2,
                median_diff_percent: median(&mut d),
                n_pairs: block.len(),
                n_flagged: block.iter().filter(|p| p.flag.is_some()).count(),
            });
            start = end;
        }
        Self {
            pairs,
            cells,
            wall_time_s,
        }
    }

    /// Largest cell median, `None` if some cell has no valid pair.
    pub fn worst_cell_median(&self) -> Option<f64> {
        self.cells
            .iter()
            .map(|c| c.median_diff_percent)
            .try_fold(0.0f64, |m, c| c.map(|v| m.max(v)))
    }

    /// Median of all valid pair differences.
    pub fn overall_median(&self) -> Option<f64> {
        let mut d: Vec<f64> = self.pairs.iter().filter_map(|p| p.diff_percent).collect();
        median(&mut d)
    }
}

fn flagged(rec: &mut PairRecord, msg: String) {
    rec.diff_percent = None;
    rec.flag = Some(msg);
}

/// LCMV-E at each level, CDM at the matching energy, percent difference of the montages.
///
/// Levels whose `E_des` exceeds the cell's `E_MAX` are outside the regime of
/// exact equivalence and are flagged rather than solved.
pub fn run_theorem1_sweep(model: &SphereModel, config: &Theorem1Config) -> Result<SweepTable> {
    let grid = &config.grid;
    grid.validate()?;
    let opts: SolverOptions = config.solver.into();
    let start = std::time::Instant::now();
    let pair = reference_pattern_pair();
    let mut pairs = Vec::new();
    for t in 0..grid.targets.len() {
        let tb = grid.testbed(model, t)?;
        let unit_intensity = tb.pattern_intensity(pair)?;
        let base = tb.target_spec(unit_intensity)?;
        let _ = base.energy_factor();
        for &i_safe in &grid.i_safe {
            for &mul in &grid.i_tot_mul {
                let cs = ConstraintSet::new(i_safe, mul);
                let e_max = compute_alpha_max_emax(&base, &cs).map(|(_, e, _)| e);
                for &level in &grid.pattern_levels {
                    let e_des = level * unit_intensity;
                    let mut rec = PairRecord {
                        target: t,
                        i_safe,
                        i_tot_mul: mul,
                        param_a: level,
                        param_b: e_des,
                        diff_percent: None,
                        flag: None,
                    };
                    match &e_max {
                        Err(e) => flagged(&mut rec, format!("E_MAX unavailable: {e}")),
                        Ok(em) if e_des > *em => flagged(&mut rec, format!("E_des {e_des} above E_MAX {em}")),
                        Ok(_) => {
                            let ts = base.with_e_des(DVector::from_element(1, e_des))?;
                            match theorem1_pair(&ts, &cs, &opts) {
                                Ok(d) => rec.diff_percent = Some(d),
                                Err(e) => flagged(&mut rec, e.to_string()),
                            }
                        }
                    }
                    pairs.push(rec);
                }
            }
        }
    }
    Ok(SweepTable::from_pairs(pairs, start.elapsed().as_secs_f64()))
}

fn theorem1_pair(ts: &TargetSpec, cs: &ConstraintSet, opts: &SolverOptions) -> Result<f64> {
    let (ml, rl) = solve_lcmv_e_with(ts, cs, 0.0, opts)?;
    if rl.status != SolveStatus::Optimal {
        return Err(Error::Numerical(format!("LCMV-E status {:?}", rl.status)));
    }
    let alpha = cdm_alpha_from_lcmv(ts, &ml);
    let (mc, rc) = solve_cdm_with(ts, cs, alpha, 0.0, opts)?;
    if rc.status != SolveStatus::Optimal {
        return Err(Error::Numerical(format!("CDM status {:?}", rc.status)));
    }
    montage_rel_diff(&ml, &mc)
}

/// L1L1 over the `(eps, alpha_reg)` grid, then HingePlace (p = 1) with the reduced parameters.
pub fn run_l1l1_sweep(model: &SphereModel, config: &L1L1SweepConfig) -> Result<SweepTable> {
    let grid = &config.grid;
    grid.validate()?;
    if config.eps.is_empty() || config.alpha_reg.is_empty() {
        return Err(Error::InvalidParameter("L1L1 sweep needs nonempty eps and alpha_reg grids".into()));
    }
    let opts: SolverOptions = config.solver.into();
    let start = std::time::Instant::now();
    let pair = reference_pattern_pair();
    let level = grid.pattern_levels[0];
    let mut pairs = Vec::new();
    for t in 0..grid.targets.len() {
        let tb = grid.testbed(model, t)?;
        let ts = tb.target_spec(level * tb.pattern_intensity(pair)?)?;
        for &i_safe in &grid.i_safe {
            for &mul in &grid.i_tot_mul {
                let cs = ConstraintSet::new(i_safe, mul).with_bound(config.bound);
                for &eps in &config.eps {
                    for &a in &config.alpha_reg {
                        let lp = L1L1Params::new(eps, a).with_ridge(config.ridge);
                        let mut rec = PairRecord {
                            target: t,
                            i_safe,
                            i_tot_mul: mul,
                            param_a: eps,
                            param_b: a,
                            diff_percent: None,
                            flag: None,
                        };
                        match l1l1_pair(&ts, &cs, &lp, &opts) {
                            Ok(d) => rec.diff_percent = Some(d),
                            Err(e) => flagged(&mut rec, e.to_string()),
                        }
                        pairs.push(rec);
                    }
                }
            }
        }
    }
    Ok(SweepTable::from_pairs(pairs, start.elapsed().as_secs_f64()))
}

/// Solves one L1L1 instance and its reduced HingePlace program; percent difference against the HingePlace montage.
pub fn l1l1_pair(ts: &TargetSpec, cs: &ConstraintSet, lp: &L1L1Params, opts: &SolverOptions) -> Result<f64> {
    let (m1, r1) = solve_l1l1_with(ts, cs, lp, opts)?;
    if r1.status != SolveStatus::Optimal {
        return Err(Error::Numerical(format!("L1L1 status {:?}", r1.status)));
    }
    let red = hp_params_from_l1l1(ts, &m1, lp);
    if red.i_tot <= 0.0 {
        return Err(Error::Precondition("L1L1 returned the zero montage".into()));
    }
    let ts2 = ts.with_e_des(red.e_des)?;
    let cs2 = ConstraintSet::with_total(cs.i_safe, red.i_tot)
        .with_bound(cs.bound)
        .with_l1_factor(cs.l1_factor);
    let hp = HingeParams::new(1, red.bands).with_ridge(l1l1::nu(ts) * lp.ridge);
    let (m2, r2) = solve_hingeplace_with(&ts2, &cs2, &hp, opts)?;
    if r2.status != SolveStatus::Optimal {
        return Err(Error::Numerical(format!("HingePlace status {:?}", r2.status)));
    }
    montage_rel_diff(&m1, &m2)
}
