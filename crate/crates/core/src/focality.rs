//! HingePlace versus LCMV-E focality on the spherical point-target testbed.
//!
//! Montages are designed on the testbed's off-target annulus and scored on
//! a separate, finer evaluation disc around the target.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    activation_map, default_activation_dir, tolerance_search, v_th, SearchMode, DEFAULT_ACTIVATION_THRESHOLD,
    GRID_PRESET_P1, GRID_PRESET_P23,
};
use crate::model::{ConstraintSet, ForwardModel, Montage, TargetSpec, ToleranceBands};
use crate::optim::{compute_alpha_max_emax, solve_hingeplace, solve_lcmv_e, HingeParams};
use crate::regions::disc_target;
use crate::sphere::{assemble_forward_matrix, radial_in_directions, radial_project, SphereModel};
use crate::testbed::{DirectionRule, Testbed, TestbedConfig};

/// How a montage is scored; lower is more focal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FocalityMetric {
    /// Count of evaluation points with `E . direction >= threshold`, target along `direction`.
    Activation { direction: [f64; 3], threshold: f64 },
    /// Volume (cm^3) where the radial-in field exceeds `fraction * E_des`, radial-in target.
    VTh { fraction: f64 },
}

/// How tolerance triplets are tuned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Tuning {
    /// Scalar presets scaled by `E_des`, searched afresh in every cell.
    PresetGrid,
    /// Random triplets in `[lower, upper] * E_des` searched at `representative`, re-searched where HingePlace loses.
    Random {
        lower: f64,
        upper: f64,
        n: usize,
        seed: u64,
        representative: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalityConfig {
    pub metric: FocalityMetric,
    pub tuning: Tuning,
    pub e_des: f64,
    /// Spacing of the design annulus (m).
    pub design_spacing: f64,
    /// Spacing and radius of the evaluation disc (m).
    pub eval_spacing: f64,
    pub eval_radius: f64,
    pub powers: Vec<u32>,
    pub i_tot_mul: Vec<f64>,
    /// `I_safe` values as multiples of the smallest feasible one at the smallest `I_tot_mul`.
    pub i_safe_factors: Vec<f64>,
}

impl FocalityConfig {
    /// Directional-threshold study: `E_des = 1.6 * threshold` along the preferred direction.
    pub fn activation(design_spacing: f64) -> Self {
        let threshold = DEFAULT_ACTIVATION_THRESHOLD;
        Self {
            metric: FocalityMetric::Activation {
                direction: default_activation_dir(),
                threshold,
            },
            tuning: Tuning::Random {
                lower: 0.1,
                upper: 0.7,
                n: 30,
                seed: 2024,
                representative: 4,
            },
            e_des: 1.6 * threshold,
            design_spacing,
            eval_spacing: 0.001,
            eval_radius: 0.07,
            powers: vec![1, 2, 3],
            i_tot_mul: vec![2.0, 4.0, 6.0],
            i_safe_factors: vec![1.1, 1.5, 2.5],
        }
    }

    /// Threshold-volume study: radial-in target at 1 V/m, preset tolerance grids.
    pub fn threshold_volume(design_spacing: f64) -> Self {
        Self {
            metric: FocalityMetric::VTh { fraction: 0.8 },
            tuning: Tuning::PresetGrid,
            e_des: 1.0,
            design_spacing,
            eval_spacing: 0.001,
            eval_radius: 0.07,
            powers: vec![1, 2, 3],
            i_tot_mul: vec![2.0, 4.0, 6.0],
            i_safe_factors: vec![1.1, 1.5, 2.5],
        }
    }
}

/// One `(I_safe, I_tot_mul)` cell of the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalityCell {
    pub i_safe: f64,
    pub i_tot_mul: f64,
    pub lcmv_metric: f64,
    pub hp_metric: f64,
    pub hp_power: u32,
    pub hp_triplet: [f64; 3],
    pub retuned: bool,
}

impl FocalityCell {
    pub fn relative_decrease(&self) -> Option<f64> {
        crate::metrics::relative_decrease(self.lcmv_metric, self.hp_metric).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalityReport {
    pub cells: Vec<FocalityCell>,
    pub wall_time_s: f64,
}

impl FocalityReport {
    /// HingePlace no worse in every cell.
    pub fn never_worse(&self) -> bool {
        self.cells.iter().all(|c| c.hp_metric <= c.lcmv_metric)
    }

    pub fn strictly_better_somewhere(&self) -> bool {
        self.cells.iter().any(|c| c.hp_metric < c.lcmv_metric)
    }
}

/// Design testbed plus the scoring operator on the evaluation disc.
pub struct FocalityBench {
    pub testbed: Testbed,
    pub spec: TargetSpec,
    eval: ForwardModel,
    eval_rows: Option<DMatrix<f64>>,
    metric: FocalityMetric,
    e_des: f64,
}

impl FocalityBench {
    pub fn new(model: &SphereModel, config: &FocalityConfig) -> Result<Self> {
        let rule = match &config.metric {
            FocalityMetric::Activation { direction, .. } => DirectionRule::Uniform { direction: *direction },
            FocalityMetric::VTh { .. } => DirectionRule::RadialIn,
        };
        let tcfg = TestbedConfig::focality(config.design_spacing, rule);
        let center = tcfg.target_center;
        let testbed = Testbed::build(model, tcfg)?;
        let spec = testbed.target_spec(config.e_des)?;
        let disc = disc_target(center, config.eval_radius, config.eval_spacing)?;
        let reference = testbed.config.reference;
        let eval = assemble_forward_matrix(model, model.grid(), &disc.coords, Some(&disc.volumes), reference)?;
        let eval_rows = match config.metric {
            FocalityMetric::VTh { .. } => Some(radial_project(&eval, &radial_in_directions(&disc.coords))?),
            FocalityMetric::Activation { .. } => None,
        };
        Ok(Self {
            testbed,
            spec,
            eval,
            eval_rows,
            metric: config.metric.clone(),
            e_des: config.e_des,
        })
    }

    /// Evaluation points superthreshold under the metric.
    pub fn active_set(&self, montage: &Montage) -> Result<Vec<usize>> {
        match &self.metric {
            FocalityMetric::Activation { direction, threshold } => {
                let fields = self.eval.field(&montage.currents)?;
                let (mask, _) = activation_map(&fields, *direction, *threshold, &[])?;
                Ok(mask.iter().enumerate().filter(|(_, a)| **a).map(|(i, _)| i).collect())
            }
            FocalityMetric::VTh { fraction } => {
                let f = self.radial(montage);
                Ok(f.iter().enumerate().filter(|(_, v)| **v > fraction * self.e_des).map(|(i, _)| i).collect())
            }
        }
    }

    fn radial(&self, montage: &Montage) -> Vec<f64> {
        let rows = self.eval_rows.as_ref().expect("radial rows exist for the threshold-volume metric");
        (rows * montage.to_vector()).iter().copied().collect()
    }

    pub fn score(&self, montage: &Montage) -> Result<f64> {
        match &self.metric {
            FocalityMetric::Activation { direction, threshold } => {
                let fields = self.eval.field(&montage.currents)?;
                Ok(activation_map(&fields, *direction, *threshold, &[])?.1 as f64)
            }
            FocalityMetric::VTh { fraction } => {
                Ok(v_th(&self.radial(montage), self.e_des, *fraction, self.eval.voxel_volumes())? * 1e6)
            }
        }
    }

    pub fn lcmv(&self, cs: &ConstraintSet) -> Result<Montage> {
        let (m, rep) = solve_lcmv_e(&self.spec, cs)?;
        if !rep.is_optimal() {
            return Err(Error::Numerical(format!("LCMV-E status {:?}", rep.status)));
        }
        Ok(m)
    }

    pub fn hingeplace(&self, cs: &ConstraintSet, p: u32, triplet: [f64; 3]) -> Result<Montage> {
        let hp = HingeParams::new(p, ToleranceBands::from_triplet(self.spec.n_offtarget(), triplet));
        let (m, rep) = solve_hingeplace(&self.spec, cs, &hp)?;
        if !rep.is_optimal() {
            return Err(Error::Numerical(format!("HingePlace status {:?}", rep.status)));
        }
        Ok(m)
    }

    /// Best `(metric, p, triplet)` over the configured powers.
    fn search(&self, cs: &ConstraintSet, powers: &[u32], mode_for: impl Fn(u32) -> SearchMode) -> Result<(f64, u32, [f64; 3])> {
        let mut best: Option<(f64, u32, [f64; 3])> = None;
        for &p in powers {
            let r = tolerance_search(|t| self.score(&self.hingeplace(cs, p, t)?), &mode_for(p))?;
            if let (Some(m), Some(t)) = (r.best_metric(), r.best_triplet()) {
                if best.is_none_or(|(b, _, _)| m < b) {
                    best = Some((m, p, t));
                }
            }
        }
        best.ok_or_else(|| Error::Numerical("no tolerance candidate produced an optimal HingePlace solve".into()))
    }

    /// Smallest `I_safe` with `E_MAX >= E_des` at the given multiplier.
    pub fn min_feasible_i_safe(&self, i_tot_mul: f64) -> Result<f64> {
        let (_, e_max, _) = compute_alpha_max_emax(&self.spec, &ConstraintSet::new(1.0, i_tot_mul))?;
        if e_max <= 0.0 {
            return Err(Error::Precondition("target unreachable by any montage".into()));
        }
        Ok(self.e_des / e_max)
    }
}

pub fn run_focality_study(model: &SphereModel, config: &FocalityConfig) -> Result<FocalityReport> {
    if config.powers.is_empty() || config.i_tot_mul.is_empty() || config.i_safe_factors.is_empty() {
        return Err(Error::InvalidParameter("focality study has an empty axis".into()));
    }
    let start = std::time::Instant::now();
    let bench = FocalityBench::new(model, config)?;
    let mul_min = config.i_tot_mul.iter().copied().fold(f64::INFINITY, f64::min);
    let s_min = bench.min_feasible_i_safe(mul_min)?;
    let mut grid = Vec::new();
    for &mul in &config.i_tot_mul {
        for &f in &config.i_safe_factors {
            grid.push(ConstraintSet::new(f * s_min, mul));
        }
    }
    let e = config.e_des;
    let preset = |p: u32| SearchMode::Grid {
        values: if p == 1 { GRID_PRESET_P1.to_vec() } else { GRID_PRESET_P23.to_vec() }
            .iter()
            .map(|v| v * e)
            .collect(),
    };
    let mut cells = Vec::with_capacity(grid.len());
    match &config.tuning {
        Tuning::PresetGrid => {
            for cs in &grid {
                let base = bench.score(&bench.lcmv(cs)?)?;
                let (m, p, t) = bench.search(cs, &config.powers, preset)?;
                cells.push(cell(cs, base, m, p, t, false));
            }
        }
        Tuning::Random {
            lower,
            upper,
            n,
            seed,
            representative,
        } => {
            let random = |p: u32| SearchMode::Random {
                lower: lower * e,
                upper: upper * e,
                n: *n,
                seed: seed.wrapping_add(p as u64),
            };
            let rep = grid
                .get(*representative)
                .ok_or_else(|| Error::InvalidParameter("representative cell out of range".into()))?;
            let (_, p0, t0) = bench.search(rep, &config.powers, random)?;
            for cs in &grid {
                let base = bench.score(&bench.lcmv(cs)?)?;
                let first = bench.hingeplace(cs, p0, t0).and_then(|m| bench.score(&m));
                match first {
                    Ok(m) if m <= base => cells.push(cell(cs, base, m, p0, t0, false)),
                    _ => {
                        let (m, p, t) = bench.search(cs, &config.powers, random)?;
                        cells.push(cell(cs, base, m, p, t, true));
                    }
                }
            }
        }
    }
    Ok(FocalityReport {
        cells,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn cell(cs: &ConstraintSet, base: f64, m: f64, p: u32, t: [f64; 3], retuned: bool) -> FocalityCell {
    FocalityCell {
        i_safe: cs.i_safe,
        i_tot_mul: cs.i_tot_mul(),
        lcmv_metric: base,
        hp_metric: m,
        hp_power: p,
        hp_triplet: t,
        retuned,
    }
}
