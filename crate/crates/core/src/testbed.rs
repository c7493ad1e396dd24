//! Spherical study geometries: target disc plus off-target annulus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardModel, Montage, RegionSpec, TargetSpec};
use crate::regions::{annulus_offtarget, build_target_spec, disc_target, subsample_offtarget};
use crate::sphere::{assemble_forward_matrix, norm, unit, ElectrodeGrid, SphereModel};

/// Point from spherical coordinates (radius, polar angle from +z, azimuth from +x).
pub fn spherical_point(r: f64, theta: f64, phi: f64) -> [f64; 3] {
    [r * theta.sin() * phi.cos(), r * theta.sin() * phi.sin(), r * theta.cos()]
}

/// The five equivalence-study target centers at 7.7 cm radius: the pole and
/// 2 cm geodesic offsets along +x, +y, -x and -y.
pub fn equivalence_targets() -> Vec<[f64; 3]> {
    use std::f64::consts::PI;
    let r = 0.077;
    let th = 2.0 / 7.7;
    vec![
        spherical_point(r, 0.0, 0.0),
        spherical_point(r, th, 0.0),
        spherical_point(r, th, PI / 2.0),
        spherical_point(r, th, PI),
        spherical_point(r, th, 3.0 * PI / 2.0),
    ]
}

/// Electrode pair `(source, sink)` of the reference pattern: lattice offsets (-2, 0) and (+2, 0).
pub fn reference_pattern_pair() -> (usize, usize) {
    (
        ElectrodeGrid::patch_index(-2, 0).expect("lattice point exists"),
        ElectrodeGrid::patch_index(2, 0).expect("lattice point exists"),
    )
}

/// Montage with `+level` mA at `pair.0` and `-level` mA at `pair.1`.
pub fn pattern_montage(n: usize, pair: (usize, usize), level: f64) -> Montage {
    let mut c = vec![0.0; n];
    c[pair.0] = level;
    c[pair.1] = -level;
    Montage::new(c)
}

/// How target directions are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DirectionRule {
    /// Same unit vector at every target voxel.
    Uniform { direction: [f64; 3] },
    /// Inward normal at each target voxel.
    RadialIn,
    /// Unit field direction of an electrode pair at the target center.
    Pattern { source: usize, sink: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedConfig {
    pub target_center: [f64; 3],
    pub target_radius: f64,
    pub target_spacing: f64,
    pub annulus_inner: f64,
    pub annulus_outer: f64,
    pub annulus_spacing: f64,
    pub directions: DirectionRule,
    pub reference: usize,
}

impl TestbedConfig {
    /// Disc of 1 cm radius inside a 1.1 to 7 cm annulus.
    pub fn equivalence(center: [f64; 3], spacing: f64) -> Self {
        let (source, sink) = reference_pattern_pair();
        Self {
            target_center: center,
            target_radius: 0.010,
            target_spacing: spacing,
            annulus_inner: 0.011,
            annulus_outer: 0.070,
            annulus_spacing: spacing,
            directions: DirectionRule::Pattern { source, sink },
            reference: 10,
        }
    }

    /// Point target 1 mm below the cortex at the pole inside a 0.5 to 7 cm annulus.
    pub fn focality(spacing: f64, directions: DirectionRule) -> Self {
        Self {
            target_center: [0.0, 0.0, 0.079],
            target_radius: 0.0,
            target_spacing: spacing,
            annulus_inner: 0.005,
            annulus_outer: 0.070,
            annulus_spacing: spacing,
            directions,
            reference: 10,
        }
    }
}

/// Forward model over target then off-target voxels, with the region split.
#[derive(Debug, Clone)]
pub struct Testbed {
    pub model: SphereModel,
    pub forward: ForwardModel,
    pub regions: RegionSpec,
    pub config: TestbedConfig,
}

impl Testbed {
    pub fn build(model: &SphereModel, config: TestbedConfig) -> Result<Self> {
        let disc = disc_target(config.target_center, config.target_radius, config.target_spacing)?;
        let ring = annulus_offtarget(
            config.target_center,
            config.annulus_inner,
            config.annulus_outer,
            config.annulus_spacing,
        )?;
        let mut coords = disc.coords.clone();
        coords.extend_from_slice(&ring.coords);
        let mut volumes = disc.volumes.clone();
        volumes.extend_from_slice(&ring.volumes);
        let forward = assemble_forward_matrix(model, model.grid(), &coords, Some(&volumes), config.reference)?;
        let nf = disc.len();
        let directions = match &config.directions {
            DirectionRule::Uniform { direction } => {
                if norm(direction) == 0.0 {
                    return Err(Error::InvalidParameter("direction must be nonzero".into()));
                }
                vec![unit(direction); nf]
            }
            DirectionRule::RadialIn => crate::sphere::radial_in_directions(&disc.coords),
            DirectionRule::Pattern { source, sink } => {
                let mut c = vec![0.0; model.grid().len()];
                c[*source] = 1.0;
                c[*sink] = -1.0;
                let e = model.efield_at(&Montage::new(c), &[config.target_center])?[0];
                if norm(&e) == 0.0 {
                    return Err(Error::Numerical("pattern field vanishes at the target".into()));
                }
                vec![unit(&e); nf]
            }
        };
        let regions = RegionSpec::new((0..nf).collect(), (nf..coords.len()).collect(), directions);
        Ok(Self {
            model: model.clone(),
            forward,
            regions,
            config,
        })
    }

    pub fn n_target(&self) -> usize {
        self.regions.target_idx.len()
    }

    pub fn target_spec(&self, e_des: f64) -> Result<TargetSpec> {
        build_target_spec(&self.forward, &self.regions, &[e_des], None)
    }

    /// Target spec whose off-target set is a subset given by positions into `C`.
    pub fn target_spec_subset(&self, e_des: f64, keep: &[usize]) -> Result<TargetSpec> {
        let mut rs = self.regions.clone();
        rs.offtarget_idx = keep.iter().map(|&k| self.regions.offtarget_idx[k]).collect();
        rs.gamma_c = vec![1.0; rs.offtarget_idx.len()];
        build_target_spec(&self.forward, &rs, &[e_des], None)
    }

    /// Positions into `C` kept by distance-aware random subsampling.
    pub fn subsample(&self, near_radius: f64, keep_fraction: f64, seed: u64) -> Result<Vec<usize>> {
        let coords: Vec<[f64; 3]> = self
            .regions
            .offtarget_idx
            .iter()
            .map(|&i| self.forward.voxel_coords()[i])
            .collect();
        subsample_offtarget(&coords, self.config.target_center, near_radius, keep_fraction, seed)
    }

    /// Aggregate target intensity `A_f I` of the reference pattern at 1 mA.
    pub fn pattern_intensity(&self, pair: (usize, usize)) -> Result<f64> {
        let ts = self.target_spec(0.0)?;
        let m = pattern_montage(self.forward.n_electrodes(), pair, 1.0);
        Ok(ts.target_field(&m.currents)[0])
    }
}
