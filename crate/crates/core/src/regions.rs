//! Target and off-target voxel sets on spherical shells, and assembly of
//! the target matrices.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ForwardModel, RegionSpec, TargetSpec};
use crate::sphere::{dot, norm, unit};

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Sample points on a shell together with their volumes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShellPoints {
    pub coords: Vec<[f64; 3]>,
    pub volumes: Vec<f64>,
}

impl ShellPoints {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Great-circle distance between two points, measured on the shell of `a`.
pub fn geodesic_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let c = dot(&unit(a), &unit(b)).clamp(-1.0, 1.0);
    norm(a) * c.acos()
}

/// Orthonormal frame `(e1, e2, c)` with `c` along `center`.
fn frame(center: &[f64; 3]) -> [[f64; 3]; 3] {
    let c = unit(center);
    let a = if c[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let ac = dot(&a, &c);
    let e1 = unit(&[a[0] - ac * c[0], a[1] - ac * c[1], a[2] - ac * c[2]]);
    let e2 = [
        c[1] * e1[2] - c[2] * e1[1],
        c[2] * e1[0] - c[0] * e1[2],
        c[0] * e1[1] - c[1] * e1[0],
    ];
    [e1, e2, c]
}

/// Sunflower layout over the polar band `cos_lo >= cos(theta) >= cos_hi`.
fn sunflower(center: &[f64; 3], cos_lo: f64, cos_hi: f64, n: usize) -> Vec<[f64; 3]> {
    let rho = norm(center);
    let [e1, e2, c] = frame(center);
    (0..n)
        .map(|k| {
            let f = (k as f64 + 0.5) / n as f64;
            let ct = cos_lo - f * (cos_lo - cos_hi);
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            let phi = k as f64 * GOLDEN_ANGLE;
            let (u, v) = (st * phi.cos(), st * phi.sin());
            [
                rho * (u * e1[0] + v * e2[0] + ct * c[0]),
                rho * (u * e1[1] + v * e2[1] + ct * c[1]),
                rho * (u * e1[2] + v * e2[2] + ct * c[2]),
            ]
        })
        .collect()
}

fn check_center(center: &[f64; 3]) -> Result<()> {
    let r = norm(center);
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter("region center must be a finite nonzero point".into()));
    }
    Ok(())
}

/// Points on the shell through `center` within geodesic `radius` of it.
///
/// `radius = 0` returns the center alone.
pub fn disc_target(center: [f64; 3], radius: f64, spacing: f64) -> Result<ShellPoints> {
    check_center(&center)?;
    if !(radius >= 0.0) {
        return Err(Error::InvalidParameter(format!("disc radius must be nonnegative, got {radius}")));
    }
    if !(spacing > 0.0) {
        return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing}")));
    }
    let rho = norm(&center);
    let cell = spacing * spacing * spacing;
    if radius == 0.0 {
        return Ok(ShellPoints {
            coords: vec![center],
            volumes: vec![cell],
        });
    }
    let ang = radius / rho;
    if ang >= std::f64::consts::PI {
        return Err(Error::InvalidParameter("disc radius exceeds the shell".into()));
    }
    let area = 2.0 * std::f64::consts::PI * rho * rho * (1.0 - ang.cos());
    let n = ((area / (spacing * spacing)).round() as usize).max(1);
    let coords = if n == 1 { vec![center] } else { sunflower(&center, 1.0, ang.cos(), n) };
    Ok(ShellPoints {
        volumes: vec![cell; coords.len()],
        coords,
    })
}

/// Points on the shell through `center` with geodesic distance in `[inner, outer]`.
pub fn annulus_offtarget(center: [f64; 3], inner: f64, outer: f64, spacing: f64) -> Result<ShellPoints> {
    check_center(&center)?;
    if !(inner > 0.0 && inner < outer) {
        return Err(Error::InvalidParameter(format!(
            "annulus needs 0 < inner < outer, got inner {inner}, outer {outer}"
        )));
    }
    if !(spacing > 0.0) {
        return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing}")));
    }
    let rho = norm(&center);
    let (a_in, a_out) = (inner / rho, (outer / rho).min(std::f64::consts::PI));
    let area = 2.0 * std::f64::consts::PI * rho * rho * (a_in.cos() - a_out.cos());
    let n = ((area / (spacing * spacing)).round() as usize).max(1);
    let coords = sunflower(&center, a_in.cos(), a_out.cos(), n);
    Ok(ShellPoints {
        volumes: vec![spacing * spacing * spacing; n],
        coords,
    })
}

/// Keeps every voxel within `near_radius` of the target and a seeded uniform
/// sample of `round(keep_fraction * |far|)` of the others. Returns sorted indices.
pub fn subsample_offtarget(
    voxels: &[[f64; 3]],
    target_center: [f64; 3],
    near_radius: f64,
    keep_fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let (mut near, mut far) = (Vec::new(), Vec::new());
    for (i, p) in voxels.iter().enumerate() {
        let d = norm(&[p[0] - target_center[0], p[1] - target_center[1], p[2] - target_center[2]]);
        if d <= near_radius {
            near.push(i);
        } else {
            far.push(i);
        }
    }
    let k = ((keep_fraction * far.len() as f64).round() as usize).min(far.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut rng, far.len(), k);
    near.extend(picked.into_iter().map(|j| far[j]));
    near.sort_unstable();
    Ok(near)
}

/// Assembles `A_f`, `A_c` and `E_des` from a forward model and region.
///
/// Each group (positions into `F`) yields one `A_f` row: the mean over its
/// members of `gamma_f * d^T T_voxel`. `None` means one group over all of `F`.
pub fn build_target_spec(
    fm: &ForwardModel,
    rs: &RegionSpec,
    e_des: &[f64],
    groups: Option<&[Vec<usize>]>,
) -> Result<TargetSpec> {
    let m = fm.n_voxels();
    let nf = rs.target_idx.len();
    if let Some(&bad) = rs.target_idx.iter().chain(&rs.offtarget_idx).find(|&&i| i >= m) {
        return Err(Error::InvalidParameter(format!("voxel index {bad} out of range ({m})")));
    }
    if rs.direction_field.len() != nf {
        return Err(Error::dims("direction field rows", nf, rs.direction_field.len()));
    }
    if rs.gamma_f.len() != nf {
        return Err(Error::dims("gamma_f", nf, rs.gamma_f.len()));
    }
    if rs.gamma_c.len() != rs.offtarget_idx.len() {
        return Err(Error::dims("gamma_c", rs.offtarget_idx.len(), rs.gamma_c.len()));
    }
    if nf == 0 {
        return Err(Error::InvalidParameter("target set is empty".into()));
    }
    let default_group = [(0..nf).collect::<Vec<_>>()];
    let groups = groups.unwrap_or(&default_group);
    let mut seen = vec![false; nf];
    for g in groups {
        if g.is_empty() {
            return Err(Error::InvalidParameter("empty target group".into()));
        }
        for &p in g {
            if p >= nf || seen[p] {
                return Err(Error::InvalidParameter(format!(
                    "target groups must partition F; position {p} is out of range or repeated"
                )));
            }
            seen[p] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidParameter("target groups do not cover F".into()));
    }
    if e_des.len() != groups.len() {
        return Err(Error::dims("E_des length", groups.len(), e_des.len()));
    }
    let n = fm.n_electrodes();
    let t = fm.matrix();
    let mut a_f = DMatrix::zeros(groups.len(), n);
    for (g, members) in groups.iter().enumerate() {
        let w = 1.0 / members.len() as f64;
        for &p in members {
            let i = rs.target_idx[p];
            let d = rs.direction_field[p];
            let s = w * rs.gamma_f[p];
            for k in 0..n {
                a_f[(g, k)] += s * (d[0] * t[(i, k)] + d[1] * t[(m + i, k)] + d[2] * t[(2 * m + i, k)]);
            }
        }
    }
    TargetSpec::with_parts(
        a_f,
        DVector::from_column_slice(e_des),
        fm.subset_rows(&rs.offtarget_idx),
        rs.gamma_c.clone(),
        fm.subset_rows(&rs.target_idx),
        rs.direction_field.clone(),
    )
}
