//! Quasi-static forward solver for a four-shell concentric sphere.
//!
//! Electrodes are point sources on the outer surface. In each shell the
//! order-`l` potential is `A u^l + B u^-(l+1)` with `u = r / R_scalp`; the
//! coefficients follow from continuity of potential and normal current at
//! every interface, starting from a regular solution in the brain.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardModel, Montage};

pub const DEFAULT_RADII: [f64; 4] = [0.080, 0.081, 0.086, 0.092];
pub const DEFAULT_CONDUCTIVITIES: [f64; 4] = [0.30, 1.79, 0.006, 0.33];
pub const DEFAULT_SERIES_ORDER: usize = 200;
const TAIL_TOLERANCE: f64 = 1e-10;

/// Scalp electrode layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeGrid {
    positions: Vec<[f64; 3]>,
    ids: Vec<String>,
    disc_radius: f64,
}

impl ElectrodeGrid {
    pub fn new(positions: Vec<[f64; 3]>, ids: Vec<String>, disc_radius: f64, scalp_radius: f64) -> Result<Self> {
        if ids.len() != positions.len() {
            return Err(Error::dims("electrode ids", positions.len(), ids.len()));
        }
        if positions.len() < 2 {
            return Err(Error::InvalidParameter("a grid needs at least two electrodes".into()));
        }
        for (k, p) in positions.iter().enumerate() {
            let r = norm(p);
            if (r - scalp_radius).abs() > 1e-9 * scalp_radius {
                return Err(Error::InvalidParameter(format!(
                    "electrode {k} lies at radius {r}, not on the scalp ({scalp_radius})"
                )));
            }
            for q in &positions[..k] {
                if dist(p, q) < 1e-9 * scalp_radius {
                    return Err(Error::InvalidParameter(format!("electrode {k} duplicates an earlier position")));
                }
            }
        }
        Ok(Self {
            positions,
            ids,
            disc_radius,
        })
    }

    /// 21 electrodes on a 20 mm lattice around the north pole.
    ///
    /// Lattice offsets `(i, j)` with `i^2 + j^2 <= 5` are mapped to the scalp
    /// by an azimuthal equidistant projection, so the geodesic distance from
    /// the pole equals the planar lattice distance. Ordering is row-major in
    /// `j` then `i`; index 10 is the pole.
    pub fn default_patch(scalp_radius: f64) -> Self {
        let spacing = 0.020;
        let mut positions = Vec::new();
        for j in -2i32..=2 {
            for i in -2i32..=2 {
                if i * i + j * j > 5 {
                    continue;
                }
                let (x, y) = (i as f64 * spacing, j as f64 * spacing);
                let rho = x.hypot(y);
                let theta = rho / scalp_radius;
                let phi = y.atan2(x);
                positions.push([
                    scalp_radius * theta.sin() * phi.cos(),
                    scalp_radius * theta.sin() * phi.sin(),
                    scalp_radius * theta.cos(),
                ]);
            }
        }
        let ids = (0..positions.len()).map(|k| format!("E{k:02}")).collect();
        Self {
            positions,
            ids,
            disc_radius: 0.005,
        }
    }

    /// Index of the electrode at lattice offset `(i, j)` in the default patch.
    pub fn patch_index(i: i32, j: i32) -> Option<usize> {
        let mut k = 0;
        for jj in -2i32..=2 {
            for ii in -2i32..=2 {
                if ii * ii + jj * jj > 5 {
                    continue;
                }
                if (ii, jj) == (i, j) {
                    return Some(k);
                }
                k += 1;
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn disc_radius(&self) -> f64 {
        self.disc_radius
    }
}

/// Concentric four-shell conductor with a fixed electrode set.
#[derive(Debug, Clone)]
pub struct SphereModel {
    radii: [f64; 4],
    sigma: [f64; 4],
    order: usize,
    grid: ElectrodeGrid,
    /// `coeff[l]`: brain coefficient of `(r/R)^l P_l` per ampere injected.
    coeff: Vec<f64>,
}

impl SphereModel {
    /// Radii are shell outer radii from brain to scalp; conductivities in the same order.
    pub fn new(radii: [f64; 4], sigma: [f64; 4], order: usize, grid: ElectrodeGrid) -> Result<Self> {
        if radii[0] <= 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(format!("radii must be strictly increasing and positive: {radii:?}")));
        }
        if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!("conductivities must be positive: {sigma:?}")));
        }
        if order < 2 {
            return Err(Error::InvalidParameter("series order must be at least 2".into()));
        }
        let outer = radii[3];
        for (k, p) in grid.positions().iter().enumerate() {
            if (norm(p) - outer).abs() > 1e-9 * outer {
                return Err(Error::InvalidParameter(format!("electrode {k} is not on the scalp surface")));
            }
        }
        let coeff = shell_coefficients(&radii, &sigma, order);
        Ok(Self {
            radii,
            sigma,
            order,
            grid,
            coeff,
        })
    }

    /// Default head with the default electrode patch.
    pub fn default_head() -> Self {
        Self::new(
            DEFAULT_RADII,
            DEFAULT_CONDUCTIVITIES,
            DEFAULT_SERIES_ORDER,
            ElectrodeGrid::default_patch(DEFAULT_RADII[3]),
        )
        .expect("default head parameters are valid")
    }

    pub fn radii(&self) -> [f64; 4] {
        self.radii
    }

    pub fn conductivities(&self) -> [f64; 4] {
        self.sigma
    }

    pub fn series_order(&self) -> usize {
        self.order
    }

    pub fn grid(&self) -> &ElectrodeGrid {
        &self.grid
    }

    pub fn brain_radius(&self) -> f64 {
        self.radii[0]
    }

    pub fn scalp_radius(&self) -> f64 {
        self.radii[3]
    }

    fn check_point(&self, p: &[f64; 3]) -> Result<()> {
        let r = norm(p);
        if !r.is_finite() || r >= self.radii[0] {
            return Err(Error::Domain(format!(
                "point at radius {r} m is not strictly inside the brain shell ({} m)",
                self.radii[0]
            )));
        }
        Ok(())
    }

    /// Potential in volts at `point` for 1 mA injected at surface direction `src`.
    pub fn source_potential(&self, src: &[f64; 3], point: &[f64; 3]) -> Result<f64> {
        self.check_point(point)?;
        let s = unit(src);
        let r = norm(point);
        let t = r / self.radii[3];
        let x = if r > 0.0 { dot(&s, point) / r } else { 0.0 };
        let mut p_prev = 1.0;
        let mut p = x;
        let mut tl = t;
        let mut sum = 0.0;
        let mut abs_sum = 0.0;
        let mut last = [0.0; 2];
        for l in 1..=self.order {
            let term = self.coeff[l] * tl * p;
            sum += term;
            abs_sum += term.abs();
            last = [last[1], term.abs()];
            let lf = l as f64;
            let p_next = ((2.0 * lf + 1.0) * x * p - lf * p_prev) / (lf + 1.0);
            p_prev = p;
            p = p_next;
            tl *= t;
        }
        self.check_tail(last[0].max(last[1]), abs_sum, t)?;
        Ok(sum * 1e-3)
    }

    /// Field in V/m at `point` for 1 mA injected at surface direction `src`.
    pub fn source_field(&self, src: &[f64; 3], point: &[f64; 3]) -> Result<[f64; 3]> {
        self.check_point(point)?;
        let s = unit(src);
        let r = norm(point);
        let big_r = self.radii[3];
        let t = r / big_r;
        let rhat = if r > 0.0 { [point[0] / r, point[1] / r, point[2] / r] } else { s };
        let x = dot(&s, &rhat);
        let tan = [s[0] - x * rhat[0], s[1] - x * rhat[1], s[2] - x * rhat[2]];
        // grad of (r/R)^l P_l(x) is (r/R)^(l-1) / R * [l P_l rhat + P_l'(x) (s - x rhat)]
        let mut p_prev = 1.0;
        let mut p = x;
        let mut dp_prev = 0.0;
        let mut dp = 1.0;
        let mut tl = 1.0;
        let (mut radial, mut tangential) = (0.0, 0.0);
        let mut abs_sum = 0.0;
        let mut last = [0.0; 2];
        let tan_norm = norm(&tan);
        for l in 1..=self.order {
            let lf = l as f64;
            let c = self.coeff[l] * tl;
            let a = c * lf * p;
            let b = c * dp;
            radial += a;
            tangential += b;
            let mag = a.abs() + b.abs() * tan_norm;
            abs_sum += mag;
            last = [last[1], mag];
            let p_next = ((2.0 * lf + 1.0) * x * p - lf * p_prev) / (lf + 1.0);
            let dp_next = dp_prev + (2.0 * lf + 1.0) * p;
            p_prev = p;
            p = p_next;
            dp_prev = dp;
            dp = dp_next;
            tl *= t;
        }
        self.check_tail(last[0].max(last[1]), abs_sum, t)?;
        let k = -1e-3 / big_r;
        Ok([
            k * (radial * rhat[0] + tangential * tan[0]),
            k * (radial * rhat[1] + tangential * tan[1]),
            k * (radial * rhat[2] + tangential * tan[2]),
        ])
    }

    fn check_tail(&self, last: f64, abs_sum: f64, t: f64) -> Result<()> {
        if abs_sum == 0.0 {
            return Ok(());
        }
        let tail = last * t / (1.0 - t);
        if tail > TAIL_TOLERANCE * abs_sum {
            return Err(Error::Numerical(format!(
                "series tail {tail:.3e} exceeds {TAIL_TOLERANCE:e} of the partial sum {abs_sum:.3e} at order {}",
                self.order
            )));
        }
        Ok(())
    }

    fn electrode_dir(&self, k: usize) -> Result<[f64; 3]> {
        self.grid
            .positions()
            .get(k)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("electrode index {k} out of range ({})", self.grid.len())))
    }

    /// Potential per mA for a +1 mA source / -1 mA sink electrode pair.
    pub fn potential_at(&self, source: usize, sink: usize, point: &[f64; 3]) -> Result<f64> {
        if source == sink {
            return Err(Error::Precondition("source and sink electrodes coincide".into()));
        }
        let a = self.electrode_dir(source)?;
        let b = self.electrode_dir(sink)?;
        Ok(self.source_potential(&a, point)? - self.source_potential(&b, point)?)
    }

    /// Potential in volts produced by a zero-sum montage.
    pub fn montage_potential(&self, montage: &Montage, point: &[f64; 3]) -> Result<f64> {
        self.check_kirchhoff(montage)?;
        let mut v = 0.0;
        for (k, &c) in montage.currents.iter().enumerate() {
            if c != 0.0 {
                v += c * self.source_potential(&self.electrode_dir(k)?, point)?;
            }
        }
        Ok(v)
    }

    fn check_kirchhoff(&self, montage: &Montage) -> Result<()> {
        if montage.len() != self.grid.len() {
            return Err(Error::dims("montage length", self.grid.len(), montage.len()));
        }
        if montage.net().abs() > 1e-9 * montage.l1() {
            return Err(Error::Precondition(format!(
                "montage currents sum to {} mA; injected and returned current must balance",
                montage.net()
            )));
        }
        Ok(())
    }

    /// Field vectors produced by a zero-sum montage at each point.
    pub fn efield_at(&self, montage: &Montage, points: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        self.check_kirchhoff(montage)?;
        let active: Vec<(usize, f64)> = montage
            .currents
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| (k, *c))
            .collect();
        points
            .iter()
            .map(|p| {
                self.check_point(p)?;
                let mut e = [0.0; 3];
                for &(k, c) in &active {
                    let f = self.source_field(&self.grid.positions()[k], p)?;
                    for a in 0..3 {
                        e[a] += c * f[a];
                    }
                }
                Ok(e)
            })
            .collect()
    }
}

/// Brain coefficients of the Legendre series per ampere of injected current.
fn shell_coefficients(radii: &[f64; 4], sigma: &[f64; 4], order: usize) -> Vec<f64> {
    let outer = radii[3];
    let mut coeff = vec![0.0; order + 1];
    for (l, c) in coeff.iter_mut().enumerate().skip(1) {
        let lf = l as f64;
        let (mut a, mut b) = (1.0, 0.0);
        for k in 0..3 {
            let u = radii[k] / outer;
            let (s0, s1) = (sigma[k], sigma[k + 1]);
            // Continuity of potential and normal current at u.
            let ul = u.powi(l as i32);
            let um = u.powi(-(l as i32) - 1);
            let phi = a * ul + b * um;
            let flux = s0 * (lf * a * ul - (lf + 1.0) * b * um) / u;
            // Solve [ul um; s1 l ul/u  -s1 (l+1) um/u] [a'; b'] = [phi; flux].
            let f = flux / s1 * u;
            let a1 = ((lf + 1.0) * phi + f) / ((2.0 * lf + 1.0) * ul);
            let b1 = (lf * phi - f) / ((2.0 * lf + 1.0) * um);
            a = a1;
            b = b1;
        }
        let h = lf * a - (lf + 1.0) * b;
        *c = (2.0 * lf + 1.0) / (4.0 * std::f64::consts::PI * outer * sigma[3] * h);
    }
    coeff
}

/// Lead-field matrix for voxels, one column per electrode returning at `reference`.
///
/// The reference column is identically zero.
pub fn assemble_forward_matrix(
    model: &SphereModel,
    grid: &ElectrodeGrid,
    voxels: &[[f64; 3]],
    volumes: Option<&[f64]>,
    reference: usize,
) -> Result<ForwardModel> {
    let n = grid.len();
    if reference >= n {
        return Err(Error::InvalidParameter(format!("reference electrode {reference} out of range ({n})")));
    }
    let m = voxels.len();
    let volumes = match volumes {
        Some(v) if v.len() != m => return Err(Error::dims("voxel volumes", m, v.len())),
        Some(v) => v.to_vec(),
        None => vec![1e-9; m],
    };
    let refpos = grid.positions()[reference];
    let rows: Vec<Vec<[f64; 3]>> = voxels
        .par_iter()
        .map(|p| {
            let fr = model.source_field(&refpos, p)?;
            grid.positions()
                .iter()
                .enumerate()
                .map(|(k, pos)| {
                    if k == reference {
                        return Ok([0.0; 3]);
                    }
                    let f = model.source_field(pos, p)?;
                    Ok([f[0] - fr[0], f[1] - fr[1], f[2] - fr[2]])
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = DMatrix::zeros(3 * m, n);
    for (i, row) in rows.iter().enumerate() {
        for (k, e) in row.iter().enumerate() {
            for a in 0..3 {
                t[(a * m + i, k)] = e[a];
            }
        }
    }
    ForwardModel::new(
        t,
        voxels.to_vec(),
        volumes,
        grid.ids().to_vec(),
        format!(
            "column k: +1 mA at electrode k returning at electrode {} ({})",
            reference,
            grid.ids()[reference]
        ),
    )
}

/// Direction-projected lead field: row `i` is `d_i^T` times the voxel-`i` row triple.
pub fn radial_project(fm: &ForwardModel, directions: &[[f64; 3]]) -> Result<DMatrix<f64>> {
    let m = fm.n_voxels();
    if directions.len() != m {
        return Err(Error::dims("direction rows", m, directions.len()));
    }
    let t = fm.matrix();
    let n = fm.n_electrodes();
    let mut out = DMatrix::zeros(m, n);
    for (i, d) in directions.iter().enumerate() {
        for k in 0..n {
            out[(i, k)] = d[0] * t[(i, k)] + d[1] * t[(m + i, k)] + d[2] * t[(2 * m + i, k)];
        }
    }
    Ok(out)
}

/// Inward unit normals at the given points.
pub fn radial_in_directions(points: &[[f64; 3]]) -> Vec<[f64; 3]> {
    points
        .iter()
        .map(|p| {
            let r = norm(p);
            [-p[0] / r, -p[1] / r, -p[2] / r]
        })
        .collect()
}

pub(crate) fn norm(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn unit(p: &[f64; 3]) -> [f64; 3] {
    let r = norm(p);
    [p[0] / r, p[1] / r, p[2] / r]
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    norm(&[a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}
