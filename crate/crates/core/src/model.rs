//! Domain types shared by the forward model, region builders and optimizers.
//!
//! Units are fixed throughout: currents in mA, fields in V/m, geometry in m.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cartesian component of a field vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Lead-field matrix with voxel geometry and electrode metadata.
///
/// `T` is `3M x N` and stored as `[x-block; y-block; z-block]`, so rows
/// `i`, `M + i` and `2M + i` hold the field components at voxel `i`.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    t: DMatrix<f64>,
    voxel_coords: Vec<[f64; 3]>,
    voxel_volumes: Vec<f64>,
    electrode_ids: Vec<String>,
    reference_note: String,
}

impl ForwardModel {
    pub fn new(
        t: DMatrix<f64>,
        voxel_coords: Vec<[f64; 3]>,
        voxel_volumes: Vec<f64>,
        electrode_ids: Vec<String>,
        reference_note: impl Into<String>,
    ) -> Result<Self> {
        let m = voxel_coords.len();
        if t.nrows() != 3 * m {
            return Err(Error::dims("forward matrix rows (3M)", 3 * m, t.nrows()));
        }
        if voxel_volumes.len() != m {
            return Err(Error::dims("voxel volumes", m, voxel_volumes.len()));
        }
        if electrode_ids.len() != t.ncols() {
            return Err(Error::dims("electrode ids", t.ncols(), electrode_ids.len()));
        }
        Ok(Self {
            t,
            voxel_coords,
            voxel_volumes,
            electrode_ids,
            reference_note: reference_note.into(),
        })
    }

    /// Builds a model from separate `M x N` component blocks.
    pub fn from_blocks(
        tx: &DMatrix<f64>,
        ty: &DMatrix<f64>,
        tz: &DMatrix<f64>,
        voxel_coords: Vec<[f64; 3]>,
        voxel_volumes: Vec<f64>,
        electrode_ids: Vec<String>,
        reference_note: impl Into<String>,
    ) -> Result<Self> {
        let (m, n) = tx.shape();
        for (name, b) in [("y-block", ty), ("z-block", tz)] {
            if b.shape() != (m, n) {
                return Err(Error::dims(name, m * n, b.nrows() * b.ncols()));
            }
        }
        let mut t = DMatrix::zeros(3 * m, n);
        t.view_mut((0, 0), (m, n)).copy_from(tx);
        t.view_mut((m, 0), (m, n)).copy_from(ty);
        t.view_mut((2 * m, 0), (m, n)).copy_from(tz);
        Self::new(t, voxel_coords, voxel_volumes, electrode_ids, reference_note)
    }

    pub fn n_electrodes(&self) -> usize {
        self.t.ncols()
    }

    pub fn n_voxels(&self) -> usize {
        self.voxel_coords.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn voxel_coords(&self) -> &[[f64; 3]] {
        &self.voxel_coords
    }

    pub fn voxel_volumes(&self) -> &[f64] {
        &self.voxel_volumes
    }

    pub fn electrode_ids(&self) -> &[String] {
        &self.electrode_ids
    }

    pub fn reference_note(&self) -> &str {
        &self.reference_note
    }

    /// The `M x N` block for one field component.
    pub fn block(&self, axis: Axis) -> DMatrix<f64> {
        let m = self.n_voxels();
        self.t
            .view((axis.index() * m, 0), (m, self.n_electrodes()))
            .into_owned()
    }

    /// Row of `T` for component `axis` at voxel `i`.
    pub fn row(&self, axis: Axis, i: usize) -> RowDVector<f64> {
        self.t.row(axis.index() * self.n_voxels() + i).into_owned()
    }

    /// The `3 x N` matrix mapping currents to the field at voxel `i`.
    pub fn voxel_rows(&self, i: usize) -> DMatrix<f64> {
        let m = self.n_voxels();
        let n = self.n_electrodes();
        let mut out = DMatrix::zeros(3, n);
        for a in 0..3 {
            out.row_mut(a).copy_from(&self.t.row(a * m + i));
        }
        out
    }

    /// Field vectors produced by a montage at every voxel.
    pub fn field(&self, currents: &[f64]) -> Result<Vec<[f64; 3]>> {
        if currents.len() != self.n_electrodes() {
            return Err(Error::dims("montage length", self.n_electrodes(), currents.len()));
        }
        let e = &self.t * DVector::from_column_slice(currents);
        let m = self.n_voxels();
        Ok((0..m).map(|i| [e[i], e[m + i], e[2 * m + i]]).collect())
    }

    /// Stacked `[x; y; z]` rows restricted to a voxel subset, in subset order.
    pub fn subset_rows(&self, idx: &[usize]) -> DMatrix<f64> {
        let m = self.n_voxels();
        let k = idx.len();
        let mut out = DMatrix::zeros(3 * k, self.n_electrodes());
        for a in 0..3 {
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(a * k + r).copy_from(&self.t.row(a * m + i));
            }
        }
        out
    }
}

/// Per-electrode injected currents in mA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Montage {
    pub currents: Vec<f64>,
}

impl Montage {
    pub fn new(currents: Vec<f64>) -> Self {
        Self { currents }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            currents: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }

    pub fn net(&self) -> f64 {
        self.currents.iter().sum()
    }

    pub fn l1(&self) -> f64 {
        self.currents.iter().map(|c| c.abs()).sum()
    }

    pub fn linf(&self) -> f64 {
        self.currents.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.currents)
    }

    /// Checks the solver-output invariants against a constraint set.
    pub fn check(&self, cs: &ConstraintSet) -> MontageCheck {
        MontageCheck {
            net: self.net().abs(),
            net_ok: self.net().abs() <= 1e-9 * cs.i_safe,
            linf: self.linf(),
            linf_ok: self.linf() <= cs.i_safe * (1.0 + 1e-8),
            l1: self.l1(),
            l1_ok: self.l1() <= cs.l1_budget() * (1.0 + 1e-8),
        }
    }
}

/// Outcome of [`Montage::check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MontageCheck {
    pub net: f64,
    pub net_ok: bool,
    pub linf: f64,
    pub linf_ok: bool,
    pub l1: f64,
    pub l1_ok: bool,
}

impl MontageCheck {
    pub fn all_ok(&self) -> bool {
        self.net_ok && self.linf_ok && self.l1_ok
    }
}

/// Target and off-target voxel sets with directions and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub target_idx: Vec<usize>,
    pub offtarget_idx: Vec<usize>,
    pub direction_field: Vec<[f64; 3]>,
    pub gamma_f: Vec<f64>,
    pub gamma_c: Vec<f64>,
}

impl RegionSpec {
    /// Region with identity weights.
    pub fn new(target_idx: Vec<usize>, offtarget_idx: Vec<usize>, direction_field: Vec<[f64; 3]>) -> Self {
        let nf = target_idx.len();
        let nc = offtarget_idx.len();
        Self {
            target_idx,
            offtarget_idx,
            direction_field,
            gamma_f: vec![1.0; nf],
            gamma_c: vec![1.0; nc],
        }
    }
}

/// Assembled matrices for one design problem.
///
/// `a_c` holds the weighted off-target rows `sqrt(gamma_c) * T_c`, so
/// `|A_c I|^2` is the weighted off-target energy. The raw rows `t_c` and
/// the weights are kept alongside for the hinge programs. Both are stacked
/// as `[x-block; y-block; z-block]` over `C`.
#[derive(Debug, Clone)]
pub struct TargetSpec {
    pub a_f: DMatrix<f64>,
    pub e_des: DVector<f64>,
    pub a_c: DMatrix<f64>,
    pub t_c: DMatrix<f64>,
    pub gamma_c: Vec<f64>,
    /// Raw `[x; y; z]` target rows over `F`, used by magnitude maximization.
    pub t_f: DMatrix<f64>,
    /// Unit directions over `F`, used to seed magnitude maximization.
    pub target_directions: Vec<[f64; 3]>,
    factor: OnceLock<DMatrix<f64>>,
}

impl TargetSpec {
    /// Spec with identity off-target weights and no per-voxel target data.
    pub fn new(a_f: DMatrix<f64>, e_des: DVector<f64>, t_c: DMatrix<f64>) -> Result<Self> {
        let nc = t_c.nrows() / 3;
        Self::with_parts(
            a_f,
            e_des,
            t_c,
            vec![1.0; nc],
            DMatrix::zeros(0, 0),
            Vec::new(),
        )
    }

    pub fn with_parts(
        a_f: DMatrix<f64>,
        e_des: DVector<f64>,
        t_c: DMatrix<f64>,
        gamma_c: Vec<f64>,
        t_f: DMatrix<f64>,
        target_directions: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let n = a_f.ncols();
        if e_des.len() != a_f.nrows() {
            return Err(Error::dims("E_des length", a_f.nrows(), e_des.len()));
        }
        if t_c.ncols() != n {
            return Err(Error::dims("off-target columns", n, t_c.ncols()));
        }
        if t_c.nrows() % 3 != 0 {
            return Err(Error::Format(format!(
                "off-target row count {} is not a multiple of 3",
                t_c.nrows()
            )));
        }
        let nc = t_c.nrows() / 3;
        if gamma_c.len() != nc {
            return Err(Error::dims("gamma_c", nc, gamma_c.len()));
        }
        if t_f.nrows() > 0 {
            if t_f.ncols() != n {
                return Err(Error::dims("target columns", n, t_f.ncols()));
            }
            if t_f.nrows() != 3 * target_directions.len() {
                return Err(Error::dims("target rows", 3 * target_directions.len(), t_f.nrows()));
            }
        }
        let mut a_c = t_c.clone();
        for a in 0..3 {
            for (c, &g) in gamma_c.iter().enumerate() {
                let w = g.max(0.0).sqrt();
                a_c.row_mut(a * nc + c).scale_mut(w);
            }
        }
        Ok(Self {
            a_f,
            e_des,
            a_c,
            t_c,
            gamma_c,
            t_f,
            target_directions,
            factor: OnceLock::new(),
        })
    }

    /// Same geometry with a different desired-field vector.
    pub fn with_e_des(&self, e_des: DVector<f64>) -> Result<Self> {
        if e_des.len() != self.a_f.nrows() {
            return Err(Error::dims("E_des length", self.a_f.nrows(), e_des.len()));
        }
        let mut out = self.clone();
        out.e_des = e_des;
        Ok(out)
    }

    pub fn n_electrodes(&self) -> usize {
        self.a_f.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.a_f.nrows()
    }

    pub fn n_offtarget(&self) -> usize {
        self.gamma_c.len()
    }

    pub fn n_target(&self) -> usize {
        self.target_directions.len()
    }

    /// Square upper-triangular `R` with `|R I| = |A_c I|` for every `I`.
    pub fn energy_factor(&self) -> &DMatrix<f64> {
        self.factor.get_or_init(|| energy_factor(&self.a_c))
    }

    /// Weighted off-target energy `|A_c I|^2`.
    pub fn offtarget_energy(&self, currents: &[f64]) -> f64 {
        let r = self.energy_factor() * DVector::from_column_slice(currents);
        r.norm_squared()
    }

    /// `A_f I`.
    pub fn target_field(&self, currents: &[f64]) -> DVector<f64> {
        &self.a_f * DVector::from_column_slice(currents)
    }

    /// Sum of the rows of `A_f`, the aggregate intensity functional.
    pub fn aggregate_row(&self) -> DVector<f64> {
        let mut row = DVector::zeros(self.n_electrodes());
        for k in 0..self.n_constraints() {
            row += self.a_f.row(k).transpose();
        }
        row
    }
}

/// Reduces a tall matrix to a square factor with the same Gram matrix.
pub(crate) fn energy_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() >= n {
        let r = a.clone().qr().r();
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (r.nrows(), n)).copy_from(&r);
        out
    } else {
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        out
    }
}

/// Which per-electrode bound the program enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SafetyBound {
    /// `|I_j| <= I_safe`.
    #[default]
    Symmetric,
    /// `I_j <= I_safe` only.
    UpperOnly,
}

/// Current limits shared by every program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub i_safe: f64,
    pub i_tot: f64,
    /// Multiplier on `I_tot` in the l1 budget `|I|_1 <= l1_factor * I_tot`.
    pub l1_factor: f64,
    pub bound: SafetyBound,
}

impl ConstraintSet {
    pub fn new(i_safe: f64, i_tot_mul: f64) -> Self {
        Self::with_total(i_safe, i_tot_mul * i_safe)
    }

    pub fn with_total(i_safe: f64, i_tot: f64) -> Self {
        Self {
            i_safe,
            i_tot,
            l1_factor: 2.0,
            bound: SafetyBound::Symmetric,
        }
    }

    pub fn with_bound(mut self, bound: SafetyBound) -> Self {
        self.bound = bound;
        self
    }

    pub fn with_l1_factor(mut self, f: f64) -> Self {
        self.l1_factor = f;
        self
    }

    pub fn i_tot_mul(&self) -> f64 {
        self.i_tot / self.i_safe
    }

    pub fn l1_budget(&self) -> f64 {
        self.l1_factor * self.i_tot
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.i_safe > 0.0 && self.i_safe.is_finite()) {
            return Err(Error::InvalidParameter(format!("I_safe must be positive, got {}", self.i_safe)));
        }
        if !(self.i_tot > 0.0 && self.i_tot.is_finite()) {
            return Err(Error::InvalidParameter(format!("I_tot must be positive, got {}", self.i_tot)));
        }
        if !(self.l1_factor > 0.0 && self.l1_factor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "l1 factor must be positive, got {}",
                self.l1_factor
            )));
        }
        Ok(())
    }
}

/// Per-axis one-sided tolerance thresholds over the off-target set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceBands {
    pub etol_x_plus: Vec<f64>,
    pub etol_x_minus: Vec<f64>,
    pub etol_y_plus: Vec<f64>,
    pub etol_y_minus: Vec<f64>,
    pub etol_z_plus: Vec<f64>,
    pub etol_z_minus: Vec<f64>,
}

impl ToleranceBands {
    /// Symmetric bands from a per-axis scalar triplet.
    pub fn from_triplet(n_c: usize, tol: [f64; 3]) -> Self {
        Self {
            etol_x_plus: vec![tol[0]; n_c],
            etol_x_minus: vec![tol[0]; n_c],
            etol_y_plus: vec![tol[1]; n_c],
            etol_y_minus: vec![tol[1]; n_c],
            etol_z_plus: vec![tol[2]; n_c],
            etol_z_minus: vec![tol[2]; n_c],
        }
    }

    pub fn uniform(n_c: usize, tol: f64) -> Self {
        Self::from_triplet(n_c, [tol; 3])
    }

    pub fn len(&self) -> usize {
        self.etol_x_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.etol_x_plus.is_empty()
    }

    fn all(&self) -> [&Vec<f64>; 6] {
        [
            &self.etol_x_plus,
            &self.etol_x_minus,
            &self.etol_y_plus,
            &self.etol_y_minus,
            &self.etol_z_plus,
            &self.etol_z_minus,
        ]
    }

    /// Upper thresholds stacked in `[x; y; z]` order.
    pub fn stacked_plus(&self) -> Vec<f64> {
        [&self.etol_x_plus, &self.etol_y_plus, &self.etol_z_plus]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    /// Lower thresholds stacked in `[x; y; z]` order.
    pub fn stacked_minus(&self) -> Vec<f64> {
        [&self.etol_x_minus, &self.etol_y_minus, &self.etol_z_minus]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub(crate) fn validate(&self, n_c: usize) -> Result<()> {
        for v in self.all() {
            if v.len() != n_c {
                return Err(Error::dims("tolerance band length", n_c, v.len()));
            }
            if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidParameter("tolerance bands must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalError,
}

/// Dual certificate expressed against the current-space constraints.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Duals {
    /// Zero-sum equality multiplier.
    pub mu: f64,
    /// Target-row multipliers (equality or at-least constraints).
    pub beta: Vec<f64>,
    /// l1 budget multiplier.
    pub delta: f64,
    /// Upper bound multipliers `I_j <= I_safe`.
    pub nu: Vec<f64>,
    /// Lower bound multipliers `-I_j <= I_safe`.
    pub kappa: Vec<f64>,
    /// Off-target energy ball multiplier.
    pub lambda: Option<f64>,
}

/// Primal residuals per constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrimalResiduals {
    pub net_current: f64,
    pub linf_excess: f64,
    pub l1_excess: f64,
    pub target: Option<f64>,
    pub energy_excess: Option<f64>,
}

/// Summary of one program solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub program: String,
    pub status: SolveStatus,
    pub objective: f64,
    pub residuals: PrimalResiduals,
    pub duals: Option<Duals>,
    /// Solver-reported scaled primal and dual residuals.
    pub solver_residuals: [f64; 2],
    pub iterations: u32,
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}
