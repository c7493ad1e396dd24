//! Montage-design programs over a shared constraint builder.
//!
//! Every program enforces `1^T I = 0`, `|I|_inf <= I_safe` (or the
//! one-sided variant) and `|I|_1 <= l1_factor * I_tot` with auxiliary
//! epigraph variables, and is solved as a conic program in currents scaled
//! by `I_safe`.

pub mod biconvex;
pub mod cdm;
pub mod conic;
pub mod hinge;
pub mod kkt;
pub mod l1l1;
pub mod lcmv;
mod shared;

pub use biconvex::{
    direction_row, magnitude_objective, solve_fixed_direction_cdm, solve_magmax_biconvex,
    solve_magmax_biconvex_from, solve_magmax_biconvex_multistart, BiconvexState, MultiStart,
};
pub use cdm::{
    compute_alpha_max_emax, solve_cdm, solve_cdm_with, solve_directional_max, solve_directional_max_with,
    DIRMAX_SLACK,
};
pub use conic::SolverOptions;
pub use hinge::{hinge_losses, hinge_objective, solve_hingeplace, solve_hingeplace_with, HingeParams};
pub use kkt::{kkt_residuals, KktObjective, KktProblem, KktResiduals, KktTarget};
pub use l1l1::{l1l1_objective, psi_eps, solve_l1l1, solve_l1l1_with, zeta, L1L1Params};
pub use lcmv::{solve_lcmv_e, solve_lcmv_e_with};

use crate::model::{Duals, Montage, PrimalResiduals, SolveReport};
use conic::ConicSolution;

pub(crate) struct Outcome {
    pub montage: Montage,
    pub report: SolveReport,
}

impl Outcome {
    pub fn into_pair(self) -> (Montage, SolveReport) {
        (self.montage, self.report)
    }
}

pub(crate) fn finish(
    name: &str,
    sol: ConicSolution,
    currents: Vec<f64>,
    objective: f64,
    residuals: PrimalResiduals,
    duals: Option<Duals>,
) -> Outcome {
    Outcome {
        montage: Montage::new(currents),
        report: SolveReport {
            program: name.to_string(),
            status: sol.status,
            objective,
            residuals,
            duals,
            solver_residuals: [sol.r_prim, sol.r_dual],
            iterations: sol.iterations,
            wall_time_s: sol.seconds,
        },
    }
}
