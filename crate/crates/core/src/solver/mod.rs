//! Receding-horizon optimization: the robust kernel controller, its
//! certainty-equivalence counterpart, and the linear baselines.

mod baselines;
pub mod cost;
pub mod qp;
pub mod robust;

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::Result;
use crate::predict::{KernelPredictorModel, KoopmanModel};
use crate::trajectory::{Dims, HankelPartition, InitialWindow};

pub use baselines::{deepc_solve, koopman_mpc_solve, DeepcConfig, DeepcData, KoopmanMpcData};
pub use cost::{project_box, BoxSet, CostSpec, CostWeights};
pub use robust::{
    equivalent_params, eval_cost_quad, eval_cost_socp, grad_u, kernel_mpc_solve, kkt_residual_socp,
    rokdeepc_solve, solve_g_closed_form, solve_g_constrained, worst_case_check, worst_case_verify,
    Diagnostics, EquivalentParams, GdConfig, KernelControlProblem, KernelMpcData,
    KernelProblemData, KktResidual, RhoPin, RobustConfig, SocpParams, SolveResult, WorstCaseReport,
    KERNEL_MPC_LAMBDA_G,
};

/// A controller solves one finite-horizon problem per cycle.
pub trait Controller: Send {
    fn name(&self) -> &str;

    fn dims(&self) -> Dims;

    fn solve(&mut self, window: &InitialWindow, reference: &DVector<f64>) -> Result<SolveResult>;

    /// Problem data of the robust kernel controller, for performance checks.
    fn kernel_problem(&self) -> Option<&KernelProblemData> {
        None
    }
}

/// Warm-start guess: the previous solution shifted by `k` samples and padded
/// with its last sample.
pub fn shift_solution(prev: &DVector<f64>, m: usize, k: usize) -> DVector<f64> {
    let len = prev.len();
    let drop = (k * m).min(len);
    let mut out = DVector::zeros(len);
    out.rows_mut(0, len - drop)
        .copy_from(&prev.rows(drop, len - drop));
    if len >= m {
        let last = prev.rows(len - m, m).into_owned();
        for t in (len - drop) / m..len / m {
            out.rows_mut(t * m, m).copy_from(&last);
        }
    }
    out
}

/// Optional box constraints on the stacked future inputs and outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constraints {
    pub u_box: Option<BoxSet>,
    pub y_box: Option<BoxSet>,
}

pub struct RokdeepcController {
    data: KernelProblemData,
    gd: GdConfig,
    constraints: Constraints,
    pin: RhoPin,
    /// `rho_2` for the output-constraint margin.
    rho2: f64,
    shift: usize,
    previous: Option<DVector<f64>>,
    name: String,
}

impl RokdeepcController {
    pub fn new(
        model: Arc<KernelPredictorModel>,
        weights: CostWeights,
        robust: &RobustConfig,
        gd: GdConfig,
    ) -> Result<Self> {
        robust.validate()?;
        gd.validate()?;
        let name = format!("rokdeepc_{}", model.kernel().spec().name());
        Ok(Self {
            data: KernelProblemData::new(model, weights, robust.lambda_k_prime, robust.lambda_g)?,
            gd,
            constraints: Constraints::default(),
            pin: robust.pin,
            rho2: robust.socp.map_or(0.0, |s| s.rho2),
            shift: 1,
            previous: None,
            name,
        })
    }

    pub fn with_constraints(mut self, constraints: Constraints) -> Self {
        self.constraints = constraints;
        self
    }

    /// Samples applied per cycle, used for the warm-start shift.
    pub fn with_shift(mut self, k: usize) -> Self {
        self.shift = k;
        self
    }

    pub fn data(&self) -> &KernelProblemData {
        &self.data
    }
}

impl Controller for RokdeepcController {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> Dims {
        self.data.model().kernel().dims()
    }

    fn solve(&mut self, window: &InitialWindow, reference: &DVector<f64>) -> Result<SolveResult> {
        let init = if self.gd.warm_start {
            self.previous
                .as_ref()
                .map(|u| shift_solution(u, self.dims().m, self.shift))
        } else {
            None
        };
        let mut problem = KernelControlProblem::new(&self.data, reference, window, &self.gd);
        problem.u_box = self.constraints.u_box.as_ref();
        problem.y_box = self.constraints.y_box.as_ref();
        problem.rho2 = self.rho2;
        problem.pin = self.pin;
        problem.u_init = init.as_ref();
        let result = rokdeepc_solve(&problem)?;
        self.previous = Some(result.u_star.clone());
        Ok(result)
    }

    fn kernel_problem(&self) -> Option<&KernelProblemData> {
        Some(&self.data)
    }
}

pub struct KernelMpcController {
    data: KernelMpcData,
    gd: GdConfig,
    u_box: Option<BoxSet>,
    shift: usize,
    previous: Option<DVector<f64>>,
    name: String,
}

impl KernelMpcController {
    pub fn new(
        model: Arc<KernelPredictorModel>,
        weights: CostWeights,
        gd: GdConfig,
    ) -> Result<Self> {
        gd.validate()?;
        let name = format!("kernel_mpc_{}", model.kernel().spec().name());
        Ok(Self {
            data: KernelMpcData::new(model, weights, KERNEL_MPC_LAMBDA_G)?,
            gd,
            u_box: None,
            shift: 1,
            previous: None,
            name,
        })
    }

    pub fn with_input_box(mut self, u_box: Option<BoxSet>) -> Self {
        self.u_box = u_box;
        self
    }
}

impl Controller for KernelMpcController {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> Dims {
        self.data.model().kernel().dims()
    }

    fn solve(&mut self, window: &InitialWindow, reference: &DVector<f64>) -> Result<SolveResult> {
        let init = if self.gd.warm_start {
            self.previous
                .as_ref()
                .map(|u| shift_solution(u, self.dims().m, self.shift))
        } else {
            None
        };
        let result = kernel_mpc_solve(
            &self.data,
            reference,
            window,
            &self.gd,
            self.u_box.as_ref(),
            init.as_ref(),
        )?;
        self.previous = Some(result.u_star.clone());
        Ok(result)
    }
}

pub struct DeepcController {
    data: DeepcData,
    constraints: Constraints,
}

impl DeepcController {
    pub fn new(
        partition: HankelPartition,
        weights: CostWeights,
        config: DeepcConfig,
    ) -> Result<Self> {
        Ok(Self {
            data: DeepcData::new(partition, weights, config)?,
            constraints: Constraints::default(),
        })
    }

    pub fn with_constraints(mut self, constraints: Constraints) -> Self {
        self.constraints = constraints;
        self
    }
}

impl Controller for DeepcController {
    fn name(&self) -> &str {
        "deepc"
    }

    fn dims(&self) -> Dims {
        self.data.dims()
    }

    fn solve(&mut self, window: &InitialWindow, reference: &DVector<f64>) -> Result<SolveResult> {
        deepc_solve(
            &self.data,
            reference,
            window,
            self.constraints.u_box.as_ref(),
            self.constraints.y_box.as_ref(),
        )
    }
}

pub struct KoopmanMpcController {
    data: KoopmanMpcData,
    u_box: Option<BoxSet>,
}

impl KoopmanMpcController {
    pub fn new(model: KoopmanModel, weights: CostWeights) -> Result<Self> {
        Ok(Self {
            data: KoopmanMpcData::new(model, weights)?,
            u_box: None,
        })
    }

    pub fn with_input_box(mut self, u_box: Option<BoxSet>) -> Self {
        self.u_box = u_box;
        self
    }
}

impl Controller for KoopmanMpcController {
    fn name(&self) -> &str {
        "koopman_mpc"
    }

    fn dims(&self) -> Dims {
        self.data.dims()
    }

    fn solve(&mut self, window: &InitialWindow, reference: &DVector<f64>) -> Result<SolveResult> {
        koopman_mpc_solve(&self.data, reference, window, self.u_box.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_pads_with_last_sample() {
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(
            shift_solution(&u, 2, 1),
            DVector::from_vec(vec![3.0, 4.0, 5.0, 6.0, 5.0, 6.0])
        );
        assert_eq!(shift_solution(&u, 1, 0), u);
        assert_eq!(
            shift_solution(&u, 3, 5),
            DVector::from_vec(vec![4.0, 5.0, 6.0, 4.0, 5.0, 6.0])
        );
    }
}
