//! Robust kernelized DeePC in its quadratic form
//!
//! `c_q(u, g) = l(u) + |Y g - r|_Q^2 + lambda_g |g|^2 + lambda'_k |V g - k(u)|^2`
//!
//! with `V = K + gamma I`, solved by projected gradient in `u` and a closed-form
//! (or QP) step in `g`, together with the second-order-cone form
//!
//! `c(u, g) = l(u) + |Y g - r|_Q + lambda_k rho_1 sqrt(|g|^2 + 1) + rho_2 |g| + lambda_k |V g - k(u)|`
//!
//! used for diagnostics: parameter equivalence, stationarity and worst-case checks.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::cost::{project_box, BoxSet, CostWeights};
use super::qp::solve_qp;
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::predict::KernelPredictorModel;
use crate::rng::GaussianStream;
use crate::trajectory::InitialWindow;

/// Which of `rho_1`, `rho_2` is held fixed when recovering the other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoPin {
    Rho1(f64),
    Rho2(f64),
}

impl Default for RhoPin {
    fn default() -> Self {
        RhoPin::Rho2(0.0)
    }
}

/// Parameters of the second-order-cone form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocpParams {
    pub lambda_k: f64,
    pub rho1: f64,
    pub rho2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustConfig {
    pub lambda_k_prime: f64,
    pub lambda_g: f64,
    pub gamma: f64,
    /// Used for the output-constraint margin and for direct cone-form evaluation.
    #[serde(default)]
    pub socp: Option<SocpParams>,
    #[serde(default)]
    pub pin: RhoPin,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            lambda_k_prime: 1e8,
            lambda_g: 1.0,
            gamma: 1e-2,
            socp: None,
            pin: RhoPin::default(),
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_k_prime", self.lambda_k_prime),
            ("lambda_g", self.lambda_g),
            ("gamma", self.gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if let Some(s) = self.socp {
            if !(s.lambda_k >= 0.0 && s.rho1 >= 0.0 && s.rho2 >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "cone-form parameters must be nonnegative, got {s:?}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdConfig {
    pub alpha: f64,
    pub i_max: usize,
    pub xi: f64,
    #[serde(default)]
    pub warm_start: bool,
    #[serde(default = "yes")]
    pub backtracking: bool,
}

fn yes() -> bool {
    true
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            i_max: 200,
            xi: 1e-6,
            warm_start: false,
            backtracking: true,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.xi > 0.0) || self.i_max == 0 {
            return Err(Error::InvalidArgument(format!(
                "need alpha > 0, xi > 0, i_max >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalentParams {
    pub lambda_k: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// The free rho came out negative or undefined.
    pub degenerate: bool,
    /// `Y g = r` up to the branch threshold.
    pub tracking_exact: bool,
}

impl EquivalentParams {
    pub fn socp(&self) -> SocpParams {
        SocpParams {
            lambda_k: self.lambda_k,
            rho1: self.rho1,
            rho2: self.rho2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub params: EquivalentParams,
    pub kkt_residual: f64,
    /// `1 +` the norms of the stationarity terms.
    pub kkt_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub u_star: DVector<f64>,
    pub g_star: DVector<f64>,
    /// Predicted outputs for `u_star`.
    pub y_pred: DVector<f64>,
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub diagnostics: Option<Diagnostics>,
}

impl SolveResult {
    pub fn final_cost(&self) -> f64 {
        self.cost_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Threshold on `|Y g - r|_Q` below which the exact-tracking branch is used.
pub const BRANCH_TOL: f64 = 1e-12;

/// Kernel predictor plus the cached closed-form `g` step.
#[derive(Debug, Clone)]
pub struct KernelProblemData {
    model: Arc<KernelPredictorModel>,
    weights: CostWeights,
    lambda_k_prime: f64,
    lambda_g: f64,
    hn_chol: Cholesky<f64, Dyn>,
    m_r: DMatrix<f64>,
    m_k: DMatrix<f64>,
}

impl KernelProblemData {
    pub fn new(
        model: Arc<KernelPredictorModel>,
        weights: CostWeights,
        lambda_k_prime: f64,
        lambda_g: f64,
    ) -> Result<Self> {
        weights.validate()?;
        if !(lambda_g > 0.0) || !(lambda_k_prime >= 0.0) {
            return Err(Error::InvalidArgument(
                "need lambda_g > 0 and lambda'_k >= 0".into(),
            ));
        }
        let y = model.y_f();
        let v = model.v();
        let h = v.nrows();
        let mut hn = y.transpose() * y * weights.q_y + v * v * lambda_k_prime;
        for i in 0..h {
            hn[(i, i)] += lambda_g;
        }
        linalg::symmetrize(&mut hn);
        let hn_chol = Cholesky::new(hn).ok_or_else(|| {
            Error::Factorization("normal matrix of the g-step is not positive definite".into())
        })?;
        let m_r = hn_chol.solve(&(y.transpose() * weights.q_y));
        let m_k = hn_chol.solve(&(v * lambda_k_prime));
        Ok(Self {
            model,
            weights,
            lambda_k_prime,
            lambda_g,
            hn_chol,
            m_r,
            m_k,
        })
    }

    pub fn model(&self) -> &KernelPredictorModel {
        &self.model
    }

    pub fn weights(&self) -> CostWeights {
        self.weights
    }

    pub fn lambda_k_prime(&self) -> f64 {
        self.lambda_k_prime
    }

    pub fn lambda_g(&self) -> f64 {
        self.lambda_g
    }

    pub fn m_r(&self) -> &DMatrix<f64> {
        &self.m_r
    }

    pub fn m_k(&self) -> &DMatrix<f64> {
        &self.m_k
    }

    fn m(&self) -> usize {
        self.model.kernel().dims().m
    }

    /// `g* = M_r r + M_k k`.
    pub fn g_closed_form(&self, r: &DVector<f64>, k: &DVector<f64>) -> DVector<f64> {
        &self.m_r * r + &self.m_k * k
    }

    /// The same minimizer from a triangular solve plus two refinement steps
    /// on the stationarity residual. Slower than [`Self::g_closed_form`] but
    /// far more accurate when `lambda_k'` is large.
    pub fn g_refined(&self, r: &DVector<f64>, k: &DVector<f64>) -> DVector<f64> {
        let y = self.model.y_f();
        let v = self.model.v();
        let q = self.weights.q_y;
        let rhs = y.transpose() * r * q + v * k * self.lambda_k_prime;
        let mut g = self.hn_chol.solve(&rhs);
        for _ in 0..2 {
            let mut f = y.transpose() * (y * &g - r) * q + &g * self.lambda_g;
            f.gemv(self.lambda_k_prime, v, &(v * &g - k), 1.0);
            g -= self.hn_chol.solve(&f);
        }
        g
    }
}

fn check_reference(data: &KernelProblemData, r: &DVector<f64>) -> Result<()> {
    check_len("reference", data.model.kernel().dims().y_len(), r.len())
}

/// Quadratic-form cost.
pub fn eval_cost_quad(
    data: &KernelProblemData,
    r: &DVector<f64>,
    window: &InitialWindow,
    u: &DVector<f64>,
    g: &DVector<f64>,
) -> Result<f64> {
    check_reference(data, r)?;
    check_len("g", data.model.columns(), g.len())?;
    let k = data.model.kernel_vector(window, u)?;
    Ok(quad_cost_parts(data, r, u, g, &k).0)
}

/// Returns the cost and `V g - k`.
fn quad_cost_parts(
    data: &KernelProblemData,
    r: &DVector<f64>,
    u: &DVector<f64>,
    g: &DVector<f64>,
    k: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let w = data.weights;
    let e = data.model.y_f() * g - r;
    let res = data.model.v() * g - k;
    let c = w.input_cost(u, data.m())
        + w.q_y * e.norm_squared()
        + data.lambda_g * g.norm_squared()
        + data.lambda_k_prime * res.norm_squared();
    (c, res)
}

/// Cone-form cost.
pub fn eval_cost_socp(
    data: &KernelProblemData,
    r: &DVector<f64>,
    window: &InitialWindow,
    u: &DVector<f64>,
    g: &DVector<f64>,
    params: &SocpParams,
) -> Result<f64> {
    check_reference(data, r)?;
    check_len("g", data.model.columns(), g.len())?;
    let w = data.weights;
    let k = data.model.kernel_vector(window, u)?;
    let e = data.model.y_f() * g - r;
    let res = data.model.v() * g - k;
    let gn = g.norm();
    Ok(w.input_cost(u, data.m())
        + w.q_norm(&e)
        + params.lambda_k * params.rho1 * (gn * gn + 1.0).sqrt()
        + params.rho2 * gn
        + params.lambda_k * res.norm())
}

/// Unconstrained minimizer of `c_q(u, .)`.
pub fn solve_g_closed_form(
    data: &KernelProblemData,
    r: &DVector<f64>,
    window: &InitialWindow,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_reference(data, r)?;
    let k = data.model.kernel_vector(window, u)?;
    Ok(data.g_closed_form(r, &k))
}

/// Minimizer of `c_q(u, .)` over the polyhedral inner approximation
/// `lower + margin <= Y g <= upper - margin`, `margin = rho_2 B_g / sqrt(q_y)`,
/// which keeps `(Y + D) g` in the box for every `|Q^1/2 D|_F <= rho_2` as long
/// as `|g| <= B_g`.
pub fn solve_g_constrained(
    data: &KernelProblemData,
    r: &DVector<f64>,
    k: &DVector<f64>,
    y_box: &BoxSet,
    rho2: f64,
    b_g: f64,
) -> Result<DVector<f64>> {
    let y = data.model.y_f();
    check_len("output box", y.nrows(), y_box.len())?;
    let margin = rho2 * b_g / data.weights.q_y.sqrt();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..y.nrows() {
        let (lo, hi) = (y_box.lower()[i] + margin, y_box.upper()[i] - margin);
        if lo > hi {
            return Err(Error::Infeasible(format!(
                "robust output set is empty: margin {margin:.3e} closes the bounds of output {i}"
            )));
        }
        if hi.is_finite() {
            rows.push(y.row(i).into_owned());
            rhs.push(hi);
        }
        if lo.is_finite() {
            rows.push(-y.row(i).into_owned());
            rhs.push(-lo);
        }
    }
    let b = y.transpose() * r * data.weights.q_y + data.model.v() * k * data.lambda_k_prime;
    if rows.is_empty() {
        return Ok(data.hn_chol.solve(&b));
    }
    let g_mat = DMatrix::from_rows(&rows);
    let h_vec = DVector::from_vec(rhs);
    let h = data.model.columns();
    solve_qp(
        &data.hn_chol,
        &b,
        &DMatrix::zeros(0, h),
        &DVector::zeros(0),
        &g_mat,
        &h_vec,
    )
}

/// Gradient in `u` of `c_q` at fixed `g`.
pub fn grad_u(
    data: &KernelProblemData,
    r: &DVector<f64>,
    window: &InitialWindow,
    u: &DVector<f64>,
    g: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_reference(data, r)?;
    check_len("g", data.model.columns(), g.len())?;
    let k = data.model.kernel_vector(window, u)?;
    let res = data.model.v() * g - k;
    let jac = data.model.jacobian_u(window, u)?;
    Ok(grad_from_parts(data, u, &res, &jac))
}

fn grad_from_parts(
    data: &KernelProblemData,
    u: &DVector<f64>,
    res: &DVector<f64>,
    jac: &DMatrix<f64>,
) -> DVector<f64> {
    let mut grad = data.weights.input_cost_grad(u, data.m());
    grad.gemv_tr(-2.0 * data.lambda_k_prime, jac, res, 1.0);
    grad
}

/// A trial point of the descent loop.
pub(crate) struct Point {
    pub u: DVector<f64>,
    pub cost: f64,
    pub grad: DVector<f64>,
    pub g: DVector<f64>,
}

/// Monotone projected gradient: each trial step starts from a Barzilai-Borwein
/// estimate (capped at `alpha`) and is halved until the Armijo condition
/// holds. Stops when the cost changes by less than `xi` or after `i_max`
/// iterations. Without backtracking the fixed step `alpha` is used.
pub(crate) fn descend<F>(
    mut eval: F,
    u0: DVector<f64>,
    gd: &GdConfig,
    u_box: Option<&BoxSet>,
) -> Result<(Point, Vec<f64>, usize)>
where
    F: FnMut(&DVector<f64>) -> Result<Point>,
{
    let project = |u: DVector<f64>| -> Result<DVector<f64>> {
        match u_box {
            Some(b) => project_box(&u, b),
            None => Ok(u),
        }
    };
    let mut cur = eval(&project(u0)?)?;
    if !cur.cost.is_finite() {
        return Err(Error::Solver("non-finite cost at the initial point".into()));
    }
    let mut trace = vec![cur.cost];
    let mut bb: Option<f64> = None;
    let mut iterations = 0;
    for i in 1..=gd.i_max {
        let next = if gd.backtracking {
            let mut step = bb.map_or(gd.alpha, |s| s.min(gd.alpha));
            let mut accepted = None;
            while step > 1e-20 {
                let u_new = project(&cur.u - &cur.grad * step)?;
                let d = &u_new - &cur.u;
                if d.norm() == 0.0 {
                    break;
                }
                let cand = eval(&u_new)?;
                if cand.cost.is_finite() && cand.cost <= cur.cost + 1e-4 * cur.grad.dot(&d) {
                    accepted = Some(cand);
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some(p) => p,
                None => break,
            }
        } else {
            let cand = eval(&project(&cur.u - &cur.grad * gd.alpha)?)?;
            if !cand.cost.is_finite() {
                return Err(Error::Solver(format!(
                    "cost became non-finite at iteration {i}; reduce the step size alpha={}",
                    gd.alpha
                )));
            }
            cand
        };
        let s = &next.u - &cur.u;
        let y = &next.grad - &cur.grad;
        let sy = s.dot(&y);
        bb = (sy > 0.0).then(|| s.norm_squared() / sy);
        let delta = (cur.cost - next.cost).abs();
        cur = next;
        trace.push(cur.cost);
        iterations = i;
        if delta < gd.xi {
            break;
        }
    }
    Ok((cur, trace, iterations))
}

/// One receding-horizon problem instance.
#[derive(Debug, Clone, Copy)]
pub struct KernelControlProblem<'a> {
    pub data: &'a KernelProblemData,
    pub reference: &'a DVector<f64>,
    pub window: &'a InitialWindow,
    pub gd: &'a GdConfig,
    pub u_box: Option<&'a BoxSet>,
    pub y_box: Option<&'a BoxSet>,
    /// Used only for the output-constraint margin.
    pub rho2: f64,
    pub u_init: Option<&'a DVector<f64>>,
    pub pin: RhoPin,
    pub diagnostics: bool,
}

impl<'a> KernelControlProblem<'a> {
    pub fn new(
        data: &'a KernelProblemData,
        reference: &'a DVector<f64>,
        window: &'a InitialWindow,
        gd: &'a GdConfig,
    ) -> Self {
        Self {
            data,
            reference,
            window,
            gd,
            u_box: None,
            y_box: None,
            rho2: 0.0,
            u_init: None,
            pin: RhoPin::default(),
            diagnostics: true,
        }
    }
}

/// Block-coordinate solve of `min_u min_g c_q(u, g)`: a projected gradient
/// step in `u` followed by the exact `g` step. `u` starts at zero (or the
/// warm start) and `g` at the exact minimizer for that `u`.
pub fn rokdeepc_solve(problem: &KernelControlProblem) -> Result<SolveResult> {
    let data = problem.data;
    let dims = data.model.kernel().dims();
    let r = problem.reference;
    check_reference(data, r)?;
    problem.window.check(&dims)?;
    problem.gd.validate()?;
    if let Some(b) = problem.u_box {
        check_len("input box", dims.u_len(), b.len())?;
    }
    let mut b_g: Option<f64> = None;
    let mut eval = |u: &DVector<f64>| -> Result<Point> {
        let k = data.model.kernel_vector(problem.window, u)?;
        let g = match problem.y_box {
            None => data.g_closed_form(r, &k),
            Some(y_box) => {
                let bound = *b_g.get_or_insert_with(|| 2.0 * data.g_closed_form(r, &k).norm());
                solve_g_constrained(data, r, &k, y_box, problem.rho2, bound)?
            }
        };
        let (cost, res) = quad_cost_parts(data, r, u, &g, &k);
        let jac = data.model.jacobian_u(problem.window, u)?;
        let grad = grad_from_parts(data, u, &res, &jac);
        Ok(Point {
            u: u.clone(),
            cost,
            grad,
            g,
        })
    };
    let u0 = problem
        .u_init
        .cloned()
        .unwrap_or_else(|| DVector::zeros(dims.u_len()));
    check_len("initial input", dims.u_len(), u0.len())?;
    let (mut best, trace, iterations) = descend(&mut eval, u0, problem.gd, problem.u_box)?;
    if problem.y_box.is_none() {
        let k = data.model.kernel_vector(problem.window, &best.u)?;
        best.g = data.g_refined(r, &k);
    }
    let y_pred = data.model.y_f() * &best.g;
    let diagnostics = if problem.diagnostics && problem.y_box.is_none() {
        let params = equivalent_params(data, r, problem.window, &best.u, &best.g, problem.pin)?;
        let kkt = kkt_residual_socp(
            data,
            r,
            problem.window,
            &best.u,
            &best.g,
            &params.socp(),
            None,
        )?;
        Some(Diagnostics {
            params,
            kkt_residual: kkt.residual,
            kkt_scale: kkt.scale,
        })
    } else {
        None
    };
    Ok(SolveResult {
        u_star: best.u,
        g_star: best.g,
        y_pred,
        cost_trace: trace,
        iterations,
        diagnostics,
    })
}

/// Cone-form parameters for which `g` (a minimizer of `c_q(u, .)`) is also
/// stationary for `c(u, .)`.
pub fn equivalent_params(
    data: &KernelProblemData,
    r: &DVector<f64>,
    window: &InitialWindow,
    u: &DVector<f64>,
    g: &DVector<f64>,
    pin: RhoPin,
) -> Result<EquivalentParams> {
    check_reference(data, r)?;
    check_len("g", data.model.columns(), g.len())?;
    let k = data.model.kernel_vector(window, u)?;
    let res_norm = (data.model.v() * g - k).norm();
    let e_q = data.weights.q_norm(&(data.model.y_f() * g - r));
    let tracking_exact = e_q <= BRANCH_TOL;
    let denom = if tracking_exact { 1.0 } else { e_q };
    let lambda_k = data.lambda_k_prime * res_norm / denom;
    let gn = g.norm();
    let rhs = data.lambda_g * gn / denom;
    let shrink = gn / (gn * gn + 1.0).sqrt();
    let (rho1, rho2, degenerate) = match pin {
        RhoPin::Rho1(rho1) => {
            let rho2 = rhs - lambda_k * rho1 * shrink;
            (rho1, rho2, !(rho2 >= 0.0))
        }
        RhoPin::Rho2(rho2) => {
            let coef = lambda_k * shrink;
            if coef > 0.0 {
                let rho1 = (rhs - rho2) / coef;
                (rho1, rho2, !(rho1 >= 0.0))
            } else {
                (f64::NAN, rho2, true)
            }
        }
    };
    Ok(EquivalentParams {
        lambda_k,
        rho1,
        rho2,
        degenerate,
        tracking_exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub residual: f64,
    pub scale: f64,
}

impl KktResidual {
    pub fn relative(&self) -> f64 {
        self.residual / self.scale
    }
}

/// Norm of the stationarity residual of `c(u, .)` at `g` with the standard
/// subgradient selections (zero at the kinks). `constraint_term` adds
/// `G^T mu` when output constraints are active.
pub fn kkt_residual_socp(
    data: &KernelProblemData,
    r: &DVector<f64>,
    window: &InitialWindow,
    u: &DVector<f64>,
    g: &DVector<f64>,
    params: &SocpParams,
    constraint_term: Option<&DVector<f64>>,
) -> Result<KktResidual> {
    check_reference(data, r)?;
    check_len("g", data.model.columns(), g.len())?;
    let y = data.model.y_f();
    let v = data.model.v();
    let k = data.model.kernel_vector(window, u)?;
    let e = y * g - r;
    let e_q = data.weights.q_norm(&e);
    let y_term = if e_q > BRANCH_TOL {
        y.transpose() * &e * (data.weights.q_y / e_q)
    } else {
        DVector::zeros(g.len())
    };
    let gn = g.norm();
    let ridge = g * (params.lambda_k * params.rho1 / (gn * gn + 1.0).sqrt());
    let w = if gn > 0.0 {
        g * (params.rho2 / gn)
    } else {
        DVector::zeros(g.len())
    };
    let res = v * g - k;
    let rn = res.norm();
    let z = if rn > 0.0 {
        v.transpose() * &res * (params.lambda_k / rn)
    } else {
        DVector::zeros(g.len())
    };
    let mut total = &y_term + &ridge + &w + &z;
    let mut scale = 1.0 + y_term.norm() + ridge.norm() + w.norm() + z.norm();
    if let Some(c) = constraint_term {
        check_len("constraint term", g.len(), c.len())?;
        total += c;
        scale += c.norm();
    }
    Ok(KktResidual {
        residual: total.norm(),
        scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseReport {
    /// `|V g - k| + rho_1 sqrt(|g|^2 + 1)`
    pub sup_k: f64,
    pub max_sampled_k: f64,
    pub attained_k: f64,
    /// `|Y g - r|_Q + rho_2 |g|`
    pub sup_y: f64,
    pub max_sampled_y: f64,
    pub attained_y: f64,
    pub samples: usize,
}

impl WorstCaseReport {
    /// Smallest `sup - sampled` over both perturbation families.
    pub fn min_slack(&self) -> f64 {
        (self.sup_k - self.max_sampled_k).min(self.sup_y - self.max_sampled_y)
    }

    /// Largest `|sup - attained|`.
    pub fn attainment_gap(&self) -> f64 {
        (self.sup_k - self.attained_k)
            .abs()
            .max((self.sup_y - self.attained_y).abs())
    }
}

/// Check the worst-case identities for the Frobenius-ball perturbations of
/// `[V k]` (radius `rho_1`) and of `Y` (radius `rho_2` in `|Q^1/2 D|_F`) by
/// random sampling and by the rank-one maximizer.
#[allow(clippy::too_many_arguments)]
pub fn worst_case_verify(
    data: &KernelProblemData,
    r: &DVector<f64>,
    window: &InitialWindow,
    u: &DVector<f64>,
    g: &DVector<f64>,
    rho1: f64,
    rho2: f64,
    n_samples: usize,
    seed: u64,
) -> Result<WorstCaseReport> {
    check_reference(data, r)?;
    let k = data.model.kernel_vector(window, u)?;
    worst_case_check(
        data.model.v(),
        &k,
        data.model.y_f(),
        r,
        data.weights.q_y,
        g,
        rho1,
        rho2,
        n_samples,
        seed,
    )
}

/// [`worst_case_verify`] on raw matrices.
#[allow(clippy::too_many_arguments)]
pub fn worst_case_check(
    v: &DMatrix<f64>,
    k: &DVector<f64>,
    y: &DMatrix<f64>,
    r: &DVector<f64>,
    q_y: f64,
    g: &DVector<f64>,
    rho1: f64,
    rho2: f64,
    n_samples: usize,
    seed: u64,
) -> Result<WorstCaseReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument(
            "worst-case check needs at least one sample".into(),
        ));
    }
    let h = g.len();
    check_len("V columns", h, v.ncols())?;
    check_len("k", v.nrows(), k.len())?;
    check_len("Y columns", h, y.ncols())?;
    check_len("reference", y.nrows(), r.len())?;
    let sq = q_y.sqrt();
    let res = v * g - k;
    let e = y * g - r;
    let gn = g.norm();
    let ext = (gn * gn + 1.0).sqrt();
    let mut g_ext = DVector::zeros(h + 1);
    g_ext.rows_mut(0, h).copy_from(g);
    g_ext[h] = -1.0;

    let sup_k = res.norm() + rho1 * ext;
    let sup_y = sq * e.norm() + rho2 * gn;

    let mut rng = GaussianStream::standard(seed);
    let mut max_k = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        // random direction, random radius in [0, rho]
        let dk = DMatrix::from_fn(v.nrows(), h + 1, |_, _| rng.sample());
        let scale_k = rho1 * rng.uniform(0.0, 1.0).sqrt() / dk.norm().max(f64::MIN_POSITIVE);
        let pert = &res + (&dk * scale_k) * &g_ext;
        max_k = max_k.max(pert.norm());

        let dy = DMatrix::from_fn(y.nrows(), h, |_, _| rng.sample());
        // |Q^1/2 D|_F = sqrt(q_y) |D|_F
        let scale_y = rho2 * rng.uniform(0.0, 1.0).sqrt() / (sq * dy.norm()).max(f64::MIN_POSITIVE);
        let pert_y = &e + (&dy * scale_y) * g;
        max_y = max_y.max(sq * pert_y.norm());
    }

    let omega_k = unit_or_first(&res);
    let delta_k = &omega_k * g_ext.transpose() * (rho1 / ext);
    let attained_k = (&res + delta_k * &g_ext).norm();

    let omega_y = unit_or_first(&e);
    let attained_y = if gn > 0.0 {
        let delta_y = &omega_y * g.transpose() * (rho2 / (gn * sq));
        sq * (&e + delta_y * g).norm()
    } else {
        sq * e.norm()
    };

    Ok(WorstCaseReport {
        sup_k,
        max_sampled_k: max_k,
        attained_k,
        sup_y,
        max_sampled_y: max_y,
        attained_y,
        samples: n_samples,
    })
}

fn unit_or_first(v: &DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        let mut e = DVector::zeros(v.len());
        if !e.is_empty() {
            e[0] = 1.0;
        }
        e
    }
}

/// Certainty-equivalence kernel MPC: `g = V^-1 k(u)` exactly, cost
/// `l(u) + |W k(u) - r|_Q^2 + lambda_g |V^-1 k(u)|^2`, with no robustifying term.
#[derive(Debug, Clone)]
pub struct KernelMpcData {
    model: Arc<KernelPredictorModel>,
    weights: CostWeights,
    lambda_g: f64,
    /// `V^-2`
    v_inv_sq: DMatrix<f64>,
}

/// `lambda_g` of the certainty-equivalence baseline (conditioning only).
pub const KERNEL_MPC_LAMBDA_G: f64 = 1e-9;

impl KernelMpcData {
    pub fn new(
        model: Arc<KernelPredictorModel>,
        weights: CostWeights,
        lambda_g: f64,
    ) -> Result<Self> {
        weights.validate()?;
        let h = model.columns();
        let v_inv = model.factor().solve(&DMatrix::identity(h, h));
        let mut v_inv_sq = &v_inv * &v_inv;
        linalg::symmetrize(&mut v_inv_sq);
        Ok(Self {
            model,
            weights,
            lambda_g,
            v_inv_sq,
        })
    }

    pub fn model(&self) -> &KernelPredictorModel {
        &self.model
    }
}

pub fn kernel_mpc_solve(
    data: &KernelMpcData,
    reference: &DVector<f64>,
    window: &InitialWindow,
    gd: &GdConfig,
    u_box: Option<&BoxSet>,
    u_init: Option<&DVector<f64>>,
) -> Result<SolveResult> {
    let dims = data.model.kernel().dims();
    check_len("reference", dims.y_len(), reference.len())?;
    window.check(&dims)?;
    gd.validate()?;
    let wts = data.weights;
    let w = data.model.w();
    let eval = |u: &DVector<f64>| -> Result<Point> {
        let k = data.model.kernel_vector(window, u)?;
        let e = w * &k - reference;
        let p = &data.v_inv_sq * &k;
        let cost =
            wts.input_cost(u, dims.m) + wts.q_y * e.norm_squared() + data.lambda_g * k.dot(&p);
        let jac = data.model.jacobian_u(window, u)?;
        // d/dk of the output and ridge terms
        let dk = w.transpose() * e * (2.0 * wts.q_y) + p * (2.0 * data.lambda_g);
        let mut grad = wts.input_cost_grad(u, dims.m);
        grad.gemv_tr(1.0, &jac, &dk, 1.0);
        Ok(Point {
            u: u.clone(),
            cost,
            grad,
            g: k,
        })
    };
    let u0 = u_init
        .cloned()
        .unwrap_or_else(|| DVector::zeros(dims.u_len()));
    check_len("initial input", dims.u_len(), u0.len())?;
    let (best, trace, iterations) = descend(eval, u0, gd, u_box)?;
    let k = best.g;
    Ok(SolveResult {
        y_pred: w * &k,
        g_star: data.model.factor().solve(&k),
        u_star: best.u,
        cost_trace: trace,
        iterations,
        diagnostics: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::plant::{collect_data, ExcitationSignal, NoiseModel, PolynomialSisoPlant};
    use crate::predict::fit_kernel;
    use crate::trajectory::partition;

    const GAUSS: KernelSpec = KernelSpec::Gaussian { two_sigma_sq: 0.4 };

    fn setup(
        t: usize,
        n: usize,
        spec: KernelSpec,
        lkp: f64,
        lg: f64,
        seed: u64,
    ) -> (KernelProblemData, InitialWindow, DVector<f64>) {
        let mut plant = PolynomialSisoPlant::default();
        let (_, data) = collect_data(
            &mut plant,
            &ExcitationSignal::white(0.0, 0.01, seed),
            t + 3,
            &NoiseModel::none(),
        )
        .unwrap();
        let part = partition(&data, 1, n).unwrap();
        let dims = part.dims;
        let model = fit_kernel(&part, spec, 0.01).unwrap();
        let window = InitialWindow::from_trajectory(&data, t + 1, &dims).unwrap();
        let r = DVector::from_fn(dims.y_len(), |i, _| 0.05 + 0.01 * i as f64);
        (
            KernelProblemData::new(Arc::new(model), CostWeights::default(), lkp, lg).unwrap(),
            window,
            r,
        )
    }

    #[test]
    fn closed_form_solves_the_normal_equations() {
        let (data, window, r) = setup(40, 3, GAUSS, 10.0, 0.5, 1);
        let u = DVector::from_vec(vec![0.02, -0.01, 0.03]);
        let k = data.model().kernel_vector(&window, &u).unwrap();
        // independent oracle: LU on the assembled system
        let (y, v) = (data.model().y_f(), data.model().v());
        let w = data.weights();
        let h = y.transpose() * y * w.q_y
            + v.transpose() * v * 10.0
            + DMatrix::identity(v.nrows(), v.nrows()) * 0.5;
        let b = y.transpose() * &r * w.q_y + v.transpose() * &k * 10.0;
        let oracle = h.lu().solve(&b).unwrap();
        let g = solve_g_closed_form(&data, &r, &window, &u).unwrap();
        assert!((&g - &oracle).norm() <= 1e-9 * oracle.norm());
        assert!((data.g_refined(&r, &k) - &oracle).norm() <= 1e-9 * oracle.norm());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (data, window, r) = setup(40, 3, KernelSpec::Exponential { scale: 0.2 }, 1e3, 1.0, 2);
        let u = DVector::from_vec(vec![0.05, 0.01, -0.02]);
        let g = solve_g_closed_form(&data, &r, &window, &DVector::zeros(3)).unwrap();
        let an = grad_u(&data, &r, &window, &u, &g).unwrap();
        for j in 0..3 {
            let h = 1e-6;
            let mut up = u.clone();
            up[j] += h;
            let mut dn = u.clone();
            dn[j] -= h;
            let fd = (eval_cost_quad(&data, &r, &window, &up, &g).unwrap()
                - eval_cost_quad(&data, &r, &window, &dn, &g).unwrap())
                / (2.0 * h);
            assert!(
                (fd - an[j]).abs() <= 1e-6 * an.norm(),
                "component {j}: {fd} vs {}",
                an[j]
            );
        }
    }

    #[test]
    fn solve_is_monotone_and_stationary_in_g() {
        let (data, window, r) = setup(60, 4, GAUSS, 1e8, 1.0, 3);
        let gd = GdConfig {
            alpha: 1e-3,
            ..GdConfig::default()
        };
        let sol = rokdeepc_solve(&KernelControlProblem::new(&data, &r, &window, &gd)).unwrap();
        assert!(sol.cost_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(sol.iterations <= gd.i_max);
        let d = sol.diagnostics.unwrap();
        assert!(d.kkt_residual / d.kkt_scale < 1e-6);
        assert!(!d.params.degenerate);
        assert_eq!(d.params.rho2, 0.0);
        assert!(d.params.rho1 >= 0.0);
        // the cone-form cost at g* cannot be beaten by a nearby g
        let params = d.params.socp();
        let c0 = eval_cost_socp(&data, &r, &window, &sol.u_star, &sol.g_star, &params).unwrap();
        let mut gen = crate::rng::GaussianStream::standard(9);
        for _ in 0..20 {
            let dg = DVector::from_fn(sol.g_star.len(), |_, _| 1e-4 * gen.sample());
            let c1 = eval_cost_socp(
                &data,
                &r,
                &window,
                &sol.u_star,
                &(&sol.g_star + dg),
                &params,
            )
            .unwrap();
            assert!(c1 >= c0 - 1e-9 * c0.abs());
        }
    }

    #[test]
    fn input_box_is_respected() {
        let (data, window, r) = setup(50, 3, GAUSS, 1e4, 1.0, 4);
        let r = r * 20.0;
        let gd = GdConfig::default();
        let bx = BoxSet::uniform(3, -0.01, 0.01).unwrap();
        let mut p = KernelControlProblem::new(&data, &r, &window, &gd);
        p.u_box = Some(&bx);
        let sol = rokdeepc_solve(&p).unwrap();
        assert!(bx.contains(&sol.u_star, 0.0));
        assert!(sol.u_star.iter().any(|&v| (v - 0.01).abs() < 1e-12));
    }

    #[test]
    fn lambda_k_grows_with_lambda_k_prime_at_fixed_u() {
        let u = DVector::from_vec(vec![0.03, 0.0, -0.01]);
        let mut prev = 0.0;
        for lkp in [1e2, 1e4, 1e6, 1e8] {
            let (data, window, r) = setup(50, 3, GAUSS, lkp, 1.0, 5);
            let k = data.model().kernel_vector(&window, &u).unwrap();
            let g = data.g_refined(&r, &k);
            let p = equivalent_params(&data, &r, &window, &u, &g, RhoPin::default()).unwrap();
            assert!(p.lambda_k > prev, "{lkp}: {} <= {prev}", p.lambda_k);
            prev = p.lambda_k;
        }
    }

    #[test]
    fn pinned_rho1_branch() {
        let (data, window, r) = setup(50, 3, GAUSS, 1e4, 1.0, 6);
        let u = DVector::zeros(3);
        let g = solve_g_closed_form(&data, &r, &window, &u).unwrap();
        let p = equivalent_params(&data, &r, &window, &u, &g, RhoPin::Rho1(0.0)).unwrap();
        assert_eq!(p.rho1, 0.0);
        let e_q = data.weights().q_norm(&(data.model().y_f() * &g - &r));
        assert!((p.rho2 - g.norm() / e_q).abs() <= 1e-12 * p.rho2);
        let kkt = kkt_residual_socp(&data, &r, &window, &u, &g, &p.socp(), None).unwrap();
        assert!(kkt.relative() < 1e-8);
    }

    #[test]
    fn worst_case_with_zero_g() {
        let v = DMatrix::identity(3, 2);
        let y = DMatrix::identity(2, 2);
        let k = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let r = DVector::from_vec(vec![0.0, 2.0]);
        let rep =
            worst_case_check(&v, &k, &y, &r, 4.0, &DVector::zeros(2), 0.5, 0.3, 50, 1).unwrap();
        // |0 - k| + 0.5 * 1 and 2 * 2 + 0
        assert!((rep.sup_k - 1.5).abs() < 1e-15);
        assert!((rep.sup_y - 4.0).abs() < 1e-15);
        assert!(rep.attainment_gap() < 1e-12);
        assert!(rep.min_slack() >= -1e-12);
        assert!(worst_case_check(&v, &k, &y, &r, 4.0, &DVector::zeros(2), 0.5, 0.3, 0, 1).is_err());
    }

    /// Enumerate active sets of a tiny QP; the feasible stationary point with
    /// nonnegative multipliers is the minimizer.
    fn brute_force_qp(
        h: &DMatrix<f64>,
        b: &DVector<f64>,
        g: &DMatrix<f64>,
        hv: &DVector<f64>,
    ) -> DVector<f64> {
        let (n, m) = (b.len(), hv.len());
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << m) {
            let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = act.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(h);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(b);
            for (j, &i) in act.iter().enumerate() {
                for c in 0..n {
                    kkt[(n + j, c)] = g[(i, c)];
                    kkt[(c, n + j)] = g[(i, c)];
                }
                rhs[n + j] = hv[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                continue;
            };
            let x = sol.rows(0, n).into_owned();
            if (g * &x - hv).iter().any(|&v| v > 1e-9) || sol.rows(n, k).iter().any(|&l| l < -1e-9)
            {
                continue;
            }
            let f = 0.5 * x.dot(&(h * &x)) - b.dot(&x);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, x));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn constrained_g_matches_active_set_enumeration() {
        let (data, window, _) = setup(6, 2, GAUSS, 1.0, 0.5, 7);
        let h = data.model().columns();
        assert!(h <= 8);
        let r = DVector::from_vec(vec![0.3, 0.3]);
        let u = DVector::from_vec(vec![0.01, 0.02]);
        let k = data.model().kernel_vector(&window, &u).unwrap();
        let bx = BoxSet::uniform(2, -0.05, 0.1).unwrap();
        let (rho2, b_g) = (0.01, 1.0);
        let g = solve_g_constrained(&data, &r, &k, &bx, rho2, b_g).unwrap();
        let (y, v) = (data.model().y_f(), data.model().v());
        let w = data.weights();
        let hm = (y.transpose() * y * w.q_y + v * v * 1.0 + DMatrix::identity(h, h) * 0.5) * 2.0;
        let bv = (y.transpose() * &r * w.q_y + v * &k) * 2.0;
        let margin = rho2 * b_g / w.q_y.sqrt();
        let gm = DMatrix::from_fn(4, h, |i, c| if i < 2 { y[(i, c)] } else { -y[(i - 2, c)] });
        let hv = DVector::from_vec(vec![
            0.1 - margin,
            0.1 - margin,
            0.05 - margin,
            0.05 - margin,
        ]);
        let oracle = brute_force_qp(&hm, &bv, &gm, &hv);
        assert!(
            (&g - &oracle).norm() <= 1e-7 * (1.0 + oracle.norm()),
            "{g} vs {oracle}"
        );
        assert!((y * &g).iter().all(|&v| v <= 0.1 - margin + 1e-9));
    }

    #[test]
    fn infeasible_output_margin_is_reported() {
        let (data, window, r) = setup(20, 2, GAUSS, 1.0, 1.0, 8);
        let k = data
            .model()
            .kernel_vector(&window, &DVector::zeros(2))
            .unwrap();
        let bx = BoxSet::uniform(2, 0.0, 1e-3).unwrap();
        assert!(matches!(
            solve_g_constrained(&data, &r, &k, &bx, 1.0, 10.0),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn kernel_mpc_keeps_the_kernel_equation() {
        let (data, window, r) = setup(50, 3, GAUSS, 1.0, 1.0, 9);
        let model = Arc::new(data.model().clone());
        let mpc =
            KernelMpcData::new(model.clone(), CostWeights::default(), KERNEL_MPC_LAMBDA_G).unwrap();
        let sol = kernel_mpc_solve(&mpc, &r, &window, &GdConfig::default(), None, None).unwrap();
        let k = model.kernel_vector(&window, &sol.u_star).unwrap();
        assert!((model.v() * &sol.g_star - &k).norm() <= 1e-8 * k.norm());
        assert!(
            (model.y_f() * &sol.g_star - &sol.y_pred).norm() <= 1e-8 * (1.0 + sol.y_pred.norm())
        );
        assert!(sol.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fixed_step_divergence_is_an_error_not_nan() {
        let (data, window, r) = setup(50, 3, KernelSpec::Exponential { scale: 0.2 }, 1e8, 1.0, 10);
        let gd = GdConfig {
            alpha: 1e3,
            backtracking: false,
            ..GdConfig::default()
        };
        match rokdeepc_solve(&KernelControlProblem::new(
            &data,
            &(&r * 50.0),
            &window,
            &gd,
        )) {
            Ok(sol) => assert!(sol.u_star.iter().all(|v| v.is_finite())),
            Err(e) => assert!(matches!(e, Error::Solver(_)), "{e}"),
        }
    }
}
