//! Property battery behind `rokdeepc verify`: worst-case tightness, cone-form
//! stationarity, closed-form inner step, gradient, linear-predictor
//! exactness on LTI data, and the closed-loop performance bound.
//!
//! Each check draws its own seeded instances and reports the worst observed
//! value against a tolerance.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::config::{Method, RunConfig};
use crate::error::Result;
use crate::harness::{bound_report, closed_loop_run};
use crate::kernel::KernelSpec;
use crate::plant::{collect_data, ExcitationSignal, LtiPlant, NoiseModel, PolynomialSisoPlant};
use crate::predict::{fit_kernel, fit_linear, Predictor};
use crate::rng::{derive_seed, GaussianStream};
use crate::solver::{
    equivalent_params, eval_cost_quad, grad_u, rokdeepc_solve, worst_case_check, CostWeights,
    GdConfig, KernelControlProblem, KernelProblemData, RhoPin,
};
use crate::trajectory::{partition, InitialWindow};

/// Names accepted by `ROKDEEPC_SABOTAGE` (comma separated). A sabotaged
/// check perturbs the quantity under test so that it must fail.
pub const SABOTAGE_VAR: &str = "ROKDEEPC_SABOTAGE";

fn sabotaged(name: &str) -> bool {
    std::env::var(SABOTAGE_VAR).is_ok_and(|v| v.split(',').any(|s| s.trim() == name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst value of the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub instances: usize,
    pub detail: String,
    pub elapsed_s: f64,
}

impl fmt::Display for PropertyOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<20} worst={:.3e} tol={:.1e} n={} ({:.2}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.instances,
            self.elapsed_s,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub worst_case_instances: usize,
    pub kkt_instances: usize,
    pub closed_form_instances: usize,
    /// Per kernel.
    pub gradient_instances: usize,
    pub lti_systems: usize,
    /// Closed-loop configuration for the performance bound.
    pub bound_config: RunConfig,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 2024,
            worst_case_instances: 100,
            kkt_instances: 20,
            closed_form_instances: 50,
            gradient_instances: 100,
            lti_systems: 50,
            bound_config: RunConfig::example1(),
        }
    }
}

pub fn run_all(opts: &VerifyOptions) -> Result<Vec<PropertyOutcome>> {
    Ok(vec![
        worst_case_tightness(opts.worst_case_instances, opts.seed)?,
        cone_stationarity(opts.kkt_instances, opts.seed)?,
        closed_form_inner_step(opts.closed_form_instances, opts.seed)?,
        gradient_check(opts.gradient_instances, opts.seed)?,
        lti_exactness(opts.lti_systems, opts.seed)?,
        performance_bound(&opts.bound_config)?,
    ])
}

fn log_uniform(rng: &mut GaussianStream, lo: f64, hi: f64) -> f64 {
    rng.uniform(lo.ln(), hi.ln()).exp()
}

fn pick(rng: &mut GaussianStream, n: usize) -> usize {
    ((rng.uniform(0.0, 1.0) * n as f64) as usize).min(n - 1)
}

/// Small kernel problem on data from the polynomial SISO plant.
struct Instance {
    data: KernelProblemData,
    window: InitialWindow,
    r: DVector<f64>,
    u: DVector<f64>,
}

fn example_kernels() -> Vec<KernelSpec> {
    RunConfig::example1().predictors.kernels
}

fn random_instance(
    rng: &mut GaussianStream,
    spec: KernelSpec,
    lambda_k_prime: f64,
    lambda_g: f64,
) -> Result<Instance> {
    let seed = (rng.uniform(0.0, 1.0) * 1e12) as u64;
    let t = 60 + pick(rng, 60);
    let n = 2 + pick(rng, 4);
    let mut plant = PolynomialSisoPlant::default();
    let exc = ExcitationSignal::white(0.0, 0.01, derive_seed(seed, 1));
    let (_, data) = collect_data(&mut plant, &exc, t + 10, &NoiseModel::none())?;
    let part = partition(&data, 1, n)?;
    let dims = part.dims;
    let model = fit_kernel(&part, spec, 0.01)?;
    let window = InitialWindow::from_trajectory(&data, t + 2, &dims)?;
    let r = DVector::from_fn(dims.y_len(), |_, _| rng.uniform(-0.15, 0.15));
    let u = DVector::from_fn(dims.u_len(), |_, _| 0.1 * rng.sample());
    Ok(Instance {
        data: KernelProblemData::new(
            Arc::new(model),
            CostWeights::default(),
            lambda_k_prime,
            lambda_g,
        )?,
        window,
        r,
        u,
    })
}

/// Sampled perturbations in the Frobenius balls never exceed the
/// closed-form supremum, and the rank-one perturbation attains it.
pub fn worst_case_tightness(instances: usize, seed: u64) -> Result<PropertyOutcome> {
    const SLACK_TOL: f64 = 1e-10;
    const ATTAIN_TOL: f64 = 1e-9;
    let clock = Instant::now();
    let mut rng = GaussianStream::standard(derive_seed(seed, 11));
    let (mut worst_slack, mut worst_gap) = (f64::INFINITY, 0.0f64);
    for i in 0..instances {
        let h = 2 + pick(&mut rng, 30);
        let rows_k = 2 + pick(&mut rng, 30);
        let rows_y = 1 + pick(&mut rng, 10);
        let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample());
        let v = gauss(rows_k, h);
        let y = gauss(rows_y, h);
        let k = DVector::from_column_slice(gauss(rows_k, 1).as_slice());
        let r = DVector::from_column_slice(gauss(rows_y, 1).as_slice());
        let g = DVector::from_column_slice(gauss(h, 1).as_slice());
        let q_y = log_uniform(&mut rng, 1e-2, 1e3);
        let rho1 = log_uniform(&mut rng, 1e-3, 10.0);
        let rho2 = log_uniform(&mut rng, 1e-3, 10.0);
        let rep = worst_case_check(
            &v,
            &k,
            &y,
            &r,
            q_y,
            &g,
            rho1,
            rho2,
            200,
            derive_seed(seed, 1000 + i as u64),
        )?;
        worst_slack = worst_slack.min(rep.min_slack());
        worst_gap = worst_gap.max(rep.attainment_gap());
    }
    Ok(PropertyOutcome {
        name: "worst_case",
        passed: worst_slack >= -SLACK_TOL && worst_gap <= ATTAIN_TOL,
        worst: worst_gap,
        tolerance: ATTAIN_TOL,
        instances,
        detail: format!(
            "min slack {worst_slack:.3e} (tol -{SLACK_TOL:.0e}), attainment gap {worst_gap:.3e}"
        ),
        elapsed_s: clock.elapsed().as_secs_f64(),
    })
}

/// At solved instances the inner minimizer is stationary for the cone-form
/// cost with the recovered parameters, and the descent cost never increases.
/// At a fixed input the recovered `lambda_k` grows with `lambda_k'`.
pub fn cone_stationarity(instances: usize, seed: u64) -> Result<PropertyOutcome> {
    const KKT_TOL: f64 = 1e-6;
    const LAMBDAS: [f64; 3] = [1e4, 1e6, 1e8];
    let clock = Instant::now();
    let mut rng = GaussianStream::standard(derive_seed(seed, 12));
    let kernels = example_kernels();
    let gd = GdConfig {
        alpha: 1e-3,
        ..GdConfig::default()
    };
    let (mut worst, mut monotone_failures, mut trace_failures) = (0.0f64, 0, 0);
    for i in 0..instances {
        let spec = kernels[i % kernels.len()];
        let inst_seed = (rng.uniform(0.0, 1.0) * 1e12) as u64;
        let mut solved = Vec::new();
        for lkp in LAMBDAS {
            let inst = random_instance(&mut GaussianStream::standard(inst_seed), spec, lkp, 1.0)?;
            let problem = KernelControlProblem::new(&inst.data, &inst.r, &inst.window, &gd);
            let sol = rokdeepc_solve(&problem)?;
            let diag = sol.diagnostics.expect("diagnostics requested");
            worst = worst.max(diag.kkt_residual / diag.kkt_scale);
            if sol.cost_trace.windows(2).any(|w| w[1] > w[0]) {
                trace_failures += 1;
            }
            solved.push((inst, sol.u_star));
        }
        let u = &solved[LAMBDAS.len() - 1].1;
        let mut lambdas = Vec::new();
        for (inst, _) in &solved {
            let k = inst.data.model().kernel_vector(&inst.window, u)?;
            let g = inst.data.g_refined(&inst.r, &k);
            lambdas.push(
                equivalent_params(&inst.data, &inst.r, &inst.window, u, &g, RhoPin::default())?
                    .lambda_k,
            );
        }
        if !lambdas.windows(2).all(|w| w[1] > w[0]) {
            monotone_failures += 1;
        }
    }
    Ok(PropertyOutcome {
        name: "kkt",
        passed: worst <= KKT_TOL && monotone_failures == 0 && trace_failures == 0,
        worst,
        tolerance: KKT_TOL,
        instances,
        detail: format!("lambda_k non-increasing in {monotone_failures} instances, cost increases in {trace_failures} solves"),
        elapsed_s: clock.elapsed().as_secs_f64(),
    })
}

/// Conjugate gradients on `c_q(u, .)` written out term by term.
fn iterative_inner_minimizer(inst: &Instance) -> Result<DVector<f64>> {
    let model = inst.data.model();
    let (y, v) = (model.y_f(), model.v());
    let k = model.kernel_vector(&inst.window, &inst.u)?;
    let q = inst.data.weights().q_y;
    let (lg, lk) = (inst.data.lambda_g(), inst.data.lambda_k_prime());
    let grad = |g: &DVector<f64>| -> DVector<f64> {
        (y.transpose() * (y * g - &inst.r)) * (2.0 * q)
            + g * (2.0 * lg)
            + (v.transpose() * (v * g - &k)) * (2.0 * lk)
    };
    let h = g_len(&inst.data);
    let mut g = DVector::zeros(h);
    let g0 = grad(&g);
    // Hessian-vector product from gradient differences (the cost is quadratic)
    let hess = |d: &DVector<f64>| grad(d) - &g0;
    for _restart in 0..20 {
        let mut res = -grad(&g);
        let mut dir = res.clone();
        let mut rs = res.norm_squared();
        for _ in 0..4 * h {
            if rs.sqrt() <= 1e-15 * (1.0 + g0.norm()) {
                break;
            }
            let hd = hess(&dir);
            let step = rs / dir.dot(&hd);
            g.axpy(step, &dir, 1.0);
            res.axpy(-step, &hd, 1.0);
            let rs_new = res.norm_squared();
            dir = &res + &dir * (rs_new / rs);
            rs = rs_new;
        }
    }
    Ok(g)
}

fn g_len(data: &KernelProblemData) -> usize {
    data.model().columns()
}

/// The closed-form inner step equals an iterative minimization of `c_q`.
pub fn closed_form_inner_step(instances: usize, seed: u64) -> Result<PropertyOutcome> {
    const TOL: f64 = 1e-8;
    let clock = Instant::now();
    let mut rng = GaussianStream::standard(derive_seed(seed, 13));
    let kernels = example_kernels();
    let mut worst = 0.0f64;
    for i in 0..instances {
        let lkp = log_uniform(&mut rng, 1e-2, 1.0);
        let lg = log_uniform(&mut rng, 0.5, 10.0);
        let inst = random_instance(&mut rng, kernels[i % kernels.len()], lkp, lg)?;
        let k = inst.data.model().kernel_vector(&inst.window, &inst.u)?;
        let closed = inst.data.g_closed_form(&inst.r, &k);
        let iter = iterative_inner_minimizer(&inst)?;
        worst = worst.max((&closed - &iter).norm() / iter.norm().max(f64::MIN_POSITIVE));
    }
    Ok(PropertyOutcome {
        name: "closed_form",
        passed: worst <= TOL,
        worst,
        tolerance: TOL,
        instances,
        detail: "relative |g_closed - g_iter|".into(),
        elapsed_s: clock.elapsed().as_secs_f64(),
    })
}

/// Central finite differences of `c_q(., g)` against the analytic gradient.
pub fn gradient_check(instances_per_kernel: usize, seed: u64) -> Result<PropertyOutcome> {
    const TOL: f64 = 1e-5;
    let clock = Instant::now();
    let mut rng = GaussianStream::standard(derive_seed(seed, 14));
    let sabotage = sabotaged("grad_u");
    let mut worst = 0.0f64;
    let mut worst_kernel = "";
    let mut kernels = example_kernels();
    kernels.push(KernelSpec::Hybrid { two_sigma_sq: 0.4 });
    for spec in &kernels {
        for _ in 0..instances_per_kernel {
            let lkp = log_uniform(&mut rng, 1.0, 1e8);
            let inst = random_instance(&mut rng, *spec, lkp, 1.0)?;
            // g optimal for a nearby input, so the kernel residual is nonzero
            let shifted = inst.u.map(|x| x + 0.02 * rng.sample());
            let k_shift = inst.data.model().kernel_vector(&inst.window, &shifted)?;
            let g = inst.data.g_closed_form(&inst.r, &k_shift);
            let mut analytic = grad_u(&inst.data, &inst.r, &inst.window, &inst.u, &g)?;
            if sabotage {
                analytic *= 1.0 + 1e-3;
            }
            let mut fd = DVector::zeros(analytic.len());
            for j in 0..fd.len() {
                let h = 1e-6 * (1.0 + inst.u[j].abs());
                let mut up = inst.u.clone();
                up[j] += h;
                let mut dn = inst.u.clone();
                dn[j] -= h;
                let c_up = eval_cost_quad(&inst.data, &inst.r, &inst.window, &up, &g)?;
                let c_dn = eval_cost_quad(&inst.data, &inst.r, &inst.window, &dn, &g)?;
                fd[j] = (c_up - c_dn) / (2.0 * h);
            }
            let rel = (&analytic - &fd).norm() / analytic.norm().max(1e-12);
            if rel > worst {
                worst = rel;
                worst_kernel = spec.name();
            }
        }
    }
    Ok(PropertyOutcome {
        name: "grad_u",
        passed: worst <= TOL,
        worst,
        tolerance: TOL,
        instances: instances_per_kernel * kernels.len(),
        detail: format!(
            "worst kernel {worst_kernel}{}",
            if sabotage { " (sabotaged)" } else { "" }
        ),
        elapsed_s: clock.elapsed().as_secs_f64(),
    })
}

/// On noiseless, persistently exciting data from random stable LTI systems
/// (order <= 5), the linear predictor reproduces fresh trajectories.
pub fn lti_exactness(systems: usize, seed: u64) -> Result<PropertyOutcome> {
    const TOL: f64 = 1e-8;
    let clock = Instant::now();
    let mut rng = GaussianStream::standard(derive_seed(seed, 15));
    let mut worst = 0.0f64;
    for i in 0..systems {
        let n = 1 + pick(&mut rng, 5);
        let m = 1 + pick(&mut rng, 2);
        let p = 1 + pick(&mut rng, 2);
        let horizon = 2 + pick(&mut rng, 5);
        let t_ini = n;
        let radius = rng.uniform(0.3, 0.9);
        let sys_seed = derive_seed(seed, 5000 + i as u64);
        let mut plant = LtiPlant::random_stable(n, m, p, radius, sys_seed);
        let depth = t_ini + horizon;
        let t = 3 * (m + 1) * (depth + n) + 20;
        let exc = ExcitationSignal::white(0.0, 1.0, derive_seed(sys_seed, 1));
        let (data, _) = collect_data(&mut plant, &exc, t, &NoiseModel::none())?;
        let model = fit_linear(&partition(&data, t_ini, horizon)?);
        // continue from the current state with a different input sequence
        let exc_test = ExcitationSignal::white(0.0, 1.0, derive_seed(sys_seed, 2));
        let (test, _) = collect_data(&mut plant, &exc_test, depth, &NoiseModel::none())?;
        let dims = model.dims();
        let window = InitialWindow::from_trajectory(&test, t_ini, &dims)?;
        let y = model.predict(&window, &test.input_window(t_ini, horizon))?;
        let truth = test.output_window(t_ini, horizon);
        worst = worst.max((&y - &truth).norm() / truth.norm().max(f64::MIN_POSITIVE));
    }
    Ok(PropertyOutcome {
        name: "lti_exactness",
        passed: worst <= TOL,
        worst,
        tolerance: TOL,
        instances: systems,
        detail: "relative prediction residual".into(),
        elapsed_s: clock.elapsed().as_secs_f64(),
    })
}

/// Noiseless closed loop of the robust kernel controllers: no cycle has
/// `c_realized > c_opt + beta_e`.
pub fn performance_bound(cfg: &RunConfig) -> Result<PropertyOutcome> {
    let clock = Instant::now();
    let (mut violations, mut cycles, mut min_slack) = (0, 0, f64::INFINITY);
    let mut notes = Vec::new();
    for (name, rec) in closed_loop_run(cfg, &[Method::Rokdeepc], cfg.experiment.seed, 0.0, true)? {
        let rep = bound_report(&rec?);
        violations += rep.violations;
        cycles += rep.cycles;
        min_slack = min_slack.min(rep.min_slack);
        notes.push(format!(
            "{name}: {} cycles, global condition {}, local condition {}",
            rep.cycles, rep.condition_global, rep.condition_local
        ));
    }
    Ok(PropertyOutcome {
        name: "performance_bound",
        passed: violations == 0 && cycles > 0,
        worst: violations as f64,
        tolerance: 0.0,
        instances: cycles,
        detail: format!("min slack {min_slack:.3e}; {}", notes.join("; ")),
        elapsed_s: clock.elapsed().as_secs_f64(),
    })
}
