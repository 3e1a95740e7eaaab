//! Experiment orchestration: closed-loop simulation with realized-cost
//! accounting, open-loop prediction benchmarks, Monte Carlo aggregation and
//! report output.

mod bench;
mod report;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::plant::{NoiseModel, Plant, ReferenceProfile};
use crate::predict::Predictor;
use crate::solver::{eval_cost_socp, Controller, CostWeights, SolveResult};
use crate::trajectory::InitialWindow;

pub use bench::{
    build_controllers, closed_loop_run, collect_dataset, control_benchmark, control_summary,
    monte_carlo, monte_carlo_with, open_loop_benchmark, thread_count, MethodStats, RunRow,
};
pub use report::{
    write_closed_loop_csv, write_report, write_timing_csv, BenchmarkSummary, ReportFormat,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoopOptions {
    /// Inputs applied per solve.
    pub k: usize,
    pub noise: NoiseModel,
    pub weights: CostWeights,
    /// Record per-cycle performance-bound data (kernel controllers only).
    pub track_bound: bool,
}

/// Per-cycle data for the performance bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub step: usize,
    /// Cone-form cost at the solution, with parameters recovered from it.
    pub c_opt: f64,
    /// `l(u*) + |y_sys - r|_Q` for the noiseless plant response to `u*`.
    pub c_realized: f64,
    /// `|y_sys - y_prd|_Q`
    pub prediction_error: f64,
    pub lambda_k: f64,
    /// `lambda_k^2 >= q_y |W|^2`
    pub condition_global: bool,
    /// `|W (V g - k)|_Q <= lambda_k |V g - k|`
    pub condition_local: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopRecord {
    pub method: String,
    /// `m x steps`
    #[serde(with = "crate::matrix_serde::matrix")]
    pub inputs: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub measured: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub clean: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub reference: DMatrix<f64>,
    /// Wall time of the solve issued at each step (0 when none was issued).
    pub solve_time_s: Vec<f64>,
    /// Realized cost on noiseless outputs.
    pub realized_cost: f64,
    /// Realized cost on measured outputs.
    pub realized_cost_measured: f64,
    pub iterations: Vec<usize>,
    pub cycles: Vec<CycleRecord>,
}

impl ClosedLoopRecord {
    pub fn steps(&self) -> usize {
        self.inputs.ncols()
    }

    /// Recompute both realized costs from the stored streams.
    pub fn recompute_costs(&self, weights: &CostWeights) -> Result<(f64, f64)> {
        Ok((
            realized_cost(weights, &self.inputs, &self.clean, &self.reference)?,
            realized_cost(weights, &self.inputs, &self.measured, &self.reference)?,
        ))
    }
}

/// `sum_t r_u |u_t|^2 + q_y |y_t - r_t|^2 + sum_{t>=2} r_delta |u_t - u_{t-1}|^2`.
pub fn realized_cost(
    weights: &CostWeights,
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    reference: &DMatrix<f64>,
) -> Result<f64> {
    check_len("output stream length", inputs.ncols(), outputs.ncols())?;
    check_len(
        "reference stream length",
        outputs.ncols(),
        reference.ncols(),
    )?;
    check_len("reference rows", outputs.nrows(), reference.nrows())?;
    let u = DVector::from_column_slice(inputs.as_slice());
    Ok(weights.input_cost(&u, inputs.nrows()) + weights.q_y * (outputs - reference).norm_squared())
}

/// Reference window `r_t .. r_{t+N-1}`, held at the last value past the end.
fn reference_window(reference: &DMatrix<f64>, t: usize, n: usize) -> DVector<f64> {
    let p = reference.nrows();
    let last = reference.ncols() - 1;
    DVector::from_fn(p * n, |i, _| reference[(i % p, (t + i / p).min(last))])
}

/// Receding-horizon simulation. The first `T_ini` steps apply zero input to
/// fill the window; afterwards each solve uses the latest `T_ini` applied
/// inputs and measured outputs, and its first `k` inputs are applied.
pub fn closed_loop(
    controller: &mut dyn Controller,
    plant: &mut dyn Plant,
    reference: &DMatrix<f64>,
    opts: &ClosedLoopOptions,
) -> Result<ClosedLoopRecord> {
    let dims = controller.dims();
    let (m, p) = (dims.m, dims.p);
    check_len("plant inputs", m, plant.m())?;
    check_len("plant outputs", p, plant.p())?;
    check_len("reference rows", p, reference.nrows())?;
    let total = reference.ncols();
    if total < dims.t_ini {
        return Err(Error::InvalidArgument(format!(
            "{total} steps cannot fill a window of {}",
            dims.t_ini
        )));
    }
    if opts.k == 0 || opts.k > dims.n {
        return Err(Error::InvalidArgument(format!(
            "control horizon k={} must be in 1..={}",
            opts.k, dims.n
        )));
    }
    let w_norm = match (opts.track_bound, controller.kernel_problem()) {
        (true, Some(data)) => Some(linalg::spectral_norm(data.model().w())),
        _ => None,
    };

    let mut st = Streams {
        noise: opts.noise.stream(),
        inputs: DMatrix::zeros(m, total),
        measured: DMatrix::zeros(p, total),
        clean: DMatrix::zeros(p, total),
    };
    let mut solve_time_s = vec![0.0; total];
    let mut iterations = vec![0; total];
    let mut cycles = Vec::new();

    let zero = vec![0.0; m];
    let mut t = 0;
    while t < dims.t_ini {
        st.apply(plant, t, &zero)?;
        t += 1;
    }
    while t < total {
        let start = t - dims.t_ini;
        let window = InitialWindow::new(
            DVector::from_column_slice(
                st.inputs.columns(start, dims.t_ini).into_owned().as_slice(),
            ),
            DVector::from_column_slice(
                st.measured
                    .columns(start, dims.t_ini)
                    .into_owned()
                    .as_slice(),
            ),
            &dims,
        )?;
        let r = reference_window(reference, t, dims.n);
        let clock = Instant::now();
        let result = controller.solve(&window, &r).map_err(|e| Error::AtStep {
            step: t,
            source: Box::new(e),
        })?;
        solve_time_s[t] = clock.elapsed().as_secs_f64();
        iterations[t] = result.iterations;
        if !linalg::all_finite(&result.u_star) {
            return Err(Error::AtStep {
                step: t,
                source: Box::new(Error::Solver("non-finite input sequence".into())),
            });
        }
        if let Some(w_norm) = w_norm {
            if let Some(c) = cycle_record(controller, plant, &window, &r, &result, w_norm, t)? {
                cycles.push(c);
            }
        }
        let applied = opts.k.min(total - t);
        for j in 0..applied {
            let u: Vec<f64> = result.u_star.rows(j * m, m).iter().copied().collect();
            st.apply(plant, t + j, &u)?;
        }
        t += applied;
    }

    let mut record = ClosedLoopRecord {
        method: controller.name().to_string(),
        inputs: st.inputs,
        measured: st.measured,
        clean: st.clean,
        reference: reference.clone(),
        solve_time_s,
        realized_cost: 0.0,
        realized_cost_measured: 0.0,
        iterations,
        cycles,
    };
    (record.realized_cost, record.realized_cost_measured) =
        record.recompute_costs(&opts.weights)?;
    Ok(record)
}

struct Streams {
    noise: crate::rng::GaussianStream,
    inputs: DMatrix<f64>,
    measured: DMatrix<f64>,
    clean: DMatrix<f64>,
}

impl Streams {
    fn apply(&mut self, plant: &mut dyn Plant, t: usize, u: &[f64]) -> Result<()> {
        let y = plant.step(u).map_err(|e| Error::AtStep {
            step: t,
            source: Box::new(e),
        })?;
        self.inputs.column_mut(t).copy_from_slice(u);
        self.clean.set_column(t, &y);
        for i in 0..y.len() {
            self.measured[(i, t)] = y[i] + self.noise.sample();
        }
        Ok(())
    }
}

fn cycle_record(
    controller: &dyn Controller,
    plant: &dyn Plant,
    window: &InitialWindow,
    r: &DVector<f64>,
    result: &SolveResult,
    w_norm: f64,
    step: usize,
) -> Result<Option<CycleRecord>> {
    let (Some(data), Some(diag)) = (controller.kernel_problem(), result.diagnostics) else {
        return Ok(None);
    };
    let model = data.model();
    let dims = controller.dims();
    let weights = data.weights();
    let y_prd = model.predict(window, &result.u_star)?;
    let mut sim = plant.clone_box();
    let mut y_sys = DVector::zeros(dims.y_len());
    for t in 0..dims.n {
        let u: Vec<f64> = result
            .u_star
            .rows(t * dims.m, dims.m)
            .iter()
            .copied()
            .collect();
        y_sys.rows_mut(t * dims.p, dims.p).copy_from(&sim.step(&u)?);
    }
    let ell = weights.input_cost(&result.u_star, dims.m);
    let params = diag.params.socp();
    let res = model.v() * &result.g_star - model.kernel_vector(window, &result.u_star)?;
    let lambda_k = params.lambda_k;
    Ok(Some(CycleRecord {
        step,
        c_opt: eval_cost_socp(data, r, window, &result.u_star, &result.g_star, &params)?,
        c_realized: ell + weights.q_norm(&(&y_sys - r)),
        prediction_error: weights.q_norm(&(&y_sys - &y_prd)),
        lambda_k,
        condition_global: lambda_k * lambda_k >= weights.q_y * w_norm * w_norm,
        condition_local: weights.q_norm(&(model.w() * &res))
            <= lambda_k * res.norm() * (1.0 + 1e-12),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Largest per-cycle prediction error.
    pub beta_e: f64,
    pub cycles: usize,
    /// Cycles with `c_realized > c_opt + beta_e` beyond rounding.
    pub violations: usize,
    pub min_slack: f64,
    /// Cycles where `lambda_k^2 >= q_y |W|^2`.
    pub condition_global: usize,
    /// Cycles where the bound's step `|W res|_Q <= lambda_k |res|` holds.
    pub condition_local: usize,
    pub slacks: Vec<f64>,
}

/// Slack `c_opt + beta_e - c_realized` per cycle with `beta_e` measured over the run.
pub fn bound_report(record: &ClosedLoopRecord) -> BoundReport {
    let beta_e = record
        .cycles
        .iter()
        .map(|c| c.prediction_error)
        .fold(0.0, f64::max);
    let slacks: Vec<f64> = record
        .cycles
        .iter()
        .map(|c| c.c_opt + beta_e - c.c_realized)
        .collect();
    let violations = record
        .cycles
        .iter()
        .zip(&slacks)
        .filter(|(c, s)| **s < -1e-9 * (1.0 + c.c_realized))
        .count();
    BoundReport {
        beta_e,
        cycles: record.cycles.len(),
        violations,
        min_slack: slacks.iter().copied().fold(f64::INFINITY, f64::min),
        condition_global: record.cycles.iter().filter(|c| c.condition_global).count(),
        condition_local: record.cycles.iter().filter(|c| c.condition_local).count(),
        slacks,
    }
}

/// Mean `|y - r|` over the last `tail` steps before each reference change
/// and before the end, divided by the size of the step that started the
/// segment. Segments are those starting at a breakpoint.
pub fn segment_tracking_errors(
    record: &ClosedLoopRecord,
    profile: &ReferenceProfile,
    tail: usize,
) -> Vec<f64> {
    let total = record.steps();
    let mut out = Vec::new();
    let mut prev = profile.initial;
    for (i, bp) in profile.breakpoints.iter().enumerate() {
        let end = profile
            .breakpoints
            .get(i + 1)
            .map_or(total, |b| b.at)
            .min(total);
        let size = (bp.value - prev).abs();
        prev = bp.value;
        if bp.at >= end || size == 0.0 {
            continue;
        }
        let from = end.saturating_sub(tail).max(bp.at);
        let mut err = 0.0;
        for t in from..end {
            err += (record.clean.column(t) - record.reference.column(t)).amax();
        }
        out.push(err / (end - from) as f64 / size);
    }
    out
}

/// For each breakpoint segment, the first step from which `|y - r|` stays
/// within `tol` times the step size until the segment ends; `None` if it
/// never settles. The last `preview` steps before the next breakpoint are
/// not checked: a controller whose horizon reaches the next value may
/// already be moving toward it.
pub fn settling_steps(
    record: &ClosedLoopRecord,
    profile: &ReferenceProfile,
    tol: f64,
    preview: usize,
) -> Vec<Option<usize>> {
    let total = record.steps();
    let mut prev = profile.initial;
    let mut out = Vec::new();
    for (i, bp) in profile.breakpoints.iter().enumerate() {
        let end = match profile.breakpoints.get(i + 1) {
            Some(next) => next.at.min(total).saturating_sub(preview),
            None => total,
        };
        let size = (bp.value - prev).abs();
        prev = bp.value;
        if bp.at >= end || size == 0.0 {
            continue;
        }
        let mut settled = None;
        for t in (bp.at..end).rev() {
            if (record.clean.column(t) - record.reference.column(t)).amax() > tol * size {
                break;
            }
            settled = Some(t);
        }
        out.push(settled);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{Breakpoint, PolynomialSisoPlant};
    use crate::solver::{GdConfig, SolveResult};
    use crate::trajectory::Dims;

    struct ZeroController(Dims);

    impl Controller for ZeroController {
        fn name(&self) -> &str {
            "zero"
        }
        fn dims(&self) -> Dims {
            self.0
        }
        fn solve(&mut self, _: &InitialWindow, _: &DVector<f64>) -> Result<SolveResult> {
            Ok(SolveResult {
                u_star: DVector::zeros(self.0.u_len()),
                g_star: DVector::zeros(0),
                y_pred: DVector::zeros(self.0.y_len()),
                cost_trace: vec![0.0],
                iterations: 1,
                diagnostics: None,
            })
        }
    }

    #[test]
    fn zero_everything_costs_nothing() {
        let dims = Dims::new(1, 1, 1, 5).unwrap();
        let opts = ClosedLoopOptions {
            k: 1,
            noise: NoiseModel::none(),
            weights: CostWeights::default(),
            track_bound: false,
        };
        let rec = closed_loop(
            &mut ZeroController(dims),
            &mut PolynomialSisoPlant::default(),
            &DMatrix::zeros(1, 40),
            &opts,
        )
        .unwrap();
        assert_eq!(rec.realized_cost, 0.0);
        assert_eq!(rec.steps(), 40);
        let _ = GdConfig::default();
    }

    #[test]
    fn reference_window_holds_last_value() {
        let r = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            reference_window(&r, 2, 4),
            DVector::from_vec(vec![3.0, 4.0, 4.0, 4.0])
        );
    }

    #[test]
    fn realized_cost_by_hand() {
        let w = CostWeights {
            r_u: 2.0,
            r_delta: 10.0,
            q_y: 100.0,
        };
        let u = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.5]);
        let y = DMatrix::from_row_slice(1, 3, &[0.1, 0.2, 0.0]);
        let r = DMatrix::from_row_slice(1, 3, &[0.0, 0.1, 0.1]);
        // 2*(1 + 0 + 0.25) + 10*(1 + 0.25) + 100*(0.01 + 0.01 + 0.01)
        let expected = 2.5 + 12.5 + 3.0;
        assert!((realized_cost(&w, &u, &y, &r).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn settling_is_measured_per_segment() {
        let profile = ReferenceProfile {
            initial: 0.0,
            breakpoints: vec![
                Breakpoint { at: 2, value: 1.0 },
                Breakpoint { at: 6, value: 0.5 },
            ],
        };
        let r = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5];
        // settles at 4 in the first segment; the second never does
        let y = [0.0, 0.0, 0.3, 1.2, 1.04, 0.98, 0.9, 0.6, 0.5, 0.6];
        let rec = ClosedLoopRecord {
            method: "t".into(),
            inputs: DMatrix::zeros(1, 10),
            measured: DMatrix::from_row_slice(1, 10, &y),
            clean: DMatrix::from_row_slice(1, 10, &y),
            reference: DMatrix::from_row_slice(1, 10, &r),
            solve_time_s: vec![0.0; 10],
            realized_cost: 0.0,
            realized_cost_measured: 0.0,
            iterations: vec![0; 10],
            cycles: Vec::new(),
        };
        assert_eq!(settling_steps(&rec, &profile, 0.05, 0), vec![Some(4), None]);
        assert_eq!(
            settling_steps(&rec, &profile, 0.3, 0),
            vec![Some(3), Some(7)]
        );
        // a late excursion before the next step is ignored within the preview
        let mut early = rec.clone();
        early.clean[(0, 5)] = 0.8;
        assert_eq!(settling_steps(&early, &profile, 0.05, 0)[0], None);
        assert_eq!(settling_steps(&early, &profile, 0.05, 1)[0], Some(4));
    }
}
