use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{closed_loop, BenchmarkSummary, ClosedLoopOptions, ClosedLoopRecord};
use crate::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::plant::{collect_data, make_reference, ExcitationSignal, NoiseModel};
use crate::predict::{
    fit_kernel, fit_koopman_window, fit_linear, prediction_error, LiftingDictionary, Predictor,
};
use crate::rng::derive_seed;
use crate::solver::{
    Constraints, Controller, DeepcController, KernelMpcController, KoopmanMpcController,
    RokdeepcController,
};
use crate::trajectory::{partition, Dims, InitialWindow, SignalTrajectory};

// Seed streams derived from a run seed.
const STREAM_EXCITATION: u64 = 1;
const STREAM_DATA_NOISE: u64 = 2;
const STREAM_LOOP_NOISE: u64 = 3;
const STREAM_TEST: u64 = 4;

/// One `(run, method)` value; `None` marks a failed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub method: String,
    pub noise_variance: f64,
    pub value: Option<f64>,
    pub secondary: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    pub noise_variance: f64,
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
    pub runs: usize,
    pub failures: usize,
}

impl MethodStats {
    /// Welford accumulation in the given order; failures are counted and skipped.
    pub fn from_values(
        method: &str,
        noise_variance: f64,
        values: impl IntoIterator<Item = Option<f64>>,
    ) -> Self {
        let (mut n, mut mean, mut m2, mut failures) = (0usize, 0.0, 0.0, 0usize);
        for v in values {
            match v {
                Some(x) => {
                    n += 1;
                    let d = x - mean;
                    mean += d / n as f64;
                    m2 += d * (x - mean);
                }
                None => failures += 1,
            }
        }
        Self {
            method: method.into(),
            noise_variance,
            mean: if n > 0 { mean } else { f64::NAN },
            std: if n > 1 {
                (m2 / (n - 1) as f64).sqrt()
            } else {
                0.0
            },
            runs: n,
            failures,
        }
    }
}

/// Worker count: `ROKDEEPC_THREADS` if set and positive, else the machine's parallelism.
pub fn thread_count() -> usize {
    std::env::var("ROKDEEPC_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// The recorded data set of run `seed`: `(clean, measured)`, `experiment.t_data` samples.
pub fn collect_dataset(
    cfg: &RunConfig,
    seed: u64,
    noise_variance: f64,
) -> Result<(SignalTrajectory, SignalTrajectory)> {
    collect(cfg, seed, noise_variance, STREAM_DATA_NOISE)
}

fn collect(
    cfg: &RunConfig,
    seed: u64,
    noise_variance: f64,
    noise_stream: u64,
) -> Result<(SignalTrajectory, SignalTrajectory)> {
    let mut plant = cfg.plant.build()?;
    let exc = ExcitationSignal::white(
        cfg.excitation.mean,
        cfg.excitation.variance,
        derive_seed(seed, STREAM_EXCITATION),
    );
    let noise = NoiseModel::new(noise_variance, derive_seed(seed, noise_stream))?;
    collect_data(plant.as_mut(), &exc, cfg.experiment.t_data, &noise)
}

fn koopman_dictionary(cfg: &RunConfig, dims: &Dims) -> LiftingDictionary {
    let k = &cfg.predictors.koopman;
    LiftingDictionary::thin_plate(dims.past_len(), k.n_rbf, k.half_width, k.seed)
}

/// Controllers for `methods`, all fitted on the same recorded data. Kernel
/// methods expand to one controller per configured kernel.
pub fn build_controllers(
    cfg: &RunConfig,
    methods: &[Method],
    data: &SignalTrajectory,
) -> Result<Vec<Box<dyn Controller>>> {
    let e = &cfg.experiment;
    let ctl = &cfg.controllers;
    let part = partition(data, e.t_ini, e.horizon)?;
    let dims = part.dims;
    let constraints = Constraints {
        u_box: ctl.bounds.u_box(&dims)?,
        y_box: ctl.bounds.y_box(&dims)?,
    };
    let mut kernel_models = Vec::new();
    if methods
        .iter()
        .any(|m| matches!(m, Method::Rokdeepc | Method::KernelMpc))
    {
        for spec in &cfg.predictors.kernels {
            kernel_models.push(Arc::new(fit_kernel(&part, *spec, ctl.robust.gamma)?));
        }
    }
    let mut out: Vec<Box<dyn Controller>> = Vec::new();
    for method in methods {
        match method {
            Method::Rokdeepc => {
                for model in &kernel_models {
                    out.push(Box::new(
                        RokdeepcController::new(model.clone(), cfg.cost, &ctl.robust, ctl.gd)?
                            .with_constraints(constraints.clone())
                            .with_shift(e.control_horizon),
                    ));
                }
            }
            Method::KernelMpc => {
                for model in &kernel_models {
                    out.push(Box::new(
                        KernelMpcController::new(model.clone(), cfg.cost, ctl.gd)?
                            .with_input_box(constraints.u_box.clone()),
                    ));
                }
            }
            Method::Deepc => out.push(Box::new(
                DeepcController::new(part.clone(), cfg.cost, ctl.deepc)?
                    .with_constraints(constraints.clone()),
            )),
            Method::KoopmanMpc => {
                let model = fit_koopman_window(data, dims, &koopman_dictionary(cfg, &dims))?;
                out.push(Box::new(
                    KoopmanMpcController::new(model, cfg.cost)?
                        .with_input_box(constraints.u_box.clone()),
                ));
            }
        }
    }
    Ok(out)
}

fn reference_matrix(cfg: &RunConfig, p: usize) -> Result<DMatrix<f64>> {
    let r = make_reference(&cfg.experiment.reference, cfg.experiment.steps)?;
    Ok(DMatrix::from_fn(p, r.len(), |_, t| r[t]))
}

/// Collect data at `noise_variance` with `seed`, fit `methods`, and run each
/// in closed loop from the zero state under the same loop-noise stream.
/// Failures are returned per controller.
pub fn closed_loop_run(
    cfg: &RunConfig,
    methods: &[Method],
    seed: u64,
    noise_variance: f64,
    track_bound: bool,
) -> Result<Vec<(String, Result<ClosedLoopRecord>)>> {
    let (_, measured) = collect(cfg, seed, noise_variance, STREAM_DATA_NOISE)?;
    let controllers = build_controllers(cfg, methods, &measured)?;
    let opts = ClosedLoopOptions {
        k: cfg.experiment.control_horizon,
        noise: NoiseModel::new(noise_variance, derive_seed(seed, STREAM_LOOP_NOISE))?,
        weights: cfg.cost,
        track_bound,
    };
    let mut out = Vec::new();
    for mut c in controllers {
        let mut plant = cfg.plant.build()?;
        let reference = reference_matrix(cfg, plant.p())?;
        let name = c.name().to_string();
        out.push((
            name,
            closed_loop(c.as_mut(), plant.as_mut(), &reference, &opts),
        ));
    }
    Ok(out)
}

/// Closed-loop runs of `controllers.methods` at `experiment.control_noise`.
pub fn control_benchmark(cfg: &RunConfig) -> Result<Vec<ClosedLoopRecord>> {
    closed_loop_run(
        cfg,
        &cfg.controllers.methods,
        cfg.experiment.seed,
        cfg.experiment.control_noise,
        false,
    )?
    .into_iter()
    .map(|(_, r)| r)
    .collect()
}

/// Realized costs of closed-loop records as a summary (clean cost as value,
/// measured cost as secondary).
pub fn control_summary(cfg: &RunConfig, records: &[ClosedLoopRecord]) -> BenchmarkSummary {
    let e = &cfg.experiment;
    let rows = records
        .iter()
        .map(|r| RunRow {
            seed: e.seed,
            method: r.method.clone(),
            noise_variance: e.control_noise,
            value: Some(r.realized_cost),
            secondary: Some(r.realized_cost_measured),
        })
        .collect();
    BenchmarkSummary::from_rows(
        "control",
        "realized_cost_clean",
        Some("realized_cost_measured"),
        cfg.fingerprint(),
        vec![e.seed],
        rows,
    )
}

/// Chained open-loop prediction error of every predictor on a fresh test
/// trajectory, for each configured data-noise level. The training inputs are
/// shared across noise levels; the test trajectory is noiseless.
pub fn open_loop_benchmark(cfg: &RunConfig) -> Result<BenchmarkSummary> {
    let e = &cfg.experiment;
    let seed = e.seed;
    let mut test_plant = cfg.plant.build()?;
    let test_exc = ExcitationSignal::white(
        cfg.excitation.mean,
        cfg.excitation.variance,
        derive_seed(seed, STREAM_TEST),
    );
    let (test, _) = collect_data(
        test_plant.as_mut(),
        &test_exc,
        e.t_ini + e.rollout_steps,
        &NoiseModel::none(),
    )?;
    let mut rows = Vec::new();
    for (i, &nv) in e.prediction_noise.iter().enumerate() {
        let (_, measured) = collect(cfg, seed, nv, STREAM_DATA_NOISE + 16 * i as u64)?;
        let part = partition(&measured, e.t_ini, e.horizon)?;
        let dims = part.dims;
        let window = InitialWindow::from_trajectory(&test, e.t_ini, &dims)?;
        let u_future = test.input_window(e.t_ini, e.rollout_steps);
        let truth = test.output_window(e.t_ini, e.rollout_steps);
        let mut predictors: Vec<(String, Box<dyn Predictor>)> = vec![
            ("linear".into(), Box::new(fit_linear(&part))),
            (
                "koopman".into(),
                Box::new(fit_koopman_window(
                    &measured,
                    dims,
                    &koopman_dictionary(cfg, &dims),
                )?),
            ),
        ];
        for spec in &cfg.predictors.kernels {
            predictors.push((
                format!("kernel_{}", spec.name()),
                Box::new(fit_kernel(&part, *spec, cfg.predictors.gamma)?),
            ));
        }
        for (name, p) in predictors {
            let y = p.rollout(&window, &u_future)?;
            rows.push(RunRow {
                seed,
                method: name,
                noise_variance: nv,
                value: Some(prediction_error(&y, &truth)?),
                secondary: None,
            });
        }
    }
    Ok(BenchmarkSummary::from_rows(
        "prediction",
        "sum_sq_prediction_error",
        None,
        cfg.fingerprint(),
        vec![seed],
        rows,
    ))
}

/// [`monte_carlo_with`] using the `[montecarlo]` section, including its robust-parameter override.
pub fn monte_carlo(cfg: &RunConfig, n_runs: usize, base_seed: u64) -> Result<BenchmarkSummary> {
    let mut run_cfg = cfg.clone();
    if let Some(robust) = cfg.montecarlo.robust {
        run_cfg.controllers.robust = robust;
    }
    let mut summary = monte_carlo_with(
        &run_cfg,
        &cfg.montecarlo.methods,
        cfg.montecarlo.noise_variance,
        n_runs,
        base_seed,
    )?;
    summary.fingerprint = cfg.fingerprint();
    Ok(summary)
}

/// Independent closed-loop runs with seeds `base_seed..base_seed + n_runs`,
/// each with its own data set and noise. Values are realized costs on
/// noiseless outputs; `secondary` holds the cost on measured outputs.
pub fn monte_carlo_with(
    cfg: &RunConfig,
    methods: &[Method],
    noise_variance: f64,
    n_runs: usize,
    base_seed: u64,
) -> Result<BenchmarkSummary> {
    if n_runs < 2 {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo needs at least 2 runs, got {n_runs}"
        )));
    }
    let seeds: Vec<u64> = (0..n_runs as u64)
        .map(|i| base_seed.wrapping_add(i))
        .collect();
    debug_assert!(seeds.windows(2).all(|w| w[0] != w[1]));
    let names = controller_names(cfg, methods);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Solver(format!("thread pool: {e}")))?;
    let per_run: Vec<Vec<RunRow>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let results = closed_loop_run(cfg, methods, seed, noise_variance, false);
                names
                    .iter()
                    .map(|name| {
                        let rec = results
                            .as_ref()
                            .ok()
                            .and_then(|rs| rs.iter().find(|(n, _)| n == name))
                            .and_then(|(_, r)| r.as_ref().ok());
                        RunRow {
                            seed,
                            method: name.clone(),
                            noise_variance,
                            value: rec.map(|r| r.realized_cost),
                            secondary: rec.map(|r| r.realized_cost_measured),
                        }
                    })
                    .collect()
            })
            .collect()
    });
    Ok(BenchmarkSummary::from_rows(
        "montecarlo",
        "realized_cost_clean",
        Some("realized_cost_measured"),
        cfg.fingerprint(),
        seeds,
        per_run.into_iter().flatten().collect(),
    ))
}

fn controller_names(cfg: &RunConfig, methods: &[Method]) -> Vec<String> {
    let mut names = Vec::new();
    for m in methods {
        match m {
            Method::Rokdeepc => names.extend(
                cfg.predictors
                    .kernels
                    .iter()
                    .map(|k| format!("rokdeepc_{}", k.name())),
            ),
            Method::KernelMpc => names.extend(
                cfg.predictors
                    .kernels
                    .iter()
                    .map(|k| format!("kernel_mpc_{}", k.name())),
            ),
            Method::Deepc => names.push("deepc".into()),
            Method::KoopmanMpc => names.push("koopman_mpc".into()),
        }
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [3.1, 2.7, 9.4, 1e-3, 5.5, 5.5, 7.25];
        let s = MethodStats::from_values("x", 0.0, xs.iter().map(|&x| Some(x)).chain([None]));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((s.mean - mean).abs() <= 1e-12 * mean.abs());
        assert!((s.std - var.sqrt()).abs() <= 1e-12 * var.sqrt());
        assert_eq!((s.runs, s.failures), (7, 1));
    }

    #[test]
    fn thread_count_is_positive() {
        assert!(thread_count() >= 1);
    }

    #[test]
    fn names_follow_kernel_order() {
        let cfg = RunConfig::example1();
        let n = controller_names(&cfg, &[Method::Rokdeepc, Method::Deepc]);
        assert_eq!(
            n,
            [
                "rokdeepc_polynomial",
                "rokdeepc_gaussian",
                "rokdeepc_exponential",
                "deepc"
            ]
        );
    }
}
