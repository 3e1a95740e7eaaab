use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rokdeepc::config::RunConfig;
use rokdeepc::harness::{closed_loop, BenchmarkSummary, ClosedLoopOptions, MethodStats, RunRow};
use rokdeepc::kernel::{CenterSet, DataSource, Kernel, KernelSpec};
use rokdeepc::plant::{
    collect_data, make_reference, ExcitationSignal, NoiseModel, PolynomialSisoPlant,
    ReferenceProfile,
};
use rokdeepc::predict::fit_kernel;
use rokdeepc::solver::{
    project_box, shift_solution, worst_case_check, BoxSet, Constraints, CostWeights, GdConfig,
    RobustConfig, RokdeepcController,
};
use rokdeepc::trajectory::{build_hankel, partition, Dims, SignalTrajectory};

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn welford_matches_two_pass(values in prop::collection::vec(finite(-1e3, 1e3), 2..60)) {
        let s = MethodStats::from_values("m", 0.0, values.iter().map(|&v| Some(v)));
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        prop_assert!((s.mean - mean).abs() <= 1e-12 * scale);
        prop_assert!((s.std - var.sqrt()).abs() <= 1e-12 * scale.max(var.sqrt()));
        prop_assert_eq!(s.runs, values.len());
    }

    #[test]
    fn failed_runs_are_counted_not_averaged(values in prop::collection::vec(prop::option::of(finite(0.0, 10.0)), 1..30)) {
        let s = MethodStats::from_values("m", 0.0, values.iter().copied());
        let ok: Vec<f64> = values.iter().flatten().copied().collect();
        prop_assert_eq!(s.runs, ok.len());
        prop_assert_eq!(s.failures, values.len() - ok.len());
        if !ok.is_empty() {
            prop_assert!((s.mean - ok.iter().sum::<f64>() / ok.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_json_round_trips_exactly(values in prop::collection::vec(finite(-1e6, 1e6), 2..20), nv in finite(0.0, 1e-2)) {
        let rows: Vec<RunRow> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| RunRow { seed: i as u64, method: ["a", "b"][i % 2].into(), noise_variance: nv, value: Some(v), secondary: None })
            .collect();
        let s = BenchmarkSummary::from_rows("k", "m", None, "fp".into(), (0..values.len() as u64).collect(), rows);
        let back = BenchmarkSummary::from_json(&s.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(s.rows.len(), values.len());
    }

    #[test]
    fn projection_is_the_nearest_box_point(
        u in prop::collection::vec(finite(-5.0, 5.0), 1..8),
        lo in finite(-2.0, 0.0),
        width in finite(0.0, 3.0),
    ) {
        let b = BoxSet::uniform(u.len(), lo, lo + width).unwrap();
        let u = DVector::from_vec(u);
        let p = project_box(&u, &b).unwrap();
        prop_assert!(b.contains(&p, 0.0));
        prop_assert_eq!(&project_box(&p, &b).unwrap(), &p);
        for i in 0..u.len() {
            prop_assert_eq!(p[i], u[i].clamp(lo, lo + width));
        }
    }

    #[test]
    fn shifted_solution_keeps_the_tail(prev in prop::collection::vec(finite(-1.0, 1.0), 1..6), m in 1usize..3, k in 0usize..4) {
        let mut v = prev.clone();
        while v.len() % m != 0 {
            v.push(0.0);
        }
        let prev = DVector::from_vec(v);
        let n = prev.len() / m;
        let s = shift_solution(&prev, m, k);
        prop_assert_eq!(s.len(), prev.len());
        for t in 0..n {
            let src = (t + k).min(n - 1);
            for i in 0..m {
                prop_assert_eq!(s[t * m + i], prev[src * m + i]);
            }
        }
    }

    #[test]
    fn partition_reinterleaves_to_the_hankel_matrix(seed in any::<u64>(), t_ini in 1usize..4, n in 1usize..5, len in 12usize..30) {
        let mut plant = PolynomialSisoPlant::default();
        let (traj, _) = collect_data(&mut plant, &ExcitationSignal::white(0.0, 0.01, seed), len, &NoiseModel::none()).unwrap();
        let part = partition(&traj, t_ini, n).unwrap();
        let hu = build_hankel(traj.inputs(), t_ini + n).unwrap();
        let hy = build_hankel(traj.outputs(), t_ini + n).unwrap();
        prop_assert_eq!(part.columns(), len - t_ini - n + 1);
        prop_assert_eq!(&part.u_p, &hu.rows(0, t_ini).into_owned());
        prop_assert_eq!(&part.u_f, &hu.rows(t_ini, n).into_owned());
        prop_assert_eq!(&part.y_p, &hy.rows(0, t_ini).into_owned());
        prop_assert_eq!(&part.y_f, &hy.rows(t_ini, n).into_owned());
    }

    #[test]
    fn gaussian_gram_is_psd(seed in any::<u64>(), two_sigma_sq in finite(0.05, 5.0)) {
        let dims = Dims::new(1, 1, 1, 3).unwrap();
        let mut g = rokdeepc::rng::GaussianStream::standard(seed);
        let pts = DMatrix::from_fn(dims.regressor_len(), 20, |_, _| g.sample());
        let centers = CenterSet::new(pts, dims, DataSource::Perfect).unwrap();
        let k = Kernel::new(KernelSpec::Gaussian { two_sigma_sq }, dims).unwrap().gram(&centers).unwrap().k;
        let min = k.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-10, "{min}");
    }

    #[test]
    fn worst_case_bound_is_never_exceeded(seed in any::<u64>(), rho1 in finite(0.0, 2.0), rho2 in finite(0.0, 2.0), h in 1usize..8) {
        let mut g = rokdeepc::rng::GaussianStream::standard(seed);
        let v = DMatrix::from_fn(h, h, |_, _| g.sample());
        let y = DMatrix::from_fn(3, h, |_, _| g.sample());
        let k = DVector::from_fn(h, |_, _| g.sample());
        let r = DVector::from_fn(3, |_, _| g.sample());
        let gv = DVector::from_fn(h, |_, _| g.sample());
        let rep = worst_case_check(&v, &k, &y, &r, 10.0, &gv, rho1, rho2, 40, seed).unwrap();
        prop_assert!(rep.min_slack() >= -1e-10);
        prop_assert!(rep.attainment_gap() <= 1e-9);
    }

    #[test]
    fn config_parse_never_panics(text in "\\PC{0,200}") {
        let _ = RunConfig::from_toml_str(&text);
    }

    #[test]
    fn mutated_configs_are_rejected_or_valid(line in 0usize..100, junk in "[a-z0-9=\\[\\]{}.\"-]{0,12}", drop in any::<bool>()) {
        let base = RunConfig::example1().to_toml_string().unwrap();
        let lines: Vec<&str> = base.lines().collect();
        let i = line % lines.len();
        let mut edited: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        if drop {
            edited.remove(i);
        } else {
            edited[i] = junk.clone();
        }
        if let Ok(cfg) = RunConfig::from_toml_str(&edited.join("\n")) {
            prop_assert!(cfg.validate().is_ok());
        }
    }

    #[test]
    fn fingerprint_tracks_every_parameter(which in 0usize..6, factor in finite(1.001, 3.0)) {
        let a = RunConfig::example1();
        let mut b = a.clone();
        match which {
            0 => b.cost.q_y *= factor,
            1 => b.predictors.gamma *= factor,
            2 => b.controllers.robust.lambda_k_prime *= factor,
            3 => b.excitation.variance *= factor,
            4 => b.montecarlo.noise_variance *= factor,
            _ => b.experiment.seed += 1 + factor as u64,
        }
        prop_assert_ne!(a.fingerprint(), b.fingerprint());
    }
}

fn small_loop(
    seed: u64,
    noise: f64,
    bound: f64,
) -> (rokdeepc::harness::ClosedLoopRecord, CostWeights, BoxSet) {
    let mut plant = PolynomialSisoPlant::default();
    let (_, data): (SignalTrajectory, SignalTrajectory) = collect_data(
        &mut plant,
        &ExcitationSignal::white(0.0, 0.01, seed),
        60,
        &NoiseModel::new(noise, seed + 1).unwrap(),
    )
    .unwrap();
    let part = partition(&data, 1, 3).unwrap();
    let model =
        Arc::new(fit_kernel(&part, KernelSpec::Gaussian { two_sigma_sq: 0.4 }, 0.01).unwrap());
    let weights = CostWeights::default();
    let robust = RobustConfig {
        lambda_k_prime: 1e4,
        ..RobustConfig::default()
    };
    let u_box = BoxSet::uniform(3, -bound, bound).unwrap();
    let mut ctrl = RokdeepcController::new(model, weights, &robust, GdConfig::default())
        .unwrap()
        .with_constraints(Constraints {
            u_box: Some(u_box.clone()),
            y_box: None,
        });
    let r = make_reference(
        &ReferenceProfile {
            initial: 0.0,
            breakpoints: vec![rokdeepc::plant::Breakpoint { at: 3, value: 0.1 }],
        },
        15,
    )
    .unwrap();
    let reference = DMatrix::from_fn(1, r.len(), |_, t| r[t]);
    let opts = ClosedLoopOptions {
        k: 1,
        noise: NoiseModel::new(noise, seed + 2).unwrap(),
        weights,
        track_bound: false,
    };
    let mut plant = PolynomialSisoPlant::default();
    (
        closed_loop(&mut ctrl, &mut plant, &reference, &opts).unwrap(),
        weights,
        BoxSet::uniform(1, -bound, bound).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn closed_loop_records_are_consistent(seed in 0u64..1000, noise in finite(0.0, 2e-3), bound in finite(0.01, 0.2)) {
        let (rec, weights, u_box) = small_loop(seed, noise, bound);
        let steps = rec.steps();
        prop_assert_eq!(steps, 15);
        prop_assert_eq!(rec.measured.ncols(), steps);
        prop_assert_eq!(rec.clean.ncols(), steps);
        prop_assert_eq!(rec.reference.ncols(), steps);
        prop_assert_eq!(rec.solve_time_s.len(), steps);
        let (clean, measured) = rec.recompute_costs(&weights).unwrap();
        prop_assert_eq!(clean, rec.realized_cost);
        prop_assert_eq!(measured, rec.realized_cost_measured);
        for t in 0..steps {
            prop_assert!(u_box.contains(&rec.inputs.column(t).into_owned(), 0.0), "step {} input {}", t, rec.inputs[(0, t)]);
        }
    }
}
