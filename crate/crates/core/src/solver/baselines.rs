//! Baseline controllers: regularized DeePC on the linear Hankel data and MPC
//! on a lifted (Koopman) linear model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::cost::{project_box, BoxSet, CostWeights};
use super::qp::solve_qp;
use super::robust::SolveResult;
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::predict::KoopmanModel;
use crate::trajectory::{Dims, HankelPartition, InitialWindow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepcConfig {
    pub lambda_g: f64,
    pub lambda_y: f64,
}

impl Default for DeepcConfig {
    fn default() -> Self {
        Self {
            lambda_g: 1.0,
            lambda_y: 1e5,
        }
    }
}

/// `min l(U_F g) + |Y_F g - r|_Q^2 + lambda_g |g|^2 + lambda_y |Y_P g - y_ini|^2`
/// subject to `U_P g = u_ini` and optional boxes on `U_F g`, `Y_F g`.
#[derive(Debug, Clone)]
pub struct DeepcData {
    partition: HankelPartition,
    weights: CostWeights,
    config: DeepcConfig,
    h_chol: Cholesky<f64, Dyn>,
}

impl DeepcData {
    pub fn new(
        partition: HankelPartition,
        weights: CostWeights,
        config: DeepcConfig,
    ) -> Result<Self> {
        weights.validate()?;
        if !(config.lambda_g > 0.0 && config.lambda_y >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "DeePC needs lambda_g > 0, lambda_y >= 0 (got {config:?})"
            )));
        }
        let dims = partition.dims;
        let r = weights.input_matrix(dims.m, dims.n);
        let (u_f, y_f, y_p) = (&partition.u_f, &partition.y_f, &partition.y_p);
        let mut h = u_f.transpose() * r * u_f
            + y_f.transpose() * y_f * weights.q_y
            + y_p.transpose() * y_p * config.lambda_y;
        for i in 0..h.nrows() {
            h[(i, i)] += config.lambda_g;
        }
        h *= 2.0;
        linalg::symmetrize(&mut h);
        let h_chol = linalg::cholesky_with_jitter(h, "DeePC Hessian")?;
        Ok(Self {
            partition,
            weights,
            config,
            h_chol,
        })
    }

    pub fn dims(&self) -> Dims {
        self.partition.dims
    }
}

pub fn deepc_solve(
    data: &DeepcData,
    reference: &DVector<f64>,
    window: &InitialWindow,
    u_box: Option<&BoxSet>,
    y_box: Option<&BoxSet>,
) -> Result<SolveResult> {
    let dims = data.dims();
    check_len("reference", dims.y_len(), reference.len())?;
    window.check(&dims)?;
    let part = &data.partition;
    let b = (part.y_f.transpose() * reference * data.weights.q_y
        + part.y_p.transpose() * &window.y_ini * data.config.lambda_y)
        * 2.0;
    let mut rows: Vec<DMatrix<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for (mat, bx) in [(&part.u_f, u_box), (&part.y_f, y_box)] {
        if let Some(bx) = bx {
            check_len("box", mat.nrows(), bx.len())?;
            for i in 0..mat.nrows() {
                if bx.upper()[i].is_finite() {
                    rows.push(mat.rows(i, 1).into_owned());
                    rhs.push(bx.upper()[i]);
                }
                if bx.lower()[i].is_finite() {
                    rows.push(-mat.rows(i, 1).into_owned());
                    rhs.push(-bx.lower()[i]);
                }
            }
        }
    }
    let h = part.columns();
    let mut g_mat = DMatrix::zeros(rows.len(), h);
    for (i, r) in rows.iter().enumerate() {
        g_mat.set_row(i, &r.row(0));
    }
    let g = solve_qp(
        &data.h_chol,
        &b,
        &part.u_p,
        &window.u_ini,
        &g_mat,
        &DVector::from_vec(rhs),
    )?;
    let u = &part.u_f * &g;
    let y = &part.y_f * &g;
    let e = &y - reference;
    let cost = data.weights.input_cost(&u, dims.m)
        + data.weights.q_y * e.norm_squared()
        + data.config.lambda_g * g.norm_squared()
        + data.config.lambda_y * (&part.y_p * &g - &window.y_ini).norm_squared();
    Ok(SolveResult {
        u_star: u,
        g_star: g,
        y_pred: y,
        cost_trace: vec![cost],
        iterations: 1,
        diagnostics: None,
    })
}

/// Condensed finite-horizon MPC over the lifted linear model, with the
/// `(u_ini, y_ini)` window as the state.
#[derive(Debug, Clone)]
pub struct KoopmanMpcData {
    model: KoopmanModel,
    dims: Dims,
    weights: CostWeights,
    phi: DMatrix<f64>,
    gamma: DMatrix<f64>,
    /// `2 (R + q_y Gamma^T Gamma)`
    hessian: DMatrix<f64>,
    h_chol: Cholesky<f64, Dyn>,
    lipschitz: f64,
}

impl KoopmanMpcData {
    pub fn new(model: KoopmanModel, weights: CostWeights) -> Result<Self> {
        weights.validate()?;
        let dims = model.dims.ok_or_else(|| {
            Error::InvalidArgument(
                "Koopman MPC needs a model fitted on input/output windows".into(),
            )
        })?;
        let (phi, gamma) = model.condensed(dims.n);
        let mut hessian =
            (weights.input_matrix(dims.m, dims.n) + gamma.transpose() * &gamma * weights.q_y) * 2.0;
        linalg::symmetrize(&mut hessian);
        let lipschitz = linalg::max_eigenvalue(&hessian);
        let h_chol = Cholesky::new(hessian.clone()).ok_or_else(|| {
            Error::Factorization("Koopman MPC Hessian is not positive definite".into())
        })?;
        Ok(Self {
            model,
            dims,
            weights,
            phi,
            gamma,
            hessian,
            h_chol,
            lipschitz,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn model(&self) -> &KoopmanModel {
        &self.model
    }
}

pub fn koopman_mpc_solve(
    data: &KoopmanMpcData,
    reference: &DVector<f64>,
    window: &InitialWindow,
    u_box: Option<&BoxSet>,
) -> Result<SolveResult> {
    let dims = data.dims;
    check_len("reference", dims.y_len(), reference.len())?;
    window.check(&dims)?;
    let z0 = data.model.dictionary.lift(window.past().as_slice());
    let free = &data.phi * &z0;
    let b = data.gamma.transpose() * (reference - &free) * (2.0 * data.weights.q_y);
    let cost = |u: &DVector<f64>| {
        let e = &free + &data.gamma * u - reference;
        data.weights.input_cost(u, dims.m) + data.weights.q_y * e.norm_squared()
    };
    let unconstrained = data.h_chol.solve(&b);
    let (u, trace, iterations) = match u_box {
        Some(bx) if !bx.contains(&unconstrained, 0.0) => {
            check_len("input box", dims.u_len(), bx.len())?;
            let step = 1.0 / data.lipschitz;
            let mut u = project_box(&unconstrained, bx)?;
            let mut trace = vec![cost(&u)];
            let mut it = 0;
            for i in 1..=20_000 {
                let grad = &data.hessian * &u - &b;
                let next = project_box(&(&u - grad * step), bx)?;
                let moved = (&next - &u).norm();
                u = next;
                trace.push(cost(&u));
                it = i;
                if moved <= 1e-13 * (1.0 + u.norm()) {
                    break;
                }
            }
            (u, trace, it)
        }
        _ => {
            let c = cost(&unconstrained);
            (unconstrained, vec![c], 1)
        }
    };
    let y = &free + &data.gamma * &u;
    Ok(SolveResult {
        u_star: u,
        g_star: z0,
        y_pred: y,
        cost_trace: trace,
        iterations,
        diagnostics: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{collect_data, ExcitationSignal, LtiPlant, NoiseModel, Plant};
    use crate::predict::{fit_koopman_window, LiftingDictionary};
    use crate::trajectory::{partition, SignalTrajectory};

    /// Data set, window and the plant positioned right after the window.
    fn lti_setup(
        n: usize,
        t_ini: usize,
        horizon: usize,
        seed: u64,
    ) -> (SignalTrajectory, InitialWindow, LtiPlant, Dims) {
        let mut plant = LtiPlant::random_stable(n, 1, 1, 0.7, seed);
        let (data, _) = collect_data(
            &mut plant,
            &ExcitationSignal::white(0.0, 1.0, seed + 1),
            120,
            &NoiseModel::none(),
        )
        .unwrap();
        let (test, _) = collect_data(
            &mut plant,
            &ExcitationSignal::white(0.0, 1.0, seed + 2),
            t_ini,
            &NoiseModel::none(),
        )
        .unwrap();
        let dims = Dims::new(1, 1, t_ini, horizon).unwrap();
        let window = InitialWindow::from_trajectory(&test, t_ini, &dims).unwrap();
        (data, window, plant, dims)
    }

    fn respond(plant: &LtiPlant, u: &DVector<f64>) -> DVector<f64> {
        let mut p = plant.clone();
        DVector::from_iterator(u.len(), u.iter().map(|&v| p.step(&[v]).unwrap()[0]))
    }

    #[test]
    fn deepc_prediction_is_the_true_response_on_lti_data() {
        let (data, window, plant, _) = lti_setup(2, 2, 4, 11);
        let cfg = DeepcConfig {
            lambda_g: 1e-8,
            lambda_y: 1e8,
        };
        let dd =
            DeepcData::new(partition(&data, 2, 4).unwrap(), CostWeights::default(), cfg).unwrap();
        let r = DVector::from_element(4, 0.5);
        let sol = deepc_solve(&dd, &r, &window, None, None).unwrap();
        assert!((&dd.partition.u_p * &sol.g_star - &window.u_ini).norm() < 1e-9);
        let truth = respond(&plant, &sol.u_star);
        assert!(
            (&sol.y_pred - &truth).norm() < 1e-5 * truth.norm(),
            "{} vs {}",
            sol.y_pred,
            truth
        );
    }

    #[test]
    fn deepc_matches_a_dense_kkt_solve() {
        let (data, window, _, _) = lti_setup(3, 3, 3, 12);
        let part = partition(&data, 3, 3).unwrap();
        let w = CostWeights::default();
        let cfg = DeepcConfig::default();
        let dd = DeepcData::new(part.clone(), w, cfg).unwrap();
        let r = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let sol = deepc_solve(&dd, &r, &window, None, None).unwrap();
        let h = part.columns();
        let e = part.u_p.nrows();
        let rm = w.input_matrix(1, 3);
        let hess = (part.u_f.transpose() * rm * &part.u_f
            + part.y_f.transpose() * &part.y_f * w.q_y
            + part.y_p.transpose() * &part.y_p * cfg.lambda_y
            + DMatrix::identity(h, h) * cfg.lambda_g)
            * 2.0;
        let mut kkt = DMatrix::zeros(h + e, h + e);
        kkt.view_mut((0, 0), (h, h)).copy_from(&hess);
        kkt.view_mut((0, h), (h, e))
            .copy_from(&part.u_p.transpose());
        kkt.view_mut((h, 0), (e, h)).copy_from(&part.u_p);
        let mut rhs = DVector::zeros(h + e);
        rhs.rows_mut(0, h).copy_from(
            &((part.y_f.transpose() * &r * w.q_y
                + part.y_p.transpose() * &window.y_ini * cfg.lambda_y)
                * 2.0),
        );
        rhs.rows_mut(h, e).copy_from(&window.u_ini);
        let oracle = kkt.lu().solve(&rhs).unwrap().rows(0, h).into_owned();
        assert!((&sol.g_star - &oracle).norm() <= 1e-6 * oracle.norm());
    }

    #[test]
    fn deepc_respects_input_bounds() {
        let (data, window, _, _) = lti_setup(2, 2, 4, 13);
        let dd = DeepcData::new(
            partition(&data, 2, 4).unwrap(),
            CostWeights::default(),
            DeepcConfig::default(),
        )
        .unwrap();
        let r = DVector::from_element(4, 5.0);
        let bx = BoxSet::uniform(4, -0.2, 0.2).unwrap();
        let sol = deepc_solve(&dd, &r, &window, Some(&bx), None).unwrap();
        assert!(bx.contains(&sol.u_star, 1e-8));
    }

    fn koopman_setup(seed: u64) -> (KoopmanMpcData, InitialWindow, LtiPlant) {
        let (data, window, plant, dims) = lti_setup(2, 2, 4, seed);
        let model =
            fit_koopman_window(&data, dims, &LiftingDictionary::linear(dims.past_len())).unwrap();
        (
            KoopmanMpcData::new(model, CostWeights::default()).unwrap(),
            window,
            plant,
        )
    }

    fn fd_grad(
        data: &KoopmanMpcData,
        window: &InitialWindow,
        r: &DVector<f64>,
        u: &DVector<f64>,
    ) -> DVector<f64> {
        let state = window.past();
        let cost = |u: &DVector<f64>| {
            let y = data.model().predict_horizon(state.as_slice(), u).unwrap();
            data.weights.input_cost(u, 1) + data.weights.q_y * (y - r).norm_squared()
        };
        DVector::from_fn(u.len(), |j, _| {
            let h = 1e-6;
            let mut a = u.clone();
            a[j] += h;
            let mut b = u.clone();
            b[j] -= h;
            (cost(&a) - cost(&b)) / (2.0 * h)
        })
    }

    #[test]
    fn koopman_mpc_is_exact_and_stationary_for_lti_plants() {
        let (data, window, plant) = koopman_setup(14);
        let r = DVector::from_element(4, 0.3);
        let sol = koopman_mpc_solve(&data, &r, &window, None).unwrap();
        let truth = respond(&plant, &sol.u_star);
        assert!((&sol.y_pred - &truth).norm() < 1e-8 * truth.norm());
        assert!(fd_grad(&data, &window, &r, &sol.u_star).norm() < 1e-4);
    }

    #[test]
    fn boxed_koopman_mpc_satisfies_the_projection_conditions() {
        let (data, window, _) = koopman_setup(15);
        let r = DVector::from_element(4, 3.0);
        let bx = BoxSet::uniform(4, -0.1, 0.1).unwrap();
        let sol = koopman_mpc_solve(&data, &r, &window, Some(&bx)).unwrap();
        assert!(bx.contains(&sol.u_star, 0.0));
        assert!(sol.cost_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let grad = fd_grad(&data, &window, &r, &sol.u_star);
        let scale = 1e-4 * (1.0 + grad.norm());
        for (i, &g) in grad.iter().enumerate() {
            let u = sol.u_star[i];
            if u >= 0.1 - 1e-12 {
                assert!(g <= scale, "upper at {i}: {g}");
            } else if u <= -0.1 + 1e-12 {
                assert!(g >= -scale, "lower at {i}: {g}");
            } else {
                assert!(g.abs() <= scale, "interior at {i}: {g}");
            }
        }
    }

    #[test]
    fn koopman_mpc_needs_window_dims() {
        let (data, _, _, dims) = lti_setup(2, 2, 4, 16);
        let mut model =
            fit_koopman_window(&data, dims, &LiftingDictionary::linear(dims.past_len())).unwrap();
        model.dims = None;
        assert!(KoopmanMpcData::new(model, CostWeights::default()).is_err());
    }
}
