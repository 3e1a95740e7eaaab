//! Lifted linear (EDMD) model `z+ = A z + B u`, `y = C z+`, with `z = psi(x)`.
//!
//! The input enters linearly and is never lifted, so products of state and
//! input cannot be represented.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::rng::GaussianStream;
use crate::trajectory::{Dims, InitialWindow, SignalTrajectory};

/// Dictionary: the state itself, optional quadratic monomials `x_i x_j`
/// (`i <= j`), thin-plate functions `r^2 log r` around fixed centers and an
/// optional constant, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingDictionary {
    pub state_dim: usize,
    pub quadratic: bool,
    pub constant: bool,
    /// One thin-plate center per column (`state_dim` rows).
    #[serde(with = "crate::matrix_serde::matrix")]
    pub centers: DMatrix<f64>,
}

impl LiftingDictionary {
    /// Identity lifting.
    pub fn linear(state_dim: usize) -> Self {
        Self {
            state_dim,
            quadratic: false,
            constant: false,
            centers: DMatrix::zeros(state_dim, 0),
        }
    }

    /// Linear + quadratic terms, `n_rbf` thin-plate functions with centers
    /// uniform in `[-half_width, half_width]^state_dim`, and a constant.
    pub fn thin_plate(state_dim: usize, n_rbf: usize, half_width: f64, seed: u64) -> Self {
        let mut g = GaussianStream::standard(seed);
        let centers = DMatrix::from_fn(state_dim, n_rbf, |_, _| g.uniform(-half_width, half_width));
        Self {
            state_dim,
            quadratic: true,
            constant: true,
            centers,
        }
    }

    pub fn len(&self) -> usize {
        let d = self.state_dim;
        d + if self.quadratic { d * (d + 1) / 2 } else { 0 }
            + self.centers.ncols()
            + usize::from(self.constant)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lift(&self, x: &[f64]) -> DVector<f64> {
        let mut z = Vec::with_capacity(self.len());
        z.extend_from_slice(x);
        if self.quadratic {
            for i in 0..x.len() {
                for j in i..x.len() {
                    z.push(x[i] * x[j]);
                }
            }
        }
        for c in self.centers.column_iter() {
            let r2: f64 = x.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            z.push(thin_plate(r2));
        }
        if self.constant {
            z.push(1.0);
        }
        DVector::from_vec(z)
    }

    fn lift_columns(&self, xs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.len(), xs.ncols());
        for (j, x) in xs.column_iter().enumerate() {
            z.set_column(j, &self.lift(x.as_slice()));
        }
        z
    }
}

/// `r^2 log r` as a function of `r^2`, continued by 0 at the center.
fn thin_plate(r2: f64) -> f64 {
    if r2 > 0.0 {
        0.5 * r2 * r2.ln()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopmanModel {
    pub dictionary: LiftingDictionary,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde::matrix")]
    pub c: DMatrix<f64>,
    /// Set when the state is the `(u_ini, y_ini)` window, enabling [`Predictor`].
    pub dims: Option<Dims>,
}

/// Least-squares fit of the lifted dynamics from sample columns. `C` maps the
/// lifted next state to the trailing `p` coordinates of the next state.
pub fn fit_koopman(
    states: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
    next_states: &DMatrix<f64>,
    dictionary: &LiftingDictionary,
    p: usize,
) -> Result<KoopmanModel> {
    if dictionary.is_empty() {
        return Err(Error::InvalidArgument("empty lifting dictionary".into()));
    }
    check_len("state dimension", dictionary.state_dim, states.nrows())?;
    check_len(
        "next-state dimension",
        dictionary.state_dim,
        next_states.nrows(),
    )?;
    check_len("input sample count", states.ncols(), inputs.ncols())?;
    check_len(
        "next-state sample count",
        states.ncols(),
        next_states.ncols(),
    )?;
    if p > dictionary.state_dim {
        return Err(Error::dim(
            "output coordinates within state",
            dictionary.state_dim,
            p,
        ));
    }
    let nz = dictionary.len();
    let m = inputs.nrows();
    let z = dictionary.lift_columns(states);
    let z_next = dictionary.lift_columns(next_states);
    let mut reg = DMatrix::zeros(nz + m, states.ncols());
    reg.rows_mut(0, nz).copy_from(&z);
    reg.rows_mut(nz, m).copy_from(inputs);
    let ab = &z_next * linalg::pinv(&reg);
    let y_next = next_states.rows(dictionary.state_dim - p, p).into_owned();
    let c = y_next * linalg::pinv(&z_next);
    Ok(KoopmanModel {
        dictionary: dictionary.clone(),
        a: ab.columns(0, nz).into_owned(),
        b: ab.columns(nz, m).into_owned(),
        c,
        dims: None,
    })
}

/// Fit with state `x_t = (u_ini, y_ini)` taken from sliding windows of a trajectory.
pub fn fit_koopman_window(
    traj: &SignalTrajectory,
    dims: Dims,
    dictionary: &LiftingDictionary,
) -> Result<KoopmanModel> {
    check_len(
        "dictionary state dimension",
        dims.past_len(),
        dictionary.state_dim,
    )?;
    if traj.len() <= dims.t_ini {
        return Err(Error::dim(
            "trajectory length > T_ini",
            dims.t_ini + 1,
            traj.len(),
        ));
    }
    let samples = traj.len() - dims.t_ini;
    let mut states = DMatrix::zeros(dims.past_len(), samples);
    let mut next = DMatrix::zeros(dims.past_len(), samples);
    let mut inputs = DMatrix::zeros(dims.m, samples);
    let mut prev = InitialWindow::from_trajectory(traj, dims.t_ini, &dims)?;
    for s in 0..samples {
        let t = s + dims.t_ini;
        let u = traj.inputs().column(t).into_owned();
        let y = traj.outputs().column(t).into_owned();
        let nxt = prev.advance(&u, &y, &dims);
        states.set_column(s, &prev.past());
        next.set_column(s, &nxt.past());
        inputs.set_column(s, &u);
        prev = nxt;
    }
    let mut model = fit_koopman(&states, &inputs, &next, dictionary, dims.p)?;
    model.dims = Some(dims);
    Ok(model)
}

impl KoopmanModel {
    pub fn lifted_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Outputs `y_1..y_steps` from state `x_0` under stacked inputs `u_0..u_{steps-1}`.
    pub fn predict_horizon(&self, state: &[f64], inputs: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("Koopman state", self.dictionary.state_dim, state.len())?;
        let m = self.input_dim();
        if m == 0 || !inputs.len().is_multiple_of(m) {
            return Err(Error::InvalidArgument(format!(
                "input length {} is not a multiple of m={m}",
                inputs.len()
            )));
        }
        let steps = inputs.len() / m;
        let p = self.output_dim();
        let mut z = self.dictionary.lift(state);
        let mut y = DVector::zeros(p * steps);
        for t in 0..steps {
            z = &self.a * z + &self.b * inputs.rows(t * m, m);
            y.rows_mut(t * p, p).copy_from(&(&self.c * &z));
        }
        Ok(y)
    }

    /// Condensed horizon map `y = Phi z_0 + Gamma u` for `steps` steps.
    pub fn condensed(&self, steps: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let (nz, m, p) = (self.lifted_dim(), self.input_dim(), self.output_dim());
        let mut phi = DMatrix::zeros(p * steps, nz);
        let mut gamma = DMatrix::zeros(p * steps, m * steps);
        // powers[k] = C A^k
        let mut ca = self.c.clone();
        let mut powers = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            powers.push(ca.clone());
            ca = &ca * &self.a;
        }
        for t in 0..steps {
            phi.rows_mut(t * p, p).copy_from(&powers[t + 1]);
            for j in 0..=t {
                gamma
                    .view_mut((t * p, j * m), (p, m))
                    .copy_from(&(&powers[t - j] * &self.b));
            }
        }
        (phi, gamma)
    }

    fn window_dims(&self) -> Result<Dims> {
        self.dims.ok_or_else(|| {
            Error::InvalidArgument("Koopman model was not fitted on input/output windows".into())
        })
    }
}

impl Predictor for KoopmanModel {
    fn dims(&self) -> Dims {
        self.dims
            .expect("Koopman predictor requires window dimensions")
    }

    fn predict(&self, window: &InitialWindow, u: &DVector<f64>) -> Result<DVector<f64>> {
        let dims = self.window_dims()?;
        window.check(&dims)?;
        check_len("future inputs", dims.u_len(), u.len())?;
        self.predict_horizon(window.past().as_slice(), u)
    }

    /// Lifts the initial state once and propagates linearly over the whole horizon.
    fn rollout(&self, window: &InitialWindow, u_long: &DVector<f64>) -> Result<DVector<f64>> {
        let dims = self.window_dims()?;
        window.check(&dims)?;
        if !u_long.len().is_multiple_of(dims.u_len()) {
            return Err(Error::InvalidArgument(format!(
                "rollout input length {} is not a multiple of mN={}",
                u_long.len(),
                dims.u_len()
            )));
        }
        self.predict_horizon(window.past().as_slice(), u_long)
    }
}
