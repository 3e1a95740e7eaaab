//! Simulated plants, excitation and measurement noise, and reference profiles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::GaussianStream;
use crate::trajectory::SignalTrajectory;

pub trait Plant: Send {
    fn m(&self) -> usize;
    fn p(&self) -> usize;

    /// Apply `u_t`, return the noiseless `y_t` and advance the state.
    fn step(&mut self, u: &[f64]) -> Result<DVector<f64>>;

    /// Return to the configured initial state.
    fn reset(&mut self);

    fn clone_box(&self) -> Box<dyn Plant>;
}

impl Clone for Box<dyn Plant> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

fn check_input(u: &[f64], m: usize) -> Result<()> {
    check_len("plant input", m, u.len())?;
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite plant input {u:?}"
        )));
    }
    Ok(())
}

/// `y_t = 4 y_{t-1} u_{t-1} - 0.5 y_{t-1} + 2 u_{t-1} u_t + u_t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolynomialSisoPlant {
    pub y_prev: f64,
    pub u_prev: f64,
    #[serde(skip)]
    initial: (f64, f64),
}

impl PolynomialSisoPlant {
    pub fn with_state(y_prev: f64, u_prev: f64) -> Self {
        Self {
            y_prev,
            u_prev,
            initial: (y_prev, u_prev),
        }
    }

    pub fn output(y_prev: f64, u_prev: f64, u: f64) -> f64 {
        4.0 * y_prev * u_prev - 0.5 * y_prev + 2.0 * u_prev * u + u
    }
}

impl Plant for PolynomialSisoPlant {
    fn m(&self) -> usize {
        1
    }

    fn p(&self) -> usize {
        1
    }

    fn step(&mut self, u: &[f64]) -> Result<DVector<f64>> {
        check_input(u, 1)?;
        let y = Self::output(self.y_prev, self.u_prev, u[0]);
        self.y_prev = y;
        self.u_prev = u[0];
        Ok(DVector::from_element(1, y))
    }

    fn reset(&mut self) {
        (self.y_prev, self.u_prev) = self.initial;
    }

    fn clone_box(&self) -> Box<dyn Plant> {
        Box::new(*self)
    }
}

/// `x+ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub x: DVector<f64>,
    x0: DVector<f64>,
}

impl LtiPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        check_len("A columns", n, a.ncols())?;
        check_len("B rows", n, b.nrows())?;
        check_len("C columns", n, c.ncols())?;
        check_len("D rows", c.nrows(), d.nrows())?;
        check_len("D columns", b.ncols(), d.ncols())?;
        check_len("initial state", n, x0.len())?;
        Ok(Self {
            a,
            b,
            c,
            d,
            x: x0.clone(),
            x0,
        })
    }

    /// Random system with spectral radius `radius`, generic (hence
    /// controllable and observable) `B` and `C`, and zero `D`.
    pub fn random_stable(n: usize, m: usize, p: usize, radius: f64, seed: u64) -> Self {
        let mut g = GaussianStream::standard(seed);
        let mut a = DMatrix::from_fn(n, n, |_, _| g.sample());
        let rho = spectral_radius(&a);
        if rho > 0.0 {
            a *= radius / rho;
        }
        let b = DMatrix::from_fn(n, m, |_, _| g.sample());
        let c = DMatrix::from_fn(p, n, |_, _| g.sample());
        Self::new(a, b, c, DMatrix::zeros(p, m), DVector::zeros(n))
            .expect("consistent random dimensions")
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

impl Plant for LtiPlant {
    fn m(&self) -> usize {
        self.b.ncols()
    }

    fn p(&self) -> usize {
        self.c.nrows()
    }

    fn step(&mut self, u: &[f64]) -> Result<DVector<f64>> {
        check_input(u, self.m())?;
        let u = DVector::from_column_slice(u);
        let y = &self.c * &self.x + &self.d * &u;
        self.x = &self.a * &self.x + &self.b * u;
        Ok(y)
    }

    fn reset(&mut self) {
        self.x = self.x0.clone();
    }

    fn clone_box(&self) -> Box<dyn Plant> {
        Box::new(self.clone())
    }
}

/// Additive white Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(variance: f64, seed: u64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be >= 0, got {variance}"
            )));
        }
        Ok(Self { variance, seed })
    }

    pub fn none() -> Self {
        Self {
            variance: 0.0,
            seed: 0,
        }
    }

    pub fn stream(&self) -> GaussianStream {
        GaussianStream::new(self.seed, 0.0, self.variance)
    }
}

/// White Gaussian excitation input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSignal {
    pub mean: f64,
    pub variance: f64,
    pub seed: u64,
}

impl ExcitationSignal {
    pub fn white(mean: f64, variance: f64, seed: u64) -> Self {
        Self {
            mean,
            variance,
            seed,
        }
    }

    pub fn stream(&self) -> GaussianStream {
        GaussianStream::new(self.seed, self.mean, self.variance)
    }
}

/// Drive the plant from its current state; returns `(clean, measured)`.
/// Inputs are recorded without noise.
pub fn collect_data(
    plant: &mut dyn Plant,
    excitation: &ExcitationSignal,
    t: usize,
    noise: &NoiseModel,
) -> Result<(SignalTrajectory, SignalTrajectory)> {
    if t == 0 {
        return Err(Error::InvalidArgument("data length T must be >= 1".into()));
    }
    let (m, p) = (plant.m(), plant.p());
    let mut exc = excitation.stream();
    let mut nz = noise.stream();
    let mut u = DMatrix::zeros(m, t);
    let mut y = DMatrix::zeros(p, t);
    let mut y_meas = DMatrix::zeros(p, t);
    for k in 0..t {
        let uk: Vec<f64> = (0..m).map(|_| exc.sample()).collect();
        let yk = plant.step(&uk)?;
        u.column_mut(k).copy_from_slice(&uk);
        y.set_column(k, &yk);
        for i in 0..p {
            y_meas[(i, k)] = yk[i] + nz.sample();
        }
    }
    Ok((
        SignalTrajectory::new(u.clone(), y)?,
        SignalTrajectory::new(u, y_meas)?,
    ))
}

/// Static voltage-dependent load around `U_0 = 1`: returns `(P, Q)` in per unit.
pub fn load_power(delta_u: f64) -> Result<(f64, f64)> {
    let u = 1.0 + delta_u;
    if !(u > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "voltage must be positive, got U = {u}"
        )));
    }
    let p = 0.3 + 0.2 * u.powi(3) + 10.0 * delta_u * delta_u + 5.0 * delta_u;
    let q = 0.04 + 8.0 * delta_u * delta_u + 2.0 * delta_u;
    Ok((p, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    /// First step at which `value` applies.
    pub at: usize,
    pub value: f64,
}

/// Piecewise-constant reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    #[serde(default)]
    pub initial: f64,
    #[serde(default)]
    pub breakpoints: Vec<Breakpoint>,
}

impl ReferenceProfile {
    pub fn constant(value: f64) -> Self {
        Self {
            initial: value,
            breakpoints: Vec::new(),
        }
    }

    /// 0 until step 50, 0.1 until step 150, then 0.05 (2 ms sampling).
    pub fn example1() -> Self {
        Self {
            initial: 0.0,
            breakpoints: vec![
                Breakpoint { at: 50, value: 0.1 },
                Breakpoint {
                    at: 150,
                    value: 0.05,
                },
            ],
        }
    }
}

pub fn make_reference(profile: &ReferenceProfile, steps: usize) -> Result<DVector<f64>> {
    if profile.breakpoints.windows(2).any(|w| w[1].at <= w[0].at) {
        return Err(Error::InvalidArgument(
            "reference breakpoints must be strictly increasing".into(),
        ));
    }
    let mut r = DVector::from_element(steps, profile.initial);
    for bp in &profile.breakpoints {
        for t in bp.at.min(steps)..steps {
            r[t] = bp.value;
        }
    }
    Ok(r)
}
