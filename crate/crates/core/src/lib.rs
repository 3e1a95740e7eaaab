//! Data-driven predictive control with kernel predictors.
//!
//! The crate builds predictors directly from recorded input/output data
//! (block-Hankel matrices), solves the robust kernelized DeePC problem with a
//! projected-gradient scheme whose inner step is closed form, and ships the
//! baselines (regularized DeePC, certainty-equivalence kernel MPC, lifted
//! Koopman MPC), simulated plants and a closed-loop benchmark harness.
//!
//! ```
//! use rokdeepc::plant::{collect_data, ExcitationSignal, NoiseModel, PolynomialSisoPlant};
//! use rokdeepc::predict::{fit_kernel, Predictor};
//! use rokdeepc::kernel::KernelSpec;
//! use rokdeepc::trajectory::{partition, InitialWindow};
//!
//! let mut plant = PolynomialSisoPlant::default();
//! let (_, measured) = collect_data(
//!     &mut plant,
//!     &ExcitationSignal::white(0.0, 0.01, 1),
//!     200,
//!     &NoiseModel::none(),
//! )
//! .unwrap();
//! let part = partition(&measured, 1, 5).unwrap();
//! let model = fit_kernel(&part, KernelSpec::Gaussian { two_sigma_sq: 0.4 }, 0.01).unwrap();
//! let window = InitialWindow::zeros(&model.dims());
//! let y = model.predict(&window, &nalgebra::DVector::zeros(5)).unwrap();
//! assert_eq!(y.len(), 5);
//! ```

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod plant;
pub mod predict;
pub mod rng;
pub mod solver;
pub mod trajectory;
pub mod verify;

mod matrix_serde;

pub use error::{Error, Result};
pub use trajectory::{Dims, HankelPartition, InitialWindow, SignalTrajectory};
