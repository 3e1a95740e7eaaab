//! Multi-step output predictors fitted from data: linear (pseudoinverse),
//! kernel ridge, and lifted Koopman/EDMD.

mod kernel_model;
mod koopman;
mod linear;

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::trajectory::{Dims, InitialWindow};

pub use kernel_model::{fit_kernel, predict_kernel, KernelPredictorModel};
pub use koopman::{fit_koopman, fit_koopman_window, KoopmanModel, LiftingDictionary};
pub use linear::{fit_linear, predict_linear, LinearPredictorModel};

/// An `N`-step predictor driven by the most recent `T_ini` samples.
pub trait Predictor {
    fn dims(&self) -> Dims;

    /// Outputs `y_1..y_N` for future inputs `u` (`mN` entries).
    fn predict(&self, window: &InitialWindow, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// Chain the predictor over consecutive `N`-blocks of `u_long`.
    fn rollout(&self, window: &InitialWindow, u_long: &DVector<f64>) -> Result<DVector<f64>> {
        rollout_blocks(self, window, u_long)
    }
}

/// Blockwise rollout: after each block the window is rebuilt from the
/// applied inputs and the predicted (not measured) outputs.
pub fn rollout_blocks<P: Predictor + ?Sized>(
    predictor: &P,
    window: &InitialWindow,
    u_long: &DVector<f64>,
) -> Result<DVector<f64>> {
    let dims = predictor.dims();
    let block = dims.u_len();
    if !u_long.len().is_multiple_of(block) {
        return Err(Error::InvalidArgument(format!(
            "rollout input length {} is not a multiple of mN={block}",
            u_long.len()
        )));
    }
    let n_blocks = u_long.len() / block;
    let mut out = DVector::zeros(n_blocks * dims.y_len());
    let mut w = window.clone();
    for b in 0..n_blocks {
        let u = u_long.rows(b * block, block).into_owned();
        let y = predictor.predict(&w, &u)?;
        out.rows_mut(b * dims.y_len(), dims.y_len()).copy_from(&y);
        w = w.advance(&u, &y, &dims);
    }
    Ok(out)
}

pub fn rollout<P: Predictor + ?Sized>(
    predictor: &P,
    window: &InitialWindow,
    u_long: &DVector<f64>,
) -> Result<DVector<f64>> {
    predictor.rollout(window, u_long)
}

/// Sum of squared output deviations.
pub fn prediction_error(predicted: &DVector<f64>, actual: &DVector<f64>) -> Result<f64> {
    check_len("prediction error operands", predicted.len(), actual.len())?;
    Ok(predicted
        .iter()
        .zip(actual.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// A fitted model in a form that can be written to and read back from JSON.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Linear(LinearPredictorModel),
    Kernel(Box<KernelPredictorModel>),
    Koopman(KoopmanModel),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
enum ModelDocument {
    Linear(LinearPredictorModel),
    Kernel(kernel_model::KernelModelDocument),
    Koopman(KoopmanModel),
}

impl FittedModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = match self {
            FittedModel::Linear(m) => ModelDocument::Linear(m.clone()),
            FittedModel::Kernel(m) => ModelDocument::Kernel(m.document()),
            FittedModel::Koopman(m) => ModelDocument::Koopman(m.clone()),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        Ok(match doc {
            ModelDocument::Linear(m) => FittedModel::Linear(m),
            ModelDocument::Kernel(d) => FittedModel::Kernel(Box::new(d.into_model()?)),
            ModelDocument::Koopman(m) => FittedModel::Koopman(m),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
