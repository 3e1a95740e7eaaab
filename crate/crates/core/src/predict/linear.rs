use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::{check_len, Result};
use crate::linalg;
use crate::trajectory::{Dims, HankelPartition, InitialWindow};

/// `y = M col(u_ini, y_ini, u)` with `M = Y_F pinv(col(U_P, Y_P, U_F))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictorModel {
    #[serde(with = "crate::matrix_serde::matrix")]
    m: DMatrix<f64>,
    dims: Dims,
}

impl LinearPredictorModel {
    pub fn new(m: DMatrix<f64>, dims: Dims) -> Result<Self> {
        check_len("linear predictor rows", dims.y_len(), m.nrows())?;
        check_len("linear predictor columns", dims.regressor_len(), m.ncols())?;
        Ok(Self { m, dims })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }
}

pub fn fit_linear(partition: &HankelPartition) -> LinearPredictorModel {
    let x = partition.regressors();
    LinearPredictorModel {
        m: &partition.y_f * linalg::pinv(&x),
        dims: partition.dims,
    }
}

pub fn predict_linear(
    model: &LinearPredictorModel,
    window: &InitialWindow,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    window.check(&model.dims)?;
    check_len("future inputs", model.dims.u_len(), u.len())?;
    Ok(&model.m * window.regressor(u))
}

impl Predictor for LinearPredictorModel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn predict(&self, window: &InitialWindow, u: &DVector<f64>) -> Result<DVector<f64>> {
        predict_linear(self, window, u)
    }
}
