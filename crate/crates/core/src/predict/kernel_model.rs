use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::{check_len, Error, Result};
use crate::kernel::{CenterSet, DataSource, Kernel, KernelSpec};
use crate::linalg;
use crate::trajectory::{Dims, HankelPartition, InitialWindow};

/// Kernel ridge predictor `y = Y_F (K + gamma I)^-1 k(u_ini, y_ini, u)`.
#[derive(Debug, Clone)]
pub struct KernelPredictorModel {
    kernel: Kernel,
    centers: CenterSet,
    y_f: DMatrix<f64>,
    gamma: f64,
    /// `K + gamma I`
    v: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `Y_F (K + gamma I)^-1`
    w: DMatrix<f64>,
}

pub fn fit_kernel(
    partition: &HankelPartition,
    spec: KernelSpec,
    gamma: f64,
) -> Result<KernelPredictorModel> {
    let centers = CenterSet::from_partition(partition, DataSource::Noisy);
    KernelPredictorModel::from_parts(spec, centers, partition.y_f.clone(), gamma)
}

impl KernelPredictorModel {
    pub fn from_parts(
        spec: KernelSpec,
        centers: CenterSet,
        y_f: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let dims = centers.dims();
        check_len("Y_F rows", dims.y_len(), y_f.nrows())?;
        check_len("Y_F columns", centers.len(), y_f.ncols())?;
        let kernel = Kernel::new(spec, dims)?;
        let mut v = kernel.gram(&centers)?.k;
        for i in 0..v.nrows() {
            v[(i, i)] += gamma;
        }
        let chol = linalg::cholesky_with_jitter(v.clone(), "regularized Gram matrix")?;
        let w = chol.solve(&y_f.transpose()).transpose();
        Ok(Self {
            kernel,
            centers,
            y_f,
            gamma,
            v,
            chol,
            w,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn centers(&self) -> &CenterSet {
        &self.centers
    }

    pub fn y_f(&self) -> &DMatrix<f64> {
        &self.y_f
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Regularized Gram matrix `K + gamma I`.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Cached coefficient matrix `Y_F (K + gamma I)^-1`.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn factor(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn columns(&self) -> usize {
        self.centers.len()
    }

    pub fn kernel_vector(&self, window: &InitialWindow, u: &DVector<f64>) -> Result<DVector<f64>> {
        window.check(&self.dims())?;
        check_len("future inputs", self.dims().u_len(), u.len())?;
        self.kernel
            .kernel_vector(&self.centers, &window.regressor(u))
    }

    pub fn jacobian_u(&self, window: &InitialWindow, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        window.check(&self.dims())?;
        check_len("future inputs", self.dims().u_len(), u.len())?;
        self.kernel
            .kernel_jacobian_u(&self.centers, &window.regressor(u))
    }

    /// Same centers and Gram matrix, different `Y_F`.
    pub fn with_outputs(&self, y_f: DMatrix<f64>) -> Result<Self> {
        check_len("Y_F rows", self.y_f.nrows(), y_f.nrows())?;
        check_len("Y_F columns", self.y_f.ncols(), y_f.ncols())?;
        let w = self.chol.solve(&y_f.transpose()).transpose();
        Ok(Self {
            y_f,
            w,
            ..self.clone()
        })
    }

    pub(crate) fn document(&self) -> KernelModelDocument {
        KernelModelDocument {
            spec: self.kernel.spec(),
            gamma: self.gamma,
            centers: self.centers.clone(),
            y_f: self.y_f.clone(),
        }
    }
}

pub fn predict_kernel(
    model: &KernelPredictorModel,
    window: &InitialWindow,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(&model.w * model.kernel_vector(window, u)?)
}

impl Predictor for KernelPredictorModel {
    fn dims(&self) -> Dims {
        self.kernel.dims()
    }

    fn predict(&self, window: &InitialWindow, u: &DVector<f64>) -> Result<DVector<f64>> {
        predict_kernel(self, window, u)
    }
}

/// Serialized form; the factorization is recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct KernelModelDocument {
    spec: KernelSpec,
    gamma: f64,
    centers: CenterSet,
    #[serde(with = "crate::matrix_serde::matrix")]
    y_f: DMatrix<f64>,
}

impl KernelModelDocument {
    pub(crate) fn into_model(self) -> Result<KernelPredictorModel> {
        KernelPredictorModel::from_parts(self.spec, self.centers, self.y_f, self.gamma)
    }
}
