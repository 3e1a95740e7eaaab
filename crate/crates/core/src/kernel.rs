//! Kernel functions over regressors `x = col(u_ini, y_ini, u)`, Gram
//! matrices, kernel vectors and Jacobians with respect to the future-input
//! block `u` (the trailing `mN` coordinates).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::trajectory::{Dims, HankelPartition};

/// Kernel family and parameters.
///
/// Serialized as `{ kind = "...", params = { ... } }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum KernelSpec {
    /// `(x^T y + offset)^degree`
    Polynomial { offset: f64, degree: u32 },
    /// `exp(-|x - y|^2 / two_sigma_sq)`
    Gaussian { two_sigma_sq: f64 },
    /// `exp(x^T y / scale)`
    Exponential { scale: f64 },
    /// Gaussian on the past block plus the inner product of the `u` blocks.
    Hybrid { two_sigma_sq: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidArgument(format!(
                "kernel parameter {what} must be positive and finite, got {v}"
            )))
        };
        match *self {
            KernelSpec::Polynomial { offset, degree } => {
                if degree == 0 {
                    return Err(Error::InvalidArgument(
                        "polynomial kernel degree must be >= 1".into(),
                    ));
                }
                if !offset.is_finite() {
                    return Err(Error::InvalidArgument(
                        "polynomial kernel offset must be finite".into(),
                    ));
                }
                Ok(())
            }
            KernelSpec::Gaussian { two_sigma_sq } | KernelSpec::Hybrid { two_sigma_sq } => {
                if two_sigma_sq > 0.0 && two_sigma_sq.is_finite() {
                    Ok(())
                } else {
                    bad("two_sigma_sq", two_sigma_sq)
                }
            }
            KernelSpec::Exponential { scale } => {
                if scale > 0.0 && scale.is_finite() {
                    Ok(())
                } else {
                    bad("scale", scale)
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Exponential { .. } => "exponential",
            KernelSpec::Hybrid { .. } => "hybrid",
        }
    }

    /// Whether the kernel is linear in the future-input block.
    pub fn is_linear_in_u(&self) -> bool {
        matches!(self, KernelSpec::Hybrid { .. })
    }
}

/// A kernel bound to problem dimensions, so the `u` block is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    spec: KernelSpec,
    dims: Dims,
}

impl Kernel {
    pub fn new(spec: KernelSpec, dims: Dims) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, dims })
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    fn regressor_len(&self) -> usize {
        self.dims.regressor_len()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_len("kernel argument", x.len(), y.len())?;
        if let KernelSpec::Hybrid { .. } = self.spec {
            check_len("hybrid kernel argument", self.regressor_len(), x.len())?;
        }
        Ok(self.eval_unchecked(x, y))
    }

    fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.spec {
            KernelSpec::Polynomial { offset, degree } => (dot(x, y) + offset).powi(degree as i32),
            KernelSpec::Gaussian { two_sigma_sq } => (-sq_dist(x, y) / two_sigma_sq).exp(),
            KernelSpec::Exponential { scale } => (dot(x, y) / scale).exp(),
            KernelSpec::Hybrid { two_sigma_sq } => {
                let past = self.dims.past_len();
                (-sq_dist(&x[..past], &y[..past]) / two_sigma_sq).exp()
                    + dot(&x[past..], &y[past..])
            }
        }
    }

    /// Gram matrix over a center set, symmetrized as `(K + K^T) / 2`.
    pub fn gram(&self, centers: &CenterSet) -> Result<GramMatrix> {
        check_len(
            "center length",
            self.regressor_len(),
            centers.points.nrows(),
        )?;
        let h = centers.len();
        if h == 0 {
            return Err(Error::InvalidArgument("gram: empty center set".into()));
        }
        let mut k = DMatrix::zeros(h, h);
        for j in 0..h {
            let xj = centers.points.column(j);
            for i in j..h {
                let v = self.eval_unchecked(centers.points.column(i).as_slice(), xj.as_slice());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        linalg::symmetrize(&mut k);
        Ok(GramMatrix {
            k,
            source: centers.source,
        })
    }

    /// `col(K(x_1, q), ..., K(x_H, q))`.
    pub fn kernel_vector(&self, centers: &CenterSet, query: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("kernel query", centers.points.nrows(), query.len())?;
        check_len("kernel query", self.regressor_len(), query.len())?;
        let q = query.as_slice();
        Ok(DVector::from_iterator(
            centers.len(),
            centers
                .points
                .column_iter()
                .map(|c| self.eval_unchecked(c.as_slice(), q)),
        ))
    }

    /// Row `j` is the gradient of `K(x_j, .)` at `query`, restricted to the `u` block.
    pub fn kernel_jacobian_u(
        &self,
        centers: &CenterSet,
        query: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        check_len("kernel query", centers.points.nrows(), query.len())?;
        check_len("kernel query", self.regressor_len(), query.len())?;
        let past = self.dims.past_len();
        let nu = self.dims.u_len();
        let q = query.as_slice();
        let mut jac = DMatrix::zeros(centers.len(), nu);
        for (j, c) in centers.points.column_iter().enumerate() {
            let x = c.as_slice();
            let xu = &x[past..];
            let qu = &q[past..];
            match self.spec {
                KernelSpec::Polynomial { offset, degree } => {
                    let d = degree as i32;
                    let coef = f64::from(degree) * (dot(x, q) + offset).powi(d - 1);
                    for i in 0..nu {
                        jac[(j, i)] = coef * xu[i];
                    }
                }
                KernelSpec::Gaussian { two_sigma_sq } => {
                    let coef = self.eval_unchecked(x, q) * 2.0 / two_sigma_sq;
                    for i in 0..nu {
                        jac[(j, i)] = coef * (xu[i] - qu[i]);
                    }
                }
                KernelSpec::Exponential { scale } => {
                    let coef = self.eval_unchecked(x, q) / scale;
                    for i in 0..nu {
                        jac[(j, i)] = coef * xu[i];
                    }
                }
                KernelSpec::Hybrid { .. } => {
                    for i in 0..nu {
                        jac[(j, i)] = xu[i];
                    }
                }
            }
        }
        Ok(jac)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Whether the data behind a matrix came from clean or noise-corrupted outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Perfect,
    #[default]
    Noisy,
}

/// Kernel centers stored column-wise (`regressor_len x H_c`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSet {
    #[serde(with = "crate::matrix_serde::matrix")]
    points: DMatrix<f64>,
    dims: Dims,
    #[serde(default)]
    source: DataSource,
}

impl CenterSet {
    pub fn new(points: DMatrix<f64>, dims: Dims, source: DataSource) -> Result<Self> {
        check_len("center length", dims.regressor_len(), points.nrows())?;
        Ok(Self {
            points,
            dims,
            source,
        })
    }

    pub fn from_partition(partition: &HankelPartition, source: DataSource) -> Self {
        Self {
            points: partition.regressors(),
            dims: partition.dims,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn source(&self) -> DataSource {
        self.source
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub k: DMatrix<f64>,
    pub source: DataSource,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;

    fn dims() -> Dims {
        Dims::new(1, 1, 1, 5).unwrap()
    }

    fn all_specs() -> [KernelSpec; 4] {
        [
            KernelSpec::Polynomial {
                offset: 1.0,
                degree: 10,
            },
            KernelSpec::Gaussian { two_sigma_sq: 0.4 },
            KernelSpec::Exponential { scale: 0.2 },
            KernelSpec::Hybrid { two_sigma_sq: 0.4 },
        ]
    }

    fn random_centers(h: usize, scale: f64, seed: u64) -> CenterSet {
        let mut g = GaussianStream::new(seed, 0.0, scale * scale);
        let d = dims();
        CenterSet::new(
            DMatrix::from_fn(d.regressor_len(), h, |_, _| g.sample()),
            d,
            DataSource::Noisy,
        )
        .unwrap()
    }

    #[test]
    fn trivial_values() {
        let d = dims();
        let z = vec![0.0; 7];
        let x: Vec<f64> = (0..7).map(|i| 0.1 * i as f64).collect();
        let g = Kernel::new(KernelSpec::Gaussian { two_sigma_sq: 0.4 }, d).unwrap();
        assert_eq!(g.eval(&x, &x).unwrap(), 1.0);
        let p = Kernel::new(
            KernelSpec::Polynomial {
                offset: 1.0,
                degree: 10,
            },
            d,
        )
        .unwrap();
        assert_eq!(p.eval(&z, &z).unwrap(), 1.0);
        let e = Kernel::new(KernelSpec::Exponential { scale: 0.2 }, d).unwrap();
        assert_eq!(e.eval(&z, &x).unwrap(), 1.0);
        assert!(e.eval(&z, &x[..3]).is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KernelSpec::Gaussian { two_sigma_sq: 0.0 }
            .validate()
            .is_err());
        assert!(KernelSpec::Exponential { scale: -1.0 }.validate().is_err());
        assert!(KernelSpec::Polynomial {
            offset: 1.0,
            degree: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn gram_basics() {
        let d = dims();
        let k = Kernel::new(KernelSpec::Gaussian { two_sigma_sq: 0.4 }, d).unwrap();
        let one = random_centers(1, 0.3, 1);
        assert_eq!(k.gram(&one).unwrap().k, DMatrix::from_element(1, 1, 1.0));

        let base = random_centers(3, 0.3, 2);
        let mut pts = DMatrix::zeros(7, 4);
        pts.columns_mut(0, 3).copy_from(base.points());
        pts.column_mut(3).copy_from(&base.points().column(1));
        let dup = CenterSet::new(pts, d, DataSource::Noisy).unwrap();
        let g = k.gram(&dup).unwrap().k;
        assert_eq!(g.row(1), g.row(3));
        assert!(linalg::numerical_rank(&g) < 4);

        let g20 = k.gram(&random_centers(20, 0.5, 3)).unwrap().k;
        assert!(linalg::min_eigenvalue(&g20) >= -1e-10);
    }

    #[test]
    fn kernel_vector_matches_eval_loop() {
        let d = dims();
        let centers = random_centers(15, 0.3, 4);
        let mut g = GaussianStream::standard(5);
        let q = DVector::from_fn(7, |_, _| 0.3 * g.sample());
        for spec in all_specs() {
            let k = Kernel::new(spec, d).unwrap();
            let v = k.kernel_vector(&centers, &q).unwrap();
            for j in 0..centers.len() {
                assert_eq!(
                    v[j],
                    k.eval(centers.points().column(j).as_slice(), q.as_slice())
                        .unwrap()
                );
            }
        }
        let e = Kernel::new(KernelSpec::Exponential { scale: 0.2 }, d).unwrap();
        let ones = e.kernel_vector(&centers, &DVector::zeros(7)).unwrap();
        assert!(ones.iter().all(|&v| v == 1.0));
        let gk = Kernel::new(KernelSpec::Gaussian { two_sigma_sq: 0.4 }, d).unwrap();
        let at_center = gk
            .kernel_vector(&centers, &centers.points().column(6).into_owned())
            .unwrap();
        assert_eq!(at_center[6], 1.0);
    }

    #[test]
    fn jacobian_special_cases() {
        let d = dims();
        let centers = random_centers(6, 0.3, 6);
        let h = Kernel::new(KernelSpec::Hybrid { two_sigma_sq: 0.4 }, d).unwrap();
        let q1 = DVector::from_element(7, 0.2);
        let q2 = DVector::from_element(7, -1.3);
        let j1 = h.kernel_jacobian_u(&centers, &q1).unwrap();
        assert_eq!(j1, h.kernel_jacobian_u(&centers, &q2).unwrap());
        assert_eq!(j1, centers.points().rows(2, 5).transpose());

        let g = Kernel::new(KernelSpec::Gaussian { two_sigma_sq: 0.4 }, d).unwrap();
        let jc = g
            .kernel_jacobian_u(&centers, &centers.points().column(2).into_owned())
            .unwrap();
        assert!(jc.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let d = dims();
        let centers = random_centers(8, 0.3, 7);
        let mut g = GaussianStream::standard(8);
        for spec in all_specs() {
            let k = Kernel::new(spec, d).unwrap();
            for _ in 0..10 {
                let q = DVector::from_fn(7, |_, _| 0.3 * g.sample());
                let jac = k.kernel_jacobian_u(&centers, &q).unwrap();
                for i in 0..5 {
                    let h = 1e-6;
                    let mut qp = q.clone();
                    qp[2 + i] += h;
                    let mut qm = q.clone();
                    qm[2 + i] -= h;
                    let fd = (k.kernel_vector(&centers, &qp).unwrap()
                        - k.kernel_vector(&centers, &qm).unwrap())
                        / (2.0 * h);
                    let col = jac.column(i);
                    let err = (&fd - col).norm() / (1.0 + col.norm());
                    assert!(err <= 1e-5, "{spec:?}: err {err}");
                }
            }
        }
    }

    #[test]
    fn spec_serializes_with_kind_and_params() {
        let s = KernelSpec::Gaussian { two_sigma_sq: 0.4 };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"gaussian","params":{"two_sigma_sq":0.4}}"#);
        let back: KernelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
