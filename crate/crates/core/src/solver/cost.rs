use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Weights of `l(u) = r_u sum |u_t|^2 + r_delta sum_{t>=2} |u_t - u_{t-1}|^2`
/// and of the tracking term with `Q = q_y I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub r_u: f64,
    #[serde(default)]
    pub r_delta: f64,
    pub q_y: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            r_u: 1.0,
            r_delta: 1e2,
            q_y: 1e3,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_u > 0.0 && self.q_y > 0.0 && self.r_delta >= 0.0;
        if !ok || !(self.r_u.is_finite() && self.q_y.is_finite() && self.r_delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cost weights need r_u > 0, q_y > 0, r_delta >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Input cost over stacked `u` with `m` entries per sample.
    pub fn input_cost(&self, u: &DVector<f64>, m: usize) -> f64 {
        let mut c = self.r_u * u.norm_squared();
        for t in m..u.len() {
            let d = u[t] - u[t - m];
            c += self.r_delta * d * d;
        }
        c
    }

    pub fn input_cost_grad(&self, u: &DVector<f64>, m: usize) -> DVector<f64> {
        let mut g = u * (2.0 * self.r_u);
        for t in m..u.len() {
            let d = 2.0 * self.r_delta * (u[t] - u[t - m]);
            g[t] += d;
            g[t - m] -= d;
        }
        g
    }

    /// `R` with `l(u) = u^T R u`.
    pub fn input_matrix(&self, m: usize, n: usize) -> DMatrix<f64> {
        let len = m * n;
        let mut r = DMatrix::identity(len, len) * self.r_u;
        for t in m..len {
            r[(t, t)] += self.r_delta;
            r[(t - m, t - m)] += self.r_delta;
            r[(t, t - m)] -= self.r_delta;
            r[(t - m, t)] -= self.r_delta;
        }
        r
    }

    /// `|v|_Q = sqrt(q_y) |v|`.
    pub fn q_norm(&self, v: &DVector<f64>) -> f64 {
        self.q_y.sqrt() * v.norm()
    }
}

/// Weights plus the reference over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub weights: CostWeights,
    pub reference: DVector<f64>,
}

impl CostSpec {
    pub fn new(weights: CostWeights, reference: DVector<f64>) -> Result<Self> {
        weights.validate()?;
        if reference.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("reference must be finite".into()));
        }
        Ok(Self { weights, reference })
    }
}

/// Elementwise bounds; infinite entries are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("box bounds", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument(
                "box needs lower <= upper elementwise".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// The same scalar bounds on every entry.
    pub fn uniform(len: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; len], vec![upper; len])
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.len() == self.len()
            && v.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= l - tol && *x <= u + tol)
    }
}

/// Elementwise clamp onto the box.
pub fn project_box(u: &DVector<f64>, b: &BoxSet) -> Result<DVector<f64>> {
    check_len("projected vector", b.len(), u.len())?;
    Ok(DVector::from_iterator(
        u.len(),
        u.iter()
            .zip(b.lower.iter().zip(&b.upper))
            .map(|(x, (l, h))| x.clamp(*l, *h)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_cost_and_gradient() {
        let w = CostWeights {
            r_u: 1.5,
            r_delta: 3.0,
            q_y: 10.0,
        };
        let u = DVector::from_vec(vec![0.2, -0.1, 0.4, 0.3, 0.0, 0.5]);
        for m in [1, 2, 3] {
            let r = w.input_matrix(m, 6 / m);
            let quad = (u.transpose() * &r * &u)[0];
            assert!((quad - w.input_cost(&u, m)).abs() < 1e-14);
            assert!((&r * &u * 2.0 - w.input_cost_grad(&u, m)).norm() < 1e-14);
        }
        let plain = CostWeights { r_delta: 0.0, ..w };
        assert_eq!(plain.input_cost_grad(&u, 1), &u * 3.0);
    }

    #[test]
    fn projection() {
        let b = BoxSet::uniform(3, -1.0, 1.0).unwrap();
        let inside = DVector::from_vec(vec![0.1, -0.5, 0.9]);
        assert_eq!(project_box(&inside, &b).unwrap(), inside);
        let above = DVector::from_element(3, 5.0);
        assert_eq!(
            project_box(&above, &b).unwrap(),
            DVector::from_element(3, 1.0)
        );
        let mixed = DVector::from_vec(vec![3.0, -7.0, 0.2]);
        let once = project_box(&mixed, &b).unwrap();
        assert_eq!(project_box(&once, &b).unwrap(), once);
        assert!(BoxSet::uniform(2, 1.0, 0.0).is_err());
        let open = BoxSet::uniform(2, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert_eq!(
            project_box(&above.rows(0, 2).into_owned(), &open).unwrap(),
            DVector::from_element(2, 5.0)
        );
    }
}
