//! Dense convex QP `min 1/2 x^T H x - b^T x  s.t.  E x = e, G x <= h` for a
//! positive definite `H` given by its Cholesky factor.
//!
//! The dual `min 1/2 l^T S l - t^T l` with `S = A H^-1 A^T`, `A = [E; G]`,
//! `t = A H^-1 b - [e; h]` and `l_G >= 0` is solved with a Lawson-Hanson
//! active set. It is small (one multiplier per constraint).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_len, Error, Result};
use crate::linalg;

const FEAS_TOL: f64 = 1e-7;

pub fn solve_qp(
    h_chol: &Cholesky<f64, Dyn>,
    b: &DVector<f64>,
    e_mat: &DMatrix<f64>,
    e_vec: &DVector<f64>,
    g_mat: &DMatrix<f64>,
    h_vec: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = b.len();
    check_len("QP equality columns", n, e_mat.ncols())?;
    check_len("QP inequality columns", n, g_mat.ncols())?;
    check_len("QP equality rows", e_mat.nrows(), e_vec.len())?;
    check_len("QP inequality rows", g_mat.nrows(), h_vec.len())?;
    let (ne, ni) = (e_mat.nrows(), g_mat.nrows());
    let k = ne + ni;
    let x0 = h_chol.solve(b);
    if k == 0 {
        return Ok(x0);
    }
    let mut a = DMatrix::zeros(k, n);
    a.rows_mut(0, ne).copy_from(e_mat);
    a.rows_mut(ne, ni).copy_from(g_mat);
    let mut c = DVector::zeros(k);
    c.rows_mut(0, ne).copy_from(e_vec);
    c.rows_mut(ne, ni).copy_from(h_vec);

    let hinv_at = h_chol.solve(&a.transpose());
    let s = &a * &hinv_at;
    let t = &a * &x0 - &c;
    let scale = 1.0 + t.amax() + s.amax();
    let tol = 1e-12 * scale;

    let mut passive: Vec<bool> = (0..k).map(|i| i < ne).collect();
    let mut lam = DVector::zeros(k);
    if ne > 0 {
        lam = subproblem(&s, &t, &passive);
    }
    // Contradictory constraints make the dual unbounded and the active set
    // cycle; the primal feasibility check below then reports infeasibility.
    let max_outer = 3 * k + 20;
    let mut stalled = false;
    'outer: for outer in 0.. {
        if outer > max_outer {
            stalled = true;
            break;
        }
        let w = &t - &s * &lam;
        let candidate = (ne..k)
            .filter(|&i| !passive[i] && w[i] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        let mut inner = 0;
        loop {
            inner += 1;
            if inner > k + 5 {
                stalled = true;
                break 'outer;
            }
            let z = subproblem(&s, &t, &passive);
            let blocking: Vec<usize> = (ne..k).filter(|&i| passive[i] && z[i] <= 0.0).collect();
            if blocking.is_empty() {
                lam = z;
                break;
            }
            let alpha = blocking
                .iter()
                .map(|&i| {
                    let denom = lam[i] - z[i];
                    if denom > 0.0 {
                        lam[i] / denom
                    } else {
                        0.0
                    }
                })
                .fold(f64::INFINITY, f64::min);
            lam += (&z - &lam) * alpha;
            for i in ne..k {
                if passive[i] && lam[i] <= tol {
                    passive[i] = false;
                    lam[i] = 0.0;
                }
            }
        }
    }

    let x = x0 - hinv_at * lam;
    let eq_res = e_mat * &x - e_vec;
    for i in 0..ne {
        if eq_res[i].abs() > FEAS_TOL * (1.0 + e_vec[i].abs()) {
            return Err(Error::Infeasible(format!(
                "equality constraint {i} cannot be met (residual {:.3e})",
                eq_res[i]
            )));
        }
    }
    let ineq = g_mat * &x - h_vec;
    for i in 0..ni {
        if ineq[i] > FEAS_TOL * (1.0 + h_vec[i].abs()) {
            return Err(Error::Infeasible(format!(
                "inequality constraint {i} violated by {:.3e}",
                ineq[i]
            )));
        }
    }
    if stalled {
        return Err(Error::Solver("QP active set did not terminate".into()));
    }
    Ok(x)
}

/// Minimize over the passive coordinates with the rest pinned at zero.
fn subproblem(s: &DMatrix<f64>, t: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&i| passive[i]).collect();
    let mut z = DVector::zeros(t.len());
    if idx.is_empty() {
        return z;
    }
    let spp = s.select_rows(&idx).select_columns(&idx);
    let tp = DVector::from_iterator(idx.len(), idx.iter().map(|&i| t[i]));
    let sol = linalg::pinv(&spp) * tp;
    for (k, &i) in idx.iter().enumerate() {
        z[i] = sol[k];
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chol(h: &DMatrix<f64>) -> Cholesky<f64, Dyn> {
        Cholesky::new(h.clone()).unwrap()
    }

    /// Enumerate all active sets of a tiny inequality QP.
    fn brute_force(
        h: &DMatrix<f64>,
        b: &DVector<f64>,
        g: &DMatrix<f64>,
        hv: &DVector<f64>,
    ) -> DVector<f64> {
        let n = b.len();
        let m = g.nrows();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0..(1u32 << m) {
            let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = act.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(h);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(b);
            for (r, &i) in act.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + r, j)] = g[(i, j)];
                    kkt[(j, n + r)] = g[(i, j)];
                }
                rhs[n + r] = hv[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                continue;
            };
            let x = sol.rows(0, n).into_owned();
            if (g * &x - hv).iter().any(|&v| v > 1e-9) {
                continue;
            }
            let f = 0.5 * (x.transpose() * h * &x)[0] - b.dot(&x);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, x));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn matches_enumeration_on_three_variables() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DVector::from_vec(vec![3.0, -2.0, 4.0]);
        let g = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
        );
        let hv = DVector::from_vec(vec![0.3, 0.2, 1.0, 1.2]);
        let x = solve_qp(
            &chol(&h),
            &b,
            &DMatrix::zeros(0, 3),
            &DVector::zeros(0),
            &g,
            &hv,
        )
        .unwrap();
        let oracle = brute_force(&h, &b, &g, &hv);
        assert!((x - oracle).norm() < 1e-9);
    }

    #[test]
    fn inactive_constraints_give_unconstrained_minimum() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let g = DMatrix::identity(2, 2);
        let x = solve_qp(
            &chol(&h),
            &b,
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &g,
            &DVector::from_element(2, 10.0),
        )
        .unwrap();
        assert!((x - DVector::from_vec(vec![0.5, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn equality_and_infeasibility() {
        let h = DMatrix::identity(2, 2);
        let b = DVector::zeros(2);
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = solve_qp(
            &chol(&h),
            &b,
            &e,
            &DVector::from_element(1, 2.0),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
        )
        .unwrap();
        assert!((x - DVector::from_element(2, 1.0)).norm() < 1e-12);

        let e2 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let err = solve_qp(
            &chol(&h),
            &b,
            &e2,
            &DVector::from_vec(vec![1.0, 3.0]),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
        );
        assert!(matches!(err, Err(Error::Infeasible(_))));

        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let err = solve_qp(
            &chol(&h),
            &b,
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            &g,
            &DVector::from_vec(vec![-1.0, -1.0]),
        );
        assert!(matches!(err, Err(Error::Infeasible(_))));
    }
}
