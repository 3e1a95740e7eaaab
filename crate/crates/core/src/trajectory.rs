//! Recorded input/output trajectories, block-Hankel data matrices and the
//! past/future partition used by every data-driven predictor in the crate.
//!
//! Storage is time-major: column `t` of `inputs` is `u_t`, column `t` of
//! `outputs` is `y_t`. A Hankel column is therefore a contiguous window of
//! samples stacked sample by sample.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;

/// Problem dimensions shared by predictors and controllers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub p: usize,
    pub t_ini: usize,
    pub n: usize,
}

impl Dims {
    pub fn new(m: usize, p: usize, t_ini: usize, n: usize) -> Result<Self> {
        if m == 0 || p == 0 || t_ini == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "dimensions must be positive (m={m}, p={p}, t_ini={t_ini}, n={n})"
            )));
        }
        Ok(Self { m, p, t_ini, n })
    }

    /// Length of `col(u_ini, y_ini)`.
    pub fn past_len(&self) -> usize {
        (self.m + self.p) * self.t_ini
    }

    /// Length of the future input block `u`.
    pub fn u_len(&self) -> usize {
        self.m * self.n
    }

    /// Length of the predicted output block `y`.
    pub fn y_len(&self) -> usize {
        self.p * self.n
    }

    /// Length of the kernel regressor `col(u_ini, y_ini, u)`.
    pub fn regressor_len(&self) -> usize {
        self.past_len() + self.u_len()
    }

    pub fn depth(&self) -> usize {
        self.t_ini + self.n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrajectory {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
}

impl SignalTrajectory {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "trajectory must have at least one sample".into(),
            ));
        }
        if inputs.nrows() == 0 || outputs.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "trajectory needs m >= 1 and p >= 1".into(),
            ));
        }
        check_len("trajectory sample count", inputs.ncols(), outputs.ncols())?;
        Ok(Self { inputs, outputs })
    }

    /// Build from per-sample rows, e.g. `inputs[t]` is `u_t`.
    pub fn from_samples(inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<Self> {
        check_len("trajectory sample count", inputs.len(), outputs.len())?;
        let t = inputs.len();
        let m = inputs.first().map_or(0, Vec::len);
        let p = outputs.first().map_or(0, Vec::len);
        let mut u = DMatrix::zeros(m, t);
        let mut y = DMatrix::zeros(p, t);
        for (k, (ui, yi)) in inputs.iter().zip(outputs).enumerate() {
            check_len("input sample", m, ui.len())?;
            check_len("output sample", p, yi.len())?;
            u.column_mut(k).copy_from_slice(ui);
            y.column_mut(k).copy_from_slice(yi);
        }
        Self::new(u, y)
    }

    pub fn m(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn p(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    /// Window `col(u_{t0}, ..., u_{t0+len-1})` of the inputs.
    pub fn input_window(&self, t0: usize, len: usize) -> DVector<f64> {
        stack_window(&self.inputs, t0, len)
    }

    pub fn output_window(&self, t0: usize, len: usize) -> DVector<f64> {
        stack_window(&self.outputs, t0, len)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.len() * 48);
        let _ = writeln!(out, "{},{}", self.m(), self.p());
        for t in 0..self.len() {
            let fields: Vec<String> = self
                .inputs
                .column(t)
                .iter()
                .chain(self.outputs.column(t).iter())
                .map(|v| format!("{v:.16e}"))
                .collect();
            let _ = writeln!(out, "{}", fields.join(","));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    /// Parse the CSV layout: header `m,p`, then one row per sample with
    /// `u_1..u_m,y_1..y_p`. Row numbers in errors are 1-based file lines.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            row: 1,
            message: "missing `m,p` header".into(),
        })?;
        let dims: Vec<&str> = header.split(',').map(str::trim).collect();
        let parse_dim = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or(Error::Parse {
                    row: 1,
                    message: format!("header must be two positive integers `m,p`, got `{header}`"),
                })
        };
        if dims.len() != 2 {
            return Err(Error::Parse {
                row: 1,
                message: format!("header must be `m,p`, got `{header}`"),
            });
        }
        let (m, p) = (parse_dim(dims[0])?, parse_dim(dims[1])?);

        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (idx, line) in lines {
            let row = idx + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != m + p {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {} fields, found {}", m + p, fields.len()),
                });
            }
            let mut values = Vec::with_capacity(m + p);
            for (col, f) in fields.iter().enumerate() {
                let v: f64 = f.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("field {} is not a number: `{f}`", col + 1),
                })?;
                values.push(v);
            }
            outputs.push(values.split_off(m));
            inputs.push(values);
        }
        if inputs.is_empty() {
            return Err(Error::Parse {
                row: 2,
                message: "no samples after header".into(),
            });
        }
        Self::from_samples(&inputs, &outputs)
    }
}

fn stack_window(series: &DMatrix<f64>, t0: usize, len: usize) -> DVector<f64> {
    let q = series.nrows();
    let mut v = DVector::zeros(q * len);
    for k in 0..len {
        v.rows_mut(k * q, q).copy_from(&series.column(t0 + k));
    }
    v
}

/// Block-Hankel matrix of depth `depth`: block `(i, j)` is sample `i + j`.
pub fn build_hankel(series: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>> {
    let (q, t) = series.shape();
    if depth == 0 || depth > t {
        return Err(Error::InvalidArgument(format!(
            "Hankel depth {depth} must be in 1..={t} (series length)"
        )));
    }
    let cols = t - depth + 1;
    let mut h = DMatrix::zeros(q * depth, cols);
    for j in 0..cols {
        for i in 0..depth {
            h.view_mut((i * q, j), (q, 1))
                .copy_from(&series.column(i + j));
        }
    }
    Ok(h)
}

/// The four data blocks `U_P, Y_P, U_F, Y_F`, each with `H_c` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPartition {
    pub u_p: DMatrix<f64>,
    pub y_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    pub y_f: DMatrix<f64>,
    pub dims: Dims,
}

impl HankelPartition {
    pub fn columns(&self) -> usize {
        self.u_p.ncols()
    }

    /// `col(U_P, Y_P, U_F)`: one regressor column per data window.
    pub fn regressors(&self) -> DMatrix<f64> {
        let d = self.dims;
        let h = self.columns();
        let mut x = DMatrix::zeros(d.regressor_len(), h);
        x.rows_mut(0, d.m * d.t_ini).copy_from(&self.u_p);
        x.rows_mut(d.m * d.t_ini, d.p * d.t_ini)
            .copy_from(&self.y_p);
        x.rows_mut(d.past_len(), d.u_len()).copy_from(&self.u_f);
        x
    }

    /// `col(U_P, Y_P, U_F, Y_F)`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let d = self.dims;
        let mut s = DMatrix::zeros(d.regressor_len() + d.y_len(), self.columns());
        s.rows_mut(0, d.regressor_len())
            .copy_from(&self.regressors());
        s.rows_mut(d.regressor_len(), d.y_len())
            .copy_from(&self.y_f);
        s
    }

    /// Regressor of data window `j` (0-based): `col(U_P[:j], Y_P[:j], U_F[:j])`.
    pub fn column_sample(&self, j: usize) -> Result<DVector<f64>> {
        if j >= self.columns() {
            return Err(Error::InvalidArgument(format!(
                "column index {j} out of range 0..{}",
                self.columns()
            )));
        }
        let d = self.dims;
        let mut x = DVector::zeros(d.regressor_len());
        x.rows_mut(0, d.m * d.t_ini).copy_from(&self.u_p.column(j));
        x.rows_mut(d.m * d.t_ini, d.p * d.t_ini)
            .copy_from(&self.y_p.column(j));
        x.rows_mut(d.past_len(), d.u_len())
            .copy_from(&self.u_f.column(j));
        Ok(x)
    }
}

/// Split the depth-`(t_ini + n)` Hankel matrices of a trajectory into past and future blocks.
pub fn partition(traj: &SignalTrajectory, t_ini: usize, n: usize) -> Result<HankelPartition> {
    let dims = Dims::new(traj.m(), traj.p(), t_ini, n)?;
    if t_ini + n > traj.len() {
        return Err(Error::dim(
            "partition: T_ini + N <= T",
            traj.len(),
            t_ini + n,
        ));
    }
    let hu = build_hankel(traj.inputs(), t_ini + n)?;
    let hy = build_hankel(traj.outputs(), t_ini + n)?;
    let (m, p) = (dims.m, dims.p);
    Ok(HankelPartition {
        u_p: hu.rows(0, m * t_ini).into_owned(),
        u_f: hu.rows(m * t_ini, m * n).into_owned(),
        y_p: hy.rows(0, p * t_ini).into_owned(),
        y_f: hy.rows(p * t_ini, p * n).into_owned(),
        dims,
    })
}

/// Numerical rank of `col(U_P, Y_P, U_F, Y_F)`.
pub fn excitation_rank(partition: &HankelPartition) -> usize {
    linalg::numerical_rank(&partition.stacked())
}

/// The most recent `T_ini` inputs and outputs, stacked oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialWindow {
    pub u_ini: DVector<f64>,
    pub y_ini: DVector<f64>,
}

impl InitialWindow {
    pub fn new(u_ini: DVector<f64>, y_ini: DVector<f64>, dims: &Dims) -> Result<Self> {
        check_len("u_ini", dims.m * dims.t_ini, u_ini.len())?;
        check_len("y_ini", dims.p * dims.t_ini, y_ini.len())?;
        Ok(Self { u_ini, y_ini })
    }

    pub fn zeros(dims: &Dims) -> Self {
        Self {
            u_ini: DVector::zeros(dims.m * dims.t_ini),
            y_ini: DVector::zeros(dims.p * dims.t_ini),
        }
    }

    /// Window ending just before sample `t` of a trajectory.
    pub fn from_trajectory(traj: &SignalTrajectory, t: usize, dims: &Dims) -> Result<Self> {
        if t < dims.t_ini || t > traj.len() {
            return Err(Error::InvalidArgument(format!(
                "window end {t} needs t_ini={} samples before it within length {}",
                dims.t_ini,
                traj.len()
            )));
        }
        Ok(Self {
            u_ini: traj.input_window(t - dims.t_ini, dims.t_ini),
            y_ini: traj.output_window(t - dims.t_ini, dims.t_ini),
        })
    }

    pub fn check(&self, dims: &Dims) -> Result<()> {
        check_len("u_ini", dims.m * dims.t_ini, self.u_ini.len())?;
        check_len("y_ini", dims.p * dims.t_ini, self.y_ini.len())
    }

    /// `col(u_ini, y_ini, u)`.
    pub fn regressor(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.u_ini.len() + self.y_ini.len() + u.len());
        x.rows_mut(0, self.u_ini.len()).copy_from(&self.u_ini);
        x.rows_mut(self.u_ini.len(), self.y_ini.len())
            .copy_from(&self.y_ini);
        x.rows_mut(self.u_ini.len() + self.y_ini.len(), u.len())
            .copy_from(u);
        x
    }

    pub fn past(&self) -> DVector<f64> {
        self.regressor(&DVector::zeros(0))
    }

    /// Slide the window forward over newly applied inputs and outputs
    /// (`inputs`/`outputs` are stacked sample by sample).
    pub fn advance(&self, inputs: &DVector<f64>, outputs: &DVector<f64>, dims: &Dims) -> Self {
        let shift = |old: &DVector<f64>, new: &DVector<f64>, q: usize| {
            let mut all = DVector::zeros(old.len() + new.len());
            all.rows_mut(0, old.len()).copy_from(old);
            all.rows_mut(old.len(), new.len()).copy_from(new);
            all.rows(all.len() - q * dims.t_ini, q * dims.t_ini)
                .into_owned()
        };
        Self {
            u_ini: shift(&self.u_ini, inputs, dims.m),
            y_ini: shift(&self.y_ini, outputs, dims.p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;

    fn random_traj(m: usize, p: usize, t: usize, seed: u64) -> SignalTrajectory {
        let mut g = GaussianStream::standard(seed);
        let u = DMatrix::from_fn(m, t, |_, _| g.sample());
        let y = DMatrix::from_fn(p, t, |_, _| g.sample());
        SignalTrajectory::new(u, y).unwrap()
    }

    #[test]
    fn hankel_of_ramp() {
        let s = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let h = build_hankel(&s, 2).unwrap();
        assert_eq!(
            h,
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0])
        );
    }

    #[test]
    fn hankel_of_constant_is_constant() {
        let s = DMatrix::from_element(2, 9, 3.5);
        let h = build_hankel(&s, 4).unwrap();
        assert_eq!(h.shape(), (8, 6));
        assert!(h.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn hankel_columns_are_windows() {
        let traj = random_traj(2, 1, 20, 1);
        let h = build_hankel(traj.inputs(), 3).unwrap();
        for j in 0..h.ncols() {
            // brute-force window extraction
            let mut w = Vec::new();
            for t in j..j + 3 {
                for r in 0..2 {
                    w.push(traj.inputs()[(r, t)]);
                }
            }
            assert_eq!(h.column(j).iter().copied().collect::<Vec<_>>(), w);
        }
    }

    #[test]
    fn hankel_depth_errors() {
        let s = DMatrix::from_element(1, 3, 1.0);
        assert!(build_hankel(&s, 4).is_err());
        assert!(build_hankel(&s, 0).is_err());
    }

    #[test]
    fn partition_sizes() {
        let traj = random_traj(1, 1, 600, 2);
        let part = partition(&traj, 1, 5).unwrap();
        assert_eq!(part.columns(), 595);
        assert_eq!(part.u_p.nrows(), 1);
        assert_eq!(part.y_f.nrows(), 5);

        let part = partition(&random_traj(1, 2, 6, 3), 1, 5).unwrap();
        assert_eq!(part.columns(), 1);
        assert!(partition(&random_traj(1, 1, 5, 3), 1, 5).is_err());
    }

    #[test]
    fn partition_restacks_to_hankel() {
        let traj = random_traj(2, 3, 40, 4);
        let part = partition(&traj, 3, 4).unwrap();
        let hu = build_hankel(traj.inputs(), 7).unwrap();
        let hy = build_hankel(traj.outputs(), 7).unwrap();
        let mut u = DMatrix::zeros(14, part.columns());
        u.rows_mut(0, 6).copy_from(&part.u_p);
        u.rows_mut(6, 8).copy_from(&part.u_f);
        let mut y = DMatrix::zeros(21, part.columns());
        y.rows_mut(0, 9).copy_from(&part.y_p);
        y.rows_mut(9, 12).copy_from(&part.y_f);
        assert_eq!(u, hu);
        assert_eq!(y, hy);
    }

    #[test]
    fn column_sample_windows() {
        let traj = random_traj(1, 1, 30, 5);
        let part = partition(&traj, 2, 3).unwrap();
        assert_eq!(part.column_sample(0).unwrap().len(), (1 + 1) * 2 + 3);
        for j in [0, part.columns() - 1] {
            let x = part.column_sample(j).unwrap();
            let expect = [
                traj.inputs()[(0, j)],
                traj.inputs()[(0, j + 1)],
                traj.outputs()[(0, j)],
                traj.outputs()[(0, j + 1)],
                traj.inputs()[(0, j + 2)],
                traj.inputs()[(0, j + 3)],
                traj.inputs()[(0, j + 4)],
            ];
            assert_eq!(x.as_slice(), &expect);
        }
        assert!(part.column_sample(part.columns()).is_err());
    }

    #[test]
    fn zero_trajectory_has_rank_zero() {
        let traj = SignalTrajectory::new(DMatrix::zeros(1, 50), DMatrix::zeros(1, 50)).unwrap();
        assert_eq!(excitation_rank(&partition(&traj, 2, 3).unwrap()), 0);
    }

    #[test]
    fn random_data_is_full_row_rank() {
        let traj = random_traj(1, 1, 200, 6);
        let part = partition(&traj, 2, 3).unwrap();
        assert_eq!(excitation_rank(&part), 10);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let traj = random_traj(2, 1, 25, 8);
        traj.save_csv(&path).unwrap();
        let back = SignalTrajectory::load_csv(&path).unwrap();
        assert_eq!(back, traj);

        let err = SignalTrajectory::parse_csv("1,1\n0.1,0.2\n0.3\n").unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = SignalTrajectory::parse_csv("1,1\n0.1,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
        assert!(SignalTrajectory::parse_csv("x,1\n0,0\n").is_err());
    }

    #[test]
    fn csv_dimensions() {
        let mut text = String::from("1,1\n");
        for t in 0..600 {
            text.push_str(&format!("{},{}\n", t as f64 * 0.5, -(t as f64)));
        }
        let traj = SignalTrajectory::parse_csv(&text).unwrap();
        assert_eq!((traj.m(), traj.p(), traj.len()), (1, 1, 600));
    }

    #[test]
    fn window_advance_keeps_latest() {
        let dims = Dims::new(1, 1, 2, 3).unwrap();
        let w = InitialWindow::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![10.0, 20.0]),
            &dims,
        )
        .unwrap();
        let next = w.advance(
            &DVector::from_vec(vec![3.0]),
            &DVector::from_vec(vec![30.0]),
            &dims,
        );
        assert_eq!(next.u_ini.as_slice(), &[2.0, 3.0]);
        assert_eq!(next.y_ini.as_slice(), &[20.0, 30.0]);
    }
}
