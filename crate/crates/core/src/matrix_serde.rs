//! Serde adapters storing matrices as nested row arrays.

use nalgebra::DMatrix;
use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(ncols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            rows: usize,
            cols: usize,
            data: Vec<Vec<f64>>,
        }
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: to_rows(m),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            rows: usize,
            cols: usize,
            data: Vec<Vec<f64>>,
        }
        let r = Repr::deserialize(d)?;
        let m = from_rows(&r.data, r.cols).map_err(D::Error::custom)?;
        if m.shape() != (r.rows, r.cols) {
            return Err(D::Error::custom(format!(
                "matrix declared {}x{} but data is {}x{}",
                r.rows,
                r.cols,
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m)
    }
}
