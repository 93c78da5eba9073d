//! Row-major `Vec<Vec<f64>>` serialization for `DMatrix<f64>`.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

pub fn serialize_vector<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    v.as_slice().serialize(s)
}
