//! Serde helpers that write matrices and vectors as nested arrays.

use serde::ser::{SerializeSeq, Serializer};

use crate::linalg::{Matrix, Vector};

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
    let r = rows(m);
    let mut seq = s.serialize_seq(Some(r.len()))?;
    for row in &r {
        seq.serialize_element(row)?;
    }
    seq.end()
}

pub fn opt_matrix<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
    match m {
        Some(m) => matrix(m, s),
        None => s.serialize_none(),
    }
}

/// Columns of a basis matrix, one array per basis vector.
pub fn columns<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(m.ncols()))?;
    for c in m.column_iter() {
        seq.serialize_element(&c.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

pub fn vector<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

pub fn vector_pairs<S: Serializer>(v: &[(i64, Vector)], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for (k, x) in v {
        seq.serialize_element(&(k, x.iter().copied().collect::<Vec<f64>>()))?;
    }
    seq.end()
}
