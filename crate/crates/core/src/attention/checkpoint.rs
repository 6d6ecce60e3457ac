//! JSON checkpoints with explicit shapes; matrices are stored row-major.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LsaLayerFull, LsaParams, SoftmaxParams, StackParams};
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix(name: &str, m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        MatrixRecord { name: name.into(), shape: vec![m.nrows(), m.ncols()], data }
    }

    pub fn from_vector(name: &str, v: &DVector<f64>) -> Self {
        MatrixRecord { name: name.into(), shape: vec![v.len()], data: v.iter().copied().collect() }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape.as_slice() {
            &[r, c] if r * c == self.data.len() => Ok(DMatrix::from_row_slice(r, c, &self.data)),
            _ => invalid(format!("record {} is not a consistent matrix", self.name)),
        }
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        match self.shape.as_slice() {
            &[n] if n == self.data.len() => Ok(DVector::from_column_slice(&self.data)),
            _ => invalid(format!("record {} is not a consistent vector", self.name)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// One of `lsa-full`, `stack`, `softmax`.
    pub kind: String,
    pub order: usize,
    pub history_len: usize,
    pub tensors: Vec<MatrixRecord>,
}

impl Checkpoint {
    pub fn from_stack(s: &StackParams, history_len: usize) -> Self {
        let mut tensors = Vec::new();
        for (i, l) in s.layers.iter().enumerate() {
            tensors.push(MatrixRecord::from_vector(&format!("layer{}.b", i + 1), &l.b));
            tensors.push(MatrixRecord::from_matrix(&format!("layer{}.A", i + 1), &l.a));
        }
        Checkpoint { kind: "stack".into(), order: s.order(), history_len, tensors }
    }

    pub fn from_full(l: &LsaLayerFull, history_len: usize) -> Self {
        Checkpoint {
            kind: "lsa-full".into(),
            order: l.order(),
            history_len,
            tensors: vec![MatrixRecord::from_matrix("P", &l.value), MatrixRecord::from_matrix("Q", &l.score)],
        }
    }

    pub fn from_softmax(s: &SoftmaxParams, history_len: usize) -> Self {
        Checkpoint {
            kind: "softmax".into(),
            order: s.order(),
            history_len,
            tensors: vec![MatrixRecord::from_matrix("P", &s.value), MatrixRecord::from_matrix("Q", &s.score)],
        }
    }

    pub fn to_stack(&self) -> Result<StackParams> {
        if self.kind != "stack" || self.tensors.len() % 2 != 0 {
            return invalid("not a stack checkpoint");
        }
        let layers = self
            .tensors
            .chunks(2)
            .map(|pair| Ok(LsaParams { b: pair[0].to_vector()?, a: pair[1].to_matrix()? }))
            .collect::<Result<Vec<_>>>()?;
        StackParams::new(layers)
    }

    pub fn to_softmax(&self) -> Result<SoftmaxParams> {
        if self.kind != "softmax" || self.tensors.len() != 2 {
            return invalid("not a softmax checkpoint");
        }
        Ok(SoftmaxParams { value: self.tensors[0].to_matrix()?, score: self.tensors[1].to_matrix()? })
    }

    pub fn to_full(&self) -> Result<LsaLayerFull> {
        if self.kind != "lsa-full" || self.tensors.len() != 2 {
            return invalid("not a full-layer checkpoint");
        }
        Ok(LsaLayerFull { value: self.tensors[0].to_matrix()?, score: self.tensors[1].to_matrix()? })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
