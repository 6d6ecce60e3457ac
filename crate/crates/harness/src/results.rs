//! The flat `results.csv` row format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::Result;

/// One `(config point, seed, metric)` record. Columns keep this field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub p: Option<usize>,
    pub n: Option<usize>,
    pub layers: Option<usize>,
    pub metric: String,
    pub step: Option<usize>,
    pub value: f64,
    pub stderr: Option<f64>,
}

pub const COLUMNS: [&str; 10] = ["experiment", "config_hash", "seed", "p", "n", "layers", "metric", "step", "value", "stderr"];

pub fn write_rows<W: Write>(w: W, rows: &[ResultRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(COLUMNS)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Grid coordinates shared by the rows of one sweep cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Coord {
    pub seed: Option<u64>,
    pub p: Option<usize>,
    pub n: Option<usize>,
    pub layers: Option<usize>,
}

impl Coord {
    pub fn new(seed: u64, p: usize) -> Self {
        Coord { seed: Some(seed), p: Some(p), n: None, layers: None }
    }

    pub fn n(self, n: usize) -> Self {
        Coord { n: Some(n), ..self }
    }

    pub fn layers(self, l: usize) -> Self {
        Coord { layers: Some(l), ..self }
    }
}

/// Row accumulator stamping the experiment name and config hash.
#[derive(Clone, Debug)]
pub struct RowSink {
    experiment: String,
    hash: String,
    pub rows: Vec<ResultRow>,
}

impl RowSink {
    pub fn new(experiment: &str, hash: &str) -> Self {
        RowSink { experiment: experiment.into(), hash: hash.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, at: Coord, metric: &str, step: Option<usize>, value: f64, stderr: Option<f64>) {
        self.rows.push(ResultRow {
            experiment: self.experiment.clone(),
            config_hash: self.hash.clone(),
            seed: at.seed,
            p: at.p,
            n: at.n,
            layers: at.layers,
            metric: metric.into(),
            step,
            value,
            stderr,
        });
    }

    pub fn value(&mut self, at: Coord, metric: &str, value: f64) {
        self.push(at, metric, None, value, None);
    }

    pub fn curve(&mut self, at: Coord, metric: &str, values: &[f64], stderr: Option<&[f64]>) {
        for (i, v) in values.iter().enumerate() {
            self.push(at, metric, Some(i + 1), *v, stderr.map(|s| s[i]));
        }
    }
}
