//! Across-seed summaries of `results.csv`.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::results::ResultRow;
use crate::Result;

/// Mean, standard error and median of one metric at one grid point, over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub p: Option<usize>,
    pub n: Option<usize>,
    pub layers: Option<usize>,
    pub metric: String,
    pub step: Option<usize>,
    pub mean: f64,
    /// `sd / sqrt(count)` with the `count - 1` sample deviation; 0 for one seed.
    pub sem: f64,
    pub median: f64,
    pub count: usize,
    pub single_seed: bool,
}

type Key = (String, Option<usize>, Option<usize>, Option<usize>, String, Option<usize>);

fn key(r: &ResultRow) -> Key {
    (r.experiment.clone(), r.p, r.n, r.layers, r.metric.clone(), r.step)
}

/// Groups rows by everything except the seed; groups keep first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut index: HashMap<Key, usize> = HashMap::new();
    let mut groups: Vec<(Key, Vec<f64>)> = Vec::new();
    for r in rows {
        let k = key(r);
        match index.get(&k) {
            Some(&i) => groups[i].1.push(r.value),
            None => {
                index.insert(k.clone(), groups.len());
                groups.push((k, vec![r.value]));
            }
        }
    }
    groups
        .into_iter()
        .map(|((experiment, p, n, layers, metric, step), v)| {
            let (mean, sem) = mean_sem(&v);
            SummaryRow { experiment, p, n, layers, metric, step, mean, sem, median: median(&v), count: v.len(), single_seed: v.len() == 1 }
        })
        .collect()
}

pub fn mean_sem(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    if !mean.is_finite() {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_summary<R: std::io::Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
