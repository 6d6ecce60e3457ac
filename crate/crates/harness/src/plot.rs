//! Deterministic SVG line charts built from across-seed summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::aggregate::{summarize, SummaryRow};
use crate::config::ExperimentKind;
use crate::results::ResultRow;
use crate::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    /// File stem and `data-chart` attribute.
    pub id: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Horizontal reference lines `(label, y)`.
    pub hlines: Vec<(String, f64)>,
}

impl Chart {
    fn new(id: String, title: String, x_label: &str, y_label: &str) -> Self {
        Chart {
            id,
            title,
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
            hlines: Vec::new(),
        }
    }

    fn is_empty(&self) -> bool {
        self.series.iter().all(|s| s.points.is_empty())
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 0.0 { 0.05 * lo.abs() } else { 0.5 };
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi, log, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some(self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo))
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (a, b) = (self.lo.floor() as i32, self.hi.ceil() as i32);
            (a..=b).map(|e| 10f64.powi(e)).filter(|t| {
                let l = t.log10();
                l >= self.lo - 1e-9 && l <= self.hi + 1e-9
            }).collect()
        } else {
            (0..=4).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).collect()
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `chart` as a standalone SVG document.
pub fn render_svg(chart: &Chart) -> String {
    let pts = || chart.series.iter().flat_map(|s| s.points.iter());
    let xs = Axis::fit(pts().map(|p| p.x), chart.log_x, MARGIN_L, WIDTH - MARGIN_R);
    let ys_iter = pts()
        .flat_map(|p| [p.y, p.y - p.err, p.y + p.err])
        .chain(chart.hlines.iter().map(|h| h.1));
    let ys = Axis::fit(ys_iter, chart.log_y, HEIGHT - MARGIN_B, MARGIN_T);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" data-chart=\"{}\">",
        escape(&chart.id)
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        escape(&chart.title)
    );
    // axes
    let (x0, x1, y0, y1) = (MARGIN_L, WIDTH - MARGIN_R, HEIGHT - MARGIN_B, MARGIN_T);
    let _ = writeln!(s, "<g class=\"axes\" stroke=\"black\" fill=\"none\">");
    let _ = writeln!(s, "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\"/>");
    let _ = writeln!(s, "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\"/>");
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "<g class=\"ticks\" font-family=\"sans-serif\" font-size=\"10\">");
    for t in xs.ticks() {
        let px = xs.map(t).unwrap();
        let _ = writeln!(s, "<line x1=\"{px:.1}\" y1=\"{y0:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/>", y0 + 4.0);
        let _ = writeln!(s, "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", y0 + 16.0, fmt_tick(t));
    }
    for t in ys.ticks() {
        let py = ys.map(t).unwrap();
        let _ = writeln!(s, "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{x0:.1}\" y2=\"{py:.1}\" stroke=\"black\"/>", x0 - 4.0);
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", x0 - 6.0, py + 3.0, fmt_tick(t));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&chart.y_label)
    );

    for (label, y) in &chart.hlines {
        if let Some(py) = ys.map(*y) {
            let _ = writeln!(
                s,
                "<line class=\"reference\" data-series=\"{}\" x1=\"{x0:.1}\" y1=\"{py:.1}\" x2=\"{x1:.1}\" y2=\"{py:.1}\" stroke=\"gray\" stroke-dasharray=\"5,4\"/>",
                escape(label)
            );
        }
    }

    for (i, ser) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, "<g class=\"series\" data-series=\"{}\" stroke=\"{color}\" fill=\"{color}\">", escape(&ser.name));
        let mapped: Vec<(f64, f64, &Point)> =
            ser.points.iter().filter_map(|p| Some((xs.map(p.x)?, ys.map(p.y)?, p))).collect();
        if mapped.len() > 1 {
            let mut d = String::new();
            for (k, (px, py, _)) in mapped.iter().enumerate() {
                let _ = write!(d, "{}{px:.2},{py:.2}", if k == 0 { "M" } else { " L" });
            }
            let _ = writeln!(s, "<path d=\"{d}\" fill=\"none\" stroke-width=\"1.5\"/>");
        }
        for (px, py, p) in &mapped {
            if mapped.len() <= 60 {
                let _ = writeln!(s, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.5\"/>");
            }
            if p.err > 0.0 {
                if let (Some(lo), Some(hi)) = (ys.map(p.y - p.err), ys.map(p.y + p.err)) {
                    let _ = writeln!(s, "<line class=\"errbar\" x1=\"{px:.2}\" y1=\"{lo:.2}\" x2=\"{px:.2}\" y2=\"{hi:.2}\"/>");
                }
            }
        }
        let ly = MARGIN_T + 16.0 * i as f64 + 8.0;
        let _ = writeln!(s, "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke-width=\"2\"/>", x1 + 10.0, x1 + 28.0);
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" stroke=\"none\" fill=\"black\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            x1 + 32.0,
            ly + 4.0,
            escape(&ser.name)
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

fn series_of(rows: &[&SummaryRow], metric: &str, name: &str, x: impl Fn(&SummaryRow) -> Option<usize>) -> Series {
    let mut points: Vec<Point> = rows
        .iter()
        .filter(|r| r.metric == metric)
        .filter_map(|r| Some(Point { x: x(r)? as f64, y: r.mean, err: r.sem }))
        .collect();
    points.sort_by(|a, b| a.x.total_cmp(&b.x));
    Series { name: name.into(), points }
}

/// Groups summary rows by `(p, n, layers)` projections used as chart keys.
fn by<K: Ord>(rows: &[SummaryRow], k: impl Fn(&SummaryRow) -> K) -> BTreeMap<K, Vec<&SummaryRow>> {
    let mut m: BTreeMap<K, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        m.entry(k(r)).or_default().push(r);
    }
    m
}

fn context_scan_charts(rows: &[SummaryRow]) -> Vec<Chart> {
    by(rows, |r| (r.p, r.layers))
        .into_iter()
        .map(|((p, l), g)| {
            let mut c = Chart::new(format!("context-scan_p{}_L{}", opt(p), opt(l)), format!("TF test MSE, p = {}", opt(p)), "n", "MSE");
            c.log_y = true;
            c.series.push(series_of(&g, "tf_mse_lsa", "lsa", |r| r.n));
            c.series.push(series_of(&g, "tf_mse_ols", "ols", |r| r.n));
            c
        })
        .collect()
}

fn layer_scan_charts(rows: &[SummaryRow]) -> Vec<Chart> {
    by(rows, |r| (r.p, r.n))
        .into_iter()
        .map(|((p, n), g)| {
            let mut c = Chart::new(format!("layer-scan_p{}_n{}", opt(p), opt(n)), format!("TF test MSE, p = {}, n = {}", opt(p), opt(n)), "layers", "MSE");
            c.log_y = true;
            c.series.push(series_of(&g, "tf_mse_lsa", "lsa", |r| r.layers));
            c.series.push(series_of(&g, "tf_mse_ols", "ols", |r| r.layers));
            c
        })
        .collect()
}

fn cot_charts(rows: &[SummaryRow]) -> Vec<Chart> {
    let variance = rows.iter().find(|r| r.metric == "variance_exact").map(|r| r.mean);
    let theory: Vec<&SummaryRow> = rows.iter().filter(|r| r.metric == "theory_mse_bayes").collect();
    let per_n = by(rows, |r| r.n);
    let mut out = Vec::new();
    for (n, g) in per_n.iter().filter(|(n, _)| n.is_some()) {
        let shared: Vec<&SummaryRow> = g.iter().copied().filter(|r| r.layers.is_none()).collect();
        for (l, lg) in by_refs(g, |r| r.layers).into_iter().filter(|(l, _)| l.is_some()) {
            let p = lg[0].p;
            let tag = format!("p{}_n{}_L{}", opt(p), opt(*n), opt(l));
            let mut c = Chart::new(format!("cot-cmse_{tag}"), format!("CoT CMSE, {tag}"), "step", "CMSE");
            c.series.push(series_of(&lg, "cot_cmse_lsa", "lsa", |r| r.step));
            c.series.push(series_of(&shared, "cot_cmse_ols", "ols", |r| r.step));
            c.series.push(series_of(&shared, "cot_cmse_bayes", "bayes", |r| r.step));
            if let Some(v) = variance {
                c.hlines.push(("variance".into(), v));
            }
            out.push(c);
            let mut m = Chart::new(format!("cot-mse_{tag}"), format!("CoT MSE(h), {tag}"), "h", "MSE");
            m.series.push(series_of(&lg, "mc_mse_lsa", "lsa", |r| r.step));
            m.series.push(series_of(&shared, "mc_mse_ols", "ols", |r| r.step));
            m.series.push(series_of(&theory, "theory_mse_bayes", "bayes", |r| r.step));
            if let Some(v) = variance {
                m.hlines.push(("variance".into(), v));
            }
            out.push(m);
        }
    }
    out
}

fn by_refs<'a, K: Ord>(rows: &[&'a SummaryRow], k: impl Fn(&SummaryRow) -> K) -> BTreeMap<K, Vec<&'a SummaryRow>> {
    let mut m: BTreeMap<K, Vec<&'a SummaryRow>> = BTreeMap::new();
    for r in rows {
        m.entry(k(r)).or_default().push(*r);
    }
    m
}

fn rate_charts(rows: &[SummaryRow]) -> Vec<Chart> {
    by(rows, |r| r.p)
        .into_iter()
        .map(|(p, g)| {
            let mut c = Chart::new(format!("rate_p{}", opt(p)), format!("Excess risk, p = {}", opt(p)), "n", "excess");
            c.log_x = true;
            c.log_y = true;
            c.series.push(series_of(&g, "excess", "excess", |r| r.n));
            c
        })
        .collect()
}

/// One chart per metric and `p`, with one series per remaining coordinate.
fn generic_charts(rows: &[SummaryRow]) -> Vec<Chart> {
    let mut out = Vec::new();
    for ((metric, p), g) in by(rows, |r| (r.metric.clone(), r.p)) {
        let has_step = g.iter().any(|r| r.step.is_some());
        let mut groups: BTreeMap<String, Vec<&SummaryRow>> = BTreeMap::new();
        let xlab = if has_step { "step" } else if g.iter().any(|r| r.n.is_some()) { "n" } else { "layers" };
        for r in &g {
            let name = if has_step {
                format!("n{}_L{}", opt(r.n), opt(r.layers))
            } else if xlab == "n" {
                format!("L{}", opt(r.layers))
            } else {
                format!("n{}", opt(r.n))
            };
            groups.entry(name).or_default().push(r);
        }
        let mut c = Chart::new(format!("{}_p{}", metric.replace(['/', ' '], "_"), opt(p)), format!("{metric}, p = {}", opt(p)), xlab, &metric);
        for (name, rs) in groups {
            let x = |r: &SummaryRow| match xlab {
                "step" => r.step,
                "n" => r.n,
                _ => r.layers,
            };
            c.series.push(series_of(&rs, &metric, &name, x));
        }
        if c.series.iter().any(|s| s.points.len() > 1) {
            out.push(c);
        }
    }
    out
}

/// Charts for `kind` (generic layout when unknown).
pub fn build_charts(rows: &[ResultRow], kind: Option<ExperimentKind>) -> Vec<Chart> {
    let summary = summarize(rows);
    let charts = match kind {
        Some(ExperimentKind::ContextScan) => context_scan_charts(&summary),
        Some(ExperimentKind::LayerScan) => layer_scan_charts(&summary),
        Some(ExperimentKind::TrainEvalCot) => cot_charts(&summary),
        Some(ExperimentKind::Rate) => rate_charts(&summary),
        _ => generic_charts(&summary),
    };
    charts.into_iter().filter(|c| !c.is_empty()).collect()
}

/// Writes one `<id>.svg` per chart into `dir`; returns the written paths.
pub fn write_charts(charts: &[Chart], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for c in charts {
        let path = dir.join(format!("{}.svg", c.id));
        std::fs::write(&path, render_svg(c))?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::results::{Coord, RowSink};

    fn scan_rows() -> Vec<ResultRow> {
        let mut s = RowSink::new("scan", "h");
        for seed in 0..3u64 {
            for p in [3, 5] {
                for n in [8, 28, 55] {
                    let at = Coord::new(seed, p).n(n).layers(1);
                    s.push(at, "tf_mse_lsa", None, 0.01 + 1.0 / n as f64 + seed as f64 * 1e-4, Some(1e-4));
                    s.push(at, "tf_mse_ols", None, 0.0025, Some(1e-5));
                }
            }
        }
        s.rows
    }

    #[test]
    fn context_scan_has_one_chart_per_order() {
        let charts = build_charts(&scan_rows(), Some(ExperimentKind::ContextScan));
        assert_eq!(charts.len(), 2);
        for c in &charts {
            let names: Vec<&str> = c.series.iter().map(|s| s.name.as_str()).collect();
            assert_eq!(names, ["lsa", "ols"]);
            assert!(c.series.iter().all(|s| s.points.len() == 3));
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let charts = build_charts(&scan_rows(), Some(ExperimentKind::ContextScan));
        assert_eq!(render_svg(&charts[0]), render_svg(&charts[0]));
        assert!(render_svg(&charts[0]).contains("data-series=\"lsa\""));
    }

    #[test]
    fn empty_rows_give_no_charts() {
        assert!(build_charts(&[], None).is_empty());
    }
}
