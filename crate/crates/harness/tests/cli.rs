use std::path::{Path, PathBuf};
use std::process::Command;

use arlab::aggregate::{read_summary, summarize};
use arlab::results::{read_rows, write_rows, Coord, RowSink};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_arlab"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_cfg(cfg: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    bin().arg("run").arg("--config").arg(cfg).arg("--out").arg(out).args(extra).output().unwrap()
}

const SMALL_GAP: &str = "[experiment]\nkind = \"exact-gap\"\nseeds = [3, 4]\n\n[process]\nnoise_std = 1.0\nmax_modulus = 0.8\n\n[grid]\norders = [1, 2]\ncontexts = [5, 9]\n";

#[test]
fn empty_seed_list_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[experiment]\nkind = \"rate\"\nseeds = []\n[process]\ncoeffs = [0.5]\n");
    let out = run_cfg(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds"));
    assert!(!dir.path().join("o/results.csv").exists());
}

#[test]
fn unknown_key_and_missing_file_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[experiment]\nkind = \"rate\"\nseeds = [1]\ncolour = 3\n");
    assert_eq!(run_cfg(&cfg, &dir.path().join("o"), &[]).status.code(), Some(2));
    let missing = run_cfg(&dir.path().join("nope.toml"), &dir.path().join("o"), &[]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn exact_guard_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[experiment]\nkind = \"exact-gap\"\nseeds = [1]\n[process]\ncoeffs = [0.5]\n[grid]\ncontexts = [600]\n");
    assert_eq!(run_cfg(&cfg, &dir.path().join("o"), &[]).status.code(), Some(3));
}

#[test]
fn run_writes_results_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gap.toml", SMALL_GAP);
    let out = dir.path().join("o");
    let res = run_cfg(&cfg, &out, &["--jobs", "1", "--seed-override", "7,8,9", "--fast"]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_rows(std::fs::File::open(out.join("results.csv")).unwrap()).unwrap();
    let seeds: std::collections::BTreeSet<u64> = rows.iter().filter_map(|r| r.seed).collect();
    assert_eq!(seeds.into_iter().collect::<Vec<_>>(), vec![7, 8, 9]);
    let hash = &rows[0].config_hash;
    assert!(rows.iter().all(|r| &r.config_hash == hash));

    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["kind"], "exact-gap");
    assert_eq!(m["config_hash"].as_str().unwrap(), hash);
    assert_eq!(m["fast"], true);
    assert_eq!(m["rows"].as_u64().unwrap() as usize, rows.len());
    assert_eq!(m["config"]["experiment"]["seeds"], serde_json::json!([7, 8, 9]));
    assert_eq!(m["input_hash"].as_str().unwrap(), arlab::manifest::blob_hash(SMALL_GAP.as_bytes()));
    let bytes = std::fs::read(out.join("results.csv")).unwrap();
    assert_eq!(m["results_sha256"].as_str().unwrap(), arlab::manifest::sha256_hex(&bytes));
}

#[test]
fn manifest_rerun_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "gap.toml", SMALL_GAP);
    let a = dir.path().join("a");
    assert_eq!(run_cfg(&cfg, &a, &["--seed-override", "11,12"]).status.code(), Some(0));
    let b = dir.path().join("b");
    assert_eq!(run_cfg(&a.join("manifest.json"), &b, &[]).status.code(), Some(0));
    assert_eq!(std::fs::read(a.join("results.csv")).unwrap(), std::fs::read(b.join("results.csv")).unwrap());
}

#[test]
fn jobs_do_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "ml.toml",
        "[experiment]\nkind = \"mc-gap\"\nseeds = [1, 2, 3]\n[process]\ncoeffs = [0.5]\nnoise_std = 1.0\n[grid]\ncontexts = [6, 10]\nmc_samples = 3000\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run_cfg(&cfg, &a, &["--jobs", "1"]).status.code(), Some(0));
    assert_eq!(run_cfg(&cfg, &b, &["--jobs", "3"]).status.code(), Some(0));
    assert_eq!(std::fs::read(a.join("results.csv")).unwrap(), std::fs::read(b.join("results.csv")).unwrap());
}

fn rows_with(values: &[(u64, f64)]) -> Vec<arlab::ResultRow> {
    let mut sink = RowSink::new("synthetic", "0");
    for &(seed, v) in values {
        sink.value(Coord::new(seed, 1).n(10), "m", v);
    }
    sink.rows
}

#[test]
fn aggregate_single_seed_is_flagged() {
    let s = summarize(&rows_with(&[(1, 0.37)]));
    assert_eq!((s[0].mean, s[0].sem, s[0].count, s[0].single_seed), (0.37, 0.0, 1, true));
}

#[test]
fn aggregate_identical_values_have_zero_sem() {
    let s = summarize(&rows_with(&(0..7).map(|i| (i, 0.125)).collect::<Vec<_>>()));
    assert_eq!((s[0].mean, s[0].sem, s[0].single_seed), (0.125, 0.0, false));
}

#[test]
fn aggregate_matches_hand_computation_through_the_cli() {
    // values 2,4,4,4,5,5,7,9: mean 5, sample variance 32/7, SEM sqrt(32/7)/sqrt(8)
    let vals = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
    let rows = rows_with(&vals.iter().enumerate().map(|(i, v)| (i as u64, *v)).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    write_rows(std::fs::File::create(&path).unwrap(), &rows).unwrap();
    let out = bin().arg("aggregate").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let s = read_summary(std::fs::File::open(dir.path().join("summary.csv")).unwrap()).unwrap();
    assert_eq!(s.len(), 1);
    assert!((s[0].mean - 5.0).abs() < 1e-15);
    assert!((s[0].sem - 0.755_928_946_018_454_4).abs() < 1e-15);
    assert_eq!(s[0].median, 4.5);
}

fn scan_rows() -> Vec<arlab::ResultRow> {
    let mut s = RowSink::new("context-scan", "fixture");
    for seed in 0..3u64 {
        for p in [3usize, 5] {
            for off in [5usize, 25, 50] {
                let n = p + off;
                let at = Coord::new(seed, p).n(n).layers(1);
                s.push(at, "tf_mse_lsa", None, 0.0025 + 0.01 / n as f64 + 1e-5 * seed as f64, Some(4e-5));
                s.push(at, "tf_mse_ols", None, 0.0025 + 1e-6 * seed as f64, Some(4e-5));
            }
        }
    }
    s.rows
}

fn plot_into(results: &Path, out: &Path, kind: &str) -> std::process::Output {
    bin().arg("plot").arg(results).arg("--kind").arg(kind).arg("--out").arg(out).output().unwrap()
}

#[test]
fn plot_of_empty_results_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    write_rows(std::fs::File::create(&path).unwrap(), &[]).unwrap();
    let out = plot_into(&path, &dir.path().join("plots"), "context-scan");
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(!dir.path().join("plots").exists() || std::fs::read_dir(dir.path().join("plots")).unwrap().next().is_none());
}

/// Element names and attributes in document order.
fn structure(svg: &str) -> Vec<(String, Vec<(String, String)>)> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    doc.descendants()
        .filter(|n| n.is_element())
        .map(|n| {
            let attrs = n.attributes().map(|a| (a.name().to_string(), a.value().to_string())).collect();
            (n.tag_name().name().to_string(), attrs)
        })
        .collect()
}

#[test]
fn context_scan_plot_matches_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    write_rows(std::fs::File::create(&path).unwrap(), &scan_rows()).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(plot_into(&path, &a, "context-scan").status.code(), Some(0));
    assert_eq!(plot_into(&path, &b, "context-scan").status.code(), Some(0));
    let mut names: Vec<String> =
        std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["context-scan_p3_L1.svg", "context-scan_p5_L1.svg"]);
    for name in &names {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
        let svg = std::fs::read_to_string(a.join(name)).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let series: Vec<&str> = doc
            .descendants()
            .filter(|n| n.has_tag_name("g") && n.attribute("class") == Some("series"))
            .map(|n| n.attribute("data-series").unwrap())
            .collect();
        assert_eq!(series, ["lsa", "ols"]);
    }
    let got = std::fs::read_to_string(a.join("context-scan_p3_L1.svg")).unwrap();
    let fixture_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/context-scan_p3_L1.svg");
    if std::env::var_os("ARLAB_BLESS").is_some() {
        std::fs::write(&fixture_path, &got).unwrap();
    }
    let fixture = std::fs::read_to_string(&fixture_path).unwrap();
    assert_eq!(structure(&got), structure(&fixture));
}

#[test]
fn cot_cmse_chart_approaches_the_variance_line() {
    let mut s = RowSink::new("cot", "h");
    let var = 0.01;
    for seed in 0..2u64 {
        let at = Coord::new(seed, 1);
        s.value(at, "variance_exact", var);
        let at = at.n(8);
        let e: Vec<f64> = (1..=30).map(|h| var * (1.0 - 0.8f64.powi(2 * h))).collect();
        let mut acc = 0.0;
        let cmse: Vec<f64> = e.iter().enumerate().map(|(k, v)| { acc += v; acc / (k + 1) as f64 }).collect();
        s.curve(at, "cot_cmse_ols", &cmse, None);
        s.curve(at, "cot_cmse_bayes", &cmse, None);
        s.curve(at.layers(1), "cot_cmse_lsa", &cmse, None);
    }
    let charts = arlab::plot::build_charts(&s.rows, Some(arlab::ExperimentKind::TrainEvalCot));
    let c = charts.iter().find(|c| c.id.starts_with("cot-cmse")).unwrap();
    assert_eq!(c.hlines, vec![("variance".to_string(), var)]);
    let lsa = c.series.iter().find(|s| s.name == "lsa").unwrap();
    assert!(lsa.points.windows(2).all(|w| w[1].y >= w[0].y && w[1].y <= var));
    let svg = arlab::plot::render_svg(c);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert!(doc.descendants().any(|n| n.attribute("class") == Some("reference") && n.attribute("data-series") == Some("variance")));
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("path")).count(), 3);
}
