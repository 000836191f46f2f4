use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use belltest::cli::{run, EXIT_CONFIG, EXIT_DATA, EXIT_NO_VIOLATION, EXIT_OK};
use belltest::config::{to_toml, SpacetimeDocument};
use belltest::design::DesignProblem;
use belltest::records::{RecordFormat, RecordReader, RecordWriter};
use belltest::simulator::{ExperimentConfig, SlotOutcomes, TrialRecord};
use belltest::spacetime::Site;
use serde_json::Value;

fn belltest(args: &[&str]) -> i32 {
    run(std::iter::once("belltest").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

/// `k` successes (`++` on `a b`) followed by `n - k` failures (`+0` on
/// `a b'`), all in slot 6, with a non-category trial between each.
fn synthetic_stream(k: u64, n: u64) -> Vec<TrialRecord> {
    let mut out = Vec::new();
    for i in 0..n {
        let success = i < k;
        out.push(TrialRecord {
            trial_index: 2 * i,
            setting_a: false,
            setting_b: !success,
            outcomes_a: SlotOutcomes(1 << 5),
            outcomes_b: SlotOutcomes(if success { 1 << 5 } else { 0 }),
            trial_time_ns: 2 * i * 1000,
        });
        out.push(TrialRecord {
            trial_index: 2 * i + 1,
            setting_a: true,
            setting_b: true,
            outcomes_a: SlotOutcomes(0),
            outcomes_b: SlotOutcomes(0),
            trial_time_ns: (2 * i + 1) * 1000,
        });
    }
    out
}

fn write_records(path: &Path, records: &[TrialRecord], format: RecordFormat) {
    let mut w = RecordWriter::new(BufWriter::new(File::create(path).unwrap()), format);
    for r in records {
        w.write(r).unwrap();
    }
    w.finish().unwrap();
}

fn minimal_config(dir: &Path, n_trials: u64) -> std::path::PathBuf {
    let path = dir.join("minimal.toml");
    fs::write(&path, to_toml(&ExperimentConfig::published(n_trials, 3))).unwrap();
    path
}

#[test]
fn simulate_minimal_config_writes_ten_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = minimal_config(dir.path(), 10);
    let out = dir.path().join("run");
    assert_eq!(
        belltest(&["simulate", "--config", p(&cfg), "--out", p(&out), "--format", "text"]),
        EXIT_OK
    );
    let text = fs::read_to_string(out.join("records.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 10);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["trial_index", "setting_A", "setting_B", "outcomes_A", "outcomes_B", "trial_time_ns"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = minimal_config(dir.path(), 5_000);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(belltest(&["simulate", "--config", p(&cfg), "--out", p(&a)]), EXIT_OK);
    assert_eq!(belltest(&["simulate", "--config", p(&cfg), "--out", p(&b)]), EXIT_OK);
    assert_eq!(
        belltest(&["simulate", "--config", p(&cfg), "--out", p(&c), "--seed", "99"]),
        EXIT_OK
    );
    let bytes = |d: &Path| fs::read(d.join("records.bin")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
    assert_eq!(bytes(&a).len(), 5_000 * 22);
}

#[test]
fn missing_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = to_toml(&ExperimentConfig::published(10, 1)).replace("eta_A = 0.747\n", "");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("run");
    assert_eq!(belltest(&["simulate", "--config", p(&cfg), "--out", p(&out)]), EXIT_CONFIG);
    assert!(!out.join("records.bin").exists());
}

#[test]
fn analyze_reproduces_published_pvalue() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("synthetic.jsonl");
    write_records(&records, &synthetic_stream(1257, 2376), RecordFormat::Text);
    let out = dir.path().join("an");
    assert_eq!(
        belltest(&["analyze", p(&records), "--n-stop", "2376", "--out", p(&out)]),
        EXIT_OK
    );
    let r = report(&out);
    assert_eq!(r["n_success"], 1257);
    assert_eq!(r["complete"], true);
    let pv = r["p_value"].as_f64().unwrap();
    assert!((pv / 2.5e-3 - 1.0).abs() < 0.05, "{pv}");

    let txt = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(txt.starts_with("window=6:1\n"));
    assert!(txt.contains("n_success=1257\n"));

    let csv = fs::read_to_string(out.join("per_slot.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 16);
    assert!(lines[6].starts_with("6,1257,2376,true,"));
    assert!(lines[1].starts_with("1,0,2376,false,"));
    assert!(lines[12].ends_with(",false"), "slot 12 is not separated");
}

#[test]
fn pvalue_increases_with_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("synthetic.bin");
    write_records(&records, &synthetic_stream(1257, 2376), RecordFormat::Binary);
    let mut last = 0.0;
    for eps in ["0", "1e-4", "1e-3", "3e-3", "1e-2"] {
        let out = dir.path().join(format!("eps{eps}"));
        assert_eq!(
            belltest(&["analyze", p(&records), "--n-stop", "2376", "--epsilon", eps, "--out", p(&out)]),
            EXIT_OK
        );
        let pv = report(&out)["p_value"].as_f64().unwrap();
        assert!(pv > last, "epsilon {eps}: {pv} <= {last}");
        last = pv;
    }
}

#[test]
fn short_stream_is_flagged_partial() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("short.jsonl");
    write_records(&records, &synthetic_stream(60, 100), RecordFormat::Text);
    let out = dir.path().join("an");
    assert_eq!(belltest(&["analyze", p(&records), "--n-stop", "200", "--out", p(&out)]), EXIT_DATA);
    let r = report(&out);
    assert_eq!(r["complete"], false);
    assert_eq!(r["n_events"], 100);
    // Missing events count as failures.
    let full = belltest::hypothesis::binomial_tail(200, 60, 0.5).unwrap();
    assert!((r["p_value"].as_f64().unwrap() - full).abs() < 1e-12 * full.max(1e-300));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn truncation_after_stop_does_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    // A bright source so every slot stops within a short run.
    let mut config = ExperimentConfig::published(200_000, 5);
    config.detection.p_pair = 0.05;
    let cfg = dir.path().join("bright.toml");
    fs::write(&cfg, to_toml(&config)).unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(belltest(&["simulate", "--config", p(&cfg), "--out", p(&sim)]), EXIT_OK);
    let records: Vec<TrialRecord> = RecordReader::new(
        std::io::BufReader::new(File::open(sim.join("records.bin")).unwrap()),
        RecordFormat::Binary,
    )
    .map(|r| r.unwrap())
    .collect();

    let full = dir.path().join("full");
    let args = |rec: &Path, out: &Path| {
        belltest(&["analyze", p(rec), "--n-stop", "20", "--slot-n-stop", "5", "--out", p(out)])
    };
    assert_eq!(args(&sim.join("records.bin"), &full), EXIT_OK);
    let n_total = report(&full)["n_total_trials"].as_u64().unwrap() as usize;
    assert!(n_total < records.len());

    // Keep enough records for every per-slot test to stop too.
    let keep = records.len() / 2 + n_total;
    let cut = dir.path().join("cut.bin");
    write_records(&cut, &records[..keep.min(records.len())], RecordFormat::Binary);
    let truncated = dir.path().join("truncated");
    assert_eq!(args(&cut, &truncated), EXIT_OK);
    assert_eq!(report(&full), report(&truncated));
    assert_eq!(
        fs::read_to_string(full.join("per_slot.csv")).unwrap(),
        fs::read_to_string(truncated.join("per_slot.csv")).unwrap()
    );
}

fn margins_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("margins.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn spacetime_widths_and_weak_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("st");
    assert_eq!(
        belltest(&["spacetime", "--widths", "1,3,5,7,9", "--resolution", "2", "--out", p(&out)]),
        EXIT_OK
    );
    let rows = margins_rows(&out);
    assert_eq!(rows.len(), 5);
    let expected = [63.5, 50.9, 38.3, 25.7];
    for (row, e) in rows.iter().zip(expected) {
        let m: f64 = row[5].parse().unwrap();
        assert!((m - e).abs() < 0.1, "{row:?}");
        assert_eq!(row[12], "false");
    }
    assert_eq!(rows[4][0], "9");
    assert_eq!(rows[4][12], "true", "width 9 boundary should be flagged weak");
    let slots = fs::read_to_string(out.join("slots.csv")).unwrap();
    assert_eq!(slots.lines().count(), 16);
}

#[test]
fn colocated_stations_violate_every_condition() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = SpacetimeDocument::calibrated();
    for site in Site::ALL {
        *doc.geometry.position_mut(site) = [0.0, 0.0, 0.0];
    }
    doc.widths = vec![1];
    let cfg = dir.path().join("colocated.toml");
    fs::write(&cfg, to_toml(&doc)).unwrap();
    let out = dir.path().join("st");
    assert_eq!(belltest(&["spacetime", "--config", p(&cfg), "--out", p(&out)]), EXIT_OK);
    let row = &margins_rows(&out)[0];
    for field in &row[1..5] {
        assert!(field.parse::<f64>().unwrap() < 0.0, "{row:?}");
    }
    let slots = fs::read_to_string(out.join("slots.csv")).unwrap();
    assert!(slots.lines().skip(1).all(|l| l.ends_with(",false")));
}

#[test]
fn optimize_ideal_problem_goes_to_maximal_entanglement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ideal.toml");
    fs::write(&cfg, to_toml(&DesignProblem::ideal())).unwrap();
    let out = dir.path().join("opt");
    assert_eq!(belltest(&["optimize", "--config", p(&cfg), "--out", p(&out)]), EXIT_OK);
    let s: Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    let theta = s["theta_deg"].as_f64().unwrap();
    assert!((theta - 45.0).abs() < 0.5, "{theta}");
    assert!(out.join("restarts.csv").exists());
}

#[test]
fn optimize_without_violation_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let mut problem = DesignProblem::published();
    problem.detection = problem.detection.with_efficiencies(0.5, 0.5);
    let cfg = dir.path().join("low.toml");
    fs::write(&cfg, to_toml(&problem)).unwrap();
    let out = dir.path().join("opt");
    assert_eq!(
        belltest(&["optimize", "--config", p(&cfg), "--out", p(&out)]),
        EXIT_NO_VIOLATION
    );
    assert!(out.join("solution.json").exists());
}

#[test]
fn report_collects_runs() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("s.jsonl");
    write_records(&records, &synthetic_stream(30, 50), RecordFormat::Text);
    let an = dir.path().join("an");
    assert_eq!(belltest(&["analyze", p(&records), "--n-stop", "50", "--out", p(&an)]), EXIT_OK);
    let st = dir.path().join("st");
    assert_eq!(belltest(&["spacetime", "--widths", "1", "--out", p(&st)]), EXIT_OK);
    let out = dir.path().join("summary");
    assert_eq!(belltest(&["report", p(&an), p(&st), "--out", p(&out)]), EXIT_OK);
    let text = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(text.contains("(analyze)") && text.contains("(spacetime)"));
    assert!(text.contains("n_success=30"));
}

#[test]
fn binary_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_belltest"))
        .args(["simulate", "--n-trials", "100", "--out", p(&out)])
        .status()
        .unwrap();
    assert!(status.success());
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_belltest"))
        .args(["analyze", p(&out.join("records.bin")), "--n-stop", "0"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_CONFIG));
}

#[test]
fn shipped_configs_load() {
    use belltest::config;
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    config::load_experiment(&dir.join("published_run.toml")).unwrap();
    assert_eq!(config::load_design_problem(&dir.join("design_published.toml")).unwrap(), DesignProblem::published());
    assert_eq!(config::load_design_problem(&dir.join("design_ideal.toml")).unwrap(), DesignProblem::ideal());
    assert_eq!(config::load_spacetime(&dir.join("spacetime_calibrated.toml")).unwrap(), SpacetimeDocument::calibrated());
    let a = config::load_analysis(&dir.join("analysis.toml")).unwrap();
    assert!(dir.join(a.spacetime.unwrap()).exists());
}
