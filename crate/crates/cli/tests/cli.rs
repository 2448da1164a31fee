use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use herdsim_cli::output::{read_records, Record};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn herdsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_herdsim")).args(args).output().unwrap()
}

/// Copies a bundled config into `dir`, pointing it at the bundled benchmark and at `dir/out`.
fn config_in(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_slice(&fs::read(fixture(name)).unwrap()).unwrap();
    v["benchmarks"] = serde_json::json!([fixture("synthetic20.jsonl")]);
    v["output_dir"] = serde_json::json!("out");
    edit(&mut v);
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    path
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_writes_manifest_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "dyadic.json", |_| {});
    ok(&herdsim(&["run", "--config", cfg.to_str().unwrap()]));
    let out = dir.path().join("out");
    for f in ["manifest.json", "records.jsonl", "summary.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], hex::encode(Sha256::digest(fs::read(&cfg).unwrap())));
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["error_count"], 0);
    let records = read_records(&out.join("records.jsonl")).unwrap();
    assert_eq!(records.len(), 20 * 11);
    let keys: Vec<_> = records
        .iter()
        .map(|r| match r {
            Record::Trial(t) => (t.question_id.clone(), t.condition.clone()),
            Record::Group(_) => panic!("trial records expected"),
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("benchmark,condition,trials,flips,flip_rate\nsynthetic20,first,20,0,0.0000\n"));
}

#[test]
fn rerun_with_same_config_is_byte_identical() {
    for name in ["dyadic.json", "grid.json", "control.json"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            ok(&herdsim(&["run", "--config", config_in(d.path(), name, |_| {}).to_str().unwrap()]));
        }
        for f in ["records.jsonl", "summary.csv"] {
            let x = fs::read(a.path().join("out").join(f)).unwrap();
            let y = fs::read(b.path().join("out").join(f)).unwrap();
            assert!(x == y, "{name}: {f} differs");
        }
    }
}

#[test]
fn invalid_config_names_every_bad_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "dyadic.json", |v| {
        v["backend"]["synthetic"]["influence_weight"] = serde_json::json!(-0.5);
        v["n_bins"] = serde_json::json!(1);
    });
    for cmd in ["run", "validate"] {
        let out = herdsim(&[cmd, "--config", cfg.to_str().unwrap()]);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("influence_weight"), "{err}");
        assert!(err.contains("n_bins"), "{err}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validate_accepts_bundled_configs() {
    for name in ["dyadic.json", "grid.json", "control.json"] {
        ok(&herdsim(&["validate", "--config", fixture(name).to_str().unwrap()]));
    }
}

#[test]
fn benchmark_flag_replaces_config_list() {
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("tiny.jsonl");
    let first: String = fs::read_to_string(fixture("synthetic20.jsonl")).unwrap().lines().take(3).map(|l| format!("{l}\n")).collect();
    fs::write(&small, first).unwrap();
    let cfg = config_in(dir.path(), "dyadic.json", |v| v["conditions"] = serde_json::json!(["second"]));
    ok(&herdsim(&["run", "--config", cfg.to_str().unwrap(), "--benchmark", small.to_str().unwrap(), "--benchmark", fixture("synthetic20.jsonl").to_str().unwrap()]));
    let records = read_records(&dir.path().join("out/records.jsonl")).unwrap();
    assert_eq!(records.len(), 23);
    let manifest = fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"tiny\""));
}

fn trials(records: &[Record]) -> Vec<herdsim_core::protocols::TrialRecord> {
    records
        .iter()
        .map(|r| match r {
            Record::Trial(t) => t.clone(),
            Record::Group(_) => panic!("trial records expected"),
        })
        .collect()
}

#[test]
fn sampling_and_filtering_shrink_the_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "dyadic.json", |v| {
        v["conditions"] = serde_json::json!(["first"]);
        v["sample_size"] = serde_json::json!(5);
        v["contentious_threshold"] = serde_json::json!(0.45);
    });
    ok(&herdsim(&["run", "--config", cfg.to_str().unwrap()]));
    let kept = trials(&read_records(&dir.path().join("out/records.jsonl")).unwrap());
    assert!(kept.iter().all(|t| t.self_confidence < 0.45));

    // Sampling alone picks the pool the filter then works on.
    let sampled_dir = dir.path().join("sampled");
    fs::create_dir_all(&sampled_dir).unwrap();
    let cfg = config_in(&sampled_dir, "dyadic.json", |v| {
        v["conditions"] = serde_json::json!(["first"]);
        v["sample_size"] = serde_json::json!(5);
    });
    ok(&herdsim(&["run", "--config", cfg.to_str().unwrap()]));
    let pool = trials(&read_records(&sampled_dir.join("out/records.jsonl")).unwrap());
    assert_eq!(pool.len(), 5);
    let expected: Vec<&str> = pool.iter().filter(|t| t.self_confidence < 0.45).map(|t| t.question_id.as_str()).collect();
    let got: Vec<&str> = kept.iter().map(|t| t.question_id.as_str()).collect();
    assert_eq!(got, expected);
    assert!(!expected.is_empty() && expected.len() < 5, "fixture should exercise the filter");
    let manifest = fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("sampled before the contentious filter"));
}

fn report(records: &Path, kind: &str, out: &Path) -> Output {
    herdsim(&["report", "--records", records.to_str().unwrap(), "--kind", kind, "--out", out.to_str().unwrap()])
}

#[test]
fn reports_for_each_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for name in ["dyadic.json", "grid.json", "control.json"] {
        let sub = dir.path().join(name.trim_end_matches(".json"));
        fs::create_dir_all(&sub).unwrap();
        ok(&herdsim(&["run", "--config", config_in(&sub, name, |_| {}).to_str().unwrap()]));
        outs.push(sub.join("out/records.jsonl"));
    }
    let rep = dir.path().join("rep");

    ok(&report(&outs[0], "flip-table", &rep));
    let table = fs::read_to_string(rep.join("flip_table.csv")).unwrap();
    assert!(table.starts_with("condition,synthetic20,average\nfirst,0.0000,0.0000\n"));
    assert_eq!(table.lines().count(), 12);

    ok(&report(&outs[0], "heatmap", &rep));
    let svg = fs::read_to_string(rep.join("heatmap.svg")).unwrap();
    assert!(svg.contains("url(#scale)") && svg.contains("#3b4cc0") && svg.contains("#b40426"));

    ok(&report(&outs[1], "grid-heatmap", &rep));
    for f in ["count", "ratio", "list", "disc", "reason"] {
        for o in ["agree_first", "disagree_first"] {
            let svg = fs::read_to_string(rep.join(format!("grid_{f}_{o}.svg"))).unwrap();
            assert_eq!(svg.matches(r#"class="cell""#).count(), 35);
            assert_eq!(svg.matches(r#"class="empty""#).count(), 1);
        }
    }

    ok(&report(&outs[2], "control-table", &rep));
    let ctl = fs::read_to_string(rep.join("control_table.csv")).unwrap();
    let mut lines = ctl.lines();
    assert_eq!(lines.next(), Some("condition,benchmark,flip_rate,entropy,consensus_rate,accuracy"));
    assert!(lines.next().unwrap().starts_with("original,synthetic20,-,"));
    assert!(lines.next().unwrap().starts_with("cot,synthetic20,-,"));

    // Mismatched kinds are rejected.
    for (records, kind) in [(&outs[2], "flip-table"), (&outs[0], "control-table"), (&outs[0], "grid-heatmap"), (&outs[1], "heatmap")] {
        let out = report(records, kind, &rep);
        assert!(!out.status.success(), "{kind} accepted {}", records.display());
    }

    // Same records, same bytes.
    let again = dir.path().join("again");
    ok(&report(&outs[1], "grid-heatmap", &again));
    ok(&report(&outs[2], "control-table", &again));
    assert_eq!(fs::read(rep.join("grid_reason_disagree_first.svg")).unwrap(), fs::read(again.join("grid_reason_disagree_first.svg")).unwrap());
    assert_eq!(fs::read(rep.join("control_table.csv")).unwrap(), fs::read(again.join("control_table.csv")).unwrap());
}

#[test]
fn single_cell_heatmap_has_one_colored_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), "dyadic.json", |v| v["conditions"] = serde_json::json!(["second"]));
    ok(&herdsim(&["run", "--config", cfg.to_str().unwrap()]));
    let records = read_records(&dir.path().join("out/records.jsonl")).unwrap();
    let one = herdsim_cli::output::records_to_jsonl(&records[..1]).unwrap();
    let path = dir.path().join("one.jsonl");
    fs::write(&path, one).unwrap();
    ok(&report(&path, "heatmap", &dir.path().join("rep")));
    let svg = fs::read_to_string(dir.path().join("rep/heatmap.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="cell""#).count(), 1);
    assert_eq!(svg.matches(r#"class="empty""#).count(), 99);
    assert!(svg.contains(">0.00<") && svg.contains(">1.00<"));
}

/// Blue-to-red interpolation written out per channel, independent of the renderer.
fn expected_fill(rate: f64) -> String {
    let lerp = |lo: f64, hi: f64| (lo + (hi - lo) * rate).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(59.0, 180.0), lerp(76.0, 4.0), lerp(192.0, 38.0))
}

#[test]
fn grid_svg_matches_golden_and_color_scale() {
    let dir = tempfile::tempdir().unwrap();
    ok(&herdsim(&["run", "--config", config_in(dir.path(), "grid.json", |_| {}).to_str().unwrap()]));
    let out = dir.path().join("rep");
    ok(&report(&dir.path().join("out/records.jsonl"), "grid-heatmap", &out));
    let name = "grid_reason_disagree_first.svg";
    let got = fs::read_to_string(out.join(name)).unwrap();
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap();
    assert_eq!(got, golden);

    let mut cells = 0;
    for chunk in got.split("<rect class=\"cell\"").skip(1) {
        let fill = chunk.split("fill=\"").nth(1).unwrap().split('"').next().unwrap();
        let rate: f64 = chunk.split("<title>").nth(1).unwrap().split('<').next().unwrap().parse().unwrap();
        assert_eq!(fill, expected_fill(rate), "rate {rate}");
        cells += 1;
    }
    assert_eq!(cells, 35);
    assert!(got.contains("stop-color=\"#3b4cc0\"") && got.contains("stop-color=\"#b40426\""));
}
