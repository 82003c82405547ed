use std::path::{Path, PathBuf};
use std::process::Command;

use occlbench::cli::RunManifest;
use occlbench::provenance::tree_checksum;
use occlbench::scenegen::GeneratorConfig;

const CONFIG: &str = r#"
[generator]
num_images = 24
height = 32
width = 32

[train]
epochs = 1
batch_size = 4
"#;

fn bin(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_occlbench")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn ok(args: &[&str]) -> String {
    let (code, stdout, stderr) = bin(args);
    assert_eq!(code, 0, "{args:?}\n{stderr}");
    stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("exp.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let data = root.join("data");
    ok(&["generate", "--config", s(&config), "--seed", "7", "--out", s(&data)]);
    Fixture { _dir: dir, root, config, data }
}

#[test]
fn generate_is_reproducible_and_meets_quotas() {
    let f = fixture();
    let again = f.root.join("again");
    let stdout = ok(&["generate", "--config", s(&f.config), "--seed", "7", "--out", s(&again)]);
    let q = GeneratorConfig { num_images: 24, ..GeneratorConfig::default() }.quotas();
    assert!(stdout.starts_with(&format!("low {}  mid {}  high {}", q[0], q[1], q[2])), "{stdout}");
    assert_eq!(tree_checksum(&f.data, &[]).unwrap(), tree_checksum(&again, &[]).unwrap());
    let manifest = std::fs::read_to_string(again.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"config_hash\""));
}

#[test]
fn evaluating_ground_truth_against_itself_gives_a_perfect_table() {
    let f = fixture();
    let out = f.root.join("eval");
    let text = ok(&["evaluate", "--pred", s(&f.data), "--gt", s(&f.data), "--out", s(&out), "--no-ap"]);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("subset,PQ,PQ_th,PQ_st,SQ,RQ,AP_th_pan,mIoU_pan"));
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[6], "n/a", "{line}");
        for c in [1, 4, 5, 7] {
            assert_eq!(cells[c], "100.000", "{line}");
        }
    }
    assert!(text.contains("100.0"));
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.command, "evaluate");
    assert_eq!(m.config_hash.len(), 64);
    // unscored predictions cannot produce AP
    let (code, _, stderr) = bin(&["evaluate", "--pred", s(&f.data), "--gt", s(&f.data), "--out", s(&out)]);
    assert_eq!(code, 2);
    assert!(stderr.contains("--no-ap"), "{stderr}");
}

#[test]
fn validation_failures_exit_with_two() {
    let f = fixture();
    let out = f.root.join("x");
    let missing = f.root.join("missing");
    assert_eq!(bin(&["evaluate", "--pred", s(&missing), "--gt", s(&f.data), "--out", s(&out)]).0, 2);
    assert_eq!(bin(&["report", "--runs", s(&missing), "--out", s(&out)]).0, 2);
    assert_eq!(bin(&["frobnicate"]).0, 2);
    assert_eq!(bin(&["train", "--config", s(&f.config), "--out", s(&out), "--tau-lh", "0.7", "--tau-m", "0.5"]).0, 2);
    let bad = f.root.join("bad.toml");
    std::fs::write(&bad, "[train]\nepoch = 2\n").unwrap();
    assert_eq!(bin(&["train", "--config", s(&bad), "--out", s(&out)]).0, 2);
}

#[test]
fn ablation_rejects_invalid_cells_before_training() {
    let f = fixture();
    let out = f.root.join("ablate");
    let data = s(&f.data);
    let (code, _, stderr) = bin(&["ablate", "--config", s(&f.config), "--dataset", data, "--grid", "0.3:0.4,0.6:0.4", "--out", s(&out)]);
    assert_eq!(code, 2, "{stderr}");
    assert!(!out.exists());

    let text = ok(&["ablate", "--config", s(&f.config), "--dataset", data, "--grid", "0.3:0.4", "--out", s(&out)]);
    let table = std::fs::read_to_string(out.join("ablation.txt")).unwrap();
    assert!(text.ends_with(&table));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["tau_lh", "tau_m", "PQ", "PQ_th", "PQ_st"]);
    assert!(lines[1].trim_start().starts_with("0.3     0.4"));
    assert!(out.join("cells/tau_lh-0.3_tau_m-0.4/checkpoint.ckpt").is_file());
}

#[test]
fn train_predict_evaluate_and_report_end_to_end() {
    let f = fixture();
    let runs = f.root.join("runs");
    let data = s(&f.data);
    let train = |name: &str, extra: &[&str]| {
        let out = runs.join(name);
        let mut args = vec!["train", "--config", s(&f.config), "--dataset", data, "--seed", "3", "--out"];
        args.push(s(&out));
        args.extend_from_slice(extra);
        ok(&args);
        out
    };
    let base = train("base", &["--mode", "baseline"]);
    let con = train("con", &["--mode", "contrastive", "--tau-lh", "0.4", "--tau-m", "0.6", "--lambda", "1"]);
    let zero = f.root.join("zero");
    let mut args = vec!["train", "--config", s(&f.config), "--dataset", data, "--seed", "3", "--mode", "contrastive"];
    args.extend(["--lambda", "0", "--out", s(&zero)]);
    ok(&args);

    let log = |d: &Path| std::fs::read_to_string(d.join("train_log.jsonl")).unwrap();
    assert_eq!(log(&base), log(&zero));
    assert_ne!(log(&base), log(&con));
    let first: serde_json::Value = serde_json::from_str(log(&con).lines().next().unwrap()).unwrap();
    for key in ["step", "L_seg", "L_con", "L_fin"] {
        assert!(first.get(key).is_some(), "{key}");
    }

    let m = RunManifest::read(&con).unwrap();
    assert_eq!(m.command, "train");
    assert!(m.outputs.iter().all(|o| con.join(o).exists()));
    // rerunning the same command reproduces every output byte
    let again = train("again", &["--mode", "contrastive", "--tau-lh", "0.4", "--tau-m", "0.6", "--lambda", "1"]);
    assert_eq!(tree_checksum(&con, &[]).unwrap(), tree_checksum(&again, &[]).unwrap());
    std::fs::remove_dir_all(&again).unwrap();

    let pred = f.root.join("pred");
    ok(&["predict", "--checkpoint", s(&con.join("checkpoint.ckpt")), "--data", data, "--out", s(&pred)]);
    let eval = f.root.join("eval");
    ok(&["evaluate", "--pred", s(&pred), "--gt", data, "--out", s(&eval)]);
    assert!(!std::fs::read_to_string(eval.join("report.csv")).unwrap().lines().nth(4).unwrap().contains("n/a"));

    let report = f.root.join("report");
    let text = ok(&["report", "--runs", s(&runs), "--out", s(&report)]);
    assert!(text.contains("PQ by occlusion level"));
    let row = text.lines().find(|l| l.starts_with("all")).unwrap();
    assert!(row.contains("(+") || row.contains("(-"), "{row}");
    assert!(text.contains("separation"));
    for file in ["comparison.txt", "comparison.csv", "pq_vs_level.svg", "loss_curves.svg", "manifest.json"] {
        assert!(report.join(file).is_file(), "{file}");
    }
    assert_eq!(
        std::fs::read_to_string(report.join("loss_curves.svg")).unwrap().matches("<polyline").count(),
        2
    );

    // a runs directory with one mode only cannot be compared
    std::fs::remove_dir_all(&base).unwrap();
    assert_eq!(bin(&["report", "--runs", s(&runs), "--out", s(&report)]).0, 2);
}
