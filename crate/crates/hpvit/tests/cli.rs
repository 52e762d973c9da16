mod common;

use std::fs;
use std::path::Path;

use common::{code, hpvit, ok, stderr, stdout, tree};
use hpvit::report::{self, METRIC_COLUMNS};
use serde_json::Value;

const TINY: [&str; 8] = [
    "--set",
    "model.patch=4",
    "--set",
    "model.dim=8",
    "--set",
    "model.blocks=1",
    "--set",
    "model.heads=2",
];

fn synth(cwd: &Path, name: &str, per_class: &str, seed: &str) {
    ok(
        cwd,
        &[
            "synth",
            "--per-class",
            per_class,
            "--height",
            "8",
            "--width",
            "8",
            "--seed",
            seed,
            "--out",
            name,
        ],
    );
}

fn prepare(cwd: &Path, data: &str, k: &str, out: &str) {
    ok(
        cwd,
        &[
            "prepare",
            "--data",
            data,
            "--k",
            k,
            "--height",
            "8",
            "--width",
            "8",
            "--channels",
            "1",
            "--out",
            out,
        ],
    );
}

fn train(cwd: &Path, cur: &str, out: &str, extra: &[&str]) -> std::process::Output {
    let mut args = vec![
        "train",
        "--curriculum",
        cur,
        "--out",
        out,
        "--epochs",
        "4",
        "--batch-size",
        "4",
    ];
    args.extend(TINY);
    args.extend(extra);
    ok(cwd, &args)
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 6] = [
        (
            "synth",
            &[
                "--per-class",
                "--height",
                "--width",
                "--channels",
                "--seed",
                "--out",
                "--force",
            ],
        ),
        (
            "prepare",
            &[
                "--data",
                "--k",
                "--seed",
                "--test-fraction",
                "--height",
                "--width",
                "--channels",
                "--threads",
                "--out",
                "--force",
            ],
        ),
        (
            "train",
            &[
                "--curriculum",
                "--config",
                "--set",
                "--seed",
                "--epochs",
                "--batch-size",
                "--lr",
                "--curriculum-mode",
                "--precision",
                "--checkpoint-every",
                "--threads",
                "--run-id",
                "--resume",
                "--out",
                "--force",
            ],
        ),
        (
            "eval",
            &[
                "--checkpoint",
                "--data",
                "--model-id",
                "--batch-size",
                "--threads",
                "--out",
                "--force",
            ],
        ),
        ("compare", &["<A>", "<B>", "--out", "--force"]),
        (
            "preview-blur",
            &[
                "--image",
                "--k",
                "--height",
                "--width",
                "--channels",
                "--out",
                "--force",
            ],
        ),
    ];
    for (cmd, flags) in cases {
        let help = stdout(&ok(dir.path(), &[cmd, "--help"]));
        for f in flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}:\n{help}");
        }
        assert!(help.contains("--out-root"));
    }
    let top = stdout(&ok(dir.path(), &["--help"]));
    for cmd in [
        "synth",
        "prepare",
        "train",
        "eval",
        "compare",
        "preview-blur",
    ] {
        assert!(top.contains(cmd));
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    assert_eq!(code(&hpvit(cwd, &["train", "--no-such-flag"])), 2);
    assert_eq!(code(&hpvit(cwd, &["frobnicate"])), 2);

    fs::create_dir(cwd.join("empty")).unwrap();
    let o = hpvit(cwd, &["train", "--curriculum", "empty"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hpvit prepare"), "{}", stderr(&o));

    synth(cwd, "d", "4", "0");
    fs::create_dir(cwd.join("taken")).unwrap();
    fs::write(cwd.join("taken/keep.txt"), "x").unwrap();
    let o = hpvit(
        cwd,
        &[
            "prepare", "--data", "d", "--k", "2", "--height", "8", "--width", "8", "--out", "taken",
        ],
    );
    assert_eq!(code(&o), 2);
    let o = hpvit(
        cwd,
        &[
            "prepare", "--data", "d", "--k", "2", "--height", "8", "--width", "8", "--out",
            "taken", "--force",
        ],
    );
    assert_eq!(code(&o), 2);
    assert_eq!(fs::read_to_string(cwd.join("taken/keep.txt")).unwrap(), "x");

    let o = hpvit(
        cwd,
        &[
            "prepare", "--data", "d", "--k", "9", "--height", "8", "--width", "8", "--out", "c9",
        ],
    );
    assert_eq!(code(&o), 2);

    prepare(cwd, "d", "2", "c");
    let o = hpvit(
        cwd,
        &[
            "train",
            "--curriculum",
            "c",
            "--set",
            "model.patch=3",
            "--out",
            "t",
        ],
    );
    assert_eq!(code(&o), 2);
    let o = hpvit(
        cwd,
        &[
            "train",
            "--curriculum",
            "c",
            "--curriculum-mode",
            "staged",
            "--epochs",
            "1",
            "--out",
            "t",
        ],
    );
    assert_eq!(code(&o), 2);
    let o = hpvit(
        cwd,
        &[
            "train",
            "--curriculum",
            "c",
            "--set",
            "train.bogus=1",
            "--out",
            "t",
        ],
    );
    assert_eq!(code(&o), 2);

    let o = hpvit(cwd, &["eval", "--checkpoint", "missing.bin", "--data", "d"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn default_output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    ok(
        cwd,
        &[
            "synth",
            "--per-class",
            "2",
            "--height",
            "8",
            "--width",
            "8",
            "--seed",
            "3",
        ],
    );
    assert!(cwd.join("runs/synth-seed3/blobs").is_dir());
    ok(
        cwd,
        &[
            "--out-root",
            "elsewhere",
            "synth",
            "--per-class",
            "2",
            "--height",
            "8",
            "--width",
            "8",
        ],
    );
    assert!(cwd.join("elsewhere/synth-seed0/stripes").is_dir());
}

#[test]
fn prepare_writes_one_group_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd, "d", "10", "0");
    let out = stdout(&ok(
        cwd,
        &[
            "prepare",
            "--data",
            "d",
            "--height",
            "8",
            "--width",
            "8",
            "--channels",
            "1",
            "--out",
            "c10",
        ],
    ));
    let m: Value =
        serde_json::from_slice(&fs::read(cwd.join("c10/manifest.json")).unwrap()).unwrap();
    let levels = m["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 10);
    for (b, l) in levels.iter().enumerate() {
        assert_eq!(l["b"], b);
        assert_eq!(l["y"], 2 * b + 1);
        assert!((l["sigma"].as_f64().unwrap() - (0.3 * b as f64 + 0.5)).abs() < 1e-12);
        assert_eq!(l["count"], 2);
        assert!(cwd.join(format!("c10/group_{b}")).is_dir());
    }
    let rows: Vec<&str> = out
        .lines()
        .filter(|l| l.trim_start().starts_with(char::is_numeric))
        .collect();
    assert_eq!(rows.first().unwrap().split_whitespace().next(), Some("9"));
    assert_eq!(rows.last().unwrap().split_whitespace().next(), Some("0"));

    prepare(cwd, "d", "1", "c1");
    let m: Value =
        serde_json::from_slice(&fs::read(cwd.join("c1/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["levels"].as_array().unwrap().len(), 1);
    assert_eq!(m["levels"][0]["sigma"], 0.5);
    assert_eq!(m["levels"][0]["count"], 20);

    prepare(cwd, "d", "1", "c1b");
    assert_eq!(tree(&cwd.join("c1")), tree(&cwd.join("c1b")));
}

#[test]
fn prepare_can_hold_out_a_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd, "d", "10", "0");
    ok(
        cwd,
        &[
            "prepare",
            "--data",
            "d",
            "--k",
            "2",
            "--test-fraction",
            "0.2",
            "--height",
            "8",
            "--width",
            "8",
            "--channels",
            "1",
            "--out",
            "c",
        ],
    );
    let test: Value = serde_json::from_slice(&fs::read(cwd.join("c/test.json")).unwrap()).unwrap();
    assert_eq!(test["samples"].as_array().unwrap().len(), 4);
    let m: Value = serde_json::from_slice(&fs::read(cwd.join("c/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["samples"].as_array().unwrap().len(), 16);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd, "d", "8", "0");
    prepare(cwd, "d", "2", "c");
    train(cwd, "c", "a", &["--checkpoint-every", "2"]);
    train(cwd, "c", "b", &["--checkpoint-every", "2"]);
    assert_eq!(tree(&cwd.join("a")), tree(&cwd.join("b")));
    assert!(cwd.join("a/checkpoints/epoch-0002.bin").is_file());

    let steps = fs::read_to_string(cwd.join("a/steps.csv")).unwrap();
    assert_eq!(steps.lines().next(), Some("epoch,step,group,loss,lr"));
    assert_eq!(steps.lines().count(), 1 + 4 * 4);

    fs::create_dir(cwd.join("r")).unwrap();
    for f in [".hpvit-output", "steps.csv", "epochs.csv", "config.json"] {
        fs::copy(cwd.join("a").join(f), cwd.join("r").join(f)).unwrap();
    }
    train(
        cwd,
        "c",
        "r",
        &[
            "--checkpoint-every",
            "2",
            "--resume",
            "a/checkpoints/epoch-0002.bin",
        ],
    );
    for f in ["checkpoint.bin", "steps.csv", "epochs.csv", "summary.json"] {
        assert_eq!(
            fs::read(cwd.join("a").join(f)).unwrap(),
            fs::read(cwd.join("r").join(f)).unwrap(),
            "{f} differs after resume"
        );
    }

    let o = hpvit(
        cwd,
        &[
            "train",
            "--curriculum",
            "c",
            "--out",
            "x",
            "--resume",
            "a/checkpoint.bin",
            "--set",
            "model.dim=16",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn f32_training_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd, "d", "4", "0");
    prepare(cwd, "d", "2", "c");
    train(cwd, "c", "t", &["--precision", "f32"]);
    let s: Value = serde_json::from_slice(&fs::read(cwd.join("t/summary.json")).unwrap()).unwrap();
    assert_eq!(s["epochs_done"], 4);
    assert_eq!(s["train"]["precision"], "f32");
}

#[test]
fn eval_and_compare_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    synth(cwd, "d", "8", "0");
    synth(cwd, "test", "5", "9");
    prepare(cwd, "d", "2", "c");
    train(cwd, "c", "t", &[]);

    let o = ok(
        cwd,
        &[
            "eval",
            "--checkpoint",
            "t/checkpoint.bin",
            "--data",
            "test",
            "--out",
            "e",
            "--model-id",
            "m",
        ],
    );
    assert!(!stderr(&o).contains("WARNING"));
    for name in ["accuracy", "precision", "recall", "f1", "auroc"] {
        assert!(stdout(&o).contains(name));
    }
    let report: Value =
        serde_json::from_slice(&fs::read(cwd.join("e/report.json")).unwrap()).unwrap();
    let schema: Value =
        serde_json::from_slice(&fs::read(cwd.join("e/report.schema.json")).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    assert!(validator.is_valid(&report), "{report}");
    assert_eq!(schema, report::report_schema());
    let mut broken = report.clone();
    broken.as_object_mut().unwrap().remove("accuracy");
    assert!(!validator.is_valid(&broken));

    assert_eq!(report["n_samples"], 10);
    let replay = report::replay_auroc(&cwd.join("e/scores.csv")).unwrap();
    assert_eq!(replay, report["auroc"].as_f64().unwrap());
    let roc = fs::read_to_string(cwd.join("e/roc.csv")).unwrap();
    assert!(roc.lines().count() >= 3);

    let o = ok(
        cwd,
        &[
            "eval",
            "--checkpoint",
            "t/checkpoint.bin",
            "--data",
            "d",
            "--out",
            "etrain",
        ],
    );
    assert!(stderr(&o).contains("WARNING"), "{}", stderr(&o));
    let o = ok(
        cwd,
        &[
            "eval",
            "--checkpoint",
            "t/checkpoint.bin",
            "--data",
            "c/source.json",
            "--out",
            "esrc",
        ],
    );
    assert!(stderr(&o).contains("WARNING"));

    let o = ok(cwd, &["compare", "e", "e/report.json", "--out", "cmp"]);
    assert!(stdout(&o).contains("Delta"));
    let json: Value =
        serde_json::from_slice(&fs::read(cwd.join("cmp/comparison.json")).unwrap()).unwrap();
    let text = json.to_string();
    assert!(!text.is_empty());
    let csv = fs::read_to_string(cwd.join("cmp/comparison.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[1..], METRIC_COLUMNS);
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for cell in &rows[2][1..] {
        assert_eq!(cell.parse::<f64>().unwrap(), 0.0, "{csv}");
    }
    let svg = fs::read_to_string(cwd.join("cmp/roc_overlay.svg")).unwrap();
    assert_eq!(svg.matches("class=\"roc-curve\"").count(), 2);
    let legend = &svg[svg.find("class=\"legend\"").unwrap()..];
    assert_eq!(legend.matches(">m<").count(), 2, "{svg}");

    synth(cwd, "other", "5", "10");
    ok(
        cwd,
        &[
            "eval",
            "--checkpoint",
            "t/checkpoint.bin",
            "--data",
            "other",
            "--out",
            "e2",
        ],
    );
    assert_eq!(
        code(&hpvit(cwd, &["compare", "e", "e2", "--out", "cmp2"])),
        2
    );
}

#[test]
fn preview_blur_strip() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    common::solid(&cwd.join("x.png"), 6, 5, 3, 0.4);
    ok(cwd, &["preview-blur", "--image", "x.png", "--k", "3"]);
    let img = image::open(cwd.join("runs/preview-blur-k3.png")).unwrap();
    assert_eq!((img.width(), img.height()), (3 * 5 + 2 * 2, 6));
    assert_eq!(
        code(&hpvit(
            cwd,
            &["preview-blur", "--image", "x.png", "--k", "3"]
        )),
        2
    );
    ok(
        cwd,
        &["preview-blur", "--image", "x.png", "--k", "3", "--force"],
    );
}
