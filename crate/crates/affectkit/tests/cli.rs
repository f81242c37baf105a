use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use affectkit::checkpoint;
use affectkit::dataset::read_index;
use affectkit::frames::PngFrames;
use affectkit_core::clip_align::ProviderRegistry;
use affectkit_core::harness::{evaluate_task, Resources};
use affectkit_core::task::Split;
use affectkit_core::Task;

fn affectkit(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_affectkit"))
        .current_dir(dir)
        .env("AFFECTKIT_DATA", dir.join("data"))
        .env("RUST_BACKTRACE", "0")
        .args(args)
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = affectkit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TOY: &str = "backbone = \"toy\"\nlstm_hidden = 8\nwindow = 4\n[optimizer]\nsteps = 12\neval_every = 6\nbatch_size = 8\n";

fn setup(dir: &Path) {
    fs::write(dir.join("toy.toml"), TOY).unwrap();
    ok(
        dir,
        &["generate-fixtures", "--out", "data", "--seed", "3", "--image-size", "16", "--frames-per-video", "12"],
    );
    for t in ["va", "expr", "au"] {
        let out = format!("data/curated/{t}.jsonl");
        ok(dir, &["curate", "--task", t, "--annotations", "data/annotations", "--out", &out]);
    }
}

#[test]
fn fixture_generation_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(d, &["generate-fixtures", "--out", "data", "--seed", "9", "--image-size", "8", "--frames-per-video", "5"]);
    }
    let mut files = Vec::new();
    let mut stack = vec![a.path().join("data")];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    assert!(files.len() > 27 * 5);
    for f in files {
        let rel = f.strip_prefix(a.path()).unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{}", rel.display());
    }
}

#[test]
fn curate_writes_index_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["generate-fixtures", "--out", "data", "--image-size", "8", "--frames-per-video", "40"]);
    let stdout = ok(
        d,
        &["curate", "--task", "au", "--annotations", "data/annotations", "--out", "au.jsonl", "--report", "au.txt"],
    );
    let summary = fs::read_to_string(d.join("au.txt")).unwrap();
    assert_eq!(stdout, summary);
    assert!(summary.contains("Training") && summary.contains("Validation"));
    let train = read_index(&d.join("au.jsonl"), Task::Au, Split::Train).unwrap();
    let lines = fs::read_to_string(d.join("au.jsonl")).unwrap().lines().count();
    assert!(train.len() < lines);
    assert!(summary.contains(&train.len().to_string()));
}

#[test]
fn train_evaluate_predict_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    for (task, extra) in [("va", None), ("expr", Some("--clip")), ("au", None), ("au", Some("lstm"))] {
        let mut args = vec!["train", "--config", "toy.toml", "--task", task];
        match extra {
            Some("lstm") => args.extend(["--head", "lstm"]),
            Some(flag) => args.push(flag),
            None => {}
        }
        ok(d, &args);
    }
    let ck = d.join("runs/au-fc-s0/checkpoint.afk");
    let m = checkpoint::load(&ck).unwrap();

    // Reloaded checkpoints reproduce the recorded metric exactly.
    let frames = PngFrames::new(d.join("data/images"));
    let providers = ProviderRegistry::default();
    let val = read_index(&d.join("data/curated/au.jsonl"), Task::Au, Split::Val).unwrap();
    let r = evaluate_task(&m, &val, &Resources::new(&frames, &providers)).unwrap();
    assert_eq!(r.score, m.best_metric);

    let out = ok(d, &["evaluate", "--checkpoint", "runs/au-fc-s0/checkpoint.afk", "--split", "val"]);
    assert!(out.contains(&format!("{:.4}", m.best_metric)));
    assert!(d.join("runs/au-fc-s0/eval_val.json").is_file());

    ok(d, &["optimize-thresholds", "--checkpoint", "runs/au-fc-s0/checkpoint.afk"]);
    let tuned = checkpoint::load(&ck).unwrap();
    assert_eq!(tuned.params, m.params);
    assert!(tuned.thresholds.is_some());
    let bad = affectkit(d, &["optimize-thresholds", "--checkpoint", "runs/va-fc-s0/checkpoint.afk"]);
    assert!(!bad.status.success());

    ok(d, &["predict", "--checkpoint", "runs/au-fc-s0/checkpoint.afk", "--images", "data/images/au_val_000", "--out", "preds"]);
    let text = fs::read_to_string(d.join("preds/au_val_000.txt")).unwrap();
    let parsed = affectkit_core::curation::parse_annotation_file(&text, Task::Au, "au_val_000").unwrap();
    assert_eq!(parsed.len(), 12);

    let table = ok(d, &["report", "--runs", "runs"]);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Method", "CCC_VA", "F1_Expr", "F1_AU", "F1_AUopt"]);
    let rows: Vec<&str> = table.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(rows, ["DDAMFN+FC", "DDAMFN+LSTM", "CLIP+FC"]);
    assert!(d.join("runs/report.json").is_file());
}

#[test]
fn bad_invocations_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    let clip_va = affectkit(d, &["train", "--config", "toy.toml", "--task", "va", "--clip"]);
    assert!(!clip_va.status.success());
    assert!(String::from_utf8_lossy(&clip_va.stderr).contains("expr"));
    fs::write(d.join("garbage.afk"), b"AFKCKPT1 nope").unwrap();
    assert!(!affectkit(d, &["evaluate", "--checkpoint", "garbage.afk"]).status.success());
    assert!(!affectkit(d, &["train", "--task", "happy"]).status.success());
    assert!(!affectkit(d, &["report", "--runs", "data"]).status.success());
}
