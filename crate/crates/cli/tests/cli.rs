use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use epm_core::image_io::decode_pnm;
use epm_core::{load_image, load_model, read_manifest};

fn epm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epm"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const RUN_CFG: &str = "\
# small end-to-end run
synth_num_train = 6
synth_num_test = 4
codebook_size = 16
k = 3
n = 5
outer_iters = 2
anneal_at = 1
spm_levels = 1,2
seed = 3
";

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = epm(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown subcommand"));
    assert_eq!(epm(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(epm(dir.path(), &["train", "--bogus_key", "1"]).status.code(), Some(2));
    assert_eq!(epm(dir.path(), &["train", "--k", "lots"]).status.code(), Some(2));
    assert!(epm(dir.path(), &["help"]).status.success());
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = epm(dir.path(), &["score", "--model", "missing.epm", "--image", "a.pgm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.cfg"), RUN_CFG).unwrap();
    let cfg = ["--config", "run.cfg"];

    ok(&epm(d, &[&["synth"][..], &cfg].concat()));
    let train = read_manifest(d.join("data/train.txt")).unwrap();
    assert_eq!(train.entries.len(), 12);

    ok(&epm(d, &[&["codebook"][..], &cfg].concat()));
    assert!(d.join("codebook.txt").exists());
    ok(&epm(d, &[&["features"][..], &cfg].concat()));
    assert!(d.join("features/train/pos_0000.pgm.eft").exists());
    assert!(d.join("features/test/neg_0003.pgm.eft").exists());

    ok(&epm(d, &[&["train"][..], &cfg].concat()));
    let model = load_model(d.join("model.epm")).unwrap();
    assert!(model.len() <= 5 * 6 && !model.is_empty());
    let log = fs::read_to_string(d.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("iter,objective,num_parts,train_ap"));
    assert_eq!(log.lines().count(), 4);

    let image = "data/test/pos_0000.pgm";
    let line = ok(&epm(d, &[&["score"][..], &cfg, &["--image", image]].concat()));
    let fields: Vec<&str> = line.trim_end().split(',').collect();
    assert_eq!(line.lines().count(), 1);
    assert_eq!(fields[0], image);
    let single: f64 = fields[1].parse().unwrap();

    ok(&epm(d, &[&["score"][..], &cfg, &["--manifest", "data/test.txt", "--scores", "scores.csv"]].concat()));
    let scores = fs::read_to_string(d.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next(), Some("image_path,score"));
    assert_eq!(scores.lines().count(), 9);
    // Cached and freshly computed tensors give the same score.
    let first: f64 = scores.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(first, single);

    let base = ok(&epm(d, &[&["baseline"][..], &cfg].concat()));
    assert!(base.starts_with("class,ap\nsynthetic,"));
    assert!(d.join("baseline.lin").exists());

    let report = ok(&epm(d, &[&["eval"][..], &cfg, &["--context", "true"]].concat()));
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "class,ap");
    assert!(lines[1].starts_with("synthetic,"));
    assert!(lines[2].starts_with("mAP,"));
    assert_eq!(fs::read_to_string(d.join("report.csv")).unwrap(), report);

    ok(&epm(d, &[&["visualize"][..], &cfg, &["--image", image, "--output", "comp.pgm"]].concat()));
    let comp = decode_pnm(&fs::read(d.join("comp.pgm")).unwrap()).unwrap();
    let src = load_image(d.join(image)).unwrap();
    assert!(comp.pixels().iter().zip(src.pixels()).all(|(&c, &s)| c == 0.0 || c == s));
    assert!(comp.pixels().iter().any(|&c| c != 0.0));
}

#[test]
fn identical_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.cfg"), RUN_CFG).unwrap();
    let cfg = ["--config", "run.cfg"];
    ok(&epm(d, &[&["synth"][..], &cfg].concat()));
    ok(&epm(d, &[&["codebook"][..], &cfg].concat()));
    for tag in ["a", "b"] {
        let model = format!("{tag}.epm");
        let log = format!("{tag}.csv");
        ok(&epm(d, &[&["train"][..], &cfg, &["--model", &model, "--log", &log, "--features_dir", ""]].concat()));
    }
    assert_eq!(fs::read(d.join("a.epm")).unwrap(), fs::read(d.join("b.epm")).unwrap());
    assert_eq!(fs::read(d.join("a.csv")).unwrap(), fs::read(d.join("b.csv")).unwrap());
}
