use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn remixit(args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_remixit"));
    cmd.args(args).env_remove("REMIXIT_SEED");
    if let Some(s) = seed {
        cmd.env("REMIXIT_SEED", s);
    }
    cmd.output().expect("spawn remixit")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn summary(o: &Output, key: &str) -> f64 {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(|v| v.parse().unwrap()))
        .unwrap_or_else(|| panic!("no {key} in {}", stdout(o)))
}

const TINY: &str = "model.num_filters = 8\nmodel.filter_len = 8\nmodel.hop = 4\nmodel.hidden_width = 8\n\
                    train_count = 8\ntest_count = 4\nprobe_count = 3\nbatch = 4\n";

fn tiny_spec(dir: &Path) -> String {
    let p = dir.join("tiny.spec");
    fs::write(&p, "builtin = A\nclip_len = 256\n").unwrap();
    p.display().to_string()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let spec = tiny_spec(dir);
    let p = dir.join(name);
    fs::write(&p, format!("{TINY}train_data = {spec}\n{body}")).unwrap();
    p.display().to_string()
}

#[test]
fn gen_data_mixit_split_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec(dir.path());
    let out = dir.path().join("d1");
    let o = remixit(&["gen-data", "--spec", &spec, "--count", "100", "--split", "0.8/0.2", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{o:?}");
    let text = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("\tmixtures_only\t")).count(), 80);
    assert_eq!(text.lines().filter(|l| l.contains("\tnoise_only\t")).count(), 20);
    let again = dir.path().join("d2");
    remixit(&["gen-data", "--spec", &spec, "--count", "100", "--split", "0.8/0.2", "--out", again.to_str().unwrap()], None);
    assert_eq!(fs::read(out.join("manifest.tsv")).unwrap(), fs::read(again.join("manifest.tsv")).unwrap());
}

#[test]
fn gen_data_bad_split_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = remixit(&["gen-data", "--spec", "A", "--count", "10", "--split", "0.8/0.3", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("split"));
    let o = remixit(&["gen-data", "--spec", "nope.spec", "--count", "10", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn remixit_without_teacher_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "r.cfg", "epochs = 1\n");
    let o = remixit(&["train", "--mode", "remixit", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn supervised_smoke_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.cfg", "epochs = 2\n");
    let run = |name: &str, seed: Option<&str>| {
        let out = dir.path().join(name);
        let o = remixit(&["train", "--mode", "supervised", "--config", &cfg, "--out", out.to_str().unwrap()], seed);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        summary(&o, "final_si_sdri");
        (fs::read_to_string(out.join("metrics.csv")).unwrap(), fs::read_to_string(out.join("manifest.txt")).unwrap())
    };
    let (a, ma) = run("a", None);
    let (b, mb) = run("b", None);
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "epoch,mode,si_sdr,si_sdri,loss,teacher_version,lr");
    assert_eq!(lines.len(), 3);
    let id = |m: &str| m.lines().find(|l| l.starts_with("run_id")).unwrap().to_string();
    assert_eq!(id(&ma), id(&mb));
    let (c, mc) = run("c", Some("5"));
    assert_ne!(c, a);
    assert_ne!(id(&mc), id(&ma));
}

#[test]
fn non_finite_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "epochs = 3\nlr0 = 1e300\n");
    let o = remixit(&["train", "--mode", "supervised", "--config", &cfg, "--out", dir.path().join("r").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eval_identity_bandpass_and_missing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec(dir.path());
    let data = dir.path().join("test");
    let o = remixit(&["gen-data", "--spec", &spec, "--count", "6", "--heldout", "--out", data.to_str().unwrap()], None);
    assert!(o.status.success());
    let manifest = data.join("manifest.tsv");
    let row = |o: &Output| -> Vec<String> { stdout(o).lines().nth(1).unwrap().split(',').map(String::from).collect() };
    let o = remixit(&["eval", "--model", "identity", "--data", manifest.to_str().unwrap()], None);
    assert!(o.status.success());
    assert_eq!(row(&o)[3].parse::<f64>().unwrap(), 0.0);
    let o = remixit(&["eval", "--model", "bandpass", "--data", manifest.to_str().unwrap()], None);
    assert!(row(&o)[3].parse::<f64>().unwrap() >= 10.0);
    let o = remixit(&["eval", "--model", "missing.rmxm", "--data", manifest.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    let mixtures = dir.path().join("mix");
    remixit(&["gen-data", "--spec", &spec, "--count", "4", "--split", "mixtures=1", "--out", mixtures.to_str().unwrap()], None);
    let o = remixit(&["eval", "--model", "identity", "--data", mixtures.join("manifest.tsv").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn wav_manifest_evaluates_like_synthetic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec(dir.path());
    let data = dir.path().join("wav");
    let o = remixit(&["gen-data", "--spec", &spec, "--count", "3", "--heldout", "--wav", "--out", data.to_str().unwrap()], None);
    assert!(o.status.success(), "{o:?}");
    let text = fs::read_to_string(data.join("manifest.tsv")).unwrap();
    assert!(text.contains(".mix.wav"));
    let o = remixit(&["eval", "--model", "bandpass", "--data", data.join("manifest.tsv").to_str().unwrap()], None);
    assert!(o.status.success(), "{o:?}");
}

#[test]
fn static_teacher_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let sup_cfg = write_config(dir.path(), "s.cfg", "epochs = 1\n");
    let teacher_dir = dir.path().join("teacher");
    let o = remixit(&["train", "--mode", "supervised", "--config", &sup_cfg, "--out", teacher_dir.to_str().unwrap()], None);
    assert!(o.status.success());
    let cfg = write_config(dir.path(), "r.cfg", "epochs = 3\nprotocol = static\n");
    let run_dir = dir.path().join("remix");
    let teacher = teacher_dir.join("model.rmxm");
    let o = remixit(
        &["train", "--mode", "remixit", "--config", &cfg, "--teacher", teacher.to_str().unwrap(), "--out", run_dir.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = remixit(&["analyze", "--run", run_dir.to_str().unwrap(), "--dat"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(run_dir.join("decomposition.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,sup_term,teacher_term,corr_term,total"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!((r[2] - rows[0][2]).abs() < 1e-9);
        assert!((r[4] - (r[1] + r[2] - 2.0 * r[3])).abs() < 1e-9);
    }
    assert!(run_dir.join("decomposition.dat").exists());
    let o = remixit(&["analyze", "--run", teacher_dir.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_runs_seeds_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.cfg", "epochs = 1\n");
    let out = dir.path().join("sweep");
    let o = remixit(&["sweep", "--mode", "supervised", "--config", &cfg, "--seeds", "1,2,3", "--jobs", "2", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for s in 1..=3 {
        assert!(out.join(format!("seed_{s}/metrics.csv")).exists());
    }
}
