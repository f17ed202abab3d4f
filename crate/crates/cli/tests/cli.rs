use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anystereo::data::{to_pfm, Dataset};
use anystereo::io::{crop, read_pfm, write_pfm, CropRecord};
use anystereo::{StereoModel, Tensor};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anystereo"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cli")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A stereo pair and its ground truth written as PFM files, cut from a
/// stereogram generated at the next multiple of 16.
fn pair_files(dir: &Path, h: usize, w: usize) -> [PathBuf; 3] {
    let (ph, pw) = (h.div_ceil(16) * 16, w.div_ceil(16) * 16);
    let sample = &Dataset::synthetic(1, ph, pw, 8, 3).unwrap().samples[0];
    let paths = ["left.pfm", "right.pfm", "gt.pfm"].map(|n| dir.join(n));
    let record = CropRecord { height: h, width: w };
    for (t, p) in [&sample.left, &sample.right, &sample.disparity].into_iter().zip(&paths) {
        let batched = Tensor::new(t.to_vec(), &[1, t.shape()[0], ph, pw]).unwrap();
        write_pfm(p, &to_pfm(&crop(&batched, record).unwrap()).unwrap()).unwrap();
    }
    paths
}

fn checkpoint(dir: &Path) -> PathBuf {
    let p = dir.join("model.ckpt");
    StereoModel::<f32>::new(11).unwrap().save(&p).unwrap();
    p
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["infer", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["nonsense"]).status.code(), Some(1));
    let o = run(&["infer", "--left", "a", "--right", "b", "--out-pfm", "c", "--stage", "5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("gen-data"));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.pfm");
    let out = dir.path().join("out.pfm");
    let o = run(&["infer", "--left", s(&missing), "--right", s(&missing), "--out-pfm", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn gen_data_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["gen-data", "--out", s(d), "--count", "2", "--height", "32", "--width", "64", "--max-disp", "6", "--seed", "7"]);
        assert!(o.status.success(), "{o:?}");
    }
    for i in 0..2 {
        for k in ["left", "right", "disp", "mask"] {
            let name = format!("{i:05}_{k}.pfm");
            assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
        }
    }
}

#[test]
fn infer_stage_two_stops_early() {
    let dir = TempDir::new().unwrap();
    let [l, r, _] = pair_files(dir.path(), 40, 72);
    let ckpt = checkpoint(dir.path());
    let out = dir.path().join("d.pfm");
    let o = run(&["infer", "--ckpt", s(&ckpt), "--left", s(&l), "--right", s(&r), "--out-pfm", s(&out), "--stage", "2", "-v"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("stage 2:"));
    assert!(!text.contains("stage 3:"));
    let executed: usize = anystereo::counters::stage_layers(1).len() + anystereo::counters::stage_layers(2).len();
    assert!(text.contains(&format!("layers executed: {executed} of 55")), "{text}");
    let map = read_pfm(&out).unwrap();
    assert_eq!((map.height, map.width, map.channels), (40, 72, 1));
}

#[test]
fn verbose_infer_reports_parameter_count() {
    let dir = TempDir::new().unwrap();
    let [l, r, _] = pair_files(dir.path(), 32, 64);
    let out = dir.path().join("d.pfm");
    let o = run(&["infer", "--left", s(&l), "--right", s(&r), "--out-pfm", s(&out), "--verbose"]);
    assert!(o.status.success(), "{o:?}");
    use anystereo::tensor::nn::Module;
    let n = StereoModel::<f32>::new(0).unwrap().num_trainable();
    assert!(stdout(&o).contains(&format!("trainable parameters: {n}\n")));
}

#[test]
fn bench_writes_four_cumulative_rows() {
    let dir = TempDir::new().unwrap();
    let [l, r, gt] = pair_files(dir.path(), 32, 64);
    let csv = dir.path().join("bench.csv");
    let o = run(&["bench", "--left", s(&l), "--right", s(&r), "--reps", "3", "--csv", s(&csv), "--gt", s(&gt)]);
    assert!(o.status.success(), "{o:?}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("stage,mean_ms,p50_ms,p95_ms,err3px"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 4);
    let mut prev = 0.0;
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], (i + 1).to_string());
        let [mean, p50, p95, err]: [f64; 4] = std::array::from_fn(|k| row[k + 1].parse().unwrap());
        assert!(p50 <= p95);
        assert!(mean > prev);
        assert!((0.0..=1.0).contains(&err));
        prev = mean;
    }
}

#[test]
fn train_then_eval() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("m.ckpt");
    let metrics = dir.path().join("metrics.csv");
    let eval_csv = dir.path().join("eval.csv");
    let o = run(&["gen-data", "--out", s(&data), "--count", "6", "--height", "32", "--width", "64", "--max-disp", "6", "--seed", "1"]);
    assert!(o.status.success(), "{o:?}");
    let o = run(&[
        "train", "--data", s(&data), "--out-ckpt", s(&ckpt), "--epochs", "2", "--batch", "2", "--lr", "1e-3", "--seed", "2",
        "--holdout", "2", "--metrics-csv", s(&metrics),
    ]);
    assert!(o.status.success(), "{o:?}");
    let m = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(m.lines().next(), Some("epoch,loss,err_s1,err_s2,err_s3,err_s4"));
    assert_eq!(m.lines().count(), 3);

    let o = run(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--csv", s(&eval_csv)]);
    assert!(o.status.success(), "{o:?}");
    let e = std::fs::read_to_string(&eval_csv).unwrap();
    assert_eq!(e.lines().count(), 5);
}

#[test]
fn eval_rejects_missing_checkpoint() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    Dataset::synthetic(1, 32, 32, 4, 0).unwrap().save_dir(&data).unwrap();
    let bogus = dir.path().join("nope.ckpt");
    let csv = dir.path().join("e.csv");
    assert_eq!(run(&["eval", "--ckpt", s(&bogus), "--data", s(&data), "--csv", s(&csv)]).status.code(), Some(2));
}
