use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use anystereo::counters::NUM_LAYERS;
use anystereo::data::{to_pfm, Dataset};
use anystereo::io::write_pfm;
use anystereo::loss::three_pixel_error;
use anystereo::pipeline::{run_staged, InferOptions};
use anystereo::tensor::nn::Module;
use anystereo::train::{evaluate, train, LrSchedule, TrainConfig};
use anystereo::{LayerCounters, StereoModel};
use clap::{Args, Parser, Subcommand};

use crate::images::{read_ground_truth, read_pair, unpad};

#[derive(Debug, Parser)]
#[command(name = "anystereo", version, about = "Anytime stereo disparity estimation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic stereogram dataset as PFM files.
    GenData(GenData),
    /// Train a model and save a checkpoint.
    Train(TrainArgs),
    /// Estimate disparity for one stereo pair, stopping after a chosen stage.
    Infer(Infer),
    /// Time every stage over repeated inferences and write a CSV.
    Bench(Bench),
    /// Held-out 3-pixel error of every stage on a dataset.
    Eval(Eval),
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 24)]
    max_disp: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_ckpt: PathBuf,
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep this many trailing samples out of training and report their error.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    /// Per-epoch loss and held-out error.
    #[arg(long)]
    metrics_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Infer {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    out_pfm: PathBuf,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=4))]
    stage: u8,
    /// Also print the parameter count, stage timings and executed layers.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct Bench {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long)]
    csv: PathBuf,
    /// Ground-truth disparity (PFM or KITTI 16-bit PNG) for the error column.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Eval {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    csv: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Bench(a) => bench(a),
        Command::Eval(a) => eval(a),
    }
}

fn load_model(ckpt: Option<&PathBuf>) -> Result<StereoModel> {
    let model = StereoModel::new(0)?;
    if let Some(p) = ckpt {
        model.load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
    }
    Ok(model)
}

fn gen_data(a: GenData) -> Result<()> {
    let ds = Dataset::synthetic(a.count, a.height, a.width, a.max_disp, a.seed)?;
    ds.save_dir(&a.out)?;
    println!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let ds = Dataset::load_dir(&a.data)?;
    if a.holdout >= ds.len() {
        bail!("holdout {} leaves no training samples out of {}", a.holdout, ds.len());
    }
    let (train_set, heldout) = ds.split(a.holdout);
    let model = StereoModel::new(a.seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        schedule: LrSchedule::Step {
            epoch: (a.epochs * 3 / 4).max(1),
            factor: 0.1,
        },
        seed: a.seed,
        checkpoint: Some(a.out_ckpt.clone()),
        metrics_csv: a.metrics_csv,
        ..TrainConfig::default()
    };
    for log in train(&model, &train_set.samples, &heldout.samples, &cfg)? {
        println!("{}", log.csv_row());
    }
    model.save(&a.out_ckpt)?;
    Ok(())
}

fn infer(a: Infer) -> Result<()> {
    let model = load_model(a.ckpt.as_ref())?;
    let (left, right, record) = read_pair(&a.left, &a.right)?;
    let counters = LayerCounters::new();
    let opts = InferOptions {
        max_stage: a.stage,
        counters: Some(counters.clone()),
        ..InferOptions::default()
    };
    let mut last = None;
    let mut timings = Vec::new();
    run_staged(&model, &left, &right, &opts, |r| {
        timings.push((r.stage, r.elapsed));
        last = Some(r);
    })?;
    let result = last.context("no stage was computed")?;
    let map = unpad(&result.disparity.values, record)?;
    write_pfm(&a.out_pfm, &to_pfm(&map)?)?;
    if a.verbose {
        println!("trainable parameters: {}", model.num_trainable());
        for (stage, t) in &timings {
            println!("stage {stage}: {:.3} ms", ms(*t));
        }
        let executed = counters.executed();
        println!("layers executed: {} of {NUM_LAYERS}", executed.len());
    }
    println!("wrote stage-{} disparity to {}", result.stage, a.out_pfm.display());
    Ok(())
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Linear-interpolated percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn bench(a: Bench) -> Result<()> {
    let model = load_model(a.ckpt.as_ref())?;
    let (left, right, record) = read_pair(&a.left, &a.right)?;
    let gt = a.gt.as_deref().map(read_ground_truth).transpose()?;
    if let Some((_, _, h, w)) = &gt {
        if (*h, *w) != (record.height, record.width) {
            bail!("ground truth is {h}x{w} but the images are {}x{}", record.height, record.width);
        }
    }
    let mut times: [Vec<f64>; 4] = Default::default();
    let mut errors = [None; 4];
    for rep in 0..a.reps {
        let mut outs = Vec::with_capacity(4);
        run_staged(&model, &left, &right, &InferOptions::default(), |r| {
            times[r.stage as usize - 1].push(ms(r.elapsed));
            outs.push(r.disparity.values);
        })?;
        if rep == 0 {
            if let Some((d, m, _, _)) = &gt {
                for (s, out) in outs.iter().enumerate() {
                    let pred = unpad(out, record)?;
                    errors[s] = Some(three_pixel_error(pred.data(), d, m)?);
                }
            }
        }
    }
    let mut csv = String::from("stage,mean_ms,p50_ms,p95_ms,err3px\n");
    for (s, t) in times.iter_mut().enumerate() {
        t.sort_by(f64::total_cmp);
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let err = errors[s].map_or(String::new(), |e| format!("{e:.6}"));
        writeln!(
            csv,
            "{},{mean:.3},{:.3},{:.3},{err}",
            s + 1,
            percentile(t, 0.5),
            percentile(t, 0.95)
        )?;
    }
    fs::write(&a.csv, &csv).with_context(|| format!("writing {}", a.csv.display()))?;
    print!("{csv}");
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let model = load_model(Some(&a.ckpt))?;
    let ds = Dataset::load_dir(&a.data)?;
    if ds.is_empty() {
        bail!("no samples found in {}", a.data.display());
    }
    let err = evaluate(&model, &ds.samples, 4)?;
    let mut csv = String::from("stage,err3px\n");
    for (s, e) in err.iter().enumerate() {
        writeln!(csv, "{},{e:.6}", s + 1)?;
    }
    fs::write(&a.csv, &csv).with_context(|| format!("writing {}", a.csv.display()))?;
    print!("{csv}");
    Ok(())
}
