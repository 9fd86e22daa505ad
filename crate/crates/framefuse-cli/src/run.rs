//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use framefuse::calculator::Calculator;
use framefuse::data::{synth_dataset, Dataset};
use framefuse::exec::Parallelism;
use framefuse::gates::{FrameFeatures, InitMode};
use framefuse::gradcheck;
use framefuse::params::ParamRegistry;
use framefuse::retrieval::{
    betweenness_audit, rank_metrics, report_csv, RetrievalReport, REPORT_CSV_HEADER,
};
use framefuse::tape::Tape;
use framefuse::train::{batch_loss_node, Checkpoint, TrainConfig, TrainState};
use framefuse::Matrix;

use crate::config::RunConfigFile;
use crate::{resolve_path, CommonArgs};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Output path for report-style subcommands: the `--out` flag wins
/// (relative to the working directory), then the config's `out`
/// (relative to the config file), else stdout.
fn output_target(args: &CommonArgs, config: &RunConfigFile) -> Option<PathBuf> {
    args.out
        .clone()
        .or_else(|| config.out.as_ref().map(|p| resolve_path(&args.config, p)))
}

/// Required output directory with the same precedence rules.
fn required_output_dir(args: &CommonArgs, config: &RunConfigFile) -> Result<PathBuf> {
    output_target(args, config)
        .ok_or_else(|| anyhow::anyhow!("config is missing \"out\" (or pass --out)"))
}

fn load_dataset(args: &CommonArgs, config: &RunConfigFile) -> Result<Dataset> {
    let manifest = resolve_path(&args.config, config.require_dataset()?);
    Ok(Dataset::load(&manifest)?)
}

/// Calculator from a checkpoint when configured, otherwise a fresh
/// seeded init of the configured calculator.
fn load_calculator(args: &CommonArgs, config: &RunConfigFile) -> Result<(Calculator, TrainConfig)> {
    if let Some(ckpt_path) = &config.checkpoint {
        let path = resolve_path(&args.config, ckpt_path);
        let checkpoint = Checkpoint::load(&path)?;
        let calc = checkpoint.to_calculator()?;
        Ok((calc, checkpoint.config))
    } else {
        let train_config = config.train_config(args.seed)?;
        let calc = Calculator::init(
            &train_config.calculator,
            train_config.frames,
            train_config.dim,
            InitMode::ScaledUniform {
                seed: train_config.seed,
            },
        )?;
        Ok((calc, train_config))
    }
}

fn train_log_csv(log: &[framefuse::train::EpochLog]) -> String {
    let mut out = String::from("epoch,loss,direction,R@1,R@5,R@10,MdR,MnR,RSum\n");
    for entry in log {
        for (direction, report) in [("T2V", &entry.t2v), ("V2T", &entry.v2t)] {
            let _ = writeln!(
                out,
                "{},{},{}",
                entry.epoch,
                entry.loss,
                report.csv_row(direction)
            );
        }
    }
    out
}

pub fn gen_data(args: &CommonArgs) -> Result<()> {
    let config = RunConfigFile::load(&args.config)?;
    let mut synth = config.synth.clone().unwrap_or_default();
    if let Some(seed) = args.seed {
        synth.seed = seed;
    } else if let Some(seed) = config.seed {
        synth.seed = seed;
    }
    let out = required_output_dir(args, &config)?;
    let dataset = synth_dataset(&synth)?;
    let manifest = dataset.save(&out)?;
    println!("wrote {} pairs to {}", dataset.len(), manifest.display());
    Ok(())
}

pub fn train(args: &CommonArgs) -> Result<()> {
    let config = RunConfigFile::load(&args.config)?;
    let train_config = config.train_config(args.seed)?;
    let dataset = load_dataset(args, &config)?;
    let out = required_output_dir(args, &config)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let output = framefuse::train::train(&train_config, &dataset)?;
    output.checkpoint.save(&out.join("checkpoint.json"))?;
    write_file(&out.join("train_log.csv"), &train_log_csv(&output.log))?;

    for entry in &output.log {
        println!(
            "epoch={} loss={} t2v_r1={:.1} v2t_r1={:.1} t2v_rsum={:.1}",
            entry.epoch, entry.loss, entry.t2v.r_at_1, entry.v2t.r_at_1, entry.t2v.rsum
        );
    }
    println!("checkpoint written to {}", out.join("checkpoint.json").display());
    Ok(())
}

fn eval_reports(
    calc: &Calculator,
    train_config: &TrainConfig,
    dataset: &Dataset,
    normalize: bool,
) -> Result<(RetrievalReport, RetrievalReport)> {
    let texts = dataset.caption_matrix()?;
    let items = dataset.padded_frames(train_config.frames)?;
    let sims = calc.similarity(&texts, &items, normalize, Parallelism::Auto)?;
    let gt: Vec<usize> = (0..items.len()).collect();
    let t2v = rank_metrics(&sims, &gt, Parallelism::Auto)?;
    let v2t = rank_metrics(&sims.transposed(), &gt, Parallelism::Auto)?;
    Ok((t2v, v2t))
}

pub fn eval(args: &CommonArgs) -> Result<()> {
    let config = RunConfigFile::load(&args.config)?;
    let (calc, train_config) = load_calculator(args, &config)?;
    let dataset = load_dataset(args, &config)?;
    let normalize = config.normalize.unwrap_or(true);
    let (t2v, v2t) = eval_reports(&calc, &train_config, &dataset, normalize)?;
    let csv = report_csv(&t2v, &v2t);
    match output_target(args, &config) {
        Some(path) => {
            write_file(&path, &csv)?;
            println!("report written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn grad_check(args: &CommonArgs) -> Result<()> {
    let config = RunConfigFile::load(&args.config)?;
    let section = config.grad_check.clone().unwrap_or_default();
    let train_config = config.train_config(args.seed)?;
    if section.batch < 2 {
        bail!("grad_check.batch must be at least 2");
    }

    let calc = Calculator::init(
        &train_config.calculator,
        train_config.frames,
        train_config.dim,
        InitMode::ScaledUniform {
            seed: train_config.seed,
        },
    )?;
    let dataset = synth_dataset(&framefuse::data::SynthConfig {
        pairs: section.batch,
        dim: train_config.dim,
        frames_min: train_config.frames.max(2) - 1,
        frames_max: train_config.frames + 2,
        separation: 1.0,
        noise: 0.5,
        irrelevant_frac: 0.25,
        seed: train_config.seed.wrapping_add(17),
    })?;
    let texts = dataset.caption_matrix()?;
    let items = dataset.padded_frames(train_config.frames)?;

    let state = TrainState {
        params: calc.params.clone(),
        log_temperature: train_config
            .learnable_temperature
            .then(|| Matrix::new(1, 1, vec![train_config.temperature.ln()]).expect("finite")),
    };
    let item_refs: Vec<&FrameFeatures> = items.iter().collect();
    let report = gradcheck::grad_check(&state, section.h, section.tol, |tape: &Tape, s: &TrainState| {
        let mut reg = ParamRegistry::new();
        let loss = batch_loss_node(
            tape,
            &calc,
            &mut reg,
            s,
            &texts,
            &item_refs,
            train_config.temperature,
        )?;
        Ok((loss, reg))
    })?;
    print!("{report}");
    if !report.passed() {
        bail!(
            "gradient check failed: {} entries above tol {:e} (max rel err {:.3e})",
            report.flagged.len(),
            report.tolerance,
            report.max_rel_err
        );
    }
    Ok(())
}

pub fn dump_weights(args: &CommonArgs) -> Result<()> {
    let config = RunConfigFile::load(&args.config)?;
    let (calc, train_config) = load_calculator(args, &config)?;
    let dataset = load_dataset(args, &config)?;
    let items = dataset.padded_frames(train_config.frames)?;

    let mut csv = String::from("video_id,frame_index,stage,weight\n");
    for (item, frames) in dataset.items.iter().zip(&items) {
        let stages = calc.gate_weights(frames)?;
        for (stage, weights) in stages {
            for (frame_index, weight) in weights.iter().enumerate() {
                let _ = writeln!(csv, "{},{},{},{}", item.id, frame_index, stage.name(), weight);
            }
        }
    }
    match output_target(args, &config) {
        Some(path) => {
            write_file(&path, &csv)?;
            println!("weights written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn analyze(args: &CommonArgs) -> Result<()> {
    let config = RunConfigFile::load(&args.config)?;
    let dataset = load_dataset(args, &config)?;
    let normalize = config.normalize.unwrap_or(false);

    let mut csv = String::from("video_id,frame_len,min_sim,max_sim,meanp_sim\n");
    for item in &dataset.items {
        let frames = FrameFeatures::full(item.frames.clone())?;
        let audit = betweenness_audit(&item.caption, &frames, normalize)?;
        if !normalize
            && !(audit.min_sim <= audit.meanp_sim + 1e-12 && audit.meanp_sim <= audit.max_sim + 1e-12)
        {
            bail!(
                "betweenness violated for {}: min={} meanp={} max={}",
                item.id,
                audit.min_sim,
                audit.meanp_sim,
                audit.max_sim
            );
        }
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            item.id,
            item.frames.rows(),
            audit.min_sim,
            audit.max_sim,
            audit.meanp_sim
        );
    }
    match output_target(args, &config) {
        Some(path) => {
            write_file(&path, &csv)?;
            println!("audit written to {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn sweep_ratio(args: &CommonArgs) -> Result<()> {
    let config = RunConfigFile::load(&args.config)?;
    let ratios = config.sweep_ratios.clone().unwrap_or_else(|| vec![2, 3, 4, 6]);
    if ratios.is_empty() {
        bail!("sweep_ratios must not be empty");
    }
    let dataset = load_dataset(args, &config)?;
    let out: PathBuf = required_output_dir(args, &config)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let base = config.train_config(args.seed)?;
    for &ratio in &ratios {
        let train_config = TrainConfig {
            calculator: framefuse::calculator::CalculatorConfig::ExcitationAndAggregation {
                excitation: framefuse::calculator::GateSpec::squeeze(ratio),
                aggregation: framefuse::calculator::GateSpec::squeeze(ratio),
            },
            ..base.clone()
        };
        let output = framefuse::train::train(&train_config, &dataset)?;
        let last = output
            .log
            .last()
            .ok_or_else(|| anyhow::anyhow!("training produced no epochs (epochs=0?)"))?;
        let csv = format!(
            "{REPORT_CSV_HEADER}\n{}\n{}\n",
            last.t2v.csv_row("T2V"),
            last.v2t.csv_row("V2T")
        );
        let path = out.join(format!("ratio_{ratio}.csv"));
        write_file(&path, &csv)?;
        println!(
            "ratio={ratio} t2v_r1={:.1} t2v_rsum={:.1} report={}",
            last.t2v.r_at_1,
            last.t2v.rsum,
            path.display()
        );
    }
    Ok(())
}
