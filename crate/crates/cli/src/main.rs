use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use csanet::data::{generate_synthetic, SyntheticMode};
use csanet::harness::{
    evaluate, export_synthetic, gradcheck, mean_foreground_dsc, metrics_csv, predict, tiny_config, train,
    Checkpoint, RunConfig,
};
use csanet::model::CenterRole;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

/// CSA-Net: 2.5D segmentation with cross-slice and in-slice attention.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    no_csa: bool,
    #[arg(long)]
    no_isa: bool,
    #[arg(long)]
    center_role: Option<CenterRole>,
    #[arg(long)]
    attn_scaling: bool,
    #[arg(long)]
    clahe: bool,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Shared {
    fn resolve(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(h) = self.heads {
            cfg.heads = h;
        }
        if let Some(r) = self.center_role {
            cfg.center_role = r;
        }
        cfg.no_csa |= self.no_csa;
        cfg.no_isa |= self.no_isa;
        cfg.attn_scaling |= self.attn_scaling;
        cfg.clahe |= self.clahe;
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {kv:?}");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on the manifest's train split.
    Train(Shared),
    /// Score a checkpoint on the manifest's test split.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Segment one image volume.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare backward gradients with finite differences on a tiny network.
    Gradcheck {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value_t = 6)]
        per_group: usize,
    },
    /// Write a synthetic phantom dataset and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        train: usize,
        #[arg(long, default_value_t = 8)]
        test: usize,
        #[arg(long, default_value_t = 8)]
        depth: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value = "clean")]
        mode: SyntheticMode,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(shared) => {
            let cfg = shared.resolve(RunConfig::default())?;
            let start = Instant::now();
            let out = train(&cfg)?;
            for e in &out.epochs {
                println!(
                    "epoch {:>3}  loss {:.5}  ce {:.5}  dice {:.5}",
                    e.epoch, e.mean_loss, e.mean_ce, e.mean_dice
                );
            }
            println!("{} steps in {:.1}s", out.steps, start.elapsed().as_secs_f64());
            if cfg.checkpoint.is_none() {
                eprintln!("note: no checkpoint path configured, weights were not saved");
            }
        }
        Command::Eval { shared, checkpoint } => {
            let ckpt = Checkpoint::load(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let cfg = shared.resolve(ckpt.config.clone())?;
            let results = evaluate(&cfg, &ckpt)?;
            if cfg.metrics.is_none() {
                print!("{}", metrics_csv(&results, cfg.classes));
            }
            println!("mean foreground dsc {:.4}", mean_foreground_dsc(&results));
        }
        Command::Predict {
            checkpoint,
            input,
            output,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)
                .with_context(|| format!("loading {}", checkpoint.display()))?;
            let labels = predict(&ckpt, &input, &output)?;
            println!("wrote {:?} labels to {}", labels.dims(), output.display());
        }
        Command::Gradcheck { shared, per_group } => {
            let cfg = shared.resolve(tiny_config())?;
            let report = gradcheck(&cfg, per_group)?;
            print!("{}", report.to_text());
            if !report.passed() {
                bail!("gradient check failed");
            }
        }
        Command::Synth {
            out,
            seed,
            train,
            test,
            depth,
            size,
            classes,
            mode,
        } => {
            let set = generate_synthetic(seed, train + test, [depth, size, size], classes, mode)?;
            let manifest = export_synthetic(&set, train, &out)?;
            let cfg = RunConfig {
                seed,
                classes,
                image_size: size,
                center_noise: mode.center_noise(),
                manifest: Some(manifest.clone()),
                checkpoint: Some(out.join("model.ckpt")),
                loss_log: Some(out.join("loss.csv")),
                metrics: Some(out.join("metrics.csv")),
                ..RunConfig::default()
            };
            fs::write(out.join("run.cfg"), cfg.to_text())?;
            println!("wrote {} volumes and {}", set.cases.len(), manifest.display());
        }
    }
    Ok(())
}
