use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cekd_core::augment::{apply_augmentation, sample_pairing, MixKind, MixMethod};
use cekd_core::data::{generate_synthetic, load_dataset, save_dataset, save_pnm, DatasetSpec};
use cekd_core::error::{CekdError, Result};
use cekd_core::harness::{emit_cam, evaluate, run_experiment, sweep, ExperimentConfig};
use cekd_core::model::load_checkpoint;
use cekd_core::numerics::RngStream;

#[derive(Parser)]
#[command(
    name = "cekd",
    about = "Cross-ensemble knowledge distillation between two jointly trained CNNs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Mixup,
    Cutmix,
    Snapmix,
}

impl From<MethodArg> for MixKind {
    fn from(value: MethodArg) -> MixKind {
        match value {
            MethodArg::Mixup => MixKind::MixUp,
            MethodArg::Cutmix => MixKind::CutMix,
            MethodArg::Snapmix => MixKind::SnapMix,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON spec.
    GenerateData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a JSON experiment config, writing metrics and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write mixed example images for one augmentation method.
    AugmentPreview {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit CAM heatmaps for a checkpoint over a dataset's test split.
    Cam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment per value of a varied key, e.g.
    /// `--vary lambda1=0.1,0.3,0.5,0.7,0.9`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        vary: String,
        #[arg(long, default_value = "sweep_out")]
        out: PathBuf,
    },
}

fn load_spec(path: &PathBuf) -> Result<DatasetSpec> {
    let raw = std::fs::read_to_string(path)?;
    let spec: DatasetSpec = serde_json::from_str(&raw)
        .map_err(|e| CekdError::Config(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { spec, out } => {
            let spec = load_spec(&spec)?;
            let dataset = generate_synthetic(&spec)?;
            save_dataset(&out, &dataset)?;
            println!(
                "wrote {} samples ({} train / {} test) to {}",
                dataset.samples.len(),
                dataset.train_samples().len(),
                dataset.test_samples().len(),
                out.display()
            );
        }
        Command::Train { config, out } => {
            let config = ExperimentConfig::load(&config)?;
            let summary = run_experiment(&config, &out)?;
            match summary.final_student_acc {
                Some(acc) => println!(
                    "done: teacher acc {:.4}, student acc {:.4} ({} epochs, {} ms)",
                    summary.final_teacher_acc, acc, summary.epochs, summary.total_wall_ms
                ),
                None => println!(
                    "done: teacher acc {:.4} ({} epochs, {} ms)",
                    summary.final_teacher_acc, summary.epochs, summary.total_wall_ms
                ),
            }
        }
        Command::Eval { checkpoint, data } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let dataset = load_dataset(&data)?;
            let test = dataset.test_samples();
            let acc = evaluate(&ckpt.params, &ckpt.config, &test)?;
            println!("test accuracy {:.4} on {} samples", acc, test.len());
        }
        Command::AugmentPreview {
            method,
            data,
            out,
            seed,
        } => {
            let dataset = load_dataset(&data)?;
            let kind = MixKind::from(method);
            let mix = MixMethod {
                kind,
                alpha: 5.0,
                apply_prob: 1.0,
            };
            let train = dataset.train_samples();
            let n = train.len().min(16);
            if n < 2 {
                return Err(CekdError::Config("need at least 2 train samples".into()));
            }
            // spread the preview picks across the whole train split so the
            // mixes cross class boundaries
            let picks: Vec<&_> = (0..n).map(|i| train[i * train.len() / n]).collect();
            let images: Vec<_> = picks.iter().map(|s| s.image.clone()).collect();
            let labels: Vec<_> = picks.iter().map(|s| s.label).collect();
            let rng = RngStream::new(seed);
            let pairing = sample_pairing(n, &mut rng.child("pairing"));
            // uniform semantic weighting: previews need no trained network
            let uniform = |image: &cekd_core::numerics::Tensor, _class: usize| {
                let (h, w) = (image.shape()[1], image.shape()[2]);
                Ok(cekd_core::numerics::Tensor::full(&[h, w], 1.0))
            };
            let provider = if kind == MixKind::SnapMix {
                Some(&uniform as cekd_core::augment::CamProvider<'_>)
            } else {
                None
            };
            let batch =
                apply_augmentation(&images, &labels, &pairing, &mix, provider, &rng.child("mix"))?;
            std::fs::create_dir_all(&out)?;
            for (i, sample) in batch.samples.iter().enumerate() {
                let name = format!(
                    "{i:02}_a{}_b{}_wa{:.3}.pgm",
                    sample.label_a, sample.label_b, sample.w_a
                );
                save_pnm(&out.join(name), &sample.image)?;
            }
            println!("wrote {} previews to {}", batch.len(), out.display());
        }
        Command::Cam {
            checkpoint,
            data,
            out,
        } => {
            emit_cam(&checkpoint, &data, &out)?;
            println!("wrote CAM heatmaps to {}", out.display());
        }
        Command::Sweep { config, vary, out } => {
            let config = ExperimentConfig::load(&config)?;
            let (key, values) = vary
                .split_once('=')
                .ok_or_else(|| CekdError::Config("--vary expects key=v1,v2,...".into()))?;
            let values: Vec<String> = values.split(',').map(|s| s.trim().to_string()).collect();
            let outcomes = sweep(&config, key, &values, &out)?;
            for outcome in &outcomes {
                match outcome.summary.best_student_acc {
                    Some(acc) => println!(
                        "{}: teacher best {:.4}, student best {:.4}",
                        outcome.label, outcome.summary.best_teacher_acc, acc
                    ),
                    None => println!(
                        "{}: teacher best {:.4}",
                        outcome.label, outcome.summary.best_teacher_acc
                    ),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
