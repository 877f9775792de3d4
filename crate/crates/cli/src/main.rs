use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latentaug_core::data::{Provenance, Split, ToySpec};
use latentaug_core::pipeline::{self, PcaFeatures, RunConfig, CONFIGURATIONS};
use latentaug_core::{ClassicalOp, Error, Result};
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(
    name = "latentaug",
    version,
    about = "Class-specific VAE augmentation pipeline"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Default hyperparameter set: desk or paper
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Dataset directory holding manifest.csv and images/
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Output directory for checkpoints and reports
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat JSON config file; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic grating dataset
    GenToy {
        /// Images per class, comma separated
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        overlap: Option<f64>,
        /// Image side length in pixels
        #[arg(long)]
        size: Option<usize>,
        /// Overwrite a non-empty dataset directory
        #[arg(long)]
        force: bool,
    },
    /// Assign stratified train/val/test splits in place
    Split {
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        val_fraction: Option<f64>,
    },
    /// Train one VAE per class on its real training images
    TrainVae {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        latent_dim: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Decode latent interpolations into synthetic training images
    Generate {
        /// Synthetic images per class
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a classifier for one data configuration
    TrainClf {
        /// Name of the checkpoint and report row
        #[arg(long, default_value = "real_noaug")]
        name: String,
        /// Include synthetic training images
        #[arg(long)]
        with_synthetic: bool,
        /// Apply rotations and mirroring on the fly
        #[arg(long)]
        classical_aug: bool,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated subset of rot90,rot180,rot270,flip_h,flip_v
        #[arg(long, value_delimiter = ',')]
        ops: Option<Vec<String>>,
    },
    /// Score saved classifiers on the test split and write the report
    Evaluate {
        /// Classifier names; defaults to every saved configuration
        #[arg(long, value_delimiter = ',')]
        names: Option<Vec<String>>,
    },
    /// Run the full four-configuration comparison
    RunExperiment {
        /// Synthetic images per class
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        vae_epochs: Option<usize>,
        #[arg(long)]
        clf_epochs: Option<usize>,
    },
    /// Export per-class PCA scatter data of real and synthetic images
    PcaExport {
        /// pixels or latent
        #[arg(long)]
        features: Option<String>,
    },
}

fn set(map: &mut Map<String, Value>, key: &str, value: Option<impl Into<Value>>) {
    if let Some(v) = value {
        map.insert(key.to_string(), v.into());
    }
}

fn resolve(common: &Common, overrides: Map<String, Value>) -> Result<RunConfig> {
    let mut cli = overrides;
    set(&mut cli, "seed", common.seed);
    set(&mut cli, "profile", common.profile.clone());
    set(
        &mut cli,
        "data_root",
        common.data_root.as_ref().map(|p| p.display().to_string()),
    );
    set(
        &mut cli,
        "out_dir",
        common.out.as_ref().map(|p| p.display().to_string()),
    );
    let file = common
        .config
        .as_deref()
        .map(RunConfig::from_json_file)
        .transpose()?;
    RunConfig::resolve(file.as_ref(), &cli)
}

fn parse_ops(ops: &[String]) -> Result<Vec<Value>> {
    ops.iter()
        .map(|s| Ok(Value::String(s.parse::<ClassicalOp>()?.name().to_string())))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = Map::new();
    match cli.command {
        Command::GenToy {
            counts,
            noise,
            overlap,
            size,
            force,
        } => {
            let cfg = resolve(&cli.common, overrides)?;
            let mut spec = ToySpec {
                seed: cfg.seed,
                ..ToySpec::default()
            };
            if let Some(c) = counts {
                spec.counts = c;
            }
            spec.noise = noise.unwrap_or(spec.noise);
            spec.overlap = overlap.unwrap_or(spec.overlap);
            if let Some(s) = size {
                (spec.width, spec.height) = (s, s);
            }
            let m = pipeline::gen_toy(&spec, &cfg.data_root, force)?;
            for (k, n) in m.class_counts(|_| true).iter().enumerate() {
                println!("class {k}: {n} images");
            }
            println!("wrote {}", cfg.data_root.display());
        }
        Command::Split {
            test_fraction,
            val_fraction,
        } => {
            set(&mut overrides, "test_fraction", test_fraction);
            set(&mut overrides, "val_fraction", val_fraction);
            let cfg = resolve(&cli.common, overrides)?;
            cfg.save_resolved()?;
            let m = pipeline::split(&cfg)?;
            for (name, split) in [
                ("train", Split::Train),
                ("val", Split::Val),
                ("test", Split::Test),
            ] {
                let counts =
                    m.class_counts(|r| r.split == split && r.provenance == Provenance::Real);
                println!("{name}: {counts:?}");
            }
        }
        Command::TrainVae {
            epochs,
            latent_dim,
            lr,
        } => {
            set(&mut overrides, "vae_epochs", epochs);
            set(&mut overrides, "vae_latent_dim", latent_dim);
            set(&mut overrides, "vae_lr", lr);
            let cfg = resolve(&cli.common, overrides)?;
            cfg.save_resolved()?;
            for (k, h) in pipeline::train_vaes(&cfg)?.iter().enumerate() {
                let (first, last) = (h[0].total, h[h.len() - 1].total);
                println!(
                    "class {k}: loss {first:.3} -> {last:.3} over {} epochs",
                    h.len()
                );
            }
        }
        Command::Generate { count } => {
            set(&mut overrides, "synthetic_per_class", count);
            let cfg = resolve(&cli.common, overrides)?;
            cfg.save_resolved()?;
            let m = pipeline::generate(&cfg)?;
            let synth = m.class_counts(|r| r.provenance == Provenance::Synthetic);
            println!("synthetic images per class: {synth:?}");
        }
        Command::TrainClf {
            name,
            with_synthetic,
            classical_aug,
            epochs,
            ops,
        } => {
            set(&mut overrides, "clf_epochs", epochs);
            if let Some(ops) = ops {
                overrides.insert("classical_ops".into(), Value::Array(parse_ops(&ops)?));
            }
            let cfg = resolve(&cli.common, overrides)?;
            cfg.save_resolved()?;
            let (_, history) = pipeline::train_clf(&cfg, &name, with_synthetic, classical_aug)?;
            let best = history
                .iter()
                .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
                .expect("history is non-empty");
            println!(
                "{name}: best epoch {} val loss {:.4} val acc {:.2}%",
                best.epoch,
                best.val_loss,
                100.0 * best.val_acc
            );
        }
        Command::Evaluate { names } => {
            let cfg = resolve(&cli.common, overrides)?;
            cfg.save_resolved()?;
            let names: Vec<String> = names.unwrap_or_else(|| {
                CONFIGURATIONS
                    .iter()
                    .map(|(n, _, _)| n.to_string())
                    .filter(|n| cfg.clf_checkpoint(n).is_file())
                    .collect()
            });
            if names.is_empty() {
                return Err(Error::Contract(
                    "no classifier checkpoints found; run `train-clf` first".into(),
                ));
            }
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            print_rows(&pipeline::evaluate(&cfg, &refs)?);
        }
        Command::RunExperiment {
            count,
            vae_epochs,
            clf_epochs,
        } => {
            set(&mut overrides, "synthetic_per_class", count);
            set(&mut overrides, "vae_epochs", vae_epochs);
            set(&mut overrides, "clf_epochs", clf_epochs);
            let cfg = resolve(&cli.common, overrides)?;
            let summary = pipeline::run_experiment(&cfg)?;
            print_rows(&summary.rows);
            println!("test split sha256 {}", summary.test_digest);
            println!("reports in {}", cfg.out_dir.display());
        }
        Command::PcaExport { features } => {
            if let Some(f) = features {
                let parsed: PcaFeatures = serde_json::from_value(Value::String(f))?;
                overrides.insert("pca_features".into(), serde_json::to_value(parsed)?);
            }
            let cfg = resolve(&cli.common, overrides)?;
            cfg.save_resolved()?;
            for s in pipeline::pca_export(&cfg)? {
                println!(
                    "class {}: {} real + {} synthetic, mean NN distance {:.4} -> {:.4}",
                    s.class,
                    s.real_points,
                    s.synthetic_points,
                    s.real_nn_distance,
                    s.combined_nn_distance
                );
            }
        }
    }
    Ok(())
}

fn print_rows(rows: &[latentaug_core::eval::MetricsRow]) {
    for r in rows {
        let classes: Vec<String> = r.class_acc.iter().map(|a| format!("{a:.2}")).collect();
        println!(
            "{:<16} acc {:>6.2}  prec {:>6.2}  rec {:>6.2}  f1 {:>6.2}  class acc [{}]",
            r.config,
            r.overall_acc,
            r.overall_prec,
            r.overall_rec,
            r.overall_f1,
            classes.join(", ")
        );
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
