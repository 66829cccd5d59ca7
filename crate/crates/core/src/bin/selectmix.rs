use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use selectmix::datasets::NoiseKind;
use selectmix::harness::{self, ExperimentConfig};
use selectmix::mixing::{MixKind, PartnerPool};
use selectmix::Result;

#[derive(Parser)]
#[command(name = "selectmix", version, about = "Noisy-label training with mismatch-guided Mixup")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the noisy training set as CSV.
    InjectNoise(Common),
    /// Write out-of-fold predictions as CSV plus the mismatch index list.
    OofPredict(Common),
    /// Run one experiment and write its JSON report.
    Train(Common),
    /// Train a model and write the Mixup / SelectMix risk report as JSON.
    TheoryCheck {
        #[command(flatten)]
        common: Common,
        /// Monte-Carlo draws per risk.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
    },
    /// Sweep alpha over seeds and write the results CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0,2.0,4.0")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// IDX directory or `synthetic`.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    noise_kind: Option<NoiseKind>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    strategy: Option<MixKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    partner_pool: Option<PartnerPool>,
    #[arg(long)]
    kfold: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    oof_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(dataset, noise_kind, noise_rate, strategy, alpha, partner_pool, kfold, epochs);
        set!(batch_size, lr, seed);
        if self.train_subset.is_some() {
            cfg.train_subset = self.train_subset;
        }
        if self.test_size.is_some() {
            cfg.test_size = self.test_size;
        }
        if self.oof_epochs.is_some() {
            cfg.oof_epochs = self.oof_epochs;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => Box::new(BufWriter::new(
                File::create(path).map_err(|e| io_error(path, e))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }
}

fn io_error(path: &Path, source: io::Error) -> selectmix::Error {
    selectmix::Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(common: &Common, text: &str) -> Result<()> {
    let mut out = common.output()?;
    let target = common.out.clone().unwrap_or_else(|| "<stdout>".into());
    writeln!(out, "{text}")
        .and_then(|_| out.flush())
        .map_err(|e| io_error(&target, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InjectNoise(common) => {
            let cfg = common.config()?;
            let prepared = harness::prepare(
                &ExperimentConfig {
                    strategy: MixKind::Erm,
                    ..cfg
                },
                false,
            )?;
            eprintln!(
                "flipped {} of {} labels",
                prepared.train.flipped_count(),
                prepared.train.len()
            );
            prepared.train.write_csv(common.output()?)
        }
        Command::OofPredict(common) => {
            let cfg = common.config()?;
            let prepared = harness::prepare(&cfg, true)?;
            let guidance = prepared.guidance.as_ref().expect("forced guidance");
            eprintln!("rho = {:.4}", guidance.mismatch.rho());
            match &common.out {
                Some(path) => {
                    let m_path = harness::write_oof(&guidance.oof, guidance, path)?;
                    eprintln!("mismatch indices in {}", m_path.display());
                    Ok(())
                }
                None => guidance.oof.write_csv(io::stdout().lock()),
            }
        }
        Command::Train(common) => {
            let report = harness::run_experiment(&common.config()?)?;
            eprintln!(
                "best {:.4}  last10 {:.4}  ({:.1}s)",
                report.best_acc, report.last10_avg, report.wall_time_s
            );
            write_text(&common, &report.to_json()?)
        }
        Command::TheoryCheck { common, draws } => {
            let report = harness::theory_check(&common.config()?, draws)?;
            write_text(&common, &report.to_json()?)
        }
        Command::Sweep {
            common,
            alphas,
            seeds,
        } => {
            let table = harness::sweep_alpha(&common.config()?, &alphas, &seeds)?;
            for failure in &table.failures {
                eprintln!(
                    "alpha {} seed {} failed: {}",
                    failure.alpha, failure.seed, failure.error
                );
            }
            table.write_csv(common.output()?)?;
            if table.failures.is_empty() {
                Ok(())
            } else {
                Err(selectmix::Error::Config(format!(
                    "{} sweep cells failed",
                    table.failures.len()
                )))
            }
        }
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
