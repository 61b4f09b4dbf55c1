//! Command-line interface for the experiment pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ssmflow::config::RunConfig;
use ssmflow::diffcore::load_checkpoint;
use ssmflow::error::{Error, Result};
use ssmflow::experiment::{
    self, load_or_simulate, run_experiment, stage_evaluate, stage_mcmc, stage_pretrain,
    stage_simulate, stage_train, with_threads,
};
use ssmflow::inference::smoothed_elbo;
use ssmflow::models::ParameterVector;

#[derive(Parser)]
#[command(
    name = "ssmflow",
    about = "Mini-batch variational inference for state space models with local flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (flat key = value text).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: ar1, lv_a, lv_b or fhn.
    #[arg(long)]
    preset: Option<String>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initialise flow weights from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured synthetic dataset.
    Simulate(CommonArgs),
    /// Run the configured pre-training objective.
    Pretrain(CommonArgs),
    /// Run mini-batch training.
    Train(CommonArgs),
    /// Run the AR(1) Metropolis-Hastings baseline.
    Mcmc(CommonArgs),
    /// Sample the trained posterior and write metrics and tables.
    Evaluate(CommonArgs),
    /// Full pipeline: simulate, pretrain, train, mcmc, evaluate.
    Run(CommonArgs),
}

fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => {
            return Err(Error::Config(
                "provide --config <file> or --preset <name>".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_into_store(
    store: &mut ssmflow::diffcore::ParameterStore,
    path: &Path,
) -> Result<()> {
    let ckpt = load_checkpoint(path)?;
    store.load_values_from(&ckpt)
}

fn dispatch(cmd: &Command) -> Result<()> {
    let args = match cmd {
        Command::Simulate(a)
        | Command::Pretrain(a)
        | Command::Train(a)
        | Command::Mcmc(a)
        | Command::Evaluate(a)
        | Command::Run(a) => a,
    };
    let config = resolve_config(args)?;
    let out_dir = PathBuf::from(&config.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    match cmd {
        Command::Simulate(_) => {
            let dataset = stage_simulate(&config, &out_dir)?;
            eprintln!(
                "wrote {} observations to {}",
                dataset.n_obs(),
                out_dir.join(experiment::DATASET_FILE).display()
            );
            Ok(())
        }
        Command::Pretrain(_) => with_threads(config.threads, || {
            let dataset = load_or_simulate(&config, &out_dir)?;
            let (flows, mut store) = config.flow_architecture().build(&dataset, config.seed)?;
            if let Some(resume) = &args.resume {
                load_into_store(&mut store, resume)?;
            }
            stage_pretrain(&config, &dataset, &flows, &mut store, &out_dir)?;
            eprintln!(
                "pre-training done; checkpoint at {}",
                out_dir.join(experiment::PRETRAINED_CHECKPOINT).display()
            );
            Ok(())
        }),
        Command::Train(_) => with_threads(config.threads, || {
            let dataset = load_or_simulate(&config, &out_dir)?;
            let (flows, mut store) = config.flow_architecture().build(&dataset, config.seed)?;
            let pretrained = out_dir.join(experiment::PRETRAINED_CHECKPOINT);
            if let Some(resume) = &args.resume {
                load_into_store(&mut store, resume)?;
            } else if pretrained.exists() {
                load_into_store(&mut store, &pretrained)?;
            }
            let records = stage_train(&config, &dataset, &flows, &mut store, &out_dir)?;
            let smoothed = smoothed_elbo(&records, 100);
            eprintln!(
                "trained {} iterations; final smoothed ELBO {:.4}",
                records.len(),
                smoothed.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }),
        Command::Mcmc(_) => with_threads(config.threads, || {
            let dataset = load_or_simulate(&config, &out_dir)?;
            // Start from the trained variational mean when available.
            let final_ckpt = out_dir.join(experiment::FINAL_CHECKPOINT);
            let init = if final_ckpt.exists() {
                let (flows, mut store) =
                    config.flow_architecture().build(&dataset, config.seed)?;
                load_into_store(&mut store, &final_ckpt)?;
                let samples = experiment::sample_theta_natural(
                    &flows,
                    &store,
                    &config.model.transforms(),
                    200,
                    config.seed,
                )?;
                let p = samples.shape()[1];
                let mut mean = vec![0.0; p];
                for r in 0..samples.shape()[0] {
                    for (k, v) in samples.data()[r * p..(r + 1) * p].iter().enumerate() {
                        mean[k] += v / samples.shape()[0] as f64;
                    }
                }
                ParameterVector::from_natural(&mean, config.model.transforms())?.unconstrained
            } else {
                vec![0.0; config.model.n_params()]
            };
            let chain = stage_mcmc(&config, &dataset, &init, &out_dir)?;
            eprintln!(
                "chain of {} retained samples, acceptance rate {:.3}",
                chain.n_samples(),
                chain.acceptance_rate
            );
            Ok(())
        }),
        Command::Evaluate(_) => with_threads(config.threads, || {
            let dataset = load_or_simulate(&config, &out_dir)?;
            let (flows, mut store) = config.flow_architecture().build(&dataset, config.seed)?;
            let ckpt = args
                .resume
                .clone()
                .unwrap_or_else(|| out_dir.join(experiment::FINAL_CHECKPOINT));
            if !ckpt.exists() {
                return Err(Error::Config(format!(
                    "no checkpoint at {}; train first or pass --resume",
                    ckpt.display()
                )));
            }
            load_into_store(&mut store, &ckpt)?;
            let eval = stage_evaluate(&config, &dataset, &flows, &store, &out_dir)?;
            for (k, s) in eval.vi_summary.iter().enumerate() {
                eprintln!(
                    "theta_{}: mean {:.4}, sd {:.4}, 95% CI [{:.4}, {:.4}]",
                    k + 1,
                    s.mean,
                    s.sd,
                    s.p2_5,
                    s.p97_5
                );
            }
            if let Some(m) = eval.final_mmd {
                eprintln!("standardised MMD against the MCMC baseline: {m:.4}");
            }
            Ok(())
        }),
        Command::Run(_) => {
            if args.resume.is_some() {
                return Err(Error::Config(
                    "--resume applies to the train verb, not run".into(),
                ));
            }
            let result = run_experiment(&config)?;
            eprintln!(
                "pipeline finished: {} iterations, outputs in {}",
                result.records.len(),
                out_dir.display()
            );
            for (k, s) in result.eval.vi_summary.iter().enumerate() {
                eprintln!(
                    "theta_{}: mean {:.4}, sd {:.4}, 95% CI [{:.4}, {:.4}]",
                    k + 1,
                    s.mean,
                    s.sd,
                    s.p2_5,
                    s.p97_5
                );
            }
            if let Some(m) = result.eval.final_mmd {
                eprintln!("standardised MMD against the MCMC baseline: {m:.4}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
