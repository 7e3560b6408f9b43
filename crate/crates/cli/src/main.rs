use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symlin_core::harness::{
    aggregate, correlation_table, evaluate, generate_flatland, labeled_pairs, latent_traversal, parse_noise, read_metrics_csv,
    run_experiment, run_probe, traversal_grid, write_correlation_csv, write_probe_csv, write_report_csv, DatasetSource, Env,
    ExperimentConfig, Model, RunRow,
};
use symlin_core::worlds::{write_raw_dataset, World};
use symlin_core::Error;

#[derive(Parser)]
#[command(name = "symlin", version, about = "Symmetry-based disentanglement experiments on cyclic worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (dotted-key TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; for `train` it replaces the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (file or run directory, depending on the verb).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write Flatland to a SYMD container.
    GenFlatland {
        #[command(flatten)]
        common: Common,
        /// Number of pre/post pairs; 0 writes the complete state grid.
        #[arg(long, default_value_t = 0)]
        n: usize,
        /// Random actions between the two images of a pair.
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long, default_value = "none", value_parser = ["none", "gaussian", "salt", "background"])]
        noise: String,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0.05)]
        p: f64,
        /// Directory of grayscale PGM backgrounds (procedural textures otherwise).
        #[arg(long)]
        textures: Option<PathBuf>,
    },
    /// Train and evaluate every configured seed.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the linear-representation probe to a checkpoint's encoder.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score checkpoints; writes metric, mean, std, n_runs.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Repeat to aggregate over several runs.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// SYMD grid to evaluate on instead of the configured dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Decode repeated applications of each learned representation.
    Traverse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Spearman correlation of each metric with independence across runs.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Per-run metrics tables written by `train`.
        #[arg(long = "metrics", required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "independence")]
        target: String,
    },
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, String)> {
    let path = common.config.as_ref().ok_or(Error::Config("--config is required".into()))?;
    Ok(ExperimentConfig::load(path)?)
}

fn out_path(common: &Common) -> Result<&Path> {
    Ok(common.out.as_deref().ok_or(Error::Config("--out is required".into()))?)
}

fn load_model(config: &ExperimentConfig, env: &Env, checkpoint: &Path) -> Result<Model> {
    Model::load(config, env.num_actions(), checkpoint).with_context(|| format!("loading {}", checkpoint.display()))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenFlatland { common, n, steps, noise, sigma, p, textures } => {
            let out = out_path(&common)?;
            let texture_dir = textures.map(|t| t.display().to_string());
            let seed = common.seed.unwrap_or(0);
            let noise = parse_noise(&noise, sigma, p, texture_dir, seed)?.prepare()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = generate_flatland(n, steps, &noise, &mut rng)?;
            write_raw_dataset(out, &data).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("wrote {} images to {}", data.len(), out.display());
        }
        Command::Train { common } => {
            let (mut config, snapshot) = load_config(&common)?;
            if let Some(seed) = common.seed {
                config.seeds = vec![seed];
            }
            if let Some(out) = common.out {
                config.out = out;
            }
            let epochs = config.epochs;
            let art = run_experiment(&config, &snapshot, |seed, r| {
                let ind = r.independence.map_or(String::new(), |v| format!(" independence={v:.3}"));
                let total = r.terms.iter().find(|(n, _)| *n == "total").map_or(f64::NAN, |t| t.1);
                eprintln!("seed {seed} epoch {}/{epochs} loss={total:.3}{ind}", r.epoch + 1);
            })?;
            for row in &art.aggregate {
                println!("{:<24} {:>10.4} ± {:.4}", row.metric, row.mean, row.std);
            }
            eprintln!("artifacts in {}", art.out.display());
        }
        Command::Probe { common, checkpoint } => {
            let (config, _) = load_config(&common)?;
            let out = out_path(&common)?;
            let env = Env::from_config(&config.dataset)?;
            let noise = config.dataset.noise.prepare()?;
            let model = load_model(&config, &env, &checkpoint)?;
            let seed = common.seed.unwrap_or(0);
            let pairs = labeled_pairs(&env, &noise, config.probe_pairs, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let probe_config = symlin_core::symrep::ProbeConfig { seed, ..config.probe.clone() };
            let report = run_probe(model.vae(), &pairs, &env.structure(), &probe_config)?;
            write_probe_csv(out, &report)?;
            println!("alpha_error={:.4} latent_err={:.4} rel_err={:.4}", report.alpha_error(&env.structure()), report.latent_err, report.rel_err);
        }
        Command::Metrics { common, checkpoint, dataset } => {
            let (mut config, _) = load_config(&common)?;
            let out = out_path(&common)?;
            if let Some(path) = dataset {
                if !path.exists() {
                    return Err(Error::MissingPath(path).into());
                }
                config.dataset.source = DatasetSource::Raw(path);
            }
            let env = Env::from_config(&config.dataset)?;
            let noise = config.dataset.noise.prepare()?;
            let seed = common.seed.unwrap_or(0);
            let mut rows = Vec::with_capacity(checkpoint.len());
            for path in &checkpoint {
                let model = load_model(&config, &env, path)?;
                let eval = evaluate(&config, &env, &noise, &model, seed, None)?;
                rows.push(RunRow { run: config.name.clone(), method: config.method.to_string(), seed, metrics: eval.metrics });
            }
            let agg: Vec<_> = aggregate(&rows).into_iter().filter(|r| r.metric != "tau_095").collect();
            write_report_csv(out, &agg)?;
            for row in &agg {
                println!("{:<24} {:>10.4}", row.metric, row.mean);
            }
        }
        Command::Traverse { common, checkpoint, steps } => {
            let (config, _) = load_config(&common)?;
            let out = out_path(&common)?;
            let env = Env::from_config(&config.dataset)?;
            let model = load_model(&config, &env, &checkpoint)?;
            let grid = match model.reps() {
                Some(reps) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(common.seed.unwrap_or(0));
                    let start = env.render(&env.random_state(&mut rng))?;
                    let z0 = model.vae().means(&[&start])?.remove(0);
                    traversal_grid(model.vae(), &reps.snapshots(), &z0, steps)?
                }
                None => latent_traversal(model.vae(), steps, 2.0)?,
            };
            symlin_core::pgm::write_pgm(out, &grid)?;
            eprintln!("wrote {}×{} grid to {}", grid.width, grid.height, out.display());
        }
        Command::Correlate { common, metrics, target } => {
            let out = out_path(&common)?;
            let mut rows = Vec::new();
            for path in &metrics {
                rows.extend(read_metrics_csv(path).with_context(|| format!("reading {}", path.display()))?);
            }
            if rows.iter().all(|r| r.get(&target).is_none()) {
                bail!(Error::Config(format!("no `{target}` column in the metrics tables")));
            }
            let table = correlation_table(&rows, &target);
            write_correlation_csv(out, &table)?;
            for (name, rho) in &table {
                println!("{name:<24} {}", rho.map_or("undefined".into(), |r| format!("{r:>7.3}")));
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::MissingPath(_) | Error::Noise(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
