use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dwsnet::experiment::{
    run_curve, summarize, train_model, write_curve_csv, ExperimentConfig, ModelKind, Precision,
    Predictor,
};
use dwsnet::verifier::{verify_tables, VerifyMode, VerifyOptions};
use dwsnet::weight_space::dataset::Dataset;
use dwsnet::weight_space::WeightSpaceSpec;
use dwsnet::zoo::{generate_sine_dataset, ZooConfig};
use dwsnet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dws",
    version,
    about = "Equivariant weight-space networks: verification, datasets and training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a dataset of sine-wave INRs.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the layer construction against independent dimension counts.
    Verify(VerifyArgs),
    /// Train one model with the learning-rate search.
    Train {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test MSE against training-set size for every model kind.
    Curve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "50,100,200,400")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, value_delimiter = ',', default_value = "dws,mlp,mlp-perm-aug")]
        kinds: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test-split MSE of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Args)]
struct VerifyArgs {
    /// Layer dimensions, e.g. 2,3,3,2.
    #[arg(long)]
    dims: String,
    #[arg(long, conflicts_with = "mc")]
    exhaustive: bool,
    /// Estimate character sums from N sampled group elements.
    #[arg(long, value_name = "N")]
    mc: Option<usize>,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Equivariance trials per sub-space pair.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn experiment_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::parse(&read_text(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn verify(args: &VerifyArgs) -> Result<bool> {
    let spec = WeightSpaceSpec::parse(&args.dims)?;
    let opts = VerifyOptions {
        mode: args
            .mc
            .map_or(VerifyMode::Exhaustive, VerifyMode::MonteCarlo),
        tol: args.tol,
        trials: args.trials,
        seed: args.seed,
    };
    let report = verify_tables(&spec, &opts)?;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{report}");
    println!("{text}");
    if let Some(p) = &args.json {
        write_text(p, &text)?;
    }
    Ok(report.pass)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = ZooConfig::parse(&read_text(&config)?)?;
            let ds = generate_sine_dataset(&cfg)?;
            ds.write(&out)?;
            let excluded = ds.manifest.meta["excluded"].as_array().map_or(0, Vec::len);
            println!(
                "{} INRs written to {} ({} excluded; splits {}/{}/{})",
                ds.records.len(),
                out.display(),
                excluded,
                ds.manifest.splits.train.len(),
                ds.manifest.splits.val.len(),
                ds.manifest.splits.test.len()
            );
            Ok(true)
        }
        Command::Verify(args) => verify(&args),
        Command::Train {
            model,
            data,
            config,
            seed,
            out,
        } => {
            let kind: ModelKind = model.parse()?;
            let mut cfg = experiment_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = Dataset::read(&data)?;
            let (report, predictor) = train_model(kind, &ds, &cfg, Precision::from_env()?)?;
            write_text(
                &out.join("report.json"),
                &serde_json::to_string_pretty(&report)?,
            )?;
            predictor.save(&out.join("checkpoint.json"))?;
            println!(
                "{kind}: {} params, lr {}, best epoch {}, val MSE {:.6e}, test MSE {:.6e} ({:.1}s)",
                report.params,
                report.selected_lr,
                report.best_epoch,
                report.val_mse,
                report.test_mse,
                report.seconds
            );
            Ok(true)
        }
        Command::Curve {
            data,
            sizes,
            seeds,
            kinds,
            config,
            out,
        } => {
            let kinds = kinds
                .iter()
                .map(|k| k.parse())
                .collect::<Result<Vec<ModelKind>>>()?;
            let cfg = experiment_config(config.as_deref())?;
            let ds = Dataset::read(&data)?;
            let runs = run_curve(&ds, &cfg, &sizes, &kinds, seeds, Precision::from_env()?)?;
            let rows: Vec<_> = runs.into_iter().map(|r| r.row).collect();
            write_curve_csv(&out, &rows)?;
            println!(
                "{:<14} {:>5} {:>4} {:>14} {:>12}",
                "kind", "size", "runs", "mean test MSE", "std"
            );
            for s in summarize(&rows) {
                println!(
                    "{:<14} {:>5} {:>4} {:>14.6e} {:>12.4e}",
                    s.kind.to_string(),
                    s.size,
                    s.runs,
                    s.mean,
                    s.std
                );
            }
            Ok(true)
        }
        Command::Eval { checkpoint, data } => {
            let p = Predictor::load(&checkpoint)?;
            let ds = Dataset::read(&data)?;
            let mse = p.evaluate(&ds)?;
            let out = json!({
                "kind": p.kind,
                "test_size": ds.manifest.splits.test.len(),
                "test_mse": mse,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
