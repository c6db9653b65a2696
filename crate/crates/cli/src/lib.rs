//! Command-line driver: dataset generation, architecture search,
//! retraining, evaluation, image export and model accounting.

pub mod artifacts;
pub mod config;
pub mod error;

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use csnas::data::{simulate_acquisition, Acceleration, Dataset, PhaseMode};
use csnas::model::{count_flops, count_params, Genotype, ModelKind, Network};
use csnas::search::{alpha_trace_csv, run_search};
use csnas::traineval::{evaluate, train, Aggregate, MetricsReport, ZeroFilled};

use artifacts::{
    csv_with_echo, encode_weights, genotype_document, pgm, read_dataset_file, read_genotype_file,
    read_weights_file, write_file, LoadedNetwork, Wire,
};
use config::{Overrides, Precision, RunConfig};
pub use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "csnas", version, about = "Cell search for unrolled MR reconstruction")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Phase {
    Smooth,
    Zero,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Baseline {
    ZeroFilled,
    Tv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a dataset of seeded synthetic phantoms.
    GenData {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        /// Output path; defaults to the configured dataset.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Phase::Smooth)]
        phase: Phase,
    },
    /// Search a cell genotype on the dataset.
    Search,
    /// Train a genotype or baseline network on the full dataset.
    Retrain {
        /// Genotype document, required for nas networks.
        #[arg(long)]
        genotype: Option<PathBuf>,
    },
    /// Evaluate trained weights or a classical baseline on the test set.
    Eval {
        #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
        weights: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
    },
    /// Export zero-filled, reconstructed, target and error images of a slice.
    Reconstruct {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 0)]
        slice: usize,
        #[arg(long, default_value_t = 4)]
        fold: u32,
    },
    /// Print parameter and FLOPs counts without data or weights.
    Count {
        #[arg(long)]
        genotype: Option<PathBuf>,
        #[arg(long, default_value_t = 320)]
        height: usize,
        #[arg(long, default_value_t = 320)]
        width: usize,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, S>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    execute(&cli)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.overrides.resolve()?;
    match &cli.command {
        Command::GenData {
            count,
            height,
            width,
            out,
            phase,
        } => gen_data(&cfg, *count, *height, *width, out.clone(), *phase),
        Command::Search => match cfg.precision {
            Precision::F32 => search::<f32>(&cfg),
            Precision::F64 => search::<f64>(&cfg),
        },
        Command::Retrain { genotype } => {
            let genotype = genotype.as_deref().map(read_genotype_file).transpose()?;
            match cfg.precision {
                Precision::F32 => retrain::<f32>(&cfg, genotype),
                Precision::F64 => retrain::<f64>(&cfg, genotype),
            }
        }
        Command::Eval { weights, baseline } => eval(&cfg, weights.as_deref(), *baseline),
        Command::Reconstruct {
            weights,
            slice,
            fold,
        } => reconstruct(&cfg, weights, *slice, *fold),
        Command::Count {
            genotype,
            height,
            width,
        } => count(&cfg, genotype.as_deref(), *height, *width),
    }
}

fn rng(cfg: &RunConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed)
}

fn echo_value(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn gen_data(
    cfg: &RunConfig,
    count: usize,
    h: usize,
    w: usize,
    out: Option<PathBuf>,
    phase: Phase,
) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let phase = match phase {
        Phase::Smooth => PhaseMode::Smooth,
        Phase::Zero => PhaseMode::Zero,
    };
    let ds = Dataset::synthetic(count, h, w, phase, &mut rng(cfg))?;
    let path = out.unwrap_or_else(|| cfg.dataset.clone());
    let mut bytes = Vec::new();
    csnas::data::write_dataset(&ds, &mut bytes)?;
    write_file(&path, bytes)?;
    println!("wrote {count} slices of {h}x{w} to {}", path.display());
    Ok(())
}

fn search<T: Wire>(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = read_dataset_file(&cfg.dataset)?;
    let echo = cfg.echo();
    let out = run_search::<T, _>(&cfg.search_config(), &ds, &mut rng(cfg))?;
    let dir = &cfg.out_dir;
    write_file(&dir.join("genotype.json"), genotype_document(&out.genotype, &echo_value(cfg)))?;
    write_file(
        &dir.join("alpha_trace.csv"),
        csv_with_echo(&echo, &alpha_trace_csv(&out.alpha_trace)),
    )?;
    let mut losses = String::from("epoch,omega_loss,alpha_loss\n");
    for (e, l) in out.losses.iter().enumerate() {
        writeln!(losses, "{},{},{}", e + 1, l.omega, l.alpha).expect("string write");
    }
    write_file(&dir.join("search_loss.csv"), csv_with_echo(&echo, &losses))?;
    println!(
        "search finished after {} epochs{}; genotype written to {}",
        out.history.len(),
        if out.stopped_early { " (stable)" } else { "" },
        dir.join("genotype.json").display()
    );
    Ok(())
}

fn retrain<T: Wire>(cfg: &RunConfig, genotype: Option<Genotype>) -> Result<(), CliError> {
    match (cfg.network.kind, &genotype) {
        (ModelKind::Nas, None) => {
            return Err(CliError::Usage("retraining a nas network needs --genotype".into()))
        }
        (ModelKind::Dccnn | ModelKind::Rdn, Some(_)) => {
            return Err(CliError::Usage(format!(
                "--genotype does not apply to a {} network",
                cfg.network.kind
            )))
        }
        _ => {}
    }
    let ds = read_dataset_file(&cfg.dataset)?;
    let mut r = rng(cfg);
    let mut net = Network::<T>::new(cfg.network.clone(), genotype, &mut r)?;
    let report = train(&mut net, &ds, &cfg.schedule, cfg.accel, &mut r)?;
    let echo = cfg.echo();
    let dir = &cfg.out_dir;
    write_file(&dir.join("weights.bin"), encode_weights(&net, &echo_value(cfg)))?;
    let mut losses = String::from("epoch,loss\n");
    for (e, l) in report.losses.iter().enumerate() {
        writeln!(losses, "{},{}", e + 1, l).expect("string write");
    }
    write_file(&dir.join("train_loss.csv"), csv_with_echo(&echo, &losses))?;
    println!(
        "trained {} for {} epochs, final loss {}; weights written to {}",
        cfg.network.kind,
        report.losses.len(),
        report.losses.last().copied().unwrap_or(f64::NAN),
        dir.join("weights.bin").display()
    );
    Ok(())
}

fn aggregate_json(a: &Aggregate) -> serde_json::Value {
    json!({
        "count": a.count,
        "mse": {"mean": a.mse.0, "std": a.mse.1},
        "nmse": {"mean": a.nmse.0, "std": a.nmse.1},
        "psnr": {"mean": a.psnr.0, "std": a.psnr.1},
        "ssim": {"mean": a.ssim.0, "std": a.ssim.1},
    })
}

/// Sidecar summary of a report: complexity and aggregates.
pub fn summary_json(report: &MetricsReport, echo: &serde_json::Value) -> String {
    let doc = json!({
        "model": report.model,
        "params": report.params,
        "flops": report.flops,
        "all": aggregate_json(&report.aggregate()),
        "accel4": aggregate_json(&report.by_accel(4)),
        "accel8": aggregate_json(&report.by_accel(8)),
        "config": echo,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json serializes");
    text.push('\n');
    text
}

fn eval(
    cfg: &RunConfig,
    weights: Option<&std::path::Path>,
    baseline: Option<Baseline>,
) -> Result<(), CliError> {
    let testset = read_dataset_file(cfg.testset_path())?;
    let mut r = rng(cfg);
    let report = match (weights, baseline) {
        (Some(path), _) => match read_weights_file(path)? {
            LoadedNetwork::F32(net) => evaluate(&net, &testset, &mut r)?,
            LoadedNetwork::F64(net) => evaluate(&net, &testset, &mut r)?,
        },
        (None, Some(Baseline::ZeroFilled)) => evaluate(&ZeroFilled, &testset, &mut r)?,
        (None, Some(Baseline::Tv)) => evaluate(&cfg.tv, &testset, &mut r)?,
        (None, None) => return Err(CliError::Usage("eval needs --weights or --baseline".into())),
    };
    let dir = &cfg.out_dir;
    let csv = dir.join(format!("metrics_{}.csv", report.model));
    write_file(&csv, csv_with_echo(&cfg.echo(), &report.to_csv()))?;
    write_file(
        &dir.join(format!("metrics_{}.json", report.model)),
        summary_json(&report, &echo_value(cfg)),
    )?;
    let a = report.aggregate();
    println!(
        "{}: psnr {:.3} +- {:.3} dB, ssim {:.4} +- {:.4} over {} slices; written to {}",
        report.model,
        a.psnr.0,
        a.psnr.1,
        a.ssim.0,
        a.ssim.1,
        a.count,
        csv.display()
    );
    Ok(())
}

fn reconstruct(cfg: &RunConfig, weights: &std::path::Path, slice: usize, fold: u32) -> Result<(), CliError> {
    let net = read_weights_file(weights)?;
    let testset = read_dataset_file(cfg.testset_path())?;
    if slice >= testset.len() {
        return Err(CliError::Usage(format!(
            "slice {slice} out of range for {} slices",
            testset.len()
        )));
    }
    let sample = simulate_acquisition(testset.slice(slice), Acceleration::Fold(fold), &mut rng(cfg))?;
    let recon = match &net {
        LoadedNetwork::F32(n) => n.reconstruct(&sample)?,
        LoadedNetwork::F64(n) => n.reconstruct(&sample)?,
    };
    let (h, w) = sample.target.dims();
    let echo = cfg.echo();
    let target = sample.target.magnitude();
    let rec = recon.magnitude();
    let error: Vec<f64> = rec.iter().zip(&target).map(|(a, b)| (a - b).abs()).collect();
    let dir = &cfg.out_dir;
    for (name, values) in [
        ("zero_filled", sample.zero_filled.magnitude()),
        ("reconstruction", rec),
        ("target", target),
        ("error", error),
    ] {
        write_file(&dir.join(format!("slice{slice}_{name}.pgm")), pgm(&values, h, w, &echo))?;
    }
    println!("wrote slice {slice} images to {}", dir.display());
    Ok(())
}

fn count(
    cfg: &RunConfig,
    genotype: Option<&std::path::Path>,
    h: usize,
    w: usize,
) -> Result<(), CliError> {
    let genotype = genotype.map(read_genotype_file).transpose()?;
    let params = count_params(&cfg.network, genotype.as_ref())?;
    let flops = count_flops(&cfg.network, genotype.as_ref(), h, w)?;
    println!("model {}", cfg.network.kind);
    println!("params {params}");
    println!("flops {flops} ({:.2}G at {h}x{w})", flops as f64 / 1e9);
    Ok(())
}
