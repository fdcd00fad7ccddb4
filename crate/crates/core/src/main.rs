use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lgcorrect::cnn::CnnModel;
use lgcorrect::config::RunConfig;
use lgcorrect::io::sig6;
use lgcorrect::pipeline::{self, cmd_channel, cmd_correct, cmd_gen_dataset, cmd_tomography, cmd_train};
use lgcorrect::Error;

/// Turbulence correction for Laguerre-Gaussian modes: dataset generation,
/// classifier training, correction runs, channel and tomography experiments.
#[derive(Parser)]
#[command(name = "lgcorrect", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also emit Poisson-sampled, background-subtracted images.
    #[arg(long, global = true)]
    photon: bool,
    /// Ensemble correction with K frames (8 when given without a value).
    #[arg(long, global = true, value_name = "K", num_args = 0..=1, default_missing_value = "8")]
    ensemble: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probe-beam images for every turbulence class.
    GenDataset {
        /// Images per class (overrides `dataset.per_class`).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the strength classifier.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Prepared / distorted / corrected images for one mode.
    Correct {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cn2: Option<f64>,
        /// Sent mode is the balanced ±ℓ superposition.
        #[arg(long, allow_negative_numbers = true)]
        azimuthal: Option<i32>,
    },
    /// Cross-talk matrices and the capacity sweep.
    Channel {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        /// Skip the capacity sweep.
        #[arg(long)]
        no_sweep: bool,
    },
    /// Qubit tomography before and after correction.
    Tomography {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cn2: Option<f64>,
    },
    /// Print a model's architecture.
    DescribeModel { path: Option<PathBuf> },
}

const CONFIG_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 3;

fn config(cli: &Cli) -> lgcorrect::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(k) = cli.ensemble {
        cfg.gdo.ensemble_size = k;
    }
    match &cli.command {
        Command::GenDataset { count: Some(c) } => cfg.dataset.per_class = *c,
        Command::Correct { cn2, azimuthal, .. } => {
            cfg.correct.cn2 = cn2.unwrap_or(cfg.correct.cn2);
            cfg.correct.azimuthal = azimuthal.unwrap_or(cfg.correct.azimuthal);
        }
        Command::Channel { trials: Some(t), .. } => cfg.channel.trials = *t,
        Command::Tomography { cn2: Some(c), .. } => cfg.tomography.cn2 = *c,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> lgcorrect::Result<()> {
    let model = |p: &Option<PathBuf>| pipeline::load_trained_model(&p.clone().unwrap_or_else(|| pipeline::default_model_path(cfg)));
    match &cli.command {
        Command::GenDataset { .. } => {
            let d = cmd_gen_dataset(cfg, cfg.dataset.per_class)?;
            println!("{} images in {}", d.len(), cfg.out.join("dataset").display());
        }
        Command::Train { dataset } => {
            let path = dataset.clone().unwrap_or_else(|| pipeline::default_dataset_path(cfg));
            let (_, history) = cmd_train(cfg, &path)?;
            let acc = history.final_validation_accuracy().unwrap_or(0.0);
            println!("final validation accuracy {}", sig6(acc));
        }
        Command::Correct { model: m, .. } => {
            let r = cmd_correct(cfg, model(m)?, cli.photon)?;
            println!("predicted cn2 {} (confidence {})", sig6(r.prediction.cn2), sig6(r.prediction.confidence));
            println!("final mse {} after {} iterations", sig6(r.result.final_mse), r.result.iterations);
            println!("ncc distorted {} corrected {}", sig6(r.ncc_distorted), sig6(r.ncc_corrected));
            println!("correction time {:.3} s", r.result.duration.as_secs_f64());
        }
        Command::Channel { model: m, no_sweep, .. } => {
            let r = cmd_channel(cfg, model(m)?, !no_sweep)?;
            let [clear, turb, corr] = r.mutual_information();
            println!("mutual information (bits): clear {} turbulent {} corrected {}", sig6(clear), sig6(turb), sig6(corr));
            for row in &r.sweep {
                println!("cn2 {}: uncorrected {} corrected {}", sig6(row.cn2), sig6(row.mi_uncorrected), sig6(row.mi_corrected));
            }
        }
        Command::Tomography { model: m, .. } => {
            let r = cmd_tomography(cfg, model(m)?)?;
            for (name, rho) in ["original", "distorted", "corrected"].iter().zip(&r.rho) {
                println!("{name}:\n{}", rho.to_text_block());
            }
            println!("F(rho1, rho2) {}  F(rho1, rho3) {}", sig6(r.fidelity_distorted), sig6(r.fidelity_corrected));
            let w = r.subspace_weights.map(sig6);
            println!("subspace weights {} {} {}", w[0], w[1], w[2]);
        }
        Command::DescribeModel { path } => {
            let p = path.clone().unwrap_or_else(|| pipeline::default_model_path(cfg));
            println!("{}", CnnModel::<f32>::load(p)?.describe());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config(_)) { CONFIG_ERROR } else { RUNTIME_ERROR })
        }
    }
}
