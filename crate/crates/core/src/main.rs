use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use topowmamba::diagnostics::{module_gradcheck, MODULES};
use topowmamba::network::ModelConfig;
use topowmamba::pipeline::{gen_phantoms, run_evaluation, run_prediction, run_training, seed_override, PhantomSpec, TrainConfig};
use topowmamba::Error;

#[derive(Parser)]
#[command(name = "twm", version, about = "Wavelet-Mamba segmentation: data, training, evaluation, prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes train_log.jsonl, best.twmb and last.twmb.
    Train {
        #[arg(long)]
        model_config: PathBuf,
        #[arg(long)]
        train_config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Segment raw f32 slices or PGM images.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overlay: bool,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// One of sca, vss, snake-vss, scvss, wmb, patch-embed, patch-merge, model. All when omitted.
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 250)]
        coords: usize,
    },
}

enum Failure {
    Usage(String),
    Validation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::Json(_) => Failure::Usage(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn run(cmd: Command) -> Result<(), Failure> {
    let seed = seed_override()?;
    match cmd {
        Command::GenData { spec, out } => {
            let mut spec: PhantomSpec = read_config(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let m = gen_phantoms(&spec, &out)?;
            println!("wrote {} samples ({}x{}, {} classes) to {}", m.samples.len(), m.h, m.w, m.num_classes, out.display());
        }
        Command::Train { model_config, train_config, data, out } => {
            let mut mc: ModelConfig = read_config(&model_config)?;
            let mut tc: TrainConfig = read_config(&train_config)?;
            if let Some(s) = seed {
                mc.seed = s;
                tc.seed = s;
            }
            let s = run_training(&mc, &tc, &data, &out)?;
            println!(
                "epochs {} steps {} best epoch {} val dice {:.2}{} final loss {:.5}",
                s.epochs_run,
                s.steps,
                s.best_epoch,
                s.best_metric,
                if s.stopped_early { " (early stop)" } else { "" },
                s.final_loss
            );
            println!("best checkpoint {}", s.best_checkpoint.display());
        }
        Command::Eval { ckpt, data, split, report } => {
            let r = run_evaluation(&ckpt, &data, &split, &report)?;
            for c in &r.per_class {
                println!("{:<12} dice {:6.2} iou {:6.2} hd95 {}", c.name, c.dice, c.iou, fmt_hd(c.hd95));
            }
            println!("{:<12} dice {:6.2} iou {:6.2} hd95 {}  ({} cases)", "mean", r.mean.dice, r.mean.iou, fmt_hd(r.mean.hd95), r.n_cases);
        }
        Command::Predict { ckpt, input, out, overlay } => {
            for p in run_prediction(&ckpt, &input, &out, overlay)? {
                println!("{}", p.display());
            }
        }
        Command::Gradcheck { module, tol, coords } => {
            if !(tol > 0.0) || coords == 0 {
                return Err(Failure::Usage("--tol and --coords must be positive".into()));
            }
            let names: Vec<&str> = match &module {
                Some(m) => vec![m.as_str()],
                None => MODULES.to_vec(),
            };
            let mut failed = Vec::new();
            for name in names {
                let r = module_gradcheck(name, tol, coords)?;
                println!(
                    "{:<12} {} max_rel {:.3e} max_abs {:.3e} coords {}",
                    name,
                    if r.pass { "ok  " } else { "FAIL" },
                    r.max_rel_err,
                    r.max_abs_err,
                    r.checked
                );
                if !r.pass {
                    failed.push(name);
                }
            }
            if !failed.is_empty() {
                return Err(Failure::Validation(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

fn fmt_hd(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |d| format!("{d:.2}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
