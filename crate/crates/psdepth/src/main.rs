use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psdepth::config::{self, RunConfig};
use psdepth::pipeline;
use psdepth::Result;

#[derive(Parser)]
#[command(
    name = "psdepth",
    version,
    about = "Pseudo-supervised monocular depth on synthetic stereo"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of the stage being run (overrides the file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set teacher.epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train and validation datasets.
    GenData,
    /// Train (and over-train) the teacher.
    TrainTeacher {
        /// Continue from a checkpoint of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Export pseudo labels of the training set from a teacher checkpoint.
    ExportPseudo {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the student.
    TrainStudent {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, or a directory of disparity files, against ground truth.
    Eval {
        #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
        checkpoint: Option<PathBuf>,
        /// Directory holding `disp/NNNN.pfm` predictions.
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Predict disparity and depth for one image with a student checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        image: PathBuf,
        /// Also write a color-mapped preview.
        #[arg(long)]
        preview: bool,
    },
    /// Finite-difference gradient checks of every loss and network.
    Gradcheck,
}

fn resolve(common: &Common, command: &Command) -> Result<RunConfig> {
    let mut sets = Vec::new();
    if let Some(out) = &common.out {
        sets.push(format!("out={}", toml::Value::String(out.display().to_string())));
    }
    if let Some(seed) = common.seed {
        let key = match command {
            Command::GenData => Some("data.seed"),
            Command::TrainTeacher { .. } => Some("teacher.seed"),
            Command::TrainStudent { .. } => Some("student.seed"),
            Command::Gradcheck => Some("gradcheck.seed"),
            _ => None,
        };
        if let Some(key) = key {
            sets.push(format!("{key}={seed}"));
        }
    }
    let mut all = common.sets.clone();
    all.extend(sets);
    config::load(common.config.as_deref(), std::env::vars(), &all)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = resolve(&cli.common, &cli.command)?;
    match cli.command {
        Command::GenData => {
            let s = pipeline::gen_data(&cfg)?;
            println!("train: {} ({})", s.train.display(), s.train_digest);
            if !s.val_digest.is_empty() {
                println!("val:   {} ({})", s.val.display(), s.val_digest);
            }
        }
        Command::TrainTeacher { resume } => {
            let o = pipeline::train_teacher(&cfg, resume.as_deref())?;
            print_outcome(&o);
        }
        Command::ExportPseudo { checkpoint } => {
            let dir = pipeline::export_pseudo(&cfg, checkpoint.as_deref())?;
            println!("pseudo labels: {}", dir.display());
        }
        Command::TrainStudent { resume } => {
            let o = pipeline::train_student(&cfg, resume.as_deref())?;
            print_outcome(&o);
        }
        Command::Eval { checkpoint, pred } => {
            let report = match (checkpoint, pred) {
                (Some(c), _) => pipeline::eval_checkpoint(&cfg, &c)?,
                (None, Some(p)) => pipeline::eval_predictions(&cfg, &p)?,
                (None, None) => unreachable!("clap requires one"),
            };
            print!("{}", pipeline::report_table(&report));
            let path = cfg.out.join(format!("eval_{}.csv", cfg.eval.split.dir_name()));
            std::fs::create_dir_all(&cfg.out).map_err(|e| psdepth::Error::io(&cfg.out, e))?;
            std::fs::write(&path, pipeline::report_csv(&report)).map_err(|e| psdepth::Error::io(&path, e))?;
            println!("report: {}", path.display());
        }
        Command::Infer {
            checkpoint,
            image,
            preview,
        } => {
            let o = pipeline::infer(&cfg, &checkpoint, &image, &cfg.out.join("infer"), preview)?;
            println!("disparity: {}", o.disparity.display());
            println!("depth:     {}", o.depth.display());
            if let Some(p) = o.preview {
                println!("preview:   {}", p.display());
            }
        }
        Command::Gradcheck => {
            let reports = pipeline::gradcheck(&cfg)?;
            let mut ok = true;
            for r in &reports {
                let verdict = if r.passed() { "PASS" } else { "FAIL" };
                ok &= r.passed();
                println!(
                    "{verdict} {:<36} max rel err {:.3e} (tol {:.0e}, {} fixtures, {} coords)",
                    r.name, r.max_rel_error, r.tolerance, r.fixtures, r.coordinates
                );
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn print_outcome(o: &pipeline::TrainOutcome) {
    let losses: Vec<String> = o.final_losses.iter().map(|(t, v)| format!("{t}={v:.6}")).collect();
    println!(
        "{} epochs in {:.0}s, final {}; checkpoint {}",
        o.epochs,
        o.seconds,
        losses.join(" "),
        o.checkpoint.display()
    );
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
