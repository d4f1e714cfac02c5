use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crossview::cli::{self, GradCheckOptions};
use crossview::metrics::EvalConfig;

#[derive(Parser)]
#[command(name = "crossview", version, about = "Paired-view relational detection: synthetic benchmarks, training, gradient checks, evaluation, ablation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired-view dataset from a JSON config
    Generate {
        /// Generation config (JSON with `cases` plus generator fields)
        #[arg(long)]
        config: PathBuf,
        /// Output dataset path (line-delimited JSON)
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Training config (JSON with TrainConfig fields)
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic gradients against central differences on a toy model
    Gradcheck(GradCheckArgs),
    /// Evaluate a checkpoint on a dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        score_threshold: f64,
        #[arg(long, default_value_t = 0.5)]
        iou_threshold: f64,
        #[arg(long, default_value_t = 0.5)]
        nms_iou: f64,
        /// Write the JSON report (and a FROC CSV) here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the relation-block count N over multiple seeds
    Ablate {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated N values
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        n_list: Vec<usize>,
        /// Number of seeds (0, 1, ..., seeds-1)
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_json: PathBuf,
    },
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    d_f: usize,
    #[arg(long, default_value_t = 4)]
    d_k: usize,
    #[arg(long, default_value_t = 8)]
    d_emb: usize,
    #[arg(long, default_value_t = 3)]
    candidates: usize,
    #[arg(long, default_value_t = 2)]
    n_blocks: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Test hook: corrupt one gradient entry so the check must fail
    #[arg(long, hide = true)]
    corrupt: bool,
}

fn run(cmd: Command) -> crossview::Result<ExitCode> {
    match cmd {
        Command::Generate { config, out, seed } => {
            cli::cmd_generate(&config, &out, seed)?;
            println!("wrote dataset to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { dataset, config, out } => {
            cli::cmd_train(&dataset, &config, &out)?;
            println!("wrote checkpoint to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck(args) => {
            let opts = GradCheckOptions {
                seed: args.seed,
                d_f: args.d_f,
                d_k: args.d_k,
                d_emb: args.d_emb,
                candidates_per_view: args.candidates,
                n_blocks: args.n_blocks,
                step: args.step,
                tolerance: args.tolerance,
                corrupt: args.corrupt,
            };
            let report = cli::cmd_gradcheck(&opts)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            if report.pass {
                println!(
                    "gradcheck PASS: max relative error {:.3e} < {:.1e}",
                    report.max_relative_error, report.tolerance
                );
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "gradcheck FAIL: max relative error {:.3e} in tensor {}",
                    report.max_relative_error,
                    report.worst_tensor().unwrap_or("<none>")
                );
                Ok(ExitCode::from(1))
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            score_threshold,
            iou_threshold,
            nms_iou,
            out,
        } => {
            let cfg = EvalConfig {
                score_threshold,
                iou_threshold,
                nms_iou,
            };
            let report = cli::cmd_eval(&checkpoint, &dataset, &cfg, out.as_deref())?;
            println!(
                "precision {:.4}  recall {:.4}  f1 {:.4}  fpi {:.4}  ({} FROC points)",
                report.precision,
                report.recall,
                report.f1,
                report.fpi,
                report.froc.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate {
            train,
            test,
            config,
            n_list,
            seeds,
            out_csv,
            out_json,
        } => {
            let seed_list: Vec<u64> = (0..seeds).collect();
            let summary =
                cli::cmd_ablate(&train, &test, &config, &n_list, &seed_list, &out_csv, &out_json)?;
            println!("n_blocks  precision  recall    f1        fpi   (means over {} seeds)", seeds);
            for m in &summary.means {
                println!(
                    "{:<8}  {:<9.4}  {:<8.4}  {:<8.4}  {:.4}",
                    m.n_blocks, m.precision, m.recall, m.f1, m.fpi
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
