use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ufo_core::adapters::NativeFormat;
use ufo_core::config::RunConfig;
use ufo_core::eval::EvalError;
use ufo_core::generation::Preset;
use ufo_core::pipeline::{self, PipelineError, RunContext, StageReport};
use ufo_core::SelectionMode;

/// Generate, select and use facts for commonsense question answering.
#[derive(Parser)]
#[command(name = "ufo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the prompt template directory.
    #[arg(long)]
    template_dir: Option<PathBuf>,
    /// Overrides the selection mode (dpr or passthrough).
    #[arg(long)]
    selection_mode: Option<SelectionMode>,
    /// Overrides the sampling preset (large or small).
    #[arg(long)]
    preset: Option<Preset>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample candidate facts for every question.
    Generate(Common),
    /// Pick one fact per question.
    Select {
        #[command(flatten)]
        common: Common,
        /// Facts file to read instead of the run directory's.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score questions conditioned on the selected facts.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Selection file to read instead of the run directory's.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Accuracy against gold labels.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Predictions file to read instead of the run directory's.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Test-set accuracy in percent; adds the dev-test gap to the report.
        #[arg(long)]
        test_accuracy: Option<f64>,
    },
    /// Label selected facts as directly, potentially or not helpful.
    Annotate {
        #[command(flatten)]
        common: Common,
        /// Selection file to read instead of the run directory's.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "anonymous")]
        annotator: String,
        /// Print the quality table instead of labeling. Extra label files
        /// (e.g. from other datasets' runs) are pooled in.
        #[arg(long)]
        stats: bool,
        #[arg(long = "labels")]
        extra_labels: Vec<PathBuf>,
    },
    /// Answer multiple-choice questions directly with the completion model.
    ZeroShot(Common),
    /// Convert a native dataset dump to the canonical JSONL format.
    Adapt {
        /// csqa2, obqa, qasc or siqa.
        #[arg(long)]
        format: NativeFormat,
        #[arg(long)]
        input: PathBuf,
        /// Separate label file (SIQA).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

fn context(common: &Common) -> Result<RunContext, PipelineError> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(dir) = &common.template_dir {
        config.template_dir = Some(dir.clone());
    }
    if let Some(mode) = common.selection_mode {
        config.selection_mode = mode;
    }
    if let Some(preset) = common.preset {
        config.sampling.preset = Some(preset);
    }
    RunContext::prepare(config)
}

fn stage(report: StageReport) -> i32 {
    for f in &report.failures {
        eprintln!("failed: {} ({})", f.question_id, f.error);
    }
    for o in &report.outputs {
        println!("{}", o.display());
    }
    if report.aborted {
        eprintln!("stopped early after {} records; rerun to resume", report.processed);
    }
    report.exit_code()
}

fn run(command: Command) -> Result<i32, PipelineError> {
    Ok(match command {
        Command::Generate(common) => {
            let ctx = context(&common)?;
            let backend = pipeline::build_completion(&ctx.config)?;
            stage(pipeline::cmd_generate(&ctx, backend.as_ref())?)
        }
        Command::Select { common, input } => {
            let ctx = context(&common)?;
            let encoder = match ctx.config.selection_mode {
                SelectionMode::Dpr => Some(pipeline::build_encoder(&ctx.config)?),
                SelectionMode::Passthrough => None,
            };
            stage(pipeline::cmd_select(&ctx, encoder.as_deref(), input.as_deref())?)
        }
        Command::Predict { common, input } => {
            let ctx = context(&common)?;
            let scorer = pipeline::build_scorer(&ctx.config, &ctx.records);
            stage(pipeline::cmd_predict(&ctx, scorer.as_ref(), input.as_deref())?)
        }
        Command::Eval { common, input, test_accuracy } => {
            let ctx = context(&common)?;
            let report = pipeline::cmd_eval(&ctx, input.as_deref(), test_accuracy)?;
            print!("{}", report.render_text());
            0
        }
        Command::Annotate { common, input, annotator, stats, extra_labels } => {
            let ctx = context(&common)?;
            if stats {
                print!("{}", pipeline::cmd_quality_stats(&ctx, &extra_labels)?.render());
                return Ok(0);
            }
            let stdin = io::stdin();
            match pipeline::cmd_annotate(&ctx, input.as_deref(), &annotator, stdin.lock(), io::stdout()) {
                Ok(s) => {
                    println!("\nlabeled {} ({} already done)", s.labeled_now, s.already_labeled);
                    0
                }
                Err(PipelineError::Eval(EvalError::InterruptedSession { labeled })) => {
                    println!("\nsession saved after {labeled} new labels; rerun to continue");
                    1
                }
                Err(e) => return Err(e),
            }
        }
        Command::ZeroShot(common) => {
            let ctx = context(&common)?;
            let backend = pipeline::build_completion(&ctx.config)?;
            let (report, eval) = pipeline::cmd_zero_shot(&ctx, backend.as_ref())?;
            if let Some(eval) = eval {
                print!("{}", eval.render_text());
            }
            stage(report)
        }
        Command::Adapt { format, input, labels, output } => {
            let n = pipeline::cmd_adapt(format, &input, labels.as_deref(), &output)?;
            println!("wrote {n} records to {}", output.display());
            0
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
