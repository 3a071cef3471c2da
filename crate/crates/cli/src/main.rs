//! `datagen`: generate and annotate datasets with a teacher LLM, convert
//! sequence-labeling files, and score agreement with gold annotations.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 provider failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::Overrides;

#[derive(Parser)]
#[command(name = "datagen", version, about = "Dataset generation and annotation with teacher LLMs")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate texts (unlabeled or label-conditioned) from a job config.
    Generate(JobArgs),
    /// Label every row of the config's unlabeled dataset.
    Annotate(JobArgs),
    /// Print the first prompts of a job without calling any model.
    DryRun {
        config: PathBuf,
        #[arg(short, long, default_value_t = 3)]
        n: usize,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Convert between CoNLL tag files and span JSONL.
    Convert {
        direction: Direction,
        input: PathBuf,
        output: PathBuf,
        /// Reject I- tags that do not continue a span instead of opening one.
        #[arg(long)]
        strict: bool,
    },
    /// Score predictions against gold annotations.
    Eval {
        task: EvalTask,
        pred: PathBuf,
        gold: PathBuf,
        /// Label column for classification.
        #[arg(long, default_value = "label")]
        column: String,
        #[arg(long)]
        strict: bool,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct JobArgs {
    config: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
    /// Render N prompts and exit without calling the model.
    #[arg(long, value_name = "N")]
    dry_run: Option<usize>,
    /// Leave rows whose target value could not be parsed out of the output.
    #[arg(long)]
    drop_unparsed: bool,
}

#[derive(Args, Clone)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_prompt_calls: Option<usize>,
    #[arg(long)]
    target_count: Option<usize>,
    /// 0 disables few-shot examples.
    #[arg(long)]
    fewshot_examples_per_prompt: Option<usize>,
    /// 0 disables few-shot examples.
    #[arg(long)]
    fewshot_pool_per_class: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

impl From<OverrideArgs> for Overrides {
    fn from(a: OverrideArgs) -> Self {
        Overrides {
            seed: a.seed,
            max_prompt_calls: a.max_prompt_calls,
            target_count: a.target_count,
            fewshot_examples_per_prompt: a.fewshot_examples_per_prompt,
            fewshot_pool_per_class: a.fewshot_pool_per_class,
            output: a.output,
            report: a.report,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Tags2spans,
    Spans2tags,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTask {
    Classification,
    Spans,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Generate(args) => commands::run_job(
            &args.config,
            &args.overrides.into(),
            false,
            args.dry_run,
            args.drop_unparsed,
        ),
        Command::Annotate(args) => {
            commands::run_job(&args.config, &args.overrides.into(), true, args.dry_run, args.drop_unparsed)
        }
        Command::DryRun { config, n, overrides } => commands::dry_run(&config, &overrides.into(), n),
        Command::Convert { direction, input, output, strict } => match direction {
            Direction::Tags2spans => commands::tags_to_spans(&input, &output, strict),
            Direction::Spans2tags => commands::spans_to_tags(&input, &output),
        },
        Command::Eval { task, pred, gold, column, strict, json } => match task {
            EvalTask::Classification => commands::eval_classification(&pred, &gold, &column, json),
            EvalTask::Spans => commands::eval_spans(&pred, &gold, strict, json),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
