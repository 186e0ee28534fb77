//! `a2t` command-line tool.

mod backends;
mod commands;
mod io;
mod transcript;

use std::path::PathBuf;
use std::process::ExitCode;

use a2t::metrics::EvalMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

use backends::BackendKind;

#[derive(Debug, Parser)]
#[command(
    name = "a2t",
    version,
    about = "Translate the attention of a VQA model into an explanation"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer a question and explain the answer from the attended region.
    Translate(TranslateArgs),
    /// Run the VQA model and write its answer and attention dump.
    Infer(InferArgs),
    /// Roll out an attention dump into saliency, mask and masked image.
    Rollout(RolloutArgs),
    /// Score a JSONL file of records.
    Evaluate(EvaluateArgs),
    /// Translate a dataset once per value of one hyperparameter and score each run.
    Sweep(SweepArgs),
    /// Serve the toy backends over the wire protocol.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "toy")]
    pub backend: BackendKind,
    /// host:port of a wire backend; defaults to $A2T_BACKEND_ADDR or 127.0.0.1:8741.
    #[arg(long)]
    pub addr: Option<String>,
    /// Seconds to wait for each wire response.
    #[arg(long)]
    pub timeout: Option<f64>,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false, id = "input")]
pub struct InputArgs {
    /// Toy scene (JSON grid of concept words), rendered with the toy palette.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// PNG or PPM image.
    #[arg(long)]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GuidingArgs {
    /// Saliency threshold in [0, 1].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Temperature on match scores.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Weight of the match term.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Candidates per step.
    #[arg(long)]
    pub k: Option<usize>,
    /// Nucleus mass for continuations.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub max_continuation_tokens: Option<usize>,
    /// Renormalize LM probabilities over the candidates before mixing.
    #[arg(long)]
    pub renormalize: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PromptArgs {
    /// Template id (built in, or from --templates).
    #[arg(long, default_value = a2t::prompt::DEFAULT_TEMPLATE_ID)]
    pub template: String,
    /// Extra templates, one `id<TAB>pattern` per line.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Number of in-context examples to prefix.
    #[arg(long, default_value_t = 0)]
    pub n_shot: usize,
    /// JSONL of {question, answer, explanation} examples.
    #[arg(long)]
    pub examples: Option<PathBuf>,
    /// Separate in-context examples with newlines instead of spaces.
    #[arg(long)]
    pub newline_shots: bool,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Patch grid ROWSxCOLS for --image with the toy backend.
    #[arg(long, value_parser = io::parse_grid)]
    pub grid: Option<(usize, usize)>,
    #[arg(long)]
    pub question: String,
    /// Ground-truth answer to condition the prompt on.
    #[arg(long)]
    pub answer: Option<String>,
    #[command(flatten)]
    pub guiding: GuidingArgs,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_parser = io::parse_grid)]
    pub grid: Option<(usize, usize)>,
    #[arg(long)]
    pub question: String,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    /// Attention dump JSON.
    #[arg(long)]
    pub dump: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    All,
    #[value(name = "gt_conditioned")]
    GtConditioned,
    #[value(name = "answer_correct")]
    AnswerCorrect,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::All => EvalMode::All,
            ModeArg::GtConditioned => EvalMode::GtConditioned,
            ModeArg::AnswerCorrect => EvalMode::AnswerCorrect,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSONL of evaluation records.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub mode: ModeArg,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Tau,
    Kappa,
    Beta,
    K,
    P,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values, e.g. `0,0.78125,1`.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub grid: Vec<f64>,
    /// JSONL of {scene, question, ground_truth_answer, references}.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub mode: ModeArg,
    /// Put the ground-truth answer in the prompt instead of the predicted one.
    #[arg(long)]
    pub gt_conditioned: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub guiding: GuidingArgs,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = a2t::wire::DEFAULT_ADDR)]
    pub addr: String,
    /// Patch grid ROWSxCOLS of the scenes the toy VQA model will see.
    #[arg(long, value_parser = io::parse_grid, default_value = "1x2")]
    pub grid: (usize, usize),
    /// Handle requests on one connection concurrently.
    #[arg(long)]
    pub concurrent: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Translate(a) => commands::translate(a),
        Command::Infer(a) => commands::infer(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", commands::describe(&e));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
