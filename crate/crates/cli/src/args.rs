use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use consel_core::flmi::DEFAULT_CHUNK;

#[derive(Debug, Parser)]
#[command(name = "consel", version, about = "Reference-free pseudo-label data selection")]
pub struct Cli {
    /// Seed for every randomized stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Log format on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    pub log: LogFormat,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LogFormat {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Utterance-level 39-d mean MFCC vectors from 16 kHz PCM16 WAV files.
    Features(FeaturesArgs),
    /// Query-driven preselection of pool utterances.
    Preselect(PreselectArgs),
    /// Quality vectors for every de-duplicated hypothesis.
    Score(ScoreArgs),
    /// Trains the WER predictor on labeled pairs.
    TrainPredictor(TrainArgs),
    /// Applies one selection rule.
    Select(SelectArgs),
    /// Pooled WER and hours of a selected subset.
    Evaluate(EvaluateArgs),
    /// Per-configuration improvement rates against the baseline decode.
    Sweep(SweepArgs),
    /// Writes a synthetic corpus with planted truth.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Pool,
    Query,
    Dev,
    Test,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Manifest with `audio_path`; relative paths resolve against its directory.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Only extract utterances of this split.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Lazy,
}

#[derive(Debug, Args)]
pub struct PreselectArgs {
    /// Manifest; utterances with split `pool` are candidates.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub pool_features: PathBuf,
    #[arg(long)]
    pub query_features: PathBuf,
    #[arg(long)]
    pub budget: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Lazy)]
    pub mode: ModeArg,
    /// Candidates per similarity block.
    #[arg(long, default_value_t = DEFAULT_CHUNK)]
    pub chunk: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub hyps: PathBuf,
    /// Speech embeddings keyed by utt_id.
    #[arg(long)]
    pub speech: PathBuf,
    /// Text embeddings keyed by hyp_id.
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Restrict to the utterances in this id list.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_speech: PathBuf,
    #[arg(long)]
    pub train_text: PathBuf,
    /// JSONL of {id, target_wer}.
    #[arg(long)]
    pub train_targets: PathBuf,
    #[arg(long)]
    pub dev_speech: PathBuf,
    #[arg(long)]
    pub dev_text: PathBuf,
    #[arg(long)]
    pub dev_targets: PathBuf,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [600usize, 32])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 70)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    /// Weights JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history and dev report as JSON.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Conf,
    Pred,
    Cos,
    Euc,
    Stable,
    ConfStable,
    Ppl,
    Random,
    Cer,
    WerBinary,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long, value_enum)]
    pub rule: RuleArg,
    #[arg(long)]
    pub hyps: PathBuf,
    /// Score JSONL (rules over the perturbation pool).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Percentile.
    #[arg(long)]
    pub p: Option<u32>,
    /// Stable-base percentile of conf-stable.
    #[arg(long)]
    pub p2: Option<u32>,
    /// Perplexity rule: keep exactly this many utterances.
    #[arg(long)]
    pub size_matched: Option<usize>,
    /// Random rule: target duration.
    #[arg(long)]
    pub hours: Option<f64>,
    /// CER-consistency threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Random rule: manifest with durations.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// CER rule: the two other systems' hypothesis files.
    #[arg(long, num_args = 2)]
    pub systems: Vec<PathBuf>,
    /// Restrict to the utterances in this id list.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub subset: PathBuf,
    /// Manifest with reference texts.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Lowercase and strip punctuation before scoring.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub hyps: PathBuf,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_utts: usize,
    #[arg(long, default_value_t = 40)]
    pub n_query: usize,
    /// Signal strength in [0, 1].
    #[arg(long, default_value_t = 0.8)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.25)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 16)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub train_pairs: usize,
    #[arg(long, default_value_t = 400)]
    pub dev_pairs: usize,
}
