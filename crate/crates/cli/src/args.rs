use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "teehr",
    version,
    about = "Transformer event encoders and deep attention modules for neural temporal point processes",
    after_help = "Every option can also be set in the --config TOML file under its long name \
                  (dashes or underscores). Flags given on the command line win."
)]
pub struct Cli {
    /// TOML file with option values; command-line flags override it
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// More logging (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a synthetic corpus with a ground-truth sidecar
    #[command(subcommand)]
    Simulate(Simulate),
    /// Train a model on one objective
    Train(TrainArgs),
    /// Self-supervised pretraining with the detached outcome probe
    Pretrain(TrainArgs),
    /// Supervised fine-tuning on the outcome, optionally from a checkpoint
    Finetune(FinetuneArgs),
    /// Score a checkpoint on a split
    Evaluate(EvaluateArgs),
    /// Aggregate TEE attention into influence matrices per group
    Aggregate(AggregateArgs),
    /// Export one embedding row per record
    Embed(EmbedArgs),
    /// k-nearest-neighbour pattern similarity of embeddings
    Knnps(KnnArgs),
    /// Convert external event files into a dataset directory
    Convert(ConvertArgs),
}

#[derive(Subcommand, Debug)]
pub enum Simulate {
    /// Multivariate Hawkes process with exponential kernels
    Hawkes(HawkesArgs),
    /// Two-class EHR-like corpus with irregular lab panels
    Ehr(EhrArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct HawkesArgs {
    /// Base rates, one per mark, comma-separated
    #[arg(long, default_value = "0.2", allow_hyphen_values = true)]
    pub mu: String,
    /// Excitation matrix: rows separated by ';', entries by ','. A single value fills every entry
    #[arg(long, default_value = "0.5", allow_hyphen_values = true)]
    pub alpha: String,
    /// Decay matrix, same layout as --alpha
    #[arg(long, default_value = "1.0", allow_hyphen_values = true)]
    pub beta: String,
    /// Observation horizon of every sequence
    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    pub tmax: f64,
    /// Number of sequences
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Merge events closer than this into multi-hot events (gives a multi-label corpus)
    #[arg(long, allow_negative_numbers = true)]
    pub group_width: Option<f64>,
    /// Output dataset directory
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EhrArgs {
    /// Number of patients
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Number of lab variables (one mark per variable)
    #[arg(long, default_value_t = 6)]
    pub vars: usize,
    /// Stay length in hours
    #[arg(long, default_value_t = 48.0)]
    pub horizon: f64,
    /// Fraction of positive patients
    #[arg(long, default_value_t = 0.4, allow_negative_numbers = true)]
    pub prevalence: f64,
    /// Panel rates per hour for the negative and positive class
    #[arg(long, default_value = "0.5,0.8")]
    pub panel_rate: String,
    /// Gamma shape of the per-patient frailty on the panel rate
    #[arg(long, default_value_t = 4.0)]
    pub frailty_shape: f64,
    /// Mean shift of positive-class values, in standard deviations
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    pub value_shift: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset directory
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Mark mode (multi-class or multi-label); read from dataset.json when absent
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    /// Mark embedding width
    #[arg(long, default_value_t = 32)]
    pub d_emb: usize,
    /// Time encoding width of the event encoder
    #[arg(long, default_value_t = 32)]
    pub d_time: usize,
    /// Time encoding scale
    #[arg(long, default_value_t = 10_000.0, allow_negative_numbers = true)]
    pub time_scale: f64,
    /// Encoder layers
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Attention heads per layer
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    /// Feed-forward width
    #[arg(long, default_value_t = 64)]
    pub d_ff: usize,
    /// Attention mask shift w: event j attends to events k <= j - w
    #[arg(long, default_value_t = 1)]
    pub shift: usize,
    /// How time encodings join mark embeddings (concatenate or sum)
    #[arg(long, default_value = "concatenate")]
    pub time_mode: String,
    /// Drop the deep attention module even when observations are present
    #[arg(long)]
    pub no_dam: bool,
    /// Drop the transformer event encoder (needs observations)
    #[arg(long)]
    pub no_tee: bool,
    /// Time encoding width of the attention module
    #[arg(long, default_value_t = 16)]
    pub dam_d_time: usize,
    /// Hidden width of the attention module MLPs
    #[arg(long, default_value_t = 32)]
    pub dam_hidden: usize,
    /// Attention module heads
    #[arg(long, default_value_t = 2)]
    pub dam_heads: usize,
    /// Width of the set-summary network h'
    #[arg(long, default_value_t = 16)]
    pub d_hprime: usize,
    /// Width of the set-summary output g'
    #[arg(long, default_value_t = 16)]
    pub d_gprime: usize,
    /// Key width of the attention module
    #[arg(long, default_value_t = 16)]
    pub d_prod: usize,
    /// Width of the per-observation network h
    #[arg(long, default_value_t = 16)]
    pub dam_d_h: usize,
    /// Output width of the attention module
    #[arg(long, default_value_t = 32)]
    pub dam_d_g: usize,
    /// Static descriptor embedding width
    #[arg(long, default_value_t = 8)]
    pub d_static: usize,
    /// Hidden width of the probe and classifier heads
    #[arg(long, default_value_t = 16)]
    pub head_hidden: usize,
    /// Record summary fed to outcome heads (last or mean)
    #[arg(long, default_value = "last")]
    pub pooling: String,
    /// Parameter initialisation seed; defaults to --seed
    #[arg(long)]
    pub init_seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OptimArgs {
    /// Initial learning rate
    #[arg(long, default_value_t = 1e-3, allow_negative_numbers = true)]
    pub lr: f64,
    /// Floor of the cosine schedule
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lr_min: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Cosine annealing period in epochs; defaults to --epochs
    #[arg(long)]
    pub period: Option<usize>,
    /// Early stopping on validation loss, validation AUROC, or off
    #[arg(long, default_value = "loss")]
    pub stop_metric: String,
    /// Epochs without improvement before stopping
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Integration points per interval during training
    #[arg(long, default_value_t = 20)]
    pub n_mc: usize,
    /// Integral estimator (stratified, uniform or trapezoid)
    #[arg(long, default_value = "stratified")]
    pub integration: String,
    /// Clip the global gradient norm
    #[arg(long, allow_negative_numbers = true)]
    pub grad_clip: Option<f64>,
    /// Parameter groups to keep fixed, comma-separated
    #[arg(long, value_delimiter = ',')]
    pub freeze: Vec<String>,
    /// Skip the detached outcome probe
    #[arg(long)]
    pub no_probe: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Floating-point precision (f64 or f32)
    #[arg(long, default_value = "f64")]
    pub precision: String,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Objective: pp-mc, pp-ml, pp-marked, ae, or auto (pp-mc for multi-class data, pp-ml for multi-label)
    #[arg(long, default_value = "auto")]
    pub loss: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Output directory
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Pretrained checkpoint; its architecture replaces the model options
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Parameter groups copied from the checkpoint, comma-separated
    #[arg(long, value_delimiter = ',')]
    pub transfer: Vec<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Output directory
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to score (train, validation or test)
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Integration points per interval
    #[arg(long, default_value_t = 200)]
    pub n_mc: usize,
    /// Integral estimator (stratified, uniform or trapezoid)
    #[arg(long, default_value = "stratified")]
    pub integration: String,
    /// Floating-point precision (f64 or f32)
    #[arg(long, default_value = "f64")]
    pub precision: String,
    /// Metrics file; printed to stdout when absent
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct AggregateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to aggregate over, or "all"
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Groups: all records, one group per outcome label, or one per predicted class
    #[arg(long, default_value = "all")]
    pub group_by: String,
    /// Keep only records with this outcome label
    #[arg(long)]
    pub label: Option<u8>,
    /// Keep only these record ids (comma-separated, or @FILE with one id per line)
    #[arg(long)]
    pub ids: Option<String>,
    /// Significance threshold on rescaled attention
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub epsilon: f64,
    /// Output directory
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Floating-point precision (f64 or f32)
    #[arg(long, default_value = "f64")]
    pub precision: String,
    /// Output CSV
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct KnnArgs {
    /// Checkpoint to embed records with
    #[arg(long, conflicts_with = "embeddings", required_unless_present = "embeddings")]
    pub checkpoint: Option<PathBuf>,
    /// Embedding CSV written by `embed`
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split to score, or "all"
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Neighbours per record
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Report file; printed to stdout when absent
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ConvertArgs {
    /// Input layout: thp (one JSON object per split file) or multilabel (JSON list of sequences)
    #[arg(long)]
    pub format: String,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Mark vocabulary size; inferred when absent
    #[arg(long)]
    pub num_marks: Option<usize>,
    /// Merge events closer than this into multi-hot events
    #[arg(long, allow_negative_numbers = true)]
    pub group_width: Option<f64>,
    /// Output dataset directory
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}
