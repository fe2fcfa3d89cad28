use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcn_core::model::{ClassMode, NormKind};
use mcn_core::train::Optimizer;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "mcn", version, about = "Multitask detection, segmentation and pose on one shared backbone")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Every subcommand. The parsed arguments are stored verbatim in the run
/// manifest, which is what `replay` feeds back in.
#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Run a checkpoint on one PPM image and draw the result.
    Infer(InferArgs),
    /// Redraw an overlay from a saved prediction.
    Render(RenderArgs),
    /// Compare the multitask network against one network per task.
    Bench(BenchArgs),
    /// Gradient, codec and metric self-checks.
    Selftest(SelftestArgs),
    /// Re-run a recorded command from its manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Infer(_) => "infer",
            Command::Render(_) => "render",
            Command::Bench(_) => "bench",
            Command::Selftest(_) => "selftest",
            Command::Replay(_) => "replay",
        }
    }

    pub fn out_dir(&self) -> Option<&PathBuf> {
        match self {
            Command::Gen(a) => Some(&a.out),
            Command::Train(a) => Some(&a.out),
            Command::Eval(a) => Some(&a.out),
            Command::Infer(a) => Some(&a.out),
            Command::Render(a) => Some(&a.out),
            Command::Bench(a) => a.out.as_ref(),
            Command::Selftest(a) => a.out.as_ref(),
            Command::Replay(a) => Some(&a.out),
        }
    }

    /// Points the command at a new output directory.
    pub fn set_out_dir(&mut self, dir: PathBuf) {
        match self {
            Command::Gen(a) => a.out = dir,
            Command::Train(a) => a.out = dir,
            Command::Eval(a) => a.out = dir,
            Command::Infer(a) => a.out = dir,
            Command::Render(a) => a.out = dir,
            Command::Bench(a) => {
                a.json = a.json.as_ref().and_then(|p| p.file_name()).map(|f| dir.join(f));
                a.out = Some(dir);
            }
            Command::Selftest(a) => a.out = Some(dir),
            Command::Replay(a) => a.out = dir,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Gen(a) => Some(a.seed),
            Command::Train(a) => Some(a.seed),
            Command::Bench(a) => Some(a.seed),
            _ => None,
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub scenes: u64,
    /// Number of object classes; 1 gives a person-only dataset.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub max_objects: usize,
    #[arg(long, default_value_t = 5)]
    pub keypoints: usize,
    /// Let box centers and keypoints share stride-4 cells.
    #[arg(long)]
    pub allow_collisions: bool,
    /// Share of persons that carry keypoints.
    #[arg(long, default_value_t = 1.0)]
    pub pose_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchArgs {
    /// Backbone stage widths.
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,64")]
    pub widths: Vec<usize>,
    /// Backbone stage strides; their product is the output stride.
    #[arg(long, value_delimiter = ',', default_value = "1,2,2,1")]
    pub strides: Vec<usize>,
    /// 3x3 convolutions per stage.
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value = "batch")]
    pub norm: NormKind,
    #[arg(long, default_value_t = 32)]
    pub head_width: usize,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeArgs {
    #[arg(long, default_value_t = 100)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.3)]
    pub score_threshold: f64,
    /// Keypoint peaks below this keep the regressed position.
    #[arg(long, default_value_t = 0.1)]
    pub keypoint_threshold: f64,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricArgs {
    /// `coco` for 0.50:0.05:0.95, or a comma separated list.
    #[arg(long, default_value = "coco")]
    pub iou: String,
    #[arg(long, default_value_t = 0.2)]
    pub pck_alpha: f64,
    /// Also report OKS-based pose mAP with this per-joint sigma.
    #[arg(long)]
    pub oks_sigma: Option<f64>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "det,seg,pose")]
    pub tasks: String,
    /// `single` keeps only the person class.
    #[arg(long, default_value = "multi")]
    pub classes: ClassMode,
    /// Overrides the class count read from the dataset.
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Overrides the keypoint count read from the dataset.
    #[arg(long)]
    pub keypoints: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value = "adam")]
    pub optimizer: Optimizer,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate and checkpoint every N steps; 0 only at the end.
    #[arg(long, default_value_t = 0)]
    pub eval_interval: usize,
    /// Random horizontal flips.
    #[arg(long)]
    pub flip: bool,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_size: f64,
    #[arg(long, default_value_t = 5.0)]
    pub lambda_seg: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_joint: f64,
    /// Segmentation output side; defaults to the image height.
    #[arg(long)]
    pub seg_res: Option<usize>,
    /// Print a loss line every N steps.
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Weight file; its config is read from the `.json` next to it.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Binary PPM image.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderArgs {
    /// `prediction.json` written by `infer`.
    #[arg(long)]
    pub prediction: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long, default_value = "det,seg,pose")]
    pub tasks: String,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(5..))]
    pub repeats: u64,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 128)]
    pub seg_res: usize,
    /// Square input side.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 5)]
    pub keypoints: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Write the report as JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Directory for the manifest; defaults to the directory of `--json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultArg {
    FocalSign,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Deliberately break one gradient to prove the checks can fail.
    #[arg(long, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// `manifest.json` of an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
