use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three perception tasks a head can serve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detection,
    Segmentation,
    Pose,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Detection, Task::Segmentation, Task::Pose];

    pub fn short_name(self) -> &'static str {
        match self {
            Task::Detection => "det",
            Task::Segmentation => "seg",
            Task::Pose => "pose",
        }
    }

    /// Parameter-name prefix of this task's head.
    pub fn prefix(self) -> &'static str {
        self.short_name()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "det" | "detection" => Ok(Task::Detection),
            "seg" | "segmentation" => Ok(Task::Segmentation),
            "pose" => Ok(Task::Pose),
            other => Err(Error::Config(format!("unknown task `{other}` (expected det, seg or pose)"))),
        }
    }
}

pub type TaskSet = BTreeSet<Task>;

/// Parses a comma separated task list such as `det,seg,pose`.
pub fn parse_tasks(s: &str) -> Result<TaskSet> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

pub fn format_tasks(tasks: &TaskSet) -> String {
    tasks.iter().map(|t| t.short_name()).collect::<Vec<_>>().join(",")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassMode {
    Single,
    Multi,
}

impl FromStr for ClassMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(ClassMode::Single),
            "multi" | "multiclass" => Ok(ClassMode::Multi),
            other => Err(Error::Config(format!("unknown class mode `{other}` (expected single or multi)"))),
        }
    }
}

/// Normalization layer used after every hidden convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Batch norm, momentum 0.1, eps 1e-5.
    Batch,
    /// Learned per-channel scale and shift only; stands in for batch norm
    /// when training with one image per batch.
    Affine,
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(NormKind::Batch),
            "affine" => Ok(NormKind::Affine),
            other => Err(Error::Config(format!("unknown norm `{other}` (expected batch or affine)"))),
        }
    }
}

/// Which heads exist and how wide their outputs are.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub tasks: TaskSet,
    pub class_mode: ClassMode,
    pub num_classes: usize,
    pub num_keypoints: usize,
    pub seg_resolution: usize,
    pub output_stride: usize,
    /// Channels of each head's hidden 3×3 convolution.
    pub head_width: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            tasks: Task::ALL.into_iter().collect(),
            class_mode: ClassMode::Multi,
            num_classes: 4,
            num_keypoints: 5,
            seg_resolution: 128,
            output_stride: 4,
            head_width: 32,
        }
    }
}

impl HeadConfig {
    pub fn has(&self, task: Task) -> bool {
        self.tasks.contains(&task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.has(Task::Pose) && !self.has(Task::Detection) {
            return Err(Error::Config(
                "pose requires detection: pose heads are always paired with a detection head".into(),
            ));
        }
        self.validate_shapes()
    }

    /// Everything except task pairing. Single-task comparison networks use
    /// this directly because a lone pose head is legal there.
    pub(crate) fn validate_shapes(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task is required".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if self.class_mode == ClassMode::Single && self.num_classes != 1 {
            return Err(Error::Config(format!(
                "single-class mode needs num_classes == 1, got {}",
                self.num_classes
            )));
        }
        if self.has(Task::Pose) && self.num_keypoints == 0 {
            return Err(Error::Config("pose needs at least one keypoint".into()));
        }
        if self.seg_resolution == 0 || self.output_stride == 0 || self.head_width == 0 {
            return Err(Error::Config(
                "seg_resolution, output_stride and head_width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Shared convolutional trunk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stage_widths: Vec<usize>,
    pub stage_strides: Vec<usize>,
    /// 3×3 convolutions per stage; the first one carries the stage stride.
    pub block_depth: usize,
    pub norm: NormKind,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stage_widths: vec![16, 32, 64, 64],
            stage_strides: vec![1, 2, 2, 1],
            block_depth: 2,
            norm: NormKind::Batch,
        }
    }
}

impl BackboneConfig {
    pub fn output_stride(&self) -> usize {
        self.stage_strides.iter().product()
    }

    pub fn out_channels(&self) -> usize {
        *self.stage_widths.last().expect("validated non-empty")
    }

    /// Same topology with every stage width multiplied by `factor`.
    pub fn widened(&self, factor: usize) -> Self {
        BackboneConfig {
            stage_widths: self.stage_widths.iter().map(|w| w * factor).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.stage_strides.len() {
            return Err(Error::Config(format!(
                "backbone needs matching, non-empty width and stride lists (got {} widths, {} strides)",
                self.stage_widths.len(),
                self.stage_strides.len()
            )));
        }
        if self.stage_widths.contains(&0) || self.stage_strides.contains(&0) || self.block_depth == 0 {
            return Err(Error::Config("stage widths, strides and block depth must be positive".into()));
        }
        Ok(())
    }

    pub fn check_heads(&self, heads: &HeadConfig) -> Result<()> {
        if self.output_stride() != heads.output_stride {
            return Err(Error::Config(format!(
                "product of stage strides ({}) must equal the head output stride ({})",
                self.output_stride(),
                heads.output_stride
            )));
        }
        Ok(())
    }
}

/// Backbone plus heads, as written next to a weight file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub heads: HeadConfig,
}
