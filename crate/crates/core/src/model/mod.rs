//! Shared-backbone multitask network.
//!
//! A backbone of 3×3 conv → norm → ReLU stages produces a stride-reduced
//! trunk. Each configured task attaches one head to that trunk: a hidden
//! 3×3 conv → norm → ReLU followed by one 1×1 projection per output map.
//!
//! Parameter names are `backbone.*`, `det.*`, `seg.*` and `pose.*`. The
//! initial value of every parameter depends only on its name, shape and the
//! seed, so two models sharing a backbone config and seed start from
//! bit-identical backbones whatever heads they carry.

mod config;
mod weights;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Real, Tape, Tensor, Var};

pub use config::{
    format_tasks, parse_tasks, BackboneConfig, ClassMode, HeadConfig, ModelConfig, NormKind, Task, TaskSet,
};
pub use weights::{load_config, load_weights, save_config, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
/// Initial probability of heatmap heads: bias = logit(0.01).
pub const HEATMAP_PRIOR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One convolution of the layer graph. Hidden convolutions are followed by
/// normalization and ReLU and carry no bias; output projections have a bias
/// and no activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub hidden: bool,
}

impl ConvSpec {
    fn hidden(name: String, cin: usize, cout: usize, stride: usize) -> Self {
        ConvSpec { name, cin, cout, kernel: 3, stride, hidden: true }
    }

    fn projection(name: String, cin: usize, cout: usize) -> Self {
        ConvSpec { name, cin, cout, kernel: 1, stride: 1, hidden: false }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }
    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
    fn gamma_name(&self) -> String {
        format!("{}.norm.gamma", self.name)
    }
    fn beta_name(&self) -> String {
        format!("{}.norm.beta", self.name)
    }
    fn mean_name(&self) -> String {
        format!("{}.norm.running_mean", self.name)
    }
    fn var_name(&self) -> String {
        format!("{}.norm.running_var", self.name)
    }
}

/// Named output maps produced by the heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum HeadOutput {
    CenterHeatmap,
    SizeMap,
    OffsetMap,
    SegLogits,
    KeypointHeatmap,
    KeypointOffset,
    JointRegression,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadSpec {
    pub trunk: ConvSpec,
    pub outputs: Vec<(HeadOutput, ConvSpec)>,
}

/// Layer graph derived from a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGraph {
    pub backbone: Vec<ConvSpec>,
    pub heads: BTreeMap<Task, HeadSpec>,
}

impl LayerGraph {
    fn new(backbone: &BackboneConfig, heads: &HeadConfig) -> Self {
        let mut convs = Vec::new();
        let mut cin = 3;
        for (s, (&width, &stride)) in backbone.stage_widths.iter().zip(&backbone.stage_strides).enumerate() {
            for b in 0..backbone.block_depth {
                let stride = if b == 0 { stride } else { 1 };
                convs.push(ConvSpec::hidden(format!("backbone.s{s}.b{b}"), cin, width, stride));
                cin = width;
            }
        }
        let trunk_ch = backbone.out_channels();
        let hw = heads.head_width;
        let c = heads.num_classes;
        let k = heads.num_keypoints;
        let mut map = BTreeMap::new();
        for &task in &heads.tasks {
            let p = task.prefix();
            let outs: Vec<(HeadOutput, usize, &str)> = match task {
                Task::Detection => vec![
                    (HeadOutput::CenterHeatmap, c, "center"),
                    (HeadOutput::SizeMap, 2, "size"),
                    (HeadOutput::OffsetMap, 2, "offset"),
                ],
                Task::Segmentation => vec![(HeadOutput::SegLogits, c + 1, "logits")],
                Task::Pose => vec![
                    (HeadOutput::KeypointHeatmap, k, "heatmap"),
                    (HeadOutput::KeypointOffset, 2, "offset"),
                    (HeadOutput::JointRegression, 2 * k, "joints"),
                ],
            };
            map.insert(
                task,
                HeadSpec {
                    trunk: ConvSpec::hidden(format!("{p}.trunk"), trunk_ch, hw, 1),
                    outputs: outs
                        .into_iter()
                        .map(|(o, ch, n)| (o, ConvSpec::projection(format!("{p}.{n}"), hw, ch)))
                        .collect(),
                },
            );
        }
        LayerGraph { backbone: convs, heads: map }
    }
}

/// Output maps of one forward pass, each present iff its task ran.
///
/// Heatmaps are post-sigmoid, `seg_softmax` is post-softmax at
/// `seg_resolution`², everything else is raw regression output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeadOutputs<T> {
    pub center_heatmap: Option<Tensor<T>>,
    pub size_map: Option<Tensor<T>>,
    pub offset_map: Option<Tensor<T>>,
    pub keypoint_heatmap: Option<Tensor<T>>,
    pub keypoint_offset: Option<Tensor<T>>,
    pub joint_regression: Option<Tensor<T>>,
    pub seg_softmax: Option<Tensor<T>>,
}

/// Tape handles of the output maps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeadVars {
    pub center_heatmap: Option<Var>,
    pub size_map: Option<Var>,
    pub offset_map: Option<Var>,
    pub keypoint_heatmap: Option<Var>,
    pub keypoint_offset: Option<Var>,
    pub joint_regression: Option<Var>,
    pub seg_softmax: Option<Var>,
}

impl HeadVars {
    pub fn to_outputs<T: Real>(&self, tape: &Tape<T>) -> HeadOutputs<T> {
        let get = |v: Option<Var>| v.map(|v| tape.to_tensor(v));
        HeadOutputs {
            center_heatmap: get(self.center_heatmap),
            size_map: get(self.size_map),
            offset_map: get(self.offset_map),
            keypoint_heatmap: get(self.keypoint_heatmap),
            keypoint_offset: get(self.keypoint_offset),
            joint_regression: get(self.joint_regression),
            seg_softmax: get(self.seg_softmax),
        }
    }
}

impl<T: Real> HeadOutputs<T> {
    fn fields(&self) -> [&Option<Tensor<T>>; 7] {
        [
            &self.center_heatmap,
            &self.size_map,
            &self.offset_map,
            &self.keypoint_heatmap,
            &self.keypoint_offset,
            &self.joint_regression,
            &self.seg_softmax,
        ]
    }

    pub fn present_count(&self) -> usize {
        self.fields().iter().filter(|f| f.is_some()).count()
    }

    pub fn batch_size(&self) -> usize {
        self.fields()
            .iter()
            .find_map(|f| f.as_ref().map(|t| t.shape()[0]))
            .unwrap_or(0)
    }

    /// The outputs of image `index` as a batch of one.
    pub fn select(&self, index: usize) -> Result<HeadOutputs<T>> {
        let pick = |t: &Option<Tensor<T>>| -> Result<Option<Tensor<T>>> {
            let Some(t) = t else { return Ok(None) };
            let (n, c, h, w) = t.dims4()?;
            if index >= n {
                return Err(Error::invalid(format!("image index {index} out of range for batch of {n}")));
            }
            let per = c * h * w;
            Tensor::new(vec![1, c, h, w], t.data()[index * per..(index + 1) * per].to_vec()).map(Some)
        };
        Ok(HeadOutputs {
            center_heatmap: pick(&self.center_heatmap)?,
            size_map: pick(&self.size_map)?,
            offset_map: pick(&self.offset_map)?,
            keypoint_heatmap: pick(&self.keypoint_heatmap)?,
            keypoint_offset: pick(&self.keypoint_offset)?,
            joint_regression: pick(&self.joint_regression)?,
            seg_softmax: pick(&self.seg_softmax)?,
        })
    }
}

/// Parameter handles bound onto a tape for one forward pass, plus the
/// batch statistics gathered by train-mode normalization.
#[derive(Debug, Default)]
pub struct Binding<T> {
    vars: BTreeMap<String, Var>,
    batch_stats: Vec<(String, Vec<T>, Vec<T>)>,
}

impl<T> Binding<T> {
    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }
}

/// Parameter totals split by backbone and head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub backbone: usize,
    pub heads: BTreeMap<Task, usize>,
    pub total: usize,
}

/// A built network: config, layer graph, trainable parameters and
/// normalization running statistics.
#[derive(Clone, Debug)]
pub struct McnModel<T> {
    config: ModelConfig,
    graph: LayerGraph,
    params: BTreeMap<String, Tensor<T>>,
    buffers: BTreeMap<String, Tensor<T>>,
}

/// Builds a multitask network. Fails if pose is requested without detection.
pub fn build_model<T: Real>(backbone: &BackboneConfig, heads: &HeadConfig, seed: u64) -> Result<McnModel<T>> {
    heads.validate()?;
    build_unpaired(backbone, heads, seed)
}

/// Builds the single-task network for `task`: the same backbone with only
/// that task's head. Used as the comparison baseline, so a lone pose head
/// is allowed here.
pub fn build_single_task<T: Real>(
    backbone: &BackboneConfig,
    heads: &HeadConfig,
    task: Task,
    seed: u64,
) -> Result<McnModel<T>> {
    let heads = HeadConfig {
        tasks: [task].into_iter().collect(),
        ..heads.clone()
    };
    build_unpaired(backbone, &heads, seed)
}

fn build_unpaired<T: Real>(backbone: &BackboneConfig, heads: &HeadConfig, seed: u64) -> Result<McnModel<T>> {
    heads.validate_shapes()?;
    backbone.validate()?;
    backbone.check_heads(heads)?;
    let graph = LayerGraph::new(backbone, heads);
    let mut params = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    let all_convs = graph
        .backbone
        .iter()
        .chain(graph.heads.values().flat_map(|h| std::iter::once(&h.trunk).chain(h.outputs.iter().map(|(_, c)| c))));
    for spec in all_convs {
        let fan_in = spec.cin * spec.kernel * spec.kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let shape = vec![spec.cout, spec.cin, spec.kernel, spec.kernel];
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &spec.weight_name()));
        let w = Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z * std)
        });
        params.insert(spec.weight_name(), w.with_requires_grad(true));
        if spec.hidden {
            params.insert(spec.gamma_name(), Tensor::full(vec![spec.cout], T::one()).with_requires_grad(true));
            params.insert(spec.beta_name(), Tensor::zeros(vec![spec.cout]).with_requires_grad(true));
            if backbone.norm == NormKind::Batch {
                buffers.insert(spec.mean_name(), Tensor::zeros(vec![spec.cout]));
                buffers.insert(spec.var_name(), Tensor::full(vec![spec.cout], T::one()));
            }
        } else {
            params.insert(spec.bias_name(), Tensor::zeros(vec![spec.cout]).with_requires_grad(true));
        }
    }
    let prior = T::lit((HEATMAP_PRIOR / (1.0 - HEATMAP_PRIOR)).ln());
    for name in ["det.center.bias", "pose.heatmap.bias"] {
        if let Some(b) = params.get_mut(name) {
            b.data_mut().iter_mut().for_each(|v| *v = prior);
        }
    }
    Ok(McnModel {
        config: ModelConfig {
            backbone: backbone.clone(),
            heads: heads.clone(),
        },
        graph,
        params,
        buffers,
    })
}

/// Stable per-parameter seed: FNV-1a of the name mixed into `seed`.
fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl<T: Real> McnModel<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn heads(&self) -> &HeadConfig {
        &self.config.heads
    }

    pub fn backbone(&self) -> &BackboneConfig {
        &self.config.backbone
    }

    pub fn graph(&self) -> &LayerGraph {
        &self.graph
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.buffers
    }

    /// Converts every parameter and buffer to another precision.
    pub fn cast<U: Real>(&self) -> McnModel<U> {
        McnModel {
            config: self.config.clone(),
            graph: self.graph.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn count_params(&self) -> ParamCount {
        let mut backbone = 0;
        let mut heads: BTreeMap<Task, usize> = self.config.heads.tasks.iter().map(|&t| (t, 0)).collect();
        for (name, t) in &self.params {
            let group = name.split('.').next().unwrap_or_default();
            match Task::ALL.iter().find(|task| task.prefix() == group) {
                Some(task) => *heads.entry(*task).or_default() += t.numel(),
                None => backbone += t.numel(),
            }
        }
        let total = backbone + heads.values().sum::<usize>();
        ParamCount { backbone, heads, total }
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    /// Runs the network on `images` ([N,3,H,W], already on the tape) for the
    /// given subset of configured tasks.
    pub fn forward(&self, tape: &mut Tape<T>, images: Var, mode: Mode, tasks: &TaskSet) -> Result<(HeadVars, Binding<T>)> {
        self.forward_with(tape, images, mode, tasks, BTreeMap::new())
    }

    /// As [`forward`](Self::forward), but parameters named in `preset` use
    /// the given tape handles instead of fresh leaves. Lets a caller
    /// differentiate with respect to one parameter tensor in isolation.
    pub fn forward_with(
        &self,
        tape: &mut Tape<T>,
        images: Var,
        mode: Mode,
        tasks: &TaskSet,
        preset: BTreeMap<String, Var>,
    ) -> Result<(HeadVars, Binding<T>)> {
        let heads = &self.config.heads;
        if let Some(t) = tasks.iter().find(|t| !heads.has(**t)) {
            return Err(Error::Config(format!("task `{t}` is not configured on this model")));
        }
        let (_, c, h, w) = crate::tensor::dims4(tape.shape(images))?;
        if c != 3 {
            return Err(Error::invalid(format!("expected 3-channel images, got {c}")));
        }
        let stride = heads.output_stride;
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::invalid(format!(
                "input {h}x{w} is not divisible by the output stride {stride}"
            )));
        }

        let mut bind = Binding { vars: preset, batch_stats: Vec::new() };
        let mut x = images;
        for spec in &self.graph.backbone {
            x = self.conv_block(tape, x, spec, mode, &mut bind)?;
        }
        let trunk = x;

        let mut out = HeadVars::default();
        for task in tasks {
            let head = &self.graph.heads[task];
            let hidden = self.conv_block(tape, trunk, &head.trunk, mode, &mut bind)?;
            for (kind, spec) in &head.outputs {
                let y = self.conv_block(tape, hidden, spec, mode, &mut bind)?;
                match kind {
                    HeadOutput::CenterHeatmap => out.center_heatmap = Some(tape.sigmoid(y)),
                    HeadOutput::SizeMap => out.size_map = Some(y),
                    HeadOutput::OffsetMap => out.offset_map = Some(y),
                    HeadOutput::KeypointHeatmap => out.keypoint_heatmap = Some(tape.sigmoid(y)),
                    HeadOutput::KeypointOffset => out.keypoint_offset = Some(y),
                    HeadOutput::JointRegression => out.joint_regression = Some(y),
                    HeadOutput::SegLogits => {
                        let s = heads.seg_resolution;
                        let up = tape.upsample_bilinear(y, s, s)?;
                        out.seg_softmax = Some(tape.softmax_channels(up)?);
                    }
                }
            }
        }
        Ok((out, bind))
    }

    fn bind_param(&self, tape: &mut Tape<T>, name: &str, bind: &mut Binding<T>) -> Result<Var> {
        if let Some(v) = bind.vars.get(name) {
            return Ok(*v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| Error::ParamMismatch(format!("missing parameter `{name}`")))?;
        let v = tape.leaf(t);
        bind.vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn conv_block(&self, tape: &mut Tape<T>, x: Var, spec: &ConvSpec, mode: Mode, bind: &mut Binding<T>) -> Result<Var> {
        let w = self.bind_param(tape, &spec.weight_name(), bind)?;
        let pad = spec.kernel / 2;
        if !spec.hidden {
            let b = self.bind_param(tape, &spec.bias_name(), bind)?;
            return tape.conv2d(x, w, Some(b), spec.stride, pad);
        }
        let y = tape.conv2d(x, w, None, spec.stride, pad)?;
        let gamma = self.bind_param(tape, &spec.gamma_name(), bind)?;
        let beta = self.bind_param(tape, &spec.beta_name(), bind)?;
        let normed = match (self.config.backbone.norm, mode) {
            (NormKind::Affine, _) => tape.channel_affine(y, gamma, beta)?,
            (NormKind::Batch, Mode::Train) => {
                let (v, mean, var) = tape.batch_norm_train(y, gamma, beta, T::lit(BN_EPS))?;
                bind.batch_stats.push((spec.name.clone(), mean, var));
                v
            }
            (NormKind::Batch, Mode::Eval) => {
                let mean = self.buffers[&spec.mean_name()].data();
                let var = self.buffers[&spec.var_name()].data();
                tape.batch_norm_eval(y, gamma, beta, mean, var, T::lit(BN_EPS))?
            }
        };
        Ok(tape.relu(normed))
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// statistics (exponential moving average, momentum [`BN_MOMENTUM`]).
    pub fn update_running_stats(&mut self, bind: &Binding<T>) {
        let m = T::lit(BN_MOMENTUM);
        for (layer, mean, var) in &bind.batch_stats {
            for (buf, batch) in [("running_mean", mean), ("running_var", var)] {
                if let Some(t) = self.buffers.get_mut(&format!("{layer}.norm.{buf}")) {
                    for (r, &b) in t.data_mut().iter_mut().zip(batch) {
                        *r = (T::one() - m) * *r + m * b;
                    }
                }
            }
        }
    }

    /// Stores the gradients of every bound parameter on the parameter tensors.
    /// Parameters that were not bound keep no gradient.
    pub fn store_grads(&mut self, bind: &Binding<T>, grads: &mut Gradients<T>) -> Result<()> {
        self.zero_grads();
        for (name, &v) in &bind.vars {
            if let Some(g) = grads.take(v) {
                self.params.get_mut(name).expect("bound from this model").set_grad(g)?;
            }
        }
        Ok(())
    }

    /// Eval-mode forward of every configured task.
    pub fn predict(&self, images: &Tensor<T>) -> Result<HeadOutputs<T>> {
        let mut tape = Tape::inference();
        let x = tape.leaf(images);
        let (vars, _) = self.forward(&mut tape, x, Mode::Eval, &self.config.heads.tasks)?;
        Ok(vars.to_outputs(&tape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heads(tasks: &[Task]) -> HeadConfig {
        HeadConfig {
            tasks: tasks.iter().copied().collect(),
            seg_resolution: 32,
            ..HeadConfig::default()
        }
    }

    fn small_backbone() -> BackboneConfig {
        BackboneConfig {
            stage_widths: vec![4, 8],
            stage_strides: vec![2, 2],
            block_depth: 1,
            norm: NormKind::Batch,
        }
    }

    #[test]
    fn backbone_is_independent_of_heads() {
        let b = BackboneConfig::default();
        let a: McnModel<f32> = build_model(&b, &heads(&[Task::Detection]), 11).unwrap();
        let c: McnModel<f32> = build_model(&b, &heads(&[Task::Detection, Task::Segmentation]), 11).unwrap();
        for (name, t) in a.params().iter().filter(|(n, _)| n.starts_with("backbone.")) {
            assert_eq!(t.data(), c.param(name).unwrap().data(), "{name}");
        }
        let d: McnModel<f32> = build_model(&b, &heads(&[Task::Detection]), 12).unwrap();
        assert_ne!(a.param("backbone.s0.b0.weight"), d.param("backbone.s0.b0.weight"));
    }

    #[test]
    fn lone_pose_is_a_config_error() {
        let r: Result<McnModel<f32>> = build_model(&BackboneConfig::default(), &heads(&[Task::Pose]), 0);
        assert!(matches!(r, Err(Error::Config(_))));
        let stn: McnModel<f32> =
            build_single_task(&BackboneConfig::default(), &HeadConfig::default(), Task::Pose, 0).unwrap();
        assert_eq!(stn.heads().tasks.len(), 1);
    }

    #[test]
    fn all_three_tasks_produce_seven_outputs() {
        let m: McnModel<f32> = build_model(&small_backbone(), &heads(&Task::ALL), 1).unwrap();
        let x = Tensor::from_fn(vec![2, 3, 16, 16], |i| (i % 7) as f32 * 0.1);
        let out = m.predict(&x).unwrap();
        assert_eq!(out.present_count(), 7);
        assert_eq!(out.center_heatmap.as_ref().unwrap().shape(), &[2, 4, 4, 4]);
        assert_eq!(out.seg_softmax.as_ref().unwrap().shape(), &[2, 5, 32, 32]);
        assert_eq!(out.joint_regression.as_ref().unwrap().shape(), &[2, 10, 4, 4]);
    }

    #[test]
    fn count_is_additive() {
        let m: McnModel<f32> = build_model(&BackboneConfig::default(), &HeadConfig::default(), 0).unwrap();
        let c = m.count_params();
        assert_eq!(c.total, c.backbone + c.heads.values().sum::<usize>());
        assert_eq!(c.total, m.params().values().map(Tensor::numel).sum::<usize>());
    }

    #[test]
    fn heatmap_bias_starts_at_prior() {
        let m: McnModel<f64> = build_model(&small_backbone(), &heads(&Task::ALL), 1).unwrap();
        let b = m.param("det.center.bias").unwrap().data()[0];
        assert!((1.0 / (1.0 + (-b).exp()) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let m: McnModel<f32> = build_model(&small_backbone(), &heads(&[Task::Detection]), 1).unwrap();
        assert!(matches!(m.predict(&Tensor::zeros(vec![1, 3, 18, 16])), Err(Error::InvalidArgument(_))));
    }
}
