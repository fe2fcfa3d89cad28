//! Training loop and dataset evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{
    decode_detections, decode_poses, decode_segmentation, encode_targets, DecodeParams, EncodedTargets,
};
use crate::error::{Error, Result};
use crate::losses::{total_loss, BatchTargets, LossBreakdown, LossWeights};
use crate::metrics::{coco_thresholds, Evaluator, ImagePrediction, MetricConfig, MetricReport};
use crate::model::{format_tasks, McnModel, Mode, Task, TaskSet};
use crate::synth::Scene;
use crate::tensor::{Real, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}` (expected adam or sgd)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weights: LossWeights,
    /// Evaluate every this many steps; 0 evaluates only at the end.
    pub eval_interval: usize,
    pub seed: u64,
    pub tasks: TaskSet,
    /// Random horizontal flips of training images.
    pub flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 4,
            lr: 1e-3,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            eval_interval: 0,
            seed: 0,
            tasks: Task::ALL.into_iter().collect(),
            flip: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one active task is required".into()));
        }
        self.weights.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
}

/// Progress notifications; returning an error stops training.
pub enum TrainEvent<'a, T> {
    Step(&'a StepLog),
    Eval {
        step: usize,
        report: &'a MetricReport,
        model: &'a McnModel<T>,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub evals: Vec<(usize, MetricReport)>,
}

struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// `[N, 3, H, W]` batch of scene images.
pub fn stack_images<T: Real>(scenes: &[&Scene]) -> Result<Tensor<T>> {
    let first = scenes.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(scenes.len() * first.image.numel());
    for s in scenes {
        if s.image.shape() != shape.as_slice() {
            return Err(Error::invalid(format!(
                "batch mixes image shapes {:?} and {:?}",
                shape,
                s.image.shape()
            )));
        }
        data.extend(s.image.data().iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::new([vec![scenes.len()], shape].concat(), data)
}

/// Trains `model` in place. The batch order, flips and therefore the whole
/// run are a function of `cfg.seed` and the dataset.
pub fn train<T: Real>(
    model: &mut McnModel<T>,
    scenes: &[Scene],
    cfg: &TrainConfig,
    eval: &EvalConfig,
    mut observe: impl FnMut(TrainEvent<'_, T>) -> Result<()>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::invalid("training needs at least one scene"));
    }
    let heads = model.heads().clone();
    if let Some(t) = cfg.tasks.iter().find(|t| !heads.has(**t)) {
        return Err(Error::Config(format!(
            "active task `{t}` is not among the model's tasks ({})",
            format_tasks(&heads.tasks)
        )));
    }
    let mut variants: Vec<Vec<(Scene, EncodedTargets)>> = Vec::with_capacity(scenes.len());
    for s in scenes {
        let mut v = vec![(s.clone(), encode_targets(&s.annotation, &heads)?)];
        if cfg.flip {
            let f = s.flip_horizontal();
            let t = encode_targets(&f.annotation, &heads)?;
            v.push((f, t));
        }
        variants.push(v);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut cursor = order.len();
    let mut adam: BTreeMap<String, AdamState<T>> = BTreeMap::new();
    let mut log = TrainLog::default();
    let mut tape = Tape::new();
    let lr = T::lit(cfg.lr);

    for step in 1..=cfg.steps {
        let take = cfg.batch_size.min(scenes.len());
        let mut batch = Vec::with_capacity(take);
        if take == scenes.len() {
            batch.extend(0..scenes.len());
        } else {
            for _ in 0..take {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(order[cursor]);
                cursor += 1;
            }
        }
        let picked: Vec<&(Scene, EncodedTargets)> = batch
            .iter()
            .map(|&i| {
                let v = if cfg.flip { rng.random_range(0..variants[i].len()) } else { 0 };
                &variants[i][v]
            })
            .collect();
        let images = stack_images::<T>(&picked.iter().map(|p| &p.0).collect::<Vec<_>>())?;
        let targets = BatchTargets::<T>::stack(&picked.iter().map(|p| p.1.clone()).collect::<Vec<_>>())?;

        tape.reset();
        let x = tape.leaf(&images);
        let (vars, bind) = model.forward(&mut tape, x, Mode::Train, &cfg.tasks)?;
        let (total, breakdown) = total_loss(&mut tape, &vars, &targets, &cfg.weights, &cfg.tasks)?;
        if let Some((term, value)) = breakdown.terms().into_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { step, term, value });
        }
        let mut grads = tape.backward(total)?;
        model.store_grads(&bind, &mut grads)?;
        model.update_running_stats(&bind);
        apply_update(model, cfg, lr, step, &mut adam);
        model.zero_grads();

        let entry = StepLog { step, loss: breakdown, lr: cfg.lr };
        observe(TrainEvent::Step(&entry))?;
        log.steps.push(entry);

        let due = (cfg.eval_interval > 0 && step % cfg.eval_interval == 0) || step == cfg.steps;
        if due {
            let report = evaluate(model, scenes, eval)?;
            observe(TrainEvent::Eval { step, report: &report, model })?;
            log.evals.push((step, report));
        }
    }
    Ok(log)
}

fn apply_update<T: Real>(
    model: &mut McnModel<T>,
    cfg: &TrainConfig,
    lr: T,
    step: usize,
    adam: &mut BTreeMap<String, AdamState<T>>,
) {
    let (b1, b2, eps) = (T::lit(cfg.beta1), T::lit(cfg.beta2), T::lit(cfg.adam_eps));
    let bc1 = T::one() - b1.powi(step as i32);
    let bc2 = T::one() - b2.powi(step as i32);
    for (name, p) in model.params_mut() {
        let Some(g) = p.grad().map(<[T]>::to_vec) else { continue };
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (w, d) in p.data_mut().iter_mut().zip(&g) {
                    *w = *w - lr * *d;
                }
            }
            Optimizer::Adam => {
                let st = adam.entry(name.clone()).or_insert_with(|| AdamState {
                    m: vec![T::zero(); g.len()],
                    v: vec![T::zero(); g.len()],
                });
                for (i, w) in p.data_mut().iter_mut().enumerate() {
                    let d = g[i];
                    st.m[i] = b1 * st.m[i] + (T::one() - b1) * d;
                    st.v[i] = b2 * st.v[i] + (T::one() - b2) * d * d;
                    let mhat = st.m[i] / bc1;
                    let vhat = st.v[i] / bc2;
                    *w = *w - lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub decode: DecodeParams,
    pub iou_thresholds: Vec<f64>,
    pub pck_alpha: f64,
    pub oks_sigma: Option<f64>,
    /// Images per forward pass.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            decode: DecodeParams::default(),
            iou_thresholds: coco_thresholds(),
            pck_alpha: 0.2,
            oks_sigma: None,
            batch_size: 8,
        }
    }
}

/// Decoded predictions for every scene, in order.
pub fn predict_scenes<T: Real>(model: &McnModel<T>, scenes: &[Scene], cfg: &EvalConfig) -> Result<Vec<ImagePrediction>> {
    let heads = model.heads();
    let stride = heads.output_stride;
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(cfg.batch_size.max(1)) {
        let images = stack_images::<T>(&chunk.iter().collect::<Vec<_>>())?;
        let maps = model.predict(&images)?;
        for i in 0..chunk.len() {
            let mut p = ImagePrediction {
                seg_resolution: heads.seg_resolution,
                ..ImagePrediction::default()
            };
            if heads.has(Task::Detection) {
                p.detections = decode_detections(&maps, i, &cfg.decode, stride)?;
                if heads.has(Task::Pose) {
                    p.poses = decode_poses(&maps, i, &p.detections, &cfg.decode, stride)?;
                }
            }
            if heads.has(Task::Segmentation) {
                p.seg = Some(decode_segmentation(&maps, i)?);
            }
            out.push(p);
        }
    }
    Ok(out)
}

/// Metrics of `model` on `scenes`. Eval mode; nothing is mutated.
pub fn evaluate<T: Real>(model: &McnModel<T>, scenes: &[Scene], cfg: &EvalConfig) -> Result<MetricReport> {
    let heads = model.heads();
    let mut tasks = heads.tasks.clone();
    if !heads.has(Task::Detection) {
        // Poses are instantiated from person detections.
        tasks.remove(&Task::Pose);
    }
    let mut ev = Evaluator::new(MetricConfig {
        tasks,
        num_classes: heads.num_classes,
        iou_thresholds: cfg.iou_thresholds.clone(),
        pck_alpha: cfg.pck_alpha,
        oks_sigma: cfg.oks_sigma,
    });
    for (pred, scene) in predict_scenes(model, scenes, cfg)?.iter().zip(scenes) {
        ev.add(pred, &scene.annotation);
    }
    Ok(ev.finish())
}
