//! Forward-pass latency and parameter counts of a multitask network versus
//! the composition of one single-task network per task.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, build_single_task, format_tasks, BackboneConfig, HeadConfig, McnModel};
use crate::tensor::{Real, Tensor};

pub const MIN_REPEATS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub iqr_ms: f64,
    pub fps: f64,
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl LatencyStats {
    pub fn from_samples(samples_ms: Vec<f64>) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::invalid("no latency samples"));
        }
        let mut s = samples_ms.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
        let (q1, q3) = (quantile(&s, 0.25), quantile(&s, 0.75));
        Ok(LatencyStats {
            samples_ms,
            median_ms: median,
            q1_ms: q1,
            q3_ms: q3,
            iqr_ms: q3 - q1,
            fps: 1000.0 / median,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchParams {
    pub warmup: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams { warmup: 3, repeats: 30, seed: 0 }
    }
}

impl BenchParams {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < MIN_REPEATS {
            return Err(Error::Config(format!("repeats must be at least {MIN_REPEATS}, got {}", self.repeats)));
        }
        if self.warmup == 0 {
            return Err(Error::Config("warmup must be at least 1".into()));
        }
        Ok(())
    }
}

/// Times `repeats` eval-mode forward passes on a fixed random input after
/// `warmup` untimed ones.
pub fn measure_forward<T: Real>(model: &McnModel<T>, input_shape: [usize; 4], params: &BenchParams) -> Result<LatencyStats> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x1a7e_c7);
    let input = Tensor::from_fn(input_shape.to_vec(), |_| T::lit(rng.random_range(0.0..1.0)));
    for _ in 0..params.warmup {
        model.predict(&input)?;
    }
    let mut samples = Vec::with_capacity(params.repeats);
    for _ in 0..params.repeats {
        let t0 = Instant::now();
        let out = model.predict(&input)?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    LatencyStats::from_samples(samples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigBench {
    pub name: String,
    pub tasks: String,
    pub latency: LatencyStats,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub input_shape: [usize; 4],
    pub seg_resolution: usize,
    pub warmup: usize,
    pub repeats: usize,
    pub threads: usize,
    pub precision: String,
    pub mcn: ConfigBench,
    pub stns: Vec<ConfigBench>,
    /// Sum of the single-task medians.
    pub stn_composite_ms: f64,
    pub stn_composite_params: usize,
    pub latency_ratio: f64,
    pub param_ratio: f64,
}

/// Builds the multitask network for `heads.tasks` and one single-task
/// network per task on the same backbone config, and measures all of them.
/// With a single task the two sides are the same network and share one
/// measurement.
pub fn compare_mcn_vs_stn(
    backbone: &BackboneConfig,
    heads: &HeadConfig,
    input_shape: [usize; 4],
    params: &BenchParams,
) -> Result<BenchReport> {
    params.validate()?;
    if heads.tasks.is_empty() {
        return Err(Error::Config("benchmark needs at least one task".into()));
    }
    let mcn = build_model::<f32>(backbone, heads, params.seed)?;
    let mcn_bench = ConfigBench {
        name: "MCN".into(),
        tasks: format_tasks(&heads.tasks),
        latency: measure_forward(&mcn, input_shape, params)?,
        params: mcn.count_params().total,
    };
    let stns = if heads.tasks.len() == 1 {
        vec![ConfigBench {
            name: format!("STN {}", mcn_bench.tasks),
            ..mcn_bench.clone()
        }]
    } else {
        let mut out = Vec::new();
        for (i, &task) in heads.tasks.iter().enumerate() {
            let stn = build_single_task::<f32>(backbone, heads, task, params.seed + 1 + i as u64)?;
            out.push(ConfigBench {
                name: format!("STN {task}"),
                tasks: task.to_string(),
                latency: measure_forward(&stn, input_shape, params)?,
                params: stn.count_params().total,
            });
        }
        out
    };
    let stn_ms: f64 = stns.iter().map(|s| s.latency.median_ms).sum();
    let stn_params: usize = stns.iter().map(|s| s.params).sum();
    Ok(BenchReport {
        input_shape,
        seg_resolution: heads.seg_resolution,
        warmup: params.warmup,
        repeats: params.repeats,
        threads: 1,
        precision: "f32".into(),
        latency_ratio: mcn_bench.latency.median_ms / stn_ms,
        param_ratio: mcn_bench.params as f64 / stn_params as f64,
        mcn: mcn_bench,
        stns,
        stn_composite_ms: stn_ms,
        stn_composite_params: stn_params,
    })
}

/// Parameter ratio only, without timing anything.
pub fn param_ratio(backbone: &BackboneConfig, heads: &HeadConfig) -> Result<f64> {
    let mcn = build_model::<f32>(backbone, heads, 0)?.count_params().total;
    let mut stn = 0;
    for &task in &heads.tasks {
        stn += build_single_task::<f32>(backbone, heads, task, 0)?.count_params().total;
    }
    Ok(mcn as f64 / stn as f64)
}

impl BenchReport {
    /// Fixed-width table: configuration, ms, fps, params, then both ratios.
    pub fn table(&self) -> String {
        let mut s = format!("{:<22} {:>10} {:>9} {:>10}\n", "configuration", "ms", "fps", "params");
        let mut row = |name: &str, ms: f64, params: usize| {
            s.push_str(&format!("{name:<22} {ms:>10.3} {:>9.1} {params:>10}\n", 1000.0 / ms));
        };
        row(&format!("MCN {}", self.mcn.tasks), self.mcn.latency.median_ms, self.mcn.params);
        for st in &self.stns {
            row(&st.name, st.latency.median_ms, st.params);
        }
        row("STN composite", self.stn_composite_ms, self.stn_composite_params);
        s.push_str(&format!("latency ratio MCN/STN  {:.3}\n", self.latency_ratio));
        s.push_str(&format!("param ratio MCN/STN    {:.3}\n", self.param_ratio));
        s
    }
}
