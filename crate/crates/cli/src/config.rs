//! TOML run configuration. Every key is optional; missing keys take the
//! benchmark preset, unknown keys are rejected.

use std::path::{Path, PathBuf};

use bevmem_core::fusion::{Activation, FusionConfig};
use bevmem_core::synth::{MapParams, OcclusionParams, ScenarioParams};
use bevmem_core::tensorops::AdamWConfig;
use bevmem_core::train::{Benchmark, EvalOptions, FocalParams, LossWeights, ModelConfig, Schedule, TrainOptions};
use bevmem_core::GridSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub channels: usize,
    pub memory_capacity: usize,
    pub heatmap_channels: usize,
    pub dilation: [usize; 2],
    pub heatmap_activation: Activation,
    pub temporal: bool,
    pub heatmap_input: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_sequences: usize,
    /// Seed of single training runs.
    pub seed: u64,
    /// Paired seeds of ablation runs.
    pub seeds: Vec<u64>,
    pub deterministic: bool,
    pub lambda_cls: f64,
    pub lambda_line: f64,
    pub lambda_trans: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub train_scenarios: usize,
    pub eval_scenarios: usize,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub frames: usize,
    /// Weights of straight, turn and varied-speed trajectories.
    pub trajectory_mix: [f64; 3],
    pub noise_sigma: f64,
    pub map: MapParams,
    pub occlusion: OcclusionParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub occlusion_window: usize,
    pub min_occluded_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub data: DataSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_benchmark(&Benchmark::default())
    }
}

macro_rules! section_default {
    ($t:ty, $field:ident) => {
        impl Default for $t {
            fn default() -> Self {
                RunConfig::default().$field
            }
        }
    };
}
section_default!(ModelSection, model);
section_default!(TrainingSection, training);
section_default!(DataSection, data);
section_default!(EvalSection, eval);

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            data_dir: "data".into(),
            checkpoint: "checkpoint.bvm".into(),
            report_dir: "reports".into(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), Failure> {
    if ok {
        Ok(())
    } else {
        Err(Failure::Data(format!("config: {}", msg())))
    }
}

fn ordered<T: PartialOrd + std::fmt::Debug>(name: &str, r: &(T, T)) -> Result<(), Failure> {
    check(r.0 <= r.1, || format!("{name} range {r:?} is reversed"))
}

impl RunConfig {
    pub fn from_benchmark(b: &Benchmark) -> Self {
        let m = &b.model;
        let t = &b.train;
        let s = &b.scenario;
        RunConfig {
            grid: m.grid,
            model: ModelSection {
                channels: m.fusion.channels,
                memory_capacity: m.fusion.memory_capacity,
                heatmap_channels: m.fusion.heatmap_channels,
                dilation: [m.fusion.dilation.0, m.fusion.dilation.1],
                heatmap_activation: m.fusion.heatmap_activation,
                temporal: m.temporal,
                heatmap_input: m.heatmap_input,
            },
            training: TrainingSection {
                lr: t.optimizer.lr,
                beta1: t.optimizer.beta1,
                beta2: t.optimizer.beta2,
                eps: t.optimizer.eps,
                weight_decay: t.optimizer.weight_decay,
                stage1_epochs: b.schedule.stage1_epochs,
                stage2_epochs: b.schedule.stage2_epochs,
                batch_sequences: t.batch_sequences,
                seed: t.seed,
                seeds: b.seeds.clone(),
                deterministic: t.deterministic,
                lambda_cls: t.loss.cls,
                lambda_line: t.loss.line,
                lambda_trans: t.loss.trans,
                focal_gamma: t.focal.gamma,
                focal_alpha: t.focal.alpha,
            },
            data: DataSection {
                train_scenarios: b.train_scenarios,
                eval_scenarios: b.eval_scenarios,
                train_seed: b.train_seed,
                eval_seed: b.eval_seed,
                frames: s.frames,
                trajectory_mix: [s.trajectory_mix.0, s.trajectory_mix.1, s.trajectory_mix.2],
                noise_sigma: b.noise_sigma,
                map: s.map.clone(),
                occlusion: s.occlusion.clone(),
            },
            eval: EvalSection {
                occlusion_window: b.eval.occlusion_window,
                min_occluded_cells: b.eval.min_occluded_cells,
            },
            paths: PathsSection::default(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            grid: self.grid,
            fusion: FusionConfig {
                channels: m.channels,
                memory_capacity: m.memory_capacity,
                heatmap_channels: m.heatmap_channels,
                dilation: (m.dilation[0], m.dilation[1]),
                heatmap_activation: m.heatmap_activation,
            },
            temporal: m.temporal,
            heatmap_input: m.heatmap_input,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        let t = &self.training;
        TrainOptions {
            optimizer: AdamWConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: t.eps, weight_decay: t.weight_decay },
            loss: LossWeights { cls: t.lambda_cls, line: t.lambda_line, trans: t.lambda_trans },
            focal: FocalParams { gamma: t.focal_gamma, alpha: t.focal_alpha },
            seed: t.seed,
            batch_sequences: t.batch_sequences,
            deterministic: t.deterministic,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            occlusion_window: self.eval.occlusion_window,
            min_occluded_cells: self.eval.min_occluded_cells,
            deterministic: self.training.deterministic,
        }
    }

    pub fn scenario_params(&self) -> ScenarioParams {
        let d = &self.data;
        ScenarioParams {
            grid: self.grid,
            frames: d.frames,
            trajectory_mix: (d.trajectory_mix[0], d.trajectory_mix[1], d.trajectory_mix[2]),
            map: d.map.clone(),
            occlusion: d.occlusion.clone(),
        }
    }

    pub fn benchmark(&self) -> Benchmark {
        let d = &self.data;
        Benchmark {
            scenario: self.scenario_params(),
            noise_sigma: d.noise_sigma,
            train_scenarios: d.train_scenarios,
            eval_scenarios: d.eval_scenarios,
            train_seed: d.train_seed,
            eval_seed: d.eval_seed,
            model: self.model_config(),
            schedule: Schedule { stage1_epochs: self.training.stage1_epochs, stage2_epochs: self.training.stage2_epochs },
            train: self.train_options(),
            eval: self.eval_options(),
            seeds: self.training.seeds.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.model_config().validate().map_err(|e| Failure::Data(format!("config: {e}")))?;
        self.train_options().validate().map_err(|e| Failure::Data(format!("config: {e}")))?;
        let t = &self.training;
        check(t.stage1_epochs + t.stage2_epochs > 0, || "at least one training epoch is required".into())?;
        check(!t.seeds.is_empty(), || "training.seeds must not be empty".into())?;
        check(t.focal_gamma >= 0.0 && t.focal_gamma.is_finite(), || "focal_gamma must be >= 0".into())?;
        check(t.focal_alpha > 0.0 && t.focal_alpha <= 1.0, || "focal_alpha must lie in (0, 1]".into())?;
        let d = &self.data;
        check(d.train_scenarios > 0 && d.eval_scenarios > 0, || "scenario counts must be at least 1".into())?;
        check(d.frames >= 4, || format!("frames must be at least 4 to split a clip, got {}", d.frames))?;
        check(d.noise_sigma >= 0.0 && d.noise_sigma.is_finite(), || "noise_sigma must be >= 0".into())?;
        check(
            d.trajectory_mix.iter().all(|w| *w >= 0.0 && w.is_finite()) && d.trajectory_mix.iter().sum::<f64>() > 0.0,
            || "trajectory_mix weights must be >= 0 with a positive sum".into(),
        )?;
        let m = &d.map;
        ordered("map.lane_width_m", &m.lane_width_m)?;
        ordered("map.dividers", &m.dividers)?;
        ordered("map.crossings", &m.crossings)?;
        check(m.lane_width_m.0 > 0.0, || "lane width must be > 0".into())?;
        check((1..=3).contains(&m.dividers.0) && m.dividers.1 <= 3, || "map.dividers must lie in 1..=3".into())?;
        check(m.crossings.1 <= 3, || "map.crossings must lie in 0..=3".into())?;
        check(
            [m.boundary_width_m, m.divider_width_m, m.crossing_depth_m].iter().all(|w| *w > 0.0),
            || "element widths must be > 0".into(),
        )?;
        let o = &d.occlusion;
        ordered("occlusion.count", &o.count)?;
        ordered("occlusion.duration", &o.duration)?;
        ordered("occlusion.length_m", &o.length_m)?;
        ordered("occlusion.width_m", &o.width_m)?;
        ordered("occlusion.center_x_frac", &o.center_x_frac)?;
        ordered("occlusion.center_y_m", &o.center_y_m)?;
        check(o.duration.0 >= 1, || "occluders must last at least one frame".into())?;
        check(o.length_m.0 > 0.0 && o.width_m.0 > 0.0, || "occluder extents must be > 0".into())?;
        check(self.eval.occlusion_window >= 1, || "occlusion_window must be at least 1".into())?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Failure::Data(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads `path`, or returns the preset when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Data(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
            None => Ok(Self::default()),
        }
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
