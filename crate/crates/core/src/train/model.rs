//! Input stem, fusion block and class head wired into one per-frame model.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::fusion::{self, Activation, BoundConv, BoundFusion, ConvLayer, FusionConfig, FusionParams};
use crate::grid::{GridSpec, Pose2};
use crate::membuf::WorkingMemory;
use crate::synth::{ObservationFrame, NUM_CLASSES, OBS_CHANNELS};
use crate::tensorops::{FeatureMap, FocalSpec, ParamTensor, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: GridSpec,
    pub fusion: FusionConfig,
    /// `false` bypasses memory and fusion: logits come from stem and head only.
    pub temporal: bool,
    /// `false` feeds the all-ones initial heatmap on every frame.
    pub heatmap_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { grid: GridSpec::default(), fusion: FusionConfig::default(), temporal: true, heatmap_input: true }
    }
}

impl ModelConfig {
    /// 32x64 grid, C = 64.
    pub fn benchmark() -> Self {
        ModelConfig {
            grid: GridSpec::benchmark(),
            fusion: FusionConfig { channels: 64, ..FusionConfig::default() },
            temporal: true,
            heatmap_input: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.fusion.validate()
    }

    pub fn channels(&self) -> usize {
        self.fusion.channels
    }
}

/// Classification term weight and the two unused detection-loss weights,
/// kept so configs carry the full weighting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub line: f64,
    pub trans: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cls: 5.0, line: 50.0, trans: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.cls > 0.0 && self.cls.is_finite()) {
            return Err(Error::Config(format!("classification loss weight must be > 0, got {}", self.cls)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { gamma: 2.0, alpha: 0.25 }
    }
}

impl FocalParams {
    pub fn spec(&self, weights: &LossWeights) -> FocalSpec<f32> {
        FocalSpec { gamma: self.gamma as f32, alpha: self.alpha as f32, weight: weights.cls as f32 }
    }
}

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub stem: Vec<ConvLayer<f32>>,
    /// Absent in single-frame mode.
    pub fusion: Option<FusionParams<f32>>,
    pub head: ConvLayer<f32>,
}

pub struct BoundModel {
    stem: Vec<BoundConv>,
    fusion: Option<BoundFusion>,
    head: BoundConv,
}

impl BoundModel {
    /// Parameter handles in [`ModelParams::named_params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.stem.iter().flat_map(|l| [l.weight, l.bias]).collect();
        if let Some(f) = &self.fusion {
            v.extend(f.vars());
        }
        v.extend([self.head.weight, self.head.bias]);
        v
    }
}

impl ModelParams {
    /// Deterministic initialization; the fusion block draws from the same
    /// stream as the stem and head so every variant is a function of `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels();
        let stem = vec![
            ConvLayer::init(OBS_CHANNELS, c, 3, (1, 1), Activation::Relu, &mut rng),
            ConvLayer::init(c, c, 3, (1, 1), Activation::Relu, &mut rng),
        ];
        let head = ConvLayer::init(c, NUM_CLASSES, 1, (1, 1), Activation::None, &mut rng);
        let fusion = if config.temporal { Some(FusionParams::init(&config.fusion, &mut rng)?) } else { None };
        Ok(ModelParams { config: *config, stem, fusion, head })
    }

    pub fn named_params(&self) -> Vec<(String, &ParamTensor<f32>)> {
        let mut out = Vec::new();
        for (i, l) in self.stem.iter().enumerate() {
            out.push((format!("stem.{i}.weight"), &l.weight));
            out.push((format!("stem.{i}.bias"), &l.bias));
        }
        if let Some(f) = &self.fusion {
            out.extend(f.named_params());
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    /// Same order as [`ModelParams::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<f32>> {
        let mut out = Vec::new();
        for l in self.stem.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        if let Some(f) = self.fusion.as_mut() {
            out.extend(f.params_mut());
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn bind(&self, tape: &mut Tape<f32>) -> BoundModel {
        BoundModel {
            stem: self.stem.iter().map(|l| l.bind(tape)).collect(),
            fusion: self.fusion.as_ref().map(|f| f.bind(tape)),
            head: self.head.bind(tape),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named_params().iter().all(|(_, p)| p.values.iter().all(|v| v.is_finite()))
    }

    pub fn num_scalars(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }
}

/// Tape handles of one frame's forward pass.
pub struct FrameVars {
    pub logits: Var,
    /// Fused feature (the stem output in single-frame mode).
    pub fused: Var,
}

/// Records one frame. In temporal mode a missing buffer is seeded from this
/// frame's own stem output.
pub fn forward_on(
    tape: &mut Tape<f32>,
    bound: &BoundModel,
    params: &ModelParams,
    obs: &ObservationFrame,
    wm: &mut Option<WorkingMemory>,
) -> Result<FrameVars> {
    let cfg = &params.config;
    let o = &obs.observation;
    if o.channels != OBS_CHANNELS || o.height != cfg.grid.h_cells || o.width != cfg.grid.w_cells {
        return Err(shape_err!(
            "observation is {:?}, model expects {}x{}x{}",
            o.shape(),
            OBS_CHANNELS,
            cfg.grid.h_cells,
            cfg.grid.w_cells
        ));
    }
    let x = tape.constant(o);
    let f_bev = fusion::run_stack(tape, &bound.stem, x)?;
    let fused = match (&bound.fusion, cfg.temporal) {
        (Some(bf), true) => {
            if wm.is_none() {
                *wm = Some(WorkingMemory::init(&tape.feature_map(f_bev)?, cfg.fusion.memory_capacity, &cfg.grid)?);
            }
            let mem = wm.as_ref().expect("seeded above");
            if mem.capacity() != cfg.fusion.memory_capacity || mem.channels() != cfg.channels() {
                return Err(Error::Config(format!(
                    "working memory holds {}x{} channels, model expects {}x{}",
                    mem.capacity(),
                    mem.channels(),
                    cfg.fusion.memory_capacity,
                    cfg.channels()
                )));
            }
            let stacked = tape.constant(&mem.stacked());
            let ones;
            let heat = if cfg.heatmap_input {
                mem.heatmap().map()
            } else {
                ones = FeatureMap::filled(1, cfg.grid.h_cells, cfg.grid.w_cells, 1.0);
                &ones
            };
            let h = fusion::heatmap_features_on(tape, heat, bf, &cfg.fusion)?;
            fusion::fuse_on(tape, stacked, h, f_bev, bf, &cfg.fusion)?
        }
        (None, false) => f_bev,
        _ => return Err(Error::Config("temporal flag disagrees with the fusion parameters".into())),
    };
    let logits = bound.head.forward(tape, fused)?;
    Ok(FrameVars { logits, fused })
}

/// Moves the buffer past a finished frame: the first fused output replaces
/// the seed entries, then the buffer advances into the next ego frame.
pub fn finish_frame(wm: &mut Option<WorkingMemory>, fused: &FeatureMap<f32>, rel_next: Option<&Pose2>) -> Result<()> {
    let Some(mem) = wm.as_mut() else { return Ok(()) };
    if mem.is_seeded() {
        mem.replace_initial(fused)?;
    }
    if let Some(rel) = rel_next {
        mem.advance(fused, rel)?;
    }
    Ok(())
}

/// Inference for one frame against an existing buffer.
pub fn forward_frame(
    obs: &ObservationFrame,
    wm: &WorkingMemory,
    params: &ModelParams,
) -> Result<(FeatureMap<f32>, FeatureMap<f32>)> {
    let mut tape = Tape::inference();
    let bound = params.bind(&mut tape);
    let mut slot = Some(wm.clone());
    let v = forward_on(&mut tape, &bound, params, obs, &mut slot)?;
    Ok((tape.feature_map(v.logits)?, tape.feature_map(v.fused)?))
}

/// Per-frame logits of a whole sequence, streamed causally from frame 0.
pub fn predict_sequence(
    obs: &[ObservationFrame],
    poses: &[Pose2],
    params: &ModelParams,
) -> Result<Vec<FeatureMap<f32>>> {
    if obs.len() != poses.len() {
        return Err(Error::Data(format!("{} frames but {} poses", obs.len(), poses.len())));
    }
    let mut wm = None;
    let mut out = Vec::with_capacity(obs.len());
    for t in 0..obs.len() {
        let mut tape = Tape::inference();
        let bound = params.bind(&mut tape);
        let v = forward_on(&mut tape, &bound, params, &obs[t], &mut wm)?;
        let rel = poses.get(t + 1).map(|n| crate::grid::relative_transform(&poses[t], n));
        finish_frame(&mut wm, &tape.feature_map(v.fused)?, rel.as_ref())?;
        out.push(tape.feature_map(v.logits)?);
    }
    Ok(out)
}

/// Result of one training frame.
pub struct FrameGrad {
    pub loss: f32,
    /// Per-parameter gradients in [`ModelParams::params_mut`] order.
    pub grads: Vec<Vec<f32>>,
    pub fused: FeatureMap<f32>,
}

/// Forward, focal loss and backward for one frame. Gradients are returned,
/// not applied.
pub fn frame_gradients(
    params: &ModelParams,
    obs: &ObservationFrame,
    wm: &mut Option<WorkingMemory>,
    focal: FocalSpec<f32>,
) -> Result<FrameGrad> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let v = forward_on(&mut tape, &bound, params, obs, wm)?;
    let labels: Arc<[u8]> = obs.gt_labels.as_slice().into();
    let loss = tape.focal_loss(v.logits, labels, focal)?;
    let grads = tape.backward(loss)?;
    let sizes: Vec<usize> = params.named_params().iter().map(|(_, p)| p.len()).collect();
    let grads = bound
        .vars()
        .into_iter()
        .zip(sizes)
        .map(|(var, n)| grads.get(var).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]))
        .collect();
    Ok(FrameGrad { loss: tape.scalar(loss)?, grads, fused: tape.feature_map(v.fused)? })
}
