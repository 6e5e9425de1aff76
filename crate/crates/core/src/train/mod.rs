//! Two-stage streaming training, evaluation, checkpoints and the ablation
//! harness.

mod ablation;
mod checkpoint;
mod metrics;
mod model;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ablation::{
    run_ablation, AblationPlan, AblationReport, AblationRun, Benchmark, DirectionalCheck, Schedule, Variant, VariantRow,
};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, parse_tensors, save_checkpoint, StoredTensor,
};
pub use metrics::{
    argmax_labels, evaluate, score_sequence, ClassIou, EvalOptions, EvalReport, IouCounts, Metrics,
    MetricsAccumulator, REPORT_VERSION,
};
pub use model::{
    finish_frame, forward_frame, forward_on, frame_gradients, predict_sequence, BoundModel, FocalParams, FrameGrad,
    FrameVars, LossWeights, ModelConfig, ModelParams,
};

use crate::error::{Error, Result};
use crate::grid::relative_transform;
use crate::membuf::WorkingMemory;
use crate::synth::{split_sequence, SequenceData};
use crate::tensorops::{AdamW, AdamWConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub optimizer: AdamWConfig,
    pub loss: LossWeights,
    pub focal: FocalParams,
    pub seed: u64,
    /// Frames (stage 1) or sub-sequences (stage 2) per optimizer step.
    pub batch_sequences: usize,
    /// Runs batch items one after another on the calling thread.
    pub deterministic: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            optimizer: AdamWConfig::default(),
            loss: LossWeights::default(),
            focal: FocalParams::default(),
            seed: 0,
            batch_sequences: 1,
            deterministic: true,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_sequences == 0 {
            return Err(Error::Config("batch_sequences must be at least 1".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("optimizer betas must lie in [0, 1)".into()));
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(Error::Config("optimizer eps must be > 0 and weight decay >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochLog {
    pub stage: u8,
    pub epoch: usize,
    /// Mean per-step loss over the epoch.
    pub loss: f64,
    pub steps: usize,
    pub wall_time_s: f64,
}

/// Parameters captured once a given fraction of a stage's steps has run.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub fraction: f64,
    pub step: usize,
    pub params: ModelParams,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub step_losses: Vec<f32>,
    pub snapshots: Vec<Snapshot>,
}

fn stream_seed(seed: u64, stage: u64, epoch: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage << 32 | epoch as u64);
    rand::Rng::gen(&mut rng)
}

/// Averages the batch gradients into `params` and takes one optimizer step.
fn apply_step(params: &mut ModelParams, opt: &mut AdamW<f32>, batch: &[FrameGrad]) {
    let scale = 1.0 / batch.len() as f32;
    for (k, p) in params.params_mut().into_iter().enumerate() {
        p.zero_grad();
        for item in batch {
            for (g, v) in p.grad.iter_mut().zip(&item.grads[k]) {
                *g += v;
            }
        }
        if batch.len() > 1 {
            p.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    opt.step(params.params_mut());
}

struct Progress {
    total: usize,
    done: usize,
    pending: Vec<f64>,
    snapshots: Vec<Snapshot>,
}

impl Progress {
    fn new(total: usize, fractions: &[f64]) -> Self {
        let mut pending: Vec<f64> = fractions.to_vec();
        pending.sort_by(|a, b| b.total_cmp(a));
        Progress { total, done: 0, pending, snapshots: Vec::new() }
    }

    fn tick(&mut self, params: &ModelParams) {
        self.done += 1;
        while let Some(&f) = self.pending.last() {
            if (self.done as f64) < f * self.total as f64 {
                break;
            }
            self.pending.pop();
            self.snapshots.push(Snapshot { fraction: f, step: self.done, params: params.clone() });
        }
    }
}

fn check_loss(loss: f32, stage: u8, step: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::State(format!("non-finite loss {loss} at stage {stage} step {step}")));
    }
    Ok(())
}

fn validate_data(data: &[SequenceData], params: &ModelParams) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if let Some(s) = data.iter().find(|s| s.grid != params.config.grid) {
        return Err(Error::Config(format!("data grid {:?} differs from model grid {:?}", s.grid, params.config.grid)));
    }
    Ok(())
}

/// Single-frame training: every frame seeds a fresh buffer from its own
/// encoder output, so no state crosses frames.
pub fn train_stage1(
    data: &[SequenceData],
    mut params: ModelParams,
    epochs: usize,
    opts: &TrainOptions,
    snapshot_fractions: &[f64],
) -> Result<StageOutcome> {
    opts.validate()?;
    validate_data(data, &params)?;
    let focal = opts.focal.spec(&opts.loss);
    let items: Vec<(usize, usize)> =
        data.iter().enumerate().flat_map(|(s, seq)| (0..seq.len()).map(move |t| (s, t))).collect();
    let b = opts.batch_sequences;
    let mut progress = Progress::new(epochs * items.len().div_ceil(b), snapshot_fractions);
    let mut opt = AdamW::new(opts.optimizer);
    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    for epoch in 0..epochs {
        let start = Instant::now();
        let mut order = items.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(opts.seed, 1, epoch)));
        let mut sum = 0.0f64;
        let mut steps = 0;
        for chunk in order.chunks(b) {
            let run = |&(s, t): &(usize, usize)| frame_gradients(&params, &data[s].frames[t], &mut None, focal);
            let batch: Vec<FrameGrad> = if opts.deterministic || b == 1 {
                chunk.iter().map(run).collect::<Result<_>>()?
            } else {
                chunk.par_iter().map(run).collect::<Result<_>>()?
            };
            let loss = batch.iter().map(|g| g.loss).sum::<f32>() / batch.len() as f32;
            check_loss(loss, 1, progress.done)?;
            apply_step(&mut params, &mut opt, &batch);
            progress.tick(&params);
            step_losses.push(loss);
            sum += loss as f64;
            steps += 1;
        }
        log.push(EpochLog { stage: 1, epoch, loss: sum / steps as f64, steps, wall_time_s: start.elapsed().as_secs_f64() });
    }
    Ok(StageOutcome { params, log, step_losses, snapshots: progress.snapshots })
}

/// Sub-sequences of one stage-2 epoch: scenarios in shuffled order, each cut
/// in two at a seeded point.
pub fn stage2_plan(data: &[SequenceData], seed: u64, epoch: usize) -> Result<Vec<(usize, std::ops::Range<usize>)>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 2, epoch));
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(2 * order.len());
    for s in order {
        let (a, b) = split_sequence(data[s].len(), rand::Rng::gen(&mut rng))?;
        out.push((s, a));
        out.push((s, b));
    }
    Ok(out)
}

/// Streaming training over split sub-sequences. Each frame takes one
/// optimizer step; the fused output then enters the buffer as a plain value,
/// so no gradient crosses a frame boundary.
pub fn train_stage2(
    data: &[SequenceData],
    mut params: ModelParams,
    epochs: usize,
    opts: &TrainOptions,
    snapshot_fractions: &[f64],
) -> Result<StageOutcome> {
    opts.validate()?;
    validate_data(data, &params)?;
    let focal = opts.focal.spec(&opts.loss);
    let b = opts.batch_sequences;
    let plans: Vec<_> = (0..epochs).map(|e| stage2_plan(data, opts.seed, e)).collect::<Result<_>>()?;
    let total: usize = plans
        .iter()
        .map(|p| p.chunks(b).map(|g| g.iter().map(|(_, r)| r.len()).max().unwrap_or(0)).sum::<usize>())
        .sum();
    let capacity = params.config.fusion.memory_capacity;
    let mut progress = Progress::new(total, snapshot_fractions);
    let mut opt = AdamW::new(opts.optimizer);
    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    for (epoch, plan) in plans.iter().enumerate() {
        let start = Instant::now();
        let mut sum = 0.0f64;
        let mut steps = 0;
        for group in plan.chunks(b) {
            // Buffers start empty at every sub-sequence and are seeded by its first frame.
            let mut wms: Vec<Option<WorkingMemory>> = vec![None; group.len()];
            let longest = group.iter().map(|(_, r)| r.len()).max().unwrap_or(0);
            for k in 0..longest {
                let active: Vec<usize> = (0..group.len()).filter(|&g| k < group[g].1.len()).collect();
                let run = |g: usize, wm: &mut Option<WorkingMemory>| -> Result<FrameGrad> {
                    let (s, r) = &group[g];
                    let seq = &data[*s];
                    let t = r.start + k;
                    let out = frame_gradients(&params, &seq.frames[t], wm, focal)?;
                    let rel = (t + 1 < r.end).then(|| relative_transform(&seq.poses[t], &seq.poses[t + 1]));
                    finish_frame(wm, &out.fused, rel.as_ref())?;
                    if let Some(m) = wm {
                        if m.len() != capacity {
                            return Err(Error::State(format!("buffer holds {} entries, expected {capacity}", m.len())));
                        }
                    }
                    Ok(out)
                };
                let mut slots: Vec<(usize, &mut Option<WorkingMemory>)> =
                    wms.iter_mut().enumerate().filter(|(g, _)| active.contains(g)).collect();
                let batch: Vec<FrameGrad> = if opts.deterministic || slots.len() == 1 {
                    slots.iter_mut().map(|(g, wm)| run(*g, wm)).collect::<Result<_>>()?
                } else {
                    slots.par_iter_mut().map(|(g, wm)| run(*g, wm)).collect::<Result<_>>()?
                };
                let loss = batch.iter().map(|g| g.loss).sum::<f32>() / batch.len() as f32;
                check_loss(loss, 2, progress.done)?;
                apply_step(&mut params, &mut opt, &batch);
                progress.tick(&params);
                step_losses.push(loss);
                sum += loss as f64;
                steps += 1;
            }
        }
        log.push(EpochLog { stage: 2, epoch, loss: sum / steps as f64, steps, wall_time_s: start.elapsed().as_secs_f64() });
    }
    Ok(StageOutcome { params, log, step_losses, snapshots: progress.snapshots })
}
