//! Per-class IoU over whole frames and over recently-visible occluded cells.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{ElementClass, SequenceData};
use crate::tensorops::FeatureMap;

use super::model::{predict_sequence, ModelParams};

pub const REPORT_VERSION: u32 = 1;

/// IoU of the three map classes, in label order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassIou {
    pub ped_crossing: f64,
    pub divider: f64,
    pub boundary: f64,
}

impl ClassIou {
    fn from_array(a: [f64; 3]) -> Self {
        ClassIou { ped_crossing: a[0], divider: a[1], boundary: a[2] }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.ped_crossing, self.divider, self.boundary]
    }

    pub fn mean(&self) -> f64 {
        self.as_array().iter().sum::<f64>() / 3.0
    }
}

/// Intersection and union counts for the map classes (labels 1..=3).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IouCounts {
    pub intersection: [u64; 3],
    pub union: [u64; 3],
}

impl IouCounts {
    /// Adds the cells where `mask` is set (all cells when `None`).
    pub fn add(&mut self, pred: &[u8], gt: &[u8], mask: Option<&[bool]>) {
        debug_assert_eq!(pred.len(), gt.len());
        for (cell, (&p, &g)) in pred.iter().zip(gt).enumerate() {
            if mask.is_some_and(|m| !m[cell]) {
                continue;
            }
            for c in ElementClass::ALL {
                let k = c.label();
                let (hp, hg) = (p == k, g == k);
                let slot = k as usize - 1;
                if hp && hg {
                    self.intersection[slot] += 1;
                }
                if hp || hg {
                    self.union[slot] += 1;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &IouCounts) {
        for k in 0..3 {
            self.intersection[k] += other.intersection[k];
            self.union[k] += other.union[k];
        }
    }

    /// A class that never occurs in prediction or ground truth scores 1.
    pub fn ious(&self) -> ClassIou {
        ClassIou::from_array(std::array::from_fn(|k| {
            if self.union[k] == 0 {
                1.0
            } else {
                self.intersection[k] as f64 / self.union[k] as f64
            }
        }))
    }
}

/// Per-cell argmax; ties go to the lower class index.
pub fn argmax_labels(logits: &FeatureMap<f32>) -> Vec<u8> {
    let cells = logits.plane();
    (0..cells)
        .map(|p| {
            let mut best = 0;
            for c in 1..logits.channels {
                if logits.values[c * cells + p] > logits.values[best * cells + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Past frames searched when deciding whether an occluded cell was seen.
    pub occlusion_window: usize,
    /// Frames with fewer qualifying occluded cells are skipped.
    pub min_occluded_cells: usize,
    /// Forces sequential evaluation.
    pub deterministic: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { occlusion_window: 4, min_occluded_cells: 10, deterministic: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub per_class_iou: ClassIou,
    pub mean_iou: f64,
    /// `None` when no frame had enough qualifying occluded cells.
    pub occluded_per_class_iou: Option<ClassIou>,
    pub occluded_iou: Option<f64>,
    pub frames: usize,
    pub occluded_frames: usize,
    pub occluded_cells: u64,
}

/// Running counts behind a [`Metrics`] value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsAccumulator {
    pub all: IouCounts,
    pub occluded: IouCounts,
    pub frames: usize,
    pub occluded_frames: usize,
    pub occluded_cells: u64,
}

impl MetricsAccumulator {
    pub fn add_frame(&mut self, pred: &[u8], gt: &[u8], occluded_mask: &[bool], opts: &EvalOptions) {
        self.all.add(pred, gt, None);
        self.frames += 1;
        let n = occluded_mask.iter().filter(|&&m| m).count();
        if n >= opts.min_occluded_cells {
            self.occluded.add(pred, gt, Some(occluded_mask));
            self.occluded_frames += 1;
            self.occluded_cells += n as u64;
        }
    }

    pub fn merge(&mut self, other: &MetricsAccumulator) {
        self.all.merge(&other.all);
        self.occluded.merge(&other.occluded);
        self.frames += other.frames;
        self.occluded_frames += other.occluded_frames;
        self.occluded_cells += other.occluded_cells;
    }

    pub fn finish(&self) -> Metrics {
        let per_class_iou = self.all.ious();
        let occ = (self.occluded_frames > 0).then(|| self.occluded.ious());
        Metrics {
            per_class_iou,
            mean_iou: per_class_iou.mean(),
            occluded_per_class_iou: occ,
            occluded_iou: occ.map(|c| c.mean()),
            frames: self.frames,
            occluded_frames: self.occluded_frames,
            occluded_cells: self.occluded_cells,
        }
    }
}

/// Accumulates one sequence's predictions.
pub fn score_sequence(seq: &SequenceData, preds: &[Vec<u8>], opts: &EvalOptions) -> MetricsAccumulator {
    let mut acc = MetricsAccumulator::default();
    for (t, pred) in preds.iter().enumerate() {
        let mask = seq.recoverable_cells(t, opts.occlusion_window);
        acc.add_frame(pred, &seq.frames[t].gt_labels, &mask, opts);
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub version: u32,
    pub options: EvalOptions,
    pub metrics: Metrics,
    pub per_sequence: Vec<Metrics>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(s)?;
        if r.version != REPORT_VERSION {
            return Err(Error::Data(format!("unsupported report version {}", r.version)));
        }
        Ok(r)
    }
}

/// Streams every sequence from its first frame and scores argmax predictions.
pub fn evaluate(data: &[SequenceData], params: &ModelParams, opts: &EvalOptions) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let one = |seq: &SequenceData| -> Result<MetricsAccumulator> {
        let obs = &seq.frames;
        let logits = predict_sequence(obs, &seq.poses, params)?;
        let preds: Vec<Vec<u8>> = logits.iter().map(argmax_labels).collect();
        Ok(score_sequence(seq, &preds, opts))
    };
    let accs: Vec<MetricsAccumulator> = if opts.deterministic {
        data.iter().map(one).collect::<Result<_>>()?
    } else {
        data.par_iter().map(one).collect::<Result<_>>()?
    };
    let mut total = MetricsAccumulator::default();
    for a in &accs {
        total.merge(a);
    }
    Ok(EvalReport {
        version: REPORT_VERSION,
        options: *opts,
        metrics: total.finish(),
        per_sequence: accs.iter().map(|a| a.finish()).collect(),
    })
}
