//! Paired-seed ablation runs and the fixed desk-scale benchmark.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{gen_scenarios, MapParams, OcclusionParams, ScenarioParams, SequenceData};
use crate::grid::GridSpec;

use super::metrics::{evaluate, EvalOptions, Metrics};
use super::model::{ModelConfig, ModelParams};
use super::{train_stage1, train_stage2, TrainOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    NoTemporal,
    Twm(usize),
    HeatmapOff,
    Dilation(usize, usize),
}

impl Variant {
    pub const VALID: &'static [&'static str] =
        &["no_temporal", "twm1", "twm2", "twm4", "twm6", "twm8", "heatmap_off", "dil11", "dil22", "dil33"];

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        let mut c = *base;
        match *self {
            Variant::NoTemporal => c.temporal = false,
            Variant::Twm(n) => c.fusion.memory_capacity = n,
            Variant::HeatmapOff => c.heatmap_input = false,
            Variant::Dilation(a, b) => c.fusion.dilation = (a, b),
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::NoTemporal => write!(f, "no_temporal"),
            Variant::Twm(n) => write!(f, "twm{n}"),
            Variant::HeatmapOff => write!(f, "heatmap_off"),
            Variant::Dilation(a, b) => write!(f, "dil{a}{b}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s {
            "no_temporal" => Variant::NoTemporal,
            "heatmap_off" => Variant::HeatmapOff,
            "twm1" => Variant::Twm(1),
            "twm2" => Variant::Twm(2),
            "twm4" => Variant::Twm(4),
            "twm6" => Variant::Twm(6),
            "twm8" => Variant::Twm(8),
            "dil11" => Variant::Dilation(1, 1),
            "dil22" => Variant::Dilation(2, 2),
            "dil33" => Variant::Dilation(3, 3),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown variant {s:?}; valid variants: {}",
                    Variant::VALID.join(", ")
                )))
            }
        };
        Ok(v)
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantRow {
    pub variant: Variant,
    pub config: ModelConfig,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Metrics>,
    pub mean_iou: f64,
    pub mean_occluded_iou: Option<f64>,
    /// Metrics of parameters captured part-way through stage 2, keyed by the
    /// fraction of stage-2 steps completed (diagnostic variants only).
    pub stage2_snapshots: Vec<(f64, Vec<Metrics>)>,
    /// Metrics straight after stage 1 (diagnostic variants only).
    pub stage1_only: Option<Vec<Metrics>>,
}

/// `lhs >= rhs + min_gap` for the ordering checks; the convergence checks
/// (`min_gap` 0) require `lhs > rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionalCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub min_gap: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationReport {
    pub version: u32,
    /// Every variant was trained and evaluated with exactly these seeds.
    pub paired_seeds: Vec<u64>,
    pub plan: AblationPlan,
    pub train_options: TrainOptions,
    pub eval_options: EvalOptions,
    pub rows: Vec<VariantRow>,
    pub checks: Vec<DirectionalCheck>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Report plus the trained parameters of every (variant, seed).
pub struct AblationRun {
    pub report: AblationReport,
    pub params: BTreeMap<(Variant, u64), ModelParams>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn mean_occluded(ms: &[Metrics]) -> Option<f64> {
    ms.iter().map(|m| m.occluded_iou).collect::<Option<Vec<_>>>().map(|v| mean(v.into_iter()))
}

fn gap_check(report: &[VariantRow], name: &str, hi: Variant, lo: Variant, min_points: f64) -> Option<DirectionalCheck> {
    let find = |v| report.iter().find(|r| r.variant == v).and_then(|r| r.mean_occluded_iou);
    let (h, l) = (find(hi)?, find(lo)?);
    Some(DirectionalCheck {
        name: name.into(),
        lhs: 100.0 * h,
        rhs: 100.0 * l,
        min_gap: min_points,
        passed: 100.0 * h >= 100.0 * l + min_points,
    })
}

/// Occluded-region orderings, in IoU points.
fn directional_checks(rows: &[VariantRow], full: Variant) -> Vec<DirectionalCheck> {
    [
        gap_check(rows, "full >= no_temporal + 5", full, Variant::NoTemporal, 5.0),
        gap_check(rows, "twm1 >= no_temporal + 1", Variant::Twm(1), Variant::NoTemporal, 1.0),
        gap_check(rows, "twm4 >= twm1 + 1", Variant::Twm(4), Variant::Twm(1), 1.0),
        gap_check(rows, "heatmap_on >= heatmap_off + 1", full, Variant::HeatmapOff, 1.0),
    ]
    .into_iter()
    .flatten()
    .chain(convergence_checks(rows, full))
    .collect()
}

/// Full model half-way through stage 2 against the fully trained baseline,
/// per seed, in mean IoU points. Needs a 0.5 snapshot of the full model.
fn convergence_checks(rows: &[VariantRow], full: Variant) -> Vec<DirectionalCheck> {
    let find = |v| rows.iter().find(|r| r.variant == v);
    let (Some(f), Some(base)) = (find(full), find(Variant::NoTemporal)) else { return Vec::new() };
    let Some((_, half)) = f.stage2_snapshots.iter().find(|(frac, _)| *frac == 0.5) else { return Vec::new() };
    half.iter()
        .zip(&base.per_seed)
        .zip(&f.seeds)
        .map(|((h, b), seed)| DirectionalCheck {
            name: format!("{full} at half of stage 2 > no_temporal, seed {seed}"),
            lhs: 100.0 * h.mean_iou,
            rhs: 100.0 * b.mean_iou,
            min_gap: 0.0,
            passed: h.mean_iou > b.mean_iou,
        })
        .collect()
}

/// What to train and which extra evaluations to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPlan {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub schedule: Schedule,
    /// Stage-2 progress points at which diagnostic variants are evaluated.
    pub snapshot_fractions: Vec<f64>,
    /// Variants that also get stage-1-only and snapshot evaluations.
    pub diagnostics: Vec<Variant>,
}

/// Trains every variant on every seed with the same schedule and evaluates
/// it. Variants whose stage-1 computation is identical share one stage-1 run.
pub fn run_ablation(
    train: &[SequenceData],
    eval: &[SequenceData],
    base: &ModelConfig,
    plan: &AblationPlan,
    opts: &TrainOptions,
    eval_opts: &EvalOptions,
) -> Result<AblationRun> {
    let (seeds, schedule) = (&plan.seeds, &plan.schedule);
    if plan.variants.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one variant and one seed".into()));
    }
    // Stage 1 never sees a propagated heatmap, so heatmap on/off agree there.
    let stage1_key = |c: &ModelConfig| ModelConfig { heatmap_input: true, ..*c };
    let mut stage1_cache: Vec<(ModelConfig, u64, ModelParams)> = Vec::new();
    let mut params_out = BTreeMap::new();
    let mut rows = Vec::new();
    for &variant in &plan.variants {
        let diagnose = plan.diagnostics.contains(&variant);
        let fractions: &[f64] = if diagnose { &plan.snapshot_fractions } else { &[] };
        let config = variant.apply(base);
        let mut per_seed = Vec::new();
        let mut snaps: Vec<(f64, Vec<Metrics>)> = fractions.iter().map(|&f| (f, Vec::new())).collect();
        let mut stage1_metrics = diagnose.then(Vec::new);
        for &seed in seeds {
            let o = TrainOptions { seed, ..*opts };
            let key = stage1_key(&config);
            let warm = match stage1_cache.iter().find(|(c, s, _)| *c == key && *s == seed) {
                Some((_, _, p)) => p.clone(),
                None => {
                    let init = ModelParams::init(&key, seed)?;
                    let p = train_stage1(train, init, schedule.stage1_epochs, &o, &[])?.params;
                    stage1_cache.push((key, seed, p.clone()));
                    p
                }
            };
            let warm = ModelParams { config, ..warm };
            if let Some(m) = stage1_metrics.as_mut() {
                m.push(evaluate(eval, &warm, eval_opts)?.metrics);
            }
            let outcome = train_stage2(train, warm, schedule.stage2_epochs, &o, fractions)?;
            for (slot, snap) in snaps.iter_mut().zip(&outcome.snapshots) {
                slot.1.push(evaluate(eval, &snap.params, eval_opts)?.metrics);
            }
            per_seed.push(evaluate(eval, &outcome.params, eval_opts)?.metrics);
            params_out.insert((variant, seed), outcome.params);
        }
        rows.push(VariantRow {
            variant,
            config,
            seeds: seeds.to_vec(),
            mean_iou: mean(per_seed.iter().map(|m| m.mean_iou)),
            mean_occluded_iou: mean_occluded(&per_seed),
            per_seed,
            stage2_snapshots: snaps,
            stage1_only: stage1_metrics,
        });
    }
    let full = Variant::Twm(base.fusion.memory_capacity);
    let checks = directional_checks(&rows, full);
    Ok(AblationRun {
        report: AblationReport {
            version: super::REPORT_VERSION,
            paired_seeds: seeds.to_vec(),
            plan: plan.clone(),
            train_options: *opts,
            eval_options: *eval_opts,
            rows,
            checks,
        },
        params: params_out,
    })
}

/// The fixed desk-scale benchmark: 200 training and 50 evaluation scenarios
/// on a 32x64 grid with C = 64, trained and scored on seeds 0, 1 and 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Benchmark {
    pub scenario: ScenarioParams,
    pub noise_sigma: f64,
    pub train_scenarios: usize,
    pub eval_scenarios: usize,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub train: TrainOptions,
    pub eval: EvalOptions,
    pub seeds: Vec<u64>,
}

impl Default for Benchmark {
    fn default() -> Self {
        Benchmark {
            scenario: ScenarioParams {
                grid: GridSpec::benchmark(),
                frames: 10,
                trajectory_mix: (1.0, 1.0, 1.0),
                map: MapParams::default(),
                occlusion: OcclusionParams::default(),
            },
            noise_sigma: 0.3,
            train_scenarios: 200,
            eval_scenarios: 50,
            train_seed: 2024,
            eval_seed: 7_000_001,
            model: ModelConfig::benchmark(),
            schedule: Schedule { stage1_epochs: 1, stage2_epochs: 1 },
            train: TrainOptions::default(),
            eval: EvalOptions::default(),
            seeds: vec![0, 1, 2],
        }
    }
}

impl Benchmark {
    /// The four variants the directional checks compare, with the full model
    /// and the baseline as diagnostics.
    pub fn plan(&self) -> AblationPlan {
        let full = Variant::Twm(self.model.fusion.memory_capacity);
        AblationPlan {
            variants: vec![Variant::NoTemporal, Variant::Twm(1), full, Variant::HeatmapOff],
            seeds: self.seeds.clone(),
            schedule: self.schedule,
            snapshot_fractions: vec![0.5],
            diagnostics: vec![full],
        }
    }

    fn render(&self, seed: u64, count: usize) -> Result<Vec<SequenceData>> {
        gen_scenarios(seed, count, &self.scenario)?.iter().map(|s| s.render(self.noise_sigma)).collect()
    }

    pub fn train_set(&self) -> Result<Vec<SequenceData>> {
        self.render(self.train_seed, self.train_scenarios)
    }

    pub fn eval_set(&self) -> Result<Vec<SequenceData>> {
        self.render(self.eval_seed, self.eval_scenarios)
    }
}
