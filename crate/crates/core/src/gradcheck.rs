//! Central finite-difference verification of every differentiable op and of
//! a reduced end-to-end fusion block, in 32- and 64-bit precision.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fusion::{fuse_on, heatmap_features_on, BoundConv, BoundFusion, ConvLayer, FusionConfig, FusionParams};
use crate::grid::{relative_transform, GridSpec, Pose2};
use crate::heatmap::OverlapHeatmap;
use crate::real::Real;
use crate::tensorops::{FeatureMap, FocalSpec, ParamTensor, Tape, Var, WarpPlan};

/// Pass thresholds on the relative error.
pub const TOL_F32: f64 = 1e-3;
pub const TOL_F64: f64 = 1e-6;

/// Finite-difference steps (powers of two).
const STEP_F32: f64 = 1.0 / 128.0;
const STEP_F64: f64 = 1.0 / 4096.0;

/// Entries probed per input tensor at most.
const MAX_PROBES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCheck {
    pub op: String,
    pub precision: Precision,
    /// `max |analytic - numeric| / max |numeric|` over the probed entries.
    pub max_rel_error: f64,
    pub threshold: f64,
    pub probed: usize,
    /// Probes skipped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub checks: Vec<OpCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &OpCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type Build<T> = Box<dyn Fn(&mut Tape<T>, &[Var]) -> Result<Var>>;

struct Case<T: Real> {
    name: String,
    inputs: Vec<ParamTensor<T>>,
    build: Build<T>,
}

fn tensor<T: Real>(shape: Vec<usize>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ParamTensor<T> {
    let n = shape.iter().product();
    let values = (0..n).map(|_| T::lit(rng.gen_range(lo..hi))).collect();
    ParamTensor::new(shape, values).expect("consistent shape")
}

/// Uniform magnitudes in `[0.1, 1)` with random signs: ReLU inputs stay off the kink.
fn off_kink<T: Real>(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> ParamTensor<T> {
    let mut t = tensor::<T>(shape, rng, 0.1, 1.0);
    t.values.iter_mut().for_each(|v| {
        if rng.gen_bool(0.5) {
            *v = -*v
        }
    });
    t
}

fn op_cases<T: Real>(rng: &mut ChaCha8Rng) -> Vec<Case<T>> {
    let mut cases: Vec<Case<T>> = Vec::new();
    let spec = GridSpec::new(6, 9, 1.0).expect("valid grid");
    let rel = relative_transform(&Pose2::IDENTITY, &Pose2::new(0.8, -0.45, 0.3));
    let plan = Arc::new(WarpPlan::<T>::new(&spec, &rel));
    cases.push(Case {
        name: "warp".into(),
        inputs: vec![tensor(vec![2, 6, 9], rng, -1.0, 1.0)],
        build: Box::new(move |t, v| t.warp(v[0], &plan)),
    });
    for (k, dil) in [(3, (1, 1)), (3, (2, 2)), (3, (2, 3)), (1, (1, 1))] {
        cases.push(Case {
            name: format!("conv2d k{k} d{}x{}", dil.0, dil.1),
            inputs: vec![
                tensor(vec![3, 7, 8], rng, -1.0, 1.0),
                tensor(vec![4, 3, k, k], rng, -0.5, 0.5),
                tensor(vec![4], rng, -0.5, 0.5),
            ],
            build: Box::new(move |t, v| t.conv2d(v[0], v[1], v[2], dil)),
        });
    }
    cases.push(Case {
        name: "relu".into(),
        inputs: vec![off_kink(vec![2, 4, 5], rng)],
        build: Box::new(|t, v| Ok(t.relu(v[0]))),
    });
    cases.push(Case {
        name: "sigmoid".into(),
        inputs: vec![tensor(vec![2, 4, 5], rng, -4.0, 4.0)],
        build: Box::new(|t, v| Ok(t.sigmoid(v[0]))),
    });
    cases.push(Case {
        name: "layer_norm".into(),
        inputs: vec![
            tensor(vec![5, 3, 4], rng, -2.0, 2.0),
            tensor(vec![5], rng, 0.5, 1.5),
            tensor(vec![5], rng, -0.5, 0.5),
        ],
        build: Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], T::lit(1e-5))),
    });
    cases.push(Case {
        name: "concat".into(),
        inputs: vec![tensor(vec![2, 3, 4], rng, -1.0, 1.0), tensor(vec![3, 3, 4], rng, -1.0, 1.0)],
        build: Box::new(|t, v| t.concat(&[v[0], v[1]])),
    });
    cases.push(Case {
        name: "add".into(),
        inputs: vec![tensor(vec![2, 3, 4], rng, -1.0, 1.0), tensor(vec![2, 3, 4], rng, -1.0, 1.0)],
        build: Box::new(|t, v| t.add(v[0], v[1])),
    });
    cases.push(Case {
        name: "mul".into(),
        inputs: vec![tensor(vec![2, 3, 4], rng, -1.0, 1.0), tensor(vec![2, 3, 4], rng, -1.0, 1.0)],
        build: Box::new(|t, v| t.mul(v[0], v[1])),
    });
    cases.push(Case {
        name: "scale".into(),
        inputs: vec![tensor(vec![2, 3, 4], rng, -1.0, 1.0)],
        build: Box::new(|t, v| Ok(t.scale(v[0], T::lit(-1.7)))),
    });
    cases.push(Case {
        name: "sum".into(),
        inputs: vec![tensor(vec![2, 3, 4], rng, -1.0, 1.0)],
        build: Box::new(|t, v| Ok(t.sum(v[0]))),
    });
    let coeffs: Vec<T> = (0..24).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
    cases.push(Case {
        name: "dot".into(),
        inputs: vec![tensor(vec![2, 3, 4], rng, -1.0, 1.0)],
        build: Box::new(move |t, v| t.dot(v[0], coeffs.clone())),
    });
    let labels: Arc<[u8]> = (0..15).map(|_| rng.gen_range(0..4u8)).collect();
    cases.push(Case {
        name: "focal_loss".into(),
        inputs: vec![tensor(vec![4, 3, 5], rng, -2.0, 2.0)],
        build: Box::new(move |t, v| {
            let spec = FocalSpec { gamma: T::lit(2.0), alpha: T::lit(0.25), weight: T::lit(5.0) };
            t.focal_loss(v[0], labels.clone(), spec)
        }),
    });
    cases
}

/// Heatmap branch plus fusion stack on a small grid, differentiated with
/// respect to every fusion parameter and both feature inputs.
fn fusion_case<T: Real>(rng: &mut ChaCha8Rng) -> Result<Case<T>> {
    let config = FusionConfig { channels: 8, memory_capacity: 2, heatmap_channels: 4, ..FusionConfig::default() };
    let spec = GridSpec::new(6, 10, 1.0)?;
    let params: FusionParams<T> = FusionParams::init(&config, rng)?;
    let poses = [Pose2::IDENTITY, Pose2::new(1.3, 0.2, 0.15), Pose2::new(2.4, 0.6, 0.3)];
    let heat: FeatureMap<T> = OverlapHeatmap::along(&spec, &poses)?.map().cast();
    let mut inputs: Vec<ParamTensor<T>> = params.named_params().into_iter().map(|(_, p)| p.clone()).collect();
    let n_params = inputs.len();
    inputs.push(tensor(vec![16, 6, 10], rng, -1.0, 1.0));
    inputs.push(tensor(vec![8, 6, 10], rng, -1.0, 1.0));
    let template = params.clone();
    Ok(Case {
        name: "fusion end-to-end".into(),
        inputs,
        build: Box::new(move |t, v| {
            let mut handles = v[..n_params].iter().copied();
            let mut rebind = |layers: &[ConvLayer<T>]| -> Vec<BoundConv> {
                layers
                    .iter()
                    .map(|l| BoundConv {
                        weight: handles.next().expect("weight handle"),
                        bias: handles.next().expect("bias handle"),
                        dilation: l.dilation,
                        activation: l.activation,
                    })
                    .collect()
            };
            let conv_h = rebind(&template.conv_h);
            let conv_mem = rebind(&template.conv_mem);
            let bound = BoundFusion {
                conv_h,
                conv_mem,
                ln_gain: handles.next().expect("gain handle"),
                ln_bias: handles.next().expect("bias handle"),
            };
            let h = heatmap_features_on(t, &heat, &bound, &config)?;
            fuse_on(t, v[n_params], h, v[n_params + 1], &bound, &config)
        }),
    })
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()
}

struct Eval {
    loss: f64,
    pattern: Vec<bool>,
}

fn evaluate<T: Real>(case: &Case<T>, inputs: &[ParamTensor<T>], coeffs: &[f64]) -> Result<Eval> {
    let mut tape = Tape::<T>::inference();
    let vars: Vec<Var> = inputs.iter().map(|p| tape.param(p)).collect();
    let out = (case.build)(&mut tape, &vars)?;
    let loss = to_f64(tape.value(out)).iter().zip(coeffs).map(|(a, b)| a * b).sum();
    Ok(Eval { loss, pattern: tape.relu_pattern() })
}

fn check_case<T: Real>(
    case: &Case<T>,
    precision: Precision,
    step: f64,
    threshold: f64,
    fault: Option<&str>,
    rng: &mut ChaCha8Rng,
) -> Result<OpCheck> {
    let mut tape = Tape::<T>::new();
    if let Some(op) = fault {
        tape.inject_adjoint_fault(op);
    }
    let vars: Vec<Var> = case.inputs.iter().map(|p| tape.param(p)).collect();
    let out = (case.build)(&mut tape, &vars)?;
    let n_out = tape.value(out).len();
    let coeffs: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = tape.dot(out, coeffs.iter().map(|&c| T::lit(c)).collect())?;
    let grads = tape.backward(loss)?;
    let mut max_diff = 0.0f64;
    let mut max_num = 0.0f64;
    let (mut probed, mut skipped) = (0, 0);
    for (k, var) in vars.iter().enumerate() {
        let len = case.inputs[k].len();
        let analytic = grads.get(*var).map(to_f64).unwrap_or_else(|| vec![0.0; len]);
        let picks: Vec<usize> = if len <= MAX_PROBES { (0..len).collect() } else { sample(rng, len, MAX_PROBES).into_vec() };
        for idx in picks {
            // Fourth-order central stencil; `step` is a power of two so the
            // perturbed values are exact in either precision.
            let x = case.inputs[k].values[idx].to_f64().unwrap_or(0.0);
            let mut evals = Vec::with_capacity(4);
            for d in [step, -step, 2.0 * step, -2.0 * step] {
                let mut shifted = case.inputs.clone();
                shifted[k].values[idx] = T::lit(x + d);
                evals.push(evaluate(case, &shifted, &coeffs)?);
            }
            if evals.iter().any(|e| e.pattern != evals[0].pattern) {
                skipped += 1;
                continue;
            }
            let numeric =
                (8.0 * (evals[0].loss - evals[1].loss) - (evals[2].loss - evals[3].loss)) / (12.0 * step);
            max_diff = max_diff.max((analytic[idx] - numeric).abs());
            max_num = max_num.max(numeric.abs());
            probed += 1;
        }
    }
    let rel = if max_num > 0.0 { max_diff / max_num } else { max_diff };
    Ok(OpCheck {
        op: case.name.clone(),
        precision,
        max_rel_error: rel,
        threshold,
        probed,
        skipped,
        passed: rel < threshold && probed > 0,
    })
}

fn run_precision<T: Real>(
    precision: Precision,
    step: f64,
    threshold: f64,
    seed: u64,
    fault: Option<&str>,
) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = op_cases::<T>(&mut rng);
    cases.push(fusion_case::<T>(&mut rng)?);
    cases.iter().map(|c| check_case(c, precision, step, threshold, fault, &mut rng)).collect()
}

/// Runs the whole suite. `fault` names an op whose adjoint is deliberately
/// corrupted (negative control).
pub fn run_gradcheck(seed: u64, fault: Option<&str>) -> Result<GradcheckReport> {
    let mut checks = run_precision::<f32>(Precision::F32, STEP_F32, TOL_F32, seed, fault)?;
    checks.extend(run_precision::<f64>(Precision::F64, STEP_F64, TOL_F64, seed, fault)?);
    Ok(GradcheckReport { seed, checks })
}
