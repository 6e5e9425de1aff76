//! Working-memory fusion block: a small conv stack lifts the overlap heatmap
//! into bounded features, and a dilated conv stack fuses memory, heatmap
//! features and the current BEV map into one unified map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::heatmap::OverlapHeatmap;
use crate::real::Real;
use crate::tensorops::{FeatureMap, Gradients, ParamTensor, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Hidden width of the heatmap conv stack.
const HEATMAP_HIDDEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// BEV feature channels `C`.
    pub channels: usize,
    /// Working memory capacity `T_WM`.
    pub memory_capacity: usize,
    /// Heatmap feature channels `C_H`.
    pub heatmap_channels: usize,
    pub dilation: (usize, usize),
    /// Output nonlinearity of the heatmap branch.
    pub heatmap_activation: Activation,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            channels: 256,
            memory_capacity: 4,
            heatmap_channels: 32,
            dilation: (2, 2),
            heatmap_activation: Activation::Sigmoid,
        }
    }
}

impl FusionConfig {
    /// Input channels of the first fusion conv: `T_WM * C + C_H + C`.
    pub fn fusion_in_channels(&self) -> usize {
        self.memory_capacity * self.channels + self.heatmap_channels + self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.memory_capacity == 0 || self.heatmap_channels == 0 {
            return Err(Error::Config("fusion channel counts must be at least 1".into()));
        }
        if self.dilation.0 == 0 || self.dilation.1 == 0 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        if self.heatmap_activation == Activation::None {
            return Err(Error::Config("heatmap activation must be sigmoid or relu".into()));
        }
        Ok(())
    }
}

/// One conv layer with its trailing activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T = f32> {
    pub weight: ParamTensor<T>,
    pub bias: ParamTensor<T>,
    pub dilation: (usize, usize),
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundConv {
    pub weight: Var,
    pub bias: Var,
    pub dilation: (usize, usize),
    pub activation: Activation,
}

impl<T: Real> ConvLayer<T> {
    /// Fan-in scaled uniform weights in `±sqrt(1 / fan_in)`, zero bias.
    pub fn init(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        dilation: (usize, usize),
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let bound = (1.0 / fan_in as f64).sqrt();
        let values = (0..out_ch * fan_in).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
        ConvLayer {
            weight: ParamTensor::new(vec![out_ch, in_ch, k, k], values).expect("consistent shape"),
            bias: ParamTensor::filled(vec![out_ch], T::zero()),
            dilation,
            activation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundConv {
        BoundConv {
            weight: tape.param(&self.weight),
            bias: tape.param(&self.bias),
            dilation: self.dilation,
            activation: self.activation,
        }
    }

    pub fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            dilation: self.dilation,
            activation: self.activation,
        }
    }
}

impl BoundConv {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, self.weight, self.bias, self.dilation)?;
        Ok(match self.activation {
            Activation::None => y,
            Activation::Relu => tape.relu(y),
            Activation::Sigmoid => tape.sigmoid(y),
        })
    }
}

/// Runs a conv stack on the tape.
pub fn run_stack<T: Real>(tape: &mut Tape<T>, layers: &[BoundConv], mut x: Var) -> Result<Var> {
    for l in layers {
        x = l.forward(tape, x)?;
    }
    Ok(x)
}

/// Trainable weights of the heatmap branch, the fusion stack and the
/// closing layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T = f32> {
    pub config: FusionConfig,
    pub conv_h: Vec<ConvLayer<T>>,
    pub conv_mem: Vec<ConvLayer<T>>,
    pub ln_gain: ParamTensor<T>,
    pub ln_bias: ParamTensor<T>,
}

/// [`FusionParams`] bound to a tape.
#[derive(Clone, Debug)]
pub struct BoundFusion {
    pub conv_h: Vec<BoundConv>,
    pub conv_mem: Vec<BoundConv>,
    pub ln_gain: Var,
    pub ln_bias: Var,
}

impl BoundFusion {
    /// Bound handles in [`FusionParams::params_mut`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for l in self.conv_h.iter().chain(&self.conv_mem) {
            v.push(l.weight);
            v.push(l.bias);
        }
        v.push(self.ln_gain);
        v.push(self.ln_bias);
        v
    }
}

/// Deterministic initialization from a seed.
pub fn init_params(seed: u64, config: &FusionConfig) -> Result<FusionParams<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FusionParams::init(config, &mut rng)
}

impl<T: Real> FusionParams<T> {
    pub fn init(config: &FusionConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let d = config.dilation;
        let conv_h = vec![
            ConvLayer::init(1, HEATMAP_HIDDEN, 3, (1, 1), Activation::Relu, rng),
            ConvLayer::init(HEATMAP_HIDDEN, HEATMAP_HIDDEN, 3, (1, 1), Activation::Relu, rng),
            ConvLayer::init(HEATMAP_HIDDEN, config.heatmap_channels, 1, (1, 1), Activation::None, rng),
        ];
        let conv_mem = vec![
            ConvLayer::init(config.fusion_in_channels(), c, 3, d, Activation::Relu, rng),
            ConvLayer::init(c, c, 3, d, Activation::Relu, rng),
            ConvLayer::init(c, c, 3, d, Activation::Relu, rng),
        ];
        Ok(FusionParams {
            config: *config,
            conv_h,
            conv_mem,
            ln_gain: ParamTensor::filled(vec![c], T::one()),
            ln_bias: ParamTensor::filled(vec![c], T::zero()),
        })
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundFusion {
        BoundFusion {
            conv_h: self.conv_h.iter().map(|l| l.bind(tape)).collect(),
            conv_mem: self.conv_mem.iter().map(|l| l.bind(tape)).collect(),
            ln_gain: tape.param(&self.ln_gain),
            ln_bias: tape.param(&self.ln_bias),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &ParamTensor<T>)> {
        let mut out = Vec::new();
        for (group, layers) in [("conv_h", &self.conv_h), ("conv_mem", &self.conv_mem)] {
            for (i, l) in layers.iter().enumerate() {
                out.push((format!("fusion.{group}.{i}.weight"), &l.weight));
                out.push((format!("fusion.{group}.{i}.bias"), &l.bias));
            }
        }
        out.push(("fusion.ln.gain".into(), &self.ln_gain));
        out.push(("fusion.ln.bias".into(), &self.ln_bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut out = Vec::new();
        for l in self.conv_h.iter_mut().chain(self.conv_mem.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.ln_gain);
        out.push(&mut self.ln_bias);
        out
    }

    pub fn accumulate(&mut self, grads: &Gradients<T>, bound: &BoundFusion) {
        for (p, v) in self.params_mut().into_iter().zip(bound.vars()) {
            p.accumulate(grads, v);
        }
    }

    pub fn cast<U: Real>(&self) -> FusionParams<U> {
        FusionParams {
            config: self.config,
            conv_h: self.conv_h.iter().map(|l| l.cast()).collect(),
            conv_mem: self.conv_mem.iter().map(|l| l.cast()).collect(),
            ln_gain: self.ln_gain.cast(),
            ln_bias: self.ln_bias.cast(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named_params().iter().all(|(_, p)| p.values.iter().all(|v| v.is_finite()))
    }
}

/// Heatmap branch on the tape. The heatmap is an input signal, not a learned
/// tensor, so it enters as a constant.
pub fn heatmap_features_on<T: Real>(
    tape: &mut Tape<T>,
    heatmap: &FeatureMap<T>,
    bound: &BoundFusion,
    config: &FusionConfig,
) -> Result<Var> {
    if heatmap.channels != 1 {
        return Err(shape_err!("heatmap must have one channel, found {}", heatmap.channels));
    }
    let h = tape.constant(heatmap);
    let y = run_stack(tape, &bound.conv_h, h)?;
    Ok(match config.heatmap_activation {
        Activation::Sigmoid => tape.sigmoid(y),
        Activation::Relu => tape.relu(y),
        Activation::None => y,
    })
}

/// `LayerNorm(ConvMem(Concat(memory, heatmap_features, current)))` on the tape.
pub fn fuse_on<T: Real>(
    tape: &mut Tape<T>,
    memory: Var,
    heat_feat: Var,
    current: Var,
    bound: &BoundFusion,
    config: &FusionConfig,
) -> Result<Var> {
    let expect = [
        ("memory", memory, config.memory_capacity * config.channels),
        ("heatmap feature", heat_feat, config.heatmap_channels),
        ("BEV feature", current, config.channels),
    ];
    for (what, v, ch) in expect {
        let shape = tape.shape(v);
        if shape.len() != 3 || shape[0] != ch {
            return Err(shape_err!("{} has shape {:?}, expected {} channels", what, shape, ch));
        }
    }
    let x = tape.concat(&[memory, heat_feat, current])?;
    let y = run_stack(tape, &bound.conv_mem, x)?;
    tape.layer_norm(y, bound.ln_gain, bound.ln_bias, T::lit(LAYER_NORM_EPS))
}

/// Heatmap features: `C_H x H x W`, every value inside `(0, 1)` for the
/// sigmoid branch.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapFeature(pub FeatureMap<f32>);

impl HeatmapFeature {
    pub fn map(&self) -> &FeatureMap<f32> {
        &self.0
    }
}

pub fn heatmap_features(h: &OverlapHeatmap, params: &FusionParams<f32>) -> Result<HeatmapFeature> {
    let mut tape = Tape::inference();
    let bound = params.bind(&mut tape);
    let v = heatmap_features_on(&mut tape, h.map(), &bound, &params.config)?;
    Ok(HeatmapFeature(tape.feature_map(v)?))
}

pub fn fuse(
    wm_stacked: &FeatureMap<f32>,
    h_feat: &HeatmapFeature,
    f_bev: &FeatureMap<f32>,
    params: &FusionParams<f32>,
) -> Result<FeatureMap<f32>> {
    let mut tape = Tape::inference();
    let bound = params.bind(&mut tape);
    let m = tape.constant(wm_stacked);
    let h = tape.constant(&h_feat.0);
    let f = tape.constant(f_bev);
    let v = fuse_on(&mut tape, m, h, f, &bound, &params.config)?;
    tape.feature_map(v)
}
