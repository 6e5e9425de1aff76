//! Reverse-mode differentiation over a linear record of executed ops.

use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;

use super::kernels::{self, ConvGeom, WarpPlan};
use super::{FeatureMap, ParamTensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Multi-class focal loss settings; the result is `weight * mean(cell loss)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalSpec<T = f32> {
    pub gamma: T,
    pub alpha: T,
    pub weight: T,
}

enum Op<T> {
    Leaf,
    Warp { x: Var, plan: Arc<WarpPlan<T>> },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom, xpad: Vec<T> },
    Relu(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Concat(Vec<Var>),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Dot(Var, Vec<T>),
    Focal { logits: Var, probs: Vec<T>, labels: Arc<[u8]>, spec: FocalSpec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Warp { .. } => "warp",
            Op::Conv { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Concat(_) => "concat",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
            Op::Focal { .. } => "focal_loss",
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    tracked: bool,
}

/// Ordered record of primitive ops and the values they produced.
///
/// A tape is single-owner: build it, call [`Tape::backward`] once per loss,
/// then drop it.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    fault: Option<String>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` means no gradient reached `var`.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn add_into<T: Real>(grads: &mut [Option<Vec<T>>], var: Var, len: usize) -> &mut [T] {
    grads[var.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: true, fault: None }
    }

    /// A tape on which parameters are bound as constants; no gradient state is kept.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), grad_enabled: false, fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: corrupts the adjoint of every op with this name.
    #[doc(hidden)]
    pub fn inject_adjoint_fault(&mut self, op: &str) {
        self.fault = Some(op.to_string());
    }

    /// Sign pattern of every ReLU input recorded so far. Finite-difference
    /// checks skip perturbations that change it.
    #[doc(hidden)]
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).iter().map(|v| *v > T::zero()))
            .collect()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, tracked: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite output from {}", op.name());
        self.nodes.push(Node { shape, value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.tracked(v)
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        match self.value(v) {
            [s] => Ok(*s),
            other => Err(shape_err!("expected a scalar, found {} values", other.len())),
        }
    }

    pub fn feature_map(&self, v: Var) -> Result<FeatureMap<T>> {
        match *self.shape(v) {
            [c, h, w] => FeatureMap::new(c, h, w, self.value(v).to_vec()),
            ref s => Err(shape_err!("expected a C x H x W value, found shape {:?}", s)),
        }
    }

    fn map_dims(&self, v: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(v) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(shape_err!("expected a C x H x W value, found shape {:?}", s)),
        }
    }

    /// Records a detached input.
    pub fn constant(&mut self, f: &FeatureMap<T>) -> Var {
        self.push(vec![f.channels, f.height, f.width], f.values.clone(), Op::Leaf, false)
    }

    pub fn constant_raw(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(shape_err!("{} values for shape {:?}", values.len(), shape));
        }
        Ok(self.push(shape, values, Op::Leaf, false))
    }

    /// Records a differentiable leaf (an input the caller wants gradients for).
    pub fn leaf(&mut self, f: &FeatureMap<T>) -> Var {
        let tracked = self.grad_enabled;
        self.push(vec![f.channels, f.height, f.width], f.values.clone(), Op::Leaf, tracked)
    }

    /// Binds a parameter tensor; tracked iff it requires gradients.
    pub fn param(&mut self, p: &ParamTensor<T>) -> Var {
        let tracked = self.grad_enabled && p.requires_grad;
        self.push(p.shape.clone(), p.values.clone(), Op::Leaf, tracked)
    }

    pub fn warp(&mut self, x: Var, plan: &Arc<WarpPlan<T>>) -> Result<Var> {
        let (c, h, w) = self.map_dims(x)?;
        if h * w != plan.plane() {
            return Err(shape_err!("warp plan covers {} cells, map has {}", plan.plane(), h * w));
        }
        let mut out = vec![T::zero(); c * h * w];
        plan.forward(self.value(x), &mut out);
        let tracked = self.tracked(x);
        Ok(self.push(vec![c, h, w], out, Op::Warp { x, plan: plan.clone() }, tracked))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, dilation: (usize, usize)) -> Result<Var> {
        let (in_ch, h, wd) = self.map_dims(x)?;
        let (out_ch, w_in, k) = match *self.shape(w) {
            [o, i, k1, k2] if k1 == k2 => (o, i, k1),
            ref s => return Err(shape_err!("conv weight must be out x in x k x k, found {:?}", s)),
        };
        if w_in != in_ch {
            return Err(shape_err!("conv weight expects {} input channels, map has {}", w_in, in_ch));
        }
        if k % 2 == 0 {
            return Err(shape_err!("conv kernel size must be odd, found {}", k));
        }
        if self.shape(b) != [out_ch] {
            return Err(shape_err!("conv bias shape {:?}, expected [{}]", self.shape(b), out_ch));
        }
        if dilation.0 == 0 || dilation.1 == 0 {
            return Err(shape_err!("dilation must be positive"));
        }
        let geom = ConvGeom { in_ch, out_ch, k, h, w: wd, dil: dilation };
        let (y, xpad) = kernels::conv_forward(&geom, self.value(x), self.value(w), self.value(b));
        let tracked = self.tracked(x) || self.tracked(w) || self.tracked(b);
        let xpad = if tracked && self.tracked(w) { xpad } else { Vec::new() };
        Ok(self.push(vec![out_ch, h, wd], y, Op::Conv { x, w, b, geom, xpad }, tracked))
    }

    /// Channel ranges of `x` through which a gradient can flow. A concat of
    /// constants and tracked parts only needs the tracked ranges.
    fn tracked_channels(&self, x: Var) -> Vec<std::ops::Range<usize>> {
        if !self.tracked(x) {
            return Vec::new();
        }
        match &self.nodes[x.0].op {
            Op::Concat(parts) => {
                let mut start = 0;
                let mut out = Vec::new();
                for &p in parts {
                    let c = self.shape(p)[0];
                    if self.tracked(p) {
                        out.push(start..start + c);
                    }
                    start += c;
                }
                out
            }
            _ => vec![0..self.shape(x)[0]],
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| kernels::relu(v)).collect();
        let (shape, tracked) = (self.shape(x).to_vec(), self.tracked(x));
        self.push(shape, out, Op::Relu(x), tracked)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        let (shape, tracked) = (self.shape(x).to_vec(), self.tracked(x));
        self.push(shape, out, Op::Sigmoid(x), tracked)
    }

    /// Normalizes over channels at every spatial location, then applies a
    /// per-channel affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (c, h, w) = self.map_dims(x)?;
        if self.shape(gain) != [c] || self.shape(bias) != [c] {
            return Err(shape_err!("layer norm affine must have {} entries", c));
        }
        let (y, xhat, rstd) =
            kernels::layer_norm_forward(self.value(x), c, h * w, self.value(gain), self.value(bias), eps);
        let tracked = self.tracked(x) || self.tracked(gain) || self.tracked(bias);
        let (xhat, rstd) = if tracked { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        Ok(self.push(vec![c, h, w], y, Op::LayerNorm { x, gain, bias, xhat, rstd }, tracked))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err!("concat of zero parts"))?;
        let (_, h, w) = self.map_dims(first)?;
        let mut channels = 0;
        let mut values = Vec::new();
        for &p in parts {
            let (c, ph, pw) = self.map_dims(p)?;
            if (ph, pw) != (h, w) {
                return Err(shape_err!("concat of {}x{} and {}x{} maps", h, w, ph, pw));
            }
            channels += c;
            values.extend_from_slice(self.value(p));
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(vec![channels, h, w], values, Op::Concat(parts.to_vec()), tracked))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!("shape {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * s).collect();
        let (shape, tracked) = (self.shape(x).to_vec(), self.tracked(x));
        self.push(shape, out, Op::Scale(x, s), tracked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).iter().copied().sum();
        let tracked = self.tracked(x);
        self.push(vec![1], vec![s], Op::Sum(x), tracked)
    }

    /// `sum(x * coeffs)` with fixed coefficients.
    pub fn dot(&mut self, x: Var, coeffs: Vec<T>) -> Result<Var> {
        if coeffs.len() != self.value(x).len() {
            return Err(shape_err!("{} coefficients for {} values", coeffs.len(), self.value(x).len()));
        }
        let s: T = self.value(x).iter().zip(&coeffs).map(|(&a, &b)| a * b).sum();
        let tracked = self.tracked(x);
        Ok(self.push(vec![1], vec![s], Op::Dot(x, coeffs), tracked))
    }

    /// Focal loss of `K x H x W` logits against per-cell class labels.
    pub fn focal_loss(&mut self, logits: Var, labels: Arc<[u8]>, spec: FocalSpec<T>) -> Result<Var> {
        let (k, h, w) = self.map_dims(logits)?;
        let cells = h * w;
        if labels.len() != cells {
            return Err(shape_err!("{} labels for {} cells", labels.len(), cells));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(shape_err!("label {} out of range for {} classes", bad, k));
        }
        let z = self.value(logits);
        let mut probs = vec![T::zero(); k * cells];
        // Summed in f64: the mean over many cells otherwise loses low bits in f32.
        let mut total = 0.0f64;
        for p in 0..cells {
            let mut zmax = T::neg_infinity();
            for c in 0..k {
                zmax = zmax.max(z[c * cells + p]);
            }
            let mut denom = T::zero();
            for c in 0..k {
                let e = (z[c * cells + p] - zmax).exp();
                probs[c * cells + p] = e;
                denom = denom + e;
            }
            for c in 0..k {
                probs[c * cells + p] = probs[c * cells + p] / denom;
            }
            let t = labels[p] as usize;
            let log_pt = z[t * cells + p] - zmax - denom.ln();
            let pt = probs[t * cells + p];
            total += (spec.alpha * (T::one() - pt).powf(spec.gamma) * (-log_pt)).to_f64().unwrap_or(f64::NAN);
        }
        let loss = spec.weight * T::lit(total / cells as f64);
        let tracked = self.tracked(logits);
        let probs = if tracked { probs } else { Vec::new() };
        Ok(self.push(vec![1], vec![loss], Op::Focal { logits, probs, labels, spec }, tracked))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, found shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(mut g) = grads[idx].take() else { continue };
            if self.fault.as_deref() == Some(node.op.name()) {
                g.iter_mut().for_each(|v| *v = *v * T::lit(1.5));
            }
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Warp { x, plan } => {
                if self.tracked(*x) {
                    plan.backward(g, add_into(grads, *x, g.len()));
                }
            }
            Op::Conv { x, w, b, geom, xpad } => {
                let (wt, bt) = (self.tracked(*w), self.tracked(*b));
                let dx_channels = self.tracked_channels(*x);
                let wlen = self.value(*w).len();
                let mut dw = if wt { grads[w.0].take().or_else(|| Some(vec![T::zero(); wlen])) } else { None };
                let mut db = if bt { grads[b.0].take().or_else(|| Some(vec![T::zero(); geom.out_ch])) } else { None };
                let dx = kernels::conv_backward(
                    geom,
                    self.value(*x),
                    xpad,
                    self.value(*w),
                    g,
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                    &dx_channels,
                );
                if wt {
                    grads[w.0] = dw;
                }
                if bt {
                    grads[b.0] = db;
                }
                if let Some(dx) = dx {
                    accumulate(add_into(grads, *x, dx.len()), &dx);
                }
            }
            Op::Relu(x) => {
                if self.tracked(*x) {
                    let xv = self.value(*x);
                    let dst = add_into(grads, *x, g.len());
                    for ((d, &gv), &v) in dst.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.tracked(*x) {
                    let dst = add_into(grads, *x, g.len());
                    for ((d, &gv), &s) in dst.iter_mut().zip(g).zip(&node.value) {
                        *d = *d + gv * s * (T::one() - s);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (c, h, w) = (node.shape[0], node.shape[1], node.shape[2]);
                let (gt, bt) = (self.tracked(*gain), self.tracked(*bias));
                let mut dg = if gt { Some(grads[gain.0].take().unwrap_or_else(|| vec![T::zero(); c])) } else { None };
                let mut dbias = if bt { Some(grads[bias.0].take().unwrap_or_else(|| vec![T::zero(); c])) } else { None };
                let dx = kernels::layer_norm_backward(
                    g,
                    xhat,
                    rstd,
                    self.value(*gain),
                    c,
                    h * w,
                    dg.as_deref_mut(),
                    dbias.as_deref_mut(),
                    self.tracked(*x),
                );
                if gt {
                    grads[gain.0] = dg;
                }
                if bt {
                    grads[bias.0] = dbias;
                }
                if let Some(dx) = dx {
                    accumulate(add_into(grads, *x, dx.len()), &dx);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.tracked(p) {
                        accumulate(add_into(grads, p, n), &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.tracked(v) {
                        accumulate(add_into(grads, v, g.len()), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    let bv = self.value(*b);
                    let dst = add_into(grads, *a, g.len());
                    for ((d, &gv), &o) in dst.iter_mut().zip(g).zip(bv) {
                        *d = *d + gv * o;
                    }
                }
                if self.tracked(*b) {
                    let av = self.value(*a);
                    let dst = add_into(grads, *b, g.len());
                    for ((d, &gv), &o) in dst.iter_mut().zip(g).zip(av) {
                        *d = *d + gv * o;
                    }
                }
            }
            Op::Scale(x, s) => {
                if self.tracked(*x) {
                    let dst = add_into(grads, *x, g.len());
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d = *d + gv * *s;
                    }
                }
            }
            Op::Sum(x) => {
                if self.tracked(*x) {
                    let n = self.value(*x).len();
                    add_into(grads, *x, n).iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Dot(x, coeffs) => {
                if self.tracked(*x) {
                    let dst = add_into(grads, *x, coeffs.len());
                    for (d, &c) in dst.iter_mut().zip(coeffs) {
                        *d = *d + g[0] * c;
                    }
                }
            }
            Op::Focal { logits, probs, labels, spec } => {
                if !self.tracked(*logits) {
                    return;
                }
                let cells = labels.len();
                let k = probs.len() / cells;
                let scale = g[0] * spec.weight / T::from_usize(cells).unwrap();
                let dst = add_into(grads, *logits, probs.len());
                for (p, &label) in labels.iter().enumerate() {
                    let t = label as usize;
                    let pt = probs[t * cells + p];
                    let q = (T::one() - pt).max(T::min_positive_value());
                    // d(cell loss)/d(p_t) * p_t
                    let mut coef = -q.powf(spec.gamma);
                    if spec.gamma != T::zero() {
                        coef = coef + spec.gamma * q.powf(spec.gamma - T::one()) * pt * pt.ln();
                    }
                    coef = coef * spec.alpha * scale;
                    for c in 0..k {
                        let delta = if c == t { T::one() } else { T::zero() };
                        let d = &mut dst[c * cells + p];
                        *d = *d + coef * (delta - probs[c * cells + p]);
                    }
                }
            }
        }
    }
}

fn accumulate<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
