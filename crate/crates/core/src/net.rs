//! Networks in the NTK parameterization.
//!
//! A network is a stack of layers acting on a flat activation vector, followed
//! by a linear read-out `f(x) = v . alpha_L / sqrt(m_L)`. Every weight entry is
//! a standard Gaussian at initialization; all width dependence lives in the
//! explicit `1/sqrt(fan_in)` factors:
//!
//! * fully connected: `alpha' = w(W alpha / sqrt(m_in))`
//! * convolutional:   `alpha' = w((W * alpha) / sqrt(c_in))` with zero padding
//! * residual:        `alpha' = w(W alpha / sqrt(m)) + alpha`
//!
//! Convolutional activations are stored channel-major (`alpha[c * Q + q]`) and
//! filters as `W[k][i][j]` (tap, output channel, input channel).
//!
//! With `asi` set, the parameter vector holds two copies `[theta; theta']` of the
//! base layout and the model is `(f(x; theta) - f(x; theta')) / sqrt(2)`.
//!
//! The forward and backward passes are generic over [`Real`], so the same code
//! computes gradients in `f64` and Hessian-vector products in [`Dual`]
//! arithmetic (forward-over-reverse).

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::dual::{Dual, Real};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, norm_inf, Matrix};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    FullyConnected {
        width: usize,
    },
    Convolutional {
        filter: usize,
        channels: usize,
        pixels: usize,
    },
    Residual {
        width: usize,
    },
}

/// Scaling applied to the raw input in the first layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    /// Divide by the square root of the input fan-in, like every other layer.
    #[default]
    FanIn,
    /// Feed the input unscaled.
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub activation: Activation,
    #[serde(default)]
    pub asi: bool,
    #[serde(default)]
    pub input_scaling: InputScaling,
}

impl NetworkSpec {
    pub fn fully_connected(input_dim: usize, widths: &[usize], activation: Activation) -> Self {
        Self {
            input_dim,
            layers: widths
                .iter()
                .map(|&width| LayerSpec::FullyConnected { width })
                .collect(),
            activation,
            asi: false,
            input_scaling: InputScaling::FanIn,
        }
    }

    pub fn with_asi(mut self, asi: bool) -> Self {
        self.asi = asi;
        self
    }

    pub fn with_input_scaling(mut self, scaling: InputScaling) -> Self {
        self.input_scaling = scaling;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Dense,
    Conv,
    Residual,
}

#[derive(Clone, Debug)]
struct Plan {
    kind: Kind,
    in_dim: usize,
    out_dim: usize,
    /// Rows of the weight matrix (output width or output channels).
    out_units: usize,
    /// Columns of the weight matrix (input width or input channels).
    in_units: usize,
    filter: usize,
    pixels: usize,
    scale: f64,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offset/shape table of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub entries: Vec<LayoutEntry>,
    /// Parameter count of one copy of the base network.
    pub base_len: usize,
    pub asi: bool,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        if self.asi {
            2 * self.base_len
        } else {
            self.base_len
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub data: Vec<f64>,
    pub layout: ParamLayout,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The slice holding layout entry `index` of copy `half` (0, or 1 under ASI).
    pub fn block(&self, half: usize, index: usize) -> &[f64] {
        let base = half * self.layout.base_len;
        let e = &self.layout.entries[index];
        &self.data[base + e.offset..base + e.offset + e.len()]
    }

    pub fn with_data(&self, data: Vec<f64>) -> ParamVector {
        assert_eq!(data.len(), self.data.len());
        ParamVector {
            data,
            layout: self.layout.clone(),
        }
    }
}

/// A validated network ready for evaluation.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    plans: Vec<Plan>,
    out_offset: usize,
    out_dim: usize,
    out_scale: f64,
    layout: ParamLayout,
}

/// Callback for `backprop`: (layer, scaled pre-activation gradient, layer input).
type LayerVisitor<'a, T> = dyn FnMut(usize, &[T], &[T]) + 'a;

struct Cache<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    last: Vec<T>,
}

/// Gradient of one layer, kept in factored form where possible.
#[derive(Clone, Debug)]
pub enum GradBlock {
    /// Gradient equals the outer product `u w^T` (row-major over the weight matrix).
    Outer { u: Vec<f64>, w: Vec<f64> },
    Dense(Vec<f64>),
}

impl GradBlock {
    fn inner(&self, other: &GradBlock) -> f64 {
        match (self, other) {
            (GradBlock::Outer { u, w }, GradBlock::Outer { u: u2, w: w2 }) => {
                dot(u, u2) * dot(w, w2)
            }
            (GradBlock::Dense(a), GradBlock::Dense(b)) => dot(a, b),
            _ => unreachable!("gradient blocks of one network always share a representation"),
        }
    }

    fn sq_norm(&self) -> f64 {
        self.inner(self)
    }

    fn dense(&self) -> Vec<f64> {
        match self {
            GradBlock::Dense(a) => a.clone(),
            GradBlock::Outer { u, w } => {
                let mut out = Vec::with_capacity(u.len() * w.len());
                for &ui in u {
                    out.extend(w.iter().map(|wj| ui * wj));
                }
                out
            }
        }
    }
}

/// `grad_theta f(x)` as a list of per-layer blocks in layout order.
#[derive(Clone, Debug)]
pub struct GradFactors {
    pub blocks: Vec<GradBlock>,
}

impl GradFactors {
    pub fn inner(&self, other: &GradFactors) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.inner(b))
            .sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.blocks.iter().map(GradBlock::sq_norm).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.dense()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpMethod {
    /// Exact directional derivative of the reverse pass in dual arithmetic.
    ForwardOverReverse,
    /// Central difference of gradients with step `1e-4 (1 + |theta|_inf)`.
    CentralDifference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpNormEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out first; the value is then approximate.
    pub converged: bool,
    pub method: HvpMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightNormCheck {
    pub layer: usize,
    pub scaled_op_norm: f64,
    pub bound: f64,
    pub holds: bool,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        if spec.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        let mut plans = Vec::with_capacity(spec.layers.len());
        let mut entries = Vec::new();
        let mut in_dim = spec.input_dim;
        let mut offset = 0;
        for (l, layer) in spec.layers.iter().enumerate() {
            let first = l == 0;
            let fan_scale = |fan_in: usize| {
                if first && spec.input_scaling == InputScaling::Unit {
                    1.0
                } else {
                    1.0 / (fan_in as f64).sqrt()
                }
            };
            let plan = match *layer {
                LayerSpec::FullyConnected { width } => {
                    if width == 0 {
                        return Err(Error::InvalidSpec(format!("layer {l}: width must be >= 1")));
                    }
                    Plan {
                        kind: Kind::Dense,
                        in_dim,
                        out_dim: width,
                        out_units: width,
                        in_units: in_dim,
                        filter: 1,
                        pixels: 1,
                        scale: fan_scale(in_dim),
                        offset,
                        len: width * in_dim,
                    }
                }
                LayerSpec::Residual { width } => {
                    if width == 0 {
                        return Err(Error::InvalidSpec(format!("layer {l}: width must be >= 1")));
                    }
                    if width != in_dim {
                        return Err(Error::InvalidSpec(format!(
                            "layer {l}: residual width {width} must equal its input width {in_dim}"
                        )));
                    }
                    Plan {
                        kind: Kind::Residual,
                        in_dim,
                        out_dim: width,
                        out_units: width,
                        in_units: width,
                        filter: 1,
                        pixels: 1,
                        scale: fan_scale(width),
                        offset,
                        len: width * width,
                    }
                }
                LayerSpec::Convolutional {
                    filter,
                    channels,
                    pixels,
                } => {
                    if filter.is_multiple_of(2) {
                        return Err(Error::InvalidSpec(format!(
                            "layer {l}: convolution filter size {filter} must be odd"
                        )));
                    }
                    if channels == 0 || pixels == 0 {
                        return Err(Error::InvalidSpec(format!(
                            "layer {l}: channels and pixels must be >= 1"
                        )));
                    }
                    if !in_dim.is_multiple_of(pixels) {
                        return Err(Error::InvalidSpec(format!(
                            "layer {l}: input size {in_dim} is not a whole number of {pixels}-pixel channels"
                        )));
                    }
                    let c_in = in_dim / pixels;
                    Plan {
                        kind: Kind::Conv,
                        in_dim,
                        out_dim: channels * pixels,
                        out_units: channels,
                        in_units: c_in,
                        filter,
                        pixels,
                        scale: fan_scale(c_in),
                        offset,
                        len: filter * channels * c_in,
                    }
                }
            };
            let shape = match plan.kind {
                Kind::Conv => vec![plan.filter, plan.out_units, plan.in_units],
                _ => vec![plan.out_units, plan.in_units],
            };
            entries.push(LayoutEntry {
                name: format!("W{}", l + 1),
                offset,
                shape,
            });
            offset += plan.len;
            in_dim = plan.out_dim;
            plans.push(plan);
        }
        if spec.layers.is_empty() {
            return Err(Error::InvalidSpec("network needs at least one layer".into()));
        }
        let out_offset = offset;
        entries.push(LayoutEntry {
            name: "v".into(),
            offset,
            shape: vec![in_dim],
        });
        let base_len = offset + in_dim;
        let layout = ParamLayout {
            entries,
            base_len,
            asi: spec.asi,
        };
        Ok(Self {
            out_scale: 1.0 / (in_dim as f64).sqrt(),
            out_dim: in_dim,
            out_offset,
            plans,
            layout,
            spec,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Hidden widths `m_l` (channel count for convolutions), in layer order.
    pub fn widths(&self) -> Vec<usize> {
        self.plans.iter().map(|p| p.out_units).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                what: "input vector",
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_params(&self, p: &ParamVector) -> Result<()> {
        if p.data.len() != self.layout.len() || p.layout != self.layout {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.layout.len(),
                got: p.data.len(),
            });
        }
        Ok(())
    }

    /// I.i.d. standard Gaussian parameters; duplicated as `[theta; theta]` under ASI.
    pub fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut data = rng.normal_vec(self.layout.base_len);
        if self.spec.asi {
            data.extend_from_within(..);
        }
        ParamVector {
            data,
            layout: self.layout.clone(),
        }
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector {
            data: vec![0.0; self.layout.len()],
            layout: self.layout.clone(),
        }
    }

    /// Wrap raw data in this network's layout.
    pub fn params_from(&self, data: Vec<f64>) -> Result<ParamVector> {
        if data.len() != self.layout.len() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.layout.len(),
                got: data.len(),
            });
        }
        Ok(ParamVector {
            data,
            layout: self.layout.clone(),
        })
    }

    fn halves<'a, T>(&self, theta: &'a [T]) -> Vec<(&'a [T], f64)> {
        let p = self.layout.base_len;
        if self.spec.asi {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            vec![(&theta[..p], s), (&theta[p..2 * p], -s)]
        } else {
            vec![(theta, 1.0)]
        }
    }

    fn forward_base<T: Real>(&self, theta: &[T], x: &[f64], keep: bool) -> (T, Option<Cache<T>>) {
        let act = self.spec.activation;
        let mut alpha: Vec<T> = x.iter().map(|&v| T::constant(v)).collect();
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        for plan in &self.plans {
            let w = &theta[plan.offset..plan.offset + plan.len];
            let z = match plan.kind {
                Kind::Dense | Kind::Residual => matvec_scaled(w, plan.out_units, &alpha, plan.scale),
                Kind::Conv => conv_forward(w, plan, &alpha),
            };
            let mut next: Vec<T> = z.iter().map(|&zi| zi.activate(act)).collect();
            if plan.kind == Kind::Residual {
                for (n, a) in next.iter_mut().zip(&alpha) {
                    *n += *a;
                }
            }
            if keep {
                inputs.push(std::mem::replace(&mut alpha, next));
                pre.push(z);
            } else {
                alpha = next;
            }
        }
        let v = &theta[self.out_offset..self.out_offset + self.out_dim];
        let mut out = T::default();
        for (vi, ai) in v.iter().zip(&alpha) {
            out += *vi * *ai;
        }
        let out = out.scale(self.out_scale);
        let cache = keep.then_some(Cache {
            inputs,
            pre,
            last: alpha,
        });
        (out, cache)
    }

    /// Reverse pass. `visit(layer, u, alpha_in)` receives `u = scale * dF/dz` for
    /// each layer, from the last layer to the first; the read-out gradient is
    /// returned.
    fn backprop<T: Real>(
        &self,
        theta: &[T],
        cache: &Cache<T>,
        seed: f64,
        visit: &mut LayerVisitor<'_, T>,
    ) -> Vec<T> {
        let act = self.spec.activation;
        let v = &theta[self.out_offset..self.out_offset + self.out_dim];
        let out_grad: Vec<T> = cache
            .last
            .iter()
            .map(|a| a.scale(self.out_scale * seed))
            .collect();
        let mut delta: Vec<T> = v.iter().map(|vi| vi.scale(self.out_scale * seed)).collect();
        for (l, plan) in self.plans.iter().enumerate().rev() {
            let w = &theta[plan.offset..plan.offset + plan.len];
            let u: Vec<T> = cache.pre[l]
                .iter()
                .zip(&delta)
                .map(|(z, d)| (*d * z.activate_d1(act)).scale(plan.scale))
                .collect();
            visit(l, &u, &cache.inputs[l]);
            if l == 0 {
                break;
            }
            let mut prev = match plan.kind {
                Kind::Dense | Kind::Residual => tr_matvec(w, plan.out_units, plan.in_units, &u),
                Kind::Conv => conv_backward_input(w, plan, &u),
            };
            if plan.kind == Kind::Residual {
                for (p, d) in prev.iter_mut().zip(&delta) {
                    *p += *d;
                }
            }
            delta = prev;
        }
        out_grad
    }

    fn dense_grad_into<T: Real>(&self, theta: &[T], x: &[f64], out: &mut [T]) -> T {
        let p = self.layout.base_len;
        let mut value = T::default();
        for (h, (half, seed)) in self.halves(theta).into_iter().enumerate() {
            let (f, cache) = self.forward_base(half, x, true);
            value += f.scale(seed);
            let cache = cache.expect("cache requested");
            let dst = &mut out[h * p..(h + 1) * p];
            let plans = &self.plans;
            let mut visit = |l: usize, u: &[T], a: &[T]| {
                let plan = &plans[l];
                let g = &mut dst[plan.offset..plan.offset + plan.len];
                match plan.kind {
                    Kind::Dense | Kind::Residual => {
                        for (i, ui) in u.iter().enumerate() {
                            let row = &mut g[i * plan.in_units..(i + 1) * plan.in_units];
                            for (gij, aj) in row.iter_mut().zip(a) {
                                *gij = *ui * *aj;
                            }
                        }
                    }
                    Kind::Conv => conv_weight_grad(plan, u, a, g),
                }
            };
            let out_grad = self.backprop(half, &cache, seed, &mut visit);
            dst[self.out_offset..self.out_offset + self.out_dim].copy_from_slice(&out_grad);
        }
        value
    }

    pub fn forward(&self, params: &ParamVector, x: &[f64]) -> Result<f64> {
        self.check_params(params)?;
        self.check_input(x)?;
        Ok(self.forward_unchecked(&params.data, x))
    }

    fn forward_unchecked(&self, theta: &[f64], x: &[f64]) -> f64 {
        let halves = self.halves(theta);
        if self.spec.asi {
            // Evaluate both halves in full before subtracting so identical halves cancel exactly.
            let a = self.forward_base(halves[0].0, x, false).0;
            let b = self.forward_base(halves[1].0, x, false).0;
            (a - b) * std::f64::consts::FRAC_1_SQRT_2
        } else {
            self.forward_base(theta, x, false).0
        }
    }

    pub fn forward_batch(&self, params: &ParamVector, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        xs.iter()
            .map(|x| {
                self.check_input(x)?;
                Ok(self.forward_unchecked(&params.data, x))
            })
            .collect()
    }

    pub fn grad(&self, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(params, x)?.1)
    }

    pub fn value_and_grad(&self, params: &ParamVector, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut g = vec![0.0; params.len()];
        let value = self.dense_grad_into(&params.data, x, &mut g);
        Ok((value, g))
    }

    /// Gradient with fully connected and residual blocks kept as outer products.
    pub fn grad_factors(&self, params: &ParamVector, x: &[f64]) -> Result<GradFactors> {
        self.check_params(params)?;
        self.check_input(x)?;
        let mut blocks = Vec::new();
        for (half, seed) in self.halves(&params.data) {
            let (_, cache) = self.forward_base(half, x, true);
            let cache = cache.expect("cache requested");
            let mut layer_blocks: Vec<Option<GradBlock>> = vec![None; self.plans.len()];
            let plans = &self.plans;
            let mut visit = |l: usize, u: &[f64], a: &[f64]| {
                let plan = &plans[l];
                layer_blocks[l] = Some(match plan.kind {
                    Kind::Dense | Kind::Residual => GradBlock::Outer {
                        u: u.to_vec(),
                        w: a.to_vec(),
                    },
                    Kind::Conv => {
                        let mut g = vec![0.0; plan.len];
                        conv_weight_grad(plan, u, a, &mut g);
                        GradBlock::Dense(g)
                    }
                });
            };
            let out_grad = self.backprop(half, &cache, seed, &mut visit);
            blocks.extend(layer_blocks.into_iter().map(|b| b.expect("every layer visited")));
            blocks.push(GradBlock::Dense(out_grad));
        }
        Ok(GradFactors { blocks })
    }

    /// Rows `grad f(x_i)` stacked into an `n x p` matrix.
    pub fn jacobian(&self, params: &ParamVector, xs: &[Vec<f64>]) -> Result<Matrix> {
        let p = params.len();
        let mut data = Vec::with_capacity(xs.len() * p);
        for x in xs {
            data.extend(self.grad(params, x)?);
        }
        Matrix::from_vec(xs.len(), p, data)
    }

    /// `H(x, theta) v` by forward-over-reverse differentiation.
    pub fn hvp(&self, params: &ParamVector, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_input(x)?;
        if v.len() != params.len() {
            return Err(Error::DimensionMismatch {
                what: "hvp direction",
                expected: params.len(),
                got: v.len(),
            });
        }
        let theta: Vec<Dual> = params
            .data
            .iter()
            .zip(v)
            .map(|(&t, &e)| Dual::new(t, e))
            .collect();
        let mut g = vec![Dual::default(); theta.len()];
        self.dense_grad_into(&theta, x, &mut g);
        Ok(g.into_iter().map(|d| d.eps).collect())
    }

    /// `H(x, theta) v` by a central difference of gradients along `v / |v|`.
    pub fn hvp_central_difference(&self, params: &ParamVector, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_input(x)?;
        let vn = norm(v);
        if vn == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let h = 1e-4 * (1.0 + norm_inf(&params.data));
        let shifted = |sign: f64| {
            let data: Vec<f64> = params
                .data
                .iter()
                .zip(v)
                .map(|(t, vi)| t + sign * h * vi / vn)
                .collect();
            let mut g = vec![0.0; data.len()];
            self.dense_grad_into(&data, x, &mut g);
            g
        };
        let plus = shifted(1.0);
        let minus = shifted(-1.0);
        Ok(plus
            .iter()
            .zip(&minus)
            .map(|(a, b)| (a - b) / (2.0 * h) * vn)
            .collect())
    }

    /// `|H(x, theta)|_op` by power iteration on `v -> H H v`.
    pub fn hessian_opnorm_estimate(
        &self,
        params: &ParamVector,
        x: &[f64],
        iters: usize,
        rng: &mut Rng,
    ) -> Result<OpNormEstimate> {
        if iters < 10 {
            return Err(Error::InvalidArgument(format!(
                "hessian power iteration needs at least 10 iterations, got {iters}"
            )));
        }
        self.check_params(params)?;
        self.check_input(x)?;
        let p = params.len();
        let est = power_iteration(
            p,
            |v| {
                let hv = self.hvp(params, x, v).expect("checked inputs");
                self.hvp(params, x, &hv).expect("checked inputs")
            },
            iters,
            1e-6,
            rng,
        );
        Ok(OpNormEstimate {
            value: est.value.max(0.0).sqrt(),
            iterations: est.iterations,
            converged: est.converged,
            method: HvpMethod::ForwardOverReverse,
        })
    }

    /// `(1/sqrt(m)) |W_l|_op` against `2 sqrt(A) + 1` for every weight matrix of the
    /// base copy, with `m` the smallest hidden width and `A = max_l m_l / m`.
    /// Convolution filters are checked tap by tap.
    pub fn weight_norm_report(&self, params: &ParamVector) -> Result<Vec<WeightNormCheck>> {
        self.check_params(params)?;
        let widths = self.widths();
        let m = *widths.iter().min().ok_or_else(|| Error::InvalidSpec("no layers".into()))? as f64;
        let a = *widths.iter().max().expect("nonempty") as f64 / m;
        let bound = 2.0 * a.sqrt() + 1.0;
        let mut checks = Vec::new();
        for (l, plan) in self.plans.iter().enumerate() {
            let w = &params.data[plan.offset..plan.offset + plan.len];
            let taps = if plan.kind == Kind::Conv { plan.filter } else { 1 };
            let tap_len = plan.out_units * plan.in_units;
            let mut worst: f64 = 0.0;
            for k in 0..taps {
                let mat = Matrix::from_vec(
                    plan.out_units,
                    plan.in_units,
                    w[k * tap_len..(k + 1) * tap_len].to_vec(),
                )?;
                worst = worst.max(matrix_op_norm(&mat)?);
            }
            let scaled = worst / m.sqrt();
            checks.push(WeightNormCheck {
                layer: l,
                scaled_op_norm: scaled,
                bound,
                holds: scaled <= bound,
            });
        }
        Ok(checks)
    }

    pub fn gradient_norm(&self, params: &ParamVector, x: &[f64]) -> Result<f64> {
        Ok(self.grad_factors(params, x)?.sq_norm().sqrt())
    }
}

/// Largest singular value via the eigenvalues of the smaller Gram matrix.
pub fn matrix_op_norm(w: &Matrix) -> Result<f64> {
    let g = if w.rows() <= w.cols() {
        w.row_gram()
    } else {
        w.transpose().row_gram()
    };
    let es = crate::spectral::eigh(&g)?;
    Ok(es.eigenvalues.first().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Top eigenvalue of a symmetric positive semidefinite operator by power iteration.
///
/// Stops when the Rayleigh quotient changes by less than `rel_tol` relative.
pub fn power_iteration(
    dim: usize,
    mut op: impl FnMut(&[f64]) -> Vec<f64>,
    iters: usize,
    rel_tol: f64,
    rng: &mut Rng,
) -> PowerEstimate {
    let mut v = rng.unit_vector(dim);
    let mut value = 0.0;
    for it in 1..=iters {
        let w = op(&v);
        let next = dot(&v, &w);
        let wn = norm(&w);
        if wn == 0.0 {
            return PowerEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        v = w.into_iter().map(|x| x / wn).collect();
        if it > 1 && (next - value).abs() <= rel_tol * next.abs() {
            return PowerEstimate {
                value: next,
                iterations: it,
                converged: true,
            };
        }
        value = next;
    }
    PowerEstimate {
        value,
        iterations: iters,
        converged: false,
    }
}

fn matvec_scaled<T: Real>(w: &[T], rows: usize, x: &[T], scale: f64) -> Vec<T> {
    let cols = x.len();
    (0..rows)
        .map(|i| {
            let mut acc = T::default();
            for (wij, xj) in w[i * cols..(i + 1) * cols].iter().zip(x) {
                acc += *wij * *xj;
            }
            acc.scale(scale)
        })
        .collect()
}

fn tr_matvec<T: Real>(w: &[T], rows: usize, cols: usize, u: &[T]) -> Vec<T> {
    let mut out = vec![T::default(); cols];
    for i in 0..rows {
        let ui = u[i];
        for (o, wij) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += *wij * ui;
        }
    }
    out
}

/// Source pixel for tap `k` (0-based) at output pixel `q`, if inside the image.
#[inline]
fn tap_source(q: usize, k: usize, filter: usize, pixels: usize) -> Option<usize> {
    let src = q as isize + k as isize - (filter as isize - 1) / 2;
    (0..pixels as isize).contains(&src).then_some(src as usize)
}

fn conv_forward<T: Real>(w: &[T], plan: &Plan, alpha: &[T]) -> Vec<T> {
    let (kk, co, ci, q_len) = (plan.filter, plan.out_units, plan.in_units, plan.pixels);
    let mut out = vec![T::default(); co * q_len];
    for k in 0..kk {
        for i in 0..co {
            let wrow = &w[(k * co + i) * ci..(k * co + i + 1) * ci];
            for q in 0..q_len {
                if let Some(src) = tap_source(q, k, kk, q_len) {
                    let mut acc = T::default();
                    for (j, wj) in wrow.iter().enumerate() {
                        acc += *wj * alpha[j * q_len + src];
                    }
                    out[i * q_len + q] += acc;
                }
            }
        }
    }
    out.into_iter().map(|z| z.scale(plan.scale)).collect()
}

fn conv_backward_input<T: Real>(w: &[T], plan: &Plan, u: &[T]) -> Vec<T> {
    let (kk, co, ci, q_len) = (plan.filter, plan.out_units, plan.in_units, plan.pixels);
    let mut out = vec![T::default(); ci * q_len];
    for k in 0..kk {
        for i in 0..co {
            let wrow = &w[(k * co + i) * ci..(k * co + i + 1) * ci];
            for q in 0..q_len {
                if let Some(src) = tap_source(q, k, kk, q_len) {
                    let ui = u[i * q_len + q];
                    for (j, wj) in wrow.iter().enumerate() {
                        out[j * q_len + src] += *wj * ui;
                    }
                }
            }
        }
    }
    out
}

fn conv_weight_grad<T: Real>(plan: &Plan, u: &[T], alpha: &[T], g: &mut [T]) {
    let (kk, co, ci, q_len) = (plan.filter, plan.out_units, plan.in_units, plan.pixels);
    for k in 0..kk {
        for i in 0..co {
            for j in 0..ci {
                let mut acc = T::default();
                for q in 0..q_len {
                    if let Some(src) = tap_source(q, k, kk, q_len) {
                        acc += u[i * q_len + q] * alpha[j * q_len + src];
                    }
                }
                g[(k * co + i) * ci + j] = acc;
            }
        }
    }
}

/// Unscaled convolution `(W * alpha)_{i,q} = sum_k sum_j W[k][i][j] alpha[j][q + k - (K+1)/2]`
/// with 1-based tap index `k` and zero padding outside `1..=Q`.
///
/// `w` holds `filter x c_out x c_in` entries and `alpha` is `c_in x Q`.
pub fn conv_apply(w: &[f64], filter: usize, c_out: usize, alpha: &Matrix) -> Result<Matrix> {
    if filter.is_multiple_of(2) {
        return Err(Error::InvalidSpec(format!(
            "convolution filter size {filter} must be odd"
        )));
    }
    let c_in = alpha.rows();
    if w.len() != filter * c_out * c_in {
        return Err(Error::DimensionMismatch {
            what: "convolution filter",
            expected: filter * c_out * c_in,
            got: w.len(),
        });
    }
    let plan = Plan {
        kind: Kind::Conv,
        in_dim: c_in * alpha.cols(),
        out_dim: c_out * alpha.cols(),
        out_units: c_out,
        in_units: c_in,
        filter,
        pixels: alpha.cols(),
        scale: 1.0,
        offset: 0,
        len: w.len(),
    };
    debug_assert_eq!(plan.in_dim, alpha.as_slice().len());
    let out = conv_forward(w, &plan, alpha.as_slice());
    Matrix::from_vec(c_out, plan.pixels, out)
}
