//! Univariate density defined through its cumulative.
//!
//! The cumulative is a composition `c = f_K ∘ … ∘ f_1` with
//! `f_k(v) = g_k(H_k v + b_k)`, `g_k(u) = u + a_k ⊙ tanh(u)` and a final
//! logistic sigmoid. Nonnegative `H_k` and `a_k > -1` make every Jacobian
//! nonnegative, so `c` is monotone and its derivative is a valid density.

use rand::Rng;

use crate::autodiff::param::{sigmoid, softplus, ParamId, ParamStore, Reparam};
use crate::density::IntervalMass;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Largest supported hidden width; evaluation uses fixed-size stack buffers.
pub const MAX_WIDTH: usize = 16;

/// Stage widths of the composition: `[1, r_1, …, r_{K-1}, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainShape {
    dims: Vec<usize>,
}

impl Default for ChainShape {
    /// Four stages with three hidden units each.
    fn default() -> Self {
        Self::new(&[3, 3, 3]).expect("valid default")
    }
}

impl ChainShape {
    /// Builds the shape from the hidden widths `r_1 … r_{K-1}`.
    pub fn new(hidden: &[usize]) -> Result<Self> {
        if hidden.iter().any(|&r| r == 0 || r > MAX_WIDTH) {
            return Err(Error::config(
                "density",
                format!("hidden widths must lie in 1..={MAX_WIDTH}"),
            ));
        }
        let mut dims = vec![1];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(Self { dims })
    }

    /// Number of composed functions `K`.
    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn hidden(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    fn has_factor(&self, stage: usize) -> bool {
        stage + 1 < self.depth()
    }

    /// Index of `H_k` in the parameter list; `b_k` and `a_k` follow it.
    fn slot(stage: usize) -> usize {
        3 * stage
    }

    /// Shapes of the stage parameters for `channels` independent densities,
    /// in the order `H_1, b_1, a_1, …, H_K, b_K`.
    pub fn param_shapes(&self, channels: usize) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for k in 0..self.depth() {
            let (d, r) = (self.dims[k], self.dims[k + 1]);
            shapes.push(vec![channels, r, d]);
            shapes.push(vec![channels, r]);
            if self.has_factor(k) {
                shapes.push(vec![channels, r]);
            }
        }
        shapes
    }

    /// Reparameterization of each entry of [`ChainShape::param_shapes`].
    pub fn param_reparams(&self) -> Vec<Reparam> {
        let mut out = Vec::new();
        for k in 0..self.depth() {
            out.push(Reparam::Softplus);
            out.push(Reparam::Identity);
            if self.has_factor(k) {
                out.push(Reparam::Tanh);
            }
        }
        out
    }

    /// Channel `c` of stacked effective parameters.
    pub fn view<'a, T: Scalar>(&'a self, params: &[&'a Tensor<T>], c: usize) -> ChainView<'a, T> {
        let mut h = Vec::with_capacity(self.depth());
        let mut b = Vec::with_capacity(self.depth());
        let mut a = Vec::with_capacity(self.depth());
        for k in 0..self.depth() {
            let (d, r) = (self.dims[k], self.dims[k + 1]);
            let s = Self::slot(k);
            h.push(&params[s].data()[c * r * d..(c + 1) * r * d]);
            b.push(&params[s + 1].data()[c * r..(c + 1) * r]);
            if self.has_factor(k) {
                a.push(&params[s + 2].data()[c * r..(c + 1) * r]);
            }
        }
        ChainView {
            shape: self,
            h,
            b,
            a,
        }
    }
}

/// Effective parameters of one channel.
pub struct ChainView<'a, T: Scalar> {
    shape: &'a ChainShape,
    h: Vec<&'a [T]>,
    b: Vec<&'a [T]>,
    a: Vec<&'a [T]>,
}

impl<T: Scalar> ChainView<'_, T> {
    /// Pre-sigmoid value of the cumulative at `x`.
    pub fn logit(&self, x: T) -> T {
        let dims = &self.shape.dims;
        let mut v = [T::zero(); 16];
        let mut next = [T::zero(); 16];
        v[0] = x;
        for k in 0..self.shape.depth() {
            let (d, r) = (dims[k], dims[k + 1]);
            for i in 0..r {
                let mut u = self.b[k][i];
                for j in 0..d {
                    u += self.h[k][i * d + j] * v[j];
                }
                next[i] = if self.shape.has_factor(k) {
                    u + self.a[k][i] * u.tanh()
                } else {
                    u
                };
            }
            v[..r].copy_from_slice(&next[..r]);
        }
        v[0]
    }

    /// Logit and its derivative with respect to `x`.
    pub fn logit_and_slope(&self, x: T) -> (T, T) {
        let dims = &self.shape.dims;
        let (mut v, mut dv) = ([T::zero(); 16], [T::zero(); 16]);
        let (mut nv, mut ndv) = ([T::zero(); 16], [T::zero(); 16]);
        v[0] = x;
        dv[0] = T::one();
        for k in 0..self.shape.depth() {
            let (d, r) = (dims[k], dims[k + 1]);
            for i in 0..r {
                let (mut u, mut du) = (self.b[k][i], T::zero());
                for j in 0..d {
                    u += self.h[k][i * d + j] * v[j];
                    du += self.h[k][i * d + j] * dv[j];
                }
                if self.shape.has_factor(k) {
                    let t = u.tanh();
                    nv[i] = u + self.a[k][i] * t;
                    ndv[i] = du * (T::one() + self.a[k][i] * (T::one() - t * t));
                } else {
                    nv[i] = u;
                    ndv[i] = du;
                }
            }
            v[..r].copy_from_slice(&nv[..r]);
            dv[..r].copy_from_slice(&ndv[..r]);
        }
        (v[0], dv[0])
    }

    /// Backpropagates `g = dL/dlogit` at `x`, accumulating into the stage
    /// gradients of channel `c`. Returns `dL/dx`.
    fn logit_backward(
        &self,
        x: T,
        g: T,
        scratch: &mut Scratch<T>,
        grads: &mut [Tensor<T>],
        c: usize,
    ) -> T {
        let dims = &self.shape.dims;
        let depth = self.shape.depth();
        // forward, keeping pre-activations and stage inputs
        scratch.inputs[0][0] = x;
        for k in 0..depth {
            let (d, r) = (dims[k], dims[k + 1]);
            for i in 0..r {
                let mut u = self.b[k][i];
                for j in 0..d {
                    u += self.h[k][i * d + j] * scratch.inputs[k][j];
                }
                scratch.pre[k][i] = u;
                scratch.inputs[k + 1][i] = if self.shape.has_factor(k) {
                    u + self.a[k][i] * u.tanh()
                } else {
                    u
                };
            }
        }
        // reverse
        let mut gv = [T::zero(); 16];
        gv[0] = g;
        for k in (0..depth).rev() {
            let (d, r) = (dims[k], dims[k + 1]);
            let s = ChainShape::slot(k);
            let mut gu = [T::zero(); 16];
            for i in 0..r {
                gu[i] = if self.shape.has_factor(k) {
                    let t = scratch.pre[k][i].tanh();
                    grads[s + 2].data_mut()[c * r + i] += gv[i] * t;
                    gv[i] * (T::one() + self.a[k][i] * (T::one() - t * t))
                } else {
                    gv[i]
                };
                grads[s + 1].data_mut()[c * r + i] += gu[i];
                let hg = &mut grads[s].data_mut()[c * r * d..(c + 1) * r * d];
                for j in 0..d {
                    hg[i * d + j] += gu[i] * scratch.inputs[k][j];
                }
            }
            let mut prev = [T::zero(); 16];
            for j in 0..d {
                for i in 0..r {
                    prev[j] += self.h[k][i * d + j] * gu[i];
                }
            }
            gv = prev;
        }
        gv[0]
    }
}

/// Reusable buffers for [`noisy_likelihood_backward`].
pub struct Scratch<T: Scalar> {
    pre: Vec<Vec<T>>,
    inputs: Vec<Vec<T>>,
}

impl<T: Scalar> Scratch<T> {
    pub fn new(shape: &ChainShape) -> Self {
        Self {
            pre: shape.dims[1..].iter().map(|&r| vec![T::zero(); r]).collect(),
            inputs: shape.dims.iter().map(|&r| vec![T::zero(); r]).collect(),
        }
    }
}

/// Orientation that evaluates `c(x+½) − c(x−½)` in the tail where both
/// sigmoids are far from saturation.
fn tail_sign<T: Scalar>(lower: T, upper: T) -> T {
    if lower + upper > T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// `c(x + ½) − c(x − ½)`.
pub fn noisy_likelihood<T: Scalar>(view: &ChainView<'_, T>, x: T) -> T {
    let half = T::of(0.5);
    let upper = view.logit(x + half);
    let lower = view.logit(x - half);
    let s = tail_sign(lower, upper);
    (sigmoid(s * upper) - sigmoid(s * lower)).abs()
}

/// Gradient of [`noisy_likelihood`] scaled by `g`; parameter gradients are
/// added to `grads` (laid out as [`ChainShape::param_shapes`]) at channel `c`.
pub fn noisy_likelihood_backward<T: Scalar>(
    view: &ChainView<'_, T>,
    x: T,
    g: T,
    scratch: &mut Scratch<T>,
    grads: &mut [Tensor<T>],
    c: usize,
) -> T {
    let half = T::of(0.5);
    let upper = view.logit(x + half);
    let lower = view.logit(x - half);
    let s = tail_sign(lower, upper);
    let (su, sl) = (sigmoid(s * upper), sigmoid(s * lower));
    let sign = if su >= sl { T::one() } else { -T::one() };
    let g_upper = g * sign * s * su * (T::one() - su);
    let g_lower = -g * sign * s * sl * (T::one() - sl);
    view.logit_backward(x + half, g_upper, scratch, grads, c)
        + view.logit_backward(x - half, g_lower, scratch, grads, c)
}

/// Parameters of `channels` independent densities held in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct DensityBank {
    pub shape: ChainShape,
    pub channels: usize,
    pub ids: Vec<ParamId>,
}

impl DensityBank {
    /// Adds parameters initialized so that every density starts close to a
    /// logistic with the given scale. Biases are drawn from `U(-½, ½)`.
    pub fn init<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        shape: ChainShape,
        channels: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let per_stage = init_scale.powf(1.0 / shape.depth() as f64);
        let mut ids = Vec::new();
        for k in 0..shape.depth() {
            let (d, r) = (shape.dims[k], shape.dims[k + 1]);
            let h_raw = Reparam::Softplus.inverse(1.0 / per_stage / r as f64);
            ids.push(store.add(
                format!("{prefix}.h{k}"),
                Tensor::full(&[channels, r, d], T::of(h_raw)),
                Reparam::Softplus,
            ));
            ids.push(store.add(
                format!("{prefix}.b{k}"),
                Tensor::from_fn(&[channels, r], |_| T::of(rng.gen_range(-0.5..0.5))),
                Reparam::Identity,
            ));
            if shape.has_factor(k) {
                ids.push(store.add(
                    format!("{prefix}.a{k}"),
                    Tensor::zeros(&[channels, r]),
                    Reparam::Tanh,
                ));
            }
        }
        Self {
            shape,
            channels,
            ids,
        }
    }

    /// Snapshot of the effective parameter values.
    pub fn effective<T: Scalar>(&self, store: &ParamStore<T>) -> ChainParams {
        ChainParams {
            shape: self.shape.clone(),
            channels: self.channels,
            tensors: self.ids.iter().map(|&id| store.effective(id).cast()).collect(),
        }
    }
}

/// Effective parameters of a bank of densities, in `f64`.
#[derive(Clone, Debug)]
pub struct ChainParams {
    shape: ChainShape,
    channels: usize,
    tensors: Vec<Tensor<f64>>,
}

impl ChainParams {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn channel(&self, c: usize) -> ChannelDensity<'_> {
        let refs: Vec<&Tensor<f64>> = self.tensors.iter().collect();
        ChannelDensity {
            view: self.shape.view(&refs, c),
        }
    }
}

/// One channel of a [`ChainParams`], evaluated in `f64`.
pub struct ChannelDensity<'a> {
    view: ChainView<'a, f64>,
}

impl ChannelDensity<'_> {
    pub fn cumulative(&self, x: f64) -> f64 {
        sigmoid(self.view.logit(x))
    }

    pub fn logit(&self, x: f64) -> f64 {
        self.view.logit(x)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let (l, slope) = self.view.logit_and_slope(x);
        // log sigmoid'(l) = -softplus(l) - softplus(-l)
        -softplus(l) - softplus(-l) + slope.ln()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }
}

impl IntervalMass for ChannelDensity<'_> {
    fn mass(&self, a: f64, b: f64) -> f64 {
        if a >= b {
            return 0.0;
        }
        let la = if a == f64::NEG_INFINITY { f64::NEG_INFINITY } else { self.view.logit(a) };
        let lb = if b == f64::INFINITY { f64::INFINITY } else { self.view.logit(b) };
        if la == f64::NEG_INFINITY {
            return sigmoid(lb);
        }
        if lb == f64::INFINITY {
            return sigmoid(-la);
        }
        if la + lb > 0.0 {
            (sigmoid(-la) - sigmoid(-lb)).max(0.0)
        } else {
            (sigmoid(lb) - sigmoid(la)).max(0.0)
        }
    }
}
