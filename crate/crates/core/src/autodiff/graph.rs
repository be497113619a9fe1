//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates parameter
//! gradients into a [`ParamStore`].

use crate::autodiff::conv::{self, Direction};
use crate::autodiff::gdn;
use crate::autodiff::param::{ParamId, ParamStore};
use crate::density::gaussian;
use crate::density::nonparametric::{self, ChainShape};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Pow(Var, T),
    Max {
        input: Var,
        bound: T,
        passthrough: bool,
    },
    Sum(Var),
    Mean(Var),
    MeanPlanes(Var),
    Conv {
        name: String,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        direction: Direction,
        cols: Option<Vec<T>>,
    },
    Gdn {
        name: String,
        input: Var,
        beta: Var,
        gamma: Var,
        inverse: bool,
    },
    Blur {
        input: Var,
        window: Vec<T>,
    },
    AvgPool2(Var),
    Crop(Var),
    GaussianLikelihood {
        value: Var,
        scale: Var,
    },
    ChainLikelihood {
        value: Var,
        shape: ChainShape,
        params: Vec<Var>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// One recorded forward computation.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// Loads the effective value of a parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.effective(id), Op::Param(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn offset(&mut self, a: Var, shift: T) -> Var {
        let v = self.value(a).map(|x| x + shift);
        self.push(v, Op::Offset(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a))
    }

    /// Elementwise `a^exponent` for positive `a`.
    pub fn pow(&mut self, a: Var, exponent: T) -> Var {
        let v = self.value(a).map(|x| x.powf(exponent));
        self.push(v, Op::Pow(a, exponent))
    }

    /// `max(a, bound)` with zero gradient where clamped.
    pub fn clamp_min(&mut self, a: Var, bound: T) -> Var {
        self.max_op(a, bound, false)
    }

    /// `max(a, bound)` that still passes gradients pushing `a` upward.
    pub fn lower_bound(&mut self, a: Var, bound: T) -> Var {
        self.max_op(a, bound, true)
    }

    fn max_op(&mut self, a: Var, bound: T, passthrough: bool) -> Var {
        let v = self.value(a).map(|x| x.max(bound));
        self.push(
            v,
            Op::Max {
                input: a,
                bound,
                passthrough,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / T::of(t.len() as f64));
        self.push(v, Op::Mean(a))
    }

    /// Spatial mean of every `[batch, channel]` plane.
    pub fn mean_planes(&mut self, a: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(a).dims4()?;
        let n = T::of((h * w) as f64);
        let data = self
            .value(a)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() / n)
            .collect();
        let v = Tensor::new(&[b, c], data)?;
        Ok(self.push(v, Op::MeanPlanes(a)))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        name: &str,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        direction: Direction,
    ) -> Result<Var> {
        let (out, cols) = conv::conv2d_forward(
            name,
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            direction,
        )?;
        Ok(self.push(
            out,
            Op::Conv {
                name: name.to_string(),
                input,
                kernel,
                bias,
                stride,
                direction,
                cols,
            },
        ))
    }

    pub fn gdn(&mut self, name: &str, input: Var, beta: Var, gamma: Var, inverse: bool) -> Result<Var> {
        let out = gdn::gdn_forward(name, self.value(input), self.value(beta), self.value(gamma), inverse)?;
        Ok(self.push(
            out,
            Op::Gdn {
                name: name.to_string(),
                input,
                beta,
                gamma,
                inverse,
            },
        ))
    }

    /// Separable filter applied to every plane without padding.
    pub fn blur_valid(&mut self, input: Var, window: &[T]) -> Result<Var> {
        let out = blur_forward(self.value(input), window)?;
        Ok(self.push(
            out,
            Op::Blur {
                input,
                window: window.to_vec(),
            },
        ))
    }

    /// 2×2 average pooling; a trailing odd row or column is dropped.
    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for plane in src.chunks(h * w) {
            for y in 0..oh {
                for x in 0..ow {
                    let s = plane[2 * y * w + 2 * x]
                        + plane[2 * y * w + 2 * x + 1]
                        + plane[(2 * y + 1) * w + 2 * x]
                        + plane[(2 * y + 1) * w + 2 * x + 1];
                    out.push(s * T::of(0.25));
                }
            }
        }
        let v = Tensor::new(&[b, c, oh, ow], out)?;
        Ok(self.push(v, Op::AvgPool2(input)))
    }

    /// Keeps the top-left `h × w` window of every plane.
    pub fn crop(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let v = self.value(input).crop(h, w)?;
        Ok(self.push(v, Op::Crop(input)))
    }

    /// Likelihood of each element under a zero-mean Gaussian with the given
    /// scale, convolved with a unit-width uniform.
    pub fn gaussian_likelihood(&mut self, value: Var, scale: Var) -> Result<Var> {
        self.same_shape(value, scale, "gaussian likelihood")?;
        let v = self
            .value(value)
            .zip_map(self.value(scale), gaussian::noisy_likelihood);
        Ok(self.push(v, Op::GaussianLikelihood { value, scale }))
    }

    /// Likelihood of each element of a `[batch, channel, ...]` tensor under the
    /// per-channel cumulative-composition density convolved with a unit-width
    /// uniform. `params` holds the effective stage parameters in the order
    /// given by [`ChainShape::param_shapes`].
    pub fn chain_likelihood(&mut self, value: Var, shape: &ChainShape, params: &[Var]) -> Result<Var> {
        let v = self.value(value);
        if v.shape().len() < 2 {
            return Err(Error::Shape("chain likelihood needs [batch, channel, ...]".into()));
        }
        let channels = v.shape()[1];
        let expected = shape.param_shapes(channels);
        if expected.len() != params.len()
            || expected
                .iter()
                .zip(params)
                .any(|(s, p)| s.as_slice() != self.value(*p).shape())
        {
            return Err(Error::Shape(format!(
                "density parameters do not match {channels} channels of {shape:?}"
            )));
        }
        let tensors: Vec<&Tensor<T>> = params.iter().map(|p| self.value(*p)).collect();
        let plane = v.len() / (v.shape()[0] * channels);
        let views: Vec<_> = (0..channels).map(|c| shape.view(&tensors, c)).collect();
        let mut out = Vec::with_capacity(v.len());
        for (i, &x) in v.data().iter().enumerate() {
            let c = (i / plane) % channels;
            out.push(nonparametric::noisy_likelihood(&views[c], x));
        }
        let out = Tensor::new(v.shape(), out)?;
        Ok(self.push(
            out,
            Op::ChainLikelihood {
                value,
                shape: shape.clone(),
                params: params.to_vec(),
            },
        ))
    }

    /// Backpropagates from a scalar `loss` and adds parameter gradients to `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called on a variable that was not recorded by a forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backward_node(node, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn backward_node(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input => {}
            Op::Param(id) => store.accumulate(*id, g)?,
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g.zip_map(val(*b), |g, y| g * y));
                acc(grads, *b, g.zip_map(val(*a), |g, x| g * x));
            }
            Op::Div(a, b) => {
                acc(grads, *a, g.zip_map(val(*b), |g, y| g / y));
                let ga = g.zip_map(&node.value, |g, q| g * q);
                acc(grads, *b, ga.zip_map(val(*b), |gq, y| -gq / y));
            }
            Op::Scale(a, f) => acc(grads, *a, g.map(|x| x * *f)),
            Op::Offset(a) => acc(grads, *a, g.clone()),
            Op::Exp(a) => acc(grads, *a, g.zip_map(&node.value, |g, e| g * e)),
            Op::Log(a) => acc(grads, *a, g.zip_map(val(*a), |g, x| g / x)),
            Op::Relu(a) => acc(
                grads,
                *a,
                g.zip_map(val(*a), |g, x| if x > T::zero() { g } else { T::zero() }),
            ),
            Op::Pow(a, e) => {
                let e = *e;
                acc(grads, *a, g.zip_map(val(*a), |g, x| g * e * x.powf(e - T::one())));
            }
            Op::Max {
                input,
                bound,
                passthrough,
            } => {
                let (bound, pass) = (*bound, *passthrough);
                acc(
                    grads,
                    *input,
                    g.zip_map(val(*input), |g, x| {
                        if x >= bound || (pass && g < T::zero()) {
                            g
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::Sum(a) => acc(grads, *a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let n = T::of(val(*a).len() as f64);
                acc(grads, *a, Tensor::full(val(*a).shape(), g.item() / n));
            }
            Op::MeanPlanes(a) => {
                let (_, _, h, w) = val(*a).dims4()?;
                let n = T::of((h * w) as f64);
                let mut out = Vec::with_capacity(val(*a).len());
                for &gp in g.data() {
                    out.extend(std::iter::repeat(gp / n).take(h * w));
                }
                acc(grads, *a, Tensor::new(val(*a).shape(), out)?);
            }
            Op::Conv {
                name,
                input,
                kernel,
                bias,
                stride,
                direction,
                cols,
            } => {
                let cg = conv::conv2d_backward(
                    val(*input),
                    val(*kernel),
                    cols.as_deref(),
                    *stride,
                    *direction,
                    g,
                )
                .map_err(|e| Error::Shape(format!("{name}: {e}")))?;
                acc(grads, *input, cg.input);
                acc(grads, *kernel, cg.kernel);
                acc(grads, *bias, cg.bias);
            }
            Op::Gdn {
                name,
                input,
                beta,
                gamma,
                inverse,
            } => {
                let gg = gdn::gdn_backward(name, val(*input), val(*beta), val(*gamma), *inverse, g)?;
                acc(grads, *input, gg.input);
                acc(grads, *beta, gg.beta);
                acc(grads, *gamma, gg.gamma);
            }
            Op::Blur { input, window } => {
                acc(grads, *input, blur_backward(val(*input), window, g)?);
            }
            Op::AvgPool2(input) => {
                let (_, _, h, w) = val(*input).dims4()?;
                let (_, _, oh, ow) = g.dims4()?;
                let mut out = Tensor::zeros(val(*input).shape());
                let quarter = T::of(0.25);
                for (dst, src) in out.data_mut().chunks_mut(h * w).zip(g.data().chunks(oh * ow)) {
                    for y in 0..oh {
                        for x in 0..ow {
                            let v = src[y * ow + x] * quarter;
                            dst[2 * y * w + 2 * x] = v;
                            dst[2 * y * w + 2 * x + 1] = v;
                            dst[(2 * y + 1) * w + 2 * x] = v;
                            dst[(2 * y + 1) * w + 2 * x + 1] = v;
                        }
                    }
                }
                acc(grads, *input, out);
            }
            Op::Crop(input) => {
                let (_, _, h, w) = val(*input).dims4()?;
                let (_, _, ch, cw) = g.dims4()?;
                let mut out = Tensor::zeros(val(*input).shape());
                for (dst, src) in out.data_mut().chunks_mut(h * w).zip(g.data().chunks(ch * cw)) {
                    for y in 0..ch {
                        dst[y * w..y * w + cw].copy_from_slice(&src[y * cw..(y + 1) * cw]);
                    }
                }
                acc(grads, *input, out);
            }
            Op::GaussianLikelihood { value, scale } => {
                let (x, s) = (val(*value), val(*scale));
                let mut gv = Vec::with_capacity(x.len());
                let mut gs = Vec::with_capacity(x.len());
                for ((&xv, &sv), &gl) in x.data().iter().zip(s.data()).zip(g.data()) {
                    let (_, dx, ds) = gaussian::noisy_likelihood_grad(xv, sv);
                    gv.push(gl * dx);
                    gs.push(gl * ds);
                }
                acc(grads, *value, Tensor::new(x.shape(), gv)?);
                acc(grads, *scale, Tensor::new(s.shape(), gs)?);
            }
            Op::ChainLikelihood {
                value,
                shape,
                params,
            } => {
                let x = val(*value);
                let channels = x.shape()[1];
                let plane = x.len() / (x.shape()[0] * channels);
                let tensors: Vec<&Tensor<T>> = params.iter().map(|p| val(*p)).collect();
                let mut param_grads: Vec<Tensor<T>> =
                    tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
                let mut gv = Vec::with_capacity(x.len());
                let mut scratch = nonparametric::Scratch::new(shape);
                let views: Vec<_> = (0..channels).map(|c| shape.view(&tensors, c)).collect();
                for (i, (&xv, &gl)) in x.data().iter().zip(g.data()).enumerate() {
                    let c = (i / plane) % channels;
                    let dx = nonparametric::noisy_likelihood_backward(
                        &views[c],
                        xv,
                        gl,
                        &mut scratch,
                        &mut param_grads,
                        c,
                    );
                    gv.push(dx);
                }
                acc(grads, *value, Tensor::new(x.shape(), gv)?);
                for (p, pg) in params.iter().zip(param_grads) {
                    acc(grads, *p, pg);
                }
            }
        }
        Ok(())
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn blur_forward<T: Scalar>(x: &Tensor<T>, window: &[T]) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let k = window.len();
    if k == 0 || k > h || k > w {
        return Err(Error::Shape(format!(
            "window of {k} taps does not fit a {h}x{w} plane"
        )));
    }
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut tmp = vec![T::zero(); h * ow];
    for plane in x.data().chunks(h * w) {
        for y in 0..h {
            for xo in 0..ow {
                tmp[y * ow + xo] = (0..k).map(|j| window[j] * plane[y * w + xo + j]).sum();
            }
        }
        for yo in 0..oh {
            for xo in 0..ow {
                out.push((0..k).map(|i| window[i] * tmp[(yo + i) * ow + xo]).sum());
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

fn blur_backward<T: Scalar>(x: &Tensor<T>, window: &[T], g: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    let k = window.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = Tensor::zeros(x.shape());
    let mut tmp = vec![T::zero(); h * ow];
    for (dst, src) in out.data_mut().chunks_mut(h * w).zip(g.data().chunks(oh * ow)) {
        tmp.iter_mut().for_each(|v| *v = T::zero());
        for yo in 0..oh {
            for i in 0..k {
                for xo in 0..ow {
                    tmp[(yo + i) * ow + xo] += window[i] * src[yo * ow + xo];
                }
            }
        }
        for y in 0..h {
            for xo in 0..ow {
                let t = tmp[y * ow + xo];
                for j in 0..k {
                    dst[y * w + xo + j] += window[j] * t;
                }
            }
        }
    }
    Ok(out)
}
