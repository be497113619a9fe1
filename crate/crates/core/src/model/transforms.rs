//! Layer stacks for the analysis, synthesis and hyper transforms.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::graph::{Graph, Var};
use crate::autodiff::param::{ParamId, ParamStore, Reparam};
use crate::autodiff::Direction;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Smallest admissible GDN offset.
pub const BETA_MIN: f64 = 1e-6;

#[derive(Clone, Debug)]
pub enum Layer {
    Conv {
        name: String,
        kernel: ParamId,
        bias: ParamId,
        stride: usize,
        direction: Direction,
    },
    Gdn {
        name: String,
        beta: ParamId,
        gamma: ParamId,
        inverse: bool,
    },
    Relu,
}

/// Adds parameters and returns layers, in order.
pub struct StackBuilder<'a, T: Scalar, R: Rng> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut R,
    prefix: &'static str,
    layers: Vec<Layer>,
}

impl<'a, T: Scalar, R: Rng> StackBuilder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R, prefix: &'static str) -> Self {
        Self {
            store,
            rng,
            prefix,
            layers: Vec::new(),
        }
    }

    /// Convolution from `cin` to `cout` channels. For upsampling layers the
    /// kernel is stored in the layout of the matching downsampling layer.
    pub fn conv(mut self, cin: usize, cout: usize, k: usize, stride: usize, direction: Direction) -> Self {
        let name = format!("{}.conv{}", self.prefix, self.layers.len());
        let (shape, fan_in, bias_len) = match direction {
            Direction::Down => ([cout, cin, k, k], cin * k * k, cout),
            Direction::Up => ([cin, cout, k, k], (cin * k * k).div_ceil(stride * stride), cout),
        };
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
        let kernel = Tensor::from_fn(&shape, |_| T::of(normal.sample(self.rng)));
        let kernel = self.store.add(format!("{name}.kernel"), kernel, Reparam::Identity);
        let bias = self.store.add(format!("{name}.bias"), Tensor::zeros(&[bias_len]), Reparam::Identity);
        self.layers.push(Layer::Conv {
            name,
            kernel,
            bias,
            stride,
            direction,
        });
        self
    }

    pub fn gdn(mut self, channels: usize, inverse: bool) -> Self {
        let name = format!("{}.{}{}", self.prefix, if inverse { "igdn" } else { "gdn" }, self.layers.len());
        let beta = self.store.add(
            format!("{name}.beta"),
            Tensor::full(&[channels], T::one()),
            Reparam::LowerBound(BETA_MIN),
        );
        let gamma = Tensor::from_fn(&[channels, channels], |i| {
            if i / channels == i % channels {
                T::of(0.1)
            } else {
                T::zero()
            }
        });
        let gamma = self.store.add(format!("{name}.gamma"), gamma, Reparam::LowerBound(0.0));
        self.layers.push(Layer::Gdn {
            name,
            beta,
            gamma,
            inverse,
        });
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(Layer::Relu);
        self
    }

    pub fn build(self) -> Vec<Layer> {
        self.layers
    }
}

/// Records a layer stack on the graph.
pub fn run<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, layers: &[Layer], x: Var) -> Result<Var> {
    let mut v = x;
    for layer in layers {
        v = match layer {
            Layer::Conv {
                name,
                kernel,
                bias,
                stride,
                direction,
            } => {
                let k = g.param(store, *kernel);
                let b = g.param(store, *bias);
                g.conv2d(name, v, k, b, *stride, *direction)?
            }
            Layer::Gdn {
                name,
                beta,
                gamma,
                inverse,
            } => {
                let b = g.param(store, *beta);
                let c = g.param(store, *gamma);
                g.gdn(name, v, b, c, *inverse)?
            }
            Layer::Relu => g.relu(v),
        };
    }
    Ok(v)
}

pub fn analysis<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, n: usize, m: usize) -> Vec<Layer> {
    StackBuilder::new(store, rng, "g_a")
        .conv(3, n, 5, 2, Direction::Down)
        .gdn(n, false)
        .conv(n, n, 5, 2, Direction::Down)
        .gdn(n, false)
        .conv(n, n, 5, 2, Direction::Down)
        .gdn(n, false)
        .conv(n, m, 5, 2, Direction::Down)
        .build()
}

pub fn synthesis<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, n: usize, m: usize) -> Vec<Layer> {
    StackBuilder::new(store, rng, "g_s")
        .conv(m, n, 5, 2, Direction::Up)
        .gdn(n, true)
        .conv(n, n, 5, 2, Direction::Up)
        .gdn(n, true)
        .conv(n, n, 5, 2, Direction::Up)
        .gdn(n, true)
        .conv(n, 3, 5, 2, Direction::Up)
        .build()
}

pub fn hyper_analysis<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, n: usize, m: usize) -> Vec<Layer> {
    StackBuilder::new(store, rng, "h_a")
        .conv(m, n, 3, 1, Direction::Down)
        .relu()
        .conv(n, n, 5, 2, Direction::Down)
        .relu()
        .conv(n, n, 5, 2, Direction::Down)
        .build()
}

/// Ends in log-scales; the exponential head is applied by the model.
pub fn hyper_synthesis<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, n: usize, m: usize) -> Vec<Layer> {
    StackBuilder::new(store, rng, "h_s")
        .conv(n, n, 5, 2, Direction::Up)
        .relu()
        .conv(n, n, 5, 2, Direction::Up)
        .relu()
        .conv(n, m, 3, 1, Direction::Down)
        .build()
}
