use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Maps the stored (unconstrained) value of a parameter to the value seen by
/// the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reparam {
    Identity,
    /// `softplus(raw)`, strictly positive.
    Softplus,
    /// `tanh(raw)`, inside `(-1, 1)`.
    Tanh,
    /// `max(raw, bound)`. Gradients that would move a clamped value back
    /// above the bound are passed through, so a parameter cannot get stuck.
    LowerBound(f64),
}

impl Reparam {
    pub fn apply<T: Scalar>(self, raw: T) -> T {
        match self {
            Reparam::Identity => raw,
            Reparam::Softplus => softplus(raw),
            Reparam::Tanh => raw.tanh(),
            Reparam::LowerBound(bound) => raw.max(T::of(bound)),
        }
    }

    /// Chain rule from the effective value back to the raw one.
    pub fn backprop<T: Scalar>(self, raw: T, grad: T) -> T {
        match self {
            Reparam::Identity => grad,
            Reparam::Softplus => grad * sigmoid(raw),
            Reparam::Tanh => {
                let t = raw.tanh();
                grad * (T::one() - t * t)
            }
            Reparam::LowerBound(bound) => {
                if raw >= T::of(bound) || grad < T::zero() {
                    grad
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Raw value whose effective value is `effective`.
    pub fn inverse(self, effective: f64) -> f64 {
        match self {
            Reparam::Identity => effective,
            Reparam::Softplus => effective.exp_m1().ln(),
            Reparam::Tanh => effective.atanh(),
            Reparam::LowerBound(bound) => effective.max(bound),
        }
    }

    pub fn tag(self) -> (u8, f64) {
        match self {
            Reparam::Identity => (0, 0.0),
            Reparam::Softplus => (1, 0.0),
            Reparam::Tanh => (2, 0.0),
            Reparam::LowerBound(b) => (3, b),
        }
    }

    pub fn from_tag(tag: u8, bound: f64) -> Option<Self> {
        match tag {
            0 => Some(Reparam::Identity),
            1 => Some(Reparam::Softplus),
            2 => Some(Reparam::Tanh),
            3 => Some(Reparam::LowerBound(bound)),
            _ => None,
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Scalar>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T: Scalar = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub reparam: Reparam,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, reparam: Reparam) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            reparam,
        }
    }

    pub fn effective(&self) -> Tensor<T> {
        let r = self.reparam;
        self.value.map(|v| r.apply(v))
    }
}

/// Owns every trainable parameter of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Scalar = f32> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, reparam: Reparam) -> ParamId {
        self.params.push(Parameter::new(name, value, reparam));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn effective(&self, id: ParamId) -> Tensor<T> {
        self.params[id.0].effective()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds the gradient with respect to the effective value of `id`.
    pub fn accumulate(&mut self, id: ParamId, effective_grad: &Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != effective_grad.shape() {
            return Err(Error::ShapeMismatch {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: effective_grad.shape().to_vec(),
            });
        }
        let r = p.reparam;
        for ((g, &raw), &eg) in p
            .grad
            .data_mut()
            .iter_mut()
            .zip(p.value.data())
            .zip(effective_grad.data())
        {
            *g += r.backprop(raw, eg);
        }
        Ok(())
    }

    /// Converts every parameter to another element type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    reparam: p.reparam,
                })
                .collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
