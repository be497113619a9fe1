use crate::autodiff::param::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Adam moments for every parameter of a [`ParamStore`]. Updates act on the
/// raw (unconstrained) parameter values.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f32> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, learning_rate: f64) -> Self {
        let zeros = |_| -> Vec<Tensor<T>> {
            store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect()
        };
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros(()),
            second: zeros(()),
        }
    }

    /// Rebuilds optimizer state saved with a checkpoint.
    pub fn from_parts(
        learning_rate: f64,
        step: u64,
        first: Vec<Tensor<T>>,
        second: Vec<Tensor<T>>,
    ) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.first, &self.second)
    }

    /// Applies one update using the gradients currently held by `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.first.len() != store.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (nb1, nb2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.epsilon);
        let (c1, c2) = (T::of(c1), T::of(c2));
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = store.get_mut(id);
            if self.first[i].shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: self.first[i].shape().to_vec(),
                });
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let grad = p.grad.data();
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(grad).zip(m).zip(v) {
                *m = b1 * *m + nb1 * g;
                *v = b2 * *v + nb2 * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
