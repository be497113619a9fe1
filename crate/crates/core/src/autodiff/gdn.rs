//! Generalized divisive normalization.
//!
//! `out_i = in_i / sqrt(beta_i + sum_j gamma_ij * in_j^2)` at every spatial
//! location; the inverse variant multiplies by the square root instead.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check<T: Scalar>(layer: &str, x: &Tensor<T>, beta: &Tensor<T>, gamma: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = x.dims4().map_err(|e| Error::config(layer, e.to_string()))?;
    if beta.shape() != [c] || gamma.shape() != [c, c] {
        return Err(Error::config(
            layer,
            format!(
                "{c} channels need beta [{c}] and gamma [{c}, {c}], got {:?} and {:?}",
                beta.shape(),
                gamma.shape()
            ),
        ));
    }
    Ok((b, c, h * w))
}

/// Normalizer pool `beta + gamma * x^2`, one value per element.
fn normalizer<T: Scalar>(
    layer: &str,
    x: &Tensor<T>,
    beta: &Tensor<T>,
    gamma: &Tensor<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let (b, c, p) = check(layer, x, beta, gamma)?;
    let squares: Vec<T> = x.data().iter().map(|&v| v * v).collect();
    let mut norm = vec![T::zero(); x.len()];
    for n in 0..b {
        let dst = &mut norm[n * c * p..(n + 1) * c * p];
        for (i, row) in dst.chunks_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = beta.data()[i]);
        }
        T::gemm(
            c, c, p, T::one(), gamma.data(), c as isize, 1, &squares[n * c * p..(n + 1) * c * p],
            p as isize, 1, T::one(), dst, p as isize, 1,
        );
    }
    if let Some(bad) = norm.iter().find(|v| !v.is_finite() || **v <= T::zero()) {
        return Err(Error::Numerical {
            layer: layer.to_string(),
            message: format!("normalizer value {bad}"),
        });
    }
    Ok((squares, norm))
}

pub fn gdn_forward<T: Scalar>(
    layer: &str,
    x: &Tensor<T>,
    beta: &Tensor<T>,
    gamma: &Tensor<T>,
    inverse: bool,
) -> Result<Tensor<T>> {
    let (_, norm) = normalizer(layer, x, beta, gamma)?;
    let out = x
        .data()
        .iter()
        .zip(&norm)
        .map(|(&v, &n)| if inverse { v * n.sqrt() } else { v / n.sqrt() })
        .collect();
    Tensor::new(x.shape(), out)
}

pub struct GdnGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub beta: Tensor<T>,
    pub gamma: Tensor<T>,
}

pub fn gdn_backward<T: Scalar>(
    layer: &str,
    x: &Tensor<T>,
    beta: &Tensor<T>,
    gamma: &Tensor<T>,
    inverse: bool,
    grad_out: &Tensor<T>,
) -> Result<GdnGrads<T>> {
    let (b, c, p) = check(layer, x, beta, gamma)?;
    let (squares, norm) = normalizer(layer, x, beta, gamma)?;
    let half = T::of(0.5);
    let mut g_in = vec![T::zero(); x.len()];
    // dL/d(normalizer)
    let mut q = vec![T::zero(); x.len()];
    for idx in 0..x.len() {
        let (v, n, g) = (x.data()[idx], norm[idx], grad_out.data()[idx]);
        let s = n.sqrt();
        if inverse {
            g_in[idx] = g * s;
            q[idx] = g * v * half / s;
        } else {
            g_in[idx] = g / s;
            q[idx] = -(g * v * half) / (n * s);
        }
    }
    let mut g_beta = vec![T::zero(); c];
    let mut g_gamma = vec![T::zero(); c * c];
    let mut gt_q = vec![T::zero(); c * p];
    for n in 0..b {
        let qn = &q[n * c * p..(n + 1) * c * p];
        for (i, row) in qn.chunks(p).enumerate() {
            g_beta[i] += row.iter().copied().sum::<T>();
        }
        // dgamma += q (x^2)^T
        T::gemm(
            c, p, c, T::one(), qn, p as isize, 1, &squares[n * c * p..(n + 1) * c * p], 1,
            p as isize, T::one(), &mut g_gamma, c as isize, 1,
        );
        // dx_k += 2 x_k (gamma^T q)_k
        T::gemm(
            c, c, p, T::one(), gamma.data(), 1, c as isize, qn, p as isize, 1, T::zero(), &mut gt_q,
            p as isize, 1,
        );
        for j in 0..c * p {
            let idx = n * c * p + j;
            g_in[idx] += T::of(2.0) * x.data()[idx] * gt_q[j];
        }
    }
    Ok(GdnGrads {
        input: Tensor::new(x.shape(), g_in)?,
        beta: Tensor::new(&[c], g_beta)?,
        gamma: Tensor::new(&[c, c], g_gamma)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_normalizer_is_identity() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 2, 2], |i| i as f64 - 5.0);
        let beta = Tensor::full(&[3], 1.0);
        let gamma = Tensor::zeros(&[3, 3]);
        assert_eq!(gdn_forward("gdn", &x, &beta, &gamma, false).unwrap(), x);
        assert_eq!(gdn_forward("igdn", &x, &beta, &gamma, true).unwrap(), x);
    }

    #[test]
    fn single_channel_scalar_formula() {
        let bound = 1e-6;
        let x = Tensor::<f64>::full(&[1, 1, 1, 1], 2.0);
        let y = gdn_forward("gdn", &x, &Tensor::full(&[1], bound), &Tensor::full(&[1, 1], 1.0), false).unwrap();
        assert!((y.item() - 2.0 / (bound + 4.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn inverse_undoes_forward_without_cross_terms() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3, 3], |i| ((i * 37) % 11) as f64 / 3.0 - 1.5);
        let beta = Tensor::new(&[3], vec![0.3, 1.0, 2.5]).unwrap();
        let gamma = Tensor::zeros(&[3, 3]);
        let y = gdn_forward("gdn", &x, &beta, &gamma, false).unwrap();
        let back = gdn_forward("igdn", &y, &beta, &gamma, true).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn inverse_is_only_approximate_with_cross_terms() {
        // IGDN evaluates the normalizer on its own input, so it is not the
        // exact inverse of GDN once gamma is nonzero.
        let x = Tensor::<f64>::full(&[1, 1, 1, 1], 2.0);
        let beta = Tensor::full(&[1], 1.0);
        let gamma = Tensor::full(&[1, 1], 0.1);
        let y = gdn_forward("gdn", &x, &beta, &gamma, false).unwrap();
        let back = gdn_forward("igdn", &y, &beta, &gamma, true).unwrap();
        assert!((back.item() - 2.0).abs() > 1e-3);
    }

    #[test]
    fn wrong_parameter_shapes_are_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
        let err = gdn_forward("g_a.gdn1", &x, &Tensor::zeros(&[3]), &Tensor::zeros(&[2, 2]), false).unwrap_err();
        assert!(err.to_string().contains("g_a.gdn1"));
    }

    #[test]
    fn non_finite_normalizer_is_a_numerical_error() {
        let x = Tensor::<f32>::full(&[1, 1, 1, 1], f32::NAN);
        let err = gdn_forward("gdn", &x, &Tensor::full(&[1], 1.0), &Tensor::full(&[1, 1], 1.0), false).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }
}
