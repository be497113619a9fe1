//! Strided 2-d convolution kernels with same-padding.
//!
//! A downsampling convolution with kernel `[out, in, k, k]` maps `in` channels
//! at `H×W` to `out` channels at `ceil(H/s)×ceil(W/s)`. The upsampling
//! convolution is defined as its exact adjoint: with the *same* kernel tensor
//! it maps `out` channels at `h×w` back to `in` channels at `hs×ws`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

/// Output length and leading pad of a same-padded strided window.
pub fn same_geometry(len: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(len);
    (out, total / 2)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    k: usize,
    stride: usize,
    /// Large ("image side") extents.
    h: usize,
    w: usize,
    /// Small ("strided side") extents.
    oh: usize,
    ow: usize,
    pad_y: usize,
    pad_x: usize,
}

impl Geometry {
    fn from_large(channels: usize, k: usize, stride: usize, h: usize, w: usize) -> Self {
        let (oh, pad_y) = same_geometry(h, k, stride);
        let (ow, pad_x) = same_geometry(w, k, stride);
        Self {
            channels,
            k,
            stride,
            h,
            w,
            oh,
            ow,
            pad_y,
            pad_x,
        }
    }

    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source coordinate for output position `o` and tap `t`, if inside.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let v = (o * stride + t) as isize - pad as isize;
        (v >= 0 && (v as usize) < len).then_some(v as usize)
    }

    /// Output positions `lo..hi` (within `out_len`) whose tap `t` lands
    /// inside the source.
    #[inline]
    fn valid(t: usize, stride: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
        let lo = pad.saturating_sub(t).div_ceil(stride);
        let hi = (len + pad).saturating_sub(t).div_ceil(stride).min(out_len);
        (lo.min(hi), hi)
    }
}

fn im2col<T: Scalar>(g: &Geometry, plane: &[T], col: &mut [T]) {
    let p = g.cols();
    for c in 0..g.channels {
        let src = &plane[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let (lo, hi) = Geometry::valid(kx, g.stride, g.pad_x, g.w, g.ow);
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let Some(iy) = Geometry::src(oy, ky, g.stride, g.pad_y, g.h) else {
                        line.fill(T::zero());
                        continue;
                    };
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let first = lo * g.stride + kx - g.pad_x;
                    let srow = &src[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&srow[first..first + hi - lo]);
                    } else {
                        for (v, &x) in line[lo..hi].iter_mut().zip(srow[first..].iter().step_by(g.stride)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &Geometry, col: &[T], plane: &mut [T]) {
    let p = g.cols();
    for c in 0..g.channels {
        let dst = &mut plane[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * p..(row + 1) * p];
                let (lo, hi) = Geometry::valid(kx, g.stride, g.pad_x, g.w, g.ow);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kx - g.pad_x;
                for oy in 0..g.oh {
                    let Some(iy) = Geometry::src(oy, ky, g.stride, g.pad_y, g.h) else {
                        continue;
                    };
                    let drow = &mut dst[iy * g.w + first..(iy + 1) * g.w];
                    let line = &src[oy * g.ow + lo..oy * g.ow + hi];
                    for (d, &v) in drow.iter_mut().step_by(g.stride).zip(line) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn check_kernel<T: Scalar>(
    layer: &str,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    in_channels: usize,
    direction: Direction,
) -> Result<(usize, usize, usize)> {
    let [o, i, k, k2] = kernel.shape() else {
        return Err(Error::config(
            layer,
            format!("kernel must be 4-d, got {:?}", kernel.shape()),
        ));
    };
    let (o, i, k) = (*o, *i, *k);
    if k != *k2 {
        return Err(Error::config(layer, "kernel must be square"));
    }
    let (expect_in, expect_bias) = match direction {
        Direction::Down => (i, o),
        Direction::Up => (o, i),
    };
    if expect_in != in_channels {
        return Err(Error::config(
            layer,
            format!("input has {in_channels} channels, kernel expects {expect_in}"),
        ));
    }
    if bias.shape() != [expect_bias] {
        return Err(Error::config(
            layer,
            format!("bias shape {:?}, expected [{expect_bias}]", bias.shape()),
        ));
    }
    Ok((o, i, k))
}

/// Forward pass. Returns the output and, for downsampling, the unfolded input
/// columns that the backward pass reuses.
pub fn conv2d_forward<T: Scalar>(
    layer: &str,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    direction: Direction,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if stride == 0 {
        return Err(Error::config(layer, "stride must be positive"));
    }
    let (b, c, h, w) = input
        .dims4()
        .map_err(|e| Error::config(layer, e.to_string()))?;
    let (o, i, k) = check_kernel(layer, kernel, bias, c, direction)?;
    match direction {
        Direction::Down => {
            let g = Geometry::from_large(i, k, stride, h, w);
            let (q, p) = (g.rows(), g.cols());
            let mut cols = vec![T::zero(); b * q * p];
            let mut out = vec![T::zero(); b * o * p];
            for n in 0..b {
                let col = &mut cols[n * q * p..(n + 1) * q * p];
                im2col(&g, &input.data()[n * c * h * w..(n + 1) * c * h * w], col);
                let dst = &mut out[n * o * p..(n + 1) * o * p];
                for (oc, row) in dst.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v = bias.data()[oc]);
                }
                T::gemm(
                    o, q, p, T::one(), kernel.data(), q as isize, 1, col, p as isize, 1, T::one(),
                    dst, p as isize, 1,
                );
            }
            Ok((Tensor::new(&[b, o, g.oh, g.ow], out)?, Some(cols)))
        }
        Direction::Up => {
            let g = Geometry::from_large(i, k, stride, h * stride, w * stride);
            debug_assert_eq!((g.oh, g.ow), (h, w));
            let (q, p) = (g.rows(), g.cols());
            let mut col = vec![T::zero(); q * p];
            let mut out = vec![T::zero(); b * i * g.h * g.w];
            for n in 0..b {
                let src = &input.data()[n * c * p..(n + 1) * c * p];
                // col = K^T y
                T::gemm(
                    q, o, p, T::one(), kernel.data(), 1, q as isize, src, p as isize, 1, T::zero(),
                    &mut col, p as isize, 1,
                );
                let dst = &mut out[n * i * g.h * g.w..(n + 1) * i * g.h * g.w];
                for (ic, plane) in dst.chunks_mut(g.h * g.w).enumerate() {
                    plane.iter_mut().for_each(|v| *v = bias.data()[ic]);
                }
                col2im(&g, &col, dst);
            }
            Ok((Tensor::new(&[b, i, g.h, g.w], out)?, None))
        }
    }
}

pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    cols: Option<&[T]>,
    stride: usize,
    direction: Direction,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (b, c, h, w) = input.dims4()?;
    let [o, i, k, _] = kernel.shape() else {
        return Err(Error::Shape("kernel must be 4-d".into()));
    };
    let (o, i, k) = (*o, *i, *k);
    let mut g_kernel = vec![T::zero(); kernel.len()];
    match direction {
        Direction::Down => {
            let g = Geometry::from_large(i, k, stride, h, w);
            let (q, p) = (g.rows(), g.cols());
            let mut g_bias = vec![T::zero(); o];
            let mut g_in = vec![T::zero(); input.len()];
            let mut g_col = vec![T::zero(); q * p];
            let mut local_col;
            for n in 0..b {
                let go = &grad_out.data()[n * o * p..(n + 1) * o * p];
                for (oc, row) in go.chunks(p).enumerate() {
                    g_bias[oc] += row.iter().copied().sum::<T>();
                }
                let col: &[T] = match cols {
                    Some(all) => &all[n * q * p..(n + 1) * q * p],
                    None => {
                        local_col = vec![T::zero(); q * p];
                        im2col(&g, &input.data()[n * c * h * w..(n + 1) * c * h * w], &mut local_col);
                        &local_col
                    }
                };
                // dK += gout col^T
                T::gemm(
                    o, p, q, T::one(), go, p as isize, 1, col, 1, p as isize, T::one(),
                    &mut g_kernel, q as isize, 1,
                );
                // dcol = K^T gout
                T::gemm(
                    q, o, p, T::one(), kernel.data(), 1, q as isize, go, p as isize, 1, T::zero(),
                    &mut g_col, p as isize, 1,
                );
                col2im(&g, &g_col, &mut g_in[n * c * h * w..(n + 1) * c * h * w]);
            }
            Ok(ConvGrads {
                input: Tensor::new(input.shape(), g_in)?,
                kernel: Tensor::new(kernel.shape(), g_kernel)?,
                bias: Tensor::new(&[o], g_bias)?,
            })
        }
        Direction::Up => {
            let (oh, ow) = (h * stride, w * stride);
            let g = Geometry::from_large(i, k, stride, oh, ow);
            let (q, p) = (g.rows(), g.cols());
            let mut g_bias = vec![T::zero(); i];
            let mut g_in = vec![T::zero(); input.len()];
            let mut col = vec![T::zero(); q * p];
            for n in 0..b {
                let go = &grad_out.data()[n * i * oh * ow..(n + 1) * i * oh * ow];
                for (ic, plane) in go.chunks(oh * ow).enumerate() {
                    g_bias[ic] += plane.iter().copied().sum::<T>();
                }
                im2col(&g, go, &mut col);
                let y = &input.data()[n * c * p..(n + 1) * c * p];
                // dy = K col
                T::gemm(
                    o, q, p, T::one(), kernel.data(), q as isize, 1, &col, p as isize, 1, T::zero(),
                    &mut g_in[n * c * p..(n + 1) * c * p], p as isize, 1,
                );
                // dK += y col^T
                T::gemm(
                    o, p, q, T::one(), y, p as isize, 1, &col, 1, p as isize, T::one(),
                    &mut g_kernel, q as isize, 1,
                );
            }
            Ok(ConvGrads {
                input: Tensor::new(input.shape(), g_in)?,
                kernel: Tensor::new(kernel.shape(), g_kernel)?,
                bias: Tensor::new(&[i], g_bias)?,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Sliding-window dot products, written directly from the definition.
    fn naive_down(x: &Tensor<f64>, k: &Tensor<f64>, bias: &Tensor<f64>, s: usize) -> Tensor<f64> {
        let (b, c, h, w) = x.dims4().unwrap();
        let (o, ks) = (k.shape()[0], k.shape()[2]);
        let (oh, py) = same_geometry(h, ks, s);
        let (ow, px) = same_geometry(w, ks, s);
        let mut out = Tensor::zeros(&[b, o, oh, ow]);
        for n in 0..b {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.data()[oc];
                        for ic in 0..c {
                            for ky in 0..ks {
                                for kx in 0..ks {
                                    let iy = (oy * s + ky) as isize - py as isize;
                                    let ix = (ox * s + kx) as isize - px as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x.at4(n, ic, iy as usize, ix as usize)
                                        * k.data()[((oc * c + ic) * ks + ky) * ks + kx];
                                }
                            }
                        }
                        out.data_mut()[((n * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_subsamples() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let (y, _) = conv2d_forward("t", &x, &k, &b, 2, Direction::Down).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn identity_kernel_upsamples_onto_stride_grid() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let (y, _) = conv2d_forward("t", &x, &k, &b, 2, Direction::Up).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        #[rustfmt::skip]
        let expected = [
            1.0, 0.0, 2.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            3.0, 0.0, 4.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(y.data(), &expected);
    }

    #[test]
    fn matches_sliding_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (s, ks, h, w) in [(1, 3, 8, 8), (2, 3, 8, 8), (2, 5, 8, 8), (2, 5, 7, 9), (1, 1, 5, 3)] {
            let x = random(&[2, 3, h, w], &mut rng);
            let k = random(&[5, 3, ks, ks], &mut rng);
            let b = random(&[5], &mut rng);
            let (y, _) = conv2d_forward("t", &x, &k, &b, s, Direction::Down).unwrap();
            let expected = naive_down(&x, &k, &b, s);
            assert_eq!(y.shape(), expected.shape());
            for (a, e) in y.data().iter().zip(expected.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn up_is_adjoint_of_down() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (s, ks) in [(2, 5), (2, 3), (1, 3)] {
            let x = random(&[2, 3, 8, 8], &mut rng);
            let k = random(&[4, 3, ks, ks], &mut rng);
            let zero_o = Tensor::zeros(&[4]);
            let zero_i = Tensor::zeros(&[3]);
            let (dx, _) = conv2d_forward("t", &x, &k, &zero_o, s, Direction::Down).unwrap();
            let y = random(dx.shape(), &mut rng);
            let (uy, _) = conv2d_forward("t", &y, &k, &zero_i, s, Direction::Up).unwrap();
            let lhs = dx.dot(&y);
            let rhs = x.dot(&uy);
            assert!((lhs - rhs).abs() < 1e-5 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn channel_mismatch_names_the_layer() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let err = conv2d_forward("g_a.conv0", &x, &k, &b, 1, Direction::Down).unwrap_err();
        assert!(err.to_string().contains("g_a.conv0"));
    }

    #[test]
    fn same_geometry_divides_extents() {
        assert_eq!(same_geometry(64, 5, 2), (32, 1));
        assert_eq!(same_geometry(4, 3, 1), (4, 1));
        assert_eq!(same_geometry(4, 1, 2), (2, 0));
        assert_eq!(same_geometry(1, 5, 2), (1, 2));
    }
}
