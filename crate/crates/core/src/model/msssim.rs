//! Multi-scale structural similarity on the autodiff graph.
//!
//! Images are `[batch, channel, h, w]` in `[0, 1]`. Statistics use an 11-tap
//! Gaussian window (σ = 1.5) without padding. Images too small for five
//! scales use fewer, keeping the smallest scale at least one window wide,
//! and the remaining weights are renormalized.

use crate::autodiff::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// Contrast-structure terms are clamped here before the fractional power.
const CS_MIN: f64 = 1e-4;

pub fn window<T: Scalar>() -> Vec<T> {
    let c = (WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..WINDOW)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| T::of(v / total)).collect()
}

/// Number of scales used for an `h × w` image.
pub fn scale_count(h: usize, w: usize) -> Result<usize> {
    let mut size = h.min(w);
    if size < WINDOW {
        return Err(Error::Shape(format!(
            "MS-SSIM needs images of at least {WINDOW}x{WINDOW}, got {h}x{w}"
        )));
    }
    let mut n = 1;
    while n < WEIGHTS.len() && size / 2 >= WINDOW {
        size /= 2;
        n += 1;
    }
    Ok(n)
}

/// Per-scale exponents for `n` scales, summing to one.
pub fn scale_weights(n: usize) -> Vec<f64> {
    let total: f64 = WEIGHTS[..n].iter().sum();
    WEIGHTS[..n].iter().map(|w| w / total).collect()
}

/// Records MS-SSIM averaged over batch and channels; returns a scalar node.
pub fn ms_ssim<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    let (_, _, h, w) = g.value(x).dims4()?;
    if g.value(x).shape() != g.value(y).shape() {
        return Err(Error::Shape(format!(
            "MS-SSIM inputs differ: {:?} vs {:?}",
            g.value(x).shape(),
            g.value(y).shape()
        )));
    }
    let n = scale_count(h, w)?;
    let weights = scale_weights(n);
    let win = window::<T>();
    let (mut x, mut y) = (x, y);
    let mut product: Option<Var> = None;
    for (j, &weight) in weights.iter().enumerate() {
        let last = j + 1 == n;
        let (cs, lum) = similarity_maps(g, x, y, &win, last)?;
        let map = match lum {
            Some(l) => g.mul(l, cs)?,
            None => cs,
        };
        let m = g.mean_planes(map)?;
        let m = g.clamp_min(m, T::of(CS_MIN));
        let term = g.pow(m, T::of(weight));
        product = Some(match product {
            Some(p) => g.mul(p, term)?,
            None => term,
        });
        if !last {
            x = g.avg_pool2(x)?;
            y = g.avg_pool2(y)?;
        }
    }
    let product = product.expect("at least one scale");
    Ok(g.mean(product))
}

/// Contrast-structure map, plus the luminance map when requested.
fn similarity_maps<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    y: Var,
    win: &[T],
    luminance: bool,
) -> Result<(Var, Option<Var>)> {
    let mu_x = g.blur_valid(x, win)?;
    let mu_y = g.blur_valid(y, win)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let exx = g.blur_valid(xx, win)?;
    let eyy = g.blur_valid(yy, win)?;
    let exy = g.blur_valid(xy, win)?;
    let mxx = g.mul(mu_x, mu_x)?;
    let myy = g.mul(mu_y, mu_y)?;
    let mxy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(exx, mxx)?;
    let var_y = g.sub(eyy, myy)?;
    let cov = g.sub(exy, mxy)?;
    let num = g.scale(cov, T::of(2.0));
    let num = g.offset(num, T::of(C2));
    let den = g.add(var_x, var_y)?;
    let den = g.offset(den, T::of(C2));
    let cs = g.div(num, den)?;
    let lum = if luminance {
        let num = g.scale(mxy, T::of(2.0));
        let num = g.offset(num, T::of(C1));
        let den = g.add(mxx, myy)?;
        let den = g.offset(den, T::of(C1));
        Some(g.div(num, den)?)
    } else {
        None
    };
    Ok((cs, lum))
}

/// MS-SSIM of two images evaluated in `f64`.
pub fn ms_ssim_value(x: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let (a, b) = (g.input(x.clone()), g.input(y.clone()));
    let s = ms_ssim(&mut g, a, b)?;
    Ok(g.value(s).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(seed: u64, size: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[1, 3, size, size], |i| {
            let (y, x) = ((i / size) % size, i % size);
            let base = 0.5 + 0.3 * ((x as f64 * 0.7).sin() * (y as f64 * 0.45).cos());
            (base + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0)
        })
    }

    fn box_blur(t: &Tensor<f64>, radius: usize) -> Tensor<f64> {
        if radius == 0 {
            return t.clone();
        }
        let (b, c, h, w) = t.dims4().unwrap();
        let r = radius as isize;
        Tensor::from_fn(&[b, c, h, w], |i| {
            let plane = i / (h * w);
            let (y, x) = (((i / w) % h) as isize, (i % w) as isize);
            let mut acc = 0.0;
            let mut n = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        acc += t.data()[plane * h * w + yy as usize * w + xx as usize];
                        n += 1.0;
                    }
                }
            }
            acc / n
        })
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = window::<f64>();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[0], w[10]);
        assert!(w[5] > w[4]);
    }

    #[test]
    fn scale_count_shrinks_with_the_image() {
        assert_eq!(scale_count(256, 256).unwrap(), 5);
        assert_eq!(scale_count(176, 200).unwrap(), 5);
        assert_eq!(scale_count(64, 64).unwrap(), 3);
        assert_eq!(scale_count(16, 16).unwrap(), 1);
        assert!(scale_count(10, 64).is_err());
        let w = scale_weights(3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_images_score_one() {
        let x = textured(1, 64);
        assert!((ms_ssim_value(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_falls_as_blur_grows() {
        let x = textured(2, 64);
        let scores: Vec<f64> = (0..4)
            .map(|r| ms_ssim_value(&x, &box_blur(&x, r)).unwrap())
            .collect();
        for pair in scores.windows(2) {
            assert!(pair[0] > pair[1], "{scores:?}");
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = textured(3, 32);
        let b = textured(3, 64);
        assert!(ms_ssim_value(&a, &b).is_err());
    }
}
