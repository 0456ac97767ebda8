//! Image quality metrics on images normalised to `[0, 1]`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::renderer::Image;
use crate::scalar::Real;

fn check_shapes<T>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.pixels.dim() != b.pixels.dim() {
        return Err(Error::invalid(format!(
            "image shapes differ: {:?} vs {:?}",
            a.pixels.dim(),
            b.pixels.dim()
        )));
    }
    Ok(())
}

pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.pixels.len().max(1) as f64;
    let sum = a
        .pixels
        .iter()
        .zip(b.pixels.iter())
        .fold(0.0f64, |acc, (&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            acc + d * d
        });
    Ok(sum / n)
}

/// Peak signal-to-noise ratio with unit peak. Identical images give `+inf`.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 8,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

/// Summed-area table with a zero guard row and column.
fn integral(src: &Array2<f64>) -> Array2<f64> {
    let (h, w) = src.dim();
    let mut out = Array2::zeros((h + 1, w + 1));
    for i in 0..h {
        let mut row = 0.0;
        for j in 0..w {
            row += src[[i, j]];
            out[[i + 1, j + 1]] = out[[i, j + 1]] + row;
        }
    }
    out
}

fn box_sum(t: &Array2<f64>, i: usize, j: usize, win: usize) -> f64 {
    t[[i + win, j + win]] - t[[i, j + win]] - t[[i + win, j]] + t[[i, j]]
}

pub(crate) fn ssim_local(
    mu_a: f64,
    mu_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
        / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// Mean structural similarity over every `window x window` uniform window
/// (stride 1), dynamic range 1.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>, params: SsimParams) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = a.pixels.dim();
    let win = params.window;
    if win == 0 || win > h.min(w) {
        return Err(Error::invalid(format!(
            "ssim window {win} must be in 1..={}",
            h.min(w)
        )));
    }
    let fa = a.pixels.mapv(|v| v.as_f64());
    let fb = b.pixels.mapv(|v| v.as_f64());
    let ta = integral(&fa);
    let tb = integral(&fb);
    let taa = integral(&(&fa * &fa));
    let tbb = integral(&(&fb * &fb));
    let tab = integral(&(&fa * &fb));
    let n = (win * win) as f64;
    let c1 = params.k1 * params.k1;
    let c2 = params.k2 * params.k2;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - win {
        for j in 0..=w - win {
            let mu_a = box_sum(&ta, i, j, win) / n;
            let mu_b = box_sum(&tb, i, j, win) / n;
            let var_a = box_sum(&taa, i, j, win) / n - mu_a * mu_a;
            let var_b = box_sum(&tbb, i, j, win) / n - mu_b * mu_b;
            let cov = box_sum(&tab, i, j, win) / n - mu_a * mu_b;
            total += ssim_local(mu_a, mu_b, var_a, var_b, cov, c1, c2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}
