//! Incoherent SAR voxel rendering.
//!
//! Each pixel `(i, j)` sums the scattering of every elevation sample `k` at
//! that azimuth/range cell, attenuated by the extinction accumulated over the
//! range cells strictly in front of it:
//!
//! ```text
//! I[i,j] = sum_k S[i,j,k] * exp(-dr * sum_{j' < j} sigma[i,j',k])
//! ```
//!
//! `sigma >= 0` is an extinction density (1/m). A voxel never attenuates its
//! own return.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};

use crate::error::{Error, Result};
use crate::geometry::{RadarPose, SamplingConfig};
use crate::scalar::Real;

/// Attenuation and scattering sampled on a lattice, `[n_a][n_r][n_theta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrids<T> {
    pub sigma: Array3<T>,
    pub scatter: Array3<T>,
}

impl<T: Real> FieldGrids<T> {
    pub fn new(sigma: Array3<T>, scatter: Array3<T>) -> Result<Self> {
        let g = Self { sigma, scatter };
        g.validate()?;
        Ok(g)
    }

    pub fn zeros(n_a: usize, n_r: usize, n_theta: usize) -> Self {
        Self {
            sigma: Array3::zeros((n_a, n_r, n_theta)),
            scatter: Array3::zeros((n_a, n_r, n_theta)),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.sigma.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.dim() != self.scatter.dim() {
            return Err(Error::invalid(format!(
                "sigma shape {:?} differs from scatter shape {:?}",
                self.sigma.dim(),
                self.scatter.dim()
            )));
        }
        for (name, arr) in [("sigma", &self.sigma), ("scatter", &self.scatter)] {
            for &v in arr.iter() {
                if !v.is_finite_value() {
                    return Err(Error::invalid(format!("{name} contains a non-finite value")));
                }
                if v < T::zero() {
                    return Err(Error::invalid(format!("{name} contains a negative value")));
                }
            }
        }
        Ok(())
    }

    fn check_config(&self, config: &SamplingConfig<T>) -> Result<()> {
        let want = (config.n_a, config.n_r, config.n_theta);
        if self.shape() != want {
            return Err(Error::invalid(format!(
                "grid shape {:?} does not match sampling config {want:?}",
                self.shape()
            )));
        }
        Ok(())
    }
}

/// Pixel provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMeta<T> {
    pub pose: RadarPose<T>,
    pub config: SamplingConfig<T>,
}

/// Rendered or loaded SAR intensity image, `[n_a][n_r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub pixels: Array2<T>,
    pub meta: Option<ImageMeta<T>>,
}

impl<T: Real> Image<T> {
    pub fn new(pixels: Array2<T>) -> Self {
        Self { pixels, meta: None }
    }

    pub fn with_meta(mut self, pose: RadarPose<T>, config: SamplingConfig<T>) -> Self {
        self.meta = Some(ImageMeta { pose, config });
        self
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn max_value(&self) -> T {
        self.pixels
            .iter()
            .fold(T::zero(), |m, &v| if v > m { v } else { m })
    }

    pub fn mean_value(&self) -> T {
        let n = T::from_usize(self.pixels.len().max(1)).unwrap();
        self.pixels.iter().fold(T::zero(), |acc, &v| acc + v) / n
    }

    /// Element-wise scale.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            pixels: self.pixels.mapv(|v| v * factor),
            meta: self.meta,
        }
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            pixels: self.pixels.mapv(|v| U::of(v.as_f64())),
            meta: None,
        }
    }
}

/// Strictly upper triangular ones matrix, `tri[j', j] = 1` for `j' < j`.
fn strict_upper_ones<T: Real>(n: usize) -> Array2<T> {
    Array2::from_shape_fn((n, n), |(r, c)| if r < c { T::one() } else { T::zero() })
}

/// Cumulative attenuation factors `E[i,j,k] = exp(-dr * sum_{j'<j} sigma[i,j',k])`.
///
/// Each elevation slice is formed as the matrix product `sigma(k) * TRI`.
fn attenuation<T: Real>(sigma: ArrayView3<T>, delta_r: T) -> Array3<T> {
    let (n_a, n_r, n_theta) = sigma.dim();
    let tri = strict_upper_ones::<T>(n_r);
    let mut out = Array3::zeros((n_a, n_r, n_theta));
    for k in 0..n_theta {
        let slice: ArrayView2<T> = sigma.slice(s![.., .., k]);
        let prefix = slice.dot(&tri);
        Zip::from(out.slice_mut(s![.., .., k]))
            .and(&prefix)
            .for_each(|e, &p| *e = (-(delta_r * p)).exp());
    }
    out
}

/// Renders without config shape checks; rows are independent so any number
/// of azimuth rows may be passed.
pub(crate) fn render_rows<T: Real>(grids: &FieldGrids<T>, delta_r: T) -> Array2<T> {
    let (n_a, n_r, n_theta) = grids.shape();
    let e = attenuation(grids.sigma.view(), delta_r);
    let mut img = Array2::zeros((n_a, n_r));
    // Fixed ascending accumulation over k.
    for k in 0..n_theta {
        Zip::from(&mut img)
            .and(grids.scatter.slice(s![.., .., k]))
            .and(e.slice(s![.., .., k]))
            .for_each(|p, &sc, &att| *p += sc * att);
    }
    img
}

/// Vectorised renderer.
pub fn render<T: Real>(grids: &FieldGrids<T>, config: &SamplingConfig<T>) -> Result<Image<T>> {
    grids.validate()?;
    grids.check_config(config)?;
    Ok(Image::new(render_rows(grids, config.delta_r)))
}

/// Literal triple loop with the prefix sum rebuilt for every sample. Slow;
/// used as the oracle for [`render`].
pub fn render_bruteforce<T: Real>(
    grids: &FieldGrids<T>,
    config: &SamplingConfig<T>,
) -> Result<Image<T>> {
    grids.validate()?;
    grids.check_config(config)?;
    let (n_a, n_r, n_theta) = grids.shape();
    let mut img = Array2::zeros((n_a, n_r));
    for i in 0..n_a {
        for j in 0..n_r {
            let mut acc = T::zero();
            for k in 0..n_theta {
                let mut prefix = T::zero();
                for jp in 0..j {
                    prefix += grids.sigma[[i, jp, k]];
                }
                acc += grids.scatter[[i, j, k]] * (-(config.delta_r * prefix)).exp();
            }
            img[[i, j]] = acc;
        }
    }
    Ok(Image::new(img))
}

/// Gradients of a scalar loss with respect to the rendered field grids.
#[derive(Debug, Clone)]
pub struct GridGradients<T> {
    pub d_sigma: Array3<T>,
    pub d_scatter: Array3<T>,
}

pub(crate) fn render_rows_backward<T: Real>(
    grids: &FieldGrids<T>,
    delta_r: T,
    d_image: ArrayView2<T>,
) -> GridGradients<T> {
    let (n_a, n_r, n_theta) = grids.shape();
    let e = attenuation(grids.sigma.view(), delta_r);
    let mut d_scatter = Array3::zeros((n_a, n_r, n_theta));
    let mut d_sigma = Array3::zeros((n_a, n_r, n_theta));
    for i in 0..n_a {
        for k in 0..n_theta {
            // dI[j]/dsigma[j'] = -dr * S[j] * E[j] for every j > j'.
            let mut suffix = T::zero();
            for j in (0..n_r).rev() {
                d_sigma[[i, j, k]] = -delta_r * suffix;
                let g = d_image[[i, j]] * e[[i, j, k]];
                d_scatter[[i, j, k]] = g;
                suffix += g * grids.scatter[[i, j, k]];
            }
        }
    }
    GridGradients { d_sigma, d_scatter }
}

/// Exact backward pass of [`render`] for an upstream pixel gradient.
pub fn render_backward<T: Real>(
    grids: &FieldGrids<T>,
    config: &SamplingConfig<T>,
    d_image: &Array2<T>,
) -> Result<GridGradients<T>> {
    grids.validate()?;
    grids.check_config(config)?;
    if d_image.dim() != (config.n_a, config.n_r) {
        return Err(Error::invalid(format!(
            "upstream gradient shape {:?} does not match image {:?}",
            d_image.dim(),
            (config.n_a, config.n_r)
        )));
    }
    if d_image.iter().any(|v| !v.is_finite_value()) {
        return Err(Error::invalid("upstream gradient contains a non-finite value"));
    }
    Ok(render_rows_backward(grids, config.delta_r, d_image.view()))
}

/// Sum of scatter over elevation; the exact image when `sigma == 0`.
pub fn scatter_projection<T: Real>(grids: &FieldGrids<T>) -> Array2<T> {
    grids.scatter.sum_axis(Axis(2))
}
