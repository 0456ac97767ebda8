//! Coordinate network mapping a world point to an attenuation coefficient
//! and, together with a viewing direction, to a scattering intensity.
//!
//! Layout: a ReLU trunk of `depth` layers of `width` units fed with the
//! positional encoding of the point, with the encoding concatenated again at
//! layer `depth / 2`. A linear head reads the raw attenuation `sigma_r` from
//! the last trunk feature. The scattering branch consumes that feature
//! concatenated with the direction encoding, passes one ReLU layer of
//! `width / 2` units and a linear output `s_r`. Heads:
//!
//! * `sigma_att = max(0, sigma_r)`
//! * `scatter = tanh(sigma_att) * softplus(s_r)`
//!
//! Weights are stored `[in x out]` and applied as `y = x W + b`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::SampleGrid;
use crate::renderer::FieldGrids;
use crate::scalar::Real;

/// Normalised coordinates are clamped to this magnitude before encoding.
pub const CLAMP_LIMIT: f64 = 1.25;
const UNIT_TOL: f64 = 1e-5;
const CHECKPOINT_MAGIC: &str = "sarfield-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingSpec<T> {
    pub l_pos: usize,
    pub l_dir: usize,
    /// World box mapped onto `[-1, 1]^3`, meters.
    pub bounds_min: Vector3<T>,
    pub bounds_max: Vector3<T>,
}

impl<T: Real> EncodingSpec<T> {
    pub fn new(
        l_pos: usize,
        l_dir: usize,
        bounds_min: Vector3<T>,
        bounds_max: Vector3<T>,
    ) -> Result<Self> {
        let s = Self {
            l_pos,
            l_dir,
            bounds_min,
            bounds_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_pos < 1 {
            return Err(Error::invalid("l_pos must be at least 1"));
        }
        for a in 0..3 {
            let (lo, hi) = (self.bounds_min[a], self.bounds_max[a]);
            if !lo.is_finite_value() || !hi.is_finite_value() || hi <= lo {
                return Err(Error::invalid(format!(
                    "encoding bounds on axis {a} are degenerate: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn pos_width(&self) -> usize {
        6 * self.l_pos
    }

    pub fn dir_width(&self) -> usize {
        6 * self.l_dir
    }

    /// Maps a world point onto the unit cube; returns whether any axis had
    /// to be clamped.
    pub fn normalise(&self, v: &Vector3<T>) -> (Vector3<T>, bool) {
        let two = T::of(2.0);
        let lim = T::of(CLAMP_LIMIT);
        let mut clamped = false;
        let mut out = Vector3::zeros();
        for a in 0..3 {
            let span = self.bounds_max[a] - self.bounds_min[a];
            let mut n = two * (v[a] - self.bounds_min[a]) / span - T::one();
            if n > lim {
                n = lim;
                clamped = true;
            } else if n < -lim {
                n = -lim;
                clamped = true;
            }
            out[a] = n;
        }
        (out, clamped)
    }

    pub fn cast<U: Real>(&self) -> EncodingSpec<U> {
        EncodingSpec {
            l_pos: self.l_pos,
            l_dir: self.l_dir,
            bounds_min: self.bounds_min.map(|v| U::of(v.as_f64())),
            bounds_max: self.bounds_max.map(|v| U::of(v.as_f64())),
        }
    }
}

fn encode_scalar_into<T: Real>(p: T, l: usize, out: &mut [T]) {
    for f in 0..l {
        let w = T::of((1u64 << f) as f64 * PI) * p;
        out[2 * f] = w.sin();
        out[2 * f + 1] = w.cos();
    }
}

/// `[sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)]`.
pub fn positional_encode<T: Real>(p: T, l: usize) -> Result<Vec<T>> {
    if l < 1 {
        return Err(Error::invalid("encoding frequency count must be at least 1"));
    }
    let mut out = vec![T::zero(); 2 * l];
    encode_scalar_into(p, l, &mut out);
    Ok(out)
}

/// Encodes each coordinate of each vector and concatenates them, `6L` values
/// per row.
fn encode_vectors<T: Real>(vs: &[Vector3<T>], l: usize) -> Array2<T> {
    let mut out = Array2::zeros((vs.len(), 6 * l));
    for (row, v) in out.outer_iter_mut().zip(vs) {
        let row = row.into_slice().expect("standard layout");
        for a in 0..3 {
            encode_scalar_into(v[a], l, &mut row[2 * l * a..2 * l * (a + 1)]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchSpec {
    pub depth: usize,
    pub width: usize,
}

impl ArchSpec {
    pub const DESK: ArchSpec = ArchSpec {
        depth: 4,
        width: 128,
    };
    pub const FULL: ArchSpec = ArchSpec {
        depth: 8,
        width: 256,
    };

    pub fn new(depth: usize, width: usize) -> Result<Self> {
        let a = Self { depth, width };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 || self.width < 4 {
            return Err(Error::invalid(format!(
                "network needs depth >= 2 and width >= 4, got {}x{}",
                self.depth, self.width
            )));
        }
        Ok(())
    }

    /// Trunk layer that receives the encoding a second time.
    pub fn skip(&self) -> usize {
        self.depth / 2
    }

    pub fn sigma_head(&self) -> usize {
        self.depth
    }

    pub fn scatter_hidden(&self) -> usize {
        self.depth + 1
    }

    pub fn scatter_out(&self) -> usize {
        self.depth + 2
    }

    pub fn layer_count(&self) -> usize {
        self.depth + 3
    }

    /// `(in, out)` of every layer in storage order.
    pub fn layer_shapes(&self, pos_width: usize, dir_width: usize) -> Vec<(usize, usize)> {
        let w = self.width;
        let mut shapes = Vec::with_capacity(self.layer_count());
        for l in 0..self.depth {
            let input = match l {
                0 => pos_width,
                l if l == self.skip() => w + pos_width,
                _ => w,
            };
            shapes.push((input, w));
        }
        shapes.push((w, 1));
        shapes.push((w + dir_width, w / 2));
        shapes.push((w / 2, 1));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `[in x out]`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn norm(&self) -> f64 {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

/// Network parameters, or a gradient with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams<T> {
    pub arch: ArchSpec,
    pub encoding: EncodingSpec<T>,
    pub layers: Vec<Layer<T>>,
}

/// Scale applied to the attenuation head's initial weights.
pub const INIT_SIGMA_WEIGHT_SCALE: f64 = 0.1;
pub const INIT_SIGMA_BIAS: f64 = -0.05;
pub const INIT_SCATTER_WEIGHT_SCALE: f64 = 0.1;
pub const INIT_SCATTER_BIAS: f64 = -7.5;

/// Deterministic fan-in-scaled uniform initialisation. The attenuation head
/// starts slightly negative so the volume begins almost transparent.
pub fn init_params<T: Real>(
    arch: ArchSpec,
    encoding: EncodingSpec<T>,
    seed: u64,
) -> Result<FieldParams<T>> {
    arch.validate()?;
    encoding.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = arch.layer_shapes(encoding.pos_width(), encoding.dir_width());
    let mut layers = Vec::with_capacity(shapes.len());
    for (l, &(input, output)) in shapes.iter().enumerate() {
        let mut bound = (6.0 / input as f64).sqrt();
        let mut bias = 0.0;
        if l == arch.sigma_head() {
            bound *= INIT_SIGMA_WEIGHT_SCALE;
            bias = INIT_SIGMA_BIAS;
        } else if l == arch.scatter_out() {
            bound *= INIT_SCATTER_WEIGHT_SCALE;
            bias = INIT_SCATTER_BIAS;
        }
        let weight = Array2::from_shape_simple_fn((input, output), || {
            T::of(rng.random_range(-bound..bound))
        });
        layers.push(Layer {
            weight,
            bias: Array1::from_elem(output, T::of(bias)),
        });
    }
    Ok(FieldParams {
        arch,
        encoding,
        layers,
    })
}

impl<T: Real> FieldParams<T> {
    /// All-zero parameters with the layout of `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch,
            encoding: self.encoding,
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.encoding.validate()?;
        let shapes = self
            .arch
            .layer_shapes(self.encoding.pos_width(), self.encoding.dir_width());
        if shapes.len() != self.layers.len() {
            return Err(Error::invalid(format!(
                "expected {} layers, found {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (l, (layer, &(i, o))) in self.layers.iter().zip(&shapes).enumerate() {
            if layer.weight.dim() != (i, o) || layer.bias.len() != o {
                return Err(Error::invalid(format!(
                    "layer {l} has shape {:?}+{}, expected {i}x{o}",
                    layer.weight.dim(),
                    layer.bias.len()
                )));
            }
            if layer
                .weight
                .iter()
                .chain(layer.bias.iter())
                .any(|v| !v.is_finite_value())
            {
                return Err(Error::NonFinite { layer: l });
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            let nw = layer.weight.len();
            if index < nw {
                let cols = layer.weight.ncols();
                return (l, Some((index / cols, index % cols)), 0);
            }
            index -= nw;
            if index < layer.bias.len() {
                return (l, None, index);
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter at a flat index: per layer, weights row-major then biases.
    pub fn get(&self, index: usize) -> T {
        match self.locate(index) {
            (l, Some(rc), _) => self.layers[l].weight[rc],
            (l, None, b) => self.layers[l].bias[b],
        }
    }

    pub fn set(&mut self, index: usize, value: T) {
        match self.locate(index) {
            (l, Some(rc), _) => self.layers[l].weight[rc] = value,
            (l, None, b) => self.layers[l].bias[b] = value,
        }
    }

    /// Layer index owning the flat parameter index.
    pub fn layer_of(&self, index: usize) -> usize {
        self.locate(index).0
    }

    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers.iter().map(Layer::norm).collect()
    }

    pub fn cast<U: Real>(&self) -> FieldParams<U> {
        FieldParams {
            arch: self.arch,
            encoding: self.encoding.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|v| U::of(v.as_f64())),
                    bias: l.bias.mapv(|v| U::of(v.as_f64())),
                })
                .collect(),
        }
    }

    fn encode_points(&self, points: &[Vector3<T>]) -> Array2<T> {
        let mut clamped = 0usize;
        let normalised: Vec<_> = points
            .iter()
            .map(|p| {
                let (n, c) = self.encoding.normalise(p);
                clamped += c as usize;
                n
            })
            .collect();
        if clamped > 0 {
            log::warn!(
                "{clamped} of {} points fell outside the encoding bounds and were clamped",
                points.len()
            );
        }
        encode_vectors(&normalised, self.encoding.l_pos)
    }

    /// Trunk forward pass; returns the post-ReLU output of every layer.
    fn trunk(&self, enc: &Array2<T>) -> Result<Vec<Array2<T>>> {
        let w = self.arch.width;
        let mut outs: Vec<Array2<T>> = Vec::with_capacity(self.arch.depth);
        for l in 0..self.arch.depth {
            let layer = &self.layers[l];
            let mut y = match l {
                0 => enc.dot(&layer.weight),
                l if l == self.arch.skip() => {
                    let mut y = outs[l - 1].dot(&layer.weight.slice(s![..w, ..]));
                    y += &enc.dot(&layer.weight.slice(s![w.., ..]));
                    y
                }
                _ => outs[l - 1].dot(&layer.weight),
            };
            y += &layer.bias;
            y.mapv_inplace(relu);
            check_finite(y.iter(), l)?;
            outs.push(y);
        }
        Ok(outs)
    }

    /// Attenuation only; the scattering branch is skipped.
    pub fn sigma_batch(&self, points: &[Vector3<T>]) -> Result<Array1<T>> {
        let enc = self.encode_points(points);
        let trunk = self.trunk(&enc)?;
        let head = self.arch.sigma_head();
        let raw = linear_out(trunk.last().expect("depth >= 2").view(), &self.layers[head]);
        check_finite(raw.iter(), head)?;
        Ok(raw.mapv(relu))
    }

    /// Batched forward pass retaining the activations needed for
    /// [`FieldParams::backward`].
    pub fn forward(&self, points: &[Vector3<T>], dirs: &[Vector3<T>]) -> Result<ForwardTape<T>> {
        if points.len() != dirs.len() {
            return Err(Error::invalid(format!(
                "{} points but {} directions",
                points.len(),
                dirs.len()
            )));
        }
        let arch = self.arch;
        let w = arch.width;
        let enc_pos = self.encode_points(points);
        let enc_dir = encode_vectors(dirs, self.encoding.l_dir);
        let trunk = self.trunk(&enc_pos)?;
        let feat = trunk.last().expect("depth >= 2");

        let sigma_raw = linear_out(feat.view(), &self.layers[arch.sigma_head()]);
        check_finite(sigma_raw.iter(), arch.sigma_head())?;

        let sh = &self.layers[arch.scatter_hidden()];
        let mut s_hidden = feat.dot(&sh.weight.slice(s![..w, ..]));
        if self.encoding.l_dir > 0 {
            s_hidden += &enc_dir.dot(&sh.weight.slice(s![w.., ..]));
        }
        s_hidden += &sh.bias;
        s_hidden.mapv_inplace(relu);
        check_finite(s_hidden.iter(), arch.scatter_hidden())?;

        let scatter_raw = linear_out(s_hidden.view(), &self.layers[arch.scatter_out()]);
        check_finite(scatter_raw.iter(), arch.scatter_out())?;

        let sigma_att = sigma_raw.mapv(relu);
        let mut scatter = Array1::zeros(points.len());
        Zip::from(&mut scatter)
            .and(&sigma_att)
            .and(&scatter_raw)
            .for_each(|s, &a, &r| *s = a.tanh() * softplus(r));

        Ok(ForwardTape {
            enc_pos,
            enc_dir,
            trunk,
            s_hidden,
            sigma_raw,
            scatter_raw,
            sigma_att,
            scatter,
        })
    }

    /// Exact parameter gradients given upstream gradients with respect to
    /// `sigma_att` and `scatter` at every point of `tape`. The ReLU
    /// subgradient at 0 is taken as 0.
    pub fn backward(
        &self,
        tape: &ForwardTape<T>,
        d_sigma_att: ArrayView1<T>,
        d_scatter: ArrayView1<T>,
    ) -> Result<FieldParams<T>> {
        let n = tape.len();
        if d_sigma_att.len() != n || d_scatter.len() != n {
            return Err(Error::invalid(format!(
                "upstream gradients have lengths {} and {}, expected {n}",
                d_sigma_att.len(),
                d_scatter.len()
            )));
        }
        let arch = self.arch;
        let w = arch.width;
        let mut grads = self.zeros_like();

        let mut d_sraw = Array1::zeros(n);
        let mut d_sigma_raw = Array1::zeros(n);
        for p in 0..n {
            let a = tape.sigma_att[p];
            let r = tape.scatter_raw[p];
            let th = a.tanh();
            d_sraw[p] = d_scatter[p] * th * sigmoid(r);
            if tape.sigma_raw[p] > T::zero() {
                d_sigma_raw[p] =
                    d_sigma_att[p] + d_scatter[p] * softplus(r) * (T::one() - th * th);
            }
        }

        // Scattering output and hidden layer.
        let so = arch.scatter_out();
        let d_sraw_col = d_sraw.view().insert_axis(Axis(1));
        grads.layers[so].weight = tape.s_hidden.t().dot(&d_sraw_col);
        grads.layers[so].bias = d_sraw_col.sum_axis(Axis(0));
        let mut d_sh = d_sraw_col.dot(&self.layers[so].weight.t());
        Zip::from(&mut d_sh)
            .and(&tape.s_hidden)
            .for_each(|g, &h| relu_mask(g, h));

        let sh = arch.scatter_hidden();
        let feat = tape.trunk.last().expect("depth >= 2");
        {
            let gw = &mut grads.layers[sh].weight;
            gw.slice_mut(s![..w, ..]).assign(&feat.t().dot(&d_sh));
            if self.encoding.l_dir > 0 {
                gw.slice_mut(s![w.., ..]).assign(&tape.enc_dir.t().dot(&d_sh));
            }
        }
        grads.layers[sh].bias = d_sh.sum_axis(Axis(0));
        let mut d_h = d_sh.dot(&self.layers[sh].weight.slice(s![..w, ..]).t());

        // Attenuation head.
        let sg = arch.sigma_head();
        let d_sig_col = d_sigma_raw.view().insert_axis(Axis(1));
        grads.layers[sg].weight = feat.t().dot(&d_sig_col);
        grads.layers[sg].bias = d_sig_col.sum_axis(Axis(0));
        d_h += &d_sig_col.dot(&self.layers[sg].weight.t());

        for l in (0..arch.depth).rev() {
            Zip::from(&mut d_h)
                .and(&tape.trunk[l])
                .for_each(|g, &h| relu_mask(g, h));
            let layer = &self.layers[l];
            let gl = &mut grads.layers[l];
            gl.bias = d_h.sum_axis(Axis(0));
            if l == 0 {
                gl.weight = tape.enc_pos.t().dot(&d_h);
                break;
            }
            let input = &tape.trunk[l - 1];
            if l == arch.skip() {
                gl.weight
                    .slice_mut(s![..w, ..])
                    .assign(&input.t().dot(&d_h));
                gl.weight
                    .slice_mut(s![w.., ..])
                    .assign(&tape.enc_pos.t().dot(&d_h));
                d_h = d_h.dot(&layer.weight.slice(s![..w, ..]).t());
            } else {
                gl.weight = input.t().dot(&d_h);
                d_h = d_h.dot(&layer.weight.t());
            }
        }
        Ok(grads)
    }
}

fn check_finite<'a, T: Real>(mut values: impl Iterator<Item = &'a T>, layer: usize) -> Result<()> {
    if values.any(|v| !v.is_finite_value()) {
        return Err(Error::NonFinite { layer });
    }
    Ok(())
}

fn linear_out<T: Real>(x: ArrayView2<T>, layer: &Layer<T>) -> Array1<T> {
    let mut y = x.dot(&layer.weight.column(0));
    y += layer.bias[0];
    y
}

fn relu<T: Real>(v: T) -> T {
    if v < T::zero() {
        T::zero()
    } else {
        v
    }
}

fn relu_mask<T: Real>(g: &mut T, h: T) {
    if h <= T::zero() {
        *g = T::zero();
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Activations from one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape<T> {
    enc_pos: Array2<T>,
    enc_dir: Array2<T>,
    trunk: Vec<Array2<T>>,
    s_hidden: Array2<T>,
    pub sigma_raw: Array1<T>,
    pub scatter_raw: Array1<T>,
    pub sigma_att: Array1<T>,
    pub scatter: Array1<T>,
}

impl<T> ForwardTape<T> {
    pub fn len(&self) -> usize {
        self.sigma_att.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Field values at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput<T> {
    pub sigma_att: T,
    pub scatter: T,
    pub sigma_raw: T,
    pub scatter_raw: T,
}

fn check_unit<T: Real>(d: &Vector3<T>) -> Result<()> {
    let n = d.norm().as_f64();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!("direction has norm {n}, expected 1")));
    }
    Ok(())
}

pub fn field_eval<T: Real>(
    params: &FieldParams<T>,
    v: &Vector3<T>,
    d: &Vector3<T>,
) -> Result<FieldOutput<T>> {
    check_unit(d)?;
    let tape = params.forward(std::slice::from_ref(v), std::slice::from_ref(d))?;
    Ok(FieldOutput {
        sigma_att: tape.sigma_att[0],
        scatter: tape.scatter[0],
        sigma_raw: tape.sigma_raw[0],
        scatter_raw: tape.scatter_raw[0],
    })
}

/// Gradients for a batch of `(v, d)` pairs; runs its own forward pass.
pub fn field_backward<T: Real>(
    params: &FieldParams<T>,
    points: &[Vector3<T>],
    dirs: &[Vector3<T>],
    d_sigma_att: ArrayView1<T>,
    d_scatter: ArrayView1<T>,
) -> Result<FieldParams<T>> {
    let tape = params.forward(points, dirs)?;
    params.backward(&tape, d_sigma_att, d_scatter)
}

/// Evaluates the field at every lattice point with its row direction.
pub fn field_eval_grid<T: Real>(
    params: &FieldParams<T>,
    grid: &SampleGrid<T>,
) -> Result<FieldGrids<T>> {
    let (n_a, n_r, n_theta) = grid.points.dim();
    if grid.directions.len() != n_theta {
        return Err(Error::invalid("grid directions do not match n_theta"));
    }
    for d in &grid.directions {
        check_unit(d)?;
    }
    let per_row = n_r * n_theta;
    let dirs: Vec<_> = (0..per_row).map(|p| grid.directions[p % n_theta]).collect();
    let mut out = FieldGrids::zeros(n_a, n_r, n_theta);
    for i in 0..n_a {
        let row: Vec<_> = grid.points.slice(s![i, .., ..]).iter().copied().collect();
        let tape = params.forward(&row, &dirs)?;
        let sig = tape.sigma_att.into_shape_with_order((n_r, n_theta)).expect("row shape");
        let sc = tape.scatter.into_shape_with_order((n_r, n_theta)).expect("row shape");
        out.sigma.slice_mut(s![i, .., ..]).assign(&sig);
        out.scatter.slice_mut(s![i, .., ..]).assign(&sc);
    }
    Ok(out)
}

fn fmt_vec<T: Real>(v: &Vector3<T>) -> String {
    format!("{} {} {}", v.x.as_f64(), v.y.as_f64(), v.z.as_f64())
}

/// Serialises parameters: a text header ending in `end_header\n`, then all
/// values as little-endian `f64`, per layer weights row-major then biases.
pub fn encode_checkpoint<T: Real>(params: &FieldParams<T>) -> Vec<u8> {
    let shapes: Vec<String> = params
        .layers
        .iter()
        .map(|l| format!("{}x{}", l.weight.nrows(), l.weight.ncols()))
        .collect();
    let enc = &params.encoding;
    let mut out = format!(
        "{CHECKPOINT_MAGIC}\nversion={CHECKPOINT_VERSION}\ndepth={}\nwidth={}\nskip={}\n\
         l_pos={}\nl_dir={}\nbounds_min={}\nbounds_max={}\nlayers={}\nend_header\n",
        params.arch.depth,
        params.arch.width,
        params.arch.skip(),
        enc.l_pos,
        enc.l_dir,
        fmt_vec(&enc.bounds_min),
        fmt_vec(&enc.bounds_max),
        shapes.join(",")
    )
    .into_bytes();
    out.reserve(8 * params.param_count());
    for l in &params.layers {
        for v in l.weight.iter().chain(l.bias.iter()) {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<FieldParams<T>> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(u64, String)> {
        let start = *pos;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(start as u64, "unterminated header line"))?;
        *pos = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| Error::format(start as u64, "header is not UTF-8"))?;
        Ok((start as u64, line.to_string()))
    };
    let (off, magic) = next_line(&mut pos)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(off, format!("bad checkpoint magic {magic:?}")));
    }
    let mut fields = std::collections::BTreeMap::new();
    loop {
        let (off, line) = next_line(&mut pos)?;
        if line == "end_header" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(off, format!("malformed header line {line:?}")))?;
        fields.insert(k.to_string(), (off, v.to_string()));
    }
    let get = |k: &str| -> Result<(u64, String)> {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| Error::format(0, format!("checkpoint header lacks {k}")))
    };
    let int = |k: &str| -> Result<usize> {
        let (off, v) = get(k)?;
        v.parse()
            .map_err(|_| Error::format(off, format!("{k}={v:?} is not an integer")))
    };
    let vec3 = |k: &str| -> Result<Vector3<T>> {
        let (off, v) = get(k)?;
        let parts: Vec<f64> = v
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(off, format!("{k}={v:?} is not numeric")))?;
        if parts.len() != 3 {
            return Err(Error::format(off, format!("{k} needs three values")));
        }
        Ok(Vector3::new(T::of(parts[0]), T::of(parts[1]), T::of(parts[2])))
    };
    let version = int("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::format(get("version")?.0, format!("unsupported version {version}")));
    }
    let arch = ArchSpec::new(int("depth")?, int("width")?)?;
    if int("skip")? != arch.skip() {
        return Err(Error::format(get("skip")?.0, "skip layer does not match depth"));
    }
    let encoding = EncodingSpec::new(int("l_pos")?, int("l_dir")?, vec3("bounds_min")?, vec3("bounds_max")?)?;
    let expected = arch.layer_shapes(encoding.pos_width(), encoding.dir_width());
    let (off, listed) = get("layers")?;
    let listed: Vec<String> = listed.split(',').map(str::to_string).collect();
    let want: Vec<String> = expected.iter().map(|(i, o)| format!("{i}x{o}")).collect();
    if listed != want {
        return Err(Error::format(off, "layer shape list does not match architecture"));
    }
    let total: usize = expected.iter().map(|(i, o)| i * o + o).sum();
    let body = &bytes[pos..];
    if body.len() != 8 * total {
        return Err(Error::format(
            pos as u64,
            format!("expected {} body bytes, found {}", 8 * total, body.len()),
        ));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))));
    let mut layers = Vec::with_capacity(expected.len());
    for &(i, o) in &expected {
        let weight = Array2::from_shape_simple_fn((i, o), || values.next().expect("sized"));
        let bias = Array1::from_shape_simple_fn(o, || values.next().expect("sized"));
        layers.push(Layer { weight, bias });
    }
    let params = FieldParams {
        arch,
        encoding,
        layers,
    };
    params.validate()?;
    Ok(params)
}

/// Writes a checkpoint through a temporary file and a rename.
pub fn save_checkpoint<T: Real>(params: &FieldParams<T>, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&encode_checkpoint(params))
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<FieldParams<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
