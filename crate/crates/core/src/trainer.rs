//! Fitting a field to a multi-view image set by minimising the mean squared
//! image error with Adam, one batch of azimuth rows from one view per step.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use ndarray::{Array2, Array3, Axis, Zip};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalio::manifest::DatasetManifest;
use crate::evalio::metrics::psnr_from_mse;
use crate::field::{init_params, save_checkpoint, ArchSpec, EncodingSpec, FieldParams, ForwardTape};
use crate::geometry::{build_sample_grid, RadarPose, RayFan, SamplingConfig};
use crate::renderer::{render_rows, render_rows_backward, FieldGrids, Image};

pub const LOSS_LOG: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "ckpt_final.snf";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Full,
}

impl Profile {
    pub fn arch(self) -> ArchSpec {
        match self {
            Profile::Desk => ArchSpec::DESK,
            Profile::Full => ArchSpec::FULL,
        }
    }

    /// `(l_pos, l_dir)`.
    pub fn frequencies(self) -> (usize, usize) {
        match self {
            Profile::Desk => (6, 4),
            Profile::Full => (10, 4),
        }
    }

    /// Image lattice `(n_a, n_r, n_theta)`.
    pub fn lattice(self) -> (usize, usize, usize) {
        match self {
            Profile::Desk => (64, 64, 16),
            Profile::Full => (128, 128, 32),
        }
    }

    /// Azimuth and range cell size, meters.
    pub fn cell(self) -> f64 {
        match self {
            Profile::Desk => 0.3,
            Profile::Full => 0.15,
        }
    }

    /// Elevation extent covered at the reference range, meters.
    pub const ELEVATION_EXTENT: f64 = 24.0;

    pub fn sampling(self, reference_range: f64) -> Result<SamplingConfig<f64>> {
        let (n_a, n_r, n_theta) = self.lattice();
        let c = self.cell();
        SamplingConfig::centered(n_a, n_r, n_theta, c, c, reference_range, Self::ELEVATION_EXTENT)
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::invalid(format!("unknown profile {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Azimuth rows sampled per step.
    pub rows_per_batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    /// Steps between loss-log rows.
    pub log_interval: usize,
    pub profile: Profile,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            rows_per_batch: 4,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            checkpoint_interval: 0,
            log_interval: 10,
            profile: Profile::Desk,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.rows_per_batch < 1 {
            return Err(Error::invalid("rows_per_batch must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("{name} = {b} must lie in (0, 1)")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.log_interval < 1 {
            return Err(Error::invalid("log_interval must be at least 1"));
        }
        Ok(())
    }
}

/// One training image with its precomputed ray fan.
#[derive(Debug, Clone)]
pub struct View {
    pub pose: RadarPose<f64>,
    pub fan: RayFan<f64>,
    /// Normalised to the dataset range.
    pub image: Image<f64>,
    pub source: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub views: Vec<View>,
    pub config: SamplingConfig<f64>,
}

impl Dataset {
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::invalid("training manifest is empty"));
        }
        let config = manifest.shared_config()?;
        let mut views = Vec::with_capacity(manifest.len());
        for e in &manifest.entries {
            let image = manifest.load_normalised(e)?;
            if image.dim() != (config.n_a, config.n_r) {
                return Err(Error::invalid(format!(
                    "image {} has shape {:?}, config expects {:?}",
                    manifest.image_path(e).display(),
                    image.dim(),
                    (config.n_a, config.n_r)
                )));
            }
            views.push(View {
                pose: e.pose,
                fan: RayFan::new(&e.pose, &config),
                image,
                source: manifest.image_path(e),
            });
        }
        Ok(Self { views, config })
    }

    /// From images already in memory; they must be normalised.
    pub fn from_views(
        items: Vec<(RadarPose<f64>, Image<f64>)>,
        config: SamplingConfig<f64>,
    ) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        config.validate()?;
        let views = items
            .into_iter()
            .enumerate()
            .map(|(n, (pose, image))| {
                if image.dim() != (config.n_a, config.n_r) {
                    return Err(Error::invalid(format!("view {n} has the wrong shape")));
                }
                Ok(View {
                    pose,
                    fan: RayFan::new(&pose, &config),
                    image,
                    source: PathBuf::from(format!("<memory:{n}>")),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { views, config })
    }

    /// Axis-aligned box around every sample point of every view.
    pub fn sample_bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        let c = &self.config;
        for v in &self.views {
            // The lattice is convex in each of (i, j, k) so its corners bound it.
            for &i in &[0, c.n_a - 1] {
                for j in 0..c.n_r {
                    for k in 0..c.n_theta {
                        let p = v.fan.point(i, j, k);
                        lo = lo.inf(&p);
                        hi = hi.sup(&p);
                    }
                }
            }
        }
        (lo, hi)
    }

    pub fn encoding(&self, profile: Profile) -> Result<EncodingSpec<f64>> {
        let (l_pos, l_dir) = profile.frequencies();
        let (lo, hi) = self.sample_bounds();
        let pad = Vector3::repeat(0.5);
        EncodingSpec::new(l_pos, l_dir, lo - pad, hi + pad)
    }
}

/// Mean squared pixel error.
pub fn image_loss(pred: &Image<f64>, gt: &Image<f64>) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::invalid(format!(
            "prediction shape {:?} differs from ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let n = pred.pixels.len().max(1) as f64;
    Ok(pred
        .pixels
        .iter()
        .zip(gt.pixels.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: FieldParams<f64>,
    pub first_moment: FieldParams<f64>,
    pub second_moment: FieldParams<f64>,
    pub step: usize,
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(params: FieldParams<f64>) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            params,
            step: 0,
            loss_history: Vec::new(),
        }
    }

    fn adam_update(&mut self, grads: &FieldParams<f64>, cfg: &TrainConfig) {
        let t = (self.step + 1) as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let lr = cfg.learning_rate * c2.sqrt() / c1;
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.epsilon);
        for (((p, g), m), v) in self
            .params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first_moment.layers)
            .zip(&mut self.second_moment.layers)
        {
            let step = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                if lr != 0.0 {
                    *p -= lr * *m / (v.sqrt() + eps);
                }
            };
            Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(step);
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(step);
        }
    }
}

/// Rows of one view used in a single step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub view: usize,
    pub rows: Vec<usize>,
}

/// Forward pass over a set of azimuth rows. Points are ordered
/// `[row][j][k]`.
pub(crate) fn forward_rows(
    params: &FieldParams<f64>,
    fan: &RayFan<f64>,
    config: &SamplingConfig<f64>,
    rows: &[usize],
) -> Result<(ForwardTape<f64>, FieldGrids<f64>)> {
    let per_row = config.points_per_row();
    let mut points = Vec::with_capacity(rows.len() * per_row);
    for &i in rows {
        fan.extend_row(i, &mut points);
    }
    let dirs: Vec<Vector3<f64>> = (0..points.len())
        .map(|p| fan.directions()[p % config.n_theta])
        .collect();
    let tape = params.forward(&points, &dirs)?;
    let shape = (rows.len(), config.n_r, config.n_theta);
    let grids = FieldGrids {
        sigma: Array3::from_shape_vec(shape, tape.sigma_att.to_vec()).expect("row shape"),
        scatter: Array3::from_shape_vec(shape, tape.scatter.to_vec()).expect("row shape"),
    };
    Ok((tape, grids))
}

/// Loss and parameter gradients of the mean squared error on `rows`.
pub(crate) fn rows_loss_and_grad(
    params: &FieldParams<f64>,
    fan: &RayFan<f64>,
    config: &SamplingConfig<f64>,
    target: &Array2<f64>,
    rows: &[usize],
) -> Result<(f64, FieldParams<f64>)> {
    let (tape, grids) = forward_rows(params, fan, config, rows)?;
    let pred = render_rows(&grids, config.delta_r);
    let gt = target.select(Axis(0), rows);
    let count = pred.len() as f64;
    let diff = &pred - &gt;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    let d_image = diff.mapv(|d| 2.0 * d / count);
    let gg = render_rows_backward(&grids, config.delta_r, d_image.view());
    let n = tape.len();
    let d_sigma = gg.d_sigma.into_shape_with_order(n).expect("flat");
    let d_scatter = gg.d_scatter.into_shape_with_order(n).expect("flat");
    let grads = params.backward(&tape, d_sigma.view(), d_scatter.view())?;
    Ok((loss, grads))
}

/// One forward/backward/Adam step on `batch`; returns the batch loss.
pub fn train_step(
    state: &mut TrainState,
    dataset: &Dataset,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<f64> {
    let view = dataset
        .views
        .get(batch.view)
        .ok_or_else(|| Error::invalid(format!("batch view {} out of range", batch.view)))?;
    if batch.rows.is_empty() || batch.rows.iter().any(|&r| r >= dataset.config.n_a) {
        return Err(Error::invalid("batch rows empty or out of range"));
    }
    let diverged = |state: &TrainState| Error::Diverged {
        step: state.step,
        theta_deg: view.pose.theta_deg(),
        phi_deg: view.pose.phi_deg(),
        param_norms: state.params.layer_norms(),
    };
    let (loss, grads) = match rows_loss_and_grad(
        &state.params,
        &view.fan,
        &dataset.config,
        &view.image.pixels,
        &batch.rows,
    ) {
        Ok(v) => v,
        Err(Error::NonFinite { .. }) => return Err(diverged(state)),
        Err(e) => return Err(e),
    };
    if !loss.is_finite() {
        return Err(diverged(state));
    }
    state.adam_update(&grads, cfg);
    state.step += 1;
    state.loss_history.push(loss);
    Ok(loss)
}

/// Seeded schedule: views are visited in a reshuffled order every cycle and
/// each step draws distinct random rows from its view.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    n_rows: usize,
    rows_per_batch: usize,
}

impl BatchSampler {
    pub fn new(n_views: usize, n_rows: usize, rows_per_batch: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c),
            order: (0..n_views).collect(),
            cursor: n_views,
            n_rows,
            rows_per_batch: rows_per_batch.min(n_rows),
        }
    }

    pub fn next_batch(&mut self) -> Batch {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let view = self.order[self.cursor];
        self.cursor += 1;
        let mut rows = index::sample(&mut self.rng, self.n_rows, self.rows_per_batch).into_vec();
        rows.sort_unstable();
        Batch { view, rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub psnr_train: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FieldParams<f64>,
    pub state: TrainState,
    pub log: Vec<LogRow>,
}

/// Initial parameters for `dataset` under `cfg`.
pub fn initial_params(dataset: &Dataset, cfg: &TrainConfig) -> Result<FieldParams<f64>> {
    init_params(cfg.profile.arch(), dataset.encoding(cfg.profile)?, cfg.seed)
}

/// Full training run. With `out_dir`, writes `loss.csv`, `ckpt_{step}.snf`
/// every `checkpoint_interval` steps and `ckpt_final.snf`.
pub fn train(cfg: &TrainConfig, manifest: &DatasetManifest, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = Dataset::from_manifest(manifest)?;
    train_dataset(cfg, &dataset, initial_params(&dataset, cfg)?, out_dir)
}

pub fn train_dataset(
    cfg: &TrainConfig,
    dataset: &Dataset,
    params: FieldParams<f64>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut sampler = BatchSampler::new(
        dataset.views.len(),
        dataset.config.n_a,
        cfg.rows_per_batch,
        cfg.seed,
    );
    let mut state = TrainState::new(params);
    let mut log = Vec::new();
    let start = Instant::now();
    let mut window = 0.0;
    let mut window_len = 0usize;
    for _ in 0..cfg.iterations {
        let batch = sampler.next_batch();
        let loss = train_step(&mut state, dataset, &batch, cfg)?;
        window += loss;
        window_len += 1;
        if state.step.is_multiple_of(cfg.log_interval) || state.step == cfg.iterations {
            let mean = window / window_len as f64;
            log.push(LogRow {
                step: state.step,
                loss: mean,
                psnr_train: psnr_from_mse(mean),
                elapsed_s: start.elapsed().as_secs_f64(),
            });
            log::debug!("step {} loss {mean:.3e}", state.step);
            window = 0.0;
            window_len = 0;
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_interval > 0 && state.step.is_multiple_of(cfg.checkpoint_interval) {
                save_checkpoint(&state.params, &dir.join(format!("ckpt_{}.snf", state.step)))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&state.params, &dir.join(FINAL_CHECKPOINT))?;
        write_loss_log(&log, &dir.join(LOSS_LOG))?;
    }
    Ok(TrainOutcome {
        params: state.params.clone(),
        state,
        log,
    })
}

pub fn write_loss_log(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut text = String::from("step,loss,psnr_train,elapsed_s\n");
    for r in rows {
        text.push_str(&format!(
            "{},{:e},{:.6},{:.3}\n",
            r.step, r.loss, r.psnr_train, r.elapsed_s
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Renders a full view of the field.
pub fn render_field(
    params: &FieldParams<f64>,
    pose: &RadarPose<f64>,
    config: &SamplingConfig<f64>,
) -> Result<Image<f64>> {
    let grid = build_sample_grid(pose, config)?;
    let grids = crate::field::field_eval_grid(params, &grid)?;
    Ok(Image::new(render_rows(&grids, config.delta_r)).with_meta(*pose, *config))
}

/// Target for [`gradient_check`]: a small lattice and its image.
#[derive(Debug, Clone)]
pub struct GradCheckBatch {
    pub pose: RadarPose<f64>,
    pub config: SamplingConfig<f64>,
    pub target: Image<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares end-to-end analytic gradients of the image loss with central
/// differences (`h = 1e-5`) on up to 200 randomly chosen parameters.
pub fn gradient_check(
    params: &FieldParams<f64>,
    batch: &GradCheckBatch,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-8;
    let fan = RayFan::new(&batch.pose, &batch.config);
    let rows: Vec<usize> = (0..batch.config.n_a).collect();
    let loss = |p: &FieldParams<f64>| -> Result<f64> {
        let (_, grids) = forward_rows(p, &fan, &batch.config, &rows)?;
        let pred = Image::new(render_rows(&grids, batch.config.delta_r));
        image_loss(&pred, &batch.target)
    };
    let (_, grads) = rows_loss_and_grad(params, &fan, &batch.config, &batch.target.pixels, &rows)?;
    let total = params.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, total.min(200)).into_vec();
    picks.sort_unstable();
    let mut max_rel: f64 = 0.0;
    let mut worst = 0;
    let mut probe = params.clone();
    for &idx in &picks {
        let v = params.get(idx);
        probe.set(idx, v + H);
        let up = loss(&probe)?;
        probe.set(idx, v - H);
        let down = loss(&probe)?;
        probe.set(idx, v);
        let fd = (up - down) / (2.0 * H);
        let an = grads.get(idx);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(FLOOR);
        if rel > max_rel {
            max_rel = rel;
            worst = idx;
        }
    }
    Ok(GradCheckReport {
        checked: picks.len(),
        max_rel_error: max_rel,
        worst_index: worst,
        tolerance,
        passed: tolerance > 0.0 && max_rel <= tolerance,
    })
}

/// Analytic gradient of the full-image loss, exposed for structural checks.
pub fn image_loss_gradient(
    params: &FieldParams<f64>,
    batch: &GradCheckBatch,
) -> Result<(f64, FieldParams<f64>)> {
    let fan = RayFan::new(&batch.pose, &batch.config);
    let rows: Vec<usize> = (0..batch.config.n_a).collect();
    rows_loss_and_grad(params, &fan, &batch.config, &batch.target.pixels, &rows)
}

/// Uniform jitter in `[-scale, scale]` added to every bias; moves hidden
/// units off the ReLU kink that zero biases create for dead inputs.
pub fn jitter_biases(params: &mut FieldParams<f64>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.layers {
        layer.bias.mapv_inplace(|b| b + rng.random_range(-scale..=scale));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::field_eval_grid;

    fn tiny_setup(seed: u64) -> (FieldParams<f64>, GradCheckBatch) {
        let pose = RadarPose::at_altitude_degrees(45.0, 20.0, 10_000.0).unwrap();
        let config = SamplingConfig::centered(4, 4, 2, 1.0, 1.0, pose.range, 4.0).unwrap();
        let dataset = Dataset::from_views(
            vec![(pose, Image::new(Array2::zeros((4, 4))))],
            config,
        )
        .unwrap();
        let (l_pos, l_dir) = (2, 1);
        let (lo, hi) = dataset.sample_bounds();
        let enc = EncodingSpec::new(l_pos, l_dir, lo, hi).unwrap();
        let mut params = init_params(ArchSpec::new(2, 8).unwrap(), enc, seed).unwrap();
        jitter_biases(&mut params, 0.2, seed + 1);
        let sg = params.arch.sigma_head();
        params.layers[sg].bias[0] = 0.4;
        let so = params.arch.scatter_out();
        params.layers[so].bias[0] = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let target = Image::new(Array2::from_shape_fn((4, 4), |_| rng.random_range(0.0..1.0)));
        (params, GradCheckBatch { pose, config, target })
    }

    #[test]
    fn image_loss_values() {
        let a = Image::new(Array2::zeros((2, 2)));
        let b = Image::new(Array2::ones((2, 2)));
        assert_eq!(image_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(image_loss(&a, &b).unwrap(), 1.0);
        assert!(image_loss(&a, &Image::new(Array2::zeros((2, 3)))).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: Array2<f64> = Array2::from_shape_fn((5, 7), |_| rng.random_range(0.0..1.0));
        let q = Array2::from_shape_fn((5, 7), |_| rng.random_range(0.0..1.0));
        let mut naive = 0.0;
        for i in 0..5 {
            for j in 0..7 {
                naive += (p[[i, j]] - q[[i, j]]) * (p[[i, j]] - q[[i, j]]);
            }
        }
        naive /= 35.0;
        let got = image_loss(&Image::new(p), &Image::new(q)).unwrap();
        assert!((got - naive).abs() <= 1e-15);
    }

    #[test]
    fn gradient_check_tiny_net() {
        let (params, batch) = tiny_setup(3);
        let report = gradient_check(&params, &batch, 1e-4, 7).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 200);
        let report = gradient_check(&params, &batch, 0.0, 7).unwrap();
        assert!(!report.passed);
    }

    #[test]
    fn closed_gate_blocks_scatter_head_gradients() {
        let (mut params, batch) = tiny_setup(5);
        let (so, sh, sg) = (
            params.arch.scatter_out(),
            params.arch.scatter_hidden(),
            params.arch.sigma_head(),
        );
        let open = image_loss_gradient(&params, &batch).unwrap().1;
        assert!(open.layers[so].bias[0] != 0.0);
        params.layers[sg].weight.fill(0.0);
        params.layers[sg].bias[0] = -1.0;
        let closed = image_loss_gradient(&params, &batch).unwrap().1;
        assert_eq!(closed.layers[so].bias[0], 0.0);
        assert!(closed.layers[sh].bias.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (params, batch) = tiny_setup(9);
        let dataset = Dataset::from_views(vec![(batch.pose, batch.target.clone())], batch.config).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            rows_per_batch: 2,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(params.clone());
        let loss = train_step(&mut state, &dataset, &Batch { view: 0, rows: vec![1, 3] }, &cfg).unwrap();
        assert!(loss > 0.0);
        assert_eq!(state.params, params);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn seeded_runs_repeat() {
        let (params, batch) = tiny_setup(2);
        let dataset = Dataset::from_views(vec![(batch.pose, batch.target.clone())], batch.config).unwrap();
        let cfg = TrainConfig {
            iterations: 20,
            rows_per_batch: 2,
            learning_rate: 1e-2,
            log_interval: 1,
            ..TrainConfig::default()
        };
        let a = train_dataset(&cfg, &dataset, params.clone(), None).unwrap();
        let b = train_dataset(&cfg, &dataset, params, None).unwrap();
        assert_eq!(a.state.loss_history, b.state.loss_history);
        assert_eq!(a.params, b.params);
        assert!(a.state.loss_history.last() < a.state.loss_history.first());
    }

    #[test]
    fn nan_parameters_raise_diverged() {
        let (mut params, batch) = tiny_setup(2);
        params.layers[0].bias[0] = f64::NAN;
        let dataset = Dataset::from_views(vec![(batch.pose, batch.target.clone())], batch.config).unwrap();
        let mut state = TrainState::new(params);
        let err = train_step(&mut state, &dataset, &Batch { view: 0, rows: vec![0] }, &TrainConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 0, .. }));
    }

    #[test]
    fn empty_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(dir.path());
        assert!(matches!(train(&TrainConfig::default(), &m, None), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn render_field_matches_rows_path() {
        let (params, batch) = tiny_setup(4);
        let img = render_field(&params, &batch.pose, &batch.config).unwrap();
        let grid = build_sample_grid(&batch.pose, &batch.config).unwrap();
        let grids = field_eval_grid(&params, &grid).unwrap();
        let direct = crate::renderer::render(&grids, &batch.config).unwrap();
        assert_eq!(img.pixels, direct.pixels);
        let fan = RayFan::new(&batch.pose, &batch.config);
        let (_, rows) = forward_rows(&params, &fan, &batch.config, &[2]).unwrap();
        assert_eq!(rows.sigma.slice(ndarray::s![0, .., ..]), grids.sigma.slice(ndarray::s![2, .., ..]));
    }
}
