//! Analytic ground-truth scenes: solids over a ground plane, their
//! attenuation and scattering fields, and simulated multi-view datasets.
//!
//! Solids rest on the world `y = 0` ground plane. Scattering happens in a
//! shell of depth [`Scene::shell_depth`] just inside each exposed surface
//! (roof, side walls, uncovered ground), with a Lambertian-like response
//! `coeff * max(0, -n . d)`. Everything inside a solid or below the ground
//! attenuates with [`Scene::sigma_solid`]. Boundaries count as inside.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalio::manifest::{DatasetManifest, ManifestEntry};
use crate::evalio::pfm::write_pfm;
use crate::geometry::{RadarPose, RayFan, SamplingConfig};
use crate::renderer::{render, FieldGrids, Image};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolidKind {
    Cuboid,
    UprightFrustum,
    InvertedFrustum,
}

/// Four-sided solid whose cross-section scales linearly from base to top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolidModel<T> {
    pub kind: SolidKind,
    /// Centre of the base face, world meters.
    pub base_center: Vector3<T>,
    /// Base half-extent along world x.
    pub half_x: T,
    /// Base half-extent along world z.
    pub half_z: T,
    pub height: T,
    /// Top face size relative to the base face.
    pub top_scale: T,
}

impl<T: Real> SolidModel<T> {
    pub fn new(
        kind: SolidKind,
        base_center: Vector3<T>,
        half_x: T,
        half_z: T,
        height: T,
        top_scale: T,
    ) -> Result<Self> {
        let s = Self {
            kind,
            base_center,
            half_x,
            half_z,
            height,
            top_scale,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn cuboid(base_center: Vector3<T>, half_x: T, half_z: T, height: T) -> Result<Self> {
        Self::new(SolidKind::Cuboid, base_center, half_x, half_z, height, T::one())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.height > T::zero() && self.half_x > T::zero() && self.half_z > T::zero()) {
            return Err(Error::invalid("solid height and half-extents must be positive"));
        }
        if self.top_scale <= T::zero() {
            return Err(Error::invalid("solid top_scale must be positive"));
        }
        let ok = match self.kind {
            SolidKind::Cuboid => self.top_scale == T::one(),
            SolidKind::UprightFrustum => self.top_scale < T::one(),
            SolidKind::InvertedFrustum => self.top_scale > T::one(),
        };
        if !ok {
            return Err(Error::invalid(format!(
                "top_scale {} inconsistent with {:?}",
                self.top_scale, self.kind
            )));
        }
        Ok(())
    }

    fn top(&self) -> T {
        self.base_center.y + self.height
    }

    /// Cross-section scale at height `y`, or `None` outside the vertical span.
    fn scale_at(&self, y: T) -> Option<T> {
        if y < self.base_center.y || y > self.top() {
            return None;
        }
        let t = (y - self.base_center.y) / self.height;
        Some(T::one() + (self.top_scale - T::one()) * t)
    }

    pub fn contains(&self, p: &Vector3<T>) -> bool {
        match self.scale_at(p.y) {
            Some(s) => {
                (p.x - self.base_center.x).abs() <= self.half_x * s
                    && (p.z - self.base_center.z).abs() <= self.half_z * s
            }
            None => false,
        }
    }

    fn footprint_contains(&self, x: T, z: T) -> bool {
        (x - self.base_center.x).abs() <= self.half_x && (z - self.base_center.z).abs() <= self.half_z
    }

    /// Nearest exposed face of a contained point: (inward depth, outward normal, face).
    fn nearest_face(&self, p: &Vector3<T>) -> (T, Vector3<T>, Face) {
        let mut best = (self.top() - p.y, Vector3::y(), Face::Roof);
        let c = self.base_center;
        let h = self.height;
        let lean = T::one() - self.top_scale;
        for (axis, half) in [(0usize, self.half_x), (2usize, self.half_z)] {
            for sign in [T::one(), -T::one()] {
                // Wall through the base edge at c[axis] + sign*half, tilting
                // to c[axis] + sign*half*top_scale at the top.
                let mut n = Vector3::zeros();
                n[axis] = sign * h;
                n.y = half * lean;
                let n = n / (h * h + half * half * lean * lean).sqrt();
                let mut edge = c;
                edge[axis] += sign * half;
                let depth = n.dot(&(edge - p));
                if depth < best.0 {
                    best = (depth, n, Face::Wall);
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Face {
    Ground,
    Wall,
    Roof,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane<T> {
    /// Ground occupies `|x|, |z| <= half_extent`, `y <= 0`.
    pub half_extent: T,
}

/// Surface scattering coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterCoeffs<T> {
    pub ground: T,
    pub wall: T,
    pub roof: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T> {
    pub solids: Vec<SolidModel<T>>,
    pub ground: GroundPlane<T>,
    /// Interior attenuation density, 1/m.
    pub sigma_solid: T,
    pub scatter: ScatterCoeffs<T>,
    /// Depth of the scattering shell inside each exposed surface, meters.
    pub shell_depth: T,
}

/// The three synthetic target models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetModel {
    Cuboid,
    UprightFrustum,
    InvertedFrustum,
}

impl TargetModel {
    pub const ALL: [TargetModel; 3] = [
        TargetModel::Cuboid,
        TargetModel::UprightFrustum,
        TargetModel::InvertedFrustum,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TargetModel::Cuboid => "cuboid",
            TargetModel::UprightFrustum => "upright_frustum",
            TargetModel::InvertedFrustum => "inverted_frustum",
        }
    }
}

impl<T: Real> Scene<T> {
    pub const DEFAULT_SIGMA_SOLID: f64 = 2.0;
    pub const DEFAULT_SHELL_DEPTH: f64 = 1.2;

    /// Ground plane only, default coefficients.
    pub fn empty() -> Self {
        Self {
            solids: Vec::new(),
            ground: GroundPlane {
                half_extent: T::of(40.0),
            },
            sigma_solid: T::of(Self::DEFAULT_SIGMA_SOLID),
            scatter: ScatterCoeffs {
                ground: T::of(0.3),
                wall: T::of(1.0),
                roof: T::of(0.6),
            },
            shell_depth: T::of(Self::DEFAULT_SHELL_DEPTH),
        }
    }

    pub fn with_solid(mut self, solid: SolidModel<T>) -> Self {
        self.solids.push(solid);
        self
    }

    /// Desk-scale instance of one of the three target models, centred at the origin.
    pub fn target(model: TargetModel) -> Self {
        let o = Vector3::zeros();
        let solid = match model {
            TargetModel::Cuboid => SolidModel::cuboid(o, T::of(3.0), T::of(3.0), T::of(4.0)),
            TargetModel::UprightFrustum => SolidModel::new(
                SolidKind::UprightFrustum,
                o,
                T::of(4.0),
                T::of(4.0),
                T::of(4.0),
                T::of(0.5),
            ),
            TargetModel::InvertedFrustum => SolidModel::new(
                SolidKind::InvertedFrustum,
                o,
                T::of(2.5),
                T::of(2.5),
                T::of(4.0),
                T::of(1.6),
            ),
        }
        .expect("preset solids are valid");
        Self::empty().with_solid(solid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_solid <= T::zero() || !self.sigma_solid.is_finite_value() {
            return Err(Error::invalid("sigma_solid must be positive"));
        }
        let c = &self.scatter;
        if c.ground < T::zero() || c.wall < T::zero() || c.roof < T::zero() {
            return Err(Error::invalid("scattering coefficients must be non-negative"));
        }
        if self.shell_depth <= T::zero() || self.ground.half_extent <= T::zero() {
            return Err(Error::invalid("shell depth and ground extent must be positive"));
        }
        self.solids.iter().try_for_each(|s| s.validate())
    }

    fn below_ground(&self, p: &Vector3<T>) -> bool {
        p.y <= T::zero()
            && p.x.abs() <= self.ground.half_extent
            && p.z.abs() <= self.ground.half_extent
    }

    /// Target occupancy excluding the ground half-space.
    pub fn solid_occupancy(&self, p: &Vector3<T>) -> bool {
        self.solids.iter().any(|s| s.contains(p))
    }

    /// Inside any solid or below the ground plane.
    pub fn occupancy(&self, p: &Vector3<T>) -> bool {
        self.solid_occupancy(p) || self.below_ground(p)
    }

    pub fn gt_sigma(&self, p: &Vector3<T>) -> T {
        if self.occupancy(p) {
            self.sigma_solid
        } else {
            T::zero()
        }
    }

    /// Nearest exposed surface within the shell, as (outward normal, coefficient).
    fn shell_surface(&self, p: &Vector3<T>) -> Option<(Vector3<T>, T)> {
        let mut best: Option<(T, Vector3<T>, Face)> = None;
        for s in self.solids.iter().filter(|s| s.contains(p)) {
            let cand = s.nearest_face(p);
            if best.is_none_or(|b| cand.0 < b.0) {
                best = Some(cand);
            }
        }
        if self.below_ground(p) && !self.solids.iter().any(|s| s.footprint_contains(p.x, p.z)) {
            let depth = -p.y;
            if best.is_none_or(|b| depth < b.0) {
                best = Some((depth, Vector3::y(), Face::Ground));
            }
        }
        let (depth, n, face) = best?;
        if depth > self.shell_depth {
            return None;
        }
        let coeff = match face {
            Face::Ground => self.scatter.ground,
            Face::Wall => self.scatter.wall,
            Face::Roof => self.scatter.roof,
        };
        Some((n, coeff))
    }

    pub fn gt_scatter(&self, p: &Vector3<T>, direction: &Vector3<T>) -> Result<T> {
        let norm = direction.dot(direction).sqrt();
        if !norm.is_finite_value() || (norm - T::one()).abs() > T::of(1e-9) {
            return Err(Error::invalid(format!(
                "scattering direction must be unit length, got norm {norm}"
            )));
        }
        Ok(self.scatter_unchecked(p, direction))
    }

    fn scatter_unchecked(&self, p: &Vector3<T>, direction: &Vector3<T>) -> T {
        match self.shell_surface(p) {
            Some((n, coeff)) => {
                let c = -n.dot(direction);
                if c > T::zero() {
                    coeff * c
                } else {
                    T::zero()
                }
            }
            None => T::zero(),
        }
    }

    /// Ground-truth field grids on the lattice of `pose`.
    pub fn sample_grids(&self, pose: &RadarPose<T>, config: &SamplingConfig<T>) -> FieldGrids<T> {
        let fan = RayFan::new(pose, config);
        let dirs = fan.directions();
        let shape = (config.n_a, config.n_r, config.n_theta);
        let mut sigma = Array3::zeros(shape);
        let mut scatter = Array3::zeros(shape);
        for ((i, j, k), s) in sigma.indexed_iter_mut() {
            let p = fan.point(i, j, k);
            *s = self.gt_sigma(&p);
            scatter[[i, j, k]] = self.scatter_unchecked(&p, &dirs[k]);
        }
        FieldGrids { sigma, scatter }
    }

    /// Ground-truth image for one pose.
    pub fn render_view(&self, pose: &RadarPose<T>, config: &SamplingConfig<T>) -> Result<Image<T>> {
        config.validate()?;
        let grids = self.sample_grids(pose, config);
        Ok(render(&grids, config)?.with_meta(*pose, *config))
    }
}

/// Renders every pose and writes PFM images plus a manifest into `out_dir`.
///
/// Images hold raw intensities; the manifest records the dataset-wide
/// maximum used for normalisation.
pub fn generate_dataset(
    scene: &Scene<f64>,
    poses: &[RadarPose<f64>],
    config: &SamplingConfig<f64>,
    config_id: &str,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    scene.validate()?;
    config.validate()?;
    for (a, pa) in poses.iter().enumerate() {
        if poses[..a].iter().any(|pb| pb == pa) {
            return Err(Error::invalid(format!(
                "duplicate pose theta={:.6} phi={:.6}",
                pa.theta_deg(),
                pa.phi_deg()
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let images: Vec<Image<f64>> = poses
        .par_iter()
        .map(|pose| scene.render_view(pose, config))
        .collect::<Result<_>>()?;

    let mut manifest = DatasetManifest::new(out_dir);
    manifest.configs.insert(config_id.to_string(), *config);
    let mut max = 0.0f64;
    for (idx, (pose, img)) in poses.iter().zip(&images).enumerate() {
        let rel = format!("images/view_{idx:05}.pfm");
        write_pfm(img, &out_dir.join(&rel))?;
        max = max.max(img.max_value());
        manifest.entries.push(ManifestEntry {
            path: rel.into(),
            pose: *pose,
            config_id: config_id.to_string(),
        });
    }
    manifest.intensity_max = max;
    manifest.save()?;
    Ok(manifest)
}

/// Relative placement of wall and roof returns for a single building.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoverRegime {
    /// `w/h > cot(alpha)`: wall and roof returns partially overlap.
    SwSrPartial,
    /// `w/h = cot(alpha)`: wall and roof returns coincide.
    SwSrCoincide,
    /// `w/h < cot(alpha)`: wall returns extend beyond the roof returns.
    SwExceedsSr,
}

#[derive(Debug, Clone)]
pub struct LayoverReport {
    pub regime: LayoverRegime,
    /// Roof width along the horizontal look direction divided by wall height.
    pub width_over_height: f64,
    pub cot_incidence: f64,
    /// Median ground-only return level in the inspected row.
    pub ground_level: f64,
    /// First range index of the longest shadow run in the centre row.
    pub shadow_start: usize,
    pub shadow_len: usize,
    /// Range index of the brightest pixel in the centre row.
    pub peak_index: usize,
    /// A shadow band of at least two cells sits down-range of the bright return.
    pub consistent: bool,
}

/// Classifies the layover regime of a one-cuboid scene and checks the
/// rendered image for a shadow band behind the target.
pub fn validate_layover(
    scene: &Scene<f64>,
    pose: &RadarPose<f64>,
    config: &SamplingConfig<f64>,
) -> Result<LayoverReport> {
    let solid = match scene.solids.as_slice() {
        [s] if s.kind == SolidKind::Cuboid => *s,
        _ => {
            return Err(Error::invalid(
                "layover validation needs exactly one cuboid in the scene",
            ))
        }
    };
    let (sp, cp) = pose.phi.sin_cos();
    let width = 2.0 * (solid.half_x * sp.abs() + solid.half_z * cp.abs());
    let ratio = width / solid.height;
    let cot = 1.0 / pose.theta.tan();
    let regime = if (ratio - cot).abs() <= 1e-9 {
        LayoverRegime::SwSrCoincide
    } else if ratio > cot {
        LayoverRegime::SwSrPartial
    } else {
        LayoverRegime::SwExceedsSr
    };

    let img = scene.render_view(pose, config)?;
    let mut ground_scene = scene.clone();
    ground_scene.solids.clear();
    let ground = ground_scene.render_view(pose, config)?;

    let row = config.n_a / 2;
    let g_row = ground.pixels.row(row);
    let i_row = img.pixels.row(row);
    let mut lit: Vec<f64> = g_row.iter().copied().filter(|&v| v > 0.0).collect();
    lit.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ground_level = if lit.is_empty() { 0.0 } else { lit[lit.len() / 2] };

    let peak_index = i_row
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
        .0;
    let (mut shadow_start, mut shadow_len) = (0, 0);
    let mut run_start = None;
    for j in 0..=config.n_r {
        let dark = j < config.n_r
            && j > peak_index
            && g_row[j] > 0.0
            && i_row[j] < 0.01 * ground_level;
        match (dark, run_start) {
            (true, None) => run_start = Some(j),
            (false, Some(s)) => {
                if j - s > shadow_len {
                    shadow_start = s;
                    shadow_len = j - s;
                }
                run_start = None;
            }
            _ => {}
        }
    }
    Ok(LayoverReport {
        regime,
        width_over_height: ratio,
        cot_incidence: cot,
        ground_level,
        shadow_start,
        shadow_len,
        peak_index,
        consistent: ground_level > 0.0 && shadow_len >= 2,
    })
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default = "default_sigma")]
    sigma_solid: f64,
    #[serde(default = "default_shell")]
    shell_depth: f64,
    #[serde(default)]
    ground: Option<GroundSection>,
    #[serde(default)]
    scatter: Option<ScatterSection>,
    #[serde(default)]
    solid: Vec<SolidSection>,
}

fn default_sigma() -> f64 {
    Scene::<f64>::DEFAULT_SIGMA_SOLID
}

fn default_shell() -> f64 {
    Scene::<f64>::DEFAULT_SHELL_DEPTH
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct GroundSection {
    half_extent: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ScatterSection {
    ground: f64,
    wall: f64,
    roof: f64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SolidSection {
    kind: SolidKind,
    #[serde(default)]
    center: [f64; 3],
    half_x: f64,
    half_z: f64,
    height: f64,
    #[serde(default)]
    top_scale: Option<f64>,
}

impl Scene<f64> {
    /// Parses a scene description: top-level keys, optional `[ground]` and
    /// `[scatter]` sections, and one `[[solid]]` section per solid.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let file: SceneFile =
            toml::from_str(text).map_err(|e| Error::invalid(format!("scene config: {e}")))?;
        let mut scene = Scene::empty();
        scene.sigma_solid = file.sigma_solid;
        scene.shell_depth = file.shell_depth;
        if let Some(g) = file.ground {
            scene.ground.half_extent = g.half_extent;
        }
        if let Some(c) = file.scatter {
            scene.scatter = ScatterCoeffs {
                ground: c.ground,
                wall: c.wall,
                roof: c.roof,
            };
        }
        for s in file.solid {
            let top = s.top_scale.unwrap_or(1.0);
            scene.solids.push(SolidModel::new(
                s.kind,
                Vector3::from(s.center),
                s.half_x,
                s.half_z,
                s.height,
                top,
            )?);
        }
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn to_config_string(&self) -> String {
        let file = SceneFile {
            sigma_solid: self.sigma_solid,
            shell_depth: self.shell_depth,
            ground: Some(GroundSection {
                half_extent: self.ground.half_extent,
            }),
            scatter: Some(ScatterSection {
                ground: self.scatter.ground,
                wall: self.scatter.wall,
                roof: self.scatter.roof,
            }),
            solid: self
                .solids
                .iter()
                .map(|s| SolidSection {
                    kind: s.kind,
                    center: [s.base_center.x, s.base_center.y, s.base_center.z],
                    half_x: s.half_x,
                    half_z: s.half_z,
                    height: s.height,
                    top_scale: Some(s.top_scale),
                })
                .collect(),
        };
        toml::to_string(&file).expect("scene serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn cuboid_scene() -> Scene<f64> {
        // 10 x 10 x 5 m cuboid at the origin.
        Scene::empty().with_solid(SolidModel::cuboid(Vector3::zeros(), 5.0, 5.0, 5.0).unwrap())
    }

    #[test]
    fn cuboid_occupancy() {
        let s = cuboid_scene();
        assert!(s.occupancy(&Vector3::new(0.0, 2.5, 0.0)));
        assert!(!s.occupancy(&Vector3::new(0.0, 7.0, 0.0)));
        assert!(s.occupancy(&Vector3::new(5.0, 5.0, -5.0)), "closed boundary");
        assert!(!s.occupancy(&Vector3::new(5.0001, 1.0, 0.0)));
        assert!(s.occupancy(&Vector3::new(20.0, -0.5, 0.0)), "below ground");
        assert!(!s.occupancy(&Vector3::new(60.0, -0.5, 0.0)), "outside ground extent");
    }

    #[test]
    fn frustum_cross_section() {
        let f = SolidModel::new(SolidKind::UprightFrustum, Vector3::zeros(), 2.0, 2.0, 4.0, 0.5)
            .unwrap();
        let s = Scene::empty().with_solid(f);
        assert!(!s.occupancy(&Vector3::new(0.6 * 2.0, 4.0, 0.0)));
        assert!(s.occupancy(&Vector3::new(0.45 * 2.0, 4.0, 0.0)));
        assert!(s.occupancy(&Vector3::new(0.74 * 2.0, 2.0, 0.0)));
        assert!(!s.occupancy(&Vector3::new(0.76 * 2.0, 2.0, 0.0)));
    }

    #[test]
    fn solid_validation() {
        let o = Vector3::zeros();
        assert!(SolidModel::new(SolidKind::Cuboid, o, 1.0, 1.0, 1.0, 0.5).is_err());
        assert!(SolidModel::new(SolidKind::UprightFrustum, o, 1.0, 1.0, 1.0, 1.5).is_err());
        assert!(SolidModel::new(SolidKind::InvertedFrustum, o, 1.0, 1.0, 1.0, 0.5).is_err());
        assert!(SolidModel::new(SolidKind::Cuboid, o, 1.0, 1.0, 0.0, 1.0).is_err());
        assert!(SolidModel::new(SolidKind::InvertedFrustum, o, 1.0, 1.0, 1.0, 1.5).is_ok());
    }

    #[test]
    fn gt_sigma_values() {
        let s = cuboid_scene();
        assert_eq!(s.gt_sigma(&Vector3::new(1.0, 1.0, 1.0)), s.sigma_solid);
        assert_eq!(s.gt_sigma(&Vector3::new(1.0, 6.0, 1.0)), 0.0);
        assert_eq!(s.gt_sigma(&Vector3::new(5.0, 3.0, 0.0)), s.sigma_solid);
    }

    #[test]
    fn gt_scatter_lambertian() {
        let s = cuboid_scene();
        let down = Vector3::new(0.0, -1.0, 0.0);
        let ground = Vector3::new(20.0, -0.1, 0.0);
        assert_eq!(s.gt_scatter(&ground, &down).unwrap(), s.scatter.ground);
        // Wall at x = +5 with grazing ray.
        let wall = Vector3::new(4.9, 2.5, 0.0);
        let graze = Vector3::new(0.0, 0.0, -1.0);
        assert_eq!(s.gt_scatter(&wall, &graze).unwrap(), 0.0);
        let facing = Vector3::new(-1.0, 0.0, 0.0);
        assert_eq!(s.gt_scatter(&wall, &facing).unwrap(), s.scatter.wall);
        // Roof at 45 degree incidence along the boresight of a phi = 0 pose.
        let pose = RadarPose::<f64>::from_degrees(45.0, 0.0, 1000.0).unwrap();
        let roof = Vector3::new(0.0, 4.9, 0.0);
        let got = s.gt_scatter(&roof, &pose.boresight()).unwrap();
        assert!((got - s.scatter.roof * FRAC_1_SQRT_2).abs() < 1e-12);
        // Above the roof: empty space.
        assert_eq!(s.gt_scatter(&Vector3::new(0.0, 5.5, 0.0), &down).unwrap(), 0.0);
        // Deep inside: no scattering.
        assert_eq!(s.gt_scatter(&Vector3::new(0.0, 2.5, 0.0), &down).unwrap(), 0.0);
        // Ground under the footprint is covered.
        assert_eq!(s.gt_scatter(&Vector3::new(0.0, -0.1, 0.0), &down).unwrap(), 0.0);
        assert!(s.gt_scatter(&roof, &Vector3::new(0.0, -2.0, 0.0)).is_err());
    }

    #[test]
    fn frustum_wall_normals_tilt() {
        let f = SolidModel::<f64>::new(SolidKind::UprightFrustum, Vector3::zeros(), 4.0, 4.0, 4.0, 0.5)
            .unwrap();
        let (_, n, face) = f.nearest_face(&Vector3::new(2.9, 1.0, 0.0));
        assert_eq!(face, Face::Wall);
        assert!(n.x > 0.0 && n.y > 0.0);
        assert!((n.norm() - 1.0).abs() < 1e-12);
        let inv = SolidModel::new(SolidKind::InvertedFrustum, Vector3::zeros(), 2.0, 2.0, 4.0, 1.5)
            .unwrap();
        let (_, n, _) = inv.nearest_face(&Vector3::new(2.1, 3.0, 0.0));
        assert!(n.x > 0.0 && n.y < 0.0);
    }

    #[test]
    fn scene_config_round_trip() {
        let text = r#"
sigma_solid = 2.5
[scatter]
ground = 0.2
wall = 0.9
roof = 0.5
[[solid]]
kind = "cuboid"
half_x = 3.0
half_z = 2.0
height = 4.0
[[solid]]
kind = "upright_frustum"
center = [8.0, 0.0, 0.0]
half_x = 2.0
half_z = 2.0
height = 3.0
top_scale = 0.5
"#;
        let s = Scene::from_config_str(text).unwrap();
        assert_eq!(s.solids.len(), 2);
        assert_eq!(s.sigma_solid, 2.5);
        let back = Scene::from_config_str(&s.to_config_string()).unwrap();
        assert_eq!(back, s);
        assert!(Scene::from_config_str("bogus = 1").is_err());
        assert!(Scene::from_config_str("[[solid]]\nkind = \"cuboid\"\nhalf_x = 1\nhalf_z = 1\nheight = 1\ntop_scale = 0.3").is_err());
    }

    #[test]
    fn layover_rejects_multi_solid() {
        let s = cuboid_scene()
            .with_solid(SolidModel::cuboid(Vector3::new(9.0, 0.0, 0.0), 1.0, 1.0, 1.0).unwrap());
        let pose = RadarPose::from_degrees(45.0, 0.0, 1000.0).unwrap();
        let cfg = SamplingConfig::centered(8, 8, 4, 0.3, 0.3, 1000.0, 8.0).unwrap();
        assert!(validate_layover(&s, &pose, &cfg).is_err());
    }
}
