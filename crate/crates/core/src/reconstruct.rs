//! Explicit occupancy from a field: uniform lattice sampling of the
//! attenuation and thresholding, plus PLY export.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::evalio::manifest::DatasetManifest;
use crate::field::FieldParams;
use crate::geometry::{world_to_radar_point, RadarPose, SamplingConfig};
use crate::scenes::Scene;

pub const DEFAULT_THRESHOLD: f64 = 1e-3;
const CHUNK: usize = 4096;

/// Axis-aligned sampling box with `resolution[a]` cells along axis `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeSpec {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub resolution: [usize; 3],
}

impl VolumeSpec {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>, resolution: [usize; 3]) -> Result<Self> {
        let v = Self {
            min,
            max,
            resolution,
        };
        v.validate()?;
        Ok(v)
    }

    /// Resting on the ground: `x, z` in `[-size/2, size/2]`, `y` in `[0, size]`.
    pub fn above_ground(size: f64, resolution: usize) -> Result<Self> {
        let h = size / 2.0;
        Self::new(
            Vector3::new(-h, 0.0, -h),
            Vector3::new(h, size, h),
            [resolution; 3],
        )
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a].is_finite() && self.max[a].is_finite() && self.max[a] > self.min[a]) {
                return Err(Error::invalid(format!("volume axis {a} is degenerate")));
            }
            if self.resolution[a] < 2 {
                return Err(Error::invalid("volume resolution must be at least 2 per axis"));
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn pitch(&self) -> Vector3<f64> {
        let ext = self.max - self.min;
        Vector3::new(
            ext.x / self.resolution[0] as f64,
            ext.y / self.resolution[1] as f64,
            ext.z / self.resolution[2] as f64,
        )
    }

    pub fn center(&self, idx: [usize; 3]) -> Vector3<f64> {
        let p = self.pitch();
        Vector3::new(
            self.min.x + (idx[0] as f64 + 0.5) * p.x,
            self.min.y + (idx[1] as f64 + 0.5) * p.y,
            self.min.z + (idx[2] as f64 + 0.5) * p.z,
        )
    }

    /// Lattice indices in lexicographic `(x, y, z)` order.
    pub fn indices(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, nz] = self.resolution;
        (0..nx).flat_map(move |x| (0..ny).flat_map(move |y| (0..nz).map(move |z| [x, y, z])))
    }
}

/// Anything that yields attenuation at world points.
pub trait AttenuationField {
    fn sigma(&self, points: &[Vector3<f64>]) -> Result<Vec<f64>>;
}

impl AttenuationField for FieldParams<f64> {
    fn sigma(&self, points: &[Vector3<f64>]) -> Result<Vec<f64>> {
        Ok(self.sigma_batch(points)?.to_vec())
    }
}

/// Ground-truth attenuation of a scene presented as a field.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticField<'a>(pub &'a Scene<f64>);

impl AttenuationField for AnalyticField<'_> {
    fn sigma(&self, points: &[Vector3<f64>]) -> Result<Vec<f64>> {
        Ok(points.iter().map(|p| self.0.gt_sigma(p)).collect())
    }
}

/// The part of space whose attenuation a set of views constrains: points in
/// some view's lattice whose ray reaches the ground plane `y = 0` before the
/// lattice's far range edge. Elsewhere attenuation shades nothing the views
/// record, so a trained field is free to put anything there.
#[derive(Debug, Clone)]
pub struct Coverage {
    poses: Vec<RadarPose<f64>>,
    config: SamplingConfig<f64>,
}

impl Coverage {
    pub fn new(poses: &[RadarPose<f64>], config: &SamplingConfig<f64>) -> Result<Self> {
        config.validate()?;
        if poses.is_empty() {
            return Err(Error::invalid("coverage needs at least one pose"));
        }
        Ok(Self {
            poses: poses.to_vec(),
            config: *config,
        })
    }

    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let poses: Vec<_> = manifest.entries.iter().map(|e| e.pose).collect();
        Self::new(&poses, &manifest.shared_config()?)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let c = &self.config;
        let half_a = c.n_a as f64 * c.delta_a / 2.0;
        let half_r = c.n_r as f64 * c.delta_r / 2.0;
        let (e_lo, e_hi) = (c.theta0, c.theta0 + c.n_theta as f64 * c.delta_theta);
        self.poses.iter().any(|pose| {
            let v = world_to_radar_point(p, pose);
            let rho = v.y.hypot(v.z);
            let elev = v.y.atan2(v.z);
            let far = pose.range + half_r;
            if v.x.abs() > half_a || (rho - pose.range).abs() > half_r || elev < e_lo || elev > e_hi {
                return false;
            }
            // World-frame descent per meter of range along this ray.
            let dy = (pose.rotation() * Vector3::new(0.0, elev.sin(), elev.cos())).y;
            p.y <= 0.0 || (dy < 0.0 && rho - p.y / dy <= far)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelModel {
    pub points: Vec<Vector3<f64>>,
    pub sigma: Vec<f64>,
    pub indices: Vec<[usize; 3]>,
    pub spec: VolumeSpec,
}

impl VoxelModel {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Keeps lattice centres whose attenuation exceeds `threshold`.
pub fn extract_voxels(
    field: &impl AttenuationField,
    spec: &VolumeSpec,
    threshold: f64,
) -> Result<VoxelModel> {
    extract_voxels_within(field, spec, threshold, None)
}

/// As [`extract_voxels`], treating centres outside `coverage` as empty.
pub fn extract_voxels_within(
    field: &impl AttenuationField,
    spec: &VolumeSpec,
    threshold: f64,
    coverage: Option<&Coverage>,
) -> Result<VoxelModel> {
    spec.validate()?;
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::invalid(format!("threshold {threshold} must be >= 0")));
    }
    let all: Vec<[usize; 3]> = spec
        .indices()
        .filter(|&i| coverage.is_none_or(|c| c.contains(&spec.center(i))))
        .collect();
    let mut model = VoxelModel {
        points: Vec::new(),
        sigma: Vec::new(),
        indices: Vec::new(),
        spec: *spec,
    };
    for chunk in all.chunks(CHUNK) {
        let pts: Vec<_> = chunk.iter().map(|&i| spec.center(i)).collect();
        let sig = field.sigma(&pts)?;
        for ((idx, p), s) in chunk.iter().zip(pts).zip(sig) {
            if s > threshold {
                model.points.push(p);
                model.sigma.push(s);
                model.indices.push(*idx);
            }
        }
    }
    Ok(model)
}

/// Intersection over union between the model's cells and the cells whose
/// centre the scene marks occupied, on the model's lattice.
pub fn voxel_iou(model: &VoxelModel, scene: &Scene<f64>) -> f64 {
    let extracted: HashSet<[usize; 3]> = model.indices.iter().copied().collect();
    let mut inter = 0usize;
    let mut truth = 0usize;
    for idx in model.spec.indices() {
        if scene.occupancy(&model.spec.center(idx)) {
            truth += 1;
            if extracted.contains(&idx) {
                inter += 1;
            }
        }
    }
    let union = truth + extracted.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// ASCII PLY with `x y z sigma` per vertex.
pub fn export_ply(model: &VoxelModel, path: &Path) -> Result<()> {
    let mut text = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\n\
         property float z\nproperty float sigma\nend_header\n",
        model.len()
    );
    for (p, s) in model.points.iter().zip(&model.sigma) {
        text.push_str(&format!("{:.9} {:.9} {:.9} {:.9}\n", p.x, p.y, p.z, s));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads back the vertices written by [`export_ply`] as `(point, sigma)`.
pub fn read_ply(path: &Path) -> Result<Vec<(Vector3<f64>, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (header, body) = text
        .split_once("end_header\n")
        .ok_or_else(|| Error::format(0, "PLY header not terminated"))?;
    let count: usize = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| Error::format(0, "PLY header lacks a vertex count"))?;
    let mut out = Vec::with_capacity(count);
    for (n, line) in body.lines().enumerate() {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(header.len() as u64, format!("bad vertex line {n}")))?;
        if v.len() != 4 {
            return Err(Error::format(header.len() as u64, format!("vertex line {n} needs 4 values")));
        }
        out.push((Vector3::new(v[0], v[1], v[2]), v[3]));
    }
    if out.len() != count {
        return Err(Error::format(
            header.len() as u64,
            format!("header declares {count} vertices, body has {}", out.len()),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_params, ArchSpec, EncodingSpec, Layer};
    use crate::scenes::SolidModel;

    fn ten_meter_cuboid() -> Scene<f64> {
        Scene::empty().with_solid(SolidModel::cuboid(Vector3::zeros(), 5.0, 5.0, 10.0).unwrap())
    }

    #[test]
    fn analytic_field_reproduces_oracle() {
        let scene = ten_meter_cuboid();
        let spec = VolumeSpec::above_ground(20.0, 64).unwrap();
        let model = extract_voxels(&AnalyticField(&scene), &spec, DEFAULT_THRESHOLD).unwrap();
        let expected: Vec<[usize; 3]> = spec
            .indices()
            .filter(|&i| scene.occupancy(&spec.center(i)))
            .collect();
        assert_eq!(model.indices, expected);
        assert!(!model.is_empty());
        assert_eq!(voxel_iou(&model, &scene), 1.0);
        let none = extract_voxels(&AnalyticField(&scene), &spec, f64::INFINITY).unwrap();
        assert!(none.is_empty());
        assert_eq!(voxel_iou(&none, &scene), 0.0);
        assert!(extract_voxels(&AnalyticField(&scene), &spec, -1.0).is_err());
    }

    #[test]
    fn coverage_holds_ground_backed_lattice_points_only() {
        use crate::geometry::build_sample_grid;
        let pose = RadarPose::at_altitude_degrees(45.0, 30.0, 10_000.0).unwrap();
        let cfg = SamplingConfig::centered(16, 16, 8, 0.5, 0.5, pose.range, 24.0).unwrap();
        let cov = Coverage::new(&[pose], &cfg).unwrap();
        let grid = build_sample_grid(&pose, &cfg).unwrap();
        let (na, nr, nt) = grid.points.dim();
        let mut backed = 0;
        for i in 0..na {
            for k in 0..nt {
                for j in 0..nr {
                    let p = grid.points[[i, j, k]];
                    // A later point on the same ray at or below ground backs this one.
                    if (j + 1..nr).any(|jj| grid.points[[i, jj, k]].y <= 0.0) {
                        assert!(cov.contains(&p), "{p:?}");
                        backed += 1;
                    }
                }
            }
        }
        assert!(backed > 0);
        assert!(!cov.contains(&Vector3::new(0.0, 9.0, 0.0)));
        assert!(!cov.contains(&Vector3::new(0.0, 60.0, 0.0)));
        assert!(!cov.contains(&Vector3::new(50.0, 0.0, 0.0)));
        assert!(Coverage::new(&[], &cfg).is_err());

        let scene = Scene::empty().with_solid(SolidModel::cuboid(Vector3::zeros(), 1.5, 1.5, 2.0).unwrap());
        let spec = VolumeSpec::above_ground(20.0, 32).unwrap();
        let field = AnalyticField(&scene);
        let inside = extract_voxels_within(&field, &spec, DEFAULT_THRESHOLD, Some(&cov)).unwrap();
        let all = extract_voxels(&field, &spec, DEFAULT_THRESHOLD).unwrap();
        assert!(inside.indices.iter().all(|i| all.indices.contains(i)));
        assert_eq!(voxel_iou(&inside, &scene), 1.0);
    }

    #[test]
    fn zero_head_extracts_nothing() {
        let enc = EncodingSpec::new(2, 1, Vector3::repeat(-10.0), Vector3::repeat(10.0)).unwrap();
        let mut p: FieldParams<f64> = init_params(ArchSpec::new(2, 8).unwrap(), enc, 1).unwrap();
        let sg = p.arch.sigma_head();
        p.layers[sg] = Layer::zeros(8, 1);
        let spec = VolumeSpec::above_ground(20.0, 8).unwrap();
        assert!(extract_voxels(&p, &spec, 0.0).unwrap().is_empty());
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = VolumeSpec::above_ground(20.0, 4).unwrap();
        let empty = VoxelModel {
            points: vec![],
            sigma: vec![],
            indices: vec![],
            spec,
        };
        let path = dir.path().join("e.ply");
        export_ply(&empty, &path).unwrap();
        assert!(fs::read_to_string(&path).unwrap().contains("element vertex 0\n"));
        assert!(read_ply(&path).unwrap().is_empty());

        let model = VoxelModel {
            points: vec![
                Vector3::new(0.1234567, 2.5, -3.25),
                Vector3::new(-9.999999, 0.000001, 7.0),
                Vector3::new(1.0, 1.0, 1.0),
            ],
            sigma: vec![0.5, 2.0, 1e-3],
            indices: vec![[0, 0, 0], [1, 1, 1], [2, 2, 2]],
            spec,
        };
        let path = dir.path().join("m.ply");
        export_ply(&model, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("element vertex 3\n"));
        assert_eq!(text.split("end_header\n").nth(1).unwrap().lines().count(), 3);
        for ((p, s), (q, t)) in read_ply(&path).unwrap().iter().zip(model.points.iter().zip(&model.sigma)) {
            assert!((p - q).norm() < 1e-6);
            assert!((s - t).abs() < 1e-6);
        }
    }
}
