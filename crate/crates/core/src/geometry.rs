//! Radar-local frames and the ray lattice a pose casts through the scene.
//!
//! Radar-frame coordinates are ordered `(h, v, k)`: `h` is the platform
//! motion direction, `k` the boresight (slant range) direction and `v` the
//! slant off-nadir direction completing the frame. The world frame has its
//! origin at the scene centre with `+Y` pointing up; the ground plane is
//! `y = 0`.
//!
//! Formula indices are 1-based while storage is 0-based:
//! `storage_index = formula_index - 1` for `i` (azimuth), `j` (range) and
//! `k` (elevation). Elevation rays use the voxel-centre offset
//! `(k - 1/2) * delta_theta` measured from the lower scan bound.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// One observation configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPose<T> {
    /// Incidence angle, radians, in `(0, pi/2)`.
    pub theta: T,
    /// Azimuth angle, radians, in `[0, 2pi)`.
    pub phi: T,
    /// Slant range from the radar origin to the scene origin, meters.
    pub range: T,
    /// Platform height, meters. Always `range * cos(theta)`.
    pub altitude: T,
}

impl<T: Real> RadarPose<T> {
    /// Builds a pose from radians. `phi` is wrapped into `[0, 2pi)`.
    pub fn new(theta: T, phi: T, range: T) -> Result<Self> {
        if !(theta.is_finite_value() && phi.is_finite_value() && range.is_finite_value()) {
            return Err(Error::invalid("pose angles and range must be finite"));
        }
        if theta <= T::zero() || theta >= T::frac_pi_2() {
            return Err(Error::invalid(format!(
                "incidence angle {theta} rad outside (0, pi/2)"
            )));
        }
        if range <= T::zero() {
            return Err(Error::invalid(format!("slant range {range} must be positive")));
        }
        let two_pi = T::two_pi();
        let mut phi = phi % two_pi;
        if phi < T::zero() {
            phi += two_pi;
        }
        if phi >= two_pi {
            phi = T::zero();
        }
        Ok(Self {
            theta,
            phi,
            range,
            altitude: range * theta.cos(),
        })
    }

    pub fn from_degrees(theta_deg: f64, phi_deg: f64, range: f64) -> Result<Self> {
        Self::new(
            T::of(theta_deg.to_radians()),
            T::of(phi_deg.to_radians()),
            T::of(range),
        )
    }

    /// Pose at a fixed platform altitude; the slant range follows from the
    /// incidence angle.
    pub fn at_altitude_degrees(theta_deg: f64, phi_deg: f64, altitude: f64) -> Result<Self> {
        let range = altitude / theta_deg.to_radians().cos();
        Self::from_degrees(theta_deg, phi_deg, range)
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta.as_f64().to_degrees()
    }

    pub fn phi_deg(&self) -> f64 {
        self.phi.as_f64().to_degrees()
    }

    /// Radar-to-world rotation for this pose.
    pub fn rotation(&self) -> Matrix3<T> {
        radar_to_world_rotation(self.theta, self.phi)
    }

    /// Unit vector from the radar toward the scene origin, world frame.
    pub fn boresight(&self) -> Vector3<T> {
        self.rotation().column(2).into_owned()
    }

    /// Radar origin `P_r` in world coordinates: `range` back along the
    /// boresight from the scene origin.
    pub fn origin(&self) -> Vector3<T> {
        -self.boresight() * self.range
    }
}

/// Sample counts, spacings and scan bounds shared by every pose of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig<T> {
    pub n_a: usize,
    pub n_r: usize,
    pub n_theta: usize,
    /// Azimuth spacing, meters.
    pub delta_a: T,
    /// Slant range spacing, meters.
    pub delta_r: T,
    /// Elevation spacing, radians.
    pub delta_theta: T,
    /// Minimum slant range of the lattice, meters.
    pub r_min: T,
    /// Lower elevation scan bound relative to the boresight incidence, radians.
    pub theta0: T,
    /// Upper elevation scan bound relative to the boresight incidence, radians.
    pub theta1: T,
}

impl<T: Real> SamplingConfig<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_a: usize,
        n_r: usize,
        n_theta: usize,
        delta_a: T,
        delta_r: T,
        delta_theta: T,
        r_min: T,
        theta0: T,
        theta1: T,
    ) -> Result<Self> {
        let cfg = Self {
            n_a,
            n_r,
            n_theta,
            delta_a,
            delta_r,
            delta_theta,
            r_min,
            theta0,
            theta1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Lattice centred on the scene origin for a pose at `reference_range`:
    /// the elevation fan is symmetric about the boresight and spans
    /// `elevation_extent` meters at that range.
    pub fn centered(
        n_a: usize,
        n_r: usize,
        n_theta: usize,
        delta_a: T,
        delta_r: T,
        reference_range: T,
        elevation_extent: T,
    ) -> Result<Self> {
        if n_theta == 0 || reference_range <= T::zero() {
            return Err(Error::invalid("centered lattice needs n_theta >= 1 and range > 0"));
        }
        let span = elevation_extent / reference_range;
        let half = span / T::of(2.0);
        let n_r_f = T::from_usize(n_r).unwrap_or_else(T::zero);
        let r_min = reference_range - (n_r_f + T::one()) / T::of(2.0) * delta_r;
        Self::new(
            n_a,
            n_r,
            n_theta,
            delta_a,
            delta_r,
            span / T::from_usize(n_theta).unwrap_or_else(T::one),
            r_min,
            -half,
            half,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_a == 0 || self.n_r == 0 || self.n_theta == 0 {
            return Err(Error::invalid("sample counts must be >= 1"));
        }
        let finite = [
            self.delta_a,
            self.delta_r,
            self.delta_theta,
            self.r_min,
            self.theta0,
            self.theta1,
        ]
        .iter()
        .all(|v| v.is_finite_value());
        if !finite {
            return Err(Error::invalid("sampling parameters must be finite"));
        }
        if self.delta_a <= T::zero() || self.delta_r <= T::zero() || self.delta_theta <= T::zero()
        {
            return Err(Error::invalid("sample spacings must be positive"));
        }
        if self.theta0 >= self.theta1 {
            return Err(Error::invalid("theta0 must be below theta1"));
        }
        let n = self.n_theta as f64;
        let mismatch =
            (self.delta_theta.as_f64() * n - (self.theta1 - self.theta0).as_f64()).abs();
        if mismatch > 1e-9 {
            return Err(Error::invalid(format!(
                "delta_theta * n_theta differs from theta1 - theta0 by {mismatch:e}"
            )));
        }
        Ok(())
    }

    pub fn points_per_row(&self) -> usize {
        self.n_r * self.n_theta
    }

    pub fn point_count(&self) -> usize {
        self.n_a * self.points_per_row()
    }
}

/// Rotation about the radar `h` axis.
pub fn rotation_about_h<T: Real>(angle: T) -> Result<Matrix3<T>> {
    if !angle.is_finite_value() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    Ok(rotation_about_h_unchecked(angle))
}

fn rotation_about_h_unchecked<T: Real>(angle: T) -> Matrix3<T> {
    let (s, c) = angle.sin_cos();
    let (o, l) = (T::zero(), T::one());
    Matrix3::new(l, o, o, o, c, s, o, -s, c)
}

/// Rotation taking radar-frame `(h, v, k)` coordinates into the world frame.
pub fn radar_to_world_rotation<T: Real>(theta: T, phi: T) -> Matrix3<T> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let zero = T::zero();
    Matrix3::new(
        -cp,
        -ct * sp,
        -st * sp,
        zero,
        st,
        -ct,
        sp,
        -ct * cp,
        -st * cp,
    )
}

/// Affine map of a radar-frame point into world coordinates.
pub fn radar_to_world_point<T: Real>(v_r: &Vector3<T>, pose: &RadarPose<T>) -> Vector3<T> {
    pose.rotation() * v_r + pose.origin()
}

/// Inverse of [`radar_to_world_point`].
pub fn world_to_radar_point<T: Real>(v: &Vector3<T>, pose: &RadarPose<T>) -> Vector3<T> {
    pose.rotation().transpose() * (v - pose.origin())
}

/// World-space sample points and ray directions for one pose.
#[derive(Debug, Clone)]
pub struct SampleGrid<T: Real> {
    /// `[n_a][n_r][n_theta]` sample centres, world meters.
    pub points: Array3<Vector3<T>>,
    /// One unit direction per elevation ray, world frame, shared by all rows.
    pub directions: Vec<Vector3<T>>,
    pub pose: RadarPose<T>,
    pub config: SamplingConfig<T>,
}

/// Precomputed radar-frame ray fan for one pose, able to emit any azimuth row.
#[derive(Debug, Clone)]
pub struct RayFan<T: Real> {
    rotation: Matrix3<T>,
    origin: Vector3<T>,
    /// Radar-frame ray directions, one per elevation sample.
    radar_dirs: Vec<Vector3<T>>,
    /// World-frame ray directions.
    world_dirs: Vec<Vector3<T>>,
    pose: RadarPose<T>,
    config: SamplingConfig<T>,
}

impl<T: Real> RayFan<T> {
    pub fn new(pose: &RadarPose<T>, config: &SamplingConfig<T>) -> Self {
        let rotation = pose.rotation();
        let boresight = Vector3::new(T::zero(), T::zero(), T::one());
        // First ray sits at the lower scan bound.
        let k1 = rotation_about_h_unchecked(config.theta0) * boresight;
        let half = T::of(0.5);
        let radar_dirs: Vec<_> = (1..=config.n_theta)
            .map(|k| {
                let offset = (T::from_usize(k).unwrap() - half) * config.delta_theta;
                rotation_about_h_unchecked(offset) * k1
            })
            .collect();
        let world_dirs = radar_dirs.iter().map(|d| rotation * d).collect();
        Self {
            rotation,
            origin: pose.origin(),
            radar_dirs,
            world_dirs,
            pose: *pose,
            config: *config,
        }
    }

    pub fn directions(&self) -> &[Vector3<T>] {
        &self.world_dirs
    }

    /// Radar-frame point for 0-based storage indices.
    fn radar_point(&self, i: usize, j: usize, k: usize) -> Vector3<T> {
        let cfg = &self.config;
        let half = T::of(0.5);
        let n_a = T::from_usize(cfg.n_a).unwrap();
        let n_r = T::from_usize(cfg.n_r).unwrap();
        // Formula index = storage index + 1.
        let az = (T::from_usize(i + 1).unwrap() - (n_a + T::one()) * half) * cfg.delta_a;
        let rho = self.pose.range
            + (T::from_usize(j + 1).unwrap() - (n_r + T::one()) * half) * cfg.delta_r;
        let source = Vector3::new(az, T::zero(), T::zero());
        source + self.radar_dirs[k] * rho
    }

    /// World point for 0-based storage indices.
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vector3<T> {
        self.rotation * self.radar_point(i, j, k) + self.origin
    }

    /// Appends the `n_r * n_theta` points of azimuth row `i` in `[j][k]` order.
    pub fn extend_row(&self, i: usize, out: &mut Vec<Vector3<T>>) {
        out.reserve(self.config.points_per_row());
        for j in 0..self.config.n_r {
            for k in 0..self.config.n_theta {
                out.push(self.point(i, j, k));
            }
        }
    }
}

/// Builds the full lattice of sample points for `pose`.
pub fn build_sample_grid<T: Real>(
    pose: &RadarPose<T>,
    config: &SamplingConfig<T>,
) -> Result<SampleGrid<T>> {
    config.validate()?;
    let fan = RayFan::new(pose, config);
    let points = Array3::from_shape_fn((config.n_a, config.n_r, config.n_theta), |(i, j, k)| {
        fan.point(i, j, k)
    });
    Ok(SampleGrid {
        points,
        directions: fan.world_dirs.clone(),
        pose: *pose,
        config: *config,
    })
}

/// World coordinates of the 1-based grid index `(i, j, k)` using the
/// `r_min`-anchored lattice form. Agrees with [`build_sample_grid`] when
/// `r_min = range - (n_r + 1) / 2 * delta_r`, which is what
/// [`SamplingConfig::centered`] produces.
pub fn grid_index_to_coords<T: Real>(
    i: usize,
    j: usize,
    k: usize,
    pose: &RadarPose<T>,
    config: &SamplingConfig<T>,
) -> Result<Vector3<T>> {
    if !(1..=config.n_a).contains(&i) || !(1..=config.n_r).contains(&j) || !(1..=config.n_theta).contains(&k)
    {
        return Err(Error::invalid(format!(
            "grid index ({i}, {j}, {k}) outside 1..={}, 1..={}, 1..={}",
            config.n_a, config.n_r, config.n_theta
        )));
    }
    let half = T::of(0.5);
    let m_i = T::from_usize(i).unwrap() - (T::from_usize(config.n_a).unwrap() + T::one()) * half;
    let boresight = Vector3::new(T::zero(), T::zero(), T::one());
    let k1 = rotation_about_h_unchecked(config.theta0) * boresight;
    let elev = (T::from_usize(k).unwrap() - half) * config.delta_theta;
    let dir = rotation_about_h_unchecked(elev) * k1;
    let radial = config.r_min + T::from_usize(j).unwrap() * config.delta_r;
    let v_r = Vector3::new(m_i * config.delta_a, T::zero(), T::zero()) + dir * radial;
    Ok(radar_to_world_point(&v_r, pose))
}
