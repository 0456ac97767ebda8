//! Differentiable incoherent SAR image formation over a learned
//! attenuation/scattering field.
//!
//! The pipeline: [`geometry`] places sample points in front of a radar pose,
//! [`renderer`] accumulates scattering attenuated along range, [`scenes`]
//! provides analytic ground truth, [`field`] is the coordinate network,
//! [`trainer`] fits it to images, [`reconstruct`] thresholds it into voxels
//! and [`evalio`] holds image I/O, splits and metrics.
//!
//! Numeric code is generic over [`Real`]; the aliases below fix it to `f64`.

pub mod error;
pub mod evalio;
pub mod field;
pub mod geometry;
pub mod reconstruct;
pub mod renderer;
pub mod scalar;
pub mod scenes;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type RadarPose64 = geometry::RadarPose<f64>;
pub type SamplingConfig64 = geometry::SamplingConfig<f64>;
pub type SampleGrid64 = geometry::SampleGrid<f64>;
pub type FieldGrids64 = renderer::FieldGrids<f64>;
pub type Image64 = renderer::Image<f64>;
pub type FieldParams64 = field::FieldParams<f64>;
pub type Scene64 = scenes::Scene<f64>;
