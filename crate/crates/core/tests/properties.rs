use std::collections::HashSet;
use std::fs;

use nalgebra::{Matrix3, Rotation3, Vector3};
use ndarray::{Array1, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sarfield::evalio::manifest::{DatasetManifest, ManifestEntry};
use sarfield::evalio::metrics::{psnr, ssim, SsimParams};
use sarfield::evalio::split::{make_split, PitchRule, SplitSpec};
use sarfield::field::{
    decode_checkpoint, encode_checkpoint, field_eval, init_params, ArchSpec, EncodingSpec,
};
use sarfield::geometry::{build_sample_grid, radar_to_world_rotation, rotation_about_h, RadarPose, SamplingConfig};
use sarfield::reconstruct::{extract_voxels, AnalyticField, VolumeSpec};
use sarfield::renderer::{render, render_bruteforce, scatter_projection, FieldGrids, Image};
use sarfield::scenes::{generate_dataset, Scene, SolidKind, TargetModel};
use sarfield::trainer::{jitter_biases, Profile};

fn orthonormal(m: &Matrix3<f64>) -> bool {
    (m.transpose() * m - Matrix3::identity()).abs().max() < 1e-12 && (m.determinant().abs() - 1.0).abs() < 1e-12
}

fn random_grids(rng: &mut ChaCha8Rng, n_a: usize, n_r: usize, n_t: usize) -> FieldGrids<f64> {
    let sigma = Array3::from_shape_fn((n_a, n_r, n_t), |_| rng.random_range(0.0..2.0));
    let scatter = Array3::from_shape_fn((n_a, n_r, n_t), |_| rng.random_range(0.0..1.0));
    FieldGrids::new(sigma, scatter).unwrap()
}

fn config(n_a: usize, n_r: usize, n_t: usize, dr: f64) -> SamplingConfig<f64> {
    SamplingConfig::centered(n_a, n_r, n_t, 0.3, dr, 1000.0, 12.0).unwrap()
}

fn max_rel(a: &Image<f64>, b: &Image<f64>) -> f64 {
    a.pixels
        .iter()
        .zip(b.pixels.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
        .fold(0.0, f64::max)
}

#[test]
fn rotations_are_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let theta = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        assert!(orthonormal(&rotation_about_h(theta).unwrap()));
        assert!(orthonormal(&radar_to_world_rotation(theta, phi)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lattice_spacing_is_regular(theta in 20.0f64..70.0, phi in 0.0f64..360.0) {
        let pose = RadarPose::at_altitude_degrees(theta, phi, 10_000.0).unwrap();
        let cfg = SamplingConfig::centered(5, 6, 3, 0.4, 0.35, pose.range, 10.0).unwrap();
        let g = build_sample_grid(&pose, &cfg).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                for k in 0..3 {
                    let da: f64 = (g.points[[i + 1, j, k]] - g.points[[i, j, k]]).norm();
                    let dr: f64 = (g.points[[i, j + 1, k]] - g.points[[i, j, k]]).norm();
                    prop_assert!((da - 0.4).abs() < 1e-9, "azimuth step {}", da);
                    prop_assert!((dr - 0.35).abs() < 1e-9, "range step {}", dr);
                }
            }
        }
    }

    #[test]
    fn pose_rotation_is_equivariant(theta in 20.0f64..70.0, phi in 0.0f64..360.0, delta in -180.0f64..180.0) {
        let cfg = SamplingConfig::centered(3, 4, 2, 0.5, 0.5, 1000.0, 8.0).unwrap();
        let a = build_sample_grid(&RadarPose::from_degrees(theta, phi, 1000.0).unwrap(), &cfg).unwrap();
        let b = build_sample_grid(&RadarPose::from_degrees(theta, phi + delta, 1000.0).unwrap(), &cfg).unwrap();
        let back = Rotation3::from_axis_angle(&Vector3::y_axis(), -delta.to_radians());
        for (p, q) in a.points.iter().zip(b.points.iter()) {
            prop_assert!((back * q - p).norm() < 1e-9);
        }
    }

    #[test]
    fn threshold_never_adds_points(t0 in 0.0f64..3.0, t1 in 0.0f64..3.0, which in 0usize..3) {
        let scene = Scene::target(TargetModel::ALL[which]);
        let spec = VolumeSpec::above_ground(20.0, 12).unwrap();
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        let a: HashSet<_> = extract_voxels(&AnalyticField(&scene), &spec, lo).unwrap().indices.into_iter().collect();
        let b: HashSet<_> = extract_voxels(&AnalyticField(&scene), &spec, hi).unwrap().indices.into_iter().collect();
        prop_assert!(b.is_subset(&a));
    }

    #[test]
    fn split_partitions_the_manifest(
        interval in prop::sample::select(vec![1u32, 5, 10, 15, 30, 45, 90]),
        phis in prop::collection::vec(0u32..360, 0..40),
        parity in any::<bool>(),
    ) {
        let mut m = DatasetManifest::new("unused");
        for (n, phi) in phis.iter().enumerate() {
            let theta = if parity { 35.0 + (n % 5) as f64 } else { 45.0 };
            m.entries.push(ManifestEntry {
                path: format!("v{n}.pfm").into(),
                pose: RadarPose::from_degrees(theta, *phi as f64, 1000.0).unwrap(),
                config_id: "c".into(),
            });
        }
        let rule = if parity { PitchRule::OddTrainEvenTest } else { PitchRule::All };
        let split = make_split(&m, &SplitSpec::new(interval, rule).unwrap()).unwrap();
        let key = |e: &ManifestEntry| e.path.clone();
        let mut both: Vec<_> = split.train.entries.iter().chain(&split.test.entries).map(key).collect();
        let mut all: Vec<_> = m.entries.iter().map(key).collect();
        both.sort();
        all.sort();
        prop_assert_eq!(both, all);
        let train: HashSet<_> = split.train.entries.iter().map(key).collect();
        prop_assert!(split.test.entries.iter().all(|e| !train.contains(&key(e))));
    }

    #[test]
    fn psnr_is_symmetric_and_ssim_reflexive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Image::new(ndarray::Array2::from_shape_fn((12, 10), |_| rng.random_range(0.0..1.0)));
        let b = Image::new(ndarray::Array2::from_shape_fn((12, 10), |_| rng.random_range(0.0..1.0)));
        prop_assert_eq!(psnr(&a, &b).unwrap().to_bits(), psnr(&b, &a).unwrap().to_bits());
        prop_assert_eq!(ssim(&a, &a, SsimParams::default()).unwrap(), 1.0);
    }
}

#[test]
fn vectorised_render_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (n_a, n_r, n_t) = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=8));
        let cfg = config(n_a, n_r, n_t, rng.random_range(0.05..0.5));
        let g = random_grids(&mut rng, n_a, n_r, n_t);
        let fast = render(&g, &cfg).unwrap();
        let slow = render_bruteforce(&g, &cfg).unwrap();
        assert!(max_rel(&fast, &slow) <= 1e-12);
    }
}

#[test]
fn attenuation_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let cfg = config(6, 9, 4, 0.3);
        let g = random_grids(&mut rng, 6, 9, 4);
        let base = render(&g, &cfg).unwrap();
        let mut h = g.clone();
        let idx = [rng.random_range(0..6), rng.random_range(0..9), rng.random_range(0..4)];
        h.sigma[idx] += rng.random_range(0.0..3.0);
        let after = render(&h, &cfg).unwrap();
        for (a, b) in after.pixels.iter().zip(base.pixels.iter()) {
            assert!(a <= b);
        }
    }
}

#[test]
fn zero_sigma_is_plain_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = config(7, 5, 6, 0.2);
    let mut g = random_grids(&mut rng, 7, 5, 6);
    g.sigma.fill(0.0);
    assert_eq!(render(&g, &cfg).unwrap().pixels, scatter_projection(&g));
}

#[test]
fn render_is_linear_in_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let cfg = config(5, 8, 3, 0.25);
        let g1 = random_grids(&mut rng, 5, 8, 3);
        let mut g2 = random_grids(&mut rng, 5, 8, 3);
        g2.sigma = g1.sigma.clone();
        let (a, b) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        let mix = FieldGrids::new(g1.sigma.clone(), &g1.scatter * a + &g2.scatter * b).unwrap();
        let lhs = render(&mix, &cfg).unwrap();
        let rhs = Image::new(render(&g1, &cfg).unwrap().pixels * a + render(&g2, &cfg).unwrap().pixels * b);
        assert!(max_rel(&lhs, &rhs) <= 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let enc = EncodingSpec::new(4, 2, Vector3::repeat(-12.0), Vector3::repeat(12.0)).unwrap();
    let mut p = init_params(ArchSpec::new(4, 16).unwrap(), enc, 11).unwrap();
    jitter_biases(&mut p, 0.2, 12);
    let q = decode_checkpoint::<f64>(&encode_checkpoint(&p)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let v = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
        let d = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0f64)).normalize();
        let a = field_eval(&p, &v, &d).unwrap();
        let b = field_eval(&q, &v, &d).unwrap();
        assert_eq!(a.sigma_att.to_bits(), b.sigma_att.to_bits());
        assert_eq!(a.scatter.to_bits(), b.scatter.to_bits());
    }
}

#[test]
fn square_cuboid_is_quarter_turn_symmetric() {
    let scene = Scene::target(TargetModel::Cuboid);
    for phi in [0.0, 30.0, 77.0] {
        let a = RadarPose::at_altitude_degrees(45.0, phi, 10_000.0).unwrap();
        let b = RadarPose::at_altitude_degrees(45.0, phi + 90.0, 10_000.0).unwrap();
        let cfg = Profile::Desk.sampling(a.range).unwrap();
        let ia = scene.render_view(&a, &cfg).unwrap();
        let ib = scene.render_view(&b, &cfg).unwrap();
        let diff = (&ia.pixels - &ib.pixels).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
        assert!(diff <= 1e-9, "phi {phi}: max difference {diff}");
    }
}

#[test]
fn dataset_regeneration_is_byte_identical() {
    let scene = Scene::target(TargetModel::UprightFrustum);
    let poses: Vec<_> = (0..4)
        .map(|n| RadarPose::at_altitude_degrees(45.0, 90.0 * n as f64, 10_000.0).unwrap())
        .collect();
    let cfg = SamplingConfig::centered(16, 16, 8, 1.2, 1.2, poses[0].range, 24.0).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_dataset(&scene, &poses, &cfg, "desk", a.path()).unwrap();
    generate_dataset(&scene, &poses, &cfg, "desk", b.path()).unwrap();
    let mut files = vec!["manifest.csv".to_string(), "manifest.toml".to_string()];
    files.extend(ma.entries.iter().map(|e| e.path.display().to_string()));
    for f in files {
        assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f}");
    }
}

/// Surface area and volume of a frustum with square-ish base `2a x 2b`,
/// top scaled by `s`, height `h`.
fn frustum_area_volume(a: f64, b: f64, h: f64, s: f64) -> (f64, f64) {
    let bottom = 4.0 * a * b;
    let top = bottom * s * s;
    let slant_x = (h * h + (a - a * s).powi(2)).sqrt();
    let slant_z = (h * h + (b - b * s).powi(2)).sqrt();
    let sides = 2.0 * (2.0 * b + 2.0 * b * s) / 2.0 * slant_x + 2.0 * (2.0 * a + 2.0 * a * s) / 2.0 * slant_z;
    let volume = h / 3.0 * (bottom + top + (bottom * top).sqrt());
    (bottom + top + sides, volume)
}

#[test]
fn refinement_stays_within_surface_shell() {
    for model in TargetModel::ALL {
        let scene = Scene::target(model);
        let s = &scene.solids[0];
        let scale = match s.kind {
            SolidKind::Cuboid => 1.0,
            _ => s.top_scale,
        };
        let (area, volume) = frustum_area_volume(s.half_x, s.half_z, s.height, scale);
        for res in [16usize, 32] {
            let coarse = VolumeSpec::above_ground(20.0, res).unwrap();
            let fine = VolumeSpec::above_ground(20.0, 2 * res).unwrap();
            let cm = extract_voxels(&AnalyticField(&scene), &coarse, 1e-3).unwrap();
            let upsampled: HashSet<[usize; 3]> = cm
                .indices
                .iter()
                .flat_map(|c| {
                    (0..8).map(move |n| [2 * c[0] + (n & 1), 2 * c[1] + ((n >> 1) & 1), 2 * c[2] + ((n >> 2) & 1)])
                })
                .collect();
            let truth: HashSet<[usize; 3]> = fine.indices().filter(|&i| scene.occupancy(&fine.center(i))).collect();
            let inter = upsampled.intersection(&truth).count() as f64;
            let union = upsampled.union(&truth).count() as f64;
            let change = 1.0 - inter / union;
            let bound = area * coarse.pitch().x / volume;
            assert!(change < bound, "{}: res {res} change {change} bound {bound}", model.name());
        }
    }
}

#[test]
fn sigma_is_nonnegative_everywhere() {
    let enc = EncodingSpec::new(3, 2, Vector3::repeat(-5.0), Vector3::repeat(5.0)).unwrap();
    let mut p = init_params(ArchSpec::new(2, 8).unwrap(), enc, 3).unwrap();
    jitter_biases(&mut p, 1.0, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts: Vec<_> = (0..500).map(|_| Vector3::from_fn(|_, _| rng.random_range(-8.0..8.0))).collect();
    let s: Array1<f64> = p.sigma_batch(&pts).unwrap();
    assert!(s.iter().all(|&v| v >= 0.0));
}
