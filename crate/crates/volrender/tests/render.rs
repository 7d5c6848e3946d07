use diffcore::{grad_check, GradCheckConfig, Graph, ParamStore, Result, Tensor, Var};
use faceproxy::{Camera, HeadPose, Vec3};
use motionwarp::{TorsoTransform, Warp, WeightField};
use nalgebra::Vector3;
use proptest::prelude::*;
use radiancefield::{FieldConfig, RadianceField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volrender::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Closed-form test field with no trainable parts.
struct Analytic {
    sigma: fn([f64; 3]) -> f64,
    color: fn([f64; 3]) -> [f64; 3],
}

impl CanonicalField for Analytic {
    fn feature_dim(&self) -> usize {
        3
    }

    fn query(&self, g: &mut Graph, x_c: Var) -> Result<FieldOutput> {
        let pts: Vec<[f64; 3]> = g.value(x_c).data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let n = pts.len();
        let sigma = g.constant(Tensor::vector(pts.iter().map(|&p| (self.sigma)(p)).collect()));
        let col = Tensor::new(&[n, 3], pts.iter().flat_map(|&p| (self.color)(p)).collect())?;
        let feature = g.constant(col.clone());
        let rgb = g.constant(col);
        Ok(FieldOutput { sigma, feature, rgb })
    }

    fn density(&self, _g: &Graph, x_c: &[[f64; 3]]) -> Result<Vec<f64>> {
        Ok(x_c.iter().map(|&p| (self.sigma)(p)).collect())
    }
}

fn front_camera(size: usize) -> Camera {
    Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::y(), size as f64 * 1.6, (size, size)).unwrap()
}

#[test]
fn rays_are_unit_and_round_trip_through_projection() {
    let cam = Camera::look_at(Vec3::new(0.7, 0.3, 2.8), Vec3::zeros(), Vec3::y(), 12.0, (9, 7)).unwrap();
    let rays = gen_rays(&cam, RayBounds::default());
    assert_eq!(rays.len(), 63);
    let principal = rays[3 * 9 + 4];
    let fwd = cam.forward();
    for k in 0..3 {
        assert!((principal.dir[k] - fwd[k]).abs() < 1e-12);
    }
    for (id, r) in rays.iter().enumerate() {
        let n: f64 = r.dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-9);
        assert!(r.t_near < r.t_far);
        let (px, py) = ((id % 9) as f64 + 0.5, (id / 9) as f64 + 0.5);
        for t in [r.t_near, 0.5 * (r.t_near + r.t_far), r.t_far] {
            let (u, v, _) = cam.project(&Vec3::from(r.at(t)));
            assert!((u - px).abs() <= 1e-6 && (v - py).abs() <= 1e-6);
        }
    }
}

#[test]
fn box_clipping_enters_and_leaves_on_the_box() {
    let cam = front_camera(16);
    let rays = gen_rays(&cam, RayBounds::Box { lo: -0.5, hi: 0.5 });
    let mut hits = 0;
    for r in &rays {
        if !r.hit {
            continue;
        }
        hits += 1;
        for t in [r.t_near, r.t_far] {
            let p = r.at(t);
            let on_face = p.iter().map(|v| (v.abs() - 0.5).abs()).fold(f64::MAX, f64::min);
            assert!(on_face < 1e-9 && p.iter().all(|v| v.abs() <= 0.5 + 1e-9));
        }
    }
    assert!(hits > 0 && hits < rays.len(), "some rays miss the small box");
}

#[test]
fn stratified_midpoints() {
    let t = stratified_samples::<ChaCha8Rng>(0.0, 1.0, 4, None);
    assert_eq!(t, vec![0.125, 0.375, 0.625, 0.875]);
}

proptest! {
    #[test]
    fn jittered_samples_are_increasing_and_in_range(near in -2.0f64..2.0, len in 0.01f64..5.0, n in 1usize..64, seed in 0u64..1000) {
        let far = near + len;
        let t = stratified_samples(near, far, n, Some(&mut rng(seed)));
        prop_assert_eq!(t.len(), n);
        prop_assert!(t.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(t.iter().all(|&v| v >= near && v <= far));
        let step = len / n as f64;
        for (i, &v) in t.iter().enumerate() {
            prop_assert!(v >= near + i as f64 * step - 1e-12 && v <= near + (i + 1) as f64 * step + 1e-12);
        }
    }

    #[test]
    fn opacity_grows_with_density(sig in prop::collection::vec(0.0f64..5.0, 1..20), scale in 1.0f64..4.0) {
        let delta = vec![0.1; sig.len()];
        let a: f64 = sample_weights(&sig, &delta).iter().sum();
        let scaled: Vec<f64> = sig.iter().map(|s| s * scale).collect();
        let b: f64 = sample_weights(&scaled, &delta).iter().sum();
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b >= a - 1e-15);
    }
}

#[test]
fn importance_samples_single_bin() {
    let edges = bin_edges(1.0, 3.0, 8);
    let mut w = vec![0.0; 8];
    w[5] = 0.3;
    let t = importance_samples(&edges, &w, 200, &mut rng(1));
    assert!(t.iter().all(|&v| v >= edges[5] && v <= edges[6]));
    assert!(t.windows(2).all(|p| p[0] <= p[1]));
}

#[test]
fn importance_samples_follow_the_multinomial() {
    let (n, m) = (8, 800);
    let edges = bin_edges(0.0, 1.0, n);
    let t = importance_samples(&edges, &[0.2; 8], m, &mut rng(2));
    let mut counts = vec![0usize; n];
    for v in &t {
        counts[((v * n as f64) as usize).min(n - 1)] += 1;
    }
    let p = 1.0 / n as f64;
    let (mean, sd) = (m as f64 * p, (m as f64 * p * (1.0 - p)).sqrt());
    for c in counts {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "{c} vs {mean}");
    }
}

#[test]
fn all_zero_weights_fall_back_to_uniform() {
    let edges = bin_edges(0.0, 2.0, 4);
    let t = importance_samples(&edges, &[0.0; 4], 400, &mut rng(3));
    for k in 0..4 {
        let c = t.iter().filter(|&&v| v >= edges[k] && v < edges[k + 1]).count();
        assert!(c > 50, "bin {k} got {c}");
    }
}

#[test]
fn merged_samples_are_sorted() {
    let a = stratified_samples::<ChaCha8Rng>(0.0, 1.0, 16, None);
    let b = importance_samples(&bin_edges(0.0, 1.0, 16), &[1.0; 16], 16, &mut rng(4));
    let m = merge_sorted(&a, &b);
    assert_eq!(m.len(), 32);
    assert!(m.windows(2).all(|p| p[0] <= p[1]));
}

#[test]
fn integrate_closed_cases() {
    let c = vec![vec![0.2, 0.4, 0.9]; 5];
    let (f, a) = integrate(&[0.0; 5], &c, &[0.3; 5]);
    assert_eq!((f, a), (vec![0.0; 3], 0.0));

    let mut colors = vec![vec![0.0, 0.0, 0.0]; 4];
    colors[0] = vec![0.3, 0.6, 0.9];
    let (f, a) = integrate(&[500.0, 1.0, 1.0, 1.0], &colors, &[0.1; 4]);
    assert!((a - 1.0).abs() <= 1e-6);
    for k in 0..3 {
        assert!((f[k] - colors[0][k]).abs() <= 1e-6);
    }
}

/// Opacity of a constant slab of length `l` by the quadrature with `n`
/// midpoint samples.
fn slab_alpha(sigma: f64, l: f64, n: usize) -> f64 {
    let t = stratified_samples::<ChaCha8Rng>(0.0, l, n, None);
    sample_weights(&vec![sigma; n], &deltas(&t, l)).iter().sum()
}

#[test]
fn slab_quadrature_converges_to_closed_form_at_first_order() {
    for sl in [0.1f64, 0.5, 1.0, 2.0, 3.5, 5.0] {
        let exact = 1.0 - (-sl).exp();
        let e256 = (slab_alpha(sl / 1.3, 1.3, 256) - exact).abs();
        let e512 = (slab_alpha(sl / 1.3, 1.3, 512) - exact).abs();
        assert!(e256 <= 1e-3, "sigma L = {sl}: error {e256}");
        let ratio = e256 / e512;
        assert!((1.8..=2.2).contains(&ratio), "sigma L = {sl}: ratio {ratio}");
    }
}

#[test]
fn quadrature_ops_match_finite_differences() {
    let delta = Tensor::uniform(&[3, 6], 1.0, &mut rng(5)).map(|v| 0.05 + 0.1 * v.abs());
    let proj = Tensor::uniform(&[3, 6], 1.0, &mut rng(6));
    let report = grad_check(
        |g, v| {
            let sig = g.softplus(v[0]);
            let w = render_weights(g, sig, delta.clone())?;
            let p = g.mul_const(w, proj.clone())?;
            let f = weighted_sum(g, w, v[1])?;
            let ft = transpose(g, f)?;
            let q = g.mul_const(ft, Tensor::uniform(&[2, 3], 1.0, &mut rng(7)))?;
            let a = g.sum(p);
            let b = g.sum(q);
            g.add(a, b)
        },
        &[
            Tensor::uniform(&[3, 6], 3.0, &mut rng(8)),
            Tensor::uniform(&[18, 2], 1.0, &mut rng(9)),
        ],
        &GradCheckConfig::default(),
    );
    assert!(report.passed(), "{report:?}");
}

#[test]
fn empty_field_renders_background() {
    let field = Analytic {
        sigma: |_| 0.0,
        color: |_| [1.0, 0.0, 0.0],
    };
    let cfg = RenderConfig {
        background: 0.5,
        ..RenderConfig::default()
    };
    let mut g = Graph::new();
    let out = render_frame(&mut g, &field, &Scene::unposed(), &front_camera(8), &cfg).unwrap();
    let (feat, rgb, mask) = out.values(&g);
    assert_eq!(mask.shape(), [1, 8, 8]);
    assert_eq!(rgb.shape(), [3, 8, 8]);
    assert_eq!(feat.shape(), [3, 8, 8]);
    assert!(mask.data().iter().all(|&v| v == 0.0));
    assert!(feat.data().iter().all(|&v| v == 0.0));
    assert!(rgb.data().iter().all(|&v| v == 0.5));
}

#[test]
fn rays_missing_the_box_show_background() {
    let field = Analytic {
        sigma: |_| 100.0,
        color: |_| [0.0, 1.0, 0.0],
    };
    let cfg = RenderConfig {
        background: 0.25,
        bounds: RayBounds::Box { lo: -0.3, hi: 0.3 },
        ..RenderConfig::default()
    };
    let cam = front_camera(12);
    let rays = gen_rays(&cam, cfg.bounds);
    let mut g = Graph::new();
    let out = render_frame(&mut g, &field, &Scene::unposed(), &cam, &cfg).unwrap();
    let (_, rgb, mask) = out.values(&g);
    for (k, r) in rays.iter().enumerate() {
        if r.hit {
            assert!(mask.data()[k] > 0.99);
            assert!((rgb.data()[144 + k] - 1.0).abs() < 0.01);
        } else {
            assert_eq!(mask.data()[k], 0.0);
            assert_eq!(rgb.data()[k], 0.25);
        }
    }
}

#[test]
fn fine_samples_concentrate_in_an_opaque_slab() {
    let field = Analytic {
        sigma: |p| if p[2].abs() < 0.1 { 60.0 } else { 0.0 },
        color: |_| [1.0; 3],
    };
    let cfg = RenderConfig {
        sampler: SamplerConfig {
            n_coarse: 32,
            n_fine: 64,
            jitter: false,
            seed: 3,
        },
        ..RenderConfig::default()
    };
    let cam = front_camera(6);
    let rays = gen_rays(&cam, cfg.bounds);
    let ids: Vec<u64> = (0..rays.len() as u64).collect();
    let mut g = Graph::new();
    let out = render_rays(&mut g, &field, &Scene::unposed(), &rays, &ids, &cfg).unwrap();
    let (mut inside, mut total) = (0, 0);
    for (r, t) in rays.iter().zip(&out.t) {
        // the slab's t-interval along this ray
        let (t0, t1) = ((0.1 - r.origin[2]) / r.dir[2], (-0.1 - r.origin[2]) / r.dir[2]);
        let (lo, hi) = (t0.min(t1), t0.max(t1));
        let coarse = stratified_samples::<ChaCha8Rng>(r.t_near, r.t_far, 32, None);
        let count = |ts: &[f64]| ts.iter().filter(|&&v| v >= lo && v <= hi).count();
        inside += count(t) - count(&coarse);
        total += 64;
    }
    assert!(inside as f64 >= 0.9 * total as f64, "{inside} of {total}");
}

fn small_field(store: &mut ParamStore, seed: u64) -> RadianceField {
    let cfg = FieldConfig {
        plane_channels: 4,
        hidden: vec![16, 16],
        color_channels: 4,
        density_bias: 0.0,
        ..FieldConfig::default()
    };
    RadianceField::new(store, &cfg, &mut rng(seed)).unwrap()
}

#[test]
fn rendering_is_deterministic_and_batch_independent() {
    let mut store = ParamStore::new();
    let field = small_field(&mut store, 10);
    let planes = [
        Tensor::randn(&[4, 8, 8], 1.0, &mut rng(11)),
        Tensor::randn(&[4, 8, 8], 1.0, &mut rng(12)),
    ];
    let vol = Tensor::uniform(&[8, 8, 8], 1.0, &mut rng(13)).map(f64::abs);
    let pose = HeadPose::new(Vector3::new(0.1, 0.2, 0.0), Vector3::new(0.0, 0.05, 0.0)).unwrap();
    let cfg = RenderConfig::default();
    let cam = front_camera(6);
    let rays = gen_rays(&cam, cfg.bounds);
    let ids: Vec<u64> = (0..rays.len() as u64).collect();
    let run = |range: std::ops::Range<usize>| {
        let mut g = Graph::new();
        let f = g.constant(planes[0].clone());
        let s = g.constant(planes[1].clone());
        let v = g.constant(vol.clone());
        let nf = NeuralField {
            field: &field,
            store: &store,
            planes: Some((f, s)),
            extra: None,
        };
        let scene = Scene {
            weights: WeightField::Volume(v),
            warp: Warp::new(&pose, TorsoTransform::identity()),
        };
        let out = render_rays(&mut g, &nf, &scene, &rays[range.clone()], &ids[range], &cfg).unwrap();
        (g.value(out.rgb).data().to_vec(), g.value(out.alpha).data().to_vec())
    };
    let all = run(0..36);
    assert_eq!(all, run(0..36));
    let (a, b) = (run(0..13), run(13..36));
    assert_eq!(all.1, [a.1, b.1].concat());
    assert_eq!(all.0, [a.0, b.0].concat());
    assert!(all.1.iter().any(|&v| v > 0.01));
}

#[test]
fn rendered_pixels_differentiate_to_planes_and_weight_volume() {
    let mut store = ParamStore::new();
    let field = small_field(&mut store, 14);
    let cfg = RenderConfig {
        sampler: SamplerConfig {
            n_coarse: 12,
            n_fine: 0,
            jitter: true,
            seed: 1,
        },
        background: 0.5,
        ..RenderConfig::default()
    };
    let pose = HeadPose::new(Vector3::new(0.0, 0.3, 0.1), Vector3::zeros()).unwrap();
    let cam = front_camera(8);
    let rays: Vec<Ray> = gen_rays(&cam, cfg.bounds).into_iter().skip(26).take(4).collect();
    let ids = [26, 27, 28, 29];
    let report = grad_check(
        |g, v| {
            let nf = NeuralField {
                field: &field,
                store: &store,
                planes: Some((v[0], v[1])),
                extra: None,
            };
            let scene = Scene {
                weights: WeightField::Volume(v[2]),
                warp: Warp::new(&pose, TorsoTransform::identity()),
            };
            let out = render_rays(g, &nf, &scene, &rays, &ids, &cfg)?;
            let a = g.sum(out.rgb);
            let b = g.sum(out.feature);
            let c = g.sum(out.alpha);
            let ab = g.add(a, b)?;
            g.add(ab, c)
        },
        &[
            Tensor::randn(&[4, 6, 6], 1.0, &mut rng(15)),
            Tensor::randn(&[4, 6, 6], 1.0, &mut rng(16)),
            Tensor::uniform(&[4, 4, 4], 1.0, &mut rng(17)).map(|v| 0.5 + 0.4 * v),
        ],
        &GradCheckConfig::default(),
    );
    assert!(report.passed(), "{report:?}");
}

fn random_pose(r: &mut ChaCha8Rng) -> HeadPose {
    let rot = Vector3::new(r.random_range(-0.3..0.3), r.random_range(-0.5..0.5), r.random_range(-0.2..0.2));
    HeadPose::new(rot, Vector3::new(0.0, r.random_range(-0.1..0.1), 0.05)).unwrap()
}

/// Largest per-pixel difference between rendering `field` under `pose` with
/// `warp` and rendering it unposed through the composed camera.
fn composed_camera_gap(field: &dyn CanonicalField, pose: &HeadPose, torso: TorsoTransform) -> f64 {
    let cfg = RenderConfig {
        bounds: RayBounds::Fixed { near: 1.8, far: 4.2 },
        background: 0.5,
        ..RenderConfig::default()
    };
    let cam = front_camera(10);
    let render = |camera: &Camera, scene: Scene| {
        let mut g = Graph::new();
        let out = render_frame(&mut g, field, &scene, camera, &cfg).unwrap();
        let (a, b, c) = out.values(&g);
        [a, b, c]
    };
    let posed = render(
        &cam,
        Scene {
            weights: WeightField::Constant(1.0),
            warp: Warp::new(pose, torso),
        },
    );
    let canonical = render(&cam.compose(pose), Scene::unposed());
    posed
        .iter()
        .zip(&canonical)
        .map(|(p, c)| p.zip_map(c, |a, b| a - b).max_abs())
        .fold(0.0, f64::max)
}

struct Planed<'a> {
    inner: NeuralField<'a>,
    planes: &'a [Tensor; 2],
}

impl CanonicalField for Planed<'_> {
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn query(&self, g: &mut Graph, x_c: Var) -> Result<FieldOutput> {
        let f = g.constant(self.planes[0].clone());
        let s = g.constant(self.planes[1].clone());
        let nf = NeuralField {
            planes: Some((f, s)),
            ..self.inner
        };
        nf.query(g, x_c)
    }

    fn density(&self, _g: &Graph, x_c: &[[f64; 3]]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let f = g.constant(self.planes[0].clone());
        let s = g.constant(self.planes[1].clone());
        let nf = NeuralField {
            planes: Some((f, s)),
            ..self.inner
        };
        nf.density(&g, x_c)
    }
}

#[test]
fn head_warp_matches_composed_camera_when_torso_follows_head() {
    // torso moving with the head makes x_c independent of w_p, isolating the
    // camera algebra from the blend guard
    let mut store = ParamStore::new();
    let field = small_field(&mut store, 18);
    let planes = [
        Tensor::randn(&[4, 8, 8], 1.0, &mut rng(19)),
        Tensor::randn(&[4, 8, 8], 1.0, &mut rng(20)),
    ];
    let nf = Planed {
        inner: NeuralField {
            field: &field,
            store: &store,
            planes: None,
            extra: None,
        },
        planes: &planes,
    };
    let mut r = rng(21);
    for _ in 0..3 {
        let pose = random_pose(&mut r);
        let gap = composed_camera_gap(&nf, &pose, motionwarp::Rigid::head_inverse(&pose));
        assert!(gap <= 1e-9, "{gap}");
    }
}

#[test]
fn head_warp_matches_composed_camera_with_static_torso() {
    let field = Analytic {
        sigma: |p| 4.0 * (-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / 0.3).exp(),
        color: |p| [0.5 + 0.3 * p[0], 0.5 + 0.2 * p[1], 0.5 - 0.25 * p[2]],
    };
    let mut r = rng(22);
    for _ in 0..3 {
        let gap = composed_camera_gap(&field, &random_pose(&mut r), TorsoTransform::identity());
        assert!(gap <= 1e-5, "{gap}");
    }
}

#[test]
fn feature_map_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.bin");
    let map = Tensor::randn(&[3, 4, 5], 1.0, &mut rng(22));
    write_feature_map(&p, &map).unwrap();
    assert_eq!(read_feature_map(&p).unwrap(), map);
    std::fs::write(&p, b"FMAP1").unwrap();
    assert!(read_feature_map(&p).is_err());
}
