use diffcore::{grad_check, GradCheckConfig, Graph, ParamStore, Tensor};
use faceproxy::HeadPose;
use motionwarp::*;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_pose(r: &mut ChaCha8Rng, rot: f64, trans: f64) -> HeadPose {
    let mut v = || Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    HeadPose::new(v() * rot, v() * trans).unwrap()
}

fn random_points(r: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<[f64; 3]> {
    (0..n).map(|_| std::array::from_fn(|_| r.random_range(-bound..bound))).collect()
}

#[test]
fn generated_volume_is_deterministic_and_in_range() {
    let mut store = ParamStore::new();
    let gen = WeightVolumeGenerator::new(&mut store, &mut rng(0)).unwrap();
    let run = || {
        let mut g = Graph::new();
        let v = gen.generate(&mut g, &store).unwrap();
        g.value(v).clone()
    };
    let a = run();
    assert_eq!(a.shape(), [16, 16, 16]);
    assert_eq!(gen.resolution(), 16);
    assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert_eq!(a, run());
}

#[test]
fn generator_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let gen = WeightVolumeGenerator::new(&mut store, &mut rng(1)).unwrap();
    let proj = Tensor::uniform(&[16, 16, 16], 1.0, &mut rng(2));
    for id in [gen.head.weight, gen.blocks[0].weight, gen.blocks[1].bias] {
        let report = grad_check(
            |g, v| {
                g.bind(id, v[0]);
                let vol = gen.generate(g, &store)?;
                let p = g.mul_const(vol, proj.clone())?;
                Ok(g.sum(p))
            },
            &[store.get(id).clone()],
            &GradCheckConfig::default(),
        );
        assert!(report.passed(), "{}: {report:?}", store.name(id));
    }
}

#[test]
fn constant_weights_give_closed_form_blend() {
    let mut r = rng(3);
    for c in [0.0, 0.5, 1.0] {
        for _ in 0..1000 {
            let warp = Warp::new(&random_pose(&mut r, 0.5, 0.3), TorsoTransform::identity());
            let pts = random_points(&mut r, 1, 3.0);
            let mut g = Graph::new();
            let w = blend_weight(&mut g, WeightField::Constant(c), &pts, &warp).unwrap();
            assert!((g.value(w).item() - c).abs() <= 2e-6);
        }
    }
}

#[test]
fn uniform_volume_inside_the_box_gives_closed_form_blend() {
    let mut r = rng(4);
    for c in [0.0, 0.5, 1.0] {
        let mut g = Graph::new();
        let vol = g.constant(Tensor::full(&[16, 16, 16], c));
        for _ in 0..1000 {
            // small motions keep both lookups inside the box
            let warp = Warp::new(&random_pose(&mut r, 0.2, 0.1), TorsoTransform::identity());
            let pts = random_points(&mut r, 1, 0.6);
            let w = blend_weight(&mut g, WeightField::Volume(vol), &pts, &warp).unwrap();
            assert!((g.value(w).item() - c).abs() <= 2e-6);
        }
    }
}

#[test]
fn zero_over_zero_case_falls_to_torso() {
    // a = 0 at the warped point, b = 1 at the observed point
    let warp = Warp {
        head: Rigid {
            translation: Vector3::new(5.0, 0.0, 0.0),
            ..Rigid::identity()
        },
        torso: Rigid::identity(),
    };
    let mut g = Graph::new();
    let vol = g.constant(Tensor::ones(&[4, 4, 4]));
    let w = blend_weight(&mut g, WeightField::Volume(vol), &[[0.0; 3]], &warp).unwrap();
    assert_eq!(g.value(w).item(), 0.0);
}

proptest! {
    #[test]
    fn blend_weight_stays_in_unit_interval(
        vals in prop::collection::vec(0.0f64..=1.0, 64),
        x in prop::array::uniform3(-1.5f64..1.5),
        rot in prop::array::uniform3(-1.0f64..1.0),
        t in prop::array::uniform3(-0.5f64..0.5),
    ) {
        let pose = HeadPose::new(Vector3::from(rot), Vector3::from(t)).unwrap();
        let warp = Warp::new(&pose, TorsoTransform::identity());
        let mut g = Graph::new();
        let vol = g.constant(Tensor::new(&[4, 4, 4], vals).unwrap());
        let w = blend_weight(&mut g, WeightField::Volume(vol), &[x], &warp).unwrap();
        let w = g.value(w).item();
        prop_assert!((0.0..=1.0).contains(&w));
    }
}

fn warp_one(x: [f64; 3], w: f64, warp: &Warp) -> [f64; 3] {
    let mut g = Graph::new();
    let wv = g.constant(Tensor::vector(vec![w]));
    let xc = warp_to_canonical(&mut g, &[x], wv, warp).unwrap();
    g.value(xc).data().try_into().unwrap()
}

#[test]
fn warp_endpoint_cases() {
    let mut r = rng(5);
    for _ in 0..50 {
        let warp = Warp::new(&random_pose(&mut r, 0.8, 0.3), TorsoTransform::identity());
        let x = random_points(&mut r, 1, 1.0)[0];
        let head = warp.head.apply(x);
        let w1 = warp_one(x, 1.0, &warp);
        let w0 = warp_one(x, 0.0, &warp);
        for k in 0..3 {
            assert!((w1[k] - head[k]).abs() < 1e-12);
            assert_eq!(w0[k], x[k]);
        }
        let still = Warp::default();
        let mid = warp_one(x, r.random(), &still);
        assert_eq!(mid, x);
    }
}

#[test]
fn warp_gradient_reaches_the_volume() {
    let mut r = rng(6);
    let warp = Warp::new(&random_pose(&mut r, 0.3, 0.1), TorsoTransform::identity());
    let pts = random_points(&mut r, 8, 0.7);
    let proj = Tensor::uniform(&[8, 3], 1.0, &mut r);
    let report = grad_check(
        |g, v| {
            let w = blend_weight(g, WeightField::Volume(v[0]), &pts, &warp)?;
            let xc = warp_to_canonical(g, &pts, w, &warp)?;
            let p = g.mul_const(xc, proj.clone())?;
            Ok(g.sum(p))
        },
        &[Tensor::uniform(&[6, 6, 6], 1.0, &mut r).map(|v| 0.5 + 0.4 * v)],
        &GradCheckConfig::default(),
    );
    assert!(report.passed(), "{report:?}");
}

#[test]
fn graph_and_value_warps_agree() {
    let mut r = rng(7);
    let vol = Tensor::uniform(&[8, 8, 8], 1.0, &mut r).map(|v| v.abs());
    let warp = Warp::new(&random_pose(&mut r, 0.4, 0.2), TorsoTransform::identity());
    let pts = random_points(&mut r, 20, 1.2);
    let mut g = Graph::new();
    let vv = g.constant(vol.clone());
    let w = blend_weight(&mut g, WeightField::Volume(vv), &pts, &warp).unwrap();
    let xc = warp_to_canonical(&mut g, &pts, w, &warp).unwrap();
    for (i, &p) in pts.iter().enumerate() {
        let expect = warp_point(p, |q| sample_volume(&vol, q), &warp);
        for k in 0..3 {
            assert!((g.value(xc).data()[3 * i + k] - expect[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn warped_field_special_cases() {
    let h_c = |x: [f64; 3]| x[0].sin() + x[1] * x[2];
    let mut r = rng(8);
    let ident = warp_field(h_c, |_| 0.7, Warp::default());
    for x in random_points(&mut r, 100, 1.0) {
        assert!((ident(x) - h_c(x)).abs() <= 1e-12);
    }
    let warp = Warp::new(&random_pose(&mut r, 0.6, 0.2), TorsoTransform::identity());
    let head_only = warp_field(h_c, |_| 1.0, warp);
    for x in random_points(&mut r, 100, 1.0) {
        // w_p = 1 / (1 + eps): the torso share is ~1e-6 of the displacement
        let h = warp.head.apply(x);
        assert!((head_only(x) - h_c(h)).abs() <= 1e-5);
    }
}

#[test]
fn volume_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.bin");
    let vol = Tensor::uniform(&[5, 5, 5], 1.0, &mut rng(9));
    write_volume(&p, &vol).unwrap();
    assert_eq!(&std::fs::read(&p).unwrap()[..5], b"WVOL1");
    assert_eq!(read_volume(&p).unwrap(), vol);
    std::fs::write(&p, b"WVOL2xxxx").unwrap();
    assert!(read_volume(&p).is_err());
}
