mod common;

use std::path::Path;

use common::{tiny_config, tiny_data};
use diffcore::{Graph, Tensor};
use headfield::checkpoint;
use headfield::data::condition;
use headfield::metrics::{iou_stability, mask_iou, psnr, psnr_from_mse, PSNR_CAP};
use headfield::ops::{self, Split};
use headfield::train::{nerf_loss, translate};
use headfield::{Avatar, Config, Error, Gamma, Trainer, TranslatorMode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn losses(tr: &mut Trainer, data: &headfield::TrainingData, stage: u32, n: usize) -> Vec<headfield::LossRecord> {
    let mut out = Vec::new();
    tr.run(data, stage, n, |r| out.push(*r)).unwrap();
    out
}

#[test]
fn config_text_round_trips_every_key() {
    let mut cfg = Config::default();
    cfg.lambda_mask = 0.125;
    cfg.torso_translation = [0.0, -0.05, 1e-3];
    cfg.translator = TranslatorMode::Separate;
    let text = cfg.to_text();
    for key in Config::KEYS {
        assert!(text.contains(&format!("{key} = ")), "{key} missing");
    }
    assert_eq!(Config::parse(&text, Path::new("c")).unwrap(), cfg);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let p = Path::new("c");
    assert!(matches!(Config::parse("nonsense = 1\n", p), Err(Error::Config(_))));
    assert!(matches!(Config::parse("lambda_rgb = -1\n", p), Err(Error::Config(_))));
    assert!(matches!(Config::parse("translator = maybe\n", p), Err(Error::Config(_))));
    assert!(matches!(Config::parse("render_resolution = 30\n", p), Err(Error::Config(_))));
    let cfg = Config::parse("condition_mode = expr_mlp\nrendering_pose = posed\n", p).unwrap();
    assert_eq!(cfg.condition_mode, planegen::ConditionMode::ExprMlp);
    assert_eq!(cfg.rendering_pose, orthorender::RenderPose::Posed);
}

#[test]
fn default_learning_rates() {
    let cfg = Config::default();
    assert_eq!((cfg.lr, cfg.lr_translator), (2e-3, 1e-3));
    assert_eq!((cfg.lambda_rgb, cfg.lambda_mask), (1.0, 0.1));
}

#[test]
fn psnr_examples() {
    let a = Tensor::full(&[3, 4, 4], 0.3);
    assert_eq!(psnr(&a, &a), PSNR_CAP);
    let b = a.map(|v| v + 0.1);
    // independent closed form: mse = 0.01
    assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
    let m = Tensor::full(&[1, 4, 4], 1.0);
    assert_eq!(mask_iou(&m, &m), 1.0);
}

proptest! {
    #[test]
    fn psnr_strictly_decreases_in_mse(a in 1e-9f64..1.0, b in 1e-9f64..1.0) {
        prop_assume!((a - b).abs() > 1e-12);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(lo >= 1e-10);
        prop_assert!(psnr_from_mse(lo) > psnr_from_mse(hi));
    }
}

#[test]
fn iou_and_stability_examples() {
    let mk = |on: &[usize]| {
        let mut t = Tensor::zeros(&[1, 2, 2]);
        for &i in on {
            t.data_mut()[i] = 1.0;
        }
        t
    };
    assert_eq!(mask_iou(&mk(&[0, 1]), &mk(&[1, 2])), 1.0 / 3.0);
    assert_eq!(mask_iou(&mk(&[]), &mk(&[])), 1.0);
    assert_eq!(iou_stability(&[mk(&[0]), mk(&[0]), mk(&[0])]), 0.0);
    // ious 1, 1/2: variance 1/16
    let s = iou_stability(&[mk(&[0]), mk(&[0]), mk(&[0, 1])]);
    assert!((s - 1.0 / 16.0).abs() < 1e-15);
}

#[test]
fn nerf_loss_reduces_to_single_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rgb_t = Tensor::uniform(&[6, 3], 0.5, &mut rng).map(|v| v + 0.5);
    let mask_t = Tensor::vector(vec![0.0, 1.0, 0.5, 0.2, 1.0, 0.0]);
    let pred = Tensor::uniform(&[6, 3], 0.4, &mut rng).map(|v| v + 0.5);
    let alpha = Tensor::uniform(&[6], 0.4, &mut rng).map(|v| v + 0.5);
    let eval = |l_rgb: f64, l_mask: f64| {
        let mut cfg = Config::default();
        cfg.lambda_rgb = l_rgb;
        cfg.lambda_mask = l_mask;
        cfg.lambda_emb = 0.0;
        let mut g = Graph::new();
        let (p, a) = (g.constant(pred.clone()), g.constant(alpha.clone()));
        let e = g.constant(Tensor::scalar(3.0));
        let l = nerf_loss(&mut g, &cfg, p, a, &rgb_t, &mask_t, e).unwrap();
        g.value(l.total).item()
    };
    let mse: f64 = pred.data().iter().zip(rgb_t.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / 18.0;
    let bce: f64 = alpha
        .data()
        .iter()
        .zip(mask_t.data())
        .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
        .sum::<f64>()
        / 6.0;
    assert!((eval(1.0, 0.0) - mse).abs() <= 1e-12);
    assert!((eval(0.0, 1.0) - bce).abs() <= 1e-6, "guarded logs differ by the 1e-7 guard only");
}

#[test]
fn training_is_bitwise_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "");
    let mut a = Trainer::for_data(&cfg, &data).unwrap();
    let mut b = Trainer::for_data(&cfg, &data).unwrap();
    let la = losses(&mut a, &data, 1, 4);
    let lb = losses(&mut b, &data, 1, 4);
    assert_eq!(la, lb);
    let mut cfg2 = cfg.clone();
    cfg2.seed = 1;
    let mut c = Trainer::for_data(&cfg2, &data).unwrap();
    assert_ne!(losses(&mut c, &data, 1, 4), la);
}

#[test]
fn stage1_lowers_the_ray_loss() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "rays_per_batch = 64\nlr = 2e-3\n");
    let mut tr = Trainer::for_data(&cfg, &data).unwrap();
    let l = losses(&mut tr, &data, 1, 80);
    let mean = |s: &[headfield::LossRecord]| s.iter().map(|r| r.total).sum::<f64>() / s.len() as f64;
    assert!(mean(&l[70..]) < mean(&l[..10]), "{} -> {}", mean(&l[..10]), mean(&l[70..]));
}

#[test]
fn checkpoint_round_trip_is_byte_identical_and_preserves_results() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "");
    let mut tr = Trainer::for_data(&cfg, &data).unwrap();
    losses(&mut tr, &data, 1, 3);
    losses(&mut tr, &data, 2, 1);
    let path = dir.path().join("a.ckpt");
    checkpoint::save(&tr, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(checkpoint::to_bytes(&loaded), std::fs::read(&path).unwrap());
    assert_eq!(&std::fs::read(&path).unwrap()[..5], b"HAVC1");

    let ea = ops::evaluate(&tr, &data, Split::Test).unwrap();
    let eb = ops::evaluate(&loaded, &data, Split::Test).unwrap();
    assert_eq!(ea.mean_psnr.to_bits(), eb.mean_psnr.to_bits());
    assert_eq!(ea, eb);

    // the optimizer and rng state carry over: training continues identically
    let mut tr2 = loaded;
    assert_eq!(losses(&mut tr, &data, 2, 2), losses(&mut tr2, &data, 2, 2));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "");
    let tr = Trainer::for_data(&cfg, &data).unwrap();
    let bytes = checkpoint::to_bytes(&tr);
    let p = Path::new("x.ckpt");
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 3], p).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::from_bytes(&bad, p).is_err());
    let mut longer = bytes;
    longer.push(0);
    assert!(checkpoint::from_bytes(&longer, p).is_err());
}

#[test]
fn translator_off_stage2_continues_stage1_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "translator = off\n");
    let mut a = Trainer::for_data(&cfg, &data).unwrap();
    let mut b = Trainer::for_data(&cfg, &data).unwrap();
    let mut la = losses(&mut a, &data, 1, 2);
    la.extend(losses(&mut a, &data, 1, 3));
    let mut lb = losses(&mut b, &data, 1, 2);
    lb.extend(losses(&mut b, &data, 2, 3));
    for (x, y) in la.iter().zip(&lb) {
        assert!((x.total - y.total).abs() <= 1e-12);
        assert!((x.rgb - y.rgb).abs() <= 1e-12 && (x.mask - y.mask).abs() <= 1e-12);
    }
}

#[test]
fn adversarial_loss_reaches_plane_generators() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "");
    let tr = Trainer::for_data(&cfg, &data).unwrap();
    let av = &tr.avatar;
    let f = &data.train[0];
    let mut g = Graph::new();
    let inp = av.frame_inputs(&mut g, &Gamma::Row(0), &f.cond, &f.pose).unwrap();
    let field = av.neural_field(&inp);
    let r = cfg.render_resolution;
    let cam = f.views[0].camera.resized(r, r);
    let out = volrender::render_frame(&mut g, &field, &inp.scene, &cam, &av.render_config()).unwrap();
    let fake = translate(av, &mut g, out.feature).unwrap();
    let disc = av.disc.as_ref().unwrap();
    let adv = neuraltranslate::generator_loss(&mut g, &av.store, disc, &[fake]).unwrap();
    let grads = g.backward(adv).unwrap().params(&g);
    let plane_norm: f64 = grads
        .iter()
        .filter(|(id, _)| av.store.name(*id).starts_with("front.") || av.store.name(*id).starts_with("side."))
        .map(|(_, t)| t.norm().powi(2))
        .sum();
    assert!(plane_norm > 0.0 && plane_norm.is_finite());
}

#[test]
fn zero_discriminator_gives_ln2_generator_loss() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "");
    let mut tr = Trainer::for_data(&cfg, &data).unwrap();
    let ids: Vec<_> = tr.avatar.store.ids().filter(|&id| tr.avatar.is_disc(id)).collect();
    for id in ids {
        let z = Tensor::zeros(tr.avatar.store.get(id).shape());
        tr.avatar.store.set(id, z).unwrap();
    }
    let rec = losses(&mut tr, &data, 2, 1)[0];
    assert!((rec.adv - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((rec.disc - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn texture_flag_only_blanks_texture_channels() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "");
    let mut off = cfg.clone();
    off.texture_channel = false;
    let rec = &data.dataset.frames[0];
    let on_c = condition(&cfg, &data.dataset.model, &rec.delta, &rec.pose).unwrap();
    let off_c = condition(&off, &data.dataset.model, &rec.delta, &rec.pose).unwrap();
    let (fa, sa) = on_c.renderings.unwrap();
    let (fb, sb) = off_c.renderings.unwrap();
    assert_eq!((fa.shape(), sa.shape()), (fb.shape(), sb.shape()));
    let n = 8 * 8;
    for (a, b, views) in [(&fa, &fb, 1), (&sa, &sb, 2)] {
        for v in 0..views {
            let base = v * 7 * n;
            let tex = base + 3 * n..base + 6 * n;
            assert!(b.data()[tex.clone()].iter().all(|&x| x == 0.0));
            assert!(a.data()[tex.clone()].iter().any(|&x| x != 0.0));
            assert_eq!(a.data()[base..base + 3 * n], b.data()[base..base + 3 * n]);
            assert_eq!(a.data()[base + 6 * n..base + 7 * n], b.data()[base + 6 * n..base + 7 * n]);
        }
    }
    assert_eq!(on_c.delta, off_c.delta);
    assert_eq!(on_c.pose, off_c.pose);
}

#[test]
fn every_ablation_builds_and_steps() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _) = tiny_data(dir.path(), "");
    for extra in [
        "condition_mode = vector_plane\n",
        "condition_mode = vector_plane_exprmod\n",
        "condition_mode = expr_mlp\n",
        "rendering_pose = posed\n",
        "embedding_condition = decoder_input\n",
        "translator = upsample\n",
        "translator = separate\n",
    ] {
        let cfg = tiny_config(dir.path(), extra);
        let data = headfield::TrainingData::load(&cfg).unwrap();
        let mut tr = Trainer::for_data(&cfg, &data).unwrap();
        let l1 = losses(&mut tr, &data, 1, 1);
        let l2 = losses(&mut tr, &data, 2, 1);
        assert!(l1[0].total.is_finite() && l2[0].total.is_finite(), "{extra}");
        let p = ops::predict(
            &tr,
            &tr.avatar.mean_gamma(),
            &data.test[0].cond,
            &data.test[0].pose,
            &data.test[0].views[0].camera,
        )
        .unwrap();
        assert_eq!(p.rgb.shape(), [3, 16, 16], "{extra}");
    }
}

#[test]
fn separate_translator_leaves_the_field_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "translator = separate\n");
    let mut tr = Trainer::for_data(&cfg, &data).unwrap();
    let before = tr.avatar.store.clone();
    losses(&mut tr, &data, 2, 2);
    for (id, name, t) in tr.avatar.store.iter() {
        let changed = t != before.get(id);
        assert_eq!(changed, name.starts_with("translator.") || name.starts_with("disc."), "{name}");
    }
}

#[test]
fn reenactment_rows_behave() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "");
    let mut tr = Trainer::for_data(&cfg, &data).unwrap();
    losses(&mut tr, &data, 1, 2);
    let k = data.expressions();
    let rec = &data.dataset.frames[0];
    let mut line: Vec<String> = rec.delta.iter().map(|v| format!("{v:?}")).collect();
    line.extend(rec.pose.to_array().iter().map(|v| format!("{v:?}")));
    let text = format!("# driving\n{0}\n\n{0}\n", line.join(" "));
    let rows = ops::parse_driving(&text, k, Path::new("d.txt")).unwrap();
    assert_eq!(rows.len(), 2);
    let cam = &data.dataset.cameras[0];
    let out = ops::reenact(&tr, &data.dataset.model, &rows, cam).unwrap();
    assert_eq!(out[0], out[1]);

    let short = line[1..].join(" ");
    assert!(ops::parse_driving(&short, k, Path::new("d.txt")).is_err());
    let bad_rows = vec![(vec![0.0; k + 1], rec.pose)];
    assert!(ops::reenact(&tr, &data.dataset.model, &bad_rows, cam).is_err());
}

#[test]
fn equal_embeddings_make_planes_depend_only_on_renderings_and_pose() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "");
    let av = Avatar::new(&cfg, data.expressions(), data.train.len()).unwrap();
    let planes = av.planes.as_ref().unwrap();
    let f = &data.train[1];
    let gamma = Tensor::vector(vec![0.3, -0.2, 0.1, 0.5]);
    let run = |cond: &planegen::FrameCondition| {
        let mut g = Graph::new();
        let gv = g.constant(gamma.clone());
        let p = planes.planes(&mut g, &av.store, gv, cond).unwrap();
        (g.value(p.front).clone(), g.value(p.side).clone())
    };
    let mut other = f.cond.clone();
    other.delta = other.delta.iter().map(|v| -v + 0.3).collect();
    assert_eq!(run(&f.cond), run(&other));
    let mut moved = f.cond.clone();
    moved.pose[1] += 0.1;
    assert_ne!(run(&f.cond), run(&moved));
}

#[test]
fn mesh_extraction_runs_on_a_trained_field() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = tiny_data(dir.path(), "");
    let mut tr = Trainer::for_data(&cfg, &data).unwrap();
    losses(&mut tr, &data, 1, 2);
    let grid = ops::density_grid(&tr, &tr.avatar.mean_gamma(), &data.train[0].cond, 8).unwrap();
    assert_eq!(grid.len(), 512);
    assert!(grid.iter().all(|v| *v >= 0.0 && v.is_finite()));
    let iso = grid.iter().sum::<f64>() / grid.len() as f64;
    ops::extract_mesh(&tr, &tr.avatar.mean_gamma(), &data.train[0].cond, 8, iso).unwrap();
}

#[test]
fn mean_image_baseline_matches_direct_computation() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = tiny_data(dir.path(), "");
    let mut mean = Tensor::zeros(&[3, 16, 16]);
    for f in &data.train {
        for (m, v) in mean.data_mut().iter_mut().zip(f.views[0].rgb.data()) {
            *m += v / data.train.len() as f64;
        }
    }
    let direct: f64 = data.test.iter().map(|f| psnr(&mean, &f.views[0].rgb)).sum::<f64>() / data.test.len() as f64;
    assert!((ops::mean_image_baseline(&data, Split::Test) - direct).abs() < 1e-9);
}
