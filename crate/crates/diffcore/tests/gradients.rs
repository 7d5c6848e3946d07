use diffcore::{grad_check, GradCheckConfig, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn assert_passes(name: &str, report: diffcore::GradCheckReport) {
    assert!(
        report.passed(),
        "{name}: max rel error {:.3e}, report {report:?}",
        report.max_rel_error()
    );
}

/// Random projection to a scalar so every output entry gets a distinct weight.
fn project(g: &mut Graph, y: Var, seed: u64) -> diffcore::Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::uniform(&shape, 1.0, &mut rng(seed)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

#[test]
fn sum_gives_all_ones() {
    let mut g = Graph::new();
    let x = g.input(Tensor::uniform(&[2, 3, 4], 1.0, &mut rng(0)));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(&g, x), Tensor::ones(&[2, 3, 4]));
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let xx = g.mul(x, x).unwrap();
    let s = g.sum(xx);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(&g, x).data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[3]));
    assert!(matches!(g.backward(x), Err(diffcore::DiffError::NotScalar(_))));
}

#[test]
fn unreachable_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.input(Tensor::ones(&[2]));
    let y = g.input(Tensor::ones(&[3]));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(y).is_none());
    assert_eq!(grads.wrt(&g, y), Tensor::zeros(&[3]));
}

#[test]
fn backward_twice_is_identical() {
    let mut g = Graph::new();
    let x = g.input(Tensor::uniform(&[4, 3], 1.0, &mut rng(1)));
    let w = g.input(Tensor::uniform(&[3, 2], 1.0, &mut rng(2)));
    let y = g.matmul(x, w).unwrap();
    let t = g.tanh(y);
    let s = g.sum(t);
    let a = g.backward(s).unwrap();
    let b = g.backward(s).unwrap();
    assert_eq!(a.wrt(&g, x), b.wrt(&g, x));
    assert_eq!(a.wrt(&g, w), b.wrt(&g, w));
}

#[test]
fn three_layer_composite_matches_finite_differences() {
    let inputs = vec![
        Tensor::uniform(&[5, 4], 1.0, &mut rng(3)),
        Tensor::uniform(&[4, 6], 0.7, &mut rng(4)),
        Tensor::uniform(&[6], 0.3, &mut rng(5)),
        Tensor::uniform(&[6, 5], 0.7, &mut rng(6)),
        Tensor::uniform(&[5], 0.3, &mut rng(7)),
        Tensor::uniform(&[5, 1], 0.7, &mut rng(8)),
    ];
    let report = grad_check(
        |g, v| {
            let h = g.linear(v[0], v[1], v[2])?;
            let h = g.tanh(h);
            let h = g.linear(h, v[3], v[4])?;
            let h = g.softplus(h);
            let o = g.matmul(h, v[5])?;
            let o = g.sigmoid(o);
            Ok(g.mean(o))
        },
        &inputs,
        &GradCheckConfig::default(),
    );
    assert_passes("composite", report);
}

#[test]
fn elementwise_ops_pass_grad_check() {
    let x = Tensor::uniform(&[3, 4], 0.9, &mut rng(9)).map(|v| v + 0.05 * v.signum());
    let pos = Tensor::uniform(&[3, 4], 0.5, &mut rng(10)).map(|v| v + 1.0);
    let cfg = GradCheckConfig::default();
    type Unary = fn(&mut Graph, Var) -> Var;
    let unary: [(&str, Unary); 10] = [
        ("relu", |g, x| g.relu(x)),
        ("leaky_relu", |g, x| g.leaky_relu(x, 0.2)),
        ("softplus", |g, x| g.softplus(x)),
        ("sigmoid", |g, x| g.sigmoid(x)),
        ("exp", |g, x| g.exp(x)),
        ("square", |g, x| g.square(x)),
        ("abs", |g, x| g.abs(x)),
        ("tanh", |g, x| g.tanh(x)),
        ("sin", |g, x| g.sin(x)),
        ("cos", |g, x| g.cos(x)),
    ];
    for (name, f) in unary {
        let report = grad_check(
            |g, v| {
                let y = f(g, v[0]);
                project(g, y, 11)
            },
            std::slice::from_ref(&x),
            &cfg,
        );
        assert_passes(name, report);
    }
    for (name, f) in [("ln", Graph::ln as Unary), ("sqrt", Graph::sqrt as Unary)] {
        let report = grad_check(
            |g, v| {
                let y = f(g, v[0]);
                project(g, y, 12)
            },
            std::slice::from_ref(&pos),
            &cfg,
        );
        assert_passes(name, report);
    }
    let report = grad_check(
        |g, v| {
            let a = g.add(v[0], v[1])?;
            let b = g.sub(a, v[0])?;
            let c = g.mul(b, v[0])?;
            let d = g.div(c, v[1])?;
            let e = g.scale(d, 1.7);
            let f = g.offset(e, 0.3);
            let h = g.mul_const(f, Tensor::full(&[3, 4], 0.5))?;
            project(g, h, 13)
        },
        &[x.clone(), pos.clone()],
        &cfg,
    );
    assert_passes("binary", report);
}

#[test]
fn shape_ops_pass_grad_check() {
    let a = Tensor::uniform(&[3, 2, 4], 1.0, &mut rng(14));
    let b = Tensor::uniform(&[3, 1, 4], 1.0, &mut rng(15));
    let row = Tensor::uniform(&[4], 1.0, &mut rng(16));
    let report = grad_check(
        |g, v| {
            let c = g.concat(&[v[0], v[1]], 1)?;
            let s = g.slice(c, 1, 1, 2)?;
            let r = g.reshape(s, &[6, 4])?;
            let rep = g.repeat_rows(v[2], 6)?;
            let m = g.mul(r, rep)?;
            let b = g.add_row_bias(m, v[2])?;
            let t = g.sum_last_axis(b)?;
            let r3 = g.reshape(t, &[3, 2])?;
            let cb = g.slice(v[2], 0, 0, 3)?;
            let o = g.add_channel_bias(r3, cb)?;
            let sq = g.square(o);
            Ok(g.mean(sq))
        },
        &[a, b, row],
        &GradCheckConfig::default(),
    );
    assert_passes("shape ops", report);
}

#[test]
fn bce_passes_grad_check() {
    let p = Tensor::uniform(&[6], 0.4, &mut rng(17)).map(|v| v + 0.5);
    let y = Tensor::vector(vec![0.0, 1.0, 1.0, 0.0, 0.3, 1.0]);
    let report = grad_check(|g, v| g.bce(v[0], &y), &[p], &GradCheckConfig::default());
    assert_passes("bce", report);
}

#[test]
fn relu_at_zero_is_flagged_not_failed() {
    let report = grad_check(
        |g, v| {
            let r = g.relu(v[0]);
            Ok(g.sum(r))
        },
        &[Tensor::vector(vec![0.0])],
        &GradCheckConfig::default(),
    );
    assert!(report.passed());
    assert_eq!(report.kinks(), 1);
}

#[test]
fn softplus_at_zero_is_smooth() {
    let report = grad_check(
        |g, v| {
            let r = g.softplus(v[0]);
            Ok(g.sum(r))
        },
        &[Tensor::vector(vec![0.0])],
        &GradCheckConfig::default(),
    );
    assert!(report.passed());
    assert_eq!(report.kinks(), 0);
    assert_eq!(report.inputs[0].checked, 1);
}

#[test]
fn linear_layer_passes_grad_check() {
    let report = grad_check(
        |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            project(g, y, 18)
        },
        &[
            Tensor::uniform(&[4, 3], 1.0, &mut rng(19)),
            Tensor::uniform(&[3, 5], 1.0, &mut rng(20)),
            Tensor::uniform(&[5], 1.0, &mut rng(21)),
        ],
        &GradCheckConfig::default(),
    );
    assert_passes("linear", report);
}
