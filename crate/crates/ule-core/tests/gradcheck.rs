//! Finite-difference oracles for the tape.  Every op's analytic gradient is
//! checked against central differences in f64, and the retained backward
//! pass is checked by differencing the *first* gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ule_core::autodiff::{Graph, Retain, Tensor};

type T64 = Tensor<f64>;

/// Central-difference gradient of `f` at `x`, perturbing one element at a time.
fn numeric_grad(f: &dyn Fn(&mut Graph<f64>, &T64) -> T64, x: &T64, h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let eval = |delta: f64| {
            let mut bumped = x.detach();
            bumped.make_mut()[i] += delta;
            let mut g = Graph::new();
            let v = g.var(&bumped);
            f(&mut g, &v).item()
        };
        out.push((eval(h) - eval(-h)) / (2.0 * h));
    }
    out
}

fn analytic_grad(f: &dyn Fn(&mut Graph<f64>, &T64) -> T64, x: &T64) -> Vec<f64> {
    let mut g = Graph::new();
    let v = g.var(x);
    let y = f(&mut g, &v);
    let grads = g.grad(&y, &[&v], Retain::No).expect("grad");
    grads[0].data().to_vec()
}

fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length");
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = 1.0_f64.max(a.abs()).max(n.abs());
        assert!(
            (a - n).abs() <= tol * scale,
            "{what}[{i}]: analytic {a} vs numeric {n}"
        );
    }
}

fn check(f: impl Fn(&mut Graph<f64>, &T64) -> T64 + 'static, x: &T64, what: &str) {
    let f: Box<dyn Fn(&mut Graph<f64>, &T64) -> T64> = Box::new(f);
    let a = analytic_grad(f.as_ref(), x);
    let n = numeric_grad(f.as_ref(), x, 1e-5);
    assert_close(&a, &n, 1e-6, what);
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> T64 {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Random values bounded away from zero so relu/abs kinks stay clear of the
/// finite-difference step.
fn rand_tensor_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> T64 {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor_off_kink(&mut rng, &[3, 4]);
    let c = rand_tensor(&mut rng, &[3, 4], 0.5, 2.0);

    let cc = c.clone();
    check(
        move |g, v| {
            let y = g.add(v, &cc).unwrap();
            g.sum(&y).unwrap()
        },
        &x,
        "add",
    );
    let cc = c.clone();
    check(
        move |g, v| {
            let y = g.sub(&cc, v).unwrap();
            g.sum(&y).unwrap()
        },
        &x,
        "sub-rhs",
    );
    let cc = c.clone();
    check(
        move |g, v| {
            let y = g.mul(v, &cc).unwrap();
            let z = g.mul(&y, v).unwrap();
            g.sum(&z).unwrap()
        },
        &x,
        "mul-quadratic",
    );
    let cc = c.clone();
    check(
        move |g, v| {
            let y = g.div(&cc, v).unwrap();
            g.sum(&y).unwrap()
        },
        &x,
        "div-denominator",
    );
    check(
        move |g, v| {
            let y = g.neg(v).unwrap();
            let z = g.scalar_mul(&y, 1.7).unwrap();
            g.sum(&z).unwrap()
        },
        &x,
        "neg+scalar_mul",
    );
    check(
        move |g, v| {
            let y = g.relu(v).unwrap();
            g.sum(&y).unwrap()
        },
        &x,
        "relu",
    );
    check(
        move |g, v| {
            let y = g.exp(v).unwrap();
            g.mean(&y).unwrap()
        },
        &x,
        "exp",
    );
    let pos = rand_tensor(&mut rng, &[3, 4], 0.2, 3.0);
    check(
        move |g, v| {
            let y = g.log(v).unwrap();
            g.sum(&y).unwrap()
        },
        &pos,
        "log",
    );
}

#[test]
fn matmul_family_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);

    // grad wrt left operand of each variant
    let bb = b.clone();
    check(
        move |g, v| {
            let y = g.matmul(v, &bb).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &a,
        "matmul-lhs",
    );
    let aa = a.clone();
    check(
        move |g, v| {
            let y = g.matmul(&aa, v).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &b,
        "matmul-rhs",
    );
    let at = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0); // (k,m) for matmul_at
    let bb = b.clone();
    check(
        move |g, v| {
            let y = g.matmul_at(v, &bb).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &at,
        "matmul_at-lhs",
    );
    let bt = rand_tensor(&mut rng, &[5, 3], -1.0, 1.0); // (n,k) for matmul_bt
    let aa = a.clone();
    check(
        move |g, v| {
            let y = g.matmul_bt(&aa, v).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &bt,
        "matmul_bt-rhs",
    );
    check(
        move |g, v| {
            let t = g.transpose(v).unwrap();
            let y = g.matmul(&t, v).unwrap();
            g.sum(&y).unwrap()
        },
        &a,
        "transpose+matmul-shared",
    );
}

#[test]
fn structural_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_tensor_off_kink(&mut rng, &[2, 6]);

    check(
        move |g, v| {
            let r = g.reshape(v, vec![3, 4]).unwrap();
            let sq = g.mul(&r, &r).unwrap();
            g.sum(&sq).unwrap()
        },
        &x,
        "reshape",
    );
    check(
        move |g, v| {
            let s = g.stack(&[v, v]).unwrap();
            let sq = g.mul(&s, &s).unwrap();
            g.sum(&sq).unwrap()
        },
        &x,
        "stack-shared",
    );
    check(
        move |g, v| {
            let idx = vec![0, 5, 3, 3, 11];
            let picked = g.gather_flat(v, idx, vec![5]).unwrap();
            let sq = g.mul(&picked, &picked).unwrap();
            g.sum(&sq).unwrap()
        },
        &x,
        "gather-with-duplicates",
    );
    check(
        move |g, v| {
            let scat = g.scatter_add_flat(v, (0..12).map(|i| i % 5).collect(), vec![5]).unwrap();
            let sq = g.mul(&scat, &scat).unwrap();
            g.sum(&sq).unwrap()
        },
        &x,
        "scatter-with-collisions",
    );
}

#[test]
fn conv_and_pool_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = rand_tensor(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[3, 2, 3, 3], -0.7, 0.7);

    let kk = k.clone();
    check(
        move |g, v| {
            let y = g.conv2d(v, &kk).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &x,
        "conv2d-input",
    );
    let xx = x.clone();
    check(
        move |g, v| {
            let y = g.conv2d(&xx, v).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &k,
        "conv2d-kernel",
    );
    // Adjoint primitives are ops in their own right; check them directly.
    let u = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let kk = k.clone();
    check(
        move |g, v| {
            let y = g.conv2d_vjp_input(v, &kk).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &u,
        "vjp_input-wrt-grad",
    );
    let uu = u.clone();
    check(
        move |g, v| {
            let y = g.conv2d_vjp_input(&uu, v).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &k,
        "vjp_input-wrt-kernel",
    );
    let uu = u.clone();
    check(
        move |g, v| {
            let y = g.conv2d_vjp_kernel(&uu, v).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &x,
        "vjp_kernel-wrt-input",
    );
    let x6 = rand_tensor(&mut rng, &[1, 1, 4, 4], -1.0, 1.0);
    check(
        move |g, v| {
            let y = g.maxpool2d(v).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &x6,
        "maxpool2d",
    );
    let bias = rand_tensor(&mut rng, &[3], -1.0, 1.0);
    check(
        move |g, v| {
            let y = g.broadcast_channel(v, 2, 4, 4).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &bias,
        "broadcast_channel",
    );
    let x4 = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    check(
        move |g, v| {
            let y = g.channel_sum(v).unwrap();
            let sq = g.mul(&y, &y).unwrap();
            g.sum(&sq).unwrap()
        },
        &x4,
        "channel_sum",
    );
}

#[test]
fn composite_losses_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let logits = rand_tensor(&mut rng, &[4, 5], -2.0, 2.0);
    let mut onehot = vec![0.0; 20];
    for r in 0..4 {
        onehot[r * 5 + (r * 2) % 5] = 1.0;
    }
    let targets = Tensor::from_vec(vec![4, 5], onehot).unwrap();

    let tt = targets.clone();
    check(
        move |g, v| g.cross_entropy(v, &tt).unwrap(),
        &logits,
        "cross_entropy",
    );
    check(
        move |g, v| {
            let p = g.softmax(v).unwrap();
            let sq = g.mul(&p, &p).unwrap();
            g.sum(&sq).unwrap()
        },
        &logits,
        "softmax",
    );
    let b = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let bb = b.clone();
    check(move |g, v| g.mse(v, &bb).unwrap(), &logits_cast(&mut rng), "mse");
    let bb = b.clone();
    check(move |g, v| g.mae(v, &bb).unwrap(), &logits_cast(&mut rng), "mae");
    let x = rand_tensor_off_kink(&mut rng, &[3, 7]);
    check(
        move |g, v| {
            let m = g.row_max_abs(v).unwrap();
            let sq = g.mul(&m, &m).unwrap();
            g.sum(&sq).unwrap()
        },
        &x,
        "row_max_abs",
    );
    let x2 = rand_tensor_off_kink(&mut rng, &[2, 5]);
    check(
        move |g, v| {
            let m = g.max_abs(v).unwrap();
            g.mul(&m, &m).unwrap()
        },
        &x2,
        "max_abs",
    );
}

fn logits_cast(rng: &mut ChaCha8Rng) -> T64 {
    rand_tensor_off_kink(rng, &[3, 4])
}

#[test]
fn unreachable_wrt_gets_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let a = g.var(&Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
    let b = g.var(&Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap());
    let y = g.sum(&a).unwrap();
    let grads = g.grad(&y, &[&a, &b], Retain::No).unwrap();
    assert_eq!(grads[0].data(), &[1.0, 1.0]);
    assert_eq!(grads[1].data(), &[0.0, 0.0]);
    assert_eq!(grads[1].shape(), &[2]);
}

#[test]
fn grad_requires_scalar_output_and_graph_membership() {
    let mut g = Graph::<f64>::new();
    let a = g.var(&Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
    let y = g.relu(&a).unwrap();
    assert!(g.grad(&y, &[&a], Retain::No).is_err());
    let off = Tensor::<f64>::ones(vec![1]);
    let s = g.sum(&a).unwrap();
    assert!(g.grad(&off, &[&a], Retain::No).is_err());
    assert!(g.grad(&s, &[&off], Retain::No).is_err());
}

/// Classic second-order check: y = x^2, gx = dy/dx retained, z = gx^3 + y;
/// dz/dx = 3*(2x)^2*2 + 2x = 24x^2 + 2x = 100 at x = 2.
#[test]
fn double_backprop_polynomial() {
    let mut g = Graph::<f64>::new();
    let x = g.var(&Tensor::scalar(2.0));
    let y = g.mul(&x, &x).unwrap();
    let gx = g.grad(&y, &[&x], Retain::Yes).unwrap().remove(0);
    assert_eq!(gx.item(), 4.0);
    assert!(gx.node_id().is_some(), "retained gradient must stay on tape");
    let g2 = g.mul(&gx, &gx).unwrap();
    let g3 = g.mul(&g2, &gx).unwrap();
    let z = g.add(&g3, &y).unwrap();
    let dz = g.grad(&z, &[&x], Retain::No).unwrap().remove(0);
    assert!((dz.item() - 100.0).abs() < 1e-12, "dz/dx = {}", dz.item());
    assert!(dz.node_id().is_none(), "non-retained gradient must be detached");
}

/// A non-retained backward adds no nodes.  A retained backward records
/// exactly the value-dependent part: the gradient of sum(relu(x)) is locally
/// constant in x, so even retained it stays off the tape, while the gradient
/// of sum(x*x) depends on x and must land on it.
#[test]
fn backward_recording_follows_value_dependence() {
    let mut g = Graph::<f64>::new();
    let x = g.var(&Tensor::from_vec(vec![2, 2], vec![0.3, -0.5, 1.2, 2.0]).unwrap());
    let y = g.relu(&x).unwrap();
    let s = g.sum(&y).unwrap();
    let before = g.len();
    let flat = g.grad(&s, &[&x], Retain::No).unwrap().remove(0);
    assert_eq!(g.len(), before);
    assert!(flat.node_id().is_none());
    let piecewise = g.grad(&s, &[&x], Retain::Yes).unwrap().remove(0);
    assert_eq!(g.len(), before, "locally-constant gradient should not record");
    assert_eq!(piecewise.data(), &[1.0, 0.0, 1.0, 1.0]);

    let sq = g.mul(&x, &x).unwrap();
    let s2 = g.sum(&sq).unwrap();
    let before = g.len();
    let gx = g.grad(&s2, &[&x], Retain::Yes).unwrap().remove(0);
    assert!(g.len() > before);
    assert!(gx.node_id().is_some());
}

/// The saliency pattern at small scale: a gradient-of-gradient through a
/// network with conv, relu, pooling and matmul, checked against central
/// differences of the *analytic first gradient*.
#[test]
fn double_backprop_matches_fd_of_first_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for net in 0..5 {
        let x0 = rand_tensor(&mut rng, &[1, 1, 6, 6], -1.0, 1.0);
        let k0 = rand_tensor(&mut rng, &[2, 1, 3, 3], -0.8, 0.8);
        let w0 = rand_tensor(&mut rng, &[8, 3], -0.8, 0.8);
        let target = {
            let mut t = vec![0.0; 3];
            t[net % 3] = 1.0;
            Tensor::from_vec(vec![1, 3], t).unwrap()
        };

        // loss(k) = sum over elements of (d logit-sum / d x)^2, a scalar
        // functional of the *input gradient*; its k-gradient needs the
        // retained backward pass.
        let loss_of = |kt: &Tensor<f64>| -> (f64, Option<Vec<f64>>, &'static str) {
            let mut g = Graph::<f64>::new();
            let x = g.var(&x0);
            let k = g.var(kt);
            let h = g.conv2d(&x, &k).unwrap();
            let a = g.relu(&h).unwrap();
            let p = g.maxpool2d(&a).unwrap();
            let flat = g.reshape(&p, vec![1, 8]).unwrap();
            let logits = g.matmul(&flat, &w0).unwrap();
            let picked = g.mul(&logits, &target).unwrap();
            let score = g.sum(&picked).unwrap();
            let gx = g.grad(&score, &[&x], Retain::Yes).unwrap().remove(0);
            let sq = g.mul(&gx, &gx).unwrap();
            let loss = g.sum(&sq).unwrap();
            let dk = g.grad(&loss, &[&k], Retain::No).unwrap().remove(0);
            (loss.item(), Some(dk.data().to_vec()), "")
        };

        let (_, dk, _) = loss_of(&k0);
        let dk = dk.unwrap();

        // FD of the loss in k, where each loss evaluation itself runs a
        // backward pass: second-order against first-order oracle.
        let h = 1e-5;
        for i in (0..k0.numel()).step_by(3) {
            let mut kp = k0.detach();
            kp.make_mut()[i] += h;
            let mut km = k0.detach();
            km.make_mut()[i] -= h;
            let (lp, _, _) = loss_of(&kp);
            let (lm, _, _) = loss_of(&km);
            let fd = (lp - lm) / (2.0 * h);
            let scale = 1.0_f64.max(fd.abs()).max(dk[i].abs());
            assert!(
                (fd - dk[i]).abs() <= 1e-4 * scale,
                "net {net} k[{i}]: analytic {} vs fd {fd}",
                dk[i]
            );
        }
    }
}

/// Gradients must be identical across runs of the same build.
#[test]
fn gradients_are_bitwise_deterministic() {
    let run = || -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x0 = rand_tensor(&mut rng, &[2, 1, 6, 6], -1.0, 1.0);
        let k0 = rand_tensor(&mut rng, &[2, 1, 3, 3], -0.8, 0.8);
        let mut g = Graph::<f64>::new();
        let x = g.var(&x0);
        let k = g.var(&k0);
        let y = g.conv2d(&x, &k).unwrap();
        let r = g.relu(&y).unwrap();
        let s = g.sum(&r).unwrap();
        let grads = g.grad(&s, &[&x, &k], Retain::No).unwrap();
        grads
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    assert_eq!(run(), run());
}
