use ule_core::autodiff::{Graph, Retain, Tensor};
use ule_core::data::{make_synthetic, GroupedDataset, SyntheticSpec};
use ule_core::engine::{
    corner_saliency_mass, normalize_sal, saliency, train_erm, train_ule, ule_sal_loss,
    ule_total_loss, Balancer, Distance, EngineError, PatchSpec, SalMode, Scalarize, UleConfig,
};
use ule_core::nn::{BoundParams, Layer, Network};

fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(vec![rows, cols], data.to_vec()).unwrap()
}

fn scalar(v: f64) -> Tensor<f64> {
    Tensor::full(vec![1, 1], v)
}

fn param_bits(net: &Network<f64>) -> Vec<u64> {
    net.params()
        .iter()
        .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
        .collect()
}

/// Flat-input net with a dropout stage so the per-net RNG streams are
/// actually consumed during training.
fn dropout_mlp(seed: u64) -> Network<f64> {
    Network::new(
        vec![3],
        vec![
            Layer::Flatten {
                tag: "flatten".into(),
            },
            Layer::Linear {
                tag: "fc1".into(),
                cin: 3,
                cout: 16,
            },
            Layer::Relu {
                tag: "relu1".into(),
            },
            Layer::Dropout {
                tag: "drop1".into(),
                p: 0.5,
            },
            Layer::Linear {
                tag: "head".into(),
                cin: 16,
                cout: 2,
            },
        ],
        seed,
    )
    .unwrap()
}

fn tiny_synth(seed: u64) -> GroupedDataset<f64> {
    let (train, _) = make_synthetic::<f64>(&SyntheticSpec {
        n_train: 64,
        n_test: 8,
        d_core: 2,
        d_spur: 1,
        rho: 0.9,
        seed,
        ..Default::default()
    })
    .unwrap();
    train
}

fn quiet_cfg() -> UleConfig {
    UleConfig {
        epochs: 2,
        batch_size: 16,
        lr: 1e-3,
        seed: 11,
        eval_every: 0,
        ..Default::default()
    }
}

// ---------------------------------------------------------------- normalize

#[test]
fn normalization_scales_each_row_to_unit_max() {
    let mut g = Graph::new();
    let z = mat(3, 2, &[-2.0, 1.0, 0.0, 0.0, 3.0, -1.5]);
    let n = normalize_sal(&mut g, &z).unwrap();
    let want = [-1.0, 0.5, 0.0, 0.0, 1.0, -0.5];
    for (got, want) in n.data().iter().zip(want) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    // the all-zero row must come through exactly, not as 0/0
    assert_eq!(n.data()[2], 0.0);
    assert_eq!(n.data()[3], 0.0);
}

#[test]
fn normalization_is_odd() {
    let mut g = Graph::new();
    let z = mat(2, 3, &[0.3, -1.7, 0.9, 2.5, 0.1, -0.4]);
    let zn = mat(2, 3, &z.data().iter().map(|v| -v).collect::<Vec<_>>());
    let a = normalize_sal(&mut g, &zn).unwrap();
    let b = normalize_sal(&mut g, &z).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert_eq!(x.to_bits(), (-y).to_bits());
    }
}

#[test]
fn normalization_rejects_non_matrix() {
    let mut g = Graph::new();
    let z = Tensor::<f64>::full(vec![2, 2, 2], 1.0);
    assert!(normalize_sal(&mut g, &z).is_err());
}

// ------------------------------------------------------------ saliency loss

#[test]
fn inversion_loss_vanishes_when_teacher_opposes_student() {
    let mut g = Graph::new();
    // same direction, different scale, opposite sign
    let gs = mat(1, 2, &[2.0, -1.0]);
    let gt = mat(1, 2, &[-4.0, 2.0]);
    let l = ule_sal_loss(&mut g, &gs, &gt, Distance::Mse).unwrap();
    assert!(l.item() < 1e-24, "{}", l.item());
}

#[test]
fn inversion_loss_peaks_when_saliencies_align() {
    let mut g = Graph::new();
    let gs = mat(1, 1, &[1.0]);
    let gt = mat(1, 1, &[1.0]);
    let l = ule_sal_loss(&mut g, &gs, &gt, Distance::Mse).unwrap();
    assert!((l.item() - 4.0).abs() < 1e-9, "{}", l.item());
    let l1 = ule_sal_loss(&mut g, &gs, &gt, Distance::L1).unwrap();
    assert!((l1.item() - 2.0).abs() < 1e-9, "{}", l1.item());
}

#[test]
fn inversion_loss_ignores_positive_scale() {
    let mut g = Graph::new();
    let gs = mat(2, 2, &[0.8, -0.2, 1.5, 0.3]);
    let gt = mat(2, 2, &[-0.1, 0.9, 0.4, -2.0]);
    let gt3 = mat(2, 2, &gt.data().iter().map(|v| 3.0 * v).collect::<Vec<_>>());
    let a = ule_sal_loss(&mut g, &gs, &gt, Distance::Mse).unwrap();
    let b = ule_sal_loss(&mut g, &gs, &gt3, Distance::Mse).unwrap();
    assert!((a.item() - b.item()).abs() < 1e-12);
}

#[test]
fn inversion_loss_rejects_attached_student() {
    let mut g = Graph::new();
    let gs = g.var(&mat(1, 2, &[1.0, 2.0]));
    let gt = mat(1, 2, &[0.5, -0.5]);
    let err = ule_sal_loss(&mut g, &gs, &gt, Distance::Mse).unwrap_err();
    assert!(matches!(err, EngineError::StudentOnGraph));
}

#[test]
fn inversion_loss_rejects_shape_mismatch() {
    let mut g = Graph::new();
    let gs = mat(1, 2, &[1.0, 2.0]);
    let gt = mat(1, 3, &[1.0, 2.0, 3.0]);
    assert!(ule_sal_loss(&mut g, &gs, &gt, Distance::Mse).is_err());
}

#[test]
fn inversion_loss_gradient_matches_finite_differences() {
    let gs = mat(1, 3, &[-0.5, 0.2, -0.9]);
    let base = [0.8, -0.4, 0.3];

    let eval = |vals: &[f64]| -> f64 {
        let mut g = Graph::new();
        let gt = g.var(&mat(1, 3, vals));
        ule_sal_loss(&mut g, &gs, &gt, Distance::Mse)
            .unwrap()
            .item()
    };

    let mut g = Graph::new();
    let gt = g.var(&mat(1, 3, &base));
    let loss = ule_sal_loss(&mut g, &gs, &gt, Distance::Mse).unwrap();
    let analytic = g.grad(&loss, &[&gt], Retain::No).unwrap().remove(0);

    let h = 1e-6;
    for i in 0..3 {
        let mut lo = base;
        let mut hi = base;
        lo[i] -= h;
        hi[i] += h;
        let fd = (eval(&hi) - eval(&lo)) / (2.0 * h);
        let got = analytic.data()[i];
        assert!(
            (got - fd).abs() < 1e-6 * (1.0 + fd.abs()),
            "coord {i}: analytic {got} vs fd {fd}"
        );
    }
}

// ------------------------------------------------------------- combined loss

#[test]
fn first_batch_normalizes_both_terms_to_unity() {
    let mut g = Graph::new();
    let mut bal = Balancer::ema(0.99);
    let total = ule_total_loss(&mut g, &scalar(2.0), Some(&scalar(0.02)), 0.5, &mut bal).unwrap();
    assert!((total.item() - 1.0).abs() < 1e-12, "{}", total.item());
    assert_eq!(bal.m_ce(), 2.0);
    assert_eq!(bal.m_sal(), 0.02);
}

#[test]
fn balancer_tracks_an_exponential_average() {
    let mut g = Graph::new();
    let mut bal = Balancer::ema(0.9);
    ule_total_loss(&mut g, &scalar(2.0), Some(&scalar(0.02)), 0.5, &mut bal).unwrap();
    let total =
        ule_total_loss(&mut g, &scalar(4.0), Some(&scalar(0.04)), 0.5, &mut bal).unwrap();
    let m_ce = 0.9 * 2.0 + 0.1 * 4.0;
    let m_sal = 0.9 * 0.02 + 0.1 * 0.04;
    assert!((bal.m_ce() - m_ce).abs() < 1e-15);
    assert!((bal.m_sal() - m_sal).abs() < 1e-15);
    let want = 0.5 * 4.0 / m_ce + 0.5 * 0.04 / m_sal;
    assert!((total.item() - want).abs() < 1e-12);
}

#[test]
fn fixed_balancer_reduces_to_the_raw_mixture() {
    let mut g = Graph::new();
    let mut bal = Balancer::fixed();
    let total = ule_total_loss(&mut g, &scalar(2.0), Some(&scalar(0.02)), 0.25, &mut bal).unwrap();
    assert!((total.item() - (0.25 * 2.0 + 0.75 * 0.02)).abs() < 1e-15);
    // repeated use never drifts
    let again =
        ule_total_loss(&mut g, &scalar(2.0), Some(&scalar(0.02)), 0.25, &mut bal).unwrap();
    assert_eq!(total.item().to_bits(), again.item().to_bits());
}

#[test]
fn lambda_endpoints_drop_the_other_term() {
    let mut g = Graph::new();
    let mut bal = Balancer::ema(0.99);
    // pure CE needs no saliency term at all
    let ce_only = ule_total_loss(&mut g, &scalar(3.0), None, 1.0, &mut bal).unwrap();
    assert!((ce_only.item() - 1.0).abs() < 1e-12);

    let mut bal = Balancer::ema(0.99);
    let sal_only =
        ule_total_loss(&mut g, &scalar(3.0), Some(&scalar(0.5)), 0.0, &mut bal).unwrap();
    assert!((sal_only.item() - 1.0).abs() < 1e-12);
    // the CE magnitude is still tracked even when its weight is zero
    assert_eq!(bal.m_ce(), 3.0);

    let mut bal = Balancer::ema(0.99);
    let err = ule_total_loss(&mut g, &scalar(3.0), None, 0.5, &mut bal).unwrap_err();
    assert!(matches!(err, EngineError::BadConfig(_)));
}

#[test]
fn vanishing_magnitudes_are_clamped() {
    let mut g = Graph::new();
    let mut bal = Balancer::ema(0.99);
    let total = ule_total_loss(&mut g, &scalar(0.0), None, 1.0, &mut bal).unwrap();
    assert_eq!(bal.m_ce(), 1e-12);
    assert_eq!(total.item(), 0.0);
}

// ------------------------------------------------------------------ saliency

#[test]
fn linear_model_saliency_is_the_winning_weight_column() {
    let net = Network::<f64>::mlp(vec![4], &[], 3, 17).unwrap();
    let x = mat(1, 4, &[0.3, -1.2, 0.7, 2.1]);
    let k = net.predict(&x, 8).unwrap()[0];
    let w = &net
        .params()
        .iter()
        .find(|p| p.name == "head.weight")
        .unwrap()
        .value; // (4, 3)

    let sal = saliency(
        &net,
        &x,
        &SalMode::Input {
            scalarize: Scalarize::Predicted,
        },
        Retain::No,
    )
    .unwrap();
    assert_eq!(sal.shape(), &[1, 4]);
    for j in 0..4 {
        assert_eq!(sal.data()[j].to_bits(), w.data()[j * 3 + k].to_bits());
    }

    // sum-of-logits mode sums the columns instead
    let sal = saliency(
        &net,
        &x,
        &SalMode::Input {
            scalarize: Scalarize::SumAll,
        },
        Retain::No,
    )
    .unwrap();
    for j in 0..4 {
        let mut want = 0.0f64;
        for c in 0..3 {
            want = w.data()[j * 3 + c].mul_add(1.0, want);
        }
        assert!((sal.data()[j] - want).abs() < 1e-15);
    }
}

#[test]
fn batched_saliency_matches_per_sample_runs() {
    let net = Network::<f64>::mlp(vec![4], &[6], 3, 9).unwrap();
    let vals: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
    let x = mat(5, 4, &vals);
    let mode = SalMode::Input {
        scalarize: Scalarize::Predicted,
    };
    let batched = saliency(&net, &x, &mode, Retain::No).unwrap();
    for s in 0..5 {
        let xi = mat(1, 4, &vals[s * 4..(s + 1) * 4]);
        let single = saliency(&net, &xi, &mode, Retain::No).unwrap();
        for j in 0..4 {
            assert_eq!(
                batched.data()[s * 4 + j].to_bits(),
                single.data()[j].to_bits(),
                "sample {s} coord {j}"
            );
        }
    }
}

#[test]
fn input_saliency_equals_activation_saliency_at_the_flatten_tap() {
    let net = Network::<f64>::mlp(vec![4], &[6], 3, 29).unwrap();
    let vals: Vec<f64> = (0..12).map(|i| (i as f64 * 0.71).cos()).collect();
    let x = mat(3, 4, &vals);
    let a = saliency(
        &net,
        &x,
        &SalMode::Input {
            scalarize: Scalarize::Predicted,
        },
        Retain::No,
    )
    .unwrap();
    let b = saliency(
        &net,
        &x,
        &SalMode::Activation {
            tap: "flatten".into(),
            scalarize: Scalarize::Predicted,
        },
        Retain::No,
    )
    .unwrap();
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn gram_saliency_is_the_activation_similarity_matrix() {
    let net = Network::<f64>::mlp(vec![3], &[5], 2, 3).unwrap();
    let vals: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).sin()).collect();
    let x = mat(4, 3, &vals);
    let sal = saliency(
        &net,
        &x,
        &SalMode::Gram {
            tap: "relu1".into(),
        },
        Retain::No,
    )
    .unwrap();
    assert_eq!(sal.shape(), &[4, 4]);

    let mut g = Graph::new();
    let fwd = net
        .forward(&mut g, &x, &BoundParams::none(), false, None, Some("relu1"))
        .unwrap();
    let a = fwd.tap.unwrap();
    let (b, w) = (4, 5);
    for i in 0..b {
        for j in 0..b {
            let mut acc = 0.0f64;
            for k in 0..w {
                acc = a.data()[i * w + k].mul_add(a.data()[j * w + k], acc);
            }
            assert_eq!(sal.data()[i * b + j].to_bits(), acc.to_bits(), "({i},{j})");
        }
    }
}

// --------------------------------------------------------------- corner mass

fn corner_net(weight_col0: &[f64]) -> Network<f64> {
    let mut net = Network::<f64>::mlp(vec![1, 4, 6], &[], 3, 1).unwrap();
    let mut w = vec![0.0; 24 * 3];
    for (j, &v) in weight_col0.iter().enumerate() {
        w[j * 3] = v;
    }
    for p in net.params_mut() {
        if p.name == "head.weight" {
            p.value = Tensor::from_vec(vec![24, 3], w.clone()).unwrap();
        } else if p.name == "head.bias" {
            p.value = Tensor::zeros(vec![3]);
        }
    }
    net
}

#[test]
fn corner_mass_is_the_patch_share_for_uniform_attribution() {
    let net = corner_net(&[1.0; 24]);
    let x = Tensor::<f64>::full(vec![2, 1, 4, 6], 1.0);
    let mass = corner_saliency_mass(
        &net,
        &x,
        &PatchSpec { rows: 2, cols: 3 },
        Scalarize::Predicted,
    )
    .unwrap();
    assert!((mass - 0.25).abs() < 1e-12, "{mass}");
}

#[test]
fn corner_mass_saturates_when_attribution_lives_in_the_patch() {
    // class-0 weights supported only on the top-left 2x3 window
    let mut col = vec![0.0; 24];
    for i in 0..2 {
        for j in 0..3 {
            col[i * 6 + j] = 1.0;
        }
    }
    let net = corner_net(&col);
    let x = Tensor::<f64>::full(vec![1, 1, 4, 6], 1.0);
    let mass = corner_saliency_mass(
        &net,
        &x,
        &PatchSpec { rows: 2, cols: 3 },
        Scalarize::Predicted,
    )
    .unwrap();
    assert_eq!(mass, 1.0);
}

#[test]
fn corner_mass_treats_zero_saliency_as_zero() {
    let net = corner_net(&[0.0; 24]);
    let x = Tensor::<f64>::full(vec![3, 1, 4, 6], 1.0);
    let mass = corner_saliency_mass(
        &net,
        &x,
        &PatchSpec { rows: 2, cols: 3 },
        Scalarize::Predicted,
    )
    .unwrap();
    assert_eq!(mass, 0.0);
}

#[test]
fn corner_mass_rejects_oversize_patches() {
    let net = corner_net(&[1.0; 24]);
    let x = Tensor::<f64>::full(vec![1, 1, 4, 6], 1.0);
    assert!(corner_saliency_mass(
        &net,
        &x,
        &PatchSpec { rows: 5, cols: 3 },
        Scalarize::Predicted
    )
    .is_err());
    assert!(corner_saliency_mass(
        &net,
        &x,
        &PatchSpec { rows: 0, cols: 3 },
        Scalarize::Predicted
    )
    .is_err());
}

// ------------------------------------------------------------ training loops

#[test]
fn lambda_one_teacher_matches_erm_bit_for_bit() {
    let data = tiny_synth(3);
    let cfg = UleConfig {
        lambda: 1.0,
        ..quiet_cfg()
    };

    let mut erm = dropout_mlp(7);
    train_erm(&mut erm, &data, &cfg, |_, _| Ok(())).unwrap();

    let mut student = dropout_mlp(21);
    let mut teacher = dropout_mlp(7);
    train_ule(&mut student, &mut teacher, &data, &cfg, |_, _, _| Ok(())).unwrap();

    assert_eq!(param_bits(&erm), param_bits(&teacher));
}

#[test]
fn student_trajectory_is_blind_to_the_teacher() {
    let data = tiny_synth(4);
    let run = |lambda: f64, teacher_seed: u64| {
        let mut s = dropout_mlp(5);
        let mut t = dropout_mlp(teacher_seed);
        let cfg = UleConfig {
            lambda,
            seed: 13,
            ..quiet_cfg()
        };
        train_ule(&mut s, &mut t, &data, &cfg, |_, _, _| Ok(())).unwrap();
        (param_bits(&s), param_bits(&t))
    };
    let (s_low, t_low) = run(0.25, 2);
    let (s_high, t_high) = run(0.75, 2);
    let (s_pure, _) = run(1.0, 40);
    assert_eq!(s_low, s_high);
    assert_eq!(s_low, s_pure);
    // sanity: the teacher itself does feel lambda
    assert_ne!(t_low, t_high);
}

#[test]
fn zero_epochs_is_a_no_op() {
    let data = tiny_synth(5);
    let mut net = dropout_mlp(1);
    let before = param_bits(&net);
    let mut calls = 0;
    let trace = train_erm(
        &mut net,
        &data,
        &UleConfig {
            epochs: 0,
            ..quiet_cfg()
        },
        |_, _| {
            calls += 1;
            Ok(())
        },
    )
    .unwrap();
    assert!(trace.is_empty());
    assert_eq!(calls, 0);
    assert_eq!(before, param_bits(&net));
}

#[test]
fn runaway_loss_aborts_with_context() {
    let data = tiny_synth(6);
    let mut net = dropout_mlp(2);
    let err = train_erm(
        &mut net,
        &data,
        &UleConfig {
            max_loss: 1e-3,
            ..quiet_cfg()
        },
        |_, _| Ok(()),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        EngineError::Diverged {
            epoch: 1,
            step: 0,
            ..
        }
    ));
}

#[test]
fn eval_hook_fires_on_cadence_and_final_epoch() {
    let data = tiny_synth(7);
    let mut seen = Vec::new();
    let mut net = dropout_mlp(3);
    train_erm(
        &mut net,
        &data,
        &UleConfig {
            epochs: 5,
            eval_every: 2,
            ..quiet_cfg()
        },
        |st, _| {
            seen.push(st.epoch);
            Ok(())
        },
    )
    .unwrap();
    assert_eq!(seen, vec![2, 4, 5]);

    let mut seen = Vec::new();
    let mut net = dropout_mlp(3);
    train_erm(
        &mut net,
        &data,
        &UleConfig {
            epochs: 3,
            eval_every: 0,
            ..quiet_cfg()
        },
        |st, _| {
            seen.push(st.epoch);
            Ok(())
        },
    )
    .unwrap();
    assert_eq!(seen, vec![3]);
}

#[test]
fn eval_hook_errors_propagate() {
    let data = tiny_synth(8);
    let mut net = dropout_mlp(4);
    let err = train_erm(&mut net, &data, &quiet_cfg(), |_, _| {
        Err(EngineError::Hook("halt requested".into()))
    })
    .unwrap_err();
    assert!(matches!(err, EngineError::Hook(_)));
}

#[test]
fn erm_learns_separable_data() {
    let (train, _) = make_synthetic::<f64>(&SyntheticSpec {
        n_train: 128,
        n_test: 8,
        d_core: 2,
        d_spur: 1,
        rho: 0.5,
        mu_core: 2.0,
        sigma_core: 0.5,
        seed: 12,
        ..Default::default()
    })
    .unwrap();
    let mut net = Network::<f64>::mlp(vec![3], &[16], 2, 6).unwrap();
    let trace = train_erm(
        &mut net,
        &train,
        &UleConfig {
            epochs: 6,
            batch_size: 32,
            lr: 5e-3,
            seed: 1,
            eval_every: 0,
            ..Default::default()
        },
        |_, _| Ok(()),
    )
    .unwrap();
    assert!(trace.last().unwrap().total < trace.first().unwrap().total);

    let all: Vec<usize> = (0..train.len()).collect();
    let (x, y, _) = train.gather(&all).unwrap();
    let preds = net.predict(&x, 64).unwrap();
    let hits = preds
        .iter()
        .zip(&y)
        .filter(|(p, y)| **p == **y as usize)
        .count();
    assert!(hits as f64 / y.len() as f64 > 0.9, "acc {}", hits);
}

#[test]
fn pure_inversion_objective_drives_saliency_loss_down() {
    let data = tiny_synth(9);
    let mut student = dropout_mlp(10);
    let mut teacher = dropout_mlp(11);
    let trace = train_ule(
        &mut student,
        &mut teacher,
        &data,
        &UleConfig {
            lambda: 0.0,
            epochs: 4,
            batch_size: 16,
            lr: 1e-2,
            seed: 17,
            eval_every: 0,
            ..Default::default()
        },
        |_, _, _| Ok(()),
    )
    .unwrap();
    let first = trace.first().unwrap().sal;
    let last = trace.last().unwrap().sal;
    assert!(last < first, "saliency loss {first} -> {last}");
}

#[test]
fn gram_mode_trains_across_mismatched_architectures() {
    let data = tiny_synth(10);
    let mut student = Network::<f64>::mlp(vec![3], &[8], 2, 1).unwrap();
    let mut teacher = Network::<f64>::mlp(vec![3], &[12], 2, 2).unwrap();
    let s_before = param_bits(&student);
    let t_before = param_bits(&teacher);
    train_ule(
        &mut student,
        &mut teacher,
        &data,
        &UleConfig {
            lambda: 0.5,
            sal_mode: SalMode::Gram {
                tap: "relu1".into(),
            },
            epochs: 1,
            batch_size: 8,
            lr: 1e-3,
            seed: 19,
            eval_every: 0,
            ..Default::default()
        },
        |_, _, _| Ok(()),
    )
    .unwrap();
    assert_ne!(param_bits(&student), s_before);
    assert_ne!(param_bits(&teacher), t_before);
}

#[test]
fn activation_mode_rejects_mismatched_tap_widths() {
    let data = tiny_synth(11);
    let mut student = Network::<f64>::mlp(vec![3], &[8], 2, 1).unwrap();
    let mut teacher = Network::<f64>::mlp(vec![3], &[16], 2, 2).unwrap();
    let err = train_ule(
        &mut student,
        &mut teacher,
        &data,
        &UleConfig {
            lambda: 0.5,
            sal_mode: SalMode::Activation {
                tap: "relu1".into(),
                scalarize: Scalarize::Predicted,
            },
            ..quiet_cfg()
        },
        |_, _, _| Ok(()),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        EngineError::TapWidth {
            student: 8,
            teacher: 16
        }
    ));
}

#[test]
fn config_rejects_out_of_range_knobs() {
    let bad = [
        UleConfig {
            lambda: 1.5,
            ..Default::default()
        },
        UleConfig {
            lr: 0.0,
            ..Default::default()
        },
        UleConfig {
            lr: f64::NAN,
            ..Default::default()
        },
        UleConfig {
            weight_decay: -0.1,
            ..Default::default()
        },
        UleConfig {
            batch_size: 0,
            ..Default::default()
        },
        UleConfig {
            balancer_decay: 1.0,
            ..Default::default()
        },
        UleConfig {
            max_loss: 0.0,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(EngineError::BadConfig(_))));
    }
    assert!(UleConfig::default().validate().is_ok());
}

#[test]
#[ignore = "timing probe, run manually"]
fn ule_step_timing() {
    let n = 256;
    let vals: Vec<f32> = (0..n * 784).map(|i| ((i * 2654435761) % 256) as f32 / 255.0).collect();
    let x = Tensor::from_vec(vec![n, 1, 28, 28], vals).unwrap();
    let labels: Vec<u32> = (0..n as u32).map(|i| i % 10).collect();
    let data = GroupedDataset::new(x, labels.clone(), labels, 10, 10).unwrap();
    let mut student = Network::<f32>::poc_cnn(1, 28, 10, 1).unwrap();
    let mut teacher = Network::<f32>::poc_cnn(1, 28, 10, 2).unwrap();
    let cfg = UleConfig {
        lambda: 0.5,
        epochs: 1,
        batch_size: 32,
        lr: 1e-3,
        seed: 3,
        eval_every: 0,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    train_ule(&mut student, &mut teacher, &data, &cfg, |_, _, _| Ok(())).unwrap();
    let steps = (n / 32) as f64;
    let per = t0.elapsed().as_secs_f64() / steps;
    println!(
        "ule step {:.1} ms -> 10-epoch 8k run {:.1} min, 3 runs {:.1} min",
        per * 1e3,
        per * 250.0 * 10.0 / 60.0,
        per * 250.0 * 10.0 * 3.0 / 60.0
    );

    let mut erm = Network::<f32>::poc_cnn(1, 28, 10, 4).unwrap();
    let t0 = std::time::Instant::now();
    train_erm(&mut erm, &data, &cfg, |_, _| Ok(())).unwrap();
    let per = t0.elapsed().as_secs_f64() / steps;
    println!(
        "erm step {:.1} ms -> 10-epoch 8k run {:.1} min, 3 runs {:.1} min",
        per * 1e3,
        per * 250.0 * 10.0 / 60.0,
        per * 250.0 * 10.0 * 3.0 / 60.0
    );
}
