use super::*;
use crate::gradcheck::model_gradient_error;
use crate::graph::small;
use crate::nn::softmax_rows;
use proptest::prelude::*;
use rand::{seq::SliceRandom, Rng, SeedableRng};

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edge_list(n, &edges).unwrap()
}

fn cfg(hidden: usize, s1: usize, s2: usize) -> IngnnConfig {
    IngnnConfig {
        hidden,
        prop_steps: s1,
        adj_powers: s2,
        dropout: 0.0,
        ..IngnnConfig::default()
    }
}

/// Eval-mode model whose batch-norm layers are exact identities.
fn freeze_bn_to_identity(model: &mut IngnnModel) {
    for bn in &mut model.bn_chain {
        bn.eps = 0.0;
        bn.running_mean.iter_mut().for_each(|m| *m = 0.0);
        bn.running_var.iter_mut().for_each(|v| *v = 1.0);
    }
}

#[test]
fn ego_identity_weight_returns_features() {
    let g = small::cycle(4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_matrix(&mut rng, 4, 3);
    let config = cfg(3, 1, 1);
    let input = ModelInput::new(&g, &x, &config).unwrap();
    let mut m = IngnnModel::new(config, 4, 3, 2, 0).unwrap();
    m.w_ego.weight.value = DenseMatrix::identity(3);
    m.forward(&input, Mode::Eval).unwrap();
    assert_eq!(m.branch_outputs().unwrap().ego, x);
}

#[test]
fn ego_one_hot_selects_weight_rows() {
    let g = small::path(3);
    let x = DenseMatrix::from_rows(&[[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0]]);
    let config = cfg(5, 1, 1);
    let input = ModelInput::new(&g, &x, &config).unwrap();
    let mut m = IngnnModel::new(config, 3, 4, 2, 9).unwrap();
    m.forward(&input, Mode::Eval).unwrap();
    let ego = m.branch_outputs().unwrap().ego;
    for (r, hot) in [1usize, 3, 0].into_iter().enumerate() {
        assert_eq!(ego.row(r), m.w_ego.weight.value.row(hot));
    }
}

#[test]
fn ego_dropout_is_unbiased_monte_carlo() {
    let g = small::path(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_matrix(&mut rng, 2, 3);
    let config = IngnnConfig {
        dropout: 0.5,
        ..cfg(2, 1, 1)
    };
    let input = ModelInput::new(&g, &x, &config).unwrap();
    let mut m = IngnnModel::new(config, 2, 3, 2, 1).unwrap();
    let w = m.w_ego.weight.value.clone();
    let expected = x.matmul(&w).unwrap();
    let draws = 10_000;
    let mut sum = DenseMatrix::zeros(2, 2);
    for _ in 0..draws {
        m.forward(&input, Mode::Train).unwrap();
        sum.add_assign(&m.branch_outputs().unwrap().ego).unwrap();
    }
    // per entry, Var = Σ_k x_k² w_k² · p/(1-p) with p = 0.5
    for r in 0..2 {
        for c in 0..2 {
            let var: f64 = (0..3).map(|k| (x[(r, k)] * w[(k, c)]).powi(2)).sum();
            let sigma = (var / draws as f64).sqrt();
            assert!((sum[(r, c)] / draws as f64 - expected[(r, c)]).abs() < 3.0 * sigma);
        }
    }
}

#[test]
fn agg_examples() {
    let h = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
    let empty = Graph::empty(3).normalized_adjacency();
    assert_eq!(propagate_sum(&empty, &h, 3).unwrap(), DenseMatrix::zeros(3, 2));

    let edge = Graph::from_edge_list(2, &[(0, 1)]).unwrap().normalized_adjacency();
    let got = propagate_sum(&edge, &DenseMatrix::from_rows(&[[1.0], [0.0]]), 2).unwrap();
    assert_eq!(got, DenseMatrix::from_rows(&[[1.0], [1.0]]));

    let c4 = small::cycle(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = random_matrix(&mut rng, 4, 3);
    let got = propagate_sum(&c4.normalized_adjacency(), &h, 1).unwrap();
    for v in 0..4 {
        for c in 0..3 {
            let oracle: f64 = 0.5 * c4.neighbors(v).iter().map(|&u| h[(u, c)]).sum::<f64>();
            assert!((got[(v, c)] - oracle).abs() < 1e-15);
        }
    }
}

#[test]
fn structure_with_identity_bn_is_neighbor_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_graph(&mut rng, 7, 0.4);
    let x = random_matrix(&mut rng, 7, 2);
    let config = cfg(3, 1, 1);
    let input = ModelInput::new(&g, &x, &config).unwrap();
    let mut m = IngnnModel::new(config, 7, 2, 2, 5).unwrap();
    freeze_bn_to_identity(&mut m);
    m.forward(&input, Mode::Eval).unwrap();
    let strc = m.branch_outputs().unwrap().strc;
    let w = &m.w_strc.value;
    let dense_oracle = g.adjacency().to_dense().matmul(w).unwrap();
    assert!(strc.max_abs_diff(&dense_oracle) < 1e-14);
    for v in 0..7 {
        for c in 0..3 {
            let s: f64 = g.neighbors(v).iter().map(|&u| w[(u, c)]).sum();
            assert!((strc[(v, c)] - s).abs() < 1e-14);
        }
    }
}

#[test]
fn structure_on_edgeless_graph_is_beta() {
    let g = Graph::empty(5);
    let x = DenseMatrix::filled(5, 2, 1.0);
    let config = cfg(3, 1, 2);
    let input = ModelInput::new(&g, &x, &config).unwrap();
    let mut m = IngnnModel::new(config, 5, 2, 2, 0).unwrap();
    m.bn_chain[0].beta.value = DenseMatrix::from_rows(&[[0.5, -1.0, 2.0]]);
    m.bn_chain[1].beta.value = DenseMatrix::from_rows(&[[0.25, 0.0, 1.0]]);
    m.forward(&input, Mode::Train).unwrap();
    let strc = m.branch_outputs().unwrap().strc;
    // S_1 = β_1 and S_2 = BN_2(A·S_1) = BN_2(0) = β_2
    for v in 0..5 {
        assert_eq!(strc.row(v), &[0.75, -1.0, 3.0]);
    }
}

#[test]
fn structure_bn_outputs_have_unit_column_std_in_train_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = random_graph(&mut rng, 40, 0.15);
    let x = random_matrix(&mut rng, 40, 3);
    for s2 in 1..=3 {
        let config = cfg(4, 1, s2);
        let input = ModelInput::new(&g, &x, &config).unwrap();
        let mut m = IngnnModel::new(config, 40, 3, 2, 6).unwrap();
        // Run the chain one layer at a time through the public pieces.
        let adj = &input.adj;
        let mut s = m.bn_chain[0].forward(&adj.spmm(&m.w_strc.value).unwrap(), Mode::Train).unwrap();
        for j in 0..s2 {
            if j > 0 {
                s = m.bn_chain[j].forward(&adj.spmm(&s).unwrap(), Mode::Train).unwrap();
            }
            for c in 0..4 {
                let col: Vec<f64> = (0..40).map(|r| s[(r, c)]).collect();
                let mean = col.iter().sum::<f64>() / 40.0;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0;
                assert!(mean.abs() < 1e-12);
                assert!((var.sqrt() - 1.0).abs() < 1e-3, "std {}", var.sqrt());
            }
        }
    }
}

#[test]
fn fusion_weight_examples() {
    let config = cfg(2, 1, 1);
    let mut m = IngnnModel::new(config.clone(), 3, 2, 2, 0).unwrap();
    let pi = m.fusion_weights();
    for w in pi {
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
    m.set_fusion_logits([2f64.ln(), 0.0, 0.0]);
    let pi = m.fusion_weights();
    assert!((pi[0] - 0.5).abs() < 1e-15 && (pi[1] - 0.25).abs() < 1e-15 && (pi[2] - 0.25).abs() < 1e-15);

    let mut eq = IngnnModel::new(
        IngnnConfig {
            fusion_mode: FusionMode::EqualSum,
            ..config.clone()
        },
        3,
        2,
        2,
        0,
    )
    .unwrap();
    eq.set_fusion_logits([5.0, -3.0, 1.0]);
    assert_eq!(eq.fusion_weights(), [1.0 / 3.0; 3]);

    let without_strc = IngnnModel::new(config.with_disabled(Branch::Strc), 3, 2, 2, 0).unwrap();
    assert_eq!(without_strc.fusion_weights(), [0.5, 0.5, 0.0]);
}

#[test]
fn fuse_with_only_ego_signal() {
    // Edgeless graph: H_agg = 0; zero W_strc with β = 0: H_strc = 0.
    let g = Graph::empty(4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_matrix(&mut rng, 4, 3);
    let config = cfg(3, 2, 1);
    let input = ModelInput::new(&g, &x, &config).unwrap();
    let mut m = IngnnModel::new(config, 4, 3, 2, 8).unwrap();
    m.set_fusion_logits([0.3, -0.2, 0.1]);
    let logits = m.forward(&input, Mode::Eval).unwrap();
    let out = m.branch_outputs().unwrap();
    assert_eq!(out.agg, DenseMatrix::zeros(4, 3));
    assert_eq!(out.strc, DenseMatrix::zeros(4, 3));
    let hidden = out.ego.scale(out.pi[0]).relu();
    let want = hidden.matmul(&m.w_pred.weight.value).unwrap();
    assert!(logits.max_abs_diff(&want) < 1e-15);
}

#[test]
fn eval_forward_is_deterministic_and_softmax_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_graph(&mut rng, 12, 0.3);
    let x = random_matrix(&mut rng, 12, 5);
    let config = IngnnConfig {
        dropout: 0.5,
        ..cfg(4, 3, 2)
    };
    let input = ModelInput::new(&g, &x, &config).unwrap();
    let mut m = IngnnModel::new(config, 12, 5, 3, 9).unwrap();
    let a = m.forward(&input, Mode::Eval).unwrap();
    let b = m.forward(&input, Mode::Eval).unwrap();
    assert_eq!(a.data(), b.data());
    let p = softmax_rows(&a);
    for r in 0..12 {
        assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn gradient_case(seed: u64, config: IngnnConfig, mode: Mode) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let g = random_graph(&mut rng, n, 0.5);
    let x = random_matrix(&mut rng, n, 4);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let input = ModelInput::new(&g, &x, &config).unwrap();
    let mut m = IngnnModel::new(config, n, 4, 3, seed).unwrap();
    m.set_fusion_logits([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
    for bn in &mut m.bn_chain {
        bn.gamma.value = DenseMatrix::from_fn(1, bn.features(), |_, _| rng.gen_range(0.5..1.5));
        bn.beta.value = DenseMatrix::from_fn(1, bn.features(), |_, _| rng.gen_range(-0.5..0.5));
        bn.running_mean = (0..bn.features()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        bn.running_var = (0..bn.features()).map(|_| rng.gen_range(0.5..2.0)).collect();
    }
    model_gradient_error(&m, &input, &labels, &[0, 1, 2, 3, 4, 5], mode, 1e-5)
}

#[test]
fn end_to_end_gradient_frozen_bn() {
    for seed in 0..5 {
        let err = gradient_case(seed, cfg(3, 2, 2), Mode::Eval);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn end_to_end_gradient_train_mode_with_dropout() {
    let config = IngnnConfig {
        dropout: 0.3,
        ..cfg(3, 3, 2)
    };
    for seed in 0..5 {
        let err = gradient_case(seed, config.clone(), Mode::Train);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn gradient_variants() {
    let variants = [
        IngnnConfig {
            fusion_mode: FusionMode::Concat,
            ..cfg(3, 2, 2)
        },
        IngnnConfig {
            fusion_mode: FusionMode::EqualSum,
            ..cfg(3, 2, 1)
        },
        IngnnConfig {
            structure_mode: StructureMode::DenseLiteral,
            ..cfg(3, 2, 3)
        },
        IngnnConfig {
            self_loops: true,
            ..cfg(2, 4, 1)
        },
        cfg(3, 2, 2).with_disabled(Branch::Ego),
        cfg(3, 2, 2).with_disabled(Branch::Agg).with_disabled(Branch::Strc),
    ];
    for (i, config) in variants.into_iter().enumerate() {
        for seed in 0..3 {
            let err = gradient_case(100 + seed, config.clone(), Mode::Eval);
            assert!(err < 1e-4, "variant {i} seed {seed}: {err}");
            let err = gradient_case(200 + seed, config.clone(), Mode::Train);
            assert!(err < 1e-4, "variant {i} seed {seed} train: {err}");
        }
    }
}

#[test]
fn disabled_branch_parameters_get_exactly_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = random_graph(&mut rng, 10, 0.3);
    let x = random_matrix(&mut rng, 10, 4);
    let labels: Vec<usize> = (0..10).map(|_| rng.gen_range(0..2)).collect();
    let run = |config: IngnnConfig| {
        let input = ModelInput::new(&g, &x, &config).unwrap();
        let mut m = IngnnModel::new(config, 10, 4, 2, 3).unwrap();
        let logits = m.forward(&input, Mode::Train).unwrap();
        let (_, dl) = crate::nn::softmax_cross_entropy(&logits, &labels, &[0, 1, 2, 3, 4]).unwrap();
        m.backward(&dl, GradTarget::Both).unwrap();
        m
    };
    let m = run(cfg(4, 2, 2).with_disabled(Branch::Strc));
    assert!(m.w_strc.grad_is_zero());
    assert!(m.bn_chain.iter().all(|bn| bn.gamma.grad_is_zero() && bn.beta.grad_is_zero()));
    assert_eq!(m.fusion.grad[(0, 2)], 0.0);
    assert!(!m.w_ego.weight.grad_is_zero());

    let m = run(cfg(4, 2, 2).with_disabled(Branch::Ego));
    assert_eq!(m.fusion.grad[(0, 0)], 0.0);
    let m = run(cfg(4, 2, 2).with_disabled(Branch::Agg));
    assert_eq!(m.fusion.grad[(0, 1)], 0.0);
    let m = run(cfg(4, 2, 2).with_disabled(Branch::Ego).with_disabled(Branch::Agg));
    assert!(m.w_ego.weight.grad_is_zero());
    assert!(!m.w_strc.grad_is_zero());
}

#[test]
fn fusion_target_leaves_weights_untouched_and_vice_versa() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = random_graph(&mut rng, 10, 0.3);
    let x = random_matrix(&mut rng, 10, 4);
    let config = cfg(4, 2, 2);
    let input = ModelInput::new(&g, &x, &config).unwrap();
    let mut m = IngnnModel::new(config, 10, 4, 2, 3).unwrap();
    let labels = vec![0, 1, 0, 1, 1, 0, 0, 1, 1, 0];
    let logits = m.forward(&input, Mode::Eval).unwrap();
    let (_, dl) = crate::nn::softmax_cross_entropy(&logits, &labels, &[5, 6, 7]).unwrap();
    m.backward(&dl, GradTarget::Fusion).unwrap();
    assert!(m.weight_params_mut().iter().all(|p| p.grad_is_zero()));
    assert!(!m.fusion.grad_is_zero());
    m.zero_grad();
    m.backward(&dl, GradTarget::Weights).unwrap();
    assert!(m.fusion.grad_is_zero());
}

#[test]
fn importance_score_examples() {
    let ones = DenseMatrix::filled(2, 2, 1.0);
    let twos = DenseMatrix::filled(2, 2, -2.0);
    let zeros = DenseMatrix::zeros(2, 2);
    let i = importance_scores(&ones, &ones, &zeros, [0.2, 0.3, 0.5]).unwrap();
    assert_eq!(i[2], 0.0);
    let i = importance_scores(&ones, &ones, &ones, [1.0 / 3.0; 3]).unwrap();
    for v in i {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let i = importance_scores(&twos, &ones, &ones, [0.5, 0.25, 0.25]).unwrap();
    assert!((i[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((i[1] - 1.0 / 6.0).abs() < 1e-15 && (i[2] - 1.0 / 6.0).abs() < 1e-15);
    assert!(importance_scores(&zeros, &zeros, &zeros, [1.0 / 3.0; 3]).is_none());
}

#[test]
fn config_validation_and_kv_round_trip() {
    assert!(cfg(0, 1, 1).validate().is_err());
    assert!(cfg(2, 0, 1).validate().is_err());
    let all_off = cfg(2, 1, 1)
        .with_disabled(Branch::Ego)
        .with_disabled(Branch::Agg)
        .with_disabled(Branch::Strc);
    assert!(all_off.validate().is_err());
    assert!(IngnnModel::new(
        IngnnConfig {
            structure_mode: StructureMode::DenseLiteral,
            ..cfg(2, 1, 1)
        },
        600,
        2,
        2,
        0
    )
    .is_err());

    let original = IngnnConfig {
        hidden: 17,
        prop_steps: 5,
        adj_powers: 3,
        dropout: 0.25,
        row_normalize_features: true,
        fusion_mode: FusionMode::Concat,
        disabled: vec![Branch::Agg],
        self_loops: true,
        structure_mode: StructureMode::DenseLiteral,
    };
    let mut parsed = IngnnConfig::default();
    for (k, v) in original.to_kv() {
        assert!(parsed.apply_kv(&k, &v).unwrap());
    }
    assert_eq!(parsed, original);
    assert!(!parsed.apply_kv("lr", "0.1").unwrap());
    assert!(parsed.apply_kv("fusion_mode", "nope").is_err());
}

#[test]
fn checkpoint_tensors_round_trip() {
    let config = cfg(3, 2, 2);
    let a = IngnnModel::new(config.clone(), 5, 4, 3, 1).unwrap();
    let mut b = IngnnModel::new(config, 5, 4, 3, 2).unwrap();
    assert_ne!(a.named_tensors(), b.named_tensors());
    b.load_named_tensors(&a.named_tensors()).unwrap();
    assert_eq!(a.named_tensors(), b.named_tensors());
    let mut missing = a.named_tensors();
    missing.pop();
    assert!(b.load_named_tensors(&missing).is_err());
}

proptest! {
    #[test]
    fn fusion_weights_are_a_probability_vector(p in proptest::array::uniform3(-50.0f64..50.0), off in 0usize..4) {
        let mut mask = [true; 3];
        if off < 3 {
            mask[off] = false;
        }
        let pi = masked_softmax(&p, &mask);
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..3 {
            if mask[k] {
                prop_assert!(pi[k] > 0.0);
            } else {
                prop_assert_eq!(pi[k], 0.0);
            }
        }
    }

    #[test]
    fn aggregation_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, steps in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 9, 0.3);
        let h = random_matrix(&mut rng, 9, 3);
        let a = g.normalized_adjacency();
        let lhs = propagate_sum(&a, &h.scale(alpha), steps).unwrap();
        let rhs = propagate_sum(&a, &h, steps).unwrap().scale(alpha);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn permutation_equivariance_with_frozen_bn(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 8;
        let g = random_graph(&mut rng, n, 0.35);
        let x = random_matrix(&mut rng, n, 3);
        let config = cfg(4, 3, 2);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // row perm[v] of the permuted matrix holds row v of the original
        let mut inverse = vec![0; n];
        for (v, &p) in perm.iter().enumerate() {
            inverse[p] = v;
        }
        let permute_rows = |m: &DenseMatrix| m.select_rows(&inverse);

        let input = ModelInput::new(&g, &x, &config).unwrap();
        let mut m = IngnnModel::new(config.clone(), n, 3, 3, seed).unwrap();
        m.set_fusion_logits([0.2, -0.4, 0.1]);
        let logits = m.forward(&input, Mode::Eval).unwrap();

        let g_p = g.permuted(&perm);
        let input_p = ModelInput::new(&g_p, &permute_rows(&x), &config).unwrap();
        let mut m_p = m.clone();
        m_p.w_strc.value = permute_rows(&m.w_strc.value);
        let logits_p = m_p.forward(&input_p, Mode::Eval).unwrap();
        prop_assert!(logits_p.max_abs_diff(&permute_rows(&logits)) < 1e-12);
    }
}
