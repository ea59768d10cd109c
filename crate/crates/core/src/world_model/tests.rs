use crate::gradcheck::{check_store_grads, FD_STEP, FD_TOL};
use crate::matrix::Matrix;
use crate::nn::ParamStore;
use crate::rng::Rng;
use crate::world_model::{ModelTargets, RunningScale, SegmentBatch, WorldModel, WorldModelConfig};

fn tiny_model() -> WorldModel<f64> {
    WorldModel::new(WorldModelConfig::tiny()).unwrap()
}

fn random_rows(rng: &mut Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.range(lo, hi)).collect()).unwrap()
}

/// Batch with one masked action dim on the second row.
fn tiny_batch(model: &WorldModel<f64>, rng: &mut Rng, b: usize) -> SegmentBatch<f64> {
    let cfg = &model.cfg;
    let h = cfg.horizon;
    let mut action_mask = Matrix::zeros(b, cfg.action_dim);
    action_mask.fill(1.0);
    if b > 1 {
        action_mask.set(1, cfg.action_dim - 1, 0.0);
    }
    let mut actions = Vec::new();
    for _ in 0..h {
        let mut a = random_rows(rng, b, cfg.action_dim, -1.0, 1.0);
        for r in 0..b {
            for i in 0..cfg.action_dim {
                if action_mask.get(r, i) == 0.0 {
                    a.set(r, i, 0.0);
                }
            }
        }
        actions.push(a);
    }
    SegmentBatch {
        states: (0..=h)
            .map(|_| random_rows(rng, b, cfg.state_dim, -1.0, 1.0))
            .collect(),
        img: None,
        lang: random_rows(rng, b, cfg.lang_dim, -1.0, 1.0),
        actions,
        rewards: (0..h)
            .map(|_| (0..b).map(|_| rng.range(-1.0, 1.0)).collect())
            .collect(),
        gammas: vec![0.97; b],
        task_ids: vec![0; b],
        is_demo: vec![true; b],
        action_mask,
    }
}

fn init(model: &WorldModel<f64>, seed: u64) -> (ParamStore<f64>, ParamStore<f64>) {
    let mut rng = Rng::seed_from(seed);
    let store = model.init_params(&mut rng);
    let target = model.init_target(&store).unwrap();
    (store, target)
}

/// Forces an MLP head to emit constant logits that decode to `value`.
fn force_head_constant(model: &WorldModel<f64>, store: &mut ParamStore<f64>, prefix: &str, value: f64) {
    let w_name = format!("{prefix}.l1.w");
    let b_name = format!("{prefix}.l1.b");
    store.get_mut(&w_name).unwrap().values.fill(0.0);
    let weights = model.disc.two_hot(value);
    let logits: Vec<f64> = weights.iter().map(|&w| (w + 1e-300).ln().max(-1e9)).collect();
    let bias = &mut store.get_mut(&b_name).unwrap().values;
    bias.row_mut(0).copy_from_slice(&logits);
}

#[test]
fn paper_profile_matches_reference_parameter_count() {
    let model: WorldModel<f64> = WorldModel::new(WorldModelConfig::default_paper()).unwrap();
    assert_eq!(model.num_params(), 20_356_734);
}

#[test]
fn encode_outputs_normalized_simplices() {
    let model = tiny_model();
    let (store, _) = init(&model, 1);
    let mut rng = Rng::seed_from(2);
    let s = random_rows(&mut rng, 3, model.cfg.state_dim, -1.0, 1.0);
    let g = random_rows(&mut rng, 3, model.cfg.lang_dim, -1.0, 1.0);
    let z = model.encode(&store, &s, None, &g).unwrap();
    for r in 0..3 {
        for group in z.row(r).chunks(model.cfg.simplicial_v) {
            let sum: f64 = group.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn encode_deterministic_and_mask_respected() {
    let model = tiny_model();
    let (store, _) = init(&model, 3);
    let mut rng = Rng::seed_from(4);
    // Native width 4 of 6: the last two state dims are padding. Two raw
    // observations that differ only there are identical after the
    // ingestion zeroing, so their embeddings match bitwise.
    let mut s1 = random_rows(&mut rng, 1, model.cfg.state_dim, -1.0, 1.0);
    let mut s2 = s1.clone();
    s2.set(0, 4, 9.0);
    s2.set(0, 5, -9.0);
    for s in [&mut s1, &mut s2] {
        s.set(0, 4, 0.0);
        s.set(0, 5, 0.0);
    }
    let g = random_rows(&mut rng, 1, model.cfg.lang_dim, -1.0, 1.0);
    let z1 = model.encode(&store, &s1, None, &g).unwrap();
    let z2 = model.encode(&store, &s2, None, &g).unwrap();
    assert_eq!(z1, z2);
    let z3 = model.encode(&store, &s1, None, &g).unwrap();
    assert_eq!(z1, z3);
}

#[test]
fn encode_with_image_pathway() {
    let mut cfg = WorldModelConfig::tiny();
    cfg.img_dim = Some(5);
    let model: WorldModel<f64> = WorldModel::new(cfg).unwrap();
    let (store, _) = init(&model, 5);
    let mut rng = Rng::seed_from(6);
    let s = random_rows(&mut rng, 2, model.cfg.state_dim, -1.0, 1.0);
    let img = random_rows(&mut rng, 2, 5, -1.0, 1.0);
    let g = random_rows(&mut rng, 2, model.cfg.lang_dim, -1.0, 1.0);
    let z = model.encode(&store, &s, Some(&img), &g).unwrap();
    assert_eq!(z.cols(), model.cfg.latent_dim);
    // omitting the image must error when the pathway is configured
    assert!(model.encode(&store, &s, None, &g).is_err());
}

#[test]
fn losses_accept_synthetic_image_embeddings() {
    let mut cfg = WorldModelConfig::tiny();
    cfg.img_dim = Some(5);
    let model: WorldModel<f64> = WorldModel::new(cfg).unwrap();
    let (mut store, target) = init(&model, 51);
    let mut rng = Rng::seed_from(52);
    let mut batch = tiny_batch(&model, &mut rng, 2);
    let h = batch.horizon();
    batch.img = Some((0..=h).map(|_| random_rows(&mut rng, 2, 5, -1.0, 1.0)).collect());
    let out = model.model_loss(&mut store, &target, &batch, &mut rng).unwrap();
    assert!(out.loss.is_finite());
    // a different image embedding changes the loss
    let mut batch2 = batch.clone();
    batch2.img = Some((0..=h).map(|_| random_rows(&mut rng, 2, 5, -1.0, 1.0)).collect());
    let mut rng2 = Rng::seed_from(53);
    let mut s2 = store.clone();
    let mut rng3 = Rng::seed_from(53);
    let mut s3 = store.clone();
    let a = model.model_loss(&mut s2, &target, &batch, &mut rng2).unwrap();
    let b = model.model_loss(&mut s3, &target, &batch2, &mut rng3).unwrap();
    assert_ne!(a.loss, b.loss);
}

#[test]
fn dynamics_normalized_and_deterministic() {
    let model = tiny_model();
    let (store, _) = init(&model, 7);
    let mut rng = Rng::seed_from(8);
    let s = random_rows(&mut rng, 2, model.cfg.state_dim, -1.0, 1.0);
    let g = random_rows(&mut rng, 2, model.cfg.lang_dim, -1.0, 1.0);
    let z = model.encode(&store, &s, None, &g).unwrap();
    let a = random_rows(&mut rng, 2, model.cfg.action_dim, -1.0, 1.0);
    let z1 = model.dynamics_step(&store, &z, &a, &g).unwrap();
    for r in 0..2 {
        for group in z1.row(r).chunks(model.cfg.simplicial_v) {
            let sum: f64 = group.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
    assert_eq!(z1, model.dynamics_step(&store, &z, &a, &g).unwrap());
}

#[test]
fn dynamics_action_gradient_matches_fd() {
    let model = tiny_model();
    let (mut store, _) = init(&model, 9);
    let mut rng = Rng::seed_from(10);
    let z = {
        let s = random_rows(&mut rng, 1, model.cfg.state_dim, -1.0, 1.0);
        let g = random_rows(&mut rng, 1, model.cfg.lang_dim, -1.0, 1.0);
        model.encode(&store, &s, None, &g).unwrap()
    };
    let g = random_rows(&mut rng, 1, model.cfg.lang_dim, -1.0, 1.0);
    let a = random_rows(&mut rng, 1, model.cfg.action_dim, -0.9, 0.9);
    // scalar projection of z' so the loss is a single number
    let probe = random_rows(&mut rng, 1, model.cfg.latent_dim, -1.0, 1.0);
    let (z1, tape) = model.dynamics_step_tape(&store, &z, &a, &g).unwrap();
    let _ = z1;
    let dy = probe.clone();
    let din = model.dynamics.backward_input_only(&mut store, &tape, &dy).unwrap();
    let eval = |a: &Matrix<f64>| {
        let z1 = model.dynamics_step(&store, &z, a, &g).unwrap();
        z1.row(0).iter().zip(probe.row(0)).map(|(x, p)| x * p).sum()
    };
    let widths = [model.cfg.latent_dim, model.cfg.action_dim, model.cfg.lang_dim];
    let da = din.split_cols(&widths).unwrap()[1].clone();
    let report = crate::gradcheck::check_matrix_grad(&da, &a, eval, FD_STEP);
    assert!(report.ok(FD_TOL), "worst: {:?}", report.worst);
}

#[test]
fn policy_zero_noise_returns_tanh_mean_and_masks() {
    let model = tiny_model();
    let (store, _) = init(&model, 11);
    let mut rng = Rng::seed_from(12);
    let z = random_rows(&mut rng, 2, model.cfg.latent_dim, 0.0, 1.0);
    let g = random_rows(&mut rng, 2, model.cfg.lang_dim, -1.0, 1.0);
    let mut mask = Matrix::zeros(2, model.cfg.action_dim);
    mask.fill(1.0);
    mask.set(1, 0, 0.0);
    let noise = Matrix::zeros(2, model.cfg.action_dim);
    let out = model.policy_forward(&store, &z, &g, &noise, Some(&mask)).unwrap();
    let mean_action = model.policy_mean_action(&store, &z, &g, Some(&mask)).unwrap();
    assert_eq!(out.action, mean_action);
    assert_eq!(out.action.get(1, 0), 0.0);
    for i in 0..model.cfg.action_dim {
        assert!((out.action.get(0, i) - out.mean.get(0, i).tanh()).abs() < 1e-12);
    }
}

#[test]
fn policy_log_prob_matches_independent_density() {
    let model = tiny_model();
    let (store, _) = init(&model, 13);
    let mut rng = Rng::seed_from(14);
    let z = random_rows(&mut rng, 4, model.cfg.latent_dim, 0.0, 1.0);
    let g = random_rows(&mut rng, 4, model.cfg.lang_dim, -1.0, 1.0);
    let noise = random_rows(&mut rng, 4, model.cfg.action_dim, -2.0, 2.0);
    let out = model.policy_forward(&store, &z, &g, &noise, None).unwrap();
    for r in 0..4 {
        let independent = WorldModel::<f64>::log_prob_of_action(
            out.mean.row(r),
            out.log_std.row(r),
            out.action.row(r),
            None,
        );
        assert!(
            (out.log_prob[r] - independent).abs() < 1e-5,
            "row {r}: {} vs {independent}",
            out.log_prob[r]
        );
    }
}

#[test]
fn td_target_arithmetic_with_forced_heads() {
    let model = tiny_model();
    let (mut store, _) = init(&model, 15);
    for i in 0..model.cfg.q_ensemble {
        force_head_constant(&model, &mut store, &format!("q{i}"), 10.0);
    }
    let target = model.init_target(&store).unwrap();
    let mut rng = Rng::seed_from(16);
    let z = random_rows(&mut rng, 1, model.cfg.latent_dim, 0.0, 1.0);
    let g = random_rows(&mut rng, 1, model.cfg.lang_dim, -1.0, 1.0);
    let td = model
        .td_target(&store, &target, &[1.0], &[0.99], &z, &g, None, &mut rng)
        .unwrap();
    assert!((td[0] - 10.9).abs() < 1e-6, "{}", td[0]);
}

#[test]
fn td_target_min_over_full_subset() {
    let mut cfg = WorldModelConfig::tiny();
    cfg.q_subset = cfg.q_ensemble; // degenerate subset = all heads
    let model: WorldModel<f64> = WorldModel::new(cfg).unwrap();
    let (mut store, _) = init(&model, 17);
    force_head_constant(&model, &mut store, "q0", 4.0);
    force_head_constant(&model, &mut store, "q1", -3.0);
    let target = model.init_target(&store).unwrap();
    let mut rng = Rng::seed_from(18);
    let z = random_rows(&mut rng, 1, model.cfg.latent_dim, 0.0, 1.0);
    let g = random_rows(&mut rng, 1, model.cfg.lang_dim, -1.0, 1.0);
    let td = model
        .td_target(&store, &target, &[0.0], &[1.0], &z, &g, None, &mut rng)
        .unwrap();
    assert!((td[0] - (-3.0)).abs() < 1e-6);
}

#[test]
fn min_subset_expectation_below_ensemble_mean() {
    let mut cfg = WorldModelConfig::tiny();
    cfg.q_ensemble = 5;
    cfg.q_subset = 2;
    let model: WorldModel<f64> = WorldModel::new(cfg).unwrap();
    let (mut store, _) = init(&model, 19);
    let head_values = [1.0, 2.0, 3.0, 4.0, 5.0];
    for (i, &v) in head_values.iter().enumerate() {
        force_head_constant(&model, &mut store, &format!("q{i}"), v);
    }
    let target = model.init_target(&store).unwrap();
    let mut rng = Rng::seed_from(20);
    let z = random_rows(&mut rng, 1, model.cfg.latent_dim, 0.0, 1.0);
    let g = random_rows(&mut rng, 1, model.cfg.lang_dim, -1.0, 1.0);
    let mut sum = 0.0;
    let n = 2000;
    for _ in 0..n {
        let td = model
            .td_target(&store, &target, &[0.0], &[1.0], &z, &g, None, &mut rng)
            .unwrap();
        sum += td[0];
    }
    let mean_of_min = sum / n as f64;
    let ensemble_mean = head_values.iter().sum::<f64>() / 5.0;
    // E[min of 2 of 5 distinct values] = 2.0 here; well below the mean 3.0
    assert!(mean_of_min < ensemble_mean - 0.5, "{mean_of_min}");
}

#[test]
fn lambda_weights_follow_geometric_decay() {
    let mut cfg = WorldModelConfig::tiny();
    cfg.horizon = 3;
    let model: WorldModel<f64> = WorldModel::new(cfg).unwrap();
    let w0 = model.lambda_weight(0);
    let w1 = model.lambda_weight(1);
    let w2 = model.lambda_weight(2);
    assert!((w1 / w0 - 0.5).abs() < 1e-12);
    assert!((w2 / w0 - 0.25).abs() < 1e-12);
}

#[test]
fn perfect_dynamics_gives_zero_self_prediction() {
    let model = tiny_model();
    let (mut store, target) = init(&model, 21);
    let mut rng = Rng::seed_from(22);
    let batch = tiny_batch(&model, &mut rng, 3);
    // First compute the rollout, then feed the rollout latents back as
    // the "true" next embeddings: dynamics now predicts its own targets
    // exactly and the self-prediction term must vanish.
    let targets0 = model
        .compute_model_targets(&store, &target, &batch, &mut rng.clone())
        .unwrap();
    let out = model
        .model_loss_given_targets(&mut store.clone(), &batch, &targets0)
        .unwrap();
    let synthetic = ModelTargets {
        next_embeddings: out.latents[1..].to_vec(),
        td: targets0.td,
    };
    let out2 = model
        .model_loss_given_targets(&mut store, &batch, &synthetic)
        .unwrap();
    assert!(out2.self_pred.abs() < 1e-24, "{}", out2.self_pred);
}

#[test]
fn model_loss_full_equals_split_computation_bitwise() {
    let model = tiny_model();
    let (store, target) = init(&model, 23);
    let mut rng = Rng::seed_from(24);
    let batch = tiny_batch(&model, &mut rng, 4);

    let mut s1 = store.clone();
    let mut loss_rng1 = Rng::seed_from(99);
    let out1 = model.model_loss(&mut s1, &target, &batch, &mut loss_rng1).unwrap();

    let mut s2 = store.clone();
    let mut loss_rng2 = Rng::seed_from(99);
    let targets = model
        .compute_model_targets(&s2, &target, &batch, &mut loss_rng2)
        .unwrap();
    let out2 = model.model_loss_given_targets(&mut s2, &batch, &targets).unwrap();

    assert_eq!(out1.loss, out2.loss);
    for (name, e1) in s1.iter() {
        let e2 = s2.get(name).unwrap();
        assert_eq!(e1.grad.data(), e2.grad.data(), "grad mismatch for {name}");
    }
}

#[test]
fn target_branch_receives_zero_gradient() {
    // Replacing the computed target embeddings with detached copies of
    // the same numbers must not change any gradient: the target branch
    // contributes no gradient path.
    let model = tiny_model();
    let (store, target) = init(&model, 25);
    let mut rng = Rng::seed_from(26);
    let batch = tiny_batch(&model, &mut rng, 3);
    let mut loss_rng = Rng::seed_from(7);
    let targets = model
        .compute_model_targets(&store, &target, &batch, &mut loss_rng)
        .unwrap();
    let copies = ModelTargets {
        next_embeddings: targets.next_embeddings.iter().map(|m| m.clone()).collect(),
        td: targets.td.clone(),
    };
    let mut s1 = store.clone();
    model.model_loss_given_targets(&mut s1, &batch, &targets).unwrap();
    let mut s2 = store.clone();
    model.model_loss_given_targets(&mut s2, &batch, &copies).unwrap();
    for (name, e1) in s1.iter() {
        let e2 = s2.get(name).unwrap();
        assert_eq!(e1.grad.data(), e2.grad.data(), "{name}");
    }
    // the encoder still learns through the online branch z_0
    let enc_grad_norm: f64 = s1
        .iter()
        .filter(|(n, _)| n.starts_with("h."))
        .map(|(_, e)| e.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    assert!(enc_grad_norm > 0.0);
}

#[test]
fn q_target_store_never_accumulates_gradient() {
    let model = tiny_model();
    let (mut store, target) = init(&model, 27);
    let mut rng = Rng::seed_from(28);
    let batch = tiny_batch(&model, &mut rng, 3);
    let out = model.model_loss(&mut store, &target, &batch, &mut rng).unwrap();
    let mut scale_rng = Rng::seed_from(5);
    model
        .policy_loss(&mut store, &out.latents, &batch, 1.0, 1.0, &mut scale_rng)
        .unwrap();
    for (name, e) in target.iter() {
        assert!(
            e.grad.data().iter().all(|&g| g == 0.0),
            "target grad nonzero for {name}"
        );
    }
}

#[test]
fn policy_loss_grads_flow_into_policy_only() {
    let model = tiny_model();
    let (mut store, target) = init(&model, 29);
    let mut rng = Rng::seed_from(30);
    let batch = tiny_batch(&model, &mut rng, 3);
    let out = model.model_loss(&mut store, &target, &batch, &mut rng).unwrap();
    store.zero_grads();
    model
        .policy_loss(&mut store, &out.latents, &batch, 1.0, 1.0, &mut rng)
        .unwrap();
    for (name, e) in store.iter() {
        let norm: f64 = e.grad.data().iter().map(|g| g * g).sum();
        if name.starts_with("p.") {
            continue;
        }
        assert_eq!(norm, 0.0, "gradient leaked into {name}");
    }
    let p_norm: f64 = store
        .iter()
        .filter(|(n, _)| n.starts_with("p."))
        .map(|(_, e)| e.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum();
    assert!(p_norm > 0.0);
}

#[test]
fn bc_term_vanishes_when_actions_equal_policy_mean() {
    let model = tiny_model();
    let (mut store, target) = init(&model, 31);
    let mut rng = Rng::seed_from(32);
    let mut batch = tiny_batch(&model, &mut rng, 2);
    let mut loss_rng = Rng::seed_from(1);
    let targets = model
        .compute_model_targets(&store, &target, &batch, &mut loss_rng)
        .unwrap();
    let out = model
        .model_loss_given_targets(&mut store.clone(), &batch, &targets)
        .unwrap();
    // overwrite batch actions (valid dims) with the policy mean at each step
    for t in 0..batch.horizon() {
        let mean = model
            .policy_mean_action(&store, &out.latents[t], &batch.lang, Some(&batch.action_mask))
            .unwrap();
        batch.actions[t] = mean;
    }
    // latents depend on actions, so recompute the rollout with the new
    // actions and re-align the means until stable; two passes suffice for
    // the test because we compare against the recomputed latents.
    let out2 = model
        .model_loss_given_targets(&mut store.clone(), &batch, &targets)
        .unwrap();
    for t in 0..batch.horizon() {
        let mean = model
            .policy_mean_action(&store, &out2.latents[t], &batch.lang, Some(&batch.action_mask))
            .unwrap();
        batch.actions[t] = mean;
    }
    let out3 = model
        .model_loss_given_targets(&mut store.clone(), &batch, &targets)
        .unwrap();
    let mut rng2 = Rng::seed_from(2);
    let pol = model
        .policy_loss(&mut store, &out3.latents, &batch, 1.0, 0.0, &mut rng2)
        .unwrap();
    // actions at step 0 match exactly (z_0 does not depend on actions);
    // later steps drift slightly, so the BC term is tiny but not zero.
    assert!(pol.bc < 1e-6, "bc = {}", pol.bc);
}

#[test]
fn entropy_coefficient_raises_converged_log_std() {
    // 1-step toy mirroring the closed-form Gaussian trade-off: against a
    // fixed Q landscape with negative curvature in the action, the
    // stationary point of -Q - c_H * entropy has sigma* growing with
    // c_H. Fit the Q heads to Q(z, a) = -2 * sum(a^2) first, then train
    // only the policy and compare converged spreads.
    let mut base_cfg = WorldModelConfig::tiny();
    base_cfg.horizon = 1;
    base_cfg.coef_bc = 0.0;
    let fit_model: WorldModel<f64> = WorldModel::new(base_cfg.clone()).unwrap();
    let (mut store, _) = init(&fit_model, 33);
    let mut rng = Rng::seed_from(34);
    let adam = crate::nn::AdamConfig::default();
    let b = 64;
    let g = random_rows(&mut rng, b, base_cfg.lang_dim, -1.0, 1.0);
    let z = {
        let s = random_rows(&mut rng, b, base_cfg.state_dim, -1.0, 1.0);
        fit_model.encode(&store, &s, None, &g).unwrap()
    };
    for _ in 0..800 {
        let a = random_rows(&mut rng, b, base_cfg.action_dim, -1.0, 1.0);
        let qin = Matrix::concat_cols(&[&z, &a, &g]).unwrap();
        let mut targets = Matrix::zeros(b, base_cfg.num_bins);
        for r in 0..b {
            let want = -2.0 * a.row(r).iter().map(|v| v * v).sum::<f64>();
            fit_model.disc.two_hot_into(want, targets.row_mut(r));
        }
        for q in &fit_model.qs {
            let (logits, tape) = q.forward_tape(&store, &qin).unwrap();
            let (_, dlogits) = crate::discretizer::ce_loss_rows(&logits, &targets).unwrap();
            q.backward(&mut store, &tape, &dlogits).unwrap();
        }
        crate::nn::adam_step(&mut store, &adam).unwrap();
    }

    let run = |coef: f64| -> f64 {
        let mut cfg = base_cfg.clone();
        cfg.coef_entropy = coef;
        let model: WorldModel<f64> = WorldModel::new(cfg).unwrap();
        let mut s = store.clone();
        let mut rng = Rng::seed_from(35);
        let latents = vec![z.clone()];
        let mut mask = Matrix::zeros(b, model.cfg.action_dim);
        mask.fill(1.0);
        let batch = SegmentBatch {
            states: vec![
                Matrix::zeros(b, model.cfg.state_dim),
                Matrix::zeros(b, model.cfg.state_dim),
            ],
            img: None,
            lang: g.clone(),
            actions: vec![Matrix::zeros(b, model.cfg.action_dim)],
            rewards: vec![vec![0.0; b]],
            gammas: vec![0.97; b],
            task_ids: vec![0; b],
            is_demo: vec![false; b],
            action_mask: mask,
        };
        let adam = crate::nn::AdamConfig::default();
        for _ in 0..600 {
            // policy_loss touches p only; the fitted Q heads stay frozen
            model
                .policy_loss(&mut s, &latents, &batch, 1.0, 1.0, &mut rng)
                .unwrap();
            crate::nn::adam_step(&mut s, &adam).unwrap();
        }
        let input = Matrix::concat_cols(&[&z, &g]).unwrap();
        let out = model.policy.forward(&s, &input).unwrap();
        let m = model.cfg.action_dim;
        let mut acc = 0.0;
        for r in 0..out.rows() {
            for i in m..2 * m {
                acc += out.get(r, i).clamp(-10.0, 2.0);
            }
        }
        acc / (out.rows() * m) as f64
    };
    let low = run(0.01);
    let high = run(1.0);
    assert!(high > low, "log_std {high} !> {low}");
}

#[test]
fn lambda_weighting_scales_per_step_gradients_linearly() {
    // Gradients are linear in the per-step weights lambda^t. At H=2 the
    // weight vector is [1, lambda], so grad(lambda) = g0 + lambda*g1;
    // check that three lambdas are collinear.
    let grads_for = |lambda: f64| -> Vec<f64> {
        let mut cfg = WorldModelConfig::tiny();
        cfg.lambda = lambda;
        let model: WorldModel<f64> = WorldModel::new(cfg).unwrap();
        let (store, target) = init(&model, 35);
        let mut rng = Rng::seed_from(36);
        let batch = tiny_batch(&model, &mut rng, 3);
        let mut loss_rng = Rng::seed_from(3);
        let mut s = store.clone();
        model.model_loss(&mut s, &target, &batch, &mut loss_rng).unwrap();
        let mut flat = Vec::new();
        for (_, e) in s.iter() {
            flat.extend_from_slice(e.grad.data());
        }
        flat
    };
    let g_a = grads_for(0.25);
    let g_b = grads_for(1.0);
    let g_c = grads_for(0.5);
    for i in 0..g_a.len() {
        // linear interpolation: g(0.5) = g(0.25) + (0.5-0.25)/(1-0.25)*(g(1)-g(0.25))
        let predicted = g_a[i] + (0.5 - 0.25) / (1.0 - 0.25) * (g_b[i] - g_a[i]);
        assert!(
            (g_c[i] - predicted).abs() < 1e-9_f64.max(1e-9 * predicted.abs()),
            "i={i}: {} vs {predicted}",
            g_c[i]
        );
    }
}

#[test]
fn losses_finite_across_many_seeds() {
    let model = tiny_model();
    for seed in 0..1000 {
        let mut rng = Rng::seed_from(seed);
        let store = model.init_params(&mut rng);
        let target = model.init_target(&store).unwrap();
        let mut s = store;
        let batch = tiny_batch(&model, &mut rng, 2);
        let out = model.model_loss(&mut s, &target, &batch, &mut rng).unwrap();
        assert!(out.loss.is_finite());
        let pol = model
            .policy_loss(&mut s, &out.latents, &batch, 1.0, 1.0, &mut rng)
            .unwrap();
        assert!(pol.loss.is_finite());
    }
}

#[test]
fn pretrain_loss_decomposes_and_trains_q_heads() {
    let model = tiny_model();
    let (mut store, target) = init(&model, 37);
    let mut rng = Rng::seed_from(38);
    let batch = tiny_batch(&model, &mut rng, 3);
    let (model_out, pol_out) = model
        .pretrain_loss(&mut store, &target, &batch, 1.0, &mut rng)
        .unwrap();
    // Q term disabled: policy loss is BC + entropy only
    assert_eq!(pol_out.q_term, 0.0);
    assert!((pol_out.loss - (pol_out.bc + pol_out.entropy_term)).abs() < 1e-12);
    assert!(model_out.loss.is_finite());
    // Q heads still receive value-CE gradient through the model objective
    let q_grad: f64 = store
        .iter()
        .filter(|(n, _)| n.starts_with("q0."))
        .map(|(_, e)| e.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum();
    assert!(q_grad > 0.0);
}

#[test]
fn pretrain_loss_decreases_on_fixture() {
    let model = tiny_model();
    let (mut store, mut target) = init(&model, 39);
    let mut rng = Rng::seed_from(40);
    let batch = tiny_batch(&model, &mut rng, 8);
    let adam = crate::nn::AdamConfig::default();
    let mut scale = RunningScale::default();
    let mut first = 0.0;
    let mut last = 0.0;
    let mut bc_terms = Vec::with_capacity(200);
    for it in 0..200 {
        let (m_out, p_out) = model
            .pretrain_loss(&mut store, &target, &batch, scale.scale(), &mut rng)
            .unwrap();
        scale.update(p_out.batch_p5, p_out.batch_p95);
        let total = m_out.loss + p_out.loss;
        if it == 0 {
            first = total;
        }
        last = total;
        bc_terms.push(p_out.bc);
        crate::nn::adam_step(&mut store, &adam).unwrap();
        crate::nn::ema_update(&mut target, &store, 0.99).unwrap();
    }
    assert!(last < first, "{last} !< {first}");
    // smoothed BC term decreases monotonically across quarters
    let quarter = |i: usize| -> f64 { bc_terms[i * 50..(i + 1) * 50].iter().sum::<f64>() / 50.0 };
    assert!(quarter(0) > quarter(1) && quarter(1) > quarter(2) && quarter(2) > quarter(3));
}

#[test]
fn bc_loss_touches_only_encoder_and_policy() {
    let model = tiny_model();
    let (mut store, _) = init(&model, 41);
    let mut rng = Rng::seed_from(42);
    let batch = tiny_batch(&model, &mut rng, 3);
    let loss = model.bc_loss(&mut store, &batch).unwrap();
    assert!(loss.is_finite() && loss >= 0.0);
    for (name, e) in store.iter() {
        let norm: f64 = e.grad.data().iter().map(|g| g * g).sum();
        if name.starts_with("d.") || name.starts_with("r.") || name.starts_with("q") {
            assert_eq!(norm, 0.0, "gradient leaked into {name}");
        }
    }
    let trained: f64 = store
        .iter()
        .filter(|(n, _)| n.starts_with("p.") || n.starts_with("h."))
        .map(|(_, e)| e.grad.data().iter().map(|g| g * g).sum::<f64>())
        .sum();
    assert!(trained > 0.0);
}

#[test]
fn model_loss_gradients_match_finite_differences() {
    let model = tiny_model();
    let (store, target) = init(&model, 43);
    let mut rng = Rng::seed_from(44);
    let batch = tiny_batch(&model, &mut rng, 2);
    let mut loss_rng = Rng::seed_from(11);
    let targets = model
        .compute_model_targets(&store, &target, &batch, &mut loss_rng)
        .unwrap();
    let mut analytic = store.clone();
    model
        .model_loss_given_targets(&mut analytic, &batch, &targets)
        .unwrap();
    let eval = |s: &ParamStore<f64>| {
        let mut sc = s.clone();
        model
            .model_loss_given_targets(&mut sc, &batch, &targets)
            .unwrap()
            .loss
    };
    let report = check_store_grads(&analytic, eval, |_| true, FD_STEP);
    assert!(
        report.ok(FD_TOL),
        "checked {}, worst {:?} (err {})",
        report.checked,
        report.worst,
        report.max_rel_err
    );
}

#[test]
fn policy_loss_gradients_match_finite_differences() {
    let model = tiny_model();
    let (store, target) = init(&model, 45);
    let mut rng = Rng::seed_from(46);
    let batch = tiny_batch(&model, &mut rng, 2);
    let mut loss_rng = Rng::seed_from(13);
    let latents = {
        let mut s = store.clone();
        model
            .model_loss(&mut s, &target, &batch, &mut loss_rng)
            .unwrap()
            .latents
    };
    let mut analytic = store.clone();
    let fixed_rng = Rng::seed_from(17);
    model
        .policy_loss(&mut analytic, &latents, &batch, 2.0, 1.0, &mut fixed_rng.clone())
        .unwrap();
    let eval = |s: &ParamStore<f64>| {
        let mut sc = s.clone();
        model
            .policy_loss(&mut sc, &latents, &batch, 2.0, 1.0, &mut fixed_rng.clone())
            .unwrap()
            .loss
    };
    // gradients are defined into the policy head only
    let report = check_store_grads(&analytic, eval, |n| n.starts_with("p."), FD_STEP);
    assert!(
        report.ok(FD_TOL),
        "checked {}, worst {:?} (err {})",
        report.checked,
        report.worst,
        report.max_rel_err
    );
}

#[test]
fn bc_loss_gradients_match_finite_differences() {
    let model = tiny_model();
    let (store, _) = init(&model, 47);
    let mut rng = Rng::seed_from(48);
    let batch = tiny_batch(&model, &mut rng, 2);
    let mut analytic = store.clone();
    model.bc_loss(&mut analytic, &batch).unwrap();
    let eval = |s: &ParamStore<f64>| {
        let mut sc = s.clone();
        model.bc_loss(&mut sc, &batch).unwrap()
    };
    let report = check_store_grads(&analytic, eval, |_| true, FD_STEP);
    assert!(report.ok(FD_TOL), "worst {:?}", report.worst);
}
