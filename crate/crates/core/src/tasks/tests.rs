use super::*;
use crate::rng::Rng;

fn suite() -> SuiteConfig {
    SuiteConfig::default_desk()
}

/// Rolls one episode under the scripted expert; returns (return, success).
fn expert_episode(env: &mut Box<dyn Environment>, seed: u64) -> (f64, bool) {
    env.reset(seed);
    let spec = env.spec().clone();
    let mut ep_return = 0.0;
    let mut success = false;
    for _ in 0..spec.episode_len {
        let action = scripted_expert(&spec.name, &env.native_state()).unwrap();
        let step = env.step(&action).unwrap();
        ep_return += step.reward as f64;
        if step.episode_done {
            success = step.success;
            break;
        }
    }
    (ep_return, success)
}

fn random_episode(env: &mut Box<dyn Environment>, seed: u64) -> (f64, bool) {
    env.reset(seed);
    let spec = env.spec().clone();
    let mut rng = Rng::seed_from(seed ^ 0xabcdef);
    let mut ep_return = 0.0;
    let mut success = false;
    for _ in 0..spec.episode_len {
        let action: Vec<crate::scalar::Real> = (0..spec.action_dim_native)
            .map(|_| rng.range(-1.0, 1.0) as crate::scalar::Real)
            .collect();
        let step = env.step(&action).unwrap();
        ep_return += step.reward as f64;
        if step.episode_done {
            success = step.success;
            break;
        }
    }
    (ep_return, success)
}

fn mean_scores(name: &str, episodes: u64, expert: bool) -> f64 {
    let (mut env, spec) = make_task(name, &suite(), None).unwrap();
    let mut total = 0.0;
    for seed in 0..episodes {
        let (ret, success) = if expert {
            expert_episode(&mut env, seed)
        } else {
            random_episode(&mut env, seed)
        };
        total += normalized_score(&spec, ret, success);
    }
    total / episodes as f64
}

#[test]
fn registry_constants_match_task_table() {
    let (_, spec) = make_task("point-reach", &suite(), None).unwrap();
    assert_eq!(spec.state_dim_native, 6);
    assert_eq!(spec.action_dim_native, 2);
    assert_eq!(spec.episode_len, 100);
    let (_, spec) = make_task("push-1d", &suite(), None).unwrap();
    assert_eq!(spec.action_dim_native, 1);
    assert_eq!(spec.episode_len, 50);
    let (_, spec) = make_task("chase", &suite(), None).unwrap();
    assert_eq!(spec.state_dim_native, 8);
    let (_, spec) = make_task("collector", &suite(), None).unwrap();
    assert_eq!(spec.episode_len, 250);
}

#[test]
fn unknown_task_error_lists_registry() {
    let msg = match make_task("nope", &suite(), None) {
        Err(e) => e.to_string(),
        Ok(_) => panic!("unknown task accepted"),
    };
    for name in TRAIN_TASKS {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn episodes_have_exact_fixed_length() {
    for name in TRAIN_TASKS {
        let (mut env, spec) = make_task(name, &suite(), None).unwrap();
        env.reset(7);
        for cycle in 0..2 {
            for t in 1..=spec.episode_len {
                let action = vec![0.1; suite().action_dim];
                let step = env.step(&action).unwrap();
                assert_eq!(
                    step.episode_done,
                    t == spec.episode_len,
                    "{name} cycle {cycle} step {t}"
                );
            }
        }
    }
}

#[test]
fn zero_action_keeps_point_at_rest() {
    let (mut env, _) = make_task("point-reach", &suite(), None).unwrap();
    env.reset(3);
    let before = env.native_state();
    // velocity starts at zero, so zero acceleration is a fixed point
    let step = env.step(&[0.0, 0.0]).unwrap();
    assert_eq!(before[0], step.info[0]);
    assert_eq!(before[1], step.info[1]);
}

#[test]
fn same_seed_same_trajectory_across_resets() {
    for name in TRAIN_TASKS {
        let (mut env, spec) = make_task(name, &suite(), None).unwrap();
        let mut rng = Rng::seed_from(5);
        let actions: Vec<Vec<crate::scalar::Real>> = (0..spec.episode_len * 2)
            .map(|_| {
                (0..suite().action_dim)
                    .map(|_| rng.range(-1.0, 1.0) as crate::scalar::Real)
                    .collect()
            })
            .collect();
        let run = |env: &mut Box<dyn Environment>| -> Vec<Vec<f64>> {
            env.reset(11);
            actions.iter().map(|a| env.step(a).unwrap().info).collect()
        };
        let t1 = run(&mut env);
        let t2 = run(&mut env);
        assert_eq!(t1, t2, "{name}");
    }
}

#[test]
fn nonfinite_action_is_rejected() {
    let (mut env, _) = make_task("point-reach", &suite(), None).unwrap();
    env.reset(1);
    assert!(env.step(&[f32::NAN, 0.0]).is_err());
}

#[test]
fn discount_heuristic_reference_values() {
    assert!((discount_for(500) - 0.99).abs() < 1e-12);
    assert!((discount_for(50) - 0.95).abs() < 1e-12);
    assert!((discount_for(100) - 0.95).abs() < 1e-12);
    assert!((discount_for(250) - 0.98).abs() < 1e-12);
    assert!((discount_for(1000) - 0.995).abs() < 1e-12);
}

#[test]
fn task_gammas_come_from_heuristic() {
    for name in TRAIN_TASKS {
        let (_, spec) = make_task(name, &suite(), None).unwrap();
        assert_eq!(spec.gamma, discount_for(spec.episode_len), "{name}");
    }
}

#[test]
fn embeddings_unit_norm_deterministic_distinct() {
    let mut specs = Vec::new();
    for name in TRAIN_TASKS {
        let (_, spec) = make_task(name, &suite(), None).unwrap();
        let norm: f64 = spec
            .lang_embedding
            .iter()
            .map(|&v| (v as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-6, "{name}: norm {norm}");
        let again = embed_instruction(&spec.instruction, suite().lang_dim, suite().embed_salt);
        assert_eq!(spec.lang_embedding, again);
        specs.push(spec);
    }
    for i in 0..specs.len() {
        for j in i + 1..specs.len() {
            let cos: f64 = specs[i]
                .lang_embedding
                .iter()
                .zip(&specs[j].lang_embedding)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            assert!(
                cos.abs() < 0.5,
                "{} vs {}: cosine {cos}",
                specs[i].name,
                specs[j].name
            );
        }
    }
}

#[test]
fn embedding_override_table_roundtrip() {
    let dir = std::env::temp_dir().join("newt_embed_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("embeds.bin");
    let mut table = EmbeddingTable::new(suite().lang_dim);
    let vec: Vec<crate::scalar::Real> = (0..suite().lang_dim).map(|i| i as f32 * 0.01).collect();
    let (_, spec) = make_task("point-reach", &suite(), None).unwrap();
    table.insert(spec.instruction.clone(), vec.clone()).unwrap();
    table.write_to(&path).unwrap();
    let loaded = EmbeddingTable::read_from(&path).unwrap();
    assert_eq!(loaded, table);
    // make_task picks up the override
    let (_, spec2) = make_task("point-reach", &suite(), Some(&loaded)).unwrap();
    assert_eq!(spec2.lang_embedding, vec);
    // wrong-dim override errors
    let mut bad = EmbeddingTable::new(3);
    bad.insert(spec.instruction.clone(), vec![1.0, 0.0, 0.0]).unwrap();
    assert!(make_task("point-reach", &suite(), Some(&bad)).is_err());
    std::fs::remove_file(&path).ok();
}

#[test]
fn padding_roundtrip_and_zeroing() {
    let native = [0.5f64, -0.25, 0.125];
    let padded = pad(&native, 8);
    assert_eq!(padded.len(), 8);
    assert!(padded[3..].iter().all(|&v| v == 0.0));
    let back = unpad(&padded, 3);
    assert_eq!(back, native.to_vec());
}

#[test]
fn masks_are_prefix_aligned() {
    for name in TRAIN_TASKS {
        let (_, spec) = make_task(name, &suite(), None).unwrap();
        let true_count = spec.state_mask.iter().filter(|&&b| b).count();
        assert_eq!(true_count, spec.state_dim_native);
        assert!(spec.state_mask[..spec.state_dim_native].iter().all(|&b| b));
        let true_count = spec.action_mask.iter().filter(|&&b| b).count();
        assert_eq!(true_count, spec.action_dim_native);
    }
}

#[test]
fn normalized_score_reference_points() {
    let (_, reach) = make_task("point-reach", &suite(), None).unwrap();
    assert_eq!(normalized_score(&reach, 55.0, true), 1.0);
    assert_eq!(normalized_score(&reach, 90.0, false), 0.0);
    let (_, chase) = make_task("chase", &suite(), None).unwrap();
    let Scoring::Return { lo, hi } = chase.scoring else {
        panic!("chase is return-scored");
    };
    assert_eq!(normalized_score(&chase, lo, false), 0.0);
    assert_eq!(normalized_score(&chase, (lo + hi) / 2.0, false), 0.5);
    assert_eq!(normalized_score(&chase, hi * 2.0, false), 1.0);
}

#[test]
fn expert_actions_stay_in_bounds() {
    for name in TRAIN_TASKS {
        let (mut env, spec) = make_task(name, &suite(), None).unwrap();
        env.reset(13);
        for _ in 0..spec.episode_len {
            let a = scripted_expert(name, &env.native_state()).unwrap();
            assert_eq!(a.len(), spec.action_dim_native);
            assert!(a.iter().all(|&v| (-1.0..=1.0).contains(&v)), "{name}");
            env.step(&a).unwrap();
        }
    }
}

#[test]
fn expert_at_goal_is_nearly_still() {
    // place the point exactly on the goal with zero velocity
    let native = [0.3, -0.2, 0.0, 0.0, 0.3, -0.2];
    let a = scripted_expert("point-reach", &native).unwrap();
    assert!(a.iter().all(|&v| v.abs() < 1e-9), "{a:?}");
}

#[test]
fn expert_succeeds_at_least_ninety_percent() {
    for name in TRAIN_TASKS {
        let (mut env, spec) = make_task(name, &suite(), None).unwrap();
        let mut successes = 0;
        let mut score_sum = 0.0;
        for seed in 0..100 {
            let (ret, success) = expert_episode(&mut env, seed);
            score_sum += normalized_score(&spec, ret, success);
            if success || matches!(spec.scoring, Scoring::Return { .. }) {
                successes += if matches!(spec.scoring, Scoring::Success) {
                    usize::from(success)
                } else {
                    usize::from(normalized_score(&spec, ret, success) >= 0.5)
                };
            }
        }
        let rate = successes as f64 / 100.0;
        assert!(rate >= 0.9, "{name}: rate {rate} mean score {}", score_sum / 100.0);
    }
}

#[test]
fn expert_beats_random_by_half_a_point() {
    for name in TRAIN_TASKS {
        let expert = mean_scores(name, 100, true);
        let random = mean_scores(name, 100, false);
        assert!(
            expert - random >= 0.5,
            "{name}: expert {expert} random {random}"
        );
    }
}

#[test]
fn maze_wall_blocks_crossings_outside_gap() {
    let (mut env, _) = make_task("point-maze", &suite(), None).unwrap();
    env.reset(5);
    // drive straight right from a y far outside the gap
    for _ in 0..200 {
        let native = env.native_state();
        if native[1].abs() < MAZE_TEST_GAP + 0.2 {
            break;
        }
        env.step(&[1.0, 0.0]).unwrap();
        let after = env.native_state();
        assert!(after[0] <= 0.0, "crossed the wall at y={}", after[1]);
    }
}

const MAZE_TEST_GAP: f64 = 0.3;

#[test]
fn collector_coin_respawns_on_pickup() {
    let (mut env, _) = make_task("collector", &suite(), None).unwrap();
    env.reset(21);
    let mut pickups = 0;
    for _ in 0..250 {
        let a = scripted_expert("collector", &env.native_state()).unwrap();
        let before_coin = [env.native_state()[4], env.native_state()[5]];
        let step = env.step(&a).unwrap();
        if step.reward > 0.5 {
            pickups += 1;
            let after_coin = [step.info[4], step.info[5]];
            assert_ne!(before_coin, after_coin, "coin did not respawn");
        }
    }
    assert!(pickups >= 5, "only {pickups} pickups in one episode");
}

#[test]
fn transfer_task_exists_with_distinct_embedding() {
    let (_, far) = make_task("point-reach-far", &suite(), None).unwrap();
    let (_, near) = make_task("point-reach", &suite(), None).unwrap();
    assert_ne!(far.lang_embedding, near.lang_embedding);
    assert_ne!(far.instruction, near.instruction);
}
