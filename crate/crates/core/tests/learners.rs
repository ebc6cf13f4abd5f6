mod common;

use common::{kl, occ, occupancy_oracle, sup};
use nail_lab::airl::{
    fit_airl_discriminator, gradient_diagnostics, run_airl, AirlConfig, DiscriminatorConfig, DiscriminatorData,
};
use nail_lab::baselines::{behavioral_cloning, run_adversarial_rkl, run_valuedice, AdversarialConfig, ValueDiceConfig};
use nail_lab::demos::{episode_start_states, make_expert, sample_episodes, sample_steps};
use nail_lab::envs;
use nail_lab::mdp::{j_nail, BoundWeighting, PolicyTable, RewardTable, SoftQTable};
use nail_lab::nail::{run_nail, sampled_mode, Improvement, NailConfig};
use nail_lab::onail::{
    actor_update, critic_dv_loss, critic_update, exact_q_adv, implicit_log_ratio, run_onail, run_onail_exact_critic,
    ActorConfig, ActorMode, CriticConfig, OnailConfig,
};
use nail_lab::ratio::{exact_log_ratio, EstimatorConfig, EstimatorKind};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn chain2_expert() -> PolicyTable {
    make_expert(&envs::chain2(), &envs::chain2_reward(), 1e-12).unwrap()
}

#[test]
fn nail_started_at_the_expert_stays_put() {
    let (mdp, _, expert) = common::fixture(3);
    let q = occ(&mdp, &expert);
    let cfg = NailConfig {
        iterations: 10,
        initial_policy: Some(expert.clone()),
        ..Default::default()
    };
    let trace = run_nail(&mdp, &q, &cfg).unwrap();
    assert!(trace.reverse_kl_series().iter().all(|r| r.abs() <= 1e-10));
    assert!(trace.final_policy().unwrap().sup_dist(&expert) < 1e-8);
}

#[test]
fn one_partial_sweep_does_not_lower_the_surrogate() {
    for seed in 0..10 {
        let (mdp, _, expert) = common::fixture(seed);
        let q = occ(&mdp, &expert);
        let uniform = PolicyTable::uniform(mdp.num_states(), mdp.num_actions());
        let cfg = NailConfig {
            iterations: 1,
            improvement: Improvement::Partial { sweeps: 1 },
            ..Default::default()
        };
        let trace = run_nail(&mdp, &q, &cfg).unwrap();
        let lam = exact_log_ratio(&q, &occ(&mdp, &uniform), 1e-300).unwrap();
        let w = BoundWeighting::Trajectory;
        let before = j_nail(&mdp, &uniform, lam.logits(), &uniform, w).unwrap();
        let after = j_nail(&mdp, &trace.policies[1], lam.logits(), &uniform, w).unwrap();
        assert!(after >= before - 1e-10, "seed {seed}: {after} < {before}");
    }
}

#[test]
fn sampled_bce_nail_gets_close_on_three_state() {
    let mdp = envs::three_state();
    let (expert, _) = envs::three_state_policies();
    let q = occ(&mdp, &expert);
    let mut finals: Vec<f64> = (0..10)
        .map(|seed| {
            let demos = sample_steps(&mdp, &expert, 10_000, 1000 + seed).unwrap();
            let ratio = sampled_mode(EstimatorKind::Bce, EstimatorConfig::default(), demos, 10_000).unwrap();
            let cfg = NailConfig {
                iterations: 15,
                ratio,
                seed,
                ..Default::default()
            };
            *run_nail(&mdp, &q, &cfg).unwrap().reverse_kl_series().last().unwrap()
        })
        .collect();
    finals.sort_by(f64::total_cmp);
    let median = 0.5 * (finals[4] + finals[5]);
    assert!(median < 0.05, "median final RKL {median}");
}

#[test]
fn exact_airl_and_per_step_nail_produce_the_same_policies() {
    let (mdp, pi, expert) = common::fixture(12);
    let q = occ(&mdp, &expert);
    let (airl, _) = run_airl(
        &mdp,
        &q,
        &AirlConfig {
            iterations: 50,
            initial_policy: Some(pi.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    let nail = run_nail(
        &mdp,
        &q,
        &NailConfig {
            iterations: 50,
            initial_policy: Some(pi),
            weighting: BoundWeighting::PerStep,
            ..Default::default()
        },
    )
    .unwrap();
    for (a, b) in airl.policies.iter().zip(&nail.policies) {
        assert!(a.sup_dist(b) <= 1e-6);
    }
}

#[test]
fn recovered_airl_reward_reproduces_the_expert() {
    let mdp = envs::three_state();
    let (expert, learner) = envs::three_state_policies();
    let q = occ(&mdp, &expert);
    let (_, nu_bar) = run_airl(
        &mdp,
        &q,
        &AirlConfig {
            iterations: 100,
            initial_policy: Some(learner),
            ..Default::default()
        },
    )
    .unwrap();
    let (soft_q, _) = nail_lab::mdp::soft_value_iteration(&mdp, &nu_bar, 1e-12).unwrap();
    let pi = nail_lab::mdp::policy_from_soft_q(&soft_q).unwrap();
    let p = occupancy_oracle(&mdp, &pi);
    assert!(kl(p.as_slice().unwrap(), q.probs().as_slice().unwrap()) <= 1e-4);

    // started at the expert, the exact discriminator returns log π_E
    let (_, at_expert) = run_airl(
        &mdp,
        &q,
        &AirlConfig {
            iterations: 1,
            initial_policy: Some(expert.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(sup(at_expert.r(), &expert.log_probs(1e-300)) < 1e-6);
}

#[test]
fn indistinguishable_samples_give_log_policy() {
    let mdp = envs::three_state();
    let (_, learner) = envs::three_state_policies();
    let d = sample_steps(&mdp, &learner, 20_000, 4).unwrap();
    let nu_bar = fit_airl_discriminator(
        &RewardTable::zeros(3, 2),
        &learner,
        DiscriminatorData::Samples { expert: &d, policy: &d },
        &DiscriminatorConfig::default(),
    )
    .unwrap();
    let counts = d.pair_counts();
    let log_pi = learner.log_probs(1e-300);
    for ((s, a), &c) in counts.indexed_iter() {
        if c > 0.0 {
            assert!((nu_bar.r()[[s, a]] - log_pi[[s, a]]).abs() <= 0.02);
        }
    }
}

#[test]
fn likelihood_gradient_ignores_reward_offsets() {
    let (mdp, pi, expert) = common::fixture(30);
    let q = occ(&mdp, &expert);
    let nu = RewardTable::new(Array2::from_shape_fn(pi.dim(), |(s, a)| {
        (s as f64 * 0.7 - a as f64).sin()
    }))
    .unwrap();
    let a = gradient_diagnostics(&mdp, &pi, &nu, &q).unwrap();
    let b = gradient_diagnostics(&mdp, &pi, &nu.shifted(3.0), &q).unwrap();
    assert!(sup(&a.maxent_gradient, &b.maxent_gradient) < 1e-8);
}

#[test]
fn gradient_actor_approaches_the_closed_form() {
    let (mdp, pi, expert) = common::fixture(5);
    let q_adv = exact_q_adv(&mdp, &occ(&mdp, &expert), &pi).unwrap();
    let z = Array1::from_elem(mdp.num_states(), 1.0 / mdp.num_states() as f64);
    let closed = actor_update(&pi, &q_adv, &z, mdp.gamma(), &ActorConfig::default()).unwrap();
    let cfg = ActorConfig {
        mode: ActorMode::Gradient,
        learning_rate: 1e-2,
        steps: 10_000,
        ..Default::default()
    };
    let grad = actor_update(&pi, &q_adv, &z, mdp.gamma(), &cfg).unwrap();
    assert!(closed.sup_dist(&grad) <= 1e-3, "gap {}", closed.sup_dist(&grad));
}

#[test]
fn exact_critic_onail_is_still_at_the_expert() {
    let mdp = envs::three_state();
    let (expert, _) = envs::three_state_policies();
    let q = occ(&mdp, &expert);
    let trace = run_onail_exact_critic(&mdp, &q, 5, &ActorConfig::default(), &expert, None).unwrap();
    for w in trace.policies.windows(2) {
        assert!(w[0].sup_dist(&w[1]) <= 1e-3);
    }
}

#[test]
fn zero_onail_iterations_return_behavioral_cloning() {
    let mdp = envs::chain2();
    let demos = sample_episodes(&mdp, &chain2_expert(), 40, 2).unwrap();
    let cfg = OnailConfig {
        iterations: 0,
        gamma: mdp.gamma(),
        ..Default::default()
    };
    let trace = run_onail(&demos, &episode_start_states(&demos), &cfg, None).unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!(trace.policies[0], behavioral_cloning(&demos, cfg.bc_smoothing).unwrap());
}

#[test]
fn learned_critic_implies_the_occupancy_ratio_on_chain2() {
    let mdp = envs::chain2();
    let expert = chain2_expert();
    let learner = envs::chain2_fixture_policy();
    let demos = sample_steps(&mdp, &expert, 100_000, 17).unwrap();
    let p0 = episode_start_states(&demos);
    let cfg = CriticConfig {
        learning_rate: 1e-2,
        steps: 5000,
        ..Default::default()
    };
    let fit = critic_update(&demos, &p0, &learner, mdp.gamma(), &cfg, None).unwrap();
    let implied = implicit_log_ratio(&fit.q_adv, &learner, &mdp).unwrap();
    let exact = exact_log_ratio(&occ(&mdp, &expert), &occ(&mdp, &learner), 1e-12).unwrap();
    let visited = demos.pair_counts().mapv(|c| c > 0.0);
    let aligned = nail_lab::onail::align_mean(implied.logits(), exact.logits(), &visited);
    let mut worst: f64 = 0.0;
    for ((&v, &x), &y) in visited.iter().zip(&aligned).zip(exact.logits()) {
        if v {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst <= 0.1, "gap {worst}");
}

#[test]
fn exact_critic_implies_the_exact_ratio() {
    let (mdp, pi, expert) = common::fixture(44);
    let q = occ(&mdp, &expert);
    let implied = implicit_log_ratio(&exact_q_adv(&mdp, &q, &pi).unwrap(), &pi, &mdp).unwrap();
    let exact = exact_log_ratio(&q, &occ(&mdp, &pi), 1e-12).unwrap();
    assert!(sup(implied.logits(), exact.logits()) < 1e-8);
}

#[test]
fn valuedice_at_the_expert_barely_moves() {
    let mdp = envs::chain2();
    let expert = chain2_expert();
    let demos = sample_steps(&mdp, &expert, 50_000, 6).unwrap();
    let cfg = ValueDiceConfig {
        iterations: 20,
        gamma: mdp.gamma(),
        ..Default::default()
    };
    let trace = run_valuedice(&demos, &episode_start_states(&demos), &cfg, Some(&expert), None).unwrap();
    for w in trace.policies.windows(2) {
        assert!(w[0].sup_dist(&w[1]) <= 1e-3);
    }
}

#[test]
fn small_adversarial_steps_converge_on_gridworld() {
    let mdp = envs::gridworld5();
    let expert = make_expert(&mdp, &envs::gridworld5_reward(), 1e-12).unwrap();
    let q = occ(&mdp, &expert);
    let trace = run_adversarial_rkl(
        &mdp,
        &q,
        &AdversarialConfig {
            iterations: 500,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(*trace.reverse_kl_series().last().unwrap() < 1e-3);
    let flat = run_adversarial_rkl(
        &mdp,
        &q,
        &AdversarialConfig {
            iterations: 5,
            initial_policy: Some(expert),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(flat.reverse_kl_series().iter().all(|r| r.abs() <= 1e-10));
}

#[test]
fn cloning_many_expert_steps_recovers_the_expert() {
    let mdp = envs::three_state();
    let (expert, _) = envs::three_state_policies();
    let demos = sample_steps(&mdp, &expert, 1_000_000, 8).unwrap();
    let pi = behavioral_cloning(&demos, 0.0).unwrap();
    assert!(pi.sup_dist(&expert) <= 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cloned_rows_are_distributions(seed in 0u64..100_000, episodes in 1usize..20, k in 0.0f64..3.0) {
        let mdp = envs::gridworld5();
        let demos = sample_episodes(&mdp, &PolicyTable::uniform(25, 4), episodes, seed).unwrap();
        let pi = behavioral_cloning(&demos, k).unwrap();
        for row in pi.probs().rows() {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn critic_loss_ignores_constant_offsets(seed in 0u64..100_000, c in -5.0f64..5.0) {
        let mdp = envs::chain2();
        let demos = sample_episodes(&mdp, &envs::chain2_fixture_policy(), 10, seed).unwrap();
        let p0 = episode_start_states(&demos);
        let pi = chain2_expert();
        let q = SoftQTable::new(ndarray::array![[0.3, -1.0], [0.5, 2.0]]);
        let shifted = SoftQTable::new(q.q() + c);
        let a = critic_dv_loss(&demos, &p0, &pi, &q, mdp.gamma()).unwrap();
        let b = critic_dv_loss(&demos, &p0, &pi, &shifted, mdp.gamma()).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }
}
