mod common;

use common::{fixture, kl, occupancy_oracle, sup};
use nail_lab::demos::sample_episodes;
use nail_lab::envs;
use nail_lab::mdp::{
    expected_reward, j_nail, occupancy, policy_evaluation_soft, policy_from_soft_q, reverse_kl, soft_value_iteration,
    BoundWeighting, PolicyTable, RewardTable, SoftQTable,
};
use nail_lab::ratio::exact_log_ratio;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn occupancy_matches_power_iteration() {
    for seed in 0..10 {
        let (mdp, pi, _) = fixture(seed);
        let d = occupancy(&mdp, &pi).unwrap();
        assert!(sup(d.probs(), &occupancy_oracle(&mdp, &pi)) < 1e-10, "seed {seed}");
    }
}

#[test]
fn chain2_expected_reward_matches_discounted_returns() {
    // with geometric termination, (1−γ) times the undiscounted episode sum is an
    // unbiased estimate of the occupancy-weighted reward
    let mdp = envs::chain2();
    let pi = envs::chain2_fixture_policy();
    let r = envs::chain2_reward();
    let n = 100_000;
    let demos = sample_episodes(&mdp, &pi, n, 4).unwrap();
    let mut sums = vec![0.0; n];
    for t in demos.transitions() {
        sums[t.episode] += r.r()[[t.state, t.action]];
    }
    let xs: Vec<f64> = sums.iter().map(|s| s * (1.0 - mdp.gamma())).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let exact = expected_reward(&occupancy(&mdp, &pi).unwrap(), &r).unwrap();
    assert!((mean - exact).abs() <= 3.0 * se, "MC {mean} vs exact {exact} (se {se})");
}

fn perturb(pi: &PolicyTable, rng: &mut ChaCha8Rng) -> PolicyTable {
    let other = envs::random_policy(pi.num_states(), pi.num_actions(), rng);
    let t: f64 = rng.random_range(0.0..1.0);
    PolicyTable::new(pi.probs() * (1.0 - t) + &(other.probs() * t)).unwrap()
}

#[test]
fn surrogate_decomposes_into_reverse_kl_and_state_kl() {
    // per-step surrogate: exactly −RKL(p^π‖q) + KL(d^π‖d^π̃); the trajectory weighting
    // subtracts enough policy KL to stay below −RKL
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..100 {
        let (mdp, reference, expert) = fixture(seed);
        let q = occupancy_oracle(&mdp, &expert);
        let p_ref = occupancy_oracle(&mdp, &reference);
        let q_tab = nail_lab::mdp::OccupancyTable::new(q.clone()).unwrap();
        let lam = exact_log_ratio(
            &q_tab,
            &nail_lab::mdp::OccupancyTable::new(p_ref.clone()).unwrap(),
            1e-300,
        )
        .unwrap();
        let pi = perturb(&reference, &mut rng);
        let p = occupancy_oracle(&mdp, &pi);
        let rkl = kl(p.as_slice().unwrap(), q.as_slice().unwrap());
        let d = p.sum_axis(ndarray::Axis(1));
        let d_ref = p_ref.sum_axis(ndarray::Axis(1));
        let state_kl = kl(d.as_slice().unwrap(), d_ref.as_slice().unwrap());
        let per_step = j_nail(&mdp, &pi, lam.logits(), &reference, BoundWeighting::PerStep).unwrap();
        assert!((per_step - (-rkl + state_kl)).abs() < 1e-9, "seed {seed}");
        let traj = j_nail(&mdp, &pi, lam.logits(), &reference, BoundWeighting::Trajectory).unwrap();
        assert!(traj <= -rkl + 1e-10, "seed {seed}: {traj} > {}", -rkl);
    }
}

#[test]
fn soft_optimal_policy_beats_perturbations_on_the_soft_objective() {
    let mdp = envs::three_state();
    let r = RewardTable::new(ndarray::array![[0.3, -0.2], [1.0, 0.0], [-0.5, 0.4]]).unwrap();
    let (q, _) = soft_value_iteration(&mdp, &r, 1e-12).unwrap();
    let best = policy_from_soft_q(&q).unwrap();
    let soft_return = |pi: &PolicyTable| {
        let d = occupancy_oracle(&mdp, pi);
        d.indexed_iter()
            .map(|((s, a), &m)| m * (r.r()[[s, a]] - pi.prob(s, a).ln()))
            .sum::<f64>()
    };
    let top = soft_return(&best);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        assert!(soft_return(&perturb(&best, &mut rng)) <= top + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn occupancy_is_a_distribution(seed in 0u64..10_000) {
        let (mdp, pi, _) = fixture(seed);
        let d = occupancy(&mdp, &pi).unwrap();
        prop_assert!((d.probs().sum() - 1.0).abs() < 1e-10);
        prop_assert!(d.probs().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn reverse_kl_is_nonnegative_and_zero_on_the_diagonal(seed in 0u64..10_000) {
        let (mdp, pi, expert) = fixture(seed);
        let p = occupancy(&mdp, &pi).unwrap();
        let q = occupancy(&mdp, &expert).unwrap();
        prop_assert!(reverse_kl(&p, &q, 0.0).unwrap() >= -1e-12);
        prop_assert!(reverse_kl(&p, &p, 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn soft_evaluation_shifts_with_constant_rewards(seed in 0u64..10_000, c in -3.0f64..3.0) {
        let (mdp, pi, _) = fixture(seed);
        let (ns, na) = pi.dim();
        let base = RewardTable::new(Array2::from_shape_fn((ns, na), |(s, a)| (s as f64 - a as f64) * 0.3)).unwrap();
        let q0 = policy_evaluation_soft(&mdp, &pi, &base, 1e-12).unwrap();
        let q1 = policy_evaluation_soft(&mdp, &pi, &base.shifted(c), 1e-12).unwrap();
        let expected = c / (1.0 - mdp.gamma());
        prop_assert!((q1.q() - q0.q()).iter().all(|x| (x - expected).abs() < 1e-7 * (1.0 + expected.abs())));
    }

    #[test]
    fn soft_advantages_log_normalize(entries in proptest::collection::vec(-20.0f64..20.0, 12)) {
        let q = SoftQTable::new(Array2::from_shape_vec((4, 3), entries).unwrap());
        for row in q.advantages().rows() {
            let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            prop_assert!(lse.abs() < 1e-10);
        }
    }
}
