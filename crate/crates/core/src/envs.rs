//! Environment fixtures: small MDPs with known structure used by experiments and tests.

use crate::mdp::{OccupancyTable, PolicyTable, RewardTable, TabularMdp};
use ndarray::{array, Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two states, two actions: `a0` stays, `a1` swaps. Starts in state 0, γ = 0.9.
pub fn chain2() -> TabularMdp {
    let mut p = Array3::zeros((2, 2, 2));
    for s in 0..2 {
        p[[s, 0, s]] = 1.0;
        p[[s, 1, 1 - s]] = 1.0;
    }
    TabularMdp::new(p, array![1.0, 0.0], 0.9).expect("valid fixture")
}

/// `π(a1|s) = 0.3` in both states.
pub fn chain2_fixture_policy() -> PolicyTable {
    PolicyTable::new(array![[0.7, 0.3], [0.7, 0.3]]).expect("valid fixture")
}

/// `r(s, a) = s`.
pub fn chain2_reward() -> RewardTable {
    RewardTable::from_fn(2, 2, |s, _| s as f64).expect("finite")
}

pub const GRID_SIDE: usize = 5;
pub const GRID_GOAL: usize = GRID_SIDE * GRID_SIDE - 1;
const SLIP: f64 = 0.1;

/// 5×5 grid, actions N/E/S/W. The intended move happens with probability 0.9,
/// otherwise a uniformly random direction is taken; moves into walls stay put.
/// Episodes start in the corner opposite the goal; γ = 0.95.
pub fn gridworld5() -> TabularMdp {
    let n = GRID_SIDE * GRID_SIDE;
    let step = |s: usize, dir: usize| -> usize {
        let (r, c) = (s / GRID_SIDE, s % GRID_SIDE);
        let (r2, c2) = match dir {
            0 if r > 0 => (r - 1, c),
            1 if c + 1 < GRID_SIDE => (r, c + 1),
            2 if r + 1 < GRID_SIDE => (r + 1, c),
            3 if c > 0 => (r, c - 1),
            _ => (r, c),
        };
        r2 * GRID_SIDE + c2
    };
    let mut p = Array3::zeros((n, 4, n));
    for s in 0..n {
        for a in 0..4 {
            p[[s, a, step(s, a)]] += 1.0 - SLIP;
            for dir in 0..4 {
                p[[s, a, step(s, dir)]] += SLIP / 4.0;
            }
        }
    }
    let mut p0 = Array1::zeros(n);
    p0[0] = 1.0;
    TabularMdp::new(p, p0, 0.95).expect("valid fixture")
}

/// Reward 1 in the goal state for every action, 0 elsewhere.
pub fn gridworld5_reward() -> RewardTable {
    RewardTable::from_fn(GRID_SIDE * GRID_SIDE, 4, |s, _| if s == GRID_GOAL { 1.0 } else { 0.0 }).expect("finite")
}

fn dirichlet_row(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    // Dirichlet(1, ..., 1) via normalized unit exponentials.
    let mut row: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
    row
}

/// MDP with Dirichlet(1) transition rows and initial distribution.
pub fn random_mdp(num_states: usize, num_actions: usize, gamma: f64, seed: u64) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Array3::zeros((num_states, num_actions, num_states));
    for s in 0..num_states {
        for a in 0..num_actions {
            for (s2, x) in dirichlet_row(&mut rng, num_states).into_iter().enumerate() {
                p[[s, a, s2]] = x;
            }
        }
    }
    let p0 = Array1::from(dirichlet_row(&mut rng, num_states));
    TabularMdp::new(p, p0, gamma).expect("Dirichlet rows are stochastic")
}

/// Strictly positive random policy with Dirichlet(1) rows.
pub fn random_policy(num_states: usize, num_actions: usize, rng: &mut impl Rng) -> PolicyTable {
    let mut probs = Array2::zeros((num_states, num_actions));
    for s in 0..num_states {
        for (a, x) in dirichlet_row(rng, num_actions).into_iter().enumerate() {
            probs[[s, a]] = x.max(1e-300);
        }
    }
    PolicyTable::new(probs).expect("Dirichlet rows are stochastic")
}

/// Three-state, two-action MDP used for estimator and sampled-NAIL experiments.
pub fn three_state() -> TabularMdp {
    let p = array![
        [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1]],
        [[0.1, 0.8, 0.1], [0.1, 0.1, 0.8]],
        [[0.7, 0.2, 0.1], [0.2, 0.1, 0.7]],
    ];
    TabularMdp::new(p, array![0.6, 0.3, 0.1], 0.9).expect("valid fixture")
}

/// Expert and learner policies for [`three_state`].
pub fn three_state_policies() -> (PolicyTable, PolicyTable) {
    let expert = PolicyTable::new(array![[0.2, 0.8], [0.3, 0.7], [0.6, 0.4]]).expect("valid");
    let learner = PolicyTable::new(array![[0.6, 0.4], [0.5, 0.5], [0.3, 0.7]]).expect("valid");
    (expert, learner)
}

/// Small MDP on which greedy adversarial updates on `log(q/p^π)` increase the
/// reverse KL while full NAIL M-steps stay monotone. Returns the MDP, the expert
/// occupancy and the shared initial policy.
pub fn instability_fixture() -> (TabularMdp, OccupancyTable, PolicyTable) {
    // found by a brute-force search over 3-state MDPs with 0.05-grid transitions;
    // greedy updates cycle between two deterministic policies from the first step
    let p = array![
        [[0.15, 0.6, 0.25], [0.0, 0.2, 0.8]],
        [[0.85, 0.05, 0.1], [0.45, 0.45, 0.1]],
        [[0.45, 0.3, 0.25], [0.25, 0.05, 0.7]],
    ];
    let mdp = TabularMdp::new(p, array![1.0, 0.0, 0.0], 0.9).expect("valid fixture");
    let expert = PolicyTable::new(array![[0.2, 0.8], [0.9, 0.1], [0.2, 0.8]]).expect("valid");
    let occ = crate::mdp::occupancy(&mdp, &expert).expect("valid fixture");
    (mdp, occ, PolicyTable::uniform(3, 2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gridworld_rows_and_slip() {
        let mdp = gridworld5();
        // interior state 12 moving east: 0.9 + 0.025 to 13, 0.025 to each other neighbor
        let p = mdp.transition();
        assert!((p[[12, 1, 13]] - 0.925).abs() < 1e-15);
        assert!((p[[12, 1, 7]] - 0.025).abs() < 1e-15);
        // corner state 0 moving north hits the wall
        assert!((mdp.transition()[[0, 0, 0]] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn random_mdp_is_reproducible() {
        assert_eq!(random_mdp(4, 3, 0.9, 5), random_mdp(4, 3, 0.9, 5));
        assert_ne!(random_mdp(4, 3, 0.9, 5), random_mdp(4, 3, 0.9, 6));
    }
}
