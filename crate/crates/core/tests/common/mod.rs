//! Oracles shared by the integration tests, written without the library's solvers.
#![allow(dead_code)]

use nail_lab::envs;
use nail_lab::mdp::{OccupancyTable, PolicyTable, TabularMdp};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Discounted occupancy by iterating `d ← (1−γ)p0 + γ P_πᵀ d`.
pub fn occupancy_oracle(mdp: &TabularMdp, pi: &PolicyTable) -> Array2<f64> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let g = mdp.gamma();
    let p = mdp.transition();
    let mut d = mdp.initial().clone();
    for _ in 0..200_000 {
        let mut next = mdp.initial() * (1.0 - g);
        for s in 0..ns {
            for a in 0..na {
                let m = d[s] * pi.prob(s, a);
                for sp in 0..ns {
                    next[sp] += g * m * p[[s, a, sp]];
                }
            }
        }
        let delta = (&next - &d).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        d = next;
        if delta < 1e-15 {
            break;
        }
    }
    Array2::from_shape_fn((ns, na), |(s, a)| d[s] * pi.prob(s, a))
}

pub fn occ(mdp: &TabularMdp, pi: &PolicyTable) -> OccupancyTable {
    OccupancyTable::new(occupancy_oracle(mdp, pi)).unwrap()
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

pub fn sup(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `(mdp, learner, expert)` with S in 2..=6 and A in 2..=4.
pub fn fixture(seed: u64) -> (TabularMdp, PolicyTable, PolicyTable) {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x7E57);
    let ns = r.random_range(2..=6);
    let na = r.random_range(2..=4);
    let gamma = [0.8, 0.9, 0.99][r.random_range(0..3)];
    let mdp = envs::random_mdp(ns, na, gamma, seed);
    let pi = envs::random_policy(ns, na, &mut r);
    let expert = envs::random_policy(ns, na, &mut r);
    (mdp, pi, expert)
}
