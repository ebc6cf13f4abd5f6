use super::{OccupancyTable, PolicyTable, RewardTable, SoftQTable, TabularMdp};
use crate::error::{Error, Result};
use crate::numeric::{softmax_rows, sup_dist};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Zip};

/// Convergence controls for the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions {
            tol: 1e-10,
            max_iters: 1_000_000,
        }
    }
}

impl DpOptions {
    pub fn with_tol(tol: f64) -> Self {
        DpOptions {
            tol,
            ..Default::default()
        }
    }
}

const TRUNCATION_TERMS: usize = 10_000;

fn check_policy(mdp: &TabularMdp, policy: &PolicyTable) -> Result<()> {
    mdp.check_table("policy", policy.dim())
}

/// `P_π[s][s'] = Σ_a π(a|s) P[s][a][s']`.
pub fn state_transition_matrix(mdp: &TabularMdp, policy: &PolicyTable) -> Result<Array2<f64>> {
    check_policy(mdp, policy)?;
    let n = mdp.num_states();
    let mut out = Array2::zeros((n, n));
    for s in 0..n {
        for a in 0..mdp.num_actions() {
            let p = policy.prob(s, a);
            if p == 0.0 {
                continue;
            }
            let row = mdp.transition().slice(ndarray::s![s, a, ..]);
            let mut target = out.row_mut(s);
            target.scaled_add(p, &row);
        }
    }
    Ok(out)
}

fn to_occupancy(policy: &PolicyTable, marginal: &Array1<f64>) -> Result<OccupancyTable> {
    let mut d = policy.probs().clone();
    for (mut row, &m) in d.rows_mut().into_iter().zip(marginal.iter()) {
        let m = m.max(0.0);
        row.mapv_inplace(|p| p * m);
    }
    OccupancyTable::new(d)
}

/// Discounted occupancy `d(s, a) = π(a|s) m(s)` where `m = (1-γ) p0 + γ P_πᵀ m`,
/// computed by a direct linear solve. Falls back to geometric truncation when the
/// solve fails.
pub fn occupancy(mdp: &TabularMdp, policy: &PolicyTable) -> Result<OccupancyTable> {
    let p_pi = state_transition_matrix(mdp, policy)?;
    let n = mdp.num_states();
    let g = mdp.gamma();
    let system = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - g * p_pi[[j, i]]
    });
    let rhs = DVector::from_iterator(n, mdp.initial().iter().map(|&p| (1.0 - g) * p));
    match system.lu().solve(&rhs) {
        Some(m) if m.iter().all(|x| x.is_finite()) => {
            let marginal: Array1<f64> = m.iter().copied().collect();
            to_occupancy(policy, &marginal)
        }
        _ => {
            log::warn!("occupancy solve failed, falling back to truncated series");
            occupancy_by_truncation(mdp, policy, TRUNCATION_TERMS)
        }
    }
}

/// `(1-γ) Σ_{t<terms} γ^t p_t`, renormalized over the kept terms.
pub fn occupancy_by_truncation(mdp: &TabularMdp, policy: &PolicyTable, terms: usize) -> Result<OccupancyTable> {
    let p_pi = state_transition_matrix(mdp, policy)?;
    let g = mdp.gamma();
    let mut p_t = mdp.initial().clone();
    let mut acc = Array1::<f64>::zeros(mdp.num_states());
    let mut w = 1.0 - g;
    let mut mass = 0.0;
    for _ in 0..terms {
        acc.scaled_add(w, &p_t);
        mass += w;
        p_t = p_t.dot(&p_pi);
        w *= g;
    }
    if mass <= 0.0 {
        return Err(Error::SingularSystem);
    }
    acc.mapv_inplace(|x| x / mass);
    to_occupancy(policy, &acc)
}

/// Soft policy evaluation: fixed point of
/// `T^π Q = r + γ E_{s'} E_{a'~π}[Q(s', a') - log π(a'|s')]`.
pub fn policy_evaluation_soft(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    reward: &RewardTable,
    tol: f64,
) -> Result<SoftQTable> {
    policy_evaluation_soft_with(mdp, policy, reward, DpOptions::with_tol(tol))
}

pub fn policy_evaluation_soft_with(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    reward: &RewardTable,
    opts: DpOptions,
) -> Result<SoftQTable> {
    check_policy(mdp, policy)?;
    mdp.check_table("reward", reward.dim())?;
    check_tol(opts.tol)?;
    let probs = policy.probs();
    // E_π[-log π] per state, with 0 log 0 = 0
    let entropy: Array1<f64> = probs
        .rows()
        .into_iter()
        .map(|row| row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
        .collect();
    let g = mdp.gamma();
    let mut q = reward.r().clone();
    for _ in 0..opts.max_iters {
        let v: Array1<f64> = (probs * &q).sum_axis(ndarray::Axis(1)) + &entropy;
        let next = reward.r() + &(mdp.expect_next(&v) * g);
        let residual = sup_dist(next.view(), q.view());
        q = next;
        if residual <= opts.tol {
            return Ok(SoftQTable::new(q));
        }
    }
    Err(Error::NoConvergence {
        max_iters: opts.max_iters,
    })
}

/// Ordinary (non-entropic) Q-function of `policy` under `reward`, by a linear solve:
/// `V = (I - γ P_π)^{-1} r_π`, `Q = r + γ P V`.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &PolicyTable, reward: &RewardTable) -> Result<SoftQTable> {
    mdp.check_table("reward", reward.dim())?;
    let p_pi = state_transition_matrix(mdp, policy)?;
    let n = mdp.num_states();
    let g = mdp.gamma();
    let r_pi = (policy.probs() * reward.r()).sum_axis(ndarray::Axis(1));
    let system = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - g * p_pi[[i, j]]
    });
    let rhs = DVector::from_iterator(n, r_pi.iter().copied());
    let v = system.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    let v: Array1<f64> = v.iter().copied().collect();
    Ok(SoftQTable::new(reward.r() + &(mdp.expect_next(&v) * g)))
}

/// One soft Bellman optimality backup `r + γ E_{s'}[log Σ_a exp Q(s', a)]`.
pub fn soft_bellman_backup(mdp: &TabularMdp, reward: &RewardTable, q: &SoftQTable) -> SoftQTable {
    let v = q.values();
    SoftQTable::new(reward.r() + &(mdp.expect_next(&v) * mdp.gamma()))
}

/// Soft value iteration; returns the optimal soft Q and its softmax policy, the
/// maximizer of `E_{p^π}[r - log π]`.
pub fn soft_value_iteration(mdp: &TabularMdp, reward: &RewardTable, tol: f64) -> Result<(SoftQTable, PolicyTable)> {
    soft_value_iteration_with(mdp, reward, DpOptions::with_tol(tol))
}

pub fn soft_value_iteration_with(
    mdp: &TabularMdp,
    reward: &RewardTable,
    opts: DpOptions,
) -> Result<(SoftQTable, PolicyTable)> {
    mdp.check_table("reward", reward.dim())?;
    check_tol(opts.tol)?;
    let mut q = SoftQTable::new(reward.r().clone());
    for _ in 0..opts.max_iters {
        let next = soft_bellman_backup(mdp, reward, &q);
        let residual = sup_dist(next.q().view(), q.q().view());
        q = next;
        if residual <= opts.tol {
            let policy = policy_from_soft_q(&q)?;
            return Ok((q, policy));
        }
    }
    Err(Error::NoConvergence {
        max_iters: opts.max_iters,
    })
}

/// `π(a|s) = exp(Q(s, a) - V(s))`.
pub fn policy_from_soft_q(q: &SoftQTable) -> Result<PolicyTable> {
    if q.q().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(PolicyTable::from_unnormalized(softmax_rows(q.q().view())))
}

/// `sweeps` rounds of soft policy iteration (soft evaluation followed by the
/// softmax improvement) starting from `policy`.
pub fn soft_policy_iteration(
    mdp: &TabularMdp,
    reward: &RewardTable,
    policy: &PolicyTable,
    sweeps: usize,
    tol: f64,
) -> Result<PolicyTable> {
    let mut current = policy.clone();
    for _ in 0..sweeps {
        let q = policy_evaluation_soft(mdp, &current, reward, tol)?;
        current = policy_from_soft_q(&q)?;
    }
    Ok(current)
}

/// Standard (hard-max) value iteration; returns the optimal Q and a greedy
/// deterministic policy, ties broken toward the lowest action index.
pub fn value_iteration(mdp: &TabularMdp, reward: &RewardTable, opts: DpOptions) -> Result<(SoftQTable, PolicyTable)> {
    mdp.check_table("reward", reward.dim())?;
    check_tol(opts.tol)?;
    let g = mdp.gamma();
    let mut q = reward.r().clone();
    for _ in 0..opts.max_iters {
        let v: Array1<f64> = q
            .rows()
            .into_iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let next = reward.r() + &(mdp.expect_next(&v) * g);
        let residual = sup_dist(next.view(), q.view());
        q = next;
        if residual <= opts.tol {
            let actions: Vec<usize> = q
                .rows()
                .into_iter()
                .map(|row| {
                    let mut best = 0;
                    for (a, &x) in row.iter().enumerate() {
                        if x > row[best] {
                            best = a;
                        }
                    }
                    best
                })
                .collect();
            let policy = PolicyTable::deterministic(&actions, mdp.num_actions())?;
            return Ok((SoftQTable::new(q), policy));
        }
    }
    Err(Error::NoConvergence {
        max_iters: opts.max_iters,
    })
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

#[allow(dead_code)]
fn flow_residual(mdp: &TabularMdp, policy: &PolicyTable, occ: &OccupancyTable) -> f64 {
    let p_pi = state_transition_matrix(mdp, policy).expect("shapes checked");
    let d = occ.state_marginal();
    let rhs = mdp.initial() * (1.0 - mdp.gamma()) + &(d.dot(&p_pi) * mdp.gamma());
    let mut worst = 0.0f64;
    Zip::from(&d)
        .and(&rhs)
        .for_each(|&x, &y| worst = worst.max((x - y).abs()));
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;
    use ndarray::{array, Array3};

    fn single_state(num_actions: usize, gamma: f64) -> TabularMdp {
        TabularMdp::new(Array3::from_elem((1, num_actions, 1), 1.0), array![1.0], gamma).unwrap()
    }

    /// Independent oracle: explicit propagation of p_t(s) for 10^4 steps.
    fn truncated_occupancy_oracle(mdp: &TabularMdp, policy: &PolicyTable) -> Array2<f64> {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let mut p_t = mdp.initial().to_vec();
        let mut acc = Array2::<f64>::zeros((ns, na));
        let mut w = 1.0 - mdp.gamma();
        for _ in 0..=10_000 {
            let mut next = vec![0.0; ns];
            for s in 0..ns {
                for a in 0..na {
                    let sa = p_t[s] * policy.prob(s, a);
                    acc[[s, a]] += w * sa;
                    for (s2, n) in next.iter_mut().enumerate() {
                        *n += sa * mdp.transition()[[s, a, s2]];
                    }
                }
            }
            p_t = next;
            w *= mdp.gamma();
        }
        acc
    }

    #[test]
    fn single_point_occupancy() {
        for g in [0.1, 0.5, 0.99] {
            let mdp = single_state(1, g);
            let occ = occupancy(&mdp, &PolicyTable::uniform(1, 1)).unwrap();
            assert!((occ.probs()[[0, 0]] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_swap_chain_is_uniform() {
        let mut p = Array3::zeros((2, 2, 2));
        for a in 0..2 {
            p[[0, a, 1]] = 1.0;
            p[[1, a, 0]] = 1.0;
        }
        let mdp = TabularMdp::new(p, array![0.5, 0.5], 0.9).unwrap();
        let occ = occupancy(&mdp, &PolicyTable::uniform(2, 2)).unwrap();
        for &x in occ.probs() {
            assert!((x - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn chain2_occupancy_matches_truncated_series() {
        let mdp = envs::chain2();
        let policy = envs::chain2_fixture_policy();
        let occ = occupancy(&mdp, &policy).unwrap();
        let oracle = truncated_occupancy_oracle(&mdp, &policy);
        assert!(sup_dist(occ.probs().view(), oracle.view()) < 1e-9);
        assert!(flow_residual(&mdp, &policy, &occ) < 1e-10);
    }

    #[test]
    fn truncation_fallback_agrees_with_solve() {
        let mdp = envs::gridworld5();
        let policy = PolicyTable::uniform(25, 4);
        let a = occupancy(&mdp, &policy).unwrap();
        let b = occupancy_by_truncation(&mdp, &policy, 10_000).unwrap();
        assert!(a.sup_dist(&b) < 1e-12);
    }

    #[test]
    fn zero_reward_deterministic_policy_has_zero_soft_q() {
        let mdp = envs::gridworld5();
        let actions: Vec<usize> = (0..25).map(|s| s % 4).collect();
        let policy = PolicyTable::deterministic(&actions, 4).unwrap();
        let q = policy_evaluation_soft(&mdp, &policy, &RewardTable::zeros(25, 4), 1e-10).unwrap();
        assert!(q.q().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn single_state_entropy_geometric_sum() {
        // Q = γ/(1-γ) log 2 for γ = 1/2.
        let mdp = single_state(2, 0.5);
        let q = policy_evaluation_soft(&mdp, &PolicyTable::uniform(1, 2), &RewardTable::zeros(1, 2), 1e-13).unwrap();
        for a in 0..2 {
            assert!((q.q()[[0, a]] - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn chain2_soft_evaluation_matches_truncated_backup() {
        let mdp = envs::chain2();
        let policy = envs::chain2_fixture_policy();
        let reward = RewardTable::from_fn(2, 2, |s, _| s as f64).unwrap();
        let q = policy_evaluation_soft(&mdp, &policy, &reward, 1e-12).unwrap();
        // oracle: 10^5 explicit backups from zero, written out longhand
        let mut oracle = Array2::<f64>::zeros((2, 2));
        for _ in 0..100_000 {
            let mut v = [0.0; 2];
            for (s, vs) in v.iter_mut().enumerate() {
                for a in 0..2 {
                    let p = policy.prob(s, a);
                    *vs += p * (oracle[[s, a]] - p.ln());
                }
            }
            let mut next = Array2::<f64>::zeros((2, 2));
            for s in 0..2 {
                for a in 0..2 {
                    let s2 = if a == 0 { s } else { 1 - s };
                    next[[s, a]] = s as f64 + mdp.gamma() * v[s2];
                }
            }
            oracle = next;
        }
        assert!(sup_dist(q.q().view(), oracle.view()) < 1e-8);
    }

    #[test]
    fn ordinary_and_soft_evaluation_agree_for_deterministic_policy() {
        let mdp = envs::random_mdp(4, 3, 0.9, 7);
        let policy = PolicyTable::deterministic(&[0, 2, 1, 1], 3).unwrap();
        let reward = RewardTable::from_fn(4, 3, |s, a| (s * 3 + a) as f64 * 0.1).unwrap();
        let soft = policy_evaluation_soft(&mdp, &policy, &reward, 1e-13).unwrap();
        let hard = policy_evaluation(&mdp, &policy, &reward).unwrap();
        assert!(sup_dist(soft.q().view(), hard.q().view()) < 1e-11);
    }

    #[test]
    fn soft_value_iteration_symmetric_single_state() {
        for g in [0.2, 0.9] {
            let (_, pi) = soft_value_iteration(&single_state(2, g), &RewardTable::zeros(1, 2), 1e-12).unwrap();
            assert!((pi.prob(0, 0) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_value_iteration_single_state_matches_brute_force_grid() {
        // Brute force: maximize E_{p^π}[r - log π] over π(a0) ∈ {0, 0.001, ..., 1}.
        // In a single state this is r·π - π log π - (1-π) log(1-π) per step.
        let objective = |p: f64| {
            let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
            p * 1.0 + h(p) + h(1.0 - p)
        };
        let best = (0..=1000)
            .map(|i| i as f64 / 1000.0)
            .max_by(|a, b| objective(*a).partial_cmp(&objective(*b)).unwrap())
            .unwrap();
        assert!((best - 0.731).abs() < 1e-9);
        let (_, pi) = soft_value_iteration(
            &single_state(2, 0.7),
            &RewardTable::new(array![[1.0, 0.0]]).unwrap(),
            1e-12,
        )
        .unwrap();
        assert!((pi.prob(0, 0) - best).abs() < 1e-3);
        assert!((pi.prob(0, 0) - std::f64::consts::E / (1.0 + std::f64::consts::E)).abs() < 1e-10);
    }

    #[test]
    fn soft_optimal_dominates_uniform_on_gridworld() {
        let mdp = envs::gridworld5();
        let reward = envs::gridworld5_reward();
        let (_, pi) = soft_value_iteration(&mdp, &reward, 1e-10).unwrap();
        let opt = super::super::expected_reward(&occupancy(&mdp, &pi).unwrap(), &reward).unwrap();
        let uni =
            super::super::expected_reward(&occupancy(&mdp, &PolicyTable::uniform(25, 4)).unwrap(), &reward).unwrap();
        assert!(opt >= uni);
    }

    #[test]
    fn converged_soft_q_is_a_fixed_point() {
        let mdp = envs::random_mdp(6, 3, 0.95, 11);
        let reward = RewardTable::from_fn(6, 3, |s, a| ((s * 7 + a * 3) % 5) as f64 - 2.0).unwrap();
        let tol = 1e-10;
        let (q, _) = soft_value_iteration(&mdp, &reward, tol).unwrap();
        let again = soft_bellman_backup(&mdp, &reward, &q);
        assert!(sup_dist(q.q().view(), again.q().view()) <= 2.0 * tol);
    }

    #[test]
    fn softmax_policy_is_fixed_point_of_soft_policy_iteration() {
        let mdp = envs::random_mdp(5, 3, 0.9, 3);
        let reward = RewardTable::from_fn(5, 3, |s, a| (s as f64 - a as f64).sin()).unwrap();
        let (_, pi) = soft_value_iteration(&mdp, &reward, 1e-12).unwrap();
        let next = soft_policy_iteration(&mdp, &reward, &pi, 1, 1e-12).unwrap();
        assert!(pi.sup_dist(&next) <= 1e-8);
    }

    #[test]
    fn policy_from_soft_q_examples() {
        let pi = policy_from_soft_q(&SoftQTable::new(array![[0.0, 0.0], [2f64.ln(), 0.0]])).unwrap();
        assert!((pi.prob(0, 0) - 0.5).abs() < 1e-15);
        assert!((pi.prob(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            policy_from_soft_q(&SoftQTable::new(array![[f64::NAN, 0.0]])),
            Err(Error::NonFiniteInput)
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mdp = envs::chain2();
        let err = occupancy(&mdp, &PolicyTable::uniform(3, 2)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn tight_budget_reports_no_convergence() {
        let mdp = envs::gridworld5();
        let opts = DpOptions {
            tol: 1e-14,
            max_iters: 5,
        };
        let err = soft_value_iteration_with(&mdp, &envs::gridworld5_reward(), opts).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { max_iters: 5 }));
    }

    #[test]
    fn greedy_value_iteration_beats_soft_on_true_reward() {
        let mdp = envs::gridworld5();
        let reward = envs::gridworld5_reward();
        let (_, greedy) = value_iteration(&mdp, &reward, DpOptions::default()).unwrap();
        let (_, soft) = soft_value_iteration(&mdp, &reward, 1e-10).unwrap();
        let er = |p: &PolicyTable| super::super::expected_reward(&occupancy(&mdp, p).unwrap(), &reward).unwrap();
        assert!(er(&greedy) >= er(&soft) - 1e-12);
    }
}
