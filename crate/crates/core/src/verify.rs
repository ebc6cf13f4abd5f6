//! Registry of invariant checks run by `nail-lab verify`.
//!
//! Each module's documented properties are registered here under a stable id;
//! [`MANIFEST`] lists the ids that must be present.

use crate::airl::{airl_bce_loss, airl_logits, gradient_diagnostics, run_airl, AirlConfig};
use crate::baselines::{
    behavioral_cloning, run_adversarial_rkl, valuedice_objective, AdversarialConfig, AdversarialUpdate,
};
use crate::config::ExperimentConfig;
use crate::demos::{empirical_occupancy, episode_start_states, sample_episodes, sample_steps};
use crate::envs;
use crate::error::Result;
use crate::experiment::run_experiment;
use crate::mdp::{
    j_nail, occupancy, policy_evaluation, policy_evaluation_soft, policy_from_soft_q, reverse_kl, reverse_kl_slices,
    soft_bellman_backup, soft_policy_iteration, soft_value_iteration, state_transition_matrix, BoundWeighting,
    OccupancyTable, PolicyTable, RewardTable, SoftQTable, TabularMdp,
};
use crate::metrics::write_metrics_to;
use crate::nail::{lower_bound_reward, nail_step, run_nail, stationarity_probe, NailConfig};
use crate::numeric::sup_dist;
use crate::observation::{obs_reward_pullback, push_occupancy, run_nail_obs, ObservationMap};
use crate::onail::{
    actor_loss, actor_update, critic_dv_loss, exact_q_adv, q_lb_from_q_adv, run_onail, run_onail_exact_critic,
    ActorConfig, OnailConfig,
};
use crate::ratio::{dv_objective, exact_log_ratio, fit, EstimatorConfig, EstimatorKind, LogRatioTable};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Result of one check: whether it held and a short measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn from(passed: bool, detail: impl Into<String>) -> Self {
        CheckOutcome {
            passed,
            detail: detail.into(),
        }
    }

    /// Passes when `value <= bound`.
    fn at_most(what: &str, value: f64, bound: f64) -> Self {
        Self::from(value <= bound, format!("{what} {value:.3e} (bound {bound:.0e})"))
    }
}

pub struct Invariant {
    pub id: &'static str,
    pub description: &'static str,
    pub check: fn() -> Result<CheckOutcome>,
}

/// Ids every build of the registry must provide.
pub const MANIFEST: &[&str] = &[
    "mdp.occupancy_flow",
    "mdp.soft_bellman_fixed_point",
    "mdp.bound_tightness",
    "mdp.bound_validity",
    "mdp.softmax_consistency",
    "demos.geometric_lengths",
    "demos.empirical_convergence",
    "demos.determinism",
    "ratio.estimator_agreement",
    "ratio.objective_monotone",
    "ratio.dv_stable",
    "nail.monotone",
    "nail.stationarity",
    "nail.m_step_optimality",
    "airl.structure_inversion",
    "airl.nail_equivalence",
    "airl.bce_gradient",
    "onail.q_identity",
    "onail.actor_improvement",
    "onail.exact_critic_convergence",
    "onail.offline_interface",
    "baselines.bc_rows",
    "baselines.shared_critic",
    "baselines.adversarial_regimes",
    "obs.mass",
    "obs.identity_reduction",
    "obs.data_processing",
    "harness.determinism",
    "harness.registry_complete",
];

macro_rules! inv {
    ($id:literal, $desc:literal, $f:path) => {
        Invariant {
            id: $id,
            description: $desc,
            check: $f,
        }
    };
}

pub fn registry() -> Vec<Invariant> {
    vec![
        inv!(
            "mdp.occupancy_flow",
            "occupancies sum to one and satisfy the flow equation",
            occupancy_flow
        ),
        inv!(
            "mdp.soft_bellman_fixed_point",
            "one more backup moves converged soft Q by at most 2 tol",
            soft_fixed_point
        ),
        inv!(
            "mdp.bound_tightness",
            "the surrogate at the reference policy equals minus the reverse KL",
            bound_tightness
        ),
        inv!(
            "mdp.bound_validity",
            "surrogate improvement implies reverse-KL improvement",
            bound_validity
        ),
        inv!(
            "mdp.softmax_consistency",
            "the soft-optimal policy is a soft policy-iteration fixed point",
            softmax_consistency
        ),
        inv!(
            "demos.geometric_lengths",
            "episode lengths pass a geometric goodness-of-fit test",
            geometric_lengths
        ),
        inv!(
            "demos.empirical_convergence",
            "empirical occupancy error shrinks with sample size",
            empirical_convergence
        ),
        inv!("demos.determinism", "equal seeds give equal datasets", demo_determinism),
        inv!(
            "ratio.estimator_agreement",
            "BCE, KLIEP and DV agree on well-sampled pairs",
            estimator_agreement
        ),
        inv!(
            "ratio.objective_monotone",
            "full-batch fits never decrease their objective",
            objective_monotone
        ),
        inv!(
            "ratio.dv_stable",
            "the DV log-mean-exp stays finite over the clip range",
            dv_stable
        ),
        inv!(
            "nail.monotone",
            "exact NAIL never increases the reverse KL",
            nail_monotone
        ),
        inv!(
            "nail.stationarity",
            "no random direction decreases the reverse KL at convergence",
            nail_stationarity
        ),
        inv!(
            "nail.m_step_optimality",
            "the full M-step equals the soft-optimal policy of the surrogate reward",
            m_step_optimality
        ),
        inv!(
            "airl.structure_inversion",
            "AIRL logits invert the lower-bound reward",
            structure_inversion
        ),
        inv!(
            "airl.nail_equivalence",
            "exact AIRL and per-step NAIL produce the same traces",
            airl_equivalence
        ),
        inv!(
            "airl.bce_gradient",
            "the discriminator gradient matches finite differences",
            airl_bce_gradient
        ),
        inv!(
            "onail.q_identity",
            "soft Q of the lower-bound reward equals Q_adv plus log policy",
            onail_q_identity
        ),
        inv!(
            "onail.actor_improvement",
            "per-state actor improvement implies surrogate improvement",
            actor_improvement
        ),
        inv!(
            "onail.exact_critic_convergence",
            "exact-critic ONAIL is monotone and ends stationary",
            exact_critic_convergence
        ),
        inv!(
            "onail.offline_interface",
            "ONAIL learns from demonstrations and start states alone",
            offline_interface
        ),
        inv!(
            "baselines.bc_rows",
            "behavioral cloning rows are distributions",
            bc_rows
        ),
        inv!(
            "baselines.shared_critic",
            "ONAIL and ValueDice share the critic loss",
            shared_critic
        ),
        inv!(
            "baselines.adversarial_regimes",
            "small adversarial steps are monotone, greedy ones are not",
            adversarial_regimes
        ),
        inv!("obs.mass", "pushforward preserves total mass", obs_mass),
        inv!(
            "obs.identity_reduction",
            "the identity map reproduces state-action results",
            obs_identity
        ),
        inv!(
            "obs.data_processing",
            "observation RKL never exceeds state-action RKL",
            obs_data_processing
        ),
        inv!(
            "harness.determinism",
            "runs are reproducible across repeats and worker counts",
            harness_determinism
        ),
        inv!(
            "harness.registry_complete",
            "the registry matches the manifest",
            registry_complete
        ),
    ]
}

/// Runs the checks whose id starts with `filter` (all when `None`).
pub fn run_checks(filter: Option<&str>) -> Vec<(&'static str, Result<CheckOutcome>)> {
    registry()
        .into_iter()
        .filter(|inv| filter.is_none_or(|f| inv.id.starts_with(f)))
        .map(|inv| (inv.id, (inv.check)()))
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random `(mdp, reference policy, expert occupancy)` with S in 2..=6, A in 2..=4.
fn fixture(seed: u64) -> (TabularMdp, PolicyTable, OccupancyTable) {
    let mut r = rng(seed ^ 0xF1);
    let ns = r.random_range(2..=6);
    let na = r.random_range(2..=4);
    let gamma = [0.8, 0.9, 0.99][r.random_range(0..3)];
    let mdp = envs::random_mdp(ns, na, gamma, seed);
    let pi = envs::random_policy(ns, na, &mut r);
    let expert = envs::random_policy(ns, na, &mut r);
    let q = occupancy(&mdp, &expert).expect("positive policy");
    (mdp, pi, q)
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    sup_dist(a.view(), b.view())
}

fn occupancy_flow() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (mdp, pi, _) = fixture(seed);
        let d = occupancy(&mdp, &pi)?;
        worst = worst.max((d.probs().sum() - 1.0).abs());
        let ds = d.state_marginal();
        let p_pi = state_transition_matrix(&mdp, &pi)?;
        let flow = mdp.initial() * (1.0 - mdp.gamma()) + &(p_pi.t().dot(&ds) * mdp.gamma());
        worst = worst.max((&flow - &ds).iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    Ok(CheckOutcome::at_most("worst residual", worst, 1e-10))
}

fn soft_fixed_point() -> Result<CheckOutcome> {
    let tol = 1e-10;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (mdp, _, _) = fixture(seed);
        let r = RewardTable::new(Array2::from_shape_fn(
            (mdp.num_states(), mdp.num_actions()),
            |(s, a)| ((s * 3 + a) as f64).sin(),
        ))?;
        let (q, _) = soft_value_iteration(&mdp, &r, tol)?;
        let next = soft_bellman_backup(&mdp, &r, &q);
        worst = worst.max(max_abs(next.q(), q.q()));
    }
    Ok(CheckOutcome::at_most("backup change", worst, 2.0 * tol))
}

fn bound_tightness() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (mdp, pi, q) = fixture(seed);
        let p = occupancy(&mdp, &pi)?;
        let lam = exact_log_ratio(&q, &p, 1e-300)?;
        let rkl = reverse_kl(&p, &q, 0.0)?;
        for w in [BoundWeighting::PerStep, BoundWeighting::Trajectory] {
            worst = worst.max((j_nail(&mdp, &pi, lam.logits(), &pi, w)? + rkl).abs());
        }
    }
    Ok(CheckOutcome::at_most("gap", worst, 1e-9))
}

fn mixture(a: &PolicyTable, b: &PolicyTable, step: f64) -> Result<PolicyTable> {
    PolicyTable::new(a.probs() * (1.0 - step) + &(b.probs() * step))
}

fn bound_validity() -> Result<CheckOutcome> {
    let mut tested = 0;
    let mut violations = 0;
    for seed in 0..20 {
        let (mdp, pi_ref, q) = fixture(seed);
        let lam = exact_log_ratio(&q, &occupancy(&mdp, &pi_ref)?, 1e-300)?;
        let base_j = j_nail(&mdp, &pi_ref, lam.logits(), &pi_ref, BoundWeighting::Trajectory)?;
        let base_kl = reverse_kl(&occupancy(&mdp, &pi_ref)?, &q, 0.0)?;
        let mut r = rng(seed + 100);
        for k in 0..20 {
            let rho = envs::random_policy(mdp.num_states(), mdp.num_actions(), &mut r);
            let step = [1e-3, 0.05, 0.3, 1.0][k % 4];
            let pi = mixture(&pi_ref, &rho, step)?;
            let j = j_nail(&mdp, &pi, lam.logits(), &pi_ref, BoundWeighting::Trajectory)?;
            if j > base_j + 1e-12 {
                tested += 1;
                if reverse_kl(&occupancy(&mdp, &pi)?, &q, 0.0)? >= base_kl {
                    violations += 1;
                }
            }
        }
        // the last NAIL M-step is always an improving direction
        let (next, diag) = nail_step(&mdp, &pi_ref, &q, &NailConfig::default(), 1)?;
        if diag.j_nail > base_j + 1e-12 {
            tested += 1;
            if reverse_kl(&occupancy(&mdp, &next)?, &q, 0.0)? >= base_kl {
                violations += 1;
            }
        }
    }
    Ok(CheckOutcome::from(
        violations == 0 && tested > 0,
        format!("{violations} violations among {tested} improving directions"),
    ))
}

fn softmax_consistency() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (mdp, _, _) = fixture(seed);
        let r = RewardTable::new(Array2::from_shape_fn(
            (mdp.num_states(), mdp.num_actions()),
            |(s, a)| ((s + 2 * a) as f64).cos(),
        ))?;
        let (q, _) = soft_value_iteration(&mdp, &r, 1e-12)?;
        let pi = policy_from_soft_q(&q)?;
        let again = soft_policy_iteration(&mdp, &r, &pi, 1, 1e-12)?;
        worst = worst.max(pi.sup_dist(&again));
    }
    Ok(CheckOutcome::at_most("policy change", worst, 1e-8))
}

fn geometric_lengths() -> Result<CheckOutcome> {
    let mdp = envs::chain2();
    let g = mdp.gamma();
    let n = 100_000;
    let demos = sample_episodes(&mdp, &envs::chain2_fixture_policy(), n, 11)?;
    let mut lengths = vec![0usize; n];
    for t in demos.transitions() {
        lengths[t.episode] += 1;
    }
    // bins 1..=K plus a tail bin, K chosen so each expected count is >= 5
    let pmf = |len: usize| (1.0 - g) * g.powi(len as i32 - 1);
    let mut k = 1;
    while (n as f64) * pmf(k + 1) >= 5.0 && (n as f64) * g.powi(k as i32 + 1) >= 5.0 {
        k += 1;
    }
    let mut observed = vec![0.0; k + 1];
    for &l in &lengths {
        observed[(l - 1).min(k)] += 1.0;
    }
    let mut stat = 0.0;
    for (i, &o) in observed.iter().enumerate() {
        let p = if i < k { pmf(i + 1) } else { g.powi(k as i32) };
        let e = n as f64 * p;
        stat += (o - e) * (o - e) / e;
    }
    let dist = ChiSquared::new(k as f64).expect("positive dof");
    let p_value = 1.0 - dist.cdf(stat);
    Ok(CheckOutcome::from(
        p_value > 1e-3,
        format!("chi-square {stat:.2} on {k} dof, p = {p_value:.3}"),
    ))
}

fn empirical_convergence() -> Result<CheckOutcome> {
    let mdp = envs::three_state();
    let (pi, _) = envs::three_state_policies();
    let exact = occupancy(&mdp, &pi)?;
    let mut means = Vec::new();
    for n in [1_000, 10_000, 100_000] {
        let mut total = 0.0;
        for seed in 0..10 {
            let d = sample_steps(&mdp, &pi, n, seed)?;
            total += empirical_occupancy(&d)?.sup_dist(&exact);
        }
        means.push(total / 10.0);
    }
    let ok = means.windows(2).all(|w| w[1] < w[0]);
    Ok(CheckOutcome::from(
        ok,
        format!(
            "mean sup errors {:?}",
            means.iter().map(|m| format!("{m:.2e}")).collect::<Vec<_>>()
        ),
    ))
}

fn demo_determinism() -> Result<CheckOutcome> {
    let mdp = envs::gridworld5();
    let pi = PolicyTable::uniform(25, 4);
    let a = sample_episodes(&mdp, &pi, 200, 5)?;
    let b = sample_episodes(&mdp, &pi, 200, 5)?;
    let c = sample_episodes(&mdp, &pi, 200, 6)?;
    Ok(CheckOutcome::from(
        a == b && a != c,
        format!("{} transitions reproduced", a.len()),
    ))
}

fn estimator_agreement() -> Result<CheckOutcome> {
    let mdp = envs::three_state();
    let (expert, learner) = envs::three_state_policies();
    let qd = sample_steps(&mdp, &expert, 100_000, 1)?;
    let pd = sample_steps(&mdp, &learner, 100_000, 2)?;
    let (qh, ph) = (empirical_occupancy(&qd)?, empirical_occupancy(&pd)?);
    let cfg = EstimatorConfig::default();
    let fits: Vec<LogRatioTable> = [EstimatorKind::Bce, EstimatorKind::Kliep, EstimatorKind::Dv]
        .iter()
        .map(|&k| fit(k, &qd, &pd, &cfg))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in i + 1..3 {
            for ((s, a), &x) in fits[i].logits().indexed_iter() {
                if qh.probs()[[s, a]] >= 0.01 && ph.probs()[[s, a]] >= 0.01 {
                    worst = worst.max((x - fits[j].logits()[[s, a]]).abs());
                }
            }
        }
    }
    Ok(CheckOutcome::at_most("pairwise sup gap", worst, 0.1))
}

fn objective_monotone() -> Result<CheckOutcome> {
    let mdp = envs::three_state();
    let (expert, learner) = envs::three_state_policies();
    let qd = sample_steps(&mdp, &expert, 5_000, 3)?;
    let pd = sample_steps(&mdp, &learner, 5_000, 4)?;
    let mut worst = f64::NEG_INFINITY;
    for k in [EstimatorKind::Bce, EstimatorKind::Kliep, EstimatorKind::Dv] {
        let f = fit(k, &qd, &pd, &EstimatorConfig::default())?;
        for w in f.fit().loss_trace.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
    }
    Ok(CheckOutcome::at_most("largest objective drop", worst, 1e-9))
}

fn dv_stable() -> Result<CheckOutcome> {
    let clip = EstimatorConfig::default().clip;
    let q = ndarray::array![[0.5, 0.3], [0.2, 0.0]];
    let p = ndarray::array![[0.1, 0.2], [0.3, 0.4]];
    let mut finite = true;
    // extreme corners of the clip box, plus a large common offset the
    // max-subtraction must absorb
    for nu in [
        Array2::from_elem((2, 2), clip),
        Array2::from_elem((2, 2), -clip),
        ndarray::array![[clip, -clip], [-clip, clip]],
        ndarray::array![[800.0, 790.0], [780.0, 800.0]],
    ] {
        finite &= dv_objective(&q, &p, &nu).is_finite();
    }
    Ok(CheckOutcome::from(
        finite,
        format!("objective finite for |ν| <= {clip} and offsets of 800"),
    ))
}

fn nail_monotone() -> Result<CheckOutcome> {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..10 {
        let (mdp, pi, q) = fixture(seed);
        for weighting in [BoundWeighting::Trajectory, BoundWeighting::PerStep] {
            let cfg = NailConfig {
                iterations: 30,
                initial_policy: Some(pi.clone()),
                weighting,
                ..Default::default()
            };
            worst = worst.max(run_nail(&mdp, &q, &cfg)?.max_rkl_increase());
        }
    }
    Ok(CheckOutcome::at_most("largest increase", worst, 1e-10))
}

fn nail_stationarity() -> Result<CheckOutcome> {
    let mdp = envs::gridworld5();
    let expert = crate::demos::make_expert(&mdp, &envs::gridworld5_reward(), 1e-12)?;
    let q = occupancy(&mdp, &expert)?;
    let trace = run_nail(&mdp, &q, &NailConfig::default())?;
    let pi = trace.final_policy().expect("nonempty trace");
    let worst = stationarity_probe(&mdp, pi, &q, 100, 1e-4, 7)?;
    Ok(CheckOutcome::at_most("largest decrease", worst, 1e-8))
}

fn m_step_optimality() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (mdp, pi, q) = fixture(seed);
        let cfg = NailConfig::default();
        let (next, _) = nail_step(&mdp, &pi, &q, &cfg, 1)?;
        let lam = exact_log_ratio(&q, &occupancy(&mdp, &pi)?, 1e-12)?;
        let w = cfg.weighting.weight(mdp.gamma());
        let r = RewardTable::new(lam.logits() * w + &pi.log_probs(1e-300))?;
        let (soft_q, _) = soft_value_iteration(&mdp, &r, 1e-12)?;
        worst = worst.max(next.sup_dist(&policy_from_soft_q(&soft_q)?));
    }
    Ok(CheckOutcome::at_most("policy gap", worst, 1e-8))
}

fn structure_inversion() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (mdp, pi, q) = fixture(seed);
        let lam = exact_log_ratio(&q, &occupancy(&mdp, &pi)?, 1e-12)?;
        let back = airl_logits(&lower_bound_reward(&lam, &pi, 1e-300)?, &pi, 1e-300)?;
        worst = worst.max(max_abs(back.logits(), lam.logits()));
    }
    Ok(CheckOutcome::at_most("round-trip gap", worst, 1e-12))
}

fn airl_equivalence() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (mdp, pi, q) = fixture(seed);
        let (a, _) = run_airl(
            &mdp,
            &q,
            &AirlConfig {
                iterations: 20,
                initial_policy: Some(pi.clone()),
                ..Default::default()
            },
        )?;
        let n = run_nail(
            &mdp,
            &q,
            &NailConfig {
                iterations: 20,
                initial_policy: Some(pi.clone()),
                weighting: BoundWeighting::PerStep,
                ..Default::default()
            },
        )?;
        for (x, y) in a.reverse_kl_series().iter().zip(n.reverse_kl_series()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(CheckOutcome::at_most("RKL series gap", worst, 1e-8))
}

fn airl_bce_gradient() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let (mdp, pi, q) = fixture(seed);
        let p = occupancy(&mdp, &pi)?;
        let mut r = rng(seed + 7);
        let nb = Array2::from_shape_simple_fn(pi.dim(), || r.random_range(-1.0..1.0));
        let report = gradient_diagnostics(&mdp, &pi, &RewardTable::new(nb.clone())?, &q)?;
        let h = 1e-6;
        for ((s, a), &g) in report.bce_gradient.indexed_iter() {
            let mut up = nb.clone();
            up[[s, a]] += h;
            let mut dn = nb.clone();
            dn[[s, a]] -= h;
            let fd = (airl_bce_loss(&RewardTable::new(up)?, &pi, &q, &p)
                - airl_bce_loss(&RewardTable::new(dn)?, &pi, &q, &p))
                / (2.0 * h);
            let rel = (fd - g).abs() / g.abs().max(1e-3);
            worst = worst.max(rel);
        }
    }
    Ok(CheckOutcome::at_most("relative error", worst, 1e-6))
}

fn onail_q_identity() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (mdp, pi, q) = fixture(seed);
        let lam = exact_log_ratio(&q, &occupancy(&mdp, &pi)?, 1e-12)?;
        let r_adv = RewardTable::new(lam.logits().clone())?;
        let r_lb = lower_bound_reward(&lam, &pi, 1e-300)?;
        let soft = policy_evaluation_soft(&mdp, &pi, &r_lb, 1e-12)?;
        let plain = policy_evaluation(&mdp, &pi, &r_adv)?;
        let lifted = q_lb_from_q_adv(&plain, &pi, 1e-300)?;
        worst = worst.max(max_abs(soft.q(), lifted.q()));
    }
    Ok(CheckOutcome::at_most("gap", worst, 1e-8))
}

fn actor_improvement() -> Result<CheckOutcome> {
    let cfg = ActorConfig::default();
    let mut worst_state = f64::NEG_INFINITY;
    let mut worst_j = f64::NEG_INFINITY;
    for seed in 0..100 {
        let (mdp, pi, q) = fixture(seed);
        let q_adv = exact_q_adv(&mdp, &q, &pi)?;
        let z = Array1::from_elem(mdp.num_states(), 1.0 / mdp.num_states() as f64);
        let next = actor_update(&pi, &q_adv, &z, mdp.gamma(), &cfg)?;
        let w = cfg.weighting.weight(mdp.gamma());
        let before = actor_loss(&pi, &pi, &q_adv, w, cfg.policy_floor)?;
        let after = actor_loss(&next, &pi, &q_adv, w, cfg.policy_floor)?;
        worst_state = worst_state.max((&after - &before).fold(f64::NEG_INFINITY, |m, &v| m.max(v)));
        let lam = exact_log_ratio(&q, &occupancy(&mdp, &pi)?, 1e-12)?;
        let j0 = j_nail(&mdp, &pi, lam.logits(), &pi, cfg.weighting)?;
        let j1 = j_nail(&mdp, &next, lam.logits(), &pi, cfg.weighting)?;
        worst_j = worst_j.max(j0 - j1);
    }
    Ok(CheckOutcome::from(
        worst_state <= 1e-12 && worst_j <= 1e-10,
        format!("per-state loss increase {worst_state:.2e}, surrogate decrease {worst_j:.2e}"),
    ))
}

fn exact_critic_convergence() -> Result<CheckOutcome> {
    let mdp = envs::three_state();
    let (expert, learner) = envs::three_state_policies();
    let q = occupancy(&mdp, &expert)?;
    let trace = run_onail_exact_critic(&mdp, &q, 300, &ActorConfig::default(), &learner, None)?;
    let inc = trace.max_rkl_increase();
    let probe = stationarity_probe(&mdp, trace.final_policy().expect("nonempty"), &q, 100, 1e-4, 3)?;
    Ok(CheckOutcome::from(
        inc <= 1e-10 && probe <= 1e-8,
        format!("largest increase {inc:.2e}, probe {probe:.2e}"),
    ))
}

fn offline_interface() -> Result<CheckOutcome> {
    // the learning entry point takes no MDP; without an evaluator nothing is measured
    let mdp = envs::chain2();
    let demos = sample_episodes(&mdp, &envs::chain2_fixture_policy(), 30, 1)?;
    let cfg = OnailConfig {
        iterations: 2,
        ..Default::default()
    };
    let trace = run_onail(&demos, &episode_start_states(&demos), &cfg, None)?;
    let blind = trace
        .records
        .iter()
        .all(|r| r.reverse_kl.is_nan() && r.expected_true_reward.is_none());
    Ok(CheckOutcome::from(
        blind,
        format!("{} policies learned without environment access", trace.len()),
    ))
}

fn bc_rows() -> Result<CheckOutcome> {
    let mdp = envs::gridworld5();
    let demos = sample_episodes(&mdp, &PolicyTable::uniform(25, 4), 5, 2)?;
    let mut worst: f64 = 0.0;
    for k in [0.0, 0.1, 0.5, 3.0] {
        let pi = behavioral_cloning(&demos, k)?;
        for row in pi.probs().rows() {
            if row.iter().any(|&p| p < 0.0) {
                worst = f64::INFINITY;
            }
            worst = worst.max((row.sum() - 1.0).abs());
        }
    }
    Ok(CheckOutcome::at_most("row-sum error", worst, 1e-12))
}

fn shared_critic() -> Result<CheckOutcome> {
    let mdp = envs::gridworld5();
    let mut r = rng(4);
    let pi = envs::random_policy(25, 4, &mut r);
    let demos = sample_episodes(&mdp, &pi, 40, 9)?;
    let p0 = episode_start_states(&demos);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let q = SoftQTable::new(Array2::from_shape_simple_fn((25, 4), || r.random_range(-2.0..2.0)));
        let a = critic_dv_loss(&demos, &p0, &pi, &q, 0.95)?;
        let b = valuedice_objective(&demos, &p0, &pi, &q, 0.95)?;
        worst = worst.max((a + b).abs());
    }
    Ok(CheckOutcome::at_most("loss gap", worst, 1e-12))
}

fn adversarial_regimes() -> Result<CheckOutcome> {
    let mut small = f64::NEG_INFINITY;
    for seed in 0..5 {
        let (mdp, pi, q) = fixture(seed);
        let cfg = AdversarialConfig {
            iterations: 100,
            initial_policy: Some(pi),
            ..Default::default()
        };
        small = small.max(run_adversarial_rkl(&mdp, &q, &cfg)?.max_rkl_increase());
    }
    let (mdp, q, init) = envs::instability_fixture();
    let greedy = AdversarialConfig {
        iterations: 10,
        update: AdversarialUpdate::Greedy,
        initial_policy: Some(init),
        ..Default::default()
    };
    let large = run_adversarial_rkl(&mdp, &q, &greedy)?.max_rkl_increase();
    Ok(CheckOutcome::from(
        small <= 1e-10 && large > 0.0,
        format!("small-step increase {small:.2e}, greedy increase {large:.3}"),
    ))
}

fn random_map(ns: usize, na: usize, seed: u64) -> ObservationMap {
    let mut r = rng(seed);
    let k = r.random_range(1..=ns * na);
    let mut table = Array2::from_shape_simple_fn((ns, na), || r.random_range(0..k));
    // make it surjective
    for o in 0..k {
        table[[o / na, o % na]] = o;
    }
    ObservationMap::new(table, k).expect("surjective by construction")
}

fn obs_mass() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (mdp, pi, _) = fixture(seed);
        let map = random_map(mdp.num_states(), mdp.num_actions(), seed);
        let p = push_occupancy(&occupancy(&mdp, &pi)?, &map)?;
        worst = worst.max((p.sum() - 1.0).abs());
    }
    Ok(CheckOutcome::at_most("mass error", worst, 1e-10))
}

fn obs_identity() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let (mdp, pi, q) = fixture(seed);
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let map = ObservationMap::identity(ns, na);
        let occ = occupancy(&mdp, &pi)?;
        let pushed = push_occupancy(&occ, &map)?;
        let flat = Array1::from_iter(occ.probs().iter().copied());
        worst = worst.max((&pushed - &flat).iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let lam = exact_log_ratio(&q, &occ, 1e-12)?;
        let pulled = obs_reward_pullback(&Array1::from_iter(lam.logits().iter().copied()), &map)?;
        worst = worst.max(max_abs(pulled.r(), lam.logits()));
        let cfg = NailConfig {
            iterations: 10,
            initial_policy: Some(pi),
            ..Default::default()
        };
        let a = run_nail(&mdp, &q, &cfg)?;
        let b = run_nail_obs(&mdp, &push_occupancy(&q, &map)?, &map, &cfg)?;
        for (x, y) in a.records.iter().zip(&b.records) {
            worst = worst.max((x.reverse_kl - y.reverse_kl).abs());
            worst = worst.max((x.j_nail.unwrap_or(0.0) - y.j_nail.unwrap_or(0.0)).abs());
        }
    }
    Ok(CheckOutcome::at_most("gap", worst, 1e-12))
}

fn obs_data_processing() -> Result<CheckOutcome> {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..20 {
        let (mdp, pi, q) = fixture(seed);
        let map = random_map(mdp.num_states(), mdp.num_actions(), seed + 50);
        let p = occupancy(&mdp, &pi)?;
        let sa = reverse_kl(&p, &q, 0.0)?;
        let po = push_occupancy(&p, &map)?;
        let qo = push_occupancy(&q, &map)?;
        let obs = reverse_kl_slices(
            po.as_slice().expect("contiguous"),
            qo.as_slice().expect("contiguous"),
            0.0,
        )?;
        worst = worst.max(obs - sa);
    }
    Ok(CheckOutcome::at_most("largest excess", worst, 1e-12))
}

fn harness_determinism() -> Result<CheckOutcome> {
    let cfg = ExperimentConfig::from_json(
        r#"{"algorithm": "onail", "environment": "chain2", "iterations": 3,
            "hyperparameters": {"critic_steps": 50, "actor_steps": 10},
            "demo_episodes": 20, "seeds": [3, 1, 2]}"#,
    )?;
    let csv = |jobs: usize| -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_metrics_to(&run_experiment(&cfg, jobs, false)?, &mut buf)?;
        Ok(buf)
    };
    let (a, b, c) = (csv(1)?, csv(1)?, csv(3)?);
    Ok(CheckOutcome::from(
        a == b && a == c,
        format!("{} bytes identical across runs", a.len()),
    ))
}

fn registry_complete() -> Result<CheckOutcome> {
    let ids: Vec<&str> = registry().iter().map(|i| i.id).collect();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let missing: Vec<&&str> = MANIFEST.iter().filter(|m| !ids.contains(m)).collect();
    let ok = missing.is_empty() && sorted.len() == ids.len() && ids.len() == MANIFEST.len();
    Ok(CheckOutcome::from(
        ok,
        format!(
            "{} registered, {} in manifest, missing {missing:?}",
            ids.len(),
            MANIFEST.len()
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_matches_manifest() {
        assert_eq!(registry().len(), MANIFEST.len());
        assert!(registry_complete().unwrap().passed);
    }
}
