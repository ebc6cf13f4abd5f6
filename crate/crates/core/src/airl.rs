//! Adversarial inverse RL with the policy-structured discriminator
//! `ν = ν̄ − log π`, and gradient diagnostics comparing its discriminator
//! gradient with the maximum-causal-entropy likelihood gradient.

use crate::demos::{empirical_occupancy, sample_steps, DemonstrationSet};
use crate::error::{shape_err, Error, Result};
use crate::mdp::{
    j_nail, occupancy, policy_from_soft_q, soft_value_iteration, BoundWeighting, OccupancyTable, PolicyTable,
    RewardTable, TabularMdp,
};
use crate::nail::{initial_policy, record, NailTrace};
use crate::numeric::derive_seed;
use crate::ratio::{ascend, EstimatorConfig, EstimatorKind, FitMetadata, LogRatioTable};
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

/// `ν = ν̄ − log max(π, floor)`.
pub fn airl_logits(nu_bar: &RewardTable, policy: &PolicyTable, floor: f64) -> Result<LogRatioTable> {
    if nu_bar.dim() != policy.dim() {
        return Err(shape_err(format!("{:?}", policy.dim()), format!("{:?}", nu_bar.dim())));
    }
    LogRatioTable::new(
        nu_bar.r() - &policy.log_probs(floor),
        EstimatorKind::Bce,
        FitMetadata::default(),
    )
}

/// What the discriminator is trained on.
#[derive(Debug, Clone, Copy)]
pub enum DiscriminatorData<'a> {
    /// Expert and policy samples; full-batch gradient ascent.
    Samples {
        expert: &'a DemonstrationSet,
        policy: &'a DemonstrationSet,
    },
    /// Exact expectations under `q` and `p^π`; per-entry Newton iterations.
    Exact {
        expert: &'a OccupancyTable,
        policy: &'a OccupancyTable,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Gradient steps (sample mode) or maximum Newton iterations (exact mode).
    pub steps: usize,
    pub learning_rate: f64,
    /// Bound on the logits `|ν|`.
    pub clip: f64,
    pub policy_floor: f64,
    pub newton_tol: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            steps: 5000,
            learning_rate: 1.0,
            clip: 20.0,
            policy_floor: 1e-300,
            newton_tol: 1e-13,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maximizes `q log σ(ν) + p log σ(−ν)` for one entry by damped Newton steps.
fn newton_entry(q: f64, p: f64, init: f64, clip: f64, max_iters: usize, tol: f64) -> f64 {
    if q == 0.0 && p == 0.0 {
        return init;
    }
    if p == 0.0 {
        return clip;
    }
    if q == 0.0 {
        return -clip;
    }
    let mut x = init.clamp(-clip, clip);
    for _ in 0..max_iters {
        let s = sigmoid(x);
        let g = q * (1.0 - s) - p * s;
        let h = (q + p) * s * (1.0 - s);
        // the objective is concave; cap the step to stay in the region where
        // the quadratic model is trustworthy
        let step = (g / h).clamp(-1.0, 1.0);
        x = (x + step).clamp(-clip, clip);
        if step.abs() <= tol * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Fits ν̄ with logits `ν̄ − log π` (π fixed) to the balanced BCE objective.
/// Zero steps return `nu_bar_init` unchanged.
pub fn fit_airl_discriminator(
    nu_bar_init: &RewardTable,
    policy: &PolicyTable,
    data: DiscriminatorData<'_>,
    cfg: &DiscriminatorConfig,
) -> Result<RewardTable> {
    if nu_bar_init.dim() != policy.dim() {
        return Err(shape_err(
            format!("{:?}", policy.dim()),
            format!("{:?}", nu_bar_init.dim()),
        ));
    }
    let (q, p) = match data {
        DiscriminatorData::Samples { expert, policy } => (
            empirical_occupancy(expert)?.probs().clone(),
            empirical_occupancy(policy)?.probs().clone(),
        ),
        DiscriminatorData::Exact { expert, policy } => (expert.probs().clone(), policy.probs().clone()),
    };
    if q.dim() != policy.dim() || p.dim() != policy.dim() {
        return Err(shape_err(format!("{:?}", policy.dim()), format!("{:?}", q.dim())));
    }
    if cfg.steps == 0 {
        return Ok(nu_bar_init.clone());
    }
    let log_pi = policy.log_probs(cfg.policy_floor);
    let nu0 = nu_bar_init.r() - &log_pi;
    let nu = match data {
        DiscriminatorData::Samples { .. } => {
            let est = EstimatorConfig {
                learning_rate: cfg.learning_rate,
                steps: cfg.steps,
                batch: None,
                clip: cfg.clip,
                seed: 0,
            };
            ascend(EstimatorKind::Bce, &q, &p, &est, &nu0)?.0
        }
        DiscriminatorData::Exact { .. } => {
            let mut nu = nu0;
            Zip::from(&mut nu).and(&q).and(&p).for_each(|x, &qi, &pi| {
                *x = newton_entry(qi, pi, *x, cfg.clip, cfg.steps, cfg.newton_tol);
            });
            nu
        }
    };
    if nu.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged { step: cfg.steps });
    }
    RewardTable::new(nu + &log_pi)
}

#[derive(Debug, Clone, PartialEq)]
pub enum AirlMode {
    /// Discriminator fitted to exact occupancies.
    Exact,
    /// Discriminator fitted to expert demonstrations and fresh policy rollouts.
    Sampled {
        expert_demos: DemonstrationSet,
        rollout_steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirlConfig {
    pub iterations: usize,
    pub mode: AirlMode,
    pub discriminator: DiscriminatorConfig,
    /// Start each discriminator fit from the previous ν̄ instead of zeros.
    pub warm_start: bool,
    pub initial_policy: Option<PolicyTable>,
    pub true_reward: Option<RewardTable>,
    pub kl_floor: f64,
    pub dp_tol: f64,
    pub seed: u64,
}

impl Default for AirlConfig {
    fn default() -> Self {
        AirlConfig {
            iterations: 50,
            mode: AirlMode::Exact,
            discriminator: DiscriminatorConfig::default(),
            warm_start: false,
            initial_policy: None,
            true_reward: None,
            kl_floor: 1e-12,
            dp_tol: 1e-10,
            seed: 0,
        }
    }
}

/// Alternates discriminator fits and entropy-regularized RL on ν̄. Returns the
/// trace and the final recovered reward.
pub fn run_airl(mdp: &TabularMdp, expert_occ: &OccupancyTable, cfg: &AirlConfig) -> Result<(NailTrace, RewardTable)> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be at least 1".into()));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut policy = initial_policy(mdp, cfg.initial_policy.as_ref())?;
    let mut nu_bar = RewardTable::zeros(ns, na);
    let mut trace = NailTrace::new();
    let first = record(mdp, &policy, expert_occ, cfg.true_reward.as_ref(), cfg.kl_floor, 0)?;
    trace.push(first, policy.clone());
    for i in 1..=cfg.iterations {
        let init = if cfg.warm_start {
            nu_bar.clone()
        } else {
            RewardTable::zeros(ns, na)
        };
        nu_bar = match &cfg.mode {
            AirlMode::Exact => {
                let p = occupancy(mdp, &policy)?;
                let data = DiscriminatorData::Exact {
                    expert: expert_occ,
                    policy: &p,
                };
                fit_airl_discriminator(&init, &policy, data, &cfg.discriminator)?
            }
            AirlMode::Sampled {
                expert_demos,
                rollout_steps,
            } => {
                let rollouts = sample_steps(mdp, &policy, *rollout_steps, derive_seed(cfg.seed, i as u64))?;
                let data = DiscriminatorData::Samples {
                    expert: expert_demos,
                    policy: &rollouts,
                };
                fit_airl_discriminator(&init, &policy, data, &cfg.discriminator)?
            }
        };
        let (q, _) = soft_value_iteration(mdp, &nu_bar, cfg.dp_tol)?;
        let next = policy_from_soft_q(&q)?;
        let nu = airl_logits(&nu_bar, &policy, cfg.discriminator.policy_floor)?;
        let mut rec = record(mdp, &next, expert_occ, cfg.true_reward.as_ref(), cfg.kl_floor, i)?;
        rec.j_nail = Some(j_nail(mdp, &next, nu.logits(), &policy, BoundWeighting::PerStep)?);
        trace.push(rec, next.clone());
        policy = next;
    }
    Ok((trace, nu_bar))
}

/// Unweighted BCE objective `Σ q log σ(ν̄ − log π) + p^π log σ(log π − ν̄)` whose
/// gradient [`GradientReport::bce_gradient`] reports.
pub fn airl_bce_loss(
    nu_bar: &RewardTable,
    policy: &PolicyTable,
    expert_occ: &OccupancyTable,
    policy_occ: &OccupancyTable,
) -> f64 {
    let mut total = 0.0;
    Zip::from(nu_bar.r())
        .and(policy.probs())
        .and(expert_occ.probs())
        .and(policy_occ.probs())
        .for_each(|&nb, &pi, &q, &p| {
            let nu = nb - pi.ln();
            if q > 0.0 {
                total += q * log_sigmoid(nu);
            }
            if p > 0.0 {
                total += p * log_sigmoid(-nu);
            }
        });
    total
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    /// Gradient of the discriminator objective with respect to ν̄.
    pub bce_gradient: Array2<f64>,
    /// `q − p^θ`, the likelihood gradient with one-hot features.
    pub maxent_gradient: Array2<f64>,
    pub sup_gap: f64,
    pub bce_sup_norm: f64,
    pub maxent_sup_norm: f64,
    /// Total mass of `p̄(s, a) = p^π(s) exp ν̄(s, a)`.
    pub unnormalized_mass: f64,
    pub note: String,
}

/// Compares the discriminator gradient `q − (q + p^π) p̄ / (p^π + p̄)` with
/// `p̄ = p^π(s) exp ν̄` against the MaxCausalEnt gradient `q − p^θ`, where
/// `p^θ` is the occupancy of the soft-optimal policy for ν̄.
pub fn gradient_diagnostics(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    nu_bar: &RewardTable,
    expert_occ: &OccupancyTable,
) -> Result<GradientReport> {
    mdp.check_table("policy", policy.dim())?;
    mdp.check_table("reward", nu_bar.dim())?;
    mdp.check_table("expert occupancy", expert_occ.dim())?;
    let p_pi = occupancy(mdp, policy)?;
    let marginal = p_pi.state_marginal();
    let mut bce = Array2::zeros(policy.dim());
    let mut mass = 0.0;
    for ((s, a), g) in bce.indexed_iter_mut() {
        let q = expert_occ.probs()[[s, a]];
        let p = p_pi.probs()[[s, a]];
        let e = nu_bar.r()[[s, a]].exp();
        let bar = marginal[s] * e;
        mass += bar;
        *g = if p + bar > 0.0 {
            q - (q + p) * bar / (p + bar)
        } else {
            // state never visited by π: the expression is 0/0, use its limit
            let pi = policy.prob(s, a);
            q - q * e / (pi + e)
        };
    }
    let (soft_q, _) = soft_value_iteration(mdp, nu_bar, 1e-12)?;
    let p_theta = occupancy(mdp, &policy_from_soft_q(&soft_q)?)?;
    let maxent = expert_occ.probs() - p_theta.probs();
    let sup = |x: &Array2<f64>| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gap = sup(&(&bce - &maxent));
    Ok(GradientReport {
        bce_sup_norm: sup(&bce),
        maxent_sup_norm: sup(&maxent),
        sup_gap: gap,
        bce_gradient: bce,
        maxent_gradient: maxent,
        unnormalized_mass: mass,
        note: "p̄ = p^π(s)·exp(ν̄) is used as is, without normalization".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;
    use crate::nail::lower_bound_reward;
    use ndarray::array;

    #[test]
    fn logits_examples() {
        let pi = PolicyTable::new(array![[0.2, 0.8], [0.5, 0.5]]).unwrap();
        let nb = RewardTable::new(pi.log_probs(0.0)).unwrap();
        assert!(airl_logits(&nb, &pi, 1e-300)
            .unwrap()
            .logits()
            .iter()
            .all(|x| x.abs() < 1e-15));
        let u = PolicyTable::uniform(2, 3);
        let l = airl_logits(&RewardTable::zeros(2, 3), &u, 1e-300).unwrap();
        assert!(l.logits().iter().all(|x| (x - 3f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn inversion_identity() {
        let pi = PolicyTable::new(array![[0.2, 0.8], [0.6, 0.4]]).unwrap();
        let lam = LogRatioTable::new(
            array![[0.3, -1.2], [2.0, 0.1]],
            EstimatorKind::Exact,
            Default::default(),
        )
        .unwrap();
        let back = airl_logits(&lower_bound_reward(&lam, &pi, 1e-300).unwrap(), &pi, 1e-300).unwrap();
        let gap = (back.logits() - lam.logits())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(gap <= 1e-12);
    }

    #[test]
    fn exact_fit_recovers_lower_bound_reward_on_chain2() {
        let mdp = envs::chain2();
        let pi = envs::chain2_fixture_policy();
        let expert = PolicyTable::new(array![[0.2, 0.8], [0.9, 0.1]]).unwrap();
        let q = occupancy(&mdp, &expert).unwrap();
        let p = occupancy(&mdp, &pi).unwrap();
        let nu_bar = fit_airl_discriminator(
            &RewardTable::zeros(2, 2),
            &pi,
            DiscriminatorData::Exact { expert: &q, policy: &p },
            &DiscriminatorConfig::default(),
        )
        .unwrap();
        let lam = crate::ratio::exact_log_ratio(&q, &p, 1e-12).unwrap();
        let r_lb = lower_bound_reward(&lam, &pi, 1e-300).unwrap();
        let gap = (nu_bar.r() - r_lb.r()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(gap <= 1e-3, "gap {gap}");
        assert!(gap <= 1e-10);
    }

    #[test]
    fn zero_steps_returns_init() {
        let mdp = envs::chain2();
        let pi = envs::chain2_fixture_policy();
        let p = occupancy(&mdp, &pi).unwrap();
        let init = RewardTable::new(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let cfg = DiscriminatorConfig {
            steps: 0,
            ..Default::default()
        };
        let data = DiscriminatorData::Exact { expert: &p, policy: &p };
        assert_eq!(fit_airl_discriminator(&init, &pi, data, &cfg).unwrap(), init);
    }

    #[test]
    fn newton_matches_closed_form() {
        for (q, p) in [(0.3f64, 0.1f64), (0.01, 0.5), (1e-6, 0.2)] {
            let x = newton_entry(q, p, 0.0, 20.0, 200, 1e-14);
            assert!((x - (q / p).ln()).abs() < 1e-12);
        }
    }
}
