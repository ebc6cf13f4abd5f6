//! The NAIL loop: estimate `log(q/p^π̃)`, build the lower-bound reward and
//! improve the policy with soft reinforcement learning on it.

use crate::demos::{empirical_occupancy, sample_steps, DemonstrationSet};
use crate::error::{shape_err, Error, Result};
use crate::mdp::{
    expected_reward, j_nail, occupancy, policy_from_soft_q, reverse_kl, soft_policy_iteration, soft_value_iteration,
    BoundWeighting, OccupancyTable, PolicyTable, RewardTable, TabularMdp,
};
use crate::numeric::derive_seed;
use crate::ratio::{exact_log_ratio, fit, EstimatorConfig, EstimatorKind, LogRatioTable};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Metrics recorded for one iterate of an imitation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NailRecord {
    pub iteration: usize,
    pub reverse_kl: f64,
    pub j_nail: Option<f64>,
    pub expected_true_reward: Option<f64>,
    pub estimator_loss: Option<f64>,
}

/// Per-iteration records and policies. Record `i` describes the policy after `i`
/// improvement steps; record 0 is the initial policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NailTrace {
    pub records: Vec<NailRecord>,
    pub policies: Vec<PolicyTable>,
}

impl NailTrace {
    pub fn new() -> Self {
        NailTrace {
            records: Vec::new(),
            policies: Vec::new(),
        }
    }

    pub fn push(&mut self, record: NailRecord, policy: PolicyTable) {
        debug_assert_eq!(record.iteration, self.records.len());
        self.records.push(record);
        self.policies.push(policy);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_policy(&self) -> Option<&PolicyTable> {
        self.policies.last()
    }

    pub fn reverse_kl_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reverse_kl).collect()
    }

    /// Largest one-step increase of the reverse KL (negative if strictly decreasing).
    pub fn max_rkl_increase(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[1].reverse_kl - w[0].reverse_kl)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Default for NailTrace {
    fn default() -> Self {
        Self::new()
    }
}

/// `r_lb = λ + log max(π̃, floor)`.
pub fn lower_bound_reward(log_ratio: &LogRatioTable, ref_policy: &PolicyTable, floor: f64) -> Result<RewardTable> {
    lower_bound_reward_weighted(log_ratio.logits(), ref_policy, floor, 1.0)
}

/// `r = w λ + log max(π̃, floor)`; soft RL on it maximizes `w · J_NAIL`.
pub fn lower_bound_reward_weighted(
    log_ratio: &Array2<f64>,
    ref_policy: &PolicyTable,
    floor: f64,
    weight: f64,
) -> Result<RewardTable> {
    if log_ratio.dim() != ref_policy.dim() {
        return Err(shape_err(
            format!("{:?}", ref_policy.dim()),
            format!("{:?}", log_ratio.dim()),
        ));
    }
    RewardTable::new(log_ratio * weight + &ref_policy.log_probs(floor))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RatioMode {
    /// Ratio of exact occupancies, floored at `floor`.
    Exact { floor: f64 },
    /// Ratio fitted from expert demonstrations against fresh rollouts of π̃.
    Sampled {
        estimator: EstimatorKind,
        config: EstimatorConfig,
        expert_demos: DemonstrationSet,
        rollout_steps: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Improvement {
    /// Solve the soft RL problem on the surrogate reward exactly.
    Full,
    /// A fixed number of soft policy-iteration sweeps from π̃.
    Partial { sweeps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NailConfig {
    pub iterations: usize,
    pub ratio: RatioMode,
    pub improvement: Improvement,
    pub weighting: BoundWeighting,
    /// Floor applied to π̃ inside the logarithm.
    pub policy_floor: f64,
    /// Floor on occupancies in the reported reverse KL.
    pub kl_floor: f64,
    pub initial_policy: Option<PolicyTable>,
    pub true_reward: Option<RewardTable>,
    pub dp_tol: f64,
    pub seed: u64,
}

impl Default for NailConfig {
    fn default() -> Self {
        NailConfig {
            iterations: 200,
            ratio: RatioMode::Exact { floor: 1e-12 },
            improvement: Improvement::Full,
            weighting: BoundWeighting::Trajectory,
            policy_floor: 1e-300,
            kl_floor: 1e-12,
            initial_policy: None,
            true_reward: None,
            dp_tol: 1e-10,
            seed: 0,
        }
    }
}

/// Intermediate quantities of one NAIL step.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub log_ratio: LogRatioTable,
    /// Soft-RL reward actually optimized (weighted lower-bound reward).
    pub reward: RewardTable,
    /// Surrogate value of the new policy around the reference policy.
    pub j_nail: f64,
}

/// Ratio estimate for `(q, p^π̃)` according to `mode`.
pub fn estimate_ratio(
    mdp: &TabularMdp,
    ref_policy: &PolicyTable,
    expert_occ: &OccupancyTable,
    mode: &RatioMode,
    seed: u64,
) -> Result<LogRatioTable> {
    match mode {
        RatioMode::Exact { floor } => exact_log_ratio(expert_occ, &occupancy(mdp, ref_policy)?, *floor),
        RatioMode::Sampled {
            estimator,
            config,
            expert_demos,
            rollout_steps,
        } => {
            let rollouts = sample_steps(mdp, ref_policy, *rollout_steps, seed)?;
            let cfg = EstimatorConfig { seed, ..config.clone() };
            fit(*estimator, expert_demos, &rollouts, &cfg)
        }
    }
}

/// Policy improvement on a fixed reward starting from `start`.
pub(crate) fn improve(
    mdp: &TabularMdp,
    reward: &RewardTable,
    start: &PolicyTable,
    improvement: Improvement,
    tol: f64,
) -> Result<PolicyTable> {
    match improvement {
        Improvement::Full => {
            let (q, _) = soft_value_iteration(mdp, reward, tol)?;
            policy_from_soft_q(&q)
        }
        Improvement::Partial { sweeps } => soft_policy_iteration(mdp, reward, start, sweeps, tol),
    }
}

/// One iteration of NAIL around `ref_policy`.
pub fn nail_step(
    mdp: &TabularMdp,
    ref_policy: &PolicyTable,
    expert_occ: &OccupancyTable,
    cfg: &NailConfig,
    iteration: usize,
) -> Result<(PolicyTable, StepDiagnostics)> {
    mdp.check_table("reference policy", ref_policy.dim())?;
    mdp.check_table("expert occupancy", expert_occ.dim())?;
    let seed = derive_seed(cfg.seed, iteration as u64);
    let log_ratio = estimate_ratio(mdp, ref_policy, expert_occ, &cfg.ratio, seed)?;
    let w = cfg.weighting.weight(mdp.gamma());
    let reward = lower_bound_reward_weighted(log_ratio.logits(), ref_policy, cfg.policy_floor, w)?;
    let policy = improve(mdp, &reward, ref_policy, cfg.improvement, cfg.dp_tol)?;
    let j = j_nail(mdp, &policy, log_ratio.logits(), ref_policy, cfg.weighting)?;
    Ok((
        policy,
        StepDiagnostics {
            log_ratio,
            reward,
            j_nail: j,
        },
    ))
}

pub(crate) fn record(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    expert_occ: &OccupancyTable,
    true_reward: Option<&RewardTable>,
    kl_floor: f64,
    iteration: usize,
) -> Result<NailRecord> {
    let occ = occupancy(mdp, policy)?;
    Ok(NailRecord {
        iteration,
        reverse_kl: reverse_kl(&occ, expert_occ, kl_floor)?,
        j_nail: None,
        expected_true_reward: true_reward.map(|r| expected_reward(&occ, r)).transpose()?,
        estimator_loss: None,
    })
}

pub(crate) fn initial_policy(mdp: &TabularMdp, given: Option<&PolicyTable>) -> Result<PolicyTable> {
    match given {
        Some(p) => {
            mdp.check_table("initial policy", p.dim())?;
            Ok(p.clone())
        }
        None => Ok(PolicyTable::uniform(mdp.num_states(), mdp.num_actions())),
    }
}

/// Runs `cfg.iterations` NAIL steps from the configured initial policy.
pub fn run_nail(mdp: &TabularMdp, expert_occ: &OccupancyTable, cfg: &NailConfig) -> Result<NailTrace> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be at least 1".into()));
    }
    let mut policy = initial_policy(mdp, cfg.initial_policy.as_ref())?;
    let mut trace = NailTrace::new();
    let mut first = record(mdp, &policy, expert_occ, cfg.true_reward.as_ref(), cfg.kl_floor, 0)?;
    if let RatioMode::Exact { floor } = cfg.ratio {
        let lam = exact_log_ratio(expert_occ, &occupancy(mdp, &policy)?, floor)?;
        first.j_nail = Some(j_nail(mdp, &policy, lam.logits(), &policy, cfg.weighting)?);
    }
    trace.push(first, policy.clone());
    for i in 1..=cfg.iterations {
        let (next, diag) = nail_step(mdp, &policy, expert_occ, cfg, i)?;
        let mut rec = record(mdp, &next, expert_occ, cfg.true_reward.as_ref(), cfg.kl_floor, i)?;
        rec.j_nail = Some(diag.j_nail);
        rec.estimator_loss = diag.log_ratio.fit().final_loss;
        log::debug!("nail iteration {i}: rkl {:.3e}", rec.reverse_kl);
        trace.push(rec, next.clone());
        policy = next;
    }
    Ok(trace)
}

/// Checked constructor for [`RatioMode::Sampled`].
pub fn sampled_mode(
    estimator: EstimatorKind,
    config: EstimatorConfig,
    expert_demos: DemonstrationSet,
    rollout_steps: usize,
) -> Result<RatioMode> {
    empirical_occupancy(&expert_demos)?;
    config.validate()?;
    Ok(RatioMode::Sampled {
        estimator,
        config,
        expert_demos,
        rollout_steps,
    })
}

/// Largest decrease of `KL(p^π'‖q)` over `directions` random mixtures
/// `π' = (1 − step) π + step ρ` with Dirichlet-random ρ. Non-positive at a
/// stationary point.
pub fn stationarity_probe(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    expert_occ: &OccupancyTable,
    directions: usize,
    step: f64,
    seed: u64,
) -> Result<f64> {
    let base = reverse_kl(&occupancy(mdp, policy)?, expert_occ, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..directions {
        let rho = crate::envs::random_policy(mdp.num_states(), mdp.num_actions(), &mut rng);
        let mixed = PolicyTable::new(policy.probs() * (1.0 - step) + &(rho.probs() * step))?;
        let kl = reverse_kl(&occupancy(mdp, &mixed)?, expert_occ, 0.0)?;
        worst = worst.max(base - kl);
    }
    Ok(worst)
}
