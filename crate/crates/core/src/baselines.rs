//! Comparison methods: behavioral cloning, ValueDice and the online
//! adversarial reverse-KL baseline.

use crate::demos::DemonstrationSet;
use crate::error::{Error, Result};
use crate::mdp::{
    policy_evaluation, value_iteration, DpOptions, OccupancyTable, PolicyTable, RewardTable, SoftQTable, TabularMdp,
};
use crate::nail::{estimate_ratio, initial_policy, record, NailTrace, RatioMode};
use crate::numeric::{derive_seed, softmax_rows};
use crate::onail::{blank_record, CriticData, Evaluator};
use crate::optim::Adam;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// `π(a|s) = (n(s,a) + k) / (n(s) + A k)`; states without visits get uniform rows.
pub fn behavioral_cloning(demos: &DemonstrationSet, smoothing: f64) -> Result<PolicyTable> {
    demos.require_nonempty()?;
    if !(smoothing >= 0.0) || !smoothing.is_finite() {
        return Err(Error::InvalidConfig(format!("smoothing must be >= 0, got {smoothing}")));
    }
    let mut probs = demos.pair_counts() + smoothing;
    let na = demos.num_actions() as f64;
    for mut row in probs.rows_mut() {
        let total = row.sum();
        if total > 0.0 {
            row.mapv_inplace(|x| x / total);
        } else {
            row.fill(1.0 / na);
        }
    }
    PolicyTable::new(probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueDiceConfig {
    pub iterations: usize,
    pub gamma: f64,
    pub actor_learning_rate: f64,
    pub actor_steps: usize,
    pub critic_learning_rate: f64,
    pub critic_steps: usize,
    pub bc_smoothing: f64,
    /// Known start distribution; when set, the `p0_states` argument is ignored.
    pub start_distribution: Option<Array1<f64>>,
}

impl Default for ValueDiceConfig {
    fn default() -> Self {
        ValueDiceConfig {
            iterations: 1000,
            gamma: 0.95,
            actor_learning_rate: 1e-5,
            actor_steps: 1,
            critic_learning_rate: 1e-3,
            critic_steps: 5,
            bc_smoothing: 0.5,
            start_distribution: None,
        }
    }
}

/// ValueDice on the tabular saddle objective: the critic ascends and the policy
/// logits descend the same loss, with the policy gradient taken through both the
/// exponential term and the start-state term.
pub fn run_valuedice(
    demos: &DemonstrationSet,
    p0_states: &[usize],
    cfg: &ValueDiceConfig,
    initial: Option<&PolicyTable>,
    evaluator: Option<&Evaluator<'_>>,
) -> Result<NailTrace> {
    let data = CriticData::with_start(demos, p0_states, cfg.start_distribution.as_ref(), cfg.gamma)?;
    let mut policy = match initial {
        Some(p) => p.clone(),
        None => behavioral_cloning(demos, cfg.bc_smoothing)?,
    };
    let rec = |pi: &PolicyTable, i: usize| match evaluator {
        Some(e) => e.record(pi, None, Default::default(), i),
        None => Ok(blank_record(i)),
    };
    let mut trace = NailTrace::new();
    trace.push(rec(&policy, 0)?, policy.clone());
    let mut theta = policy.log_probs(1e-300);
    let mut actor = Adam::new(cfg.actor_learning_rate, theta.dim());
    let mut critic = Adam::new(cfg.critic_learning_rate, theta.dim());
    let mut q = Array2::<f64>::zeros(theta.dim());
    for i in 1..=cfg.iterations {
        for step in 0..cfg.critic_steps {
            let (l, g) = data.loss_and_q_grad(&policy, &q);
            if !l.is_finite() {
                return Err(Error::Diverged { step });
            }
            critic.ascend(&mut q, &g);
        }
        for _ in 0..cfg.actor_steps {
            let gp = data.policy_prob_grad(&policy, &q);
            let pi = policy.probs();
            let mean = (pi * &gp).sum_axis(ndarray::Axis(1));
            let mut g = Array2::zeros(theta.dim());
            for ((s, a), x) in g.indexed_iter_mut() {
                *x = pi[[s, a]] * (gp[[s, a]] - mean[s]);
            }
            actor.descend(&mut theta, &g);
            policy = PolicyTable::new(softmax_rows(theta.view()))?;
        }
        let loss = data.loss(&policy, &q);
        if !loss.is_finite() {
            return Err(Error::Diverged { step: i });
        }
        let mut r = rec(&policy, i)?;
        r.estimator_loss = Some(loss);
        trace.push(r, policy.clone());
    }
    Ok(trace)
}

/// The saddle objective in ValueDice's own sign convention,
/// `log Ê_D[exp(ν(s,a) − γ E_{a'∼π} ν(s',a'))] − (1−γ) Ê_{s0} E_{a∼π} ν(s0,a)`,
/// evaluated transition by transition. The critic minimizes it and the policy
/// maximizes it.
pub fn valuedice_objective(
    demos: &DemonstrationSet,
    p0_states: &[usize],
    policy: &PolicyTable,
    nu: &SoftQTable,
    gamma: f64,
) -> Result<f64> {
    demos.require_nonempty()?;
    if p0_states.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let q = nu.q();
    let next_value = |s: usize| -> f64 { (0..policy.num_actions()).map(|a| policy.prob(s, a) * q[[s, a]]).sum() };
    let residuals: Vec<f64> = demos
        .transitions()
        .iter()
        .map(|t| q[[t.state, t.action]] - gamma * next_value(t.next_state))
        .collect();
    let max = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_exp = residuals.iter().map(|r| (r - max).exp()).sum::<f64>() / residuals.len() as f64;
    let start = p0_states.iter().map(|&s| next_value(s)).sum::<f64>() / p0_states.len() as f64;
    Ok(max + mean_exp.ln() - (1.0 - gamma) * start)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialUpdate {
    /// `π ← π exp(η Q^π_λ)`, a natural policy-gradient step on the adversarial reward.
    Mirror { step_size: f64 },
    /// Deterministic greedy policy of the adversarial reward.
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialConfig {
    pub iterations: usize,
    pub update: AdversarialUpdate,
    pub ratio: RatioMode,
    pub initial_policy: Option<PolicyTable>,
    pub true_reward: Option<RewardTable>,
    pub kl_floor: f64,
    pub dp_tol: f64,
    pub seed: u64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            iterations: 500,
            update: AdversarialUpdate::Mirror { step_size: 0.05 },
            ratio: RatioMode::Exact { floor: 1e-12 },
            initial_policy: None,
            true_reward: None,
            kl_floor: 1e-12,
            dp_tol: 1e-10,
            seed: 0,
        }
    }
}

/// Alternates ratio estimation and policy updates on `r_adv = log(q/p^π)` without
/// the `log π̃` term or an entropy bonus.
pub fn run_adversarial_rkl(
    mdp: &TabularMdp,
    expert_occ: &OccupancyTable,
    cfg: &AdversarialConfig,
) -> Result<NailTrace> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be at least 1".into()));
    }
    let mut policy = initial_policy(mdp, cfg.initial_policy.as_ref())?;
    let mut trace = NailTrace::new();
    trace.push(
        record(mdp, &policy, expert_occ, cfg.true_reward.as_ref(), cfg.kl_floor, 0)?,
        policy.clone(),
    );
    for i in 1..=cfg.iterations {
        let lam = estimate_ratio(mdp, &policy, expert_occ, &cfg.ratio, derive_seed(cfg.seed, i as u64))?;
        let loss = lam.fit().final_loss;
        let reward = RewardTable::new(lam.into_logits())?;
        policy = match cfg.update {
            AdversarialUpdate::Mirror { step_size } => {
                let q = policy_evaluation(mdp, &policy, &reward)?;
                let logits = policy.log_probs(1e-300) + &(q.q() * step_size);
                PolicyTable::new(softmax_rows(logits.view()))?
            }
            AdversarialUpdate::Greedy => {
                let opts = DpOptions::with_tol(cfg.dp_tol);
                value_iteration(mdp, &reward, opts)?.1
            }
        };
        let mut r = record(mdp, &policy, expert_occ, cfg.true_reward.as_ref(), cfg.kl_floor, i)?;
        r.estimator_loss = loss;
        trace.push(r, policy.clone());
    }
    Ok(trace)
}
