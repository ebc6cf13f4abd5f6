//! Offline NAIL: a Donsker–Varadhan critic learned from demonstrations only,
//! converted to the lower-bound Q-function, and a non-adversarial actor step.

use std::collections::BTreeMap;

use crate::baselines::behavioral_cloning;
use crate::demos::DemonstrationSet;
use crate::error::{shape_err, Error, Result};
use crate::mdp::{
    expected_reward, j_nail, occupancy, policy_evaluation, reverse_kl, BoundWeighting, OccupancyTable, PolicyTable,
    RewardTable, SoftQTable, TabularMdp,
};
use crate::nail::{NailRecord, NailTrace};
use crate::numeric::logsumexp;
use crate::optim::Adam;
use crate::ratio::{exact_log_ratio, EstimatorKind, FitMetadata, LogRatioTable};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// Continue from the previous iteration's critic.
    pub warm_start: bool,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            learning_rate: 1e-3,
            steps: 1000,
            seed: 0,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorMode {
    ClosedForm,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub mode: ActorMode,
    pub weighting: BoundWeighting,
    pub policy_floor: f64,
}

impl Default for ActorConfig {
    fn default() -> Self {
        ActorConfig {
            learning_rate: 1e-4,
            steps: 10_000,
            mode: ActorMode::ClosedForm,
            weighting: BoundWeighting::Trajectory,
            policy_floor: 1e-300,
        }
    }
}

/// Demonstrations aggregated into distinct `(s, a, s')` triples plus the
/// empirical start-state distribution; shared by the ONAIL and ValueDice critics.
#[derive(Debug, Clone)]
pub(crate) struct CriticData {
    triples: Vec<(usize, usize, usize, f64)>,
    start: Array1<f64>,
    gamma: f64,
    dim: (usize, usize),
}

impl CriticData {
    pub(crate) fn new(demos: &DemonstrationSet, p0_states: &[usize], gamma: f64) -> Result<Self> {
        demos.require_nonempty()?;
        if p0_states.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::GammaOutOfRange(gamma));
        }
        let ns = demos.num_states();
        let mut counts: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for t in demos.transitions() {
            *counts.entry((t.state, t.action, t.next_state)).or_default() += 1.0;
        }
        let n = demos.len() as f64;
        let triples = counts.into_iter().map(|((s, a, sp), c)| (s, a, sp, c / n)).collect();
        let mut start = Array1::zeros(ns);
        for &s in p0_states {
            if s >= ns {
                return Err(Error::IndexOutOfBounds(format!("start state {s}")));
            }
            start[s] += 1.0 / p0_states.len() as f64;
        }
        Ok(CriticData {
            triples,
            start,
            gamma,
            dim: (ns, demos.num_actions()),
        })
    }

    /// Like [`CriticData::new`] with a known start distribution in place of
    /// sampled start states.
    pub(crate) fn with_start_distribution(demos: &DemonstrationSet, start: &Array1<f64>, gamma: f64) -> Result<Self> {
        if start.len() != demos.num_states() {
            return Err(shape_err(demos.num_states(), start.len()));
        }
        if start.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (start.sum() - 1.0).abs() > 1e-10 {
            return Err(Error::BadInitialDistribution);
        }
        let first = start.iter().position(|&p| p > 0.0).unwrap_or(0);
        let mut data = CriticData::new(demos, &[first], gamma)?;
        data.start = start.clone();
        Ok(data)
    }

    /// Start states from `p0_states` unless `distribution` is given.
    pub(crate) fn with_start(
        demos: &DemonstrationSet,
        p0_states: &[usize],
        distribution: Option<&Array1<f64>>,
        gamma: f64,
    ) -> Result<Self> {
        match distribution {
            Some(d) => Self::with_start_distribution(demos, d, gamma),
            None => Self::new(demos, p0_states, gamma),
        }
    }

    fn check(&self, policy: &PolicyTable, q: &Array2<f64>) -> Result<()> {
        if policy.dim() != self.dim || q.dim() != self.dim {
            return Err(shape_err(
                format!("{:?}", self.dim),
                format!("policy {:?}, critic {:?}", policy.dim(), q.dim()),
            ));
        }
        Ok(())
    }

    /// `ν_i = Q(s_i, a_i) − γ E_{a'∼π}[Q(s'_i, a')]` for every triple.
    fn residuals(&self, policy: &PolicyTable, q: &Array2<f64>) -> Vec<f64> {
        let v: Array1<f64> = (policy.probs() * q).sum_axis(Axis(1));
        self.triples
            .iter()
            .map(|&(s, a, sp, _)| q[[s, a]] - self.gamma * v[sp])
            .collect()
    }

    fn log_mean_exp(&self, nu: &[f64]) -> f64 {
        let max = nu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let acc: f64 = self.triples.iter().zip(nu).map(|(t, &x)| t.3 * (x - max).exp()).sum();
        max + acc.ln()
    }

    fn start_value(&self, policy: &PolicyTable, q: &Array2<f64>) -> f64 {
        let v: Array1<f64> = (policy.probs() * q).sum_axis(Axis(1));
        (1.0 - self.gamma) * self.start.dot(&v)
    }

    pub(crate) fn loss(&self, policy: &PolicyTable, q: &Array2<f64>) -> f64 {
        let nu = self.residuals(policy, q);
        -self.log_mean_exp(&nu) + self.start_value(policy, q)
    }

    /// Loss and its gradient with respect to the critic table.
    pub(crate) fn loss_and_q_grad(&self, policy: &PolicyTable, q: &Array2<f64>) -> (f64, Array2<f64>) {
        let nu = self.residuals(policy, q);
        let lme = self.log_mean_exp(&nu);
        let pi = policy.probs();
        let mut g = Array2::zeros(self.dim);
        for (&(s, a, sp, c), &x) in self.triples.iter().zip(&nu) {
            let w = c * (x - lme).exp();
            g[[s, a]] -= w;
            for b in 0..self.dim.1 {
                g[[sp, b]] += self.gamma * w * pi[[sp, b]];
            }
        }
        for (s, &f0) in self.start.iter().enumerate() {
            if f0 > 0.0 {
                for b in 0..self.dim.1 {
                    g[[s, b]] += (1.0 - self.gamma) * f0 * pi[[s, b]];
                }
            }
        }
        (-lme + self.start_value(policy, q), g)
    }

    /// Gradient of the loss with respect to the policy probabilities; the
    /// policy enters through `E_{a'∼π}Q(s', a')` inside the exponential and
    /// through the start-state term. Entry `(s, a)` is `c(s) Q(s, a)`.
    pub(crate) fn policy_prob_grad(&self, policy: &PolicyTable, q: &Array2<f64>) -> Array2<f64> {
        let nu = self.residuals(policy, q);
        let lme = self.log_mean_exp(&nu);
        let mut c = self.start.mapv(|f| (1.0 - self.gamma) * f);
        for (&(_, _, sp, w), &x) in self.triples.iter().zip(&nu) {
            c[sp] += self.gamma * w * (x - lme).exp();
        }
        let mut g = q.clone();
        for (mut row, &cs) in g.rows_mut().into_iter().zip(c.iter()) {
            row.mapv_inplace(|x| x * cs);
        }
        g
    }

    /// Demo-state frequencies `z(s)`.
    pub(crate) fn state_frequencies(&self) -> Array1<f64> {
        let mut z = Array1::zeros(self.dim.0);
        for &(s, _, _, c) in &self.triples {
            z[s] += c;
        }
        z
    }
}

/// `−log Ê_D[exp(Q(s,a) − γ E_{a'∼π} Q(s',a'))] + (1−γ) Ê_{s0}[E_{a∼π} Q(s0,a)]`.
pub fn critic_dv_loss(
    demos: &DemonstrationSet,
    p0_states: &[usize],
    policy: &PolicyTable,
    q_table: &SoftQTable,
    gamma: f64,
) -> Result<f64> {
    let data = CriticData::new(demos, p0_states, gamma)?;
    data.check(policy, q_table.q())?;
    let loss = data.loss(policy, q_table.q());
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(loss)
}

/// Critic fit result. `q_adv` is the sign-flipped critic, an estimate of the
/// ordinary Q-function of π under `log(q/p^π)` up to a constant.
#[derive(Debug, Clone)]
pub struct CriticFit {
    pub q_adv: SoftQTable,
    pub loss: f64,
}

/// Maximizes the critic loss over a tabular `Q` with Adam for `cfg.steps` steps,
/// starting from `−init_q_adv` (zeros if `None`).
pub fn critic_update(
    demos: &DemonstrationSet,
    p0_states: &[usize],
    policy: &PolicyTable,
    gamma: f64,
    cfg: &CriticConfig,
    init_q_adv: Option<&SoftQTable>,
) -> Result<CriticFit> {
    let data = CriticData::new(demos, p0_states, gamma)?;
    critic_fit(&data, policy, cfg, init_q_adv)
}

pub(crate) fn critic_fit(
    data: &CriticData,
    policy: &PolicyTable,
    cfg: &CriticConfig,
    init_q_adv: Option<&SoftQTable>,
) -> Result<CriticFit> {
    let mut q = match init_q_adv {
        Some(init) => -init.q(),
        None => Array2::zeros(data.dim),
    };
    data.check(policy, &q)?;
    let mut opt = Adam::new(cfg.learning_rate, data.dim);
    let mut loss = data.loss(policy, &q);
    for step in 0..cfg.steps {
        let (l, g) = data.loss_and_q_grad(policy, &q);
        if !l.is_finite() {
            return Err(Error::Diverged { step });
        }
        opt.ascend(&mut q, &g);
        loss = l;
    }
    if cfg.steps > 0 {
        loss = data.loss(policy, &q);
    }
    if !loss.is_finite() || q.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged { step: cfg.steps });
    }
    Ok(CriticFit {
        q_adv: SoftQTable::new(-q),
        loss,
    })
}

/// `Q_lb = Q_adv + log max(π, floor)`: the soft Q-function of π under the
/// lower-bound reward, obtained from the ordinary Q-function under `log(q/p^π)`.
pub fn q_lb_from_q_adv(q_adv: &SoftQTable, policy: &PolicyTable, floor: f64) -> Result<SoftQTable> {
    if q_adv.dim() != policy.dim() {
        return Err(shape_err(format!("{:?}", policy.dim()), format!("{:?}", q_adv.dim())));
    }
    let floored = policy.probs().iter().any(|&p| p < floor);
    if floored {
        log::info!("policy entries below {floor:e} were floored in log π");
    }
    Ok(SoftQTable::new(q_adv.q() + &policy.log_probs(floor)))
}

/// Per-state actor loss `E_{a∼π_new}[log π_new − w Q_adv − log π̃]`.
pub fn actor_loss(
    new_policy: &PolicyTable,
    ref_policy: &PolicyTable,
    q_adv: &SoftQTable,
    weight: f64,
    floor: f64,
) -> Result<Array1<f64>> {
    if new_policy.dim() != ref_policy.dim() || q_adv.dim() != ref_policy.dim() {
        return Err(shape_err(
            format!("{:?}", ref_policy.dim()),
            format!("{:?}", q_adv.dim()),
        ));
    }
    let log_ref = ref_policy.log_probs(floor);
    let mut out = Array1::zeros(ref_policy.num_states());
    for (s, o) in out.iter_mut().enumerate() {
        for a in 0..ref_policy.num_actions() {
            let p = new_policy.prob(s, a);
            if p > 0.0 {
                *o += p * (p.ln() - weight * q_adv.q()[[s, a]] - log_ref[[s, a]]);
            }
        }
    }
    Ok(out)
}

/// Actor step. Closed form: `π_new(·|s) ∝ π̃(·|s) exp(w Q_adv(s,·))` where `z(s) > 0`
/// and `π̃` elsewhere. Gradient mode: Adam steps on the `z`-weighted loss over
/// per-state logits initialized at `log π̃`.
pub fn actor_update(
    policy: &PolicyTable,
    q_adv: &SoftQTable,
    z_states: &Array1<f64>,
    gamma: f64,
    cfg: &ActorConfig,
) -> Result<PolicyTable> {
    if q_adv.dim() != policy.dim() || z_states.len() != policy.num_states() {
        return Err(shape_err(
            format!("{:?}", policy.dim()),
            format!("critic {:?}, z of length {}", q_adv.dim(), z_states.len()),
        ));
    }
    if z_states.iter().any(|&z| !(z >= 0.0)) || z_states.sum() <= 0.0 {
        return Err(Error::InvalidConfig("z must be nonnegative with positive mass".into()));
    }
    let w = cfg.weighting.weight(gamma);
    let log_ref = policy.log_probs(cfg.policy_floor);
    let mut probs = policy.probs().clone();
    match cfg.mode {
        ActorMode::ClosedForm => {
            for s in 0..policy.num_states() {
                if z_states[s] == 0.0 {
                    continue;
                }
                let logits = &log_ref.row(s) + &(&q_adv.q().row(s) * w);
                let lse = logsumexp(logits.view());
                probs.row_mut(s).assign(&logits.mapv(|x| (x - lse).exp()));
            }
        }
        ActorMode::Gradient => {
            let mut theta = log_ref.clone();
            let mut opt = Adam::new(cfg.learning_rate, theta.dim());
            let target = &log_ref + &(q_adv.q() * w);
            for _ in 0..cfg.steps {
                let mut g = Array2::zeros(theta.dim());
                for s in 0..theta.nrows() {
                    if z_states[s] == 0.0 {
                        continue;
                    }
                    let lse = logsumexp(theta.row(s));
                    let pi = theta.row(s).mapv(|x| (x - lse).exp());
                    let u = &target.row(s) - &theta.row(s).mapv(|x| x - lse);
                    let mean = pi.dot(&u);
                    for a in 0..theta.ncols() {
                        g[[s, a]] = z_states[s] * pi[a] * (u[a] - mean);
                    }
                }
                opt.ascend(&mut theta, &g);
            }
            for s in 0..theta.nrows() {
                if z_states[s] == 0.0 {
                    continue;
                }
                let lse = logsumexp(theta.row(s));
                probs.row_mut(s).assign(&theta.row(s).mapv(|x| (x - lse).exp()));
            }
        }
    }
    PolicyTable::new(renormalize(probs))
}

fn renormalize(mut probs: Array2<f64>) -> Array2<f64> {
    for mut row in probs.rows_mut() {
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    probs
}

/// `λ = Q_adv − γ E_{s'|s,a} E_{a'∼π}[Q_adv(s', a')]`, shifted so that
/// `E_{p^π}[exp λ] = 1`. Diagnostic only: it needs the true dynamics.
pub fn implicit_log_ratio(q_adv: &SoftQTable, policy: &PolicyTable, mdp: &TabularMdp) -> Result<LogRatioTable> {
    mdp.check_table("critic", q_adv.dim())?;
    mdp.check_table("policy", policy.dim())?;
    let v: Array1<f64> = (policy.probs() * q_adv.q()).sum_axis(Axis(1));
    let lam = q_adv.q() - &(mdp.expect_next(&v) * mdp.gamma());
    let p = occupancy(mdp, policy)?;
    let mut max = f64::NEG_INFINITY;
    for (&x, &d) in lam.iter().zip(p.probs().iter()) {
        if d > 0.0 {
            max = max.max(x);
        }
    }
    let acc: f64 = lam
        .iter()
        .zip(p.probs().iter())
        .filter(|(_, &d)| d > 0.0)
        .map(|(&x, &d)| d * (x - max).exp())
        .sum();
    let offset = max + acc.ln();
    LogRatioTable::new(lam.mapv(|x| x - offset), EstimatorKind::Dv, FitMetadata::default())
}

/// Shifts `table` so that its mean over the masked entries equals the mean of
/// `target` over the same entries.
pub fn align_mean(table: &Array2<f64>, target: &Array2<f64>, mask: &Array2<bool>) -> Array2<f64> {
    let mut diff = 0.0;
    let mut n = 0.0;
    for ((&x, &t), &m) in table.iter().zip(target.iter()).zip(mask.iter()) {
        if m {
            diff += t - x;
            n += 1.0;
        }
    }
    let shift = if n > 0.0 { diff / n } else { 0.0 };
    table.mapv(|x| x + shift)
}

/// Access to the true environment for reporting only.
#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    pub mdp: &'a TabularMdp,
    pub expert_occ: &'a OccupancyTable,
    pub true_reward: Option<&'a RewardTable>,
    pub kl_floor: f64,
}

impl Evaluator<'_> {
    pub(crate) fn record(
        &self,
        policy: &PolicyTable,
        reference: Option<&PolicyTable>,
        weighting: BoundWeighting,
        iteration: usize,
    ) -> Result<NailRecord> {
        let occ = occupancy(self.mdp, policy)?;
        let j = match reference {
            Some(r) => {
                let lam = exact_log_ratio(self.expert_occ, &occupancy(self.mdp, r)?, 1e-12)?;
                Some(j_nail(self.mdp, policy, lam.logits(), r, weighting)?)
            }
            None => None,
        };
        Ok(NailRecord {
            iteration,
            reverse_kl: reverse_kl(&occ, self.expert_occ, self.kl_floor)?,
            j_nail: j,
            expected_true_reward: self.true_reward.map(|r| expected_reward(&occ, r)).transpose()?,
            estimator_loss: None,
        })
    }
}

pub(crate) fn blank_record(iteration: usize) -> NailRecord {
    NailRecord {
        iteration,
        reverse_kl: f64::NAN,
        j_nail: None,
        expected_true_reward: None,
        estimator_loss: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnailConfig {
    pub iterations: usize,
    pub gamma: f64,
    pub critic: CriticConfig,
    pub actor: ActorConfig,
    pub bc_smoothing: f64,
    /// Overrides the behavioral-cloning initialization.
    pub initial_policy: Option<PolicyTable>,
    /// Overrides the demo-state frequencies used as actor state weights.
    pub z_states: Option<Array1<f64>>,
    /// Known start distribution; when set, the `p0_states` argument is ignored.
    pub start_distribution: Option<Array1<f64>>,
}

impl Default for OnailConfig {
    fn default() -> Self {
        OnailConfig {
            iterations: 20,
            gamma: 0.95,
            critic: CriticConfig::default(),
            actor: ActorConfig::default(),
            bc_smoothing: 0.5,
            initial_policy: None,
            z_states: None,
            start_distribution: None,
        }
    }
}

/// Offline NAIL from demonstrations and start states only. The optional
/// evaluator fills in reverse KL, exact surrogate values and true reward; it is
/// never consulted by the learning updates.
pub fn run_onail(
    demos: &DemonstrationSet,
    p0_states: &[usize],
    cfg: &OnailConfig,
    evaluator: Option<&Evaluator<'_>>,
) -> Result<NailTrace> {
    let data = CriticData::with_start(demos, p0_states, cfg.start_distribution.as_ref(), cfg.gamma)?;
    let mut policy = match &cfg.initial_policy {
        Some(p) => p.clone(),
        None => behavioral_cloning(demos, cfg.bc_smoothing)?,
    };
    let z = match &cfg.z_states {
        Some(z) => z.clone(),
        None => data.state_frequencies(),
    };
    let mut trace = NailTrace::new();
    let rec = |pi: &PolicyTable, prev: Option<&PolicyTable>, i: usize| match evaluator {
        Some(e) => e.record(pi, prev, cfg.actor.weighting, i),
        None => Ok(blank_record(i)),
    };
    trace.push(rec(&policy, None, 0)?, policy.clone());
    let mut q_adv: Option<SoftQTable> = None;
    for i in 1..=cfg.iterations {
        let init = if cfg.critic.warm_start { q_adv.as_ref() } else { None };
        let fit = critic_fit(&data, &policy, &cfg.critic, init)?;
        let next = actor_update(&policy, &fit.q_adv, &z, cfg.gamma, &cfg.actor)?;
        let mut r = rec(&next, Some(&policy), i)?;
        r.estimator_loss = Some(fit.loss);
        trace.push(r, next.clone());
        policy = next;
        q_adv = Some(fit.q_adv);
    }
    Ok(trace)
}

/// ONAIL with the learned critic replaced by the exact `Q_adv` of π̃ and
/// `z` the exact expert state marginal.
pub fn run_onail_exact_critic(
    mdp: &TabularMdp,
    expert_occ: &OccupancyTable,
    iterations: usize,
    actor: &ActorConfig,
    initial_policy: &PolicyTable,
    true_reward: Option<&RewardTable>,
) -> Result<NailTrace> {
    let eval = Evaluator {
        mdp,
        expert_occ,
        true_reward,
        kl_floor: 1e-12,
    };
    let z = expert_occ.state_marginal();
    let mut policy = initial_policy.clone();
    let mut trace = NailTrace::new();
    trace.push(eval.record(&policy, None, actor.weighting, 0)?, policy.clone());
    for i in 1..=iterations {
        let q_adv = exact_q_adv(mdp, expert_occ, &policy)?;
        let next = actor_update(&policy, &q_adv, &z, mdp.gamma(), actor)?;
        trace.push(eval.record(&next, Some(&policy), actor.weighting, i)?, next.clone());
        policy = next;
    }
    Ok(trace)
}

/// Ordinary Q-function of `policy` under `log(q/p^π)` with exact occupancies.
pub fn exact_q_adv(mdp: &TabularMdp, expert_occ: &OccupancyTable, policy: &PolicyTable) -> Result<SoftQTable> {
    let lam = exact_log_ratio(expert_occ, &occupancy(mdp, policy)?, 1e-12)?;
    policy_evaluation(mdp, policy, &RewardTable::new(lam.into_logits())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::Transition;
    use crate::envs;
    use ndarray::array;

    #[test]
    fn start_distribution_matching_the_episodes_changes_nothing() {
        let mdp = envs::gridworld5().with_initial(Array1::from_elem(25, 0.04)).unwrap();
        let demos = crate::demos::sample_episodes(&mdp, &PolicyTable::uniform(25, 4), 40, 3).unwrap();
        let p0 = crate::demos::episode_start_states(&demos);
        let mut freq = Array1::zeros(25);
        for &s in &p0 {
            freq[s] += 1.0 / p0.len() as f64;
        }
        let mut cfg = OnailConfig {
            iterations: 2,
            critic: CriticConfig {
                steps: 20,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = run_onail(&demos, &p0, &cfg, None).unwrap();
        cfg.start_distribution = Some(freq);
        let b = run_onail(&demos, &[], &cfg, None).unwrap();
        assert_eq!(a.policies, b.policies);
        cfg.start_distribution = Some(Array1::from_elem(25, 0.5));
        assert!(matches!(
            run_onail(&demos, &[], &cfg, None),
            Err(Error::BadInitialDistribution)
        ));
    }

    fn single_state_demo() -> DemonstrationSet {
        let t = Transition {
            state: 0,
            action: 0,
            next_state: 0,
            episode: 0,
            step: 0,
            is_last: true,
        };
        DemonstrationSet::new(vec![t; 3], 1, 1, 0, "manual").unwrap()
    }

    #[test]
    fn trivial_loss_is_zero() {
        let l = critic_dv_loss(
            &single_state_demo(),
            &[0],
            &PolicyTable::uniform(1, 1),
            &SoftQTable::zeros(1, 1),
            0.9,
        )
        .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn empty_start_states_rejected() {
        let r = critic_dv_loss(
            &single_state_demo(),
            &[],
            &PolicyTable::uniform(1, 1),
            &SoftQTable::zeros(1, 1),
            0.9,
        );
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }

    #[test]
    fn critic_gradient_matches_finite_difference() {
        let mdp = envs::chain2();
        let pi = envs::chain2_fixture_policy();
        let demos = crate::demos::sample_episodes(&mdp, &pi, 30, 4).unwrap();
        let data = CriticData::new(&demos, &[0, 0, 1], 0.9).unwrap();
        let q = array![[0.3, -0.5], [1.2, 0.1]];
        let (_, g) = data.loss_and_q_grad(&pi, &q);
        let gp = data.policy_prob_grad(&pi, &q);
        let h = 1e-6;
        for idx in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut up = q.clone();
            up[idx] += h;
            let mut dn = q.clone();
            dn[idx] -= h;
            let fd = (data.loss(&pi, &up) - data.loss(&pi, &dn)) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-8);
            // policy probabilities perturbed without renormalization
            let mut pu = pi.probs().clone();
            pu[idx] += h;
            let mut pd = pi.probs().clone();
            pd[idx] -= h;
            let raw = |p: Array2<f64>| PolicyTable::from_unnormalized_unchecked(p);
            let fd = (data.loss(&raw(pu), &q) - data.loss(&raw(pd), &q)) / (2.0 * h);
            assert!((fd - gp[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_critic_steps_return_init() {
        let init = SoftQTable::new(array![[0.5]]);
        let fit = critic_update(
            &single_state_demo(),
            &[0],
            &PolicyTable::uniform(1, 1),
            0.9,
            &CriticConfig {
                steps: 0,
                ..Default::default()
            },
            Some(&init),
        )
        .unwrap();
        assert_eq!(fit.q_adv, init);
    }

    #[test]
    fn actor_examples() {
        let pi = PolicyTable::uniform(1, 2);
        let cfg = ActorConfig {
            weighting: BoundWeighting::PerStep,
            ..Default::default()
        };
        let z = array![1.0];
        let q = SoftQTable::new(array![[2f64.ln(), 0.0]]);
        let new = actor_update(&pi, &q, &z, 0.9, &cfg).unwrap();
        assert!((new.prob(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        let flat = SoftQTable::new(array![[4.0, 4.0]]);
        assert!(actor_update(&pi, &flat, &z, 0.9, &cfg).unwrap().sup_dist(&pi) < 1e-15);
    }

    #[test]
    fn q_lb_uniform_shift() {
        let q = SoftQTable::new(array![[1.0, 2.0, 3.0]]);
        let lb = q_lb_from_q_adv(&q, &PolicyTable::uniform(1, 3), 1e-300).unwrap();
        for a in 0..3 {
            assert!((lb.q()[[0, a]] - q.q()[[0, a]] + 3f64.ln()).abs() < 1e-15);
        }
        let det = PolicyTable::deterministic(&[1], 3).unwrap();
        assert!(q_lb_from_q_adv(&q, &det, 1e-300)
            .unwrap()
            .q()
            .iter()
            .all(|x| x.is_finite()));
    }

    #[test]
    fn zero_critic_gives_zero_implicit_ratio() {
        let mdp = envs::chain2();
        let l = implicit_log_ratio(&SoftQTable::zeros(2, 2), &envs::chain2_fixture_policy(), &mdp).unwrap();
        assert!(l.logits().iter().all(|x| x.abs() < 1e-15));
    }
}
