//! Deterministic observation maps `o = φ(s, a)`, occupancy pushforward,
//! reward pullback and NAIL in observation space.

use crate::demos::sample_episodes;
use crate::error::{shape_err, Error, Result};
use crate::mdp::expected_reward;
use crate::mdp::{j_nail, occupancy, reverse_kl_slices, OccupancyTable, PolicyTable, RewardTable, TabularMdp};
use crate::nail::{improve, initial_policy, lower_bound_reward_weighted, NailConfig, NailRecord, NailTrace, RatioMode};
use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawMap {
    num_obs: usize,
    map: Vec<Vec<usize>>,
}

/// Surjective table `φ: S × A → [0, num_obs)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMap", into = "RawMap")]
pub struct ObservationMap {
    map: Array2<usize>,
    num_obs: usize,
}

impl TryFrom<RawMap> for ObservationMap {
    type Error = Error;

    fn try_from(raw: RawMap) -> Result<Self> {
        let rows = raw.map.len();
        let cols = raw.map.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig("observation map must be nonempty".into()));
        }
        if let Some(bad) = raw.map.iter().find(|r| r.len() != cols) {
            return Err(shape_err(cols, bad.len()));
        }
        let flat: Vec<usize> = raw.map.into_iter().flatten().collect();
        let map = Array2::from_shape_vec((rows, cols), flat).expect("rectangular rows");
        ObservationMap::new(map, raw.num_obs)
    }
}

impl From<ObservationMap> for RawMap {
    fn from(m: ObservationMap) -> Self {
        RawMap {
            num_obs: m.num_obs,
            map: m.map.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl ObservationMap {
    pub fn new(map: Array2<usize>, num_obs: usize) -> Result<Self> {
        let mut hit = vec![false; num_obs];
        for ((s, a), &o) in map.indexed_iter() {
            if o >= num_obs {
                return Err(Error::IndexOutOfBounds(format!(
                    "observation {o} at ({s}, {a}) with num_obs {num_obs}"
                )));
            }
            hit[o] = true;
        }
        if let Some(o) = hit.iter().position(|h| !h) {
            return Err(Error::InvalidConfig(format!("observation {o} is never produced")));
        }
        Ok(ObservationMap { map, num_obs })
    }

    /// One observation per state-action pair, `o = s·A + a`.
    pub fn identity(num_states: usize, num_actions: usize) -> Self {
        let map = Array2::from_shape_fn((num_states, num_actions), |(s, a)| s * num_actions + a);
        ObservationMap {
            map,
            num_obs: num_states * num_actions,
        }
    }

    /// `φ(s, a) = s`.
    pub fn state_only(num_states: usize, num_actions: usize) -> Self {
        ObservationMap {
            map: Array2::from_shape_fn((num_states, num_actions), |(s, _)| s),
            num_obs: num_states,
        }
    }

    pub fn all_to_one(num_states: usize, num_actions: usize) -> Self {
        ObservationMap {
            map: Array2::zeros((num_states, num_actions)),
            num_obs: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn num_obs(&self) -> usize {
        self.num_obs
    }

    pub fn dim(&self) -> (usize, usize) {
        self.map.dim()
    }

    pub fn obs(&self, state: usize, action: usize) -> usize {
        self.map[[state, action]]
    }

    pub fn table(&self) -> &Array2<usize> {
        &self.map
    }

    fn check(&self, dim: (usize, usize)) -> Result<()> {
        if self.dim() != dim {
            return Err(shape_err(format!("{:?}", self.dim()), format!("{dim:?}")));
        }
        Ok(())
    }
}

/// `p(o) = Σ_{φ(s,a)=o} occ(s, a)`.
pub fn push_occupancy(occ: &OccupancyTable, map: &ObservationMap) -> Result<Array1<f64>> {
    map.check(occ.dim())?;
    let mut out = Array1::zeros(map.num_obs());
    Zip::from(occ.probs()).and(map.table()).for_each(|&p, &o| out[o] += p);
    Ok(out)
}

/// `r(s, a) = f(φ(s, a))`.
pub fn obs_reward_pullback(obs_values: &Array1<f64>, map: &ObservationMap) -> Result<RewardTable> {
    if obs_values.len() != map.num_obs() {
        return Err(shape_err(map.num_obs(), obs_values.len()));
    }
    RewardTable::new(map.table().mapv(|o| obs_values[o]))
}

/// Monte-Carlo check that per-step observation rewards averaged over sampled
/// episodes reproduce the stationary expectation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Report {
    pub num_episodes: usize,
    /// `Σ_τ Σ_t r_t / Σ_τ T`, consistent for the stationary expectation.
    pub pooled_mean: f64,
    /// Delta-method standard error of `pooled_mean`.
    pub pooled_se: f64,
    /// Mean over episodes of `(1/T) Σ_t r_t`.
    pub episode_mean: f64,
    pub episode_se: f64,
    /// Exact expectation of `(1/T) Σ_t r_t` under geometric `T`.
    pub episode_oracle: f64,
    /// `Σ p^π(s, a) r(φ(s, a))`.
    pub stationary: f64,
    /// `(pooled_mean - stationary) / pooled_se`.
    pub z: f64,
    /// `(episode_mean - episode_oracle) / episode_se`.
    pub z_episode: f64,
}

fn standardized(gap: f64, se: f64) -> f64 {
    // constant rewards leave only rounding in both the gap and the error
    if gap.abs() <= 1e-12 {
        0.0
    } else if se > 0.0 {
        gap / se
    } else {
        gap.signum() * f64::INFINITY
    }
}

/// `E[(1/T) Σ_{t<T} r(s_t, a_t)]` with `P(T = n) = (1-γ) γ^(n-1)`, summed as
/// `Σ_t w_t E[r_t]` where `w_t = Σ_{n>t} P(T=n)/n`.
fn episode_average_oracle(mdp: &TabularMdp, policy: &PolicyTable, reward: &RewardTable) -> f64 {
    let g = mdp.gamma();
    let horizon = if g == 0.0 {
        1
    } else {
        ((1e-18f64).ln() / g.ln()).ceil().clamp(1.0, 1e6) as usize
    };
    // w_t for t = 0..horizon via the backward recursion w_t = w_{t+1} + P(T=t+1)/(t+1)
    let mut w = vec![0.0; horizon + 1];
    for t in (0..horizon).rev() {
        let n = (t + 1) as f64;
        w[t] = w[t + 1] + (1.0 - g) * g.powi(t as i32) / n;
    }
    let pi = policy.probs();
    let p = mdp.transition();
    let (ns, na) = policy.dim();
    let mut d = Array2::from_shape_fn((ns, na), |(s, a)| mdp.initial()[s] * pi[[s, a]]);
    let mut total = 0.0;
    for &wt in w.iter().take(horizon) {
        total += wt * (&d * reward.r()).sum();
        let mut next_state = Array1::<f64>::zeros(ns);
        for ((s, a), &m) in d.indexed_iter() {
            if m != 0.0 {
                for sp in 0..ns {
                    next_state[sp] += m * p[[s, a, sp]];
                }
            }
        }
        d = Array2::from_shape_fn((ns, na), |(s, a)| next_state[s] * pi[[s, a]]);
    }
    total
}

pub fn prop1_mc_check(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    map: &ObservationMap,
    obs_reward: &Array1<f64>,
    num_episodes: usize,
    seed: u64,
) -> Result<Prop1Report> {
    if num_episodes < 1000 {
        return Err(Error::InvalidConfig(format!(
            "at least 1000 episodes required, got {num_episodes}"
        )));
    }
    mdp.check_table("policy", policy.dim())?;
    let reward = obs_reward_pullback(obs_reward, map)?;
    if reward.r().iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let demos = sample_episodes(mdp, policy, num_episodes, seed)?;
    let mut sums = vec![0.0; num_episodes];
    let mut lens = vec![0.0; num_episodes];
    for t in demos.transitions() {
        sums[t.episode] += reward.r()[[t.state, t.action]];
        lens[t.episode] += 1.0;
    }
    let n = num_episodes as f64;
    let total_len: f64 = lens.iter().sum();
    let pooled = sums.iter().sum::<f64>() / total_len;
    let mean_len = total_len / n;
    let resid: f64 = sums.iter().zip(&lens).map(|(y, t)| (y - pooled * t).powi(2)).sum();
    let pooled_se = (resid / (n * (n - 1.0))).sqrt() / mean_len;

    let per_ep: Vec<f64> = sums.iter().zip(&lens).map(|(y, t)| y / t).collect();
    let episode_mean = per_ep.iter().sum::<f64>() / n;
    let var = per_ep.iter().map(|x| (x - episode_mean).powi(2)).sum::<f64>() / (n - 1.0);
    let episode_se = (var / n).sqrt();

    let stationary = expected_reward(&occupancy(mdp, policy)?, &reward)?;
    let episode_oracle = episode_average_oracle(mdp, policy, &reward);
    Ok(Prop1Report {
        num_episodes,
        pooled_mean: pooled,
        pooled_se,
        episode_mean,
        episode_se,
        episode_oracle,
        stationary,
        z: standardized(pooled - stationary, pooled_se),
        z_episode: standardized(episode_mean - episode_oracle, episode_se),
    })
}

fn check_distribution(dist: &Array1<f64>) -> Result<()> {
    if dist.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (dist.sum() - 1.0).abs() > 1e-10 {
        return Err(Error::BadOccupancy);
    }
    Ok(())
}

/// NAIL where the ratio lives on observations; records the observation-space
/// reverse KL. Only the exact ratio mode is supported.
pub fn run_nail_obs(
    mdp: &TabularMdp,
    expert_obs: &Array1<f64>,
    map: &ObservationMap,
    cfg: &NailConfig,
) -> Result<NailTrace> {
    let RatioMode::Exact { floor } = cfg.ratio else {
        return Err(Error::InvalidConfig(
            "observation-space NAIL supports the exact ratio only".into(),
        ));
    };
    if !(floor > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ratio floor must be positive, got {floor}"
        )));
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be at least 1".into()));
    }
    map.check((mdp.num_states(), mdp.num_actions()))?;
    if expert_obs.len() != map.num_obs() {
        return Err(shape_err(map.num_obs(), expert_obs.len()));
    }
    check_distribution(expert_obs)?;
    let bound = (1.0 / floor).ln();
    let w = cfg.weighting.weight(mdp.gamma());
    // pulled-back log ratio of the expert and p^π̃ observation distributions
    let pulled_ratio = |policy: &PolicyTable| -> Result<(Array1<f64>, Array2<f64>)> {
        let p_obs = push_occupancy(&occupancy(mdp, policy)?, map)?;
        let lam_obs = Array1::from_shape_fn(map.num_obs(), |o| {
            (expert_obs[o].max(floor).ln() - p_obs[o].max(floor).ln()).clamp(-bound, bound)
        });
        Ok((p_obs, map.table().mapv(|o| lam_obs[o])))
    };
    let rec = |policy: &PolicyTable, p_obs: &Array1<f64>, i: usize| -> Result<NailRecord> {
        let rkl = reverse_kl_slices(
            p_obs.as_slice().expect("contiguous"),
            expert_obs.as_slice().expect("contiguous"),
            cfg.kl_floor,
        )?;
        let true_reward = match &cfg.true_reward {
            Some(r) => Some(expected_reward(&occupancy(mdp, policy)?, r)?),
            None => None,
        };
        Ok(NailRecord {
            iteration: i,
            reverse_kl: rkl,
            j_nail: None,
            expected_true_reward: true_reward,
            estimator_loss: None,
        })
    };

    let mut policy = initial_policy(mdp, cfg.initial_policy.as_ref())?;
    let mut trace = NailTrace::new();
    let (mut p_obs, mut lam) = pulled_ratio(&policy)?;
    let mut first = rec(&policy, &p_obs, 0)?;
    first.j_nail = Some(j_nail(mdp, &policy, &lam, &policy, cfg.weighting)?);
    trace.push(first, policy.clone());
    for i in 1..=cfg.iterations {
        let reward = lower_bound_reward_weighted(&lam, &policy, cfg.policy_floor, w)?;
        let next = improve(mdp, &reward, &policy, cfg.improvement, cfg.dp_tol)?;
        let j = j_nail(mdp, &next, &lam, &policy, cfg.weighting)?;
        (p_obs, lam) = pulled_ratio(&next)?;
        let mut r = rec(&next, &p_obs, i)?;
        r.j_nail = Some(j);
        trace.push(r, next.clone());
        policy = next;
    }
    Ok(trace)
}
