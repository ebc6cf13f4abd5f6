use super::{occupancy, OccupancyTable, PolicyTable, RewardTable, TabularMdp};
use crate::error::{shape_err, Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// How the policy log-ratio term of the NAIL surrogate is weighted against the
/// density-ratio term.
///
/// `PerStep` is the literal step-based surrogate
/// `Σ p^π (λ + log π̃ − log π)`. With λ the exact ratio for π̃ it equals
/// `−KL(p^π‖q) + KL(d^π‖d^π̃)` where `d` are state marginals, so it touches
/// `−KL(p^π‖q)` at π̃ from above.
///
/// `Trajectory` divides the policy term by `1 − γ`, the expected episode length,
/// which turns the surrogate into a proper minorizer of `−KL(p^π‖q)`. The NAIL
/// loop maximizes `Σ p^π ((1−γ) λ + log π̃ − log π)`, i.e. soft RL on the scaled
/// reward `(1−γ) λ + log π̃`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundWeighting {
    PerStep,
    #[default]
    Trajectory,
}

impl BoundWeighting {
    /// Multiplier applied to λ in the soft-RL reward.
    pub fn weight(self, gamma: f64) -> f64 {
        match self {
            BoundWeighting::PerStep => 1.0,
            BoundWeighting::Trajectory => 1.0 - gamma,
        }
    }
}

/// `Σ p log(p / max(q, floor))` over flat slices, `0 log 0 = 0`.
/// The `state` field of a support error holds the flat index.
pub fn reverse_kl_slices(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(shape_err(p.len(), q.len()));
    }
    if !(floor >= 0.0) {
        return Err(Error::InvalidConfig(format!("floor must be nonnegative, got {floor}")));
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        let denom = qi.max(floor);
        if denom <= 0.0 {
            return Err(Error::SupportViolation { state: i, action: 0 });
        }
        total += pi * (pi / denom).ln();
    }
    Ok(total)
}

/// Reverse KL divergence `KL(p‖q)` between occupancy tables.
pub fn reverse_kl(p: &OccupancyTable, q: &OccupancyTable, floor: f64) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(shape_err(format!("{:?}", p.dim()), format!("{:?}", q.dim())));
    }
    let ncols = p.dim().1;
    let pf: Vec<f64> = p.probs().iter().copied().collect();
    let qf: Vec<f64> = q.probs().iter().copied().collect();
    reverse_kl_slices(&pf, &qf, floor).map_err(|e| match e {
        Error::SupportViolation { state, .. } => Error::SupportViolation {
            state: state / ncols,
            action: state % ncols,
        },
        other => other,
    })
}

/// `Σ occ(s, a) r(s, a)`.
pub fn expected_reward(occ: &OccupancyTable, reward: &RewardTable) -> Result<f64> {
    if occ.dim() != reward.dim() {
        return Err(shape_err(format!("{:?}", occ.dim()), format!("{:?}", reward.dim())));
    }
    Ok((occ.probs() * reward.r()).sum())
}

/// NAIL surrogate of `policy` around `ref_policy` given ratio logits λ:
/// `(1/w) Σ p^π (w λ + log π̃ − log π)` with `w` from `weighting`.
pub fn j_nail(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    log_ratio_ref: &Array2<f64>,
    ref_policy: &PolicyTable,
    weighting: BoundWeighting,
) -> Result<f64> {
    mdp.check_table("log ratio", log_ratio_ref.dim())?;
    mdp.check_table("reference policy", ref_policy.dim())?;
    let occ = occupancy(mdp, policy)?;
    let w = weighting.weight(mdp.gamma());
    let mut total = 0.0;
    for ((s, a), &d) in occ.probs().indexed_iter() {
        if d == 0.0 {
            continue;
        }
        let pr = ref_policy.prob(s, a);
        if pr <= 0.0 {
            return Err(Error::SupportViolation { state: s, action: a });
        }
        let p = policy.prob(s, a);
        total += d * (w * log_ratio_ref[[s, a]] + pr.ln() - p.ln());
    }
    Ok(total / w)
}
