//! Exact tabular MDP core: domain tables, dynamic programming and objectives.

mod dp;
mod objective;

pub use dp::{
    occupancy, occupancy_by_truncation, policy_evaluation, policy_evaluation_soft, policy_evaluation_soft_with,
    policy_from_soft_q, soft_bellman_backup, soft_policy_iteration, soft_value_iteration, soft_value_iteration_with,
    state_transition_matrix, value_iteration, DpOptions,
};
pub use objective::{expected_reward, j_nail, reverse_kl, reverse_kl_slices, BoundWeighting};

use crate::error::{shape_err, Error, Result};
use crate::numeric::{logsumexp, sup_dist};
use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Tolerance on row sums of transition kernels, initial distributions and policies.
pub const ROW_TOL: f64 = 1e-12;
/// Tolerance on the total mass of an occupancy table.
pub const OCCUPANCY_TOL: f64 = 1e-10;

fn is_distribution(row: impl IntoIterator<Item = f64>, tol: f64) -> bool {
    let mut total = 0.0;
    for p in row {
        if !(p >= 0.0) || !p.is_finite() {
            return false;
        }
        total += p;
    }
    (total - 1.0).abs() <= tol
}

/// Finite MDP with geometric episode termination: after every step the episode
/// continues with probability `gamma` and resets to `initial` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp", into = "RawMdp")]
pub struct TabularMdp {
    transition: Array3<f64>,
    initial: Array1<f64>,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMdp {
    transition: Array3<f64>,
    initial: Array1<f64>,
    gamma: f64,
}

impl TryFrom<RawMdp> for TabularMdp {
    type Error = Error;
    fn try_from(raw: RawMdp) -> Result<Self> {
        TabularMdp::new(raw.transition, raw.initial, raw.gamma)
    }
}

impl From<TabularMdp> for RawMdp {
    fn from(m: TabularMdp) -> Self {
        RawMdp {
            transition: m.transition,
            initial: m.initial,
            gamma: m.gamma,
        }
    }
}

impl TabularMdp {
    /// Builds an MDP from `transition[s][a][s']`, `initial[s]` and `gamma`.
    pub fn new(transition: Array3<f64>, initial: Array1<f64>, gamma: f64) -> Result<Self> {
        let (s, _, s2) = transition.dim();
        if s != s2 || initial.len() != s {
            return Err(shape_err(
                format!("transition SxAxS with S = {}", initial.len()),
                format!("{:?}", transition.dim()),
            ));
        }
        let mdp = TabularMdp {
            transition,
            initial,
            gamma,
        };
        validate_mdp(&mdp)?;
        Ok(mdp)
    }

    pub fn num_states(&self) -> usize {
        self.initial.len()
    }

    pub fn num_actions(&self) -> usize {
        self.transition.dim().1
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn initial(&self) -> &Array1<f64> {
        &self.initial
    }

    /// Same dynamics with a different continuation probability.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        TabularMdp::new(self.transition.clone(), self.initial.clone(), gamma)
    }

    /// Same dynamics with a different initial distribution.
    pub fn with_initial(&self, initial: Array1<f64>) -> Result<Self> {
        TabularMdp::new(self.transition.clone(), initial, self.gamma)
    }

    /// `E_{s'|s,a}[v(s')]` for every `(s, a)`.
    pub fn expect_next(&self, values: &Array1<f64>) -> Array2<f64> {
        let (s, a, _) = self.transition.dim();
        let mut out = Array2::zeros((s, a));
        for ((si, ai), o) in out.indexed_iter_mut() {
            *o = self.transition.slice(ndarray::s![si, ai, ..]).dot(values);
        }
        out
    }

    pub(crate) fn check_table(&self, what: &str, dim: (usize, usize)) -> Result<()> {
        if dim != (self.num_states(), self.num_actions()) {
            return Err(shape_err(
                format!("{what} of shape ({}, {})", self.num_states(), self.num_actions()),
                format!("{dim:?}"),
            ));
        }
        Ok(())
    }
}

/// Checks every structural invariant of an MDP.
pub fn validate_mdp(mdp: &TabularMdp) -> Result<()> {
    let (num_s, num_a, _) = mdp.transition.dim();
    if num_s == 0 || num_a == 0 {
        return Err(shape_err("at least one state and action", "empty MDP"));
    }
    for s in 0..num_s {
        for a in 0..num_a {
            let row = mdp.transition.slice(ndarray::s![s, a, ..]);
            if !is_distribution(row.iter().copied(), ROW_TOL) {
                return Err(Error::NonStochasticRow { state: s, action: a });
            }
        }
    }
    if !is_distribution(mdp.initial.iter().copied(), ROW_TOL) {
        return Err(Error::BadInitialDistribution);
    }
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        return Err(Error::GammaOutOfRange(mdp.gamma));
    }
    Ok(())
}

/// Stochastic policy `π(a|s)`, one probability row per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub struct PolicyTable {
    probs: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<Vec<f64>>,
}

impl TryFrom<RawPolicy> for PolicyTable {
    type Error = Error;
    fn try_from(raw: RawPolicy) -> Result<Self> {
        if raw.probs.len() != raw.num_states || raw.probs.iter().any(|r| r.len() != raw.num_actions) {
            return Err(shape_err(
                format!("{}x{} probability rows", raw.num_states, raw.num_actions),
                "ragged or mis-sized rows",
            ));
        }
        let flat: Vec<f64> = raw.probs.into_iter().flatten().collect();
        let probs = Array2::from_shape_vec((raw.num_states, raw.num_actions), flat)
            .map_err(|e| shape_err("policy table", e))?;
        PolicyTable::new(probs)
    }
}

impl From<PolicyTable> for RawPolicy {
    fn from(p: PolicyTable) -> Self {
        RawPolicy {
            num_states: p.num_states(),
            num_actions: p.num_actions(),
            probs: p.probs.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl PolicyTable {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(shape_err("nonempty policy table", "empty"));
        }
        for (s, row) in probs.rows().into_iter().enumerate() {
            if !is_distribution(row.iter().copied(), ROW_TOL) {
                return Err(Error::NonStochasticPolicy { state: s });
            }
        }
        Ok(PolicyTable { probs })
    }

    /// Normalizes each row of a nonnegative table; used for internally computed policies.
    pub(crate) fn from_unnormalized(mut probs: Array2<f64>) -> Self {
        for mut row in probs.rows_mut() {
            let total: f64 = row.sum();
            row.mapv_inplace(|x| x / total);
        }
        PolicyTable { probs }
    }

    /// Wraps a table without any checks; used by finite-difference tests.
    #[cfg(test)]
    pub(crate) fn from_unnormalized_unchecked(probs: Array2<f64>) -> Self {
        PolicyTable { probs }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        PolicyTable {
            probs: Array2::from_elem((num_states, num_actions), 1.0 / num_actions as f64),
        }
    }

    /// Policy selecting `actions[s]` with probability one in state `s`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), num_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::IndexOutOfBounds(format!("action {a} in state {s}")));
            }
            probs[[s, a]] = 1.0;
        }
        PolicyTable::new(probs)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[[s, a]]
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.probs.dim()
    }

    /// `log max(π, floor)` elementwise.
    pub fn log_probs(&self, floor: f64) -> Array2<f64> {
        self.probs.mapv(|p| p.max(floor).ln())
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    pub fn sup_dist(&self, other: &PolicyTable) -> f64 {
        sup_dist(self.probs.view(), other.probs.view())
    }
}

/// Discounted stationary state-action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTable {
    probs: Array2<f64>,
}

impl OccupancyTable {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (probs.sum() - 1.0).abs() > OCCUPANCY_TOL {
            return Err(Error::BadOccupancy);
        }
        Ok(OccupancyTable { probs })
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn dim(&self) -> (usize, usize) {
        self.probs.dim()
    }

    /// `d(s) = Σ_a d(s, a)`.
    pub fn state_marginal(&self) -> Array1<f64> {
        self.probs.sum_axis(Axis(1))
    }

    pub fn sup_dist(&self, other: &OccupancyTable) -> f64 {
        sup_dist(self.probs.view(), other.probs.view())
    }

    /// Mixture `w * self + (1 - w) * other`.
    pub fn mix(&self, other: &OccupancyTable, w: f64) -> Result<OccupancyTable> {
        if self.dim() != other.dim() {
            return Err(shape_err(format!("{:?}", self.dim()), format!("{:?}", other.dim())));
        }
        OccupancyTable::new(&self.probs * w + &other.probs * (1.0 - w))
    }
}

/// Q table with derived soft value `V = log Σ_a exp Q` and advantage `A = Q - V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftQTable {
    q: Array2<f64>,
}

impl SoftQTable {
    pub fn new(q: Array2<f64>) -> Self {
        SoftQTable { q }
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        SoftQTable {
            q: Array2::zeros((num_states, num_actions)),
        }
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.q
    }

    pub fn dim(&self) -> (usize, usize) {
        self.q.dim()
    }

    pub fn values(&self) -> Array1<f64> {
        self.q.rows().into_iter().map(logsumexp).collect()
    }

    pub fn advantages(&self) -> Array2<f64> {
        let v = self.values();
        let mut a = self.q.clone();
        for (mut row, vs) in a.rows_mut().into_iter().zip(v.iter()) {
            row.mapv_inplace(|x| x - vs);
        }
        a
    }
}

/// Real-valued reward table `r(s, a)`; in the tabular parameterization
/// the entries are the reward parameters themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    r: Array2<f64>,
}

impl RewardTable {
    pub fn new(r: Array2<f64>) -> Result<Self> {
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(RewardTable { r })
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        RewardTable {
            r: Array2::zeros((num_states, num_actions)),
        }
    }

    pub fn from_fn(num_states: usize, num_actions: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        RewardTable::new(Array2::from_shape_fn((num_states, num_actions), |(s, a)| f(s, a)))
    }

    pub fn r(&self) -> &Array2<f64> {
        &self.r
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.r.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.r.dim()
    }

    pub fn shifted(&self, c: f64) -> RewardTable {
        RewardTable { r: &self.r + c }
    }
}
