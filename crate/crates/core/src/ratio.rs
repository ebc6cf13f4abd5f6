//! Tabular density-ratio estimators for `log(q/p)`.
//!
//! All three sample-based estimators fit one logit per `(s, a)` pair by
//! gradient ascent. In full-batch mode the objectives only depend on the
//! empirical frequencies `q̂` and `p̂`, so each step is an exact gradient step.

use crate::demos::{empirical_occupancy, DemonstrationSet};
use crate::error::{shape_err, Error, Result};
use crate::mdp::OccupancyTable;
use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Exact,
    Bce,
    Kliep,
    Dv,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EstimatorKind::Exact),
            "bce" => Ok(EstimatorKind::Bce),
            "kliep" => Ok(EstimatorKind::Kliep),
            "dv" => Ok(EstimatorKind::Dv),
            other => Err(Error::InvalidConfig(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Samples per class and step; `None` means full batch.
    pub batch: Option<usize>,
    pub clip: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            learning_rate: 1.0,
            steps: 5000,
            batch: None,
            clip: 20.0,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.clip > 0.0) || self.steps == 0 {
            return Err(Error::InvalidConfig(
                "estimator needs learning_rate > 0, steps >= 1 and clip > 0".into(),
            ));
        }
        if self.batch == Some(0) {
            return Err(Error::InvalidConfig("batch must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitMetadata {
    pub steps: usize,
    pub final_loss: Option<f64>,
    /// Objective value before the first step and after every step.
    pub loss_trace: Vec<f64>,
}

/// Estimate of `log(q(s,a) / p(s,a))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRatioTable {
    logits: Array2<f64>,
    estimator: EstimatorKind,
    fit: FitMetadata,
}

impl LogRatioTable {
    pub fn new(logits: Array2<f64>, estimator: EstimatorKind, fit: FitMetadata) -> Result<Self> {
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(LogRatioTable { logits, estimator, fit })
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn into_logits(self) -> Array2<f64> {
        self.logits
    }

    pub fn estimator(&self) -> EstimatorKind {
        self.estimator
    }

    pub fn fit(&self) -> &FitMetadata {
        &self.fit
    }

    pub fn dim(&self) -> (usize, usize) {
        self.logits.dim()
    }
}

/// `log(max(q, floor) / max(p, floor))`, clipped to `±log(1/floor)`.
pub fn exact_log_ratio(q: &OccupancyTable, p: &OccupancyTable, floor: f64) -> Result<LogRatioTable> {
    exact_log_ratio_tables(q.probs(), p.probs(), floor)
}

pub(crate) fn exact_log_ratio_tables(q: &Array2<f64>, p: &Array2<f64>, floor: f64) -> Result<LogRatioTable> {
    if q.dim() != p.dim() {
        return Err(shape_err(format!("{:?}", q.dim()), format!("{:?}", p.dim())));
    }
    if !(floor > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ratio floor must be positive, got {floor}"
        )));
    }
    let bound = (1.0 / floor).ln();
    let mut logits = Array2::zeros(q.dim());
    Zip::from(&mut logits).and(q).and(p).for_each(|l, &qi, &pi| {
        *l = (qi.max(floor).ln() - pi.max(floor).ln()).clamp(-bound, bound);
    });
    LogRatioTable::new(logits, EstimatorKind::Exact, FitMetadata::default())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without cancellation.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Balanced binary cross-entropy objective `½ E_q log σ(λ) + ½ E_p log(1 − σ(λ))`.
pub fn bce_objective(q: &Array2<f64>, p: &Array2<f64>, logits: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    Zip::from(q).and(p).and(logits).for_each(|&qi, &pi, &l| {
        if qi > 0.0 {
            total += 0.5 * qi * log_sigmoid(l);
        }
        if pi > 0.0 {
            total += 0.5 * pi * log_sigmoid(-l);
        }
    });
    total
}

/// KLIEP / f-GAN reverse-KL objective `E_p[ν] − E_q[exp ν] + 1`.
pub fn kliep_objective(q: &Array2<f64>, p: &Array2<f64>, nu: &Array2<f64>) -> f64 {
    let mut total = 1.0;
    Zip::from(q).and(p).and(nu).for_each(|&qi, &pi, &v| {
        total += pi * v - qi * v.exp();
    });
    total
}

/// `log E_q[exp ν]` with max-subtraction over the support of `q`.
pub fn log_mean_exp(q: &Array2<f64>, nu: &Array2<f64>) -> f64 {
    let mut max = f64::NEG_INFINITY;
    Zip::from(q).and(nu).for_each(|&qi, &v| {
        if qi > 0.0 {
            max = max.max(v);
        }
    });
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    Zip::from(q).and(nu).for_each(|&qi, &v| {
        if qi > 0.0 {
            acc += qi * (v - max).exp();
        }
    });
    max + acc.ln()
}

/// Donsker–Varadhan objective `E_p[ν] − log E_q[exp ν]`.
pub fn dv_objective(q: &Array2<f64>, p: &Array2<f64>, nu: &Array2<f64>) -> f64 {
    (p * nu).sum() - log_mean_exp(q, nu)
}

fn objective(kind: EstimatorKind, q: &Array2<f64>, p: &Array2<f64>, x: &Array2<f64>) -> f64 {
    match kind {
        EstimatorKind::Bce => bce_objective(q, p, x),
        EstimatorKind::Kliep => kliep_objective(q, p, x),
        EstimatorKind::Dv => dv_objective(q, p, x),
        EstimatorKind::Exact => 0.0,
    }
}

fn gradient(kind: EstimatorKind, q: &Array2<f64>, p: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    match kind {
        EstimatorKind::Bce => Zip::from(&mut g).and(q).and(p).and(x).for_each(|g, &qi, &pi, &l| {
            let s = sigmoid(l);
            *g = 0.5 * (qi * (1.0 - s) - pi * s);
        }),
        EstimatorKind::Kliep => Zip::from(&mut g).and(q).and(p).and(x).for_each(|g, &qi, &pi, &v| {
            *g = pi - qi * v.exp();
        }),
        EstimatorKind::Dv => {
            let lme = log_mean_exp(q, x);
            Zip::from(&mut g).and(q).and(p).and(x).for_each(|g, &qi, &pi, &v| {
                *g = pi - qi * (v - lme).exp();
            })
        }
        EstimatorKind::Exact => {}
    }
    g
}

/// Rows of the dataset's transitions as flat `(s, a)` indices.
fn pair_indices(d: &DemonstrationSet) -> Vec<usize> {
    let a = d.num_actions();
    d.transitions().iter().map(|t| t.state * a + t.action).collect()
}

fn batch_frequencies(pairs: &[usize], batch: usize, dim: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
    let mut f = Array2::zeros(dim);
    let slice = f.as_slice_mut().expect("standard layout");
    for _ in 0..batch {
        slice[pairs[rng.random_range(0..pairs.len())]] += 1.0 / batch as f64;
    }
    f
}

/// Gradient ascent on a tabular estimator objective from explicit frequency
/// tables. Returns the raw parameter table (ν for KLIEP and DV, λ for BCE).
pub fn ascend(
    kind: EstimatorKind,
    q: &Array2<f64>,
    p: &Array2<f64>,
    cfg: &EstimatorConfig,
    init: &Array2<f64>,
) -> Result<(Array2<f64>, FitMetadata)> {
    ascend_impl(kind, q, p, cfg, init, None)
}

fn ascend_impl(
    kind: EstimatorKind,
    q: &Array2<f64>,
    p: &Array2<f64>,
    cfg: &EstimatorConfig,
    init: &Array2<f64>,
    samples: Option<(&[usize], &[usize])>,
) -> Result<(Array2<f64>, FitMetadata)> {
    cfg.validate()?;
    if q.dim() != p.dim() || q.dim() != init.dim() {
        return Err(shape_err(
            format!("{:?}", q.dim()),
            format!("{:?} / {:?}", p.dim(), init.dim()),
        ));
    }
    let mut x = init.mapv(|v| v.clamp(-cfg.clip, cfg.clip));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let start = objective(kind, q, p, &x);
    if !start.is_finite() {
        return Err(Error::Diverged { step: 0 });
    }
    trace.push(start);
    for step in 1..=cfg.steps {
        let g = match (samples, cfg.batch) {
            (Some((qs, ps)), Some(b)) => {
                let qb = batch_frequencies(qs, b, q.dim(), &mut rng);
                let pb = batch_frequencies(ps, b, q.dim(), &mut rng);
                gradient(kind, &qb, &pb, &x)
            }
            _ => gradient(kind, q, p, &x),
        };
        x.scaled_add(cfg.learning_rate, &g);
        x.mapv_inplace(|v| v.clamp(-cfg.clip, cfg.clip));
        let loss = objective(kind, q, p, &x);
        if !loss.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step });
        }
        trace.push(loss);
    }
    let meta = FitMetadata {
        steps: cfg.steps,
        final_loss: trace.last().copied(),
        loss_trace: trace,
    };
    Ok((x, meta))
}

fn frequencies(q_samples: &DemonstrationSet, p_samples: &DemonstrationSet) -> Result<(Array2<f64>, Array2<f64>)> {
    let q = empirical_occupancy(q_samples)?;
    let p = empirical_occupancy(p_samples)?;
    if q.dim() != p.dim() {
        return Err(shape_err(format!("{:?}", q.dim()), format!("{:?}", p.dim())));
    }
    Ok((q.probs().clone(), p.probs().clone()))
}

fn fit_raw(
    kind: EstimatorKind,
    q_samples: &DemonstrationSet,
    p_samples: &DemonstrationSet,
    cfg: &EstimatorConfig,
    init: Option<&Array2<f64>>,
) -> Result<(Array2<f64>, FitMetadata, Array2<f64>)> {
    let (q, p) = frequencies(q_samples, p_samples)?;
    let zeros = Array2::zeros(q.dim());
    let init = init.unwrap_or(&zeros);
    let (qs, ps) = (pair_indices(q_samples), pair_indices(p_samples));
    let (x, meta) = ascend_impl(kind, &q, &p, cfg, init, Some((&qs, &ps)))?;
    Ok((x, meta, q))
}

/// Logistic-regression estimator with equal class weights; its optimum is
/// `λ = log(q̂/p̂)`.
pub fn fit_bce(
    q_samples: &DemonstrationSet,
    p_samples: &DemonstrationSet,
    cfg: &EstimatorConfig,
) -> Result<LogRatioTable> {
    let (x, meta, _) = fit_raw(EstimatorKind::Bce, q_samples, p_samples, cfg, None)?;
    LogRatioTable::new(x, EstimatorKind::Bce, meta)
}

/// KLIEP estimator. The objective is maximized by `ν = log(p̂/q̂)`, so the
/// returned logits are `−ν`.
pub fn fit_kliep(
    q_samples: &DemonstrationSet,
    p_samples: &DemonstrationSet,
    cfg: &EstimatorConfig,
) -> Result<LogRatioTable> {
    let (x, meta, _) = fit_raw(EstimatorKind::Kliep, q_samples, p_samples, cfg, None)?;
    LogRatioTable::new(-x, EstimatorKind::Kliep, meta)
}

/// Donsker–Varadhan estimator; see [`fit_dv_from`].
pub fn fit_dv(
    q_samples: &DemonstrationSet,
    p_samples: &DemonstrationSet,
    cfg: &EstimatorConfig,
) -> Result<LogRatioTable> {
    fit_dv_from(q_samples, p_samples, cfg, None)
}

/// Donsker–Varadhan estimator started from `init` (zeros if `None`). The DV
/// optimum is only defined up to a constant; the output is aligned as
/// `λ = −(ν − log E_q̂[exp ν])`.
pub fn fit_dv_from(
    q_samples: &DemonstrationSet,
    p_samples: &DemonstrationSet,
    cfg: &EstimatorConfig,
    init: Option<&Array2<f64>>,
) -> Result<LogRatioTable> {
    let (x, meta, q) = fit_raw(EstimatorKind::Dv, q_samples, p_samples, cfg, init)?;
    LogRatioTable::new(align_dv(&q, &x), EstimatorKind::Dv, meta)
}

/// `−(ν − log E_q[exp ν])`.
pub fn align_dv(q: &Array2<f64>, nu: &Array2<f64>) -> Array2<f64> {
    let lme = log_mean_exp(q, nu);
    nu.mapv(|v| lme - v)
}

/// Dispatches on `kind`; `Exact` uses the empirical frequencies with floor 1e-12.
pub fn fit(
    kind: EstimatorKind,
    q_samples: &DemonstrationSet,
    p_samples: &DemonstrationSet,
    cfg: &EstimatorConfig,
) -> Result<LogRatioTable> {
    match kind {
        EstimatorKind::Exact => {
            let (q, p) = frequencies(q_samples, p_samples)?;
            exact_log_ratio_tables(&q, &p, 1e-12)
        }
        EstimatorKind::Bce => fit_bce(q_samples, p_samples, cfg),
        EstimatorKind::Kliep => fit_kliep(q_samples, p_samples, cfg),
        EstimatorKind::Dv => fit_dv(q_samples, p_samples, cfg),
    }
}
