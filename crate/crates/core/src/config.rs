//! Experiment configuration: a single JSON document, unknown keys rejected.

use crate::baselines::AdversarialUpdate;
use crate::demos::make_expert;
use crate::envs;
use crate::error::{Error, Result};
use crate::mdp::{occupancy, BoundWeighting, OccupancyTable, PolicyTable, RewardTable, TabularMdp};
use crate::ratio::{EstimatorConfig, EstimatorKind};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    Chain2,
    Gridworld5,
    /// Dirichlet dynamics and a uniform `[0, 1)` reward drawn from `seed`.
    Random {
        states: usize,
        actions: usize,
        seed: u64,
    },
}

/// An MDP with its true reward and maximum-entropy expert.
#[derive(Debug, Clone)]
pub struct Environment {
    pub mdp: TabularMdp,
    pub true_reward: RewardTable,
    pub expert: PolicyTable,
    pub expert_occ: OccupancyTable,
}

impl EnvironmentSpec {
    pub fn build(&self, gamma: Option<f64>) -> Result<Environment> {
        let (mdp, true_reward) = match *self {
            EnvironmentSpec::Chain2 => (envs::chain2(), envs::chain2_reward()),
            EnvironmentSpec::Gridworld5 => (envs::gridworld5(), envs::gridworld5_reward()),
            EnvironmentSpec::Random { states, actions, seed } => {
                if states == 0 || actions == 0 {
                    return Err(Error::InvalidConfig("random environment needs S, A >= 1".into()));
                }
                let mdp = envs::random_mdp(states, actions, 0.9, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005E_ED0F_4E57);
                let r = Array2::from_shape_simple_fn((states, actions), || rng.random::<f64>());
                (mdp, RewardTable::new(r)?)
            }
        };
        let mdp = match gamma {
            Some(g) => mdp.with_gamma(g)?,
            None => mdp,
        };
        let expert = make_expert(&mdp, &true_reward, 1e-12)?;
        let expert_occ = occupancy(&mdp, &expert)?;
        Ok(Environment {
            mdp,
            true_reward,
            expert,
            expert_occ,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Nail,
    Airl,
    Onail,
    Valuedice,
    Bc,
    AdvRkl,
}

/// Where the offline methods take their start states from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartStates {
    /// First state of every demonstration episode.
    #[default]
    Episodes,
    /// The environment's exact initial distribution.
    Exact,
}

/// Learning rates and step counts; unset fields take the per-algorithm defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub actor_learning_rate: Option<f64>,
    pub critic_learning_rate: Option<f64>,
    pub actor_steps: Option<usize>,
    pub critic_steps: Option<usize>,
}

/// Hyperparameters with every field resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub actor_steps: usize,
    pub critic_steps: usize,
}

impl Schedule {
    /// ONAIL and ValueDice use their published schedules; the other algorithms
    /// only read the fields that apply to them.
    pub fn defaults_for(algorithm: Algorithm) -> Schedule {
        match algorithm {
            Algorithm::Valuedice => Schedule {
                actor_learning_rate: 1e-5,
                critic_learning_rate: 1e-3,
                actor_steps: 1,
                critic_steps: 5,
            },
            _ => Schedule {
                actor_learning_rate: 1e-4,
                critic_learning_rate: 1e-3,
                actor_steps: 10_000,
                critic_steps: 1000,
            },
        }
    }
}

impl Hyperparameters {
    pub fn resolve(&self, algorithm: Algorithm) -> Schedule {
        let d = Schedule::defaults_for(algorithm);
        Schedule {
            actor_learning_rate: self.actor_learning_rate.unwrap_or(d.actor_learning_rate),
            critic_learning_rate: self.critic_learning_rate.unwrap_or(d.critic_learning_rate),
            actor_steps: self.actor_steps.unwrap_or(d.actor_steps),
            critic_steps: self.critic_steps.unwrap_or(d.critic_steps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub algorithm: Algorithm,
    pub estimator: EstimatorKind,
    pub estimator_config: EstimatorConfig,
    /// Defaults per algorithm when unset.
    pub iterations: Option<usize>,
    pub seeds: Vec<u64>,
    pub hyperparameters: Hyperparameters,
    /// Expert episodes sampled per seed (offline methods and sampled ratios).
    pub demo_episodes: usize,
    /// Load demonstrations from a JSONL file instead of sampling them.
    pub demos: Option<PathBuf>,
    /// Policy rollout steps per iteration in sampled mode.
    pub rollout_steps: usize,
    pub gamma: Option<f64>,
    pub weighting: BoundWeighting,
    pub adversarial_update: AdversarialUpdate,
    pub bc_smoothing: f64,
    /// Start states for ONAIL and ValueDice.
    pub start_states: StartStates,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            environment: EnvironmentSpec::Gridworld5,
            algorithm: Algorithm::Nail,
            estimator: EstimatorKind::Exact,
            estimator_config: EstimatorConfig::default(),
            iterations: None,
            seeds: vec![0],
            hyperparameters: Hyperparameters::default(),
            demo_episodes: 50,
            demos: None,
            rollout_steps: 10_000,
            gamma: None,
            weighting: BoundWeighting::Trajectory,
            adversarial_update: AdversarialUpdate::Mirror { step_size: 0.05 },
            bc_smoothing: 0.5,
            start_states: StartStates::Episodes,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Format {
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { line, message } => Error::Format {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations.unwrap_or(match self.algorithm {
            Algorithm::Nail => 200,
            Algorithm::Airl => 50,
            Algorithm::Onail => 20,
            Algorithm::Valuedice => 1000,
            Algorithm::Bc => 0,
            Algorithm::AdvRkl => 500,
        })
    }

    pub fn schedule(&self) -> Schedule {
        self.hyperparameters.resolve(self.algorithm)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.iterations == Some(0) && self.algorithm != Algorithm::Bc {
            return bad("iterations must be positive".into());
        }
        let s = self.schedule();
        for (name, v) in [
            ("actor_learning_rate", s.actor_learning_rate),
            ("critic_learning_rate", s.critic_learning_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if s.actor_steps == 0 || s.critic_steps == 0 {
            return bad("step counts must be positive".into());
        }
        if self.demo_episodes == 0 || self.rollout_steps == 0 {
            return bad("demo_episodes and rollout_steps must be positive".into());
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::GammaOutOfRange(g));
            }
        }
        if !(self.bc_smoothing >= 0.0) || !self.bc_smoothing.is_finite() {
            return bad(format!("bc_smoothing must be >= 0, got {}", self.bc_smoothing));
        }
        if let AdversarialUpdate::Mirror { step_size } = self.adversarial_update {
            if !(step_size > 0.0) || !step_size.is_finite() {
                return bad(format!("step_size must be positive, got {step_size}"));
            }
        }
        if self.estimator != EstimatorKind::Exact {
            self.estimator_config.validate()?;
        }
        if matches!(self.algorithm, Algorithm::Onail | Algorithm::Valuedice | Algorithm::Bc)
            && self.estimator != EstimatorKind::Exact
        {
            log::info!("estimator setting is ignored by offline algorithms");
        }
        Ok(())
    }
}
