//! Expert construction, episode sampling and demonstration persistence.

use crate::error::{shape_err, Error, Result};
use crate::mdp::{soft_value_iteration, OccupancyTable, PolicyTable, RewardTable, TabularMdp};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Hard cap on episode length. At γ ≤ 0.99 the probability of reaching it is
/// below 1e-43; capped episodes are counted in the dataset's `source` tag.
pub const MAX_EPISODE_STEPS: usize = 10_000;

/// One recorded step `(s, a, s')` of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(rename = "s")]
    pub state: usize,
    #[serde(rename = "a")]
    pub action: usize,
    #[serde(rename = "sp")]
    pub next_state: usize,
    #[serde(rename = "ep")]
    pub episode: usize,
    #[serde(rename = "t")]
    pub step: usize,
    #[serde(rename = "last")]
    pub is_last: bool,
}

/// Ordered collection of transitions together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    transitions: Vec<Transition>,
    num_states: usize,
    num_actions: usize,
    seed: u64,
    source: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(rename = "S")]
    num_states: usize,
    #[serde(rename = "A")]
    num_actions: usize,
    seed: u64,
    source: String,
}

impl DemonstrationSet {
    /// Builds a dataset, checking every index against the given dimensions.
    pub fn new(
        transitions: Vec<Transition>,
        num_states: usize,
        num_actions: usize,
        seed: u64,
        source: impl Into<String>,
    ) -> Result<Self> {
        for (i, t) in transitions.iter().enumerate() {
            if t.state >= num_states || t.next_state >= num_states || t.action >= num_actions {
                return Err(Error::IndexOutOfBounds(format!(
                    "transition {i}: ({}, {}, {}) outside {num_states} states x {num_actions} actions",
                    t.state, t.action, t.next_state
                )));
            }
        }
        Ok(DemonstrationSet {
            transitions,
            num_states,
            num_actions,
            seed,
            source: source.into(),
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub(crate) fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyDataset)
        } else {
            Ok(())
        }
    }

    /// Number of episodes (distinct episode indices).
    pub fn num_episodes(&self) -> usize {
        let mut n = 0;
        let mut last = None;
        for t in &self.transitions {
            if last != Some(t.episode) {
                n += 1;
                last = Some(t.episode);
            }
        }
        n
    }

    /// Visit counts `n(s, a)`.
    pub fn pair_counts(&self) -> Array2<f64> {
        let mut counts = Array2::zeros((self.num_states, self.num_actions));
        for t in &self.transitions {
            counts[[t.state, t.action]] += 1.0;
        }
        counts
    }

    /// Appends `other`, renumbering its episodes after ours.
    pub fn concat(&self, other: &DemonstrationSet) -> Result<DemonstrationSet> {
        if (self.num_states, self.num_actions) != (other.num_states, other.num_actions) {
            return Err(shape_err(
                format!("{}x{}", self.num_states, self.num_actions),
                format!("{}x{}", other.num_states, other.num_actions),
            ));
        }
        let offset = self.transitions.iter().map(|t| t.episode + 1).max().unwrap_or(0);
        let mut transitions = self.transitions.clone();
        transitions.extend(other.transitions.iter().map(|t| Transition {
            episode: t.episode + offset,
            ..*t
        }));
        DemonstrationSet::new(
            transitions,
            self.num_states,
            self.num_actions,
            self.seed,
            format!("{} + {}", self.source, other.source),
        )
    }
}

/// Maximum-causal-entropy optimal policy for `true_reward`.
pub fn make_expert(mdp: &TabularMdp, true_reward: &RewardTable, tol: f64) -> Result<PolicyTable> {
    soft_value_iteration(mdp, true_reward, tol).map(|(_, pi)| pi)
}

fn sample_index(probs: impl IntoIterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.into_iter().enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum; take the last supported index
    last
}

fn sample_episode(mdp: &TabularMdp, policy: &PolicyTable, seed: u64, episode: usize) -> (Vec<Transition>, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    let gamma = mdp.gamma();
    let mut s = sample_index(mdp.initial().iter().copied(), rng.random());
    let mut out = Vec::new();
    for t in 0..MAX_EPISODE_STEPS {
        let a = sample_index(policy.probs().row(s).iter().copied(), rng.random());
        let sp = sample_index(
            mdp.transition().slice(ndarray::s![s, a, ..]).iter().copied(),
            rng.random(),
        );
        let stop = rng.random::<f64>() >= gamma;
        let capped = !stop && t + 1 == MAX_EPISODE_STEPS;
        out.push(Transition {
            state: s,
            action: a,
            next_state: sp,
            episode,
            step: t,
            is_last: stop || capped,
        });
        if stop {
            return (out, false);
        }
        s = sp;
    }
    (out, true)
}

fn assemble(mdp: &TabularMdp, episodes: Vec<(Vec<Transition>, bool)>, seed: u64) -> Result<DemonstrationSet> {
    let capped = episodes.iter().filter(|(_, c)| *c).count();
    let mut source = format!("sampled episodes={}", episodes.len());
    if capped > 0 {
        log::warn!("{capped} episodes hit the {MAX_EPISODE_STEPS}-step cap");
        source.push_str(&format!(" capped={capped}"));
    }
    let transitions = episodes.into_iter().flat_map(|(t, _)| t).collect();
    DemonstrationSet::new(transitions, mdp.num_states(), mdp.num_actions(), seed, source)
}

/// Samples `num_episodes` episodes with geometric termination: after each step
/// the episode ends with probability `1 - γ`. Episode `i` draws from its own
/// ChaCha stream, so the result does not depend on scheduling.
pub fn sample_episodes(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    num_episodes: usize,
    seed: u64,
) -> Result<DemonstrationSet> {
    mdp.check_table("policy", policy.dim())?;
    if num_episodes == 0 {
        return Err(Error::InvalidConfig("num_episodes must be at least 1".into()));
    }
    let episodes: Vec<_> = (0..num_episodes)
        .into_par_iter()
        .map(|ep| sample_episode(mdp, policy, seed, ep))
        .collect();
    assemble(mdp, episodes, seed)
}

/// Samples whole episodes until at least `min_steps` transitions are collected.
pub fn sample_steps(mdp: &TabularMdp, policy: &PolicyTable, min_steps: usize, seed: u64) -> Result<DemonstrationSet> {
    mdp.check_table("policy", policy.dim())?;
    let mut episodes = Vec::new();
    let mut total = 0;
    while total < min_steps.max(1) {
        let ep = sample_episode(mdp, policy, seed, episodes.len());
        total += ep.0.len();
        episodes.push(ep);
    }
    assemble(mdp, episodes, seed)
}

/// Frequency estimate `q̂(s, a) = n(s, a) / n`.
pub fn empirical_occupancy(demos: &DemonstrationSet) -> Result<OccupancyTable> {
    demos.require_nonempty()?;
    let n = demos.len() as f64;
    OccupancyTable::new(demos.pair_counts() / n)
}

/// Start states of every recorded episode, in order.
pub fn episode_start_states(demos: &DemonstrationSet) -> Vec<usize> {
    demos
        .transitions
        .iter()
        .filter(|t| t.step == 0)
        .map(|t| t.state)
        .collect()
}

/// Writes the dataset as JSON Lines: a header object, then one object per transition.
pub fn save_demos(demos: &DemonstrationSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        num_states: demos.num_states,
        num_actions: demos.num_actions,
        seed: demos.seed,
        source: demos.source.clone(),
    };
    let to_io = |e: serde_json::Error| Error::Io(e.into());
    serde_json::to_writer(&mut w, &header).map_err(to_io)?;
    w.write_all(b"\n")?;
    for t in &demos.transitions {
        serde_json::to_writer(&mut w, t).map_err(to_io)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset written by [`save_demos`]. Line numbers in errors are 1-based.
pub fn load_demos(path: impl AsRef<Path>) -> Result<DemonstrationSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut header: Option<Header> = None;
    let mut transitions: Vec<Transition> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let fmt = |message: String| Error::Format { line: lineno, message };
        match &header {
            None => {
                header = Some(serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?);
            }
            Some(h) => {
                let t: Transition = serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?;
                if t.state >= h.num_states || t.next_state >= h.num_states || t.action >= h.num_actions {
                    return Err(fmt("index out of bounds".into()));
                }
                if let Some(prev) = transitions.last() {
                    let continues = prev.episode == t.episode;
                    if continues && (prev.is_last || t.step != prev.step + 1) {
                        return Err(fmt("step does not continue its episode".into()));
                    }
                    if !continues && t.step != 0 {
                        return Err(fmt("episode does not start at step 0".into()));
                    }
                }
                transitions.push(t);
            }
        }
    }
    let header = header.ok_or(Error::EmptyDataset)?;
    if transitions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    DemonstrationSet::new(
        transitions,
        header.num_states,
        header.num_actions,
        header.seed,
        header.source,
    )
}
