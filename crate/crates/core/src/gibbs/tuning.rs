use serde::{Deserialize, Serialize};

use super::sampler::{ChainState, Sampler};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{self, Domain, StreamRng};

/// Pilot-run search for the Metropolis step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    /// Target acceptance interval `[J₁, J₂]`.
    pub target: (f64, f64),
    pub initial_sd: f64,
    pub n_chains: usize,
    pub initial_draws: usize,
    /// Successive pilot lengths; each stage repeats until the rate lands in `target`.
    pub stages: Vec<usize>,
    pub max_rescales: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            target: (0.22, 0.24),
            initial_sd: 0.1,
            n_chains: 3,
            initial_draws: 5_000,
            stages: vec![3_000, 6_000, 12_000],
            max_rescales: 20,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        let (j1, j2) = self.target;
        if !(0.0 < j1 && j1 < j2 && j2 < 1.0) {
            return Err(Error::Config(format!("tuning target must satisfy 0 < J1 < J2 < 1, got {:?}", self.target)));
        }
        if !(self.initial_sd > 0.0) || self.n_chains == 0 || self.initial_draws == 0 {
            return Err(Error::Config("tuning needs a positive step size, chains and draws".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotRecord {
    pub draws: usize,
    pub proposal_sd: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningOutcome {
    pub proposal_sd: f64,
    pub acceptance: f64,
    pub history: Vec<PilotRecord>,
}

/// Rescaled step size for an acceptance rate `w` outside `[J₁, J₂]`.
///
/// The step shrinks in proportion to `w/J₁` when acceptance is too low and
/// grows in proportion to `w/J₂` when it is too high; one rescale changes `s`
/// by at most a factor of 10.
pub fn rescale(s: f64, w: f64, target: (f64, f64)) -> f64 {
    let (j1, j2) = target;
    let factor = if w < j1 {
        w / j1
    } else if w > j2 {
        w / j2
    } else {
        1.0
    };
    s * factor.clamp(0.1, 10.0)
}

pub(crate) struct PilotChain {
    pub state: ChainState,
    pub rng: StreamRng,
    pub accepted: usize,
}

/// Runs `draws` sweeps on every chain and returns the pooled acceptance rate.
pub(crate) fn pilot(sampler: &Sampler, chains: &mut [PilotChain], draws: usize, sd: f64, exec: Execution) -> Result<f64> {
    exec.try_for_each_mut(chains, |_, chain| {
        chain.state.proposal_sd = sd;
        chain.accepted = 0;
        for _ in 0..draws {
            chain.accepted += usize::from(sampler.sweep(&mut chain.state, &mut chain.rng)?);
        }
        Ok(())
    })?;
    let total: usize = chains.iter().map(|c| c.accepted).sum();
    Ok(total as f64 / (draws * chains.len()) as f64)
}

/// Starts `n` chains on the given stream domain, retrying initial states whose
/// first augmentation hits a degenerate interval.
pub(crate) fn start_chains(
    sampler: &Sampler,
    n: usize,
    seed: u64,
    domain: Domain,
    sd: f64,
    retries: usize,
    exec: Execution,
) -> Result<Vec<PilotChain>> {
    let w = sampler.sensitivity().map(|_| confounder(seed, sampler.data().len()));
    exec.try_map(n, |c| {
        let mut rng = rng::stream(seed, domain, c as u64);
        let state = sampler.initialize(sd, w.as_deref(), retries, &mut rng)?;
        Ok(PilotChain { state, rng, accepted: 0 })
    })
}

/// Latent confounder `w ~ N(0, 1)`, drawn once per run and shared by all chains.
pub fn confounder(seed: u64, n: usize) -> Vec<f64> {
    use rand::Rng;
    let mut rng = rng::stream(seed, Domain::Confounder, 0);
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

/// Searches for a step size whose pooled pilot acceptance rate lies in the
/// target interval; all pilot draws are discarded.
pub fn tune_proposal(sampler: &Sampler, config: &TuningConfig, seed: u64, exec: Execution) -> Result<TuningOutcome> {
    config.validate()?;
    let mut chains = start_chains(sampler, config.n_chains, seed, Domain::Tuning, config.initial_sd, 20, exec)?;
    let (j1, j2) = config.target;
    let inside = |w: f64| (j1..=j2).contains(&w);
    let mut s = config.initial_sd;
    let mut history = Vec::new();
    let mut rescales = 0;

    let mut w = pilot(sampler, &mut chains, config.initial_draws, s, exec)?;
    history.push(PilotRecord { draws: config.initial_draws, proposal_sd: s, acceptance: w });
    for &draws in &config.stages {
        loop {
            if !inside(w) {
                if rescales == config.max_rescales {
                    return Err(Error::Tuning { scale: s, acceptance: w });
                }
                s = rescale(s, w, config.target);
                rescales += 1;
            }
            w = pilot(sampler, &mut chains, draws, s, exec)?;
            history.push(PilotRecord { draws, proposal_sd: s, acceptance: w });
            if inside(w) {
                break;
            }
        }
    }
    if config.stages.is_empty() && !inside(w) {
        return Err(Error::Tuning { scale: s, acceptance: w });
    }
    Ok(TuningOutcome {
        proposal_sd: s,
        acceptance: w,
        history,
    })
}
