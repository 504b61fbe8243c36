use serde::{Deserialize, Serialize};

use super::sampler::{ChainState, Priors, Sampler, SensitivitySpec};
use super::tuning::{start_chains, tune_proposal, TuningConfig, TuningOutcome};
use crate::data::Dataset;
use crate::diagnostics::{self, ChainMatrix, ParameterSummary};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{parameter_names, AftParams, ModelSpec};
use crate::rng::Domain;

/// When to stop sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingRule {
    pub r_max: f64,
    pub ess_min: f64,
    /// Draws per chain between convergence checks.
    pub block: usize,
    /// Draws per chain before the first check.
    pub min_draws: usize,
    pub max_draws: usize,
    /// Use the split-chain variant of R.
    pub split_rhat: bool,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            r_max: 1.1,
            ess_min: 30.0,
            block: 10_000,
            min_draws: 10_000,
            max_draws: 2_000_000,
            split_rhat: false,
        }
    }
}

impl StoppingRule {
    /// The stricter effective-sample-size floor used for data analyses.
    pub fn analysis() -> Self {
        Self {
            ess_min: 1000.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    pub n_chains: usize,
    pub stopping: StoppingRule,
    pub tuning: TuningConfig,
    /// Skips tuning and uses this step size.
    pub proposal_sd: Option<f64>,
    pub init_retries: usize,
    pub execution: Execution,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            n_chains: 3,
            stopping: StoppingRule::default(),
            tuning: TuningConfig::default(),
            proposal_sd: None,
            init_retries: 20,
            execution: Execution::default(),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.stopping;
        if self.n_chains < 2 {
            return Err(Error::Config("at least 2 chains are needed for convergence checks".into()));
        }
        if s.block < 8 || s.max_draws < s.block || !(s.r_max > 1.0) || !(s.ess_min >= 0.0) {
            return Err(Error::Config(format!("invalid stopping rule {s:?}")));
        }
        if let Some(sd) = self.proposal_sd {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::Config(format!("proposal_sd must be positive, got {sd}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    /// Draws per chain when the check ran.
    pub draws: usize,
    /// NaN for parameters fixed by the family.
    #[serde(with = "nan_as_null")]
    pub r_hat: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub ess: Vec<f64>,
    pub converged: bool,
}

/// Retained (second-half) draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    /// 1-based iteration number of the first retained draw.
    pub first_iteration: usize,
    /// Row-major `[draw][parameter]` in [`AftParams::to_vec`] order.
    pub values: Vec<f64>,
    pub accepted: Vec<bool>,
    pub final_state: ChainState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub param_names: Vec<String>,
    /// Coefficients of the onset model, intercept included.
    pub px: usize,
    pub chains: Vec<ChainDraws>,
    /// Total draws per chain, discarded half included.
    pub total_draws: usize,
    pub converged: bool,
    pub proposal_sd: f64,
    pub acceptance_rate: f64,
    pub tuning: Option<TuningOutcome>,
    pub history: Vec<DiagnosticRecord>,
    pub seed: u64,
    pub sensitivity: Option<SensitivitySpec>,
}

impl PosteriorDraws {
    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    /// Retained draws per chain.
    pub fn n_retained(&self) -> usize {
        self.chains.first().map_or(0, |c| c.values.len() / self.n_params())
    }

    pub fn chain_param(&self, chain: usize, j: usize) -> Vec<f64> {
        self.chains[chain].values.iter().skip(j).step_by(self.n_params()).copied().collect()
    }

    /// Parameters whose scale is not pinned by the family.
    pub fn free_params(&self) -> Vec<usize> {
        let n = self.n_params();
        (0..n)
            .filter(|&j| {
                !((j == self.px && self.spec.x.has_fixed_scale()) || (j == n - 1 && self.spec.t.has_fixed_scale()))
            })
            .collect()
    }

    /// All retained draws of parameter `j`, chain by chain.
    pub fn pooled(&self, j: usize) -> Vec<f64> {
        (0..self.n_chains()).flat_map(|c| self.chain_param(c, j)).collect()
    }

    pub fn n_pooled(&self) -> usize {
        self.n_retained() * self.n_chains()
    }

    /// Pooled draw `k` as a parameter set.
    pub fn params_at(&self, k: usize) -> AftParams {
        let per = self.n_retained();
        let (c, i) = (k / per, k % per);
        let n = self.n_params();
        AftParams::from_slice(&self.chains[c].values[i * n..(i + 1) * n], self.px)
    }

    /// `k` pooled draws at evenly spaced positions (all of them if fewer exist).
    pub fn thinned(&self, k: usize) -> Vec<AftParams> {
        let total = self.n_pooled();
        let k = k.min(total).max(1);
        (0..k).map(|i| self.params_at(i * total / k)).collect()
    }

    pub fn posterior_mean(&self) -> AftParams {
        let n = self.n_params();
        let mut sum = vec![0.0; n];
        for c in &self.chains {
            for (j, v) in c.values.iter().enumerate() {
                sum[j % n] += v;
            }
        }
        let count = self.n_pooled() as f64;
        AftParams::from_slice(&sum.iter().map(|s| s / count).collect::<Vec<_>>(), self.px)
    }

    pub fn summarize(&self, probs: &[f64]) -> Result<Vec<ParameterSummary>> {
        let pooled: Vec<Vec<f64>> = (0..self.n_params()).map(|j| self.pooled(j)).collect();
        diagnostics::summarize(&self.param_names, &pooled, probs)
    }

    pub fn last_diagnostics(&self) -> Option<&DiagnosticRecord> {
        self.history.last()
    }
}

struct LiveChain {
    state: ChainState,
    rng: crate::rng::StreamRng,
    values: Vec<f64>,
    accepted: Vec<bool>,
    first_iteration: usize,
}

/// Runs `n_chains` chains in blocks until every free parameter has
/// `R < r_max` and `ESS ≥ ess_min` on the second halves, or `max_draws`.
pub fn run(
    data: &Dataset,
    spec: ModelSpec,
    priors: Priors,
    config: &GibbsConfig,
    seed: u64,
    sensitivity: Option<SensitivitySpec>,
) -> Result<PosteriorDraws> {
    config.validate()?;
    data.check_fit_ready()?;
    let sampler = Sampler::new(data, spec, priors, sensitivity)?;
    let exec = config.execution;
    let (proposal_sd, tuning) = match config.proposal_sd {
        Some(sd) => (sd, None),
        None => {
            let t = tune_proposal(&sampler, &config.tuning, seed, exec)?;
            log::info!("{spec}: proposal sd {:.4} at acceptance {:.3}", t.proposal_sd, t.acceptance);
            (t.proposal_sd, Some(t))
        }
    };

    let names = parameter_names(data);
    let n_params = names.len();
    let px = sampler.design().px;
    let mut chains: Vec<LiveChain> =
        start_chains(&sampler, config.n_chains, seed, Domain::Chain, proposal_sd, config.init_retries, exec)?
            .into_iter()
            .map(|c| LiveChain {
                state: c.state,
                rng: c.rng,
                values: Vec::new(),
                accepted: Vec::new(),
                first_iteration: 1,
            })
            .collect();

    let mut draws = PosteriorDraws {
        spec,
        param_names: names,
        px,
        chains: Vec::new(),
        total_draws: 0,
        converged: false,
        proposal_sd,
        acceptance_rate: 0.0,
        tuning,
        history: Vec::new(),
        seed,
        sensitivity,
    };
    let free = draws.free_params();
    let stop = config.stopping;
    let mut total = 0;
    loop {
        let block = stop.block.min(stop.max_draws - total);
        exec.try_for_each_mut(&mut chains, |_, chain| {
            chain.values.reserve(block * n_params);
            for _ in 0..block {
                let ok = sampler.sweep(&mut chain.state, &mut chain.rng)?;
                chain.values.extend(chain.state.params.to_vec());
                chain.accepted.push(ok);
            }
            Ok(())
        })?;
        total += block;
        // Draws before the current midpoint can never be retained again.
        let keep_from = total / 2 + 1;
        for chain in &mut chains {
            let drop = keep_from - chain.first_iteration;
            chain.values.drain(..drop * n_params);
            chain.accepted.drain(..drop);
            chain.first_iteration = keep_from;
        }
        if total >= stop.min_draws || total >= stop.max_draws {
            let record = check_convergence(&chains, n_params, &free, total, &stop)?;
            let worst_r = free.iter().map(|&j| record.r_hat[j]).fold(f64::NAN, f64::max);
            let worst_ess = free.iter().map(|&j| record.ess[j]).fold(f64::NAN, f64::min);
            log::info!("{spec}: {total} draws per chain, max R {worst_r:.4}, min ESS {worst_ess:.0}");
            let done = record.converged;
            draws.history.push(record);
            if done {
                draws.converged = true;
                break;
            }
        }
        if total >= stop.max_draws {
            break;
        }
    }

    let accepted: usize = chains.iter().map(|c| c.accepted.iter().filter(|&&a| a).count()).sum();
    let retained: usize = chains.iter().map(|c| c.accepted.len()).sum();
    draws.acceptance_rate = accepted as f64 / retained.max(1) as f64;
    draws.total_draws = total;
    draws.chains = chains
        .into_iter()
        .map(|c| ChainDraws {
            first_iteration: c.first_iteration,
            values: c.values,
            accepted: c.accepted,
            final_state: c.state,
        })
        .collect();
    Ok(draws)
}

fn check_convergence(
    chains: &[LiveChain],
    n_params: usize,
    free: &[usize],
    total: usize,
    stop: &StoppingRule,
) -> Result<DiagnosticRecord> {
    let mut r_hat = vec![f64::NAN; n_params];
    let mut ess = vec![f64::NAN; n_params];
    let mut converged = true;
    for &j in free {
        let columns: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.values.iter().skip(j).step_by(n_params).copied().collect())
            .collect();
        let cm = ChainMatrix::new(columns.iter().map(Vec::as_slice).collect())?;
        let (r, e) = match (
            if stop.split_rhat { diagnostics::split_gelman_rubin(&cm) } else { diagnostics::gelman_rubin(&cm) },
            diagnostics::ess(&cm),
        ) {
            (Ok(r), Ok(e)) => (r, e),
            // a parameter that has not moved within a chain is not converged
            (Err(Error::DegenerateChains(_)), _) | (_, Err(Error::DegenerateChains(_))) => (f64::INFINITY, 0.0),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        r_hat[j] = r;
        ess[j] = e;
        converged &= r < stop.r_max && e >= stop.ess_min;
    }
    Ok(DiagnosticRecord {
        draws: total,
        r_hat,
        ess,
        converged,
    })
}

/// JSON has no NaN; store it as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}
