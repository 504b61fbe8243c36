use rand::Rng;
use rand_distr::{Normal, Open01, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Event, Observation, Transition};
use crate::dist::{self, LinearPredictor, DEFAULT_MASS_FLOOR};
use crate::error::{Error, Result};
use crate::model::{dot, AftParams, Design, ModelSpec};
use crate::rng::StreamRng;
use crate::special::{half_normal_ln_pdf, student_t_ln_pdf};

/// Student-t(τ) priors on every coefficient and half-normal(λ) priors on σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub tau_x: f64,
    pub tau_t: f64,
    pub lambda_x: f64,
    pub lambda_t: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            tau_x: 4.0,
            tau_t: 4.0,
            lambda_x: 10f64.sqrt(),
            lambda_t: 10f64.sqrt(),
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let all = [self.tau_x, self.tau_t, self.lambda_x, self.lambda_t];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("prior parameters must be positive: {self:?}")))
        }
    }

    fn tau(&self, tr: Transition) -> f64 {
        match tr {
            Transition::X => self.tau_x,
            Transition::T => self.tau_t,
        }
    }

    fn lambda(&self, tr: Transition) -> f64 {
        match tr {
            Transition::X => self.lambda_x,
            Transition::T => self.lambda_t,
        }
    }
}

/// Fixed effects of a standard-normal latent confounder `w` on both log-times.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub beta_xw: f64,
    pub beta_tw: f64,
}

impl SensitivitySpec {
    fn coefficient(&self, tr: Transition) -> f64 {
        match tr {
            Transition::X => self.beta_xw,
            Transition::T => self.beta_tw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub params: AftParams,
    pub x_aug: Vec<f64>,
    pub t_aug: Vec<f64>,
    /// Latent confounder values; empty outside sensitivity mode.
    pub w: Vec<f64>,
    pub proposal_sd: f64,
}

/// Truncation bounds of `x` given `t`: δ=1 `(l, ∞)`, δ=2 `(max(r−t, l), r]`,
/// δ=3 `(l, r−t]`.
pub fn bounds_x(l: f64, r: f64, delta: Event, t: f64) -> Result<(f64, f64)> {
    match delta {
        Event::RightCensored => Ok((l, f64::INFINITY)),
        Event::Intermediate => Ok(((r - t).max(l), r)),
        Event::Advanced => {
            let b = r - t;
            if b <= l {
                Err(Error::InfeasibleState {
                    observation: None,
                    message: format!("r − t = {b} ≤ l = {l} for an advanced-state observation"),
                })
            } else {
                Ok((l, b))
            }
        }
    }
}

/// Truncation bounds of `t` given `x`: δ=1 `(0, ∞)`, δ=2 `(r−x, ∞)`,
/// δ=3 `(0, r−x]`.
pub fn bounds_t(r: f64, delta: Event, x: f64) -> Result<(f64, f64)> {
    match delta {
        Event::RightCensored => Ok((0.0, f64::INFINITY)),
        Event::Intermediate => Ok(((r - x).max(0.0), f64::INFINITY)),
        Event::Advanced => {
            if x >= r {
                Err(Error::InfeasibleState {
                    observation: None,
                    message: format!("x = {x} ≥ r = {r} for an advanced-state observation"),
                })
            } else {
                Ok((0.0, r - x))
            }
        }
    }
}

/// Whether `(x, t)` is consistent with the observation.
pub fn is_feasible(obs: &Observation, x: f64, t: f64) -> bool {
    if !(x > 0.0 && t > 0.0 && x.is_finite() && t.is_finite() && x > obs.l) {
        return false;
    }
    match obs.delta {
        Event::RightCensored => true,
        Event::Intermediate => x <= obs.r && x + t > obs.r,
        Event::Advanced => x + t <= obs.r,
    }
}

/// Metropolis-within-Gibbs sweeps for one dataset and family pair.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    data: &'a Dataset,
    spec: ModelSpec,
    priors: Priors,
    sensitivity: Option<SensitivitySpec>,
    design: Design,
    mass_floor: f64,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a Dataset, spec: ModelSpec, priors: Priors, sensitivity: Option<SensitivitySpec>) -> Result<Self> {
        priors.validate()?;
        if let Some(s) = sensitivity {
            if !(s.beta_xw.is_finite() && s.beta_tw.is_finite()) {
                return Err(Error::Config("sensitivity coefficients must be finite".into()));
            }
        }
        Ok(Self {
            data,
            spec,
            priors,
            sensitivity,
            design: Design::new(data),
            mass_floor: DEFAULT_MASS_FLOOR,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn sensitivity(&self) -> Option<SensitivitySpec> {
        self.sensitivity
    }

    /// Number of coordinates of the Metropolis proposal.
    pub fn proposal_dim(&self) -> usize {
        self.design.px + self.design.pt + usize::from(!self.spec.x.has_fixed_scale()) + usize::from(!self.spec.t.has_fixed_scale())
    }

    fn to_unconstrained(&self, p: &AftParams) -> Vec<f64> {
        let mut v = p.x.beta.clone();
        if !self.spec.x.has_fixed_scale() {
            v.push(p.x.sigma.ln());
        }
        v.extend(&p.t.beta);
        if !self.spec.t.has_fixed_scale() {
            v.push(p.t.sigma.ln());
        }
        v
    }

    fn from_unconstrained(&self, v: &[f64]) -> AftParams {
        let (px, pt) = (self.design.px, self.design.pt);
        let mut k = 0;
        let beta_x = v[k..k + px].to_vec();
        k += px;
        let sigma_x = if self.spec.x.has_fixed_scale() {
            1.0
        } else {
            k += 1;
            v[k - 1].exp()
        };
        let beta_t = v[k..k + pt].to_vec();
        k += pt;
        let sigma_t = if self.spec.t.has_fixed_scale() { 1.0 } else { v[k].exp() };
        AftParams::new(beta_x, sigma_x, beta_t, sigma_t)
    }

    #[inline]
    fn shift(&self, tr: Transition, state: &ChainState, i: usize) -> f64 {
        match self.sensitivity {
            Some(s) => s.coefficient(tr) * state.w[i],
            None => 0.0,
        }
    }

    #[inline]
    fn predictor(&self, tr: Transition, params: &AftParams, state: &ChainState, i: usize) -> LinearPredictor {
        let p = params.get(tr);
        LinearPredictor::new(dot(self.design.row(tr, i), &p.beta) + self.shift(tr, state, i), p.sigma)
    }

    /// Complete-data log-likelihood `Σᵢ log f(xᵢ) + log f(tᵢ)` split by transition.
    pub fn complete_data_loglik(&self, params: &AftParams, state: &ChainState) -> (f64, f64) {
        let part = |tr: Transition, times: &[f64]| {
            let family = self.spec.family(tr);
            let p = params.get(tr);
            let ln_sigma = p.sigma.ln();
            let inv_sigma = 1.0 / p.sigma;
            let mut sum = 0.0;
            for (i, &v) in times.iter().enumerate() {
                let ln_v = v.ln();
                let mu = dot(self.design.row(tr, i), &p.beta) + self.shift(tr, state, i);
                sum += family.error_ln_pdf((ln_v - mu) * inv_sigma) - ln_v;
            }
            sum - times.len() as f64 * ln_sigma
        };
        (part(Transition::X, &state.x_aug), part(Transition::T, &state.t_aug))
    }

    /// Log prior of `params` plus the log-σ Jacobian for free scales.
    pub fn log_prior_unconstrained(&self, params: &AftParams) -> f64 {
        let mut total = 0.0;
        for tr in [Transition::X, Transition::T] {
            let p = params.get(tr);
            let tau = self.priors.tau(tr);
            total += p.beta.iter().map(|&b| student_t_ln_pdf(b, tau)).sum::<f64>();
            if !self.spec.family(tr).has_fixed_scale() {
                total += half_normal_ln_pdf(p.sigma, self.priors.lambda(tr)) + p.sigma.ln();
            }
        }
        total
    }

    pub fn log_posterior(&self, params: &AftParams, state: &ChainState) -> f64 {
        let (lx, lt) = self.complete_data_loglik(params, state);
        lx + lt + self.log_prior_unconstrained(params)
    }

    /// Joint random-walk Metropolis step on `(β_x, log σ_x, β_t, log σ_t)`.
    /// Returns whether the proposal was accepted.
    pub fn metropolis_update(&self, state: &mut ChainState, rng: &mut StreamRng) -> Result<bool> {
        let current = self.to_unconstrained(&state.params);
        let proposal: Vec<f64> = current
            .iter()
            .map(|v| v + state.proposal_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let u: f64 = rng.sample(Open01);
        let lp_current = self.log_posterior(&state.params, state);
        if !lp_current.is_finite() {
            return Err(Error::Internal(format!(
                "non-finite log-posterior {lp_current} at the current state"
            )));
        }
        let candidate = self.from_unconstrained(&proposal);
        let lp_candidate = self.log_posterior(&candidate, state);
        if lp_candidate.is_finite() && u.ln() < lp_candidate - lp_current {
            state.params = candidate;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Redraws every `xᵢ` from its truncated full conditional, then every `tᵢ`.
    pub fn augment(&self, state: &mut ChainState, rng: &mut StreamRng) -> Result<()> {
        let (fx, ft) = (self.spec.x, self.spec.t);
        for (i, obs) in self.data.observations.iter().enumerate() {
            let wrap = |e: Error| e.with_observation(i);
            let (a, b) = bounds_x(obs.l, obs.r, obs.delta, state.t_aug[i]).map_err(wrap)?;
            let lp = self.predictor(Transition::X, &state.params, state, i);
            let u: f64 = rng.sample(Open01);
            let x = dist::sample_truncated_unchecked(fx, lp, a, b, u, self.mass_floor).map_err(wrap)?;
            state.x_aug[i] = x;
            let (c, d) = bounds_t(obs.r, obs.delta, x).map_err(wrap)?;
            let lp = self.predictor(Transition::T, &state.params, state, i);
            let u: f64 = rng.sample(Open01);
            state.t_aug[i] = dist::sample_truncated_unchecked(ft, lp, c, d, u, self.mass_floor).map_err(wrap)?;
        }
        Ok(())
    }

    /// One Gibbs sweep: parameters, then latent `x`, then latent `t`.
    pub fn sweep(&self, state: &mut ChainState, rng: &mut StreamRng) -> Result<bool> {
        let accepted = self.metropolis_update(state, rng)?;
        self.augment(state, rng)?;
        Ok(accepted)
    }

    /// Over-dispersed start: β from the t prior, σ from the half-normal prior
    /// clamped to `[0.05, 8]`, latent times at feasible interval points.
    /// The confounder starts at zero; see [`Sampler::set_confounder`].
    pub fn initial_state(&self, proposal_sd: f64, rng: &mut StreamRng) -> ChainState {
        let mut draw_params = |tr: Transition, p: usize| {
            let t = StudentT::new(self.priors.tau(tr)).expect("validated prior");
            let beta: Vec<f64> = (0..p).map(|_| rng.sample(t)).collect();
            let sigma = if self.spec.family(tr).has_fixed_scale() {
                1.0
            } else {
                let h = Normal::new(0.0, self.priors.lambda(tr)).expect("validated prior");
                rng.sample::<f64, _>(h).abs().clamp(0.05, 8.0)
            };
            (beta, sigma)
        };
        let (beta_x, sigma_x) = draw_params(Transition::X, self.design.px);
        let (beta_t, sigma_t) = draw_params(Transition::T, self.design.pt);
        let w = if self.sensitivity.is_some() { vec![0.0; self.data.len()] } else { Vec::new() };
        let (x_aug, t_aug) = self.data.observations.iter().map(initial_latent).unzip();
        ChainState {
            params: AftParams::new(beta_x, sigma_x, beta_t, sigma_t),
            x_aug,
            t_aug,
            w,
            proposal_sd,
        }
    }

    /// Draws initial states until the first augmentation succeeds, at most
    /// `retries + 1` times. `w` replaces the confounder in sensitivity mode.
    pub fn initialize(&self, proposal_sd: f64, w: Option<&[f64]>, retries: usize, rng: &mut StreamRng) -> Result<ChainState> {
        let mut last = None;
        for _ in 0..=retries {
            let mut state = self.initial_state(proposal_sd, rng);
            if let Some(w) = w {
                self.set_confounder(&mut state, w.to_vec());
            }
            match self.augment(&mut state, rng) {
                Ok(()) => return Ok(state),
                Err(e @ (Error::DegenerateInterval { .. } | Error::InfeasibleState { .. })) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Replaces the latent confounder with the given values.
    pub fn set_confounder(&self, state: &mut ChainState, w: Vec<f64>) {
        if self.sensitivity.is_some() {
            state.w = w;
        }
    }

    pub fn check_feasible(&self, state: &ChainState) -> Result<()> {
        for (i, obs) in self.data.observations.iter().enumerate() {
            if !is_feasible(obs, state.x_aug[i], state.t_aug[i]) {
                return Err(Error::InfeasibleState {
                    observation: Some(i),
                    message: format!("latent (x, t) = ({}, {}) violates the interval", state.x_aug[i], state.t_aug[i]),
                });
            }
        }
        Ok(())
    }
}

/// Deterministic feasible latent times for one observation.
pub fn initial_latent(obs: &Observation) -> (f64, f64) {
    match obs.delta {
        Event::RightCensored => (obs.l + 1.0, 1.0),
        Event::Intermediate => {
            let x = 0.5 * (obs.l + obs.r);
            (x, 2.0 * (obs.r - x))
        }
        Event::Advanced => {
            let x = obs.l + (obs.r - obs.l) / 3.0;
            (x, 0.5 * (obs.r - x))
        }
    }
}
