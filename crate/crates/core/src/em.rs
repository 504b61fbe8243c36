//! Maximum-likelihood EM for the lognormal-lognormal model.
//!
//! The E-step needs the first two conditional moments of `ln x` and `ln t`.
//! They are closed-form for right-censored rows and importance-sampled
//! otherwise; the M-step is least squares on the expected log-times.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Event, Observation, Transition};
use crate::dist::{self, Family, LinearPredictor, Truncated, DEFAULT_MASS_FLOOR};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{parameter_names, AftParams, Design, ModelSpec};
use crate::modelsel;
use crate::quadrature::Tolerance;
use crate::rng::{self, Domain, StreamRng};
use crate::special::inverse_mills;

const LN: Family = Family::Lognormal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Importance samples per observation in the approximate phase.
    pub m_pilot: usize,
    /// Importance samples per observation in the refining phase.
    pub m_refine: usize,
    pub tol_pilot: f64,
    pub tol_refine: f64,
    /// Iteration cap per phase.
    pub max_iter: usize,
    pub n_starts: usize,
    /// Redraws of a start whose log-likelihood is not finite.
    pub init_retries: usize,
    pub execution: Execution,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            m_pilot: 100,
            m_refine: 20_000,
            tol_pilot: 1e-4,
            tol_refine: 1e-5,
            max_iter: 1_000,
            n_starts: 5,
            init_retries: 20,
            execution: Execution::default(),
        }
    }
}

impl EmConfig {
    /// The lighter refining phase used in simulation studies.
    pub fn simulation() -> Self {
        Self {
            m_refine: 5_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_pilot < 2 || self.m_refine < 2 {
            return Err(Error::Config("importance sample sizes must be at least 2".into()));
        }
        if !(self.tol_pilot > 0.0 && self.tol_refine > 0.0) {
            return Err(Error::Config("convergence limits must be positive".into()));
        }
        if self.max_iter == 0 || self.n_starts == 0 {
            return Err(Error::Config("max_iter and n_starts must be positive".into()));
        }
        Ok(())
    }
}

/// Conditional moments of the log-times: `E[ln x]`, `E[(ln x)²]`, `E[ln t]`, `E[(ln t)²]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub x1: f64,
    pub x2: f64,
    pub t1: f64,
    pub t2: f64,
}

/// Importance-sampled moments with Monte Carlo standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsEstimate {
    pub moments: Moments,
    pub se: Moments,
    /// Kish effective sample sizes of the x and t weights.
    pub ess_x: f64,
    pub ess_t: f64,
}

/// Closed-form moments for a right-censored row (`x > l`, `t` unconstrained).
pub fn e_step_closed(lx: LinearPredictor, lt: LinearPredictor, l: f64) -> Result<Moments> {
    lx.check(LN)?;
    lt.check(LN)?;
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::Domain(format!("l must be finite and nonnegative, got {l}")));
    }
    Ok(closed_unchecked(lx, lt, l))
}

fn closed_unchecked(lx: LinearPredictor, lt: LinearPredictor, l: f64) -> Moments {
    let (mu, s) = (lx.location, lx.scale);
    let (x1, x2) = if l > 0.0 {
        let ll = l.ln();
        let psi = inverse_mills((ll - mu) / s);
        (mu + s * psi, mu * mu + s * s + s * (ll + mu) * psi)
    } else {
        (mu, mu * mu + s * s)
    };
    Moments {
        x1,
        x2,
        t1: lt.location,
        t2: lt.location * lt.location + lt.scale * lt.scale,
    }
}

/// Self-normalized importance estimates of the conditional moments.
///
/// Proposals are the normal laws of `ln x` and `ln t` truncated to the
/// observation's support of that variable alone: `(ln l, ln r)` for `x`,
/// all of ℝ for `t` at δ=2 and `(−∞, ln(r − l))` at δ=3. The weights are the
/// probability that the other time completes the observed event.
pub fn e_step_is(
    lx: LinearPredictor,
    lt: LinearPredictor,
    obs: &Observation,
    m: usize,
    rng: &mut StreamRng,
) -> Result<IsEstimate> {
    lx.check(LN)?;
    lt.check(LN)?;
    obs.check().map_err(Error::Domain)?;
    if m < 2 {
        return Err(Error::Config("at least 2 importance samples are needed".into()));
    }
    is_unchecked(lx, lt, obs.delta, obs.l, obs.r, m, rng)
}

fn is_unchecked(
    lx: LinearPredictor,
    lt: LinearPredictor,
    delta: Event,
    l: f64,
    r: f64,
    m: usize,
    rng: &mut StreamRng,
) -> Result<IsEstimate> {
    let mut s = vec![0.0; m];
    let mut lw = vec![0.0; m];

    let x_upper = if delta == Event::RightCensored { f64::INFINITY } else { r };
    let proposal = Truncated::new(LN, lx, l, x_upper, DEFAULT_MASS_FLOOR)?;
    for j in 0..m {
        let x = proposal.sample(rng.sample(Open01))?;
        s[j] = x.ln();
        lw[j] = match delta {
            Event::RightCensored => 0.0,
            Event::Intermediate => LN.error_ln_sf(lt.standardize(r - x)),
            Event::Advanced => LN.error_ln_cdf(lt.standardize(r - x)),
        };
    }
    let (x1, x2, se_x1, se_x2, ess_x) = weighted_moments(&s, &lw)?;

    let t_upper = if delta == Event::Advanced { r - l } else { f64::INFINITY };
    let proposal = Truncated::new(LN, lt, 0.0, t_upper, DEFAULT_MASS_FLOOR)?;
    for j in 0..m {
        let t = proposal.sample(rng.sample(Open01))?;
        s[j] = t.ln();
        lw[j] = match delta {
            Event::RightCensored => 0.0,
            Event::Intermediate => dist::log_interval_mass_unchecked(LN, lx, l.max(r - t), r),
            Event::Advanced => dist::log_interval_mass_unchecked(LN, lx, l, r - t),
        };
    }
    let (t1, t2, se_t1, se_t2, ess_t) = weighted_moments(&s, &lw)?;

    Ok(IsEstimate {
        moments: Moments { x1, x2, t1, t2 },
        se: Moments {
            x1: se_x1,
            x2: se_x2,
            t1: se_t1,
            t2: se_t2,
        },
        ess_x,
        ess_t,
    })
}

/// Weighted first and second moments of `s` with log-weights `lw`, their
/// delta-method standard errors and the Kish effective sample size.
fn weighted_moments(s: &[f64], lw: &[f64]) -> Result<(f64, f64, f64, f64, f64)> {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateProposal { observation: None });
    }
    let (mut sw, mut sw2, mut m1, mut m2) = (0.0, 0.0, 0.0, 0.0);
    for (&v, &l) in s.iter().zip(lw) {
        let w = (l - max).exp();
        sw += w;
        sw2 += w * w;
        m1 += w * v;
        m2 += w * v * v;
    }
    m1 /= sw;
    m2 /= sw;
    let (mut v1, mut v2) = (0.0, 0.0);
    for (&v, &l) in s.iter().zip(lw) {
        let w = (l - max).exp() / sw;
        v1 += w * w * (v - m1).powi(2);
        v2 += w * w * (v * v - m2).powi(2);
    }
    Ok((m1, m2, v1.sqrt(), v2.sqrt(), sw * sw / sw2))
}

/// Least-squares update: `β = (Z'Z)⁻¹Z'E[ln v]` and
/// `σ² = mean(E[(ln v)²] − 2E[ln v]·z'β + (z'β)²)` with the updated β.
pub fn m_step(moments: &[Moments], design: &Design) -> Result<AftParams> {
    if moments.len() != design.n || design.n == 0 {
        return Err(Error::Config(format!(
            "{} moment rows for {} observations",
            moments.len(),
            design.n
        )));
    }
    let (beta_x, sigma_x) = least_squares(design, Transition::X, moments.iter().map(|m| (m.x1, m.x2)))?;
    let (beta_t, sigma_t) = least_squares(design, Transition::T, moments.iter().map(|m| (m.t1, m.t2)))?;
    Ok(AftParams::new(beta_x, sigma_x, beta_t, sigma_t))
}

fn least_squares(
    design: &Design,
    tr: Transition,
    moments: impl Iterator<Item = (f64, f64)> + Clone,
) -> Result<(Vec<f64>, f64)> {
    let p = match tr {
        Transition::X => design.px,
        Transition::T => design.pt,
    };
    let n = design.n;
    let mut ztz = DMatrix::<f64>::zeros(p, p);
    let mut zty = DVector::<f64>::zeros(p);
    for (i, (m1, _)) in moments.clone().enumerate() {
        let z = design.row(tr, i);
        for a in 0..p {
            zty[a] += z[a] * m1;
            for b in 0..p {
                ztz[(a, b)] += z[a] * z[b];
            }
        }
    }
    let beta = ztz
        .cholesky()
        .ok_or_else(|| Error::Rank(tr.to_string()))?
        .solve(&zty);
    let beta: Vec<f64> = beta.iter().copied().collect();
    let mut ss = 0.0;
    for (i, (m1, m2)) in moments.enumerate() {
        let mu = design.location(tr, i, &beta);
        ss += m2 - 2.0 * m1 * mu + mu * mu;
    }
    let sigma = (ss / n as f64).sqrt();
    if !(sigma > 0.0 && sigma.is_finite() && beta.iter().all(|b| b.is_finite())) {
        return Err(Error::Domain(format!("M-step produced σ = {sigma} for the {tr} model")));
    }
    Ok((beta, sigma))
}

/// One E-step over the dataset. Importance draws for observation `i` come
/// from a stream keyed by `(seed, i, tag)`, so repeated calls with the same
/// tag reuse the same uniforms (common random numbers).
pub fn e_step(
    params: &AftParams,
    data: &Dataset,
    design: &Design,
    m: usize,
    seed: u64,
    tag: u64,
    exec: Execution,
) -> Result<Vec<Moments>> {
    exec.try_map(data.len(), |i| {
        let o = &data.observations[i];
        let lx = design.predictor(Transition::X, i, params);
        let lt = design.predictor(Transition::T, i, params);
        match o.delta {
            Event::RightCensored => Ok(closed_unchecked(lx, lt, o.l)),
            _ => {
                let mut rng = rng::substream(seed, Domain::EmImportance, i as u64, tag);
                is_unchecked(lx, lt, o.delta, o.l, o.r, m, &mut rng)
                    .map(|e| e.moments)
                    .map_err(|e| e.with_observation(i))
            }
        }
    })
}

/// Outcome of one EM start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub start: usize,
    pub initial: AftParams,
    pub params: AftParams,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Iterations spent in the approximate and refining phases.
    pub phase_iterations: [usize; 2],
    /// Observed-data log-likelihood after every iteration, both phases.
    pub trajectory: Vec<f64>,
}

/// Best start and the full per-start table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub param_names: Vec<String>,
    pub seed: u64,
    pub config: EmConfig,
    pub best: usize,
    pub starts: Vec<EmResult>,
}

impl EmFit {
    pub fn best(&self) -> &EmResult {
        &self.starts[self.best]
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

fn observed_loglik(params: &AftParams, data: &Dataset) -> Result<f64> {
    let row = modelsel::loglik_row(ModelSpec::new(LN, LN), params, data, &Tolerance::default())?;
    let bad: Vec<usize> = (0..row.len()).filter(|&i| !row[i].is_finite()).collect();
    if bad.is_empty() {
        Ok(row.iter().sum())
    } else {
        Err(Error::UndefinedCriterion(bad))
    }
}

/// Dispersed start around crude data summaries: the x intercept near the mean
/// log right endpoint of detected rows, the t intercept near the mean log
/// interval width, slopes near 0 and scales in (0.2, 2).
fn random_start(data: &Dataset, design: &Design, rng: &mut StreamRng) -> AftParams {
    let detected: Vec<&Observation> = data.observations.iter().filter(|o| o.delta.is_detected()).collect();
    let mean_ln = |f: &dyn Fn(&Observation) -> f64| {
        detected.iter().map(|o| f(o).max(1e-3).ln()).sum::<f64>() / detected.len().max(1) as f64
    };
    let cx = mean_ln(&|o| o.r);
    let ct = mean_ln(&|o| o.r - o.l);
    let mut draw = |centre: f64, p: usize| -> (Vec<f64>, f64) {
        let mut beta = Vec::with_capacity(p);
        beta.push(centre + rng.sample::<f64, _>(StandardNormal));
        for _ in 1..p {
            beta.push(0.5 * rng.sample::<f64, _>(StandardNormal));
        }
        (beta, rng.random_range(0.2..2.0))
    };
    let (bx, sx) = draw(cx, design.px);
    let (bt, st) = draw(ct, design.pt);
    AftParams::new(bx, sx, bt, st)
}

struct Phase {
    m: usize,
    tol: f64,
}

fn iterate(
    params: &mut AftParams,
    loglik: &mut f64,
    data: &Dataset,
    design: &Design,
    phase: &Phase,
    config: &EmConfig,
    seed: u64,
    tag: u64,
    trajectory: &mut Vec<f64>,
) -> Result<(usize, bool)> {
    for it in 1..=config.max_iter {
        let moments = e_step(params, data, design, phase.m, seed, tag, config.execution)?;
        *params = m_step(&moments, design)?;
        let next = observed_loglik(params, data)?;
        trajectory.push(next);
        let change = (next - *loglik).abs();
        log::debug!("EM start {} phase {} iteration {it}: log-likelihood {next:.6}", tag >> 1, tag & 1);
        *loglik = next;
        if change < phase.tol {
            return Ok((it, true));
        }
    }
    Ok((config.max_iter, false))
}

fn run_start(data: &Dataset, design: &Design, config: &EmConfig, seed: u64, start: usize) -> Result<EmResult> {
    let mut rng = rng::stream(seed, Domain::EmStart, start as u64);
    let mut init = None;
    for _ in 0..=config.init_retries {
        let p = random_start(data, design, &mut rng);
        if let Ok(ll) = observed_loglik(&p, data) {
            init = Some((p, ll));
            break;
        }
    }
    let (initial, mut loglik) = init.ok_or_else(|| {
        Error::Config(format!("no start with a finite log-likelihood after {} draws", config.init_retries + 1))
    })?;
    let mut params = initial.clone();
    let mut trajectory = Vec::new();
    let tag = (start as u64) << 1;
    let pilot = Phase {
        m: config.m_pilot,
        tol: config.tol_pilot,
    };
    let (it1, _) = iterate(&mut params, &mut loglik, data, design, &pilot, config, seed, tag, &mut trajectory)?;
    let refine = Phase {
        m: config.m_refine,
        tol: config.tol_refine,
    };
    let (it2, converged) =
        iterate(&mut params, &mut loglik, data, design, &refine, config, seed, tag | 1, &mut trajectory)?;
    Ok(EmResult {
        start,
        initial,
        params,
        loglik,
        converged,
        iterations: it1 + it2,
        phase_iterations: [it1, it2],
        trajectory,
    })
}

/// Multi-start EM; returns every start and marks the one with the largest
/// final log-likelihood.
pub fn run_em(data: &Dataset, config: &EmConfig, seed: u64) -> Result<EmFit> {
    config.validate()?;
    data.check_fit_ready()?;
    let design = Design::new(data);
    let starts = config
        .execution
        .try_map(config.n_starts, |s| run_start(data, &design, config, seed, s))?;
    let best = (0..starts.len())
        .max_by(|&a, &b| starts[a].loglik.total_cmp(&starts[b].loglik).then(b.cmp(&a)))
        .expect("at least one start");
    Ok(EmFit {
        param_names: parameter_names(data),
        seed,
        config: config.clone(),
        best,
        starts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn lp(mu: f64, s: f64) -> LinearPredictor {
        LinearPredictor::new(mu, s)
    }

    #[test]
    fn closed_form_without_truncation() {
        let m = e_step_closed(lp(1.5, 0.4), lp(-0.3, 0.8), 0.0).unwrap();
        assert_eq!((m.x1, m.x2), (1.5, 1.5 * 1.5 + 0.16));
        assert_eq!(m.t1, -0.3);
        assert!((m.t2 - 0.73).abs() < 1e-15);
        let far = e_step_closed(lp(1.5, 0.4), lp(0.0, 1.0), 1e-30).unwrap();
        assert!((far.x1 - 1.5).abs() < 1e-12 && (far.x2 - 2.41).abs() < 1e-12);
    }

    #[test]
    fn closed_form_at_the_median_is_the_half_normal_mean() {
        let m = e_step_closed(lp(0.0, 1.0), lp(0.0, 1.0), 1.0).unwrap();
        assert!((m.x1 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((m.x2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn m_step_hand_instance() {
        // log-times 1, 2, 4 at z = 0, 1, 2: β = (5/6, 3/2), residuals (1/6, −1/3, 1/6)
        let obs: Vec<Observation> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&z| Observation::new(vec![z], Event::Advanced, 0.0, 1.0))
            .collect();
        let data = Dataset::new(obs, vec!["z".into()]).unwrap();
        let design = Design::new(&data);
        let moments: Vec<Moments> = [1.0f64, 2.0, 4.0]
            .iter()
            .map(|&v| Moments {
                x1: v,
                x2: v * v,
                t1: 0.5 * v,
                t2: 0.25 * v * v + 0.1,
            })
            .collect();
        let p = m_step(&moments, &design).unwrap();
        assert!((p.x.beta[0] - 5.0 / 6.0).abs() < 1e-12 && (p.x.beta[1] - 1.5).abs() < 1e-12);
        let sigma = ((1.0 / 36.0 + 1.0 / 9.0 + 1.0 / 36.0) / 3.0f64).sqrt();
        assert!((p.x.sigma - sigma).abs() < 1e-12);
        assert!((p.t.beta[0] - 5.0 / 12.0).abs() < 1e-12 && (p.t.beta[1] - 0.75).abs() < 1e-12);
        assert!((p.t.sigma - (0.25 * sigma * sigma + 0.1).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn m_step_intercept_only() {
        let obs = vec![Observation::new(vec![], Event::Advanced, 0.0, 1.0); 4];
        let data = Dataset::new(obs, vec![]).unwrap();
        let design = Design::new(&data);
        let moments: Vec<Moments> = (0..4)
            .map(|i| Moments {
                x1: 2.0,
                x2: 4.0 + 0.1 * i as f64,
                t1: -1.0,
                t2: 1.5,
            })
            .collect();
        let p = m_step(&moments, &design).unwrap();
        assert!((p.x.beta[0] - 2.0).abs() < 1e-12);
        assert!((p.x.sigma - 0.15f64.sqrt()).abs() < 1e-12);
        assert!((p.t.sigma - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn collinear_design_is_a_rank_error() {
        let obs = vec![Observation::new(vec![1.0], Event::Advanced, 0.0, 1.0); 3];
        let data = Dataset::with_designs(obs, vec!["c".into()], vec![], vec![0]).unwrap();
        let design = Design::new(&data);
        let m = Moments {
            x1: 0.0,
            x2: 1.0,
            t1: 0.0,
            t2: 1.0,
        };
        let err = m_step(&[m; 3], &design).unwrap_err();
        assert!(matches!(err, Error::Rank(ref d) if d == "t"), "{err}");
    }

    #[test]
    fn vanished_weights_name_the_observation() {
        let err = weighted_moments(&[1.0, 2.0], &[f64::NEG_INFINITY; 2]).unwrap_err();
        assert!(matches!(err.with_observation(7), Error::DegenerateProposal { observation: Some(7) }));
    }

    #[test]
    fn importance_estimate_is_reproducible_from_its_stream() {
        let obs = Observation::new(vec![], Event::Intermediate, 1.0, 3.0);
        let a = e_step_is(lp(0.5, 0.6), lp(0.2, 0.9), &obs, 500, &mut stream(4, Domain::EmImportance, 0)).unwrap();
        let b = e_step_is(lp(0.5, 0.6), lp(0.2, 0.9), &obs, 500, &mut stream(4, Domain::EmImportance, 0)).unwrap();
        assert_eq!(a.moments, b.moments);
        assert!(a.ess_x > 1.0 && a.ess_x <= 500.0);
    }
}
