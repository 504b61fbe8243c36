//! Observed-data likelihood and the information criteria DIC, WAIC-1, WAIC-2.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Event, Observation, Transition};
use crate::dist::{self, Family, LinearPredictor};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gibbs::PosteriorDraws;
use crate::model::{AftParams, Design, ModelSpec};
use crate::quadrature::{integrate_panels, Tolerance};
use crate::special::log_mean_exp;

/// Interval masses below this switch to integration over the standardized error.
const LN_MIN_MAPPED_MASS: f64 = -644.7; // ln 1e-280
const ERROR_SPACE_GRID: usize = 256;

/// Log-likelihood contribution of one observation:
/// δ=1 `ln(1 − F_x(l))`, δ=2 `ln ∫ₗʳ f_x(x)(1 − F_t(r − x))dx`,
/// δ=3 `ln ∫ₗʳ f_x(x)F_t(r − x)dx`.
///
/// Returns `−∞` when the contribution underflows to zero.
pub fn obs_loglik(
    spec: ModelSpec,
    lx: LinearPredictor,
    lt: LinearPredictor,
    obs: &Observation,
    tol: &Tolerance,
) -> Result<f64> {
    lx.check(spec.x)?;
    lt.check(spec.t)?;
    obs.check().map_err(Error::Domain)?;
    Ok(obs_loglik_unchecked(spec, lx, lt, obs.delta, obs.l, obs.r, tol))
}

pub(crate) fn obs_loglik_unchecked(
    spec: ModelSpec,
    lx: LinearPredictor,
    lt: LinearPredictor,
    delta: Event,
    l: f64,
    r: f64,
    tol: &Tolerance,
) -> f64 {
    match delta {
        Event::RightCensored => spec.x.error_ln_sf(lx.standardize(l)),
        Event::Intermediate | Event::Advanced => interval_loglik(spec, lx, lt, delta, l, r, tol),
    }
}

fn interval_loglik(
    spec: ModelSpec,
    lx: LinearPredictor,
    lt: LinearPredictor,
    delta: Event,
    l: f64,
    r: f64,
    tol: &Tolerance,
) -> f64 {
    let ft = spec.t;
    let ln_g = |x: f64| {
        let e = lt.standardize(r - x);
        if delta == Event::Intermediate {
            ft.error_ln_sf(e)
        } else {
            ft.error_ln_cdf(e)
        }
    };
    // g is increasing in x for δ=2 (g(r) = 1) and decreasing for δ=3
    let shift = if delta == Event::Intermediate { 0.0 } else { ln_g(l) };
    if shift == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let log_mass = dist::log_interval_mass_unchecked(spec.x, lx, l, r);
    if !(log_mass > LN_MIN_MAPPED_MASS) {
        return error_space_loglik(spec.x, lx, &ln_g, l, r, tol);
    }

    // x(u) maps (0, 1) onto (l, r) by the truncated inverse CDF, so
    // ∫ f_x g dx = mass · ∫₀¹ g(x(u)) du.
    let map = match dist::Truncated::new(spec.x, lx, l, r, 0.0) {
        Ok(m) => m,
        Err(_) => return error_space_loglik(spec.x, lx, &ln_g, l, r, tol),
    };
    let mut failed = false;
    let value = {
        let mut f = |u: f64| match map.sample(u) {
            Ok(x) => (ln_g(x) - shift).exp(),
            Err(_) => {
                failed = true;
                0.0
            }
        };
        integrate_relative(&mut f, &u_breaks(spec, lx, lt, l, r, log_mass), tol)
    };
    if failed || !(value > 0.0) {
        return error_space_loglik(spec.x, lx, &ln_g, l, r, tol);
    }
    log_mass + shift + value.ln()
}

/// Panel breaks in the mapped variable where `r − x` crosses quantiles of
/// `t`, out to deep tail probabilities. When `t` is short relative to
/// `r − l`, the factor `g` changes only in a thin slice near `u = 1` and a
/// panel holding a small part of that change can pass its error test.
fn u_breaks(spec: ModelSpec, lx: LinearPredictor, lt: LinearPredictor, l: f64, r: f64, log_mass: f64) -> Vec<f64> {
    let mut breaks = vec![0.0];
    let upper = [1e-12, 1e-9, 1e-6, 1e-3, 1e-2, 0.1, 0.5].map(|q| spec.t.error_isf(q));
    let lower = [0.1, 1e-2, 1e-3, 1e-6].map(|p| spec.t.error_ppf(p));
    for e in upper.into_iter().chain(lower) {
        let x = r - lt.time(e);
        if x > l && x < r {
            let u = (dist::log_interval_mass_unchecked(spec.x, lx, l, x) - log_mass).exp();
            if u > breaks[breaks.len() - 1] && u < 1.0 {
                breaks.push(u);
            }
        }
    }
    breaks.push(1.0);
    breaks
}

/// Integrates with the absolute tolerance scaled down to the integral's size
/// when the integral is small.
fn integrate_relative<F: FnMut(f64) -> f64>(f: &mut F, breaks: &[f64], tol: &Tolerance) -> f64 {
    let first = integrate_panels(f, breaks, *tol);
    let v = first.value;
    if v > 0.0 && tol.abs > tol.rel * v {
        let scaled = Tolerance {
            abs: tol.abs * v.min(1.0),
            ..*tol
        };
        integrate_panels(f, breaks, scaled).value
    } else {
        v
    }
}

/// `ln ∫ f_x(x) g(x) dx` on `(l, r)` computed over the standardized error
/// `e = (ln x − μ)/σ`, shifted by the largest integrand value on a grid.
fn error_space_loglik(
    fx: Family,
    lx: LinearPredictor,
    ln_g: &dyn Fn(f64) -> f64,
    l: f64,
    r: f64,
    tol: &Tolerance,
) -> f64 {
    let eb = lx.standardize(r);
    let ea = lx.standardize(l).max(eb - 800.0);
    if !(eb > ea) {
        return f64::NEG_INFINITY;
    }
    let h = |e: f64| fx.error_ln_pdf(e) + ln_g(lx.time(e).clamp(l, r));
    let grid: Vec<f64> = (0..=ERROR_SPACE_GRID)
        .map(|k| ea + (eb - ea) * k as f64 / ERROR_SPACE_GRID as f64)
        .collect();
    let peak = grid.iter().map(|&e| h(e)).fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut f = |e: f64| {
        let v = h(e) - peak;
        if v.is_nan() {
            0.0
        } else {
            v.exp()
        }
    };
    let mut coarse = Tolerance {
        max_subdivisions: tol.max_subdivisions.max(2 * ERROR_SPACE_GRID),
        ..*tol
    };
    coarse.abs *= eb - ea;
    let value = integrate_relative(&mut f, &grid, &coarse);
    if value > 0.0 {
        peak + value.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Per-observation log-likelihoods of the whole dataset at one parameter set.
pub fn loglik_row(spec: ModelSpec, params: &AftParams, data: &Dataset, tol: &Tolerance) -> Result<Vec<f64>> {
    params.check(&spec, data)?;
    Ok(row_unchecked(spec, params, data, &Design::new(data), tol))
}

fn row_unchecked(spec: ModelSpec, params: &AftParams, data: &Dataset, design: &Design, tol: &Tolerance) -> Vec<f64> {
    data.observations
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let lx = design.predictor(Transition::X, i, params);
            let lt = design.predictor(Transition::T, i, params);
            obs_loglik_unchecked(spec, lx, lt, o.delta, o.l, o.r, tol)
        })
        .collect()
}

/// Observed-data log-likelihood `Σᵢ ln Lᵢ`.
pub fn observed_loglik(spec: ModelSpec, params: &AftParams, data: &Dataset, tol: &Tolerance) -> Result<f64> {
    Ok(loglik_row(spec, params, data, tol)?.iter().sum())
}

/// `K × n` matrix of per-observation log-likelihoods, one row per posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseLik {
    k: usize,
    n: usize,
    values: Vec<f64>,
}

impl PointwiseLik {
    /// Builds the matrix from row-major log-likelihood values.
    pub fn new(k: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 || values.len() != k * n {
            return Err(Error::Config(format!(
                "pointwise matrix needs k ≥ 1 and k·n = {} values, got k = {k}, {} values",
                k * n,
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan() || *v > 0.0 && v.is_infinite()) {
            return Err(Error::Domain("pointwise log-likelihoods must be < +∞ and not NaN".into()));
        }
        Ok(Self { k, n, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config("pointwise rows differ in length".into()));
        }
        Self::new(k, n, rows.concat())
    }

    pub fn n_draws(&self) -> usize {
        self.k
    }

    pub fn n_observations(&self) -> usize {
        self.n
    }

    pub fn get(&self, draw: usize, obs: usize) -> f64 {
        self.values[draw * self.n + obs]
    }

    pub fn row(&self, draw: usize) -> &[f64] {
        &self.values[draw * self.n..(draw + 1) * self.n]
    }

    pub fn column(&self, obs: usize) -> Vec<f64> {
        (0..self.k).map(|d| self.get(d, obs)).collect()
    }

    /// Observations with a `−∞` entry in any draw.
    pub fn non_finite_observations(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| (0..self.k).any(|d| !self.get(d, i).is_finite()))
            .collect()
    }

    /// Reorders observations: column `j` of the result is column `order[j]`.
    pub fn permute_observations(&self, order: &[usize]) -> Self {
        let values = (0..self.k)
            .flat_map(|d| order.iter().map(move |&i| (d, i)))
            .map(|(d, i)| self.get(d, i))
            .collect();
        Self {
            k: self.k,
            n: order.len(),
            values,
        }
    }

    fn require_finite(&self) -> Result<()> {
        let bad = self.non_finite_observations();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::UndefinedCriterion(bad))
        }
    }
}

/// Evaluates every (draw, observation) cell, in parallel over draws.
pub fn pointwise(
    draws: &[AftParams],
    spec: ModelSpec,
    data: &Dataset,
    tol: &Tolerance,
    exec: Execution,
) -> Result<PointwiseLik> {
    for p in draws {
        p.check(&spec, data)?;
    }
    let design = Design::new(data);
    let rows = exec.map(draws.len(), |k| row_unchecked(spec, &draws[k], data, &design, tol));
    PointwiseLik::new(draws.len(), data.len(), rows.concat())
}

/// `DIC = 2[ln L(θ̄) − 2·E(ln L)]`, with `ln L(θ̄)` given per observation.
pub fn dic(pw: &PointwiseLik, at_mean: &[f64]) -> Result<f64> {
    pw.require_finite()?;
    if at_mean.len() != pw.n {
        return Err(Error::Config(format!(
            "{} plug-in values for {} observations",
            at_mean.len(),
            pw.n
        )));
    }
    let bad: Vec<usize> = (0..pw.n).filter(|&i| !at_mean[i].is_finite()).collect();
    if !bad.is_empty() {
        return Err(Error::UndefinedCriterion(bad));
    }
    let plug_in: f64 = at_mean.iter().sum();
    let expected: f64 = (0..pw.n).map(|i| mean(&pw.column(i))).sum();
    Ok(2.0 * (plug_in - 2.0 * expected))
}

/// `WAIC-1 = −2 Σᵢ[−ln E(Lᵢ) + 2·E(ln Lᵢ)]`.
pub fn waic1(pw: &PointwiseLik) -> Result<f64> {
    pw.require_finite()?;
    let mut total = 0.0;
    for i in 0..pw.n {
        let c = pw.column(i);
        total += -log_mean_exp(&c) + 2.0 * mean(&c);
    }
    Ok(-2.0 * total)
}

/// `WAIC-2 = −2 Σᵢ[ln E(Lᵢ) − V(ln Lᵢ)]`, with the `K − 1` sample variance.
pub fn waic2(pw: &PointwiseLik) -> Result<f64> {
    pw.require_finite()?;
    if pw.k < 2 {
        return Err(Error::Config("WAIC-2 needs at least 2 draws".into()));
    }
    let mut total = 0.0;
    for i in 0..pw.n {
        let c = pw.column(i);
        let m = mean(&c);
        let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (pw.k - 1) as f64;
        total += log_mean_exp(&c) - var;
    }
    Ok(-2.0 * total)
}

pub fn waic(pw: &PointwiseLik) -> Result<(f64, f64)> {
    Ok((waic1(pw)?, waic2(pw)?))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriteriaConfig {
    /// Posterior draws `K` used for the pointwise matrix (evenly thinned).
    pub draws: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        let t = Tolerance::default();
        Self {
            draws: 2_000,
            abs_tol: t.abs,
            rel_tol: t.rel,
            max_subdivisions: t.max_subdivisions,
        }
    }
}

impl CriteriaConfig {
    pub fn tolerance(&self) -> Tolerance {
        Tolerance {
            abs: self.abs_tol,
            rel: self.rel_tol,
            max_subdivisions: self.max_subdivisions,
        }
    }
}

/// One line of the criteria table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub model: ModelSpec,
    pub waic1: f64,
    pub waic2: f64,
    pub dic: f64,
    /// Posterior draws in the pointwise matrix.
    pub draws_used: usize,
    /// Total sampler draws over all chains, discarded halves included.
    pub total_draws: usize,
    pub converged: bool,
}

/// Computes all three criteria for a fitted model.
pub fn criteria(posterior: &PosteriorDraws, data: &Dataset, config: &CriteriaConfig, exec: Execution) -> Result<Criteria> {
    let tol = config.tolerance();
    let thinned = posterior.thinned(config.draws);
    let pw = pointwise(&thinned, posterior.spec, data, &tol, exec)?;
    let at_mean = loglik_row(posterior.spec, &posterior.posterior_mean(), data, &tol)?;
    let (w1, w2) = waic(&pw)?;
    Ok(Criteria {
        model: posterior.spec,
        waic1: w1,
        waic2: w2,
        dic: dic(&pw, &at_mean)?,
        draws_used: pw.k,
        total_draws: posterior.total_draws * posterior.n_chains(),
        converged: posterior.converged,
    })
}

/// Criteria for several models, ordered by WAIC-1 (ties by model name).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CriteriaTable {
    pub rows: Vec<Criteria>,
}

impl CriteriaTable {
    pub fn new(mut rows: Vec<Criteria>) -> Self {
        rows.sort_by(|a, b| a.waic1.total_cmp(&b.waic1).then_with(|| a.model.name().cmp(&b.model.name())));
        Self { rows }
    }

    pub fn best(&self) -> Option<&Criteria> {
        self.rows.first()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<26} {:>12} {:>12} {:>12} {:>8} {:>12}",
            "Model", "WAIC-1", "WAIC-2", "DIC", "K", "Draws"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<26} {:>12.2} {:>12.2} {:>12.2} {:>8} {:>12}{}",
                r.model.name(),
                r.waic1,
                r.waic2,
                r.dic,
                r.draws_used,
                r.total_draws,
                if r.converged { "" } else { "  (not converged)" }
            );
        }
        s
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}
