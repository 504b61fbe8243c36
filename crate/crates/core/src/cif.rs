//! Posterior predictive cumulative incidence functions with pointwise
//! credible bands.
//!
//! Each posterior draw is pushed through the model to give one curve on the
//! grid; bands are pointwise quantiles across draws. Closed-form CDFs are used
//! for a fixed covariate vector; anything involving the empirical covariate
//! distribution or the total time `y = x + t` is a Monte Carlo proportion
//! over `J` simulated individuals per draw.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{design_row, Dataset, Transition};
use crate::diagnostics::quantile_sorted;
use crate::dist::{Family, LinearPredictor};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::gibbs::{PosteriorDraws, SensitivitySpec};
use crate::model::{dot, AftParams, Design, ModelSpec};
use crate::rng::{stream, Domain, StreamRng};
use crate::special::norm_ppf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    X,
    T,
    Y,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::X, Target::T, Target::Y];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::X => "x",
            Target::T => "t",
            Target::Y => "y",
        }
    }

    fn transition(self) -> Option<Transition> {
        match self {
            Target::X => Some(Transition::X),
            Target::T => Some(Transition::T),
            Target::Y => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Target::X),
            "t" => Ok(Target::T),
            "y" => Ok(Target::Y),
            other => Err(Error::Config(format!("unknown CIF target '{other}' (expected x, t or y)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CifConfig {
    pub grid_points: usize,
    /// Grid end as a multiple of the largest finite `r`.
    pub horizon_factor: f64,
    /// Monte Carlo individuals per posterior draw.
    pub mc_samples: usize,
    pub max_draws: usize,
    /// Lower, central and upper pointwise quantile levels.
    pub probs: [f64; 3],
    /// Normal-quantile nodes used to integrate out the confounder in
    /// closed-form curves.
    pub confounder_nodes: usize,
}

impl Default for CifConfig {
    fn default() -> Self {
        Self {
            grid_points: 200,
            horizon_factor: 1.25,
            mc_samples: 10_000,
            max_draws: 2_000,
            probs: [0.025, 0.5, 0.975],
            confounder_nodes: 64,
        }
    }
}

impl CifConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(Error::Config("grid_points must be at least 2".into()));
        }
        if !(self.horizon_factor > 0.0 && self.horizon_factor.is_finite()) {
            return Err(Error::Config("horizon_factor must be positive".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if self.max_draws == 0 {
            return Err(Error::Config("max_draws must be at least 1".into()));
        }
        let [a, b, c] = self.probs;
        if !(0.0 < a && a <= b && b <= c && c < 1.0) {
            return Err(Error::Config(format!("probs must satisfy 0 < lower ≤ median ≤ upper < 1, got {:?}", self.probs)));
        }
        if self.confounder_nodes == 0 {
            return Err(Error::Config("confounder_nodes must be at least 1".into()));
        }
        Ok(())
    }

    /// Evenly spaced grid from 0 to `horizon_factor` times the largest finite `r`.
    pub fn grid(&self, data: &Dataset) -> Result<Vec<f64>> {
        let max_r = data
            .max_finite_r()
            .ok_or_else(|| Error::Config("no finite r to set the CIF horizon".into()))?;
        Ok(linspace(0.0, self.horizon_factor * max_r, self.grid_points))
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Which covariate vectors the predictive individuals carry.
#[derive(Debug, Clone, Copy)]
pub enum Covariates<'a> {
    /// A single covariate vector in dataset column order.
    Fixed(&'a [f64]),
    /// Rows resampled with replacement from the dataset.
    Empirical,
}

/// Posterior draws together with the data they were fitted to.
#[derive(Debug, Clone)]
pub struct Predictive<'a> {
    pub spec: ModelSpec,
    pub data: &'a Dataset,
    pub draws: Vec<AftParams>,
    pub sensitivity: Option<SensitivitySpec>,
}

impl<'a> Predictive<'a> {
    pub fn new(spec: ModelSpec, data: &'a Dataset, draws: Vec<AftParams>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Config("no posterior draws for the CIF".into()));
        }
        for p in &draws {
            p.check(&spec, data)?;
        }
        Ok(Self { spec, data, draws, sensitivity: None })
    }

    /// At most `max_draws` evenly thinned draws of a fitted posterior.
    pub fn from_posterior(posterior: &PosteriorDraws, data: &'a Dataset, max_draws: usize) -> Result<Self> {
        let mut p = Self::new(posterior.spec, data, posterior.thinned(max_draws))?;
        p.sensitivity = posterior.sensitivity;
        Ok(p)
    }

    pub fn with_sensitivity(mut self, sensitivity: Option<SensitivitySpec>) -> Self {
        self.sensitivity = sensitivity;
        self
    }

    fn confounder_effect(&self, transition: Transition) -> f64 {
        match (self.sensitivity, transition) {
            (Some(s), Transition::X) => s.beta_xw,
            (Some(s), Transition::T) => s.beta_tw,
            (None, _) => 0.0,
        }
    }

    fn has_confounder(&self) -> bool {
        self.sensitivity.is_some_and(|s| s.beta_xw != 0.0 || s.beta_tw != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CifCurve {
    pub target: Target,
    pub model: String,
    /// Covariate vector for a conditional curve; `None` for a marginal one.
    pub conditioning: Option<Vec<f64>>,
    pub probs: [f64; 3],
    pub draws: usize,
    /// Monte Carlo individuals per draw, when the curve is simulated.
    pub mc_samples: Option<usize>,
    pub sensitivity: Option<SensitivitySpec>,
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CifCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Median curve linearly interpolated at `v`.
    pub fn median_at(&self, v: f64) -> f64 {
        interpolate(&self.grid, &self.median, v)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["grid", "lower", "median", "upper"])?;
        for i in 0..self.len() {
            w.write_record([self.grid[i], self.lower[i], self.median[i], self.upper[i]].map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Gnuplot script that draws the band and median from `csv_name`.
    pub fn gnuplot_script(&self, csv_name: &str, image_name: &str) -> String {
        let title = match &self.conditioning {
            Some(z) => format!("{} CIF of {} given z = {:?}", self.model, self.target, z),
            None => format!("{} marginal CIF of {}", self.model, self.target),
        };
        format!(
            "set terminal pngcairo size 800,500\n\
             set output '{image_name}'\n\
             set datafile separator ','\n\
             set key top left\n\
             set xlabel 'years'\n\
             set ylabel 'cumulative incidence'\n\
             set yrange [0:1]\n\
             set title '{title}'\n\
             plot '{csv_name}' skip 1 using 1:2:4 with filledcurves fs transparent solid 0.3 title '{:.1}% band', \\\n\
             \x20    '{csv_name}' skip 1 using 1:3 with lines lw 2 title 'median'\n",
            100.0 * (self.probs[2] - self.probs[0])
        )
    }

    pub fn write_gnuplot(&self, path: impl AsRef<Path>, csv_name: &str, image_name: &str) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.gnuplot_script(csv_name, image_name)).map_err(|e| Error::io(path, e))
    }
}

fn interpolate(grid: &[f64], values: &[f64], v: f64) -> f64 {
    let i = grid.partition_point(|&g| g <= v);
    if i == 0 {
        return values[0];
    }
    if i == grid.len() {
        return values[grid.len() - 1];
    }
    let (g0, g1) = (grid[i - 1], grid[i]);
    values[i - 1] + (values[i] - values[i - 1]) * (v - g0) / (g1 - g0)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty CIF grid".into()));
    }
    if grid.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::Config("CIF grid points must be finite and non-negative".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("CIF grid must be strictly increasing".into()));
    }
    Ok(())
}

fn check_covariates(data: &Dataset, covariates: Covariates) -> Result<()> {
    match covariates {
        Covariates::Fixed(z) if z.len() != data.n_covariates() => Err(Error::Config(format!(
            "conditioning vector has {} entries but the dataset has {} covariates",
            z.len(),
            data.n_covariates()
        ))),
        Covariates::Empirical if data.is_empty() => Err(Error::Config("empty covariate table".into())),
        _ => Ok(()),
    }
}

/// Pointwise quantile bands over per-draw curves (`curves[k][g]`).
fn bands(curves: &[Vec<f64>], grid_len: usize, probs: [f64; 3]) -> [Vec<f64>; 3] {
    let mut out: [Vec<f64>; 3] = Default::default();
    let mut column = vec![0.0; curves.len()];
    for g in 0..grid_len {
        for (c, curve) in column.iter_mut().zip(curves) {
            *c = curve[g];
        }
        column.sort_by(f64::total_cmp);
        for (o, p) in out.iter_mut().zip(probs) {
            o.push(quantile_sorted(&column, p));
        }
    }
    // guard against rounding in the interpolation
    for o in &mut out {
        let mut run = 0.0f64;
        for v in o.iter_mut() {
            run = run.max(v.clamp(0.0, 1.0));
            *v = run;
        }
    }
    out
}

fn finish(
    p: &Predictive,
    target: Target,
    covariates: Covariates,
    grid: &[f64],
    config: &CifConfig,
    curves: Vec<Vec<f64>>,
    mc_samples: Option<usize>,
) -> CifCurve {
    let [lower, median, upper] = bands(&curves, grid.len(), config.probs);
    CifCurve {
        target,
        model: p.spec.name(),
        conditioning: match covariates {
            Covariates::Fixed(z) => Some(z.to_vec()),
            Covariates::Empirical => None,
        },
        probs: config.probs,
        draws: curves.len(),
        mc_samples,
        sensitivity: p.sensitivity,
        grid: grid.to_vec(),
        lower,
        median,
        upper,
    }
}

/// CIF of `x` or `t` at a fixed covariate vector, evaluated in closed form
/// for every draw.
pub fn conditional_cif(
    p: &Predictive,
    target: Target,
    z: &[f64],
    grid: &[f64],
    config: &CifConfig,
    exec: Execution,
) -> Result<CifCurve> {
    config.validate()?;
    check_grid(grid)?;
    check_covariates(p.data, Covariates::Fixed(z))?;
    let Some(tr) = target.transition() else {
        return Err(Error::Config(
            "the total time has no closed-form CIF; use total_cif with fixed covariates".into(),
        ));
    };
    let family = p.spec.family(tr);
    let row = design_row(z, p.data.design(tr));
    let gamma = p.confounder_effect(tr);
    let nodes: Vec<f64> = if gamma != 0.0 {
        let m = config.confounder_nodes;
        (0..m).map(|i| norm_ppf((i as f64 + 0.5) / m as f64)).collect()
    } else {
        vec![0.0]
    };
    let curves = exec.map(p.draws.len(), |k| {
        let tp = p.draws[k].get(tr);
        let base = dot(&row, &tp.beta);
        let lps: Vec<LinearPredictor> = nodes.iter().map(|w| LinearPredictor::new(base + gamma * w, tp.sigma)).collect();
        grid.iter()
            .map(|&g| lps.iter().map(|lp| closed_cdf(family, *lp, g)).sum::<f64>() / lps.len() as f64)
            .collect()
    });
    Ok(finish(p, target, Covariates::Fixed(z), grid, config, curves, None))
}

fn closed_cdf(family: Family, lp: LinearPredictor, v: f64) -> f64 {
    family.error_cdf(lp.standardize(v))
}

/// CIF of `x` or `t` averaged over the empirical covariate distribution.
pub fn marginal_cif(
    p: &Predictive,
    target: Target,
    grid: &[f64],
    config: &CifConfig,
    seed: u64,
    exec: Execution,
) -> Result<CifCurve> {
    if target == Target::Y {
        return total_cif(p, Covariates::Empirical, grid, config, seed, exec);
    }
    simulate_cif(p, target, Covariates::Empirical, grid, config, seed, exec)
}

/// CIF of `y = x + t`; `x̃` and `t̃` share the covariate row (and the
/// confounder draw) of each simulated individual.
pub fn total_cif(
    p: &Predictive,
    covariates: Covariates,
    grid: &[f64],
    config: &CifConfig,
    seed: u64,
    exec: Execution,
) -> Result<CifCurve> {
    simulate_cif(p, Target::Y, covariates, grid, config, seed, exec)
}

/// Joint predictive draws `(x̃_j, t̃_j)` for posterior draw `k`. These are
/// the individuals behind every simulated curve with the same seed, so the
/// x, t and y curves are coupled.
pub fn predictive_sample(
    p: &Predictive,
    k: usize,
    covariates: Covariates,
    n: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    check_covariates(p.data, covariates)?;
    let design = Design::new(p.data);
    let mut rng = stream(seed, Domain::Cif, k as u64);
    Ok(Sampler::new(p, &design, covariates, k).draw(&mut rng, n))
}

struct Sampler<'p, 'a> {
    p: &'p Predictive<'a>,
    design: &'p Design,
    params: &'p AftParams,
    fixed: Option<(f64, f64)>,
}

impl<'p, 'a> Sampler<'p, 'a> {
    fn new(p: &'p Predictive<'a>, design: &'p Design, covariates: Covariates, k: usize) -> Self {
        let params = &p.draws[k];
        let fixed = match covariates {
            Covariates::Fixed(z) => Some((
                dot(&design_row(z, p.data.design(Transition::X)), &params.x.beta),
                dot(&design_row(z, p.data.design(Transition::T)), &params.t.beta),
            )),
            Covariates::Empirical => None,
        };
        Self { p, design, params, fixed }
    }

    fn draw(&self, rng: &mut StreamRng, n: usize) -> Vec<(f64, f64)> {
        let (fx, ft) = (self.p.spec.x, self.p.spec.t);
        let (gx, gt) = (self.p.confounder_effect(Transition::X), self.p.confounder_effect(Transition::T));
        let confounded = self.p.has_confounder();
        let rows = self.p.data.len();
        (0..n)
            .map(|_| {
                let (mx, mt) = match self.fixed {
                    Some(m) => m,
                    None => {
                        let i = rng.random_range(0..rows);
                        (
                            self.design.location(Transition::X, i, &self.params.x.beta),
                            self.design.location(Transition::T, i, &self.params.t.beta),
                        )
                    }
                };
                let w = if confounded { rng.sample::<f64, _>(rand_distr::StandardNormal) } else { 0.0 };
                let ex = fx.error_from_uniform(open_uniform(rng));
                let et = ft.error_from_uniform(open_uniform(rng));
                let x = LinearPredictor::new(mx + gx * w, self.params.x.sigma).time(ex);
                let t = LinearPredictor::new(mt + gt * w, self.params.t.sigma).time(et);
                (x, t)
            })
            .collect()
    }
}

fn open_uniform(rng: &mut StreamRng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn simulate_cif(
    p: &Predictive,
    target: Target,
    covariates: Covariates,
    grid: &[f64],
    config: &CifConfig,
    seed: u64,
    exec: Execution,
) -> Result<CifCurve> {
    config.validate()?;
    check_grid(grid)?;
    check_covariates(p.data, covariates)?;
    let design = Design::new(p.data);
    let j = config.mc_samples;
    let curves = exec.map(p.draws.len(), |k| {
        let mut rng = stream(seed, Domain::Cif, k as u64);
        let mut values: Vec<f64> = Sampler::new(p, &design, covariates, k)
            .draw(&mut rng, j)
            .into_iter()
            .map(|(x, t)| match target {
                Target::X => x,
                Target::T => t,
                Target::Y => x + t,
            })
            .collect();
        values.sort_by(f64::total_cmp);
        grid.iter()
            .map(|&g| values.partition_point(|&v| v <= g) as f64 / j as f64)
            .collect()
    });
    Ok(finish(p, target, covariates, grid, config, curves, Some(j)))
}

/// The x, t and y curves for one set of covariates.
pub fn all_targets(
    p: &Predictive,
    covariates: Covariates,
    grid: &[f64],
    config: &CifConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<CifCurve>> {
    Target::ALL
        .iter()
        .map(|&target| match (target, covariates) {
            (Target::Y, c) => total_cif(p, c, grid, config, seed, exec),
            (_, Covariates::Fixed(z)) => conditional_cif(p, target, z, grid, config, exec),
            (_, Covariates::Empirical) => marginal_cif(p, target, grid, config, seed, exec),
        })
        .collect()
}
