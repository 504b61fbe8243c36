//! Synthetic screening data: AFT transition times plus a recursive visit
//! process that produces interval-censored observations.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{design_row, Dataset, Event, Observation};
use crate::dist::{self, Family, LinearPredictor};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{self, Domain, StreamRng};

/// Where the exponential right-censoring clock starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringOrigin {
    /// `v_rc = v₁ + Exp(θ)`: the first visit is always attended and the
    /// follow-up clock runs from there. Reproduces the published δ proportions.
    #[default]
    FirstVisit,
    /// `v_rc = Exp(θ)` from baseline; `m = 0` is possible.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningConfig {
    pub c_min: f64,
    pub c_max: f64,
    pub theta: f64,
    #[serde(default)]
    pub origin: CensoringOrigin,
}

impl ScreeningConfig {
    pub fn new(c_min: f64, c_max: f64, theta: f64) -> Result<Self> {
        let cfg = Self {
            c_min,
            c_max,
            theta,
            origin: CensoringOrigin::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_origin(mut self, origin: CensoringOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_min > 0.0 && self.c_max > self.c_min && self.c_max.is_finite()) {
            return Err(Error::Config(format!(
                "screening gaps need 0 < c_min < c_max, got ({}, {})",
                self.c_min, self.c_max
            )));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Config(format!("theta must be positive, got {}", self.theta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateGenerator {
    StandardNormal,
    Normal { mean: f64, sd: f64 },
    Bernoulli { q: f64 },
}

impl CovariateGenerator {
    fn draw(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            CovariateGenerator::StandardNormal => rng.sample(StandardNormal),
            CovariateGenerator::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            CovariateGenerator::Bernoulli { q } => f64::from(u8::from(rng.random::<f64>() < q)),
        }
    }
}

/// One transition of the generating model. `beta[0]` is the intercept and
/// `beta[k]` multiplies covariate `design[k - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub family: Family,
    pub beta: Vec<f64>,
    pub sigma: f64,
    /// Covariates entering this transition; all of them when absent.
    #[serde(default)]
    pub design: Option<Vec<usize>>,
}

impl TransitionSpec {
    fn resolved_design(&self, p: usize) -> Vec<usize> {
        self.design.clone().unwrap_or_else(|| (0..p).collect())
    }

    fn predictor(&self, z: &[f64], design: &[usize]) -> LinearPredictor {
        let row = design_row(z, design);
        let location = row.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        LinearPredictor::new(location, self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenModel {
    pub x_model: TransitionSpec,
    pub t_model: TransitionSpec,
    #[serde(default)]
    pub covariates: Vec<CovariateGenerator>,
    #[serde(default)]
    pub covariate_names: Option<Vec<String>>,
}

impl GenModel {
    pub fn validate(&self) -> Result<()> {
        let p = self.covariates.len();
        for (name, m) in [("x", &self.x_model), ("t", &self.t_model)] {
            let design = m.resolved_design(p);
            if let Some(&j) = design.iter().find(|&&j| j >= p) {
                return Err(Error::Config(format!("{name} design references covariate {j} of {p}")));
            }
            if m.beta.len() != design.len() + 1 {
                return Err(Error::Config(format!(
                    "{name} model has {} coefficients, expected {}",
                    m.beta.len(),
                    design.len() + 1
                )));
            }
            if m.beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::Config(format!("{name} model has a non-finite coefficient")));
            }
            LinearPredictor::new(0.0, m.sigma)
                .check(m.family)
                .map_err(|e| Error::Config(format!("{name} model: {e}")))?;
        }
        for g in &self.covariates {
            match *g {
                CovariateGenerator::Bernoulli { q } if !(0.0..=1.0).contains(&q) => {
                    return Err(Error::Config(format!("bernoulli q must lie in [0, 1], got {q}")));
                }
                CovariateGenerator::Normal { mean, sd } if !(mean.is_finite() && sd > 0.0 && sd.is_finite()) => {
                    return Err(Error::Config(format!("normal covariate needs finite mean and positive sd, got ({mean}, {sd})")));
                }
                _ => {}
            }
        }
        if let Some(names) = &self.covariate_names {
            if names.len() != p {
                return Err(Error::Config(format!("{} covariate names for {p} covariates", names.len())));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.covariate_names
            .clone()
            .unwrap_or_else(|| (1..=self.covariates.len()).map(|j| format!("z{j}")).collect())
    }

    /// The lognormal-lognormal model of the simulation study:
    /// `log x = 3 + b·z₁ + b·z₂ + 0.2ε`, `log t = 1.2 + b·z₁ + b·z₂ + 0.3ξ`
    /// with `z₁ ~ N(0,1)`, `z₂ ~ Bernoulli(0.5)`, `b = 0.5` when `p = 2`.
    pub fn study(p: usize) -> Self {
        let covariates = match p {
            0 => vec![],
            _ => vec![CovariateGenerator::StandardNormal, CovariateGenerator::Bernoulli { q: 0.5 }],
        };
        let beta = |b0: f64| std::iter::once(b0).chain(std::iter::repeat_n(0.5, covariates.len())).collect();
        Self {
            x_model: TransitionSpec {
                family: Family::Lognormal,
                beta: beta(3.0),
                sigma: 0.2,
                design: None,
            },
            t_model: TransitionSpec {
                family: Family::Lognormal,
                beta: beta(1.2),
                sigma: 0.3,
                design: None,
            },
            covariates,
            covariate_names: None,
        }
    }

    fn draw_covariates(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.covariates.iter().map(|g| g.draw(rng)).collect()
    }
}

/// Censoring strength of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Censoring {
    Medium,
    Strong,
}

/// Visit-process parameters tuned to give equal δ proportions across `p`.
pub fn study_screening(censoring: Censoring, p: usize) -> ScreeningConfig {
    let (c_max, theta) = match (censoring, p) {
        (Censoring::Medium, 0) => (8.0, 40.0),
        (Censoring::Medium, _) => (8.7, 56.0),
        (Censoring::Strong, 0) => (7.0, 20.0),
        (Censoring::Strong, _) => (6.5, 26.1),
    };
    ScreeningConfig {
        c_min: 1.0,
        c_max,
        theta,
        origin: CensoringOrigin::FirstVisit,
    }
}

/// Expected δ proportions reported for each study setting (Monte Carlo, n = 10⁶).
pub fn study_event_proportions(censoring: Censoring, p: usize) -> [f64; 3] {
    match (censoring, p) {
        (Censoring::Medium, 0) => [0.368, 0.426, 0.206],
        (Censoring::Medium, _) => [0.370, 0.426, 0.204],
        (Censoring::Strong, 0) => [0.600, 0.298, 0.103],
        (Censoring::Strong, _) => [0.601, 0.296, 0.103],
    }
}

/// Draws `(x, t)` independently given `z`.
pub fn gen_times(model: &GenModel, z: &[f64], rng: &mut StreamRng) -> (f64, f64) {
    let p = z.len();
    let draw = |m: &TransitionSpec, rng: &mut StreamRng| {
        let lp = m.predictor(z, &m.resolved_design(p));
        let u: f64 = rng.random();
        dist::quantile(m.family, lp, u.max(f64::MIN_POSITIVE)).unwrap_or(f64::MIN_POSITIVE)
    };
    let x = draw(&model.x_model, rng);
    let t = draw(&model.t_model, rng);
    (x, t)
}

/// Visit vector `(0, v₁, …, v_m, +∞)`.
pub fn gen_screening(config: &ScreeningConfig, rng: &mut StreamRng) -> Vec<f64> {
    let gap = |rng: &mut StreamRng| config.c_min + (config.c_max - config.c_min) * rng.random::<f64>();
    let follow_up: f64 = Exp::new(1.0 / config.theta).expect("theta validated").sample(rng);
    let mut visits = vec![0.0];
    let mut v = gap(rng);
    let v_rc = match config.origin {
        CensoringOrigin::FirstVisit => v + follow_up,
        CensoringOrigin::Baseline => follow_up,
    };
    while v <= v_rc {
        visits.push(v);
        v += gap(rng);
    }
    visits.push(f64::INFINITY);
    visits
}

/// Reduces latent `(x, t)` and a visit vector to `(δ, l, r)`.
pub fn censor(x: f64, t: f64, visits: &[f64]) -> (Event, f64, f64) {
    let k = visits.partition_point(|&v| v < x).clamp(1, visits.len() - 1);
    let (l, r) = (visits[k - 1], visits[k]);
    let delta = if r.is_infinite() {
        Event::RightCensored
    } else if x + t <= r {
        Event::Advanced
    } else {
        Event::Intermediate
    };
    (delta, l, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentTimes {
    pub x: f64,
    pub t: f64,
}

/// One simulated individual with its latent times.
pub fn simulate_individual(
    model: &GenModel,
    config: &ScreeningConfig,
    rng: &mut StreamRng,
) -> (Observation, LatentTimes) {
    let z = model.draw_covariates(rng);
    let (x, t) = gen_times(model, &z, rng);
    let visits = gen_screening(config, rng);
    let (delta, l, r) = censor(x, t, &visits);
    (Observation::new(z, delta, l, r), LatentTimes { x, t })
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub dataset: Dataset,
    pub latent: Vec<LatentTimes>,
}

/// Simulates `n` individuals; individual `i` uses its own stream so the
/// result does not depend on `exec`.
pub fn simulate_dataset(
    n: usize,
    model: &GenModel,
    config: &ScreeningConfig,
    seed: u64,
    exec: Execution,
) -> Result<Simulated> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    model.validate()?;
    config.validate()?;
    let rows = exec.map(n, |i| {
        let mut rng = rng::stream(seed, Domain::Simulation, i as u64);
        simulate_individual(model, config, &mut rng)
    });
    let (observations, latent): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let p = model.covariates.len();
    let dataset = Dataset::with_designs(
        observations,
        model.names(),
        model.x_model.resolved_design(p),
        model.t_model.resolved_design(p),
    )?;
    Ok(Simulated { dataset, latent })
}

/// Full simulation request as read from a JSON config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub model: GenModel,
    pub screening: ScreeningConfig,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

pub fn write_latent_csv(latent: &[LatentTimes], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["x", "t"])?;
    for lt in latent {
        w.write_record([crate::data::format_number(lt.x), crate::data::format_number(lt.t)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn censor_examples() {
        let v = [0.0, 2.0, 5.0, f64::INFINITY];
        assert_eq!(censor(3.0, 1.0, &v), (Event::Advanced, 2.0, 5.0));
        assert_eq!(censor(3.0, 10.0, &v), (Event::Intermediate, 2.0, 5.0));
        assert_eq!(censor(10.0, 1.0, &v), (Event::RightCensored, 5.0, f64::INFINITY));
        assert_eq!(censor(5.0, 0.5, &v), (Event::Intermediate, 2.0, 5.0));
        assert_eq!(censor(1.0, 0.5, &[0.0, f64::INFINITY]), (Event::RightCensored, 0.0, f64::INFINITY));
    }

    #[test]
    fn transition_medians_match_study_values() {
        let model = GenModel::study(0);
        let mut rng = rng::stream(1, Domain::Simulation, 0);
        let (xs, ts): (Vec<f64>, Vec<f64>) = (0..1_000_000).map(|_| gen_times(&model, &[], &mut rng)).unzip();
        assert!((median(xs) - 20.1).abs() < 0.2);
        assert!((median(ts) - 3.3).abs() < 0.05);
    }

    #[test]
    fn shared_covariates_correlate_times() {
        let model = GenModel::study(2);
        let mut rng = rng::stream(2, Domain::Simulation, 0);
        let n = 1_000_000;
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let z = model.draw_covariates(&mut rng);
                gen_times(&model, &z, &mut rng)
            })
            .collect();
        let nf = n as f64;
        let (mx, mt) = pairs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / nf, a.1 + p.1 / nf));
        let (sxy, sxx, stt) = pairs.iter().fold((0.0, 0.0, 0.0), |a, p| {
            let (dx, dt) = (p.0 - mx, p.1 - mt);
            (a.0 + dx * dt, a.1 + dx * dx, a.2 + dt * dt)
        });
        let r = sxy / (sxx * stt).sqrt();
        assert!((r - 0.799).abs() < 0.01, "{r}");
    }

    #[test]
    fn visit_process_properties() {
        let cfg = ScreeningConfig::new(1.0, 8.0, 40.0).unwrap();
        let mut rng = rng::stream(3, Domain::Simulation, 0);
        let n = 1_000_000;
        let mut sum_v1 = 0.0;
        for _ in 0..n {
            let v = gen_screening(&cfg, &mut rng);
            sum_v1 += v[1];
            assert_eq!(v[0], 0.0);
            assert!(v.last().unwrap().is_infinite());
            for w in v[1..v.len() - 1].windows(2) {
                let gap = w[1] - w[0];
                assert!(gap > 1.0 && gap < 8.0);
            }
        }
        assert!((sum_v1 / n as f64 - 4.5).abs() < 0.01);
    }

    #[test]
    fn vanishing_theta_gives_no_visits_from_baseline() {
        let cfg = ScreeningConfig::new(1.0, 8.0, 1e-9).unwrap().with_origin(CensoringOrigin::Baseline);
        let mut rng = rng::stream(4, Domain::Simulation, 0);
        assert!((0..10_000).all(|_| gen_screening(&cfg, &mut rng).len() == 2));
        let cfg = cfg.with_origin(CensoringOrigin::FirstVisit);
        assert!((0..10_000).all(|_| gen_screening(&cfg, &mut rng).len() == 3));
    }

    #[test]
    fn censoring_is_consistent_with_latent_times() {
        let sim = simulate_dataset(20_000, &GenModel::study(2), &study_screening(Censoring::Strong, 2), 5, Execution::default()).unwrap();
        for (o, lt) in sim.dataset.observations.iter().zip(&sim.latent) {
            assert!(o.l < lt.x && lt.x <= o.r);
            match o.delta {
                Event::RightCensored => assert!(o.r.is_infinite()),
                Event::Intermediate => assert!(o.r < lt.x + lt.t),
                Event::Advanced => assert!(lt.x + lt.t <= o.r),
            }
        }
    }

    #[test]
    fn execution_strategy_does_not_change_output() {
        let model = GenModel::study(2);
        let cfg = study_screening(Censoring::Medium, 2);
        let a = simulate_dataset(500, &model, &cfg, 9, Execution::Sequential).unwrap();
        let b = simulate_dataset(500, &model, &cfg, 9, Execution::Parallel).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.latent, b.latent);
    }

    #[test]
    fn study_settings_reproduce_event_proportions() {
        for censoring in [Censoring::Medium, Censoring::Strong] {
            for p in [0, 2] {
                let sim = simulate_dataset(
                    1_000_000,
                    &GenModel::study(p),
                    &study_screening(censoring, p),
                    11,
                    Execution::default(),
                )
                .unwrap();
                let got = sim.dataset.event_proportions();
                let want = study_event_proportions(censoring, p);
                for k in 0..3 {
                    assert!((got[k] - want[k]).abs() < 0.002, "{censoring:?} p={p}: {got:?} vs {want:?}");
                }
            }
        }
    }

    #[test]
    fn model_validation() {
        let mut m = GenModel::study(2);
        m.x_model.beta.pop();
        assert!(matches!(m.validate(), Err(Error::Config(_))));
        let mut m = GenModel::study(0);
        m.t_model.sigma = 0.0;
        assert!(m.validate().is_err());
        assert!(ScreeningConfig::new(2.0, 1.0, 5.0).is_err());
        let spec: SimulationSpec = serde_json::from_str(
            r#"{"model":{"x_model":{"family":"weibull","beta":[1.0],"sigma":0.5},
                "t_model":{"family":"exponential","beta":[0.0],"sigma":1.0}},
                "screening":{"c_min":1,"c_max":3,"theta":10},"n":5}"#,
        )
        .unwrap();
        spec.model.validate().unwrap();
        assert_eq!(spec.screening.origin, CensoringOrigin::FirstVisit);
    }
}
