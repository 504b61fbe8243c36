//! Model specification (a family per transition) and parameter sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Transition};
use crate::dist::{Family, LinearPredictor};
use crate::error::{Error, Result};

/// Family pair, written `"<x family>-<t family>"`, e.g. `lognormal-weibull`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ModelSpec {
    pub x: Family,
    pub t: Family,
}

impl ModelSpec {
    pub fn new(x: Family, t: Family) -> Self {
        Self { x, t }
    }

    pub fn family(&self, transition: Transition) -> Family {
        match transition {
            Transition::X => self.x,
            Transition::T => self.t,
        }
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.x, self.t)
    }

    /// All 16 family pairs.
    pub fn all() -> Vec<ModelSpec> {
        Family::ALL
            .iter()
            .flat_map(|&x| Family::ALL.iter().map(move |&t| ModelSpec::new(x, t)))
            .collect()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.x, self.t)
    }
}

impl From<ModelSpec> for String {
    fn from(m: ModelSpec) -> String {
        m.name()
    }
}

impl TryFrom<String> for ModelSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (x, t) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("model '{s}' must look like 'lognormal-weibull'")))?;
        Ok(Self::new(x.parse()?, t.parse()?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    /// Intercept first, then one coefficient per design column.
    pub beta: Vec<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AftParams {
    pub x: TransitionParams,
    pub t: TransitionParams,
}

impl AftParams {
    pub fn new(beta_x: Vec<f64>, sigma_x: f64, beta_t: Vec<f64>, sigma_t: f64) -> Self {
        Self {
            x: TransitionParams { beta: beta_x, sigma: sigma_x },
            t: TransitionParams { beta: beta_t, sigma: sigma_t },
        }
    }

    pub fn get(&self, transition: Transition) -> &TransitionParams {
        match transition {
            Transition::X => &self.x,
            Transition::T => &self.t,
        }
    }

    /// Checks dimensions against the dataset designs and scales against the spec.
    pub fn check(&self, spec: &ModelSpec, data: &Dataset) -> Result<()> {
        for tr in [Transition::X, Transition::T] {
            let p = self.get(tr);
            let want = data.n_coefficients(tr);
            if p.beta.len() != want {
                return Err(Error::Config(format!(
                    "{tr} coefficients: expected {want}, got {}",
                    p.beta.len()
                )));
            }
            if p.beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::Domain(format!("non-finite {tr} coefficient")));
            }
            LinearPredictor::new(0.0, p.sigma).check(spec.family(tr))?;
        }
        Ok(())
    }

    /// Flat vector `[β_x…, σ_x, β_t…, σ_t]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.x.beta.clone();
        v.push(self.x.sigma);
        v.extend(&self.t.beta);
        v.push(self.t.sigma);
        v
    }

    pub fn from_slice(v: &[f64], px: usize) -> Self {
        let beta_x = v[..px].to_vec();
        let sigma_x = v[px];
        let beta_t = v[px + 1..v.len() - 1].to_vec();
        let sigma_t = v[v.len() - 1];
        Self::new(beta_x, sigma_x, beta_t, sigma_t)
    }
}

/// Parameter names in [`AftParams::to_vec`] order.
pub fn parameter_names(data: &Dataset) -> Vec<String> {
    let mut names: Vec<String> = data
        .coefficient_names(Transition::X)
        .into_iter()
        .map(|n| format!("beta_x.{n}"))
        .collect();
    names.push("sigma_x".into());
    names.extend(data.coefficient_names(Transition::T).into_iter().map(|n| format!("beta_t.{n}")));
    names.push("sigma_t".into());
    names
}

/// Row-major design matrices of a dataset, cached for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Design {
    pub n: usize,
    pub px: usize,
    pub pt: usize,
    zx: Vec<f64>,
    zt: Vec<f64>,
}

impl Design {
    pub fn new(data: &Dataset) -> Self {
        Self {
            n: data.len(),
            px: data.n_coefficients(Transition::X),
            pt: data.n_coefficients(Transition::T),
            zx: data.design_matrix(Transition::X),
            zt: data.design_matrix(Transition::T),
        }
    }

    #[inline]
    pub fn row(&self, transition: Transition, i: usize) -> &[f64] {
        match transition {
            Transition::X => &self.zx[i * self.px..(i + 1) * self.px],
            Transition::T => &self.zt[i * self.pt..(i + 1) * self.pt],
        }
    }

    #[inline]
    pub fn location(&self, transition: Transition, i: usize, beta: &[f64]) -> f64 {
        dot(self.row(transition, i), beta)
    }

    #[inline]
    pub fn predictor(&self, transition: Transition, i: usize, params: &AftParams) -> LinearPredictor {
        let p = params.get(transition);
        LinearPredictor::new(self.location(transition, i, &p.beta), p.sigma)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
