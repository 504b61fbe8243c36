//! Screening observations, datasets and CSV ingestion.
//!
//! The CSV layout is a header row followed by one row per individual:
//! covariate columns, then `delta`, `l`, `r`. A right-open interval is
//! written as `r = inf`. The intercept is implicit and never stored.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Censoring state at the end of the observed interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Event {
    /// δ = 1: still in the first state at the last visit; `r = ∞`.
    RightCensored,
    /// δ = 2: intermediate state found at `r`, so `x ≤ r < x + t`.
    Intermediate,
    /// δ = 3: advanced state found at `r`, so `x + t ≤ r`.
    Advanced,
}

impl Event {
    pub fn code(self) -> u8 {
        match self {
            Event::RightCensored => 1,
            Event::Intermediate => 2,
            Event::Advanced => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Event::RightCensored),
            2 => Some(Event::Intermediate),
            3 => Some(Event::Advanced),
            _ => None,
        }
    }

    /// δ ∈ {2, 3}: the intermediate transition happened inside (l, r].
    pub fn is_detected(self) -> bool {
        self != Event::RightCensored
    }
}

impl TryFrom<u8> for Event {
    type Error = String;

    fn try_from(code: u8) -> std::result::Result<Self, String> {
        Event::from_code(code).ok_or_else(|| format!("delta must be 1, 2 or 3, got {code}"))
    }
}

impl From<Event> for u8 {
    fn from(e: Event) -> u8 {
        e.code()
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub z: Vec<f64>,
    pub delta: Event,
    pub l: f64,
    pub r: f64,
}

impl Observation {
    pub fn new(z: Vec<f64>, delta: Event, l: f64, r: f64) -> Self {
        Self { z, delta, l, r }
    }

    /// Checks the observation invariants; the message names the violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if let Some(j) = self.z.iter().position(|v| !v.is_finite()) {
            return Err(format!("covariate {j} is not finite"));
        }
        if !(self.l >= 0.0) || !self.l.is_finite() {
            return Err(format!("l must be finite and nonnegative, got {}", self.l));
        }
        if self.r.is_nan() {
            return Err("r is NaN".into());
        }
        if !(self.l < self.r) {
            return Err(format!("l < r violated (l = {}, r = {})", self.l, self.r));
        }
        match (self.delta, self.r.is_infinite()) {
            (Event::RightCensored, false) => Err(format!("delta = 1 requires r = inf, got {}", self.r)),
            (Event::Intermediate | Event::Advanced, true) => {
                Err(format!("delta = {} requires finite r", self.delta))
            }
            _ => Ok(()),
        }
    }
}

/// Which transition a design or parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    /// Onset time x (state 1 → 2).
    X,
    /// Progression time t (state 2 → 3).
    T,
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transition::X => "x",
            Transition::T => "t",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub covariate_names: Vec<String>,
    /// Covariate columns entering the onset model (the intercept is implicit).
    pub design_x: Vec<usize>,
    /// Covariate columns entering the progression model.
    pub design_t: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset using every covariate in both designs.
    pub fn new(observations: Vec<Observation>, covariate_names: Vec<String>) -> Result<Self> {
        let all: Vec<usize> = (0..covariate_names.len()).collect();
        Self::with_designs(observations, covariate_names, all.clone(), all)
    }

    pub fn with_designs(
        observations: Vec<Observation>,
        covariate_names: Vec<String>,
        design_x: Vec<usize>,
        design_t: Vec<usize>,
    ) -> Result<Self> {
        let p = covariate_names.len();
        for (i, obs) in observations.iter().enumerate() {
            if obs.z.len() != p {
                return Err(Error::Validation {
                    row: i,
                    message: format!("expected {p} covariates, found {}", obs.z.len()),
                });
            }
            obs.check().map_err(|message| Error::Validation { row: i, message })?;
        }
        for (name, design) in [("x", &design_x), ("t", &design_t)] {
            if let Some(&j) = design.iter().find(|&&j| j >= p) {
                return Err(Error::Schema(format!(
                    "design for {name} references covariate {j}, but only {p} exist"
                )));
            }
        }
        Ok(Self {
            observations,
            covariate_names,
            design_x,
            design_t,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn design(&self, transition: Transition) -> &[usize] {
        match transition {
            Transition::X => &self.design_x,
            Transition::T => &self.design_t,
        }
    }

    /// Number of regression coefficients (intercept included) for a transition.
    pub fn n_coefficients(&self, transition: Transition) -> usize {
        1 + self.design(transition).len()
    }

    /// Design row `[1, z_j for j in design]` of observation `i`.
    pub fn design_row(&self, transition: Transition, i: usize) -> Vec<f64> {
        design_row(&self.observations[i].z, self.design(transition))
    }

    /// Row-major `n × (1 + |design|)` design matrix.
    pub fn design_matrix(&self, transition: Transition) -> Vec<f64> {
        let design = self.design(transition);
        self.observations
            .iter()
            .flat_map(|o| design_row(&o.z, design))
            .collect()
    }

    /// Names of the regression coefficients, e.g. `["(intercept)", "age"]`.
    pub fn coefficient_names(&self, transition: Transition) -> Vec<String> {
        std::iter::once("(intercept)".to_string())
            .chain(self.design(transition).iter().map(|&j| self.covariate_names[j].clone()))
            .collect()
    }

    /// Counts of δ = 1, 2, 3.
    pub fn event_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for o in &self.observations {
            counts[o.delta.code() as usize - 1] += 1;
        }
        counts
    }

    pub fn event_proportions(&self) -> [f64; 3] {
        let n = self.len().max(1) as f64;
        self.event_counts().map(|c| c as f64 / n)
    }

    /// Fitting needs at least one δ ∈ {2, 3}; otherwise nothing informs the
    /// progression-time distribution.
    pub fn check_fit_ready(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Identifiability("dataset has no observations".into()));
        }
        if !self.observations.iter().any(|o| o.delta.is_detected()) {
            return Err(Error::Identifiability(
                "no observation with delta in {2, 3}; the progression time is unidentified".into(),
            ));
        }
        Ok(())
    }

    /// Largest finite right endpoint.
    pub fn max_finite_r(&self) -> Option<f64> {
        self.observations
            .iter()
            .filter(|o| o.r.is_finite())
            .map(|o| o.r)
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            n: self.len(),
            covariates: self.covariate_names.clone(),
            event_counts: self.event_counts(),
            event_proportions: self.event_proportions(),
            max_finite_r: self.max_finite_r(),
        }
    }
}

pub(crate) fn design_row(z: &[f64], design: &[usize]) -> Vec<f64> {
    std::iter::once(1.0).chain(design.iter().map(|&j| z[j])).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub covariates: Vec<String>,
    pub event_counts: [usize; 3],
    pub event_proportions: [f64; 3],
    pub max_finite_r: Option<f64>,
}

/// Column mapping for [`load_csv`]. `covariates = None` takes every column
/// other than delta/l/r, in file order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default = "default_delta")]
    pub delta: String,
    #[serde(default = "default_l")]
    pub l: String,
    #[serde(default = "default_r")]
    pub r: String,
}

fn default_delta() -> String {
    "delta".into()
}
fn default_l() -> String {
    "l".into()
}
fn default_r() -> String {
    "r".into()
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            covariates: None,
            delta: default_delta(),
            l: default_l(),
            r: default_r(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let delta_col = find(&schema.delta)?;
    let l_col = find(&schema.l)?;
    let r_col = find(&schema.r)?;
    let covariate_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(j, _)| ![delta_col, l_col, r_col].contains(j))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cov_cols = covariate_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    let mut observations = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let number = |col: usize| -> Result<f64> {
            let raw = cell(col);
            parse_number(raw).ok_or_else(|| Error::Parse {
                row,
                column: headers[col].clone(),
                value: raw.to_string(),
            })
        };
        let z = cov_cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?;
        let raw_delta = cell(delta_col);
        let delta = raw_delta
            .parse::<u8>()
            .ok()
            .and_then(Event::from_code)
            .ok_or_else(|| Error::Parse {
                row,
                column: headers[delta_col].clone(),
                value: raw_delta.to_string(),
            })?;
        let obs = Observation::new(z, delta, number(l_col)?, number(r_col)?);
        obs.check().map_err(|message| Error::Validation { row, message })?;
        observations.push(obs);
    }
    Dataset::new(observations, covariate_names)
}

fn parse_number(raw: &str) -> Option<f64> {
    let lower = raw.to_ascii_lowercase();
    match lower.as_str() {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        _ => lower.parse::<f64>().ok().filter(|v| !v.is_nan()),
    }
}

pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(dataset, file)
}

pub fn write_csv_to<W: std::io::Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = dataset.covariate_names.clone();
    header.extend(["delta", "l", "r"].map(String::from));
    w.write_record(&header)?;
    for o in &dataset.observations {
        let mut rec: Vec<String> = o.z.iter().map(|v| format_number(*v)).collect();
        rec.push(o.delta.code().to_string());
        rec.push(format_number(o.l));
        rec.push(format_number(o.r));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_number(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Centers and scales the selected covariate columns by their mean and
/// sample (n − 1) standard deviation.
pub fn standardize(dataset: &Dataset, columns: &[usize]) -> Result<(Dataset, Vec<ColumnTransform>)> {
    let n = dataset.len();
    let mut out = dataset.clone();
    let mut transforms = Vec::with_capacity(columns.len());
    for &j in columns {
        let name = dataset
            .covariate_names
            .get(j)
            .cloned()
            .ok_or_else(|| Error::Schema(format!("no covariate column {j}")))?;
        if n < 2 {
            return Err(Error::ZeroVariance(name));
        }
        let mean = dataset.observations.iter().map(|o| o.z[j]).sum::<f64>() / n as f64;
        let var = dataset
            .observations
            .iter()
            .map(|o| (o.z[j] - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 1e-300) {
            return Err(Error::ZeroVariance(name));
        }
        for o in &mut out.observations {
            o.z[j] = (o.z[j] - mean) / sd;
        }
        transforms.push(ColumnTransform { name, mean, sd });
    }
    Ok((out, transforms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn parses_example_row() {
        let d = parse("z1,z2,delta,l,r\n0.5,1,1,4.0,inf\n").unwrap();
        assert_eq!(d.covariate_names, vec!["z1", "z2"]);
        assert_eq!(
            d.observations[0],
            Observation::new(vec![0.5, 1.0], Event::RightCensored, 4.0, f64::INFINITY)
        );
        let d = parse("delta,l,r\n1,4.0,INF\n3,0,2.5\n").unwrap();
        assert!(d.observations[0].r.is_infinite());
        assert_eq!(d.observations[1].delta, Event::Advanced);
    }

    #[test]
    fn rejects_invalid_rows_with_row_index() {
        let err = parse("z1,delta,l,r\n0,3,1,2\n0,2,1,inf\n").unwrap_err();
        match err {
            Error::Validation { row, message } => {
                assert_eq!(row, 1);
                assert!(message.contains("finite r"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
        let err = parse("delta,l,r\n3,5,3\n").unwrap_err();
        assert!(err.to_string().contains("l < r violated"), "{err}");
        let err = parse("delta,l,r\n3,2,2\n").unwrap_err();
        assert!(err.to_string().contains("l < r violated"));
    }

    #[test]
    fn schema_and_parse_errors() {
        assert!(matches!(parse("delta,l\n1,0\n").unwrap_err(), Error::Schema(_)));
        match parse("z,delta,l,r\nabc,1,0,inf\n").unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 0);
                assert_eq!(column, "z");
            }
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(parse("delta,l,r\n4,0,inf\n").unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn zero_lower_bound_allowed() {
        let d = parse("delta,l,r\n2,0,3\n").unwrap();
        assert_eq!(d.observations[0].l, 0.0);
    }

    #[test]
    fn standardize_examples() {
        let obs = |v: f64| Observation::new(vec![v, 5.0], Event::Advanced, 0.0, 1.0);
        let d = Dataset::new(vec![obs(1.0), obs(2.0), obs(3.0)], vec!["a".into(), "c".into()]).unwrap();
        let (s, t) = standardize(&d, &[0]).unwrap();
        let col: Vec<f64> = s.observations.iter().map(|o| o.z[0]).collect();
        assert_eq!(col, vec![-1.0, 0.0, 1.0]);
        assert_eq!(t[0], ColumnTransform { name: "a".into(), mean: 2.0, sd: 1.0 });
        let (again, _) = standardize(&s, &[0]).unwrap();
        for (a, b) in again.observations.iter().zip(&s.observations) {
            assert!((a.z[0] - b.z[0]).abs() < 1e-12);
        }
        assert!(matches!(standardize(&d, &[1]).unwrap_err(), Error::ZeroVariance(n) if n == "c"));
    }

    #[test]
    fn identifiability_check() {
        let d = Dataset::new(
            vec![Observation::new(vec![], Event::RightCensored, 1.0, f64::INFINITY)],
            vec![],
        )
        .unwrap();
        assert!(matches!(d.check_fit_ready(), Err(Error::Identifiability(_))));
    }

    #[test]
    fn design_rows_prepend_intercept() {
        let d = Dataset::with_designs(
            vec![Observation::new(vec![2.0, 3.0], Event::Advanced, 0.0, 1.0)],
            vec!["a".into(), "b".into()],
            vec![1],
            vec![],
        )
        .unwrap();
        assert_eq!(d.design_row(Transition::X, 0), vec![1.0, 3.0]);
        assert_eq!(d.design_matrix(Transition::T), vec![1.0]);
        assert_eq!(d.coefficient_names(Transition::X), vec!["(intercept)", "b"]);
        assert!(Dataset::with_designs(vec![], vec![], vec![0], vec![]).is_err());
    }

    fn valid_observation() -> impl Strategy<Value = Observation> {
        (
            prop::collection::vec(-1e6..1e6f64, 2),
            1u8..=3,
            0.0..50.0f64,
            1e-9..50.0f64,
        )
            .prop_map(|(z, d, l, w)| {
                let delta = Event::from_code(d).unwrap();
                let r = if delta == Event::RightCensored { f64::INFINITY } else { l + w };
                Observation::new(z, delta, l, r)
            })
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_exact(obs in prop::collection::vec(valid_observation(), 1..30)) {
            let d = Dataset::new(obs, vec!["a".into(), "b".into()]).unwrap();
            let mut buf = Vec::new();
            write_csv_to(&d, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn every_invariant_violation_is_rejected(base in valid_observation(), kind in 0usize..6) {
            let mut o = base;
            match kind {
                0 => o.z[0] = f64::NAN,
                1 => o.l = -1.0,
                2 => { o.r = o.l; if o.delta == Event::RightCensored { o.delta = Event::Advanced; } }
                3 => { o.delta = Event::RightCensored; o.r = o.l + 1.0; }
                4 => { o.delta = Event::Intermediate; o.r = f64::INFINITY; }
                _ => { o.delta = Event::Advanced; o.r = f64::INFINITY; }
            }
            prop_assert!(o.check().is_err());
            prop_assert!(Dataset::new(vec![o], vec!["a".into(), "b".into()]).is_err());
        }
    }
}
