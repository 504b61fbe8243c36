//! Command-line front end: JSON configs in, CSV/JSON artifacts out.
//!
//! Every command reads a JSON config (`--config`), takes its seed from
//! `--seed` or the config's `seed` field, and writes into a fresh output
//! directory that only appears once all files are complete. Exit codes:
//! 0 success, 1 error, 2 finished without convergence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cif::{self, CifConfig, CifCurve, Covariates, Predictive, Target};
use crate::data::{self, ColumnTransform, CsvSchema, Dataset, DatasetSummary};
use crate::diagnostics::{self, ChainMatrix};
use crate::em::{run_em, EmConfig};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::gibbs::{self, write_chain_csvs, GibbsConfig, PosteriorDraws, Priors, RunManifest, SensitivitySpec};
use crate::model::ModelSpec;
use crate::modelsel::{self, Criteria, CriteriaConfig, CriteriaTable};
use crate::simulate::{self, study_screening, Censoring, GenModel, ScreeningConfig};

/// Synthetic stand-in for the screening cohort, loadable as `"@synthetic"`.
pub const SYNTHETIC_CSV: &str = include_str!("../data/synthetic_screening.csv");
pub const SYNTHETIC: &str = "@synthetic";

#[derive(Debug, Parser)]
#[command(name = "screening-aft", version, about = "Bayesian AFT models for interval-censored screening data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; must not exist or be empty.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate a screening dataset.
    Simulate,
    /// Fit one family pair with the Gibbs sampler.
    Fit,
    /// Maximum-likelihood fit of the lognormal-lognormal model by EM.
    FitEm,
    /// Fit several family pairs and rank them by WAIC and DIC.
    Select,
    /// Posterior predictive CIFs from a fitted run.
    Cif,
    /// Latent-confounder sensitivity sweep.
    Sensitivity,
    /// Convergence diagnostics for a fitted run.
    Diagnose {
        /// Run directory written by `fit`; overrides the config.
        run: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    NotConverged,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Completed => 0,
            Outcome::NotConverged => 2,
        }
    }

    fn from_converged(converged: bool) -> Self {
        if converged {
            Outcome::Completed
        } else {
            Outcome::NotConverged
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    match run(&cli) {
        Ok(outcome) => {
            if outcome == Outcome::NotConverged {
                log::warn!("finished without convergence");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        exec::set_thread_limit(t);
    }
    match &cli.command {
        Command::Simulate => cmd_simulate(&Invocation::load(cli, "simulate")?),
        Command::Fit => cmd_fit(&Invocation::load(cli, "fit")?),
        Command::FitEm => cmd_fit_em(&Invocation::load(cli, "fit-em")?),
        Command::Select => cmd_select(&Invocation::load(cli, "select")?),
        Command::Cif => cmd_cif(&Invocation::load(cli, "cif")?),
        Command::Sensitivity => cmd_sensitivity(&Invocation::load(cli, "sensitivity")?),
        Command::Diagnose { run } => cmd_diagnose(cli, run.as_deref()),
    }
}

/// A parsed config together with its verbatim JSON and resolved seed/output.
pub struct Invocation {
    pub command: &'static str,
    pub raw: Value,
    /// Directory relative paths inside the config are resolved against.
    pub base: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
}

impl Invocation {
    fn load(cli: &Cli, command: &'static str) -> Result<Self> {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{command} needs --config <path>")))?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: Value = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let seed = match cli.seed {
            Some(s) => s,
            None => raw
                .get("seed")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::Config("a seed is required (--seed or \"seed\" in the config)".into()))?,
        };
        let out = match &cli.out {
            Some(o) => o.clone(),
            None => raw
                .get("out")
                .and_then(Value::as_str)
                .map(|o| base.join(o))
                .ok_or_else(|| Error::Config("an output directory is required (--out or \"out\" in the config)".into()))?,
        };
        Ok(Self { command, raw, base, seed, out })
    }

    fn config<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.raw.clone()).map_err(|e| Error::Config(format!("{} config: {e}", self.command)))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn manifest(&self, extra: Value) -> Value {
        json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "config": self.raw,
            "result": extra,
        })
    }
}

/// Output directory written under a temporary name and renamed into place
/// on [`OutDir::commit`]; dropped uncommitted, it is removed.
pub struct OutDir {
    tmp: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl OutDir {
    pub fn create(target: &Path) -> Result<Self> {
        if target.exists() {
            let empty = target.is_dir()
                && std::fs::read_dir(target).map_err(|e| Error::io(target, e))?.next().is_none();
            if !empty {
                return Err(Error::Config(format!(
                    "output directory {} already exists and is not empty",
                    target.display()
                )));
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        let name = target
            .file_name()
            .ok_or_else(|| Error::Config(format!("invalid output directory {}", target.display())))?;
        let tmp = parent.join(format!(".{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(Self { tmp, target: target.to_path_buf(), committed: false })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.tmp.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.tmp.join(name);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn commit(mut self) -> Result<()> {
        if self.target.exists() {
            std::fs::remove_dir(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        std::fs::rename(&self.tmp, &self.target).map_err(|e| Error::io(&self.target, e))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = std::fs::remove_dir_all(&self.tmp);
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- data

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV path, or `"@synthetic"` for the bundled dataset.
    pub path: PathBuf,
    #[serde(default)]
    pub schema: CsvSchema,
    /// Covariates centred and scaled by their sample standard deviation.
    #[serde(default)]
    pub standardize: Vec<String>,
    /// Covariates of the onset model; all when absent.
    #[serde(default)]
    pub design_x: Option<Vec<String>>,
    /// Covariates of the progression model; all when absent.
    #[serde(default)]
    pub design_t: Option<Vec<String>>,
}

/// Data as fitted, plus the standardization applied to it.
pub struct LoadedData {
    pub dataset: Dataset,
    pub transforms: Vec<ColumnTransform>,
}

impl LoadedData {
    /// Maps a named covariate vector on the original scale to dataset order
    /// and the fitted scale.
    pub fn covariate_vector(&self, given: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        let names = &self.dataset.covariate_names;
        if let Some(extra) = given.keys().find(|k| !names.contains(k)) {
            return Err(Error::Config(format!("unknown covariate '{extra}' in 'given'")));
        }
        names
            .iter()
            .map(|n| {
                let v = *given
                    .get(n)
                    .ok_or_else(|| Error::Config(format!("'given' lacks a value for covariate '{n}'")))?;
                Ok(match self.transforms.iter().find(|t| &t.name == n) {
                    Some(t) => (v - t.mean) / t.sd,
                    None => v,
                })
            })
            .collect()
    }
}

pub fn load_data(cfg: &DataConfig, base: &Path) -> Result<LoadedData> {
    let raw = if cfg.path.as_os_str() == SYNTHETIC {
        data::read_csv(SYNTHETIC_CSV.as_bytes(), &cfg.schema)?
    } else {
        let path = if cfg.path.is_absolute() { cfg.path.clone() } else { base.join(&cfg.path) };
        data::load_csv(&path, &cfg.schema).map_err(|e| match e {
            e @ Error::Io { .. } => e,
            other => Error::Schema(format!("{}: {other}", path.display())),
        })?
    };
    let index = |name: &String| {
        raw.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("unknown covariate '{name}'")))
    };
    let columns: Vec<usize> = cfg.standardize.iter().map(index).collect::<Result<_>>()?;
    let (standardized, transforms) = data::standardize(&raw, &columns)?;
    let design = |d: &Option<Vec<String>>| -> Result<Vec<usize>> {
        match d {
            Some(names) => names.iter().map(index).collect(),
            None => Ok((0..raw.n_covariates()).collect()),
        }
    };
    let dataset = Dataset::with_designs(
        standardized.observations,
        standardized.covariate_names,
        design(&cfg.design_x)?,
        design(&cfg.design_t)?,
    )?;
    Ok(LoadedData { dataset, transforms })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyPreset {
    /// Number of covariates (0 or 2).
    pub p: usize,
    pub censoring: Censoring,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    /// Simulation-study generating model and visit process; overridden
    /// field by field by `model` and `screening`.
    #[serde(default)]
    pub study: Option<StudyPreset>,
    #[serde(default)]
    pub model: Option<GenModel>,
    #[serde(default)]
    pub screening: Option<ScreeningConfig>,
    /// Also write the latent `(x, t)` pairs.
    #[serde(default = "yes")]
    pub latent: bool,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

fn cmd_simulate(inv: &Invocation) -> Result<Outcome> {
    let cfg: SimulateConfig = inv.config()?;
    let model = match (&cfg.model, cfg.study) {
        (Some(m), _) => m.clone(),
        (None, Some(s)) => GenModel::study(s.p),
        (None, None) => return Err(Error::Config("simulate needs 'model' or 'study'".into())),
    };
    let screening = match (cfg.screening, cfg.study) {
        (Some(s), _) => s,
        (None, Some(s)) => study_screening(s.censoring, s.p),
        (None, None) => return Err(Error::Config("simulate needs 'screening' or 'study'".into())),
    };
    let sim = simulate::simulate_dataset(cfg.n, &model, &screening, inv.seed, cfg.execution)?;
    let out = OutDir::create(&inv.out)?;
    data::write_csv(&sim.dataset, out.path("data.csv"))?;
    if cfg.latent {
        simulate::write_latent_csv(&sim.latent, out.path("latent.csv"))?;
    }
    let summary = sim.dataset.summary();
    log::info!("simulated {} rows, delta proportions {:?}", summary.n, summary.event_proportions);
    write_json(&out.path("manifest.json"), &inv.manifest(json!({ "summary": summary })))?;
    out.commit()?;
    Ok(Outcome::Completed)
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub gibbs: GibbsConfig,
    /// Fixed confounder effects; a plain fit when absent.
    #[serde(default)]
    pub sensitivity: Option<SensitivitySpec>,
    /// Also emit marginal CIFs of x, t and y.
    #[serde(default)]
    pub cif: Option<CifConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Writes the manifest, chain CSVs and data summary of a fit into `dir`.
fn persist_fit(draws: &PosteriorDraws, raw: &Value, summary: &DatasetSummary, transforms: &[ColumnTransform], dir: &Path) -> Result<()> {
    write_chain_csvs(draws, dir)?;
    RunManifest::new(draws, raw.clone())?.write(dir.join("manifest.json"))?;
    write_json(&dir.join("data_summary.json"), &json!({ "summary": summary, "standardized": transforms }))
}

fn write_curves(curves: &[CifCurve], dir: &Path, gnuplot: bool) -> Result<()> {
    for c in curves {
        let stem = format!("cif_{}", c.target);
        c.write_csv(dir.join(format!("{stem}.csv")))?;
        c.write_json(dir.join(format!("{stem}.json")))?;
        if gnuplot {
            c.write_gnuplot(dir.join(format!("{stem}.gp")), &format!("{stem}.csv"), &format!("{stem}.png"))?;
        }
    }
    Ok(())
}

fn cmd_fit(inv: &Invocation) -> Result<Outcome> {
    let cfg: FitConfig = inv.config()?;
    cfg.priors.validate()?;
    cfg.gibbs.validate()?;
    if let Some(c) = &cfg.cif {
        c.validate()?;
    }
    let loaded = load_data(&cfg.data, &inv.base)?;
    let data = &loaded.dataset;
    let draws = gibbs::run(data, cfg.model, cfg.priors, &cfg.gibbs, inv.seed, cfg.sensitivity)?;
    let out = OutDir::create(&inv.out)?;
    persist_fit(&draws, &inv.raw, &data.summary(), &loaded.transforms, &out.path(""))?;
    if let Some(c) = &cfg.cif {
        let p = Predictive::from_posterior(&draws, data, c.max_draws)?;
        let grid = c.grid(data)?;
        let curves = cif::all_targets(&p, Covariates::Empirical, &grid, c, inv.seed, cfg.gibbs.execution)?;
        write_curves(&curves, &out.path(""), false)?;
    }
    out.commit()?;
    Ok(Outcome::from_converged(draws.converged))
}

// ---------------------------------------------------------------- fit-em

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitEmConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn cmd_fit_em(inv: &Invocation) -> Result<Outcome> {
    let cfg: FitEmConfig = inv.config()?;
    let loaded = load_data(&cfg.data, &inv.base)?;
    let fit = run_em(&loaded.dataset, &cfg.em, inv.seed)?;
    let out = OutDir::create(&inv.out)?;
    fit.write_json(out.path("em.json"))?;
    let best = fit.best();
    let result = json!({
        "best_start": best.start,
        "loglik": best.loglik,
        "converged": best.converged,
        "iterations": best.iterations,
        "params": best.params.to_vec(),
        "param_names": fit.param_names,
        "standardized": loaded.transforms,
    });
    write_json(&out.path("manifest.json"), &inv.manifest(result))?;
    out.commit()?;
    Ok(Outcome::from_converged(best.converged))
}

// ---------------------------------------------------------------- select

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    pub data: DataConfig,
    /// Family pairs such as `"lognormal-weibull"`, or `["all"]` for all 16.
    pub models: Vec<String>,
    /// Existing run directories by model name; other models are fitted here.
    #[serde(default)]
    pub fits: BTreeMap<String, PathBuf>,
    #[serde(default = "yes")]
    pub fit_on_demand: bool,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub gibbs: GibbsConfig,
    #[serde(default)]
    pub criteria: CriteriaConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn parse_models(names: &[String]) -> Result<Vec<ModelSpec>> {
    if names.iter().any(|n| n == "all") {
        return Ok(ModelSpec::all());
    }
    let mut models: Vec<ModelSpec> = names.iter().map(|n| n.parse()).collect::<Result<_>>()?;
    models.dedup();
    if models.is_empty() {
        return Err(Error::Config("no models to compare".into()));
    }
    Ok(models)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UndefinedModel {
    pub model: ModelSpec,
    pub observations: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub table: CriteriaTable,
    /// Models whose criteria could not be computed.
    pub undefined: Vec<UndefinedModel>,
}

fn cmd_select(inv: &Invocation) -> Result<Outcome> {
    let cfg: SelectConfig = inv.config()?;
    let models = parse_models(&cfg.models)?;
    let loaded = load_data(&cfg.data, &inv.base)?;
    let data = &loaded.dataset;
    let out = OutDir::create(&inv.out)?;
    let mut rows: Vec<Criteria> = Vec::new();
    let mut undefined = Vec::new();
    let mut converged = true;
    for model in models {
        let name = model.name();
        let draws = match cfg.fits.get(&name) {
            Some(dir) => PosteriorDraws::load(inv.resolve(dir))?,
            None if cfg.fit_on_demand => {
                log::info!("fitting {name}");
                let d = gibbs::run(data, model, cfg.priors, &cfg.gibbs, inv.seed, None)?;
                persist_fit(&d, &inv.raw, &data.summary(), &loaded.transforms, &out.subdir(&format!("fits/{name}"))?)?;
                d
            }
            None => return Err(Error::Config(format!("no fit given for {name} and fit_on_demand is off"))),
        };
        converged &= draws.converged;
        match modelsel::criteria(&draws, data, &cfg.criteria, cfg.gibbs.execution) {
            Ok(c) => rows.push(c),
            Err(Error::UndefinedCriterion(observations)) => {
                log::warn!("{name}: criteria undefined at {} observations", observations.len());
                undefined.push(UndefinedModel { model, observations });
            }
            Err(e) => return Err(e),
        }
    }
    let report = SelectionReport { table: CriteriaTable::new(rows), undefined };
    let text = report.table.to_text();
    print!("{text}");
    std::fs::write(out.path("criteria.txt"), &text).map_err(|e| Error::io(out.path("criteria.txt"), e))?;
    write_json(&out.path("criteria.json"), &report)?;
    write_json(&out.path("manifest.json"), &inv.manifest(json!({ "best": report.table.best().map(|c| c.model) })))?;
    out.commit()?;
    Ok(Outcome::from_converged(converged))
}

// ---------------------------------------------------------------- cif

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CifCommandConfig {
    /// Run directory written by `fit`.
    pub run: PathBuf,
    /// The data the run was fitted to (the covariate distribution and grid).
    pub data: DataConfig,
    #[serde(default)]
    pub cif: CifConfig,
    /// Covariates on their original scale for conditional curves; marginal
    /// curves when absent.
    #[serde(default)]
    pub given: Option<BTreeMap<String, f64>>,
    /// Explicit grid; the default spans 0 to 1.25 × max finite r.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default = "all_targets")]
    pub targets: Vec<Target>,
    #[serde(default)]
    pub gnuplot: bool,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn all_targets() -> Vec<Target> {
    Target::ALL.to_vec()
}

fn curves_for(
    p: &Predictive,
    targets: &[Target],
    z: Option<&[f64]>,
    grid: &[f64],
    config: &CifConfig,
    seed: u64,
    exec: Execution,
) -> Result<Vec<CifCurve>> {
    targets
        .iter()
        .map(|&t| match (t, z) {
            (Target::Y, Some(z)) => cif::total_cif(p, Covariates::Fixed(z), grid, config, seed, exec),
            (_, Some(z)) => cif::conditional_cif(p, t, z, grid, config, exec),
            (_, None) => cif::marginal_cif(p, t, grid, config, seed, exec),
        })
        .collect()
}

fn cmd_cif(inv: &Invocation) -> Result<Outcome> {
    let cfg: CifCommandConfig = inv.config()?;
    cfg.cif.validate()?;
    let loaded = load_data(&cfg.data, &inv.base)?;
    let draws = PosteriorDraws::load(inv.resolve(&cfg.run))?;
    let p = Predictive::from_posterior(&draws, &loaded.dataset, cfg.cif.max_draws)?;
    let z = cfg.given.as_ref().map(|g| loaded.covariate_vector(g)).transpose()?;
    let grid = match &cfg.grid {
        Some(g) => g.clone(),
        None => cfg.cif.grid(&loaded.dataset)?,
    };
    let curves = curves_for(&p, &cfg.targets, z.as_deref(), &grid, &cfg.cif, inv.seed, cfg.execution)?;
    let out = OutDir::create(&inv.out)?;
    write_curves(&curves, &out.path(""), cfg.gnuplot)?;
    write_json(
        &out.path("manifest.json"),
        &inv.manifest(json!({ "draws": p.draws.len(), "posterior_converged": draws.converged })),
    )?;
    out.commit()?;
    Ok(Outcome::Completed)
}

// ---------------------------------------------------------------- sensitivity

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    pub data: DataConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub gibbs: GibbsConfig,
    /// `(β_xw, β_tw)` cells, one independent fit each.
    #[serde(default = "default_sensitivity_grid")]
    pub grid: Vec<(f64, f64)>,
    #[serde(default)]
    pub cif: CifConfig,
    #[serde(default)]
    pub given: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

pub fn default_sensitivity_grid() -> Vec<(f64, f64)> {
    (-3..=3).map(|k| (k as f64, k as f64)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub beta_xw: f64,
    pub beta_tw: f64,
    pub dir: String,
    pub converged: bool,
    pub summary: Vec<diagnostics::ParameterSummary>,
}

fn cmd_sensitivity(inv: &Invocation) -> Result<Outcome> {
    let cfg: SensitivityConfig = inv.config()?;
    cfg.gibbs.validate()?;
    cfg.cif.validate()?;
    if cfg.grid.is_empty() {
        return Err(Error::Config("empty sensitivity grid".into()));
    }
    let loaded = load_data(&cfg.data, &inv.base)?;
    let data = &loaded.dataset;
    let z = cfg.given.as_ref().map(|g| loaded.covariate_vector(g)).transpose()?;
    let grid = cfg.cif.grid(data)?;
    let out = OutDir::create(&inv.out)?;
    let mut cells = Vec::new();
    for (k, &(bx, bt)) in cfg.grid.iter().enumerate() {
        log::info!("sensitivity cell {} of {}: ({bx}, {bt})", k + 1, cfg.grid.len());
        let spec = SensitivitySpec { beta_xw: bx, beta_tw: bt };
        let draws = gibbs::run(data, cfg.model, cfg.priors, &cfg.gibbs, inv.seed, Some(spec))?;
        let name = format!("cell_{}", k + 1);
        let dir = out.subdir(&name)?;
        persist_fit(&draws, &inv.raw, &data.summary(), &loaded.transforms, &dir)?;
        let p = Predictive::from_posterior(&draws, data, cfg.cif.max_draws)?;
        let curves = curves_for(&p, &Target::ALL, z.as_deref(), &grid, &cfg.cif, inv.seed, cfg.gibbs.execution)?;
        write_curves(&curves, &dir, false)?;
        cells.push(SensitivityCell {
            beta_xw: bx,
            beta_tw: bt,
            dir: name,
            converged: draws.converged,
            summary: draws.summarize(&cfg.cif.probs)?,
        });
    }
    let converged = cells.iter().all(|c| c.converged);
    write_json(&out.path("sensitivity.json"), &cells)?;
    write_json(&out.path("manifest.json"), &inv.manifest(json!({ "cells": cells.len(), "converged": converged })))?;
    out.commit()?;
    Ok(Outcome::from_converged(converged))
}

// ---------------------------------------------------------------- diagnose

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub run: PathBuf,
    #[serde(default = "default_probs")]
    pub probs: Vec<f64>,
    #[serde(default)]
    pub r_max: Option<f64>,
    #[serde(default)]
    pub ess_min: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_probs() -> Vec<f64> {
    vec![0.025, 0.5, 0.975]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub quantiles: Vec<f64>,
    /// `None` for parameters fixed by the family.
    pub r_hat: Option<f64>,
    pub split_r_hat: Option<f64>,
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub model: ModelSpec,
    pub chains: usize,
    pub retained_per_chain: usize,
    pub probs: Vec<f64>,
    pub r_max: f64,
    pub ess_min: f64,
    pub converged: bool,
    pub parameters: Vec<ParameterDiagnostics>,
}

pub fn diagnose(draws: &PosteriorDraws, probs: &[f64], r_max: f64, ess_min: f64) -> Result<DiagnosticsReport> {
    let free = draws.free_params();
    let mut converged = true;
    let summaries = draws.summarize(probs)?;
    let mut parameters = Vec::new();
    for (j, s) in summaries.into_iter().enumerate() {
        let (mut r_hat, mut split_r_hat, mut ess) = (None, None, None);
        if free.contains(&j) {
            let columns: Vec<Vec<f64>> = (0..draws.n_chains()).map(|c| draws.chain_param(c, j)).collect();
            let assessed = ChainMatrix::new(columns.iter().map(Vec::as_slice).collect()).and_then(|cm| {
                Ok((diagnostics::gelman_rubin(&cm)?, diagnostics::split_gelman_rubin(&cm)?, diagnostics::ess(&cm)?))
            });
            let (r, sr, e) = match assessed {
                Ok(v) => v,
                Err(Error::DegenerateChains(_)) => (f64::INFINITY, f64::INFINITY, 0.0),
                Err(e) => return Err(e),
            };
            converged &= r < r_max && e >= ess_min;
            r_hat = Some(r);
            split_r_hat = Some(sr);
            ess = Some(e);
        }
        parameters.push(ParameterDiagnostics {
            name: s.name,
            mean: s.mean,
            sd: s.sd,
            quantiles: s.quantiles,
            r_hat,
            split_r_hat,
            ess,
        });
    }
    Ok(DiagnosticsReport {
        model: draws.spec,
        chains: draws.n_chains(),
        retained_per_chain: draws.n_retained(),
        probs: probs.to_vec(),
        r_max,
        ess_min,
        converged,
        parameters,
    })
}

impl DiagnosticsReport {
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
        let mut s = format!(
            "{}: {} chains × {} retained draws, {}\n",
            self.model,
            self.chains,
            self.retained_per_chain,
            if self.converged { "converged" } else { "NOT converged" }
        );
        let _ = write!(s, "{:<16} {:>10} {:>10}", "parameter", "mean", "sd");
        for p in &self.probs {
            let _ = write!(s, " {:>10}", format!("q{p}"));
        }
        let _ = writeln!(s, " {:>8} {:>8} {:>10}", "R", "split-R", "ESS");
        for p in &self.parameters {
            let _ = write!(s, "{:<16} {:>10.4} {:>10.4}", p.name, p.mean, p.sd);
            for q in &p.quantiles {
                let _ = write!(s, " {q:>10.4}");
            }
            let _ = writeln!(s, " {:>8} {:>8} {:>10}", opt(p.r_hat, 4), opt(p.split_r_hat, 4), opt(p.ess, 0));
        }
        s
    }
}

fn cmd_diagnose(cli: &Cli, run: Option<&Path>) -> Result<Outcome> {
    let (cfg, base) = match (&cli.config, run) {
        (_, Some(r)) => {
            let base = PathBuf::new();
            let cfg = DiagnoseConfig {
                run: r.to_path_buf(),
                probs: default_probs(),
                r_max: None,
                ess_min: None,
                seed: None,
                out: None,
            };
            (cfg, base)
        }
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let cfg: DiagnoseConfig =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("diagnose config: {e}")))?;
            (cfg, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        (None, None) => return Err(Error::Config("diagnose needs a run directory or --config".into())),
    };
    let run_dir = if cfg.run.is_absolute() { cfg.run.clone() } else { base.join(&cfg.run) };
    let manifest = RunManifest::read(run_dir.join("manifest.json"))?;
    let stopping: gibbs::StoppingRule = manifest
        .config
        .pointer("/gibbs/stopping")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .unwrap_or_default();
    let draws = PosteriorDraws::load(&run_dir)?;
    let report = diagnose(&draws, &cfg.probs, cfg.r_max.unwrap_or(stopping.r_max), cfg.ess_min.unwrap_or(stopping.ess_min))?;
    print!("{}", report.to_text());
    let out = cli.out.clone().or_else(|| cfg.out.as_ref().map(|o| base.join(o)));
    if let Some(target) = out {
        let dir = OutDir::create(&target)?;
        write_json(&dir.path("diagnostics.json"), &report)?;
        dir.commit()?;
    }
    Ok(Outcome::from_converged(report.converged))
}
