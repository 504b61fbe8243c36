use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{ChainDraws, DiagnosticRecord, PosteriorDraws};
use super::sampler::{ChainState, SensitivitySpec};
use super::tuning::TuningOutcome;
use crate::data::format_number;
use crate::diagnostics::ParameterSummary;
use crate::error::{Error, Result};
use crate::model::{AftParams, ModelSpec};

/// Everything needed to interpret and reproduce a sampler run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub model: ModelSpec,
    pub config: serde_json::Value,
    pub param_names: Vec<String>,
    pub px: usize,
    pub n_chains: usize,
    pub total_draws: usize,
    pub retained_per_chain: usize,
    pub converged: bool,
    pub proposal_sd: f64,
    pub acceptance_rate: f64,
    pub tuning: Option<TuningOutcome>,
    pub history: Vec<DiagnosticRecord>,
    pub summary: Vec<ParameterSummary>,
    pub sensitivity: Option<SensitivitySpec>,
    pub chain_files: Vec<String>,
}

impl RunManifest {
    pub fn new(draws: &PosteriorDraws, config: serde_json::Value) -> Result<Self> {
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: draws.seed,
            model: draws.spec,
            config,
            param_names: draws.param_names.clone(),
            px: draws.px,
            n_chains: draws.n_chains(),
            total_draws: draws.total_draws,
            retained_per_chain: draws.n_retained(),
            converged: draws.converged,
            proposal_sd: draws.proposal_sd,
            acceptance_rate: draws.acceptance_rate,
            tuning: draws.tuning.clone(),
            history: draws.history.clone(),
            summary: draws.summarize(&[0.025, 0.5, 0.975])?,
            sensitivity: draws.sensitivity,
            chain_files: (0..draws.n_chains()).map(chain_file_name).collect(),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn chain_file_name(c: usize) -> String {
    format!("chain_{}.csv", c + 1)
}

/// Writes `chain_<k>.csv` (iteration, then one column per parameter) into `dir`.
pub fn write_chain_csvs(draws: &PosteriorDraws, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let n = draws.n_params();
    draws
        .chains
        .iter()
        .enumerate()
        .map(|(c, chain)| {
            let path = dir.join(chain_file_name(c));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
            let mut header = vec!["iteration".to_string()];
            header.extend(draws.param_names.iter().cloned());
            w.write_record(&header)?;
            for (k, row) in chain.values.chunks(n).enumerate() {
                let mut rec = vec![(chain.first_iteration + k).to_string()];
                rec.extend(row.iter().map(|v| format_number(*v)));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Reads one chain file back as `(first_iteration, row-major values)`.
pub fn read_chain_csv(path: impl AsRef<Path>, n_params: usize) -> Result<(usize, Vec<f64>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let width = rdr.headers()?.len();
    if width != n_params + 1 {
        return Err(Error::Schema(format!(
            "{}: expected {} columns, found {width}",
            path.display(),
            n_params + 1
        )));
    }
    let mut first = None;
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: col.to_string(),
                value: cell.to_string(),
            })?;
            if col == 0 {
                first.get_or_insert(v as usize);
            } else {
                values.push(v);
            }
        }
    }
    Ok((first.unwrap_or(1), values))
}

impl PosteriorDraws {
    /// Reassembles draws from a run directory written by the `fit` command.
    /// The final latent states are not persisted and come back empty.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = RunManifest::read(dir.join("manifest.json"))?;
        let n = m.param_names.len();
        let chains = m
            .chain_files
            .iter()
            .map(|f| {
                let (first_iteration, values) = read_chain_csv(dir.join(f), n)?;
                if values.len() < n {
                    return Err(Error::Schema(format!("{f} holds no draws")));
                }
                let accepted = Vec::new();
                let final_state = ChainState {
                    params: AftParams::from_slice(&values[values.len().saturating_sub(n)..], m.px),
                    x_aug: Vec::new(),
                    t_aug: Vec::new(),
                    w: Vec::new(),
                    proposal_sd: m.proposal_sd,
                };
                Ok(ChainDraws {
                    first_iteration,
                    values,
                    accepted,
                    final_state,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorDraws {
            spec: m.model,
            param_names: m.param_names,
            px: m.px,
            chains,
            total_draws: m.total_draws,
            converged: m.converged,
            proposal_sd: m.proposal_sd,
            acceptance_rate: m.acceptance_rate,
            tuning: m.tuning,
            history: m.history,
            seed: m.seed,
            sensitivity: m.sensitivity,
        })
    }
}
