//! Metropolis-within-Gibbs sampling of the two-transition AFT model.
//!
//! Each sweep updates `(β_x, σ_x, β_t, σ_t)` jointly with a random-walk
//! Metropolis step (scales on the log scale), then redraws every latent onset
//! time `xᵢ` and progression time `tᵢ` from its truncated full conditional.

mod output;
mod run;
mod sampler;
mod tuning;

pub use output::{read_chain_csv, write_chain_csvs, RunManifest};
pub use run::{run, ChainDraws, DiagnosticRecord, GibbsConfig, PosteriorDraws, StoppingRule};
pub use sampler::{bounds_t, bounds_x, initial_latent, is_feasible, ChainState, Priors, Sampler, SensitivitySpec};
pub use tuning::{confounder, rescale, tune_proposal, PilotRecord, TuningConfig, TuningOutcome};
