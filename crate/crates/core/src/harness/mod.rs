//! Experiment orchestration: BER sweeps, metrics, latency profiling and
//! reports.

mod config;
mod metrics;
mod profile;
mod report;
mod sweep;

pub use config::{config_to_args, parse_config};
pub use metrics::{affected_fraction, differs, trimmed_fraction, DEFAULT_AFFECTED_THRESHOLD};
pub use profile::{linear_fit, profile, LinearFit, ProfileRow, ProfileSpec, ProfileTable};
pub use report::{
    mean_ci, records_to_csv, summarize, write_report, GroupSummary, ParetoPoint, Summary, ACC_VS_BER_FILE,
    PARETO_FILE, SUMMARY_FILE,
};
pub use sweep::{
    default_ber_grid, fault_seed, read_records, read_timings, records_header, run_cell, sweep, tune_cosine_alpha,
    Cell, RunRecord, SweepOutcome, SweepSpec, TimingRecord, RECORDS_FILE, TIMINGS_FILE,
};
