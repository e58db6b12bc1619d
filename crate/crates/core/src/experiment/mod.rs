//! Experiment configs and the subcommands behind the CLI.
//!
//! CSV files carry fixed headers: `defect_<d>.csv` has `t,s,case,delta,bound`,
//! `growth.csv` has `N,trial,sup_norm`. JSON summaries carry `schema_version`.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_defect, cmd_orbit, cmd_probe, cmd_replay, defect_csv_name, resolve_out, DefectEntry, DefectOutput,
    FrameRow, OrbitOutput, ReplayOutput, ReplayRun, SCHEMA_VERSION,
};
pub use config::{Command, ExperimentConfig};
