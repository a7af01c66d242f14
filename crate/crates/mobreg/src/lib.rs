//! File formats, experiments and the `mobreg` command line on top of
//! [`mobreg_core`].

pub mod commands;
pub mod experiments;
pub mod scenario_file;
