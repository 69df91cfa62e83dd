mod gen;
mod report;
mod run;
mod sweep;

pub use gen::cmd_gen;
pub use report::{cmd_report, REPORT_HEADER};
pub use run::cmd_run;
pub use sweep::{cmd_sweep, sweep_points, SweepAxis};
