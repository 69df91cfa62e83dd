use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use decomp_core::simulator::{Benchmark, CycleRecord};

use crate::error::{CliError, CliResult};
use crate::output::{summarize, write_cycles};
use crate::settings::{ensure_dir, load_config};

/// Writes `cycles.csv` and `summary.json` for one finished benchmark run.
pub(crate) fn write_run(bench: &Benchmark, records: &[CycleRecord], out: &Path) -> CliResult<()> {
    ensure_dir(out)?;
    write_cycles(records, bench.dataset().num_classes, BufWriter::new(File::create(out.join("cycles.csv"))?))?;
    let summary = summarize(bench, records);
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(out.join("summary.json"), json + "\n")?;
    Ok(())
}

pub fn cmd_run(config: Option<&Path>, sets: &[String], out: &Path) -> CliResult<()> {
    let config = load_config(config, sets)?;
    let bench = Benchmark::new(config)?;
    let records = bench.run_all()?;
    write_run(&bench, &records, out)
}
