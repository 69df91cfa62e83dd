use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub const REPORT_HEADER: [&str; 7] =
    ["source", "axis_value", "strategy", "repeat", "cycle", "annotated_fraction", "metric"];

/// Accepts a run directory (reads its `cycles.csv` or `sweep.csv`) or a CSV
/// file directly.
fn resolve(input: &Path) -> CliResult<PathBuf> {
    if input.is_dir() {
        for name in ["cycles.csv", "sweep.csv"] {
            let p = input.join(name);
            if p.is_file() {
                return Ok(p);
            }
        }
        return Err(CliError::Validation(format!("{}: no cycles.csv or sweep.csv", input.display())));
    }
    Ok(input.to_path_buf())
}

/// Merges cycle tables into one long table of metric against annotated
/// fraction, one row per input row.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> CliResult<()> {
    if inputs.is_empty() {
        return Err(CliError::Validation("report needs at least one input".into()));
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for input in inputs {
        let path = resolve(input)?;
        let malformed = |msg: String| CliError::Validation(format!("{}: {msg}", path.display()));
        let mut reader = csv::Reader::from_reader(File::open(&path)?);
        let header = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let need = |name: &str| col(name).ok_or_else(|| malformed(format!("missing column `{name}`")));
        let (strategy, repeat, cycle, fraction, metric) =
            (need("strategy")?, need("repeat")?, need("cycle")?, need("annotated_fraction")?, need("metric")?);
        let axis_value = col("axis_value");
        let source = input.display().to_string();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| malformed(e.to_string()))?;
            let field = |i: usize| record.get(i).unwrap_or_default().to_string();
            let number = |i: usize| -> CliResult<String> {
                let v = field(i);
                v.parse::<f64>().map_err(|_| malformed(format!("row {}: `{v}` is not a number", line + 2)))?;
                Ok(v)
            };
            let integer = |i: usize| -> CliResult<String> {
                let v = field(i);
                v.parse::<u64>().map_err(|_| malformed(format!("row {}: `{v}` is not an integer", line + 2)))?;
                Ok(v)
            };
            rows.push(vec![
                source.clone(),
                axis_value.map(field).unwrap_or_default(),
                field(strategy),
                integer(repeat)?,
                integer(cycle)?,
                number(fraction)?,
                number(metric)?,
            ]);
        }
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out)?));
    w.write_record(REPORT_HEADER)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
