//! cycles.csv and summary.json.

use std::io::Write;

use decomp_core::config::ExperimentConfig;
use decomp_core::simulator::{cycles_to_target, Benchmark, CycleRecord};
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

/// Formats a float with 9 significant digits, without locale influence.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if (-4..9).contains(&magnitude) {
        let decimals = (8 - magnitude).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.8e}")
    }
}

fn opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub fn cycle_header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["strategy", "repeat", "cycle", "annotated_units", "annotated_fraction", "metric"].map(String::from).to_vec();
    for prefix in ["metric_c", "annotated_c", "sigma_c", "w_c"] {
        h.extend((0..num_classes).map(|c| format!("{prefix}{c}")));
    }
    h
}

pub fn cycle_row(r: &CycleRecord) -> Vec<String> {
    let c = r.per_class_annotated.len();
    let mut row = vec![
        r.strategy.to_string(),
        r.repeat.to_string(),
        r.cycle.to_string(),
        r.annotated_units.to_string(),
        fmt_float(r.annotated_fraction),
        fmt_float(r.metric),
    ];
    row.extend(r.per_class_metric.iter().map(|m| opt_float(*m)));
    row.extend(r.per_class_annotated.iter().map(u64::to_string));
    for snapshot in [&r.sigma, &r.weights] {
        match snapshot {
            Some(v) => row.extend(v.iter().map(|&x| fmt_float(x))),
            None => row.extend(std::iter::repeat_n(String::new(), c)),
        }
    }
    row
}

pub fn write_cycles(records: &[CycleRecord], num_classes: usize, out: impl Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(cycle_header(num_classes))?;
    for r in records {
        w.write_record(cycle_row(r))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub repeat: u32,
    pub seed: u64,
    pub cycles_run: u32,
    pub final_metric: f64,
    pub final_annotated_fraction: f64,
    /// First cycle whose test metric reached the target, if any.
    pub target_hit_cycle: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub reference_metric: f64,
    pub target_metric: f64,
    pub runs: Vec<RunSummary>,
}

pub fn summarize(bench: &Benchmark, records: &[CycleRecord]) -> Summary {
    let cfg = bench.config();
    let mut runs = Vec::new();
    for &strategy in &cfg.strategies {
        for repeat in 0..cfg.repeats {
            let mine: Vec<CycleRecord> =
                records.iter().filter(|r| r.strategy == strategy && r.repeat == repeat).cloned().collect();
            let Some(last) = mine.last() else { continue };
            runs.push(RunSummary {
                strategy: strategy.to_string(),
                repeat,
                seed: bench.repeat_seed(repeat),
                cycles_run: last.cycle,
                final_metric: last.metric,
                final_annotated_fraction: last.annotated_fraction,
                target_hit_cycle: cycles_to_target(&mine),
            });
        }
    }
    Summary {
        config: cfg.clone(),
        master_seed: cfg.seed,
        reference_metric: bench.reference(),
        target_metric: bench.target(),
        runs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_float(0.123456789123), "0.123456789");
        assert_eq!(fmt_float(1.0), "1.00000000");
        assert_eq!(fmt_float(0.00292968750), "0.00292968750");
        assert_eq!(fmt_float(123.0), "123.000000");
        assert_eq!(fmt_float(1.5e-7), "1.50000000e-7");
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(-0.5), "-0.500000000");
    }
}
