use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use clap::ValueEnum;
use decomp_core::config::ExperimentConfig;
use decomp_core::simulator::Benchmark;

use super::run::write_run;
use crate::error::CliResult;
use crate::output::{cycle_header, cycle_row};
use crate::settings::{ensure_dir, load_config};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    /// Confidence threshold 0.3, 0.5, 0.7.
    Tau,
    /// (k, m), (2k, m) and (k, 2m) images and regions per cycle.
    Budget,
    /// Equal budgets: (k, 2m) dense against (2k, m) sparse.
    DenseSparse,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Tau => "tau",
            SweepAxis::Budget => "budget",
            SweepAxis::DenseSparse => "dense-sparse",
        }
    }
}

/// Axis values (as written to the CSV) and the configs they produce.
pub fn sweep_points(base: &ExperimentConfig, axis: SweepAxis) -> Vec<(String, ExperimentConfig)> {
    let (k, m) = (base.n_image, base.n_region);
    let with_budget = |n_image: usize, n_region: usize| {
        let mut c = base.clone();
        c.n_image = n_image;
        c.n_region = n_region;
        (format!("{n_image}x{n_region}"), c)
    };
    match axis {
        SweepAxis::Tau => [0.3, 0.5, 0.7]
            .into_iter()
            .map(|tau| {
                let mut c = base.clone();
                c.tau = tau;
                (format!("{tau}"), c)
            })
            .collect(),
        SweepAxis::Budget => vec![with_budget(k, m), with_budget(2 * k, m), with_budget(k, 2 * m)],
        SweepAxis::DenseSparse => vec![with_budget(k, 2 * m), with_budget(2 * k, m)],
    }
}

/// Runs every axis value on one shared dataset. Each value gets its own
/// sub-directory; `sweep.csv` merges all rows with `axis` and `axis_value`
/// columns in front.
pub fn cmd_sweep(config: Option<&Path>, sets: &[String], axis: SweepAxis, out: &Path) -> CliResult<()> {
    let base = load_config(config, sets)?;
    let points = sweep_points(&base, axis);
    let first = Benchmark::new(points[0].1.clone())?;
    ensure_dir(out)?;
    let mut merged = csv::Writer::from_writer(BufWriter::new(File::create(out.join("sweep.csv"))?));
    let mut header = vec!["axis".to_string(), "axis_value".to_string()];
    header.extend(cycle_header(first.dataset().num_classes));
    merged.write_record(&header)?;
    for (value, config) in points {
        let bench = first.with_config(config)?;
        let records = bench.run_all()?;
        write_run(&bench, &records, &out.join(format!("{}={value}", axis.name())))?;
        for r in &records {
            let mut row = vec![axis.name().to_string(), value.clone()];
            row.extend(cycle_row(r));
            merged.write_record(&row)?;
        }
    }
    merged.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_sparse_spend_the_same_budget() {
        let base = ExperimentConfig { n_image: 3, n_region: 5, ..Default::default() };
        let pts = sweep_points(&base, SweepAxis::DenseSparse);
        let budgets: Vec<usize> = pts.iter().map(|(_, c)| c.n_image * c.n_region * c.region_size.pow(2)).collect();
        assert_eq!(budgets[0], budgets[1]);
        assert_eq!(pts[0].0, "3x10");
        assert_eq!(pts[1].0, "6x5");
    }

    #[test]
    fn tau_values() {
        let pts = sweep_points(&ExperimentConfig::default(), SweepAxis::Tau);
        let taus: Vec<f64> = pts.iter().map(|(_, c)| c.tau).collect();
        assert_eq!(taus, vec![0.3, 0.5, 0.7]);
    }
}
