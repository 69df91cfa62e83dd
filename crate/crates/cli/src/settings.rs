//! Config files (TOML) and `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use decomp_core::config::ExperimentConfig;
use decomp_core::simulator::SyntheticDatasetSpec;
use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub fn read_table(path: &Path) -> CliResult<Table> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    text.parse::<Table>().map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string (so `--set strategies=[\"rand\"]` and `--set mode=roi`
/// both work).
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` overrides, creating intermediate tables as needed.
pub fn apply_overrides(table: &mut Table, sets: &[String]) -> CliResult<()> {
    for set in sets {
        let (key, raw) = set
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("override `{set}` is not of the form key=value")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(CliError::Validation(format!("bad override key `{key}`")));
        }
        let mut node = &mut *table;
        for part in &parts[..parts.len() - 1] {
            let entry = node.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Validation(format!("`{part}` in `{key}` is not a table")))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

fn decode<T: DeserializeOwned>(table: Table) -> CliResult<T> {
    Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Validation(e.to_string()))
}

/// Loads an experiment config (defaults when no file is given), applies the
/// overrides and validates the result. A relative `dataset_path` is taken
/// relative to the config file.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> CliResult<ExperimentConfig> {
    let mut table = match path {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    apply_overrides(&mut table, sets)?;
    let mut config: ExperimentConfig = decode(table)?;
    if let (Some(dp), Some(cfg)) = (&config.dataset_path, path) {
        if dp.is_relative() {
            let base = cfg.parent().map(Path::to_path_buf).unwrap_or_default();
            config.dataset_path = Some(base.join(dp));
        }
    }
    config.validate()?;
    Ok(config)
}

/// Loads a dataset spec, either a bare spec file or the `[dataset]` table of
/// an experiment config.
pub fn load_dataset_spec(path: Option<&Path>, sets: &[String]) -> CliResult<SyntheticDatasetSpec> {
    let mut table = match path {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    apply_overrides(&mut table, sets)?;
    let table = match table.remove("dataset") {
        Some(Value::Table(t)) => t,
        Some(_) => return Err(CliError::Validation("`dataset` must be a table".into())),
        None => table,
    };
    let spec: SyntheticDatasetSpec = decode(table)?;
    spec.validate()?;
    Ok(spec)
}

pub fn ensure_dir(path: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(path)?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_tables() {
        let mut t: Table = "tau = 0.5\n[dataset]\nnoise = 1.0\n".parse().unwrap();
        apply_overrides(
            &mut t,
            &["dataset.noise=0.25".into(), "strategies=[\"rand\", \"uncert+decomp\"]".into(), "model.epochs=5".into()],
        )
        .unwrap();
        let c: ExperimentConfig = decode(t).unwrap();
        assert_eq!(c.dataset.noise, 0.25);
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.model.epochs, 5);
        assert_eq!(c.strategies.len(), 2);
    }

    #[test]
    fn bare_words_become_strings() {
        let mut t = Table::new();
        apply_overrides(&mut t, &["dataset.mode=roi".into()]).unwrap();
        let c: ExperimentConfig = decode(t).unwrap();
        assert_eq!(c.dataset.mode, decomp_core::simulator::DatasetMode::Roi);
    }

    #[test]
    fn malformed_overrides_are_validation_errors() {
        let mut t = Table::new();
        assert!(matches!(apply_overrides(&mut t, &["tau".into()]), Err(CliError::Validation(_))));
        let mut t: Table = "tau = 0.5".parse().unwrap();
        assert!(apply_overrides(&mut t, &["tau.x=1".into()]).is_err());
        let t: Table = "no_such_key = 1".parse().unwrap();
        assert!(decode::<ExperimentConfig>(t).is_err());
    }
}
