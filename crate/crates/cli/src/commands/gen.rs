use std::path::Path;

use decomp_core::simulator::generate_dataset;

use crate::error::CliResult;
use crate::settings::{ensure_dir, load_dataset_spec};

pub fn cmd_gen(config: Option<&Path>, sets: &[String], out: &Path) -> CliResult<()> {
    let spec = load_dataset_spec(config, sets)?;
    let dataset = generate_dataset(&spec)?;
    dataset.save(&ensure_dir(out)?)?;
    Ok(())
}
