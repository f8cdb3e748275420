pub mod allocate;
pub mod evaluate;
pub mod generate;
pub mod sweep;
pub mod train;

use std::path::PathBuf;

use lbcf::dataset::CsvSchema;
use serde::{Deserialize, Serialize};

use crate::error::{config_error, CliError};

/// Column-role overrides for dataset CSVs, shared by every command that
/// reads one.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SchemaArgs {
    /// Name of the id column.
    #[arg(long)]
    pub id_col: Option<String>,
    /// Name of the treatment-label column.
    #[arg(long)]
    pub treatment_col: Option<String>,
    /// Name of the outcome column.
    #[arg(long)]
    pub outcome_col: Option<String>,
    /// Comma-separated per-arm cost column names, in arm order.
    #[arg(long, value_delimiter = ',')]
    pub cost_cols: Option<Vec<String>>,
    /// Comma-separated per-arm costs broadcast to every row, replacing cost
    /// columns.
    #[arg(long, value_delimiter = ',')]
    pub cost_levels: Option<Vec<f64>>,
}

/// The same overrides as config-file keys.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
pub struct SchemaConfig {
    pub id_col: Option<String>,
    pub treatment_col: Option<String>,
    pub outcome_col: Option<String>,
    pub cost_cols: Option<Vec<String>>,
    pub cost_levels: Option<Vec<f64>>,
}

/// Flag-over-file resolution into the dataset schema, plus the resolved
/// values for the manifest.
pub fn resolve_schema(
    flags: &SchemaArgs,
    file: &SchemaConfig,
) -> Result<(CsvSchema, SchemaConfig), CliError> {
    use crate::config::{pick, pick_optional};
    let resolved = SchemaConfig {
        id_col: Some(pick(&flags.id_col, &file.id_col, "id".into())),
        treatment_col: Some(pick(&flags.treatment_col, &file.treatment_col, "treatment".into())),
        outcome_col: Some(pick(&flags.outcome_col, &file.outcome_col, "outcome".into())),
        cost_cols: pick_optional(&flags.cost_cols, &file.cost_cols),
        cost_levels: pick_optional(&flags.cost_levels, &file.cost_levels),
    };
    if resolved.cost_cols.is_some() && resolved.cost_levels.is_some() {
        return Err(config_error(
            "give either --cost-cols or --cost-levels, not both",
        ));
    }
    let schema = CsvSchema {
        id_col: resolved.id_col.clone().unwrap(),
        treatment_col: resolved.treatment_col.clone().unwrap(),
        outcome_col: resolved.outcome_col.clone().unwrap(),
        cost_columns: resolved.cost_cols.clone(),
        cost_levels: resolved.cost_levels.clone(),
    };
    Ok((schema, resolved))
}

/// Creates the output directory (if needed) and returns it.
pub fn ensure_out_dir(out: &PathBuf) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| crate::error::runtime(anyhow::anyhow!("cannot create {}: {e}", out.display())))?;
    Ok(out.clone())
}
