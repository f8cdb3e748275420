//! Config-file support. Every resolvable parameter follows the same
//! precedence: explicit flag, then config-file value, then built-in default.
//!
//! A config file is a flat JSON object whose keys match the flag names
//! (snake_case). A `run.json` manifest written by an earlier run is also
//! accepted: its `params` block is used after checking that it came from the
//! same subcommand, which makes any finished run replayable verbatim.

use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{config_error, CliError};

pub fn load_file_config<T>(path: Option<&Path>, command: &str) -> Result<T, CliError>
where
    T: DeserializeOwned + Default,
{
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| config_error(format!("config {} is not valid JSON: {e}", path.display())))?;
    let params = match value.get("params") {
        Some(params) => {
            if let Some(cmd) = value.get("command").and_then(|c| c.as_str()) {
                if cmd != command {
                    return Err(config_error(format!(
                        "config {} is a manifest from `{cmd}`, not `{command}`",
                        path.display()
                    )));
                }
            }
            params.clone()
        }
        None => value,
    };
    serde_json::from_value(params)
        .map_err(|e| config_error(format!("bad config {}: {e}", path.display())))
}

/// Flag value, else config-file value, else the default.
pub fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| file.clone()).unwrap_or(default)
}

/// Flag value, else config-file value, else an error naming the parameter.
pub fn pick_required<T: Clone>(
    flag: &Option<T>,
    file: &Option<T>,
    what: &str,
) -> Result<T, CliError> {
    flag.clone()
        .or_else(|| file.clone())
        .ok_or_else(|| config_error(format!("missing required parameter: {what}")))
}

/// Flag value, else config-file value.
pub fn pick_optional<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}
