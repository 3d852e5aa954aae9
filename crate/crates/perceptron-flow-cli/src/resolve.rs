//! Configuration resolution with fixed precedence: built-in defaults are
//! overlaid by an optional JSON config file, which is overlaid by explicit
//! command-line flags. Unknown keys in the file are rejected so typos fail
//! loudly instead of silently running the defaults.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

/// Merges `defaults ← file ← flags` and deserializes the result. `flags`
/// must serialize to an object containing only the explicitly set options
/// (skip-if-none fields).
pub fn resolve<C, F>(defaults: &C, file: Option<&Path>, flags: &F) -> Result<C, CliError>
where
    C: Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut merged = serde_json::to_value(defaults)
        .map_err(|e| CliError::config(format!("cannot serialize defaults: {e}")))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| {
            CliError::config(format!("config file {} is not valid JSON: {e}", path.display()))
        })?;
        if !value.is_object() {
            return Err(CliError::config(format!(
                "config file {} must contain a JSON object",
                path.display()
            )));
        }
        overlay(&mut merged, value);
    }
    let flag_value = serde_json::to_value(flags)
        .map_err(|e| CliError::config(format!("cannot serialize flags: {e}")))?;
    overlay(&mut merged, flag_value);
    serde_json::from_value(merged).map_err(|e| CliError::config(format!("invalid configuration: {e}")))
}

/// Recursively overlays `over` onto `base`: objects merge key-wise, anything
/// else replaces the base value.
fn overlay(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(base_map), Value::Object(over_map)) => {
            for (key, value) in over_map {
                match base_map.get_mut(&key) {
                    Some(slot) => overlay(slot, value),
                    None => {
                        base_map.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}
