//! Layered settings: built-in defaults, then command-line flags, then the
//! optional TOML config file, each layer overriding the previous one.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::CliError;

/// Overlays the TOML file at `path` (if any) onto `base`. Tables merge key by
/// key; any other value in the file replaces the base value outright.
pub fn overlay<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data("config", format!("{}: {e}", path.display())))?;
    let file: Table = text
        .parse()
        .map_err(|e| CliError::data("config", format!("{}: {e}", path.display())))?;
    let mut merged = Value::try_from(base)
        .map_err(|e| CliError::data("config", format!("cannot represent defaults: {e}")))?;
    merge(&mut merged, Value::Table(file));
    merged
        .try_into()
        .map_err(|e| CliError::data("config", format!("{}: {e}", path.display())))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
