//! Named systems shipped with the binary.

use toml::Value;

use crate::error::CliError;

const TANK4: &str = include_str!("../presets/tank4.toml");
const HELI8: &str = include_str!("../presets/heli8.toml");

pub const NAMES: [&str; 2] = ["tank4", "heli8"];

pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "tank4" => Some(TANK4),
        "heli8" => Some(HELI8),
        _ => None,
    }
}

/// Parsed preset table, to be merged under a user config.
pub fn load(name: &str) -> Result<Value, CliError> {
    let text = source(name).ok_or_else(|| CliError::Config(format!("unknown preset `{name}` (known: {})", NAMES.join(", "))))?;
    toml::from_str(text).map_err(|e| CliError::Config(format!("preset {name} is malformed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for name in NAMES {
            let v = load(name).unwrap();
            assert!(v.get("system").and_then(|s| s.get("a")).is_some());
        }
        assert!(load("nope").is_err());
    }
}
