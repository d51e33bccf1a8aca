//! Declarative run configuration. A TOML file holds global keys at the top
//! level and one table per subcommand; command-line flags override both.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wnlw_core::{LabError, Result};

pub const COMMANDS: [&str; 8] = ["sample", "wick", "solve", "trees", "inflate", "as-inflate", "converge", "oracle"];
const GLOBAL_KEYS: [&str; 3] = ["seed", "out", "threads"];

/// Keys shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Globals {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Parsed configuration file.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub globals: Globals,
    tables: toml::Table,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| LabError::Config(format!("invalid config: {e}")))?;
        let mut globals = toml::Table::new();
        let mut tables = toml::Table::new();
        for (k, v) in table {
            if GLOBAL_KEYS.contains(&k.as_str()) {
                globals.insert(k, v);
            } else if COMMANDS.contains(&k.as_str()) {
                if !v.is_table() {
                    return Err(LabError::Config(format!("`{k}` must be a table")));
                }
                tables.insert(k, v);
            } else {
                return Err(LabError::Config(format!("unknown config key `{k}`")));
            }
        }
        let globals = Globals::deserialize(toml::Value::Table(globals))
            .map_err(|e| LabError::Config(format!("invalid global config: {e}")))?;
        Ok(Self { globals, tables })
    }

    /// The table of `command`, or the defaults when the file has none.
    pub fn section<T: DeserializeOwned + Default>(&self, command: &str) -> Result<T> {
        match self.tables.get(command) {
            None => Ok(T::default()),
            Some(v) => T::deserialize(v.clone()).map_err(|e| LabError::Config(format!("invalid [{command}] table: {e}"))),
        }
    }
}

/// Assigns every flag that was given on the command line.
macro_rules! merge {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {{
        $(if let Some(v) = $args.$field.clone() {
            $cfg.$field = v;
        })*
    }};
}
pub(crate) use merge;

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Demo {
        d: usize,
        ladder: Vec<u64>,
    }

    #[test]
    fn splits_globals_and_sections() {
        let f = ConfigFile::parse("seed = 9\nthreads = 2\n[inflate]\nd = 2\nladder = [16, 32]\n").unwrap();
        assert_eq!(f.globals.seed, 9);
        assert_eq!(f.globals.threads, Some(2));
        let demo: Demo = f.section("inflate").unwrap();
        assert_eq!(demo, Demo { d: 2, ladder: vec![16, 32] });
        let empty: Demo = f.section("converge").unwrap();
        assert_eq!(empty, Demo::default());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(matches!(ConfigFile::parse("sed = 1"), Err(LabError::Config(_))));
        let f = ConfigFile::parse("[inflate]\ndd = 2\n").unwrap();
        assert!(matches!(f.section::<Demo>("inflate"), Err(LabError::Config(_))));
    }
}
