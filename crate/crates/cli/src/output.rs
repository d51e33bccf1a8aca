use std::path::PathBuf;

use serde::Serialize;
use serde_json::Value;
use wnlw_core::{LabError, Result};

pub const MANIFEST_SCHEMA: &str = "wnlw.manifest.v1";

/// Collects result files of one run and writes the manifest last.
pub struct Output {
    dir: Option<PathBuf>,
    files: Vec<String>,
}

impl Output {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(|e| LabError::Io(format!("cannot create {}: {e}", d.display())))?;
        }
        Ok(Self { dir, files: Vec::new() })
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        if let Some(d) = &self.dir {
            let path = d.join(name);
            std::fs::write(&path, contents).map_err(|e| LabError::Io(format!("cannot write {}: {e}", path.display())))?;
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    pub fn finish(mut self, command: &str, seed: u64, threads: Option<usize>, config: Value) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA,
            tool: "wnlw",
            version: env!("CARGO_PKG_VERSION"),
            parallel: wnlw_core::par::PARALLEL,
            command,
            seed,
            threads,
            config,
            outputs: std::mem::take(&mut self.files),
        };
        self.json("manifest.json", &manifest)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema: &'a str,
    tool: &'a str,
    version: &'a str,
    parallel: bool,
    command: &'a str,
    seed: u64,
    threads: Option<usize>,
    config: Value,
    outputs: Vec<String>,
}
