//! Staged output: files are written into a hidden directory inside the output
//! directory and moved into place only when the whole command succeeded.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::Config;
use crate::error::CliError;

pub struct Staging {
    dir: tempfile::TempDir,
    out_dir: PathBuf,
    /// Output files in creation order, relative to the staging directory.
    files: Vec<String>,
    /// Sidecars that still need the run record.
    sidecars: Vec<String>,
    started: Instant,
}

impl Staging {
    pub fn new(out_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out_dir)?;
        let dir = tempfile::Builder::new().prefix(".staging-").tempdir_in(out_dir)?;
        Ok(Self {
            dir,
            out_dir: out_dir.to_path_buf(),
            files: Vec::new(),
            sidecars: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Staged location of `name`.
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Registers `name.csv` and its `name.json` sidecar, both already written.
    pub fn register(&mut self, stem: &str) {
        self.files.push(format!("{stem}.csv"));
        self.files.push(format!("{stem}.json"));
        self.sidecars.push(format!("{stem}.json"));
    }

    /// Writes `name.csv` and a sidecar holding `meta`.
    pub fn write(&mut self, stem: &str, csv: &str, meta: &impl Serialize) -> Result<(), CliError> {
        fs::write(self.path(&format!("{stem}.csv")), csv)?;
        fs::write(self.path(&format!("{stem}.json")), serde_json::to_string_pretty(meta)?)?;
        self.register(stem);
        Ok(())
    }

    /// Adds the run record to every sidecar and moves all files into the
    /// output directory. Returns the final paths.
    pub fn commit(self, command: &str, config: &Config, seeds: Value) -> Result<Vec<PathBuf>, CliError> {
        let run = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": config,
            "seeds": seeds,
            "workers": config.workers,
            "wall_time_s": self.started.elapsed().as_secs_f64(),
        });
        for name in &self.sidecars {
            let path = self.path(name);
            let value: Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
            let mut object = match value {
                Value::Object(m) => m,
                other => Map::from_iter([("data".to_string(), other)]),
            };
            object.insert("run".into(), run.clone());
            fs::write(&path, serde_json::to_string_pretty(&object)?)?;
        }
        let mut out = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let target = self.out_dir.join(name);
            fs::rename(self.path(name), &target)?;
            out.push(target);
        }
        Ok(out)
    }
}
