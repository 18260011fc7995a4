//! Run configuration: built-in defaults, overlaid by an optional TOML file,
//! overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use dynfire::data::SimConfig;
use dynfire::training::TrainConfig;
use dynfire::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Environment variable naming the directory that relative output paths
/// (and the per-command default output directory) live under.
pub const OUT_ROOT_ENV: &str = "DYNFIRE_OUT_ROOT";

/// File name of the resolved-configuration snapshot written with every run.
pub const SNAPSHOT_FILE: &str = "run.toml";

/// Everything a command needs, fully resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    /// Weeks generated by `synth`.
    pub weeks: usize,
    /// Training fraction used by `split`.
    pub ratio: f64,
    /// Start validation from a zero state instead of the training tail.
    pub cold: bool,
    /// Weeks ahead emitted by `predict`.
    pub horizon: usize,
    /// Write a risk PNG for every scored week, not only the last.
    pub all_weeks: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    /// Directory of raw CSV grids for `ingest`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub sim: SimConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            seed: 0,
            weeks: 260,
            ratio: 0.7,
            cold: false,
            horizon: 4,
            all_weeks: false,
            data: None,
            out: None,
            checkpoints: Vec::new(),
            resume: None,
            raw: None,
            manifest: None,
            sim: SimConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Flag values keyed by dotted config path; only flags the user passed.
#[derive(Default)]
pub struct Overrides(Table);

impl Overrides {
    pub fn set(&mut self, path: &str, value: impl Into<Value>) {
        let mut keys: Vec<&str> = path.split('.').collect();
        let last = keys.pop().expect("non-empty path");
        let mut table = &mut self.0;
        for k in keys {
            table = table
                .entry(k)
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .expect("override paths do not overlap");
        }
        table.insert(last.to_string(), value.into());
    }

    pub fn opt<V: Into<Value>>(&mut self, path: &str, value: Option<V>) {
        if let Some(v) = value {
            self.set(path, v);
        }
    }

    pub fn path(&mut self, key: &str, value: &Option<PathBuf>) {
        if let Some(p) = value {
            self.set(key, p.to_string_lossy().into_owned());
        }
    }

    pub fn flag(&mut self, path: &str, on: bool) {
        if on {
            self.set(path, true);
        }
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn config_err(what: impl std::fmt::Display) -> Error {
    Error::Config(what.to_string())
}

impl RunConfig {
    /// Defaults, then `file`, then `flags`.
    pub fn resolve(command: &str, file: Option<&Path>, flags: Overrides) -> Result<Self> {
        let mut table = Table::try_from(RunConfig::default()).map_err(config_err)?;
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let parsed: Table = text
                .parse()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, parsed);
        }
        merge(&mut table, flags.0);
        table.insert("command".into(), Value::String(command.into()));
        let mut config: RunConfig = table.try_into().map_err(config_err)?;
        config.train.seed = config.seed;
        config.train.validate()?;
        config.sim.validate()?;
        Ok(config)
    }

    /// Output directory: the configured path (under the output root when
    /// relative and the root is set), or `<root>/<command>`.
    pub fn out_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from);
        match (&self.out, root) {
            (Some(p), Some(root)) if p.is_relative() => root.join(p),
            (Some(p), _) => p.clone(),
            (None, Some(root)) => root.join(&self.command),
            (None, None) => PathBuf::from("runs").join(&self.command),
        }
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{}` needs a dataset (--data)", self.command)))
    }

    /// Writes the snapshot into `dir` with the output path made explicit.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        let mut resolved = self.clone();
        resolved.out = Some(dir.to_path_buf());
        let text = toml::to_string(&resolved).map_err(config_err)?;
        fs::create_dir_all(dir)?;
        let path = dir.join(SNAPSHOT_FILE);
        fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::resolve("train", None, Overrides::default()).unwrap();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn flags_beat_file_and_file_beats_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "seed = 3\nweeks = 40\n[train]\niterations = 9\n").unwrap();
        let mut flags = Overrides::default();
        flags.set("seed", 5i64);
        let c = RunConfig::resolve("synth", Some(&file), flags).unwrap();
        assert_eq!((c.seed, c.weeks, c.train.iterations), (5, 40, 9));
        assert_eq!(c.train.seed, 5);
        assert_eq!(c.ratio, 0.7);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        fs::write(&file, "[train]\nitterations = 9\n").unwrap();
        let err = RunConfig::resolve("train", Some(&file), Overrides::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn snapshot_resolves_to_the_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut flags = Overrides::default();
        flags.set("train.dims.state", 16i64);
        let c = RunConfig::resolve("train", None, flags).unwrap();
        let snap = c.write_snapshot(dir.path()).unwrap();
        let again = RunConfig::resolve("train", Some(&snap), Overrides::default()).unwrap();
        assert_eq!(again.train, c.train);
        assert_eq!(again.out.as_deref(), Some(dir.path()));
    }
}
