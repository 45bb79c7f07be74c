//! Flag/config-file merging and the `run.json` echo.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Seed used when neither a flag nor a config file sets one.
pub const DEFAULT_SEED: u64 = 20240;

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct Common {
    /// Seed for every random draw in the run [default: 20240]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the fitting kernels [default: 1]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory, created if absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file in the `run.json` layout whose settings pre-populate the flags
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl Common {
    fn fill_defaults(&mut self) {
        self.seed.get_or_insert(DEFAULT_SEED);
        self.threads.get_or_insert(1);
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or(1)
    }

    pub fn out(&self) -> Result<&Path> {
        self.out.as_deref().context("--out is required")
    }
}

/// One subcommand's parameters. Every field is optional so that flags, a
/// config file and the defaults can be layered.
pub trait Settings: Serialize + DeserializeOwned {
    const COMMAND: &'static str;

    fn common(&self) -> &Common;
    fn common_mut(&mut self) -> &mut Common;
    fn fill_own_defaults(&mut self);

    fn fill_defaults(&mut self) {
        self.common_mut().fill_defaults();
        self.fill_own_defaults();
    }
}

#[derive(Serialize, Deserialize)]
struct RunFile {
    command: String,
    settings: Value,
}

fn strip_nulls(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(map) => map.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Flags over the config file over the defaults.
pub fn resolve<S: Settings>(flags: S) -> Result<S> {
    let config = flags.common().config.clone();
    let mut merged = match &config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let run: RunFile =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            if run.command != S::COMMAND {
                bail!(
                    "config {} is for `{}`, not `{}`",
                    path.display(),
                    run.command,
                    S::COMMAND
                );
            }
            strip_nulls(run.settings)
        }
        None => Map::new(),
    };
    merged.extend(strip_nulls(serde_json::to_value(&flags)?));
    let mut settings: S = serde_json::from_value(Value::Object(merged)).context("invalid settings")?;
    settings.common_mut().config = config;
    settings.fill_defaults();
    Ok(settings)
}

/// Creates the output directory and reports each file written there.
pub struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Runs `write` against `name` inside the directory and prints a summary.
    pub fn write(
        &self,
        name: &str,
        summary: impl std::fmt::Display,
        write: impl FnOnce(&Path) -> irt_core::Result<()>,
    ) -> Result<()> {
        let path = self.path(name);
        write(&path).with_context(|| format!("writing {}", path.display()))?;
        println!("wrote {}: {summary}", path.display());
        Ok(())
    }

    pub fn run_echo<S: Settings>(&self, settings: &S) -> Result<()> {
        let run = RunFile {
            command: S::COMMAND.to_string(),
            settings: serde_json::to_value(settings)?,
        };
        self.write(RUN_FILE, "effective settings", |p| {
            irt_core::posterior::save_json(&run, p)
        })
    }
}
