//! Errors with exit codes, flat config files, the content-addressed cache
//! and the run manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub enum CliError {
    Config(String),
    Numerical(String),
    CacheMiss(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::CacheMiss(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::CacheMiss(m) => write!(f, "cache miss: {m}"),
        }
    }
}

impl From<nls_lab::Error> for CliError {
    fn from(e: nls_lab::Error) -> Self {
        use nls_lab::Error as E;
        match e {
            E::InvalidParameter(_) | E::SpecMismatch(_) | E::Format(_) | E::Io(_) | E::EmptyRegion(_) => {
                CliError::Config(e.to_string())
            }
            E::CacheMiss(_) => CliError::CacheMiss(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Reads a flat key/value TOML file; unknown keys are rejected by the
/// target type.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn require<T>(v: Option<T>, key: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical JSON form of a resolved configuration.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("serializable config").as_bytes())
}

/// `<root>/<class>/<first 16 hex digits of the key hash>.<ext>`.
pub fn cache_path<T: Serialize>(root: &Path, class: &str, key: &T, ext: &str) -> (PathBuf, String) {
    let h = config_hash(key);
    let short = h[..16].to_string();
    (root.join(class).join(format!("{short}.{ext}")), short)
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable output") + "\n"
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub code_version: String,
    pub input_cache_keys: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

/// Collects outputs of one run and writes `manifest.json` at the end.
pub struct Run {
    out: PathBuf,
    started: Instant,
    subcommand: String,
    config_hash: String,
    seed: Option<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new<T: Serialize>(out: &Path, subcommand: &str, cfg: &T, seed: Option<u64>) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        Ok(Run {
            out: out.to_path_buf(),
            started: Instant::now(),
            subcommand: subcommand.to_string(),
            config_hash: config_hash(cfg),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn input(&mut self, key: impl Into<String>) {
        self.inputs.push(key.into());
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&p, bytes)?;
        self.outputs.push(name.to_string());
        Ok(p)
    }

    pub fn finish(self) -> CliResult<()> {
        let m = RunManifest {
            command_line: std::env::args().collect(),
            subcommand: self.subcommand,
            config_hash: self.config_hash,
            seed: self.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            input_cache_keys: self.inputs,
            outputs: self.outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        fs::write(self.out.join("manifest.json"), to_json(&m))?;
        Ok(())
    }
}

/// Copies `Some` fields of `file` into the `None` fields of `cli`.
macro_rules! overlay {
    ($cli:expr, $file:expr; $($f:ident),* $(,)?) => {
        { $( if $cli.$f.is_none() { $cli.$f = $file.$f.take(); } )* }
    };
}
pub(crate) use overlay;
