//! Atomic artifact writes with embedded provenance, and the matching readers.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use camsynth::sampler::{read_draws, write_draws, GibbsState, PosteriorChain};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Loaded;
use crate::error::CliError;

pub struct Out<'a> {
    pub loaded: &'a Loaded,
    pub command: &'static str,
}

impl Out<'_> {
    pub fn path(&self, name: &str) -> PathBuf {
        self.loaded.out.join(name)
    }

    pub fn provenance(&self) -> Value {
        let l = self.loaded;
        json!({
            "tool": "camsynth",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_sha256": l.hash,
            "seed": l.seed,
            "inputs": l.inputs,
            "config": l.text,
        })
    }

    pub fn json<T: Serialize>(&self, name: &str, result: &T) -> Result<PathBuf, CliError> {
        let doc = json!({"provenance": self.provenance(), "result": result});
        let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// CSV body prefixed with a `# provenance:` comment line.
    pub fn csv(&self, name: &str, body: &[u8]) -> Result<PathBuf, CliError> {
        let mut bytes = format!("# provenance: {}\n", self.provenance()).into_bytes();
        bytes.extend_from_slice(body);
        self.write(name, &bytes)
    }

    pub fn draws(&self, name: &str, chain: &PosteriorChain) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        write_draws(chain, self.provenance(), &mut buf).map_err(|e| CliError::io(&self.path(name), e))?;
        self.write(name, &buf)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    /// Reads a JSON artifact written by an earlier command of the same config.
    pub fn read_json(&self, name: &str, producer: &str) -> Result<Value, CliError> {
        let path = self.path(name);
        let text = read_artifact(&path, producer)?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.check(&path, &doc["provenance"])?;
        Ok(doc["result"].clone())
    }

    pub fn read_draws(&self, name: &str) -> Result<Vec<GibbsState>, CliError> {
        let path = self.path(name);
        let file = std::fs::File::open(&path).map_err(|e| missing(&path, "fit", e))?;
        let (header, draws) = read_draws(BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.check(&path, &header.provenance)?;
        Ok(draws)
    }

    /// Artifacts from a different config or seed must not be mixed into this run.
    pub fn check(&self, path: &Path, prov: &Value) -> Result<(), CliError> {
        let hash = prov["config_sha256"].as_str().unwrap_or_default();
        let seed = prov["seed"].as_u64();
        if hash != self.loaded.hash || seed != Some(self.loaded.seed) {
            return Err(CliError::Config(format!(
                "{} was produced by a different config or seed (sha256 {hash}, seed {seed:?}); rerun the earlier stage",
                path.display()
            )));
        }
        Ok(())
    }
}

fn missing(path: &Path, producer: &str, e: std::io::Error) -> CliError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::Io { path: path.display().to_string(), message: format!("not found; run `camsynth {producer}` first") }
    } else {
        CliError::io(path, e)
    }
}

pub fn read_artifact(path: &Path, producer: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| missing(path, producer, e))
}

/// Provenance line of a CSV artifact.
pub fn csv_provenance(path: &Path) -> Result<Value, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|e| CliError::io(path, e))?;
    let body = first.strip_prefix("# provenance: ").ok_or_else(|| CliError::Input(format!("{}: no provenance line", path.display())))?;
    serde_json::from_str(body.trim_end()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}
