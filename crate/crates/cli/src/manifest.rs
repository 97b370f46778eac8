use pct_core::checkpoint::{sha256_file, sha256_hex, VERSION};
use pct_core::config::RunConfig;
use pct_core::Result;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Everything needed to rerun a command: no timestamps or host details, so
/// identical reruns write identical manifests.
#[derive(Serialize)]
pub struct Manifest<'a, A: Serialize> {
    pub command: String,
    pub args: &'a A,
    pub version: &'static str,
    pub checkpoint_format: u32,
    pub config_sha256: String,
    pub config: &'a RunConfig,
    /// Input files by role, with their SHA-256.
    pub inputs: BTreeMap<String, FileHash>,
    /// Files written under the output directory.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Serialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl<'a, A: Serialize> Manifest<'a, A> {
    pub fn new(command: String, args: &'a A, config: &'a RunConfig) -> Result<Self> {
        Ok(Manifest {
            command,
            args,
            version: env!("CARGO_PKG_VERSION"),
            checkpoint_format: VERSION,
            config_sha256: sha256_hex(serde_json::to_string(config)?.as_bytes()),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(
            role.into(),
            FileHash {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(())
    }

    /// Hash every output file and write `manifest.<command>.json`.
    pub fn write(mut self, out: &Path, files: &[PathBuf]) -> Result<()> {
        for f in files {
            let name = f.strip_prefix(out).unwrap_or(f).display().to_string();
            self.outputs.insert(name, sha256_file(f)?);
        }
        let path = out.join(format!("manifest.{}.json", self.command));
        std::fs::write(path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}
