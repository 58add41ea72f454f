use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

use crowdlabel::io::{sha256_file, write_json};
use crowdlabel::layout::Layout;
use crowdlabel::PipelineConfig;

/// Hashes of everything a subcommand read and wrote. Paths are relative to
/// the data directory and there are no timestamps, so identical runs give
/// identical manifests.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    config: &'a PipelineConfig,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    parameters: &'a BTreeMap<String, serde_json::Value>,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

pub struct Run<'a> {
    pub layout: &'a Layout,
    pub cfg: &'a PipelineConfig,
    command: String,
    parameters: BTreeMap<String, serde_json::Value>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> Run<'a> {
    pub fn new(layout: &'a Layout, cfg: &'a PipelineConfig, command: &str) -> Self {
        Run {
            layout,
            cfg,
            command: command.to_owned(),
            parameters: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(self.layout.root()).unwrap_or(path).display().to_string()
    }

    pub fn param(&mut self, name: &str, value: impl Serialize) {
        self.parameters.insert(name.to_owned(), serde_json::to_value(value).expect("serializable"));
    }

    /// Requires `path` to exist, naming `stage` otherwise, and records its hash.
    pub fn input(&mut self, path: PathBuf, stage: &str) -> Result<PathBuf> {
        self.layout.require(&path, stage)?;
        self.inputs.insert(self.rel(&path), sha256_file(&path)?);
        Ok(path)
    }

    /// Records an input that may be absent.
    pub fn optional_input(&mut self, path: PathBuf) -> Result<Option<PathBuf>> {
        if path.exists() {
            self.inputs.insert(self.rel(&path), sha256_file(&path)?);
            Ok(Some(path))
        } else {
            Ok(None)
        }
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(self.rel(path), sha256_file(path)?);
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let name = self.command.replace(' ', "_");
        let path = self.layout.manifests().join(format!("{name}.json"));
        write_json(
            &path,
            &Manifest {
                command: &self.command,
                config_hash: self.cfg.hash(),
                seed: self.cfg.seed,
                config: self.cfg,
                parameters: &self.parameters,
                inputs: &self.inputs,
                outputs: &self.outputs,
            },
        )?;
        for (p, h) in &self.outputs {
            println!("wrote {p} ({})", &h[..12]);
        }
        Ok(())
    }
}
