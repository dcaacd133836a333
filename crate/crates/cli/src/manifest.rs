//! Run manifests written next to every output artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pathcomplete::sdp::SolverOptions;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Version tag of the manifest layout.
pub const MANIFEST_SCHEMA: &str = "manifest-v1";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub tool_version: &'static str,
    pub command: Vec<String>,
    /// Input path to lowercase hex SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub solver_options: SolverOptions,
    /// Versions of the CSV or JSON layouts written by this run.
    pub output_schemas: Vec<&'static str>,
    pub wall_time_s: f64,
}

/// Accumulates manifest fields while a command runs.
pub struct ManifestBuilder {
    start: Instant,
    command: Vec<String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    solver_options: SolverOptions,
    output_schemas: Vec<&'static str>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ManifestBuilder {
    pub fn new(command: Vec<String>, solver_options: SolverOptions) -> Self {
        Self {
            start: Instant::now(),
            command,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seed: None,
            solver_options,
            output_schemas: Vec::new(),
        }
    }

    /// Reads `path`, records its hash and returns the contents.
    pub fn read_input(&mut self, path: &Path) -> std::io::Result<String> {
        let text = fs::read_to_string(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(text.as_bytes()));
        Ok(text)
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn output(&mut self, path: &Path, schema: &'static str) {
        self.outputs.push(path.to_path_buf());
        if !self.output_schemas.contains(&schema) {
            self.output_schemas.push(schema);
        }
    }

    pub fn finish(self) -> RunManifest {
        RunManifest {
            schema: MANIFEST_SCHEMA,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            inputs: self.inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            seed: self.seed,
            solver_options: self.solver_options,
            output_schemas: self.output_schemas,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        }
    }
}

/// `<out>.manifest.json` for the primary output `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(manifest_path(Path::new("out/g.json")), PathBuf::from("out/g.json.manifest.json"));
    }

    #[test]
    fn schemas_are_deduplicated() {
        let mut b = ManifestBuilder::new(vec!["x".into()], SolverOptions::default());
        b.output(Path::new("a.csv"), "s1");
        b.output(Path::new("b.csv"), "s1");
        let m = b.finish();
        assert_eq!(m.output_schemas, vec!["s1"]);
        assert_eq!(m.outputs.len(), 2);
    }
}
