use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use coreflow::io::{write_json, Config};
use coreflow::Result;

/// Everything needed to replay a run: the exact command line and the
/// effective configuration it resolved to.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub config_sha256: String,
    pub config: Config,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

pub fn config_hash(cfg: &Config) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub struct Recorder {
    manifest: RunManifest,
    start: Instant,
    lap: Instant,
    timing: bool,
}

impl Recorder {
    pub fn new(command: &str, cfg: &Config, timing: bool) -> Self {
        let now = Instant::now();
        Recorder {
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_sha256: config_hash(cfg),
                config: cfg.clone(),
                seeds: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                timings_ms: timing.then(BTreeMap::new),
            },
            start: now,
            lap: now,
            timing,
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.into(), value);
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.manifest.inputs.insert(name.into(), path.to_path_buf());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.manifest
            .outputs
            .insert(name.into(), path.to_path_buf());
    }

    /// Records the time since the previous phase ended.
    pub fn phase(&mut self, name: &str) {
        let now = Instant::now();
        if let Some(t) = self.manifest.timings_ms.as_mut() {
            t.insert(name.into(), (now - self.lap).as_secs_f64() * 1e3);
        }
        self.lap = now;
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        if self.timing {
            let total = self.start.elapsed().as_secs_f64() * 1e3;
            self.manifest
                .timings_ms
                .get_or_insert_with(BTreeMap::new)
                .insert("total".into(), total);
        }
        write_json(path, &self.manifest)
    }
}

/// `<output>.manifest.json` next to a file output.
pub fn beside(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
