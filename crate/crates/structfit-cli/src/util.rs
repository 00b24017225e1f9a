//! Shared CLI plumbing: exit-code classification, run manifests, dataset I/O
//! helpers, and distribution-label parsing.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use structfit::graph::LabeledGraph;
use structfit::synth::GraphDist;
use structfit::tu;

/// Exit codes: 2 config error, 3 numerical failure, 4 I/O.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Numeric(m) | CliError::Io(m) => m,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<structfit::graph::GraphError> for CliError {
    fn from(e: structfit::graph::GraphError) -> Self {
        match e {
            structfit::graph::GraphError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<structfit::synth::SynthError> for CliError {
    fn from(e: structfit::synth::SynthError) -> Self {
        match e {
            structfit::synth::SynthError::ResampleBudget(_) => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<structfit::train::TrainError> for CliError {
    fn from(e: structfit::train::TrainError) -> Self {
        use structfit::train::TrainError::*;
        match e {
            BadConfig(_) | EmptyTrainSet | EmptyDataset | NonBinaryLabel(_)
            | ClassOutOfRange(..) => CliError::Config(e.to_string()),
            Model(_) => CliError::Config(e.to_string()),
            Synth(s) => s.into(),
        }
    }
}

impl From<structfit::margin::MarginError> for CliError {
    fn from(e: structfit::margin::MarginError) -> Self {
        use structfit::margin::MarginError::*;
        match e {
            Infeasible(_) | NotConverged(_) | ZeroRow(_) => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<structfit::tu::TuError> for CliError {
    fn from(e: structfit::tu::TuError) -> Self {
        match e {
            tu::TuError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<structfit::rcov::RcovError> for CliError {
    fn from(e: structfit::rcov::RcovError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Writes one artifact and records it for the manifest.
pub struct OutDir {
    dir: PathBuf,
    outputs: Vec<(String, String)>,
}

impl OutDir {
    pub fn create(dir: &Path) -> CliResult<OutDir> {
        std::fs::create_dir_all(dir)?;
        Ok(OutDir { dir: dir.to_path_buf(), outputs: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents.as_ref())?;
        let digest = Sha256::digest(contents.as_ref());
        self.outputs.push((name.to_string(), hex::encode(digest)));
        Ok(path)
    }

    /// Writes `manifest.json`: the resolved config plus artifact hashes, so a
    /// rerun with the same seed can be checked for bit-exact replay.
    pub fn finish<C: Serialize>(mut self, command: &str, config: &C) -> CliResult<()> {
        #[derive(Serialize)]
        struct Manifest<'a, C> {
            command: &'a str,
            config: &'a C,
            outputs: Vec<ManifestOutput>,
        }
        #[derive(Serialize)]
        struct ManifestOutput {
            path: String,
            sha256: String,
        }
        let manifest = Manifest {
            command,
            config,
            outputs: self
                .outputs
                .drain(..)
                .map(|(path, sha256)| ManifestOutput { path, sha256 })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(self.dir.join("manifest.json"), json + "\n")?;
        Ok(())
    }
}

/// Parses compact distribution labels: `empty`, `star`, `regular10`,
/// `gnp0.5`, `ba3`.
pub fn parse_dist(label: &str) -> CliResult<GraphDist> {
    let l = label.trim();
    if l == "empty" {
        return Ok(GraphDist::Empty);
    }
    if l == "star" {
        return Ok(GraphDist::Star);
    }
    if let Some(r) = l.strip_prefix("regular") {
        let r = r.parse().map_err(|_| config_err(format!("bad regular degree in {label:?}")))?;
        return Ok(GraphDist::Regular { r });
    }
    if let Some(p) = l.strip_prefix("gnp") {
        let p = p.parse().map_err(|_| config_err(format!("bad gnp probability in {label:?}")))?;
        return Ok(GraphDist::Gnp { p });
    }
    if let Some(m) = l.strip_prefix("ba") {
        let m =
            m.parse().map_err(|_| config_err(format!("bad ba attachment count in {label:?}")))?;
        return Ok(GraphDist::Ba { m_attach: m });
    }
    Err(config_err(format!(
        "unknown distribution {label:?} (use empty|star|regular<r>|gnp<p>|ba<m>)"
    )))
}

/// Loads labeled graphs from a JSON-lines file or a TU directory
/// (`--name` selects the dataset inside a directory).
pub fn load_labeled(input: &Path, tu_name: Option<&str>) -> CliResult<Vec<LabeledGraph>> {
    if input.is_dir() {
        let name = tu_name.ok_or_else(|| {
            config_err("input is a TU directory; pass --name for the dataset prefix")
        })?;
        let ds = tu::parse_tu(input, name)?;
        for w in &ds.warnings {
            eprintln!("warning: {w}");
        }
        Ok(tu::augment_degree_feature(&ds).graphs)
    } else {
        let file = std::fs::File::open(input)?;
        Ok(structfit::graph::read_jsonl_labeled(std::io::BufReader::new(file))?)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
