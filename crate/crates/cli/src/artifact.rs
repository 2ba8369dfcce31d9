//! Output files and the pattern file schema.
//!
//! JSON outputs carry `seed`, `config_hash` and the resolved config as TOML
//! text. CSV outputs carry the same in a leading `#` comment block. Either
//! can be passed back through `--config`.

use std::fs;
use std::path::Path;

use pilotforge::waveform::{BandMode, PatternSet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const PATTERN_KIND: &str = "pattern";
const CONFIG_MARK: &str = "# config:";

/// Provenance shared by every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub config: String,
}

impl Provenance {
    pub fn of(config: &ExperimentConfig) -> Self {
        let text = config.to_toml();
        let digest = Sha256::digest(text.as_bytes());
        let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self { seed: config.seed, config_hash, config: text }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub pilots: Vec<usize>,
    pub isl_db: f64,
    pub isl_linear: f64,
    /// `None` when no limit lies inside the search grid.
    pub srl_ns: Option<f64>,
    pub ceiling_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternArtifact {
    pub kind: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub band: BandMode,
    pub rows: usize,
    pub fitness_db: f64,
    pub groups: Vec<GroupReport>,
}

/// The fields a pattern file must have; extra fields are ignored.
#[derive(Debug, Deserialize)]
struct PatternFile {
    kind: String,
    rows: usize,
    groups: Vec<PatternFileGroup>,
}

#[derive(Debug, Deserialize)]
struct PatternFileGroup {
    pilots: Vec<usize>,
}

/// A pattern to evaluate with a display name.
#[derive(Debug, Clone)]
pub struct NamedPattern {
    pub name: String,
    pub patterns: PatternSet,
}

pub fn read_pattern(path: &Path) -> Result<NamedPattern, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let schema = |msg: String| CliError::Config(format!("{}: {msg}", path.display()));
    let file: PatternFile = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
    if file.kind != PATTERN_KIND {
        return Err(schema(format!("kind is {:?}, expected {PATTERN_KIND:?}", file.kind)));
    }
    if file.groups.is_empty() {
        return Err(schema("no groups".into()));
    }
    for (g, grp) in file.groups.iter().enumerate() {
        if grp.pilots.is_empty() {
            return Err(schema(format!("group {g} has no pilots")));
        }
    }
    let pilots: Vec<Vec<usize>> = file.groups.into_iter().map(|g| g.pilots).collect();
    let patterns = PatternSet::from_pilots(file.rows, &pilots).map_err(|e| schema(e.to_string()))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "pattern".into());
    Ok(NamedPattern { name, patterns })
}

pub fn write_json<T: Serialize>(dir: &Path, file: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    text.push('\n');
    write(dir, file, &text)
}

/// Writes a CSV whose comment header embeds the provenance.
pub fn write_csv(dir: &Path, file: &str, provenance: &Provenance, header: &str, rows: &[String]) -> Result<(), CliError> {
    let mut text = format!("# seed: {}\n# config_hash: {}\n{CONFIG_MARK}\n", provenance.seed, provenance.config_hash);
    for line in provenance.config.lines() {
        if line.is_empty() {
            text.push_str("#\n");
        } else {
            text.push_str("# ");
            text.push_str(line);
            text.push('\n');
        }
    }
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    write(dir, file, &text)
}

fn write(dir: &Path, file: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(file);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Reads a TOML config, or the config embedded in a JSON or CSV output.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let embedded = if text.trim_start().starts_with('{') {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = v.get("config").and_then(|c| c.as_str());
        Some(cfg.ok_or_else(|| CliError::Config(format!("{} has no embedded config", path.display())))?.to_string())
    } else if text.starts_with("# seed:") {
        let mut lines = text.lines().skip_while(|l| *l != CONFIG_MARK).skip(1);
        let mut out = String::new();
        for l in lines.by_ref().take_while(|l| l.starts_with('#')) {
            out.push_str(l.strip_prefix("# ").unwrap_or(l.trim_start_matches('#')));
            out.push('\n');
        }
        Some(out)
    } else {
        None
    };
    ExperimentConfig::from_toml(embedded.as_deref().unwrap_or(&text))
}
