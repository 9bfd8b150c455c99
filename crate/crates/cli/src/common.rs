use std::path::Path;
use std::str::FromStr;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use teehr::data::{load_dataset_dir, Dataset, MarkMode, Record, Split};

use crate::args::DataArgs;
use crate::exit::Invalid;

pub const DATASET_META: &str = "dataset.json";

/// Fingerprint and seed stamped into every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub fingerprint: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(command: &str, args: &impl Serialize, seed: Option<u64>) -> Self {
        let json = serde_json::json!({ "command": command, "args": args });
        Self {
            fingerprint: hex::encode(Sha256::digest(json.to_string().as_bytes())),
            seed,
        }
    }

    pub fn header(&self) -> String {
        match self.seed {
            Some(s) => format!("fingerprint={} seed={s}", self.fingerprint),
            None => format!("fingerprint={} seed=none", self.fingerprint),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub mode: MarkMode,
    pub num_marks: usize,
    pub num_vars: usize,
    pub num_statics: usize,
    pub records: usize,
    pub fingerprint: String,
    pub seed: Option<u64>,
}

pub fn parse<T: FromStr<Err = String>>(value: &str) -> anyhow::Result<T> {
    T::from_str(value).map_err(|e| Invalid(e).into())
}

pub fn parse_split(value: &str) -> anyhow::Result<Option<Split>> {
    match value {
        "all" => Ok(None),
        "train" => Ok(Some(Split::Train)),
        "validation" | "dev" => Ok(Some(Split::Validation)),
        "test" => Ok(Some(Split::Test)),
        other => Err(Invalid(format!("unknown split {other:?}")).into()),
    }
}

pub fn select(data: &Dataset, split: Option<Split>) -> Vec<&Record> {
    data.records.iter().filter(|r| split.is_none_or(|s| r.split == s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision {s:?}")),
        }
    }
}

/// Print to stdout; a closed pipe is not an error.
pub fn say(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

pub fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn save_meta(dir: &Path, data: &Dataset, prov: &Provenance) -> anyhow::Result<()> {
    let meta = DatasetMeta {
        mode: data.mode,
        num_marks: data.num_marks,
        num_vars: data.num_vars,
        num_statics: data.num_statics,
        records: data.records.len(),
        fingerprint: prov.fingerprint.clone(),
        seed: prov.seed,
    };
    write_json(&dir.join(DATASET_META), &meta)
}

pub fn load_data(args: &DataArgs) -> anyhow::Result<Dataset> {
    let dir = &args.data;
    let meta_path = dir.join(DATASET_META);
    let meta: Option<DatasetMeta> = if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?;
        Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", meta_path.display()))?)
    } else {
        None
    };
    let mode = match (&args.mode, &meta) {
        (Some(m), _) => parse::<MarkMode>(m)?,
        (None, Some(meta)) => meta.mode,
        (None, None) => MarkMode::MultiClass,
    };
    let data = load_dataset_dir(
        dir,
        mode,
        meta.as_ref().map(|m| m.num_marks),
        meta.as_ref().map(|m| m.num_vars).filter(|&v| v > 0),
    )
    .with_context(|| format!("loading dataset {}", dir.display()))?;
    log::info!("loaded {} records from {}", data.records.len(), dir.display());
    Ok(data)
}
