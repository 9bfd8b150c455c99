//! Line-delimited JSON event and observation files.
//!
//! Event file, one record per line:
//! `{"id":"r1","times":[0.0,1.5],"marks":[[1,0],[0,1]]}`
//!
//! Observation file, one record per line:
//! `{"id":"r1","obs":[[0.5,3,7.2]],"statics":[61.0,1.0],"label":0}`
//!
//! A dataset directory holds `<split>.events.jsonl` and optionally
//! `<split>.obs.jsonl` for `split` in `train`, `validation`, `test`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{Dataset, EventSequence, MarkMode, Observation, ObservationSet, Record, Split};
use crate::error::DataError;

#[derive(Debug, Serialize, Deserialize)]
struct EventLine {
    id: String,
    times: Vec<f64>,
    marks: Vec<Vec<u8>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObsLine {
    id: String,
    obs: Vec<(f64, usize, f64)>,
    #[serde(default)]
    statics: Option<Vec<f64>>,
    #[serde(default)]
    label: Option<u8>,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub mode: MarkMode,
    /// Mark vocabulary size; inferred from the first record when `None`.
    pub num_marks: Option<usize>,
    pub split: Split,
}

impl LoadOptions {
    pub fn new(mode: MarkMode) -> Self {
        Self {
            mode,
            num_marks: None,
            split: Split::Train,
        }
    }
}

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String, DataError>)>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let owned = path.to_path_buf();
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| DataError::io(&owned, e))))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty() || s.starts_with('#'))))
}

/// Read an event file into a dataset with every record tagged `opts.split`.
pub fn load_event_file(path: &Path, opts: LoadOptions) -> Result<Dataset, DataError> {
    let mut records = Vec::new();
    let mut num_marks = opts.num_marks;
    for (line_no, line) in lines(path)? {
        let line = line?;
        let parsed: EventLine = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let m = *num_marks.get_or_insert_with(|| parsed.marks.first().map_or(0, Vec::len));
        if parsed.times.is_empty() {
            return Err(DataError::Invalid {
                record: parsed.id,
                msg: "sequence has no events".into(),
            }
            .at(path, line_no));
        }
        let events = EventSequence::new(&parsed.id, parsed.times, parsed.marks, m, opts.mode)
            .map_err(|e| e.at(path, line_no))?;
        records.push(Record {
            id: parsed.id,
            events,
            observations: None,
            split: opts.split,
        });
    }
    Ok(Dataset {
        records,
        num_marks: num_marks.unwrap_or(0),
        num_vars: 0,
        num_statics: 0,
        mode: opts.mode,
    })
}

/// Read an observation file. `num_vars` bounds variable identifiers; when
/// `None` the largest identifier seen is used.
pub fn load_observation_file(
    path: &Path,
    num_vars: Option<usize>,
) -> Result<Vec<(String, ObservationSet)>, DataError> {
    let mut parsed = Vec::new();
    for (line_no, line) in lines(path)? {
        let line = line?;
        let row: ObsLine = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: e.to_string(),
        })?;
        parsed.push((line_no, row));
    }
    let vocab = num_vars.unwrap_or_else(|| {
        parsed
            .iter()
            .flat_map(|(_, r)| r.obs.iter().map(|o| o.1))
            .max()
            .unwrap_or(0)
    });
    parsed
        .into_iter()
        .map(|(line_no, row)| {
            let observations = row
                .obs
                .iter()
                .map(|&(time, variable, value)| Observation {
                    time,
                    variable,
                    value,
                })
                .collect();
            ObservationSet::new(&row.id, observations, row.statics, row.label, vocab)
                .map(|o| (row.id, o))
                .map_err(|e| e.at(path, line_no))
        })
        .collect()
}

/// Canonical single-line encoding of an event record.
pub fn event_line(id: &str, seq: &EventSequence) -> String {
    serde_json::to_string(&EventLine {
        id: id.to_string(),
        times: seq.times().to_vec(),
        marks: seq.marks().to_vec(),
    })
    .expect("event records serialise")
}

pub fn observation_line(id: &str, obs: &ObservationSet) -> String {
    serde_json::to_string(&ObsLine {
        id: id.to_string(),
        obs: obs
            .observations
            .iter()
            .map(|o| (o.time, o.variable, o.value))
            .collect(),
        statics: obs.statics.clone(),
        label: obs.label,
    })
    .expect("observation records serialise")
}

fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = String> + 'a) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn write_event_file<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a Record>,
) -> Result<(), DataError> {
    write_lines(path, records.into_iter().map(|r| event_line(&r.id, &r.events)))
}

pub fn write_observation_file<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a Record>,
) -> Result<(), DataError> {
    write_lines(
        path,
        records
            .into_iter()
            .filter_map(|r| r.observations.as_ref().map(|o| observation_line(&r.id, o))),
    )
}

fn split_paths(dir: &Path, split: Split) -> (std::path::PathBuf, std::path::PathBuf) {
    (
        dir.join(format!("{}.events.jsonl", split.name())),
        dir.join(format!("{}.obs.jsonl", split.name())),
    )
}

/// Write every split present in `dataset` into `dir`.
pub fn save_dataset_dir(dir: &Path, dataset: &Dataset) -> Result<(), DataError> {
    save_dataset_dir_annotated(dir, dataset, None)
}

/// As [`save_dataset_dir`], with `header` written as a leading `#` comment
/// line in every file.
pub fn save_dataset_dir_annotated(dir: &Path, dataset: &Dataset, header: Option<&str>) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    for split in Split::ALL {
        let recs: Vec<&Record> = dataset.split(split).collect();
        if recs.is_empty() {
            continue;
        }
        let (ev, ob) = split_paths(dir, split);
        write_event_file(&ev, recs.iter().copied())?;
        let mut written = vec![ev.clone()];
        if recs.iter().any(|r| r.observations.is_some()) {
            write_observation_file(&ob, recs.iter().copied())?;
            written.push(ob);
        }
        if let Some(h) = header {
            for path in &written {
                let body = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
                std::fs::write(path, format!("# {h}\n{body}")).map_err(|e| DataError::io(path, e))?;
            }
        }
    }
    Ok(())
}

/// Load a dataset directory, joining observation records by id.
pub fn load_dataset_dir(
    dir: &Path,
    mode: MarkMode,
    num_marks: Option<usize>,
    num_vars: Option<usize>,
) -> Result<Dataset, DataError> {
    if !dir.is_dir() {
        return Err(DataError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let mut out = Dataset {
        records: Vec::new(),
        num_marks: num_marks.unwrap_or(0),
        num_vars: num_vars.unwrap_or(0),
        num_statics: 0,
        mode,
    };
    let mut found = false;
    // Observation vocabularies are resolved across all splits first.
    let mut obs_by_split = Vec::new();
    for split in Split::ALL {
        let (_, ob) = split_paths(dir, split);
        if ob.exists() {
            let obs = load_observation_file(&ob, None)?;
            let max_var = obs
                .iter()
                .flat_map(|(_, o)| o.observations.iter().map(|x| x.variable))
                .max()
                .unwrap_or(0);
            out.num_vars = out.num_vars.max(max_var);
            obs_by_split.push((split, obs));
        }
    }
    if let Some(v) = num_vars {
        if out.num_vars > v {
            return Err(DataError::Argument(format!(
                "observations use variable {} beyond declared vocabulary {v}",
                out.num_vars
            )));
        }
    }
    for split in Split::ALL {
        let (ev, _) = split_paths(dir, split);
        if !ev.exists() {
            continue;
        }
        found = true;
        let mut opts = LoadOptions::new(mode);
        opts.split = split;
        opts.num_marks = if out.num_marks > 0 { Some(out.num_marks) } else { None };
        let part = load_event_file(&ev, opts)?;
        if out.num_marks == 0 {
            out.num_marks = part.num_marks;
        }
        let mut obs: HashMap<String, ObservationSet> = obs_by_split
            .iter_mut()
            .find(|(s, _)| *s == split)
            .map(|(_, o)| std::mem::take(o).into_iter().collect())
            .unwrap_or_default();
        for mut r in part.records {
            r.observations = obs.remove(&r.id);
            if let Some(st) = r.observations.as_ref().and_then(|o| o.statics.as_ref()) {
                out.num_statics = out.num_statics.max(st.len());
            }
            out.records.push(r);
        }
    }
    if !found {
        return Err(DataError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no <split>.events.jsonl files"),
        ));
    }
    Ok(out)
}
