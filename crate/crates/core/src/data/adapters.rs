//! Converters from published dataset layouts into [`Dataset`] records.
//!
//! * THP-style event JSON (pickles re-saved as JSON): an object with one of
//!   `train`/`dev`/`test` holding sequences of
//!   `{"time_since_start": f, "type_event": i}` and a `dim_process` count.
//! * Multi-label event JSON: a list of sequences of `{"time": f, "labels": [i, ...]}`.
//! * PhysioNet 2012 per-stay text files (`Time,Parameter,Value`, `HH:MM`
//!   times) with the optional `Outcomes` table.
//! * PhysioNet 2019 per-patient pipe-separated hourly tables.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::patterns::{extract_lab_events, EventVocabulary};
use super::types::{Dataset, EventSequence, MarkMode, Observation, ObservationSet, Record, Split};
use crate::error::DataError;

/// Time-series variables of the 2012 challenge, in vocabulary order.
pub const P12_VARIABLES: [&str; 37] = [
    "Albumin", "ALP", "ALT", "AST", "Bilirubin", "BUN", "Cholesterol", "Creatinine", "DiasABP",
    "FiO2", "GCS", "Glucose", "HCO3", "HCT", "HR", "K", "Lactate", "Mg", "MAP", "MechVent", "Na",
    "NIDiasABP", "NIMAP", "NISysABP", "PaCO2", "PaO2", "pH", "Platelets", "RespRate", "SaO2",
    "SysABP", "Temp", "TroponinI", "TroponinT", "Urine", "WBC", "Weight",
];

/// Laboratory tests treated as events for the 2012 data.
pub const P12_LABS: [&str; 24] = [
    "BUN", "Creatinine", "Glucose", "HCO3", "Na", "K", "Mg", "HCT", "Platelets", "WBC", "FiO2",
    "PaCO2", "PaO2", "pH", "SaO2", "ALP", "ALT", "AST", "Albumin", "Bilirubin", "Lactate",
    "Cholesterol", "TroponinI", "TroponinT",
];

pub const P12_STATICS: [&str; 5] = ["Age", "Gender", "Height", "ICUType", "Weight"];

/// Laboratory tests treated as events for the 2019 data.
pub const P19_LABS: [&str; 25] = [
    "BUN", "Creatinine", "Glucose", "HCO3", "Potassium", "Magnesium", "Hct", "Platelets", "WBC",
    "FiO2", "PaCO2", "pH", "SaO2", "Alkalinephos", "AST", "Bilirubin_total", "Bilirubin_direct",
    "Lactate", "TroponinI", "Hgb", "Chloride", "Phosphate", "Calcium", "PTT", "Fibrinogen",
];

pub const P19_STATICS: [&str; 5] = ["Age", "Gender", "Unit1", "Unit2", "HospAdmTime"];

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

#[derive(Deserialize)]
struct ThpEvent {
    time_since_start: f64,
    type_event: usize,
}

/// THP-style JSON file; the split is taken from the key present.
pub fn from_thp_json(path: &Path) -> Result<Dataset, DataError> {
    let value: serde_json::Value =
        serde_json::from_str(&read(path)?).map_err(|e| parse_err(path, 0, e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| parse_err(path, 0, "expected a JSON object"))?;
    let mut records = Vec::new();
    let mut max_type = 0;
    for (key, split) in [("train", Split::Train), ("dev", Split::Validation), ("test", Split::Test)] {
        let Some(seqs) = obj.get(key) else { continue };
        let seqs: Vec<Vec<ThpEvent>> = serde_json::from_value(seqs.clone())
            .map_err(|e| parse_err(path, 0, format!("{key}: {e}")))?;
        for (i, seq) in seqs.into_iter().enumerate() {
            if seq.is_empty() {
                continue;
            }
            max_type = max_type.max(seq.iter().map(|e| e.type_event).max().unwrap_or(0));
            records.push((format!("{key}{i:06}"), split, seq));
        }
    }
    let m = obj
        .get("dim_process")
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .unwrap_or(max_type + 1);
    let records = records
        .into_iter()
        .map(|(id, split, seq)| {
            let times = seq.iter().map(|e| e.time_since_start).collect();
            let marks = seq
                .iter()
                .map(|e| {
                    let mut v = vec![0u8; m.max(e.type_event + 1)];
                    v[e.type_event] = 1;
                    v
                })
                .collect();
            EventSequence::new(&id, times, marks, m, MarkMode::MultiClass).map(|events| Record {
                id,
                events,
                observations: None,
                split,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        records,
        num_marks: m,
        num_vars: 0,
        num_statics: 0,
        mode: MarkMode::MultiClass,
    })
}

#[derive(Deserialize)]
struct LabelledEvent {
    time: f64,
    labels: Vec<usize>,
}

/// Multi-label JSON list of sequences; every record gets `split`.
pub fn from_multilabel_json(
    path: &Path,
    num_marks: Option<usize>,
    split: Split,
) -> Result<Dataset, DataError> {
    let seqs: Vec<Vec<LabelledEvent>> =
        serde_json::from_str(&read(path)?).map_err(|e| parse_err(path, 0, e.to_string()))?;
    let m = num_marks.unwrap_or_else(|| {
        seqs.iter()
            .flatten()
            .flat_map(|e| e.labels.iter().copied())
            .max()
            .map_or(0, |x| x + 1)
    });
    let mut records = Vec::new();
    for (i, seq) in seqs.into_iter().enumerate() {
        if seq.is_empty() {
            continue;
        }
        let id = format!("{}{i:06}", split.name());
        let times = seq.iter().map(|e| e.time).collect();
        let marks = seq
            .iter()
            .map(|e| {
                let width = e.labels.iter().copied().max().map_or(m, |x| m.max(x + 1));
                let mut v = vec![0u8; width];
                for &l in &e.labels {
                    v[l] = 1;
                }
                v
            })
            .collect();
        let events = EventSequence::new(&id, times, marks, m, MarkMode::MultiLabel)?;
        records.push(Record {
            id,
            events,
            observations: None,
            split,
        });
    }
    Ok(Dataset {
        records,
        num_marks: m,
        num_vars: 0,
        num_statics: 0,
        mode: MarkMode::MultiLabel,
    })
}

fn hhmm_hours(s: &str) -> Option<f64> {
    let (h, m) = s.split_once(':')?;
    Some(h.trim().parse::<f64>().ok()? + m.trim().parse::<f64>().ok()? / 60.0)
}

/// One PhysioNet 2012 stay. Returns the record id and its observations
/// over [`P12_VARIABLES`] with [`P12_STATICS`] as descriptors.
pub fn from_physionet2012_file(path: &Path) -> Result<(String, ObservationSet), DataError> {
    let text = read(path)?;
    let index: HashMap<&str, usize> = P12_VARIABLES.iter().enumerate().map(|(i, n)| (*n, i + 1)).collect();
    let mut id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut statics = vec![f64::NAN; P12_STATICS.len()];
    let mut observations = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line_no == 1 && line.starts_with("Time") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            if line.trim().is_empty() {
                continue;
            }
            return Err(parse_err(path, line_no, "expected Time,Parameter,Value"));
        }
        let t = hhmm_hours(parts[0]).ok_or_else(|| parse_err(path, line_no, "bad HH:MM time"))?;
        let name = parts[1].trim();
        let value: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, "bad value"))?;
        if name == "RecordID" {
            id = format!("{}", value as i64);
            continue;
        }
        if t == 0.0 {
            if let Some(s) = P12_STATICS.iter().position(|&x| x == name) {
                statics[s] = value;
                if name != "Weight" {
                    continue;
                }
            }
        }
        // -1 marks a missing descriptor in the challenge files.
        if name.is_empty() || value < 0.0 && name == "Weight" {
            continue;
        }
        if let Some(&variable) = index.get(name) {
            observations.push(Observation { time: t, variable, value });
        }
    }
    observations.sort_by(|a, b| a.time.total_cmp(&b.time));
    let present = statics.iter().any(|v| v.is_finite() && *v >= 0.0);
    let statics = present.then(|| {
        statics
            .iter()
            .map(|&v| if v.is_finite() && v >= 0.0 { v } else { 0.0 })
            .collect()
    });
    let obs = ObservationSet::new(&id, observations, statics, None, P12_VARIABLES.len())?;
    Ok((id, obs))
}

/// `RecordID -> In-hospital_death` from the challenge outcomes table.
pub fn physionet2012_outcomes(path: &Path) -> Result<HashMap<String, u8>, DataError> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = lines
        .next()
        .map(|(_, h)| h.split(',').map(str::trim).collect())
        .unwrap_or_default();
    let id_col = header.iter().position(|&h| h == "RecordID");
    let y_col = header.iter().position(|&h| h == "In-hospital_death");
    let (Some(id_col), Some(y_col)) = (id_col, y_col) else {
        return Err(parse_err(path, 1, "missing RecordID or In-hospital_death column"));
    };
    let mut out = HashMap::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let id = parts.get(id_col).ok_or_else(|| parse_err(path, n + 1, "short row"))?;
        let y: u8 = parts
            .get(y_col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(path, n + 1, "bad outcome"))?;
        out.insert(id.to_string(), y);
    }
    Ok(out)
}

/// One PhysioNet 2019 patient table. Row `r` is hour `r`; every non-NaN lab
/// column becomes an observation; the label is the maximum `SepsisLabel`.
pub fn from_physionet2019_file(path: &Path) -> Result<(String, ObservationSet), DataError> {
    let text = read(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?
        .split('|')
        .collect();
    let lab_cols: Vec<(usize, usize)> = P19_LABS
        .iter()
        .enumerate()
        .filter_map(|(v, name)| header.iter().position(|h| h == name).map(|c| (c, v + 1)))
        .collect();
    let static_cols: Vec<Option<usize>> = P19_STATICS
        .iter()
        .map(|name| header.iter().position(|h| h == name))
        .collect();
    let label_col = header.iter().position(|&h| h == "SepsisLabel");
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut observations = Vec::new();
    let mut statics = vec![0.0; P19_STATICS.len()];
    let mut label = None;
    for (r, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split('|').collect();
        if cells.len() != header.len() {
            return Err(parse_err(path, r + 2, "column count differs from header"));
        }
        let num = |c: usize| cells[c].trim().parse::<f64>().ok().filter(|v| v.is_finite());
        for &(c, variable) in &lab_cols {
            if let Some(value) = num(c) {
                observations.push(Observation {
                    time: r as f64,
                    variable,
                    value,
                });
            }
        }
        if r == 0 {
            for (s, col) in static_cols.iter().enumerate() {
                if let Some(v) = col.and_then(num) {
                    statics[s] = v;
                }
            }
        }
        if let Some(y) = label_col.and_then(num) {
            label = Some(label.unwrap_or(0).max(y as u8));
        }
    }
    let obs = ObservationSet::new(&id, observations, Some(statics), label, P19_LABS.len())?;
    Ok((id, obs))
}

/// Attach lab events to observation records and assemble a dataset.
/// Records whose observations yield no events are dropped.
pub fn dataset_from_observations(
    records: Vec<(String, ObservationSet, Split)>,
    vocab: &EventVocabulary,
    group_width: f64,
    num_vars: usize,
) -> Dataset {
    let mut num_statics = 0;
    let records: Vec<Record> = records
        .into_iter()
        .filter_map(|(id, obs, split)| {
            let events = extract_lab_events(&obs, vocab, group_width);
            if events.is_empty() {
                log::warn!("record {id}: no lab events, excluded");
                return None;
            }
            num_statics = num_statics.max(obs.statics.as_ref().map_or(0, Vec::len));
            Some(Record {
                id,
                events,
                observations: Some(obs),
                split,
            })
        })
        .collect();
    Dataset {
        records,
        num_marks: vocab.num_marks(),
        num_vars,
        num_statics,
        mode: MarkMode::MultiLabel,
    }
}

/// Variable ids (1-based, within `vocabulary`) of the named labs.
pub fn lab_ids(vocabulary: &[&str], labs: &[&str]) -> Vec<usize> {
    labs.iter()
        .filter_map(|l| vocabulary.iter().position(|v| v == l).map(|i| i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp(name: &str, content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(content.as_bytes()).unwrap();
        (dir, p)
    }

    #[test]
    fn thp_json_converts() {
        let (_d, p) = tmp(
            "train.json",
            r#"{"dim_process": 3, "train": [[{"time_since_start": 0.5, "time_since_last_event": 0.0, "type_event": 2}, {"time_since_start": 1.0, "time_since_last_event": 0.5, "type_event": 0}]]}"#,
        );
        let ds = from_thp_json(&p).unwrap();
        assert_eq!(ds.num_marks, 3);
        assert_eq!(ds.records[0].events.marks()[0], vec![0, 0, 1]);
    }

    #[test]
    fn multilabel_json_converts() {
        let (_d, p) = tmp("x.json", r#"[[{"time": 0.0, "labels": [0, 2]}, {"time": 1.0, "labels": [1]}]]"#);
        let ds = from_multilabel_json(&p, None, Split::Test).unwrap();
        assert_eq!(ds.num_marks, 3);
        assert_eq!(ds.records[0].events.marks()[0], vec![1, 0, 1]);
        assert_eq!(ds.records[0].split, Split::Test);
    }

    #[test]
    fn physionet2012_file_parses() {
        let (_d, p) = tmp(
            "132539.txt",
            "Time,Parameter,Value\n00:00,RecordID,132539\n00:00,Age,54\n00:00,Gender,0\n00:00,Height,-1\n00:00,ICUType,4\n00:00,Weight,-1\n00:07,GCS,15\n01:30,PaCO2,40\n01:30,PaO2,90\n01:30,pH,7.4\n",
        );
        let (id, obs) = from_physionet2012_file(&p).unwrap();
        assert_eq!(id, "132539");
        assert_eq!(obs.len(), 4);
        assert_eq!(obs.statics.as_ref().unwrap()[0], 54.0);
        assert!((obs.observations[1].time - 1.5).abs() < 1e-12);
        let labs = lab_ids(&P12_VARIABLES, &["PaCO2", "PaO2", "pH"]);
        let vocab = EventVocabulary::Patterns(vec![labs]);
        let ds = dataset_from_observations(vec![(id, obs, Split::Train)], &vocab, 1.0, 37);
        assert_eq!(ds.records[0].events.len(), 2);
        assert_eq!(ds.records[0].events.marks()[1], vec![1, 0]);
    }

    #[test]
    fn physionet2019_file_parses() {
        let (_d, p) = tmp(
            "p000001.psv",
            "HR|BUN|pH|Age|Gender|Unit1|Unit2|HospAdmTime|ICULOS|SepsisLabel\n80|NaN|7.3|60|1|0|1|-0.03|1|0\n82|14|NaN|60|1|0|1|-0.03|2|1\n",
        );
        let (_, obs) = from_physionet2019_file(&p).unwrap();
        assert_eq!(obs.label, Some(1));
        assert_eq!(obs.len(), 2);
        assert_eq!(obs.observations[0].variable, 12);
        assert_eq!(obs.observations[1].time, 1.0);
    }
}
