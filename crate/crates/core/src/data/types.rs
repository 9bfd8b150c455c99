use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Whether each event carries exactly one mark or any non-empty subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkMode {
    MultiClass,
    MultiLabel,
}

impl std::str::FromStr for MarkMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multi-class" | "mc" => Ok(MarkMode::MultiClass),
            "multi-label" | "ml" => Ok(MarkMode::MultiLabel),
            other => Err(format!("unknown mark mode {other:?}")),
        }
    }
}

/// Timestamped events with binary mark vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    times: Vec<f64>,
    marks: Vec<Vec<u8>>,
    num_marks: usize,
    mode: MarkMode,
}

impl EventSequence {
    /// Validates ordering, mark widths and the one-hot / multi-hot rule.
    pub fn new(
        id: &str,
        times: Vec<f64>,
        marks: Vec<Vec<u8>>,
        num_marks: usize,
        mode: MarkMode,
    ) -> Result<Self, DataError> {
        let invalid = |msg: String| DataError::Invalid {
            record: id.to_string(),
            msg,
        };
        if times.len() != marks.len() {
            return Err(invalid(format!(
                "{} timestamps but {} mark vectors",
                times.len(),
                marks.len()
            )));
        }
        for (j, &t) in times.iter().enumerate() {
            if !t.is_finite() {
                return Err(invalid(format!("non-finite time at event {}", j + 1)));
            }
            if j > 0 && t < times[j - 1] {
                return Err(DataError::NonMonotonic {
                    record: id.to_string(),
                    event: j + 1,
                });
            }
        }
        for (j, mark) in marks.iter().enumerate() {
            if mark.len() > num_marks {
                let index = mark[num_marks..]
                    .iter()
                    .position(|&b| b != 0)
                    .map(|p| p + num_marks)
                    .unwrap_or(num_marks);
                return Err(DataError::Vocabulary {
                    record: id.to_string(),
                    event: j + 1,
                    index,
                    num_marks,
                });
            }
            if mark.len() < num_marks {
                return Err(invalid(format!(
                    "event {} has {} mark entries, expected {num_marks}",
                    j + 1,
                    mark.len()
                )));
            }
            if let Some(bad) = mark.iter().find(|&&b| b > 1) {
                return Err(invalid(format!("event {} has non-binary mark entry {bad}", j + 1)));
            }
            let active = mark.iter().filter(|&&b| b == 1).count();
            match mode {
                MarkMode::MultiClass if active != 1 => {
                    return Err(DataError::ModeViolation {
                        record: id.to_string(),
                        event: j + 1,
                        active,
                    })
                }
                MarkMode::MultiLabel if active == 0 => {
                    return Err(invalid(format!("event {} has no active mark", j + 1)))
                }
                _ => {}
            }
        }
        Ok(Self {
            times,
            marks,
            num_marks,
            mode,
        })
    }

    /// Multi-class sequence from 0-based mark indices.
    pub fn from_indices(
        times: Vec<f64>,
        indices: &[usize],
        num_marks: usize,
    ) -> Result<Self, DataError> {
        let marks = indices
            .iter()
            .map(|&m| {
                let mut v = vec![0u8; num_marks.max(m + 1)];
                v[m] = 1;
                v
            })
            .collect();
        Self::new("<inline>", times, marks, num_marks, MarkMode::MultiClass)
    }

    /// Zero-length sequence; callers exclude these before training.
    pub fn empty(num_marks: usize, mode: MarkMode) -> Self {
        Self {
            times: Vec::new(),
            marks: Vec::new(),
            num_marks,
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn marks(&self) -> &[Vec<u8>] {
        &self.marks
    }

    pub fn num_marks(&self) -> usize {
        self.num_marks
    }

    pub fn mode(&self) -> MarkMode {
        self.mode
    }

    pub fn has_mark(&self, event: usize, mark: usize) -> bool {
        self.marks[event][mark] == 1
    }

    /// First active mark of an event (the class in multi-class mode).
    pub fn class_of(&self, event: usize) -> usize {
        self.marks[event].iter().position(|&b| b == 1).unwrap_or(0)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// Keep the most recent `cap` events.
    pub fn truncate_left(&mut self, cap: usize) {
        if self.times.len() > cap {
            let drop = self.times.len() - cap;
            self.times.drain(..drop);
            self.marks.drain(..drop);
        }
    }

    /// Same timestamps with replaced marks (validated).
    /// Multi-label sequence in which events sharing a bin
    /// `[k * width, (k + 1) * width)` become one event at the earliest of
    /// their times, carrying the union of their marks.
    pub fn group_within(&self, width: f64) -> Self {
        assert!(width > 0.0, "bin width must be positive");
        let mut times: Vec<f64> = Vec::new();
        let mut marks: Vec<Vec<u8>> = Vec::new();
        let mut last_bin = None;
        for (&t, m) in self.times.iter().zip(&self.marks) {
            let bin = (t / width).floor() as i64;
            if last_bin == Some(bin) {
                let row = marks.last_mut().expect("bin has an event");
                for (a, &b) in row.iter_mut().zip(m) {
                    *a |= b;
                }
            } else {
                times.push(t);
                marks.push(m.clone());
                last_bin = Some(bin);
            }
        }
        Self {
            times,
            marks,
            num_marks: self.num_marks,
            mode: MarkMode::MultiLabel,
        }
    }

    pub fn with_marks(&self, marks: Vec<Vec<u8>>) -> Result<Self, DataError> {
        Self::new("<inline>", self.times.clone(), marks, self.num_marks, self.mode)
    }

    /// Same marks with replaced timestamps (validated).
    pub fn with_times(&self, times: Vec<f64>) -> Result<Self, DataError> {
        Self::new("<inline>", times, self.marks.clone(), self.num_marks, self.mode)
    }
}

/// One irregular measurement: time, 1-based variable identifier, value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub variable: usize,
    pub value: f64,
}

/// Irregularly sampled measurements plus static descriptors and outcome.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSet {
    pub observations: Vec<Observation>,
    pub statics: Option<Vec<f64>>,
    pub label: Option<u8>,
}

impl ObservationSet {
    pub fn new(
        id: &str,
        observations: Vec<Observation>,
        statics: Option<Vec<f64>>,
        label: Option<u8>,
        num_vars: usize,
    ) -> Result<Self, DataError> {
        let invalid = |msg: String| DataError::Invalid {
            record: id.to_string(),
            msg,
        };
        for (p, o) in observations.iter().enumerate() {
            if !o.time.is_finite() || !o.value.is_finite() {
                return Err(invalid(format!("non-finite entry in observation {}", p + 1)));
            }
            if p > 0 && o.time < observations[p - 1].time {
                return Err(invalid(format!("non-monotonic time at observation {}", p + 1)));
            }
            if o.variable == 0 || o.variable > num_vars {
                return Err(invalid(format!(
                    "observation {} uses variable {} outside 1..={num_vars}",
                    p + 1,
                    o.variable
                )));
            }
        }
        if let Some(l) = label {
            if l > 1 {
                return Err(invalid(format!("label must be 0 or 1, got {l}")));
            }
        }
        Ok(Self {
            observations,
            statics,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub events: EventSequence,
    pub observations: Option<ObservationSet>,
    pub split: Split,
}

impl Record {
    pub fn label(&self) -> Option<u8> {
        self.observations.as_ref().and_then(|o| o.label)
    }
}

/// Collection of records sharing a mark vocabulary and mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub num_marks: usize,
    /// Observation vocabulary size; zero when no observations are present.
    pub num_vars: usize,
    /// Width of the static descriptor vector; zero when absent.
    pub num_statics: usize,
    pub mode: MarkMode,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn has_observations(&self) -> bool {
        self.records.iter().any(|r| r.observations.is_some())
    }

    pub fn has_labels(&self) -> bool {
        self.records.iter().any(|r| r.label().is_some())
    }

    pub fn total_events(&self, split: Split) -> usize {
        self.split(split).map(|r| r.events.len()).sum()
    }

    /// Assign splits by position: the first `train` fraction, then
    /// `validation`, remainder test.
    pub fn assign_splits(&mut self, train: f64, validation: f64) {
        let n = self.records.len();
        let n_train = ((n as f64) * train).round() as usize;
        let n_val = ((n as f64) * validation).round() as usize;
        for (i, r) in self.records.iter_mut().enumerate() {
            r.split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
    }

    /// Group every sequence with [`EventSequence::group_within`]; the
    /// dataset becomes multi-label.
    pub fn group_within(&mut self, width: f64) {
        for r in &mut self.records {
            r.events = r.events.group_within(width);
        }
        self.mode = MarkMode::MultiLabel;
    }

    /// Apply the left-truncation cap to every sequence.
    pub fn truncate(&mut self, cap: usize) {
        for r in &mut self.records {
            r.events.truncate_left(cap);
        }
    }
}

/// Default cap on sequence length; longer sequences keep their tail.
pub const DEFAULT_MAX_EVENTS: usize = 512;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_merges_events_in_a_bin() {
        let s = EventSequence::from_indices(vec![0.1, 0.4, 0.6, 2.2], &[0, 2, 0, 1], 3).unwrap();
        let g = s.group_within(0.5);
        assert_eq!(g.mode(), MarkMode::MultiLabel);
        assert_eq!(g.times(), &[0.1, 0.6, 2.2]);
        assert_eq!(g.marks(), &[vec![1, 0, 1], vec![1, 0, 0], vec![0, 1, 0]]);
    }

    #[test]
    fn minimal_record_is_accepted() {
        let s = EventSequence::new(
            "a",
            vec![0.0, 1.5],
            vec![vec![1, 0], vec![0, 1]],
            2,
            MarkMode::MultiClass,
        )
        .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.class_of(1), 1);
    }

    #[test]
    fn decreasing_times_are_rejected() {
        let err = EventSequence::new(
            "a",
            vec![2.0, 1.0],
            vec![vec![1, 0], vec![0, 1]],
            2,
            MarkMode::MultiClass,
        )
        .unwrap_err();
        assert!(err.to_string().contains("non-monotonic time at event 2"), "{err}");
    }

    #[test]
    fn co_occurring_marks_violate_multiclass() {
        let err = EventSequence::new("rt", vec![0.0], vec![vec![1, 1, 0]], 3, MarkMode::MultiClass)
            .unwrap_err();
        assert!(matches!(err, DataError::ModeViolation { active: 2, .. }));
        assert!(
            EventSequence::new("rt", vec![0.0], vec![vec![1, 1, 0]], 3, MarkMode::MultiLabel).is_ok()
        );
    }

    #[test]
    fn long_mark_vector_is_a_vocabulary_error() {
        let err = EventSequence::new("x", vec![0.0], vec![vec![0, 0, 1]], 2, MarkMode::MultiClass)
            .unwrap_err();
        assert!(matches!(err, DataError::Vocabulary { index: 2, .. }));
    }

    #[test]
    fn truncation_keeps_most_recent_events() {
        let mut s = EventSequence::from_indices(vec![0.0, 1.0, 2.0, 3.0], &[0, 1, 0, 1], 2).unwrap();
        s.truncate_left(2);
        assert_eq!(s.times(), &[2.0, 3.0]);
        assert_eq!(s.class_of(0), 0);
    }

    #[test]
    fn observation_vocabulary_is_checked() {
        let obs = vec![Observation {
            time: 0.0,
            variable: 4,
            value: 1.0,
        }];
        assert!(ObservationSet::new("o", obs, None, None, 3).is_err());
    }
}
