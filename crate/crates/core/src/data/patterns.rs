//! Turning irregular lab measurements into event sequences.
//!
//! Observations are grouped into fixed-width time bins. The set of variables
//! measured in a bin is its *pattern*. An event is emitted per non-empty bin,
//! stamped with the latest observation time inside the bin so that the
//! observation prefix aligned to the event contains the whole bin.

use std::collections::{BTreeMap, HashMap};

use super::types::{Dataset, EventSequence, MarkMode, ObservationSet, Split};

/// Default bin width (one time unit, i.e. one hour for EHR-like data).
pub const DEFAULT_GROUP_WIDTH: f64 = 1.0;

/// How bins are mapped to marks.
#[derive(Debug, Clone, PartialEq)]
pub enum EventVocabulary {
    /// Exact set match against `K` patterns; unmatched bins get mark `K`
    /// (the catch-all "other" mark). Patterns hold sorted variable ids.
    Patterns(Vec<Vec<usize>>),
    /// One mark per listed variable, multi-hot over the variables present.
    /// Bins containing none of them produce no event.
    PerVariable(Vec<usize>),
}

impl EventVocabulary {
    pub fn num_marks(&self) -> usize {
        match self {
            EventVocabulary::Patterns(p) => p.len() + 1,
            EventVocabulary::PerVariable(v) => v.len(),
        }
    }
}

/// Result of [`build_pattern_vocab`].
#[derive(Debug, Clone, PartialEq)]
pub struct PatternVocab {
    pub patterns: Vec<Vec<usize>>,
    pub counts: Vec<usize>,
    /// How many of the requested `K` patterns could not be filled.
    pub shortfall: usize,
}

fn bins(obs: &ObservationSet, width: f64) -> Vec<(f64, Vec<usize>)> {
    let mut grouped: BTreeMap<i64, (f64, Vec<usize>)> = BTreeMap::new();
    for o in &obs.observations {
        let key = (o.time / width).floor() as i64;
        let entry = grouped.entry(key).or_insert((o.time, Vec::new()));
        entry.0 = entry.0.max(o.time);
        entry.1.push(o.variable);
    }
    grouped
        .into_values()
        .map(|(t, mut vars)| {
            vars.sort_unstable();
            vars.dedup();
            (t, vars)
        })
        .collect()
}

/// The `k` most frequent variable sets over all bins of the training
/// records, ties broken by lexicographic order of the sorted ids.
pub fn build_pattern_vocab(dataset: &Dataset, k: usize, group_width: f64) -> PatternVocab {
    assert!(k >= 1, "pattern vocabulary needs K >= 1");
    let mut freq: HashMap<Vec<usize>, usize> = HashMap::new();
    for rec in dataset.split(Split::Train) {
        if let Some(obs) = &rec.observations {
            for (_, pattern) in bins(obs, group_width) {
                *freq.entry(pattern).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(Vec<usize>, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    let shortfall = k - ranked.len();
    if shortfall > 0 {
        log::warn!("only {} distinct patterns available, {k} requested", ranked.len());
    }
    let (patterns, counts) = ranked.into_iter().unzip();
    PatternVocab {
        patterns,
        counts,
        shortfall,
    }
}

/// Bin the observations and map each bin's variable set to marks.
pub fn extract_lab_events(
    obs: &ObservationSet,
    vocab: &EventVocabulary,
    group_width: f64,
) -> EventSequence {
    let m = vocab.num_marks();
    let mut times = Vec::new();
    let mut marks = Vec::new();
    for (t, pattern) in bins(obs, group_width) {
        let mut mark = vec![0u8; m];
        match vocab {
            EventVocabulary::Patterns(patterns) => {
                let idx = patterns.iter().position(|p| *p == pattern).unwrap_or(patterns.len());
                mark[idx] = 1;
            }
            EventVocabulary::PerVariable(vars) => {
                for (i, v) in vars.iter().enumerate() {
                    if pattern.binary_search(v).is_ok() {
                        mark[i] = 1;
                    }
                }
                if mark.iter().all(|&b| b == 0) {
                    continue;
                }
            }
        }
        times.push(t);
        marks.push(mark);
    }
    if times.is_empty() {
        return EventSequence::empty(m, MarkMode::MultiLabel);
    }
    EventSequence::new("<extracted>", times, marks, m, MarkMode::MultiLabel)
        .expect("binned events are ordered and well-formed")
}
