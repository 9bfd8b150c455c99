//! Event and observation data: types, files, lab-event extraction and
//! synthetic generators.

pub mod adapters;
pub mod ehr;
pub mod hawkes;
pub mod io;
pub mod patterns;
pub mod types;

pub use ehr::{simulate_ehr_like, EhrConfig, EhrTruth};
pub use hawkes::{simulate_hawkes, simulate_hawkes_dataset, HawkesSpec};
pub use io::{load_dataset_dir, load_event_file, save_dataset_dir, save_dataset_dir_annotated, LoadOptions};
pub use patterns::{build_pattern_vocab, extract_lab_events, EventVocabulary, PatternVocab};
pub use types::{
    Dataset, EventSequence, MarkMode, Observation, ObservationSet, Record, Split, DEFAULT_MAX_EVENTS,
};
