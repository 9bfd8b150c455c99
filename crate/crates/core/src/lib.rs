//! Transformer event encoders and deep attention modules for neural temporal
//! point processes over event sequences and irregular observations.
//!
//! ```no_run
//! use teehr::data::{simulate_hawkes_dataset, HawkesSpec};
//! use teehr::train::train;
//! use teehr::{ModelConfig, Objective, TrainConfig};
//!
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let spec = HawkesSpec { mu: vec![0.2], alpha: vec![vec![0.5]], beta: vec![vec![1.0]], t_max: 100.0 };
//! let data = simulate_hawkes_dataset(&spec, 500, 0)?;
//! let model = ModelConfig::tee_only(1, data.mode);
//! let trained = train::<f64>(&data, &model, &TrainConfig::new(Objective::PpMc))?;
//! trained.checkpoint.save(std::path::Path::new("model.json"))?;
//! # Ok(())
//! # }
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod autodiff;
pub mod dam;
pub mod data;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod tee;
pub mod train;

pub use dam::{Dam, DamConfig, StateTrack};
pub use data::{Dataset, EventSequence, MarkMode, ObservationSet, Record, Split};
pub use decoder::{Integration, IntensityState};
pub use loss::{LossOptions, LossReport, Objective};
pub use metrics::ClassificationMetrics;
pub use model::{Model, ModelConfig, Pooling};
pub use nn::Group;
pub use scalar::Scalar;
pub use tee::{EncodedHistory, TeeConfig, TimeMode};
pub use train::{Checkpoint, StopMetric, TrainConfig, Trained};

pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type IntensityState64 = IntensityState<f64>;
pub type EncodedHistory64 = EncodedHistory<f64>;
