//! Full model: optional TEE and DAM encoders, intensity decoders and heads.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dam::{Dam, DamConfig, DamTrace};
use crate::data::{MarkMode, ObservationSet, Record};
use crate::decoder::Decoder;
use crate::error::ConfigError;
use crate::nn::{Bound, Group, Linear, Mlp, ParamStore};
use crate::scalar::Scalar;
use crate::tee::{mark_matrix, Tee, TeeConfig, TeeTrace};

/// How a record is summarised for outcome heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    Last,
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "last" => Ok(Pooling::Last),
            "mean" => Ok(Pooling::Mean),
            _ => Err(format!("unknown pooling {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_marks: usize,
    pub mode: MarkMode,
    pub tee: Option<TeeConfig>,
    pub dam: Option<DamConfig>,
    /// Hidden width of the probe and classifier MLPs.
    pub head_hidden: usize,
    #[serde(default)]
    pub pooling: Pooling,
    /// Seed for parameter initialisation.
    pub init_seed: u64,
}

impl ModelConfig {
    /// TEE-only model with default encoder settings.
    pub fn tee_only(num_marks: usize, mode: MarkMode) -> Self {
        Self {
            num_marks,
            mode,
            tee: Some(TeeConfig::new(num_marks)),
            dam: None,
            head_hidden: 16,
            pooling: Pooling::Last,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_marks == 0 {
            return Err(ConfigError::Invalid("model: need at least one mark".into()));
        }
        if self.tee.is_none() && self.dam.is_none() {
            return Err(ConfigError::Invalid("model: enable TEE, DAM or both".into()));
        }
        if let Some(t) = &self.tee {
            if t.num_marks != self.num_marks {
                return Err(ConfigError::Invalid(format!(
                    "model: TEE has {} marks, model has {}",
                    t.num_marks, self.num_marks
                )));
            }
        }
        if self.head_hidden == 0 {
            return Err(ConfigError::Invalid("model: head width must be positive".into()));
        }
        Ok(())
    }

    pub fn d_h(&self) -> usize {
        self.tee.as_ref().map_or(0, TeeConfig::d_model)
    }

    pub fn d_y(&self) -> usize {
        self.dam.as_ref().map_or(0, DamConfig::d_y)
    }

    /// Width of `z_j = [h_j, y_j]`.
    pub fn d_z(&self) -> usize {
        self.d_h() + self.d_y()
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub tee: Option<Tee>,
    pub dam: Option<Dam>,
    pub decoder: Decoder,
    /// Single-mark ground intensity of the marked objective.
    pub ground: Decoder,
    pub mark_head: Linear,
    pub ae_head: Linear,
    pub probe: Mlp,
    pub classifier: Mlp,
}

/// Tape handles of an encoder pass over one record.
#[derive(Debug, Clone)]
pub struct EmbedTrace {
    /// `L x d_z`.
    pub z: Var,
    pub tee: Option<TeeTrace>,
    pub dam: Option<DamTrace>,
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut store = ParamStore::new();
        let tee = cfg.tee.clone().map(|c| Tee::new(&mut store, c, &mut rng)).transpose()?;
        let dam = cfg.dam.clone().map(|c| Dam::new(&mut store, c, &mut rng)).transpose()?;
        let (dh, dy, dz, m) = (cfg.d_h(), cfg.d_y(), cfg.d_z(), cfg.num_marks);
        let decoder = Decoder::new(&mut store, Group::Decoder, "decoder", dh, dy, m, &mut rng);
        let ground = Decoder::new(&mut store, Group::MarkHead, "ground", dh, dy, 1, &mut rng);
        let mark_head = Linear::new(&mut store, Group::MarkHead, "mark_head", dz, m, true, &mut rng);
        let ae_head = Linear::new(&mut store, Group::AeHead, "ae_head", dz, m, true, &mut rng);
        let probe = Mlp::new(&mut store, Group::Probe, "probe", &[dz, cfg.head_hidden, 1], &mut rng);
        let classifier = Mlp::new(&mut store, Group::Classifier, "classifier", &[dz, cfg.head_hidden, 1], &mut rng);
        Ok(Self {
            cfg,
            store,
            tee,
            dam,
            decoder,
            ground,
            mark_head,
            ae_head,
            probe,
            classifier,
        })
    }

    pub fn num_marks(&self) -> usize {
        self.cfg.num_marks
    }

    pub fn mode(&self) -> MarkMode {
        self.cfg.mode
    }

    /// Encode one record: `z_j = [h_j, y_j]` for every event.
    pub fn embed(&self, tape: &mut Tape<T>, bound: &Bound, record: &Record) -> Result<EmbedTrace, ConfigError> {
        let seq = &record.events;
        if seq.num_marks() != self.cfg.num_marks {
            return Err(ConfigError::Shape {
                name: format!("record {} marks", record.id),
                expected: (seq.len(), self.cfg.num_marks),
                found: (seq.len(), seq.num_marks()),
            });
        }
        let tee = match &self.tee {
            Some(t) => Some(t.forward(tape, bound, &mark_matrix(seq), seq.times())?),
            None => None,
        };
        let dam = match &self.dam {
            Some(d) => {
                let empty = ObservationSet::default();
                let obs = record.observations.as_ref().unwrap_or(&empty);
                Some(d.forward(tape, bound, obs, seq.times())?)
            }
            None => None,
        };
        let z = match (&tee, &dam) {
            (Some(t), Some(d)) => tape.concat_cols(&[t.h, d.y]),
            (Some(t), None) => t.h,
            (None, Some(d)) => d.y,
            (None, None) => unreachable!("validated at construction"),
        };
        Ok(EmbedTrace { z, tee, dam })
    }

    /// Pool `z` into a `1 x d_z` record summary.
    pub fn pool(&self, tape: &mut Tape<T>, z: Var) -> Var {
        let len = tape.value(z).nrows();
        match self.cfg.pooling {
            Pooling::Last => tape.slice_rows(z, len - 1, len),
            Pooling::Mean => {
                let w = T::one() / T::of(len as f64);
                tape.segment_sum(z, vec![(0, w); len], 1)
            }
        }
    }

    /// Concrete per-event embeddings.
    pub fn embeddings(&self, record: &Record) -> Result<Array2<T>, ConfigError> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let tr = self.embed(&mut tape, &bound, record)?;
        Ok(tape.value(tr.z).clone())
    }

    /// Pooled record embedding, the input of the outcome heads.
    pub fn record_embedding(&self, record: &Record) -> Result<Vec<T>, ConfigError> {
        let z = self.embeddings(record)?;
        Ok(match self.cfg.pooling {
            Pooling::Last => z.row(z.nrows() - 1).to_vec(),
            Pooling::Mean => z.mean_axis(Axis(0)).expect("nonempty").to_vec(),
        })
    }

    /// Encoder attention of the last TEE layer averaged over heads.
    pub fn tee_attention(&self, record: &Record) -> Result<Option<crate::tee::EncodedHistory<T>>, ConfigError> {
        match &self.tee {
            Some(t) => t.encode(&self.store, &record.events).map(Some),
            None => Ok(None),
        }
    }

    /// Check that the stored parameters have the shapes this configuration
    /// expects (used after loading).
    pub fn check_shapes(&self, other: &ParamStore<T>) -> Result<(), ConfigError> {
        for (_, p) in self.store.iter() {
            let q = other.find(&p.name).ok_or_else(|| ConfigError::Missing(p.name.clone()))?;
            let found = other.value(q).dim();
            if found != p.value.dim() {
                return Err(ConfigError::Shape {
                    name: p.name.clone(),
                    expected: p.value.dim(),
                    found,
                });
            }
        }
        Ok(())
    }
}
