//! Transformer event encoder.
//!
//! Marks are embedded, combined with a sinusoidal encoding of the raw
//! timestamps and passed through pre-norm self-attention blocks under a
//! shifted causal mask. Row `j` of the output sees the marks of events
//! `1..=j-w` and the timestamps of events `1..=j`.
//!
//! With `w >= 1` the mark of event `j` itself must stay out of row `j`, so
//! the residual stream starts from the time encoding alone. The first layer
//! takes keys and values from the full input; deeper layers read the stream.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mask, Tape, Var};
use crate::data::EventSequence;
use crate::error::ConfigError;
use crate::nn::{Bound, Group, Init, LayerNorm, Mlp, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeMode {
    Concatenate,
    Sum,
}

impl std::str::FromStr for TimeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concatenate" | "concat" => Ok(TimeMode::Concatenate),
            "sum" => Ok(TimeMode::Sum),
            _ => Err(format!("unknown time mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeeConfig {
    pub num_marks: usize,
    pub d_emb: usize,
    pub d_time: usize,
    /// Maximum time scale of the sinusoidal encoding.
    pub time_scale: f64,
    pub n_layers: usize,
    pub n_heads: usize,
    pub time_mode: TimeMode,
    /// Masking shift `w`.
    pub shift: usize,
    /// Hidden width of the feed-forward sublayer.
    pub d_ff: usize,
}

impl TeeConfig {
    pub fn new(num_marks: usize) -> Self {
        Self {
            num_marks,
            d_emb: 32,
            d_time: 32,
            time_scale: 10_000.0,
            n_layers: 2,
            n_heads: 2,
            time_mode: TimeMode::Concatenate,
            shift: 1,
            d_ff: 64,
        }
    }

    pub fn d_model(&self) -> usize {
        match self.time_mode {
            TimeMode::Concatenate => self.d_emb + self.d_time,
            TimeMode::Sum => self.d_emb,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(format!("tee: {m}")));
        if self.num_marks == 0 || self.d_emb == 0 || self.d_time == 0 || self.d_ff == 0 {
            return bad("widths and mark count must be positive");
        }
        if !self.d_time.is_multiple_of(2) {
            return bad("d_time must be even");
        }
        if self.time_mode == TimeMode::Sum && self.d_emb != self.d_time {
            return bad("sum mode requires d_emb = d_time");
        }
        if !(self.time_scale > 0.0) || !self.time_scale.is_finite() {
            return bad("time scale must be positive");
        }
        if self.n_layers == 0 || self.n_heads == 0 {
            return bad("need at least one layer and one head");
        }
        if !self.d_model().is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        Ok(())
    }
}

/// Sinusoidal time encoding. Component `d` (1-based) is
/// `cos(t / scale^((d-1)/d_time))` for odd `d` and
/// `sin(t / scale^(d/d_time))` for even `d`.
pub fn time_encode(t: f64, d_time: usize, time_scale: f64) -> Vec<f64> {
    (1..=d_time)
        .map(|d| {
            if d % 2 == 1 {
                (t / time_scale.powf((d - 1) as f64 / d_time as f64)).cos()
            } else {
                (t / time_scale.powf(d as f64 / d_time as f64)).sin()
            }
        })
        .collect()
}

/// Time encodings of `times` stacked as rows.
pub fn time_encoding_matrix<T: Scalar>(times: &[f64], d_time: usize, time_scale: f64) -> Array2<T> {
    let mut out = Array2::zeros((times.len(), d_time));
    for (i, &t) in times.iter().enumerate() {
        for (d, v) in time_encode(t, d_time, time_scale).into_iter().enumerate() {
            out[[i, d]] = T::of(v);
        }
    }
    out
}

/// Shifted causal mask: row `j` keeps key `k` iff `k + w <= j` (0-based).
pub fn build_mask(len: usize, shift: usize) -> Mask {
    Mask::from_fn(len, len, |j, k| k + shift <= j)
}

/// Binary mark matrix (`L x M`).
pub fn mark_matrix<T: Scalar>(seq: &EventSequence) -> Array2<T> {
    let mut out = Array2::zeros((seq.len(), seq.num_marks()));
    for (j, row) in seq.marks().iter().enumerate() {
        for (m, &b) in row.iter().enumerate() {
            if b != 0 {
                out[[j, m]] = T::one();
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Block {
    norm_attn: LayerNorm,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    norm_ff: LayerNorm,
    ff: Mlp,
}

/// Encoder parameters (handles into a [`ParamStore`]).
#[derive(Debug, Clone)]
pub struct Tee {
    pub cfg: TeeConfig,
    embedding: ParamId,
    blocks: Vec<Block>,
    norm_out: LayerNorm,
}

/// Tape handles of one encoder pass.
#[derive(Debug, Clone)]
pub struct TeeTrace {
    pub h: Var,
    /// `attention[layer][head]`, each `L x L`.
    pub attention: Vec<Vec<Var>>,
    pub mask: Rc<Mask>,
}

/// Concrete encoder output for one sequence.
#[derive(Debug, Clone)]
pub struct EncodedHistory<T> {
    pub h: Array2<T>,
    pub attention: Vec<Vec<Array2<T>>>,
    pub mask: Mask,
}

impl<T: Scalar> EncodedHistory<T> {
    /// Attention of the last layer averaged over heads.
    pub fn last_layer_mean(&self) -> Array2<T> {
        let heads = self.attention.last().expect("at least one layer");
        let mut acc = Array2::zeros(heads[0].dim());
        for a in heads {
            acc += a;
        }
        acc / T::of(heads.len() as f64)
    }
}

impl Tee {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: TeeConfig, rng: &mut impl Rng) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let g = Group::Tee;
        let dm = cfg.d_model();
        let embedding = store.add(g, "tee.embedding", (cfg.num_marks, cfg.d_emb), Init::Glorot, rng);
        let blocks = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("tee.layer{l}");
                Block {
                    norm_attn: LayerNorm::new(store, g, &format!("{p}.norm_attn"), dm, rng),
                    wq: store.add(g, format!("{p}.wq"), (dm, dm), Init::Glorot, rng),
                    wk: store.add(g, format!("{p}.wk"), (dm, dm), Init::Glorot, rng),
                    wv: store.add(g, format!("{p}.wv"), (dm, dm), Init::Glorot, rng),
                    wo: store.add(g, format!("{p}.wo"), (dm, dm), Init::Glorot, rng),
                    norm_ff: LayerNorm::new(store, g, &format!("{p}.norm_ff"), dm, rng),
                    ff: Mlp::new(store, g, &format!("{p}.ff"), &[dm, cfg.d_ff, dm], rng),
                }
            })
            .collect();
        let norm_out = LayerNorm::new(store, g, "tee.norm_out", dm, rng);
        Ok(Self {
            cfg,
            embedding,
            blocks,
            norm_out,
        })
    }

    pub fn d_model(&self) -> usize {
        self.cfg.d_model()
    }

    /// Encode raw inputs: `marks` is `L x M` (real-valued inputs are accepted
    /// so that perturbation tests can probe them), `times` has length `L`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        marks: &Array2<T>,
        times: &[f64],
    ) -> Result<TeeTrace, ConfigError> {
        let cfg = &self.cfg;
        let len = times.len();
        if marks.dim() != (len, cfg.num_marks) {
            return Err(ConfigError::Shape {
                name: "tee input marks".into(),
                expected: (len, cfg.num_marks),
                found: marks.dim(),
            });
        }
        let e = tape.leaf(marks.clone());
        let te = tape.leaf(time_encoding_matrix(times, cfg.d_time, cfg.time_scale));
        let emb = tape.matmul(e, bound.var(self.embedding));
        let (x, mut stream) = match cfg.time_mode {
            TimeMode::Concatenate => {
                let x = tape.concat_cols(&[emb, te]);
                let s = if cfg.shift == 0 {
                    x
                } else {
                    let z = tape.zeros(len, cfg.d_emb);
                    tape.concat_cols(&[z, te])
                };
                (x, s)
            }
            TimeMode::Sum => {
                let x = tape.add(emb, te);
                (x, if cfg.shift == 0 { x } else { te })
            }
        };
        let mask = Rc::new(build_mask(len, cfg.shift));
        let dm = cfg.d_model();
        let dh = dm / cfg.n_heads;
        let inv_sqrt = T::of(1.0 / (dh as f64).sqrt());
        let mut attention = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            let q_in = block.norm_attn.forward(tape, bound, stream);
            let kv_in = if l == 0 && cfg.shift > 0 {
                block.norm_attn.forward(tape, bound, x)
            } else {
                q_in
            };
            let q = tape.matmul(q_in, bound.var(block.wq));
            let k = tape.matmul(kv_in, bound.var(block.wk));
            let v = tape.matmul(kv_in, bound.var(block.wv));
            let mut heads = Vec::with_capacity(cfg.n_heads);
            let mut outs = Vec::with_capacity(cfg.n_heads);
            for hd in 0..cfg.n_heads {
                let (a, b) = (hd * dh, (hd + 1) * dh);
                let qh = tape.slice_cols(q, a, b);
                let kh = tape.slice_cols(k, a, b);
                let vh = tape.slice_cols(v, a, b);
                let kt = tape.transpose(kh);
                let scores = tape.matmul(qh, kt);
                let scores = tape.scale(scores, inv_sqrt);
                let attn = tape.masked_softmax(scores, mask.clone());
                outs.push(tape.matmul(attn, vh));
                heads.push(attn);
            }
            let merged = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
            let proj = tape.matmul(merged, bound.var(block.wo));
            stream = tape.add(stream, proj);
            let normed = block.norm_ff.forward(tape, bound, stream);
            let ff = block.ff.forward(tape, bound, normed);
            stream = tape.add(stream, ff);
            attention.push(heads);
        }
        let h = self.norm_out.forward(tape, bound, stream);
        Ok(TeeTrace { h, attention, mask })
    }

    /// Encode one sequence outside of training.
    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, seq: &EventSequence) -> Result<EncodedHistory<T>, ConfigError> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let trace = self.forward(&mut tape, &bound, &mark_matrix(seq), seq.times())?;
        Ok(EncodedHistory {
            h: tape.value(trace.h).clone(),
            attention: trace
                .attention
                .iter()
                .map(|heads| heads.iter().map(|&a| tape.value(a).clone()).collect())
                .collect(),
            mask: (*trace.mask).clone(),
        })
    }
}
