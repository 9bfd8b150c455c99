//! Deep attention module: a set-function encoder of irregular observations.
//!
//! Observation `p` is embedded as `u_p = [TE(t_p), onehot(k_p), v_p]`. For
//! each prefix `U_p` a set summary `f'(U_p)` is formed from the mean of
//! `h'(u_k)`; attention over `k <= p` then pools `h(u_k)` into `y'_p`, and
//! `y'` is sampled at event times.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mask, Tape, Var};
use crate::data::ObservationSet;
use crate::error::ConfigError;
use crate::nn::{Bound, Group, Init, Mlp, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tee::time_encoding_matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamConfig {
    pub num_vars: usize,
    pub num_statics: usize,
    pub d_time: usize,
    pub time_scale: f64,
    /// Hidden width shared by every MLP of the module.
    pub hidden: usize,
    pub d_hprime: usize,
    pub d_gprime: usize,
    pub d_prod: usize,
    pub n_heads: usize,
    pub d_h: usize,
    pub d_g: usize,
    /// Width of the static embedding; zero disables it.
    pub d_static: usize,
}

impl DamConfig {
    pub fn new(num_vars: usize, num_statics: usize) -> Self {
        Self {
            num_vars,
            num_statics,
            d_time: 16,
            time_scale: 10_000.0,
            hidden: 32,
            d_hprime: 16,
            d_gprime: 16,
            d_prod: 16,
            n_heads: 2,
            d_h: 16,
            d_g: 32,
            d_static: 8,
        }
    }

    /// Width of `u_p`.
    pub fn d_s(&self) -> usize {
        self.d_time + self.num_vars + 1
    }

    /// Width of each `y_j` (dynamic part plus static embedding).
    pub fn d_y(&self) -> usize {
        self.d_g + self.d_static
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let widths = [
            self.num_vars,
            self.d_time,
            self.hidden,
            self.d_hprime,
            self.d_gprime,
            self.d_prod,
            self.n_heads,
            self.d_h,
            self.d_g,
        ];
        if widths.contains(&0) {
            return Err(ConfigError::Invalid("dam: widths must be positive".into()));
        }
        if !self.d_time.is_multiple_of(2) {
            return Err(ConfigError::Invalid("dam: d_time must be even".into()));
        }
        if !(self.time_scale > 0.0) || !self.time_scale.is_finite() {
            return Err(ConfigError::Invalid("dam: time scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Head {
    key: ParamId,
    query: ParamId,
}

#[derive(Debug, Clone)]
pub struct Dam {
    pub cfg: DamConfig,
    h_prime: Mlp,
    g_prime: Mlp,
    heads: Vec<Head>,
    h: Mlp,
    g: Mlp,
    statics: Option<Mlp>,
}

/// Tape handles of one module pass.
#[derive(Debug, Clone)]
pub struct DamTrace {
    /// `P x d_g`, absent for an empty observation set.
    pub y_prime: Option<Var>,
    /// `L x d_y`, aligned to event times.
    pub y: Var,
    pub set_summary: Option<Var>,
    /// Per head, `P x P` with row `p` holding `a(U_p, u_k)`.
    pub attention: Vec<Var>,
}

/// Concrete module output for one record.
#[derive(Debug, Clone)]
pub struct StateTrack<T> {
    pub y_prime: Array2<T>,
    pub y: Array2<T>,
}

/// Observation matrix with rows `[TE(t_p), onehot(k_p), v_p]`.
pub fn observation_matrix<T: Scalar>(obs: &ObservationSet, cfg: &DamConfig) -> Array2<T> {
    let times: Vec<f64> = obs.observations.iter().map(|o| o.time).collect();
    let te = time_encoding_matrix::<T>(&times, cfg.d_time, cfg.time_scale);
    let mut u = Array2::zeros((times.len(), cfg.d_s()));
    for (p, o) in obs.observations.iter().enumerate() {
        u.row_mut(p).slice_mut(ndarray::s![..cfg.d_time]).assign(&te.row(p));
        u[[p, cfg.d_time + o.variable - 1]] = T::one();
        u[[p, cfg.d_s() - 1]] = T::of(o.value);
    }
    u
}

/// For each event time, the last observation index with `t_p <= t_j`.
pub fn downsample_index(obs_times: &[f64], event_times: &[f64]) -> Vec<Option<usize>> {
    event_times
        .iter()
        .map(|&t| obs_times.partition_point(|&tp| tp <= t).checked_sub(1))
        .collect()
}

impl Dam {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: DamConfig, rng: &mut impl Rng) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let gr = Group::Dam;
        let ds = cfg.d_s();
        let h_prime = Mlp::new(store, gr, "dam.h_prime", &[ds, cfg.hidden, cfg.d_hprime], rng);
        let g_prime = Mlp::new(store, gr, "dam.g_prime", &[cfg.d_hprime, cfg.hidden, cfg.d_gprime], rng);
        let heads = (0..cfg.n_heads)
            .map(|i| Head {
                key: store.add(gr, format!("dam.head{i}.key"), (cfg.d_gprime + ds, cfg.d_prod), Init::Glorot, rng),
                query: store.add(gr, format!("dam.head{i}.query"), (cfg.d_prod, 1), Init::Glorot, rng),
            })
            .collect();
        let h = Mlp::new(store, gr, "dam.h", &[ds, cfg.hidden, cfg.d_h], rng);
        let g = Mlp::new(store, gr, "dam.g", &[cfg.n_heads * cfg.d_h, cfg.hidden, cfg.d_g], rng);
        let statics = (cfg.d_static > 0)
            .then(|| Mlp::new(store, gr, "dam.statics", &[cfg.num_statics + 1, cfg.hidden, cfg.d_static], rng));
        Ok(Self {
            cfg,
            h_prime,
            g_prime,
            heads,
            h,
            g,
            statics,
        })
    }

    pub fn d_y(&self) -> usize {
        self.cfg.d_y()
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        obs: &ObservationSet,
        event_times: &[f64],
    ) -> Result<DamTrace, ConfigError> {
        let cfg = &self.cfg;
        if let Some(o) = obs.observations.iter().find(|o| o.variable == 0 || o.variable > cfg.num_vars) {
            return Err(ConfigError::Invalid(format!(
                "dam: variable {} outside 1..={}",
                o.variable, cfg.num_vars
            )));
        }
        let len = event_times.len();
        let np = obs.observations.len();
        let (y_prime, set_summary, attention, dynamic) = if np == 0 {
            (None, None, Vec::new(), tape.zeros(len, cfg.d_g))
        } else {
            let u = tape.leaf(observation_matrix(obs, cfg));
            let hp = self.h_prime.forward(tape, bound, u);
            let avg = tape.leaf(Array2::from_shape_fn((np, np), |(p, k)| {
                if k <= p {
                    T::one() / T::of((p + 1) as f64)
                } else {
                    T::zero()
                }
            }));
            let mean = tape.matmul(avg, hp);
            let fprime = self.g_prime.forward(tape, bound, mean);
            let mask = Rc::new(Mask::from_fn(np, np, |p, k| k <= p));
            let inv_sqrt = T::of(1.0 / (cfg.d_prod as f64).sqrt());
            let values = self.h.forward(tape, bound, u);
            let mut attention = Vec::with_capacity(self.heads.len());
            let mut pooled = Vec::with_capacity(self.heads.len());
            for head in &self.heads {
                let wk = bound.var(head.key);
                let wf = tape.slice_rows(wk, 0, cfg.d_gprime);
                let wu = tape.slice_rows(wk, cfg.d_gprime, cfg.d_gprime + cfg.d_s());
                let kf = tape.matmul(fprime, wf);
                let sf = tape.matmul(kf, bound.var(head.query));
                let ku = tape.matmul(u, wu);
                let su = tape.matmul(ku, bound.var(head.query));
                let su = tape.transpose(su);
                let base = tape.zeros(np, np);
                let scores = tape.add_row(base, su);
                let scores = tape.add_col(scores, sf);
                let scores = tape.scale(scores, inv_sqrt);
                let a = tape.masked_softmax(scores, mask.clone());
                pooled.push(tape.matmul(a, values));
                attention.push(a);
            }
            let merged = if pooled.len() == 1 { pooled[0] } else { tape.concat_cols(&pooled) };
            let yp = self.g.forward(tape, bound, merged);
            let times: Vec<f64> = obs.observations.iter().map(|o| o.time).collect();
            let dynamic = tape.gather_rows(yp, downsample_index(&times, event_times));
            (Some(yp), Some(fprime), attention, dynamic)
        };
        let y = match &self.statics {
            Some(mlp) => {
                let mut input = Array2::zeros((1, cfg.num_statics + 1));
                if let Some(s) = &obs.statics {
                    if s.len() != cfg.num_statics {
                        return Err(ConfigError::Shape {
                            name: "dam statics".into(),
                            expected: (1, cfg.num_statics),
                            found: (1, s.len()),
                        });
                    }
                    for (i, &v) in s.iter().enumerate() {
                        input[[0, i]] = T::of(v);
                    }
                    input[[0, cfg.num_statics]] = T::one();
                }
                let input = tape.leaf(input);
                let emb = mlp.forward(tape, bound, input);
                let rows = tape.gather_rows(emb, vec![Some(0); len]);
                tape.concat_cols(&[dynamic, rows])
            }
            None => dynamic,
        };
        Ok(DamTrace {
            y_prime,
            y,
            set_summary,
            attention,
        })
    }

    pub fn encode<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        obs: &ObservationSet,
        event_times: &[f64],
    ) -> Result<StateTrack<T>, ConfigError> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let tr = self.forward(&mut tape, &bound, obs, event_times)?;
        Ok(StateTrack {
            y_prime: tr
                .y_prime
                .map(|v| tape.value(v).clone())
                .unwrap_or_else(|| Array2::zeros((0, self.cfg.d_g))),
            y: tape.value(tr.y).clone(),
        })
    }

    /// `f'(U_p)` for every prefix, `P x d_g'`.
    pub fn set_summary<T: Scalar>(&self, store: &ParamStore<T>, obs: &ObservationSet) -> Result<Array2<T>, ConfigError> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let tr = self.forward(&mut tape, &bound, obs, &[])?;
        Ok(tr
            .set_summary
            .map(|v| tape.value(v).clone())
            .unwrap_or_else(|| Array2::zeros((0, self.cfg.d_gprime))))
    }

    /// Attention weights per head; row `p` covers keys `k <= p`.
    pub fn attention<T: Scalar>(&self, store: &ParamStore<T>, obs: &ObservationSet) -> Result<Vec<Array2<T>>, ConfigError> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let tr = self.forward(&mut tape, &bound, obs, &[])?;
        Ok(tr.attention.iter().map(|&a| tape.value(a).clone()).collect())
    }
}
