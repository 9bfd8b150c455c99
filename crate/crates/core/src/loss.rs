//! Training objectives and next-mark scoring.
//!
//! All record-level terms are log-likelihood contributions; the quantity
//! minimised is their negation. Intensities at event `j` come from the state
//! of the preceding interval, so the decoder runs on `z` shifted down by one
//! row with a zero row in front (the state before any history).

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::hawkes::derive_seed;
use crate::data::{EventSequence, MarkMode, Record};
use crate::decoder::{intensity_at, quadrature, DecodedVars, Integration, INTENSITY_FLOOR};
use crate::error::ConfigError;
use crate::model::Model;
use crate::nn::{Bound, Group};
use crate::scalar::{sigmoid, Scalar};
use crate::tee::mark_matrix;

/// Clamp applied to per-mark densities in the multi-label complement term.
pub const COMPLEMENT_EPS: f64 = 1e-6;
/// Seed of evaluation-time integration points.
pub const EVAL_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    PpMc,
    PpMl,
    PpMarked,
    Ae,
    SupervisedBce,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pp-mc" => Ok(Objective::PpMc),
            "pp-ml" => Ok(Objective::PpMl),
            "pp-marked" | "pp-single" => Ok(Objective::PpMarked),
            "ae" => Ok(Objective::Ae),
            "supervised-bce" | "bce" => Ok(Objective::SupervisedBce),
            _ => Err(format!("unknown objective {s:?}")),
        }
    }
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::PpMc => "pp-mc",
            Objective::PpMl => "pp-ml",
            Objective::PpMarked => "pp-marked",
            Objective::Ae => "ae",
            Objective::SupervisedBce => "supervised-bce",
        }
    }

    /// Whether the objective is a point-process likelihood.
    pub fn has_likelihood(self) -> bool {
        matches!(self, Objective::PpMc | Objective::PpMl | Objective::PpMarked)
    }

    /// Head groups the objective trains besides the encoders.
    pub fn head_groups(self) -> &'static [Group] {
        match self {
            Objective::PpMc | Objective::PpMl => &[Group::Decoder],
            Objective::PpMarked => &[Group::MarkHead],
            Objective::Ae => &[Group::AeHead],
            Objective::SupervisedBce => &[Group::Classifier],
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossOptions {
    pub n_mc: usize,
    pub integration: Integration,
    /// Record-level seed; interval seeds are derived from it.
    pub seed: u64,
}

impl LossOptions {
    pub const TRAIN_N_MC: usize = 20;
    pub const EVAL_N_MC: usize = 200;

    pub fn training(seed: u64) -> Self {
        Self {
            n_mc: Self::TRAIN_N_MC,
            integration: Integration::Stratified,
            seed,
        }
    }

    pub fn evaluation() -> Self {
        Self {
            n_mc: Self::EVAL_N_MC,
            integration: Integration::Stratified,
            seed: EVAL_SEED,
        }
    }

    pub fn for_record(self, index: usize) -> Self {
        Self {
            seed: derive_seed(self.seed, index as u64),
            ..self
        }
    }
}

/// Tape handles of one record's objective.
#[derive(Debug, Clone, Copy)]
pub struct RecordLoss {
    /// Negative log-likelihood (or cross-entropy) to minimise.
    pub loss: Var,
    pub ll: Var,
    pub event: Option<Var>,
    pub integral: Option<Var>,
    pub complement: Option<Var>,
    pub mark: Option<Var>,
    /// Events contributing to the normaliser.
    pub num_events: usize,
}

/// Accumulated objective values over a set of records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Log-likelihood: `event - integral + complement + mark`.
    pub ll: f64,
    pub event_term: f64,
    pub integral_term: f64,
    pub complement_term: f64,
    pub mark_term: f64,
    pub num_events: usize,
    pub num_records: usize,
}

impl LossReport {
    pub fn ll_per_event(&self) -> f64 {
        self.ll / self.num_events as f64
    }

    /// Quantity minimised during training, normalised per event.
    pub fn loss_per_event(&self) -> f64 {
        -self.ll_per_event()
    }

    pub fn record<T: Scalar>(tape: &Tape<T>, r: &RecordLoss) -> Self {
        let v = |x: Option<Var>| x.map_or(0.0, |x| tape.scalar(x).as_f64());
        Self {
            ll: tape.scalar(r.ll).as_f64(),
            event_term: v(r.event),
            integral_term: v(r.integral),
            complement_term: v(r.complement),
            mark_term: v(r.mark),
            num_events: r.num_events,
            num_records: 1,
        }
    }

    pub fn merge(&mut self, o: &LossReport) {
        self.ll += o.ll;
        self.event_term += o.event_term;
        self.integral_term += o.integral_term;
        self.complement_term += o.complement_term;
        self.mark_term += o.mark_term;
        self.num_events += o.num_events;
        self.num_records += o.num_records;
    }
}

/// Row `j` is `z_{j-1}`; row 0 is zero.
pub fn shift_down<T: Scalar>(tape: &mut Tape<T>, z: Var) -> Var {
    let len = tape.value(z).nrows();
    let idx = std::iter::once(None).chain((0..len.saturating_sub(1)).map(Some)).collect();
    tape.gather_rows(z, idx)
}

/// Inter-event gaps measured from the origin `t_0 = 0`.
pub fn gaps(times: &[f64]) -> Vec<f64> {
    times
        .first()
        .map(|t| t.max(0.0))
        .into_iter()
        .chain(times.windows(2).map(|w| w[1] - w[0]))
        .collect()
}

fn column<T: Scalar>(v: &[f64]) -> Array2<T> {
    Array2::from_shape_fn((v.len(), 1), |(i, _)| T::of(v[i]))
}

/// Point-process terms for decoded states aligned with events.
struct PpTerms {
    event: Var,
    integral: Var,
    complement: Option<Var>,
}

fn pp_terms<T: Scalar>(
    tape: &mut Tape<T>,
    dec: &DecodedVars,
    marks: &Array2<T>,
    times: &[f64],
    opts: &LossOptions,
    complement: bool,
) -> PpTerms {
    let len = times.len();
    let m = marks.ncols();
    let dt = gaps(times);
    let dt_var = tape.leaf(column(&dt));
    let lam = intensity_at(tape, dec, None, dt_var);
    let floored = tape.clamp(lam, T::of(INTENSITY_FLOOR), T::infinity());
    let log_lam = tape.ln(floored);
    let e = tape.leaf(marks.clone());
    let picked = tape.mul(log_lam, e);
    let event = tape.sum(picked);

    let mut rows = Vec::new();
    let mut offsets = Vec::new();
    let mut weights = Vec::new();
    for (r, &span) in dt.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, r as u64));
        for (s, w) in quadrature(span, opts.n_mc, opts.integration, &mut rng) {
            rows.push(r);
            offsets.push(s);
            weights.push(w);
        }
    }
    let per_interval = if rows.is_empty() {
        tape.zeros(len, m)
    } else {
        let s = tape.leaf(column(&offsets));
        let lam_s = intensity_at(tape, dec, Some(rows.iter().map(|&r| Some(r)).collect()), s);
        let w = tape.leaf(column(&weights));
        let weighted = tape.mul_col(lam_s, w);
        tape.segment_sum(weighted, rows.iter().map(|&r| (r, T::one())).collect(), len)
    };
    let integral = tape.sum(per_interval);

    let complement = complement.then(|| {
        let ones = tape.leaf(Array2::ones((m, 1)));
        let total = tape.matmul(per_interval, ones);
        let neg = tape.scale(total, -T::one());
        let survival = tape.exp(neg);
        let density = tape.mul_col(lam, survival);
        let eps = T::of(COMPLEMENT_EPS);
        let p = tape.clamp(density, eps, T::one() - eps);
        let neg_p = tape.scale(p, -T::one());
        let q = tape.add_scalar(neg_p, T::one());
        let log_q = tape.ln(q);
        let absent = tape.leaf(marks.mapv(|x| T::one() - x));
        let terms = tape.mul(log_q, absent);
        tape.sum(terms)
    });
    PpTerms {
        event,
        integral,
        complement,
    }
}

/// `sum(E * log_softmax(logits))`.
fn categorical_ll<T: Scalar>(tape: &mut Tape<T>, logits: Var, marks: &Array2<T>) -> Var {
    let lp = tape.log_softmax(logits);
    let e = tape.leaf(marks.clone());
    let picked = tape.mul(lp, e);
    tape.sum(picked)
}

/// `sum(E * x - softplus(x))`, the negated binary cross-entropy.
fn bernoulli_ll<T: Scalar>(tape: &mut Tape<T>, logits: Var, marks: &Array2<T>) -> Var {
    let e = tape.leaf(marks.clone());
    let ex = tape.mul(logits, e);
    let sp = tape.softplus(logits);
    let d = tape.sub(ex, sp);
    tape.sum(d)
}

/// Objective of one sequence given its embeddings `z` (`L x d_z`).
pub fn record_loss<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    z: Var,
    seq: &EventSequence,
    objective: Objective,
    opts: &LossOptions,
) -> RecordLoss {
    let marks = mark_matrix::<T>(seq);
    let len = seq.len();
    let neg = |tape: &mut Tape<T>, ll: Var| tape.scale(ll, -T::one());
    match objective {
        Objective::PpMc | Objective::PpMl | Objective::SupervisedBce => {
            let zp = shift_down(tape, z);
            let dec = model.decoder.forward(tape, bound, zp);
            let t = pp_terms(tape, &dec, &marks, seq.times(), opts, objective == Objective::PpMl);
            let mut ll = tape.sub(t.event, t.integral);
            if let Some(c) = t.complement {
                ll = tape.add(ll, c);
            }
            RecordLoss {
                loss: neg(tape, ll),
                ll,
                event: Some(t.event),
                integral: Some(t.integral),
                complement: t.complement,
                mark: None,
                num_events: len,
            }
        }
        Objective::PpMarked => {
            let zp = shift_down(tape, z);
            let dec = model.ground.forward(tape, bound, zp);
            let t = pp_terms(tape, &dec, &Array2::ones((len, 1)), seq.times(), opts, false);
            let logits = model.mark_head.forward(tape, bound, zp);
            let mark = categorical_ll(tape, logits, &marks);
            let time = tape.sub(t.event, t.integral);
            let ll = tape.add(time, mark);
            RecordLoss {
                loss: neg(tape, ll),
                ll,
                event: Some(t.event),
                integral: Some(t.integral),
                complement: None,
                mark: Some(mark),
                num_events: len,
            }
        }
        Objective::Ae => {
            let mark = if len < 2 {
                tape.constant_scalar(T::zero())
            } else {
                let zh = tape.slice_rows(z, 0, len - 1);
                let logits = model.ae_head.forward(tape, bound, zh);
                let targets = marks.slice(ndarray::s![1.., ..]).to_owned();
                match model.mode() {
                    MarkMode::MultiClass => categorical_ll(tape, logits, &targets),
                    MarkMode::MultiLabel => bernoulli_ll(tape, logits, &targets),
                }
            };
            RecordLoss {
                loss: neg(tape, mark),
                ll: mark,
                event: None,
                integral: None,
                complement: None,
                mark: Some(mark),
                num_events: len.saturating_sub(1),
            }
        }
    }
}

/// Which outcome head to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeHead {
    Probe,
    Classifier,
}

/// Outcome logit (`1 x 1`). With `detach` the head sees a gradient-stopped
/// copy of the embeddings.
pub fn outcome_logit<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    z: Var,
    head: OutcomeHead,
    detach: bool,
) -> Var {
    let z = if detach { tape.detach(z) } else { z };
    let pooled = model.pool(tape, z);
    match head {
        OutcomeHead::Probe => model.probe.forward(tape, bound, pooled),
        OutcomeHead::Classifier => model.classifier.forward(tape, bound, pooled),
    }
}

/// Binary cross-entropy of a logit against a 0/1 label.
pub fn bce_from_logit<T: Scalar>(tape: &mut Tape<T>, logit: Var, label: u8) -> Var {
    let sp = tape.softplus(logit);
    if label == 0 {
        sp
    } else {
        tape.sub(sp, logit)
    }
}

/// Objective of one record without gradients.
pub fn evaluate_record<T: Scalar>(
    model: &Model<T>,
    record: &Record,
    objective: Objective,
    opts: &LossOptions,
) -> Result<LossReport, ConfigError> {
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let tr = model.embed(&mut tape, &bound, record)?;
    let r = record_loss(model, &mut tape, &bound, tr.z, &record.events, objective, opts);
    Ok(LossReport::record(&tape, &r))
}

/// Per-event mark scores and targets for next-mark evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarkPrediction {
    pub scores: Vec<Vec<f64>>,
    pub targets: Vec<Vec<u8>>,
}

impl MarkPrediction {
    pub fn extend(&mut self, other: MarkPrediction) {
        self.scores.extend(other.scores);
        self.targets.extend(other.targets);
    }
}

/// Scores for the marks of events `2..=L` given their histories.
///
/// Point-process objectives score by the intensity at the event time
/// (normalised over marks in multi-class mode); the marked objective uses
/// its mark head and the AE objective its next-mark head.
pub fn predict_next_marks<T: Scalar>(
    model: &Model<T>,
    record: &Record,
    objective: Objective,
) -> Result<MarkPrediction, ConfigError> {
    let seq = &record.events;
    let len = seq.len();
    let mut out = MarkPrediction::default();
    if len < 2 {
        return Ok(out);
    }
    let z = model.embeddings(record)?;
    let mode = model.mode();
    let normalise = |v: Vec<f64>| -> Vec<f64> {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    };
    let softmax = |v: Vec<f64>| -> Vec<f64> {
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        normalise(v.into_iter().map(|x| (x - mx).exp()).collect())
    };
    let dt = gaps(seq.times());
    for (j, &gap) in dt.iter().enumerate().skip(1) {
        let prev = z.row(j - 1).insert_axis(Axis(0)).to_owned();
        let scores: Vec<f64> = match objective {
            Objective::PpMarked => {
                let w = model.store.value(model.mark_head.weight);
                let mut l = prev.dot(w);
                if let Some(b) = model.mark_head.bias {
                    l += model.store.value(b);
                }
                softmax(l.iter().map(|x| x.as_f64()).collect())
            }
            Objective::Ae => {
                let w = model.store.value(model.ae_head.weight);
                let mut l = prev.dot(w);
                if let Some(b) = model.ae_head.bias {
                    l += model.store.value(b);
                }
                let l: Vec<f64> = l.iter().map(|x| x.as_f64()).collect();
                match mode {
                    MarkMode::MultiClass => softmax(l),
                    MarkMode::MultiLabel => l.into_iter().map(sigmoid).collect(),
                }
            }
            _ => {
                let st = model.decoder.decode(&model.store, &prev);
                let lam: Vec<f64> = st.intensities(0, gap).into_iter().map(|x| x.as_f64()).collect();
                match mode {
                    MarkMode::MultiClass => normalise(lam),
                    MarkMode::MultiLabel => lam,
                }
            }
        };
        out.scores.push(scores);
        out.targets.push(seq.marks()[j].clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tee::TeeConfig;

    fn model(mode: MarkMode, m: usize) -> Model<f64> {
        let mut tee = TeeConfig::new(m);
        tee.d_emb = 4;
        tee.d_time = 4;
        tee.d_ff = 6;
        let mut cfg = ModelConfig::tee_only(m, mode);
        cfg.tee = Some(tee);
        Model::new(cfg).unwrap()
    }

    fn rec(seq: EventSequence) -> Record {
        Record {
            id: "x".into(),
            events: seq,
            observations: None,
            split: crate::data::Split::Train,
        }
    }

    #[test]
    fn gaps_measured_from_origin() {
        assert_eq!(gaps(&[1.0, 1.5, 4.0]), vec![1.0, 0.5, 2.5]);
        assert!(gaps(&[]).is_empty());
    }

    #[test]
    fn first_interval_starts_at_origin() {
        let m = model(MarkMode::MultiClass, 2);
        let r = rec(EventSequence::from_indices(vec![0.0], &[1], 2).unwrap());
        let rep = evaluate_record(&m, &r, Objective::PpMc, &LossOptions::evaluation()).unwrap();
        assert_eq!(rep.integral_term, 0.0);
        assert!((rep.ll - rep.event_term).abs() < 1e-15);
        // The zero-history state decodes to e^0 * softplus(0) per mark.
        let r = rec(EventSequence::from_indices(vec![3.0], &[1], 2).unwrap());
        let rep = evaluate_record(&m, &r, Objective::PpMc, &LossOptions::evaluation()).unwrap();
        assert!((rep.integral_term - 2.0 * 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let ae = evaluate_record(&m, &r, Objective::Ae, &LossOptions::evaluation()).unwrap();
        assert_eq!(ae.ll, 0.0);
    }

    #[test]
    fn report_terms_add_up() {
        let m = model(MarkMode::MultiLabel, 3);
        let seq = EventSequence::new(
            "x",
            vec![0.0, 0.4, 1.3],
            vec![vec![1, 0, 1], vec![0, 1, 0], vec![1, 1, 0]],
            3,
            MarkMode::MultiLabel,
        )
        .unwrap();
        let r = rec(seq);
        let opts = LossOptions::training(4);
        let ml = evaluate_record(&m, &r, Objective::PpMl, &opts).unwrap();
        assert!((ml.ll - (ml.event_term - ml.integral_term + ml.complement_term)).abs() < 1e-12);
        assert!(ml.complement_term < 0.0);
        let mc = evaluate_record(&m, &r, Objective::PpMc, &opts).unwrap();
        assert!(ml.ll <= mc.ll);
    }

    #[test]
    fn intensity_scores_for_every_later_event() {
        let m = model(MarkMode::MultiClass, 2);
        let r = rec(EventSequence::from_indices(vec![0.0, 1.0, 2.0, 2.5], &[0, 1, 1, 0], 2).unwrap());
        let p = predict_next_marks(&m, &r, Objective::PpMc).unwrap();
        assert_eq!(p.scores.len(), 3);
        for s in &p.scores {
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.targets[0], vec![0, 1]);
    }

    #[test]
    fn objective_names_round_trip() {
        for o in [Objective::PpMc, Objective::PpMl, Objective::PpMarked, Objective::Ae, Objective::SupervisedBce] {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
    }
}
