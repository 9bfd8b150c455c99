#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teehr::autodiff::Tape;
use teehr::data::{EventSequence, MarkMode, Observation, ObservationSet, Record, Split};
use teehr::gradcheck::{central_differences, max_relative_error, STEP};
use teehr::loss::{bce_from_logit, outcome_logit, record_loss, LossOptions, Objective, OutcomeHead};
use teehr::{DamConfig, Model, ModelConfig, TeeConfig};

pub fn small_tee(m: usize, shift: usize) -> TeeConfig {
    let mut t = TeeConfig::new(m);
    t.d_emb = 4;
    t.d_time = 4;
    t.d_ff = 6;
    t.n_layers = 2;
    t.n_heads = 2;
    t.shift = shift;
    t
}

pub fn small_dam(v: usize, s: usize) -> DamConfig {
    let mut d = DamConfig::new(v, s);
    d.d_time = 4;
    d.hidden = 5;
    d.d_hprime = 3;
    d.d_gprime = 3;
    d.d_prod = 4;
    d.n_heads = 2;
    d.d_h = 3;
    d.d_g = 4;
    d.d_static = 2;
    d
}

/// Three events, two marks, five observations of three variables and two
/// statics.
pub fn toy_record(mode: MarkMode) -> Record {
    let marks = match mode {
        MarkMode::MultiClass => vec![vec![1, 0], vec![0, 1], vec![1, 0]],
        MarkMode::MultiLabel => vec![vec![1, 0], vec![1, 1], vec![0, 1]],
    };
    let events = EventSequence::new("toy", vec![0.3, 1.1, 2.6], marks, 2, mode).unwrap();
    let obs = [(0.2, 1, 0.5), (0.2, 3, -1.0), (0.9, 2, 1.5), (1.1, 1, 0.1), (2.0, 3, 0.7)]
        .into_iter()
        .map(|(time, variable, value)| Observation { time, variable, value })
        .collect();
    Record {
        id: "toy".into(),
        events,
        observations: Some(ObservationSet::new("toy", obs, Some(vec![0.4, -1.2]), Some(1), 3).unwrap()),
        split: Split::Train,
    }
}

pub fn toy_model(mode: MarkMode) -> Model<f64> {
    let cfg = ModelConfig {
        tee: Some(small_tee(2, 1)),
        dam: Some(small_dam(3, 2)),
        head_hidden: 3,
        init_seed: 11,
        ..ModelConfig::tee_only(2, mode)
    };
    let mut m = Model::new(cfg).unwrap();
    // Move zero-initialised weights off zero so every path carries gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in m.store.iter_mut() {
        p.value.mapv_inplace(|x| x + rng.random_range(-0.3..0.3));
    }
    m
}

fn objective_value(
    model: &Model<f64>,
    tape: &mut Tape<f64>,
    record: &Record,
    objective: Objective,
) -> (teehr::autodiff::Var, teehr::nn::Bound) {
    let bound = model.store.bind(tape);
    let tr = model.embed(tape, &bound, record).unwrap();
    if objective == Objective::SupervisedBce {
        let logit = outcome_logit(model, tape, &bound, tr.z, OutcomeHead::Classifier, false);
        (bce_from_logit(tape, logit, record.label().unwrap()), bound)
    } else {
        let opts = LossOptions {
            n_mc: 5,
            ..LossOptions::training(21)
        };
        let l = record_loss(model, tape, &bound, tr.z, &record.events, objective, &opts).loss;
        (l, bound)
    }
}

/// Analytic gradient of the objective against central differences; returns
/// the worst relative error and the offending parameter name.
pub fn model_gradcheck(model: &Model<f64>, record: &Record, objective: Objective) -> (f64, String) {
    let mut tape = Tape::new();
    let (out, bound) = objective_value(model, &mut tape, record, objective);
    let mut g = tape.backward(out);
    let analytic: Vec<Array2<f64>> = model
        .store
        .iter()
        .zip(bound.vars())
        .map(|((_, p), &v)| g.take(v).unwrap_or_else(|| Array2::zeros(p.value.dim())))
        .collect();
    let inputs: Vec<Array2<f64>> = model.store.iter().map(|(_, p)| p.value.clone()).collect();
    let mut work = model.clone();
    let numeric = central_differences(
        &inputs,
        |xs| {
            for (p, x) in work.store.iter_mut().zip(xs) {
                p.value.assign(x);
            }
            let mut t = Tape::new();
            let (o, _) = objective_value(&work, &mut t, record, objective);
            t.scalar(o)
        },
        STEP,
    );
    let (err, at) = max_relative_error(&analytic, &numeric);

    let name = at.map_or_else(String::new, |(i, _, _)| model.store.iter().nth(i).unwrap().1.name.clone());
    (err, name)
}
