//! Desk-scale stand-in for ICU cohorts.
//!
//! Each patient belongs to one of two latent classes (the class is the
//! outcome label). Labs are drawn in panels: panel times follow a Poisson
//! process whose rate depends on the class and on a per-patient frailty,
//! and each variable joins a panel with a class-dependent probability. The
//! measurement pattern therefore carries the outcome signal even though
//! values differ only mildly between classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::hawkes::derive_seed;
use super::patterns::{extract_lab_events, EventVocabulary, DEFAULT_GROUP_WIDTH};
use super::types::{Dataset, MarkMode, Observation, ObservationSet, Record, Split};
use crate::error::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhrConfig {
    pub n_patients: usize,
    pub num_vars: usize,
    pub horizon: f64,
    pub prevalence: f64,
    /// Panel rate per hour for the negative and positive class.
    pub panel_rate: [f64; 2],
    /// Shape of the per-patient Gamma frailty on the panel rate (mean one).
    pub frailty_shape: f64,
    /// Mean shift of positive-class values, in standard deviations.
    pub value_shift: f64,
    pub seed: u64,
}

impl EhrConfig {
    pub fn new(n_patients: usize, num_vars: usize, seed: u64) -> Self {
        Self {
            n_patients,
            num_vars,
            horizon: 48.0,
            prevalence: 0.4,
            panel_rate: [0.5, 0.8],
            frailty_shape: 4.0,
            value_shift: 0.3,
            seed,
        }
    }

    /// Probability that variable `v` (0-based) joins a panel for `class`.
    /// The two classes favour opposite ends of the variable list.
    pub fn inclusion(&self, class: usize, v: usize) -> f64 {
        let x = if self.num_vars > 1 {
            v as f64 / (self.num_vars - 1) as f64
        } else {
            0.5
        };
        match class {
            0 => 0.15 + 0.7 * x,
            _ => 0.85 - 0.7 * x,
        }
    }

    pub fn truth(&self) -> EhrTruth {
        let density = |c: usize| -> Vec<f64> {
            (0..self.num_vars)
                .map(|v| self.panel_rate[c] * self.inclusion(c, v))
                .collect()
        };
        EhrTruth {
            panel_rate: self.panel_rate,
            inclusion: [
                (0..self.num_vars).map(|v| self.inclusion(0, v)).collect(),
                (0..self.num_vars).map(|v| self.inclusion(1, v)).collect(),
            ],
            expected_density: [density(0), density(1)],
            prevalence: self.prevalence,
        }
    }
}

/// Ground truth written next to simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhrTruth {
    pub panel_rate: [f64; 2],
    pub inclusion: [Vec<f64>; 2],
    /// Expected measurements per hour of each variable, per class.
    pub expected_density: [Vec<f64>; 2],
    pub prevalence: f64,
}

fn simulate_patient(cfg: &EhrConfig, rng: &mut ChaCha8Rng) -> ObservationSet {
    let class = usize::from(rng.random::<f64>() < cfg.prevalence);
    let frailty = Gamma::new(cfg.frailty_shape, 1.0 / cfg.frailty_shape)
        .expect("valid gamma")
        .sample(rng);
    let rate = cfg.panel_rate[class] * frailty;
    let wait = Exp::new(rate).expect("positive rate");
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let offsets: Vec<f64> = (0..cfg.num_vars).map(|_| 0.5 * unit.sample(rng)).collect();
    let mut observations = Vec::new();
    let mut t = 0.0;
    loop {
        t += wait.sample(rng);
        if t > cfg.horizon {
            break;
        }
        let mut panel: Vec<usize> = (0..cfg.num_vars)
            .filter(|&v| rng.random::<f64>() < cfg.inclusion(class, v))
            .collect();
        if panel.is_empty() {
            panel.push(rng.random_range(0..cfg.num_vars));
        }
        for v in panel {
            let mean = offsets[v] + if class == 1 { cfg.value_shift } else { 0.0 };
            observations.push(Observation {
                time: t,
                variable: v + 1,
                value: mean + unit.sample(rng),
            });
        }
    }
    let age = 0.4 * class as f64 + unit.sample(rng);
    let sex = f64::from(u8::from(rng.random::<bool>()));
    ObservationSet {
        observations,
        statics: Some(vec![age, sex]),
        label: Some(class as u8),
    }
}

/// Simulated cohort with per-variable lab events (multi-label marks over
/// all variables, one-hour bins) and a 60/20/20 split.
pub fn simulate_ehr_like(cfg: &EhrConfig) -> Result<Dataset, DataError> {
    if cfg.n_patients == 0 {
        return Err(DataError::Argument("n_patients must be at least 1".into()));
    }
    if cfg.num_vars == 0 {
        return Err(DataError::Argument("num_vars must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.prevalence) || !(cfg.horizon > 0.0) {
        return Err(DataError::Argument("prevalence in [0,1] and positive horizon required".into()));
    }
    if cfg.panel_rate.iter().any(|&r| !(r > 0.0)) || !(cfg.frailty_shape > 0.0) {
        return Err(DataError::Argument("panel rates and frailty shape must be positive".into()));
    }
    let vocab = EventVocabulary::PerVariable((1..=cfg.num_vars).collect());
    let mut records = Vec::with_capacity(cfg.n_patients);
    for i in 0..cfg.n_patients {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
        // Patients without a single lab carry no events; redraw them.
        let obs = loop {
            let o = simulate_patient(cfg, &mut rng);
            if !o.is_empty() {
                break o;
            }
        };
        let events = extract_lab_events(&obs, &vocab, DEFAULT_GROUP_WIDTH);
        records.push(Record {
            id: format!("pat{i:05}"),
            events,
            observations: Some(obs),
            split: Split::Train,
        });
    }
    let mut ds = Dataset {
        records,
        num_marks: cfg.num_vars,
        num_vars: cfg.num_vars,
        num_statics: 2,
        mode: MarkMode::MultiLabel,
    };
    ds.assign_splits(0.6, 0.2);
    Ok(ds)
}
