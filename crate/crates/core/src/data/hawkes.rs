//! Multivariate Hawkes processes with exponential kernels.
//!
//! Intensity of type `m`:
//! `lambda_m(t) = mu_m + sum_n sum_{t_i of type n, t_i < t} alpha[m][n] * beta[m][n] * exp(-beta[m][n] (t - t_i))`.
//! Sampling uses Ogata's thinning; between events every kernel decays, so
//! the intensity at the current time bounds the intensity until the next
//! accepted point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::types::{Dataset, EventSequence, MarkMode, Record, Split};
use crate::error::HawkesError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesSpec {
    pub mu: Vec<f64>,
    /// `alpha[m][n]`: expected number of type-`m` children of one type-`n` event.
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub t_max: f64,
}

impl HawkesSpec {
    /// One-dimensional process.
    pub fn univariate(mu: f64, alpha: f64, beta: f64, t_max: f64) -> Self {
        Self {
            mu: vec![mu],
            alpha: vec![vec![alpha]],
            beta: vec![vec![beta]],
            t_max,
        }
    }

    /// Independent homogeneous Poisson processes.
    pub fn poisson(rates: &[f64], t_max: f64) -> Self {
        let m = rates.len();
        Self {
            mu: rates.to_vec(),
            alpha: vec![vec![0.0; m]; m],
            beta: vec![vec![1.0; m]; m],
            t_max,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Perron root of the branching matrix.
    pub fn spectral_radius(&self) -> f64 {
        perron_root(&self.alpha)
    }

    pub fn validate(&self) -> Result<(), HawkesError> {
        let m = self.dim();
        if m == 0 {
            return Err(HawkesError::Invalid("no event types".into()));
        }
        if self.alpha.len() != m || self.beta.len() != m {
            return Err(HawkesError::Invalid("alpha and beta must be M x M".into()));
        }
        for row in self.alpha.iter().chain(&self.beta) {
            if row.len() != m {
                return Err(HawkesError::Invalid("alpha and beta must be M x M".into()));
            }
        }
        if self.mu.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(HawkesError::Invalid("base rates must be finite and nonnegative".into()));
        }
        if self.alpha.iter().flatten().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(HawkesError::Invalid("alpha entries must be finite and nonnegative".into()));
        }
        if self.beta.iter().flatten().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(HawkesError::Invalid("beta entries must be positive".into()));
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return Err(HawkesError::Invalid("horizon must be positive".into()));
        }
        let rho = self.spectral_radius();
        if rho >= 1.0 {
            return Err(HawkesError::NonStationary(rho));
        }
        Ok(())
    }

    /// Long-run event rate per type, `(I - alpha)^-1 mu`.
    pub fn stationary_rates(&self) -> Vec<f64> {
        let m = self.dim();
        // Neumann series converges because the spectral radius is below one.
        let mut total = self.mu.clone();
        let mut term = self.mu.clone();
        for _ in 0..10_000 {
            let next: Vec<f64> = (0..m)
                .map(|i| (0..m).map(|j| self.alpha[i][j] * term[j]).sum())
                .collect();
            let size: f64 = next.iter().map(|x| x.abs()).sum();
            for (t, n) in total.iter_mut().zip(&next) {
                *t += n;
            }
            term = next;
            if size < 1e-15 {
                break;
            }
        }
        total
    }

    /// Conditional intensities of all types at `t` given events strictly before `t`.
    pub fn intensity(&self, seq: &EventSequence, t: f64) -> Vec<f64> {
        let mut lam = self.mu.clone();
        for (j, &tj) in seq.times().iter().enumerate() {
            if tj >= t {
                break;
            }
            let n = seq.class_of(j);
            for (m, l) in lam.iter_mut().enumerate() {
                let (a, b) = (self.alpha[m][n], self.beta[m][n]);
                *l += a * b * (-b * (t - tj)).exp();
            }
        }
        lam
    }

    /// Exact log-likelihood of a sequence observed on `[0, t_max]`.
    pub fn log_likelihood(&self, seq: &EventSequence) -> f64 {
        let mut ll = 0.0;
        for (j, &tj) in seq.times().iter().enumerate() {
            ll += self.intensity(seq, tj)[seq.class_of(j)].ln();
        }
        let mut compensator: f64 = self.mu.iter().sum::<f64>() * self.t_max;
        for (j, &tj) in seq.times().iter().enumerate() {
            let n = seq.class_of(j);
            for m in 0..self.dim() {
                let (a, b) = (self.alpha[m][n], self.beta[m][n]);
                compensator += a * (1.0 - (-b * (self.t_max - tj)).exp());
            }
        }
        ll - compensator
    }
}

fn perron_root(a: &[Vec<f64>]) -> f64 {
    // Gelfand's formula rho = lim ||A^k||^(1/k) with k = 2^n, renormalising
    // after every squaring and tracking the scale in log space.
    let m = a.len();
    let row_max = |b: &[Vec<f64>]| b.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut b: Vec<Vec<f64>> = a.to_vec();
    let s0 = row_max(&b);
    if m == 0 || s0 == 0.0 {
        return 0.0;
    }
    b.iter_mut().flatten().for_each(|x| *x /= s0);
    let mut log_scale = s0.ln();
    let mut k = 1.0f64;
    for _ in 0..60 {
        let sq: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| (0..m).map(|l| b[i][l] * b[l][j]).sum()).collect())
            .collect();
        let n = row_max(&sq);
        if n == 0.0 {
            return 0.0;
        }
        b = sq;
        b.iter_mut().flatten().for_each(|x| *x /= n);
        log_scale = 2.0 * log_scale + n.ln();
        k *= 2.0;
    }
    (log_scale / k).exp()
}

/// Draw one realisation on `[0, t_max]` by Ogata thinning.
pub fn simulate_hawkes(spec: &HawkesSpec, seed: u64) -> Result<EventSequence, HawkesError> {
    spec.validate()?;
    let m = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // excitation[m][n]: current contribution of past type-n events to type m.
    let mut excitation = vec![vec![0.0f64; m]; m];
    let mut t = 0.0f64;
    let mut times = Vec::new();
    let mut types = Vec::new();
    let intensities = |exc: &Vec<Vec<f64>>| -> Vec<f64> {
        (0..m).map(|i| spec.mu[i] + exc[i].iter().sum::<f64>()).collect()
    };
    loop {
        let bound: f64 = intensities(&excitation).iter().sum();
        if bound <= 0.0 {
            break;
        }
        let wait = Exp::new(bound).expect("positive rate").sample(&mut rng);
        let next = t + wait;
        if next > spec.t_max {
            break;
        }
        for (i, row) in excitation.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                *e *= (-spec.beta[i][j] * wait).exp();
            }
        }
        t = next;
        let lam = intensities(&excitation);
        let total: f64 = lam.iter().sum();
        let u: f64 = rng.random::<f64>();
        if u * bound <= total {
            let mut pick = rng.random::<f64>() * total;
            let mut kind = m - 1;
            for (i, &l) in lam.iter().enumerate() {
                if pick < l {
                    kind = i;
                    break;
                }
                pick -= l;
            }
            times.push(t);
            types.push(kind);
            for (i, row) in excitation.iter_mut().enumerate() {
                row[kind] += spec.alpha[i][kind] * spec.beta[i][kind];
            }
        }
    }
    Ok(EventSequence::from_indices(times, &types, m).expect("simulated events are ordered"))
}

/// Independent per-sequence seed for sequence `i` of a batch.
pub fn derive_seed(seed: u64, i: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` sequences; empty realisations are skipped so every record has L >= 1.
/// Records are split 60/20/20 into train/validation/test by position.
pub fn simulate_hawkes_dataset(spec: &HawkesSpec, n: usize, seed: u64) -> Result<Dataset, HawkesError> {
    spec.validate()?;
    let mut records = Vec::with_capacity(n);
    let mut i = 0u64;
    while records.len() < n {
        let seq = simulate_hawkes(spec, derive_seed(seed, i))?;
        if !seq.is_empty() {
            records.push(Record {
                id: format!("seq{:05}", records.len()),
                events: seq,
                observations: None,
                split: Split::Train,
            });
        }
        i += 1;
        if i > 1000 * (n as u64 + 1) {
            return Err(HawkesError::Invalid("rates too low to produce non-empty sequences".into()));
        }
    }
    let mut ds = Dataset {
        records,
        num_marks: spec.dim(),
        num_vars: 0,
        num_statics: 0,
        mode: MarkMode::MultiClass,
    };
    ds.assign_splits(0.6, 0.2);
    Ok(ds)
}
