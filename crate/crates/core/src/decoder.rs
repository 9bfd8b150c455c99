//! Event decoder: per-interval intensity parameters and their integrals.
//!
//! For the interval governed by state row `r`,
//! `lambda_m(t) = e^{s_m} * softplus(mu + (eta - mu) * exp(-gamma * dt))`
//! where `dt` is the time since the interval start and `s_m` is a learned
//! per-mark log-scale (zero at initialisation).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::nn::{Bound, Group, Init, ParamId, ParamStore};
use crate::scalar::{gelu, softplus, Scalar};

/// Lower bound applied to intensities before taking logs.
pub const INTENSITY_FLOOR: f64 = 1e-9;

/// Scheme for the non-event integral over one interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integration {
    /// One uniform draw in each of `n` equal strata.
    Stratified,
    /// `n` independent uniform draws.
    Uniform,
    /// Composite trapezoid rule on `n + 1` nodes.
    Trapezoid,
}

impl std::str::FromStr for Integration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stratified" => Ok(Integration::Stratified),
            "uniform" | "mc" => Ok(Integration::Uniform),
            "trapezoid" => Ok(Integration::Trapezoid),
            _ => Err(format!("unknown integration scheme {s:?}")),
        }
    }
}

/// Quadrature nodes on `[0, span]` as `(offset, weight)` pairs. Empty for a
/// degenerate span.
pub fn quadrature(span: f64, n: usize, scheme: Integration, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    if !(span > 0.0) || n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    match scheme {
        Integration::Uniform => (0..n).map(|_| (span * rng.random::<f64>(), span / nf)).collect(),
        Integration::Stratified => (0..n)
            .map(|i| (span * (i as f64 + rng.random::<f64>()) / nf, span / nf))
            .collect(),
        Integration::Trapezoid => (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                (span * i as f64 / nf, w * span / nf)
            })
            .collect(),
    }
}

/// Concrete decoder output: one row per interval, one column per mark.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityState<T> {
    pub mu: Array2<T>,
    pub eta: Array2<T>,
    pub gamma: Array2<T>,
    /// `e^{s_m}`.
    pub scale: Vec<T>,
}

impl<T: Scalar> IntensityState<T> {
    pub fn num_marks(&self) -> usize {
        self.mu.ncols()
    }

    pub fn len(&self) -> usize {
        self.mu.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.nrows() == 0
    }

    /// `lambda_m` at `dt >= 0` after the start of interval `row`.
    pub fn intensity(&self, row: usize, m: usize, dt: f64) -> T {
        let (mu, eta, gamma) = (self.mu[[row, m]], self.eta[[row, m]], self.gamma[[row, m]]);
        let decay = (-(gamma * T::of(dt))).exp();
        self.scale[m] * softplus(mu + (eta - mu) * decay)
    }

    pub fn intensities(&self, row: usize, dt: f64) -> Vec<T> {
        (0..self.num_marks()).map(|m| self.intensity(row, m, dt)).collect()
    }

    /// Integral of `lambda_m` over `[0, span]` of interval `row`.
    pub fn integral(&self, row: usize, m: usize, span: f64, n: usize, scheme: Integration, seed: u64) -> T {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        quadrature(span, n, scheme, &mut rng)
            .into_iter()
            .fold(T::zero(), |acc, (s, w)| acc + T::of(w) * self.intensity(row, m, s))
    }
}

/// Decoder weights with separate projections of `h` and `y`.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub num_marks: usize,
    pub d_h: usize,
    pub d_y: usize,
    w_h: Option<ParamId>,
    w_y: Option<ParamId>,
    log_scale: ParamId,
}

/// Tape handles of a decoded state, rows aligned with the decoder input.
#[derive(Debug, Clone, Copy)]
pub struct DecodedVars {
    pub mu: Var,
    pub eta: Var,
    pub gamma: Var,
    /// `1 x M`, `e^{s_m}`.
    pub scale: Var,
}

impl Decoder {
    /// `name` prefixes parameter names; `d_h` or `d_y` may be zero when the
    /// corresponding encoder is absent. Weights start at zero, so every
    /// intensity starts at `ln 2`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        group: Group,
        name: &str,
        d_h: usize,
        d_y: usize,
        num_marks: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w_h = (d_h > 0).then(|| store.add(group, format!("{name}.w_h"), (d_h, 3 * num_marks), Init::Zeros, rng));
        let w_y = (d_y > 0).then(|| store.add(group, format!("{name}.w_y"), (d_y, 3 * num_marks), Init::Zeros, rng));
        let log_scale = store.add(group, format!("{name}.log_scale"), (1, num_marks), Init::Zeros, rng);
        Self {
            num_marks,
            d_h,
            d_y,
            w_h,
            w_y,
            log_scale,
        }
    }

    /// Decode `z = [h, y]` row by row.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, z: Var) -> DecodedVars {
        let rows = tape.value(z).nrows();
        let mut pre = None;
        if let Some(w) = self.w_h {
            let h = tape.slice_cols(z, 0, self.d_h);
            pre = Some(tape.matmul(h, bound.var(w)));
        }
        if let Some(w) = self.w_y {
            let y = tape.slice_cols(z, self.d_h, self.d_h + self.d_y);
            let p = tape.matmul(y, bound.var(w));
            pre = Some(match pre {
                Some(a) => tape.add(a, p),
                None => p,
            });
        }
        let pre = pre.unwrap_or_else(|| tape.zeros(rows, 3 * self.num_marks));
        let act = tape.gelu(pre);
        let m = self.num_marks;
        DecodedVars {
            mu: tape.slice_cols(act, 0, m),
            eta: tape.slice_cols(act, m, 2 * m),
            gamma: tape.slice_cols(act, 2 * m, 3 * m),
            scale: tape.exp(bound.var(self.log_scale)),
        }
    }

    /// Concrete state for rows of `z`.
    pub fn decode<T: Scalar>(&self, store: &ParamStore<T>, z: &Array2<T>) -> IntensityState<T> {
        let m = self.num_marks;
        let mut pre = Array2::<T>::zeros((z.nrows(), 3 * m));
        if let Some(w) = self.w_h {
            pre = pre + z.slice(ndarray::s![.., ..self.d_h]).dot(store.value(w));
        }
        if let Some(w) = self.w_y {
            pre = pre + z.slice(ndarray::s![.., self.d_h..self.d_h + self.d_y]).dot(store.value(w));
        }
        let act = pre.mapv(gelu);
        IntensityState {
            mu: act.slice(ndarray::s![.., ..m]).to_owned(),
            eta: act.slice(ndarray::s![.., m..2 * m]).to_owned(),
            gamma: act.slice(ndarray::s![.., 2 * m..]).to_owned(),
            scale: store.value(self.log_scale).iter().map(|s| s.exp()).collect(),
        }
    }
}

/// `lambda` on the tape at offsets `dt` (one per row, `rows x 1`).
pub fn intensity_at<T: Scalar>(tape: &mut Tape<T>, d: &DecodedVars, rows: Option<Vec<Option<usize>>>, dt: Var) -> Var {
    let (mu, eta, gamma) = match rows {
        Some(idx) => (
            tape.gather_rows(d.mu, idx.clone()),
            tape.gather_rows(d.eta, idx.clone()),
            tape.gather_rows(d.gamma, idx),
        ),
        None => (d.mu, d.eta, d.gamma),
    };
    let g = tape.mul_col(gamma, dt);
    let g = tape.scale(g, -T::one());
    let decay = tape.exp(g);
    let diff = tape.sub(eta, mu);
    let shifted = tape.mul(diff, decay);
    let arg = tape.add(mu, shifted);
    let sp = tape.softplus(arg);
    tape.mul_row(sp, d.scale)
}
