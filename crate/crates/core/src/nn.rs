//! Named parameter storage and the dense layers built on top of it.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;

/// Parameter groups. Freezing and transfer operate at this granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Tee,
    Dam,
    Decoder,
    MarkHead,
    AeHead,
    Probe,
    Classifier,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::Tee,
        Group::Dam,
        Group::Decoder,
        Group::MarkHead,
        Group::AeHead,
        Group::Probe,
        Group::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Tee => "tee",
            Group::Dam => "dam",
            Group::Decoder => "decoder",
            Group::MarkHead => "mark_head",
            Group::AeHead => "ae_head",
            Group::Probe => "probe",
            Group::Classifier => "classifier",
        }
    }

    pub fn parse(s: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.name() == s)
    }
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub group: Group,
    pub name: String,
    pub value: Array2<T>,
}

/// Flat, ordered list of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

/// Glorot-uniform initialisation; biases and gains use explicit constants.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Glorot,
    Zeros,
    Ones,
    Const(f64),
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(
        &mut self,
        group: Group,
        name: impl Into<String>,
        shape: (usize, usize),
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let value = match init {
            Init::Glorot => {
                let limit = (6.0 / (shape.0 + shape.1) as f64).sqrt();
                Array2::from_shape_fn(shape, |_| T::of(rng.random_range(-limit..limit)))
            }
            Init::Zeros => Array2::zeros(shape),
            Init::Ones => Array2::ones(shape),
            Init::Const(c) => Array2::from_elem(shape, T::of(c)),
        };
        self.params.push(Param {
            group,
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn groups(&self) -> Vec<Group> {
        let mut gs: Vec<Group> = self.params.iter().map(|p| p.group).collect();
        gs.sort();
        gs.dedup();
        gs
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Place every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect(),
        }
    }

    /// Like [`ParamStore::bind`], but parameters of `frozen` groups become
    /// constants and receive no gradient.
    pub fn bind_frozen(&self, tape: &mut Tape<T>, frozen: &[Group]) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| {
                    if frozen.contains(&p.group) {
                        tape.constant(p.value.clone())
                    } else {
                        tape.leaf(p.value.clone())
                    }
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Vec<Array2<T>> {
        self.params.iter().map(|p| Array2::zeros(p.value.dim())).collect()
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Dense layer `x W (+ b)`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        group: Group,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(group, format!("{name}.weight"), (fan_in, fan_out), Init::Glorot, rng);
        let bias = bias.then(|| store.add(group, format!("{name}.bias"), (1, fan_out), Init::Zeros, rng));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Var {
        let y = tape.matmul(x, bound.var(self.weight));
        match self.bias {
            Some(b) => tape.add_row(y, bound.var(b)),
            None => y,
        }
    }
}

/// Multilayer perceptron with GELU between layers and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists input, hidden and output widths in order.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        group: Group,
        name: &str,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, group, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, bound, x);
            if i < last {
                x = tape.gelu(x);
            }
        }
        x
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }
}

/// Layer normalisation with learned gain and shift.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        group: Group,
        name: &str,
        width: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            gain: store.add(group, format!("{name}.gain"), (1, width), Init::Ones, rng),
            shift: store.add(group, format!("{name}.shift"), (1, width), Init::Zeros, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Var {
        let n = tape.layer_norm(x, T::of(Self::EPS));
        let g = tape.mul_row(n, bound.var(self.gain));
        tape.add_row(g, bound.var(self.shift))
    }
}
