//! Parameter storage, layers and the optimizer shared by the generator,
//! discriminator and autoencoder.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Named dense matrix in a serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_array(name: &str, a: &Array2<f64>) -> Self {
        Tensor {
            name: name.to_string(),
            shape: [a.nrows(), a.ncols()],
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
            .map_err(|e| Error::Shape(format!("tensor `{}`: {e}", self.name)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered collection of trainable matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

/// Parameters of a [`ParamStore`] registered on a tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradients for every parameter in store order (zeros where unused).
    pub fn gradients(&self, grads: &Gradients) -> Vec<Array2<f64>> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Registers every parameter as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound { vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect() }
    }

    /// Registers every parameter as a constant (inference / frozen passes).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound { vars: self.values.iter().map(|v| tape.constant(v.clone())).collect() }
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.names.iter().zip(&self.values).map(|(n, v)| Tensor::from_array(n, v)).collect()
    }

    /// Overwrites values from `tensors`, which must match names and shapes exactly.
    pub fn load_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        if tensors.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                self.values.len(),
                tensors.len()
            )));
        }
        for ((name, value), t) in self.names.iter().zip(self.values.iter_mut()).zip(tensors) {
            if &t.name != name || t.shape != [value.nrows(), value.ncols()] {
                return Err(Error::Shape(format!(
                    "parameter `{name}` {:?} does not match stored `{}` {:?}",
                    value.dim(),
                    t.name,
                    t.shape
                )));
            }
            *value = t.to_array()?;
        }
        Ok(())
    }
}

pub fn xavier_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }
}

/// Affine map `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), xavier_uniform(rng, d_in, d_out));
        let b = store.add(format!("{name}.b"), Array2::zeros((1, d_out)));
        Linear { w, b }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.matmul(p.get(self.w)).add_row(p.get(self.b))
    }
}

/// Standard LSTM cell; `activation` replaces the cell-input and cell-output tanh.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
    pub activation: Activation,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        hidden: usize,
        activation: Activation,
    ) -> Self {
        let wx = store.add(format!("{name}.wx"), xavier_uniform(rng, d_in, 4 * hidden));
        let wh = store.add(format!("{name}.wh"), xavier_uniform(rng, hidden, 4 * hidden));
        // forget-gate bias starts at 1
        let mut bias = Array2::zeros((1, 4 * hidden));
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        let b = store.add(format!("{name}.b"), bias);
        LstmCell { wx, wh, b, hidden, activation }
    }

    pub fn zero_state<'t>(&self, tape: &'t Tape, batch: usize) -> (Var<'t>, Var<'t>) {
        (
            tape.constant(Array2::zeros((batch, self.hidden))),
            tape.constant(Array2::zeros((batch, self.hidden))),
        )
    }

    /// One step; returns the new `(h, c)`.
    pub fn step<'t>(&self, p: &Bound<'t>, x: Var<'t>, state: (Var<'t>, Var<'t>)) -> (Var<'t>, Var<'t>) {
        let (h, c) = state;
        let hd = self.hidden;
        let gates = x.matmul(p.get(self.wx)).add(h.matmul(p.get(self.wh))).add_row(p.get(self.b));
        let i = gates.slice_cols(0, hd).sigmoid();
        let f = gates.slice_cols(hd, 2 * hd).sigmoid();
        let g = self.activation.apply(gates.slice_cols(2 * hd, 3 * hd));
        let o = gates.slice_cols(3 * hd, 4 * hd).sigmoid();
        let c_next = f.mul(c).add(i.mul(g));
        let h_next = o.mul(self.activation.apply(c_next));
        (h_next, c_next)
    }
}

/// Adaptive moment estimation with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            m: params.values().iter().map(|v| Array2::zeros(v.dim())).collect(),
            v: params.values().iter().map(|v| Array2::zeros(v.dim())).collect(),
            t: 0,
        }
    }

    pub fn with_clip_norm(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    /// Descends along `grads` (one per parameter, store order).
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Array2<f64>]) {
        assert_eq!(grads.len(), params.len());
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let g = g * scale;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            });
        }
    }
}

/// Stacks per-step `batch×d` outputs into `(batch·steps)×d` with rows ordered
/// sample-major (`b·steps + t`).
pub fn stack_steps<'t>(steps: &[Var<'t>]) -> Var<'t> {
    let batch = steps[0].shape().0;
    let n = steps.len();
    let stacked = crate::autodiff::concat_rows(steps);
    let order = (0..batch).flat_map(|b| (0..n).map(move |t| t * batch + b)).collect();
    stacked.gather_rows(order)
}
