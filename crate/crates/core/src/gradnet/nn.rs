//! Parameters, forward-pass context and the layers the model is built from.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Matrix, Tape, Var};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Matrix,
    trainable: bool,
    grad: Matrix,
    m: Matrix,
    v: Matrix,
}

/// Named parameter tensors with their accumulated gradients and Adam
/// moments. Non-trainable entries hold buffers such as batch-norm running
/// statistics.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    shape: [usize; 2],
    values: Vec<f64>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    step: u64,
    params: BTreeMap<String, CheckpointEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let shape = value.dim();
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value,
            trainable,
            grad: Matrix::zeros(shape),
            m: Matrix::zeros(shape),
            v: Matrix::zeros(shape),
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform weights in `±√(6/(fan_in+fan_out))`.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Matrix::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound));
        self.add(name, w, true)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Matrix) {
        let p = &mut self.params[id.0];
        assert_eq!(p.value.dim(), value.dim(), "shape change for {}", p.name);
        p.value = value;
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Adds the gradients of the bound parameters from one backward pass.
    pub fn accumulate(&mut self, fwd: &Forward<'_>, grads: &Gradients) {
        for (p, var) in self.params.iter_mut().zip(&fwd.vars) {
            if !p.trainable {
                continue;
            }
            if let Some(g) = grads.get(*var) {
                p.grad += g;
            }
        }
    }

    /// Applies buffer updates (running statistics) recorded by a forward
    /// pass.
    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Matrix)>) {
        for (id, value) in updates {
            self.set_value(id, value);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.grad.iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`;
    /// returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in self.params.iter_mut().filter(|p| p.trainable) {
                p.grad *= s;
            }
        }
        norm
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// One bias-corrected Adam update of every trainable parameter, then
    /// clears the gradients.
    pub(crate) fn adam_update(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&p.grad)
                .for_each(|x, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *x -= lr * mh / (vh.sqrt() + eps);
                });
        }
        self.zero_grad();
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let params = self
            .params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    CheckpointEntry {
                        shape: [p.value.nrows(), p.value.ncols()],
                        values: p.value.iter().copied().collect(),
                        trainable: p.trainable,
                    },
                )
            })
            .collect();
        Ok(serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            step: self.step,
            params,
        })?)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?).map_err(|e| Error::io(path, e))
    }

    /// Overwrites every parameter of this store from a checkpoint. The
    /// checkpoint must name exactly the same parameters with the same shapes.
    pub fn load_checkpoint_json(&mut self, text: &str) -> Result<()> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, model has {}",
                ck.params.len(),
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let e = ck
                .params
                .get(&p.name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {}", p.name)))?;
            if e.shape != [p.value.nrows(), p.value.ncols()] || e.values.len() != p.value.len() {
                return Err(Error::Config(format!("shape mismatch for parameter {}", p.name)));
            }
            p.value = Matrix::from_shape_vec((e.shape[0], e.shape[1]), e.values.clone())
                .expect("length checked");
        }
        self.step = ck.step;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_checkpoint_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: the tape, every parameter bound as a leaf, the mode,
/// a dropout RNG and the running-statistics updates it produced.
pub struct Forward<'a> {
    pub tape: &'a Tape,
    vars: Vec<Var>,
    mode: Mode,
    rng: RefCell<ChaCha8Rng>,
    updates: RefCell<Vec<(ParamId, Matrix)>>,
}

impl<'a> Forward<'a> {
    pub fn new(tape: &'a Tape, store: &ParamStore, mode: Mode, seed: u64) -> Self {
        let vars = store
            .params
            .iter()
            .map(|p| {
                if p.trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Forward {
            tape,
            vars,
            mode,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn param_value(&self, id: ParamId) -> std::cell::Ref<'_, Matrix> {
        self.tape.value(self.vars[id.0])
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn take_updates(&self) -> Vec<(ParamId, Matrix)> {
        std::mem::take(&mut self.updates.borrow_mut())
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales the
    /// rest by `1/(1−p)` in training mode; identity otherwise.
    pub fn dropout(&self, x: Var, p: f64) -> Var {
        if !self.is_train() || p <= 0.0 {
            return x;
        }
        let shape = self.tape.shape(x);
        let keep = 1.0 - p;
        let mut rng = self.rng.borrow_mut();
        let mask = Matrix::from_shape_fn(shape, |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = self.tape.constant(mask);
        self.tape.mul(x, m)
    }
}

/// `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = store.add(format!("{name}.bias"), Matrix::zeros((1, fan_out)), true);
        Linear { weight, bias }
    }

    pub fn forward(&self, fwd: &Forward<'_>, x: Var) -> Var {
        let t = fwd.tape;
        let xw = t.matmul(x, fwd.param(self.weight));
        t.add_row(xw, fwd.param(self.bias))
    }
}

/// Per-feature batch normalization with running statistics (momentum 0.1).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Matrix::ones((1, dim)), true),
            beta: store.add(format!("{name}.beta"), Matrix::zeros((1, dim)), true),
            running_mean: store.add(format!("{name}.running_mean"), Matrix::zeros((1, dim)), false),
            running_var: store.add(format!("{name}.running_var"), Matrix::ones((1, dim)), false),
        }
    }

    /// Batch statistics in training mode (when the batch has more than one
    /// row), running statistics otherwise.
    pub fn forward(&self, fwd: &Forward<'_>, x: Var) -> Var {
        let t = fwd.tape;
        let n = t.shape(x).0;
        let normalized = if fwd.is_train() && n > 1 {
            let mu = t.col_mean(x);
            let xc = t.sub_row(x, mu);
            let sq = t.mul(xc, xc);
            let var = t.col_mean(sq);
            let std = t.sqrt(t.add_scalar(var, Self::EPS));
            let inv = t.recip(std);
            let m = Self::MOMENTUM;
            let rm = &*fwd.param_value(self.running_mean) * (1.0 - m) + &*t.value(mu) * m;
            let unbiased = &*t.value(var) * (n as f64 / (n as f64 - 1.0));
            let rv = &*fwd.param_value(self.running_var) * (1.0 - m) + unbiased * m;
            fwd.updates
                .borrow_mut()
                .extend([(self.running_mean, rm), (self.running_var, rv)]);
            t.mul_row(xc, inv)
        } else {
            let mean = fwd.param(self.running_mean);
            let inv = fwd
                .param_value(self.running_var)
                .mapv(|v| 1.0 / (v + Self::EPS).sqrt());
            let inv = t.constant(inv);
            let xc = t.sub_row(x, mean);
            t.mul_row(xc, inv)
        };
        let scaled = t.mul_row(normalized, fwd.param(self.gamma));
        t.add_row(scaled, fwd.param(self.beta))
    }
}

/// Fully connected stack with ReLU and dropout between hidden layers and a
/// linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub dropout: f64,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers, dropout }
    }

    pub fn forward(&self, fwd: &Forward<'_>, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(fwd, x);
            if i < last {
                x = fwd.tape.relu(x);
                x = fwd.dropout(x, self.dropout);
            }
        }
        x
    }
}
