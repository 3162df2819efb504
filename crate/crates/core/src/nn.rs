//! Minimal neural toolkit on the tape: parameter store, dense layers,
//! Glorot initialization, Adam with decoupled weight decay, and the
//! reduce-on-plateau learning-rate scheduler.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{Tape, UnaryFn, Var};
use crate::{Error, Result};

/// Activation choice for dense layers; the PINN rule selects SiLU whenever a
/// physics loss participates (ReLU has an a.e.-zero second derivative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Silu,
    LeakyRelu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.unary(x, UnaryFn::Relu),
            Activation::Silu => tape.unary(x, UnaryFn::Silu),
            Activation::LeakyRelu => tape.unary(x, UnaryFn::LeakyRelu),
            Activation::Identity => x,
        }
    }
}

/// Named flat registry of trainable tensors; the tape references them by id.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub values: Vec<Array2<f64>>,
    pub names: Vec<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Array2<f64>) -> usize {
        self.values.push(value);
        self.names.push(name.to_string());
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Array2<f64>> {
        self.values.iter().map(|v| Array2::zeros(v.dim())).collect()
    }

    /// Put parameter `pid` on the tape as a trainable leaf.
    pub fn var(&self, tape: &mut Tape, pid: usize) -> Var {
        tape.param(self.values[pid].clone(), pid)
    }
}

/// Glorot-uniform weight matrix: bound sqrt(6/(fan_in+fan_out)).
pub fn glorot_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
}

/// Dense layer parameter ids: y = act(x W + b), W: in x out.
#[derive(Debug, Clone, Copy)]
pub struct DenseLayer {
    pub w: usize,
    pub b: usize,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
    ) -> Self {
        let w = store.register(&format!("{name}.w"), glorot_uniform(rng, fan_in, fan_out));
        let b = store.register(&format!("{name}.b"), Array2::zeros((1, fan_out)));
        DenseLayer { w, b, activation }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = store.var(tape, self.w);
        let b = store.var(tape, self.b);
        let h = tape.matmul(x, w);
        let h = tape.add_row(h, b);
        self.activation.apply(tape, h)
    }
}

/// Adam with decoupled weight decay (decay applied directly to parameters
/// before the Adam delta, not folded into the gradient).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: store.zero_grads(),
            v: store.zero_grads(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array2<f64>]) -> Result<()> {
        for (pid, g) in grads.iter().enumerate() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    name: store.names[pid].clone(),
                });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for pid in 0..store.values.len() {
            let g = &grads[pid];
            let p = &mut store.values[pid];
            if self.weight_decay != 0.0 {
                p.mapv_inplace(|x| x - self.lr * self.weight_decay * x);
            }
            let m = &mut self.m[pid];
            let v = &mut self.v[pid];
            azip(m, v, p, g, |m, v, p, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            });
        }
        Ok(())
    }
}

fn azip(
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    p: &mut Array2<f64>,
    g: &Array2<f64>,
    mut f: impl FnMut(&mut f64, &mut f64, &mut f64, &f64),
) {
    for (((m, v), p), g) in m.iter_mut().zip(v.iter_mut()).zip(p.iter_mut()).zip(g.iter()) {
        f(m, v, p, g);
    }
}

/// Reduce-on-plateau: halve the lr after `patience` consecutive epochs
/// without improvement beyond an absolute threshold.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub threshold: f64,
    best: f64,
    stall: usize,
}

impl PlateauScheduler {
    pub fn new() -> Self {
        PlateauScheduler {
            patience: 10,
            factor: 0.5,
            min_lr: 1e-7,
            threshold: 1e-8,
            best: f64::INFINITY,
            stall: 0,
        }
    }

    /// Feed one validation loss; returns the (possibly reduced) lr.
    pub fn step(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.stall = 0;
            lr
        } else {
            self.stall += 1;
            if self.stall >= self.patience {
                self.stall = 0;
                (lr * self.factor).max(self.min_lr)
            } else {
                lr
            }
        }
    }
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new()
    }
}
