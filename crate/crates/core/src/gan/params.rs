use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Gradients, Graph, Tensor, Var};
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Normal(f64),
    Const(f64),
}

/// Named parameter tensors in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Records names, shapes and initializers while a network lays out its
/// parameters, so the same layout code serves fresh init and checkpoint load.
pub(crate) struct Layout {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
}

impl Layout {
    pub fn new() -> Self {
        Self { names: Vec::new(), shapes: Vec::new(), inits: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) -> usize {
        self.names.push(name.into());
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    /// Values are rounded to f32 so a saved checkpoint reloads exactly.
    pub fn init(self, rng: &mut impl Rng) -> Result<ParamStore> {
        let mut tensors = Vec::with_capacity(self.names.len());
        for (shape, init) in self.shapes.into_iter().zip(self.inits) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Normal(std) => (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
                Init::Const(c) => vec![c; n],
            };
            let data = data.into_iter().map(|v: f64| v as f32 as f64).collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(ParamStore { names: self.names, tensors })
    }

    /// Checks that `store` has exactly this layout.
    pub fn check(&self, store: &ParamStore) -> Result<()> {
        if store.names.len() != self.names.len() {
            bail!(Format, "expected {} parameter tensors, found {}", self.names.len(), store.names.len());
        }
        for (i, name) in self.names.iter().enumerate() {
            if &store.names[i] != name || store.tensors[i].shape() != self.shapes[i].as_slice() {
                bail!(
                    Format,
                    "parameter {i}: expected {name} {:?}, found {} {:?}",
                    self.shapes[i],
                    store.names[i],
                    store.tensors[i].shape()
                );
            }
        }
        Ok(())
    }
}

impl ParamStore {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors) = entries.into_iter().unzip();
        Self { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Adds every tensor to `g`, as tracked leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
        self.tensors.iter().map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) }).collect()
    }

    /// Per-tensor gradients of bound vars, zeros where unreached.
    pub fn collect_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Vec<f64>> {
        vars.iter().zip(&self.tensors).map(|(v, t)| grads.get_or_zeros(*v, t.len())).collect()
    }
}

pub(crate) fn zeros_like(store: &ParamStore) -> Vec<Vec<f64>> {
    store.tensors.iter().map(|t| vec![0.0; t.len()]).collect()
}

pub(crate) fn add_scaled(acc: &mut [Vec<f64>], g: &[Vec<f64>], c: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, t: 0, m: zeros_like(store), v: zeros_like(store) }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t);
        let b2t = 1.0 - self.beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let p = store.tensors[i].data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                p[j] -= self.lr * (m[j] / b1t) / ((v[j] / b2t).sqrt() + self.eps);
            }
        }
    }
}
