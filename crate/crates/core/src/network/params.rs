use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};

/// A named parameter tensor owned by one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub layer: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Layer names in parameter order, without repeats.
    pub fn layer_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.params {
            if !out.contains(&p.layer) {
                out.push(p.layer.clone());
            }
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    /// FNV-1a over the bit patterns of every parameter whose layer passes
    /// `filter`, in storage order.
    pub fn checksum(&self, filter: impl Fn(&str) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params.iter().filter(|p| filter(&p.layer)) {
            for b in p.name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
            for v in &p.data {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Overwrites values from another store with the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other.get(&p.name).ok_or_else(|| crate::Error::InvalidInput(alloc::format!("missing parameter {}", p.name)))?;
            ensure!(src.shape == p.shape, InvalidInput, "shape mismatch for {}: {:?} vs {:?}", p.name, src.shape, p.shape);
            p.data.copy_from_slice(&src.data);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { values: store.params().iter().map(|p| vec![0.0; p.numel()]).collect() }
    }

    pub fn zero(&mut self) {
        for g in &mut self.values {
            g.fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay,
/// in the `v ← μv + (g + λθ); θ ← θ − ηv` form.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f32, weight_decay: f32) -> Self {
        Self { momentum, weight_decay, velocity: Gradients::zeros_like(store).values }
    }

    /// Updates only parameters with `trainable[i] == true`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f32, trainable: &[bool]) {
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if !trainable[i] {
                continue;
            }
            let v = &mut self.velocity[i];
            for ((w, g), vel) in p.data.iter_mut().zip(&grads.values[i]).zip(v.iter_mut()) {
                let d = g + self.weight_decay * *w;
                *vel = self.momentum * *vel + d;
                *w -= lr * *vel;
            }
        }
    }
}
