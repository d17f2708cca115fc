//! SGD with momentum and Adam, both with decoupled-from-nothing classic L2:
//! the weight-decay term is added to the gradient before any state update.

use super::network::Param;
use super::{NnError, Result};
use crate::autodiff::Tensor;
use crate::real::Real;

/// Named gradients, in whatever order the backward pass produced them.
pub struct GradMap<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> GradMap<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn from_pairs(entries: Vec<(String, Tensor<T>)>) -> Self {
        Self { entries }
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor<T>) {
        self.entries.push((name.into(), grad));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Elementwise sum with another gradient map over matching names.
    pub fn add(&mut self, other: &GradMap<T>) {
        for (name, g) in &other.entries {
            if let Some((_, mine)) = self.entries.iter_mut().find(|(n, _)| n == name) {
                let summed: Vec<T> = mine
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&a, &b)| a + b)
                    .collect();
                *mine = Tensor::from_parts(mine.shape().to_vec(), summed);
            } else {
                self.entries.push((name.clone(), g.clone()));
            }
        }
    }
}

impl<T: Real> Default for GradMap<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimSpec {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimSpec {
    pub fn adam_default() -> Self {
        OptimSpec::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Slot<T> {
    name: String,
    t: u64,
    m: Vec<T>,
    v: Vec<T>,
}

pub struct Optimizer<T: Real> {
    spec: OptimSpec,
    lr: f64,
    weight_decay: f64,
    slots: Vec<Slot<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(spec: OptimSpec, lr: f64, weight_decay: f64) -> Self {
        Self {
            spec,
            lr,
            weight_decay,
            slots: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    fn slot(&mut self, name: &str, n: usize, second: bool) -> &mut Slot<T> {
        if let Some(i) = self.slots.iter().position(|s| s.name == name) {
            return &mut self.slots[i];
        }
        self.slots.push(Slot {
            name: name.to_string(),
            t: 0,
            m: vec![T::zero(); n],
            v: if second { vec![T::zero(); n] } else { Vec::new() },
        });
        self.slots.last_mut().unwrap()
    }

    /// Applies one update to every trainable parameter, in store order.
    /// Frozen parameters are untouched even if a gradient is supplied.
    pub fn step(&mut self, params: &mut [Param<T>], grads: &GradMap<T>) -> Result<()> {
        let lr = T::from_f64(self.lr);
        let wd = T::from_f64(self.weight_decay);
        for p in params.iter_mut().filter(|p| p.trainable) {
            let g = grads
                .get(&p.name)
                .ok_or_else(|| NnError::MissingGrad(p.name.clone()))?;
            if g.shape() != p.value.shape() {
                return Err(NnError::ParamShape {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            let gdata = g.data().to_vec();
            match self.spec {
                OptimSpec::Sgd { momentum } => {
                    let mom = T::from_f64(momentum);
                    let slot = self.slot(&p.name, gdata.len(), false);
                    let theta = p.value.make_mut();
                    for i in 0..gdata.len() {
                        let gw = gdata[i] + wd * theta[i];
                        slot.m[i] = mom * slot.m[i] + gw;
                        theta[i] = theta[i] - lr * slot.m[i];
                    }
                }
                OptimSpec::Adam { beta1, beta2, eps } => {
                    let (b1, b2, ep) = (T::from_f64(beta1), T::from_f64(beta2), T::from_f64(eps));
                    let slot = self.slot(&p.name, gdata.len(), true);
                    slot.t += 1;
                    let c1 = T::one() - T::from_f64(beta1.powi(slot.t as i32));
                    let c2 = T::one() - T::from_f64(beta2.powi(slot.t as i32));
                    let theta = p.value.make_mut();
                    for i in 0..gdata.len() {
                        let gw = gdata[i] + wd * theta[i];
                        slot.m[i] = b1 * slot.m[i] + (T::one() - b1) * gw;
                        slot.v[i] = b2 * slot.v[i] + (T::one() - b2) * gw * gw;
                        let mhat = slot.m[i] / c1;
                        let vhat = slot.v[i] / c2;
                        theta[i] = theta[i] - lr * mhat / (vhat.sqrt() + ep);
                    }
                }
            }
            if let Some(i) = p.value.data().iter().position(|x| !x.is_finite()) {
                return Err(NnError::Tensor(
                    crate::autodiff::TensorError::NonFinite {
                        op: "optimizer step",
                        index: i,
                    },
                ));
            }
        }
        Ok(())
    }
}
