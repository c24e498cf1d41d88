//! Learnable parameters and their store.
//!
//! Parameters live outside the tape: each forward pass binds them onto a
//! fresh tape, and `Tape::accumulate_grads` writes the resulting gradients
//! back. The group tag routes each parameter to its learning rate.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Learning-rate group of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Downstream network weights (base rate).
    Network,
    /// Adaptive shifting weights.
    ShiftA,
    /// Adaptive scaling weights.
    ScaleB,
    /// Adaptive gating weights and bias.
    GateC,
}

impl ParamGroup {
    pub fn label(&self) -> &'static str {
        match self {
            ParamGroup::Network => "network",
            ParamGroup::ShiftA => "shift_a",
            ParamGroup::ScaleB => "scale_b",
            ParamGroup::GateC => "gate_c",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "network" => Some(ParamGroup::Network),
            "shift_a" => Some(ParamGroup::ShiftA),
            "scale_b" => Some(ParamGroup::ScaleB),
            "gate_c" => Some(ParamGroup::GateC),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Flat store of all learnable state for one model + normalizer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Parameter {
            name: name.into(),
            group,
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set_value",
                format!(
                    "parameter {} has shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    value.shape()
                ),
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn add_to_grad(&mut self, id: ParamId, delta: &[f64]) {
        let g = self.params[id.0].grad.values_mut();
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in p.grad.values_mut() {
                *g = 0.0;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }
}

/// Weight initialization scheme for network layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightInit {
    /// Uniform on ±sqrt(1/fan_in).
    FanInUniform,
    /// Normal with std sqrt(1/fan_in).
    Normal,
}

impl WeightInit {
    pub fn sample(&self, shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
        let numel: usize = shape.iter().product();
        let scale = (1.0 / fan_in.max(1) as f64).sqrt();
        let values = match self {
            WeightInit::FanInUniform => (0..numel)
                .map(|_| rng.random_range(-scale..scale))
                .collect(),
            WeightInit::Normal => {
                let dist = Normal::new(0.0, scale).expect("valid std");
                (0..numel).map(|_| dist.sample(rng)).collect()
            }
        };
        Tensor::new(shape, values).expect("init values are finite")
    }
}

/// Normal(mean, std) initialization with explicit scale.
pub fn normal_init(shape: Vec<usize>, mean: f64, std: f64, rng: &mut impl Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let dist = Normal::new(mean, std).expect("valid std");
    let values = (0..numel).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, values).expect("init values are finite")
}
