use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// A named learnable tensor and its most recent gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
}

/// Ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

/// Parameters recorded on a tape, in the order they were bound.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    slots: Vec<(usize, Var)>,
}

impl Bindings {
    pub fn var(&self, param: usize) -> Option<Var> {
        self.slots.iter().find(|(p, _)| *p == param).map(|&(_, v)| v)
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
        });
        self.params.len() - 1
    }

    /// Glorot-uniform weight in `[-sqrt(6/(fan_in+fan_out)), +...]`.
    pub fn push_glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> usize {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.push(name, Tensor::new(fan_in, fan_out, data).expect("sized above"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records parameter `idx` on the tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, idx: usize, trainable: bool, bindings: &mut Bindings) -> Var {
        let value = self.params[idx].value.clone();
        let var = if trainable {
            tape.variable(value)
        } else {
            tape.constant(value)
        };
        bindings.slots.push((idx, var));
        var
    }

    /// Copies leaf gradients from the tape. Trainable parameters that the
    /// loss never reached get an explicit zero gradient; frozen ones are
    /// left without a gradient.
    pub fn collect_grads(&mut self, tape: &Tape, bindings: &Bindings) {
        for &(idx, var) in &bindings.slots {
            if !tape.requires_grad(var) {
                continue;
            }
            let p = &mut self.params[idx];
            p.grad = Some(match tape.grad(var) {
                Some(g) => g.to_vec(),
                None => vec![0.0; p.value.len()],
            });
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.params.iter().find(|p| !p.value.is_finite()) {
            Some(p) => Err(Error::Domain(format!("parameter {} is not finite", p.name))),
            None => Ok(()),
        }
    }
}
