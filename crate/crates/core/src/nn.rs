//! Affine layers and parameter bookkeeping shared by both networks.

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Negative slope of every LeakyReLU in both networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// `y = x W + b` with `W` stored `fan_in x fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for both
    /// weights and bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let weight = Tensor::from_vec(fan_in, fan_out, draw(fan_in * fan_out)).expect("weight");
        let bias = Tensor::from_vec(1, fan_out, draw(fan_out)).expect("bias");
        Linear { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LinearVars {
        LinearVars {
            weight: tape.leaf(self.weight.clone(), trainable),
            bias: tape.leaf(self.bias.clone(), trainable),
        }
    }
}

/// A [`Linear`] layer's weight and bias on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.affine(x, self.weight, self.bias)
    }
}

/// Uniform access to a network's parameter tensors in a fixed order.
pub trait Parameters {
    /// Parameter tensors with stable names, in canonical order.
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Tape handles of a network's parameters, in the same order as
/// [`Parameters::named_tensors`].
pub trait BoundParameters {
    fn vars(&self) -> Vec<Var>;

    /// Gradients aligned with the parameter order; zeros where none arrived.
    fn collect_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars().into_iter().map(|v| grads.of(v)).collect()
    }
}

pub(crate) fn linear_names<'a>(prefix: &str, layers: &'a [Linear]) -> Vec<(String, &'a Tensor)> {
    layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            [
                (format!("{prefix}.{i}.weight"), &l.weight),
                (format!("{prefix}.{i}.bias"), &l.bias),
            ]
        })
        .collect()
}

pub(crate) fn linear_vars(layers: &[LinearVars]) -> impl Iterator<Item = Var> + '_ {
    layers.iter().flat_map(|l| [l.weight, l.bias])
}

pub(crate) fn linear_tensors_mut(layers: &mut [Linear]) -> impl Iterator<Item = &mut Tensor> {
    layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
}
