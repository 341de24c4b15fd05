use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Dense perceptron with leaky-rectifier activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    activate_last: bool,
}

/// An [`Mlp`] whose parameters are recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    params: Vec<Var>,
    activate_last: bool,
}

impl Mlp {
    /// He-normal weights (gain for the leaky slope), zero biases.
    pub fn init(dims: &[usize], activate_last: bool, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2 && dims.iter().all(|&d| d > 0));
        let gain = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
            weights.push(Tensor::from_fn(&[fan_in, fan_out], |_| normal.sample(rng)));
            biases.push(Tensor::zeros(&[1, fan_out]));
        }
        Mlp {
            weights,
            biases,
            activate_last,
        }
    }

    /// Rebuilds from parameter tensors in `w0, b0, w1, b1, …` order.
    pub fn from_tensors(tensors: Vec<Tensor>, activate_last: bool) -> Result<Self> {
        if tensors.is_empty() || !tensors.len().is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "perceptron needs weight/bias pairs, got {} tensors",
                tensors.len()
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut it = tensors.into_iter();
        while let (Some(w), Some(b)) = (it.next(), it.next()) {
            let ok = matches!((w.shape(), b.shape()), ([_, o], [1, o2]) if o == o2);
            if !ok
                || weights
                    .last()
                    .is_some_and(|p: &Tensor| p.shape()[1] != w.shape()[0])
            {
                return Err(Error::ShapeMismatch {
                    op: "perceptron layer",
                    lhs: w.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Mlp {
            weights,
            biases,
            activate_last,
        })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].shape()[0]];
        d.extend(self.weights.iter().map(|w| w.shape()[1]));
        d
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn activate_last(&self) -> bool {
        self.activate_last
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        self.bind_with(tape, |tape, _, t| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    /// Binds each parameter tensor (in `tensors()` order) through `f`, which
    /// may substitute any variable of the right shape.
    pub fn bind_with(
        &self,
        tape: &mut Tape,
        mut f: impl FnMut(&mut Tape, usize, &Tensor) -> Var,
    ) -> BoundMlp {
        let params = self
            .tensors()
            .into_iter()
            .enumerate()
            .map(|(i, t)| f(tape, i, t))
            .collect();
        BoundMlp {
            params,
            activate_last: self.activate_last,
        }
    }
}

impl BoundMlp {
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// Returns the output of every layer (after activation where applied).
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let layers = self.params.len() / 2;
        let mut outs = Vec::with_capacity(layers);
        let mut h = x;
        for l in 0..layers {
            let z = tape.matmul(h, self.params[2 * l])?;
            let z = tape.add(z, self.params[2 * l + 1])?;
            h = if l + 1 < layers || self.activate_last {
                tape.leaky_relu(z, LEAKY_SLOPE)
            } else {
                z
            };
            outs.push(h);
        }
        Ok(outs)
    }
}
