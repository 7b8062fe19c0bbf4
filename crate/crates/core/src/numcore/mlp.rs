use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels;
use super::math;
use super::{Bound, Module, NumError, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    fn apply_inplace(self, x: &mut [f64]) {
        match self {
            Activation::Linear => {}
            Activation::Relu => kernels::relu_inplace(x),
            Activation::Tanh => kernels::tanh_inplace(x),
        }
    }
}

/// Fully connected network. `weights[i]` has shape
/// `[layer_sizes[i], layer_sizes[i + 1]]` and inputs are row batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(layer_sizes.len() >= 2, "an MLP needs at least one layer");
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let bound = 1.0 / math::sqrt(w[0].max(1) as f64);
            let wd = (0..w[0] * w[1])
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let bd = (0..w[1])
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            weights.push(
                Tensor::matrix(w[0], w[1], wd)
                    .expect("sizes agree")
                    .with_grad(),
            );
            biases.push(
                Tensor::matrix(1, w[1], bd)
                    .expect("sizes agree")
                    .with_grad(),
            );
        }
        Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden,
            output,
        }
    }

    pub fn zeros(layer_sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(layer_sizes.len() >= 2, "an MLP needs at least one layer");
        let weights = layer_sizes
            .windows(2)
            .map(|w| Tensor::zeros(w[0], w[1]).with_grad())
            .collect();
        let biases = layer_sizes
            .windows(2)
            .map(|w| Tensor::zeros(1, w[1]).with_grad())
            .collect();
        Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden,
            output,
        }
    }

    /// Re-draws the last layer uniformly in `±scale`.
    pub fn init_last_layer<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        let last = self.weights.len() - 1;
        for v in self.weights[last].data_mut() {
            *v = rng.random_range(-scale..=scale);
        }
        for v in self.biases[last].data_mut() {
            *v = rng.random_range(-scale..=scale);
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty")
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Tensor] {
        &mut self.biases
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    fn check_input(&self, rows: usize, cols: usize) -> Result<(), NumError> {
        if cols != self.layer_sizes[0] {
            return Err(NumError::Shape {
                op: "mlp_forward",
                left: vec![rows, cols],
                right: vec![self.layer_sizes[0], self.layer_sizes[1]],
            });
        }
        Ok(())
    }

    /// Graph-free evaluation. Uses the same kernels as [`Mlp::apply`], so
    /// values agree bit for bit.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NumError> {
        let (rows, cols) = input.dims2();
        self.check_input(rows, cols)?;
        let mut x = input.data().to_vec();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (k, n) = w.dims2();
            let mut out = vec![0.0; rows * n];
            kernels::gemm(rows, k, n, &x, false, w.data(), false, &mut out, false);
            kernels::add_bias_rows(&mut out, b.data());
            let act = if i == last { self.output } else { self.hidden };
            act.apply_inplace(&mut out);
            x = out;
        }
        Tensor::matrix(rows, self.output_dim(), x)
    }

    /// Records the forward pass of `x` using parameters already bound on the
    /// tape (`params` in [`Module::parameters`] order).
    pub fn apply(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var, NumError> {
        let (rows, cols) = tape.shape(x);
        self.check_input(rows, cols)?;
        debug_assert_eq!(params.len(), 2 * self.weights.len());
        let last = self.weights.len() - 1;
        let mut h = x;
        for i in 0..self.weights.len() {
            let z = tape.matmul(h, params[2 * i])?;
            let z = tape.add_bias(z, params[2 * i + 1])?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply_tape(tape, z);
        }
        Ok(h)
    }

    /// Binds the parameters and records the forward pass in one call.
    pub fn forward_on(&self, tape: &mut Tape, x: Var) -> Result<(Var, Bound), NumError> {
        let bound = self.bind(tape);
        let y = self.apply(tape, &bound.0, x)?;
        Ok((y, bound))
    }
}

impl Module for Mlp {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut v = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.push(w);
            v.push(b);
        }
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            v.push(w);
            v.push(b);
        }
        v
    }
}
