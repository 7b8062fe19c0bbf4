//! Numeric substrate: tensors, a reverse-mode tape, MLPs, Gaussian
//! reparameterization and Adam.

mod adam;
mod gaussian;
pub mod kernels;
pub mod math;
mod mlp;
mod tape;
mod tensor;

use alloc::vec::Vec;

pub use adam::Adam;
pub use gaussian::{
    gaussian_rsample, gaussian_rsample_with, standard_normal, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{Activation, Mlp};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data of length {len} does not fit shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by an earlier backward pass")]
    GraphConsumed,
}

/// Parameters of a module bound onto a tape, in `parameters()` order.
#[derive(Clone, Debug)]
pub struct Bound(pub Vec<Var>);

/// Anything owning trainable tensors.
pub trait Module {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Records every parameter on the tape; trainable ones are tracked.
    fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.parameters()
                .into_iter()
                .map(|p| tape.leaf(p))
                .collect(),
        )
    }

    /// Records every parameter as an untracked constant (stop-gradient).
    fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.parameters()
                .into_iter()
                .map(|p| {
                    let (r, c) = p.dims2();
                    tape.constant(r, c, p.data().to_vec())
                        .expect("parameter shape is consistent")
                })
                .collect(),
        )
    }

    /// Adds the tape gradients of bound parameters into their `grad` buffers.
    fn pull_grads(&mut self, tape: &Tape, bound: &Bound) {
        for (p, v) in self.parameters_mut().into_iter().zip(&bound.0) {
            if let Some(g) = tape.grad(*v) {
                p.accumulate_grad(g);
            }
        }
    }

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn set_trainable(&mut self, on: bool) {
        for p in self.parameters_mut() {
            p.set_requires_grad(on);
        }
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    /// FNV-1a over every parameter bit pattern.
    fn checksum(&self) -> u64 {
        crate::rng::checksum_f64(self.parameters().into_iter().map(|p| p.data()))
    }

    fn copy_parameters_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.parameters_mut().into_iter().zip(other.parameters()) {
            dst.copy_from(src);
        }
    }
}
