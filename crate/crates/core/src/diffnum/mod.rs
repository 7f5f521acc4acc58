//! Differentiable numerics: tensors, a reverse-mode tape, Adam and seeded sampling.

mod adam;
mod gradcheck;
mod kernels;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{
    check_primitives, grad_check, grad_check_with, primitive_cases, rel_err, GradCheckReport, PrimitiveCase, ScalarFn,
};
pub use rng::{gumbel_from_uniform, Rng};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;


/// Unit-scale Gumbel noise of the given shape.
pub fn sample_gumbel(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gumbel())
}

/// Standard normal noise of the given shape.
pub fn sample_normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

#[cfg(test)]
mod tests;
