//! Reverse-mode differentiation kernel over dense f64 arrays.
//!
//! Everything the attack pipeline differentiates goes through here: a
//! [`Tensor`] is plain data, a [`Tape`] records primitive operations on
//! [`Var`] handles, and [`Tape::backward`] runs one reverse sweep.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{central_diff_grad, finite_diff_check, max_rel_error};
pub use kernels::{gauss_kernel_2d, SQRT_DELTA};
pub use tape::{cosine_similarity, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) mod test_rng {
    use super::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn uniform_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }
}
