//! Numerical core: filter banks, feature maps, FFT-domain convolution, proximal
//! operators and the spectral solve of the quadratic ADMM subproblem.

mod bank;
mod fft;
mod operator;
mod prox;

pub use bank::{dirac, FeatureMaps, FilterBank};
pub use fft::Fft2;
pub use operator::{
    embed, gradient_energy, objective, synthesize, CscOperator, SpectralSolution, SINGULAR_EPS,
};
pub(crate) use operator::objective_with_synthesis;
pub use prox::{masked_data_scalar, prox_l1, prox_masked_data, soft_threshold};
