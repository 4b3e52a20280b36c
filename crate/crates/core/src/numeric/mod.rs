//! Dense `f64` tensor arithmetic with hand-written backward passes, the Adam
//! optimizer, global-norm clipping and a finite-difference gradient checker.

pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod optim;

pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use matrix::{gemm, Matrix};
pub use ops::{
    activate, activation_backward, affine, affine_backward, affine_backward_accumulate, masked_cross_entropy,
    max_over_time, max_over_time_backward, row_softmax, row_softmax_backward, sigmoid, weighted_cross_entropy,
    xavier_init, Activation, AffineGrads, CrossEntropy, Pooled,
};
pub use optim::{clip_global_norm, clip_model_grads, global_norm, Adam, HasParameters, Parameter};
