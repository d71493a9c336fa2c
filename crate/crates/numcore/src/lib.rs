//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Maps are laid out `[H, W, C]` row-major; convolution kernels are
//! `[k, k, Cin, Cout]`. Every op records its backward rule on a [`Tape`];
//! [`Tape::backward`] sweeps the tape once in reverse.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use error::{NumError, Result};
pub use ops::basic::{broadcast_mask, sigmoid};
pub use ops::conv::conv_out_size;
pub use ops::gru::ConvGruParams;
pub use ops::loss::smooth_l1_value;
pub use params::{kaiming_conv, uniform, ParamStore};
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;
