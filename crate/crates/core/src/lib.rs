//! Cyclic-prefix-free frequency-domain equalization (FDE) for massive MIMO
//! uplinks with coarsely quantized receivers.
//!
//! The crate is organised bottom-up:
//!
//! * [`channel`] synthesizes frequency-selective block-fading channels and
//!   their block-Toeplitz, block-circulant and per-subband representations.
//! * [`quant`] designs MSE-optimal uniform quantizers for Gaussian inputs and
//!   the Bussgang linearization of the quantized receiver.
//! * [`fde`] holds the per-subband MMSE filter bank, the FFT block equalizer,
//!   overlap-save streaming and a dense time-domain Wiener filter oracle.
//! * [`blockopt`] is the closed-form complexity model and the search for the
//!   block length minimizing complex multiplications per estimated symbol.
//! * [`simulate`] is the Monte-Carlo engine producing MSE/BER curves.
//! * [`validation`] bundles the model-consistency properties run by the CLI.

pub mod blockopt;
pub mod channel;
mod error;
pub mod fde;
pub mod numfmt;
pub mod quant;
pub mod simulate;
pub mod validation;

pub use error::{Error, Result};

/// Complex sample type used throughout the crate.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;

/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;
