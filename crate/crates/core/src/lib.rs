//! Convex-relaxation-then-quantization (CRQ) one-bit precoding for the
//! massive MIMO downlink.
//!
//! * [`scalar`]: the box denoiser and its Gaussian expectations.
//! * [`state_evolution`]: fixed-point system, asymptotic risk, `a*`, and the
//!   predicted symbol error probability.
//! * [`amp`]: AMP iteration for the inner box-constrained ridge problem.
//! * [`precoder`]: finite-size CRQ solver, SQUID preset, quantization.
//! * [`simulation`]: Monte Carlo validation of the asymptotic predictions.
//! * [`cli`]: configuration, run records and the subcommands behind `crq`.

pub mod amp;
pub mod cli;
pub mod error;
pub mod precoder;
pub mod scalar;
pub mod simulation;
pub mod state_evolution;

pub use error::{CrqError, Result};
pub use state_evolution::{AsymptoticCharacterization, FixedPoint, ModelParams};
