//! Multi-hop amplify-and-forward relay chains modeled as variance-preserving
//! diffusion, collapsed to end-to-end sufficient statistics and decoded with a
//! deterministic DDIM reverse sampler.
//!
//! Module map:
//!
//! - [`signal`]: square QAM constellations, symbol blocks, error metrics.
//! - [`channel`]: hop draws, fixed-gain relays, chain propagation, CSI quantization.
//! - [`diffusion`]: per-hop VP steps, the cumulative collapse, reverse schedules.
//! - [`infotheory`]: MMSE and mutual information of the collapsed channel.
//! - [`poweralloc`]: KKT relay power allocation by bisection on the multiplier.
//! - [`denoise`]: exact-Bayes and learned noise-prediction denoisers.
//! - [`detect`]: DDIM decoding and the maximum-likelihood baseline.
//! - [`harness`]: experiment configuration, sweeps, and result emission.

pub mod channel;
pub mod denoise;
pub mod detect;
pub mod diffusion;
mod error;
pub mod harness;
pub mod infotheory;
pub mod poweralloc;
pub mod rng;
pub mod signal;

pub use error::{Error, Result};

pub use num_complex::Complex64;

pub use channel::{HopConfig, HopRealization, SufficientStats};
pub use denoise::{Denoiser, DenoiserQuery, ExactBayes, MlpDenoiser};
pub use detect::{DetectorConfig, DenoiserChoice};
pub use diffusion::{CollapsedChannel, ReverseSchedule, VpStep};
pub use poweralloc::{AllocationProblem, AllocationResult};
pub use signal::{Constellation, ErrorReport, SymbolBlock};
