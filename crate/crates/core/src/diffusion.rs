//! AF hops as variance-preserving diffusion steps.
//!
//! A hop with input SNR `s` is the VP step `x ← α·x + √(1-α²)·z` with
//! `α² = s/(1+s)`. A chain of such steps collapses to one step with amplitude
//! `ᾱ = Πα`, which is what the receiver's reverse schedule is matched to.
//!
//! Reverse schedules are stored in the variance domain: `ᾱ_t` is the signal
//! *power* fraction at step `t`, so `x_t = √ᾱ_t·x_0 + √(1-ᾱ_t)·ε`.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::SufficientStats;
use crate::rng::complex_normal;
use crate::signal::SymbolBlock;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpStep {
    pub alpha: f64,
    pub beta: f64,
}

impl VpStep {
    pub fn snr(&self) -> f64 {
        snr_from_alpha(self.alpha)
    }
}

/// `α² = s/(1+s)`, `β = 1/(1+s)`.
pub fn alpha_from_snr(snr_in: f64) -> Result<VpStep> {
    if !(snr_in >= 0.0) || snr_in.is_nan() {
        return Err(Error::InvalidArgument(format!("input SNR must be >= 0, got {snr_in}")));
    }
    if snr_in.is_infinite() {
        return Ok(VpStep { alpha: 1.0, beta: 0.0 });
    }
    let beta = 1.0 / (1.0 + snr_in);
    Ok(VpStep {
        alpha: (snr_in / (1.0 + snr_in)).sqrt(),
        beta,
    })
}

pub fn snr_from_alpha(alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    a2 / (1.0 - a2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapsedChannel {
    /// Cumulative amplitude `Πα_t`.
    pub alpha_bar: f64,
    /// Effective SNR `ᾱ²/(1-ᾱ²)`.
    pub gamma: f64,
}

impl CollapsedChannel {
    pub fn from_alpha_bar(alpha_bar: f64) -> Self {
        Self {
            alpha_bar,
            gamma: snr_from_alpha(alpha_bar),
        }
    }
}

/// Collapses a sequence of VP steps to a single one. The product is taken in
/// sorted order so any permutation of `steps` yields bit-identical output.
pub fn collapse(steps: &[VpStep]) -> Result<CollapsedChannel> {
    if steps.is_empty() {
        return Err(Error::InvalidArgument("cannot collapse an empty schedule".into()));
    }
    let mut alphas: Vec<f64> = steps.iter().map(|s| s.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    Ok(CollapsedChannel::from_alpha_bar(alphas.iter().product()))
}

/// Runs the VP recursion step by step. Returns the final state.
pub fn forward_sequential<R: Rng + ?Sized>(x0: &[Complex64], steps: &[VpStep], rng: &mut R) -> Vec<Complex64> {
    let mut x = x0.to_vec();
    for step in steps {
        let noise = step.beta.sqrt();
        for xi in x.iter_mut() {
            *xi = *xi * step.alpha + complex_normal(rng) * noise;
        }
    }
    x
}

/// Corrupted block and the noise that produced it.
#[derive(Debug, Clone)]
pub struct ForwardSample {
    pub block: SymbolBlock,
    pub noise: Vec<Complex64>,
}

/// Single jump to variance-domain level `abar`:
/// `x = √abar·x0 + √(1-abar)·z`.
pub fn forward_jump<R: Rng + ?Sized>(x0: &SymbolBlock, abar: f64, rng: &mut R) -> Result<ForwardSample> {
    if !(abar > 0.0 && abar <= 1.0) {
        return Err(Error::InvalidArgument(format!("abar must lie in (0, 1], got {abar}")));
    }
    let (a, s) = (abar.sqrt(), (1.0 - abar).sqrt());
    let noise: Vec<Complex64> = (0..x0.len()).map(|_| complex_normal(rng)).collect();
    let samples = x0.samples.iter().zip(&noise).map(|(x, z)| x * a + z * s).collect();
    Ok(ForwardSample {
        block: x0.with_samples(samples),
        noise,
    })
}

/// Reverse schedule matched to the end-to-end SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseSchedule {
    /// `ᾱ_0 = 1 ≥ ᾱ_1 ≥ … ≥ ᾱ_T`, variance domain.
    pub abar: Vec<f64>,
    /// `σ_t = √(1-ᾱ_t)`.
    pub sigma: Vec<f64>,
    /// `λ_t = ln(ᾱ_t/(1-ᾱ_t))`; `+∞` at `t = 0`.
    pub lambda: Vec<f64>,
}

impl ReverseSchedule {
    pub fn steps(&self) -> usize {
        self.abar.len() - 1
    }

    pub fn abar_end(&self) -> f64 {
        self.abar[self.steps()]
    }
}

/// Signal power fraction of the collapsed channel: `γ/(1+γ)`.
pub fn abar_from_snr(snr: f64) -> f64 {
    if snr.is_infinite() {
        1.0
    } else {
        snr / (1.0 + snr)
    }
}

pub fn log_snr(abar: f64) -> f64 {
    (abar / (1.0 - abar)).ln()
}

/// Geometric schedule `ᾱ_t = ᾱ_T^{t/T}` with `ᾱ_T = snr_eq/(1+snr_eq)`.
pub fn schedule_from_stats(stats: &SufficientStats, steps: usize) -> Result<ReverseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("reverse schedule needs at least one step".into()));
    }
    if !(stats.v > 0.0) {
        return Err(Error::InvalidArgument("effective noise variance must be positive".into()));
    }
    let end = abar_from_snr(stats.snr_eq());
    let mut abar: Vec<f64> = (0..=steps)
        .map(|t| end.powf(t as f64 / steps as f64))
        .collect();
    abar[0] = 1.0;
    abar[steps] = end;
    let sigma = abar.iter().map(|a| (1.0 - a).sqrt()).collect();
    let lambda = abar.iter().map(|&a| log_snr(a)).collect();
    Ok(ReverseSchedule { abar, sigma, lambda })
}

/// Equalizes by `μ` and rescales by `√ᾱ_T` so the state sits on the step-T
/// marginal `√ᾱ_T·x_0 + √(1-ᾱ_T)·ε`.
pub fn init_reverse_state(x_h: &SymbolBlock, stats: &SufficientStats) -> Result<SymbolBlock> {
    if stats.mu.norm_sqr() == 0.0 {
        return Err(Error::ZeroGain);
    }
    let scale = abar_from_snr(stats.snr_eq()).sqrt() / stats.mu;
    Ok(x_h.with_samples(x_h.samples.iter().map(|y| y * scale).collect()))
}
