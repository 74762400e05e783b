//! The H-hop fixed-gain amplify-and-forward chain.
//!
//! Each hop receives `y = h·x + w` with `w ~ CN(0, σ²)` and forwards `g·y`. The
//! gain `g` is set from second-order statistics so the relay meets its power
//! cap with equality, which keeps the end-to-end map linear in the source and
//! lets the whole chain collapse to a single gain `μ` and noise variance `v`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::complex_normal;
use crate::signal::SymbolBlock;
use crate::{Error, Result};

/// Lower bound on the effective noise variance; keeps `|μ|²/v` finite for
/// noiseless chains.
pub const V_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Fading {
    UnitGain,
    Rician { k_db: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum Distance {
    Fixed(f64),
    Uniform { min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopConfig {
    pub fading: Fading,
    pub distance_m: Distance,
    pub path_loss_exponent: f64,
    pub ref_loss_db: f64,
    pub noise_variance: f64,
    pub power_cap: f64,
}

impl HopConfig {
    /// A lossless unit-gain hop with the given noise variance and a unit cap.
    pub fn awgn(noise_variance: f64) -> Self {
        Self {
            fading: Fading::UnitGain,
            distance_m: Distance::Fixed(1.0),
            path_loss_exponent: 0.0,
            ref_loss_db: 0.0,
            noise_variance,
            power_cap: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("hop config: {what}")));
        match self.distance_m {
            Distance::Fixed(d) if !(d.is_finite() && d > 0.0) => return bad("distance must be positive"),
            Distance::Uniform { min, max } if !(min.is_finite() && max.is_finite() && min > 0.0 && min <= max) => {
                return bad("distance range must satisfy 0 < min <= max")
            }
            _ => {}
        }
        if let Fading::Rician { k_db } = self.fading {
            if !k_db.is_finite() {
                return bad("K factor must be finite");
            }
        }
        if !(self.path_loss_exponent.is_finite() && self.path_loss_exponent >= 0.0) {
            return bad("path-loss exponent must be finite and >= 0");
        }
        if !self.ref_loss_db.is_finite() {
            return bad("reference loss must be finite");
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return bad("noise variance must be finite and >= 0");
        }
        if !(self.power_cap.is_finite() && self.power_cap > 0.0) {
            return bad("power cap must be finite and > 0");
        }
        Ok(())
    }

    /// Linear power gain `10^(-L/10) · d^(-n)` at distance `d`.
    pub fn path_gain(&self, d: f64) -> f64 {
        db_to_linear(-self.ref_loss_db) * d.powf(-self.path_loss_exponent)
    }

    /// `E|h|²` over the distance distribution. Rician fades have unit power.
    pub fn mean_channel_power(&self) -> f64 {
        match self.distance_m {
            Distance::Fixed(d) => self.path_gain(d),
            Distance::Uniform { min, max } if max - min < f64::EPSILON * max => self.path_gain(min),
            Distance::Uniform { min, max } => {
                let n = self.path_loss_exponent;
                let integral = if (n - 1.0).abs() < 1e-12 {
                    (max / min).ln()
                } else {
                    (max.powf(1.0 - n) - min.powf(1.0 - n)) / (1.0 - n)
                };
                db_to_linear(-self.ref_loss_db) * integral / (max - min)
            }
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Draws one block-fading channel coefficient, path loss included.
pub fn draw_hop<R: Rng + ?Sized>(config: &HopConfig, rng: &mut R) -> Complex64 {
    let d = match config.distance_m {
        Distance::Fixed(d) => d,
        Distance::Uniform { min, max } if min < max => rng.random_range(min..=max),
        Distance::Uniform { min, .. } => min,
    };
    let amplitude = config.path_gain(d).sqrt();
    let fade = match config.fading {
        Fading::UnitGain => Complex64::new(1.0, 0.0),
        Fading::Rician { k_db } => {
            let k = db_to_linear(k_db);
            let los = (k / (k + 1.0)).sqrt();
            let scatter = (1.0 / (k + 1.0)).sqrt();
            Complex64::new(los, 0.0) + complex_normal(rng) * scatter
        }
    };
    fade * amplitude
}

/// Fixed gain meeting the cap with equality: `g²(|h|²·P_in + σ²) = P_cap`.
pub fn relay_gain(h: Complex64, input_power: f64, noise_variance: f64, power_cap: f64) -> f64 {
    (power_cap / (h.norm_sqr() * input_power + noise_variance)).sqrt()
}

/// What one hop actually drew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopRealization {
    pub h: Complex64,
    pub g: f64,
    pub noise_variance: f64,
    pub input_power: f64,
    pub snr_in: f64,
}

impl HopRealization {
    pub fn new(h: Complex64, g: f64, noise_variance: f64, input_power: f64) -> Self {
        Self {
            h,
            g,
            noise_variance,
            input_power,
            snr_in: h.norm_sqr() * input_power / noise_variance,
        }
    }
}

/// End-to-end gain and effective noise variance: `X_H = μ·X_0 + N`,
/// `N ~ CN(0, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub mu: Complex64,
    pub v: f64,
}

impl SufficientStats {
    pub const IDENTITY: SufficientStats = SufficientStats {
        mu: Complex64::new(1.0, 0.0),
        v: 0.0,
    };

    /// Effective SNR for unit source power.
    pub fn snr_eq(&self) -> f64 {
        self.snr_eq_with_power(1.0)
    }

    pub fn snr_eq_with_power(&self, source_power: f64) -> f64 {
        self.mu.norm_sqr() * source_power / self.v.max(V_FLOOR)
    }

    /// Appends one hop: `μ ← g·h·μ`, `v ← |g·h|²·v + g²·σ²`.
    pub fn extend(&self, hop: &HopRealization) -> Self {
        let gh = hop.h * hop.g;
        Self {
            mu: gh * self.mu,
            v: gh.norm_sqr() * self.v + hop.g * hop.g * hop.noise_variance,
        }
    }

    pub fn floored(mut self) -> Self {
        self.v = self.v.max(V_FLOOR);
        self
    }
}

/// Output of [`propagate_chain`].
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub block: SymbolBlock,
    pub stats: SufficientStats,
    pub hops: Vec<HopRealization>,
}

/// Draws the per-hop channels and gains without touching any signal.
pub fn realize_chain<R: Rng + ?Sized>(hops: &[HopConfig], source_power: f64, rng: &mut R) -> Result<Vec<HopRealization>> {
    if hops.is_empty() {
        return Err(Error::InvalidArgument("relay chain has no hops".into()));
    }
    let mut input_power = source_power;
    let mut out = Vec::with_capacity(hops.len());
    for cfg in hops {
        cfg.validate()?;
        let h = draw_hop(cfg, rng);
        let g = relay_gain(h, input_power, cfg.noise_variance, cfg.power_cap);
        out.push(HopRealization::new(h, g, cfg.noise_variance, input_power));
        input_power = cfg.power_cap;
    }
    Ok(out)
}

/// Exact `(μ, v)` of a realized chain.
pub fn chain_stats(hops: &[HopRealization]) -> SufficientStats {
    hops.iter()
        .fold(SufficientStats::IDENTITY, |s, h| s.extend(h))
        .floored()
}

/// Passes `samples` through realized hops in place.
pub fn apply_chain<R: Rng + ?Sized>(samples: &mut [Complex64], hops: &[HopRealization], rng: &mut R) {
    for hop in hops {
        let sigma = hop.noise_variance.sqrt();
        for x in samples.iter_mut() {
            let y = hop.h * *x + complex_normal(rng) * sigma;
            *x = y * hop.g;
        }
    }
}

/// Propagates a unit-power block through the chain.
pub fn propagate_chain<R: Rng + ?Sized>(block: &SymbolBlock, hops: &[HopConfig], rng: &mut R) -> Result<ChainOutput> {
    propagate_chain_with_power(block, hops, 1.0, rng)
}

pub fn propagate_chain_with_power<R: Rng + ?Sized>(
    block: &SymbolBlock,
    hops: &[HopConfig],
    source_power: f64,
    rng: &mut R,
) -> Result<ChainOutput> {
    let realized = realize_chain(hops, source_power, rng)?;
    let mut samples = block.samples.clone();
    apply_chain(&mut samples, &realized, rng);
    Ok(ChainOutput {
        block: block.with_samples(samples),
        stats: chain_stats(&realized),
        hops: realized,
    })
}

/// Whether the SNR axis names the destination SNR or each hop's input SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrAxis {
    #[default]
    EndToEnd,
    PerHop,
}

/// Per-hop input SNR giving end-to-end `target` when split equally over `hops`
/// hops. From `ᾱ² = Π s/(1+s)` and `γ = ᾱ²/(1-ᾱ²)`.
pub fn equal_split_hop_snr(target: f64, hops: usize) -> f64 {
    let abar2 = target / (1.0 + target);
    let a2 = abar2.powf(1.0 / hops as f64);
    a2 / (1.0 - a2)
}

/// Sets each hop's noise variance so its mean input SNR (averaged over the
/// distance and fading distribution) hits the per-hop target implied by
/// `snr`. With deterministic unit-gain hops the realized destination SNR equals
/// the target exactly.
pub fn calibrate_noise(hops: &mut [HopConfig], snr: f64, axis: SnrAxis, source_power: f64) -> Result<()> {
    if hops.is_empty() {
        return Err(Error::InvalidArgument("relay chain has no hops".into()));
    }
    if !(snr.is_finite() && snr > 0.0) {
        return Err(Error::Config(format!("target SNR {snr} is not reachable")));
    }
    let per_hop = match axis {
        SnrAxis::EndToEnd => equal_split_hop_snr(snr, hops.len()),
        SnrAxis::PerHop => snr,
    };
    if !(per_hop.is_finite() && per_hop > 0.0) {
        return Err(Error::Config(format!(
            "per-hop SNR {per_hop} needed for target {snr} is not representable"
        )));
    }
    let mut input_power = source_power;
    for hop in hops.iter_mut() {
        hop.noise_variance = hop.mean_channel_power() * input_power / per_hop;
        input_power = hop.power_cap;
    }
    Ok(())
}

/// Uniform scalar quantization of the three signaled reals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub bits_re: u32,
    pub bits_im: u32,
    pub bits_v: u32,
    /// Clamp range for each component of `μ`.
    pub mu_range: (f64, f64),
    /// Clamp range of `log10 v`.
    pub log10_v_range: (f64, f64),
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            bits_re: 32,
            bits_im: 32,
            bits_v: 16,
            mu_range: (-1.5, 1.5),
            log10_v_range: (-12.0, 2.0),
        }
    }
}

impl QuantizerConfig {
    pub fn uniform(bits: u32) -> Self {
        Self {
            bits_re: bits,
            bits_im: bits,
            bits_v: bits,
            ..Self::default()
        }
    }

    /// `B_CSI`, the signaling cost per block in bits.
    pub fn total_bits(&self) -> u32 {
        self.bits_re + self.bits_im + self.bits_v
    }

    pub fn validate(&self) -> Result<()> {
        for b in [self.bits_re, self.bits_im, self.bits_v] {
            if !(2..=48).contains(&b) {
                return Err(Error::Config(format!("quantizer width {b} outside 2..=48 bits")));
            }
        }
        for (lo, hi) in [self.mu_range, self.log10_v_range] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("quantizer range ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }
}

/// Nearest of `2^bits` uniform levels spanning `[lo, hi]`, after clamping.
pub fn quantize_scalar(x: f64, lo: f64, hi: f64, bits: u32) -> f64 {
    let levels = ((1u64 << bits) - 1) as f64;
    let step = (hi - lo) / levels;
    let k = ((x.clamp(lo, hi) - lo) / step).round();
    (lo + k * step).clamp(lo, hi)
}

pub fn quantize_stats(stats: &SufficientStats, q: &QuantizerConfig) -> Result<SufficientStats> {
    q.validate()?;
    let (lo, hi) = q.mu_range;
    let re = quantize_scalar(stats.mu.re, lo, hi, q.bits_re);
    let im = quantize_scalar(stats.mu.im, lo, hi, q.bits_im);
    let (vlo, vhi) = q.log10_v_range;
    let log_v = quantize_scalar(stats.v.max(V_FLOOR).log10(), vlo, vhi, q.bits_v);
    Ok(SufficientStats {
        mu: Complex64::new(re, im),
        v: 10f64.powf(log_v),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::signal::{draw_block, Constellation};

    #[test]
    fn lossless_unit_hop() {
        let h = draw_hop(&HopConfig::awgn(1.0), &mut seeded(0));
        assert_eq!(h, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn reference_path_loss() {
        let cfg = HopConfig {
            ref_loss_db: 10.0,
            path_loss_exponent: 2.0,
            ..HopConfig::awgn(1.0)
        };
        assert!((cfg.path_gain(1.0) - 0.1).abs() < 1e-15);
        assert!((cfg.path_gain(2.0) - 0.025).abs() < 1e-15);
        let h = draw_hop(&cfg, &mut seeded(0));
        assert!((h.norm_sqr() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mean_channel_power_matches_integral() {
        let cfg = HopConfig {
            ref_loss_db: 10.0,
            path_loss_exponent: 2.0,
            distance_m: Distance::Uniform { min: 1.0, max: 2.0 },
            ..HopConfig::awgn(1.0)
        };
        // 0.1 · ∫₁² d⁻² dd = 0.1 · 0.5
        assert!((cfg.mean_channel_power() - 0.05).abs() < 1e-15);
        let mut rng = seeded(11);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| draw_hop(&cfg, &mut rng).norm_sqr()).sum::<f64>() / n as f64;
        assert!((mean - 0.05).abs() < 5e-4, "mean = {mean}");
    }

    #[test]
    fn rician_fade_unit_power() {
        let cfg = HopConfig {
            fading: Fading::Rician { k_db: 15.0 },
            ..HopConfig::awgn(1.0)
        };
        assert!((db_to_linear(15.0) - 31.622_776_601_683_793).abs() < 1e-12);
        let mut rng = seeded(12);
        let n = 200_000;
        let samples: Vec<f64> = (0..n).map(|_| draw_hop(&cfg, &mut rng).norm_sqr()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se, "E|f|² = {mean} ± {se}");
    }

    #[test]
    fn gain_meets_cap() {
        assert!((relay_gain(Complex64::new(1.0, 0.0), 1.0, 1.0, 2.0) - 1.0).abs() < 1e-15);
        let g = relay_gain(Complex64::new(0.0, 2.0), 1.0, 1e-15, 3.0);
        assert!((g - 3f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_chain_rejected() {
        let c = Constellation::square_qam(4).unwrap();
        let b = draw_block(&c, 2, &mut seeded(0)).unwrap();
        assert!(propagate_chain(&b, &[], &mut seeded(0)).is_err());
    }

    #[test]
    fn noiseless_identity_hop() {
        let c = Constellation::square_qam(16).unwrap();
        let b = draw_block(&c, 4, &mut seeded(0)).unwrap();
        let out = propagate_chain(&b, &[HopConfig::awgn(0.0)], &mut seeded(1)).unwrap();
        assert_eq!(out.block.samples, b.samples);
        assert_eq!(out.stats.mu, Complex64::new(1.0, 0.0));
        assert_eq!(out.stats.v, V_FLOOR);
        assert!(out.stats.snr_eq().is_finite());
    }

    #[test]
    fn snr_in_recorded_per_hop() {
        let hops = vec![
            HopConfig {
                fading: Fading::Rician { k_db: 15.0 },
                distance_m: Distance::Uniform { min: 1.0, max: 2.0 },
                path_loss_exponent: 2.0,
                ref_loss_db: 10.0,
                noise_variance: 0.01,
                power_cap: 1.0,
            };
            5
        ];
        let r = realize_chain(&hops, 1.0, &mut seeded(3)).unwrap();
        for hop in &r {
            assert_eq!(hop.snr_in, hop.h.norm_sqr() * hop.input_power / hop.noise_variance);
        }
    }

    #[test]
    fn two_hop_stats_match_closed_form_and_samples() {
        let g = std::f64::consts::FRAC_1_SQRT_2;
        let hops = [HopRealization::new(Complex64::new(1.0, 0.0), g, 1.0, 1.0); 2];
        let s = chain_stats(&hops);
        assert!((s.mu - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        // v = (g·1)²·g²·1 + g²·1 = 1/4 + 1/2
        assert!((s.v - 0.75).abs() < 1e-15);

        // sample covariance of 10⁵ propagations of a zero input
        let n = 100_000;
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        apply_chain(&mut x, &hops, &mut seeded(9));
        let var = x.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        // Var of |z|² for CN(0, v) is v², so the standard error is v/√n.
        assert!((var - 0.75).abs() < 4.0 * 0.75 / (n as f64).sqrt(), "var = {var}");
    }

    #[test]
    fn calibration_hits_end_to_end_target() {
        for h in [1, 2, 10] {
            for snr_db in [0.0, 10.0, 20.0] {
                let target = db_to_linear(snr_db);
                let mut hops = vec![HopConfig::awgn(1.0); h];
                calibrate_noise(&mut hops, target, SnrAxis::EndToEnd, 1.0).unwrap();
                let stats = chain_stats(&realize_chain(&hops, 1.0, &mut seeded(0)).unwrap());
                assert!((stats.snr_eq() / target - 1.0).abs() < 1e-10);
            }
        }
        let mut hops = vec![HopConfig::awgn(1.0); 3];
        assert!(calibrate_noise(&mut hops, f64::INFINITY, SnrAxis::EndToEnd, 1.0).is_err());
        assert!(calibrate_noise(&mut hops, 0.0, SnrAxis::EndToEnd, 1.0).is_err());
    }

    #[test]
    fn quantizer_levels_are_fixed_points() {
        let (lo, hi, bits) = (-1.5, 1.5, 8);
        let step = (hi - lo) / 255.0;
        for k in [0.0, 1.0, 100.0, 255.0] {
            let x = lo + k * step;
            assert_eq!(quantize_scalar(x, lo, hi, bits), x);
        }
        assert_eq!(quantize_scalar(9.0, lo, hi, bits), hi);
        assert_eq!(quantize_scalar(-9.0, lo, hi, bits), lo);
    }

    #[test]
    fn wide_quantizer_is_nearly_lossless() {
        let q = QuantizerConfig::uniform(32);
        let mut rng = seeded(4);
        for _ in 0..1000 {
            let mu = Complex64::new(rng.random_range(0.01..1.4), rng.random_range(-1.4..-0.01));
            let v = 10f64.powf(rng.random_range(-10.0..1.5));
            let s = quantize_stats(&SufficientStats { mu, v }, &q).unwrap();
            assert!(((s.mu.re - mu.re) / mu.re).abs() < 1e-6);
            assert!(((s.mu.im - mu.im) / mu.im).abs() < 1e-6);
            assert!(((s.v - v) / v).abs() < 1e-6);
        }
    }

    #[test]
    fn csi_budget() {
        let q = QuantizerConfig {
            bits_re: 24,
            bits_im: 24,
            bits_v: 32,
            ..Default::default()
        };
        assert_eq!(q.total_bits(), 80);
        assert_eq!(QuantizerConfig::default().total_bits(), 80);
        assert!(QuantizerConfig::uniform(1).validate().is_err());
    }
}
