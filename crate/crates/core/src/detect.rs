//! Block decoders: deterministic DDIM with a pluggable denoiser, and
//! symbol-wise maximum likelihood on the collapsed channel.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::SufficientStats;
use crate::denoise::{Denoiser, DenoiserQuery, ExactBayes, MlpDenoiser};
use crate::diffusion::{init_reverse_state, schedule_from_stats, ReverseSchedule};
use crate::signal::{Constellation, SymbolBlock};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub enum DenoiserChoice {
    ExactBayes,
    Learned(Arc<MlpDenoiser>),
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub reverse_steps: usize,
    pub denoiser: DenoiserChoice,
    pub constellation: Constellation,
}

impl DetectorConfig {
    pub fn exact_bayes(constellation: Constellation, reverse_steps: usize) -> Self {
        Self {
            reverse_steps,
            denoiser: DenoiserChoice::ExactBayes,
            constellation,
        }
    }

    pub fn learned(constellation: Constellation, model: Arc<MlpDenoiser>, reverse_steps: usize) -> Self {
        Self {
            reverse_steps,
            denoiser: DenoiserChoice::Learned(model),
            constellation,
        }
    }
}

/// Runs the reverse recursion for one symbol starting from `x_T`.
pub fn ddim_symbol<D: Denoiser + ?Sized>(
    x_start: Complex64,
    schedule: &ReverseSchedule,
    stats: &SufficientStats,
    denoiser: &D,
) -> Complex64 {
    let mut x = x_start;
    for t in (1..=schedule.steps()).rev() {
        let abar = schedule.abar[t];
        let sigma = schedule.sigma[t];
        let root = abar.sqrt();
        let query = DenoiserQuery {
            x_t: x,
            abar_t: abar,
            sigma_t: sigma,
            t,
            lambda_t: schedule.lambda[t],
            mu: stats.mu,
            v: stats.v,
        };
        let pred = denoiser.predict(&query);
        let x0 = match pred.x0 {
            Some(x0) => x0,
            None if sigma > 0.0 => (x - pred.epsilon * sigma) / root,
            None => x / root,
        };
        // Direction pointing back to x_t; zero on the clean manifold.
        let direction = if sigma > 0.0 {
            (x - x0 * root) / sigma
        } else {
            Complex64::new(0.0, 0.0)
        };
        let prev = schedule.abar[t - 1];
        x = x0 * prev.sqrt() + direction * (1.0 - prev).sqrt();
    }
    x
}

/// Soft estimate of the source block from the received block.
pub fn ddim_decode(x_h: &SymbolBlock, stats: &SufficientStats, cfg: &DetectorConfig) -> Result<SymbolBlock> {
    match &cfg.denoiser {
        DenoiserChoice::ExactBayes => {
            let d = ExactBayes::new(cfg.constellation.clone());
            ddim_decode_with(x_h, stats, cfg.reverse_steps, &d)
        }
        DenoiserChoice::Learned(model) => ddim_decode_with(x_h, stats, cfg.reverse_steps, model.as_ref()),
    }
}

pub fn ddim_decode_with<D: Denoiser + ?Sized>(
    x_h: &SymbolBlock,
    stats: &SufficientStats,
    steps: usize,
    denoiser: &D,
) -> Result<SymbolBlock> {
    let schedule = schedule_from_stats(stats, steps)?;
    let start = init_reverse_state(x_h, stats)?;
    let samples = start
        .samples
        .par_iter()
        .map(|&x| ddim_symbol(x, &schedule, stats, denoiser))
        .collect();
    Ok(x_h.with_samples(samples))
}

/// Per-symbol `argmin_s |x_H − μ·s|²`, returned as constellation points.
pub fn ml_decode(x_h: &SymbolBlock, stats: &SufficientStats, constellation: &Constellation) -> Result<SymbolBlock> {
    if stats.mu.norm_sqr() == 0.0 {
        return Err(Error::ZeroGain);
    }
    let mu = stats.mu;
    let samples = x_h
        .samples
        .par_iter()
        .map(|&y| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, s) in constellation.points().iter().enumerate() {
                let d = (y - mu * s).norm_sqr();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            constellation.point(best)
        })
        .collect();
    Ok(x_h.with_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{propagate_chain, HopConfig};
    use crate::denoise::bayes_x0;
    use crate::diffusion::abar_from_snr;
    use crate::rng::seeded;
    use crate::signal::draw_block;

    #[test]
    fn single_step_equals_posterior_mean() {
        let c = Constellation::square_qam(16).unwrap();
        let x0 = draw_block(&c, 16, &mut seeded(0)).unwrap();
        let out = propagate_chain(&x0, &vec![HopConfig::awgn(0.05); 3], &mut seeded(1)).unwrap();
        let cfg = DetectorConfig::exact_bayes(c.clone(), 1);
        let est = ddim_decode(&out.block, &out.stats, &cfg).unwrap();
        let init = init_reverse_state(&out.block, &out.stats).unwrap();
        let abar = abar_from_snr(out.stats.snr_eq());
        for (x, e) in init.samples.iter().zip(&est.samples) {
            let direct = bayes_x0(&DenoiserQuery::at_level(*x, abar, 1), &c);
            assert_eq!(direct, *e);
        }
    }

    #[test]
    fn noiseless_chain_recovers_input() {
        let c = Constellation::square_qam(64).unwrap();
        let x0 = draw_block(&c, 8, &mut seeded(0)).unwrap();
        let out = propagate_chain(&x0, &vec![HopConfig::awgn(0.0); 4], &mut seeded(1)).unwrap();
        for steps in [1, 5] {
            let est = ddim_decode(&out.block, &out.stats, &DetectorConfig::exact_bayes(c.clone(), steps)).unwrap();
            for (a, b) in est.samples.iter().zip(&x0.samples) {
                assert!((a - b).norm() < 1e-9);
            }
        }
        let ml = ml_decode(&out.block, &out.stats, &c).unwrap();
        assert_eq!(ml.samples, x0.samples);
    }

    #[test]
    fn ml_is_rotation_invariant() {
        let c = Constellation::square_qam(16).unwrap();
        let x0 = draw_block(&c, 16, &mut seeded(2)).unwrap();
        let out = propagate_chain(&x0, &vec![HopConfig::awgn(0.1); 2], &mut seeded(3)).unwrap();
        let rot = Complex64::from_polar(1.0, 1.1);
        let stats = SufficientStats {
            mu: out.stats.mu * rot,
            v: out.stats.v,
        };
        let rotated = out.block.with_samples(out.block.samples.iter().map(|y| y * rot).collect());
        let a = ml_decode(&rotated, &stats, &c).unwrap();
        let equalized: Vec<Complex64> = out.block.samples.iter().map(|y| y / out.stats.mu).collect();
        for (d, y) in a.samples.iter().zip(equalized) {
            assert_eq!(*d, c.point(c.nearest(y)));
        }
        let zero = SufficientStats {
            mu: Complex64::new(0.0, 0.0),
            v: 1.0,
        };
        assert!(matches!(ml_decode(&out.block, &zero, &c), Err(Error::ZeroGain)));
    }

    #[test]
    fn decoding_is_deterministic() {
        let c = Constellation::square_qam(4).unwrap();
        let x0 = draw_block(&c, 32, &mut seeded(4)).unwrap();
        let out = propagate_chain(&x0, &vec![HopConfig::awgn(0.2); 5], &mut seeded(5)).unwrap();
        let model = Arc::new(MlpDenoiser::new(&c, &mut seeded(6)));
        for cfg in [
            DetectorConfig::exact_bayes(c.clone(), 7),
            DetectorConfig::learned(c.clone(), model, 7),
        ] {
            let a = ddim_decode(&out.block, &out.stats, &cfg).unwrap();
            let b = ddim_decode(&out.block, &out.stats, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a.samples.iter().all(|x| x.re.is_finite() && x.im.is_finite()));
        }
    }
}
