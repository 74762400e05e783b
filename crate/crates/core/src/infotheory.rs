//! MMSE and mutual information of the collapsed channel `Y = √γ·X + Z`,
//! `Z ~ CN(0, 1)`.
//!
//! Mutual information follows the complex-channel I-MMSE relation
//! `dI/dγ = mmse(γ)`, so a unit-variance Gaussian prior integrates to
//! `ln(1+γ)`. All MI values are in nats.

use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::SufficientStats;
use crate::signal::Constellation;
use crate::{Error, Result};

/// Gauss–Hermite order per real dimension used by [`mmse_discrete`].
pub const DEFAULT_HERMITE_ORDER: usize = 40;

/// Nodes and weights of the `n`-point Gauss–Hermite rule for `∫ f(x) e^{-x²} dx`.
///
/// Newton iteration on the orthonormal Hermite recurrence, seeded with the
/// usual asymptotic root estimates.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Hermite order must be >= 1");
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn default_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(DEFAULT_HERMITE_ORDER))
}

/// `E|X - E[X|Y]|²` for `Y = √γ·X + Z` with `X` drawn from the constellation
/// prior.
///
/// Uniform square grids factor into two independent PAM axes, each handled
/// by adaptive quadrature over the received value. Other priors use the
/// exact finite-sum posterior with Gauss–Hermite over the noise, which loses
/// accuracy once the posterior becomes sharp (high `γ`).
pub fn mmse_discrete(constellation: &Constellation, gamma: f64) -> f64 {
    assert!(gamma >= 0.0, "gamma must be non-negative");
    if let Some(levels) = product_levels(constellation) {
        return 2.0 * mmse_pam(&levels, gamma);
    }
    let (nodes, weights) = default_rule();
    mmse_discrete_with(constellation, gamma, nodes, weights)
}

/// Per-axis levels when the constellation is a uniform `L × L` product grid.
fn product_levels(constellation: &Constellation) -> Option<Vec<f64>> {
    if !constellation.is_uniform() {
        return None;
    }
    let points = constellation.points();
    let mut levels: Vec<f64> = points.iter().map(|p| p.re).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    if levels.len() * levels.len() != points.len() {
        return None;
    }
    let on_grid = |v: f64| levels.iter().any(|l| (l - v).abs() <= 1e-12);
    let mut seen = vec![false; points.len()];
    for p in points {
        if !on_grid(p.re) || !on_grid(p.im) {
            return None;
        }
        let i = levels.iter().position(|l| (l - p.re).abs() <= 1e-12)?;
        let q = levels.iter().position(|l| (l - p.im).abs() <= 1e-12)?;
        let slot = &mut seen[i * levels.len() + q];
        if *slot {
            return None;
        }
        *slot = true;
    }
    Some(levels)
}

/// MMSE of one real axis `Y = √γ·X + N`, `N ~ N(0, 1/2)`, `X` uniform on `levels`.
fn mmse_pam(levels: &[f64], gamma: f64) -> f64 {
    let a = gamma.sqrt();
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let weight = 1.0 / levels.len() as f64;
    // p(y)·Var[X | y], with weights shifted by the closest level.
    let f = |y: f64| {
        let max = levels
            .iter()
            .map(|x| -(y - a * x).powi(2))
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut norm, mut m1) = (0.0, 0.0);
        for &x in levels {
            let e = (-(y - a * x).powi(2) - max).exp();
            norm += e;
            m1 += e * x;
        }
        let mean = m1 / norm;
        let spread: f64 = levels
            .iter()
            .map(|&x| (-(y - a * x).powi(2) - max).exp() * (x - mean).powi(2))
            .sum();
        weight * inv_sqrt_pi * max.exp() * spread
    };
    let mut breaks: Vec<f64> = levels.iter().map(|x| a * x).collect();
    breaks.insert(0, a * levels[0] - 10.0);
    breaks.push(a * levels[levels.len() - 1] + 10.0);
    breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| integrate(&f, w[0], w[1], 1e-12))
        .sum()
}

pub fn mmse_discrete_with_order(constellation: &Constellation, gamma: f64, order: usize) -> f64 {
    let (nodes, weights) = gauss_hermite(order);
    mmse_discrete_with(constellation, gamma, &nodes, &weights)
}

fn mmse_discrete_with(constellation: &Constellation, gamma: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    assert!(gamma >= 0.0, "gamma must be non-negative");
    let points = constellation.points();
    let prior = constellation.prior();
    let a = gamma.sqrt();
    let log_prior: Vec<f64> = prior.iter().map(|p| p.ln()).collect();
    let mut logw = vec![0.0; points.len()];

    let mut total = 0.0;
    for (k, (&xk, &pk)) in points.iter().zip(prior).enumerate() {
        if pk == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for (&u, &wu) in nodes.iter().zip(weights) {
            for (&r, &wr) in nodes.iter().zip(weights) {
                let z = Complex64::new(u, r);
                let mut max = f64::NEG_INFINITY;
                for (s, (&xs, lp)) in points.iter().zip(&log_prior).enumerate() {
                    let d = z + (xk - xs) * a;
                    let l = lp - d.norm_sqr();
                    logw[s] = l;
                    if l > max {
                        max = l;
                    }
                }
                let mut norm = 0.0;
                let mut mean = Complex64::new(0.0, 0.0);
                for (l, &xs) in logw.iter().zip(points) {
                    let e = (l - max).exp();
                    norm += e;
                    mean += xs * e;
                }
                let err = (points[k] - mean / norm).norm_sqr();
                acc += wu * wr * err;
            }
        }
        total += pk * acc;
    }
    total / std::f64::consts::PI
}

/// MMSE of a unit-variance circular Gaussian input.
pub fn mmse_gaussian(gamma: f64) -> f64 {
    1.0 / (1.0 + gamma)
}

/// Input distribution of the collapsed channel.
#[derive(Debug, Clone, Copy)]
pub enum Prior<'a> {
    /// Unit-variance circular Gaussian.
    Gaussian,
    Discrete(&'a Constellation),
}

impl Prior<'_> {
    pub fn mmse(&self, gamma: f64) -> f64 {
        match self {
            Prior::Gaussian => mmse_gaussian(gamma),
            Prior::Discrete(c) => mmse_discrete(c, gamma),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Prior::Gaussian => "gaussian".to_string(),
            Prior::Discrete(c) => format!("qam{}", c.order()),
        }
    }
}

/// Sampled MMSE curve.
#[derive(Debug, Clone, PartialEq)]
pub struct MmseCurve {
    pub prior_id: String,
    pub gammas: Vec<f64>,
    pub mmse_values: Vec<f64>,
}

pub fn mmse_curve(prior: Prior<'_>, gammas: &[f64]) -> Result<MmseCurve> {
    if gammas.windows(2).any(|w| w[1] <= w[0]) || gammas.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::InvalidArgument("gamma grid must be non-negative and increasing".into()));
    }
    let mmse_values = gammas.par_iter().map(|&g| prior.mmse(g)).collect();
    Ok(MmseCurve {
        prior_id: prior.id(),
        gammas: gammas.to_vec(),
        mmse_values,
    })
}

/// Relative tolerance of the adaptive quadrature used for MI.
pub const MI_REL_TOL: f64 = 1e-10;

/// `I(γ_H) = ∫₀^{γ_H} mmse(γ) dγ` for an arbitrary MMSE function.
pub fn mi_from_mmse<F: Fn(f64) -> f64>(mmse: F, gamma_h: f64) -> f64 {
    assert!(gamma_h >= 0.0, "gamma must be non-negative");
    if gamma_h == 0.0 {
        return 0.0;
    }
    integrate_octaves(&mmse, 0.0, gamma_h)
}

/// Integrates over `[a, b]` split at the powers of two in between, so every
/// panel sees the scale on which the MMSE decays.
fn integrate_octaves<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    let mut lo = a;
    while lo < b {
        let mut hi = if lo < 1.0 { 1.0 } else { 2.0 * lo };
        if hi > b {
            hi = b;
        }
        total += integrate(f, lo, hi, MI_REL_TOL);
        lo = hi;
    }
    total
}

pub fn mi_via_immse(constellation: &Constellation, gamma_h: f64) -> f64 {
    mi_from_mmse(|g| mmse_discrete(constellation, g), gamma_h)
}

pub fn mi_prior(prior: Prior<'_>, gamma_h: f64) -> f64 {
    match prior {
        Prior::Gaussian => mi_from_mmse(mmse_gaussian, gamma_h),
        Prior::Discrete(c) => mi_via_immse(c, gamma_h),
    }
}

/// `d · ln(1 + snr)`.
pub fn mi_gaussian(snr_eff: f64, dof: u32) -> f64 {
    dof as f64 * snr_eff.ln_1p()
}

/// MI on an increasing grid, integrating only between neighbouring points.
pub fn mi_curve(prior: Prior<'_>, gammas: &[f64]) -> Result<Vec<f64>> {
    if gammas.windows(2).any(|w| w[1] <= w[0]) || gammas.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::InvalidArgument("gamma grid must be non-negative and increasing".into()));
    }
    let mut edges = vec![0.0];
    edges.extend_from_slice(gammas);
    let pieces: Vec<f64> = edges
        .par_windows(2)
        .map(|w| {
            if w[1] == w[0] {
                0.0
            } else {
                integrate_octaves(&|g| prior.mmse(g), w[0], w[1])
            }
        })
        .collect();
    Ok(pieces
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect())
}

/// Slope of MI at `γ = 0⁺` by a forward difference at `γ ∈ {1e-4, 2e-4}`.
pub fn mi_small_snr_slope(constellation: &Constellation) -> f64 {
    let (g1, g2) = (1e-4, 2e-4);
    (mi_via_immse(constellation, g2) - mi_via_immse(constellation, g1)) / (g2 - g1)
}

/// Monte-Carlo estimate of `I(X_0; X_H)` from simulated chain outputs.
///
/// Averages `ln p(y|x) − ln p(y)` over the samples, using the Gaussian
/// likelihood `CN(μ·x, v)`. Returns `(mean, standard error)` in nats.
pub fn mi_monte_carlo(
    constellation: &Constellation,
    sent: &[usize],
    received: &[Complex64],
    stats: &SufficientStats,
) -> Result<(f64, f64)> {
    if sent.len() != received.len() {
        return Err(Error::LengthMismatch {
            expected: sent.len(),
            actual: received.len(),
        });
    }
    if sent.len() < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let points = constellation.points();
    let log_prior: Vec<f64> = constellation.prior().iter().map(|p| p.ln()).collect();
    let inv_v = 1.0 / stats.v;
    let info: Vec<f64> = sent
        .par_iter()
        .zip(received.par_iter())
        .map(|(&k, y)| {
            let own = -(y - stats.mu * points[k]).norm_sqr() * inv_v;
            let terms: Vec<f64> = points
                .iter()
                .zip(&log_prior)
                .map(|(s, lp)| lp - (y - stats.mu * s).norm_sqr() * inv_v)
                .collect();
            let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
            own - lse
        })
        .collect();
    let n = info.len() as f64;
    let mean = info.iter().sum::<f64>() / n;
    let var = info.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

// 7-point Gauss / 15-point Kronrod abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod quadrature with global bisection of the worst panel.
pub fn integrate<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    const ABS_TOL: f64 = 1e-15;
    const MAX_PANELS: usize = 2000;
    let (v, e) = gk15(f, a, b);
    let mut panels = vec![(a, b, v, e)];
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= (rel_tol * total.abs()).max(ABS_TOL) || panels.len() >= MAX_PANELS {
            return total;
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_integrates_moments() {
        let (x, w) = gauss_hermite(DEFAULT_HERMITE_ORDER);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m0 - sqrt_pi).abs() < 1e-13);
        assert!((m2 - sqrt_pi / 2.0).abs() < 1e-13);
        assert!((m4 - 3.0 * sqrt_pi / 4.0).abs() < 1e-12);
        let (x3, w3) = gauss_hermite(3);
        assert!((x3[0] - 1.5f64.sqrt()).abs() < 1e-14);
        assert!((w3[1] - 2.0 * sqrt_pi / 3.0).abs() < 1e-14);
    }

    #[test]
    fn quadrature_handles_smooth_integrands() {
        let v = integrate(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-12);
        let v = integrate(&|x: f64| (-x).exp(), 0.0, 50.0, 1e-12);
        assert!((v - (1.0 - (-50f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn mmse_limits() {
        for m in [4, 16, 64] {
            let c = Constellation::square_qam(m).unwrap();
            assert!((mmse_discrete(&c, 0.0) - 1.0).abs() < 1e-12);
        }
        let c = Constellation::square_qam(4).unwrap();
        assert!(mmse_discrete(&c, 1e3) < 1e-12);
    }

    #[test]
    fn mmse_below_linear_bound() {
        for m in [4, 16] {
            let c = Constellation::square_qam(m).unwrap();
            let mut prev = 1.0 + 1e-12;
            for g in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0] {
                let v = mmse_discrete(&c, g);
                assert!(v <= mmse_gaussian(g) + 1e-12, "M={m} γ={g}: {v}");
                assert!(v < prev);
                prev = v;
            }
        }
    }

    #[test]
    fn square_qam_reference_values() {
        // Independent adaptive quadrature of the per-axis integral.
        let cases = [
            (4, 1.0, 4.495995092066729e-01),
            (4, 10.0, 2.411314735412310e-03),
            (16, 10.0, 6.952741670498951e-02),
            (16, 31.6, 5.466787654002079e-03),
            (64, 100.0, 3.674373590251858e-03),
            (256, 31.6, 2.851739224339660e-02),
        ];
        for (m, g, want) in cases {
            let c = Constellation::square_qam(m).unwrap();
            let got = mmse_discrete(&c, g);
            assert!((got - want).abs() < 1e-10 * want.max(1e-3), "M={m} γ={g}: {got} vs {want}");
        }
    }

    #[test]
    fn hermite_path_agrees_at_moderate_snr() {
        let c = Constellation::square_qam(16).unwrap();
        for g in [0.5, 3.0, 10.0] {
            let exact = mmse_discrete(&c, g);
            let gh = mmse_discrete_with_order(&c, g, DEFAULT_HERMITE_ORDER);
            assert!((gh - exact).abs() < 1e-5, "γ={g}: {gh} vs {exact}");
        }
        // A non-uniform prior takes the Hermite path.
        let skewed = c.clone().with_prior((1..=16).map(|k| k as f64 / 136.0).collect()).unwrap();
        assert!(product_levels(&skewed).is_none());
        assert!(product_levels(&c).is_some());
        let v = mmse_discrete(&skewed, 1.0);
        assert!(v > 0.0 && v < mmse_gaussian(1.0));
    }

    #[test]
    fn gaussian_mi_examples() {
        assert_eq!(mi_gaussian(0.0, 1), 0.0);
        assert!((mi_gaussian(1.0, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((mi_gaussian(std::f64::consts::E - 1.0, 1) - 1.0).abs() < 1e-15);
        assert!((mi_gaussian(1.0, 3) - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn immse_reproduces_gaussian_closed_form() {
        for g in [0.1, 1.0, 10.0, 100.0] {
            let v = mi_from_mmse(mmse_gaussian, g);
            assert!((v - g.ln_1p()).abs() < 1e-9);
        }
        let c = Constellation::square_qam(4).unwrap();
        assert_eq!(mi_via_immse(&c, 0.0), 0.0);
    }

    #[test]
    fn qpsk_saturates_at_source_entropy() {
        let c = Constellation::square_qam(4).unwrap();
        let v = mi_via_immse(&c, 1e3);
        assert!((v - 4f64.ln()).abs() < 1e-3, "I = {v}");
    }

    #[test]
    fn small_snr_slope() {
        for m in [4, 16, 64] {
            let c = Constellation::square_qam(m).unwrap();
            assert!((mi_small_snr_slope(&c) - 1.0).abs() < 1e-3);
        }
        let zero = Constellation::from_parts(vec![Complex64::new(0.0, 0.0)], vec![0], vec![1.0]).unwrap();
        assert_eq!(mi_small_snr_slope(&zero), 0.0);
    }

    #[test]
    fn curve_is_cumulative() {
        let c = Constellation::square_qam(4).unwrap();
        let gammas = [0.5, 1.0, 4.0];
        let curve = mi_curve(Prior::Discrete(&c), &gammas).unwrap();
        for (g, i) in gammas.iter().zip(&curve) {
            assert!((mi_via_immse(&c, *g) - i).abs() < 1e-9);
        }
        assert!(mi_curve(Prior::Gaussian, &[1.0, 0.5]).is_err());
        let m = mmse_curve(Prior::Gaussian, &[0.0, 1.0]).unwrap();
        assert_eq!(m.mmse_values, vec![1.0, 0.5]);
        assert_eq!(m.prior_id, "gaussian");
    }
}
