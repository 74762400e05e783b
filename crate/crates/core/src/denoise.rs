//! Noise-prediction denoisers for the reverse process.
//!
//! [`ExactBayes`] computes the posterior mean of a finite constellation in
//! closed form. [`MlpDenoiser`] is a small per-symbol network trained on
//! forward samples from random relay chains with the usual `‖ε̂ − Z‖²` loss.
//!
//! The network's last layer emits a clean-symbol estimate `r`, and the noise
//! estimate is formed as `ε̂ = (x_t − √ᾱ·r)/σ`. At high SNR the optimal `ε̂` is
//! a sawtooth with slope `1/σ`, which a small network cannot reach in a few
//! hundred optimizer steps; the posterior mean it predicts instead is bounded
//! and smooth.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, HopConfig, SnrAxis, SufficientStats};
use crate::diffusion::{abar_from_snr, log_snr};
use crate::rng::{derive_seed, seeded, SimRng};
use crate::signal::Constellation;
use crate::{Error, Result};

/// One reverse-process sample presented to a denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserQuery {
    pub x_t: Complex64,
    pub abar_t: f64,
    pub sigma_t: f64,
    pub t: usize,
    pub lambda_t: f64,
    pub mu: Complex64,
    pub v: f64,
}

impl DenoiserQuery {
    /// Query at variance-domain level `abar` with no chain context.
    pub fn at_level(x_t: Complex64, abar: f64, t: usize) -> Self {
        Self {
            x_t,
            abar_t: abar,
            sigma_t: (1.0 - abar).sqrt(),
            t,
            lambda_t: log_snr(abar),
            mu: Complex64::new(1.0, 0.0),
            v: 1.0,
        }
    }
}

/// Noise estimate, plus the clean estimate when the denoiser has it directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub epsilon: Complex64,
    pub x0: Option<Complex64>,
}

pub trait Denoiser: Sync {
    fn predict(&self, query: &DenoiserQuery) -> Prediction;
}

/// Posterior mean `E[X_0 | x_t]` under the constellation prior.
pub fn bayes_x0(query: &DenoiserQuery, constellation: &Constellation) -> Complex64 {
    let abar = query.abar_t;
    if abar >= 1.0 {
        return constellation.point(constellation.nearest(query.x_t));
    }
    let a = abar.sqrt();
    let inv_noise = 1.0 / (1.0 - abar);
    let points = constellation.points();
    let mut max = f64::NEG_INFINITY;
    let log_w: Vec<f64> = points
        .iter()
        .zip(constellation.prior())
        .map(|(s, p)| {
            let l = p.ln() - (query.x_t - s * a).norm_sqr() * inv_noise;
            max = max.max(l);
            l
        })
        .collect();
    let mut norm = 0.0;
    let mut mean = Complex64::new(0.0, 0.0);
    for (l, s) in log_w.iter().zip(points) {
        let w = (l - max).exp();
        norm += w;
        mean += s * w;
    }
    mean / norm
}

/// `ε̂ = (x_t − √ᾱ_t·x̂_0)/σ_t` with `x̂_0` the posterior mean.
pub fn bayes_epsilon(query: &DenoiserQuery, constellation: &Constellation) -> Result<Complex64> {
    if !(query.sigma_t > 0.0) {
        return Err(Error::InvalidArgument("noise scale must be positive to predict epsilon".into()));
    }
    let x0 = bayes_x0(query, constellation);
    Ok((query.x_t - x0 * query.abar_t.sqrt()) / query.sigma_t)
}

#[derive(Debug, Clone)]
pub struct ExactBayes {
    constellation: Constellation,
}

impl ExactBayes {
    pub fn new(constellation: Constellation) -> Self {
        Self { constellation }
    }
}

impl Denoiser for ExactBayes {
    fn predict(&self, query: &DenoiserQuery) -> Prediction {
        let x0 = bayes_x0(query, &self.constellation);
        let epsilon = if query.sigma_t > 0.0 {
            (query.x_t - x0 * query.abar_t.sqrt()) / query.sigma_t
        } else {
            Complex64::new(0.0, 0.0)
        };
        Prediction { epsilon, x0: Some(x0) }
    }
}

pub const EMBED_FREQUENCIES: usize = 8;
pub const INPUT_DIM: usize = 2 + 2 * EMBED_FREQUENCIES + 1;
pub const HIDDEN_WIDTH: usize = 128;
const LAMBDA_CLAMP: f64 = 20.0;
const LAMBDA_SCALE: f64 = 0.1;

/// Network input: `√ᾱ·x/(1−ᾱ)` split into real and imaginary parts, a
/// sinusoidal embedding of `t` with frequencies spaced geometrically from 1
/// down to 10⁻⁴, and the scaled log-SNR. `ᾱ` is recovered from the clamped `λ`.
pub fn features(x_t: Complex64, t: usize, lambda: f64) -> [f64; INPUT_DIM] {
    let mut f = [0.0; INPUT_DIM];
    // Matched-filter statistic √ᾱ·x/(1−ᾱ): the QPSK posterior mean is a fixed
    // tanh of it at every SNR.
    let l = lambda.clamp(-LAMBDA_CLAMP, LAMBDA_CLAMP);
    let scale = (1.0 + (-l).exp()).recip().sqrt() * (1.0 + l.exp());
    f[0] = x_t.re * scale;
    f[1] = x_t.im * scale;
    for k in 0..EMBED_FREQUENCIES {
        let omega = 10f64.powf(-4.0 * k as f64 / (EMBED_FREQUENCIES - 1) as f64);
        let phase = t as f64 * omega;
        f[2 + 2 * k] = phase.sin();
        f[3 + 2 * k] = phase.cos();
    }
    f[INPUT_DIM - 1] = lambda.clamp(-LAMBDA_CLAMP, LAMBDA_CLAMP) * LAMBDA_SCALE;
    f
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Per-symbol ε-prediction MLP with SiLU hidden layers.
///
/// The two outputs are a clean estimate `r`; see the module docs for how `ε̂`
/// follows from it.
///
/// All parameters live in one flat vector: for each layer, the weight matrix
/// (row-major, `out × in`) followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    widths: Vec<usize>,
    params: Vec<f64>,
    /// Bound of each output axis; the largest per-axis constellation level.
    amplitude: f64,
    /// Mean training log-SNR per hop index `1..=H`; maps reverse-step queries
    /// onto the hop index the network was trained with.
    step_lambdas: Vec<f64>,
}

struct Activations {
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
    /// Inputs to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
}

impl MlpDenoiser {
    /// Two hidden layers of width 128, outputs bounded for `constellation`.
    pub fn new<R: Rng + ?Sized>(constellation: &Constellation, rng: &mut R) -> Self {
        Self::with_widths(&[INPUT_DIM, HIDDEN_WIDTH, HIDDEN_WIDTH, 2], output_amplitude(constellation), rng)
    }

    pub fn with_widths<R: Rng + ?Sized>(widths: &[usize], amplitude: f64, rng: &mut R) -> Self {
        assert!(widths.len() >= 2 && widths[0] == INPUT_DIM && *widths.last().unwrap() == 2);
        assert!(amplitude > 0.0 && amplitude.is_finite(), "amplitude must be positive");
        let mut params = Vec::new();
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1] + w[1]).map(|_| rng.random_range(-bound..bound)));
        }
        Self {
            widths: widths.to_vec(),
            params,
            amplitude,
            step_lambdas: Vec::new(),
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn step_lambdas(&self) -> &[f64] {
        &self.step_lambdas
    }

    fn layer_offsets(&self) -> Vec<(usize, usize, usize)> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let o = off;
                off += w[0] * w[1] + w[1];
                (o, w[0], w[1])
            })
            .collect()
    }

    fn forward_raw(&self, input: &[f64]) -> (Vec<f64>, Activations) {
        let layers = self.layer_offsets();
        let mut acts = Activations {
            pre: Vec::with_capacity(layers.len()),
            inputs: Vec::with_capacity(layers.len()),
        };
        let mut x = input.to_vec();
        for (li, &(off, n_in, n_out)) in layers.iter().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let last = li + 1 == layers.len();
            let next = if last { z.clone() } else { z.iter().map(|&v| silu(v)).collect() };
            acts.inputs.push(std::mem::replace(&mut x, next));
            acts.pre.push(z);
        }
        (x, acts)
    }

    /// Adds `d loss / d params` for one sample into `grad`, given the output
    /// gradient.
    fn backward(&self, acts: &Activations, d_out: &[f64], grad: &mut [f64]) {
        let layers = self.layer_offsets();
        let mut delta = d_out.to_vec();
        for li in (0..layers.len()).rev() {
            let (off, n_in, n_out) = layers[li];
            if li + 1 != layers.len() {
                for (d, z) in delta.iter_mut().zip(&acts.pre[li]) {
                    *d *= silu_grad(*z);
                }
            }
            let input = &acts.inputs[li];
            for o in 0..n_out {
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += delta[o] * x;
                }
                grad[off + n_in * n_out + o] += delta[o];
            }
            if li > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += delta[o] * wv;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Noise estimate at the query's own hop index, without step remapping.
    pub fn forward_at(&self, query: &DenoiserQuery) -> Complex64 {
        let r = self.forward_features(&features(query.x_t, query.t, query.lambda_t));
        epsilon_from_clean(query.x_t, r, query.abar_t, query.sigma_t)
    }

    fn forward_features(&self, f: &[f64]) -> Complex64 {
        let max_width = self.widths.iter().copied().max().unwrap_or(0);
        let mut x = Vec::with_capacity(max_width);
        let mut z = Vec::with_capacity(max_width);
        x.extend_from_slice(f);
        let layers = self.layer_offsets();
        for (li, &(off, n_in, n_out)) in layers.iter().enumerate() {
            let (w, b) = self.params[off..off + n_in * n_out + n_out].split_at(n_in * n_out);
            z.clear();
            z.extend(w.chunks_exact(n_in).zip(b).map(|(row, &bias)| bias + dot(row, &x)));
            if li + 1 != layers.len() {
                z.iter_mut().for_each(|v| *v = silu(*v));
            }
            std::mem::swap(&mut x, &mut z);
        }
        self.head(&x).0
    }

    /// `A·tanh` per axis, with its derivative.
    fn head(&self, out: &[f64]) -> (Complex64, [f64; 2]) {
        let a = self.amplitude;
        let (t0, t1) = (out[0].tanh(), out[1].tanh());
        (Complex64::new(a * t0, a * t1), [a * (1.0 - t0 * t0), a * (1.0 - t1 * t1)])
    }

    /// Training hop index whose mean log-SNR is nearest to `lambda`; falls back
    /// to `t` for an untrained model.
    pub fn map_step(&self, t: usize, lambda: f64) -> usize {
        if self.step_lambdas.is_empty() {
            return t;
        }
        self.step_lambdas
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - lambda).abs().total_cmp(&(b.1 - lambda).abs()))
            .map(|(i, _)| i + 1)
            .unwrap()
    }

    fn sample_loss_grad(&self, s: &TrainingSample, grad: Option<&mut [f64]>) -> f64 {
        let f = features(s.x_t, s.t, log_snr(s.abar_t));
        let (out, acts) = self.forward_raw(&f);
        let (r, dr) = self.head(&out);
        let sigma = (1.0 - s.abar_t).sqrt();
        let eps = epsilon_from_clean(s.x_t, r, s.abar_t, sigma);
        let e = eps - s.target_eps;
        if let Some(g) = grad {
            // dε̂/dr = −√ᾱ/σ, and zero on the clean manifold.
            let k = if sigma > 0.0 { -s.abar_t.sqrt() / sigma } else { 0.0 };
            self.backward(&acts, &[2.0 * e.re * k * dr[0], 2.0 * e.im * k * dr[1]], g);
        }
        e.norm_sqr()
    }

    /// Mean `|ε̂ − Z|²` over `batch` and, optionally, its gradient.
    pub fn batch_loss(&self, batch: &[TrainingSample], mut grad: Option<&mut [f64]>) -> f64 {
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut loss = 0.0;
        for s in batch {
            loss += self.sample_loss_grad(s, grad.as_deref_mut());
        }
        let n = batch.len() as f64;
        if let Some(g) = grad {
            g.iter_mut().for_each(|x| *x /= n);
        }
        loss / n
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_checkpoint().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lines = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&lines.join("\n"))
    }

    /// Text checkpoint; see the README for the format.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::from("afddim-mlp 1\n");
        let join = |v: &[String]| v.join(" ");
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "widths {}", join(&widths));
        let _ = writeln!(s, "amplitude {:e}", self.amplitude);
        let lambdas: Vec<String> = self.step_lambdas.iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(s, "step_lambdas {} {}", lambdas.len(), join(&lambdas));
        for (li, (off, n_in, n_out)) in self.layer_offsets().into_iter().enumerate() {
            let _ = writeln!(s, "layer {li} {n_out} {n_in}");
            for o in 0..n_out {
                let row: Vec<String> = self.params[off + o * n_in..off + (o + 1) * n_in]
                    .iter()
                    .map(|x| format!("{x:e}"))
                    .collect();
                let _ = writeln!(s, "{}", join(&row));
            }
            let bias: Vec<String> = self.params[off + n_in * n_out..off + n_in * n_out + n_out]
                .iter()
                .map(|x| format!("{x:e}"))
                .collect();
            let _ = writeln!(s, "bias {}", join(&bias));
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let err = |line: usize, reason: &str| Error::Checkpoint {
            line: line + 1,
            reason: reason.to_string(),
        };
        let parse_floats = |line: usize, toks: &[&str]| -> Result<Vec<f64>> {
            toks.iter()
                .map(|t| t.parse::<f64>().map_err(|_| err(line, &format!("bad number {t:?}"))))
                .collect()
        };
        let mut next = |what: &str| lines.next().ok_or_else(|| err(usize::MAX - 1, &format!("missing {what}")));

        let (ln, header) = next("header")?;
        if header.trim() != "afddim-mlp 1" {
            return Err(err(ln, "unknown header or version"));
        }
        let (ln, l) = next("widths")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.first() != Some(&"widths") {
            return Err(err(ln, "expected widths"));
        }
        let widths: Vec<usize> = toks[1..]
            .iter()
            .map(|t| t.parse().map_err(|_| err(ln, "bad width")))
            .collect::<Result<_>>()?;
        if widths.len() < 2 || widths[0] != INPUT_DIM || *widths.last().unwrap() != 2 {
            return Err(err(ln, "widths must start at the input dimension and end at 2"));
        }
        let (ln, l) = next("amplitude")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let amplitude = match toks.as_slice() {
            ["amplitude", a] => a.parse::<f64>().map_err(|_| err(ln, "bad amplitude"))?,
            _ => return Err(err(ln, "expected amplitude")),
        };
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(err(ln, "amplitude must be positive"));
        }
        let (ln, l) = next("step_lambdas")?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() < 2 || toks[0] != "step_lambdas" {
            return Err(err(ln, "expected step_lambdas"));
        }
        let count: usize = toks[1].parse().map_err(|_| err(ln, "bad count"))?;
        let step_lambdas = parse_floats(ln, &toks[2..])?;
        if step_lambdas.len() != count {
            return Err(err(ln, "step_lambdas count mismatch"));
        }

        let mut params = Vec::new();
        for (li, w) in widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let (ln, l) = next("layer header")?;
            if l.split_whitespace().collect::<Vec<_>>() != ["layer", &li.to_string(), &n_out.to_string(), &n_in.to_string()] {
                return Err(err(ln, "layer header does not match widths"));
            }
            for _ in 0..n_out {
                let (ln, l) = next("weight row")?;
                let row = parse_floats(ln, &l.split_whitespace().collect::<Vec<_>>())?;
                if row.len() != n_in {
                    return Err(err(ln, "weight row has wrong length"));
                }
                params.extend(row);
            }
            let (ln, l) = next("bias")?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.first() != Some(&"bias") {
                return Err(err(ln, "expected bias"));
            }
            let bias = parse_floats(ln, &toks[1..])?;
            if bias.len() != n_out {
                return Err(err(ln, "bias has wrong length"));
            }
            params.extend(bias);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(err(0, "non-finite parameter"));
        }
        Ok(Self {
            widths,
            params,
            amplitude,
            step_lambdas,
        })
    }
}

/// Largest per-axis level of a constellation; bounds the network's clean estimate.
pub fn output_amplitude(constellation: &Constellation) -> f64 {
    constellation
        .points()
        .iter()
        .map(|p| p.re.abs().max(p.im.abs()))
        .fold(0.0, f64::max)
}

/// `(x_t − √ᾱ·r)/σ`, or zero when `σ = 0`.
pub fn epsilon_from_clean(x_t: Complex64, r: Complex64, abar: f64, sigma: f64) -> Complex64 {
    if sigma > 0.0 {
        (x_t - r * abar.sqrt()) / sigma
    } else {
        Complex64::new(0.0, 0.0)
    }
}

fn mlp_clean(model: &MlpDenoiser, query: &DenoiserQuery) -> Complex64 {
    let t = model.map_step(query.t, query.lambda_t);
    model.forward_features(&features(query.x_t, t, query.lambda_t))
}

/// Deterministic forward pass of the learned denoiser.
pub fn mlp_epsilon(model: &MlpDenoiser, query: &DenoiserQuery) -> Complex64 {
    epsilon_from_clean(query.x_t, mlp_clean(model, query), query.abar_t, query.sigma_t)
}

impl Denoiser for MlpDenoiser {
    fn predict(&self, query: &DenoiserQuery) -> Prediction {
        let r = mlp_clean(self, query);
        Prediction {
            epsilon: epsilon_from_clean(query.x_t, r, query.abar_t, query.sigma_t),
            x0: Some(r),
        }
    }
}

/// One supervised example: a forward state and the noise that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub x0: Complex64,
    pub x_t: Complex64,
    pub t: usize,
    pub abar_t: f64,
    pub target_eps: Complex64,
    pub mu: Complex64,
    pub v: f64,
}

impl TrainingSample {
    /// `√ᾱ·x0 + √(1-ᾱ)·ε`, the state implied by the recorded noise.
    pub fn regenerate(&self) -> Complex64 {
        self.x0 * self.abar_t.sqrt() + self.target_eps * (1.0 - self.abar_t).sqrt()
    }
}

/// Distribution over relay chains used to generate training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSpace {
    pub hops: usize,
    pub template: HopConfig,
    /// End-to-end (or per-hop, see `axis`) SNR range in dB, drawn uniformly.
    pub snr_db_range: (f64, f64),
    #[serde(default)]
    pub axis: SnrAxis,
}

impl ChainSpace {
    pub fn awgn(hops: usize, snr_db_range: (f64, f64)) -> Self {
        Self {
            hops,
            template: HopConfig::awgn(1.0),
            snr_db_range,
            axis: SnrAxis::EndToEnd,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<HopConfig>> {
        if self.hops == 0 {
            return Err(Error::Config("chain space needs at least one hop".into()));
        }
        let (lo, hi) = self.snr_db_range;
        let snr_db = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let mut hops = vec![self.template; self.hops];
        channel::calibrate_noise(&mut hops, channel::db_to_linear(snr_db), self.axis, 1.0)?;
        Ok(hops)
    }
}

/// Forward samples from random partial chains.
///
/// Each sample draws a chain, a hop index `t ∈ {1..H}`, and a source symbol,
/// propagates it through the first `t` hops, and records the VP state implied
/// by the partial-chain statistics together with its unit-variance noise.
pub fn generate_training_set<R: Rng + ?Sized>(
    space: &ChainSpace,
    constellation: &Constellation,
    count: usize,
    rng: &mut R,
) -> Result<Vec<TrainingSample>> {
    if count == 0 {
        return Err(Error::InvalidArgument("training set must be non-empty".into()));
    }
    let master: u64 = rng.random();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(derive_seed(master, &[i as u64]));
            training_sample(space, constellation, &mut rng)
        })
        .collect()
}

fn training_sample(space: &ChainSpace, constellation: &Constellation, rng: &mut SimRng) -> Result<TrainingSample> {
    let hops = space.sample(rng)?;
    let t = rng.random_range(1..=space.hops);
    let realized = channel::realize_chain(&hops[..t], 1.0, rng)?;
    let stats = channel::chain_stats(&realized);
    let x0 = constellation.point(rng.random_range(0..constellation.order()));
    let mut y = [x0];
    channel::apply_chain(&mut y, &realized, rng);
    Ok(vp_sample(x0, y[0], t, &stats))
}

/// Maps an observation `y = μ·x0 + n` to its VP state. The noise is taken from
/// `n` and the state rebuilt from it, so [`TrainingSample::regenerate`] holds
/// by construction.
pub fn vp_sample(x0: Complex64, y: Complex64, t: usize, stats: &SufficientStats) -> TrainingSample {
    let abar = abar_from_snr(stats.snr_eq());
    let sigma = (1.0 - abar).sqrt();
    let target_eps = if sigma > 0.0 {
        (y - stats.mu * x0) * abar.sqrt() / (stats.mu * sigma)
    } else {
        Complex64::new(0.0, 0.0)
    };
    let mut s = TrainingSample {
        x0,
        x_t: Complex64::new(0.0, 0.0),
        t,
        abar_t: abar,
        target_eps,
        mu: stats.mu,
        v: stats.v,
    };
    s.x_t = s.regenerate();
    s
}

/// AdamW settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Minimizes the mean `|ε_θ − Z|²` with AdamW. Single-threaded and
/// deterministic given `rng`.
pub fn train<R: Rng + ?Sized>(
    model: &mut MlpDenoiser,
    data: &[TrainingSample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch size must be >= 1".into()));
    }

    let n = model.params.len();
    let mut grad = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i]));
            let loss = model.batch_loss(&batch, Some(&mut grad));
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, loss });
            }
            total += loss * batch.len() as f64;

            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(step as i32);
            for i in 0..n {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let p = &mut model.params[i];
                *p *= 1.0 - cfg.learning_rate * cfg.weight_decay;
                *p -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            }
        }
        epoch_losses.push(total / data.len() as f64);
    }

    model.step_lambdas = step_lambda_means(data);
    Ok(TrainReport { epoch_losses, steps: step })
}

fn step_lambda_means(data: &[TrainingSample]) -> Vec<f64> {
    let max_t = data.iter().map(|s| s.t).max().unwrap_or(0);
    let mut sums = vec![0.0; max_t];
    let mut counts = vec![0usize; max_t];
    for s in data {
        let l = log_snr(s.abar_t).clamp(-LAMBDA_CLAMP, LAMBDA_CLAMP);
        sums[s.t - 1] += l;
        counts[s.t - 1] += 1;
    }
    let mut out: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    // Indices never drawn inherit their neighbour so lookups stay total.
    for i in 0..out.len() {
        if out[i].is_nan() {
            out[i] = out[..i].iter().rev().chain(&out[i + 1..]).copied().find(|x| !x.is_nan()).unwrap_or(0.0);
        }
    }
    out
}
