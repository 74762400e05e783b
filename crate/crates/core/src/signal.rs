//! Square QAM constellations with Gray labels, symbol blocks, and error metrics.

use num_complex::Complex64;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::{Error, Result};

/// Orders accepted by [`Constellation::square_qam`].
pub const SUPPORTED_ORDERS: [usize; 4] = [4, 16, 64, 256];

/// A finite input alphabet with Gray bit labels and a prior.
///
/// Square QAM points are indexed as `i * side + q`, where `i` and `q` are the
/// in-phase and quadrature level indices (0 is the most negative level).
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    labels: Vec<u32>,
    prior: Vec<f64>,
    bits_per_symbol: u32,
}

fn gray(n: u32) -> u32 {
    n ^ (n >> 1)
}

impl Constellation {
    /// Unit-power square M-QAM with a uniform prior.
    pub fn square_qam(order: usize) -> Result<Self> {
        if !SUPPORTED_ORDERS.contains(&order) {
            return Err(Error::Config(format!(
                "unsupported QAM order {order}; expected one of {SUPPORTED_ORDERS:?}"
            )));
        }
        let side = (order as f64).sqrt().round() as usize;
        let half_bits = side.trailing_zeros();
        // Uniform square QAM with levels ±1, ±3, ... has E|x|² = 2(M-1)/3.
        let scale = (3.0 / (2.0 * (order as f64 - 1.0))).sqrt();
        let level = |idx: usize| (2.0 * idx as f64 - (side as f64 - 1.0)) * scale;

        let mut points = Vec::with_capacity(order);
        let mut labels = Vec::with_capacity(order);
        for i in 0..side {
            for q in 0..side {
                points.push(Complex64::new(level(i), level(q)));
                labels.push((gray(i as u32) << half_bits) | gray(q as u32));
            }
        }
        Ok(Self {
            points,
            labels,
            prior: vec![1.0 / order as f64; order],
            bits_per_symbol: 2 * half_bits,
        })
    }

    /// Arbitrary alphabet. The prior must be a probability vector; power is not
    /// normalized.
    pub fn from_parts(points: Vec<Complex64>, labels: Vec<u32>, prior: Vec<f64>) -> Result<Self> {
        let m = points.len();
        if m == 0 {
            return Err(Error::Config("empty constellation".into()));
        }
        if labels.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                actual: labels.len(),
            });
        }
        validate_prior(&prior, m)?;
        let bits_per_symbol = (m as f64).log2().ceil() as u32;
        Ok(Self {
            points,
            labels,
            prior,
            bits_per_symbol,
        })
    }

    /// Replaces the prior and rescales the points so the average power under
    /// the new prior is one.
    pub fn with_prior(mut self, prior: Vec<f64>) -> Result<Self> {
        validate_prior(&prior, self.points.len())?;
        self.prior = prior;
        let power = self.average_power();
        if power > 0.0 {
            let s = power.sqrt().recip();
            for p in &mut self.points {
                *p *= s;
            }
        }
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.bits_per_symbol
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    pub fn average_power(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.prior)
            .map(|(x, p)| p * x.norm_sqr())
            .sum()
    }

    pub fn mean(&self) -> Complex64 {
        self.points
            .iter()
            .zip(&self.prior)
            .map(|(x, p)| x * p)
            .sum()
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.order() as f64;
        self.prior.iter().all(|&p| (p - u).abs() < 1e-15)
    }

    /// Minimum-distance decision; ties go to the lowest index.
    pub fn nearest(&self, x: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (x - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Bit flips between the labels of two symbols.
    pub fn bit_distance(&self, a: usize, b: usize) -> u32 {
        (self.labels[a] ^ self.labels[b]).count_ones()
    }
}

fn validate_prior(prior: &[f64], m: usize) -> Result<()> {
    if prior.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            actual: prior.len(),
        });
    }
    if prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Config("prior has negative or non-finite entries".into()));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("prior sums to {total}, not 1")));
    }
    Ok(())
}

/// A flat block of `side * side` complex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    pub samples: Vec<Complex64>,
    pub side: usize,
    pub symbol_indices: Option<Vec<usize>>,
}

impl SymbolBlock {
    pub fn new(samples: Vec<Complex64>, side: usize) -> Result<Self> {
        if side == 0 || samples.len() != side * side {
            return Err(Error::LengthMismatch {
                expected: side * side,
                actual: samples.len(),
            });
        }
        Ok(Self {
            samples,
            side,
            symbol_indices: None,
        })
    }

    /// A block built from constellation indices, with the indices recorded.
    pub fn from_indices(constellation: &Constellation, indices: Vec<usize>, side: usize) -> Result<Self> {
        let samples = indices.iter().map(|&i| constellation.point(i)).collect();
        let mut block = Self::new(samples, side)?;
        block.symbol_indices = Some(indices);
        Ok(block)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same geometry, new samples, no symbol indices.
    pub fn with_samples(&self, samples: Vec<Complex64>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        Self {
            samples,
            side: self.side,
            symbol_indices: None,
        }
    }

    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|x| x.norm_sqr()).sum::<f64>() / self.len() as f64
    }
}

/// Draws an `n × n` block of i.i.d. symbols from the constellation prior.
pub fn draw_block<R: Rng + ?Sized>(constellation: &Constellation, n: usize, rng: &mut R) -> Result<SymbolBlock> {
    if n == 0 {
        return Err(Error::InvalidArgument("block side must be at least 1".into()));
    }
    let len = n * n;
    let m = constellation.order();
    let indices: Vec<usize> = if constellation.is_uniform() {
        (0..len).map(|_| rng.random_range(0..m)).collect()
    } else {
        let dist = WeightedIndex::new(constellation.prior())
            .map_err(|e| Error::Config(format!("bad prior: {e}")))?;
        (0..len).map(|_| dist.sample(rng)).collect()
    };
    SymbolBlock::from_indices(constellation, indices, n)
}

/// MSE, SER, and BER for one comparison or an aggregate of many.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub mse: f64,
    pub ser: f64,
    pub ber: f64,
    /// Number of symbols compared.
    pub trials: u64,
}

/// Running error counts; merge tallies from independent trials, then report.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorTally {
    pub squared_error: f64,
    /// `Σ|e|⁴`, for the standard error of the MSE.
    pub squared_error_sq: f64,
    pub symbol_errors: u64,
    pub bit_errors: u64,
    pub symbols: u64,
    pub bits: u64,
}

impl ErrorTally {
    pub fn merge(&mut self, other: &ErrorTally) {
        self.squared_error += other.squared_error;
        self.squared_error_sq += other.squared_error_sq;
        self.symbol_errors += other.symbol_errors;
        self.bit_errors += other.bit_errors;
        self.symbols += other.symbols;
        self.bits += other.bits;
    }

    pub fn report(&self) -> ErrorReport {
        let n = self.symbols.max(1) as f64;
        ErrorReport {
            mse: self.squared_error / n,
            ser: self.symbol_errors as f64 / n,
            ber: self.bit_errors as f64 / self.bits.max(1) as f64,
            trials: self.symbols,
        }
    }

    /// Standard error of the MSE estimate.
    pub fn mse_stderr(&self) -> f64 {
        if self.symbols < 2 {
            return f64::INFINITY;
        }
        let n = self.symbols as f64;
        let mean = self.squared_error / n;
        let var = (self.squared_error_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    }

    /// Binomial standard error of the SER estimate.
    pub fn ser_stderr(&self) -> f64 {
        if self.symbols == 0 {
            return f64::INFINITY;
        }
        let n = self.symbols as f64;
        let p = self.symbol_errors as f64 / n;
        (p * (1.0 - p) / n).sqrt()
    }
}

/// Counts errors of `estimate` against `truth`. Hard decisions are taken on
/// the estimate; MSE is on the soft values.
pub fn tally_errors(truth: &SymbolBlock, estimate: &SymbolBlock, constellation: &Constellation) -> Result<ErrorTally> {
    if truth.len() != estimate.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: estimate.len(),
        });
    }
    let indices = truth
        .symbol_indices
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("truth block carries no symbol indices".into()))?;

    let mut tally = ErrorTally {
        symbols: truth.len() as u64,
        bits: truth.len() as u64 * constellation.bits_per_symbol() as u64,
        ..Default::default()
    };
    for ((t, e), &sent) in truth.samples.iter().zip(&estimate.samples).zip(indices) {
        let se = (t - e).norm_sqr();
        tally.squared_error += se;
        tally.squared_error_sq += se * se;
        let decided = constellation.nearest(*e);
        if decided != sent {
            tally.symbol_errors += 1;
            tally.bit_errors += constellation.bit_distance(decided, sent) as u64;
        }
    }
    Ok(tally)
}

pub fn compute_errors(truth: &SymbolBlock, estimate: &SymbolBlock, constellation: &Constellation) -> Result<ErrorReport> {
    tally_errors(truth, estimate, constellation).map(|t| t.report())
}
