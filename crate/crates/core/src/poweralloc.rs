//! Relay power allocation maximizing the end-to-end signal fraction.
//!
//! Maximizes `Σ ln(c_t·P_t / (1 + c_t·P_t))` subject to `Σ P_t ≤ P_tot` and
//! `0 ≤ P_t ≤ P_max,t`. The objective is `ln ᾱ_H²` of the induced chain and is
//! strictly concave, so the KKT point is unique: every interior relay shares
//! the marginal `1/(P(1 + cP)) = μ`. The multiplier is found by bisection.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MAX_ITERATIONS: usize = 200;
const BUDGET_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    /// Channel-to-noise ratios `|h_t|²/σ_t²`.
    pub c: Vec<f64>,
    pub p_total: f64,
    /// Per-relay caps; `f64::INFINITY` for none.
    pub p_max: Vec<f64>,
}

impl AllocationProblem {
    pub fn new(c: Vec<f64>, p_total: f64, p_max: Vec<f64>) -> Result<Self> {
        let problem = Self { c, p_total, p_max };
        problem.validate()?;
        Ok(problem)
    }

    pub fn uncapped(c: Vec<f64>, p_total: f64) -> Result<Self> {
        let n = c.len();
        Self::new(c, p_total, vec![f64::INFINITY; n])
    }

    pub fn validate(&self) -> Result<()> {
        if self.c.is_empty() {
            return Err(Error::Config("allocation needs at least one relay".into()));
        }
        if self.c.len() != self.p_max.len() {
            return Err(Error::LengthMismatch {
                expected: self.c.len(),
                actual: self.p_max.len(),
            });
        }
        if self.c.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config("channel-to-noise ratios must be finite and > 0".into()));
        }
        if self.p_max.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config("relay caps must be > 0".into()));
        }
        Ok(())
    }

    pub fn relays(&self) -> usize {
        self.c.len()
    }

    /// True when the budget covers every cap, so all relays sit at their caps.
    pub fn budget_exceeds_caps(&self) -> bool {
        self.p_max.iter().sum::<f64>() <= self.p_total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationResult {
    pub p: Vec<f64>,
    /// KKT multiplier of the budget constraint.
    pub mu: f64,
    pub objective: f64,
    /// Largest relative deviation of an interior relay's marginal from `mu`.
    pub kkt_residual: f64,
}

/// `Σ ln(c·p/(1+c·p))`; `-∞` if any `p_t ≤ 0`.
pub fn objective(problem: &AllocationProblem, p: &[f64]) -> f64 {
    if p.iter().any(|&x| !(x > 0.0)) {
        return f64::NEG_INFINITY;
    }
    problem
        .c
        .iter()
        .zip(p)
        .map(|(&c, &x)| {
            let s = c * x;
            (s / (1.0 + s)).ln()
        })
        .sum()
}

/// Marginal gain `d/dP ln(cP/(1+cP)) = 1/(P(1+cP))`.
pub fn marginal(c: f64, p: f64) -> f64 {
    1.0 / (p * (1.0 + c * p))
}

/// Positive root of `P(1 + cP) = 1/μ`.
pub fn p_of_mu(c: f64, mu: f64) -> f64 {
    // (√(1+4c/μ) − 1)/(2c), rewritten to avoid cancellation when 4c/μ is small.
    let q = 4.0 * c / mu;
    (2.0 / mu) / ((1.0 + q).sqrt() + 1.0)
}

fn allocation_at(problem: &AllocationProblem, mu: f64) -> Vec<f64> {
    problem
        .c
        .iter()
        .zip(&problem.p_max)
        .map(|(&c, &cap)| p_of_mu(c, mu).min(cap))
        .collect()
}

pub fn solve(problem: &AllocationProblem) -> Result<AllocationResult> {
    problem.validate()?;
    if !(problem.p_total.is_finite() && problem.p_total > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "power budget must be finite and > 0, got {}",
            problem.p_total
        )));
    }

    if problem.budget_exceeds_caps() {
        let p = problem.p_max.clone();
        // Smallest marginal among the capped relays bounds the multiplier.
        let mu = problem
            .c
            .iter()
            .zip(&p)
            .map(|(&c, &x)| marginal(c, x))
            .fold(f64::INFINITY, f64::min);
        return Ok(finish(problem, p, mu));
    }

    let t = problem.relays() as f64;
    let equal = problem.p_total / t;
    if problem.c.iter().all(|&c| c == problem.c[0]) && problem.p_max.iter().all(|&cap| cap >= equal) {
        let mu = marginal(problem.c[0], equal);
        return Ok(finish(problem, vec![equal; problem.relays()], mu));
    }
    let c_min = problem.c.iter().copied().fold(f64::INFINITY, f64::min);
    // At mu_hi every relay gets at most p_total/T, so the budget is slack.
    let mut mu_hi = marginal(c_min, problem.p_total / t);
    let mut mu_lo = mu_hi * 1e-12;
    let total_at = |mu: f64| allocation_at(problem, mu).iter().sum::<f64>();
    while total_at(mu_lo) < problem.p_total {
        mu_lo *= 1e-6;
    }
    while total_at(mu_hi) > problem.p_total {
        mu_hi *= 2.0;
    }

    let mut mu = (mu_lo * mu_hi).sqrt();
    for _ in 0..MAX_ITERATIONS {
        mu = (mu_lo * mu_hi).sqrt();
        let excess = total_at(mu) - problem.p_total;
        if excess == 0.0 {
            break;
        }
        if excess > 0.0 {
            mu_lo = mu;
        } else {
            mu_hi = mu;
        }
        if mu_hi / mu_lo - 1.0 < 4.0 * f64::EPSILON {
            break;
        }
    }
    let p = allocation_at(problem, mu);
    let spent: f64 = p.iter().sum();
    if (spent - problem.p_total).abs() > BUDGET_REL_TOL * problem.p_total {
        return Err(Error::InvalidArgument(format!(
            "bisection stalled: spent {spent} of budget {}",
            problem.p_total
        )));
    }
    Ok(finish(problem, p, mu))
}

fn finish(problem: &AllocationProblem, p: Vec<f64>, mu: f64) -> AllocationResult {
    let kkt_residual = problem
        .c
        .iter()
        .zip(&p)
        .zip(&problem.p_max)
        .filter(|((_, &x), &cap)| x < cap)
        .map(|((&c, &x), _)| (marginal(c, x) - mu).abs() / mu)
        .fold(0.0, f64::max);
    AllocationResult {
        objective: objective(problem, &p),
        p,
        mu,
        kkt_residual,
    }
}
