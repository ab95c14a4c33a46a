//! Closed-form quantities: contraction envelopes, the epoch recursion and
//! its iteration budget, Fisher information, tanh polynomial bounds, and
//! population/sample log-likelihoods of the symmetric two-component fit.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use serde::Serialize;
use statrs::function::erf::erf;

use crate::error::{check_sigma, check_weight, Error, Result};
use crate::models::Dataset;
use crate::quadrature::QuadratureRule;

/// Value `p` is expected to take; used to catch CDF regressions.
pub const P_REFERENCE: f64 = 0.841_345;

/// `p = P(|Z| ≤ 1) + ½ P(|Z| > 1) = (1 + P(|Z| ≤ 1)) / 2` for standard normal `Z`.
pub fn p_constant() -> f64 {
    static P: OnceLock<f64> = OnceLock::new();
    *P.get_or_init(|| {
        let inside = erf(1.0 / SQRT_2);
        0.5 * (1.0 + inside)
    })
}

/// Upper envelope of `‖M(θ)‖ / ‖θ‖` for the balanced fit.
pub fn gamma_up(theta_norm: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(theta_norm > 0.0) || !theta_norm.is_finite() {
        return Err(Error::Domain(format!(
            "gamma_up needs ‖θ‖ > 0, got {theta_norm}"
        )));
    }
    let p = p_constant();
    Ok(1.0 - p + p / (1.0 + theta_norm * theta_norm / (2.0 * sigma * sigma)))
}

/// Lower envelope of `‖M(θ)‖ / ‖θ‖`, valid for `0 < ‖θ‖² ≤ 5σ²/8`.
pub fn gamma_low(theta_norm: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(theta_norm > 0.0) || theta_norm * theta_norm > 5.0 * sigma * sigma / 8.0 * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "gamma_low needs 0 < ‖θ‖² ≤ 5σ²/8, got ‖θ‖ = {theta_norm}"
        )));
    }
    Ok(1.0 / (1.0 + 2.0 * theta_norm * theta_norm / (sigma * sigma)))
}

/// Geometric contraction factor `1 − ρ²/2`, `ρ = |1 − 2π|`, of the
/// unbalanced fit.
pub fn unbalanced_contraction(pi: f64) -> Result<f64> {
    check_weight(pi)?;
    if pi == 0.5 {
        return Err(Error::Domain(
            "the balanced fit (π = ½) is not contractive".into(),
        ));
    }
    let rho = (1.0 - 2.0 * pi).abs();
    Ok(1.0 - rho * rho / 2.0)
}

/// `α₀ = 0, α_{ℓ+1} = α_ℓ/3 + 1/6`; returns `α₀ ..= α_L`.
pub fn alpha_sequence(steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("alpha_sequence needs L >= 1".into()));
    }
    let mut alphas = Vec::with_capacity(steps + 1);
    let mut a = 0.0;
    alphas.push(a);
    for _ in 0..steps {
        a = a / 3.0 + 1.0 / 6.0;
        alphas.push(a);
    }
    Ok(alphas)
}

/// Number of epochs `ℓ_ε = ⌈log(4/ε)/log 3⌉ + 1`.
pub fn epoch_count(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(Error::Domain(format!(
            "epsilon must lie in (0, 1/4), got {epsilon}"
        )));
    }
    Ok(((4.0 / epsilon).ln() / 3f64.ln()).ceil() as usize + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSchedule {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub theta0_norm: f64,
    pub omega: f64,
    /// `α₀ ..= α_{ℓ_ε}`.
    pub alphas: Vec<f64>,
    /// `t₀ .. t_{ℓ_ε − 1}`.
    pub epoch_lengths: Vec<u64>,
    /// `T_ℓ = Σ_{j ≤ ℓ} t_j`.
    pub cumulative: Vec<u64>,
}

impl EpochSchedule {
    pub fn epochs(&self) -> usize {
        self.epoch_lengths.len()
    }

    /// Radius `√2 σ ω^{α_ℓ}` of the ℓ-th annulus.
    pub fn radius(&self, level: usize) -> f64 {
        SQRT_2 * self.sigma * self.omega.powf(self.alphas[level])
    }
}

pub fn epoch_schedule(
    n: usize,
    d: usize,
    sigma: f64,
    delta: f64,
    epsilon: f64,
    theta0_norm: f64,
) -> Result<EpochSchedule> {
    check_sigma(sigma)?;
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(theta0_norm > 0.0) || !theta0_norm.is_finite() {
        return Err(Error::Domain(format!(
            "‖θ⁰‖ must be positive, got {theta0_norm}"
        )));
    }
    let levels = epoch_count(epsilon)?;
    let omega = sigma * sigma * (d as f64 + ((2 * levels + 1) as f64 / delta).ln()) / n as f64;
    if omega > 1.0 {
        return Err(Error::BelowTheoryThreshold { omega });
    }
    let p = p_constant();
    let alphas = alpha_sequence(levels)?;
    let mut lengths = Vec::with_capacity(levels);
    let t0 = (2.0 / p * (theta0_norm / (SQRT_2 * sigma * omega.sqrt())).ln()).ceil();
    lengths.push(t0.max(0.0) as u64);
    for level in 1..levels {
        let t = (2.0 / (p * omega.powf(2.0 * alphas[level + 1])) * (1.0 / omega).ln()).ceil();
        lengths.push(t.max(0.0) as u64);
    }
    let cumulative = lengths
        .iter()
        .scan(0u64, |acc, &t| {
            *acc += t;
            Some(*acc)
        })
        .collect();
    Ok(EpochSchedule {
        n,
        d,
        sigma,
        delta,
        epsilon,
        theta0_norm,
        omega,
        alphas,
        epoch_lengths: lengths,
        cumulative,
    })
}

/// Fisher information of the symmetric fit at `θ* = 0`: `β = 1 − 4π(1 − π)`.
pub fn fisher_beta(pi: f64) -> Result<f64> {
    check_weight(pi)?;
    Ok(1.0 - 4.0 * pi * (1.0 - pi))
}

/// Checks `y·tanh(y) ≥ y² − y⁴/3` and `y·tanh(y) ≤ y² − y⁴/3 + 2y⁶/15`,
/// up to a few ulps of `y²` of rounding slack.
pub fn tanh_bounds_check(y: f64) -> (bool, bool) {
    let lhs = y * y.tanh();
    let y2 = y * y;
    let lower = y2 - y2 * y2 / 3.0;
    let upper = lower + 2.0 * y2 * y2 * y2 / 15.0;
    let slack = 8.0 * f64::EPSILON * y2;
    (lhs >= lower - slack, lhs <= upper + slack)
}

fn log_mix(pi: f64, a: f64) -> f64 {
    // log(π e^{a} + (1 − π) e^{−a})
    let hi = a.abs();
    let (p_hi, p_lo) = if a >= 0.0 {
        (pi, 1.0 - pi)
    } else {
        (1.0 - pi, pi)
    };
    hi + (p_hi + p_lo * (-2.0 * hi).exp()).ln()
}

/// Population log-likelihood of the symmetric fit under `N(0, σ² I_d)`
/// data, as a function of the signed norm `θ` (a negative value means the
/// location points the other way along a fixed axis).
pub fn pop_loglik(theta: f64, pi: f64, sigma: f64, d: usize) -> Result<f64> {
    pop_loglik_with(
        theta,
        pi,
        sigma,
        d,
        QuadratureRule::for_sharpness(theta / sigma).as_ref(),
    )
}

pub fn pop_loglik_with(
    theta: f64,
    pi: f64,
    sigma: f64,
    d: usize,
    rule: &QuadratureRule,
) -> Result<f64> {
    check_sigma(sigma)?;
    check_weight(pi)?;
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    let df = d as f64;
    // ‖x ∓ θ‖² = ‖x‖² ∓ 2θᵀx + ‖θ‖², θᵀX = θσV with V ~ N(0, 1)
    let base = -0.5 * df * (2.0 * PI * sigma * sigma).ln()
        - 0.5 * df
        - theta * theta / (2.0 * sigma * sigma);
    let mixed = rule.expect1d(|v| log_mix(pi, theta * v / sigma))?;
    Ok(base + mixed)
}

/// Empirical average log density of the symmetric fit.
pub fn sample_loglik(theta: &[f64], pi: f64, data: &Dataset, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    check_weight(pi)?;
    if theta.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: theta.len(),
        });
    }
    let s2 = sigma * sigma;
    let df = data.dim() as f64;
    let t2: f64 = theta.iter().map(|t| t * t).sum();
    let mut acc = 0.0;
    for x in data.rows() {
        let x2: f64 = x.iter().map(|v| v * v).sum();
        let dot: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        acc += -(x2 + t2) / (2.0 * s2) + log_mix(pi, dot / s2);
    }
    Ok(acc / data.n() as f64 - 0.5 * df * (2.0 * PI * s2).ln())
}

/// Grid scan of the population log-likelihood over `[−3σ, 3σ]`.
#[derive(Debug, Clone, Serialize)]
pub struct LoglikScan {
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    /// Grid points whose value equals the maximum (to 1e-15 relative).
    pub argmax: Vec<f64>,
}

pub fn pop_loglik_scan(pi: f64, sigma: f64, d: usize, step: f64) -> Result<LoglikScan> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("grid step must be positive".into()));
    }
    let count = (3.0 * sigma / step).round() as i64;
    let thetas: Vec<f64> = (-count..=count).map(|i| i as f64 * step).collect();
    let values = thetas
        .iter()
        .map(|&t| pop_loglik(t, pi, sigma, d))
        .collect::<Result<Vec<_>>>()?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-15 * best.abs();
    let argmax = thetas
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v >= best - tol)
        .map(|(&t, _)| t)
        .collect();
    Ok(LoglikScan {
        thetas,
        values,
        argmax,
    })
}
