//! Roots of the one-dimensional balanced sample EM equation `θ = Mₙ(θ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_sigma, Error, Result};
use crate::models::{derive_stream, sample_mixture, trial_key, Dataset, TrueModel};

/// Scan step as a fraction of `θ_max`.
pub const SCAN_FRACTION: f64 = 1e-3;
pub const BISECTION_TOL: f64 = 1e-12;

/// `g(θ) = (1/n) Σ xᵢ tanh(θxᵢ/σ²) − θ`.
pub fn fixed_point_gap(theta: f64, data: &[f64], sigma: f64) -> f64 {
    let k = theta / (sigma * sigma);
    data.iter().map(|&x| x * (k * x).tanh()).sum::<f64>() / data.len() as f64 - theta
}

/// Positive roots of `g` in `(0, θ_max]`, `θ_max = max|xᵢ| + 1`, sorted
/// ascending. Negative roots are their mirror images.
pub fn find_nonzero_fixed_points(data: &Dataset, sigma: f64) -> Result<Vec<f64>> {
    find_with_step(data, sigma, SCAN_FRACTION)
}

/// As [`find_nonzero_fixed_points`] with a custom relative scan step.
pub fn find_with_step(data: &Dataset, sigma: f64, fraction: f64) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    if data.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: data.dim(),
        });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "scan fraction must lie in (0, 1)".into(),
        ));
    }
    let xs = data.points();
    let s2 = sigma * sigma;
    let second = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64 / s2;
    // x·tanh(θx) < θx² for θ > 0, so g(θ) < θ(second − 1): no root unless
    // the scaled second moment exceeds one
    if second <= 1.0 {
        return Ok(Vec::new());
    }
    let theta_max = xs.iter().fold(0.0_f64, |m, x| m.max(x.abs())) + 1.0;
    let h = fraction * theta_max;
    let steps = (theta_max / h).round() as usize;
    let g = |t: f64| fixed_point_gap(t, xs, sigma);

    // sign just right of zero is the sign of g′(0) = second − 1 > 0
    let mut prev_t = 0.0;
    let mut prev_g = f64::MIN_POSITIVE;
    let mut roots = Vec::new();
    for i in 1..=steps {
        let t = if i == steps { theta_max } else { i as f64 * h };
        let gt = g(t);
        if gt == 0.0 {
            roots.push(t);
        } else if prev_g != 0.0 && (gt > 0.0) != (prev_g > 0.0) {
            roots.push(bisect(&g, prev_t, t, prev_g));
        }
        prev_t = t;
        prev_g = gt;
    }
    Ok(roots)
}

fn bisect<G: Fn(f64) -> f64>(g: &G, mut lo: f64, mut hi: f64, g_lo: f64) -> f64 {
    let lo_positive = g_lo > 0.0;
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointRow {
    pub n: usize,
    pub trials: usize,
    /// Trials with at least one positive root.
    pub nonzero: usize,
    pub frequency: f64,
    /// Median of `θ̂ₙ·n^{1/4}` over trials with a root (`None` if none).
    pub median_scaled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointTable {
    pub rows: Vec<FixedPointRow>,
    /// Largest positive root per `(n, trial)`, 0 when there is none.
    pub largest_roots: Vec<(usize, usize, f64)>,
}

/// For each `n`, draws `trials` datasets from `N(0, 1)` and records the
/// largest positive fixed point of the balanced sample EM map.
pub fn fixed_point_scaling_experiment(
    n_list: &[usize],
    trials: usize,
    master_seed: u64,
) -> Result<FixedPointTable> {
    if trials == 0 {
        return Err(Error::NoTrials);
    }
    if n_list.is_empty() {
        return Err(Error::Config("n list is empty".into()));
    }
    if let Some(n) = n_list.iter().find(|&&n| n < 10) {
        return Err(Error::Config(format!(
            "each n must be at least 10, got {n}"
        )));
    }
    let model = TrueModel::null(1);
    let mut rows = Vec::with_capacity(n_list.len());
    let mut largest_roots = Vec::with_capacity(n_list.len() * trials);
    for &n in n_list {
        let roots = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut stream = derive_stream(master_seed, trial_key(n as u64, 1, t as u64));
                let data = sample_mixture(&model, n, &mut stream)?;
                let found = find_nonzero_fixed_points(&data, 1.0)?;
                Ok(found.last().copied().unwrap_or(0.0))
            })
            .collect::<Result<Vec<f64>>>()?;
        let scale = (n as f64).powf(0.25);
        let mut scaled: Vec<f64> = roots
            .iter()
            .filter(|&&r| r > 0.0)
            .map(|r| r * scale)
            .collect();
        scaled.sort_by(f64::total_cmp);
        rows.push(FixedPointRow {
            n,
            trials,
            nonzero: scaled.len(),
            frequency: scaled.len() as f64 / trials as f64,
            median_scaled: median(&scaled),
        });
        largest_roots.extend(roots.iter().enumerate().map(|(t, &r)| (n, t, r)));
    }
    Ok(FixedPointTable {
        rows,
        largest_roots,
    })
}

fn median(sorted: &[f64]) -> Option<f64> {
    let k = sorted.len();
    match k {
        0 => None,
        _ if k % 2 == 1 => Some(sorted[k / 2]),
        _ => Some(0.5 * (sorted[k / 2 - 1] + sorted[k / 2])),
    }
}
