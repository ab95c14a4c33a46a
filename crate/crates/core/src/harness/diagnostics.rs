use rayon::prelude::*;
use serde::Serialize;

use crate::em_population::symmetric_radial;
use crate::em_sample::{run_em, sample_em_symmetric_step, EmRunConfig, Init};
use crate::error::{Error, Result};
use crate::models::{derive_stream, sample_mixture, trial_key, FitSpec, Stream, TrueModel};
use crate::params::{norm, ParamState};
use crate::theory::{epoch_schedule, EpochSchedule};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationTable {
    pub n: usize,
    pub d: usize,
    pub r: f64,
    pub pi: f64,
    pub grid_size: usize,
    /// `max_θ ‖Mₙ(θ) − M(θ)‖` per trial.
    pub per_trial: Vec<f64>,
    pub mean: f64,
}

/// Uniform draw from the ball of radius `r` in `ℝ^d`.
fn draw_in_ball(d: usize, r: f64, stream: &mut Stream) -> Vec<f64> {
    loop {
        let dir: Vec<f64> = (0..d).map(|_| stream.standard_normal()).collect();
        let len = norm(&dir);
        if len > 0.0 {
            let radius = r * stream.uniform().powf(1.0 / d as f64);
            return dir.iter().map(|v| v * radius / len).collect();
        }
    }
}

/// Empirical surrogate of `sup_{‖θ‖ ≤ r} ‖Mₙ(θ) − M(θ)‖` for the
/// symmetric fit under `N(0, I_d)` data: the maximum over `grid_size`
/// random points of the ball (only `θ = 0` when `r = 0`).
pub fn deviation_sup_estimate(
    n: usize,
    d: usize,
    r: f64,
    pi: f64,
    grid_size: usize,
    trials: usize,
    master_seed: u64,
) -> Result<DeviationTable> {
    if trials == 0 {
        return Err(Error::NoTrials);
    }
    if d == 0 || d > 3 {
        return Err(Error::Config(format!(
            "deviation grid needs 1 <= d <= 3, got {d}"
        )));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Config(format!(
            "radius must be non-negative, got {r}"
        )));
    }
    if grid_size == 0 || n == 0 {
        return Err(Error::Config("grid size and n must be positive".into()));
    }
    let model = TrueModel::null(d);
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut stream = derive_stream(master_seed, trial_key(n as u64, d as u64, t as u64));
            let data = sample_mixture(&model, n, &mut stream)?;
            let points = if r == 0.0 { 1 } else { grid_size };
            let mut worst: f64 = 0.0;
            for _ in 0..points {
                let theta = if r == 0.0 {
                    vec![0.0; d]
                } else {
                    draw_in_ball(d, r, &mut stream)
                };
                let sample_step = sample_em_symmetric_step(&theta, pi, &data, 1.0)?;
                let radial = symmetric_radial(norm(&theta), pi, 1.0, None)?;
                let len = norm(&theta);
                let dev: f64 = sample_step
                    .iter()
                    .zip(&theta)
                    .map(|(s, t)| {
                        let pop = if len > 0.0 { radial * t / len } else { 0.0 };
                        (s - pop) * (s - pop)
                    })
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(dev);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_trial.iter().sum::<f64>() / trials as f64;
    Ok(DeviationTable {
        n,
        d,
        r,
        pi,
        grid_size,
        per_trial,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochTrace {
    pub schedule: EpochSchedule,
    /// First iteration with `‖θᵗ‖ ≤ √2σ·ω^{α_ℓ}`, for `ℓ = 0 ..= ℓ_ε`.
    pub crossings: Vec<Option<usize>>,
    pub norms: Vec<f64>,
    pub final_norm: f64,
    pub iterations: usize,
}

/// One balanced sample-EM trajectory on `N(0, σ² I_d)` data, compared
/// against the annuli of the epoch schedule. The run stops at the
/// schedule's total iteration count `T` or at the default tolerance.
#[allow(clippy::too_many_arguments)]
pub fn epoch_trace(
    n: usize,
    d: usize,
    sigma: f64,
    delta: f64,
    epsilon: f64,
    theta0: &[f64],
    master_seed: u64,
    trial: u64,
) -> Result<EpochTrace> {
    if theta0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: theta0.len(),
        });
    }
    let schedule = epoch_schedule(n, d, sigma, delta, epsilon, norm(theta0))?;
    let total = schedule.cumulative.last().copied().unwrap_or(0).max(1) as usize;
    let mut stream = derive_stream(master_seed, trial_key(n as u64, d as u64, trial));
    let data = sample_mixture(&TrueModel::GaussianNull { sigma, d }, n, &mut stream)?;
    let cfg = EmRunConfig {
        max_iter: total,
        init: Init::explicit(ParamState::Location {
            theta: theta0.to_vec(),
        }),
        record_trajectory: true,
        ..Default::default()
    };
    let res = run_em(&FitSpec::symmetric(0.5, sigma, d), &data, &cfg, &mut stream)?;
    let norms = res.trajectory.map(|t| t.norms).unwrap_or_default();
    let crossings = (0..schedule.alphas.len())
        .map(|level| {
            let radius = schedule.radius(level);
            norms.iter().position(|&v| v <= radius)
        })
        .collect();
    Ok(EpochTrace {
        crossings,
        final_norm: *norms.last().expect("trajectory includes the initial point"),
        iterations: res.iterations,
        norms,
        schedule,
    })
}
