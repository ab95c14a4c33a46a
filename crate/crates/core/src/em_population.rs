//! Population EM operators under a centered Gaussian truth.
//!
//! By rotation invariance of `N(0, σ²I_d)` every operator maps `θ` to a
//! multiple of `θ/‖θ‖`, so only a scalar map of `r = ‖θ‖` has to be
//! integrated: one standard normal `V` for the location mixtures and a pair
//! `(V, Y)` for the regression mixture.

use crate::em_sample::{centered_weight, general_update, half_log_odds, weight};
use crate::error::{check_sigma, check_weight, Error, Result};
use crate::models::{check_simplex, FitKind, FitSpec, TrueModel};
use crate::params::{norm, ParamState, TrajectoryRecord};
use crate::quadrature::QuadratureRule;

/// `pop_trajectory` stops once the norm drops below this level.
pub const TRAJECTORY_FLOOR: f64 = 1e-12;

/// Half width of the 2-D trapezoid grid used by the regression map when
/// the Gauss–Hermite rule is too coarse.
const REGRESSION_GRID_HALF_WIDTH: f64 = 10.0;
const REGRESSION_GRID_MIN_STEP: f64 = 2e-3;

fn scale_to(theta: &[f64], radial: f64) -> Vec<f64> {
    let r = norm(theta);
    if r == 0.0 {
        return vec![0.0; theta.len()];
    }
    theta.iter().map(|t| radial * t / r).collect()
}

/// `m(r) = E[(2w − 1)·σV]` for the symmetric fit with weight `π`.
pub fn symmetric_radial(r: f64, pi: f64, sigma: f64, rule: Option<&QuadratureRule>) -> Result<f64> {
    check_sigma(sigma)?;
    check_weight(pi)?;
    if r == 0.0 {
        return Ok(0.0);
    }
    let k = r / sigma;
    let b = half_log_odds(pi);
    let auto = QuadratureRule::for_sharpness(k);
    let rule = rule.unwrap_or(auto.as_ref());
    // θᵀX/σ² = rV/σ when X = σV e₁ + (orthogonal part)
    rule.expect1d(|v| sigma * v * centered_weight(k * v, b))
}

/// `M(θ) = m(‖θ‖)·θ/‖θ‖` under `N(0, σ² I_d)` data.
pub fn pop_em_symmetric(theta: &[f64], pi: f64, sigma: f64) -> Result<Vec<f64>> {
    let m = symmetric_radial(norm(theta), pi, sigma, None)?;
    Ok(scale_to(theta, m))
}

/// Population update of the symmetric fit with unknown weight:
/// `(E[w(X)], E[(2w(X) − 1)X])`.
pub fn pop_em_unknown_weight(theta: &[f64], pi: f64, sigma: f64) -> Result<(f64, Vec<f64>)> {
    pop_unknown_weight_with(theta, pi, sigma, None)
}

fn pop_unknown_weight_with(
    theta: &[f64],
    pi: f64,
    sigma: f64,
    rule: Option<&QuadratureRule>,
) -> Result<(f64, Vec<f64>)> {
    check_sigma(sigma)?;
    check_weight(pi)?;
    let r = norm(theta);
    if r == 0.0 {
        return Ok((pi, vec![0.0; theta.len()]));
    }
    let k = r / sigma;
    let b = half_log_odds(pi);
    let auto = QuadratureRule::for_sharpness(k);
    let rule = rule.unwrap_or(auto.as_ref());
    let pi_next = rule.expect1d(|v| weight(k * v, b))?;
    let m = rule.expect1d(|v| sigma * v * centered_weight(k * v, b))?;
    Ok((pi_next, scale_to(theta, m)))
}

/// `m̄(r) = σ·E[tanh(rVY/σ)·VY]` over independent standard normals.
pub fn regression_radial(r: f64, sigma: f64, rule: Option<&QuadratureRule>) -> Result<f64> {
    check_sigma(sigma)?;
    if r == 0.0 {
        return Ok(0.0);
    }
    let k = r / sigma;
    let f = |v: f64, y: f64| sigma * (k * v * y).tanh() * v * y;
    if let Some(rule) = rule {
        return rule.expect2d(f);
    }
    if k <= 1.0 {
        QuadratureRule::standard().expect2d(f)
    } else {
        // the kink along the axes sharpens with k; the product tail beyond
        // |v|, |y| = 10 is far below 1e-15
        let step = (0.05f64).min(0.03 / k).max(REGRESSION_GRID_MIN_STEP);
        QuadratureRule::trapezoid(
            -REGRESSION_GRID_HALF_WIDTH,
            REGRESSION_GRID_HALF_WIDTH,
            step,
        )?
        .expect2d(f)
    }
}

/// Balanced mixture-of-regressions population operator under `θ* = 0`.
pub fn pop_em_regression(theta: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let m = regression_radial(norm(theta), sigma, None)?;
    Ok(scale_to(theta, m))
}

/// Which population operator to iterate, with an optional fixed rule.
/// Without a rule the operators pick one from the integrand sharpness.
#[derive(Debug, Clone)]
pub struct PopOperatorSpec {
    pub fit: FitSpec,
    pub rule: Option<QuadratureRule>,
}

impl PopOperatorSpec {
    pub fn new(fit: FitSpec) -> Result<Self> {
        fit.validate()?;
        match fit.model {
            FitKind::SymmetricTwo { .. }
            | FitKind::SymmetricTwoUnknownWeight
            | FitKind::RegressionBalanced => Ok(Self { fit, rule: None }),
            FitKind::GeneralK { .. } => Err(Error::InvalidArgument(
                "population operators cover the symmetric and regression fits only".into(),
            )),
        }
    }

    pub fn with_rule(mut self, rule: QuadratureRule) -> Self {
        self.rule = Some(rule);
        self
    }

    pub fn apply(&self, state: &ParamState) -> Result<ParamState> {
        let sigma = self.fit.sigma;
        let rule = self.rule.as_ref();
        match (&self.fit.model, state) {
            (FitKind::SymmetricTwo { pi }, ParamState::Location { theta }) => {
                let m = symmetric_radial(norm(theta), *pi, sigma, rule)?;
                Ok(ParamState::Location {
                    theta: scale_to(theta, m),
                })
            }
            (FitKind::SymmetricTwoUnknownWeight, ParamState::WeightedLocation { pi, theta }) => {
                let (pi, theta) = pop_unknown_weight_with(theta, *pi, sigma, rule)?;
                Ok(ParamState::WeightedLocation { pi, theta })
            }
            (FitKind::RegressionBalanced, ParamState::Location { theta }) => {
                let m = regression_radial(norm(theta), sigma, rule)?;
                Ok(ParamState::Location {
                    theta: scale_to(theta, m),
                })
            }
            _ => Err(Error::InvalidArgument(
                "parameter state does not match the fitted model".into(),
            )),
        }
    }
}

/// Iterates the population operator `steps` times from `init`, logging
/// `‖θᵗ‖` (and `πᵗ` for the unknown-weight fit) including `t = 0`.
pub fn pop_trajectory(
    spec: &PopOperatorSpec,
    init: &ParamState,
    steps: usize,
) -> Result<TrajectoryRecord> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    if init.theta().is_none_or(|t| t.len() != spec.fit.d) {
        return Err(Error::DimensionMismatch {
            expected: spec.fit.d,
            got: init.theta().map_or(0, <[f64]>::len),
        });
    }
    let mut record = TrajectoryRecord::default();
    let mut state = init.clone();
    record.push(&state, None);
    for _ in 0..steps {
        if norm(&state.locations_flat()) < TRAJECTORY_FLOOR {
            break;
        }
        state = spec.apply(&state)?;
        record.push(&state, None);
    }
    Ok(record)
}

/// Experimental: population EM for a general k-component fit in `d = 1`,
/// integrating against the true mixture on the trapezoid grid (each truth
/// component contributes `μ_j + σ_true·z` nodes weighted by `w_j·φ(z)h`).
pub fn pop_em_general_1d(
    truth: &TrueModel,
    weights: &[f64],
    locations: &[f64],
    sigma: f64,
    weights_free: bool,
    sign_ties: &[[usize; 2]],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nodes = truth_nodes_1d(truth)?;
    general_1d_step(&nodes, weights, locations, sigma, weights_free, sign_ties)
}

/// Population general-k trajectory in `d = 1`; returns every iterate.
pub fn pop_em_general_1d_trajectory(
    truth: &TrueModel,
    weights: &[f64],
    locations: &[f64],
    sigma: f64,
    weights_free: bool,
    sign_ties: &[[usize; 2]],
    steps: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let nodes = truth_nodes_1d(truth)?;
    let mut out = vec![(weights.to_vec(), locations.to_vec())];
    for _ in 0..steps {
        let (w, l) = out.last().expect("non-empty");
        let next = general_1d_step(&nodes, w, l, sigma, weights_free, sign_ties)?;
        out.push(next);
    }
    Ok(out)
}

fn truth_nodes_1d(truth: &TrueModel) -> Result<Vec<(f64, f64)>> {
    truth.validate()?;
    if truth.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: truth.dim(),
        });
    }
    let measure: Vec<(f64, f64)> = match truth {
        TrueModel::GaussianNull { .. } => vec![(1.0, 0.0)],
        TrueModel::TwoMixture { theta_star, pi, .. } => {
            vec![(*pi, theta_star[0]), (1.0 - pi, -theta_star[0])]
        }
        TrueModel::GeneralMixture {
            weights, locations, ..
        } => weights
            .iter()
            .zip(locations)
            .map(|(&w, l)| (w, l[0]))
            .collect(),
        TrueModel::Regression { .. } => {
            return Err(Error::InvalidArgument(
                "general population EM needs a location-mixture truth".into(),
            ))
        }
    };
    let s = truth.sigma();
    let grid = QuadratureRule::reference_grid();
    let mut nodes = Vec::with_capacity(grid.len() * measure.len());
    for (w, mu) in measure {
        for (&z, &h) in grid.nodes().iter().zip(grid.weights()) {
            nodes.push((mu + s * z, w * h));
        }
    }
    Ok(nodes)
}

fn general_1d_step(
    nodes: &[(f64, f64)],
    weights: &[f64],
    locations: &[f64],
    sigma: f64,
    weights_free: bool,
    sign_ties: &[[usize; 2]],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_sigma(sigma)?;
    if weights.len() < 2 || weights.len() != locations.len() {
        return Err(Error::InvalidArgument(
            "general fit needs k >= 2 matching weights/locations".into(),
        ));
    }
    check_simplex(weights, 1e-9)?;
    let locs: Vec<Vec<f64>> = locations.iter().map(|&l| vec![l]).collect();
    let (w, l) = general_update(
        nodes.iter().map(|(x, h)| (std::slice::from_ref(x), *h)),
        1,
        weights,
        &locs,
        sigma,
        weights_free,
        sign_ties,
    );
    Ok((w, l.into_iter().map(|v| v[0]).collect()))
}
