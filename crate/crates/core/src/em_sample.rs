//! Sample EM operators and full EM runs.
//!
//! For the symmetric fit the posterior probability of the `+θ` component is
//! `w = 1 / (1 + ((1−π)/π)·exp(−2θᵀx/σ²))`, so `2w − 1 = tanh(θᵀx/σ² + b)`
//! with `b = ½·log(π/(1−π))`. Both forms are evaluated with the exponent
//! clamped to ±700.

use serde::{Deserialize, Serialize};

use crate::error::{check_sigma, check_weight, Error, Result};
use crate::models::{Dataset, FitKind, FitSpec, Stream};
use crate::params::{dot, ParamState, TrajectoryRecord};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;
const EXP_CLAMP: f64 = 700.0;
const MIN_COMPONENT_MASS: f64 = 1e-30;

/// `b = ½·log(π/(1−π))`.
#[inline]
pub(crate) fn half_log_odds(pi: f64) -> f64 {
    0.5 * (pi / (1.0 - pi)).ln()
}

/// `2w − 1` as a function of `t = θᵀx/σ²`.
#[inline]
pub(crate) fn centered_weight(t: f64, b: f64) -> f64 {
    (t + b).clamp(-0.5 * EXP_CLAMP, 0.5 * EXP_CLAMP).tanh()
}

/// `w` as a function of `t = θᵀx/σ²`.
#[inline]
pub(crate) fn weight(t: f64, b: f64) -> f64 {
    let s = (2.0 * (t + b)).clamp(-EXP_CLAMP, EXP_CLAMP);
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Posterior probability of the `+θ` component at `x`.
pub fn posterior_weight(theta: &[f64], pi: f64, x: &[f64], sigma: f64) -> f64 {
    weight(dot(theta, x) / (sigma * sigma), half_log_odds(pi))
}

fn check_dim(theta: &[f64], data: &Dataset) -> Result<()> {
    if theta.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// `Mₙ(θ) = (1/n) Σ (2w_θ(Xᵢ) − 1) Xᵢ`.
pub fn sample_em_symmetric_step(
    theta: &[f64],
    pi: f64,
    data: &Dataset,
    sigma: f64,
) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    check_weight(pi)?;
    check_dim(theta, data)?;
    let b = half_log_odds(pi);
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut out = vec![0.0; data.dim()];
    if data.dim() == 1 {
        let t0 = theta[0] * inv_s2;
        let mut acc = 0.0;
        for &x in data.points() {
            acc += centered_weight(t0 * x, b) * x;
        }
        out[0] = acc;
    } else {
        for x in data.rows() {
            let c = centered_weight(dot(theta, x) * inv_s2, b);
            for (o, &xi) in out.iter_mut().zip(x) {
                *o += c * xi;
            }
        }
    }
    let n = data.n() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// One step of the symmetric fit with unknown weight: returns
/// `(π′, θ′) = ((1/n)Σ w(Xᵢ), (1/n)Σ (2w(Xᵢ) − 1)Xᵢ)`.
pub fn sample_em_unknown_weight_step(
    theta: &[f64],
    pi: f64,
    data: &Dataset,
    sigma: f64,
) -> Result<(f64, Vec<f64>)> {
    check_sigma(sigma)?;
    check_weight(pi)?;
    check_dim(theta, data)?;
    let b = half_log_odds(pi);
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut pi_acc = 0.0;
    let mut out = vec![0.0; data.dim()];
    for x in data.rows() {
        let t = dot(theta, x) * inv_s2;
        pi_acc += weight(t, b);
        let c = centered_weight(t, b);
        for (o, &xi) in out.iter_mut().zip(x) {
            *o += c * xi;
        }
    }
    let n = data.n() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok((pi_acc / n, out))
}

/// Cholesky factor of the normalized Gram matrix `(1/n) Σ XᵢXᵢᵀ`.
#[derive(Debug, Clone)]
pub struct RegressionDesign {
    d: usize,
    chol: Vec<f64>,
}

impl RegressionDesign {
    pub fn new(data: &Dataset) -> Result<Self> {
        if !data.is_regression() {
            return Err(Error::InvalidArgument("dataset has no responses".into()));
        }
        let d = data.dim();
        let n = data.n() as f64;
        let mut gram = vec![0.0; d * d];
        for x in data.rows() {
            for i in 0..d {
                for j in 0..=i {
                    gram[i * d + j] += x[i] * x[j];
                }
            }
        }
        gram.iter_mut().for_each(|g| *g /= n);
        let trace: f64 = (0..d).map(|i| gram[i * d + i]).sum();
        let threshold = 1e-12 * trace / d as f64;
        if !(trace > 0.0) {
            return Err(Error::DegenerateDesign);
        }
        // lower-triangular Cholesky, in place
        let mut l = vec![0.0; d * d];
        for j in 0..d {
            let mut diag = gram[j * d + j];
            for k in 0..j {
                diag -= l[j * d + k] * l[j * d + k];
            }
            if !(diag > threshold) {
                return Err(Error::DegenerateDesign);
            }
            let root = diag.sqrt();
            l[j * d + j] = root;
            for i in j + 1..d {
                let mut s = gram[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = s / root;
            }
        }
        Ok(Self { d, chol: l })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let d = self.d;
        let l = &self.chol;
        let mut y = rhs.to_vec();
        for i in 0..d {
            for k in 0..i {
                y[i] -= l[i * d + k] * y[k];
            }
            y[i] /= l[i * d + i];
        }
        for i in (0..d).rev() {
            for k in i + 1..d {
                y[i] -= l[k * d + i] * y[k];
            }
            y[i] /= l[i * d + i];
        }
        y
    }
}

fn regression_rhs(theta: &[f64], data: &Dataset, sigma: f64) -> Result<Vec<f64>> {
    check_dim(theta, data)?;
    let ys = data
        .responses()
        .ok_or_else(|| Error::InvalidArgument("dataset has no responses".into()))?;
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut out = vec![0.0; data.dim()];
    for (x, &y) in data.rows().zip(ys) {
        // balanced weights: 2w − 1 = tanh(y·θᵀx/σ²)
        let c = centered_weight(y * dot(theta, x) * inv_s2, 0.0) * y;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o += c * xi;
        }
    }
    let n = data.n() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Balanced mixture-of-regressions step
/// `θ′ = ((1/n)ΣXᵢXᵢᵀ)⁻¹ (1/n)Σ(2w_θ(Xᵢ,Yᵢ) − 1)XᵢYᵢ`.
pub fn sample_em_regression_step(theta: &[f64], data: &Dataset, sigma: f64) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    let design = RegressionDesign::new(data)?;
    regression_step_with(&design, theta, data, sigma)
}

pub fn regression_step_with(
    design: &RegressionDesign,
    theta: &[f64],
    data: &Dataset,
    sigma: f64,
) -> Result<Vec<f64>> {
    let rhs = regression_rhs(theta, data, sigma)?;
    Ok(design.solve(&rhs))
}

/// Standard EM step for a k-component location mixture with known
/// covariance `σ²I`.
pub fn sample_em_general_step(
    weights: &[f64],
    locations: &[Vec<f64>],
    data: &Dataset,
    sigma: f64,
    weights_free: bool,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    sample_em_general_step_tied(weights, locations, data, sigma, weights_free, &[])
}

/// As [`sample_em_general_step`], with each `[i, j]` in `sign_ties`
/// constraining `θ_j = −θ_i`.
pub fn sample_em_general_step_tied(
    weights: &[f64],
    locations: &[Vec<f64>],
    data: &Dataset,
    sigma: f64,
    weights_free: bool,
    sign_ties: &[[usize; 2]],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_sigma(sigma)?;
    let k = weights.len();
    if k < 2 || locations.len() != k {
        return Err(Error::InvalidArgument(format!(
            "general fit needs k >= 2 matching weights/locations, got {k}/{}",
            locations.len()
        )));
    }
    if let Some(bad) = locations.iter().find(|l| l.len() != data.dim()) {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: bad.len(),
        });
    }
    let uniform = 1.0 / data.n() as f64;
    Ok(general_update(
        data.rows().map(|x| (x, uniform)),
        data.dim(),
        weights,
        locations,
        sigma,
        weights_free,
        sign_ties,
    ))
}

/// One EM update of a k-component location mixture against a weighted
/// point set (weights summing to one). Shared by the sample operator and
/// the grid-integrated population operator.
pub(crate) fn general_update<'a, I>(
    points: I,
    d: usize,
    weights: &[f64],
    locations: &[Vec<f64>],
    sigma: f64,
    weights_free: bool,
    sign_ties: &[[usize; 2]],
) -> (Vec<f64>, Vec<Vec<f64>>)
where
    I: Iterator<Item = (&'a [f64], f64)>,
{
    let k = weights.len();
    let inv_2s2 = 1.0 / (2.0 * sigma * sigma);
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut mass = vec![0.0; k];
    let mut sums = vec![vec![0.0; d]; k];
    let mut logits = vec![0.0; k];
    let mut resp = vec![0.0; k];
    for (x, omega) in points {
        let mut best = f64::NEG_INFINITY;
        for c in 0..k {
            let dist2: f64 = x
                .iter()
                .zip(&locations[c])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            logits[c] = log_w[c] - dist2 * inv_2s2;
            if logits[c] > best {
                best = logits[c];
            }
        }
        if best.is_finite() {
            let mut total = 0.0;
            for c in 0..k {
                resp[c] = (logits[c] - best).exp();
                total += resp[c];
            }
            resp.iter_mut().for_each(|r| *r /= total);
        } else {
            nearest_scaled(x, weights, locations, &mut resp);
        }
        for c in 0..k {
            let r = resp[c] * omega;
            if r == 0.0 {
                continue;
            }
            mass[c] += r;
            for (s, &xi) in sums[c].iter_mut().zip(x) {
                *s += r * xi;
            }
        }
    }

    let mut new_locations = locations.to_vec();
    let mut tied = vec![false; k];
    for &[i, j] in sign_ties {
        tied[i] = true;
        tied[j] = true;
        let total = mass[i] + mass[j];
        if total < MIN_COMPONENT_MASS {
            continue;
        }
        let theta: Vec<f64> = sums[i]
            .iter()
            .zip(&sums[j])
            .map(|(a, b)| (a - b) / total)
            .collect();
        new_locations[j] = theta.iter().map(|v| -v).collect();
        new_locations[i] = theta;
    }
    for c in 0..k {
        if tied[c] || mass[c] < MIN_COMPONENT_MASS {
            continue;
        }
        new_locations[c] = sums[c].iter().map(|s| s / mass[c]).collect();
    }
    let new_weights = if weights_free {
        let total: f64 = mass.iter().sum();
        mass.iter().map(|m| m / total).collect()
    } else {
        weights.to_vec()
    };
    (new_weights, new_locations)
}

/// Responsibilities when every log-density overflowed: all mass goes to
/// the nearest component(s) after rescaling the differences.
fn nearest_scaled(x: &[f64], weights: &[f64], locations: &[Vec<f64>], resp: &mut [f64]) {
    let scale = locations
        .iter()
        .flat_map(|l| x.iter().zip(l).map(|(a, b)| (a / 2.0 - b / 2.0).abs()))
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let dists: Vec<f64> = locations
        .iter()
        .map(|l| {
            x.iter()
                .zip(l)
                .map(|(a, b)| {
                    let z = (a / 2.0 - b / 2.0) / scale;
                    z * z
                })
                .sum()
        })
        .collect();
    let best = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (c, r) in resp.iter_mut().enumerate() {
        *r = if dists[c] == best {
            weights[c].max(f64::MIN_POSITIVE)
        } else {
            0.0
        };
        total += *r;
    }
    resp.iter_mut().for_each(|r| *r /= total);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Init {
    /// Start from the given parameters.
    Explicit { params: ParamState },
    /// Every location coordinate drawn from `N(0, 1)` on the trial stream.
    /// Weights start at the fitted/initial weights; an unknown symmetric
    /// weight starts at `pi0` (default ½).
    RandomStandardNormal {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pi0: Option<f64>,
    },
}

impl Default for Init {
    fn default() -> Self {
        Init::random()
    }
}

impl Init {
    pub fn random() -> Self {
        Init::RandomStandardNormal { pi0: None }
    }

    pub fn explicit(params: ParamState) -> Self {
        Init::Explicit { params }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmRunConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub record_trajectory: bool,
    /// Point the trajectory norms are measured from (defaults to zero).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

impl Default for EmRunConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            init: Init::random(),
            record_trajectory: false,
            reference: None,
        }
    }
}

impl EmRunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub params: ParamState,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryRecord>,
}

/// Applies one EM update of `fit` to `state`.
pub struct StepOperator<'a> {
    fit: &'a FitSpec,
    data: &'a Dataset,
    design: Option<RegressionDesign>,
}

impl<'a> StepOperator<'a> {
    pub fn new(fit: &'a FitSpec, data: &'a Dataset) -> Result<Self> {
        fit.validate()?;
        if fit.d != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: fit.d,
            });
        }
        let design = match fit.model {
            FitKind::RegressionBalanced => Some(RegressionDesign::new(data)?),
            _ => None,
        };
        Ok(Self { fit, data, design })
    }

    pub fn apply(&self, state: &ParamState) -> Result<ParamState> {
        let sigma = self.fit.sigma;
        match (&self.fit.model, state) {
            (FitKind::SymmetricTwo { pi }, ParamState::Location { theta }) => {
                Ok(ParamState::Location {
                    theta: sample_em_symmetric_step(theta, *pi, self.data, sigma)?,
                })
            }
            (FitKind::SymmetricTwoUnknownWeight, ParamState::WeightedLocation { pi, theta }) => {
                let (pi, theta) = sample_em_unknown_weight_step(theta, *pi, self.data, sigma)?;
                Ok(ParamState::WeightedLocation { pi, theta })
            }
            (FitKind::RegressionBalanced, ParamState::Location { theta }) => {
                let design = self
                    .design
                    .as_ref()
                    .expect("design built for regression fits");
                Ok(ParamState::Location {
                    theta: regression_step_with(design, theta, self.data, sigma)?,
                })
            }
            (
                FitKind::GeneralK {
                    weights_free,
                    sign_ties,
                    ..
                },
                ParamState::Mixture { weights, locations },
            ) => {
                let (weights, locations) = sample_em_general_step_tied(
                    weights,
                    locations,
                    self.data,
                    sigma,
                    *weights_free,
                    sign_ties,
                )?;
                Ok(ParamState::Mixture { weights, locations })
            }
            _ => Err(Error::InvalidArgument(
                "parameter state does not match the fitted model".into(),
            )),
        }
    }
}

/// Initial parameters for `fit`, drawing random locations from `stream`.
pub fn initial_state(fit: &FitSpec, init: &Init, stream: &mut Stream) -> Result<ParamState> {
    let d = fit.d;
    let state = match init {
        Init::Explicit { params } => params.clone(),
        Init::RandomStandardNormal { pi0 } => {
            let mut draw = |len: usize| {
                (0..len)
                    .map(|_| stream.standard_normal())
                    .collect::<Vec<_>>()
            };
            match &fit.model {
                FitKind::SymmetricTwo { .. } | FitKind::RegressionBalanced => {
                    ParamState::Location { theta: draw(d) }
                }
                FitKind::SymmetricTwoUnknownWeight => ParamState::WeightedLocation {
                    pi: pi0.unwrap_or(0.5),
                    theta: draw(d),
                },
                FitKind::GeneralK {
                    weights, sign_ties, ..
                } => {
                    let mut locations: Vec<Vec<f64>> = weights.iter().map(|_| draw(d)).collect();
                    for &[i, j] in sign_ties {
                        locations[j] = locations[i].iter().map(|v| -v).collect();
                    }
                    ParamState::Mixture {
                        weights: weights.clone(),
                        locations,
                    }
                }
            }
        }
    };
    check_state_shape(fit, &state)?;
    Ok(state)
}

fn check_state_shape(fit: &FitSpec, state: &ParamState) -> Result<()> {
    let d = fit.d;
    let ok = match (&fit.model, state) {
        (
            FitKind::SymmetricTwo { .. } | FitKind::RegressionBalanced,
            ParamState::Location { theta },
        ) => theta.len() == d,
        (FitKind::SymmetricTwoUnknownWeight, ParamState::WeightedLocation { pi, theta }) => {
            check_weight(*pi)?;
            theta.len() == d
        }
        (FitKind::GeneralK { weights: w0, .. }, ParamState::Mixture { weights, locations }) => {
            weights.len() == w0.len()
                && locations.len() == w0.len()
                && locations.iter().all(|l| l.len() == d)
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "initial parameters do not match the fitted model".into(),
        ))
    }
}

/// Runs EM from `cfg.init` until the Euclidean change of the full parameter
/// vector is at most `cfg.tol`, or `cfg.max_iter` updates were applied.
pub fn run_em(
    fit: &FitSpec,
    data: &Dataset,
    cfg: &EmRunConfig,
    stream: &mut Stream,
) -> Result<EmResult> {
    cfg.validate()?;
    let op = StepOperator::new(fit, data)?;
    let mut state = initial_state(fit, &cfg.init, stream)?;
    let reference = cfg.reference.as_deref();
    let mut trajectory = cfg.record_trajectory.then(TrajectoryRecord::default);
    if let Some(t) = trajectory.as_mut() {
        t.push(&state, reference);
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let next = op.apply(&state)?;
        iterations += 1;
        if !next.is_finite() {
            return Err(Error::Domain(format!(
                "EM iterate became non-finite at step {iterations}"
            )));
        }
        let change = next.distance(&state);
        state = next;
        if let Some(t) = trajectory.as_mut() {
            t.push(&state, reference);
        }
        if change <= cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(EmResult {
        params: state,
        iterations,
        converged,
        trajectory,
    })
}
