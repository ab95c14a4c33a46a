//! Data-generating laws, fitted-model specifications and seeded sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_sigma, check_weight, Error, Result};
use crate::metrics::MixingMeasure;

/// The law the data is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrueModel {
    /// `N(0, σ² I_d)`.
    GaussianNull { sigma: f64, d: usize },
    /// `π N(θ*, σ² I) + (1 − π) N(−θ*, σ² I)`.
    TwoMixture {
        theta_star: Vec<f64>,
        pi: f64,
        sigma: f64,
    },
    /// `Y = Xᵀθ* + σξ` with `X ~ N(0, I_d)`, `ξ ~ N(0, 1)`.
    Regression { theta_star: Vec<f64>, sigma: f64 },
    /// `Σ_k w_k N(μ_k, σ² I)`.
    GeneralMixture {
        weights: Vec<f64>,
        locations: Vec<Vec<f64>>,
        sigma: f64,
    },
}

impl TrueModel {
    pub fn null(d: usize) -> Self {
        TrueModel::GaussianNull { sigma: 1.0, d }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            TrueModel::GaussianNull { sigma, .. }
            | TrueModel::TwoMixture { sigma, .. }
            | TrueModel::Regression { sigma, .. }
            | TrueModel::GeneralMixture { sigma, .. } => *sigma,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TrueModel::GaussianNull { d, .. } => *d,
            TrueModel::TwoMixture { theta_star, .. } => theta_star.len(),
            TrueModel::Regression { theta_star, .. } => theta_star.len(),
            TrueModel::GeneralMixture { locations, .. } => locations.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma())?;
        if self.dim() == 0 {
            return Err(Error::InvalidArgument(
                "model dimension must be at least 1".into(),
            ));
        }
        match self {
            TrueModel::GaussianNull { .. } | TrueModel::Regression { .. } => Ok(()),
            TrueModel::TwoMixture { pi, .. } => check_weight(*pi),
            TrueModel::GeneralMixture {
                weights, locations, ..
            } => {
                if weights.is_empty() || weights.len() != locations.len() {
                    return Err(Error::InvalidArgument(
                        "mixture needs one weight per location".into(),
                    ));
                }
                check_simplex(weights, 1e-12)?;
                let d = self.dim();
                if let Some(bad) = locations.iter().find(|l| l.len() != d) {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: bad.len(),
                    });
                }
                Ok(())
            }
        }
    }

    /// The same model in dimension `d`. Only the null model can change
    /// dimension; the others must already match.
    pub fn at_dim(&self, d: usize) -> Result<Self> {
        match self {
            TrueModel::GaussianNull { sigma, .. } => {
                Ok(TrueModel::GaussianNull { sigma: *sigma, d })
            }
            other if other.dim() == d => Ok(other.clone()),
            other => Err(Error::DimensionMismatch {
                expected: other.dim(),
                got: d,
            }),
        }
    }

    /// Mixing measure of the location parameters, used as the reference
    /// in Wasserstein errors.
    pub fn mixing_measure(&self) -> Result<MixingMeasure> {
        match self {
            TrueModel::GaussianNull { d, .. } => MixingMeasure::new(vec![(1.0, vec![0.0; *d])]),
            TrueModel::TwoMixture { theta_star, pi, .. } => {
                let neg: Vec<f64> = theta_star.iter().map(|v| -v).collect();
                MixingMeasure::new(vec![(*pi, theta_star.clone()), (1.0 - pi, neg)])
            }
            TrueModel::Regression { theta_star, .. } => {
                MixingMeasure::new(vec![(1.0, theta_star.clone())])
            }
            TrueModel::GeneralMixture {
                weights, locations, ..
            } => MixingMeasure::new(
                weights
                    .iter()
                    .copied()
                    .zip(locations.iter().cloned())
                    .collect(),
            ),
        }
    }

    /// Location parameter the symmetric fits try to recover.
    pub fn theta_star(&self) -> Vec<f64> {
        match self {
            TrueModel::TwoMixture { theta_star, .. } | TrueModel::Regression { theta_star, .. } => {
                theta_star.clone()
            }
            _ => vec![0.0; self.dim()],
        }
    }
}

pub(crate) fn check_simplex(weights: &[f64], tol: f64) -> Result<()> {
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "weights must be non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Which mixture family is fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FitKind {
    /// `π φ(x; θ, σ²I) + (1 − π) φ(x; −θ, σ²I)` with π fixed.
    SymmetricTwo { pi: f64 },
    /// Same density with π estimated alongside θ.
    SymmetricTwoUnknownWeight,
    /// `Σ_k w_k φ(x; θ_k, σ²I)`. `weights` are fixed unless `weights_free`,
    /// in which case they are the initial weights. Each pair in
    /// `sign_ties` constrains `θ_j = −θ_i`.
    GeneralK {
        weights: Vec<f64>,
        #[serde(default)]
        weights_free: bool,
        #[serde(default)]
        sign_ties: Vec<[usize; 2]>,
    },
    /// `½ φ(y; xᵀθ, σ²) + ½ φ(y; −xᵀθ, σ²)`.
    RegressionBalanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub model: FitKind,
    #[serde(default = "one")]
    pub sigma: f64,
    pub d: usize,
}

fn one() -> f64 {
    1.0
}

impl FitSpec {
    pub fn symmetric(pi: f64, sigma: f64, d: usize) -> Self {
        Self {
            model: FitKind::SymmetricTwo { pi },
            sigma,
            d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma)?;
        if self.d == 0 {
            return Err(Error::InvalidArgument(
                "fit dimension must be at least 1".into(),
            ));
        }
        match &self.model {
            FitKind::SymmetricTwo { pi } => check_weight(*pi),
            FitKind::SymmetricTwoUnknownWeight | FitKind::RegressionBalanced => Ok(()),
            FitKind::GeneralK {
                weights, sign_ties, ..
            } => {
                if weights.len() < 2 {
                    return Err(Error::InvalidArgument("general fit needs k >= 2".into()));
                }
                check_simplex(weights, 1e-12)?;
                let k = weights.len();
                let mut seen = vec![false; k];
                for &[i, j] in sign_ties {
                    if i >= k || j >= k || i == j || seen[i] || seen[j] {
                        return Err(Error::InvalidArgument(format!(
                            "invalid sign tie ({i}, {j}) for k = {k}"
                        )));
                    }
                    seen[i] = true;
                    seen[j] = true;
                }
                Ok(())
            }
        }
    }

    pub fn at_dim(&self, d: usize) -> Self {
        Self { d, ..self.clone() }
    }
}

/// Observations: an `n × d` row-major matrix, plus responses for the
/// regression case.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    points: Vec<f64>,
    responses: Option<Vec<f64>>,
    provenance: Option<(u64, u64)>,
}

impl Dataset {
    pub fn from_points(d: usize, points: Vec<f64>) -> Result<Self> {
        if d == 0 || points.is_empty() {
            return Err(Error::EmptySample);
        }
        if !points.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: points.len() % d,
            });
        }
        Ok(Self {
            d,
            points,
            responses: None,
            provenance: None,
        })
    }

    /// One-dimensional dataset.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_points(1, values.to_vec())
    }

    pub fn regression(d: usize, covariates: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        let mut data = Self::from_points(d, covariates)?;
        if responses.len() != data.n() {
            return Err(Error::DimensionMismatch {
                expected: data.n(),
                got: responses.len(),
            });
        }
        data.responses = Some(responses);
        Ok(data)
    }

    pub fn with_provenance(mut self, master_seed: u64, trial_index: u64) -> Self {
        self.provenance = Some((master_seed, trial_index));
        self
    }

    pub fn n(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.d)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }

    pub fn provenance(&self) -> Option<(u64, u64)> {
        self.provenance
    }

    pub fn is_regression(&self) -> bool {
        self.responses.is_some()
    }
}

/// A per-trial random stream. Value-like: clone it to replay.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for trial `trial_index` under `master_seed`.
pub fn derive_stream(master_seed: u64, trial_index: u64) -> Stream {
    let seed = mix64(mix64(master_seed) ^ mix64(trial_index.wrapping_add(0xA076_1D64_78BD_642F)));
    Stream::from_seed(seed)
}

/// Trial index for cell `(n, d)` of a grid, so that every cell gets its
/// own family of streams under one master seed.
pub fn trial_key(n: u64, d: u64, trial: u64) -> u64 {
    mix64(mix64(n ^ 0x6A09_E667_F3BC_C908) ^ mix64(d).rotate_left(17)) ^ trial
}

pub fn sample_mixture(model: &TrueModel, n: usize, stream: &mut Stream) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    model.validate()?;
    let d = model.dim();
    let sigma = model.sigma();
    let mut points = Vec::with_capacity(n * d);
    match model {
        TrueModel::GaussianNull { .. } => {
            for _ in 0..n * d {
                points.push(sigma * stream.standard_normal());
            }
        }
        TrueModel::TwoMixture { theta_star, pi, .. } => {
            for _ in 0..n {
                let sign = if stream.uniform() < *pi { 1.0 } else { -1.0 };
                for &c in theta_star {
                    points.push(sign * c + sigma * stream.standard_normal());
                }
            }
        }
        TrueModel::GeneralMixture {
            weights, locations, ..
        } => {
            for _ in 0..n {
                let k = pick_component(weights, stream.uniform());
                for &c in &locations[k] {
                    points.push(c + sigma * stream.standard_normal());
                }
            }
        }
        TrueModel::Regression { .. } => {
            return Err(Error::InvalidArgument(
                "regression models are sampled with sample_regression".into(),
            ))
        }
    }
    Dataset::from_points(d, points)
}

fn pick_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

pub fn sample_regression(model: &TrueModel, n: usize, stream: &mut Stream) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    model.validate()?;
    let TrueModel::Regression { theta_star, sigma } = model else {
        return Err(Error::InvalidArgument(
            "sample_regression needs a regression model".into(),
        ));
    };
    let d = theta_star.len();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut dot = 0.0;
        for &t in theta_star {
            let xi = stream.standard_normal();
            dot += xi * t;
            x.push(xi);
        }
        y.push(dot + sigma * stream.standard_normal());
    }
    Dataset::regression(d, x, y)
}

/// Draws from whichever sampler matches the model.
pub fn sample(model: &TrueModel, n: usize, stream: &mut Stream) -> Result<Dataset> {
    match model {
        TrueModel::Regression { .. } => sample_regression(model, n, stream),
        _ => sample_mixture(model, n, stream),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn null_moments() {
        let mut s = derive_stream(42, 0);
        let data = sample_mixture(&TrueModel::null(1), 1_000_000, &mut s).unwrap();
        let (m, v) = mean_var(data.points());
        assert!(m.abs() <= 0.004, "mean {m}");
        assert!((0.99..=1.01).contains(&v), "var {v}");
    }

    #[test]
    fn two_mixture_second_moment() {
        let model = TrueModel::TwoMixture {
            theta_star: vec![5.0],
            pi: 0.5,
            sigma: 1.0,
        };
        let mut s = derive_stream(42, 1);
        let data = sample_mixture(&model, 1_000_000, &mut s).unwrap();
        let m2 = data.points().iter().map(|x| x * x).sum::<f64>() / 1e6;
        assert!((m2 - 26.0).abs() <= 0.2, "second moment {m2}");
    }

    #[test]
    fn unbalanced_mixture_mean() {
        // E X = (2π − 1)θ*, var of the sample mean ≈ (σ² + θ*² − mean²)/n
        let model = TrueModel::TwoMixture {
            theta_star: vec![2.0],
            pi: 0.3,
            sigma: 1.0,
        };
        let mut s = derive_stream(5, 5);
        let data = sample_mixture(&model, 1_000_000, &mut s).unwrap();
        let (m, _) = mean_var(data.points());
        let se = ((1.0 + 4.0 - 0.64) / 1e6_f64).sqrt();
        assert!((m + 0.8).abs() <= 3.0 * se, "mean {m}");
    }

    #[test]
    fn general_mixture_moments() {
        let model = TrueModel::GeneralMixture {
            weights: vec![0.4, 0.6],
            locations: vec![vec![0.0, 0.0], vec![4.0, 4.0]],
            sigma: 1.0,
        };
        let mut s = derive_stream(9, 0);
        let data = sample_mixture(&model, 1_000_000, &mut s).unwrap();
        let first: Vec<f64> = data.rows().map(|r| r[0]).collect();
        let (m, v) = mean_var(&first);
        // mean 2.4, variance 1 + 16·0.24 = 4.84
        let se = (4.84_f64 / 1e6).sqrt();
        assert!((m - 2.4).abs() <= 3.0 * se, "mean {m}");
        assert!((v - 4.84).abs() <= 0.05, "var {v}");
    }

    #[test]
    fn regression_null_and_signal() {
        let mut s = derive_stream(42, 2);
        let null = TrueModel::Regression {
            theta_star: vec![0.0],
            sigma: 1.0,
        };
        let data = sample_regression(&null, 1_000_000, &mut s).unwrap();
        let y = data.responses().unwrap();
        let x = data.points();
        let (mx, vx) = mean_var(x);
        let (my, vy) = mean_var(y);
        let cov = x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - mx) * (b - my))
            .sum::<f64>()
            / 1e6;
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() <= 0.004, "corr {corr}");

        let signal = TrueModel::Regression {
            theta_star: vec![0.7],
            sigma: 1.0,
        };
        let data = sample_regression(&signal, 1_000_000, &mut s).unwrap();
        let exy = data
            .points()
            .iter()
            .zip(data.responses().unwrap())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / 1e6;
        assert!((exy - 0.7).abs() <= 0.01, "E XY {exy}");
    }

    #[test]
    fn empty_sample_is_an_error() {
        let mut s = derive_stream(0, 0);
        assert!(matches!(
            sample_mixture(&TrueModel::null(1), 0, &mut s),
            Err(Error::EmptySample)
        ));
        let reg = TrueModel::Regression {
            theta_star: vec![0.0],
            sigma: 1.0,
        };
        assert!(matches!(
            sample_regression(&reg, 0, &mut s),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn streams_are_deterministic() {
        let mut a = derive_stream(42, 0);
        let mut b = derive_stream(42, 0);
        for _ in 0..1000 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn streams_differ_across_indices_and_seeds() {
        let mut firsts = std::collections::HashSet::new();
        for i in 0..10_000 {
            assert!(
                firsts.insert(derive_stream(42, i).next_u64()),
                "collision at {i}"
            );
        }
        let mut by_seed = std::collections::HashSet::new();
        for seed in 0..10_000 {
            assert!(
                by_seed.insert(derive_stream(seed, 0).next_u64()),
                "collision at seed {seed}"
            );
        }
        assert_ne!(
            derive_stream(42, 0).next_u64(),
            derive_stream(43, 0).next_u64()
        );
    }

    #[test]
    fn model_validation() {
        assert!(TrueModel::GaussianNull { sigma: 0.0, d: 1 }
            .validate()
            .is_err());
        let bad = TrueModel::GeneralMixture {
            weights: vec![0.5, 0.6],
            locations: vec![vec![0.0], vec![1.0]],
            sigma: 1.0,
        };
        assert!(bad.validate().is_err());
        let ragged = TrueModel::GeneralMixture {
            weights: vec![0.5, 0.5],
            locations: vec![vec![0.0], vec![1.0, 2.0]],
            sigma: 1.0,
        };
        assert!(ragged.validate().is_err());
        assert_eq!(TrueModel::null(1).at_dim(7).unwrap().dim(), 7);
        assert!(TrueModel::Regression {
            theta_star: vec![0.0],
            sigma: 1.0
        }
        .at_dim(2)
        .is_err());
    }

    #[test]
    fn fit_spec_json_roundtrip() {
        let fit = FitSpec {
            model: FitKind::GeneralK {
                weights: vec![0.25, 0.25, 0.5],
                weights_free: false,
                sign_ties: vec![[0, 1]],
            },
            sigma: 1.0,
            d: 1,
        };
        let text = serde_json::to_string(&fit).unwrap();
        assert_eq!(serde_json::from_str::<FitSpec>(&text).unwrap(), fit);
        fit.validate().unwrap();
        let bad_tie = FitSpec {
            model: FitKind::GeneralK {
                weights: vec![0.5, 0.5],
                weights_free: false,
                sign_ties: vec![[0, 0]],
            },
            sigma: 1.0,
            d: 1,
        };
        assert!(bad_tie.validate().is_err());
    }
}
