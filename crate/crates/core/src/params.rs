use serde::{Deserialize, Serialize};

/// An EM iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParamState {
    /// Location of a fixed-weight symmetric fit or of the regression fit.
    Location { theta: Vec<f64> },
    /// Symmetric fit with the weight estimated alongside the location.
    WeightedLocation { pi: f64, theta: Vec<f64> },
    /// General k-component fit.
    Mixture {
        weights: Vec<f64>,
        locations: Vec<Vec<f64>>,
    },
}

impl ParamState {
    /// All free and fixed coordinates, weights first.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            ParamState::Location { theta } => theta.clone(),
            ParamState::WeightedLocation { pi, theta } => {
                let mut v = Vec::with_capacity(theta.len() + 1);
                v.push(*pi);
                v.extend_from_slice(theta);
                v
            }
            ParamState::Mixture { weights, locations } => {
                let mut v = weights.clone();
                for l in locations {
                    v.extend_from_slice(l);
                }
                v
            }
        }
    }

    /// Euclidean distance between the full parameter vectors.
    pub fn distance(&self, other: &ParamState) -> f64 {
        let a = self.flatten();
        let b = other.flatten();
        if a.len() != b.len() {
            return f64::INFINITY;
        }
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// Location coordinates only, concatenated.
    pub fn locations_flat(&self) -> Vec<f64> {
        match self {
            ParamState::Location { theta } | ParamState::WeightedLocation { theta, .. } => {
                theta.clone()
            }
            ParamState::Mixture { locations, .. } => locations.concat(),
        }
    }

    pub fn theta(&self) -> Option<&[f64]> {
        match self {
            ParamState::Location { theta } | ParamState::WeightedLocation { theta, .. } => {
                Some(theta)
            }
            ParamState::Mixture { .. } => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Per-iteration log of `‖θᵗ − reference‖` (index 0 is the initial point),
/// plus the weight iterate when the weight is estimated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub norms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
}

impl TrajectoryRecord {
    pub(crate) fn push(&mut self, state: &ParamState, reference: Option<&[f64]>) {
        let loc = state.locations_flat();
        let norm = match reference {
            Some(r) if r.len() == loc.len() => loc
                .iter()
                .zip(r)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            _ => norm(&loc),
        };
        self.norms.push(norm);
        if let ParamState::WeightedLocation { pi, .. } = state {
            self.weights.push(*pi);
        }
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
