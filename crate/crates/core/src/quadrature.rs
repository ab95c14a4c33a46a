//! Deterministic expectations against the standard normal law.
//!
//! Two rule families are provided: Gauss–Hermite (the default, 128 nodes)
//! and a trapezoid grid on a truncated interval. Both are stored in
//! "probabilists'" form, so `Σ wᵢ f(zᵢ) ≈ E[f(Z)]` with `Z ~ N(0, 1)`.
//!
//! Gauss–Hermite is exact for low-degree polynomials and very accurate for
//! smooth integrands, but it cannot resolve a transition that is narrower
//! than its node spacing near the origin (about 0.2 for 128 nodes). The
//! population EM integrands become step-like once `‖θ‖/σ` is large, so
//! [`QuadratureRule::for_sharpness`] switches to the trapezoid grid there.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GH_NODES: usize = 128;
pub const GRID_HALF_WIDTH: f64 = 12.0;
pub const GRID_STEP: f64 = 1e-3;

/// Largest integrand sharpness (slope `k` of a `tanh(k·z + c)` factor) that
/// the default Gauss–Hermite rule resolves to ~1e-12.
pub const GH_MAX_SHARPNESS: f64 = 1.0;

/// Largest sharpness the default trapezoid grid resolves to ~1e-13: the
/// nearest pole of `tanh(k·z)` sits at distance π/(2k) from the real axis,
/// and the trapezoid error decays like exp(−π²/(k·h)).
const GRID_MAX_SHARPNESS: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    GaussHermite,
    TrapezoidGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: RuleKind,
}

impl QuadratureRule {
    /// Gauss–Hermite rule with `n` nodes, rescaled to the standard normal.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "Gauss-Hermite rule needs at least one node".into(),
            ));
        }
        let (x, w) = hermite_physicists(n);
        let scale = 1.0 / PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = x
            .iter()
            .zip(&w)
            .map(|(&xi, &wi)| (SQRT_2 * xi, wi * scale))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Ok(Self {
            nodes,
            weights,
            kind: RuleKind::GaussHermite,
        })
    }

    /// Trapezoid rule with spacing `step` on `[lo, hi]`, weighted by the
    /// standard normal density.
    pub fn trapezoid(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo < hi) || !(step > 0.0) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bad trapezoid grid [{lo}, {hi}] step {step}"
            )));
        }
        let intervals = ((hi - lo) / step).round() as usize;
        if intervals == 0 {
            return Err(Error::InvalidArgument(
                "trapezoid grid has no intervals".into(),
            ));
        }
        let h = (hi - lo) / intervals as f64;
        let norm = 1.0 / (2.0 * PI).sqrt();
        let mut nodes = Vec::with_capacity(intervals + 1);
        let mut weights = Vec::with_capacity(intervals + 1);
        for i in 0..=intervals {
            let z = lo + h * i as f64;
            let end = i == 0 || i == intervals;
            let w = h * if end { 0.5 } else { 1.0 } * norm * (-0.5 * z * z).exp();
            nodes.push(z);
            weights.push(w);
        }
        Ok(Self {
            nodes,
            weights,
            kind: RuleKind::TrapezoidGrid,
        })
    }

    /// The shared default rule: Gauss–Hermite with 128 nodes.
    pub fn standard() -> &'static Self {
        static RULE: OnceLock<QuadratureRule> = OnceLock::new();
        RULE.get_or_init(|| Self::gauss_hermite(DEFAULT_GH_NODES).expect("valid node count"))
    }

    /// The shared cross-validation rule: trapezoid on [−12, 12], step 10⁻³.
    pub fn reference_grid() -> &'static Self {
        static RULE: OnceLock<QuadratureRule> = OnceLock::new();
        RULE.get_or_init(|| {
            Self::trapezoid(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, GRID_STEP).expect("valid grid")
        })
    }

    /// Picks a rule able to integrate `g(k·z + c)·poly(z)` accurately, where
    /// `g` is a tanh-type function and `k` its sharpness.
    pub fn for_sharpness(k: f64) -> std::borrow::Cow<'static, Self> {
        use std::borrow::Cow;
        let k = k.abs();
        if k <= GH_MAX_SHARPNESS {
            Cow::Borrowed(Self::standard())
        } else if k <= GRID_MAX_SHARPNESS {
            Cow::Borrowed(Self::reference_grid())
        } else {
            let step = 0.25 / k;
            Cow::Owned(
                Self::trapezoid(-GRID_HALF_WIDTH, GRID_HALF_WIDTH, step).expect("valid grid"),
            )
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(Z)]` for `Z ~ N(0, 1)`.
    pub fn expect1d<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(f64) -> f64,
    {
        let mut acc = 0.0;
        for (&z, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(z);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand { node: z });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// `E[f(V, Y)]` for independent standard normals, via the tensor
    /// product of this rule with itself.
    pub fn expect2d<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(f64, f64) -> f64,
    {
        let mut acc = 0.0;
        for (&v, &wv) in self.nodes.iter().zip(&self.weights) {
            let mut inner = 0.0;
            for (&y, &wy) in self.nodes.iter().zip(&self.weights) {
                let val = f(v, y);
                if !val.is_finite() {
                    return Err(Error::NonFiniteIntegrand { node: v });
                }
                inner += wy * val;
            }
            acc += wv * inner;
        }
        Ok(acc)
    }
}

/// Nodes and weights for `∫ e^{-x²} f(x) dx`. Starting values are the
/// eigenvalues of the Jacobi matrix; each node is then polished by Newton
/// iteration on the orthonormal Hermite recurrence, which also yields the
/// weight.
fn hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let nf = n as f64;
    let mut guesses = jacobi_eigenvalues(n);
    guesses.sort_by(|a, b| b.total_cmp(a));
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = guesses[i];
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if i == n / 2 && n % 2 == 1 {
            z = 0.0;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Eigenvalues of the symmetric tridiagonal matrix with zero diagonal and
/// off-diagonal `√(k/2)`, by implicit QL with Wilkinson shifts.
fn jacobi_eigenvalues(n: usize) -> Vec<f64> {
    let mut d = vec![0.0_f64; n];
    let mut e: Vec<f64> = (1..=n)
        .map(|k| if k < n { (k as f64 / 2.0).sqrt() } else { 0.0 })
        .collect();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d
}
