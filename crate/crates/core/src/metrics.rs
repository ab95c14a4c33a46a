//! Error metrics, log-log slope fits and trial aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-9;
const BALANCE_TOL: f64 = 1e-6;
pub const MAX_ATOMS: usize = 16;
const MAX_PIVOTS: usize = 10_000;

/// A discrete probability measure on `ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMeasure {
    atoms: Vec<(f64, Vec<f64>)>,
}

impl MixingMeasure {
    pub fn new(atoms: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let m = Self::unchecked(atoms)?;
        let total = m.total_weight();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "mixing weights sum to {total}, expected 1"
            )));
        }
        Ok(m)
    }

    /// Validates everything except the unit total.
    fn unchecked(atoms: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidArgument("mixing measure has no atoms".into()));
        };
        let d = first.1.len();
        for (w, loc) in &atoms {
            if !(*w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "atom weight must be positive, got {w}"
                )));
            }
            if loc.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: loc.len(),
                });
            }
            if loc.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("atom location not finite".into()));
            }
        }
        Ok(Self { atoms })
    }

    /// Builds a measure from fitted weights and locations, dropping atoms
    /// with zero weight.
    pub fn from_fit(weights: &[f64], locations: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            weights
                .iter()
                .zip(locations)
                .filter(|(w, _)| **w > 0.0)
                .map(|(&w, l)| (w, l.clone()))
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[(f64, Vec<f64>)] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].1.len()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|(w, _)| w).sum()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Second-order Wasserstein distance between two mixing measures with
/// squared Euclidean ground cost, solved exactly as a transportation
/// problem.
pub fn wasserstein2(a: &MixingMeasure, b: &MixingMeasure) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.len() > MAX_ATOMS || b.len() > MAX_ATOMS {
        return Err(Error::InvalidArgument(format!(
            "at most {MAX_ATOMS} atoms per measure"
        )));
    }
    let (ta, tb) = (a.total_weight(), b.total_weight());
    if (ta - tb).abs() > BALANCE_TOL {
        return Err(Error::UnbalancedMeasures {
            left: ta,
            right: tb,
        });
    }
    let supply: Vec<f64> = a.atoms.iter().map(|(w, _)| w / ta).collect();
    let demand: Vec<f64> = b.atoms.iter().map(|(w, _)| w / tb).collect();
    let cost: Vec<Vec<f64>> = a
        .atoms
        .iter()
        .map(|(_, x)| b.atoms.iter().map(|(_, y)| sq_dist(x, y)).collect())
        .collect();
    let plan = transport(&supply, &demand, &cost)?;
    let total: f64 = plan.iter().map(|&(i, j, x)| x * cost[i][j]).sum();
    Ok(total.max(0.0).sqrt())
}

/// Minimum-cost transportation plan by the u–v (MODI) simplex method.
/// Returns the basic cells `(i, j, amount)`.
pub fn transport(
    supply: &[f64],
    demand: &[f64],
    cost: &[Vec<f64>],
) -> Result<Vec<(usize, usize, f64)>> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 || cost.len() != m || cost.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(
            "transportation problem shape".into(),
        ));
    }
    let mut basis = northwest_corner(supply, demand);
    let scale = cost
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, c| acc.max(c.abs()))
        .max(1.0);
    let eps = 1e-12 * scale;

    for _ in 0..MAX_PIVOTS {
        let (u, v) = potentials(m, n, &basis, cost);
        let mut entering = None;
        let mut best = -eps;
        for i in 0..m {
            for j in 0..n {
                let reduced = cost[i][j] - u[i] - v[j];
                if reduced < best && !basis.iter().any(|&(bi, bj, _)| bi == i && bj == j) {
                    best = reduced;
                    entering = Some((i, j));
                }
            }
        }
        let Some((ei, ej)) = entering else {
            return Ok(basis);
        };
        let path = tree_path(m, n, &basis, ei, ej);
        // cells on the path alternate −, +, −, … starting next to row ei
        let mut step = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 && basis[cell].2 < step {
                step = basis[cell].2;
                leaving = cell;
            }
        }
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis[cell].2 -= step;
            } else {
                basis[cell].2 += step;
            }
        }
        basis[leaving] = (ei, ej, step);
    }
    Err(Error::SolverStalled(MAX_PIVOTS))
}

/// Northwest-corner rule; always returns exactly `m + n − 1` basic cells.
fn northwest_corner(supply: &[f64], demand: &[f64]) -> Vec<(usize, usize, f64)> {
    let (m, n) = (supply.len(), demand.len());
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    let mut basis = Vec::with_capacity(m + n - 1);
    while basis.len() < m + n - 1 {
        let x = s[i].min(d[j]).max(0.0);
        basis.push((i, j, x));
        s[i] -= x;
        d[j] -= x;
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || s[i] <= d[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    basis
}

/// Dual potentials with `u₀ = 0` and `c_ij = u_i + v_j` on basic cells.
fn potentials(
    m: usize,
    n: usize,
    basis: &[(usize, usize, f64)],
    cost: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut changed = true;
    while changed {
        changed = false;
        for &(i, j, _) in basis {
            if !u[i].is_nan() && v[j].is_nan() {
                v[j] = cost[i][j] - u[i];
                changed = true;
            } else if u[i].is_nan() && !v[j].is_nan() {
                u[i] = cost[i][j] - v[j];
                changed = true;
            }
        }
    }
    (u, v)
}

/// Basis indices on the tree path from row node `ri` to column node `cj`.
fn tree_path(
    m: usize,
    n: usize,
    basis: &[(usize, usize, f64)],
    ri: usize,
    cj: usize,
) -> Vec<usize> {
    // nodes: rows 0..m, columns m..m+n
    let target = m + cj;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + n];
    let mut seen = vec![false; m + n];
    let mut queue = std::collections::VecDeque::from([ri]);
    seen[ri] = true;
    while let Some(node) = queue.pop_front() {
        if node == target {
            break;
        }
        for (k, &(i, j, _)) in basis.iter().enumerate() {
            let other = if node < m && i == node {
                m + j
            } else if node >= m && j == node - m {
                i
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                parent[other] = Some((node, k));
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = target;
    while node != ri {
        let (prev, cell) = parent[node].expect("basis is a spanning tree");
        path.push(cell);
        node = prev;
    }
    path.reverse();
    path
}

/// Ordinary least squares of `log(err)` on `log(n)`; returns
/// `(slope, intercept)`.
pub fn slope_fit(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if let Some(&(x, e)) = points.iter().find(|(x, e)| !(*x > 0.0) || !(*e > 0.0)) {
        return Err(Error::Domain(format!(
            "log-log fit needs positive values, got ({x}, {e})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if points.len() < 2 || !(sxx > 0.0) {
        return Err(Error::InvalidArgument(
            "slope fit needs at least two distinct abscissae".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Mean, sample standard deviation (n − 1 denominator) and `mean + 2·std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub mean: f64,
    pub std: f64,
    pub report: f64,
}

pub fn aggregate_trials(errors: &[f64]) -> Result<TrialSummary> {
    if errors.is_empty() {
        return Err(Error::NoTrials);
    }
    let k = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / k;
    let std = if errors.len() > 1 {
        (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(TrialSummary {
        mean,
        std,
        report: mean + 2.0 * std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn atoms(ws: &[f64], locs: &[&[f64]]) -> MixingMeasure {
        MixingMeasure::new(ws.iter().zip(locs).map(|(&w, l)| (w, l.to_vec())).collect()).unwrap()
    }

    /// Minimum over all vertices of the transportation polytope: every
    /// spanning tree of the bipartite graph with a non-negative leaf-peeled
    /// allocation.
    fn brute_force(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
        let (m, n) = (supply.len(), demand.len());
        let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let size = m + n - 1;
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << cells.len()) {
            if mask.count_ones() as usize != size {
                continue;
            }
            let chosen: Vec<(usize, usize)> = (0..cells.len())
                .filter(|k| mask >> k & 1 == 1)
                .map(|k| cells[k])
                .collect();
            let mut s = supply.to_vec();
            let mut d = demand.to_vec();
            let mut left = chosen.clone();
            let mut cost_sum = 0.0;
            let mut ok = true;
            while !left.is_empty() {
                // a row or column touched by exactly one remaining cell
                let leaf = left.iter().position(|&(i, j)| {
                    left.iter().filter(|c| c.0 == i).count() == 1
                        || left.iter().filter(|c| c.1 == j).count() == 1
                });
                let Some(p) = leaf else {
                    ok = false;
                    break;
                };
                let (i, j) = left.remove(p);
                let row_leaf = left.iter().all(|c| c.0 != i);
                let x = if row_leaf { s[i] } else { d[j] };
                if x < -1e-12 {
                    ok = false;
                    break;
                }
                s[i] -= x;
                d[j] -= x;
                cost_sum += x * cost[i][j];
            }
            if ok && s.iter().chain(&d).all(|r| r.abs() < 1e-9) {
                best = best.min(cost_sum);
            }
        }
        best
    }

    #[test]
    fn identity_and_points() {
        let a = atoms(&[0.3, 0.7], &[&[1.0, 2.0], &[-1.0, 0.5]]);
        assert_abs_diff_eq!(wasserstein2(&a, &a).unwrap(), 0.0, epsilon = 1e-15);
        let u = atoms(&[1.0], &[&[1.0, 2.0]]);
        let v = atoms(&[1.0], &[&[4.0, 6.0]]);
        assert_eq!(wasserstein2(&u, &v).unwrap(), 5.0);
    }

    #[test]
    fn two_atoms_against_point() {
        let (pi, t1, t2) = (0.3, 0.8, -0.25);
        let fit = atoms(&[pi, 1.0 - pi], &[&[t1], &[t2]]);
        let zero = atoms(&[1.0], &[&[0.0]]);
        let expect = (pi * t1 * t1 + (1.0 - pi) * t2 * t2).sqrt();
        assert_eq!(wasserstein2(&fit, &zero).unwrap(), expect);
    }

    #[test]
    fn unbalanced_rejected() {
        let a = MixingMeasure::unchecked(vec![(0.5, vec![0.0])]).unwrap();
        let b = atoms(&[1.0], &[&[0.0]]);
        assert!(matches!(
            wasserstein2(&a, &b),
            Err(Error::UnbalancedMeasures { .. })
        ));
        assert!(MixingMeasure::new(vec![(0.5, vec![0.0])]).is_err());
        assert!(MixingMeasure::new(vec![]).is_err());
        assert!(MixingMeasure::new(vec![(0.5, vec![0.0]), (0.5, vec![0.0, 1.0])]).is_err());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let mut draw = |k: usize| {
                let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
                let t: f64 = w.iter().sum();
                w.into_iter().map(|x| x / t).collect::<Vec<_>>()
            };
            let (s, d) = (draw(3), draw(3));
            let cost: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..3).map(|_| rng.random::<f64>() * 4.0).collect())
                .collect();
            let plan = transport(&s, &d, &cost).unwrap();
            let got: f64 = plan.iter().map(|&(i, j, x)| x * cost[i][j]).sum();
            assert_abs_diff_eq!(got, brute_force(&s, &d, &cost), epsilon = 1e-10);
        }
    }

    #[test]
    fn degenerate_problems() {
        // equal marginals force degenerate northwest-corner bases
        let s = [0.25, 0.25, 0.5];
        let cost = vec![
            vec![0.0, 1.0, 4.0],
            vec![1.0, 0.0, 1.0],
            vec![4.0, 1.0, 0.0],
        ];
        let plan = transport(&s, &s, &cost).unwrap();
        let got: f64 = plan.iter().map(|&(i, j, x)| x * cost[i][j]).sum();
        assert_abs_diff_eq!(got, 0.0, epsilon = 1e-15);
        let rev = vec![
            vec![4.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 4.0],
        ];
        let plan = transport(&s, &s, &rev).unwrap();
        let got: f64 = plan.iter().map(|&(i, j, x)| x * rev[i][j]).sum();
        assert_abs_diff_eq!(got, brute_force(&s, &s, &rev), epsilon = 1e-12);
    }

    #[test]
    fn slope_examples() {
        let pts: Vec<(f64, f64)> = [100.0, 1000.0, 10000.0]
            .iter()
            .map(|&n: &f64| (n, 3.0 * n.powf(-0.5)))
            .collect();
        let (slope, intercept) = slope_fit(&pts).unwrap();
        assert_abs_diff_eq!(slope, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(intercept, 3f64.ln(), epsilon = 1e-12);
        let pts: Vec<(f64, f64)> = [16.0, 81.0]
            .iter()
            .map(|&n: &f64| (n, n.powf(-0.25)))
            .collect();
        assert_abs_diff_eq!(slope_fit(&pts).unwrap().0, -0.25, epsilon = 1e-12);
        assert!(slope_fit(&[(100.0, 0.1), (100.0, 0.2)]).is_err());
        assert!(slope_fit(&[(100.0, 0.1)]).is_err());
        assert!(slope_fit(&[(100.0, 0.0), (200.0, 0.1)]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate_trials(&[0.3, 0.3, 0.3]).unwrap();
        assert_abs_diff_eq!(s.mean, 0.3, epsilon = 1e-16);
        assert_abs_diff_eq!(s.std, 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(s.report, 0.3, epsilon = 1e-16);
        let s = aggregate_trials(&[0.0, 2.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert_abs_diff_eq!(s.std, 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.report, 1.0 + 2.0 * 2f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(aggregate_trials(&[]), Err(Error::NoTrials)));
    }

    fn measure_strategy() -> impl Strategy<Value = MixingMeasure> {
        (1usize..=4, 1usize..=3)
            .prop_flat_map(|(k, d)| {
                (
                    proptest::collection::vec(0.05f64..1.0, k),
                    proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), k),
                )
            })
            .prop_map(|(w, locs)| {
                let t: f64 = w.iter().sum();
                MixingMeasure::new(w.iter().map(|x| x / t).zip(locs).collect()).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn symmetric_and_permutation_invariant(a in measure_strategy(), b in measure_strategy()) {
            prop_assume!(a.dim() == b.dim());
            let ab = wasserstein2(&a, &b).unwrap();
            let ba = wasserstein2(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
            let mut rev = a.atoms().to_vec();
            rev.reverse();
            let ra = MixingMeasure::new(rev).unwrap();
            prop_assert!((wasserstein2(&ra, &b).unwrap() - ab).abs() <= 1e-12 * (1.0 + ab));
        }

        #[test]
        fn triangle_inequality(d in 1usize..=3, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || {
                let k = rng.random_range(1..=4);
                let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
                let t: f64 = w.iter().sum();
                MixingMeasure::new(
                    w.iter()
                        .map(|x| (x / t, (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()))
                        .collect(),
                )
                .unwrap()
            };
            let (a, b, c) = (draw(), draw(), draw());
            let ac = wasserstein2(&a, &c).unwrap();
            let ab = wasserstein2(&a, &b).unwrap();
            let bc = wasserstein2(&b, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
