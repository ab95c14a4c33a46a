//! Seeded Monte-Carlo rate experiments.
//!
//! Every trial of a scenario is keyed by `(n, d, trial)` and draws its data
//! and its random initialization from the stream derived from that key and
//! the master seed, so results do not depend on scheduling or worker count.

mod diagnostics;
mod output;
mod presets;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em_sample::{run_em, EmRunConfig};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_trials, slope_fit, wasserstein2, MixingMeasure};
use crate::models::{derive_stream, sample, trial_key, FitKind, FitSpec, TrueModel};
use crate::params::ParamState;

pub use diagnostics::{deviation_sup_estimate, epoch_trace, DeviationTable, EpochTrace};
pub use output::{
    format_float, write_fixed_points, write_rate_table, write_trajectories, TrajectoryRow,
};
pub use presets::{population_em_trajectories, scenario_preset, SCENARIO_IDS};

/// Error between the fitted parameters and the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Metric {
    /// `min(‖θ̂ − θ*‖, ‖θ̂ + θ*‖)` for symmetric and regression fits.
    LocationError,
    /// `Ŵ₂` between the fitted and true mixing measures.
    Wasserstein2,
    /// `‖θ̂_index − target‖` for one location of a general fit.
    ComponentError { index: usize, target: Vec<f64> },
}

impl Metric {
    pub fn label(&self) -> String {
        match self {
            Metric::LocationError => "location-error".into(),
            Metric::Wasserstein2 => "wasserstein2".into(),
            Metric::ComponentError { index, .. } => format!("component-error-{index}"),
        }
    }

    pub fn evaluate(&self, params: &ParamState, fit: &FitSpec, truth: &TrueModel) -> Result<f64> {
        match self {
            Metric::LocationError => {
                let theta = params.theta().ok_or_else(|| {
                    Error::Config("location-error needs a symmetric or regression fit".into())
                })?;
                let star = truth.theta_star();
                let (mut minus, mut plus) = (0.0, 0.0);
                for (a, b) in theta.iter().zip(&star) {
                    minus += (a - b) * (a - b);
                    plus += (a + b) * (a + b);
                }
                Ok(minus.min(plus).sqrt())
            }
            Metric::Wasserstein2 => {
                let fitted = fitted_measure(params, fit)?;
                wasserstein2(&fitted, &truth.mixing_measure()?)
            }
            Metric::ComponentError { index, target } => match params {
                ParamState::Mixture { locations, .. } => {
                    let loc = locations.get(*index).ok_or_else(|| {
                        Error::Config(format!("component {index} does not exist"))
                    })?;
                    if loc.len() != target.len() {
                        return Err(Error::DimensionMismatch {
                            expected: loc.len(),
                            got: target.len(),
                        });
                    }
                    Ok(loc
                        .iter()
                        .zip(target)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt())
                }
                _ => Err(Error::Config("component-error needs a general fit".into())),
            },
        }
    }
}

fn fitted_measure(params: &ParamState, fit: &FitSpec) -> Result<MixingMeasure> {
    match (params, &fit.model) {
        (ParamState::Location { theta }, FitKind::SymmetricTwo { pi }) => {
            symmetric_measure(*pi, theta)
        }
        (ParamState::WeightedLocation { pi, theta }, _) => symmetric_measure(*pi, theta),
        (ParamState::Mixture { weights, locations }, _) => {
            let total: f64 = weights.iter().sum();
            let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
            MixingMeasure::from_fit(&normalized, locations)
        }
        _ => Err(Error::Config(
            "wasserstein2 is not defined for this fit".into(),
        )),
    }
}

fn symmetric_measure(pi: f64, theta: &[f64]) -> Result<MixingMeasure> {
    let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
    MixingMeasure::new(vec![(pi, theta.to_vec()), (1.0 - pi, neg)])
}

/// One rate experiment: a truth, a fit, grids and an error metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub truth: TrueModel,
    pub fit: FitSpec,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_d_grid")]
    pub d_grid: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub em: EmRunConfig,
    pub metric: Metric,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_d_grid() -> Vec<usize> {
    vec![1]
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenario.is_empty() || self.scenario.contains(',') {
            return Err(Error::Config(
                "scenario id must be non-empty and comma free".into(),
            ));
        }
        if self.n_grid.is_empty() || self.d_grid.is_empty() {
            return Err(Error::Config(format!(
                "{}: grids must be non-empty",
                self.scenario
            )));
        }
        if self.n_grid.contains(&0) || self.d_grid.contains(&0) {
            return Err(Error::Config(format!(
                "{}: grid values must be positive",
                self.scenario
            )));
        }
        if self.trials == 0 {
            return Err(Error::NoTrials);
        }
        self.em.validate()?;
        for &d in &self.d_grid {
            self.truth.at_dim(d)?.validate()?;
            self.fit.at_dim(d).validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub scenario: String,
    pub n: usize,
    pub d: usize,
    pub trial: usize,
    pub metric: String,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub scenario: String,
    pub n: usize,
    pub d: usize,
    pub trials: usize,
    pub mean: f64,
    pub std: f64,
    pub report: f64,
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub scenario: String,
    /// `d=<value>` for a fit across `n`, `n=<value>` for a fit across `d`.
    pub series: String,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub slopes: Vec<SlopeRow>,
    pub trials: Vec<TrialRow>,
}

impl RateTable {
    pub fn extend(&mut self, other: RateTable) {
        self.rows.extend(other.rows);
        self.slopes.extend(other.slopes);
        self.trials.extend(other.trials);
    }

    pub fn slope(&self, scenario: &str, series: &str) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| s.scenario == scenario && s.series == series)
            .map(|s| s.slope)
    }
}

/// Runs every `(n, d, trial)` of `cfg` on the current rayon pool,
/// aggregates and fits slopes. Writes CSVs when `cfg.output` is set.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<RateTable> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &d in &cfg.d_grid {
        for &n in &cfg.n_grid {
            for t in 0..cfg.trials {
                cells.push((n, d, t));
            }
        }
    }
    let label = cfg.metric.label();
    let trials = cells
        .par_iter()
        .map(|&(n, d, t)| run_trial(cfg, n, d, t, &label))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &d in &cfg.d_grid {
        for &n in &cfg.n_grid {
            let values: Vec<f64> = trials
                .iter()
                .filter(|r| r.n == n && r.d == d)
                .map(|r| r.value)
                .collect();
            let s = aggregate_trials(&values)?;
            rows.push(RateRow {
                scenario: cfg.scenario.clone(),
                n,
                d,
                trials: values.len(),
                mean: s.mean,
                std: s.std,
                report: s.report,
                metric: label.clone(),
            });
        }
    }
    let slopes = fit_slopes(&cfg.scenario, &cfg.n_grid, &cfg.d_grid, &rows);
    let table = RateTable {
        rows,
        slopes,
        trials,
    };
    if let Some(dir) = &cfg.output {
        write_rate_table(&table, dir, &cfg.scenario.replace('/', "_"))?;
    }
    Ok(table)
}

fn run_trial(
    cfg: &ExperimentConfig,
    n: usize,
    d: usize,
    trial: usize,
    label: &str,
) -> Result<TrialRow> {
    let truth = cfg.truth.at_dim(d)?;
    let fit = cfg.fit.at_dim(d);
    let mut stream = derive_stream(cfg.master_seed, trial_key(n as u64, d as u64, trial as u64));
    let data = sample(&truth, n, &mut stream)?.with_provenance(cfg.master_seed, trial as u64);
    let res = run_em(&fit, &data, &cfg.em, &mut stream)?;
    let value = cfg.metric.evaluate(&res.params, &fit, &truth)?;
    Ok(TrialRow {
        scenario: cfg.scenario.clone(),
        n,
        d,
        trial,
        metric: label.to_string(),
        value,
        iterations: res.iterations,
        converged: res.converged,
    })
}

/// Log-log fits of `report` across `n` for each `d` and across `d` for
/// each `n`, skipping series with fewer than two points or a
/// non-positive report.
fn fit_slopes(
    scenario: &str,
    n_grid: &[usize],
    d_grid: &[usize],
    rows: &[RateRow],
) -> Vec<SlopeRow> {
    let mut slopes = Vec::new();
    let mut push = |series: String, pts: Vec<(f64, f64)>| {
        if pts.len() >= 2 {
            if let Ok((slope, intercept)) = slope_fit(&pts) {
                slopes.push(SlopeRow {
                    scenario: scenario.to_string(),
                    series,
                    slope,
                    intercept,
                });
            }
        }
    };
    for &d in d_grid {
        let pts = rows
            .iter()
            .filter(|r| r.d == d)
            .map(|r| (r.n as f64, r.report))
            .collect();
        push(format!("d={d}"), pts);
    }
    for &n in n_grid {
        let pts = rows
            .iter()
            .filter(|r| r.n == n)
            .map(|r| (r.d as f64, r.report))
            .collect();
        push(format!("n={n}"), pts);
    }
    slopes
}

/// Runs `f` on a dedicated pool with `workers` threads (or the global
/// pool when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("workers must be at least 1".into())),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em_sample::Init;

    fn small(scenario: &str) -> ExperimentConfig {
        ExperimentConfig {
            scenario: scenario.into(),
            truth: TrueModel::null(1),
            fit: FitSpec::symmetric(0.3, 1.0, 1),
            n_grid: vec![100, 400],
            d_grid: vec![1, 2],
            trials: 4,
            master_seed: 17,
            em: EmRunConfig {
                max_iter: 500,
                ..Default::default()
            },
            metric: Metric::LocationError,
            output: None,
        }
    }

    #[test]
    fn table_shape_and_invariants() {
        let t = run_scenario(&small("unit")).unwrap();
        assert_eq!(t.trials.len(), 16);
        assert_eq!(t.rows.len(), 4);
        for r in &t.rows {
            assert!(r.report >= r.mean && r.mean >= 0.0);
        }
        assert!(t.slope("unit", "d=1").is_some());
        assert!(t.slope("unit", "n=400").is_some());
    }

    #[test]
    fn parallel_equals_serial() {
        let cfg = small("par");
        let a = with_workers(Some(1), || run_scenario(&cfg))
            .unwrap()
            .unwrap();
        let b = with_workers(Some(3), || run_scenario(&cfg))
            .unwrap()
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn validation() {
        let mut cfg = small("bad");
        cfg.trials = 0;
        assert!(matches!(run_scenario(&cfg), Err(Error::NoTrials)));
        let mut cfg = small("bad");
        cfg.n_grid.clear();
        assert!(run_scenario(&cfg).is_err());
        let mut cfg = small("bad,id");
        cfg.trials = 1;
        assert!(run_scenario(&cfg).is_err());
    }

    #[test]
    fn metrics_on_symmetric_and_general_fits() {
        let truth = TrueModel::TwoMixture {
            theta_star: vec![2.0],
            pi: 0.3,
            sigma: 1.0,
        };
        let fit = FitSpec::symmetric(0.3, 1.0, 1);
        let p = ParamState::Location { theta: vec![-1.9] };
        let e = Metric::LocationError.evaluate(&p, &fit, &truth).unwrap();
        assert!((e - 0.1).abs() < 1e-12);
        let w = Metric::Wasserstein2
            .evaluate(&p, &fit, &TrueModel::null(1))
            .unwrap();
        assert!((w - 1.9).abs() < 1e-12);

        let general = FitSpec {
            model: FitKind::GeneralK {
                weights: vec![0.25, 0.25, 0.5],
                weights_free: false,
                sign_ties: vec![[0, 1]],
            },
            sigma: 1.0,
            d: 1,
        };
        let p = ParamState::Mixture {
            weights: vec![0.25, 0.25, 0.5],
            locations: vec![vec![0.2], vec![-0.2], vec![10.1]],
        };
        let m = Metric::ComponentError {
            index: 2,
            target: vec![10.0],
        };
        assert!((m.evaluate(&p, &general, &TrueModel::null(1)).unwrap() - 0.1).abs() < 1e-12);
        assert!(Metric::LocationError
            .evaluate(&p, &general, &TrueModel::null(1))
            .is_err());
        let _ = Init::random();
    }

    #[test]
    fn config_json_roundtrip() {
        let cfg = small("json");
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let minimal = r#"{"scenario":"x","truth":{"kind":"gaussian-null","sigma":1.0,"d":1},
            "fit":{"model":{"kind":"symmetric-two","pi":0.5},"d":1},
            "n_grid":[100],"trials":2,"metric":{"kind":"location-error"}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(cfg.d_grid, vec![1]);
        assert_eq!(cfg.em.max_iter, crate::em_sample::DEFAULT_MAX_ITER);
    }
}
