use crate::em_population::{pop_em_general_1d_trajectory, pop_trajectory, PopOperatorSpec};
use crate::em_sample::{EmRunConfig, Init, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::models::{FitKind, FitSpec, TrueModel};
use crate::params::ParamState;

use super::{ExperimentConfig, Metric, TrajectoryRow};

/// Every scenario id accepted by [`scenario_preset`] and the CLI.
pub const SCENARIO_IDS: &[&str] = &[
    "snr-strong",
    "snr-null",
    "unbalanced-rates",
    "sample-balanced-rates",
    "regression-null",
    "unknown-weights",
    "more-cases",
    "two-mixture",
    "more-mixtures",
    "population-em",
];

pub const POPULATION_SCENARIO: &str = "population-em";

/// Sample sizes of the one-dimensional rate scenarios.
pub const RATE_N_GRID: [usize; 6] = [100, 316, 1000, 3162, 10_000, 31_623];
pub const DIM_N_GRID: [usize; 2] = [1600, 12_800];
pub const DIM_D_GRID: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];
/// Iteration cap of the rate scenarios.
pub const RATE_MAX_ITER: usize = 5000;

fn rate_em() -> EmRunConfig {
    EmRunConfig {
        tol: DEFAULT_TOL,
        max_iter: RATE_MAX_ITER,
        ..Default::default()
    }
}

fn general(weights: Vec<f64>, weights_free: bool, sign_ties: Vec<[usize; 2]>, d: usize) -> FitSpec {
    FitSpec {
        model: FitKind::GeneralK {
            weights,
            weights_free,
            sign_ties,
        },
        sigma: 1.0,
        d,
    }
}

struct Base {
    n_grid: Vec<usize>,
    d_grid: Vec<usize>,
    trials: usize,
    seed: u64,
}

impl Base {
    fn config(
        &self,
        scenario: String,
        truth: TrueModel,
        fit: FitSpec,
        metric: Metric,
    ) -> ExperimentConfig {
        ExperimentConfig {
            scenario,
            truth,
            fit,
            n_grid: self.n_grid.clone(),
            d_grid: self.d_grid.clone(),
            trials: self.trials,
            master_seed: self.seed,
            em: rate_em(),
            metric,
            output: None,
        }
    }
}

/// The experiment configs behind a scenario id. Sub-experiments are
/// labelled `<id>/<variant>`.
pub fn scenario_preset(id: &str, master_seed: u64) -> Result<Vec<ExperimentConfig>> {
    let one_d = Base {
        n_grid: RATE_N_GRID.to_vec(),
        d_grid: vec![1],
        trials: 100,
        seed: master_seed,
    };
    let configs = match id {
        "snr-strong" => [0.1, 0.3, 0.5]
            .iter()
            .map(|&pi| {
                one_d.config(
                    format!("snr-strong/pi={pi}"),
                    TrueModel::TwoMixture {
                        theta_star: vec![5.0],
                        pi,
                        sigma: 1.0,
                    },
                    FitSpec::symmetric(pi, 1.0, 1),
                    Metric::LocationError,
                )
            })
            .collect(),
        "snr-null" => [0.5, 0.3]
            .iter()
            .map(|&pi| {
                one_d.config(
                    format!("snr-null/pi={pi}"),
                    TrueModel::null(1),
                    FitSpec::symmetric(pi, 1.0, 1),
                    Metric::LocationError,
                )
            })
            .collect(),
        "unbalanced-rates" | "sample-balanced-rates" => {
            let pi = if id == "unbalanced-rates" { 0.3 } else { 0.5 };
            let base = Base {
                n_grid: DIM_N_GRID.to_vec(),
                d_grid: DIM_D_GRID.to_vec(),
                trials: 25,
                seed: master_seed,
            };
            vec![base.config(
                format!("{id}/pi={pi}"),
                TrueModel::null(1),
                FitSpec::symmetric(pi, 1.0, 1),
                Metric::LocationError,
            )]
        }
        "regression-null" => vec![one_d.config(
            "regression-null".into(),
            TrueModel::Regression {
                theta_star: vec![0.0],
                sigma: 1.0,
            },
            FitSpec {
                model: FitKind::RegressionBalanced,
                sigma: 1.0,
                d: 1,
            },
            Metric::LocationError,
        )],
        "unknown-weights" => {
            let base = Base {
                n_grid: RATE_N_GRID.to_vec(),
                d_grid: vec![2],
                trials: 50,
                seed: master_seed,
            };
            let fit = FitSpec {
                model: FitKind::SymmetricTwoUnknownWeight,
                sigma: 1.0,
                d: 2,
            };
            let mut unbalanced = base.config(
                "unknown-weights/pi0=0.1".into(),
                TrueModel::null(2),
                fit.clone(),
                Metric::LocationError,
            );
            // π⁰ + ‖θ⁰‖/(1 − 2π̄)² ≤ π̄ holds with π̄ = 0.2
            unbalanced.em.init = Init::explicit(ParamState::WeightedLocation {
                pi: 0.1,
                theta: vec![0.03, 0.0],
            });
            let mut balanced = base.config(
                "unknown-weights/pi0=0.49".into(),
                TrueModel::null(2),
                fit,
                Metric::LocationError,
            );
            balanced.em.init = Init::RandomStandardNormal { pi0: Some(0.49) };
            vec![unbalanced, balanced]
        }
        "more-cases" => {
            let base = Base {
                n_grid: RATE_N_GRID[..5].to_vec(),
                d_grid: vec![1],
                trials: 50,
                seed: master_seed,
            };
            let mut out: Vec<ExperimentConfig> = [0.1, 0.3, 0.5]
                .iter()
                .map(|&pi| {
                    base.config(
                        format!("more-cases/pi={pi}"),
                        TrueModel::null(1),
                        general(vec![pi, 1.0 - pi], false, vec![], 1),
                        Metric::Wasserstein2,
                    )
                })
                .collect();
            out.push(base.config(
                "more-cases/free-weights".into(),
                TrueModel::null(1),
                general(vec![0.5, 0.5], true, vec![], 1),
                Metric::Wasserstein2,
            ));
            out.push(base.config(
                "more-cases/k=3".into(),
                TrueModel::null(1),
                general(vec![1.0 / 3.0; 3], false, vec![], 1),
                Metric::Wasserstein2,
            ));
            out
        }
        "two-mixture" => {
            let base = Base {
                n_grid: RATE_N_GRID[..5].to_vec(),
                d_grid: vec![1],
                trials: 50,
                seed: master_seed,
            };
            two_mixture_configs(&base)
        }
        "more-mixtures" => {
            let base = Base {
                n_grid: RATE_N_GRID[..5].to_vec(),
                d_grid: vec![2],
                trials: 25,
                seed: master_seed,
            };
            vec![
                base.config(
                    "more-mixtures/null-k=3".into(),
                    TrueModel::null(2),
                    general(vec![1.0 / 3.0; 3], true, vec![], 2),
                    Metric::Wasserstein2,
                ),
                base.config(
                    "more-mixtures/two-k=4".into(),
                    TrueModel::GeneralMixture {
                        weights: vec![0.4, 0.6],
                        locations: vec![vec![0.0, 0.0], vec![4.0, 4.0]],
                        sigma: 1.0,
                    },
                    general(vec![0.25; 4], true, vec![], 2),
                    Metric::Wasserstein2,
                ),
            ]
        }
        POPULATION_SCENARIO => {
            return Err(Error::Config(
                "population-em is a trajectory scenario; use population_em_trajectories".into(),
            ))
        }
        other => {
            return Err(Error::Config(format!(
                "unknown scenario {other:?}; valid ids: {}",
                SCENARIO_IDS.join(", ")
            )))
        }
    };
    Ok(configs)
}

const TWO_MIXTURE_INIT: [f64; 3] = [0.5, -0.5, 9.5];

fn two_mixture_truth() -> TrueModel {
    TrueModel::GeneralMixture {
        weights: vec![0.5, 0.5],
        locations: vec![vec![0.0], vec![10.0]],
        sigma: 1.0,
    }
}

fn two_mixture_configs(base: &Base) -> Vec<ExperimentConfig> {
    let fit = general(vec![0.25, 0.25, 0.5], false, vec![[0, 1]], 1);
    let init = Init::explicit(ParamState::Mixture {
        weights: vec![0.25, 0.25, 0.5],
        locations: TWO_MIXTURE_INIT.iter().map(|&v| vec![v]).collect(),
    });
    [(0usize, 0.0), (2usize, 10.0)]
        .iter()
        .map(|&(index, target)| {
            let name = if index == 0 { "theta1" } else { "theta2" };
            let mut cfg = base.config(
                format!("two-mixture/{name}"),
                two_mixture_truth(),
                fit.clone(),
                Metric::ComponentError {
                    index,
                    target: vec![target],
                },
            );
            cfg.em.init = init.clone();
            cfg
        })
        .collect()
}

/// Population EM trajectories for the balanced, unbalanced, unknown-weight,
/// regression and (experimental, grid-integrated) three-component fits.
pub fn population_em_trajectories(steps: usize) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::new();
    let mut push = |scenario: &str, norms: &[f64], weights: &[f64]| {
        for (step, &norm) in norms.iter().enumerate() {
            rows.push(TrajectoryRow {
                scenario: scenario.to_string(),
                step,
                norm,
                weight: weights.get(step).copied(),
            });
        }
    };
    let location = |theta: Vec<f64>| ParamState::Location { theta };
    let runs: Vec<(&str, FitSpec, ParamState)> = vec![
        (
            "balanced",
            FitSpec::symmetric(0.5, 1.0, 1),
            location(vec![1.0]),
        ),
        (
            "unbalanced-pi=0.3",
            FitSpec::symmetric(0.3, 1.0, 1),
            location(vec![1.0]),
        ),
        (
            "regression",
            FitSpec {
                model: FitKind::RegressionBalanced,
                sigma: 1.0,
                d: 1,
            },
            location(vec![1.0]),
        ),
        (
            "unknown-weight-pi0=0.1",
            FitSpec {
                model: FitKind::SymmetricTwoUnknownWeight,
                sigma: 1.0,
                d: 2,
            },
            ParamState::WeightedLocation {
                pi: 0.1,
                theta: vec![0.03, 0.0],
            },
        ),
        (
            "unknown-weight-pi0=0.49",
            FitSpec {
                model: FitKind::SymmetricTwoUnknownWeight,
                sigma: 1.0,
                d: 2,
            },
            ParamState::WeightedLocation {
                pi: 0.49,
                theta: vec![0.03, 0.0],
            },
        ),
    ];
    for (name, fit, init) in runs {
        let spec = PopOperatorSpec::new(fit)?;
        let t = pop_trajectory(&spec, &init, steps)?;
        push(name, &t.norms, &t.weights);
    }
    let iterates = pop_em_general_1d_trajectory(
        &two_mixture_truth(),
        &[0.25, 0.25, 0.5],
        &TWO_MIXTURE_INIT,
        1.0,
        false,
        &[[0, 1]],
        steps,
    )?;
    let theta1: Vec<f64> = iterates.iter().map(|(_, l)| l[0].abs()).collect();
    let theta2: Vec<f64> = iterates.iter().map(|(_, l)| (l[2] - 10.0).abs()).collect();
    push("two-mixture-theta1", &theta1, &[]);
    push("two-mixture-theta2", &theta2, &[]);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_rate_id_builds_valid_configs() {
        for id in SCENARIO_IDS.iter().filter(|&&id| id != POPULATION_SCENARIO) {
            let configs = scenario_preset(id, 42).unwrap();
            assert!(!configs.is_empty(), "{id}");
            for c in &configs {
                c.validate().unwrap();
                assert!(c.scenario.starts_with(id));
                assert_eq!(c.master_seed, 42);
            }
        }
        assert!(scenario_preset(POPULATION_SCENARIO, 1).is_err());
        let err = scenario_preset("nope", 1).unwrap_err().to_string();
        assert!(err.contains("snr-null"));
    }

    #[test]
    fn population_rows() {
        let rows = population_em_trajectories(5).unwrap();
        let balanced: Vec<&TrajectoryRow> =
            rows.iter().filter(|r| r.scenario == "balanced").collect();
        assert_eq!(balanced.len(), 6);
        assert!(balanced[1].norm < balanced[0].norm);
        assert!(rows
            .iter()
            .any(|r| r.scenario == "unknown-weight-pi0=0.1" && r.weight == Some(0.1)));
        let t2: Vec<f64> = rows
            .iter()
            .filter(|r| r.scenario == "two-mixture-theta2")
            .map(|r| r.norm)
            .collect();
        assert!(t2.last().unwrap() < &t2[0]);
    }
}
