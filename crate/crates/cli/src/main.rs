mod args;

use std::hash::{BuildHasher, Hasher};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use serde::Deserialize;

use em_lab::em_population::{pop_trajectory, PopOperatorSpec};
use em_lab::fixedpoint::fixed_point_scaling_experiment;
use em_lab::harness::{
    self, deviation_sup_estimate, epoch_trace, format_float, population_em_trajectories,
    run_scenario, scenario_preset, write_fixed_points, write_trajectories, ExperimentConfig,
    RateTable, TrajectoryRow,
};
use em_lab::models::{sample, FitKind};
use em_lab::theory::{
    alpha_sequence, epoch_schedule, fisher_beta, gamma_low, gamma_up, pop_loglik_scan,
};
use em_lab::{
    derive_stream, run_em, EmRunConfig, Error, ErrorClass, FitSpec, ParamState, TrueModel,
};

use args::{Cli, Command, Global, PopEmArgs, PopFit, RatesArgs, TheoryCommand};

/// Exit status for command-line usage errors (sysexits `EX_USAGE`).
const EXIT_USAGE: u8 = 64;

type Result<T> = std::result::Result<T, Error>;

/// Input of `run-em`: the data law, the fit, the sample size and the EM
/// settings. Data and random initialization use the stream of `trial`.
#[derive(Debug, Deserialize)]
struct RunEmConfig {
    truth: TrueModel,
    fit: FitSpec,
    n: usize,
    #[serde(default)]
    em: EmRunConfig,
    #[serde(default)]
    trial: u64,
}

fn main() -> ExitCode {
    let command = Cli::command().after_help(args::scenario_help());
    let cli = match command
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Numeric => 2,
                ErrorClass::Io => 3,
            })
        }
    }
}

fn master_seed(global: &Global, needed: bool) -> Result<u64> {
    match global.seed {
        Some(seed) => Ok(seed),
        None if !needed => Ok(0),
        None if global.allow_nondeterministic => {
            let seed = std::collections::hash_map::RandomState::new()
                .build_hasher()
                .finish();
            eprintln!("using master seed {seed}");
            Ok(seed)
        }
        None => Err(Error::Config(
            "--seed is required (pass --allow-nondeterministic to draw one)".into(),
        )),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn run(cli: Cli) -> Result<()> {
    let seed = master_seed(&cli.global, cli.command.is_random())?;
    let g = &cli.global;
    match cli.command {
        Command::PopEm(a) => pop_em(&a, &g.out),
        Command::RunEm { config } => {
            let cfg: RunEmConfig = read_json(&config)?;
            let mut stream = derive_stream(seed, cfg.trial);
            let data = sample(&cfg.truth, cfg.n, &mut stream)?;
            let res = run_em(&cfg.fit, &data, &cfg.em, &mut stream)?;
            println!("{}", serde_json::to_string_pretty(&res)?);
            Ok(())
        }
        Command::Rates(a) => rates(&a, g, seed),
        Command::FixedPoints { n_list, trials } => {
            let table = harness::with_workers(g.workers, || {
                fixed_point_scaling_experiment(&n_list, trials, seed)
            })??;
            let path = g.out.join("fixed_points.csv");
            write_fixed_points(&table, &path)?;
            println!("n\ttrials\tnonzero\tfrequency\tmedian(|θ|·n^¼)");
            for r in &table.rows {
                let median = r.median_scaled.map_or("-".into(), |m| format!("{m:.4}"));
                println!(
                    "{}\t{}\t{}\t{:.3}\t{median}",
                    r.n, r.trials, r.nonzero, r.frequency
                );
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::EpochTrace(a) => {
            let theta0 = if a.theta0.is_empty() {
                vec![1.0; a.d]
            } else {
                a.theta0.clone()
            };
            let t = epoch_trace(
                a.n, a.d, a.sigma, a.delta, a.epsilon, &theta0, seed, a.trial,
            )?;
            println!(
                "omega = {:.6e}, {} epochs, T = {}",
                t.schedule.omega,
                t.schedule.epochs(),
                t.iterations
            );
            println!("level\talpha\tradius\tfirst crossing");
            for (level, crossing) in t.crossings.iter().enumerate() {
                let at = crossing.map_or("-".into(), |c| c.to_string());
                println!(
                    "{level}\t{:.6}\t{:.6e}\t{at}",
                    t.schedule.alphas[level],
                    t.schedule.radius(level)
                );
            }
            println!("final ‖θ‖ = {:.6e}", t.final_norm);
            let path = g.out.join("epoch_trace.json");
            write_text(&path, &serde_json::to_string_pretty(&t)?)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Deviation {
            n,
            d,
            r,
            pi,
            grid,
            trials,
        } => {
            let t = harness::with_workers(g.workers, || {
                deviation_sup_estimate(n, d, r, pi, grid, trials, seed)
            })??;
            println!(
                "n = {n}, d = {d}, r = {r}, pi = {pi}: mean sup deviation {:.6e}",
                t.mean
            );
            let path = g.out.join(format!("deviation_n={n}_d={d}.json"));
            write_text(&path, &serde_json::to_string_pretty(&t)?)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Loglik { pi, grid, d, sigma } => {
            let scan = pop_loglik_scan(pi, sigma, d, grid)?;
            let mut text = String::from("theta,loglik\n");
            for (t, v) in scan.thetas.iter().zip(&scan.values) {
                text.push_str(&format!("{},{}\n", format_float(*t), format_float(*v)));
            }
            let path = g.out.join(format!("loglik_pi={pi}.csv"));
            write_text(&path, &text)?;
            let argmax: Vec<String> = scan.argmax.iter().map(|t| format!("{t:.4}")).collect();
            println!("argmax over grid: {}", argmax.join(", "));
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Theory(t) => theory(t),
    }
}

fn pop_em(a: &PopEmArgs, out: &Path) -> Result<()> {
    if a.fit == PopFit::All {
        let rows = population_em_trajectories(a.steps)?;
        let path = out.join("population_em.csv");
        write_trajectories(&rows, &path)?;
        println!("wrote {} rows to {}", rows.len(), path.display());
        return Ok(());
    }
    let theta = if a.theta0.is_empty() {
        vec![1.0]
    } else {
        a.theta0.clone()
    };
    let d = theta.len();
    let (name, model, init) = match a.fit {
        PopFit::Balanced => (
            "balanced",
            FitKind::SymmetricTwo { pi: 0.5 },
            ParamState::Location { theta },
        ),
        PopFit::Unbalanced => (
            "unbalanced",
            FitKind::SymmetricTwo {
                pi: a.pi.unwrap_or(0.3),
            },
            ParamState::Location { theta },
        ),
        PopFit::Regression => (
            "regression",
            FitKind::RegressionBalanced,
            ParamState::Location { theta },
        ),
        PopFit::UnknownWeight => (
            "unknown-weight",
            FitKind::SymmetricTwoUnknownWeight,
            ParamState::WeightedLocation {
                pi: a.pi.unwrap_or(0.1),
                theta,
            },
        ),
        PopFit::All => unreachable!("handled above"),
    };
    let spec = PopOperatorSpec::new(FitSpec {
        model,
        sigma: a.sigma,
        d,
    })?;
    let record = pop_trajectory(&spec, &init, a.steps)?;
    let rows: Vec<TrajectoryRow> = record
        .norms
        .iter()
        .enumerate()
        .map(|(step, &norm)| TrajectoryRow {
            scenario: name.to_string(),
            step,
            norm,
            weight: record.weights.get(step).copied(),
        })
        .collect();
    let path = out.join(format!("pop_em_{name}.csv"));
    write_trajectories(&rows, &path)?;
    let last = rows.last().expect("trajectory includes the initial point");
    println!(
        "{name}: ‖θ‖ {:.6e} -> {:.6e} after {} steps",
        rows[0].norm, last.norm, last.step
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn load_configs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Box<ExperimentConfig>),
        Many(Vec<ExperimentConfig>),
    }
    Ok(match read_json::<OneOrMany>(path)? {
        OneOrMany::One(c) => vec![*c],
        OneOrMany::Many(v) => v,
    })
}

fn rates(a: &RatesArgs, g: &Global, seed: u64) -> Result<()> {
    if a.scenario.as_deref() == Some("population-em") && a.config.is_none() {
        let rows = population_em_trajectories(a.steps)?;
        let path = g.out.join("population_em.csv");
        write_trajectories(&rows, &path)?;
        println!("wrote {} rows to {}", rows.len(), path.display());
        return Ok(());
    }
    let mut configs = match (&a.config, &a.scenario) {
        (Some(path), scenario) => {
            let configs = load_configs(path)?;
            if let Some(id) = scenario {
                if let Some(c) = configs
                    .iter()
                    .find(|c| !c.scenario.starts_with(id.as_str()))
                {
                    return Err(Error::Config(format!(
                        "config scenario {:?} does not belong to --scenario {id}",
                        c.scenario
                    )));
                }
            }
            configs
        }
        (None, Some(id)) => scenario_preset(id, seed)?,
        (None, None) => unreachable!("clap requires --scenario or --config"),
    };
    if configs.is_empty() {
        return Err(Error::Config("no experiment configs".into()));
    }
    for c in &mut configs {
        if g.seed.is_some() || g.allow_nondeterministic {
            c.master_seed = seed;
        }
        if let Some(t) = a.trials {
            c.trials = t;
        }
        if c.output.is_none() {
            c.output = Some(g.out.clone());
        }
        c.validate()?;
    }
    let mut all = RateTable::default();
    for c in &configs {
        let table = harness::with_workers(g.workers, || run_scenario(c))??;
        print_rates(&table);
        all.extend(table);
    }
    let dirs: Vec<PathBuf> = configs.iter().filter_map(|c| c.output.clone()).collect();
    if let Some(dir) = dirs.first() {
        println!("wrote CSVs to {}", dir.display());
    }
    Ok(())
}

fn print_rates(table: &RateTable) {
    let mut stdout = std::io::stdout().lock();
    for r in &table.rows {
        let _ = writeln!(
            stdout,
            "{}\tn={}\td={}\t{} mean {:.4e} std {:.2e} report {:.4e}",
            r.scenario, r.n, r.d, r.metric, r.mean, r.std, r.report
        );
    }
    for s in &table.slopes {
        let _ = writeln!(stdout, "{}\t{}\tslope {:.4}", s.scenario, s.series, s.slope);
    }
}

fn theory(t: TheoryCommand) -> Result<()> {
    match t {
        TheoryCommand::Alpha { steps } => {
            for a in alpha_sequence(steps)? {
                println!("{a}");
            }
        }
        TheoryCommand::Gamma { theta, sigma } => {
            println!("gamma_up {}", gamma_up(theta, sigma)?);
            match gamma_low(theta, sigma) {
                Ok(v) => println!("gamma_low {v}"),
                Err(_) => println!("gamma_low undefined (needs ‖θ‖² ≤ 5σ²/8)"),
            }
        }
        TheoryCommand::Fisher { pi } => println!("{}", fisher_beta(pi)?),
        TheoryCommand::Schedule {
            n,
            d,
            sigma,
            delta,
            epsilon,
            theta0,
        } => {
            let s = epoch_schedule(n, d, sigma, delta, epsilon, theta0)?;
            println!("omega = {:.6e}", s.omega);
            println!("epoch\talpha\tradius\tlength\tcumulative");
            for (l, (len, cum)) in s.epoch_lengths.iter().zip(&s.cumulative).enumerate() {
                println!("{l}\t{:.6}\t{:.6e}\t{len}\t{cum}", s.alphas[l], s.radius(l));
            }
        }
    }
    Ok(())
}
