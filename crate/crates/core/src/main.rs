use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use nsgame::io::{parse_game, parse_strategy, write_game, write_strategy};
use nsgame::pack_cover::{approx_subns_value, McMethod};
use nsgame::random::{planted_instance, random_game, random_local_strategy, random_ns_strategy, random_subns_strategy, rng_for, GameParams};
use nsgame::transforms::{build_prover_reduction, lift_to_subns, run_subns_to_hrns};
use nsgame::value::exact_value;
use nsgame::{check_strategy, evaluate_value, Error, Game, Model, CHECK_TOL};

#[derive(Parser)]
#[command(name = "nsgame", version, about = "Non-signaling values of k-player one-round games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ns,
    Hrns,
    Subns,
    SubnsDelta,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyKind {
    Local,
    Ns,
    Subns,
    Planted,
}

#[derive(Subcommand)]
enum Command {
    /// Exact value under a strategy model.
    Value {
        #[arg(long)]
        game: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Approximate subNS value through mixed packing/covering.
    ApproxSubns {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        eps: f64,
    },
    /// Writes the 2-player reduced game, optionally with an optimal NS strategy for it.
    Reduce {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        optimal_out: Option<PathBuf>,
    },
    /// Lifts a reduced-game NS strategy to a subNS strategy of the original game.
    Lift {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        strategy: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Converts a subNS strategy into an honest-referee NS strategy with stars.
    Pipeline {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        strategy: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// The game reweighted to the retained queries; the output is hrNS against it.
        #[arg(long)]
        good_game_out: Option<PathBuf>,
    },
    /// Checks strategy membership in a model.
    Check {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        strategy: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = CHECK_TOL)]
        tol: f64,
        /// Read the strategy over alphabets extended by "*".
        #[arg(long)]
        extended: bool,
    },
    /// Generates a seeded random game, optionally with a strategy.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        a: usize,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        strategy: Option<StrategyKind>,
        #[arg(long)]
        strategy_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        eta: f64,
    },
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_)
            | Error::Io(_)
            | Error::InvalidGame(_)
            | Error::InvalidStrategy(_)
            | Error::InvalidParams(_)
            | Error::InvalidSubset(_) => Failure::Usage(e.to_string()),
            _ => Failure::Check(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_game(path: &Path) -> Result<Game, Failure> {
    parse_game(&read(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn model(arg: ModelArg, delta: Option<f64>) -> Result<Model, Failure> {
    Ok(match arg {
        ModelArg::Ns => Model::Ns,
        ModelArg::Hrns => Model::HrNs,
        ModelArg::Subns => Model::SubNs,
        ModelArg::SubnsDelta => {
            let d = delta.ok_or_else(|| Failure::Usage("--delta is required for subns-delta".into()))?;
            Model::SubNsDelta(d).validate()?
        }
    })
}

fn print(v: serde_json::Value) {
    let text = serde_json::to_string_pretty(&v).expect("json values serialize");
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Value { game, model: m, delta } => {
            let g = load_game(&game)?;
            let m = model(m, delta)?;
            let v = exact_value(&g, m)?;
            print(json!({ "model": m.to_string(), "value": v.value }));
        }
        Command::ApproxSubns { game, eps } => {
            let g = load_game(&game)?;
            let a = approx_subns_value(&g, eps)?;
            let by_weights = a.probes.iter().filter(|p| p.method == McMethod::Weights).count();
            print(json!({
                "value": a.value,
                "lo": a.lo,
                "hi": a.hi,
                "delta": a.delta,
                "probes": a.probes.len(),
                "weights_decided": by_weights,
            }));
        }
        Command::Reduce { game, out, optimal_out } => {
            let g = load_game(&game)?;
            let r = build_prover_reduction(&g)?;
            write(&out, &write_game(r.game()))?;
            let mut report = json!({
                "queries": r.game().query_sizes(),
                "answers": r.game().answer_sizes(),
            });
            if let Some(path) = optimal_out {
                let opt = r.ns_optimum()?;
                write(&path, &write_strategy(r.game(), &opt.strategy))?;
                report["ns_value"] = json!(opt.value);
            }
            print(report);
        }
        Command::Lift { game, strategy, out, tol } => {
            let g = load_game(&game)?;
            let r = build_prover_reduction(&g)?;
            let p = parse_strategy(r.game(), &read(&strategy)?, false)?;
            let reduced_value = evaluate_value(r.game(), &p)?;
            let lift = lift_to_subns(&r, &p, tol)?;
            let check = check_strategy(&g, &lift.strategy, Model::SubNs, tol)?;
            if let Some(path) = out {
                write(&path, &write_strategy(&g, &lift.strategy))?;
            }
            print(json!({
                "reduced_value": reduced_value,
                "value": evaluate_value(&g, &lift.strategy)?,
                "subns": check.pass,
                "worst_violation": check.worst_violation,
            }));
            if !check.pass {
                return Err(Failure::Check("lifted strategy is not sub-non-signaling".into()));
            }
        }
        Command::Pipeline { game, strategy, delta, trace, out, good_game_out } => {
            let g = load_game(&game)?;
            let p = parse_strategy(&g, &read(&strategy)?, false)?;
            let delta = match delta {
                Some(d) => d,
                None => {
                    let k = g.k() as f64;
                    let eps = 1.0 - evaluate_value(&g, &p)?;
                    let d = (eps * k.powf(3.0 * k)).min(0.5);
                    if d > 0.0 {
                        d
                    } else {
                        0.5
                    }
                }
            };
            let t = run_subns_to_hrns(&g, &p, delta)?;
            write(&trace, &(serde_json::to_string_pretty(&t).expect("traces serialize") + "\n"))?;
            if let Some(path) = out {
                write(&path, &write_strategy(&g, &t.p_star_star))?;
            }
            if let Some(path) = good_game_out {
                write(&path, &write_game(&g.with_pi(t.good.pi_star.clone())?))?;
            }
            print(json!({
                "input_value": t.input_value,
                "eps": t.eps,
                "delta": t.delta,
                "eps1": t.eps1.measured,
                "alpha": t.sim2.alpha,
                "alpha_total": t.expansion.alpha_total,
                "gamma": t.gamma,
                "good": t.good.good.iter().filter(|&&x| x).count(),
                "queries": t.good.good.len(),
                "final_value": t.final_value,
                "bound": t.bound,
                "invariants": t.checks.iter().map(|c| json!({"name": c.name, "pass": c.pass})).collect::<Vec<_>>(),
            }));
        }
        Command::Check { game, strategy, model: m, delta, tol, extended } => {
            let g = load_game(&game)?;
            let m = model(m, delta)?;
            let (g, p) = if extended {
                let ext = nsgame::transforms::extended_game(&g, g.pi().to_vec())?;
                let p = parse_strategy(&g, &read(&strategy)?, true)?;
                (ext, p)
            } else {
                let p = parse_strategy(&g, &read(&strategy)?, false)?;
                (g, p)
            };
            let report = check_strategy(&g, &p, m, tol)?;
            print(serde_json::to_value(&report).expect("reports serialize"));
            if !report.pass {
                return Err(Failure::Check(format!("strategy fails the {m} check")));
            }
        }
        Command::Gen { seed, k, q, a, density, out, strategy, strategy_out, eta } => {
            let params = GameParams::uniform(k, q, a, density);
            let mut rng = rng_for(seed, 0);
            let (g, p) = match strategy {
                Some(StrategyKind::Planted) => {
                    let (g, p) = planted_instance(&params, eta, &mut rng)?;
                    (g, Some(p))
                }
                Some(kind) => {
                    let g = random_game(&params, &mut rng)?;
                    let p = match kind {
                        StrategyKind::Local => random_local_strategy(&g, &mut rng),
                        StrategyKind::Ns => random_ns_strategy(&g, &mut rng)?,
                        _ => random_subns_strategy(&g, &mut rng)?,
                    };
                    (g, Some(p))
                }
                None => (random_game(&params, &mut rng)?, None),
            };
            write(&out, &write_game(&g))?;
            match (p, strategy_out) {
                (Some(p), Some(path)) => write(&path, &write_strategy(&g, &p))?,
                (Some(_), None) => return Err(Failure::Usage("--strategy needs --strategy-out".into())),
                _ => {}
            }
            print(json!({ "queries": g.num_queries(), "answers": g.num_answers() }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
