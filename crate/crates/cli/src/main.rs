use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use stackprice::io::write_trace_to;
use stackprice::leader::{best_run, solve_multistart};
use stackprice::oracle::{fd_jacobian, fd_total_gradient, max_abs_diff, DEFAULT_FD_STEP};
use stackprice::sensitivity::DEFAULT_ACTIVE_TOL;
use stackprice::{
    grid_search, load_game, nash_sensitivities, solve_nash, validate_game, Error, LeaderConfig, NashConfig,
    PricingGame, TraceFormat,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NONCONVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "stackprice", version, about = "Stackelberg pricing games: equilibria, sensitivities, leader descent")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Game or scenario file (JSON).
    #[arg(long, global = true)]
    game: Option<PathBuf>,

    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for TraceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TraceFormat::Csv,
            Format::Json => TraceFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FdTarget {
    Jacobian,
    Gradient,
}

#[derive(Subcommand)]
enum Command {
    /// Check the game's standing assumptions.
    Validate,
    /// Followers' Nash equilibrium at a fixed price.
    Nash {
        /// Price vector, comma separated; box midpoint when omitted.
        #[arg(long)]
        pi: Option<String>,
        #[arg(long, default_value_t = stackprice::nash::DEFAULT_EPS)]
        eps: f64,
    },
    /// Leader descent; writes the iteration trace.
    Solve {
        /// Initial price, comma separated; box midpoint when omitted.
        #[arg(long)]
        pi0: Option<String>,
        #[arg(long, default_value_t = 0.25)]
        beta: f64,
        #[arg(long, default_value_t = 1e-6)]
        sbar: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        /// Nash tolerance.
        #[arg(long, default_value_t = stackprice::nash::DEFAULT_EPS)]
        eps: f64,
        #[arg(long, default_value_t = 10_000)]
        max_outer: usize,
        /// Several initial prices separated by `;`. The best run's trace is written.
        #[arg(long, conflicts_with = "pi0")]
        seed_list: Option<String>,
    },
    /// Exhaustive evaluation on a uniform price grid.
    Grid {
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
    /// Compare analytic derivatives with finite differences.
    FdCheck {
        #[arg(long, value_enum)]
        what: FdTarget,
        #[arg(long)]
        pi: Option<String>,
        #[arg(long, default_value_t = DEFAULT_FD_STEP)]
        step: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Validation(_) => EXIT_VALIDATION,
        Failure::Lib(e) if e.is_nonconvergence() => EXIT_NONCONVERGENCE,
        Failure::Lib(e) => match e.root() {
            Error::Io(_) => EXIT_IO,
            Error::StalledStep { .. } => EXIT_NONCONVERGENCE,
            _ => EXIT_VALIDATION,
        },
    }
}

fn parse_vector(text: &str, expected: usize, flag: &str) -> Result<DVector<f64>, Failure> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Error::Config(format!("{flag}: {e}")))?;
    if values.len() != expected {
        return Err(Error::Config(format!("{flag}: expected {expected} values, got {}", values.len())).into());
    }
    Ok(DVector::from_vec(values))
}

fn price_or_midpoint(game: &PricingGame, text: Option<&str>, flag: &str) -> Result<DVector<f64>, Failure> {
    match text {
        Some(t) => parse_vector(t, game.price_dim(), flag),
        None => Ok(game.box_midpoint()),
    }
}

fn open_output(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_valid_game(path: &Option<PathBuf>) -> Result<PricingGame, Failure> {
    let path = path.as_ref().ok_or_else(|| Error::Config("--game FILE is required".into()))?;
    let game = load_game(path)?;
    let report = validate_game(&game)?;
    if !report.passed() {
        return Err(Failure::Validation(report.to_string()));
    }
    Ok(game)
}

fn write_json(out: &mut dyn Write, v: &Value) -> Result<(), Failure> {
    serde_json::to_writer_pretty(&mut *out, v).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn write_csv_rows(out: &mut dyn Write, header: &[String], rows: &[Vec<String>]) -> Result<(), Failure> {
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        writeln!(out, "{}", r.join(","))?;
    }
    Ok(())
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate => {
            let path = cli.game.as_ref().ok_or_else(|| Error::Config("--game FILE is required".into()))?;
            let game = load_game(path)?;
            let report = validate_game(&game)?;
            let mut out = open_output(&cli.out)?;
            match cli.format {
                Format::Json => {
                    let checks: Vec<Value> = report
                        .checks
                        .iter()
                        .map(|c| json!({"check": c.kind.to_string(), "path": c.path(), "passed": c.passed, "detail": c.detail}))
                        .collect();
                    write_json(
                        &mut out,
                        &json!({"passed": report.passed(), "checks": checks, "warnings": report.warnings}),
                    )?;
                }
                Format::Csv => {
                    let rows: Vec<Vec<String>> = report
                        .checks
                        .iter()
                        .map(|c| {
                            vec![c.path(), format!("\"{}\"", c.kind), c.passed.to_string(), format!("\"{}\"", c.detail)]
                        })
                        .collect();
                    write_csv_rows(&mut out, &["path", "check", "passed", "detail"].map(String::from), &rows)?;
                }
            }
            out.flush()?;
            if !report.passed() {
                return Err(Failure::Validation(report.to_string()));
            }
        }
        Command::Nash { pi, eps } => {
            let game = load_valid_game(&cli.game)?;
            let price = price_or_midpoint(&game, pi.as_deref(), "--pi")?;
            let r = solve_nash(&game, &price, &NashConfig::with_eps(eps), None)?;
            let value = game.leader_value_and_partials(&r.x, &price).value;
            info!("Nash converged in {} sweeps, residual {:e}", r.iterations, r.residual);
            let mut out = open_output(&cli.out)?;
            match cli.format {
                Format::Json => {
                    let blocks: Vec<Vec<f64>> = r.x.blocks().iter().map(|b| b.iter().copied().collect()).collect();
                    write_json(
                        &mut out,
                        &json!({
                            "price": price.as_slice(),
                            "strategy": blocks,
                            "aggregate": r.x.aggregate().as_slice(),
                            "JL": value,
                            "iterations": r.iterations,
                            "residual": r.residual,
                        }),
                    )?;
                }
                Format::Csv => {
                    let mut header = vec!["follower".to_string()];
                    header.extend((1..=game.strategy_dim()).map(|k| format!("x_{k}")));
                    let rows: Vec<Vec<String>> =
                        r.x.blocks()
                            .iter()
                            .enumerate()
                            .map(|(i, b)| std::iter::once(i.to_string()).chain(b.iter().map(f64::to_string)).collect())
                            .collect();
                    write_csv_rows(&mut out, &header, &rows)?;
                }
            }
            out.flush()?;
        }
        Command::Solve { pi0, beta, sbar, delta, eps, max_outer, seed_list } => {
            let game = load_valid_game(&cli.game)?;
            let seeds = match seed_list {
                Some(list) => list
                    .split(';')
                    .map(|s| parse_vector(s, game.price_dim(), "--seed-list"))
                    .collect::<Result<Vec<_>, _>>()?,
                None => vec![price_or_midpoint(&game, pi0.as_deref(), "--pi0")?],
            };
            let cfg = LeaderConfig { beta, s_bar: sbar, delta, max_outer, ..LeaderConfig::default() };
            let nash_cfg = NashConfig::with_eps(eps);
            let runs = solve_multistart(&game, &seeds, &nash_cfg, &cfg);
            for (seed, run) in seeds.iter().zip(&runs) {
                match run {
                    Ok(r) => info!(
                        "seed {:?}: JL {:e} after {} iterations ({:?})",
                        seed.as_slice(),
                        r.value,
                        r.trace.len(),
                        r.termination
                    ),
                    Err(e) => warn!("seed {:?}: {e}", seed.as_slice()),
                }
            }
            let Some(best) = best_run(&runs) else {
                let mut runs = runs;
                return Err(runs.swap_remove(0).unwrap_err().into());
            };
            let r = runs[best].as_ref().unwrap();
            eprintln!(
                "final price {:?}, JL = {:e}, {} iterations, {:?}",
                r.price.as_slice(),
                r.value,
                r.trace.len(),
                r.termination
            );
            let mut out = open_output(&cli.out)?;
            write_trace_to(&r.trace, &mut out, cli.format.into())?;
            out.flush()?;
        }
        Command::Grid { points } => {
            let game = load_valid_game(&cli.game)?;
            let g = grid_search(&game, points, &NashConfig::default())?;
            let mut out = open_output(&cli.out)?;
            match cli.format {
                Format::Json => {
                    let rows: Vec<Value> = g
                        .ranked
                        .iter()
                        .enumerate()
                        .map(|(k, p)| json!({"rank": k + 1, "price": p.price.as_slice(), "JL": p.value}))
                        .collect();
                    write_json(&mut out, &Value::Array(rows))?;
                }
                Format::Csv => {
                    let mut header = vec!["rank".to_string()];
                    header.extend((1..=game.price_dim()).map(|k| format!("pi_{k}")));
                    header.push("JL".into());
                    let rows: Vec<Vec<String>> = g
                        .ranked
                        .iter()
                        .enumerate()
                        .map(|(k, p)| {
                            std::iter::once((k + 1).to_string())
                                .chain(p.price.iter().map(f64::to_string))
                                .chain(std::iter::once(p.value.to_string()))
                                .collect()
                        })
                        .collect();
                    write_csv_rows(&mut out, &header, &rows)?;
                }
            }
            out.flush()?;
            eprintln!("best grid price {:?}, JL = {:e}", g.best().price.as_slice(), g.best().value);
        }
        Command::FdCheck { what, pi, step } => {
            let game = load_valid_game(&cli.game)?;
            let price = price_or_midpoint(&game, pi.as_deref(), "--pi")?;
            let nash_cfg = NashConfig::with_eps(1e-12);
            let mut out = open_output(&cli.out)?;
            match what {
                FdTarget::Jacobian => {
                    let nash = solve_nash(&game, &price, &nash_cfg, None)?;
                    let sens = nash_sensitivities(&game, &nash, &price, DEFAULT_ACTIVE_TOL)?;
                    let sigma = nash.x.aggregate();
                    let mut rows = Vec::new();
                    for (i, f) in game.followers.iter().enumerate() {
                        let others = &sigma - nash.x.block(i);
                        let fd = fd_jacobian(f, &others, &price, step)?;
                        rows.push((i, max_abs_diff(&sens[i].jacobian, &fd), sens[i].jacobian.clone(), fd));
                    }
                    match cli.format {
                        Format::Json => {
                            let v: Vec<Value> = rows
                                .iter()
                                .map(|(i, d, a, f)| {
                                    json!({"follower": i, "analytic": matrix_json(a), "fd": matrix_json(f), "max_abs_diff": d})
                                })
                                .collect();
                            write_json(&mut out, &Value::Array(v))?;
                        }
                        Format::Csv => {
                            let rows: Vec<Vec<String>> =
                                rows.iter().map(|(i, d, _, _)| vec![i.to_string(), d.to_string()]).collect();
                            write_csv_rows(&mut out, &["follower", "max_abs_diff"].map(String::from), &rows)?;
                        }
                    }
                }
                FdTarget::Gradient => {
                    let c = fd_total_gradient(&game, &price, step.max(1e-5), &nash_cfg)?;
                    match cli.format {
                        Format::Json => write_json(
                            &mut out,
                            &json!({"fd": c.fd.as_slice(), "assembled": c.formula.as_slice(), "discrepancy": c.discrepancy}),
                        )?,
                        Format::Csv => {
                            let rows: Vec<Vec<String>> = (0..c.fd.len())
                                .map(|k| vec![(k + 1).to_string(), c.fd[k].to_string(), c.formula[k].to_string()])
                                .collect();
                            write_csv_rows(&mut out, &["coordinate", "fd", "assembled"].map(String::from), &rows)?;
                        }
                    }
                }
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Validation(report) => eprint!("validation failed:\n{report}"),
                Failure::Lib(e) => error!("{e}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
