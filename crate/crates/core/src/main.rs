use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use awm::autodiff::suite::{run_suite, CheckKind, SuiteConfig, EPISODE_TOL};
use awm::eval::{evaluate, write_eval_csv, Driver, EvalConfig};
use awm::metrics::summarize;
use awm::mpc::{mpc_eval, parse_grid, write_mpc_csv, MpcConfig, RewardKind};
use awm::nn::{load_checkpoint, save_checkpoint, ModelParams, RouteConditioning};
use awm::parallel::Workers;
use awm::render::{collect_series, render_svg, write_series_csv};
use awm::scenario::{generate_suite, load_dataset, save_dataset, Scenario, ScenarioKind};
use awm::train::{train, write_log, LogRow, Progress, TrainConfig};

#[derive(Parser)]
#[command(name = "awm", version, about = "Differentiable driving simulator and analytic world models")]
struct Cli {
    /// Parallel scenario workers; 1 is bit-reproducible (so is any other count).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Run seed; falls back to the config file, then AWM_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration with optional [train], [eval] and [mpc] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DriverArg {
    Policy,
    Planner,
    Expert,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario dataset.
    Gen {
        #[arg(long, value_delimiter = ',', default_value = "straight,arc,s-curve,stop-go")]
        kinds: Vec<ScenarioKind>,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the policy and the world-model heads.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        policy_epochs: Option<usize>,
        #[arg(long)]
        head_epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        route_conditioning: Option<RouteConditioning>,
    },
    /// Reactive closed-loop evaluation: ADE for one rollout, minADE for several.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "driver")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long)]
        route_conditioning: Option<RouteConditioning>,
        #[arg(long, value_enum)]
        driver: Option<DriverArg>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Model-predictive control over a grid of (N, k, H) settings.
    Mpc {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Cells "N,k,H" separated by ';'.
        #[arg(long, default_value = "1,1,1;8,3,10")]
        grid: String,
        #[arg(long, value_delimiter = ',')]
        reward: Vec<RewardKind>,
        #[arg(long)]
        route_conditioning: Option<RouteConditioning>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Finite-difference check of every primitive and episode loss gradient.
    Gradcheck {
        /// Relative tolerance for primitives.
        #[arg(long, default_value_t = awm::autodiff::suite::PRIMITIVE_TOL)]
        tol: f64,
        #[arg(long, default_value_t = EPISODE_TOL)]
        episode_tol: f64,
        #[arg(long, default_value_t = 10)]
        points: usize,
    },
    /// Export expert, realized and imagined trajectories as CSV and SVG.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        scenario_id: usize,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        #[arg(long, default_value_t = 10)]
        stride: usize,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
}

/// Resolved configuration, echoed to `<run>/config.toml`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seed: Option<u64>,
    train: TrainConfig,
    eval: EvalConfig,
    mpc: MpcConfig,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<awm::Error> for Failure {
    fn from(e: awm::Error) -> Self {
        let code = match e {
            awm::Error::Config(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn internal(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var("AWM_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("AWM_SEED={v:?} is not an integer"))),
        Err(_) => Ok(0),
    }
}

fn read_data(path: &Path) -> CliResult<Vec<Scenario>> {
    if !path.is_file() {
        return Err(Failure::usage(format!("dataset {} does not exist", path.display())));
    }
    Ok(load_dataset(path)?)
}

fn read_ckpt(path: &Path) -> CliResult<ModelParams> {
    if !path.is_file() {
        return Err(Failure::usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint(path)?)
}

/// Create the run directory layout and return it.
fn run_dir(out: &Path) -> CliResult<PathBuf> {
    for sub in ["checkpoints", "logs", "reports"] {
        fs::create_dir_all(out.join(sub)).map_err(|e| internal(out, e))?;
    }
    Ok(out.to_path_buf())
}

#[derive(Clone, Copy)]
enum Section {
    Train,
    Eval,
    Mpc,
}

/// Write the resolved config, keeping the other commands' tables from an
/// earlier echo in the same run directory.
fn echo_config(dir: &Path, cfg: &RunConfig, section: Section) -> CliResult<()> {
    let path = dir.join("config.toml");
    let mut merged = fs::read_to_string(&path)
        .ok()
        .and_then(|t| toml::from_str::<RunConfig>(&t).ok())
        .unwrap_or_default();
    merged.seed = cfg.seed;
    match section {
        Section::Train => merged.train = cfg.train.clone(),
        Section::Eval => merged.eval = cfg.eval,
        Section::Mpc => merged.mpc = cfg.mpc,
    }
    let text = toml::to_string(&merged).map_err(|e| internal(dir, e))?;
    fs::write(&path, text).map_err(|e| internal(&path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| internal(path, e))
}

struct Printer;

impl Progress for Printer {
    fn epoch(&mut self, row: &LogRow) {
        if row.epoch.is_multiple_of(10) {
            eprintln!("{}", row.csv());
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let workers = Workers::new(cli.workers).map_err(|e| Failure::usage(e.to_string()))?;
    let mut cfg = load_config(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    cfg.eval.seed = seed;
    cfg.mpc.seed = seed;

    match cli.command {
        Command::Gen { kinds, count, out } => {
            if kinds.is_empty() {
                return Err(Failure::usage("--kinds needs at least one kind"));
            }
            let data = generate_suite(&kinds, count, seed);
            save_dataset(&data, &out)?;
            println!("wrote {} scenarios to {}", data.len(), out.display());
        }
        Command::Train {
            data,
            out,
            policy_epochs,
            head_epochs,
            learning_rate,
            batch_size,
            route_conditioning,
        } => {
            let t = &mut cfg.train;
            t.policy_epochs = policy_epochs.unwrap_or(t.policy_epochs);
            t.head_epochs = head_epochs.unwrap_or(t.head_epochs);
            t.learning_rate = learning_rate.unwrap_or(t.learning_rate);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.route = route_conditioning.unwrap_or(t.route);
            t.validate()?;
            let scenarios = read_data(&data)?;
            let dir = run_dir(&out)?;
            echo_config(&dir, &cfg, Section::Train)?;
            let outcome = train(&scenarios, &cfg.train, &workers, &mut Printer)?;
            let ckpt = dir.join("checkpoints/final.awmc");
            save_checkpoint(&outcome.params, &ckpt)?;
            let log = dir.join("logs/train.csv");
            write_log(&outcome.log, create(&log)?).map_err(|e| internal(&log, e))?;
            if let Some(msg) = outcome.diverged {
                return Err(Failure {
                    code: 1,
                    message: format!(
                        "training diverged ({msg}); last finite parameters saved to {}",
                        ckpt.display()
                    ),
                });
            }
            println!("wrote {}", ckpt.display());
        }
        Command::Eval {
            data,
            ckpt,
            rollouts,
            route_conditioning,
            driver,
            out,
        } => {
            let e = &mut cfg.eval;
            e.rollouts = rollouts.unwrap_or(e.rollouts);
            e.route = route_conditioning.unwrap_or(e.route);
            if e.rollouts == 0 {
                return Err(Failure::usage("--rollouts must be at least 1"));
            }
            let scenarios = read_data(&data)?;
            let params = ckpt.as_deref().map(read_ckpt).transpose()?;
            let drv = match (driver.unwrap_or(DriverArg::Policy), params.as_ref()) {
                (DriverArg::Expert, _) => Driver::Expert,
                (DriverArg::Policy, Some(p)) => Driver::Policy(p),
                (DriverArg::Planner, Some(p)) => Driver::Planner(p),
                _ => return Err(Failure::usage("--ckpt is required for the policy and planner drivers")),
            };
            let dir = run_dir(&out)?;
            echo_config(&dir, &cfg, Section::Eval)?;
            let rows = evaluate(drv, &scenarios, &cfg.eval, &workers)?;
            let path = dir.join("reports/eval.csv");
            write_eval_csv(&rows, create(&path)?).map_err(|e| internal(&path, e))?;
            let s = summarize(&rows.iter().map(|r| r.eval).collect::<Vec<_>>());
            let metric = if cfg.eval.rollouts == 1 { "ade" } else { "min_ade" };
            println!(
                "scenarios {} {metric} {:.4} overlap {:.4} offroad {:.4}",
                s.count, s.ade, s.overlap_rate, s.offroad_rate
            );
        }
        Command::Mpc {
            data,
            ckpt,
            grid,
            reward,
            route_conditioning,
            out,
        } => {
            let cells = parse_grid(&grid)?;
            let rewards = if reward.is_empty() { vec![cfg.mpc.reward] } else { reward };
            cfg.mpc.route = route_conditioning.unwrap_or(cfg.mpc.route);
            for &(n, k, h) in &cells {
                MpcConfig {
                    rollouts: n,
                    top_k: k,
                    horizon: h,
                    ..cfg.mpc
                }
                .validate()?;
            }
            let scenarios = read_data(&data)?;
            let params = read_ckpt(&ckpt)?;
            let dir = run_dir(&out)?;
            echo_config(&dir, &cfg, Section::Mpc)?;
            let mut rows = Vec::new();
            for &reward in &rewards {
                for &(n, k, h) in &cells {
                    let c = MpcConfig {
                        rollouts: n,
                        top_k: k,
                        horizon: h,
                        reward,
                        ..cfg.mpc
                    };
                    let r = mpc_eval(&params, &scenarios, &c, &workers)?;
                    let s = summarize(&r.iter().map(|x| x.eval).collect::<Vec<_>>());
                    println!(
                        "reward {reward} n {n} k {k} h {h} ade {:.4} overlap {:.4} offroad {:.4}",
                        s.ade, s.overlap_rate, s.offroad_rate
                    );
                    rows.extend(r);
                }
            }
            let path = dir.join("reports/mpc.csv");
            write_mpc_csv(&rows, create(&path)?).map_err(|e| internal(&path, e))?;
        }
        Command::Gradcheck {
            tol,
            episode_tol,
            points,
        } => {
            if points == 0 || !(tol > 0.0) || !(episode_tol > 0.0) {
                return Err(Failure::usage("--points and tolerances must be positive"));
            }
            let entries = run_suite(&SuiteConfig {
                seed,
                points,
                primitive_tol: tol,
                episode_tol,
            });
            let mut failed = 0;
            for e in &entries {
                let kind = match e.kind {
                    CheckKind::Primitive => "primitive",
                    CheckKind::Episode => "episode",
                };
                let ok = e.report.passed();
                failed += usize::from(!ok);
                println!(
                    "{} {kind} {} point {} max_rel {:.3e} boundary {}",
                    if ok { "PASS" } else { "FAIL" },
                    e.report.name,
                    e.point,
                    e.report.max_rel_error(),
                    e.report.boundary_count()
                );
            }
            println!("{} checks, {failed} failed", entries.len());
            if failed > 0 {
                return Err(Failure {
                    code: 1,
                    message: format!("{failed} gradient checks failed"),
                });
            }
        }
        Command::Render {
            data,
            ckpt,
            scenario_id,
            horizon,
            stride,
            out,
        } => {
            let scenarios = read_data(&data)?;
            let scn = scenarios.get(scenario_id).ok_or_else(|| {
                Failure::usage(format!(
                    "scenario id {scenario_id} out of range (dataset has {})",
                    scenarios.len()
                ))
            })?;
            let params = ckpt.as_deref().map(read_ckpt).transpose()?;
            let dir = run_dir(&out)?;
            echo_config(&dir, &cfg, Section::Eval)?;
            let series = collect_series(params.as_ref(), scn, scenario_id, &cfg.eval, horizon, stride);
            let csv = dir.join(format!("reports/scenario_{scenario_id}.csv"));
            write_series_csv(&series, create(&csv)?).map_err(|e| internal(&csv, e))?;
            let svg = dir.join(format!("reports/scenario_{scenario_id}.svg"));
            fs::write(&svg, render_svg(scn, &series)).map_err(|e| internal(&svg, e))?;
            println!("wrote {} and {}", csv.display(), svg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
