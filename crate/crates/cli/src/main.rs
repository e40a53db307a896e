use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};

use clap::{Args, Parser, Subcommand};
use dominic_core::lagrange::ExpertSource;
use dominic_core::sweep::{self, SweepCell, SweepGrid, SweepRow};
use dominic_core::trainer::{
    evaluate, pretrain_expert, resolve_expert_values, square_obstacle_trajectories, train, write_json,
    write_trajectories_csv, Checkpoint, EvalReport, RunPaths,
};
use dominic_core::verify::{self, Fault};
use dominic_core::{Error, Result, RunConfig};

/// Constrained diverse-skill training over gridworld and point-mass environments.
///
/// Outputs go to `<DOMINIC_OUTPUT_ROOT>/<output_dir>/<run_id>` (the root defaults
/// to the working directory).
#[derive(Parser)]
#[command(name = "dominic", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a skill set and write metrics, checkpoints and an evaluation report.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Pretrain a single-skill expert first and take the constraint values from it.
        #[arg(long)]
        pretrain_expert: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        checkpoint: PathBuf,
        /// Evaluate in the environment of this config instead of the checkpoint's own.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Write the report here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every cell of an alpha x ell0 x seed grid and summarize it as CSV.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// TOML file with `alphas`, `ell0` and `seeds` arrays.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Constraint ratios of one cell as `task,regularizer,style` (repeatable).
        #[arg(long = "alpha", value_name = "A,A,A")]
        alphas: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        ell0: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Run each cell as a separate `dominic train` process.
        #[arg(long)]
        processes: bool,
        /// Concurrent cell processes (with `--processes`).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// CSV path (default `<run dir>/sweep.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll out every skill in front of a square box and write the paths as CSV.
    ExportTrajectories {
        checkpoint: PathBuf,
        /// Environment to place the box in (default: the checkpoint's).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        episodes: usize,
        /// CSV path (default `<run dir>/square_obstacle.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite against exact oracles.
    Verify {
        /// Only checks whose name starts with this prefix.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Train only the single-skill expert and save its checkpoint.
    PretrainExpert {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Override a config key, e.g. `--set trainer.lr=1e-3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override the iteration count (warm start is capped to it).
    #[arg(long)]
    iterations: Option<usize>,
}

impl RunArgs {
    fn load(&self, expert: bool) -> Result<RunConfig> {
        let mut cfg = RunConfig::load_with_overrides(&self.config, &self.overrides)?;
        if let Some(n) = self.iterations {
            if expert {
                cfg.trainer.expert_iterations = n;
            } else {
                cfg.trainer.iterations = n;
                cfg.trainer.warm_start_iters = cfg.trainer.warm_start_iters.min(n);
            }
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Unsupported(_) => 2,
        _ => 3,
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Train { run, pretrain_expert } => {
            let mut cfg = run.load(false)?;
            if pretrain_expert {
                cfg.lagrange.expert_source = ExpertSource::Pretrain;
            }
            cmd_train(&cfg)
        }
        Cmd::Eval {
            checkpoint,
            config,
            episodes,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let env = match config {
                Some(p) => RunConfig::load(&p)?.env,
                None => ckpt.config.env.clone(),
            };
            let (report, _) = evaluate(&ckpt, &env, episodes.unwrap_or(ckpt.config.trainer.eval_episodes))?;
            match out {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sweep {
            run,
            grid,
            alphas,
            ell0,
            seeds,
            processes,
            jobs,
            out,
        } => {
            let base = run.load(false)?;
            let grid = build_grid(grid.as_deref(), &alphas, ell0, seeds, &base)?;
            let dir = base.run_dir();
            let rows = if processes {
                sweep_processes(&base, &grid, &dir, jobs.max(1))?
            } else {
                sweep::run_sweep(&base, &grid, true)?
            };
            let out = out.unwrap_or_else(|| dir.join("sweep.csv"));
            sweep::write_csv(&rows, &out)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!("{} rows ({failed} failed) -> {}", rows.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::ExportTrajectories {
            checkpoint,
            config,
            episodes,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let env = match config {
                Some(p) => RunConfig::load(&p)?.env,
                None => ckpt.config.env.clone(),
            };
            let points = square_obstacle_trajectories(&ckpt, &env, episodes)?;
            let out = out.unwrap_or_else(|| ckpt.config.run_dir().join("square_obstacle.csv"));
            write_trajectories_csv(&points, &out)?;
            println!("{} points -> {}", points.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify { only, inject_fault } => {
            let fault = inject_fault.map(|f| f.parse::<Fault>()).transpose()?;
            let results = verify::run_matching(only.as_deref().unwrap_or(""), fault);
            if results.is_empty() {
                return Err(Error::Usage(format!("no check matches {:?}", only.unwrap_or_default())));
            }
            let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
            for r in &results {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                println!("{tag}  {:width$}  {}", r.name, r.detail);
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if failed.is_empty() {
                println!("{} checks passed", results.len());
                Ok(ExitCode::SUCCESS)
            } else {
                println!("violated: {}", failed.join(", "));
                Ok(ExitCode::from(1))
            }
        }
        Cmd::PretrainExpert { run } => {
            let cfg = run.load(true)?;
            let paths = RunPaths::new(cfg.run_dir());
            let outcome = pretrain_expert(&cfg, Some(&paths))?;
            println!(
                "expert values {:?} -> {}",
                outcome.values,
                paths.expert_checkpoint().display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_train(cfg: &RunConfig) -> Result<ExitCode> {
    let paths = RunPaths::new(cfg.run_dir());
    let experts = resolve_expert_values(cfg, Some(&paths))?;
    let outcome = train(cfg, &experts, Some(&paths))?;
    print_summary(&outcome.report);
    println!("outputs in {}", paths.dir.display());
    Ok(ExitCode::SUCCESS)
}

fn print_summary(report: &EvalReport) {
    println!(
        "expert values {:?}, thresholds {:?}",
        report.expert_values, report.thresholds
    );
    for s in &report.skills {
        println!(
            "skill {}: returns {:?} satisfied {:?}",
            s.skill, s.mean_returns, s.satisfied
        );
    }
    if let Some(d) = report.diversity_metric {
        println!("diversity {d:.6}");
    }
    println!("all constraints satisfied: {}", report.all_satisfied);
}

fn parse_alpha(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Usage(format!("--alpha {text:?}: {e}")))?;
    parts
        .try_into()
        .map_err(|_| Error::Usage(format!("--alpha {text:?}: expected three comma-separated values")))
}

fn build_grid(
    file: Option<&Path>,
    alphas: &[String],
    ell0: Vec<f64>,
    seeds: Vec<u64>,
    base: &RunConfig,
) -> Result<SweepGrid> {
    let mut grid = match file {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SweepGrid {
            alphas: vec![],
            ell0: vec![],
            seeds: vec![],
        },
    };
    if !alphas.is_empty() {
        grid.alphas = alphas.iter().map(|a| parse_alpha(a)).collect::<Result<_>>()?;
    }
    if grid.alphas.is_empty() {
        let a = &base.lagrange.alpha;
        grid.alphas = vec![[a[0], a[1], a[2]]];
    }
    if !ell0.is_empty() {
        grid.ell0 = ell0;
    }
    if !seeds.is_empty() {
        grid.seeds = seeds;
    }
    if grid.seeds.is_empty() {
        grid.seeds = vec![base.seed];
    }
    grid.validate()?;
    Ok(grid)
}

fn cell_overrides(cfg: &RunConfig) -> Vec<String> {
    let alpha: Vec<String> = cfg.lagrange.alpha.iter().map(|a| format!("{a:?}")).collect();
    vec![
        format!("seed={}", cfg.seed),
        format!("lagrange.alpha=[{}]", alpha.join(",")),
        format!("diversity.ell0={:?}", cfg.diversity.ell0),
        format!("output_dir={}", cfg.output_dir),
        format!("run_id={}", cfg.run_id),
    ]
}

fn spawn_cell(exe: &Path, base_toml: &Path, cfg: &RunConfig, log: &Path) -> Result<Child> {
    let log = std::fs::File::create(log)?;
    let mut cmd = Command::new(exe);
    cmd.arg("train").arg(base_toml);
    for o in cell_overrides(cfg) {
        cmd.arg("--set").arg(o);
    }
    Ok(cmd.stdin(Stdio::null()).stdout(log.try_clone()?).stderr(log).spawn()?)
}

fn finish_cell(cell: &SweepCell, cfg: &RunConfig, child: std::io::Result<std::process::ExitStatus>) -> SweepRow {
    let status = match child {
        Ok(s) => s,
        Err(e) => return sweep::failed_row(cell, &Error::Io(e)),
    };
    if !status.success() {
        let code = status.code().map_or("signal".to_string(), |c| c.to_string());
        return sweep::failed_row(cell, &Error::Diverged(format!("cell process exited with {code}")));
    }
    let path = RunPaths::new(cfg.run_dir()).report();
    let report = std::fs::read_to_string(&path)
        .map_err(Error::from)
        .and_then(|t| serde_json::from_str::<EvalReport>(&t).map_err(Error::from));
    match report {
        Ok(r) => sweep::row_from_report(cell, &r),
        Err(e) => sweep::failed_row(cell, &e),
    }
}

/// Runs cells as child `train` processes, at most `jobs` at a time.
fn sweep_processes(base: &RunConfig, grid: &SweepGrid, dir: &Path, jobs: usize) -> Result<Vec<SweepRow>> {
    let exe = std::env::current_exe()?;
    std::fs::create_dir_all(dir)?;
    let base_toml = dir.join("sweep_base.toml");
    std::fs::write(&base_toml, base.to_toml_string()?)?;
    let cells = grid.cells(base);
    let mut rows: Vec<Option<SweepRow>> = vec![None; cells.len()];
    let mut running: Vec<(usize, RunConfig, Child)> = Vec::new();
    let mut next = 0;
    while next < cells.len() || !running.is_empty() {
        while next < cells.len() && running.len() < jobs {
            let cfg = sweep::cell_config(base, &cells[next]);
            let log = dir.join(format!("{}.log", cells[next].label()));
            match spawn_cell(&exe, &base_toml, &cfg, &log) {
                Ok(child) => running.push((next, cfg, child)),
                Err(e) => rows[next] = Some(sweep::failed_row(&cells[next], &e)),
            }
            next += 1;
        }
        if !running.is_empty() {
            let (i, cfg, mut child) = running.remove(0);
            rows[i] = Some(finish_cell(&cells[i], &cfg, child.wait()));
        }
    }
    Ok(rows.into_iter().map(|r| r.expect("every cell finished")).collect())
}
