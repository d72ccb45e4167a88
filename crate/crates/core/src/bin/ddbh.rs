use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddbh::scenario::{self, RunOptions, ScenarioConfig, ScenarioError, SweepSpec};

#[derive(Parser)]
#[command(name = "ddbh", version, about = "Positive-P simulator for driven-dissipative Bose-Hubbard lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a stochastic ensemble and write site and delay observables.
    Simulate(RunArgs),
    /// Like `simulate`, with the momentum-frequency spectrum switched on.
    Spectrum(RunArgs),
    /// Run a parameter sweep described by a sweep TOML file.
    Sweep(SweepArgs),
    /// Tabulate the optimal detuning and hopping of the three-site chain.
    Optimize3(OptimizeArgs),
    /// Solve the Lindblad master equation exactly on a truncated Fock space.
    Oracle(OracleArgs),
    /// List presets, or print one as TOML.
    Preset { name: Option<String> },
}

#[derive(Args)]
struct Source {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario, see `ddbh preset`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Parallel {
    /// Merge partial results in trajectory order so output is bitwise reproducible.
    #[arg(long)]
    deterministic_reduction: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    parallel: Parallel,
    #[arg(long)]
    trajectories: Option<usize>,
    /// Time step in units of 1/gamma.
    #[arg(long)]
    dt: Option<f64>,
    /// Also write every trajectory to `trajectories.bin`.
    #[arg(long)]
    dump: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep TOML file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trajectories: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    parallel: Parallel,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Explicit interaction strengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    u: Vec<f64>,
    #[arg(long, default_value_t = 1e-2)]
    u_min: f64,
    #[arg(long, default_value_t = 1e3)]
    u_max: f64,
    #[arg(long, default_value_t = 51)]
    points: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// CSV file; a table goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    cutoff: Option<usize>,
    /// Total boson cap, 0 for none.
    #[arg(long)]
    total_cap: Option<usize>,
}

fn load(src: &Source) -> Result<ScenarioConfig, ScenarioError> {
    let mut c = match (&src.config, &src.preset) {
        (Some(p), _) => ScenarioConfig::load(p)?,
        (None, Some(name)) => scenario::preset(name)?,
        (None, None) => return Err(ScenarioError::Config("pass --config FILE or --preset NAME".into())),
    };
    if let Some(s) = src.seed {
        c.seed = s;
    }
    Ok(c)
}

fn out_dir(out: &Option<PathBuf>, c: &ScenarioConfig) -> PathBuf {
    out.clone().unwrap_or_else(|| Path::new("out").join(c.name.as_deref().unwrap_or("run")))
}

fn options(p: &Parallel, dump: Option<PathBuf>) -> RunOptions {
    RunOptions { deterministic: p.deterministic_reduction, workers: p.workers, dump }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), ScenarioError> {
    match cli.command {
        Command::Simulate(a) => simulate(a, false),
        Command::Spectrum(a) => simulate(a, true),
        Command::Sweep(a) => {
            let mut spec = SweepSpec::from_toml_str(&std::fs::read_to_string(&a.config)?)?;
            let mut base = spec.base_config()?;
            if let Some(s) = a.seed {
                base.seed = s;
            }
            if let Some(n) = a.trajectories {
                base.integration.trajectories = n;
            }
            spec.preset = None;
            spec.base = Some(base);
            let points = scenario::sweep(&spec, &options(&a.parallel, None))?;
            let dir = a.out.unwrap_or_else(|| PathBuf::from("out/sweep"));
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("sweep.csv");
            std::fs::write(&path, scenario::sweep_csv(&spec, &points))?;
            let failed = points.iter().filter(|p| p.outcome.is_err()).count();
            report(&[path]);
            if failed > 0 {
                eprintln!("{failed} of {} points failed, see the status column", points.len());
            }
            Ok(())
        }
        Command::Optimize3(a) => {
            let us = if a.u.is_empty() { scenario::log_grid(a.u_min, a.u_max, a.points) } else { a.u };
            let rows = scenario::optimize3(&us, a.gamma)?;
            match a.out {
                Some(p) => {
                    std::fs::write(&p, scenario::optimize3_csv(&rows))?;
                    report(&[p]);
                }
                None => {
                    println!("{:>12} {:>12} {:>12} {:>10}", "U", "delta_opt", "J_opt", "residual");
                    for r in rows {
                        let res = r.residual_re.abs().max(r.residual_im.abs());
                        println!("{:>12.6} {:>12.6} {:>12.6} {:>10.1e}", r.u, r.delta_opt, r.j_opt, res);
                    }
                }
            }
            Ok(())
        }
        Command::Oracle(a) => {
            let mut c = load(&a.source)?;
            if let Some(n) = a.cutoff {
                c.oracle.cutoff = n;
            }
            if let Some(n) = a.total_cap {
                c.oracle.total_cap = n;
            }
            let sc = c.resolve()?;
            let res = scenario::oracle_run(&sc)?;
            let dir = out_dir(&a.source.out, &c);
            report(&scenario::write_outputs(&dir, &res, &sc.lattice)?);
            Ok(())
        }
        Command::Preset { name: None } => {
            for p in scenario::PRESETS {
                println!("{p}");
            }
            Ok(())
        }
        Command::Preset { name: Some(n) } => {
            print!("{}", scenario::preset(&n)?.to_toml_string());
            Ok(())
        }
    }
}

fn simulate(a: RunArgs, spectrum: bool) -> Result<(), ScenarioError> {
    let mut c = load(&a.source)?;
    if let Some(n) = a.trajectories {
        c.integration.trajectories = n;
    }
    if let Some(dt) = a.dt {
        c.integration.dt = dt;
    }
    if spectrum {
        c.observables.spectrum = true;
    }
    let sc = c.resolve()?;
    let dir = out_dir(&a.source.out, &c);
    std::fs::create_dir_all(&dir)?;
    let dump = a.dump.then(|| dir.join("trajectories.bin"));
    let res = scenario::simulate(&sc, &options(&a.parallel, dump.clone()))?;
    let mut paths = scenario::write_outputs(&dir, &res, &sc.lattice)?;
    paths.extend(dump);
    report(&paths);
    if let Some(r) = &res.report {
        if !r.diverged.is_empty() {
            eprintln!("{} of {} trajectories diverged and were dropped", r.diverged.len(), r.n_trajectories);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                ScenarioError::Config(_) | ScenarioError::UnknownPreset(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
