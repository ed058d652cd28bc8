//! `stba` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use stba::bal::{read_file, write_file};
use stba::bench::profile::profile_csv;
use stba::bench::{generate_synthetic, perturb, run_bakeoff, BakeoffManifest, Layout, PerturbSpec, SyntheticSpec};
use stba::clustering::build_camera_graph;
use stba::{BundleProblem, ClusterCap, Clusterer, Error, IngestOptions, SolverKind, SolverSettings};

#[derive(Parser)]
#[command(name = "stba", version, about = "Stochastic bundle adjustment solver and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a BAL problem; writes trace.csv, final.bal and summary.json.
    Solve(SolveArgs),
    /// Add Gaussian noise to points and camera centers.
    Perturb(PerturbArgs),
    /// Generate a synthetic BAL problem.
    Generate(GenerateArgs),
    /// Run a bake-off manifest and emit performance profiles.
    Profile(ProfileArgs),
    /// Print problem sizes and the cluster count of one clustering draw.
    Info(InfoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Fresh clustering every iteration.
    Stochastic,
    /// Draw once and reuse.
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClustererArg {
    Stochastic,
    Greedy,
}

#[derive(Args)]
struct SolverArgs {
    /// lm-dense, lm-pcg, stba or stba-fixed.
    #[arg(long, default_value = "stba")]
    solver: SolverKind,
    #[arg(long = "max-iters", default_value_t = 100)]
    max_iters: usize,
    /// Initial damping.
    #[arg(long, default_value_t = 1e-4)]
    lambda0: f64,
    /// Huber threshold in pixels.
    #[arg(long, default_value_t = 0.5)]
    huber: f64,
    /// Maximum cluster size; "inf" for a single cluster.
    #[arg(long, default_value = "100")]
    gamma: ClusterCap,
    /// Softmax scaling for merge sampling.
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "STBA_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Relative cost, gradient and step tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Clustering schedule for stba; "fixed" is the same as --solver stba-fixed.
    #[arg(long, value_enum, default_value_t = Mode::Stochastic)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = ClustererArg::Stochastic)]
    clusterer: ClustererArg,
    /// Disable the steepest-descent correction.
    #[arg(long)]
    no_correction: bool,
}

impl SolverArgs {
    fn settings(&self) -> SolverSettings {
        let solver = match (self.solver, self.mode) {
            (SolverKind::Stba, Mode::Fixed) => SolverKind::StbaFixed,
            (s, _) => s,
        };
        SolverSettings {
            solver,
            max_iterations: self.max_iters,
            lambda0: self.lambda0,
            huber_delta: self.huber,
            gamma: self.gamma,
            beta: self.beta,
            seed: self.seed,
            workers: self.workers,
            tolerance: self.tol,
            clusterer: match self.clusterer {
                ClustererArg::Stochastic => Clusterer::Stochastic,
                ClustererArg::Greedy => Clusterer::Greedy,
            },
            correction: !self.no_correction,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    problem: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Fill the per-phase timing columns of trace.csv.
    #[arg(long)]
    timings: bool,
    /// Keep the largest connected component instead of rejecting the problem.
    #[arg(long)]
    keep_largest: bool,
}

#[derive(Args)]
struct PerturbArgs {
    problem: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    sigma_points: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_cameras: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output BAL file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// ring or grid-street.
    #[arg(long, default_value = "ring")]
    layout: Layout,
    #[arg(long, default_value_t = 50)]
    cameras: usize,
    #[arg(long, default_value_t = 1000)]
    points: usize,
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    #[arg(long, default_value_t = 1.0)]
    pixel_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output BAL file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProfileArgs {
    /// TOML bake-off manifest.
    manifest: PathBuf,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InfoArgs {
    problem: PathBuf,
    #[arg(long, default_value = "100")]
    gamma: ClusterCap,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } | Error::Config(_) | Error::InfeasibleSpec(_) | Error::Io(_) => 2,
        Error::InvalidProblem(_) => 3,
        _ => 1,
    }
}

fn load(path: &Path, options: IngestOptions) -> stba::Result<BundleProblem> {
    let (problem, report) = read_file::<f64>(path, options)?;
    if report != Default::default() {
        eprintln!(
            "ingest: dropped {} points, {} observations, {} cameras; normalized {} rotations",
            report.dropped_points, report.dropped_observations, report.dropped_cameras, report.normalized_rotations
        );
    }
    Ok(problem)
}

fn cmd_solve(args: &SolveArgs) -> stba::Result<()> {
    let settings = args.solver.settings();
    let mut options = IngestOptions::default();
    if args.keep_largest {
        options.components = stba::problem::ComponentPolicy::KeepLargest;
    }
    let problem = load(&args.problem, options)?;
    let result = stba::solver::solve(&problem, &settings)?;
    let trace = &result.trace;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("trace.csv"), trace.to_csv(args.timings))?;
    write_file(&result.final_problem(&problem), args.out.join("final.bal"))?;
    let summary = json!({
        "schema": 1,
        "solver": settings.solver.name(),
        "cameras": problem.num_cameras(),
        "points": problem.num_points(),
        "observations": problem.num_observations(),
        "initial_cost": trace.initial_cost,
        "final_cost": trace.final_cost(),
        "iterations": trace.iterations(),
        "total_ms": trace.total_ms(),
        "termination": trace.termination.to_string(),
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(args.out.join("summary.json"), text + "\n")?;
    println!(
        "{}: cost {:.6e} -> {:.6e} in {} iterations ({})",
        settings.solver,
        trace.initial_cost,
        trace.final_cost(),
        trace.iterations(),
        trace.termination
    );
    Ok(())
}

fn cmd_perturb(args: &PerturbArgs) -> stba::Result<()> {
    let problem = load(&args.problem, IngestOptions::default())?;
    let spec = PerturbSpec {
        sigma_points: args.sigma_points,
        sigma_camera_centers: args.sigma_cameras,
        seed: args.seed,
    };
    write_file(&perturb(&problem, &spec)?, &args.out)
}

fn cmd_generate(args: &GenerateArgs) -> stba::Result<()> {
    let s = generate_synthetic(&SyntheticSpec {
        cameras: args.cameras,
        points: args.points,
        layout: args.layout,
        density: args.density,
        pixel_noise: args.pixel_noise,
        seed: args.seed,
    })?;
    write_file(&s.problem, &args.out)?;
    println!(
        "wrote {} cameras, {} points, {} observations",
        s.problem.num_cameras(),
        s.problem.num_points(),
        s.problem.num_observations()
    );
    Ok(())
}

fn cmd_profile(args: &ProfileArgs) -> stba::Result<()> {
    let (manifest, base) = BakeoffManifest::load(&args.manifest)?;
    let report = run_bakeoff(&manifest, &base)?;
    let csv = profile_csv(&report.rows);
    match &args.out {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_info(args: &InfoArgs) -> stba::Result<()> {
    let problem = load(&args.problem, IngestOptions::default())?;
    let config = stba::StbaConfig {
        gamma: args.gamma,
        beta: args.beta,
        seed: args.seed,
        ..Default::default()
    };
    config.validate()?;
    let assignment = config.draw_clustering(&build_camera_graph(&problem), 0);
    println!("cameras {}", problem.num_cameras());
    println!("points {}", problem.num_points());
    println!("observations {}", problem.num_observations());
    println!("clusters {} (gamma {}, beta {}, seed {})", assignment.num_clusters(), args.gamma, args.beta, args.seed);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Info(a) => cmd_info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
