use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pbba::control::nearest_control;
use pbba::dataset::{validate_dataset, Dataset};
use pbba::eval::aligned_positions;
use pbba::kv::KvFile;
use pbba::pipeline::{radiance_context, solve_dataset, write_solution};
use pbba::radiance::{eval_radiance, oracle_radiance};
use pbba::scenegen::{generate_dataset, SceneSpec, TrajectorySpec};
use pbba::solver::{SolverConfig, WeightMode, CONFIG_KEYS};
use pbba::surface::DepthMap;
use pbba::trajectory::Trajectory;

#[derive(Parser)]
#[command(
    name = "pbba",
    version,
    about = "Photometric bundle adjustment with radiance-consistency weights"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Initial,
    Groundtruth,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Scenegen {
        /// Scene description (planes, materials, light).
        #[arg(long)]
        scene: PathBuf,
        /// Camera path, intrinsics, perturbation and control settings.
        #[arg(long)]
        traj: PathBuf,
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine the poses of a dataset.
    Solve {
        #[arg(long)]
        dataset: PathBuf,
        /// `key = value` solver configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the refined trajectory and report.
        #[arg(long)]
        out: PathBuf,
        /// pb, tdist or uniform.
        #[arg(long, value_parser = parse_mode)]
        weight_mode: Option<WeightMode>,
        /// Sharpness of the radiance-consistency weight.
        #[arg(long, allow_negative_numbers = true)]
        theta: Option<f64>,
        /// Sum in a fixed order so reruns are bit-identical.
        #[arg(long)]
        deterministic: bool,
        /// Trajectory to start from.
        #[arg(long, value_enum, default_value = "initial")]
        init: Init,
        /// Also write per-frame weight images.
        #[arg(long)]
        weights: bool,
    },
    /// Absolute trajectory error after rigid alignment.
    Evaluate {
        /// Estimated trajectory.
        #[arg(long)]
        est: PathBuf,
        /// Reference trajectory.
        #[arg(long)]
        gt: PathBuf,
        /// Write `timestamp ex ey ez gx gy gz error` per associated frame.
        #[arg(long)]
        dump_xyz: Option<PathBuf>,
    },
    /// Compare split-sum radiance with a Monte-Carlo reference on dataset surfaces.
    RadianceCheck {
        #[arg(long)]
        dataset: PathBuf,
        /// Monte-Carlo samples per reference value.
        #[arg(long, default_value_t = 4096)]
        samples: usize,
        /// Surface pixels to compare.
        #[arg(long, default_value_t = 200)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a dataset directory.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<WeightMode, String> {
    s.parse()
}

/// Failure with a short machine-readable kind.
struct Failure {
    kind: &'static str,
    message: String,
}

fn fail(kind: &'static str) -> impl FnOnce(String) -> Failure {
    move |message| Failure { kind, message }
}

trait Context<T> {
    fn kind(self, kind: &'static str) -> Result<T, Failure>;
}

impl<T, E: std::fmt::Display> Context<T> for Result<T, E> {
    fn kind(self, kind: &'static str) -> Result<T, Failure> {
        self.map_err(|e| fail(kind)(e.to_string()))
    }
}

/// Configuration keys that have a dedicated flag on `solve`.
const FLAGGED_KEYS: &[&str] = &["theta", "weight_mode", "deterministic"];

/// `solve` gains one `--<key> <value>` flag per remaining configuration key.
fn command() -> clap::Command {
    Cli::command().mut_subcommand("solve", |mut sub| {
        for key in CONFIG_KEYS.iter().filter(|k| !FLAGGED_KEYS.contains(k)) {
            sub = sub.arg(
                Arg::new(*key)
                    .long(*key)
                    .value_name("VALUE")
                    .allow_negative_numbers(true)
                    .help(format!("Override `{key}` from the configuration file")),
            );
        }
        sub
    })
}

/// Configuration overrides given as flags, in key order.
fn overrides(matches: &ArgMatches) -> Vec<(String, String)> {
    let Some(("solve", sub)) = matches.subcommand() else {
        return Vec::new();
    };
    CONFIG_KEYS
        .iter()
        .filter(|k| !FLAGGED_KEYS.contains(k))
        .filter_map(|k| sub.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect()
}

fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
    mode: Option<WeightMode>,
    theta: Option<f64>,
    deterministic: bool,
) -> Result<SolverConfig, Failure> {
    let mut kv = match path {
        Some(p) => KvFile::load(p).kind("config")?,
        None => KvFile::default(),
    };
    for (k, v) in overrides {
        kv.set(k, v.trim());
    }
    if let Some(m) = mode {
        kv.set("weight_mode", m.to_string());
    }
    if let Some(t) = theta {
        kv.set("theta", t.to_string());
    }
    if deterministic {
        kv.set("deterministic", "true");
    }
    SolverConfig::from_kv(&kv).kind("config")
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<String, Failure> {
    match cli.command {
        Command::Scenegen { scene, traj, out } => {
            let scene = SceneSpec::load(&scene).kind("scene")?;
            let traj = TrajectorySpec::load(&traj).kind("scene")?;
            let s = generate_dataset(&scene, &traj, &out).kind("scenegen")?;
            Ok(format!(
                "frames = {}\ncontrols = {}\ndropped_clusters = {}\nexposure_scale = {}\n",
                s.frames, s.controls, s.dropped_clusters, s.exposure_scale
            ))
        }
        Command::Solve {
            dataset,
            config,
            out,
            weight_mode,
            theta,
            deterministic,
            init,
            weights,
        } => {
            let cfg = load_config(config.as_deref(), overrides, weight_mode, theta, deterministic)?;
            let data = Dataset::load(&dataset).kind("dataset")?;
            let start = match init {
                Init::Initial => &data.initial,
                Init::Groundtruth => &data.groundtruth,
            };
            let ctx = radiance_context(&data);
            let solution = solve_dataset(&data, start, ctx, &cfg).kind("solve")?;
            write_solution(&out, &solution, weights).kind("io")?;
            Ok(format!(
                "converged = {}\nouter_iterations = {}\nfinal_loss = {:e}\n",
                solution.report.converged,
                solution.report.outer.len(),
                solution.report.final_loss
            ))
        }
        Command::Evaluate { est, gt, dump_xyz } => {
            let est = Trajectory::load(&est).kind("trajectory")?;
            let gt = Trajectory::load(&gt).kind("trajectory")?;
            let (align, rows) = aligned_positions(&est, &gt).kind("evaluate")?;
            let rmse = (rows.iter().map(|r| r.error * r.error).sum::<f64>() / rows.len() as f64).sqrt();
            if let Some(path) = dump_xyz {
                let mut s = String::from("# timestamp ex ey ez gx gy gz error\n");
                for r in &rows {
                    let _ = writeln!(
                        s,
                        "{} {} {} {} {} {} {} {}",
                        r.timestamp, r.estimate.x, r.estimate.y, r.estimate.z, r.truth.x, r.truth.y, r.truth.z, r.error
                    );
                }
                fs::write(&path, s).kind("io")?;
            }
            Ok(format!(
                "ate_rmse = {rmse}\npairs = {}\ndegenerate = {}\n",
                align.pairs, align.degenerate
            ))
        }
        Command::RadianceCheck {
            dataset,
            samples,
            draws,
            seed,
        } => radiance_check(&dataset, samples, draws, seed),
        Command::Validate { dataset } => {
            let rep = validate_dataset(&dataset);
            if rep.is_valid() {
                Ok(rep.to_text())
            } else {
                print!("{}", rep.to_text());
                let first = &rep.issues[0];
                Err(fail("invalid")(format!(
                    "{} issue(s), first {}: {}",
                    rep.issues.len(),
                    first.file,
                    first.reason
                )))
            }
        }
    }
}

/// Draws random surface pixels with valid depth, normal and roughness and
/// compares the split-sum radiance toward their camera with a Monte-Carlo
/// integral over the nearest control's environment map.
fn radiance_check(dir: &Path, samples: usize, draws: usize, seed: u64) -> Result<String, Failure> {
    let data = Dataset::load(dir).kind("dataset")?;
    let ctx = radiance_context(&data);
    let k = data.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(draws);
    let mut attempts = 0;
    while errors.len() < draws && attempts < 100 * draws.max(1) {
        attempts += 1;
        let f = rng.random_range(0..data.frames.len());
        let frame = &data.frames[f];
        let Some(normals) = &frame.normals else { continue };
        let (x, y) = (rng.random_range(0..k.width), rng.random_range(0..k.height));
        let depth = DepthMap::new(frame.depth.clone(), &k).kind("dataset")?;
        let Some(p) = depth.point(x, y, &k) else { continue };
        let n = *normals.get(x, y);
        if (n.norm() - 1.0).abs() > 1e-3 {
            continue;
        }
        let pose = data.groundtruth.pose(f);
        let world = pose.transform_point(&p);
        let Ok(c) = nearest_control(&world, &data.controls) else {
            continue;
        };
        let (nw, bw) = (pose.rotation * n.normalize(), pose.rotation * p);
        let r = (*frame.roughness.get(x, y) as f64).clamp(0.0, 1.0);
        let env = &data.envmaps[data.controls[c].envmap_id];
        let (Ok(fast), Ok(slow)) = (
            eval_radiance(&ctx, data.controls[c].envmap_id, &nw, &bw, r),
            oracle_radiance(env, &nw, &bw, r, samples, rng.random()),
        ) else {
            continue;
        };
        errors.push((fast - slow).abs() / slow.max(1e-4));
    }
    if errors.is_empty() {
        return Err(fail("radiance-check")("no usable surface samples".into()));
    }
    errors.sort_by(f64::total_cmp);
    let q = |p: f64| errors[((errors.len() - 1) as f64 * p).round() as usize];
    Ok(format!(
        "draws = {}\nmedian_rel_error = {}\np90_rel_error = {}\nmax_rel_error = {}\nmean_rel_error = {}\n",
        errors.len(),
        q(0.5),
        q(0.9),
        q(1.0),
        errors.iter().sum::<f64>() / errors.len() as f64
    ))
}

fn main() -> ExitCode {
    let parsed = command()
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m).map(|cli| (cli, m)));
    let (cli, matches) = match parsed {
        Ok(p) => p,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli, &overrides(&matches)) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}: {}", f.kind, f.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
