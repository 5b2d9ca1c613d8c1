use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use interdictor::geometry::{GaussianBelief, Point3};
use interdictor::kinematics::{RobotModel, TaskSpec};
use interdictor::planning::{learn_roadmap, LearnConfig, OctreeConfig, RoadmapFile};
use interdictor::prediction::{instantaneous_probability, predict_series, PredictionConfig};
use interdictor::simulator::{self, default_pair, predict_initial, replay_csv, replay_pair, risk_csv, Scenario};
use interdictor::tracking::{KalmanConfig, ObjectId};
use interdictor::validation::{self, mc_first_passage, mc_instantaneous, OracleConfig, ScanGrid};
use interdictor::Error;

#[derive(Parser, Debug)]
#[command(name = "interdictor", version, about = "Collision prediction and whole-body interception planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a roadmap with per-link reachable volumes and write it as `.rvprm`.
    Plan(PlanArgs),
    /// Run a scenario and write `trace.csv` and `summary.json`.
    Simulate(SimulateArgs),
    /// Print the collision-probability series of one object pair as CSV.
    Predict(PredictArgs),
    /// Run a Monte Carlo or dense-scan oracle.
    Oracle {
        #[command(subcommand)]
        kind: OracleKind,
    },
    /// Describe a `.rvprm` file.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RoadmapMode {
    Constrained,
    Unconstrained,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Robot model file.
    #[arg(long)]
    model: PathBuf,
    /// End-effector goal as `x,y,z`; defaults to the end-effector position at home.
    #[arg(long, value_parser = parse_vec3)]
    goal: Option<[f64; 3]>,
    /// End-effector tolerance (m).
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Roadmap mode.
    #[arg(long, value_enum, default_value = "constrained")]
    mode: RoadmapMode,
    /// Number of roadmap nodes.
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Overrides {
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the probability threshold.
    #[arg(long)]
    eta: Option<f64>,
    /// Override the decision time threshold (s).
    #[arg(long)]
    t_th: Option<f64>,
    /// Override the tick length (s).
    #[arg(long)]
    dt: Option<f64>,
}

impl Overrides {
    fn apply(&self, s: &mut Scenario) -> interdictor::Result<()> {
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(eta) = self.eta {
            s.prediction.eta = eta;
        }
        if let Some(t_th) = self.t_th {
            s.prediction.t_th = t_th;
        }
        if let Some(dt) = self.dt {
            s.dt = dt;
        }
        s.validate()
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario file.
    scenario: PathBuf,
    /// Build and save roadmap files the scenario names but that do not exist yet.
    #[arg(long)]
    plan_if_missing: bool,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Override the roadmap budget.
    #[arg(long)]
    budget: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Scenario file.
    scenario: PathBuf,
    /// Object pair as `a,b`; defaults to the two lowest ids.
    #[arg(long, value_parser = parse_pair)]
    pair: Option<(ObjectId, ObjectId)>,
    /// Re-predict at every tick from simulated observations instead of once from the start.
    #[arg(long)]
    replay: bool,
    /// Write the CSV here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Number of Monte Carlo samples.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Absolute agreement tolerance.
    #[arg(long, default_value_t = 0.005)]
    tolerance: f64,
}

impl SampleArgs {
    fn config(&self) -> OracleConfig {
        OracleConfig {
            samples: self.samples,
            seed: self.seed,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Subcommand, Debug)]
enum OracleKind {
    /// Sample two spheres with Gaussian centres and count overlaps.
    McInstantaneous {
        /// Mean of the first centre as `x,y,z`.
        #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
        mean_i: [f64; 3],
        /// Mean of the second centre as `x,y,z`.
        #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
        mean_j: [f64; 3],
        /// Isotropic variance of the first centre.
        #[arg(long, default_value_t = 0.5)]
        var_i: f64,
        /// Isotropic variance of the second centre.
        #[arg(long, default_value_t = 0.5)]
        var_j: f64,
        /// Radius of the first sphere.
        #[arg(long, default_value_t = 0.5)]
        radius_i: f64,
        /// Radius of the second sphere.
        #[arg(long, default_value_t = 0.5)]
        radius_j: f64,
        #[command(flatten)]
        sampling: SampleArgs,
    },
    /// Simulate noisy constant-velocity pairs and record first contact.
    McFirstPassage {
        /// Start of the first object as `x,y,z`.
        #[arg(long, value_parser = parse_vec3, default_value = "0,-1,0")]
        start_i: [f64; 3],
        /// Velocity of the first object as `x,y,z`.
        #[arg(long, value_parser = parse_vec3, default_value = "0,1,0")]
        vel_i: [f64; 3],
        /// Start of the second object as `x,y,z`.
        #[arg(long, value_parser = parse_vec3, default_value = "0,1,0")]
        start_j: [f64; 3],
        /// Velocity of the second object as `x,y,z`.
        #[arg(long, value_parser = parse_vec3, default_value = "0,-1,0")]
        vel_j: [f64; 3],
        /// Radius of the first object.
        #[arg(long, default_value_t = 0.1)]
        radius_i: f64,
        /// Radius of the second object.
        #[arg(long, default_value_t = 0.1)]
        radius_j: f64,
        /// Initial isotropic position variance of both objects.
        #[arg(long, default_value_t = 0.01)]
        pos_var: f64,
        /// Initial isotropic velocity variance of both objects.
        #[arg(long, default_value_t = 0.01)]
        vel_var: f64,
        /// Number of predicted ticks.
        #[arg(long, default_value_t = 60)]
        steps: usize,
        /// Tick length (s).
        #[arg(long, default_value_t = interdictor::tracking::DEFAULT_DT)]
        dt: f64,
        #[command(flatten)]
        sampling: SampleArgs,
    },
    /// Voxelize random feasible configurations and compare with a roadmap's volumes.
    Reachability {
        /// Robot model file.
        #[arg(long)]
        model: PathBuf,
        /// Roadmap file whose occupied leaves are checked against the scan.
        #[arg(long)]
        roadmap: Option<PathBuf>,
        /// Keep the end-effector on the roadmap's goal while sampling.
        #[arg(long)]
        constrained: bool,
        /// Number of feasible configurations to voxelize.
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Roadmap file.
    file: PathBuf,
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 3 comma-separated numbers, got {}", v.len()))
}

fn parse_pair(s: &str) -> Result<(ObjectId, ObjectId), String> {
    let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
    let id = |x: &str| x.trim().parse::<ObjectId>().map_err(|e| format!("{x:?}: {e}"));
    Ok((id(a)?, id(b)?))
}

enum Failure {
    Io(String),
    Usage(String),
    Assertion(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Assertion(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Toml(_) | Error::Json(_) | Error::RoadmapFormat(_) | Error::Scenario(_) => Failure::Io(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("INTERDICTOR_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    let r = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Oracle { kind } => cmd_oracle(kind),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Io(m) | Failure::Usage(m) | Failure::Assertion(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}

fn task_for(model: &RobotModel, goal: Option<[f64; 3]>, epsilon: f64) -> interdictor::Result<TaskSpec> {
    match goal {
        Some(g) => TaskSpec::new(Point3::from(g), epsilon),
        None => model.home_task(epsilon),
    }
}

fn cmd_plan(a: PlanArgs) -> Result<(), Failure> {
    let model = RobotModel::load(&a.model)?;
    let task = task_for(&model, a.goal, a.epsilon)?;
    let learn = LearnConfig::new(a.budget, a.seed);
    let started = Instant::now();
    let (roadmap, volumes) = learn_roadmap(&model, &task, a.mode == RoadmapMode::Constrained, &learn)?;
    eprintln!("built in {:.2} s", started.elapsed().as_secs_f64());
    let file = RoadmapFile {
        model_hash: model.hash(),
        learn,
        task,
        roadmap,
        volumes,
    };
    file.save(&a.out)?;
    print_counts(&file);
    Ok(())
}

fn print_counts(f: &RoadmapFile) {
    let leaves: Vec<String> = f.volumes.octrees.iter().map(|o| o.occupied_leaf_count().to_string()).collect();
    println!("mode: {}", if f.roadmap.constrained { "constrained" } else { "unconstrained" });
    println!("nodes: {}", f.roadmap.len());
    println!("edges: {}", f.roadmap.edges.len());
    println!("occupied leaves per link: {}", leaves.join(" "));
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(|e| match Failure::from(e) {
        Failure::Io(m) => Failure::Io(format!("{}: {m}", path.display())),
        f => f,
    })
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut scenario = load_scenario(&a.scenario)?;
    if let Some(b) = a.budget {
        scenario.robot.roadmap_budget = b;
    }
    a.overrides.apply(&mut scenario)?;
    let started = Instant::now();
    let out = simulator::run(&scenario, a.plan_if_missing)?;
    eprintln!("simulated in {:.2} s", started.elapsed().as_secs_f64());
    simulator::write_outputs(&a.out, &scenario, &out)?;
    let s = &out.summary;
    println!("scenario: {}", s.scenario);
    println!("interventions: {}", s.interventions);
    let modes: Vec<&str> = s.mode_sequence.iter().map(|m| m.as_str()).collect();
    println!("modes: {}", modes.join(" -> "));
    if let Some(c) = s.first_plan_constrained {
        println!("first plan constrained: {c}");
    }
    let failed: Vec<&str> = s.assertions.iter().filter(|(_, ok)| !**ok).map(|(k, _)| k.as_str()).collect();
    if failed.is_empty() {
        println!("assertions: ok");
        Ok(())
    } else {
        Err(Failure::Assertion(format!("assertions failed: {}", failed.join(", "))))
    }
}

fn cmd_predict(a: PredictArgs) -> Result<(), Failure> {
    let mut scenario = load_scenario(&a.scenario)?;
    a.overrides.apply(&mut scenario)?;
    let pair = match a.pair {
        Some(p) => p,
        None => default_pair(&scenario)?,
    };
    let csv = if a.replay {
        replay_csv(&replay_pair(&scenario, pair)?)
    } else {
        risk_csv(&predict_initial(&scenario, pair)?, scenario.dt)
    };
    write_or_print(a.out.as_deref(), &csv)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn iso(mean: &[f64], var: f64) -> interdictor::Result<GaussianBelief> {
    let n = mean.len();
    GaussianBelief::new(DVector::from_column_slice(mean), DMatrix::identity(n, n) * var)
}

fn state_belief(p: [f64; 3], v: [f64; 3], pos_var: f64, vel_var: f64) -> interdictor::Result<GaussianBelief> {
    let mean: Vec<f64> = p.iter().chain(&v).copied().collect();
    let diag = DVector::from_fn(6, |k, _| if k < 3 { pos_var } else { vel_var });
    GaussianBelief::new(DVector::from_vec(mean), DMatrix::from_diagonal(&diag))
}

fn cmd_oracle(kind: OracleKind) -> Result<(), Failure> {
    match kind {
        OracleKind::McInstantaneous {
            mean_i,
            mean_j,
            var_i,
            var_j,
            radius_i,
            radius_j,
            sampling,
        } => {
            let cfg = sampling.config();
            let (bi, bj) = (iso(&mean_i, var_i)?, iso(&mean_j, var_j)?);
            let mc = mc_instantaneous(&bi, &bj, radius_i, radius_j, &cfg)?;
            let analytic = instantaneous_probability(&bi, &bj, radius_i, radius_j)?;
            println!("samples: {}", mc.samples);
            println!("estimate: {:.6}", mc.estimate);
            println!("stderr: {:.6}", mc.stderr);
            println!("analytic: {analytic:.6}");
            println!("agrees: {}", mc.agrees_with(analytic, cfg.tolerance));
        }
        OracleKind::McFirstPassage {
            start_i,
            vel_i,
            start_j,
            vel_j,
            radius_i,
            radius_j,
            pos_var,
            vel_var,
            steps,
            dt,
            sampling,
        } => {
            let cfg = sampling.config();
            let kcfg = KalmanConfig { dt, ..KalmanConfig::default() };
            let bi = state_belief(start_i, vel_i, pos_var, vel_var)?;
            let bj = state_belief(start_j, vel_j, pos_var, vel_var)?;
            let mc = mc_first_passage([&bi, &bj], [radius_i, radius_j], &kcfg, steps, &cfg)?;
            let pcfg = PredictionConfig {
                dt,
                horizon: steps as f64 * dt,
                t_th: steps as f64 * dt,
                ..PredictionConfig::default()
            };
            let (_, analytic) = predict_series(&bi, &bj, radius_i, radius_j, &pcfg, &kcfg)?;
            println!("step,p_ac_mc,stderr,p_ac_analytic");
            for (k, (p, se)) in mc.p_ac.iter().zip(&mc.stderr).enumerate() {
                let an = analytic.get(k).map(|x| format!("{x:.6}")).unwrap_or_default();
                println!("{},{p:.6},{se:.6},{an}", k + 1);
            }
            let worst = mc.p_ac.iter().zip(&analytic).map(|(m, a)| (m - a).abs()).fold(0.0, f64::max);
            eprintln!("max |mc - analytic|: {worst:.6}");
        }
        OracleKind::Reachability {
            model,
            roadmap,
            constrained,
            budget,
            seed,
        } => {
            let model = RobotModel::load(&model)?;
            let file = roadmap.map(RoadmapFile::load).transpose()?;
            let octree = file.as_ref().map_or_else(OctreeConfig::default, |f| f.learn.octree);
            let task = match &file {
                Some(f) => f.task,
                None => model.home_task(0.01)?,
            };
            let grid = ScanGrid::for_octree(octree.center, octree.half_width, octree.max_depth);
            let started = Instant::now();
            let scan = validation::dense_reachability_scan(&model, constrained.then_some(&task), &grid, budget, seed)?;
            eprintln!("scanned in {:.2} s", started.elapsed().as_secs_f64());
            println!("link,scan_cells,octree_leaves,outside_dilated_scan");
            for (l, cells) in scan.iter().enumerate() {
                let name = &model.links[l].name;
                match &file {
                    Some(f) => {
                        let dilated = ScanGrid::dilate(cells);
                        let keys = f.volumes.octrees[l].occupied_leaf_keys();
                        let outside = keys.difference(&dilated).count();
                        println!("{name},{},{},{outside}", cells.len(), keys.len());
                    }
                    None => println!("{name},{},,", cells.len()),
                }
            }
        }
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<(), Failure> {
    let f = RoadmapFile::load(&a.file)?;
    println!("model hash: {:016x}", f.model_hash);
    println!("budget: {}", f.learn.budget);
    println!("seed: {}", f.learn.seed);
    println!("step: {}", f.learn.step);
    let g = f.task.ee_goal;
    println!("goal: {},{},{} (epsilon {})", g.x, g.y, g.z, f.task.epsilon);
    let c = f.learn.octree;
    println!("octree: center {},{},{} half width {} depth {}", c.center.x, c.center.y, c.center.z, c.half_width, c.max_depth);
    print_counts(&f);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_flag_has_help() {
        fn walk(cmd: &clap::Command) {
            for arg in cmd.get_arguments() {
                let id = arg.get_id().as_str();
                if id == "help" || id == "version" {
                    continue;
                }
                assert!(arg.get_help().is_some(), "{} --{id} lacks help", cmd.get_name());
            }
            cmd.get_subcommands().for_each(walk);
        }
        walk(&Cli::command());
    }

    #[test]
    fn vec3_parsing() {
        assert_eq!(parse_vec3("1, 2,3.5").unwrap(), [1.0, 2.0, 3.5]);
        assert!(parse_vec3("1,2").is_err());
        assert!(parse_vec3("a,b,c").is_err());
        assert_eq!(parse_pair("2,1").unwrap(), (2, 1));
    }
}
