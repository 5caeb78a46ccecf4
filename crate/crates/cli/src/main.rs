use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{LevelFilter, Log, Metadata, Record};
use serde_json::json;

use curricula::analysis::{analyze_heuristic, analyze_with_fallback, Analysis, AnalysisConfig};
use curricula::curriculum::{run_curriculum, Backends, BackendKind, CurriculumConfig};
use curricula::generator::{generate, ExternalProposer, GenerationConfig, HeuristicProposer, Proposer};
use curricula::llm::{BackendError, HttpBackend, LlmBackend};
use curricula::navigation::{run_episode, AgentProfile, NavConfig, Task, Trajectory};
use curricula::render::{render_png, render_scene, RenderConfig};
use curricula::scene::{load_scene, parse_scene, save_scene, validate, SceneError, SceneGraph};

#[derive(Parser)]
#[command(name = "curricula", version, about = "Closed-loop environment curriculum simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Heuristic,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Print the validation report of a scene; exit 0 iff it is empty.
    Validate { scene: PathBuf },
    /// Roll out one episode; writes trajectory.json and trajectory.svg.
    Episode {
        scene: PathBuf,
        #[arg(long)]
        task: PathBuf,
        /// Preset name (optimal, clearance_blind, greedy) or a profile JSON file.
        #[arg(long, default_value = "optimal")]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Analyze a trajectory; writes the analysis JSON.
    Analyze {
        scene: PathBuf,
        trajectory: PathBuf,
        #[arg(long, value_enum, default_value = "heuristic")]
        backend: Backend,
        #[arg(long, default_value = "analysis.json")]
        out: PathBuf,
    },
    /// Generate an edited scene from an analysis.
    Perturb {
        scene: PathBuf,
        analysis: PathBuf,
        /// Trajectory the analysis was made from; supplies the task.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, value_enum, default_value = "heuristic")]
        backend: Backend,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        revisions: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "perturb")]
        out: PathBuf,
    },
    /// Run the curriculum loop from a config file into a run directory.
    Loop {
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for episode evaluation.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Render a scene, optionally with a trajectory, to SVG (or PNG).
    Render {
        scene: PathBuf,
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        png: bool,
        #[arg(long, default_value = "scene.svg")]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(m: impl Into<String>) -> Self {
        Failure { code: 2, kind: "usage", message: m.into() }
    }
    fn invalid(m: impl Into<String>) -> Self {
        Failure { code: 1, kind: "validation", message: m.into() }
    }
    fn backend(e: BackendError) -> Self {
        Failure { code: 3, kind: "backend_unavailable", message: e.to_string() }
    }
    fn runtime(m: impl std::fmt::Display) -> Self {
        Failure { code: 1, kind: "runtime", message: m.to_string() }
    }
}

type Outcome = Result<(), Failure>;

struct JsonLogger;

impl Log for JsonLogger {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= log::max_level()
    }
    fn log(&self, r: &Record) {
        if self.enabled(r.metadata()) {
            let line = json!({"level": r.level().as_str(), "target": r.target(), "message": r.args().to_string()});
            eprintln!("{line}");
        }
    }
    fn flush(&self) {}
}

static LOGGER: JsonLogger = JsonLogger;

fn read(p: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
}

fn write(p: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Failure::runtime)?;
    }
    fs::write(p, bytes).map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))
}

fn scene_arg(p: &Path) -> Result<SceneGraph, Failure> {
    load_scene(&read(p)?).map_err(|e| match e {
        SceneError::Validation(r) => Failure::invalid(format!("{}: {}", p.display(), r.to_json())),
        other => Failure::invalid(format!("{}: {other}", p.display())),
    })
}

fn json_arg<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T, Failure> {
    serde_json::from_slice(&read(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))
}

fn profile_arg(s: &str) -> Result<AgentProfile, Failure> {
    match AgentProfile::preset(s) {
        Some(p) => Ok(p),
        None => json_arg(Path::new(s)),
    }
}

fn http_backend() -> Result<HttpBackend, Failure> {
    HttpBackend::from_env().map_err(Failure::backend)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Validate { scene } => {
            let parsed = parse_scene(&read(&scene)?).map_err(|e| Failure::invalid(e.to_string()))?;
            let report = validate(&parsed);
            println!("{}", report.to_json());
            if report.is_empty() {
                Ok(())
            } else {
                Err(Failure::invalid(format!("{} issue(s)", report.issues.len())))
            }
        }
        Command::Episode { scene, task, profile, seed, noise, out } => {
            let s = scene_arg(&scene)?;
            let task: Task = json_arg(&task)?;
            let mut profile = profile_arg(&profile)?;
            if let Some(p) = noise {
                profile = profile.with_noise(p);
            }
            let traj = run_episode(&s, &task, &profile, seed, &NavConfig::default()).map_err(Failure::runtime)?;
            write(&out.join("trajectory.json"), (traj.to_record() + "\n").as_bytes())?;
            write(&out.join("trajectory.svg"), &render_scene(&s, Some(&traj), Some(&task.target_object_id)))
        }
        Command::Analyze { scene, trajectory, backend, out } => {
            let s = scene_arg(&scene)?;
            let traj: Trajectory = json_arg(&trajectory)?;
            let cfg = AnalysisConfig::default();
            let analysis = match backend {
                Backend::Heuristic => analyze_heuristic(&s, &traj, &cfg).map_err(Failure::runtime)?,
                Backend::External => {
                    let b = http_backend()?;
                    analyze_with_fallback(&s, &traj, &cfg, &b, 3).map_err(Failure::runtime)?.0
                }
            };
            write(&out, (analysis.to_json() + "\n").as_bytes())
        }
        Command::Perturb { scene, analysis, trajectory, backend, steps, revisions, seed, out } => {
            let s = scene_arg(&scene)?;
            let analysis: Analysis = json_arg(&analysis)?;
            let traj: Trajectory = json_arg(&trajectory)?;
            let mut cfg = GenerationConfig { seed, ..GenerationConfig::default() };
            if let Some(n) = steps {
                cfg.max_steps = n;
            }
            if let Some(n) = revisions {
                cfg.max_revisions_per_step = n;
            }
            let heuristic = HeuristicProposer { seed };
            let http = match backend {
                Backend::External => Some(http_backend()?),
                Backend::Heuristic => None,
            };
            let external = http.as_ref().map(|b| ExternalProposer {
                backend: b,
                fallback: heuristic,
                max_attempts: cfg.max_revisions_per_step + 1,
                render: RenderConfig::default(),
            });
            let proposer: &dyn Proposer = match &external {
                Some(e) => e,
                None => &heuristic,
            };
            let verifier = http.as_ref().map(|b| b as &dyn LlmBackend);
            let session = generate(&s, &analysis, &traj, proposer, verifier, &cfg).map_err(Failure::runtime)?;
            write(&out.join("session.json"), (session.to_json() + "\n").as_bytes())?;
            write(&out.join("steps.log"), session.step_records().as_bytes())?;
            write(&out.join("final_scene.json"), &save_scene(&session.final_scene))?;
            for (i, sc) in session.scenes.iter().enumerate() {
                let svg = render_scene(sc, Some(&traj), Some(&traj.task.target_object_id));
                write(&out.join(format!("step_{:04}.svg", i + 1)), &svg)?;
            }
            Ok(())
        }
        Command::Loop { config, out, iterations, seed, jobs } => {
            let text = String::from_utf8(read(&config)?).map_err(|e| Failure::usage(e.to_string()))?;
            let mut cfg = CurriculumConfig::from_json(&text).map_err(|e| Failure::usage(e.to_string()))?;
            if let Some(t) = iterations {
                cfg.iterations = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.check().map_err(|e| Failure::usage(e.to_string()))?;
            let dir = config.parent().unwrap_or(Path::new("."));
            let inputs = cfg.load_inputs(dir).map_err(|e| match e {
                curricula::curriculum::CurriculumError::Io(_) => Failure::usage(e.to_string()),
                other => Failure::invalid(other.to_string()),
            })?;
            let needs_http =
                cfg.analysis_backend == BackendKind::External || cfg.generator_backend == BackendKind::External;
            let http = if needs_http { Some(http_backend()?) } else { None };
            let b = http.as_ref().map(|h| h as &dyn LlmBackend);
            let backends = Backends { analysis: b, generator: b };
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = jobs {
                pool = pool.num_threads(n.max(1));
            }
            let pool = pool.build().map_err(Failure::runtime)?;
            pool.install(|| run_curriculum(&cfg, &inputs, backends, Some(&out)))
                .map(|_| ())
                .map_err(Failure::runtime)
        }
        Command::Render { scene, traj, target, png, out } => {
            let s = scene_arg(&scene)?;
            let t: Option<Trajectory> = traj.as_deref().map(json_arg).transpose()?;
            let target = target.or_else(|| t.as_ref().map(|t| t.task.target_object_id.clone()));
            let bytes = if png {
                render_png(&s, t.as_ref(), target.as_deref(), &RenderConfig::default())
            } else {
                render_scene(&s, t.as_ref(), target.as_deref())
            };
            write(&out, &bytes)
        }
    }
}

fn main() -> ExitCode {
    let level = match std::env::var("CURRICULA_LOG").as_deref() {
        Ok("debug") => LevelFilter::Debug,
        Ok("info") => LevelFilter::Info,
        Ok("error") => LevelFilter::Error,
        Ok("off") => LevelFilter::Off,
        _ => LevelFilter::Warn,
    };
    let _ = log::set_logger(&LOGGER).map(|()| log::set_max_level(level));

    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", json!({"error": "usage", "message": e.to_string().trim_end()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({"error": f.kind, "message": f.message}));
            ExitCode::from(f.code)
        }
    }
}
