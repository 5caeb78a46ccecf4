//! The closed loop: run episodes on `e_t`, analyze a representative
//! trajectory, generate `e_{t+1}`, and score the agent on held-out scenes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::{analyze_heuristic, analyze_with_fallback, Analysis, AnalysisConfig, AnalysisError};
use crate::generator::{
    generate, ExternalProposer, GenerationConfig, GenerationSession, GeneratorError, HeuristicProposer, Proposer,
};
use crate::geometry::q2;
use crate::llm::LlmBackend;
use crate::navigation::{oracle_cost, run_episode, AgentProfile, NavConfig, NavError, Outcome, Task, Trajectory};
use crate::render::RenderConfig;
use crate::scene::{load_scene, save_scene, SceneError, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Heuristic,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeldoutEntry {
    pub scene: PathBuf,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    /// Paths are relative to the config file.
    pub base_scene: PathBuf,
    pub task: Task,
    /// Profile for iteration `t` is `profiles[min(t, len - 1)]`; a longer
    /// list emulates an improving agent.
    pub profiles: Vec<AgentProfile>,
    #[serde(default)]
    pub analysis_backend: BackendKind,
    #[serde(default)]
    pub generator_backend: BackendKind,
    pub iterations: usize,
    pub episodes_per_eval: usize,
    #[serde(default)]
    pub heldout: Vec<HeldoutEntry>,
    pub seed: u64,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub nav: NavConfig,
}

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Scene { path: String, source: SceneError },
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CurriculumConfig {
    pub fn from_json(text: &str) -> Result<Self, CurriculumError> {
        let cfg: CurriculumConfig = serde_json::from_str(text).map_err(|e| CurriculumError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CurriculumError> {
        if self.iterations < 1 {
            return Err(CurriculumError::Config("iterations must be at least 1".into()));
        }
        if self.episodes_per_eval < 1 {
            return Err(CurriculumError::Config("episodes_per_eval must be at least 1".into()));
        }
        if self.profiles.is_empty() {
            return Err(CurriculumError::Config("at least one agent profile is required".into()));
        }
        for p in &self.profiles {
            p.check()?;
        }
        Ok(())
    }

    pub fn profile_at(&self, t: usize) -> &AgentProfile {
        &self.profiles[t.min(self.profiles.len() - 1)]
    }

    /// Load the base and held-out scenes relative to `dir`.
    pub fn load_inputs(&self, dir: &Path) -> Result<CurriculumInputs, CurriculumError> {
        let read = |p: &Path| -> Result<SceneGraph, CurriculumError> {
            let full = dir.join(p);
            let bytes = fs::read(&full)?;
            load_scene(&bytes).map_err(|source| CurriculumError::Scene {
                path: full.display().to_string(),
                source,
            })
        };
        let base_scene = read(&self.base_scene)?;
        let mut heldout = Vec::new();
        for h in &self.heldout {
            let s = read(&h.scene)?;
            if s.scene_id == base_scene.scene_id || self.base_scene == h.scene {
                return Err(CurriculumError::Config(format!(
                    "held-out scene `{}` is the training scene",
                    s.scene_id
                )));
            }
            heldout.push((s, h.task.clone()));
        }
        Ok(CurriculumInputs { base_scene, heldout })
    }
}

#[derive(Debug, Clone)]
pub struct CurriculumInputs {
    pub base_scene: SceneGraph,
    pub heldout: Vec<(SceneGraph, Task)>,
}

/// External backends, used only when the config selects them.
#[derive(Default, Clone, Copy)]
pub struct Backends<'a> {
    pub analysis: Option<&'a dyn LlmBackend>,
    pub generator: Option<&'a dyn LlmBackend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumRecord {
    pub iteration: usize,
    pub scene_id: String,
    pub success_rate: f64,
    pub mean_path_cost: f64,
    pub mean_min_clearance: f64,
    pub heldout_score: f64,
    #[serde(rename = "delta_R")]
    pub delta_r: f64,
    pub generation: Value,
}

impl CurriculumRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone)]
pub struct CurriculumRun {
    pub records: Vec<CurriculumRecord>,
    /// Scenes `e_0 ..= e_T`.
    pub scenes: Vec<SceneGraph>,
    pub analyses: Vec<Analysis>,
    pub sessions: Vec<GenerationSession>,
    /// Mean `delta_R` over the iterations.
    pub objective: f64,
}

/// splitmix64 over a base seed and a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base;
    for &p in path {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Episodes with seeds `derive_seed(seed, [i])`, in seed order.
pub fn run_episodes(
    scene: &SceneGraph,
    task: &Task,
    profile: &AgentProfile,
    episodes: usize,
    seed: u64,
    nav: &NavConfig,
) -> Result<Vec<Trajectory>, NavError> {
    (0..episodes)
        .into_par_iter()
        .map(|i| run_episode(scene, task, profile, derive_seed(seed, &[i as u64]), nav))
        .collect()
}

/// Per-episode composite: `1 - 0.1 * path_length / oracle_cost` on success, 0 on failure.
pub fn episode_score(traj: &Trajectory, oracle: Option<f64>) -> f64 {
    match (traj.outcome, oracle) {
        (Outcome::Success, Some(c)) if c > 0.0 => 1.0 - 0.1 * traj.path_length / c,
        (Outcome::Success, _) => 0.9,
        _ => 0.0,
    }
}

/// Mean composite over every episode on every scene.
pub fn evaluate(
    profile: &AgentProfile,
    scenes: &[(SceneGraph, Task)],
    episodes: usize,
    seed: u64,
    nav: &NavConfig,
) -> Result<f64, NavError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (k, (scene, task)) in scenes.iter().enumerate() {
        let oracle = oracle_cost(scene, task, profile.agent_radius, nav);
        for t in run_episodes(scene, task, profile, episodes, derive_seed(seed, &[k as u64]), nav)? {
            total += episode_score(&t, oracle);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Median-path-length failure if any, else the median success.
pub fn representative(trajs: &[Trajectory]) -> Option<&Trajectory> {
    let pick = |want_success: bool| {
        let mut v: Vec<&Trajectory> = trajs
            .iter()
            .filter(|t| (t.outcome == Outcome::Success) == want_success)
            .collect();
        v.sort_by(|a, b| a.path_length.total_cmp(&b.path_length).then(a.seed.cmp(&b.seed)));
        v.get(v.len().saturating_sub(1) / 2).copied()
    };
    pick(false).or_else(|| pick(true))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

struct RunDir {
    root: PathBuf,
    log: fs::File,
}

impl RunDir {
    fn create(root: &Path, cfg: &CurriculumConfig) -> Result<Self, CurriculumError> {
        for sub in ["scenes", "trajectories", "analyses", "sessions"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let mut snapshot = serde_json::to_string_pretty(cfg).expect("config serializes");
        snapshot.push('\n');
        fs::write(root.join("config.json"), snapshot)?;
        let log = fs::File::create(root.join("records.log"))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            log,
        })
    }

    fn write(&self, sub: &str, name: String, bytes: &[u8]) -> Result<(), CurriculumError> {
        fs::write(self.root.join(sub).join(name), bytes)?;
        Ok(())
    }

    fn append(&mut self, rec: &CurriculumRecord) -> Result<(), CurriculumError> {
        writeln!(self.log, "{}", rec.to_line())?;
        self.log.flush()?;
        Ok(())
    }
}

/// Run the loop for `cfg.iterations` iterations, writing a run directory
/// when `out` is given.
pub fn run_curriculum(
    cfg: &CurriculumConfig,
    inputs: &CurriculumInputs,
    backends: Backends<'_>,
    out: Option<&Path>,
) -> Result<CurriculumRun, CurriculumError> {
    cfg.check()?;
    let mut dir = out.map(|p| RunDir::create(p, cfg)).transpose()?;
    let mut scene = inputs.base_scene.clone();
    let base_id = scene.scene_id.clone();
    if let Some(d) = &dir {
        d.write("scenes", "e_0000.json".into(), &save_scene(&scene))?;
    }

    let mut run = CurriculumRun {
        records: Vec::new(),
        scenes: vec![scene.clone()],
        analyses: Vec::new(),
        sessions: Vec::new(),
        objective: 0.0,
    };
    let mut previous_score: Option<f64> = None;

    for t in 0..cfg.iterations {
        let profile = cfg.profile_at(t);
        let trajs = run_episodes(
            &scene,
            &cfg.task,
            profile,
            cfg.episodes_per_eval,
            derive_seed(cfg.seed, &[t as u64, 0]),
            &cfg.nav,
        )?;
        if let Some(d) = &dir {
            let mut lines = String::new();
            for tr in &trajs {
                lines.push_str(&tr.to_record());
                lines.push('\n');
            }
            d.write("trajectories", format!("t_{t:04}.jsonl"), lines.as_bytes())?;
        }
        let success_rate = trajs.iter().filter(|x| x.outcome == Outcome::Success).count() as f64 / trajs.len() as f64;
        let reference = representative(&trajs).expect("at least one episode").clone();

        let analysis_cfg = AnalysisConfig {
            agent_radius: profile.agent_radius,
            nav: cfg.nav,
            ..cfg.analysis
        };
        let (analysis, analysis_warning) = match (cfg.analysis_backend, backends.analysis) {
            (BackendKind::External, Some(b)) => analyze_with_fallback(&scene, &reference, &analysis_cfg, b, 3)?,
            (BackendKind::External, None) => {
                let w = "no external analysis backend configured; using heuristic".to_string();
                log::warn!("{w}");
                (analyze_heuristic(&scene, &reference, &analysis_cfg)?, Some(w))
            }
            (BackendKind::Heuristic, _) => (analyze_heuristic(&scene, &reference, &analysis_cfg)?, None),
        };

        let gen_cfg = GenerationConfig {
            seed: derive_seed(cfg.seed, &[t as u64, 1]),
            agent_radius: profile.agent_radius,
            nav: cfg.nav,
            ..cfg.generation
        };
        let heuristic = HeuristicProposer { seed: gen_cfg.seed };
        let external;
        let proposer: &dyn Proposer = match (cfg.generator_backend, backends.generator) {
            (BackendKind::External, Some(b)) => {
                external = ExternalProposer {
                    backend: b,
                    fallback: heuristic,
                    max_attempts: gen_cfg.max_revisions_per_step + 1,
                    render: RenderConfig::default(),
                };
                &external
            }
            _ => &heuristic,
        };
        let verifier = match cfg.generator_backend {
            BackendKind::External => backends.generator,
            BackendKind::Heuristic => None,
        };
        let mut session = generate(&scene, &analysis, &reference, proposer, verifier, &gen_cfg)?;
        if let Some(w) = analysis_warning {
            session.warnings.insert(0, w);
        }
        let next = session.final_scene.with_scene_id(format!("{base_id}_e{:04}", t + 1));

        let score = q2(evaluate(
            profile,
            &inputs.heldout,
            cfg.episodes_per_eval,
            derive_seed(cfg.seed, &[t as u64, 2]),
            &cfg.nav,
        )?);
        let delta_r = q2(previous_score.map_or(0.0, |p| score - p));
        previous_score = Some(score);

        let record = CurriculumRecord {
            iteration: t,
            scene_id: scene.scene_id.clone(),
            success_rate: q2(success_rate),
            mean_path_cost: q2(mean(trajs.iter().map(|x| x.path_length))),
            mean_min_clearance: q2(mean(trajs.iter().map(|x| x.min_clearance_along_path))),
            heldout_score: score,
            delta_r,
            generation: session.summary(),
        };
        if let Some(d) = &mut dir {
            let mut a = analysis.to_json();
            a.push('\n');
            d.write("analyses", format!("a_{t:04}.json"), a.as_bytes())?;
            let mut s = session.to_json();
            s.push('\n');
            d.write("sessions", format!("s_{t:04}.json"), s.as_bytes())?;
            d.write("scenes", format!("e_{:04}.json", t + 1), &save_scene(&next))?;
            d.append(&record)?;
        }
        log::info!("{}", record.to_line());
        run.records.push(record);
        run.analyses.push(analysis);
        run.sessions.push(session);
        run.scenes.push(next.clone());
        scene = next;
    }
    run.objective = mean(run.records.iter().map(|r| r.delta_r));
    Ok(run)
}
