//! Config-driven stages: scene → grasps → demonstrations → policy → rollouts.
//! Every stage reads its inputs from, and writes its outputs to, one run
//! directory, so stages can be re-run independently.

use crate::demo::{
    generate_episode, read_dataset, sample_start_poses, write_dataset, Dataset, DemoError, StartSamplerConfig,
    TrajectoryConfig,
};
use crate::geometry::Pose;
use crate::grasp::{
    align_to_scene, filter_unsafe, order_by_diversity, pre_grasp_pose, read_grasp_table, sample_antipodal_grasps,
    write_grasp_table, Grasp, GraspError, GripperModel,
};
use crate::policy::{
    evaluate_samples, load_params, save_params, train, Architecture, DatasetMetrics, LossWeights, PolicyError,
    Sample, TrainConfig,
};
use crate::render::{CameraIntrinsics, RenderConfig, RenderError};
use crate::rollout::{
    evaluate, render_trajectory_strip, Controller, EvalReport, NetworkController, ReplayController, RolloutConfig,
    RolloutError, RolloutResult, Stage, ZeroController,
};
use crate::scene::{
    build_synthetic_scene, estimate_normals, extract_point_cloud, load_scene, save_scene, GaussianScene, Label,
    LabeledPointCloud, SceneError, SyntheticSceneSpec,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    /// The stage ran but produced nothing usable downstream.
    #[error("no result: {0}")]
    NoResult(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

impl PipelineError {
    /// 1 config, 2 runtime failure, 3 nothing found.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::NoResult(_) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    Synthetic(SyntheticSceneSpec),
    /// a binary splat file plus its per-Gaussian label sidecar
    Files { splats: PathBuf, labels: PathBuf },
}

impl Default for SceneSource {
    fn default() -> Self {
        SceneSource::Synthetic(SyntheticSceneSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspStageConfig {
    pub n_samples: usize,
    pub mu: f64,
    /// Gaussians below this opacity are ignored when extracting clouds
    pub opacity_min: f64,
    pub normals_k: usize,
    /// safe grasps, in diversity order, used for demonstrations and evaluation
    pub n_grasps: usize,
    /// applied as `offset ∘ grasp` after sampling
    pub frame_offset: Pose,
}

impl Default for GraspStageConfig {
    fn default() -> Self {
        GraspStageConfig {
            n_samples: 500,
            mu: 0.4,
            opacity_min: 0.0,
            normals_k: 10,
            n_grasps: 2,
            frame_offset: Pose::IDENTITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// trained policy from fresh start poses
    Network,
    /// recorded demonstration actions from the demonstration starts
    Replay,
    /// motionless baseline from fresh start poses
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStageConfig {
    pub mode: EvalMode,
    pub starts_per_grasp: usize,
    pub strip_frames: usize,
    /// strip resolution relative to the policy camera
    pub strip_scale: f64,
}

impl Default for EvalStageConfig {
    fn default() -> Self {
        EvalStageConfig {
            mode: EvalMode::Network,
            starts_per_grasp: 10,
            strip_frames: 6,
            strip_scale: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// every stage derives its generator seed from this one
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub scene: SceneSource,
    #[serde(default)]
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub gripper: GripperModel,
    #[serde(default)]
    pub grasp: GraspStageConfig,
    #[serde(default)]
    pub sampler: StartSamplerConfig,
    #[serde(default)]
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub architecture: Architecture,
    /// `train.seed` is ignored; the stage seed comes from `seed`
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub eval: EvalStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            out_dir: None,
            scene: SceneSource::default(),
            camera: CameraIntrinsics::default(),
            render: RenderConfig::default(),
            gripper: GripperModel::default(),
            grasp: GraspStageConfig::default(),
            sampler: StartSamplerConfig::default(),
            trajectory: TrajectoryConfig::default(),
            architecture: Architecture::default(),
            train: TrainConfig::default(),
            loss: LossWeights::default(),
            rollout: RolloutConfig::default(),
            eval: EvalStageConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses and validates; relative scene file paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        // peek at the version first so an old file gets a clear message
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        match raw.get("schema_version").and_then(|v| v.as_integer()) {
            Some(v) if v == CONFIG_SCHEMA_VERSION as i64 => {}
            Some(v) => {
                return Err(PipelineError::Config(format!(
                    "schema_version {v} is not supported (expected {CONFIG_SCHEMA_VERSION})"
                )))
            }
            None => return Err(PipelineError::Config("missing integer schema_version".into())),
        }
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if let SceneSource::Files { splats, labels } = &mut cfg.scene {
            *splats = base.join(&*splats);
            *labels = base.join(&*labels);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn fmt::Display| PipelineError::Config(e.to_string());
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(PipelineError::Config(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if let SceneSource::Synthetic(spec) = &self.scene {
            spec.validate().map_err(|e| cfg(&e))?;
        }
        self.camera.validate().map_err(|e| cfg(&e))?;
        self.gripper.validate().map_err(|e| cfg(&e))?;
        self.sampler.validate().map_err(|e| cfg(&e))?;
        self.trajectory.validate().map_err(|e| cfg(&e))?;
        self.architecture.validate().map_err(|e| cfg(&e))?;
        self.train.validate().map_err(|e| cfg(&e))?;
        self.loss.validate().map_err(|e| cfg(&e))?;
        self.rollout.validate().map_err(|e| cfg(&e))?;
        let g = &self.grasp;
        if g.n_samples == 0 || g.n_grasps == 0 || g.normals_k < 3 || !(g.mu > 0.0) || !(0.0..=1.0).contains(&g.opacity_min)
        {
            return Err(PipelineError::Config(
                "grasp: n_samples, n_grasps ≥ 1, normals_k ≥ 3, mu > 0, opacity_min in [0, 1]".into(),
            ));
        }
        let e = &self.eval;
        if e.starts_per_grasp == 0 || e.strip_frames == 0 || !(e.strip_scale > 0.0) {
            return Err(PipelineError::Config(
                "eval: starts_per_grasp, strip_frames ≥ 1 and strip_scale > 0".into(),
            ));
        }
        if (self.architecture.height, self.architecture.width) != (self.camera.height, self.camera.width) {
            return Err(PipelineError::Config(format!(
                "architecture input {}x{} differs from camera {}x{}",
                self.architecture.width, self.architecture.height, self.camera.width, self.camera.height
            )));
        }
        Ok(())
    }
}

/// Independent per-purpose seeds from one global seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TAG_SCENE: u64 = 1;
const TAG_GRASPS: u64 = 2;
const TAG_DEMO_STARTS: u64 = 3;
const TAG_TRAIN: u64 = 4;
const TAG_EVAL_STARTS: u64 = 5;

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }
    pub fn scene(&self) -> PathBuf {
        self.root.join("scene.ply")
    }
    pub fn labels(&self) -> PathBuf {
        self.root.join("scene.labels")
    }
    pub fn grasps(&self) -> PathBuf {
        self.root.join("grasps.tsv")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn params(&self) -> PathBuf {
        self.root.join("policy.bin")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.tsv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("eval").join("report.json")
    }
    pub fn strips(&self) -> PathBuf {
        self.root.join("eval").join("strips")
    }
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn read_scene(paths: &RunPaths) -> Result<GaussianScene, PipelineError> {
    Ok(load_scene(&paths.scene(), &paths.labels())?)
}

fn hand_cloud(scene: &GaussianScene, cfg: &PipelineConfig) -> Result<LabeledPointCloud, PipelineError> {
    Ok(extract_point_cloud(scene, Label::Hand, cfg.grasp.opacity_min)?)
}

/// Safe rows of the grasp table, capped at `n_grasps`.
fn selected_grasps(paths: &RunPaths, cfg: &PipelineConfig) -> Result<Vec<Grasp>, PipelineError> {
    let table = read_grasp_table(&paths.grasps())?;
    let safe: Vec<Grasp> = table.into_iter().filter(|g| g.safe).take(cfg.grasp.n_grasps).collect();
    if safe.is_empty() {
        return Err(PipelineError::NoResult("grasp table has no safe grasps".into()));
    }
    Ok(safe)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneStats {
    pub object: usize,
    pub hand: usize,
    pub background: usize,
}

impl fmt::Display for SceneStats {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(
            f,
            "gaussians: object {} hand {} background {} total {}",
            self.object,
            self.hand,
            self.background,
            self.object + self.hand + self.background
        )
    }
}

pub fn build_scene(cfg: &PipelineConfig, paths: &RunPaths) -> Result<SceneStats, PipelineError> {
    cfg.validate()?;
    let scene = match &cfg.scene {
        SceneSource::Synthetic(spec) => build_synthetic_scene(spec, derive_seed(cfg.seed, TAG_SCENE))?,
        SceneSource::Files { splats, labels } => load_scene(splats, labels)?,
    };
    ensure_dir(&paths.root)?;
    save_scene(&scene, &paths.scene(), &paths.labels())?;
    Ok(SceneStats {
        object: scene.count(Label::Object),
        hand: scene.count(Label::Hand),
        background: scene.count(Label::Background),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspStats {
    pub candidates: usize,
    pub safe: usize,
}

impl fmt::Display for GraspStats {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "grasps: {} candidates, {} safe", self.candidates, self.safe)
    }
}

/// Writes every candidate: safe ones first in diversity order, then the
/// rejected ones in sampling order. Zero safe grasps is `NoResult`, after the
/// table is written.
pub fn sample_grasps(cfg: &PipelineConfig, paths: &RunPaths) -> Result<GraspStats, PipelineError> {
    cfg.validate()?;
    let scene = read_scene(paths)?;
    let g = &cfg.grasp;
    let object = estimate_normals(&extract_point_cloud(&scene, Label::Object, g.opacity_min)?, g.normals_k)?;
    let hand = hand_cloud(&scene, cfg)?;
    let candidates: Vec<Grasp> = sample_antipodal_grasps(&object, &cfg.gripper, g.n_samples, g.mu, derive_seed(cfg.seed, TAG_GRASPS))?
        .iter()
        .map(|c| align_to_scene(c, &g.frame_offset).canonicalize_roll(&scene.up_axis))
        .collect();
    let safe = filter_unsafe(&candidates, &hand, &cfg.gripper)?;
    let mut table: Vec<Grasp> = order_by_diversity(&safe).into_iter().map(|i| safe[i]).collect();
    // filter_unsafe keeps order, so a merge walk recovers the rejects
    let mut s = safe.iter().peekable();
    for c in &candidates {
        if s.peek().is_some_and(|k| k.pose == c.pose) {
            s.next();
        } else {
            table.push(Grasp { safe: false, ..*c });
        }
    }
    write_grasp_table(&paths.grasps(), &table)?;
    let stats = GraspStats {
        candidates: candidates.len(),
        safe: safe.len(),
    };
    if safe.is_empty() {
        return Err(PipelineError::NoResult(format!("{stats}; no safe grasp found")));
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoStats {
    pub episodes: usize,
    pub steps: usize,
    pub discards: BTreeMap<String, usize>,
}

impl fmt::Display for DemoStats {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "demonstrations: {} episodes, {} steps", self.episodes, self.steps)?;
        for (k, v) in &self.discards {
            write!(f, ", discarded {v} ({k})")?;
        }
        Ok(())
    }
}

pub fn gen_demos(cfg: &PipelineConfig, paths: &RunPaths) -> Result<DemoStats, PipelineError> {
    cfg.validate()?;
    let scene = read_scene(paths)?;
    let hand = hand_cloud(&scene, cfg)?;
    let grasps = selected_grasps(paths, cfg)?;
    let mut episodes = Vec::new();
    let mut discards = BTreeMap::new();
    for (gi, grasp) in grasps.iter().enumerate() {
        let seed = derive_seed(derive_seed(cfg.seed, TAG_DEMO_STARTS), gi as u64);
        let starts = match sample_start_poses(grasp, &scene, &hand, &cfg.sampler, seed) {
            Ok(s) => s,
            Err(DemoError::SamplingExhausted { .. }) => {
                *discards.entry("start_sampling_exhausted".to_string()).or_insert(0) += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for start in &starts {
            let scene_id = format!("grasp_{gi}");
            match generate_episode(&scene, &scene_id, &cfg.camera, &cfg.render, grasp, start, &cfg.trajectory) {
                Ok(ep) => episodes.push(ep),
                Err(DemoError::ObjectOccluded { .. }) => {
                    *discards.entry("object_not_visible".to_string()).or_insert(0) += 1
                }
                Err(DemoError::CenteringFailed) => *discards.entry("centering_failed".to_string()).or_insert(0) += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }
    let configs = serde_json::json!({
        "seed": cfg.seed,
        "render": cfg.render,
        "grasp": cfg.grasp,
        "sampler": cfg.sampler,
        "trajectory": cfg.trajectory,
    });
    let dataset = Dataset {
        camera: cfg.camera,
        configs,
        discards: discards.clone(),
        episodes,
    };
    let stats = DemoStats {
        episodes: dataset.episodes.len(),
        steps: dataset.n_steps(),
        discards,
    };
    write_dataset(&dataset, &paths.dataset())?;
    if dataset.episodes.is_empty() {
        return Err(PipelineError::NoResult(format!("{stats}; every episode was discarded")));
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub samples: usize,
    pub epochs: usize,
    pub metrics: DatasetMetrics,
}

impl fmt::Display for TrainStats {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        let m = &self.metrics.mean;
        write!(
            f,
            "trained {} epochs on {} steps: loss {:.4e} (t {:.3e} r {:.3e} g {:.3e}), grasp accuracy {:.3}",
            self.epochs, self.samples, m.total, m.t, m.r, m.g, self.metrics.grasp_accuracy
        )
    }
}

pub fn train_policy(cfg: &PipelineConfig, paths: &RunPaths) -> Result<TrainStats, PipelineError> {
    cfg.validate()?;
    let dataset = read_dataset(&paths.dataset())?;
    if dataset.camera != cfg.camera {
        return Err(PipelineError::Config("dataset camera differs from the configured camera".into()));
    }
    let samples = Sample::from_dataset(&dataset);
    let tc = TrainConfig {
        seed: derive_seed(cfg.seed, TAG_TRAIN),
        ..cfg.train
    };
    let (params, log) = train(cfg.architecture, &samples, &tc, &cfg.loss)?;
    save_params(&params, &paths.params())?;
    log.write(&paths.train_log())?;
    Ok(TrainStats {
        samples: samples.len(),
        epochs: log.epochs.len(),
        metrics: evaluate_samples(&params, &samples, &cfg.loss)?,
    })
}

/// Start/reference pairs for evaluation. Replay mode reuses the
/// demonstration starts; the other modes draw fresh ones.
fn eval_pairs(
    cfg: &PipelineConfig,
    scene: &GaussianScene,
    hand: &LabeledPointCloud,
    grasps: &[Grasp],
) -> Result<Vec<(Pose, Pose)>, PipelineError> {
    let sampler = StartSamplerConfig {
        n_starts: cfg.eval.starts_per_grasp,
        ..cfg.sampler
    };
    let mut pairs = Vec::new();
    for (gi, g) in grasps.iter().enumerate() {
        let seed = derive_seed(derive_seed(cfg.seed, TAG_EVAL_STARTS), gi as u64);
        let reference = pre_grasp_pose(g, cfg.trajectory.standoff);
        for s in sample_start_poses(g, scene, hand, &sampler, seed)? {
            pairs.push((s, reference));
        }
    }
    Ok(pairs)
}

fn run_eval<C: Controller, F: Fn(usize) -> C + Sync>(
    stage: &Stage,
    pairs: &[(Pose, Pose)],
    hand: &LabeledPointCloud,
    cfg: &RolloutConfig,
    make: F,
) -> Result<(EvalReport, Vec<RolloutResult>), PipelineError> {
    Ok(evaluate(stage, pairs, hand, cfg, make)?)
}

pub fn eval_policy(cfg: &PipelineConfig, paths: &RunPaths, strips: bool) -> Result<EvalReport, PipelineError> {
    cfg.validate()?;
    let scene = read_scene(paths)?;
    let hand = hand_cloud(&scene, cfg)?;
    let stage = Stage {
        scene: &scene,
        cam: &cfg.camera,
        render: &cfg.render,
    };
    let (report, results) = match cfg.eval.mode {
        EvalMode::Replay => {
            let dataset = read_dataset(&paths.dataset())?;
            let pairs: Vec<(Pose, Pose)> = dataset
                .episodes
                .iter()
                .map(|e| (e.start_pose, pre_grasp_pose(&e.grasp, cfg.trajectory.standoff)))
                .collect();
            let actions: Vec<_> = dataset.episodes.iter().map(|e| e.actions()).collect();
            run_eval(&stage, &pairs, &hand, &cfg.rollout, |i| ReplayController {
                actions: actions[i].clone(),
            })?
        }
        EvalMode::Network => {
            let params = load_params(&paths.params(), &cfg.architecture)?;
            let pairs = eval_pairs(cfg, &scene, &hand, &selected_grasps(paths, cfg)?)?;
            run_eval(&stage, &pairs, &hand, &cfg.rollout, |_| NetworkController { params: &params })?
        }
        EvalMode::Zero => {
            let pairs = eval_pairs(cfg, &scene, &hand, &selected_grasps(paths, cfg)?)?;
            run_eval(&stage, &pairs, &hand, &cfg.rollout, |_| ZeroController)?
        }
    };
    let path = paths.report();
    ensure_dir(path.parent().unwrap())?;
    std::fs::write(&path, report.to_json()).map_err(io_err(&path))?;
    if strips {
        let dir = paths.strips();
        ensure_dir(&dir)?;
        let cam = cfg.camera.scaled(cfg.eval.strip_scale);
        let big = Stage { cam: &cam, ..stage };
        for (i, r) in results.iter().enumerate() {
            render_trajectory_strip(&big, &r.trajectory, cfg.eval.strip_frames, &dir.join(format!("ep_{i:05}.png")))?;
        }
    }
    Ok(report)
}

/// Lower-case hex SHA-256 of a file.
pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over a directory tree: relative paths and contents, in sorted
/// path order.
pub fn sha256_tree(dir: &Path) -> Result<String, PipelineError> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let path = dir.join(&rel);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(&path).map_err(io_err(&path))?);
    }
    Ok(hex(&h.finalize()))
}

/// Checksums of every artifact present in the run directory, keyed by a
/// short name.
pub fn artifact_checksums(paths: &RunPaths) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    let files = [
        ("scene", paths.scene()),
        ("labels", paths.labels()),
        ("grasps", paths.grasps()),
        ("manifest", paths.dataset().join("manifest.json")),
        ("params", paths.params()),
        ("train_log", paths.train_log()),
        ("report", paths.report()),
    ];
    for (name, p) in files {
        if p.exists() {
            out.insert(name.to_string(), sha256_file(&p)?);
        }
    }
    if paths.dataset().is_dir() {
        out.insert("dataset".to_string(), sha256_tree(&paths.dataset())?);
    }
    Ok(out)
}
