//! Reaching demonstrations: start poses around a grasp, three-phase
//! trajectories to the pre-grasp pose, rendered steps and the on-disk
//! dataset.

use crate::geometry::{look_at, relative_action, slerp, DeltaAction, GeometryError, Pose, Vec3};
use crate::grasp::{pre_grasp_pose, Grasp};
use crate::render::{
    read_gray_png, read_rgb_png, render_frame, write_gray_png, write_rgb_png, CameraIntrinsics, Frame,
    RenderConfig, RenderError,
};
use crate::scene::{extract_point_cloud, GaussianScene, Label, LabeledPointCloud, PointGrid, SceneError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DATASET_SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("start sampling exhausted: {accepted} accepted in {trials} trials (acceptance rate {rate:.4})")]
    SamplingExhausted { accepted: usize, trials: usize, rate: f64 },
    #[error("object centroid is behind the camera after centering")]
    CenteringFailed,
    #[error("object not visible at step {step}")]
    ObjectOccluded { step: usize },
    #[error("hand cloud is empty")]
    EmptyHandCloud,
    #[error("dataset schema version mismatch: expected {expected}, found {found:?}")]
    SchemaVersionMismatch { expected: u32, found: Option<u64> },
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DemoError + '_ {
    move |source| DemoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Angles in radians; elevation is measured above the plane normal to the
/// scene up axis, azimuth from the horizontal projection of world `+x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartSamplerConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub elevation: [f64; 2],
    pub azimuth: [f64; 2],
    pub min_hand_distance: f64,
    pub max_tilt_from_approach: f64,
    /// clearance of the line of sight to the grasp origin from hand points
    pub occlusion_clearance: f64,
    pub n_starts: usize,
}

impl Default for StartSamplerConfig {
    fn default() -> Self {
        StartSamplerConfig {
            r_min: 0.35,
            r_max: 0.60,
            elevation: [10f64.to_radians(), 70f64.to_radians()],
            azimuth: [0.0, 2.0 * PI],
            min_hand_distance: 0.15,
            max_tilt_from_approach: 75f64.to_radians(),
            occlusion_clearance: 0.02,
            n_starts: 10,
        }
    }
}

impl StartSamplerConfig {
    pub fn validate(&self) -> Result<(), DemoError> {
        let bad = |m: &str| Err(DemoError::InvalidConfig(format!("start sampler: {m}")));
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return bad("need 0 < r_min < r_max");
        }
        if !(self.elevation[0] <= self.elevation[1]
            && self.elevation[0] >= -PI / 2.0
            && self.elevation[1] <= PI / 2.0)
        {
            return bad("elevation range must be ordered within [-π/2, π/2]");
        }
        if !(self.azimuth[0] <= self.azimuth[1]) {
            return bad("azimuth range must be ordered");
        }
        if self.n_starts == 0 {
            return bad("n_starts must be at least 1");
        }
        if !(self.min_hand_distance >= 0.0 && self.max_tilt_from_approach > 0.0 && self.occlusion_clearance >= 0.0) {
            return bad("distances and tilt must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub k1: usize,
    pub k2_step: f64,
    pub k3: usize,
    pub d_switch: f64,
    /// pixels
    pub center_tolerance: f64,
    /// pre-grasp retreat along the grasp approach axis
    pub standoff: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            k1: 8,
            k2_step: 0.02,
            k3: 10,
            d_switch: 0.12,
            center_tolerance: 4.0,
            standoff: 0.10,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<(), DemoError> {
        if self.k1 == 0 || self.k3 == 0 {
            return Err(DemoError::InvalidConfig("trajectory: k1 and k3 must be positive".into()));
        }
        if !(self.k2_step > 0.0 && self.d_switch > 0.0 && self.center_tolerance > 0.0 && self.standoff > 0.0) {
            return Err(DemoError::InvalidConfig(
                "trajectory: k2_step, d_switch, center_tolerance and standoff must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mean of the object Gaussians.
pub fn object_centroid(scene: &GaussianScene) -> Result<Vec3, DemoError> {
    Ok(extract_point_cloud(scene, Label::Object, 0.0)?.centroid())
}

fn horizontal_basis(up: &Vec3) -> (Vec3, Vec3, Vec3) {
    let u = up.normalize();
    let mut e1 = Vec3::x() - u * u.x;
    if e1.norm() < 1e-6 {
        e1 = Vec3::y() - u * u.y;
    }
    let e1 = e1.normalize();
    (e1, u.cross(&e1), u)
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + t * ab)).norm()
}

/// Rejection filters applied to start candidates; exposed so callers can
/// re-check accepted poses.
pub struct StartFilter<'a> {
    pub grasp: &'a Grasp,
    pub centroid: Vec3,
    pub up: Vec3,
    pub table_height: Option<f64>,
    pub hand: &'a LabeledPointCloud,
    pub cfg: &'a StartSamplerConfig,
}

impl StartFilter<'_> {
    pub fn above_table(&self, pos: &Vec3) -> bool {
        self.table_height.is_none_or(|h| pos.dot(&self.up.normalize()) >= h)
    }

    pub fn tilt(&self, pos: &Vec3) -> f64 {
        let dir = (self.centroid - pos).normalize();
        dir.dot(&self.grasp.pose.z_axis()).clamp(-1.0, 1.0).acos()
    }

    pub fn line_of_sight_clear(&self, pos: &Vec3) -> bool {
        let target = self.grasp.pose.translation;
        self.hand
            .points
            .iter()
            .all(|q| point_segment_distance(q, pos, &target) > self.cfg.occlusion_clearance)
    }
}

/// Rejection-samples `n_starts` eye-in-hand start poses on a spherical shell
/// around the grasp origin, looking at the object centroid.
pub fn sample_start_poses(
    grasp: &Grasp,
    scene: &GaussianScene,
    hand: &LabeledPointCloud,
    cfg: &StartSamplerConfig,
    seed: u64,
) -> Result<Vec<Pose>, DemoError> {
    cfg.validate()?;
    if hand.is_empty() {
        return Err(DemoError::EmptyHandCloud);
    }
    let filter = StartFilter {
        grasp,
        centroid: object_centroid(scene)?,
        up: scene.up_axis,
        table_height: scene.table_height,
        hand,
        cfg,
    };
    let grid = PointGrid::new(&hand.points, 8);
    let (e1, e2, up) = horizontal_basis(&scene.up_axis);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r3_lo, r3_hi) = (cfg.r_min.powi(3), cfg.r_max.powi(3));
    let (s_lo, s_hi) = (cfg.elevation[0].sin(), cfg.elevation[1].sin());
    let max_trials = 100 * cfg.n_starts;
    let mut out = Vec::with_capacity(cfg.n_starts);
    let mut trials = 0;
    while out.len() < cfg.n_starts && trials < max_trials {
        trials += 1;
        // uniform in volume over the shell sector
        let r = rng.gen_range(r3_lo..=r3_hi).cbrt();
        let sin_el: f64 = rng.gen_range(s_lo..=s_hi);
        let az = rng.gen_range(cfg.azimuth[0]..=cfg.azimuth[1]);
        let cos_el = (1.0 - sin_el * sin_el).max(0.0).sqrt();
        let dir = cos_el * (az.cos() * e1 + az.sin() * e2) + sin_el * up;
        let pos = grasp.pose.translation + r * dir;

        if !filter.above_table(&pos)
            || grid.any_within(&hand.points, &pos, cfg.min_hand_distance)
            || filter.tilt(&pos) > cfg.max_tilt_from_approach
            || !filter.line_of_sight_clear(&pos)
        {
            continue;
        }
        let Ok(rot) = look_at(&pos, &filter.centroid, &scene.up_axis) else {
            continue;
        };
        out.push(Pose::new(rot, pos));
    }
    if out.len() < cfg.n_starts {
        return Err(DemoError::SamplingExhausted {
            accepted: out.len(),
            trials,
            rate: out.len() as f64 / trials as f64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    /// 1, 2 or 3 per pose
    pub phases: Vec<u8>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Index of the last pose before phase 3 begins.
    pub fn switch_index(&self) -> Option<usize> {
        let first3 = self.phases.iter().position(|&p| p == 3)?;
        first3.checked_sub(1)
    }

    /// Index of the last phase-1 pose.
    pub fn centering_end(&self) -> Option<usize> {
        self.phases.iter().rposition(|&p| p == 1)
    }
}

fn centered(cam: &CameraIntrinsics, pose: &Pose, target: &Vec3, tol: f64) -> bool {
    cam.project(&pose.inverse_transform_point(target))
        .is_some_and(|[u, v]| (u - cam.cx).hypot(v - cam.cy) <= tol)
}

/// Centre the object, approach with frozen orientation, then blend into the
/// pre-grasp pose. The start pose is element 0 (phase 1) and the last
/// element is exactly `pre_grasp`.
pub fn plan_trajectory(
    start: &Pose,
    pre_grasp: &Pose,
    object_centroid: &Vec3,
    up: &Vec3,
    cam: &CameraIntrinsics,
    cfg: &TrajectoryConfig,
) -> Result<Trajectory, DemoError> {
    cfg.validate()?;
    if start.translation == pre_grasp.translation {
        return Ok(Trajectory {
            poses: vec![*pre_grasp],
            phases: vec![3],
        });
    }
    let mut poses = vec![*start];
    let mut phases = vec![1u8];

    let pos = start.translation;
    if !centered(cam, start, object_centroid, cfg.center_tolerance) {
        let target = look_at(&pos, object_centroid, up)?;
        for i in 1..=cfg.k1 {
            let p = Pose::new(slerp(&start.rotation, &target, i as f64 / cfg.k1 as f64), pos);
            poses.push(p);
            phases.push(1);
            if centered(cam, &p, object_centroid, cfg.center_tolerance) {
                break;
            }
        }
        let last = poses.last().unwrap();
        if last.inverse_transform_point(object_centroid).z <= 0.0 {
            return Err(DemoError::CenteringFailed);
        }
    }
    let rot = poses.last().unwrap().rotation;

    let goal = pre_grasp.translation;
    let d0 = (goal - pos).norm();
    let dir = (goal - pos) / d0;
    let mut dist = d0;
    let mut k = 0;
    let mut p2 = pos;
    while dist > cfg.d_switch {
        k += 1;
        let s = (k as f64 * cfg.k2_step).min(d0);
        p2 = pos + s * dir;
        dist = (goal - p2).norm();
        poses.push(Pose::new(rot, p2));
        phases.push(2);
    }

    for i in 1..=cfg.k3 {
        let t = i as f64 / cfg.k3 as f64;
        let p = if i == cfg.k3 {
            *pre_grasp
        } else {
            Pose::new(slerp(&rot, &pre_grasp.rotation, t), p2 + t * (goal - p2))
        };
        poses.push(p);
        phases.push(3);
    }
    Ok(Trajectory { poses, phases })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoStep {
    pub camera_pose: Pose,
    pub frame: Frame,
    pub action: DeltaAction,
    /// 1 only at the final step
    pub grasp_label: u8,
    pub phase: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoEpisode {
    pub scene_id: String,
    pub grasp: Grasp,
    pub start_pose: Pose,
    pub steps: Vec<DemoStep>,
}

impl DemoEpisode {
    pub fn poses(&self) -> Vec<Pose> {
        self.steps.iter().map(|s| s.camera_pose).collect()
    }

    pub fn actions(&self) -> Vec<DeltaAction> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Plans, renders and labels one episode. Fails with `ObjectOccluded` when
/// any step's binary object mask is empty.
pub fn generate_episode(
    scene: &GaussianScene,
    scene_id: &str,
    cam: &CameraIntrinsics,
    render_cfg: &RenderConfig,
    grasp: &Grasp,
    start: &Pose,
    cfg: &TrajectoryConfig,
) -> Result<DemoEpisode, DemoError> {
    let centroid = object_centroid(scene)?;
    let traj = plan_trajectory(
        start,
        &pre_grasp_pose(grasp, cfg.standoff),
        &centroid,
        &scene.up_axis,
        cam,
        cfg,
    )?;
    let frames = traj
        .poses
        .par_iter()
        .map(|p| render_frame(scene, cam, p, render_cfg))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(step) = frames.iter().position(|f| !f.object_visible()) {
        return Err(DemoError::ObjectOccluded { step });
    }
    let n = traj.len();
    let steps = frames
        .into_iter()
        .enumerate()
        .map(|(i, frame)| DemoStep {
            camera_pose: traj.poses[i],
            frame,
            action: if i + 1 < n {
                relative_action(&traj.poses[i], &traj.poses[i + 1])
            } else {
                DeltaAction::zero()
            },
            grasp_label: (i + 1 == n) as u8,
            phase: traj.phases[i],
        })
        .collect();
    Ok(DemoEpisode {
        scene_id: scene_id.to_string(),
        grasp: *grasp,
        start_pose: *start,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub camera: CameraIntrinsics,
    /// generator settings, stored verbatim
    pub configs: serde_json::Value,
    /// discarded episode counts by reason
    pub discards: BTreeMap<String, usize>,
    pub episodes: Vec<DemoEpisode>,
}

impl Dataset {
    pub fn n_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    /// `(episode, step)` pairs in storage order.
    pub fn step_refs(&self) -> Vec<&DemoStep> {
        self.episodes.iter().flat_map(|e| e.steps.iter()).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraspRecord {
    pose: Pose,
    width: f64,
    quality: f64,
    safe: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    dir: String,
    scene_id: String,
    grasp: GraspRecord,
    start_pose: Pose,
    n_steps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    camera: CameraIntrinsics,
    configs: serde_json::Value,
    discards: BTreeMap<String, usize>,
    episodes: Vec<EpisodeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    pose: Pose,
    action_t: [f64; 3],
    action_r: [f64; 3],
    grasp: u8,
    phase: u8,
}

fn episode_dir(i: usize) -> String {
    format!("ep_{i:05}")
}

fn write_episode(dir: &Path, ep: &DemoEpisode) -> Result<(), DemoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut lines = Vec::new();
    for (i, s) in ep.steps.iter().enumerate() {
        let f = &s.frame;
        write_rgb_png(&dir.join(format!("step_{i:03}.png")), f.width, f.height, &f.rgb)?;
        write_gray_png(&dir.join(format!("step_{i:03}_obj.png")), f.width, f.height, &f.object_mask)?;
        write_gray_png(&dir.join(format!("step_{i:03}_hand.png")), f.width, f.height, &f.hand_mask)?;
        let rec = StepRecord {
            pose: s.camera_pose,
            action_t: s.action.translation.into(),
            action_r: s.action.rotation.into(),
            grasp: s.grasp_label,
            phase: s.phase,
        };
        serde_json::to_writer(&mut lines, &rec).map_err(|e| DemoError::Malformed(e.to_string()))?;
        lines.push(b'\n');
    }
    let path = dir.join("steps.jsonl");
    fs::write(&path, lines).map_err(io_err(&path))
}

/// Writes the dataset layout under `dir`; episodes are written in parallel,
/// the manifest last.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DemoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    dataset
        .episodes
        .par_iter()
        .enumerate()
        .try_for_each(|(i, ep)| write_episode(&dir.join(episode_dir(i)), ep))?;
    let manifest = Manifest {
        schema_version: DATASET_SCHEMA_VERSION,
        camera: dataset.camera,
        configs: dataset.configs.clone(),
        discards: dataset.discards.clone(),
        episodes: dataset
            .episodes
            .iter()
            .enumerate()
            .map(|(i, ep)| EpisodeRecord {
                dir: episode_dir(i),
                scene_id: ep.scene_id.clone(),
                grasp: GraspRecord {
                    pose: ep.grasp.pose,
                    width: ep.grasp.width,
                    quality: ep.grasp.quality,
                    safe: ep.grasp.safe,
                },
                start_pose: ep.start_pose,
                n_steps: ep.steps.len(),
            })
            .collect(),
    };
    let path = dir.join(MANIFEST);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| DemoError::Malformed(e.to_string()))?;
    f.write_all(b"\n").map_err(io_err(&path))
}

fn read_episode(dir: &Path, rec: EpisodeRecord, cam: &CameraIntrinsics) -> Result<DemoEpisode, DemoError> {
    let ep_dir = dir.join(&rec.dir);
    let path = ep_dir.join("steps.jsonl");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let records: Vec<StepRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| DemoError::Malformed(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect::<Result<_, _>>()?;
    if records.len() != rec.n_steps {
        return Err(DemoError::Malformed(format!(
            "{}: manifest lists {} steps, found {}",
            rec.dir,
            rec.n_steps,
            records.len()
        )));
    }
    let steps = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let (w, h, rgb) = read_rgb_png(&ep_dir.join(format!("step_{i:03}.png")))?;
            let (_, _, object_mask) = read_gray_png(&ep_dir.join(format!("step_{i:03}_obj.png")))?;
            let (_, _, hand_mask) = read_gray_png(&ep_dir.join(format!("step_{i:03}_hand.png")))?;
            if (w, h) != (cam.width, cam.height) || object_mask.len() != w * h || hand_mask.len() != w * h {
                return Err(DemoError::Malformed(format!("{} step {i}: image size mismatch", rec.dir)));
            }
            Ok(DemoStep {
                camera_pose: r.pose,
                frame: Frame {
                    width: w,
                    height: h,
                    rgb,
                    object_mask,
                    hand_mask,
                },
                action: DeltaAction {
                    translation: r.action_t.into(),
                    rotation: r.action_r.into(),
                },
                grasp_label: r.grasp,
                phase: r.phase,
            })
        })
        .collect::<Result<Vec<_>, DemoError>>()?;
    Ok(DemoEpisode {
        scene_id: rec.scene_id,
        grasp: Grasp {
            pose: rec.grasp.pose,
            width: rec.grasp.width,
            quality: rec.grasp.quality,
            safe: rec.grasp.safe,
        },
        start_pose: rec.start_pose,
        steps,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DemoError> {
    let path = dir.join(MANIFEST);
    let mismatch = |found| DemoError::SchemaVersionMismatch {
        expected: DATASET_SCHEMA_VERSION,
        found,
    };
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(mismatch(None)),
        Err(e) => return Err(io_err(&path)(e)),
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| DemoError::Malformed(format!("{}: {e}", path.display())))?;
    let found = value.get("schema_version").and_then(|v| v.as_u64());
    if found != Some(DATASET_SCHEMA_VERSION as u64) {
        return Err(mismatch(found));
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|e| DemoError::Malformed(format!("{}: {e}", path.display())))?;
    let cam = manifest.camera;
    let episodes = manifest
        .episodes
        .into_par_iter()
        .map(|rec| read_episode(dir, rec, &cam))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        camera: cam,
        configs: manifest.configs,
        discards: manifest.discards,
        episodes,
    })
}
