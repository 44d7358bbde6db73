//! Closed-loop evaluation: render at the current gripper pose, query a
//! controller, apply its delta in the gripper frame, repeat until the grasp
//! is declared, the hand is hit, or the step budget runs out.

use crate::geometry::{apply_action, DeltaAction, Pose};
use crate::policy::{forward, PolicyError, PolicyInput, PolicyOutput, PolicyParams};
use crate::render::{render_frame, write_rgb_png, CameraIntrinsics, Frame, RenderConfig, RenderError};
use crate::scene::{GaussianScene, LabeledPointCloud, PointGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub max_steps: usize,
    pub grasp_threshold: f64,
    /// meters
    pub pos_tol: f64,
    /// radians
    pub rot_tol: f64,
    /// meters, gripper origin to nearest hand point
    pub collision_distance: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            max_steps: 60,
            grasp_threshold: 0.9,
            pos_tol: 0.02,
            rot_tol: 0.175,
            collision_distance: 0.01,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.max_steps == 0
            || !(self.grasp_threshold > 0.0 && self.grasp_threshold < 1.0)
            || !(self.pos_tol > 0.0 && self.rot_tol > 0.0 && self.collision_distance > 0.0)
        {
            return Err(RolloutError::InvalidConfig(
                "rollout: max_steps ≥ 1, threshold in (0, 1) and positive tolerances required".into(),
            ));
        }
        Ok(())
    }
}

/// Anything that maps the current observation to a motion and a grasp
/// probability.
pub trait Controller {
    fn act(&mut self, step: usize, pose: &Pose, frame: &Frame) -> Result<PolicyOutput, RolloutError>;
}

pub struct NetworkController<'a> {
    pub params: &'a PolicyParams,
}

impl Controller for NetworkController<'_> {
    fn act(&mut self, _step: usize, _pose: &Pose, frame: &Frame) -> Result<PolicyOutput, RolloutError> {
        Ok(forward(self.params, &PolicyInput::from_frame(frame))?)
    }
}

/// Replays recorded actions; declares the grasp on the last one.
pub struct ReplayController {
    pub actions: Vec<DeltaAction>,
}

impl Controller for ReplayController {
    fn act(&mut self, step: usize, _pose: &Pose, _frame: &Frame) -> Result<PolicyOutput, RolloutError> {
        let a = self.actions.get(step).copied().unwrap_or_default();
        let last = step + 1 >= self.actions.len();
        Ok(PolicyOutput {
            delta_t: a.translation.into(),
            delta_r: a.rotation.into(),
            grasp_logit: if last { f64::INFINITY } else { f64::NEG_INFINITY },
            grasp_prob: if last { 1.0 } else { 0.0 },
        })
    }
}

/// Never moves, never declares.
pub struct ZeroController;

impl Controller for ZeroController {
    fn act(&mut self, _step: usize, _pose: &Pose, _frame: &Frame) -> Result<PolicyOutput, RolloutError> {
        Ok(PolicyOutput {
            delta_t: [0.0; 3],
            delta_r: [0.0; 3],
            grasp_logit: f64::NEG_INFINITY,
            grasp_prob: 0.0,
        })
    }
}

/// Scene plus camera settings shared by every step.
#[derive(Clone, Copy)]
pub struct Stage<'a> {
    pub scene: &'a GaussianScene,
    pub cam: &'a CameraIntrinsics,
    pub render: &'a RenderConfig,
}

/// One closed-loop tick: observe, predict, move in the gripper frame.
pub fn step<C: Controller + ?Sized>(
    stage: &Stage,
    pose: &Pose,
    controller: &mut C,
    k: usize,
) -> Result<(PolicyOutput, Pose), RolloutError> {
    let frame = render_frame(stage.scene, stage.cam, pose, stage.render)?;
    let out = controller.act(k, pose, &frame)?;
    Ok((out, apply_action(pose, &out.action())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub declared: bool,
    pub success: bool,
    pub steps_taken: usize,
    pub final_pos_err: f64,
    pub final_rot_err: f64,
    pub hand_collision: bool,
    pub trajectory: Vec<Pose>,
}

pub fn run_episode<C: Controller + ?Sized>(
    stage: &Stage,
    start: &Pose,
    controller: &mut C,
    reference: &Pose,
    hand: &LabeledPointCloud,
    cfg: &RolloutConfig,
) -> Result<RolloutResult, RolloutError> {
    cfg.validate()?;
    let grid = PointGrid::new(&hand.points, 8);
    let mut pose = *start;
    let mut trajectory = vec![pose];
    let (mut declared, mut collision) = (false, false);
    let mut steps_taken = 0;
    for k in 0..cfg.max_steps {
        let (out, next) = step(stage, &pose, controller, k)?;
        steps_taken = k + 1;
        if out.grasp_prob >= cfg.grasp_threshold {
            declared = true;
            break;
        }
        pose = next;
        trajectory.push(pose);
        if !hand.is_empty() && grid.any_within(&hand.points, &pose.translation, cfg.collision_distance) {
            collision = true;
            break;
        }
    }
    let (rot_err, pos_err) = pose.distance(reference);
    Ok(RolloutResult {
        declared,
        success: declared && !collision && pos_err <= cfg.pos_tol && rot_err <= cfg.rot_tol,
        steps_taken,
        final_pos_err: pos_err,
        final_rot_err: rot_err,
        hand_collision: collision,
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub episode: usize,
    pub declared: bool,
    pub success: bool,
    pub steps_taken: usize,
    pub final_pos_err: f64,
    pub final_rot_err: f64,
    pub hand_collision: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub declaration_rate: f64,
    pub collision_rate: f64,
    pub mean_pos_err: f64,
    pub median_pos_err: f64,
    pub mean_rot_err: f64,
    pub median_rot_err: f64,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub rows: Vec<EvalRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl EvalReport {
    pub fn from_results(results: &[RolloutResult]) -> Self {
        let rows: Vec<EvalRow> = results
            .iter()
            .enumerate()
            .map(|(i, r)| EvalRow {
                episode: i,
                declared: r.declared,
                success: r.success,
                steps_taken: r.steps_taken,
                final_pos_err: r.final_pos_err,
                final_rot_err: r.final_rot_err,
                hand_collision: r.hand_collision,
            })
            .collect();
        let n = rows.len() as f64;
        let rate = |f: fn(&EvalRow) -> bool| rows.iter().filter(|r| f(r)).count() as f64 / n;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let summary = EvalSummary {
            episodes: rows.len(),
            success_rate: rate(|r| r.success),
            declaration_rate: rate(|r| r.declared),
            collision_rate: rate(|r| r.hand_collision),
            mean_pos_err: mean(|r| r.final_pos_err),
            median_pos_err: median(rows.iter().map(|r| r.final_pos_err).collect()),
            mean_rot_err: mean(|r| r.final_rot_err),
            median_rot_err: median(rows.iter().map(|r| r.final_rot_err).collect()),
            mean_steps: mean(|r| r.steps_taken as f64),
        };
        EvalReport { summary, rows }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Runs one rollout per `(start, reference)` pair, in parallel, with a fresh
/// controller per episode.
pub fn evaluate<C, F>(
    stage: &Stage,
    pairs: &[(Pose, Pose)],
    hand: &LabeledPointCloud,
    cfg: &RolloutConfig,
    make_controller: F,
) -> Result<(EvalReport, Vec<RolloutResult>), RolloutError>
where
    C: Controller,
    F: Fn(usize) -> C + Sync,
{
    if pairs.is_empty() {
        return Err(RolloutError::InvalidConfig("evaluation needs at least one start".into()));
    }
    let results = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (start, reference))| {
            let mut c = make_controller(i);
            run_episode(stage, start, &mut c, reference, hand, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((EvalReport::from_results(&results), results))
}

/// `n_frames` poses picked evenly by index, rendered and tiled left to right.
/// Returns `(width, height, rgb)`.
pub fn trajectory_strip(
    stage: &Stage,
    trajectory: &[Pose],
    n_frames: usize,
) -> Result<(usize, usize, Vec<u8>), RolloutError> {
    if trajectory.is_empty() || n_frames == 0 {
        return Err(RolloutError::InvalidConfig("strip needs poses and at least one frame".into()));
    }
    let last = trajectory.len() - 1;
    let picks: Vec<usize> = (0..n_frames)
        .map(|k| {
            if n_frames == 1 {
                0
            } else {
                ((k * last) as f64 / (n_frames - 1) as f64).round() as usize
            }
        })
        .collect();
    let frames = picks
        .par_iter()
        .map(|&i| render_frame(stage.scene, stage.cam, &trajectory[i], stage.render))
        .collect::<Result<Vec<_>, _>>()?;
    let (fw, fh) = (stage.cam.width, stage.cam.height);
    let w = fw * n_frames;
    let mut rgb = vec![0u8; w * fh * 3];
    for (k, f) in frames.iter().enumerate() {
        for y in 0..fh {
            let dst = (y * w + k * fw) * 3;
            rgb[dst..dst + fw * 3].copy_from_slice(&f.rgb[y * fw * 3..(y + 1) * fw * 3]);
        }
    }
    Ok((w, fh, rgb))
}

pub fn render_trajectory_strip(
    stage: &Stage,
    trajectory: &[Pose],
    n_frames: usize,
    path: &Path,
) -> Result<(), RolloutError> {
    let (w, h, rgb) = trajectory_strip(stage, trajectory, n_frames)?;
    write_rgb_png(path, w, h, &rgb)?;
    Ok(())
}
