//! Parallel-jaw grasp candidates on the object cloud, hand-proximity
//! filtering in the grasp frame, and pre-grasp poses.
//!
//! Grasp frame: `+z` approach, `+x` closing axis, origin midway between the
//! fingertips.

use crate::geometry::{Pose, Quat, Vec3};
use crate::scene::{LabeledPointCloud, PointGrid};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("object cloud has no normals")]
    NoNormals,
    #[error("hand cloud is empty")]
    EmptyHandCloud,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grasp table line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperModel {
    pub max_width: f64,
    pub finger_depth: f64,
    pub finger_thickness: f64,
    pub palm_clearance: f64,
    pub safety_clearance: f64,
}

impl Default for GripperModel {
    fn default() -> Self {
        GripperModel {
            max_width: 0.08,
            finger_depth: 0.04,
            finger_thickness: 0.01,
            palm_clearance: 0.02,
            safety_clearance: 0.01,
        }
    }
}

impl GripperModel {
    pub fn validate(&self) -> Result<(), GraspError> {
        let vals = [
            self.max_width,
            self.finger_depth,
            self.finger_thickness,
            self.palm_clearance,
            self.safety_clearance,
        ];
        if vals.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(GraspError::InvalidArgument("gripper dimensions must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grasp {
    pub pose: Pose,
    pub width: f64,
    pub quality: f64,
    pub safe: bool,
}

impl Grasp {
    /// The parallel jaw is symmetric under a half turn about the approach
    /// axis; pick the representative whose `+y` does not point up.
    pub fn canonicalize_roll(&self, up: &Vec3) -> Grasp {
        if self.pose.y_axis().dot(up) > 0.0 {
            let mut g = *self;
            g.pose.rotation = self.pose.rotation.mul(&Quat::rot_z(PI));
            g
        } else {
            *self
        }
    }
}

/// Axis-aligned box in the grasp frame covering fingers and palm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweptVolume {
    pub half_x: f64,
    pub half_y: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl SweptVolume {
    pub fn of(grasp: &Grasp, gripper: &GripperModel) -> Self {
        SweptVolume {
            half_x: 0.5 * grasp.width + gripper.finger_thickness + gripper.safety_clearance,
            half_y: gripper.finger_thickness + gripper.safety_clearance,
            z_min: -(gripper.finger_depth + gripper.palm_clearance + gripper.safety_clearance),
            z_max: gripper.safety_clearance,
        }
    }

    /// Closed-box membership of a grasp-frame point.
    pub fn contains(&self, p: &Vec3) -> bool {
        p.x.abs() <= self.half_x && p.y.abs() <= self.half_y && p.z >= self.z_min && p.z <= self.z_max
    }

    fn center(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, 0.5 * (self.z_min + self.z_max))
    }

    fn circumradius(&self) -> f64 {
        let hz = 0.5 * (self.z_max - self.z_min);
        (self.half_x * self.half_x + self.half_y * self.half_y + hz * hz).sqrt()
    }
}

fn angle(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

fn perpendicular(x: &Vec3) -> Vec3 {
    let a = if x.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    x.cross(&a).normalize()
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Geometric antipodal sampler.
///
/// Each trial draws a contact `p₁` and an approach angle from its own RNG
/// stream, then takes the partner `p₂` (within `max_width`) minimising the
/// worst of the two friction-cone angles and the normal-opposition angle.
/// Trials whose best partner exceeds `atan(mu)` yield nothing. Survivors are
/// de-duplicated on a 5 mm / 10° lattice, first trial wins.
pub fn sample_antipodal_grasps(
    object: &LabeledPointCloud,
    gripper: &GripperModel,
    n_samples: usize,
    mu: f64,
    seed: u64,
) -> Result<Vec<Grasp>, GraspError> {
    let normals = object.normals.as_ref().ok_or(GraspError::NoNormals)?;
    if n_samples == 0 {
        return Err(GraspError::InvalidArgument("n_samples must be at least 1".into()));
    }
    if !(mu > 0.0) {
        return Err(GraspError::InvalidArgument("friction coefficient must be positive".into()));
    }
    gripper.validate()?;
    let pts = &object.points;
    if pts.len() < 2 {
        return Ok(Vec::new());
    }
    let cone = mu.atan();
    let centroid = object.centroid();
    let grid = PointGrid::new(pts, 8);

    let candidates: Vec<Option<Grasp>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let i1 = rng.gen_range(0..pts.len());
            let theta = rng.gen_range(0.0..2.0 * PI);
            let (p1, n1) = (pts[i1], normals[i1]);
            let mut best: Option<(f64, f64, usize)> = None;
            for j in grid.within(pts, &p1, gripper.max_width) {
                if j == i1 {
                    continue;
                }
                let d = pts[j] - p1;
                let len = d.norm();
                if len < 1e-9 {
                    continue;
                }
                let u = d / len;
                let n2 = normals[j];
                let c1 = angle(&u, &(-n1));
                let c2 = angle(&u, &n2);
                let opp = angle(&(-n1), &n2);
                let score = c1.max(c2).max(opp);
                if best.map_or(true, |b| score < b.0) {
                    best = Some((score, c1.max(c2), j));
                }
            }
            let (score, cone_angle, j) = best?;
            if score > cone {
                return None;
            }
            let p2 = pts[j];
            let x = (p2 - p1).normalize();
            let a = perpendicular(&x);
            let b = x.cross(&a);
            let origin = 0.5 * (p1 + p2);
            let mut z = theta.cos() * a + theta.sin() * b;
            if z.dot(&(centroid - origin)) < 0.0 {
                z = -z;
            }
            let y = z.cross(&x);
            let rot = Quat::from_matrix(&Matrix3::from_columns(&[x, y, z]));
            Some(Grasp {
                pose: Pose::new(rot, origin),
                width: ((p2 - p1).norm() + 2.0 * gripper.safety_clearance).min(gripper.max_width),
                quality: (1.0 - cone_angle / cone).clamp(0.0, 1.0),
                safe: false,
            })
        })
        .collect();

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for g in candidates.into_iter().flatten() {
        let t = g.pose.translation / 0.005;
        let r = g.pose.rotation.to_rotation_vector() / 10f64.to_radians();
        let key = [t.x, t.y, t.z, r.x, r.y, r.z].map(|v| v.round() as i64);
        if seen.insert(key) {
            out.push(g);
        }
    }
    Ok(out)
}

/// Drops grasps whose swept volume contains any hand point; survivors keep
/// their order and are marked safe.
pub fn filter_unsafe(
    grasps: &[Grasp],
    hand: &LabeledPointCloud,
    gripper: &GripperModel,
) -> Result<Vec<Grasp>, GraspError> {
    if hand.is_empty() {
        return Err(GraspError::EmptyHandCloud);
    }
    let grid = PointGrid::new(&hand.points, 8);
    let keep: Vec<bool> = grasps
        .par_iter()
        .map(|g| {
            let vol = SweptVolume::of(g, gripper);
            let center = g.pose.transform_point(&vol.center());
            !grid
                .within(&hand.points, &center, vol.circumradius() + 1e-9)
                .into_iter()
                .any(|i| vol.contains(&g.pose.inverse_transform_point(&hand.points[i])))
        })
        .collect();
    Ok(grasps
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(g, _)| Grasp { safe: true, ..*g })
        .collect())
}

/// Re-expresses a grasp through a fixed frame offset: `offset ∘ pose`.
pub fn align_to_scene(grasp: &Grasp, offset: &Pose) -> Grasp {
    Grasp {
        pose: offset.compose(&grasp.pose),
        ..*grasp
    }
}

/// Grasp pose retreated by `standoff` meters along its approach axis.
pub fn pre_grasp_pose(grasp: &Grasp, standoff: f64) -> Pose {
    debug_assert!(standoff > 0.0);
    Pose {
        rotation: grasp.pose.rotation,
        translation: grasp.pose.translation - standoff * grasp.pose.z_axis(),
    }
}

/// Greedy farthest-first ordering by approach direction, seeded with the
/// best-quality grasp. Ties resolve to the earlier index.
pub fn order_by_diversity(grasps: &[Grasp]) -> Vec<usize> {
    if grasps.is_empty() {
        return Vec::new();
    }
    let mut first = 0;
    for (i, g) in grasps.iter().enumerate() {
        if g.quality > grasps[first].quality {
            first = i;
        }
    }
    let mut order = vec![first];
    let mut min_sep: Vec<f64> = grasps
        .iter()
        .map(|g| angle(&g.pose.z_axis(), &grasps[first].pose.z_axis()))
        .collect();
    min_sep[first] = -1.0;
    while order.len() < grasps.len() {
        let mut pick = None;
        for (i, &s) in min_sep.iter().enumerate() {
            if s < 0.0 {
                continue;
            }
            if pick.map_or(true, |p: usize| s > min_sep[p]) {
                pick = Some(i);
            }
        }
        let Some(p) = pick else { break };
        order.push(p);
        min_sep[p] = -1.0;
        let zp = grasps[p].pose.z_axis();
        for (i, g) in grasps.iter().enumerate() {
            if min_sep[i] >= 0.0 {
                min_sep[i] = min_sep[i].min(angle(&g.pose.z_axis(), &zp));
            }
        }
    }
    order
}

const TABLE_HEADER: &str = "qw\tqx\tqy\tqz\ttx\tty\ttz\twidth\tquality\tsafe";

/// Tab-separated grasp table, one row per grasp.
pub fn format_grasp_table(grasps: &[Grasp]) -> String {
    let mut s = String::from(TABLE_HEADER);
    s.push('\n');
    for g in grasps {
        for v in g.pose.to_array() {
            let _ = write!(s, "{v}\t");
        }
        let _ = writeln!(s, "{}\t{}\t{}", g.width, g.quality, g.safe as u8);
    }
    s
}

pub fn parse_grasp_table(text: &str) -> Result<Vec<Grasp>, GraspError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TABLE_HEADER => {}
        _ => {
            return Err(GraspError::Parse {
                line: 1,
                msg: "missing or unexpected header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| GraspError::Parse { line: i + 1, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(format!("expected 10 columns, found {}", cols.len())));
        }
        let mut v = [0.0f64; 9];
        for k in 0..9 {
            v[k] = cols[k].trim().parse().map_err(|_| err(format!("bad number '{}'", cols[k])))?;
        }
        let safe = match cols[9].trim() {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("safe flag must be 0 or 1, got '{other}'"))),
        };
        let pose = Pose::from_array(&[v[0], v[1], v[2], v[3], v[4], v[5], v[6]])
            .map_err(|e| err(e.to_string()))?;
        out.push(Grasp {
            pose,
            width: v[7],
            quality: v[8],
            safe,
        });
    }
    Ok(out)
}

pub fn write_grasp_table(path: &Path, grasps: &[Grasp]) -> Result<(), GraspError> {
    std::fs::write(path, format_grasp_table(grasps))?;
    Ok(())
}

pub fn read_grasp_table(path: &Path) -> Result<Vec<Grasp>, GraspError> {
    parse_grasp_table(&std::fs::read_to_string(path)?)
}
