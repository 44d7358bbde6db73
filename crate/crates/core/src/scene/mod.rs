//! Labeled Gaussian scenes: ingestion, procedural construction and point
//! cloud extraction.

mod grid;
mod ply;
mod synthetic;

pub use grid::PointGrid;
pub use ply::{load_scene, save_scene, SH_C0};
pub use synthetic::{
    build_synthetic_scene, BackgroundSpec, Capsule, HandSpec, ObjectShape, SyntheticSceneSpec,
};

use crate::geometry::{Quat, Vec3};
use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("malformed splat file: {0}")]
    MalformedSplatFile(String),
    #[error("label sidecar has {labels} entries for {gaussians} gaussians")]
    LabelLengthMismatch { labels: usize, gaussians: usize },
    #[error("invalid label byte {0}")]
    InvalidLabel(u8),
    #[error("invalid synthetic scene spec: {0}")]
    InvalidSpec(String),
    #[error("no gaussian matches label {0:?}")]
    EmptySelection(Label),
    #[error("need at least {needed} points, cloud has {have}")]
    TooFewPoints { needed: usize, have: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Hand = 1,
    Object = 2,
}

impl Label {
    pub fn to_byte(self) -> u8 {
        self as u8
    }

    pub fn from_byte(b: u8) -> Result<Label, SceneError> {
        match b {
            0 => Ok(Label::Background),
            1 => Ok(Label::Hand),
            2 => Ok(Label::Object),
            other => Err(SceneError::InvalidLabel(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    /// log of per-axis standard deviation, meters
    pub log_scale: Vec3,
    pub rotation: Quat,
    pub opacity: f64,
    /// degree-0 color in [0,1]
    pub color: [f64; 3],
    pub label: Label,
}

impl Gaussian {
    /// World-frame covariance `R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_matrix();
        let s2 = self.log_scale.map(|l| (2.0 * l).exp());
        r * Matrix3::from_diagonal(&s2) * r.transpose()
    }

    pub fn max_std(&self) -> f64 {
        self.log_scale.max().exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub up_axis: Vec3,
    pub table_height: Option<f64>,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        GaussianScene {
            gaussians,
            up_axis: Vec3::z(),
            table_height: None,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.gaussians.iter().filter(|g| g.label == label).count()
    }

    /// Height of `p` along the scene's up axis.
    pub fn height_of(&self, p: &Vec3) -> f64 {
        p.dot(&self.up_axis.normalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub label: Label,
}

impl LabeledPointCloud {
    pub fn new(points: Vec<Vec3>, label: Label) -> Self {
        LabeledPointCloud {
            points,
            normals: None,
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        if self.points.is_empty() {
            return Vec3::zeros();
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        sum / self.points.len() as f64
    }

    /// Smallest distance from `q` to any point (brute force).
    pub fn min_distance(&self, q: &Vec3) -> f64 {
        self.points
            .iter()
            .map(|p| (p - q).norm_squared())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}

/// Means of the Gaussians carrying `label` with opacity at least `opacity_min`.
pub fn extract_point_cloud(
    scene: &GaussianScene,
    label: Label,
    opacity_min: f64,
) -> Result<LabeledPointCloud, SceneError> {
    if !(0.0..=1.0).contains(&opacity_min) {
        return Err(SceneError::InvalidArgument(format!(
            "opacity_min {opacity_min} outside [0, 1]"
        )));
    }
    let points: Vec<Vec3> = scene
        .gaussians
        .iter()
        .filter(|g| g.label == label && g.opacity >= opacity_min)
        .map(|g| g.mean)
        .collect();
    if points.is_empty() {
        return Err(SceneError::EmptySelection(label));
    }
    Ok(LabeledPointCloud::new(points, label))
}

/// PCA normals from the `k` nearest neighbors (the point itself included),
/// flipped to face away from the cloud centroid.
pub fn estimate_normals(
    cloud: &LabeledPointCloud,
    k: usize,
) -> Result<LabeledPointCloud, SceneError> {
    let k_eff = k.max(3);
    if cloud.points.len() < k_eff {
        return Err(SceneError::TooFewPoints {
            needed: k_eff,
            have: cloud.points.len(),
        });
    }
    let pts = &cloud.points;
    let grid = PointGrid::new(pts, 8);
    let centroid = cloud.centroid();
    let normals = pts
        .iter()
        .map(|p| {
            let nbrs = grid.knn(pts, p, k_eff);
            let mean = nbrs.iter().fold(Vec3::zeros(), |a, (i, _)| a + pts[*i]) / nbrs.len() as f64;
            let mut cov = Matrix3::zeros();
            for (i, _) in &nbrs {
                let d = pts[*i] - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let (mut imin, mut vmin) = (0, f64::INFINITY);
            for j in 0..3 {
                if eig.eigenvalues[j] < vmin {
                    vmin = eig.eigenvalues[j];
                    imin = j;
                }
            }
            let mut n: Vec3 = eig.eigenvectors.column(imin).into_owned().normalize();
            if n.dot(&(p - centroid)) < 0.0 {
                n = -n;
            }
            n
        })
        .collect();
    Ok(LabeledPointCloud {
        points: cloud.points.clone(),
        normals: Some(normals),
        label: cloud.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_at(mean: Vec3, label: Label, opacity: f64) -> Gaussian {
        Gaussian {
            mean,
            log_scale: Vec3::repeat((0.01f64).ln()),
            rotation: Quat::IDENTITY,
            opacity,
            color: [0.5; 3],
            label,
        }
    }

    #[test]
    fn extract_by_label() {
        let mut gs = Vec::new();
        for i in 0..10 {
            gs.push(gaussian_at(Vec3::new(i as f64, 0.0, 0.0), Label::Object, 0.9));
        }
        for i in 0..5 {
            gs.push(gaussian_at(Vec3::new(0.0, i as f64, 0.0), Label::Hand, 0.9));
        }
        let scene = GaussianScene::new(gs);
        let obj = extract_point_cloud(&scene, Label::Object, 0.0).unwrap();
        assert_eq!(obj.len(), 10);
        assert!(obj.normals.is_none());
        assert!(obj
            .points
            .iter()
            .all(|p| scene.gaussians.iter().any(|g| g.mean == *p)));
        assert!(matches!(
            extract_point_cloud(&scene, Label::Object, 1.01),
            Err(SceneError::InvalidArgument(_))
        ));
        assert!(matches!(
            extract_point_cloud(&scene, Label::Background, 0.0),
            Err(SceneError::EmptySelection(Label::Background))
        ));
    }

    #[test]
    fn extract_respects_opacity_threshold() {
        let scene = GaussianScene::new(vec![
            gaussian_at(Vec3::new(0.0, 0.0, 0.0), Label::Object, 0.2),
            gaussian_at(Vec3::new(1.0, 0.0, 0.0), Label::Object, 0.8),
            gaussian_at(Vec3::new(2.0, 0.0, 0.0), Label::Object, 0.8),
        ]);
        let c = extract_point_cloud(&scene, Label::Object, 0.5).unwrap();
        assert_eq!(c.points, vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)]);
    }

    #[test]
    fn planar_normals_are_vertical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..400)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0))
            .collect();
        let cloud = estimate_normals(&LabeledPointCloud::new(pts, Label::Object), 8).unwrap();
        for n in cloud.normals.unwrap() {
            assert!((n.norm() - 1.0).abs() < 1e-6);
            assert!(n.z.abs() > 1.0 - 1e-9, "{n:?}");
        }
    }

    #[test]
    fn too_few_points() {
        let cloud = LabeledPointCloud::new(vec![Vec3::zeros(), Vec3::x()], Label::Object);
        assert!(matches!(
            estimate_normals(&cloud, 3),
            Err(SceneError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn sphere_normals_point_outward() {
        // density 1e3 / m² on the unit sphere
        let n = (4.0 * std::f64::consts::PI * 1e3) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| loop {
                let v = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let l = v.norm();
                if l > 1e-3 && l <= 1.0 {
                    break v / l;
                }
            })
            .collect();
        let cloud = estimate_normals(&LabeledPointCloud::new(pts.clone(), Label::Object), 10).unwrap();
        let normals = cloud.normals.unwrap();
        let good = pts
            .iter()
            .zip(&normals)
            .filter(|(p, n)| {
                assert!((n.norm() - 1.0).abs() < 1e-6);
                n.dot(p).clamp(-1.0, 1.0).acos() < 10f64.to_radians()
            })
            .count();
        assert!(good as f64 >= 0.95 * n as f64, "{good}/{n}");
    }
}
