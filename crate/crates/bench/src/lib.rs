//! Shared fixtures for the criterion benches.

use splatover::demo::{generate_episode, object_centroid, sample_start_poses, StartSamplerConfig, TrajectoryConfig};
use splatover::geometry::look_at;
use splatover::grasp::{filter_unsafe, sample_antipodal_grasps, Grasp, GripperModel};
use splatover::policy::Sample;
use splatover::render::RenderConfig;
use splatover::scene::{build_synthetic_scene, estimate_normals, extract_point_cloud, SyntheticSceneSpec};
use splatover::{CameraIntrinsics, GaussianScene, Label, LabeledPointCloud, Pose, Vec3};

pub struct Fixture {
    pub scene: GaussianScene,
    pub cam: CameraIntrinsics,
    pub render: RenderConfig,
    /// looking at the object from 45 cm
    pub view: Pose,
    pub object: LabeledPointCloud,
    pub hand: LabeledPointCloud,
    pub gripper: GripperModel,
    pub grasps: Vec<Grasp>,
}

impl Fixture {
    /// Default synthetic scene at the default camera.
    pub fn new() -> Self {
        let scene = build_synthetic_scene(&SyntheticSceneSpec::default(), 7).expect("scene");
        let centroid = object_centroid(&scene).expect("object");
        let eye = centroid + Vec3::new(0.25, -0.3, 0.25);
        let view = Pose::new(look_at(&eye, &centroid, &scene.up_axis).expect("view"), eye);
        let object = estimate_normals(&extract_point_cloud(&scene, Label::Object, 0.0).unwrap(), 10).unwrap();
        let hand = extract_point_cloud(&scene, Label::Hand, 0.0).unwrap();
        let gripper = GripperModel::default();
        let grasps = sample_antipodal_grasps(&object, &gripper, 500, 0.4, 7).expect("grasps");
        Fixture {
            scene,
            cam: CameraIntrinsics::default(),
            render: RenderConfig::default(),
            view,
            object,
            hand,
            gripper,
            grasps,
        }
    }

    /// Training samples from one demonstration toward the first safe grasp.
    pub fn samples(&self) -> Vec<Sample> {
        let safe = filter_unsafe(&self.grasps, &self.hand, &self.gripper).expect("filter");
        let g = safe.first().expect("a safe grasp");
        let starts = sample_start_poses(g, &self.scene, &self.hand, &StartSamplerConfig::default(), 3).expect("starts");
        let tc = TrajectoryConfig::default();
        starts
            .iter()
            .find_map(|s| generate_episode(&self.scene, "bench", &self.cam, &self.render, g, s, &tc).ok())
            .expect("an episode")
            .steps
            .iter()
            .map(Sample::from_step)
            .collect()
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
