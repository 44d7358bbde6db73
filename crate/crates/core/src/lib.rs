//! Robot-free handover training pipeline over labeled Gaussian-splat scenes.

pub mod demo;
pub mod geometry;
pub mod grasp;
pub mod pipeline;
pub mod policy;
pub mod render;
pub mod rollout;
pub mod scene;

pub use geometry::{DeltaAction, Pose, Quat, Vec3};
pub use grasp::{Grasp, GripperModel};
pub use pipeline::{PipelineConfig, PipelineError, RunPaths};
pub use render::{CameraIntrinsics, RenderOutput};
pub use scene::{GaussianScene, Label, LabeledPointCloud};
