//! CPU splat rasterizer for hand-eye views.
//!
//! Gaussians are sorted once per frame by camera depth (ties by index) and
//! binned into 16×16 tiles without reordering, so every pixel composites
//! the same global front-to-back sequence whatever the thread schedule.

use crate::geometry::{Pose, Vec3};
use crate::scene::{Gaussian, GaussianScene, Label};
use nalgebra::{Matrix2, Matrix2x3, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

const TILE: usize = 16;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("scene has no gaussians")]
    EmptyScene,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("image i/o: {0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Default for CameraIntrinsics {
    /// 128×128 training camera, roughly 60° field of view.
    fn default() -> Self {
        CameraIntrinsics::square(128, 110.0)
    }
}

impl CameraIntrinsics {
    pub fn square(size: usize, focal: f64) -> Self {
        CameraIntrinsics {
            fx: focal,
            fy: focal,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            width: size,
            height: size,
            near: 0.01,
            far: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(RenderError::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(RenderError::InvalidCamera("need 0 < near < far".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(RenderError::InvalidCamera("image must be at least 16×16".into()));
        }
        Ok(())
    }

    /// Pinhole projection of a camera-frame point; `None` when not in front.
    pub fn project(&self, p: &Vec3) -> Option<[f64; 2]> {
        if p.z <= 0.0 {
            return None;
        }
        Some([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }

    /// Same intrinsics scaled to a different square-ish resolution.
    pub fn scaled(&self, factor: f64) -> Self {
        CameraIntrinsics {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            width: (self.width as f64 * factor).round() as usize,
            height: (self.height as f64 * factor).round() as usize,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub alpha_cap: f64,
    pub min_transmittance: f64,
    /// added to both diagonal entries of the screen covariance, px²
    pub cov2d_floor: f64,
    /// footprint and culling radius in screen standard deviations
    pub cutoff_sigma: f64,
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            alpha_cap: 0.99,
            min_transmittance: 1e-4,
            cov2d_floor: 0.3,
            cutoff_sigma: 3.0,
            background: [0.55, 0.62, 0.70],
        }
    }
}

/// A Gaussian's screen-space footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2d {
    pub mean: [f64; 2],
    pub cov: Matrix2<f64>,
    /// camera-frame z, meters
    pub depth: f64,
}

impl Splat2d {
    pub fn max_std(&self) -> f64 {
        let (a, b, c) = (self.cov[(0, 0)], self.cov[(0, 1)], self.cov[(1, 1)]);
        let mid = 0.5 * (a + c);
        let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (mid + disc).max(0.0).sqrt()
    }
}

/// EWA projection of one Gaussian; `None` when culled.
pub fn project_gaussian(
    g: &Gaussian,
    cam: &CameraIntrinsics,
    cam_pose: &Pose,
    cfg: &RenderConfig,
) -> Option<Splat2d> {
    let world_to_cam = cam_pose.inverse();
    project_with(g, cam, &world_to_cam, &world_to_cam.rotation.to_matrix(), cfg)
}

fn project_with(
    g: &Gaussian,
    cam: &CameraIntrinsics,
    world_to_cam: &Pose,
    w: &Matrix3<f64>,
    cfg: &RenderConfig,
) -> Option<Splat2d> {
    let mc = world_to_cam.transform_point(&g.mean);
    if !(mc.z >= cam.near && mc.z <= cam.far) {
        return None;
    }
    let inv_z = 1.0 / mc.z;
    let mean = [cam.fx * mc.x * inv_z + cam.cx, cam.fy * mc.y * inv_z + cam.cy];
    // Jacobian evaluated with the view ray clamped to 1.3× the half field of
    // view; grazing splats beside the camera otherwise blow up to the whole image
    let lim_x = 1.3 * 0.5 * cam.width as f64 / cam.fx;
    let lim_y = 1.3 * 0.5 * cam.height as f64 / cam.fy;
    let tx = (mc.x * inv_z).clamp(-lim_x, lim_x);
    let ty = (mc.y * inv_z).clamp(-lim_y, lim_y);
    let j = Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * tx * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * ty * inv_z,
    );
    let t = j * w;
    let mut cov = t * g.covariance() * t.transpose();
    // symmetrize against round-off
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    cov[(0, 0)] += cfg.cov2d_floor;
    cov[(1, 1)] += cfg.cov2d_floor;
    let s = Splat2d {
        mean,
        cov,
        depth: mc.z,
    };
    let r = cfg.cutoff_sigma * s.max_std();
    if mean[0] < -r || mean[0] > cam.width as f64 + r || mean[1] < -r || mean[1] > cam.height as f64 + r {
        return None;
    }
    Some(s)
}

/// Rendered hand-eye view. All planes are row-major `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// interleaved RGB in [0,1]
    pub rgb: Vec<f64>,
    pub object_mask: Vec<f64>,
    pub hand_mask: Vec<f64>,
    /// compositing weight of background-labeled Gaussians
    pub background_mask: Vec<f64>,
    /// residual transmittance after compositing
    pub transmittance: Vec<f64>,
    /// expected depth, 0 where nothing was hit
    pub depth: Vec<f64>,
}

impl RenderOutput {
    fn blank(width: usize, height: usize) -> Self {
        let n = width * height;
        RenderOutput {
            width,
            height,
            rgb: vec![0.0; 3 * n],
            object_mask: vec![0.0; n],
            hand_mask: vec![0.0; n],
            background_mask: vec![0.0; n],
            transmittance: vec![1.0; n],
            depth: vec![0.0; n],
        }
    }

    pub fn rgb8(&self) -> Vec<u8> {
        self.rgb.iter().map(|&v| quantize(v)).collect()
    }

    /// Soft mask as linear 8-bit values.
    pub fn mask8(mask: &[f64]) -> Vec<u8> {
        mask.iter().map(|&v| quantize(v)).collect()
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Copy)]
struct Prepared {
    mean: [f64; 2],
    // inverse covariance entries
    ia: f64,
    ib: f64,
    ic: f64,
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    label: Label,
    bbox: [usize; 4],
}

/// Front-to-back alpha compositing of the whole scene.
pub fn render(
    scene: &GaussianScene,
    cam: &CameraIntrinsics,
    cam_pose: &Pose,
    cfg: &RenderConfig,
) -> Result<RenderOutput, RenderError> {
    if scene.is_empty() {
        return Err(RenderError::EmptyScene);
    }
    cam.validate()?;
    let world_to_cam = cam_pose.inverse();
    let w = world_to_cam.rotation.to_matrix();
    let (wd, ht) = (cam.width, cam.height);

    let mut visible: Vec<(usize, Prepared)> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let s = project_with(g, cam, &world_to_cam, &w, cfg)?;
            let det = s.cov.determinant();
            if !(det > 0.0) {
                return None;
            }
            let r = cfg.cutoff_sigma * s.max_std();
            let x0 = (s.mean[0] - r).ceil().max(0.0);
            let x1 = (s.mean[0] + r).floor().min(wd as f64 - 1.0);
            let y0 = (s.mean[1] - r).ceil().max(0.0);
            let y1 = (s.mean[1] + r).floor().min(ht as f64 - 1.0);
            if x0 > x1 || y0 > y1 {
                return None;
            }
            Some((
                i,
                Prepared {
                    mean: s.mean,
                    ia: s.cov[(1, 1)] / det,
                    ib: -s.cov[(0, 1)] / det,
                    ic: s.cov[(0, 0)] / det,
                    opacity: g.opacity,
                    color: g.color,
                    depth: s.depth,
                    label: g.label,
                    bbox: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
                },
            ))
        })
        .collect();
    visible.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));

    let tiles_x = wd.div_ceil(TILE);
    let tiles_y = ht.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, (_, p)) in visible.iter().enumerate() {
        for ty in p.bbox[2] / TILE..=p.bbox[3] / TILE {
            for tx in p.bbox[0] / TILE..=p.bbox[1] / TILE {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let tiles: Vec<(usize, RenderOutput)> = bins
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let (x0, y0) = (tx * TILE, ty * TILE);
            let tw = TILE.min(wd - x0);
            let th = TILE.min(ht - y0);
            let mut out = RenderOutput::blank(tw, th);
            for ly in 0..th {
                for lx in 0..tw {
                    let (px, py) = ((x0 + lx) as f64, (y0 + ly) as f64);
                    let (gx, gy) = (x0 + lx, y0 + ly);
                    let mut tr = 1.0f64;
                    let mut c = [0.0f64; 3];
                    let mut m = [0.0f64; 3];
                    let mut z = 0.0f64;
                    for &k in list {
                        let p = &visible[k as usize].1;
                        if gx < p.bbox[0] || gx > p.bbox[1] || gy < p.bbox[2] || gy > p.bbox[3] {
                            continue;
                        }
                        let dx = px - p.mean[0];
                        let dy = py - p.mean[1];
                        let power = -0.5 * (p.ia * dx * dx + 2.0 * p.ib * dx * dy + p.ic * dy * dy);
                        let alpha = (p.opacity * power.exp()).clamp(0.0, cfg.alpha_cap);
                        let wgt = alpha * tr;
                        for ch in 0..3 {
                            c[ch] += p.color[ch] * wgt;
                        }
                        m[p.label as usize] += wgt;
                        z += p.depth * wgt;
                        tr *= 1.0 - alpha;
                        if tr < cfg.min_transmittance {
                            break;
                        }
                    }
                    let i = ly * tw + lx;
                    for ch in 0..3 {
                        out.rgb[3 * i + ch] = c[ch] + tr * cfg.background[ch];
                    }
                    out.background_mask[i] = m[Label::Background as usize];
                    out.hand_mask[i] = m[Label::Hand as usize];
                    out.object_mask[i] = m[Label::Object as usize];
                    out.transmittance[i] = tr;
                    let hit = 1.0 - tr;
                    out.depth[i] = if hit > 1e-3 { z / hit } else { 0.0 };
                }
            }
            (t, out)
        })
        .collect();

    let mut img = RenderOutput::blank(wd, ht);
    for (t, tile) in tiles {
        let (x0, y0) = ((t % tiles_x) * TILE, (t / tiles_x) * TILE);
        for ly in 0..tile.height {
            for lx in 0..tile.width {
                let s = ly * tile.width + lx;
                let d = (y0 + ly) * wd + x0 + lx;
                img.rgb[3 * d..3 * d + 3].copy_from_slice(&tile.rgb[3 * s..3 * s + 3]);
                img.object_mask[d] = tile.object_mask[s];
                img.hand_mask[d] = tile.hand_mask[s];
                img.background_mask[d] = tile.background_mask[s];
                img.transmittance[d] = tile.transmittance[s];
                img.depth[d] = tile.depth[s];
            }
        }
    }
    Ok(img)
}

/// Object and hand masks thresholded at `mask >= threshold`, stored as 0/255.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMasks {
    pub width: usize,
    pub height: usize,
    pub object: Vec<u8>,
    pub hand: Vec<u8>,
}

pub fn binarize_masks(out: &RenderOutput, threshold: f64) -> Result<BinaryMasks, RenderError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(RenderError::InvalidArgument(format!(
            "mask threshold {threshold} outside (0, 1)"
        )));
    }
    let bin = |m: &[f64]| m.iter().map(|&v| if v >= threshold { 255 } else { 0 }).collect();
    Ok(BinaryMasks {
        width: out.width,
        height: out.height,
        object: bin(&out.object_mask),
        hand: bin(&out.hand_mask),
    })
}

/// Quantized observation as stored in datasets and fed to the policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    /// 0 or 255
    pub object_mask: Vec<u8>,
    /// 0 or 255
    pub hand_mask: Vec<u8>,
}

impl Frame {
    pub fn from_render(out: &RenderOutput, mask_threshold: f64) -> Result<Frame, RenderError> {
        let masks = binarize_masks(out, mask_threshold)?;
        Ok(Frame {
            width: out.width,
            height: out.height,
            rgb: out.rgb8(),
            object_mask: masks.object,
            hand_mask: masks.hand,
        })
    }

    pub fn object_visible(&self) -> bool {
        self.object_mask.iter().any(|&v| v != 0)
    }
}

/// Renders and quantizes in one step with binarization at 0.5.
pub fn render_frame(
    scene: &GaussianScene,
    cam: &CameraIntrinsics,
    cam_pose: &Pose,
    cfg: &RenderConfig,
) -> Result<Frame, RenderError> {
    Frame::from_render(&render(scene, cam, cam_pose, cfg)?, 0.5)
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), RenderError> {
    image::save_buffer(path, rgb, width as u32, height as u32, image::ColorType::Rgb8)?;
    Ok(())
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<(), RenderError> {
    image::save_buffer(path, gray, width as u32, height as u32, image::ColorType::L8)?;
    Ok(())
}

pub fn read_rgb_png(path: &Path) -> Result<(usize, usize, Vec<u8>), RenderError> {
    let img = image::open(path)?.into_rgb8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

pub fn read_gray_png(path: &Path) -> Result<(usize, usize, Vec<u8>), RenderError> {
    let img = image::open(path)?.into_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, Quat};
    use crate::scene::{build_synthetic_scene, BackgroundSpec, HandSpec, ObjectShape, SyntheticSceneSpec};
    use proptest::prelude::*;

    fn iso(mean: Vec3, std: f64, opacity: f64, color: [f64; 3], label: Label) -> Gaussian {
        Gaussian {
            mean,
            log_scale: Vec3::repeat(std.ln()),
            rotation: Quat::IDENTITY,
            opacity,
            color,
            label,
        }
    }

    fn cam128() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 64.0,
            cy: 64.0,
            width: 128,
            height: 128,
            near: 0.01,
            far: 10.0,
        }
    }

    #[test]
    fn on_axis_projection() {
        let cfg = RenderConfig::default();
        let g = iso(Vec3::new(0.0, 0.0, 1.0), 0.01, 1.0, [1.0; 3], Label::Object);
        let s = project_gaussian(&g, &cam128(), &Pose::IDENTITY, &cfg).unwrap();
        assert_eq!(s.mean, [64.0, 64.0]);
        assert!((s.depth - 1.0).abs() < 1e-15);
        // J = diag(fx/z, fy/z) on axis, so cov = (100 * 0.01)² + 0.3
        assert!((s.cov[(0, 0)] - 1.3).abs() < 1e-12);
        assert!((s.cov[(1, 1)] - 1.3).abs() < 1e-12);
        assert!(s.cov[(0, 1)].abs() < 1e-15);
        let behind = iso(Vec3::new(0.0, 0.0, -1.0), 0.01, 1.0, [1.0; 3], Label::Object);
        assert!(project_gaussian(&behind, &cam128(), &Pose::IDENTITY, &cfg).is_none());
        let far_off = iso(Vec3::new(5.0, 0.0, 1.0), 0.01, 1.0, [1.0; 3], Label::Object);
        assert!(project_gaussian(&far_off, &cam128(), &Pose::IDENTITY, &cfg).is_none());
    }

    #[test]
    fn empty_view_shows_background() {
        let cfg = RenderConfig::default();
        let scene = GaussianScene::new(vec![iso(Vec3::new(0.0, 0.0, -1.0), 0.01, 1.0, [1.0; 3], Label::Object)]);
        let out = render(&scene, &cam128(), &Pose::IDENTITY, &cfg).unwrap();
        for px in out.rgb.chunks(3) {
            assert_eq!(px, &cfg.background[..]);
        }
        assert!(out.object_mask.iter().chain(&out.hand_mask).all(|&v| v == 0.0));
        assert!(matches!(
            render(&GaussianScene::new(vec![]), &cam128(), &Pose::IDENTITY, &cfg),
            Err(RenderError::EmptyScene)
        ));
    }

    #[test]
    fn single_opaque_gaussian() {
        let cfg = RenderConfig::default();
        let scene = GaussianScene::new(vec![iso(Vec3::new(0.0, 0.0, 1.0), 0.02, 0.99, [0.2, 0.4, 0.6], Label::Object)]);
        let out = render(&scene, &cam128(), &Pose::IDENTITY, &cfg).unwrap();
        let c = 64 * 128 + 64;
        // alpha = min(0.99 * exp(0), 0.99)
        assert!((out.object_mask[c] - 0.99).abs() < 1e-12);
        assert!(out.object_mask[c] > 0.9);
        assert!(out.hand_mask.iter().all(|&v| v == 0.0));
        assert!((out.depth[c] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_gaussians_on_one_ray() {
        let cfg = RenderConfig::default();
        let red = [1.0, 0.0, 0.0];
        let blue = [0.0, 0.0, 1.0];
        let scene = GaussianScene::new(vec![
            iso(Vec3::new(0.0, 0.0, 2.0), 0.02, 1.0, blue, Label::Object),
            iso(Vec3::new(0.0, 0.0, 1.0), 0.01, 1.0, red, Label::Hand),
        ]);
        let out = render(&scene, &cam128(), &Pose::IDENTITY, &cfg).unwrap();
        let c = 64 * 128 + 64;
        // front: α=0.99, T→0.01; back: α=0.99 → weight 0.0099, T→1e-4
        let t_final: f64 = 0.01 * 0.01;
        let expected = [
            0.99 + t_final * cfg.background[0],
            t_final * cfg.background[1],
            0.0099 + t_final * cfg.background[2],
        ];
        for ch in 0..3 {
            let got = out.rgb[3 * c + ch];
            assert!((got - expected[ch]).abs() <= 0.01 * expected[ch].max(1e-3), "{ch}: {got}");
        }
        assert!((out.hand_mask[c] - 0.99).abs() < 1e-12);
        assert!((out.object_mask[c] - 0.0099).abs() < 1e-12);
    }

    #[test]
    fn binarize_uses_inclusive_threshold() {
        let mut out = RenderOutput::blank(16, 16);
        out.object_mask[3] = 0.5;
        out.object_mask[4] = 0.4999;
        let m = binarize_masks(&out, 0.5).unwrap();
        assert_eq!(m.object[3], 255);
        assert_eq!(m.object[4], 0);
        assert!(m.hand.iter().all(|&v| v == 0));
        assert!(binarize_masks(&out, 1.0).is_err());
    }

    fn point_in_convex(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
        let n = poly.len();
        let mut sign = 0.0;
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            let cr = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
            if cr.abs() < 1e-12 {
                continue;
            }
            if sign == 0.0 {
                sign = cr.signum();
            } else if cr.signum() != sign {
                return false;
            }
        }
        true
    }

    fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        lower
    }

    #[test]
    fn box_mask_matches_analytic_silhouette() {
        let size = [0.06, 0.06, 0.12];
        let center = Vec3::new(0.0, 0.0, 0.3);
        let spec = SyntheticSceneSpec {
            object: ObjectShape::Box { size },
            object_center: center.into(),
            hand: HandSpec { capsules: vec![], color: [0.5; 3] },
            background: BackgroundSpec { enabled: false, ..Default::default() },
            // silhouette grows by roughly one tangent std; keep it sub-pixel
            density: 1.6e5,
            ..Default::default()
        };
        let scene = build_synthetic_scene(&spec, 4).unwrap();
        let cam = CameraIntrinsics::square(256, 220.0);
        let eye = Vec3::new(0.25, -0.2, 0.45);
        let pose = Pose::new(look_at(&eye, &center, &Vec3::z()).unwrap(), eye);
        let out = render(&scene, &cam, &pose, &RenderConfig::default()).unwrap();
        let m = binarize_masks(&out, 0.5).unwrap();
        let mut corners = Vec::new();
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                for sz in [-0.5, 0.5] {
                    let p = center + Vec3::new(sx * size[0], sy * size[1], sz * size[2]);
                    corners.push(cam.project(&pose.inverse_transform_point(&p)).unwrap());
                }
            }
        }
        let hull = convex_hull(corners);
        let (mut inter, mut uni) = (0usize, 0usize);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let a = point_in_convex(&hull, [x as f64, y as f64]);
                let b = m.object[y * cam.width + x] != 0;
                inter += (a && b) as usize;
                uni += (a || b) as usize;
            }
        }
        let iou = inter as f64 / uni as f64;
        let na = (0..cam.width * cam.height).filter(|i| point_in_convex(&hull, [(i % cam.width) as f64, (i / cam.width) as f64])).count();
        let nb = m.object.iter().filter(|v| **v != 0).count();
        assert!(iou >= 0.9, "IoU {iou} hull {na} mask {nb} inter {inter}");
    }

    fn random_scene(seed: u64) -> GaussianScene {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let labels = [Label::Background, Label::Hand, Label::Object];
        let gs = (0..60)
            .map(|i| Gaussian {
                mean: Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(0.3..1.0)),
                log_scale: Vec3::new(
                    rng.gen_range(-5.0..-3.0),
                    rng.gen_range(-5.0..-3.0),
                    rng.gen_range(-6.0..-3.0),
                ),
                rotation: Quat::new(rng.gen(), rng.gen(), rng.gen(), rng.gen()),
                opacity: rng.gen_range(0.1..1.0),
                color: [rng.gen(), rng.gen(), rng.gen()],
                label: labels[i % 3],
            })
            .collect();
        GaussianScene::new(gs)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn weights_conserve_and_masks_bounded(seed in 0u64..1000) {
            let scene = random_scene(seed);
            let cam = CameraIntrinsics::square(32, 30.0);
            let out = render(&scene, &cam, &Pose::IDENTITY, &RenderConfig::default()).unwrap();
            for i in 0..out.width * out.height {
                let total = out.object_mask[i] + out.hand_mask[i] + out.background_mask[i] + out.transmittance[i];
                prop_assert!((total - 1.0).abs() <= 1e-6);
                prop_assert!(out.object_mask[i] + out.hand_mask[i] <= 1.0 + 1e-6);
                prop_assert!(out.rgb[3 * i].is_finite() && out.depth[i].is_finite());
            }
        }

        #[test]
        fn rigid_translation_invariance(seed in 0u64..1000, ox in -2.0..2.0f64, oy in -2.0..2.0f64, oz in -2.0..2.0f64) {
            let scene = random_scene(seed);
            let off = Vec3::new(ox, oy, oz);
            let mut moved = scene.clone();
            for g in &mut moved.gaussians {
                g.mean += off;
            }
            let cam = CameraIntrinsics::square(32, 30.0);
            let pose = Pose::new(Quat::rot_x(0.05), Vec3::new(0.01, 0.0, -0.05));
            let pose2 = Pose::new(pose.rotation, pose.translation + off);
            let cfg = RenderConfig::default();
            let a = render(&scene, &cam, &pose, &cfg).unwrap();
            let b = render(&moved, &cam, &pose2, &cfg).unwrap();
            for (x, y) in a.rgb.iter().zip(&b.rgb) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
            for (x, y) in a.object_mask.iter().zip(&b.object_mask) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn deterministic_output() {
        let scene = random_scene(9);
        let cam = CameraIntrinsics::square(48, 40.0);
        let cfg = RenderConfig::default();
        let a = render(&scene, &cam, &Pose::IDENTITY, &cfg).unwrap();
        let b = render(&scene, &cam, &Pose::IDENTITY, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
