//! Procedural desk-scale scenes: one object primitive held by a capsule-bundle
//! hand above a checkered table plane.

use super::{Gaussian, GaussianScene, Label, SceneError};
use crate::geometry::{Quat, Vec3};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectShape {
    /// full edge lengths along world x, y, z
    Box { size: [f64; 3] },
    /// axis along world z
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Capsule {
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandSpec {
    pub capsules: Vec<Capsule>,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundSpec {
    pub enabled: bool,
    /// table plane height along +z, meters
    pub height: f64,
    pub half_extent: f64,
    /// Gaussians per m²
    pub density: f64,
    /// checker square size, meters
    pub checker: f64,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec {
            enabled: true,
            height: 0.0,
            half_extent: 0.6,
            density: 2500.0,
            checker: 0.1,
            color_a: [0.82, 0.78, 0.70],
            color_b: [0.35, 0.38, 0.45],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub object: ObjectShape,
    pub object_center: [f64; 3],
    pub object_color: [f64; 3],
    pub hand: HandSpec,
    pub background: BackgroundSpec,
    /// object and hand Gaussians per m² of surface
    pub density: f64,
    /// tangent std-dev as a multiple of the mean sample spacing
    pub scale_factor: f64,
    pub opacity_range: [f64; 2],
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            object: ObjectShape::Box {
                size: [0.06, 0.06, 0.12],
            },
            object_center: [0.0, 0.0, 0.30],
            object_color: [0.85, 0.25, 0.15],
            hand: HandSpec::holding_from_below([0.0, 0.0, 0.24], 0.06),
            background: BackgroundSpec::default(),
            density: 4.0e4,
            scale_factor: 0.7,
            opacity_range: [0.85, 0.98],
        }
    }
}

impl HandSpec {
    /// Palm under an object whose bottom face is centered at `bottom`, four
    /// fingers up the −x face, thumb up the +x face and a forearm.
    pub fn holding_from_below(bottom: [f64; 3], object_width: f64) -> Self {
        let [bx, by, bz] = bottom;
        let half = 0.5 * object_width;
        let mut capsules = Vec::new();
        for dx in [-0.022, 0.0, 0.022] {
            capsules.push(Capsule {
                a: [bx + dx, by - 0.04, bz - 0.015],
                b: [bx + dx, by + 0.04, bz - 0.015],
                radius: 0.013,
            });
        }
        for dy in [-0.024, -0.008, 0.008, 0.024] {
            capsules.push(Capsule {
                a: [bx - half - 0.01, by + dy, bz - 0.012],
                b: [bx - half - 0.009, by + dy, bz + 0.032],
                radius: 0.0075,
            });
        }
        capsules.push(Capsule {
            a: [bx + half + 0.012, by, bz - 0.012],
            b: [bx + half + 0.011, by + 0.004, bz + 0.026],
            radius: 0.009,
        });
        capsules.push(Capsule {
            a: [bx - 0.005, by, bz - 0.03],
            b: [bx - 0.06, by - 0.01, bz - 0.2],
            radius: 0.028,
        });
        HandSpec {
            capsules,
            color: [0.88, 0.68, 0.55],
        }
    }

    /// A closed shell of capsules surrounding a box of `size` at `center`.
    pub fn enclosing_box(center: [f64; 3], size: [f64; 3]) -> Self {
        let mut capsules = Vec::new();
        let r = 0.012;
        let hx = 0.5 * size[0] + r + 0.004;
        let hy = 0.5 * size[1] + r + 0.004;
        let hz = 0.5 * size[2] + r + 0.004;
        let [cx, cy, cz] = center;
        let steps = 8;
        for i in 0..=steps {
            let z = cz - hz + 2.0 * hz * i as f64 / steps as f64;
            for (a, b) in [
                ([-hx, -hy], [hx, -hy]),
                ([hx, -hy], [hx, hy]),
                ([hx, hy], [-hx, hy]),
                ([-hx, hy], [-hx, -hy]),
            ] {
                capsules.push(Capsule {
                    a: [cx + a[0], cy + a[1], z],
                    b: [cx + b[0], cy + b[1], z],
                    radius: r,
                });
            }
        }
        for z in [cz - hz, cz + hz] {
            for j in 0..=steps {
                let y = cy - hy + 2.0 * hy * j as f64 / steps as f64;
                capsules.push(Capsule {
                    a: [cx - hx, y, z],
                    b: [cx + hx, y, z],
                    radius: r,
                });
            }
        }
        HandSpec {
            capsules,
            color: [0.88, 0.68, 0.55],
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidSpec(m.to_string()));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        match &self.object {
            ObjectShape::Box { size } if !size.iter().all(|&s| pos(s)) => {
                return bad("box dimensions must be positive")
            }
            ObjectShape::Cylinder { radius, height } if !(pos(*radius) && pos(*height)) => {
                return bad("cylinder dimensions must be positive")
            }
            ObjectShape::Sphere { radius } if !pos(*radius) => {
                return bad("sphere radius must be positive")
            }
            _ => {}
        }
        if !pos(self.density) {
            return bad("density must be positive");
        }
        if !pos(self.scale_factor) {
            return bad("scale_factor must be positive");
        }
        let [o0, o1] = self.opacity_range;
        if !(o0 > 0.0 && o0 <= o1 && o1 <= 1.0) {
            return bad("opacity_range must satisfy 0 < lo <= hi <= 1");
        }
        for c in &self.hand.capsules {
            if !pos(c.radius) {
                return bad("capsule radius must be positive");
            }
        }
        let bg = &self.background;
        if bg.enabled && !(pos(bg.density) && pos(bg.half_extent) && pos(bg.checker)) {
            return bad("background density, extent and checker must be positive");
        }
        let colors = [self.object_color, self.hand.color, bg.color_a, bg.color_b];
        if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("colors must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Rotation whose third column is `n`.
fn frame_from_normal(n: &Vec3) -> Quat {
    let a = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = a.cross(n).normalize();
    let t2 = n.cross(&t1);
    Quat::from_matrix(&Matrix3::from_columns(&[t1, t2, *n]))
}

fn light_dir() -> Vec3 {
    Vec3::new(0.3, -0.4, 0.87).normalize()
}

struct Builder {
    rng: ChaCha8Rng,
    out: Vec<Gaussian>,
    opacity: [f64; 2],
    scale_factor: f64,
}

impl Builder {
    fn push(&mut self, p: Vec3, n: Vec3, density: f64, base: [f64; 3], label: Label, flat: bool) {
        let spacing = 1.0 / density.sqrt();
        let st = self.scale_factor * spacing;
        let sn = st * if flat { 0.05 } else { 0.1 };
        let shade = if flat {
            1.0
        } else {
            0.55 + 0.45 * n.dot(&light_dir()).max(0.0)
        };
        let mut color = [0.0; 3];
        for (k, c) in color.iter_mut().enumerate() {
            let jitter = self.rng.gen_range(-0.03..0.03);
            *c = (base[k] * shade + jitter).clamp(0.0, 1.0);
        }
        let opacity = if self.opacity[0] < self.opacity[1] {
            self.rng.gen_range(self.opacity[0]..self.opacity[1])
        } else {
            self.opacity[0]
        };
        self.out.push(Gaussian {
            mean: p,
            log_scale: Vec3::new(st.ln(), st.ln(), sn.ln()),
            rotation: frame_from_normal(&n),
            opacity,
            color,
            label,
        });
    }

    fn count(area: f64, density: f64) -> usize {
        (area * density).round() as usize
    }

    fn unit_vector(&mut self) -> Vec3 {
        loop {
            let v = Vec3::new(
                self.rng.gen_range(-1.0..1.0),
                self.rng.gen_range(-1.0..1.0),
                self.rng.gen_range(-1.0..1.0),
            );
            let l = v.norm();
            if l > 1e-6 && l <= 1.0 {
                return v / l;
            }
        }
    }

    fn box_surface(&mut self, c: Vec3, size: [f64; 3], density: f64, color: [f64; 3], label: Label) {
        let h = Vec3::new(size[0], size[1], size[2]) * 0.5;
        for axis in 0..3 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let area = size[u] * size[v];
            for sign in [-1.0, 1.0] {
                let mut n = Vec3::zeros();
                n[axis] = sign;
                for _ in 0..Self::count(area, density) {
                    let mut p = c;
                    p[axis] += sign * h[axis];
                    p[u] += self.rng.gen_range(-h[u]..h[u]);
                    p[v] += self.rng.gen_range(-h[v]..h[v]);
                    self.push(p, n, density, color, label, false);
                }
            }
        }
    }

    fn cylinder_surface(&mut self, c: Vec3, r: f64, height: f64, density: f64, color: [f64; 3], label: Label) {
        let side = 2.0 * PI * r * height;
        for _ in 0..Self::count(side, density) {
            let th = self.rng.gen_range(0.0..2.0 * PI);
            let z = self.rng.gen_range(-0.5 * height..0.5 * height);
            let n = Vec3::new(th.cos(), th.sin(), 0.0);
            self.push(c + r * n + Vec3::new(0.0, 0.0, z), n, density, color, label, false);
        }
        for sign in [-1.0, 1.0] {
            for _ in 0..Self::count(PI * r * r, density) {
                let rr = r * self.rng.gen_range(0.0f64..1.0).sqrt();
                let th = self.rng.gen_range(0.0..2.0 * PI);
                let p = c + Vec3::new(rr * th.cos(), rr * th.sin(), sign * 0.5 * height);
                self.push(p, Vec3::new(0.0, 0.0, sign), density, color, label, false);
            }
        }
    }

    fn sphere_surface(&mut self, c: Vec3, r: f64, density: f64, color: [f64; 3], label: Label) {
        for _ in 0..Self::count(4.0 * PI * r * r, density) {
            let n = self.unit_vector();
            self.push(c + r * n, n, density, color, label, false);
        }
    }

    fn capsule_surface(&mut self, cap: &Capsule, density: f64, color: [f64; 3], label: Label) {
        let a = Vec3::from(cap.a);
        let b = Vec3::from(cap.b);
        let r = cap.radius;
        let axis = b - a;
        let len = axis.norm();
        let dir = if len > 1e-12 { axis / len } else { Vec3::z() };
        let side = 2.0 * PI * r * len;
        let caps = 4.0 * PI * r * r;
        let total = Self::count(side + caps, density);
        let t1 = if dir.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() }
            .cross(&dir)
            .normalize();
        let t2 = dir.cross(&t1);
        for _ in 0..total {
            let pick = self.rng.gen_range(0.0..side + caps);
            if pick < side {
                let th = self.rng.gen_range(0.0..2.0 * PI);
                let s = self.rng.gen_range(0.0..1.0);
                let n = th.cos() * t1 + th.sin() * t2;
                self.push(a + s * axis + r * n, n, density, color, label, false);
            } else {
                let n = self.unit_vector();
                let base = if n.dot(&dir) >= 0.0 { b } else { a };
                self.push(base + r * n, n, density, color, label, false);
            }
        }
    }

    fn table(&mut self, bg: &BackgroundSpec) {
        let e = bg.half_extent;
        let n = Vec3::z();
        for _ in 0..Self::count(4.0 * e * e, bg.density) {
            let x = self.rng.gen_range(-e..e);
            let y = self.rng.gen_range(-e..e);
            let cell = (x / bg.checker).floor() as i64 + (y / bg.checker).floor() as i64;
            let color = if cell.rem_euclid(2) == 0 {
                bg.color_a
            } else {
                bg.color_b
            };
            self.push(Vec3::new(x, y, bg.height), n, bg.density, color, Label::Background, true);
        }
    }
}

/// Deterministic per `(spec, seed)`; the scene's up axis is world `+z`.
pub fn build_synthetic_scene(spec: &SyntheticSceneSpec, seed: u64) -> Result<GaussianScene, SceneError> {
    spec.validate()?;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::new(),
        opacity: spec.opacity_range,
        scale_factor: spec.scale_factor,
    };
    let c = Vec3::from(spec.object_center);
    match &spec.object {
        ObjectShape::Box { size } => b.box_surface(c, *size, spec.density, spec.object_color, Label::Object),
        ObjectShape::Cylinder { radius, height } => {
            b.cylinder_surface(c, *radius, *height, spec.density, spec.object_color, Label::Object)
        }
        ObjectShape::Sphere { radius } => {
            b.sphere_surface(c, *radius, spec.density, spec.object_color, Label::Object)
        }
    }
    for cap in &spec.hand.capsules {
        b.capsule_surface(cap, spec.density, spec.hand.color, Label::Hand);
    }
    if spec.background.enabled {
        b.table(&spec.background);
    }
    let mut scene = GaussianScene::new(b.out);
    scene.up_axis = Vec3::z();
    scene.table_height = spec.background.enabled.then_some(spec.background.height);
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSceneSpec::default();
        let a = build_synthetic_scene(&spec, 7).unwrap();
        let b = build_synthetic_scene(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = build_synthetic_scene(&spec, 8).unwrap();
        assert_ne!(a, c);
        assert!(a.count(Label::Object) > 0 && a.count(Label::Hand) > 0 && a.count(Label::Background) > 0);
    }

    #[test]
    fn zero_density_rejected() {
        let spec = SyntheticSceneSpec {
            density: 0.0,
            ..Default::default()
        };
        assert!(matches!(build_synthetic_scene(&spec, 1), Err(SceneError::InvalidSpec(_))));
        let spec = SyntheticSceneSpec {
            object: ObjectShape::Box { size: [0.06, -0.1, 0.1] },
            ..Default::default()
        };
        assert!(matches!(build_synthetic_scene(&spec, 1), Err(SceneError::InvalidSpec(_))));
    }

    #[test]
    fn sphere_means_on_shell() {
        let r = 0.05;
        let spec = SyntheticSceneSpec {
            object: ObjectShape::Sphere { radius: r },
            ..Default::default()
        };
        let scene = build_synthetic_scene(&spec, 3).unwrap();
        let c = Vec3::from(spec.object_center);
        for g in scene.gaussians.iter().filter(|g| g.label == Label::Object) {
            let d = (g.mean - c).norm();
            assert!((d - r).abs() <= 3.0 * g.max_std(), "{d}");
        }
    }

    #[test]
    fn gaussians_satisfy_invariants() {
        let scene = build_synthetic_scene(&SyntheticSceneSpec::default(), 2).unwrap();
        for g in &scene.gaussians {
            assert!((0.0..=1.0).contains(&g.opacity));
            assert!((g.rotation.norm() - 1.0).abs() < 1e-9);
            for s in g.log_scale.iter() {
                let s = s.exp();
                assert!(s > 1e-6 && s < 10.0);
            }
        }
    }

    #[test]
    fn box_count_matches_area_times_density() {
        let scene = build_synthetic_scene(&SyntheticSceneSpec::default(), 7).unwrap();
        // 2 * (0.06*0.06 + 0.06*0.12 + 0.06*0.12) m² * 4e4 / m²
        assert_eq!(scene.count(Label::Object), 1440);
    }
}
