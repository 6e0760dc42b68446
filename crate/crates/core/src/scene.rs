//! Procedural scenes with analytic ground truth.
//!
//! Primitives are density blobs: constant density inside a sphere or box,
//! smooth-stepped to zero across a thin shell just inside the nominal
//! surface. Dynamic primitives follow a trajectory in normalized time and a
//! directional light casts hard (or penumbral) shadows from them onto the
//! static content. Ground truth is rendered with the same composite
//! quadrature as the trainable model, so the model class can reproduce it.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Frame, Manifest, ValView};
use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::imageio::{Image, Mask};
use crate::render::{midpoint_samples, pixel_ray, render_composite, Camera, PointSample, RadianceSource, Ray};
use crate::Vec3;

/// Samples per ray used for ground-truth images.
pub const GT_SAMPLES: usize = 256;
/// Fraction of the bbox extent that must stay free on every side.
pub const BBOX_MARGIN: f64 = 0.1;

pub const PRESETS: &[&str] = &["mover", "mover_shadow", "two_movers", "shadow_only"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box; a thin wide box doubles as the ground plane.
    Box { center: Vec3, half: Vec3 },
}

impl Shape {
    /// Distance to the surface, positive inside (exact inside, a lower bound outside).
    pub fn inside_distance(&self, x: &Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => radius - (x - center).norm(),
            Shape::Box { center, half } => {
                let d = x - center;
                (half.x - d.x.abs()).min(half.y - d.y.abs()).min(half.z - d.z.abs())
            }
        }
    }

    pub fn bounds(&self) -> Aabb {
        match self {
            Shape::Sphere { center, radius } => Aabb::new(center - Vec3::repeat(*radius), center + Vec3::repeat(*radius)),
            Shape::Box { center, half } => Aabb::new(center - half, center + half),
        }
    }

    /// Entry and exit distances along `origin + t dir`, clipped to `t >= 0`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        match self {
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let (t0, t1) = (-b - s, -b + s);
                (t1 > 0.0).then(|| (t0.max(0.0), t1))
            }
            Shape::Box { center, half } => Aabb::new(center - half, center + half).intersect(origin, dir),
        }
    }

    fn translated_scaled(&self, offset: Vec3, scale: f64) -> Shape {
        match self {
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: center + offset,
                radius: radius * scale,
            },
            Shape::Box { center, half } => Shape::Box {
                center: center + offset,
                half: half * scale,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: Vec3,
    pub density: f64,
}

impl Primitive {
    pub fn density_at(&self, x: &Vec3, shell: f64) -> f64 {
        let d = self.shape.inside_distance(x);
        if d <= 0.0 {
            0.0
        } else {
            self.density * smoothstep(0.0, shell, d)
        }
    }
}

/// Center offset as a function of normalized time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// `Σ_k c_k τ^k`
    Polynomial { coefficients: Vec<Vec3> },
    /// `center + amplitude · sin(2π frequency τ + phase)`, per axis.
    Sinusoid {
        center: Vec3,
        amplitude: Vec3,
        frequency: f64,
        phase: f64,
    },
}

impl Trajectory {
    pub fn position(&self, tau: f64) -> Vec3 {
        match self {
            Trajectory::Polynomial { coefficients } => coefficients
                .iter()
                .rev()
                .fold(Vec3::zeros(), |acc, c| acc * tau + c),
            Trajectory::Sinusoid {
                center,
                amplitude,
                frequency,
                phase,
            } => center + amplitude * (std::f64::consts::TAU * frequency * tau + phase).sin(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicPrimitive {
    /// Shape at the origin; the trajectory supplies the center.
    pub primitive: Primitive,
    pub trajectory: Trajectory,
    /// Relative size oscillation `1 + wobble · sin(2π τ)`; a stand-in for non-rigid motion.
    #[serde(default)]
    pub wobble: f64,
    /// Invisible primitives carry no density but still cast shadows.
    #[serde(default = "yes")]
    pub visible: bool,
}

fn yes() -> bool {
    true
}

impl DynamicPrimitive {
    pub fn shape_at(&self, tau: f64) -> Shape {
        let scale = 1.0 + self.wobble * (std::f64::consts::TAU * tau).sin();
        self.primitive
            .shape
            .translated_scaled(self.trajectory.position(tau), scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Unit vector pointing towards the light.
    pub direction: Vec3,
    /// Multiplicative radiance reduction inside full shadow.
    pub darkening: f64,
    /// Half-width of the soft edge around sphere occluders; 0 gives hard shadows.
    #[serde(default)]
    pub penumbra: f64,
}

/// Keyframed orbit around `look_at`; angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraOrbit {
    pub azimuth: [f64; 2],
    /// Elevation above the horizontal plane.
    pub altitude: [f64; 2],
    pub radius: f64,
    pub look_at: Vec3,
    pub fov_y: f64,
    pub keyframes: usize,
}

impl CameraOrbit {
    pub fn camera(&self, azimuth: f64, altitude: f64, width: u32, height: u32) -> Camera {
        let offset = Vec3::new(
            altitude.cos() * azimuth.cos(),
            altitude.sin(),
            altitude.cos() * azimuth.sin(),
        ) * self.radius;
        Camera::look_at(self.look_at + offset, self.look_at, self.fov_y, width, height)
    }

    /// Smooth path through randomly drawn keyframes, one camera per frame.
    pub fn path(&self, frames: usize, width: u32, height: u32, seed: u64) -> Vec<Camera> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Vec<(f64, f64)> = (0..self.keyframes.max(1))
            .map(|_| {
                (
                    rng.gen_range(self.azimuth[0]..=self.azimuth[1]),
                    rng.gen_range(self.altitude[0]..=self.altitude[1]),
                )
            })
            .collect();
        (0..frames)
            .map(|f| {
                let u = if frames > 1 {
                    f as f64 / (frames - 1) as f64 * (keys.len() - 1) as f64
                } else {
                    0.0
                };
                let (az, alt) = catmull_rom(&keys, u);
                let az = az.clamp(self.azimuth[0], self.azimuth[1]);
                let alt = alt.clamp(self.altitude[0], self.altitude[1]);
                self.camera(az, alt, width, height)
            })
            .collect()
    }

    /// Held-out poses spread evenly over the azimuth range.
    pub fn validation(&self, count: usize, width: u32, height: u32) -> Vec<Camera> {
        (0..count)
            .map(|i| {
                let az = self.azimuth[0] + (self.azimuth[1] - self.azimuth[0]) * (i as f64 + 0.5) / count as f64;
                let frac = if i % 2 == 0 { 1.0 / 3.0 } else { 2.0 / 3.0 };
                let alt = self.altitude[0] + (self.altitude[1] - self.altitude[0]) * frac;
                self.camera(az, alt, width, height)
            })
            .collect()
    }
}

fn catmull_rom(keys: &[(f64, f64)], u: f64) -> (f64, f64) {
    let n = keys.len();
    if n == 1 {
        return keys[0];
    }
    let i = (u.floor() as usize).min(n - 2);
    let t = u - i as f64;
    let at = |k: isize| keys[k.clamp(0, n as isize - 1) as usize];
    let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
    let blend = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (c - a) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t * t + (3.0 * b - a - 3.0 * c + d) * t * t * t)
    };
    (blend(p0.0, p1.0, p2.0, p3.0), blend(p0.1, p1.1, p2.1, p3.1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub name: String,
    pub bbox: Aabb,
    /// Width of the smooth density shell inside each primitive.
    pub shell: f64,
    pub statics: Vec<Primitive>,
    pub dynamics: Vec<DynamicPrimitive>,
    pub light: Option<Light>,
    pub orbit: CameraOrbit,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    pub val_count: usize,
}

/// Analytic field values at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticSample {
    pub sigma_s: f64,
    pub color_s: Vec3,
    pub sigma_d: f64,
    pub color_d: Vec3,
    /// Radiance multiplier for static content, `1 − darkening` in full shadow.
    pub shadow: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GtMode {
    Full,
    BackgroundOnly,
}

impl SyntheticScene {
    pub fn preset(name: &str) -> Result<Self> {
        let ground = Primitive {
            shape: Shape::Box {
                center: Vec3::new(0.0, -0.65, 0.0),
                half: Vec3::new(0.8, 0.15, 0.8),
            },
            albedo: Vec3::new(0.55, 0.5, 0.42),
            density: 40.0,
        };
        let block = Primitive {
            shape: Shape::Box {
                center: Vec3::new(-0.4, -0.3, -0.4),
                half: Vec3::new(0.2, 0.2, 0.2),
            },
            albedo: Vec3::new(0.7, 0.15, 0.12),
            density: 40.0,
        };
        let ball = Primitive {
            shape: Shape::Sphere {
                center: Vec3::new(0.42, -0.27, -0.35),
                radius: 0.23,
            },
            albedo: Vec3::new(0.12, 0.25, 0.7),
            density: 40.0,
        };
        let mover = DynamicPrimitive {
            primitive: Primitive {
                shape: Shape::Sphere {
                    center: Vec3::zeros(),
                    radius: 0.25,
                },
                albedo: Vec3::new(0.9, 0.75, 0.1),
                density: 40.0,
            },
            trajectory: Trajectory::Polynomial {
                coefficients: vec![
                    Vec3::new(-0.5, -0.25, 0.35),
                    Vec3::new(1.0, 0.0, -0.3),
                    Vec3::new(0.0, 0.0, 0.3),
                ],
            },
            wobble: 0.0,
            visible: true,
        };
        let orbit = CameraOrbit {
            azimuth: [2.0, 2.0 + std::f64::consts::FRAC_PI_4],
            altitude: [1.0, 1.2],
            radius: 3.2,
            look_at: Vec3::new(0.0, -0.5, 0.0),
            fov_y: 45f64.to_radians(),
            keyframes: 10,
        };
        let light = Light {
            direction: Vec3::new(0.45, 1.0, 0.35).normalize(),
            darkening: 0.6,
            penumbra: 0.0,
        };
        let mut scene = SyntheticScene {
            name: name.to_string(),
            bbox: Aabb::cube(1.0),
            shell: 2.0 * 2.0 / 31.0,
            statics: vec![ground, block, ball],
            dynamics: vec![mover.clone()],
            light: None,
            orbit,
            frame_count: 30,
            width: 64,
            height: 64,
            val_count: 10,
        };
        match name {
            "mover" => {}
            "mover_shadow" => {
                // A smaller, faster sphere lit from the side: its shadow sweeps a
                // strip next to the path, so most ground points are seen unshadowed
                // in most frames.
                scene.light = Some(Light {
                    direction: Vec3::new(0.0, 1.0, -0.8).normalize(),
                    ..light
                });
                let mover = &mut scene.dynamics[0];
                mover.primitive.shape = Shape::Sphere {
                    center: Vec3::zeros(),
                    radius: 0.18,
                };
                mover.trajectory = Trajectory::Polynomial {
                    coefficients: vec![
                        Vec3::new(-0.6, -0.32, 0.05),
                        Vec3::new(1.2, 0.0, -0.3),
                        Vec3::new(0.0, 0.0, 0.3),
                    ],
                };
            }
            "two_movers" => {
                scene.light = Some(light);
                scene.dynamics.push(DynamicPrimitive {
                    primitive: Primitive {
                        shape: Shape::Sphere {
                            center: Vec3::zeros(),
                            radius: 0.18,
                        },
                        albedo: Vec3::new(0.2, 0.75, 0.3),
                        density: 40.0,
                    },
                    trajectory: Trajectory::Sinusoid {
                        center: Vec3::new(0.0, -0.1, -0.05),
                        amplitude: Vec3::new(0.0, 0.1, 0.35),
                        frequency: 1.0,
                        phase: 0.0,
                    },
                    wobble: 0.15,
                    visible: true,
                });
            }
            "shadow_only" => {
                scene.light = Some(light);
                scene.dynamics = vec![DynamicPrimitive {
                    primitive: Primitive {
                        shape: Shape::Sphere {
                            center: Vec3::zeros(),
                            radius: 0.3,
                        },
                        albedo: Vec3::zeros(),
                        density: 0.0,
                    },
                    trajectory: Trajectory::Sinusoid {
                        center: Vec3::new(0.0, 0.6, 0.2),
                        amplitude: Vec3::new(0.45, 0.0, 0.0),
                        frequency: 0.5,
                        phase: -std::f64::consts::FRAC_PI_2,
                    },
                    wobble: 0.0,
                    visible: false,
                }];
            }
            _ => {
                return Err(Error::UnknownPreset {
                    name: name.to_string(),
                    known: PRESETS.join(", "),
                })
            }
        }
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let margin = self.bbox.extent() * BBOX_MARGIN;
        let inner = Aabb::new(self.bbox.min + margin, self.bbox.max - margin);
        let fits = |b: Aabb| {
            (0..3).all(|a| b.min[a] >= inner.min[a] - 1e-12 && b.max[a] <= inner.max[a] + 1e-12)
        };
        for (i, p) in self.statics.iter().enumerate() {
            if !fits(p.shape.bounds()) {
                return Err(Error::Config(format!("static primitive {i} violates the bbox margin")));
            }
        }
        for (i, d) in self.dynamics.iter().enumerate() {
            if !d.visible {
                continue;
            }
            for s in 0..=100 {
                if !fits(d.shape_at(s as f64 / 100.0).bounds()) {
                    return Err(Error::Config(format!(
                        "dynamic primitive {i} leaves the bbox margin at tau={}",
                        s as f64 / 100.0
                    )));
                }
            }
        }
        if let Some(l) = &self.light {
            if (l.direction.norm() - 1.0).abs() > 1e-9 || !(0.0..=1.0).contains(&l.darkening) || l.penumbra < 0.0 {
                return Err(Error::Config("light needs a unit direction, darkening in [0,1], penumbra >= 0".into()));
            }
        }
        if self.frame_count == 0 || self.width == 0 || self.height == 0 || self.shell <= 0.0 {
            return Err(Error::Config("scene needs frames, a nonzero resolution and a positive shell".into()));
        }
        Ok(())
    }

    /// Normalized frame times, evenly spaced over [0, 1].
    pub fn times(&self) -> Vec<f64> {
        frame_times(self.frame_count)
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scene serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Radiance multiplier at `x` from dynamic occluders between `x` and the light.
    pub fn shadow_factor(&self, x: &Vec3, tau: f64) -> f64 {
        let Some(light) = &self.light else {
            return 1.0;
        };
        let occlusion = self
            .dynamics
            .iter()
            .map(|d| occlusion(&d.shape_at(tau), x, &light.direction, light.penumbra))
            .fold(0.0, f64::max);
        1.0 - light.darkening * occlusion
    }

    pub fn eval(&self, x: &Vec3, tau: f64) -> AnalyticSample {
        let mut out = AnalyticSample {
            sigma_s: 0.0,
            color_s: Vec3::zeros(),
            sigma_d: 0.0,
            color_d: Vec3::zeros(),
            shadow: 1.0,
        };
        if !self.bbox.contains(x) {
            return out;
        }
        for p in &self.statics {
            let s = p.density_at(x, self.shell);
            out.sigma_s += s;
            out.color_s += p.albedo * s;
        }
        for d in self.dynamics.iter().filter(|d| d.visible) {
            let prim = Primitive {
                shape: d.shape_at(tau),
                ..d.primitive
            };
            let s = prim.density_at(x, self.shell);
            out.sigma_d += s;
            out.color_d += prim.albedo * s;
        }
        if out.sigma_s > 0.0 {
            out.color_s /= out.sigma_s;
            out.shadow = self.shadow_factor(x, tau);
        }
        if out.sigma_d > 0.0 {
            out.color_d /= out.sigma_d;
        }
        out
    }

    /// Pixel ray clipped to the scene box; `None` when it misses.
    pub fn pixel_ray(&self, camera: &Camera, i: u32, j: u32) -> Option<Ray> {
        pixel_ray(camera, i, j, 0.0, f64::INFINITY)
            .expect("pixel inside image")
            .clipped_to(&self.bbox)
    }

    pub fn render(&self, camera: &Camera, tau: f64, mode: GtMode) -> Image {
        let source = GroundTruth { scene: self, mode };
        let pixels = (0..camera.width * camera.height)
            .into_par_iter()
            .map(|p| {
                let Some(ray) = self.pixel_ray(camera, p % camera.width, p / camera.width) else {
                    return Vec3::zeros();
                };
                let t = midpoint_samples(&ray, GT_SAMPLES);
                render_composite(&source, &ray, tau, &t).expect("midpoints are increasing").color
            })
            .collect();
        Image {
            width: camera.width,
            height: camera.height,
            pixels,
        }
    }

    /// Dynamic mask: a visible dynamic primitive is reached before the static
    /// opacity exceeds 0.5. Shadow mask: the first static surface hit is darkened.
    pub fn masks(&self, camera: &Camera, tau: f64) -> (Mask, Mask) {
        let bits: Vec<(bool, bool)> = (0..camera.width * camera.height)
            .into_par_iter()
            .map(|p| {
                let ray = pixel_ray(camera, p % camera.width, p / camera.width, 0.0, f64::INFINITY)
                    .expect("pixel inside image");
                (self.dynamic_hit(&ray, tau), self.shadow_hit(&ray, tau))
            })
            .collect();
        let mut dynamic = Mask::new(camera.width, camera.height);
        let mut shadow = Mask::new(camera.width, camera.height);
        for (k, (d, s)) in bits.into_iter().enumerate() {
            dynamic.data[k] = d;
            shadow.data[k] = s;
        }
        (dynamic, shadow)
    }

    /// Pixels whose first static surface is the primitive at `index`.
    pub fn static_region(&self, camera: &Camera, index: usize) -> Mask {
        let mut mask = Mask::new(camera.width, camera.height);
        for p in 0..camera.width * camera.height {
            let ray = pixel_ray(camera, p % camera.width, p / camera.width, 0.0, f64::INFINITY)
                .expect("pixel inside image");
            mask.data[p as usize] = self.first_static_hit(&ray).is_some_and(|(k, _)| k == index);
        }
        mask
    }

    fn first_static_hit(&self, ray: &Ray) -> Option<(usize, f64)> {
        self.statics
            .iter()
            .enumerate()
            .filter_map(|(k, p)| p.shape.intersect(&ray.origin, &ray.dir).map(|(t0, _)| (k, t0)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    fn dynamic_hit(&self, ray: &Ray, tau: f64) -> bool {
        let hit = self
            .dynamics
            .iter()
            .filter(|d| d.visible)
            .filter_map(|d| d.shape_at(tau).intersect(&ray.origin, &ray.dir).map(|(t0, _)| t0))
            .min_by(f64::total_cmp);
        let Some(t_hit) = hit else {
            return false;
        };
        let Some(clipped) = ray.clipped_to(&self.bbox) else {
            return false;
        };
        let end = t_hit.min(clipped.t_far);
        if end <= clipped.t_near {
            return true;
        }
        let segment = Ray {
            t_near: clipped.t_near,
            t_far: end,
            ..clipped
        };
        let dt = segment.length() / GT_SAMPLES as f64;
        let depth: f64 = midpoint_samples(&segment, GT_SAMPLES)
            .iter()
            .map(|&t| {
                let x = segment.at(t);
                self.statics.iter().map(|p| p.density_at(&x, self.shell)).sum::<f64>() * dt
            })
            .sum();
        1.0 - (-depth).exp() <= 0.5
    }

    fn shadow_hit(&self, ray: &Ray, tau: f64) -> bool {
        self.first_static_hit(ray)
            .is_some_and(|(_, t)| self.shadow_factor(&ray.at(t), tau) < 1.0)
    }
}

/// Evenly spaced normalized times for `n` frames.
pub fn frame_times(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    (0..n).map(|f| f as f64 / (n - 1) as f64).collect()
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Fraction of the light blocked by `shape` for the half-line `x + t l`, `t >= 0`.
fn occlusion(shape: &Shape, x: &Vec3, l: &Vec3, penumbra: f64) -> f64 {
    match shape {
        Shape::Sphere { center, radius } => {
            let v = center - x;
            let along = v.dot(l);
            let dist = if along <= 0.0 { v.norm() } else { (v - l * along).norm() };
            if penumbra > 0.0 {
                1.0 - smoothstep(radius - penumbra, radius + penumbra, dist)
            } else if dist < *radius {
                1.0
            } else {
                0.0
            }
        }
        Shape::Box { .. } => {
            if shape.intersect(x, l).is_some() {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// The analytic scene seen through the renderer's [`RadianceSource`] interface.
pub struct GroundTruth<'a> {
    pub scene: &'a SyntheticScene,
    pub mode: GtMode,
}

impl RadianceSource for GroundTruth<'_> {
    fn sample(&self, x: &Vec3, _dir: &Vec3, tau: f64) -> PointSample {
        let a = self.scene.eval(x, tau);
        match self.mode {
            GtMode::Full => PointSample {
                sigma_s: a.sigma_s,
                color_s: a.color_s,
                sigma_d: a.sigma_d,
                color_d: a.color_d,
                rho: 1.0 - a.shadow,
            },
            GtMode::BackgroundOnly => PointSample {
                sigma_s: a.sigma_s,
                color_s: a.color_s,
                ..PointSample::EMPTY
            },
        }
    }
}

/// Renders every training frame, its masks and the background-only
/// validation views. Images are quantized exactly as they are stored on disk.
pub fn build_dataset(scene: &SyntheticScene, seed: u64) -> Result<Dataset> {
    scene.validate()?;
    let times = scene.times();
    let cameras = scene.orbit.path(scene.frame_count, scene.width, scene.height, seed);
    let frames = cameras
        .into_iter()
        .zip(&times)
        .map(|(camera, &tau)| {
            let image = scene.render(&camera, tau, GtMode::Full).quantized();
            let (dynamic, shadow) = scene.masks(&camera, tau);
            Frame {
                image,
                camera,
                tau,
                mask_dynamic: Some(dynamic),
                mask_shadow: Some(shadow),
            }
        })
        .collect();
    let val = scene
        .orbit
        .validation(scene.val_count, scene.width, scene.height)
        .into_iter()
        .map(|camera| ValView {
            image: scene.render(&camera, 0.0, GtMode::BackgroundOnly).quantized(),
            ground_mask: Some(scene.static_region(&camera, 0)),
            camera,
        })
        .collect();
    Ok(Dataset {
        manifest: Manifest {
            preset: scene.name.clone(),
            seed,
            scene_hash: scene.hash(),
            frame_count: scene.frame_count,
            width: scene.width,
            height: scene.height,
            times,
            bbox: scene.bbox,
            val_count: scene.val_count,
        },
        frames,
        val,
        scene: Some(scene.clone()),
    })
}

pub fn generate_dataset(scene: &SyntheticScene, out_dir: &Path, seed: u64) -> Result<Dataset> {
    let ds = build_dataset(scene, seed)?;
    ds.save(out_dir)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(name: &str) -> SyntheticScene {
        let mut s = SyntheticScene::preset(name).unwrap();
        s.width = 24;
        s.height = 24;
        s.frame_count = 4;
        s.val_count = 2;
        s
    }

    #[test]
    fn presets_validate_and_unknown_is_rejected() {
        for p in PRESETS {
            SyntheticScene::preset(p).unwrap();
        }
        assert!(matches!(SyntheticScene::preset("nope"), Err(Error::UnknownPreset { .. })));
    }

    #[test]
    fn ground_point_lit_and_shadowed() {
        let mut s = SyntheticScene::preset("mover_shadow").unwrap();
        s.dynamics.truncate(0);
        let x = Vec3::new(0.0, -0.65, 0.0);
        let a = s.eval(&x, 0.3);
        assert!(a.sigma_s > 0.0);
        assert_eq!(a.shadow, 1.0);

        // a sphere straight up the light direction blocks it fully
        let l = s.light.unwrap().direction;
        s.dynamics.push(DynamicPrimitive {
            primitive: Primitive {
                shape: Shape::Sphere { center: Vec3::zeros(), radius: 0.1 },
                albedo: Vec3::zeros(),
                density: 40.0,
            },
            trajectory: Trajectory::Polynomial { coefficients: vec![x + l * 0.5] },
            wobble: 0.0,
            visible: true,
        });
        assert!((s.eval(&x, 0.3).shadow - 0.4).abs() < 1e-15);
    }

    #[test]
    fn empty_space_has_no_density() {
        let s = SyntheticScene::preset("two_movers").unwrap();
        let a = s.eval(&Vec3::new(0.0, 0.8, 0.0), 0.5);
        assert_eq!((a.sigma_s, a.sigma_d), (0.0, 0.0));
        assert_eq!(s.eval(&Vec3::new(3.0, 0.0, 0.0), 0.5).sigma_s, 0.0);
    }

    #[test]
    fn static_scene_full_equals_background() {
        let mut s = tiny("mover_shadow");
        s.dynamics.clear();
        let cam = s.orbit.camera(2.3, 1.1, s.width, s.height);
        assert_eq!(s.render(&cam, 0.4, GtMode::Full), s.render(&cam, 0.4, GtMode::BackgroundOnly));
    }

    #[test]
    fn camera_facing_away_sees_black() {
        let s = tiny("mover");
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 6.0), 0.8, 8, 8);
        let img = s.render(&cam, 0.0, GtMode::Full);
        assert!(img.pixels.iter().all(|p| *p == Vec3::zeros()));
    }

    #[test]
    fn opaque_sphere_center_pixel_matches_chord_closed_form() {
        let r = 0.6;
        let sigma = 3.0;
        let shell = 1e-3;
        let s = SyntheticScene {
            name: "probe".into(),
            bbox: Aabb::cube(1.0),
            shell,
            statics: vec![Primitive {
                shape: Shape::Sphere { center: Vec3::zeros(), radius: r },
                albedo: Vec3::new(0.0, 1.0, 0.0),
                density: sigma,
            }],
            dynamics: vec![],
            light: None,
            orbit: SyntheticScene::preset("mover").unwrap().orbit,
            frame_count: 1,
            width: 5,
            height: 5,
            val_count: 0,
        };
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), 0.3, 5, 5);
        let c = s.render(&cam, 0.0, GtMode::Full).get(2, 2);
        // the shell removes roughly `shell` of optical length at each end
        let expect = 1.0 - (-sigma * (2.0 * r - shell)).exp();
        assert!(c.x.abs() < 1e-15 && c.z.abs() < 1e-15);
        assert!((c.y - expect).abs() < 2e-3, "{} vs {}", c.y, expect);
    }

    #[test]
    fn masks_hit_mover_and_leave_lit_ground_empty() {
        let s = tiny("mover");
        let tau = 0.5;
        let center = s.dynamics[0].trajectory.position(tau);
        let cam = Camera::look_at(center + Vec3::new(0.0, 2.5, 0.1), center, 0.5, 9, 9);
        let (dyn_mask, shadow) = s.masks(&cam, tau);
        assert!(dyn_mask.get(4, 4));
        assert_eq!(shadow.count(), 0);

        let ground = Camera::look_at(Vec3::new(0.0, 2.0, 0.0), Vec3::new(0.0, -0.5, -0.6), 0.1, 5, 5);
        let (d, s2) = s.masks(&ground, tau);
        assert_eq!(d.count() + s2.count(), 0);
    }

    // Independent oracle: march the camera ray until it enters static
    // density, then march towards the light looking for dynamic occupancy.
    fn brute_force_shadow(s: &SyntheticScene, ray: &Ray, tau: f64) -> bool {
        let l = s.light.unwrap().direction;
        let step = 1e-3;
        let mut t = 0.0;
        while t < 10.0 {
            let x = ray.at(t);
            if s.statics.iter().any(|p| p.shape.inside_distance(&x) >= 0.0) {
                let mut u = 0.0;
                while u < 4.0 {
                    let y = x + l * u;
                    if s.dynamics.iter().any(|d| d.shape_at(tau).inside_distance(&y) > 0.0) {
                        return true;
                    }
                    u += step;
                }
                return false;
            }
            t += step;
        }
        false
    }

    #[test]
    fn shadow_mask_matches_brute_force_count() {
        let mut s = tiny("mover_shadow");
        s.width = 20;
        s.height = 20;
        let tau = 0.4;
        let cam = s.orbit.camera(2.4, 1.1, s.width, s.height);
        let (_, shadow) = s.masks(&cam, tau);
        let mut brute = 0;
        for p in 0..s.width * s.height {
            let ray = pixel_ray(&cam, p % s.width, p / s.width, 0.0, f64::INFINITY).unwrap();
            brute += brute_force_shadow(&s, &ray, tau) as usize;
        }
        assert!(shadow.count() > 0);
        // marching resolution can flip a pixel sitting exactly on an edge
        assert!((shadow.count() as i64 - brute as i64).abs() <= 1, "{} vs {brute}", shadow.count());
    }

    #[test]
    fn camera_path_stays_in_ranges() {
        let s = SyntheticScene::preset("mover").unwrap();
        let cams = s.orbit.path(30, 16, 16, 3);
        for c in &cams {
            c.validate().unwrap();
            let off = c.position() - s.orbit.look_at;
            assert!((off.norm() - s.orbit.radius).abs() < 1e-9);
            let alt = (off.y / off.norm()).asin();
            assert!((1.0 - 1e-9..=1.2 + 1e-9).contains(&alt));
            let az = off.z.atan2(off.x);
            assert!((2.0 - 1e-9..=2.0 + std::f64::consts::FRAC_PI_4 + 1e-9).contains(&az));
        }
        assert_eq!(cams, s.orbit.path(30, 16, 16, 3));
        assert_ne!(cams, s.orbit.path(30, 16, 16, 4));
    }

    #[test]
    fn dataset_build_is_deterministic() {
        let s = tiny("two_movers");
        let a = build_dataset(&s, 5).unwrap();
        let b = build_dataset(&s, 5).unwrap();
        assert_eq!(a.frames.len(), 4);
        assert_eq!(a.manifest.times, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn background_views_have_no_dynamic_albedo() {
        let s = tiny("mover");
        let cam = s.orbit.validation(1, s.width, s.height).remove(0);
        let tau = 0.5;
        let full = s.render(&cam, tau, GtMode::Full);
        let bg = s.render(&cam, tau, GtMode::BackgroundOnly);
        let (dyn_mask, _) = s.masks(&cam, tau);
        assert!(dyn_mask.count() > 0);
        let yellow = |p: &Vec3| p.x > 0.5 && p.y > 0.4 && p.z < 0.2;
        assert!(full.pixels.iter().any(yellow));
        assert!(!bg.pixels.iter().any(yellow));
    }

    #[test]
    fn trajectories_evaluate() {
        let p = Trajectory::Polynomial {
            coefficients: vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0), Vec3::new(0.0, 0.0, 3.0)],
        };
        assert_eq!(p.position(0.5), Vec3::new(1.0, 1.0, 0.75));
        let s = Trajectory::Sinusoid {
            center: Vec3::zeros(),
            amplitude: Vec3::new(1.0, 0.0, 0.0),
            frequency: 1.0,
            phase: 0.0,
        };
        assert!((s.position(0.25).x - 1.0).abs() < 1e-15);
    }
}
