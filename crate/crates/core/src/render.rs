//! Camera rays, ray sampling and two-field composite volume rendering.
//!
//! Quadrature: for sample `i` with width `δ_i = t_{i+1} - t_i` (the last one
//! reaching `t_far`), `α_i = 1 - exp(-(σS + σD) δ_i)` and the emitted color is
//! the density-weighted mix of the static color (scaled by `1 - ρ`) and the
//! dynamic color. Either field can terminate the ray and occlude the other.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::Vec3;

/// Guard on the summed density for the color mix and the ratio `w`.
pub const DENSITY_EPS: f64 = 1e-9;
/// Floor added to every coarse weight before inverse-CDF sampling.
pub const PDF_FLOOR: f64 = 1e-5;

/// Pinhole camera. Right-handed, looking down -z, image y pointing down.
/// `pose` is the 3×4 camera-to-world matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub pose: [f64; 12],
}

impl Camera {
    pub fn with_identity_pose(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose: [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    /// Camera at `eye` looking at `target`, world up `+y`.
    pub fn look_at(eye: Vec3, target: Vec3, fov_y: f64, width: u32, height: u32) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&Vec3::y());
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::z());
        }
        let right = right.normalize();
        let up = right.cross(&forward);
        let back = -forward;
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Camera {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            pose: [
                right.x, up.x, back.x, eye.x, //
                right.y, up.y, back.y, eye.y, //
                right.z, up.z, back.z, eye.z,
            ],
        }
    }

    pub fn rotation_column(&self, c: usize) -> Vec3 {
        Vec3::new(self.pose[c], self.pose[4 + c], self.pose[8 + c])
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.pose[3], self.pose[7], self.pose[11])
    }

    pub fn translate(&mut self, by: Vec3) {
        self.pose[3] += by.x;
        self.pose[7] += by.y;
        self.pose[11] += by.z;
    }

    pub fn validate(&self) -> Result<()> {
        let cols = [0, 1, 2].map(|c| self.rotation_column(c));
        for a in 0..3 {
            for b in 0..3 {
                let expect = if a == b { 1.0 } else { 0.0 };
                if (cols[a].dot(&cols[b]) - expect).abs() > 1e-9 {
                    return Err(Error::Config("camera rotation is not orthonormal".into()));
                }
            }
        }
        let intrinsics_ok = self.fx > 0.0
            && self.fy > 0.0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if !intrinsics_ok {
            return Err(Error::Config(format!(
                "bad intrinsics fx={} fy={} cx={} cy={} for {}x{}",
                self.fx, self.fy, self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// `o + t d` restricted to `[t_near, t_far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }

    pub fn length(&self) -> f64 {
        self.t_far - self.t_near
    }

    /// Restricts the ray to the part inside `bbox`. `None` when it misses.
    pub fn clipped_to(&self, bbox: &Aabb) -> Option<Ray> {
        let (a, b) = bbox.intersect(&self.origin, &self.dir)?;
        let t_near = a.max(self.t_near);
        let t_far = b.min(self.t_far);
        (t_far > t_near + 1e-9).then_some(Ray { t_near, t_far, ..*self })
    }
}

/// Ray through continuous image coordinates `(px, py)`; pixel `(i, j)` has its
/// center at `(i + 0.5, j + 0.5)`.
pub fn generate_ray(camera: &Camera, px: f64, py: f64, t_near: f64, t_far: f64) -> Result<Ray> {
    let in_bounds = (0.0..=camera.width as f64).contains(&px) && (0.0..=camera.height as f64).contains(&py);
    if !in_bounds {
        return Err(Error::PixelOutOfBounds {
            px,
            py,
            width: camera.width,
            height: camera.height,
        });
    }
    let local = Vec3::new((px - camera.cx) / camera.fx, -(py - camera.cy) / camera.fy, -1.0);
    let dir = (camera.rotation_column(0) * local.x
        + camera.rotation_column(1) * local.y
        + camera.rotation_column(2) * local.z)
        .normalize();
    Ok(Ray {
        origin: camera.position(),
        dir,
        t_near,
        t_far,
    })
}

pub fn pixel_ray(camera: &Camera, i: u32, j: u32, t_near: f64, t_far: f64) -> Result<Ray> {
    generate_ray(camera, i as f64 + 0.5, j as f64 + 0.5, t_near, t_far)
}

/// Deterministic per-ray generator derived from `(seed, stream)`.
pub fn ray_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn stratified_from(t_near: f64, t_far: f64, n: usize, mut jitter: impl FnMut() -> f64) -> Vec<f64> {
    assert!(n >= 1, "need at least one sample");
    let step = (t_far - t_near) / n as f64;
    (0..n)
        .map(|i| {
            let u: f64 = jitter();
            // keep each draw inside its half-open stratum
            let t = t_near + (i as f64 + u) * step;
            t.min(t_near + (i as f64 + 1.0) * step - step * 1e-12)
        })
        .collect()
}

/// One uniform draw in each of `n` equal strata of `[t_near, t_far]`.
pub fn stratified_samples<R: Rng + ?Sized>(ray: &Ray, n: usize, rng: &mut R) -> Vec<f64> {
    stratified_from(ray.t_near, ray.t_far, n, || rng.gen::<f64>())
}

/// Stratum midpoints: the deterministic variant of [`stratified_samples`].
pub fn midpoint_samples(ray: &Ray, n: usize) -> Vec<f64> {
    stratified_from(ray.t_near, ray.t_far, n, || 0.5)
}

/// Inverse-CDF draws from the piecewise-constant density over the coarse
/// intervals `[t_i, t_i + δ_i]`, proportional to `weight_total + PDF_FLOOR`.
/// Falls back to stratified sampling when every coarse weight is zero.
pub fn importance_samples<R: Rng + ?Sized>(
    ray: &Ray,
    coarse: &[SampleRecord],
    n_fine: usize,
    rng: &mut R,
) -> Vec<f64> {
    let total: f64 = coarse.iter().map(|s| s.weight_total).sum();
    if coarse.is_empty() || total <= 0.0 {
        return stratified_samples(ray, n_fine, rng);
    }
    let mut cdf = Vec::with_capacity(coarse.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for s in coarse {
        acc += s.weight_total + PDF_FLOOR;
        cdf.push(acc);
    }
    let mut out = Vec::with_capacity(n_fine);
    let mut bin = 0usize;
    for j in 0..n_fine {
        // stratified u keeps the output sorted
        let u = (j as f64 + rng.gen::<f64>()) / n_fine as f64 * acc;
        while bin + 1 < coarse.len() && cdf[bin + 1] <= u {
            bin += 1;
        }
        let mass = cdf[bin + 1] - cdf[bin];
        let frac = ((u - cdf[bin]) / mass).clamp(0.0, 1.0);
        let s = &coarse[bin];
        out.push(s.t + frac * s.delta);
    }
    out
}

/// Sorted union of two sorted sample lists with exact duplicates dropped.
pub fn merge_samples(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    out.sort_by(|x, y| x.total_cmp(y));
    out.dedup();
    out
}

/// Coarse pass over `n_coarse` samples (jittered or midpoint), then the final
/// render over the sorted union with `n_fine` importance samples. The coarse
/// pass only places samples; gradients flow through the final render.
pub fn render_hierarchical<S: RadianceSource + ?Sized, R: Rng + ?Sized>(
    source: &S,
    ray: &Ray,
    tau: f64,
    n_coarse: usize,
    n_fine: usize,
    jitter: bool,
    rng: &mut R,
) -> Result<RenderOutput> {
    let coarse_t = if jitter {
        stratified_samples(ray, n_coarse, rng)
    } else {
        midpoint_samples(ray, n_coarse)
    };
    if n_fine == 0 {
        return render_composite(source, ray, tau, &coarse_t);
    }
    let coarse = render_composite(source, ray, tau, &coarse_t)?;
    let fine = importance_samples(ray, &coarse.samples, n_fine, rng);
    render_composite(source, ray, tau, &merge_samples(&coarse_t, &fine))
}

/// What a scene representation reports at a point for the composite renderer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSample {
    pub sigma_s: f64,
    pub color_s: Vec3,
    pub sigma_d: f64,
    pub color_d: Vec3,
    pub rho: f64,
}

impl PointSample {
    pub const EMPTY: PointSample = PointSample {
        sigma_s: 0.0,
        color_s: Vec3::new(0.0, 0.0, 0.0),
        sigma_d: 0.0,
        color_d: Vec3::new(0.0, 0.0, 0.0),
        rho: 0.0,
    };
}

/// Anything that can be queried by [`render_composite`]: the trainable model
/// or an analytic ground-truth scene.
pub trait RadianceSource: Sync {
    fn sample(&self, x: &Vec3, dir: &Vec3, tau: f64) -> PointSample;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub t: f64,
    pub delta: f64,
    pub sigma_s: f64,
    pub sigma_d: f64,
    pub color_s: Vec3,
    pub color_d: Vec3,
    pub rho: f64,
    /// Dynamic share of the local density, `σD / (σS + σD)`; 0 when both vanish.
    pub w: f64,
    /// Transmittance before this sample.
    pub transmittance: f64,
    pub weight_total: f64,
    pub weight_static: f64,
    pub weight_dynamic: f64,
}

impl SampleRecord {
    pub fn sigma(&self) -> f64 {
        self.sigma_s + self.sigma_d
    }

    pub fn alpha(&self) -> f64 {
        1.0 - (-self.sigma() * self.delta).exp()
    }

    /// Density-weighted color mix with the shadow ratio applied.
    pub fn mixed_color(&self) -> Vec3 {
        let sigma = self.sigma();
        if sigma > DENSITY_EPS {
            (self.color_s * ((1.0 - self.rho) * self.sigma_s) + self.color_d * self.sigma_d) / sigma
        } else {
            Vec3::zeros()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: Vec3,
    /// Static field alone: dynamic density and shadow ratio forced to zero.
    pub static_color: Vec3,
    /// Dynamic field alone, composited over a white background.
    pub dynamic_color: Vec3,
    pub dynamic_alpha: f64,
    pub depth: f64,
    pub final_transmittance: f64,
    pub t_near: f64,
    pub t_far: f64,
    pub samples: Vec<SampleRecord>,
}

impl RenderOutput {
    /// A ray that never enters the scene.
    pub fn empty(t_near: f64, t_far: f64) -> Self {
        RenderOutput {
            color: Vec3::zeros(),
            static_color: Vec3::zeros(),
            dynamic_color: Vec3::repeat(1.0),
            dynamic_alpha: 0.0,
            depth: 0.0,
            final_transmittance: 1.0,
            t_near,
            t_far,
            samples: Vec::new(),
        }
    }

    pub fn opacity(&self) -> f64 {
        1.0 - self.final_transmittance
    }

    /// Static-weight-averaged shadow ratio along the ray.
    pub fn shadow_ratio(&self) -> f64 {
        let (num, den) = self
            .samples
            .iter()
            .fold((0.0, 0.0), |(n, d), s| (n + s.weight_static * s.rho, d + s.weight_static));
        if den > 1e-12 {
            num / den
        } else {
            0.0
        }
    }
}

/// Composite rendering of `ray` at time `tau` over the given sample positions.
pub fn render_composite<S: RadianceSource + ?Sized>(
    source: &S,
    ray: &Ray,
    tau: f64,
    t_values: &[f64],
) -> Result<RenderOutput> {
    for (i, pair) in t_values.windows(2).enumerate() {
        if !(pair[1] > pair[0]) {
            return Err(Error::NonMonotonicSamples {
                index: i + 1,
                prev: pair[0],
                next: pair[1],
            });
        }
    }
    let points: Vec<PointSample> = t_values
        .iter()
        .map(|&t| source.sample(&ray.at(t), &ray.dir, tau))
        .collect();
    Ok(composite(ray, t_values, &points))
}

/// Quadrature over already-evaluated points.
pub fn composite(ray: &Ray, t_values: &[f64], points: &[PointSample]) -> RenderOutput {
    let n = t_values.len();
    let mut out = RenderOutput::empty(ray.t_near, ray.t_far);
    out.dynamic_color = Vec3::zeros();
    out.samples.reserve(n);
    let mut trans = 1.0f64;
    let mut trans_s = 1.0f64;
    let mut trans_d = 1.0f64;
    for (i, (&t, p)) in t_values.iter().zip(points).enumerate() {
        let delta = if i + 1 < n { t_values[i + 1] - t } else { (ray.t_far - t).max(0.0) };
        let sigma = p.sigma_s + p.sigma_d;
        let alpha = 1.0 - (-sigma * delta).exp();
        let weight = trans * alpha;
        let (share_s, share_d) = if sigma > DENSITY_EPS {
            (p.sigma_s / sigma, p.sigma_d / sigma)
        } else {
            (0.0, 0.0)
        };
        let rec = SampleRecord {
            t,
            delta,
            sigma_s: p.sigma_s,
            sigma_d: p.sigma_d,
            color_s: p.color_s,
            color_d: p.color_d,
            rho: p.rho,
            w: share_d,
            transmittance: trans,
            weight_total: weight,
            weight_static: weight * share_s,
            weight_dynamic: weight * share_d,
        };
        out.color += rec.mixed_color() * weight;
        out.dynamic_alpha += rec.weight_dynamic;
        out.depth += weight * t;

        let alpha_s = 1.0 - (-p.sigma_s * delta).exp();
        out.static_color += p.color_s * (trans_s * alpha_s);
        trans_s *= 1.0 - alpha_s;
        let alpha_d = 1.0 - (-p.sigma_d * delta).exp();
        out.dynamic_color += p.color_d * (trans_d * alpha_d);
        trans_d *= 1.0 - alpha_d;

        trans *= 1.0 - alpha;
        out.samples.push(rec);
    }
    out.dynamic_color += Vec3::repeat(trans_d);
    out.final_transmittance = trans;
    out
}

/// Gradient of a scalar loss with respect to one sample's field outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleGrad {
    pub sigma_s: f64,
    pub sigma_d: f64,
    pub color_s: Vec3,
    pub color_d: Vec3,
    pub rho: f64,
}

impl SampleGrad {
    pub fn is_zero(&self) -> bool {
        self.sigma_s == 0.0
            && self.sigma_d == 0.0
            && self.rho == 0.0
            && self.color_s == Vec3::zeros()
            && self.color_d == Vec3::zeros()
    }
}

/// Backpropagates `d_color = ∂L/∂color` through the composite quadrature.
/// Sample positions are treated as constants.
pub fn composite_backward(out: &RenderOutput, d_color: &Vec3) -> Vec<SampleGrad> {
    let n = out.samples.len();
    let mut grads = vec![SampleGrad::default(); n];
    // radiance emitted strictly behind sample k
    let mut behind = 0.0f64;
    for k in (0..n).rev() {
        let s = &out.samples[k];
        let sigma = s.sigma();
        let m = s.mixed_color();
        let g_m = d_color.dot(&m);
        let trans_next = s.transmittance * (-sigma * s.delta).exp();
        let d_optical = trans_next * g_m - behind;
        let g = &mut grads[k];
        g.sigma_s = s.delta * d_optical;
        g.sigma_d = s.delta * d_optical;
        if sigma > DENSITY_EPS {
            let w = s.weight_total;
            let inv = 1.0 / sigma;
            g.sigma_s += w * inv * (d_color.dot(&s.color_s) * (1.0 - s.rho) - g_m);
            g.sigma_d += w * inv * (d_color.dot(&s.color_d) - g_m);
            g.color_s = d_color * (w * (1.0 - s.rho) * s.sigma_s * inv);
            g.color_d = d_color * (w * s.sigma_d * inv);
            g.rho = -w * s.sigma_s * inv * d_color.dot(&s.color_s);
        }
        behind += s.weight_total * g_m;
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Uniform(PointSample);

    impl RadianceSource for Uniform {
        fn sample(&self, _x: &Vec3, _d: &Vec3, _tau: f64) -> PointSample {
            self.0
        }
    }

    /// Density and color vary smoothly with depth along +z.
    struct Smooth;

    impl RadianceSource for Smooth {
        fn sample(&self, x: &Vec3, _d: &Vec3, _tau: f64) -> PointSample {
            let z = x.z;
            PointSample {
                sigma_s: 1.0 + z,
                color_s: Vec3::new(z, 1.0 - z, 0.5),
                sigma_d: 0.5 * z * z,
                color_d: Vec3::new(0.2, 0.3, z),
                rho: 0.0,
            }
        }
    }

    fn z_ray() -> Ray {
        Ray { origin: Vec3::zeros(), dir: Vec3::z(), t_near: 0.0, t_far: 1.0 }
    }

    #[test]
    fn principal_point_looks_down_minus_z() {
        let cam = Camera::with_identity_pose(50.0, 50.0, 32.0, 32.0, 64, 64);
        let r = generate_ray(&cam, 32.0, 32.0, 0.0, 1.0).unwrap();
        assert!((r.dir - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn off_axis_pinhole_direction() {
        let cam = Camera::with_identity_pose(50.0, 50.0, 32.0, 32.0, 128, 64);
        let r = generate_ray(&cam, 82.0, 32.0, 0.0, 1.0).unwrap();
        let expect = Vec3::new(1.0, 0.0, -1.0).normalize();
        assert!((r.dir - expect).norm() < 1e-15);
    }

    #[test]
    fn translation_moves_origin_only() {
        let cam = Camera::with_identity_pose(40.0, 40.0, 16.0, 16.0, 32, 32);
        let mut moved = cam.clone();
        moved.translate(Vec3::new(5.0, 0.0, 0.0));
        let a = generate_ray(&cam, 3.5, 20.5, 0.0, 1.0).unwrap();
        let b = generate_ray(&moved, 3.5, 20.5, 0.0, 1.0).unwrap();
        assert_eq!(a.dir, b.dir);
        assert_eq!(b.origin - a.origin, Vec3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn out_of_bounds_pixel_is_rejected() {
        let cam = Camera::with_identity_pose(40.0, 40.0, 16.0, 16.0, 32, 32);
        assert!(matches!(
            generate_ray(&cam, 33.0, 1.0, 0.0, 1.0),
            Err(Error::PixelOutOfBounds { .. })
        ));
    }

    #[test]
    fn look_at_pose_is_orthonormal() {
        let cam = Camera::look_at(Vec3::new(2.0, 3.0, -1.0), Vec3::zeros(), 0.8, 64, 48);
        cam.validate().unwrap();
        let r = generate_ray(&cam, cam.cx, cam.cy, 0.0, 1.0).unwrap();
        assert!((r.dir - (-cam.position()).normalize()).norm() < 1e-12);
    }

    #[test]
    fn midpoints_and_strata() {
        let t = midpoint_samples(&z_ray(), 4);
        assert_eq!(t, vec![0.125, 0.375, 0.625, 0.875]);
        let mut rng = ray_rng(9, 1);
        let t = stratified_samples(&z_ray(), 16, &mut rng);
        for (i, v) in t.iter().enumerate() {
            assert!(*v >= i as f64 / 16.0 && *v < (i + 1) as f64 / 16.0);
        }
        assert!(t.windows(2).all(|p| p[1] > p[0]));
        let again = stratified_samples(&z_ray(), 16, &mut ray_rng(9, 1));
        assert_eq!(t, again);
    }

    fn records_with_weights(weights: &[f64]) -> Vec<SampleRecord> {
        let n = weights.len();
        weights
            .iter()
            .enumerate()
            .map(|(i, &w)| SampleRecord {
                t: i as f64 / n as f64,
                delta: 1.0 / n as f64,
                sigma_s: 0.0,
                sigma_d: 0.0,
                color_s: Vec3::zeros(),
                color_d: Vec3::zeros(),
                rho: 0.0,
                w: 0.0,
                transmittance: 1.0,
                weight_total: w,
                weight_static: w,
                weight_dynamic: 0.0,
            })
            .collect()
    }

    #[test]
    fn point_mass_histogram_confines_fine_samples() {
        let coarse = records_with_weights(&[0.0, 0.0, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut rng = ray_rng(4, 0);
        let fine = importance_samples(&z_ray(), &coarse, 64, &mut rng);
        assert_eq!(fine.len(), 64);
        assert!(fine.iter().all(|&t| (0.25..=0.375).contains(&t)), "{fine:?}");
        assert!(fine.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn uniform_histogram_gives_uniform_fine_samples() {
        let coarse = records_with_weights(&[0.1; 16]);
        let mut rng = ray_rng(5, 0);
        let mut all = Vec::new();
        for _ in 0..(10_000 / 50) {
            all.extend(importance_samples(&z_ray(), &coarse, 50, &mut rng));
        }
        all.sort_by(f64::total_cmp);
        let n = all.len() as f64;
        let ks = all
            .iter()
            .enumerate()
            .map(|(i, &t)| ((i as f64 + 1.0) / n - t).abs().max((t - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.1, "KS statistic {ks}");
    }

    #[test]
    fn zero_weights_fall_back_to_stratified() {
        let coarse = records_with_weights(&[0.0; 8]);
        let fine = importance_samples(&z_ray(), &coarse, 8, &mut ray_rng(6, 0));
        let strat = stratified_samples(&z_ray(), 8, &mut ray_rng(6, 0));
        assert_eq!(fine, strat);
    }

    #[test]
    fn empty_scene_shows_white_dynamic_background() {
        let out = render_composite(&Uniform(PointSample::EMPTY), &z_ray(), 0.0, &midpoint_samples(&z_ray(), 16)).unwrap();
        assert_eq!(out.color, Vec3::zeros());
        assert_eq!(out.dynamic_alpha, 0.0);
        assert_eq!(out.final_transmittance, 1.0);
        assert_eq!(out.dynamic_color, Vec3::repeat(1.0));
        assert!(out.samples.iter().all(|s| s.w == 0.0));
    }

    #[test]
    fn non_monotonic_samples_are_rejected() {
        let r = render_composite(&Uniform(PointSample::EMPTY), &z_ray(), 0.0, &[0.1, 0.3, 0.3]);
        assert!(matches!(r, Err(Error::NonMonotonicSamples { index: 2, .. })));
    }

    #[test]
    fn homogeneous_medium_matches_closed_form() {
        let medium = PointSample { sigma_s: 2.0, color_s: Vec3::new(1.0, 0.0, 0.0), ..PointSample::EMPTY };
        let t = midpoint_samples(&z_ray(), 256);
        let out = render_composite(&Uniform(medium), &z_ray(), 0.0, &t).unwrap();
        let exact = 1.0 - (-2.0f64).exp();
        assert!((out.color.x - exact).abs() < 5e-3);
        assert_eq!(out.color, out.static_color);

        let shaded = PointSample { rho: 0.5, ..medium };
        let out2 = render_composite(&Uniform(shaded), &z_ray(), 0.0, &t).unwrap();
        assert!((out2.color.x - 0.5 * exact).abs() < 5e-3);
        assert!((out2.opacity() - out.opacity()).abs() < 1e-15);
    }

    #[test]
    fn record_invariants_hold() {
        let t = midpoint_samples(&z_ray(), 64);
        let out = render_composite(&Smooth, &z_ray(), 0.0, &t).unwrap();
        let mut prev = 1.0;
        let mut sum = 0.0;
        for s in &out.samples {
            assert!(s.transmittance <= prev);
            prev = s.transmittance;
            assert!((s.weight_total - s.weight_static - s.weight_dynamic).abs() < 1e-9);
            sum += s.weight_total;
        }
        assert!(sum <= 1.0 + 1e-6);
        let alpha: f64 = out.samples.iter().map(|s| s.weight_dynamic).sum();
        assert!((alpha - out.dynamic_alpha).abs() < 1e-9);
        // additive decomposition with ρ = 0
        let split: Vec3 = out
            .samples
            .iter()
            .map(|s| s.color_s * s.weight_static + s.color_d * s.weight_dynamic)
            .sum();
        assert!((split - out.color).amax() < 1e-9);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let t = midpoint_samples(&z_ray(), 16);
        let mut pts: Vec<PointSample> = t.iter().map(|&tt| Smooth.sample(&Vec3::new(0.0, 0.0, tt), &Vec3::z(), 0.0)).collect();
        for (i, p) in pts.iter_mut().enumerate() {
            p.rho = 0.05 * i as f64;
        }
        let up = Vec3::new(0.3, -0.7, 1.1);
        let loss = |pts: &[PointSample]| composite(&z_ray(), &t, pts).color.dot(&up);
        let grads = composite_backward(&composite(&z_ray(), &t, &pts), &up);
        let h = 1e-6;
        for k in 0..pts.len() {
            let num = |f: &dyn Fn(&mut PointSample, f64)| {
                let mut p = pts.clone();
                f(&mut p[k], h);
                let a = loss(&p);
                let mut p = pts.clone();
                f(&mut p[k], -h);
                (a - loss(&p)) / (2.0 * h)
            };
            let checks = [
                (grads[k].sigma_s, num(&|p, e| p.sigma_s += e)),
                (grads[k].sigma_d, num(&|p, e| p.sigma_d += e)),
                (grads[k].rho, num(&|p, e| p.rho += e)),
                (grads[k].color_s.y, num(&|p, e| p.color_s.y += e)),
                (grads[k].color_d.z, num(&|p, e| p.color_d.z += e)),
            ];
            for (a, n) in checks {
                assert!((a - n).abs() < 1e-7 + 1e-5 * n.abs(), "sample {k}: {a} vs {n}");
            }
        }
    }
}
