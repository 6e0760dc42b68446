//! Decoupling metrics: background PSNR, dynamic-mask Jaccard and shadow leakage.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::imageio::{Image, Mask};
use crate::model::Model;
use crate::render::{pixel_ray, ray_rng, render_hierarchical, Camera, RadianceSource, RenderOutput};
use crate::Vec3;

pub const PSNR_CAP: f64 = 99.0;
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.1;
pub const DEFAULT_SHADOW_THRESHOLD: f64 = 0.2;

/// `10 log10(1 / MSE)` over all pixels and channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mse = mean_squared_error(a.pixels.iter().zip(&b.pixels));
    Ok(psnr_from_mse(mse))
}

/// PSNR over the pixels selected by `mask`; `None` when the mask is empty.
pub fn psnr_masked(a: &Image, b: &Image, mask: &Mask) -> Result<Option<f64>> {
    if (a.width, a.height) != (b.width, b.height) || (a.width, a.height) != (mask.width, mask.height) {
        return Err(Error::DimensionMismatch("image and mask sizes differ".into()));
    }
    if mask.count() == 0 {
        return Ok(None);
    }
    let pairs = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .zip(&mask.data)
        .filter(|(_, &m)| m)
        .map(|(p, _)| p);
    Ok(Some(psnr_from_mse(mean_squared_error(pairs))))
}

fn mean_squared_error<'a>(pairs: impl Iterator<Item = (&'a Vec3, &'a Vec3)>) -> f64 {
    let (sum, n) = pairs.fold((0.0, 0usize), |(s, n), (x, y)| (s + (x - y).norm_squared(), n + 3));
    sum / n.max(1) as f64
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// `|A ∩ B| / |A ∪ B|`, with two empty masks scoring 1.
pub fn jaccard(a: &Mask, b: &Mask) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch("mask sizes differ".into()));
    }
    let (inter, union) = a
        .data
        .iter()
        .zip(&b.data)
        .fold((0usize, 0usize), |(i, u), (&x, &y)| (i + (x && y) as usize, u + (x || y) as usize));
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn threshold_mask(values: &[f64], width: u32, height: u32, threshold: f64) -> Mask {
    Mask {
        width,
        height,
        data: values.iter().map(|&v| v >= threshold).collect(),
    }
}

/// Sample counts for evaluation renders. Coarse samples sit at stratum
/// midpoints and fine samples use a per-pixel stream, so renders are deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub samples_coarse: usize,
    pub samples_fine: usize,
    pub seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            samples_coarse: 64,
            samples_fine: 64,
            seed: 0,
        }
    }
}

/// Every per-pixel quantity of one render.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedViews {
    pub width: u32,
    pub height: u32,
    pub composite: Image,
    pub static_only: Image,
    pub dynamic_white: Image,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
    /// Static-weighted mean shadow ratio.
    pub rho: Vec<f64>,
    /// Sum of static sample weights in the composite.
    pub static_weight: Vec<f64>,
}

pub fn render_pixel<S: RadianceSource + ?Sized>(
    source: &S,
    bbox: &Aabb,
    camera: &Camera,
    pixel: u32,
    tau: f64,
    settings: &RenderSettings,
) -> RenderOutput {
    let ray = pixel_ray(camera, pixel % camera.width, pixel / camera.width, 0.0, f64::INFINITY)
        .expect("pixel inside image");
    match ray.clipped_to(bbox) {
        Some(r) => {
            let mut rng = ray_rng(settings.seed, pixel as u64);
            render_hierarchical(source, &r, tau, settings.samples_coarse, settings.samples_fine, false, &mut rng)
                .expect("hierarchical samples are increasing")
        }
        None => RenderOutput::empty(0.0, 0.0),
    }
}

pub fn render_views(model: &Model, camera: &Camera, tau: f64, settings: &RenderSettings) -> RenderedViews {
    let bbox = model.bbox();
    let outs: Vec<(Vec3, Vec3, Vec3, f64, f64, f64, f64)> = (0..camera.width * camera.height)
        .into_par_iter()
        .map(|p| {
            let o = render_pixel(model, &bbox, camera, p, tau, settings);
            let static_weight = o.samples.iter().map(|s| s.weight_static).sum();
            (
                o.color,
                o.static_color,
                o.dynamic_color,
                o.dynamic_alpha,
                o.depth,
                o.shadow_ratio(),
                static_weight,
            )
        })
        .collect();
    let image = |f: fn(&(Vec3, Vec3, Vec3, f64, f64, f64, f64)) -> Vec3| Image {
        width: camera.width,
        height: camera.height,
        pixels: outs.iter().map(f).collect(),
    };
    RenderedViews {
        width: camera.width,
        height: camera.height,
        composite: image(|o| o.0),
        static_only: image(|o| o.1),
        dynamic_white: image(|o| o.2),
        alpha: outs.iter().map(|o| o.3).collect(),
        depth: outs.iter().map(|o| o.4).collect(),
        rho: outs.iter().map(|o| o.5).collect(),
        static_weight: outs.iter().map(|o| o.6).collect(),
    }
}

impl RenderedViews {
    pub fn gray(&self, values: &[f64]) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: values.iter().map(|&v| Vec3::repeat(v)).collect(),
        }
    }

    /// Composite, static-only, dynamic-on-white, dynamic alpha and ρ side by side.
    pub fn contact_sheet(&self) -> Image {
        Image::hstack(&[
            self.composite.clone(),
            self.static_only.clone(),
            self.dynamic_white.clone(),
            self.gray(&self.alpha),
            self.gray(&self.rho),
        ])
    }
}

/// Pixels whose dynamic alpha reaches `threshold`.
pub fn extract_dynamic_mask(model: &Model, camera: &Camera, tau: f64, threshold: f64, settings: &RenderSettings) -> Mask {
    let v = render_views(model, camera, tau, settings);
    threshold_mask(&v.alpha, v.width, v.height, threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mask_threshold: f64,
    pub shadow_threshold: f64,
    /// Static weight above which a pixel counts as a static surface for ρ statistics.
    pub surface_weight: f64,
    pub render: RenderSettings,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mask_threshold: DEFAULT_MASK_THRESHOLD,
            shadow_threshold: DEFAULT_SHADOW_THRESHOLD,
            surface_weight: 0.5,
            render: RenderSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub view: usize,
    pub psnr_background: f64,
    pub psnr_ground: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub tau: f64,
    pub jaccard_dynamic: Option<f64>,
    pub jaccard_shadow_combined: Option<f64>,
    pub mean_rho_outside_shadow: Option<f64>,
}

/// Headline metrics are means over views or frames; `None` where ground truth is missing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr_background: Option<f64>,
    pub psnr_ground: Option<f64>,
    pub jaccard_dynamic: Option<f64>,
    pub jaccard_shadow_combined: Option<f64>,
    pub mean_rho_outside_shadow: Option<f64>,
    pub val: Vec<ValMetrics>,
    pub frames: Vec<FrameMetrics>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn evaluate_decoupling(model: &Model, dataset: &Dataset, opts: &EvalOptions) -> Result<MetricsReport> {
    let mut val = Vec::with_capacity(dataset.val.len());
    for (i, v) in dataset.val.iter().enumerate() {
        let r = render_views(model, &v.camera, 0.0, &opts.render);
        val.push(ValMetrics {
            view: i,
            psnr_background: psnr(&r.static_only, &v.image)?,
            psnr_ground: match &v.ground_mask {
                Some(m) => psnr_masked(&r.static_only, &v.image, m)?,
                None => None,
            },
        });
    }
    let mut frames = Vec::with_capacity(dataset.frames.len());
    for (i, f) in dataset.frames.iter().enumerate() {
        if f.mask_dynamic.is_none() && f.mask_shadow.is_none() {
            frames.push(FrameMetrics {
                frame: i,
                tau: f.tau,
                jaccard_dynamic: None,
                jaccard_shadow_combined: None,
                mean_rho_outside_shadow: None,
            });
            continue;
        }
        let r = render_views(model, &f.camera, f.tau, &opts.render);
        let pred_dyn = threshold_mask(&r.alpha, r.width, r.height, opts.mask_threshold);
        let jaccard_dynamic = match &f.mask_dynamic {
            Some(gt) => Some(jaccard(&pred_dyn, gt)?),
            None => None,
        };
        let (jaccard_shadow_combined, mean_rho_outside_shadow) = match &f.mask_shadow {
            Some(gt_shadow) => {
                let pred_shadow = threshold_mask(&r.rho, r.width, r.height, opts.shadow_threshold);
                let gt_union = match &f.mask_dynamic {
                    Some(d) => d.union(gt_shadow),
                    None => gt_shadow.clone(),
                };
                let j = jaccard(&pred_dyn.union(&pred_shadow), &gt_union)?;
                let outside: Vec<f64> = (0..r.rho.len())
                    .filter(|&k| !gt_union.data[k] && r.static_weight[k] >= opts.surface_weight)
                    .map(|k| r.rho[k])
                    .collect();
                let m = (!outside.is_empty()).then(|| outside.iter().sum::<f64>() / outside.len() as f64);
                (Some(j), m)
            }
            None => (None, None),
        };
        frames.push(FrameMetrics {
            frame: i,
            tau: f.tau,
            jaccard_dynamic,
            jaccard_shadow_combined,
            mean_rho_outside_shadow,
        });
    }
    Ok(MetricsReport {
        psnr_background: mean(val.iter().map(|v| Some(v.psnr_background))),
        psnr_ground: mean(val.iter().map(|v| v.psnr_ground)),
        jaccard_dynamic: mean(frames.iter().map(|f| f.jaccard_dynamic)),
        jaccard_shadow_combined: mean(frames.iter().map(|f| f.jaccard_shadow_combined)),
        mean_rho_outside_shadow: mean(frames.iter().map(|f| f.mean_rho_outside_shadow)),
        val,
        frames,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let rows = [
            ("psnr_background (dB)", self.psnr_background),
            ("psnr_ground (dB)", self.psnr_ground),
            ("jaccard_dynamic", self.jaccard_dynamic),
            ("jaccard_shadow_combined", self.jaccard_shadow_combined),
            ("mean_rho_outside_shadow", self.mean_rho_outside_shadow),
        ];
        let mut s = String::new();
        for (name, v) in rows {
            let _ = writeln!(s, "{name:<26}{:>10}", cell(v));
        }
        s
    }

    pub fn per_frame_csv(&self) -> String {
        let mut s = String::from("frame,tau,jaccard_dynamic,jaccard_shadow_combined,mean_rho_outside_shadow\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                f.frame,
                f.tau,
                opt(f.jaccard_dynamic),
                opt(f.jaccard_shadow_combined),
                opt(f.mean_rho_outside_shadow)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::scene::{build_dataset, SyntheticScene};
    use proptest::prelude::*;

    fn solid(v: f64) -> Image {
        Image::filled(4, 4, Vec3::repeat(v))
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&solid(0.3), &solid(0.3)).unwrap(), PSNR_CAP);
        assert!((psnr(&solid(0.5), &solid(0.0)).unwrap() - 6.020599913279624).abs() < 1e-12);
        assert!((psnr(&solid(0.1), &solid(0.0)).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&solid(0.1), &Image::new(3, 4)).is_err());
    }

    #[test]
    fn jaccard_examples() {
        let mut a = Mask::new(4, 1);
        let mut b = Mask::new(4, 1);
        assert_eq!(jaccard(&a, &b).unwrap(), 1.0);
        a.data = vec![true, true, false, false];
        b.data = vec![false, true, true, false];
        assert!((jaccard(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        b.data = vec![false, false, true, true];
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
        assert!(jaccard(&a, &Mask::new(2, 2)).is_err());
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let m = threshold_mask(&[0.05, 0.5, 0.1], 3, 1, DEFAULT_MASK_THRESHOLD);
        assert_eq!(m.data, vec![false, true, true]);
        let all = [0.0, 0.2, 0.999];
        assert_eq!(threshold_mask(&all, 3, 1, 1.0 - 1e-12).count(), 0);
        assert_eq!(threshold_mask(&all, 3, 1, 1e-300).data, vec![false, true, true]);
    }

    proptest! {
        #[test]
        fn psnr_symmetric_and_detects_shift(v in prop::collection::vec(0.0f64..1.0, 48), eps in 1e-3f64..0.1) {
            let a = Image { width: 4, height: 4, pixels: v.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect() };
            let mut b = a.clone();
            b.pixels[3].x += eps;
            let p = psnr(&a, &b).unwrap();
            prop_assert_eq!(p, psnr(&b, &a).unwrap());
            prop_assert!(p.is_finite() && p < PSNR_CAP);
        }

        #[test]
        fn jaccard_symmetric_and_monotone(bits in prop::collection::vec(any::<(bool, bool)>(), 30)) {
            let a = Mask { width: 30, height: 1, data: bits.iter().map(|b| b.0).collect() };
            let b = Mask { width: 30, height: 1, data: bits.iter().map(|b| b.0 || b.1).collect() };
            let j = jaccard(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert_eq!(j, jaccard(&b, &a).unwrap());
            // shrinking the contained mask cannot raise the score
            let mut smaller = a.clone();
            if let Some(k) = smaller.data.iter().position(|&x| x) {
                smaller.data[k] = false;
                prop_assert!(jaccard(&smaller, &b).unwrap() <= j);
            }
        }
    }

    fn small_dataset(preset: &str) -> Dataset {
        let mut s = SyntheticScene::preset(preset).unwrap();
        s.width = 10;
        s.height = 10;
        s.frame_count = 2;
        s.val_count = 2;
        build_dataset(&s, 3).unwrap()
    }

    fn empty_model(ds: &Dataset, shadow: bool) -> Model {
        let spec = ModelSpec {
            static_res: 4,
            dynamic_res: 4,
            shadow_res: 4,
            shadow_field: shadow,
            ..ModelSpec::default()
        };
        let mut m = Model::new(ds.manifest.bbox, &spec, 2);
        for (_, p) in m.blocks_mut() {
            p.fill(-1000.0);
        }
        m
    }

    #[test]
    fn empty_model_scores_like_black_image() {
        let ds = small_dataset("mover_shadow");
        let m = empty_model(&ds, true);
        let opts = EvalOptions {
            render: RenderSettings { samples_coarse: 8, samples_fine: 4, seed: 0 },
            ..Default::default()
        };
        let r = evaluate_decoupling(&m, &ds, &opts).unwrap();
        let black = Image::new(10, 10);
        let expect: f64 = ds.val.iter().map(|v| psnr(&black, &v.image).unwrap()).sum::<f64>() / 2.0;
        assert!((r.psnr_background.unwrap() - expect).abs() < 1e-9);
        assert!(r.psnr_ground.is_some() && r.jaccard_shadow_combined.is_some());
        // no static surface anywhere, so there is nothing to average
        assert_eq!(r.mean_rho_outside_shadow, None);
        assert_eq!(r.frames.len(), 2);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(json["mean_rho_outside_shadow"].is_null());
        assert_eq!(r.per_frame_csv().lines().count(), 3);
        assert!(r.table().contains("n/a"));
    }

    #[test]
    fn empty_dynamic_field_renders_white() {
        let ds = small_dataset("mover");
        let m = empty_model(&ds, false);
        let v = render_views(&m, &ds.frames[0].camera, 0.0, &RenderSettings { samples_coarse: 8, samples_fine: 0, seed: 0 });
        assert!(v.dynamic_white.mean() >= 0.98);
        assert_eq!(extract_dynamic_mask(&m, &ds.frames[0].camera, 0.0, 0.1, &RenderSettings::default()).count(), 0);
        assert_eq!(v.contact_sheet().width, 50);
    }
}
