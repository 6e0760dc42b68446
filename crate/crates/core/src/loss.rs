//! Photometric and decoupling losses over per-ray sample records.
//!
//! Ray integrals are discretized as δ-weighted sums normalized by the ray
//! length `t_far - t_near`, so weights carry over between scenes of different
//! depth ranges. Logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::render::{composite_backward, RenderOutput, SampleGrad, SampleRecord, DENSITY_EPS};
use crate::Vec3;

/// Clamp applied to entropy arguments before taking logarithms.
pub const ENTROPY_CLAMP: f64 = 1e-12;
/// Rays whose total static mass falls below this are exempt from the static regularizer.
pub const STATIC_MASS_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowRegMode {
    /// Mean of ρ².
    #[default]
    Squared,
    /// Mean of ρ + ρ².
    L1PlusSquared,
}

/// Loss weights resolved for one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_r: f64,
    pub lambda_sigma_s: f64,
    pub lambda_rho: f64,
    pub skew: f64,
    pub shadow_reg_mode: ShadowRegMode,
}

impl LossWeights {
    pub fn photometric_only() -> Self {
        LossWeights {
            lambda_s: 0.0,
            lambda_r: 0.0,
            lambda_sigma_s: 0.0,
            lambda_rho: 0.0,
            skew: 1.0,
            shadow_reg_mode: ShadowRegMode::Squared,
        }
    }
}

pub fn photometric_loss(rendered: &Vec3, target: &Vec3) -> f64 {
    (rendered - target).norm_squared()
}

/// `-(x ln x + (1-x) ln(1-x))` with `0 ln 0 = 0`.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let x = x.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
    -(x * x.ln() + (1.0 - x) * (1.0 - x).ln())
}

fn binary_entropy_derivative(x: f64) -> f64 {
    let x = x.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
    ((1.0 - x) / x).ln()
}

/// `(∂w/∂σS, ∂w/∂σD)` for `w = σD / (σS + σD)`.
#[inline]
fn ratio_grad(s: &SampleRecord) -> (f64, f64) {
    let sigma = s.sigma();
    if sigma > DENSITY_EPS {
        let inv2 = 1.0 / (sigma * sigma);
        (-s.sigma_d * inv2, s.sigma_s * inv2)
    } else {
        (0.0, 0.0)
    }
}

/// δ-weighted mean of `H_b(w^k)` along the ray. `k = 1` is the plain binary entropy loss.
pub fn skewed_entropy_loss(samples: &[SampleRecord], ray_length: f64, k: f64) -> f64 {
    if ray_length <= 0.0 {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| binary_entropy(s.w.powf(k)) * s.delta)
        .sum::<f64>()
        / ray_length
}

fn skewed_entropy_backward(
    samples: &[SampleRecord],
    ray_length: f64,
    k: f64,
    scale: f64,
    grads: &mut [SampleGrad],
) {
    if ray_length <= 0.0 || scale == 0.0 {
        return;
    }
    for (s, g) in samples.iter().zip(grads.iter_mut()) {
        let x = s.w.powf(k);
        let dx_dw = if k == 1.0 { 1.0 } else { k * s.w.powf(k - 1.0) };
        let d = scale * binary_entropy_derivative(x) * dx_dw * s.delta / ray_length;
        let (dws, dwd) = ratio_grad(s);
        g.sigma_s += d * dws;
        g.sigma_d += d * dwd;
    }
}

/// Maximum of `w` along the ray, first index on ties.
pub fn ray_regularization(samples: &[SampleRecord]) -> f64 {
    argmax_w(samples).map_or(0.0, |i| samples[i].w)
}

fn argmax_w(samples: &[SampleRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in samples.iter().enumerate() {
        if best.is_none_or(|b| s.w > samples[b].w) {
            best = Some(i);
        }
    }
    best
}

fn ray_regularization_backward(samples: &[SampleRecord], scale: f64, grads: &mut [SampleGrad]) {
    if scale == 0.0 {
        return;
    }
    if let Some(i) = argmax_w(samples) {
        let (dws, dwd) = ratio_grad(&samples[i]);
        grads[i].sigma_s += scale * dws;
        grads[i].sigma_d += scale * dwd;
    }
}

/// Entropy of the static mass distribution `p_i ∝ σS_i δ_i` along the ray.
pub fn static_regularization(samples: &[SampleRecord]) -> f64 {
    let total: f64 = samples.iter().map(|s| s.sigma_s * s.delta).sum();
    if total < STATIC_MASS_EPS {
        return 0.0;
    }
    samples
        .iter()
        .map(|s| {
            let p = s.sigma_s * s.delta / total;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum()
}

fn static_regularization_backward(samples: &[SampleRecord], scale: f64, grads: &mut [SampleGrad]) {
    if scale == 0.0 {
        return;
    }
    let total: f64 = samples.iter().map(|s| s.sigma_s * s.delta).sum();
    if total < STATIC_MASS_EPS {
        return;
    }
    let entropy = static_regularization(samples);
    for (s, g) in samples.iter().zip(grads.iter_mut()) {
        let p = (s.sigma_s * s.delta / total).max(ENTROPY_CLAMP);
        g.sigma_s += scale * s.delta * (-p.ln() - entropy) / total;
    }
}

/// δ-weighted mean of ρ² (or ρ + ρ²) along the ray.
pub fn shadow_regularization(samples: &[SampleRecord], ray_length: f64, mode: ShadowRegMode) -> f64 {
    if ray_length <= 0.0 {
        return 0.0;
    }
    let f = |r: f64| match mode {
        ShadowRegMode::Squared => r * r,
        ShadowRegMode::L1PlusSquared => r + r * r,
    };
    samples.iter().map(|s| f(s.rho) * s.delta).sum::<f64>() / ray_length
}

fn shadow_regularization_backward(
    samples: &[SampleRecord],
    ray_length: f64,
    mode: ShadowRegMode,
    scale: f64,
    grads: &mut [SampleGrad],
) {
    if ray_length <= 0.0 || scale == 0.0 {
        return;
    }
    for (s, g) in samples.iter().zip(grads.iter_mut()) {
        let df = match mode {
            ShadowRegMode::Squared => 2.0 * s.rho,
            ShadowRegMode::L1PlusSquared => 1.0 + 2.0 * s.rho,
        };
        g.rho += scale * df * s.delta / ray_length;
    }
}

/// Unweighted loss terms, per ray or averaged over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub photometric: f64,
    pub skewed_entropy: f64,
    pub ray_reg: f64,
    pub static_reg: f64,
    pub shadow_reg: f64,
}

impl LossTerms {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.photometric
            + w.lambda_s * self.skewed_entropy
            + w.lambda_r * self.ray_reg
            + w.lambda_sigma_s * self.static_reg
            + w.lambda_rho * self.shadow_reg
    }

    pub fn is_finite(&self) -> bool {
        [self.photometric, self.skewed_entropy, self.ray_reg, self.static_reg, self.shadow_reg]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Every term for one rendered ray.
pub fn ray_loss_terms(out: &RenderOutput, target: &Vec3, w: &LossWeights) -> LossTerms {
    let len = out.t_far - out.t_near;
    LossTerms {
        photometric: photometric_loss(&out.color, target),
        skewed_entropy: skewed_entropy_loss(&out.samples, len, w.skew),
        ray_reg: ray_regularization(&out.samples),
        static_reg: static_regularization(&out.samples),
        shadow_reg: shadow_regularization(&out.samples, len, w.shadow_reg_mode),
    }
}

/// Gradient of `scale * weighted_total(ray_loss_terms(..))` with respect to each sample.
pub fn ray_loss_backward(out: &RenderOutput, target: &Vec3, w: &LossWeights, scale: f64) -> Vec<SampleGrad> {
    let len = out.t_far - out.t_near;
    let d_color = (out.color - target) * (2.0 * scale);
    let mut grads = composite_backward(out, &d_color);
    skewed_entropy_backward(&out.samples, len, w.skew, scale * w.lambda_s, &mut grads);
    ray_regularization_backward(&out.samples, scale * w.lambda_r, &mut grads);
    static_regularization_backward(&out.samples, scale * w.lambda_sigma_s, &mut grads);
    shadow_regularization_backward(&out.samples, len, w.shadow_reg_mode, scale * w.lambda_rho, &mut grads);
    grads
}

/// Sum with a fixed pairwise tree order, independent of how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Batch means of every term plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TotalLoss {
    pub terms: LossTerms,
    pub total: f64,
}

pub fn batch_mean(per_ray: &[LossTerms], w: &LossWeights) -> TotalLoss {
    let n = per_ray.len().max(1) as f64;
    let mean = |f: fn(&LossTerms) -> f64| {
        let v: Vec<f64> = per_ray.iter().map(f).collect();
        pairwise_sum(&v) / n
    };
    let terms = LossTerms {
        photometric: mean(|t| t.photometric),
        skewed_entropy: mean(|t| t.skewed_entropy),
        ray_reg: mean(|t| t.ray_reg),
        static_reg: mean(|t| t.static_reg),
        shadow_reg: mean(|t| t.shadow_reg),
    };
    TotalLoss {
        terms,
        total: terms.weighted_total(w),
    }
}

/// Total loss over a batch of rendered rays and their target colors.
pub fn total_loss(batch: &[(RenderOutput, Vec3)], w: &LossWeights) -> TotalLoss {
    let per_ray: Vec<LossTerms> = batch.iter().map(|(o, t)| ray_loss_terms(o, t, w)).collect();
    batch_mean(&per_ray, w)
}
