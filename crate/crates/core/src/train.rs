//! Optimization loop: ray batches, forward/backward, Adam and checkpoints.
//!
//! Rays are rendered and differentiated in parallel, but per-sample
//! gradients are scattered into the parameter buffers sequentially in batch
//! order, so a run is bit-identical for any worker count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{AdamConfig, TrainConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::loss::{batch_mean, ray_loss_backward, ray_loss_terms, LossTerms, LossWeights, TotalLoss};
use crate::model::{Model, ModelGradient, ModelSpec};
use crate::render::{pixel_ray, ray_rng, render_composite, render_hierarchical, Ray, RenderOutput, SampleGrad};
use crate::Vec3;

const BATCH_STREAM: u64 = 1 << 63;

/// One training ray. `ray` is `None` when the pixel misses the scene box.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySample {
    pub ray: Option<Ray>,
    pub target: Vec3,
    pub tau: f64,
    pub frame: usize,
    pub pixel: u32,
}

pub fn frame_ray(dataset: &Dataset, frame: usize, pixel: u32) -> RaySample {
    let f = &dataset.frames[frame];
    let w = f.camera.width;
    let ray = pixel_ray(&f.camera, pixel % w, pixel / w, 0.0, f64::INFINITY)
        .expect("pixel inside image")
        .clipped_to(&dataset.manifest.bbox);
    RaySample {
        ray,
        target: f.image.pixels[pixel as usize],
        tau: f.tau,
        frame,
        pixel,
    }
}

/// Rays drawn uniformly over (frame, pixel) pairs.
pub fn sample_ray_batch<R: Rng + ?Sized>(dataset: &Dataset, batch_size: usize, rng: &mut R) -> Vec<RaySample> {
    let frames = dataset.frames.len();
    let pixels = dataset.pixel_count() as u32;
    (0..batch_size)
        .map(|_| {
            let frame = rng.gen_range(0..frames);
            let pixel = rng.gen_range(0..pixels);
            frame_ray(dataset, frame, pixel)
        })
        .collect()
}

/// Adam moments aligned with the model's parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub adam: AdamConfig,
}

impl OptimizerState {
    pub fn new(model: &Model, adam: AdamConfig) -> Self {
        let sizes: Vec<usize> = model.blocks().iter().map(|(_, p)| p.len()).collect();
        OptimizerState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            adam,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(&self.v).all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn apply(&mut self, model: &mut Model, grad: &ModelGradient, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let step_size = lr / bc1;
        let inv_bc2 = 1.0 / bc2;
        for (((_, params), (_, g)), (m, v)) in model
            .blocks_mut()
            .into_iter()
            .zip(grad.blocks())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let p = params.as_mut_slice();
            for (((p, &g), m), v) in p.iter_mut().zip(g.as_slice()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// Per-sample gradient with the point it was evaluated at.
struct PointGrad {
    x: Vec3,
    dir: Vec3,
    tau: f64,
    grad: SampleGrad,
}

struct RayResult {
    terms: LossTerms,
    grads: Vec<PointGrad>,
    output: RenderOutput,
}

fn ray_stream(iteration: usize, ray: usize) -> u64 {
    ((iteration as u64) << 32) | ray as u64
}

/// Differentiable part of a step for one ray over fixed sample positions.
fn ray_forward_backward(
    model: &Model,
    sample: &RaySample,
    t_values: Option<&[f64]>,
    weights: &LossWeights,
    scale: f64,
    n_coarse: usize,
    n_fine: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RayResult> {
    let Some(ray) = sample.ray else {
        let output = RenderOutput::empty(0.0, 0.0);
        return Ok(RayResult {
            terms: ray_loss_terms(&output, &sample.target, weights),
            grads: Vec::new(),
            output,
        });
    };
    let output = match t_values {
        Some(t) => render_composite(model, &ray, sample.tau, t)?,
        None => render_hierarchical(model, &ray, sample.tau, n_coarse, n_fine, true, rng)?,
    };
    let terms = ray_loss_terms(&output, &sample.target, weights);
    let grads = ray_loss_backward(&output, &sample.target, weights, scale)
        .into_iter()
        .zip(&output.samples)
        .filter(|(g, _)| !g.is_zero())
        .map(|(grad, s)| PointGrad {
            x: ray.at(s.t),
            dir: ray.dir,
            tau: sample.tau,
            grad,
        })
        .collect();
    Ok(RayResult { terms, grads, output })
}

fn describe_ray(sample: &RaySample, r: &RayResult) -> String {
    let worst = r
        .output
        .samples
        .iter()
        .find(|s| !(s.sigma_s.is_finite() && s.sigma_d.is_finite() && s.rho.is_finite() && s.w.is_finite()));
    format!(
        "frame {} pixel {} tau {} ray {:?} target {:?} color {:?} terms {:?} first non-finite sample {:?}",
        sample.frame,
        sample.pixel,
        sample.tau,
        sample.ray,
        sample.target.as_slice(),
        r.output.color.as_slice(),
        r.terms,
        worst
    )
}

/// Forward and backward over a batch. With `t_values` given the sample
/// positions are frozen, which makes the loss a smooth function of the
/// parameters; otherwise each ray draws its own coarse/fine samples.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradient(
    model: &Model,
    batch: &[RaySample],
    t_values: Option<&[Vec<f64>]>,
    weights: &LossWeights,
    config: &TrainConfig,
    iteration: usize,
    grad: &mut ModelGradient,
) -> Result<TotalLoss> {
    let scale = 1.0 / batch.len().max(1) as f64;
    let results: Vec<Result<RayResult>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ray_rng(config.seed, ray_stream(iteration, i));
            let t = t_values.map(|t| t[i].as_slice());
            ray_forward_backward(model, s, t, weights, scale, config.samples_coarse, config.samples_fine, &mut rng)
        })
        .collect();
    let results: Vec<RayResult> = results.into_iter().collect::<Result<_>>()?;
    let per_ray: Vec<LossTerms> = results.iter().map(|r| r.terms).collect();
    let loss = batch_mean(&per_ray, weights);
    if !loss.total.is_finite() {
        let (i, r) = results
            .iter()
            .enumerate()
            .find(|(_, r)| !r.terms.is_finite())
            .unwrap_or((0, &results[0]));
        return Err(Error::NonFinite {
            iteration,
            details: describe_ray(&batch[i], r),
        });
    }
    grad.clear();
    for r in &results {
        for p in &r.grads {
            model.accumulate(&p.x, &p.dir, p.tau, &p.grad, grad);
        }
    }
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub iteration: usize,
    pub loss: TotalLoss,
    pub weights: LossWeights,
    pub lr: f64,
}

pub const CSV_HEADER: &str =
    "iteration,L_p,L_s,L_r,L_sigma_s,L_rho,total,lambda_s,lambda_r,lambda_sigma_s,lambda_rho,skew,lr";

impl StepReport {
    pub fn csv_row(&self) -> String {
        let t = &self.loss.terms;
        let w = &self.weights;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            t.photometric,
            t.skewed_entropy,
            t.ray_reg,
            t.static_reg,
            t.shadow_reg,
            self.loss.total,
            w.lambda_s,
            w.lambda_r,
            w.lambda_sigma_s,
            w.lambda_rho,
            w.skew,
            self.lr
        )
    }
}

/// Mutable training state over a borrowed dataset.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub dataset: &'a Dataset,
    pub model: Model,
    pub optimizer: OptimizerState,
    pub iteration: usize,
    grad: ModelGradient,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let model = Model::new(dataset.manifest.bbox, &config.model, dataset.frames.len());
        Ok(Self::with_model(config, dataset, model))
    }

    pub fn with_model(config: TrainConfig, dataset: &'a Dataset, model: Model) -> Self {
        let optimizer = OptimizerState::new(&model, config.adam);
        let grad = ModelGradient::zeros_like(&model);
        Trainer {
            config,
            dataset,
            model,
            optimizer,
            iteration: 0,
            grad,
        }
    }

    pub fn done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// The batch drawn at `iteration`; a pure function of the seed.
    pub fn batch(&self, iteration: usize) -> Vec<RaySample> {
        let mut rng = ray_rng(self.config.seed, BATCH_STREAM | iteration as u64);
        sample_ray_batch(self.dataset, self.config.batch_size, &mut rng)
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let it = self.iteration;
        let batch = self.batch(it);
        let weights = self.config.weights(it);
        let lr = self.config.learning_rate(it);
        let loss = batch_gradient(&self.model, &batch, None, &weights, &self.config, it, &mut self.grad)?;
        self.optimizer.apply(&mut self.model, &self.grad, lr);
        self.iteration += 1;
        Ok(StepReport {
            iteration: it,
            loss,
            weights,
            lr,
        })
    }
}

/// Where a run writes its outputs.
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub dir: PathBuf,
}

impl RunOutputs {
    pub fn checkpoint(&self, iteration: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("iter_{iteration:06}.d2v"))
    }

    pub fn final_model(&self) -> PathBuf {
        self.dir.join("model.d2v")
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join("train_log.csv")
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<StepReport>,
}

/// Runs the full schedule. With `out` set, writes the CSV log, periodic
/// checkpoints and the final model.
pub fn train(config: &TrainConfig, dataset: &Dataset, out: Option<&RunOutputs>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), dataset)?;
    let mut log = match out {
        Some(o) => {
            fs::create_dir_all(o.dir.join("checkpoints")).map_err(|e| Error::io(&o.dir, e))?;
            let path = o.log();
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let mut history = Vec::with_capacity(config.iterations);
    while !trainer.done() {
        let report = trainer.step()?;
        let it = report.iteration;
        let last = trainer.done();
        if (config.log_interval > 0 && it % config.log_interval == 0) || last {
            if !trainer.model.is_finite() {
                return Err(Error::NonFinite {
                    iteration: it,
                    details: "parameters became non-finite after the optimizer step".into(),
                });
            }
            if let Some((f, path)) = log.as_mut() {
                writeln!(f, "{}", report.csv_row()).map_err(|e| Error::io(path.as_path(), e))?;
            }
        }
        if it % 100 == 0 || last {
            log::info!(
                "iter {it:>6}  total {:.6e}  L_p {:.6e}  lambda_s {:.3e}  lr {:.3e}",
                report.loss.total,
                report.loss.terms.photometric,
                report.weights.lambda_s,
                report.lr
            );
        }
        if let Some(o) = out {
            if config.checkpoint_interval > 0 && (it + 1) % config.checkpoint_interval == 0 {
                trainer.model.save(&o.checkpoint(it + 1))?;
            }
        }
        history.push(report);
    }
    if let Some(o) = out {
        trainer.model.save(&o.final_model())?;
    }
    Ok(TrainOutcome {
        model: trainer.model,
        history,
    })
}

/// Result of probing one parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            self.abs_error() / scale
        }
    }

    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.abs_error() <= abs_tol || self.rel_error() <= rel_tol
    }
}

/// Central differences of `f` at the given indices of `params`, restoring each entry afterwards.
pub fn central_differences(
    params: &mut [f64],
    indices: &[usize],
    h: f64,
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<Probe> {
    indices
        .iter()
        .map(|&i| {
            let orig = params[i];
            params[i] = orig + h;
            let up = f(params);
            params[i] = orig - h;
            let down = f(params);
            params[i] = orig;
            Probe {
                index: i,
                analytic: analytic[i],
                numeric: (up - down) / (2.0 * h),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub h: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Probes per parameter block, drawn from entries with a nonzero analytic gradient.
    pub probes_per_block: usize,
    pub seed: u64,
    /// Doubles one analytic entry; the check must then fail.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-4,
            rel_tol: 1e-3,
            abs_tol: 1e-6,
            probes_per_block: 80,
            seed: 0,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: &'static str,
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Probes whose gradient is large enough to be judged by relative error.
    pub relative_probes: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.failures == 0)
    }

    pub fn probe_count(&self) -> usize {
        self.blocks.iter().map(|b| b.probes.len()).sum()
    }

    /// Failing probes across blocks, largest relative error first.
    pub fn worst(&self, n: usize) -> Vec<(&'static str, Probe)> {
        let mut all: Vec<(&'static str, Probe)> = self
            .blocks
            .iter()
            .flat_map(|b| b.probes.iter().map(move |p| (b.name, *p)))
            .filter(|(_, p)| !p.passes(self.rel_tol, self.abs_tol))
            .collect();
        all.sort_by(|a, b| b.1.rel_error().total_cmp(&a.1.rel_error()));
        all.truncate(n);
        all
    }
}

/// Compares the analytic gradient of the batch total loss against central
/// differences. Sample positions are drawn once and then frozen.
pub fn gradient_check(
    model: &Model,
    batch: &[RaySample],
    config: &TrainConfig,
    weights: &LossWeights,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let t_values: Vec<Vec<f64>> = batch
        .iter()
        .enumerate()
        .map(|(i, s)| match s.ray {
            Some(ray) => {
                let mut rng = ray_rng(config.seed, ray_stream(0, i));
                render_hierarchical(model, &ray, s.tau, config.samples_coarse, config.samples_fine, true, &mut rng)
                    .map(|o| o.samples.iter().map(|r| r.t).collect())
            }
            None => Ok(Vec::new()),
        })
        .collect::<Result<_>>()?;
    let mut grad = ModelGradient::zeros_like(model);
    batch_gradient(model, batch, Some(&t_values), weights, config, 0, &mut grad)?;

    let loss_of = |m: &Model| -> f64 {
        let per_ray: Vec<LossTerms> = batch
            .iter()
            .zip(&t_values)
            .map(|(s, t)| match s.ray {
                Some(ray) => {
                    let out = render_composite(m, &ray, s.tau, t).expect("frozen samples are increasing");
                    ray_loss_terms(&out, &s.target, weights)
                }
                None => ray_loss_terms(&RenderOutput::empty(0.0, 0.0), &s.target, weights),
            })
            .collect();
        batch_mean(&per_ray, weights).total
    };

    let mut rng = ray_rng(opts.seed, BATCH_STREAM - 1);
    let mut work = model.clone();
    let mut blocks = Vec::new();
    let names: Vec<&'static str> = grad.blocks().iter().map(|(n, _)| *n).collect();
    for (b, name) in names.into_iter().enumerate() {
        let mut analytic = grad.blocks()[b].1.as_slice().to_vec();
        let nonzero: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i] != 0.0).collect();
        let pool = if nonzero.is_empty() { (0..analytic.len()).collect() } else { nonzero };
        let k = opts.probes_per_block.min(pool.len());
        let mut indices: Vec<usize> = sample_indices(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
        indices.sort_unstable();
        if opts.corrupt && b == 0 {
            if let Some(&i) = indices.iter().max_by(|&&a, &&b| analytic[a].abs().total_cmp(&analytic[b].abs())) {
                analytic[i] *= 2.0;
            }
        }
        let original = work.blocks()[b].1.as_slice().to_vec();
        let mut params = original.clone();
        let probes = central_differences(&mut params, &indices, opts.h, &analytic, |p| {
            work.blocks_mut()[b].1.as_mut_slice().copy_from_slice(p);
            loss_of(&work)
        });
        work.blocks_mut()[b].1.as_mut_slice().copy_from_slice(&original);
        let failures = probes.iter().filter(|p| !p.passes(opts.rel_tol, opts.abs_tol)).count();
        blocks.push(BlockReport {
            name,
            max_rel_error: probes
                .iter()
                .filter(|p| p.analytic.abs().max(p.numeric.abs()) > opts.abs_tol)
                .map(|p| p.rel_error())
                .fold(0.0, f64::max),
            max_abs_error: probes.iter().map(|p| p.abs_error()).fold(0.0, f64::max),
            relative_probes: probes
                .iter()
                .filter(|p| p.analytic.abs().max(p.numeric.abs()) > opts.abs_tol)
                .count(),
            probes,
            failures,
        });
    }
    Ok(GradCheckReport {
        blocks,
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
    })
}

/// A small model with random parameters and random rays through its box,
/// used by the gradient oracle.
pub fn random_fixture(res: usize, slices: usize, rays: usize, view_dependent: bool, seed: u64) -> (Model, Vec<RaySample>) {
    let spec = ModelSpec {
        static_res: res,
        dynamic_res: res,
        shadow_res: res,
        time_slices: Some(slices),
        shadow_time_slices: Some(slices),
        shadow_field: true,
        view_dependent,
        dynamic_density_init: 0.0,
    };
    let bbox = Aabb::cube(1.0);
    let mut model = Model::new(bbox, &spec, slices);
    let mut rng = ray_rng(seed, 0);
    let density_channel = |i: usize, channels: usize| i % channels == 0;
    let sc = model.static_field.channels();
    for (i, p) in model.static_field.params_mut().as_mut_slice().iter_mut().enumerate() {
        *p = if density_channel(i, sc) { rng.gen_range(0.0..6.0) } else { rng.gen_range(-2.0..2.0) };
    }
    let dc = model.dynamic_field.channels();
    for (i, p) in model.dynamic_field.params_mut().as_mut_slice().iter_mut().enumerate() {
        *p = if density_channel(i, dc) { rng.gen_range(0.0..6.0) } else { rng.gen_range(-2.0..2.0) };
    }
    if let Some(s) = model.shadow_field.as_mut() {
        for p in s.params_mut().as_mut_slice() {
            *p = rng.gen_range(0.0..6.0);
        }
    }
    let batch = (0..rays)
        .map(|i| {
            let origin = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 3.0);
            let aim = Vec3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), 0.0);
            let dir = (aim - origin).normalize();
            let ray = Ray {
                origin,
                dir,
                t_near: 0.0,
                t_far: f64::INFINITY,
            }
            .clipped_to(&bbox);
            RaySample {
                ray,
                target: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                tau: rng.gen(),
                frame: 0,
                pixel: i as u32,
            }
        })
        .collect();
    (model, batch)
}

/// Loss weights exercising every term, for gradient checks.
pub fn check_weights() -> LossWeights {
    LossWeights {
        lambda_s: 0.2,
        lambda_r: 0.05,
        lambda_sigma_s: 0.03,
        lambda_rho: 0.1,
        skew: 2.0,
        shadow_reg_mode: Default::default(),
    }
}

/// Numeric rows of a training log, header skipped.
pub fn read_log(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .map(|l| l.split(',').filter_map(|v| v.parse().ok()).collect())
        .collect())
}
