use d2v::config::TrainConfig;
use d2v::dataset::Dataset;
use d2v::eval::{render_views, RenderSettings};
use d2v::render::ray_rng;
use d2v::scene::{build_dataset, SyntheticScene};
use d2v::train::{sample_ray_batch, train};

fn small(preset: &str, frames: usize, res: u32) -> Dataset {
    let mut s = SyntheticScene::preset(preset).unwrap();
    s.frame_count = frames;
    s.width = res;
    s.height = res;
    s.val_count = 2;
    build_dataset(&s, 1).unwrap()
}

fn config(overrides: &[&str]) -> TrainConfig {
    let mut c = TrainConfig::preset("syn_default").unwrap();
    c.apply_overrides(overrides).unwrap();
    c
}

#[test]
fn frame_draws_follow_the_binomial() {
    let ds = small("mover", 2, 4);
    let n = 100_000;
    let batch = sample_ray_batch(&ds, n, &mut ray_rng(9, 0));
    let first = batch.iter().filter(|r| r.frame == 0).count() as f64;
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((first - n as f64 / 2.0).abs() < 3.0 * sigma, "{first} of {n}");
}

#[test]
fn loss_decreases_over_two_hundred_iterations() {
    let ds = small("mover", 4, 32);
    let cfg = config(&[
        "iterations=200",
        "batch_size=512",
        "lr_start=0.05",
        "samples_coarse=16",
        "samples_fine=16",
        "lambda_s=0.01",
    ]);
    let out = train(&cfg, &ds, None).unwrap();
    let windows: Vec<f64> = out
        .history
        .chunks(20)
        .map(|w| w.iter().map(|r| r.loss.total).sum::<f64>() / w.len() as f64)
        .collect();
    assert_eq!(windows.len(), 10);
    for pair in windows.windows(2) {
        assert!(pair[1] < pair[0], "{windows:?}");
    }
}

#[test]
fn single_frame_overfits() {
    let ds = small("mover", 1, 8);
    let cfg = config(&[
        "iterations=1500",
        "batch_size=64",
        "lambda_s=0",
        "lambda_r=0",
        "lambda_sigma_s=0",
    ]);
    let out = train(&cfg, &ds, None).unwrap();
    let frame = &ds.frames[0];
    let settings = RenderSettings {
        samples_coarse: cfg.samples_coarse,
        samples_fine: cfg.samples_fine,
        seed: 0,
    };
    let views = render_views(&out.model, &frame.camera, frame.tau, &settings);
    let lp = views
        .composite
        .pixels
        .iter()
        .zip(&frame.image.pixels)
        .map(|(a, b)| (a - b).norm_squared())
        .sum::<f64>()
        / frame.image.pixels.len() as f64;
    assert!(lp < 1e-4, "photometric loss {lp:.3e}");
}
