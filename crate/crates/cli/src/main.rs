//! `d2v`: generate synthetic scenes, train decoupled fields, render and evaluate them.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use d2v::config::TrainConfig;
use d2v::dataset::Dataset;
use d2v::eval::{evaluate_decoupling, render_views, EvalOptions, RenderSettings};
use d2v::imageio::{write_ppm, write_scalar_map};
use d2v::model::Model;
use d2v::render::Camera;
use d2v::scene::{generate_dataset, SyntheticScene};
use d2v::train::{check_weights, gradient_check, random_fixture, train, GradCheckOptions, RunOutputs};

#[derive(Parser)]
#[command(name = "d2v", version, about = "Static/dynamic/shadow decoupling with volumetric fields")]
struct Cli {
    /// Worker threads; 1 gives bit-exact runs.
    #[arg(long, global = true, env = "D2V_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with ground-truth masks.
    MakeScene(MakeScene),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Render decoupled views from a checkpoint.
    Render(RenderArgs),
    /// Compute background PSNR, mask Jaccard and shadow statistics.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with central differences on a random scene.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct MakeScene {
    #[arg(long, default_value = "mover")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    frames: Option<usize>,
    /// Square image resolution.
    #[arg(long)]
    res: Option<u32>,
    #[arg(long)]
    val_count: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "syn_default", conflicts_with = "config")]
    preset: String,
    /// Resolved config written by an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set lambda_r=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Composite,
    Static,
    DynamicWhite,
    Alpha,
    Depth,
    Rho,
}

impl Mode {
    fn file_name(self) -> &'static str {
        match self {
            Mode::Composite => "composite.ppm",
            Mode::Static => "static.ppm",
            Mode::DynamicWhite => "dynamic_white.ppm",
            Mode::Alpha => "alpha.pgm",
            Mode::Depth => "depth.pgm",
            Mode::Rho => "rho.pgm",
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset supplying the pose for `--frame` or `--val`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, requires = "data", conflicts_with_all = ["val", "camera"])]
    frame: Option<usize>,
    #[arg(long, requires = "data", conflicts_with = "camera")]
    val: Option<usize>,
    /// Camera JSON in the dataset's `cameras.json` entry format.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Normalized time; defaults to the frame's time, else 0.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "composite,static,dynamic-white,alpha,depth,rho")]
    mode: Vec<Mode>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    samples_coarse: usize,
    #[arg(long, default_value_t = 64)]
    samples_fine: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Dynamic-alpha threshold for mask extraction.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    #[arg(long, default_value_t = 0.2)]
    shadow_threshold: f64,
    /// Write one CSV row per frame.
    #[arg(long)]
    per_frame: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Lattice resolution per axis.
    #[arg(long, default_value_t = 8)]
    res: usize,
    #[arg(long, default_value_t = 3)]
    slices: usize,
    #[arg(long, default_value_t = 4)]
    rays: usize,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    h: f64,
    #[arg(long, default_value_t = 1e-3)]
    rel_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    abs_tol: f64,
    #[arg(long, default_value_t = 80)]
    probes: usize,
    /// Deliberately corrupt one analytic gradient.
    #[arg(long)]
    corrupt: bool,
}

enum Failure {
    /// A check ran and did not pass.
    Check(String),
    Usage(String),
    Numeric(String),
}

impl From<d2v::Error> for Failure {
    fn from(e: d2v::Error) -> Self {
        match e {
            d2v::Error::NonFinite { .. } => Failure::Numeric(e.to_string()),
            e => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::MakeScene(a) => make_scene(a),
        Command::Train(a) => train_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn make_scene(a: MakeScene) -> Outcome {
    let mut scene = SyntheticScene::preset(&a.preset)?;
    if let Some(n) = a.frames {
        scene.frame_count = n;
    }
    if let Some(r) = a.res {
        scene.width = r;
        scene.height = r;
    }
    if let Some(n) = a.val_count {
        scene.val_count = n;
    }
    let ds = generate_dataset(&scene, &a.out, a.seed)?;
    println!(
        "wrote {} frames and {} validation views ({}x{}) to {}",
        ds.frames.len(),
        ds.val.len(),
        ds.manifest.width,
        ds.manifest.height,
        a.out.display()
    );
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let dataset = Dataset::load(&a.data)?;
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::preset(&a.preset)?,
    };
    config.apply_overrides(&a.overrides)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    fs::create_dir_all(&a.out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", a.out.display())))?;
    write_text(&a.out.join("config.json"), &config.to_json())?;

    let out = RunOutputs { dir: a.out.clone() };
    let outcome = train(&config, &dataset, Some(&out))?;
    if let Some(last) = outcome.history.last() {
        println!("final: {}", last.csv_row());
    }

    let (camera, tau) = match dataset.val.first() {
        Some(v) => (v.camera.clone(), 0.0),
        None => (dataset.frames[0].camera.clone(), dataset.frames[0].tau),
    };
    let views = render_views(&outcome.model, &camera, tau, &RenderSettings::default());
    write_ppm(&a.out.join("contact_sheet.ppm"), &views.contact_sheet())?;
    println!("model written to {}", out.final_model().display());
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Outcome {
    let model = Model::load(&a.checkpoint)?;
    let (camera, default_tau): (Camera, f64) = match (&a.data, a.frame, a.val, &a.camera) {
        (_, _, _, Some(p)) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
            let cam = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("bad camera {}: {e}", p.display())))?;
            (cam, 0.0)
        }
        (Some(dir), frame, val, None) => {
            let ds = Dataset::load(dir)?;
            match (frame, val) {
                (Some(i), _) => {
                    let f = ds.frames.get(i).ok_or_else(|| Failure::Usage(format!("no frame {i}")))?;
                    (f.camera.clone(), f.tau)
                }
                (None, Some(i)) => {
                    let v = ds.val.get(i).ok_or_else(|| Failure::Usage(format!("no validation view {i}")))?;
                    (v.camera.clone(), 0.0)
                }
                (None, None) => (ds.frames[0].camera.clone(), ds.frames[0].tau),
            }
        }
        (None, _, _, None) => return Err(Failure::Usage("give --camera or --data with --frame/--val".into())),
    };
    let tau = a.tau.unwrap_or(default_tau);
    if !(0.0..=1.0).contains(&tau) {
        return Err(Failure::Usage(format!("tau {tau} is outside [0, 1]")));
    }
    let settings = RenderSettings {
        samples_coarse: a.samples_coarse,
        samples_fine: a.samples_fine,
        seed: 0,
    };
    let v = render_views(&model, &camera, tau, &settings);
    fs::create_dir_all(&a.out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", a.out.display())))?;
    for mode in a.mode {
        let path = a.out.join(mode.file_name());
        match mode {
            Mode::Composite => write_ppm(&path, &v.composite)?,
            Mode::Static => write_ppm(&path, &v.static_only)?,
            Mode::DynamicWhite => write_ppm(&path, &v.dynamic_white)?,
            Mode::Alpha => write_scalar_map(&path, v.width, v.height, &v.alpha, 1.0)?,
            Mode::Rho => write_scalar_map(&path, v.width, v.height, &v.rho, 1.0)?,
            Mode::Depth => {
                let far = v.depth.iter().copied().fold(0.0, f64::max);
                write_scalar_map(&path, v.width, v.height, &v.depth, far)?
            }
        }
        println!("{}", path.display());
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Outcome {
    let model = Model::load(&a.checkpoint)?;
    let dataset = Dataset::load(&a.data)?;
    let opts = EvalOptions {
        mask_threshold: a.threshold,
        shadow_threshold: a.shadow_threshold,
        ..EvalOptions::default()
    };
    let report = evaluate_decoupling(&model, &dataset, &opts)?;
    print!("{}", report.table());
    if let Some(p) = &a.per_frame {
        write_text(p, &report.per_frame_csv())?;
    }
    if let Some(p) = &a.json {
        write_text(p, &(report.to_json() + "\n"))?;
    }
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Outcome {
    if a.res < 2 || a.slices < 1 || a.rays == 0 || a.samples < 2 || !(a.h > 0.0) {
        return Err(Failure::Usage("need res >= 2, slices >= 1, rays >= 1, samples >= 2 and h > 0".into()));
    }
    let (model, batch) = random_fixture(a.res, a.slices, a.rays, false, a.seed);
    let mut config = TrainConfig::preset("syn_default")?;
    config.samples_coarse = a.samples;
    config.samples_fine = a.samples;
    config.seed = a.seed;
    let opts = GradCheckOptions {
        h: a.h,
        rel_tol: a.rel_tol,
        abs_tol: a.abs_tol,
        probes_per_block: a.probes,
        seed: a.seed,
        corrupt: a.corrupt,
    };
    let report = gradient_check(&model, &batch, &config, &check_weights(), &opts)?;
    for b in &report.blocks {
        println!(
            "{:<8} probes {:>4} ({:>4} above abs tol)  max rel {:.3e}  max abs {:.3e}  failures {}",
            b.name,
            b.probes.len(),
            b.relative_probes,
            b.max_rel_error,
            b.max_abs_error,
            b.failures
        );
    }
    if report.passed() {
        println!("gradient check passed ({} probes)", report.probe_count());
        return Ok(());
    }
    for (block, p) in report.worst(10) {
        println!(
            "{block:<8} param {:>7}  analytic {:+.6e}  numeric {:+.6e}  rel {:.3e}",
            p.index,
            p.analytic,
            p.numeric,
            p.rel_error()
        );
    }
    Err(Failure::Check(format!(
        "gradient check failed (rel tol {:e}, abs tol {:e})",
        report.rel_tol, report.abs_tol
    )))
}
