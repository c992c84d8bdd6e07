use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dualfusion::pipeline::diagnostics::{gradcheck_suite, GradModule};
use dualfusion::pipeline::io::{load_scene, save_scene};
use dualfusion::pipeline::kitti::{load_kitti_calib, load_kitti_velodyne};
use dualfusion::pipeline::{
    overfit_probe, resolve_seed, run_pipeline, synth_scene, synthetic_images, PipelineConfig, SceneInput, SEED_ENV,
};
use dualfusion::tensor::gradcheck::GradCheckConfig;
use dualfusion::{Error, Result};

#[derive(Parser)]
#[command(name = "dualfusion", version, about = "Camera-LiDAR dual-query fusion on desk-scale scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random scene file.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        points: usize,
        #[arg(long, default_value_t = 1)]
        cameras: usize,
        #[arg(long)]
        out: PathBuf,
        /// Grid, channels and camera geometry; the toy preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the pipeline on a scene file and dump every stage.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        dump_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the pipeline on a KITTI Velodyne scan with its calibration.
    Kitti {
        #[arg(long)]
        velodyne: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dump_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a random BEV target and print the loss curve.
    Probe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// Defaults to the config's probe learning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare reverse-mode gradients with central differences.
    Gradcheck {
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Print a preset configuration.
    Config {
        #[arg(long, value_enum, default_value_t = Preset::Toy)]
        preset: Preset,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Kitti,
}

fn load_config(path: &Path, flag_seed: Option<u64>) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(path)?;
    let env = std::env::var(SEED_ENV).ok();
    config.seed = resolve_seed(flag_seed, env.as_deref(), config.seed)?;
    Ok(config)
}

fn run_scene(config: &PipelineConfig, scene: &SceneInput, dump_dir: &Path) -> Result<()> {
    let out = run_pipeline(config, scene)?;
    out.write_dumps(dump_dir)?;
    let r = &out.report;
    println!(
        "voxels {} (valid {}), points {} (dropped {}), bev {:?} -> {}",
        r.voxels,
        r.valid_queries,
        r.points,
        r.points_dropped,
        r.bev_shape,
        dump_dir.display()
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { seed, points, cameras, out, config } => {
            let config = match config {
                Some(p) => PipelineConfig::load(&p)?,
                None => PipelineConfig::toy(),
            };
            let scene = synth_scene(seed, points, cameras, &config)?;
            save_scene(&scene, &out)?;
            println!("{} points, {} cameras -> {}", scene.cloud.len(), scene.cameras.len(), out.display());
        }
        Command::Run { config, scene, dump_dir, seed } => {
            let config = load_config(&config, seed)?;
            run_scene(&config, &load_scene(&scene)?, &dump_dir)?;
        }
        Command::Kitti { velodyne, calib, config, dump_dir, seed } => {
            let config = load_config(&config, seed)?;
            let cloud = load_kitti_velodyne(&velodyne)?;
            let cameras = load_kitti_calib(&calib)?;
            let images = synthetic_images(&cameras, config.camera_channels, config.seed)?;
            run_scene(&config, &SceneInput { cloud, cameras, images }, &dump_dir)?;
        }
        Command::Probe { config, steps, lr, seed } => {
            let config = load_config(&config, seed)?;
            let lr = lr.unwrap_or(config.probe.lr);
            let curve = overfit_probe(&config, config.seed, steps, lr)?;
            for (i, loss) in curve.iter().enumerate() {
                println!("{i}\t{loss:.9e}");
            }
            let last = curve[curve.len() - 1];
            eprintln!("loss {:.6e} -> {:.6e} (ratio {:.4})", curve[0], last, last / curve[0]);
        }
        Command::Gradcheck { module, seeds } => {
            let modules = if module == "all" { GradModule::ALL.to_vec() } else { vec![module.parse()?] };
            let mut failed = Vec::new();
            for m in modules {
                let r = gradcheck_suite(m, 0..seeds, GradCheckConfig::default())?;
                let pass = r.max_rel_error < 1e-6;
                println!(
                    "{:<11} {} instances {:>6} entries  max rel error {:.3e} (seed {})  {}",
                    m.name(),
                    r.instances,
                    r.checked,
                    r.max_rel_error,
                    r.worst_seed,
                    if pass { "ok" } else { "FAIL" }
                );
                if !pass {
                    failed.push(m.name());
                }
            }
            if !failed.is_empty() {
                return Err(Error::InvalidArgument(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
        Command::Config { preset } => {
            let config = match preset {
                Preset::Toy => PipelineConfig::toy(),
                Preset::Kitti => PipelineConfig::kitti(),
            };
            println!("{}", config.to_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
