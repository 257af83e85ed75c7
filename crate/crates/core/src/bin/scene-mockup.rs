//! Command-line front end for the scene mockup library.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use scene_mockup::fitting::write_trace;
use scene_mockup::harness::{
    default_camera, default_template, generate_scenes, render_scene, run_experiment_detailed, tune,
    ArrangementSpec, Condition, ExperimentConfig, Layout, DEFAULT_MAP_SIZE, DEFAULT_MODELS,
};
use scene_mockup::io::{
    read_json, read_json_dir, read_kpm_file, write_json, write_kpm_file, SceneFile,
};
use scene_mockup::keypoint_maps::{default_sigma, read_kpm_header};
use scene_mockup::metrics::{evaluate_pooled, sweep_csv, threshold_sweep, Thresholds};
use scene_mockup::scene_stats::{
    extract_pairs, fit_gmm, PairwiseGmm, DEFAULT_COMPONENTS, DEFAULT_DELTA_R,
};
use scene_mockup::selection::{fit_candidates, infer_from_cache, InferenceConfig};
use scene_mockup::template::TemplateModel;
use scene_mockup::{Error, Result};

#[derive(Parser)]
#[command(
    name = "scene-mockup",
    version,
    about = "Recover 3D object arrangements from keypoint maps"
)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON configuration for the command.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a deformable template from a procedural chair database.
    GenTemplates {
        #[arg(long, default_value_t = DEFAULT_MODELS)]
        models: usize,
    },
    /// Generate ground-truth scenes into a directory.
    GenScenes {
        #[arg(long, value_enum, default_value = "row")]
        layout: LayoutArg,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        min_objects: usize,
        #[arg(long, default_value_t = 5)]
        max_objects: usize,
        #[arg(long)]
        template: PathBuf,
    },
    /// Render a scene's keypoint maps, optionally dropping keypoints.
    RenderMaps {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        /// Fraction of each object's keypoints to drop.
        #[arg(long, default_value_t = 0.0)]
        drop: f64,
    },
    /// Fit the relative-pose mixture to a directory of scenes.
    FitGmm {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
        components: usize,
        #[arg(long, default_value_t = DEFAULT_DELTA_R)]
        delta_r: f64,
    },
    /// Recover a scene from keypoint maps.
    Infer(InferArgs),
    /// Score result scenes against ground truth.
    Evaluate {
        /// Result scene file or directory.
        #[arg(long)]
        result: PathBuf,
        /// Ground-truth scene file or directory.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = Thresholds::default().tau_j)]
        tau_j: f64,
        #[arg(long, default_value_t = Thresholds::default().tau_theta_deg)]
        tau_theta: f64,
        #[arg(long, default_value_t = 1)]
        symmetry: u32,
    },
    /// Run the occlusion-binned ablation experiment.
    Experiment,
    /// Random-search the inference hyperparameters.
    Tune {
        #[arg(long, default_value_t = 20)]
        budget: usize,
    },
    /// Print the header of a keypoint map file.
    KpmInfo {
        #[arg(long)]
        maps: PathBuf,
    },
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    gmm: Option<PathBuf>,
    #[arg(long)]
    no_pairwise: bool,
    #[arg(long)]
    single_iteration: bool,
    /// Write LM steps of every map refinement as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LayoutArg {
    Row,
    FacingPairs,
    RingAroundTable,
    RandomScatter,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Row => Layout::Row,
            LayoutArg::FacingPairs => Layout::FacingPairs,
            LayoutArg::RingAroundTable => Layout::RingAroundTable,
            LayoutArg::RandomScatter => Layout::RandomScatter,
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref()
        .ok_or_else(|| Error::InvalidInput("this command needs --out".into()))
}

/// Writes JSON to `--out`, or to stdout when it is absent.
fn emit<T: serde::Serialize>(out: &Option<PathBuf>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value)?;
            writeln!(stdout)?;
            Ok(())
        }
    }
}

fn scenes_at(path: &Path) -> Result<Vec<SceneFile>> {
    if path.is_dir() {
        read_json_dir(path)
    } else {
        Ok(vec![read_json(path)?])
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTemplates { models } => emit(&cli.out, &default_template(models, cli.seed)?),
        Command::GenScenes {
            layout,
            count,
            min_objects,
            max_objects,
            template,
        } => {
            let template: TemplateModel = read_json(&template)?;
            let spec = match &cli.config {
                Some(p) => read_json(p)?,
                None => ArrangementSpec::new(layout.into(), min_objects, max_objects, cli.seed),
            };
            let dir = require_out(&cli.out)?;
            fs::create_dir_all(dir)?;
            let camera = default_camera(DEFAULT_MAP_SIZE);
            for (i, scene) in generate_scenes(&spec, &template, &camera, count)?
                .iter()
                .enumerate()
            {
                write_json(&dir.join(format!("scene_{i:04}.json")), scene)?;
            }
            Ok(())
        }
        Command::RenderMaps {
            scene,
            template,
            sigma,
            drop,
        } => {
            let scene: SceneFile = read_json(&scene)?;
            let template: TemplateModel = read_json(&template)?;
            let sigma = sigma.unwrap_or_else(|| default_sigma(scene.camera.map_size().0));
            let drops = vec![drop; scene.objects.len()];
            let maps = render_scene(&scene, &template, sigma, &drops, cli.seed)?;
            write_kpm_file(require_out(&cli.out)?, &maps)
        }
        Command::FitGmm {
            scenes,
            components,
            delta_r,
        } => {
            let scenes: Vec<SceneFile> = read_json_dir(&scenes)?;
            let placements: Vec<_> = scenes.iter().map(SceneFile::placements).collect();
            let gmm = fit_gmm(&extract_pairs(&placements, delta_r), components, cli.seed)?;
            emit(&cli.out, &gmm)
        }
        Command::Infer(args) => infer(&cli.config, &cli.out, args),
        Command::Evaluate {
            result,
            gt,
            tau_j,
            tau_theta,
            symmetry,
        } => {
            let th = Thresholds {
                tau_j,
                tau_theta_deg: tau_theta,
                symmetry_order: symmetry,
            };
            let (results, truths) = (scenes_at(&result)?, scenes_at(&gt)?);
            if results.len() != truths.len() {
                return Err(Error::InvalidInput(format!(
                    "{} result scenes for {} ground-truth scenes",
                    results.len(),
                    truths.len()
                )));
            }
            let pairs: Vec<_> = results
                .iter()
                .zip(&truths)
                .map(|(r, g)| (r.to_eval(), g.to_eval()))
                .collect();
            emit(&cli.out, &evaluate_pooled(&pairs, &th))
        }
        Command::Experiment => {
            let mut config: ExperimentConfig = load_config(&cli.config)?;
            if cli.config.is_none() {
                config.seed = cli.seed;
            }
            let (report, runs) = run_experiment_detailed(&config)?;
            match &cli.out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    write_json(&dir.join("report.json"), &report)?;
                    fs::write(dir.join("report.csv"), report.to_csv())?;
                    let pairs: Vec<_> = runs
                        .iter()
                        .flatten()
                        .map(|r| r.eval_pair(Condition::Full))
                        .collect();
                    let grid = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
                    let angles = [5.0, 10.0, 15.0, 20.0, 30.0, 45.0];
                    let sweep =
                        threshold_sweep(&pairs, &grid, &angles, config.thresholds.symmetry_order);
                    fs::write(dir.join("sweep.csv"), sweep_csv(&sweep))?;
                    Ok(())
                }
                None => emit(&None, &report),
            }
        }
        Command::Tune { budget } => {
            let config: ExperimentConfig = load_config(&cli.config)?;
            emit(&cli.out, &tune(&config, budget, cli.seed)?)
        }
        Command::KpmInfo { maps } => {
            let header = read_kpm_header(&mut fs::File::open(&maps)?)?;
            // a full read validates the payload too
            read_kpm_file(&maps)?;
            emit(&None, &header)
        }
    }
}

fn infer(config: &Option<PathBuf>, out: &Option<PathBuf>, args: InferArgs) -> Result<()> {
    let mut inference: InferenceConfig = load_config(config)?;
    if args.no_pairwise {
        inference = inference.without_pairwise();
    }
    if args.single_iteration {
        inference = inference.single_iteration();
    }
    inference.record_trace = args.trace.is_some();
    let maps = read_kpm_file(&args.maps)?;
    let camera: scene_mockup::geometry::Camera = read_json(&args.camera)?;
    let camera = camera.with_map_size((maps.width() as u32, maps.height() as u32))?;
    let template: TemplateModel = read_json(&args.template)?;
    let gmm: Option<PairwiseGmm> = args.gmm.as_deref().map(read_json).transpose()?;
    if inference.use_pairwise && gmm.is_none() {
        log::warn!("no mixture given; running without pairwise terms");
    }

    let cache = fit_candidates(&maps, &camera, &template, &inference)?;
    if let Some(path) = &args.trace {
        let mut file = std::io::BufWriter::new(fs::File::create(path)?);
        for (i, fit) in cache.refined.iter().enumerate() {
            write_trace(&mut file, &format!("refine-{i}"), &fit.trace)?;
        }
    }
    let estimate = infer_from_cache(&cache, &maps, &camera, &template, gmm.as_ref(), &inference)?;
    emit(out, &SceneFile::from_estimate(&estimate, &camera))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
