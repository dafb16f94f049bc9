//! `rayq`: file-based driver for every pipeline stage.
//!
//! Exit codes: 0 success, 1 usage error, 2 malformed input file,
//! 3 invariant violation.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rayq::config::PipelineConfig;
use rayq::lift_splat::{lift_splat_multi, BevFeatureMap, DepthDistribution, ImageFeatureMap};
use rayq::matching::{cost_matrix, hungarian_assign, CostMatrix, GroundTruth, Prediction};
use rayq::pipeline::{build_queries, query_centers, read_jsonl, sample_frames, write_jsonl, FrameInputs};
use rayq::query::Query;
use rayq::sampling::{Branch, ParameterProvider, SamplingPoint, SeededProvider, UniformProvider};
use rayq::sim::{dispersion_experiment, evaluate, foreground_coverage, generate_scene, DispersionReport, Scene};
use rayq::tensor::Tensor;

#[derive(Parser, Debug)]
#[command(name = "rayq", version, about = "Ray-centric multi-camera query pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON pipeline config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Tensor,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene with oracle depth, id features and 2D boxes.
    GenScene {
        #[command(flatten)]
        common: Common,
    },
    /// Write base and foreground queries as JSONL.
    InitQueries {
        #[command(flatten)]
        common: Common,
        /// Scene providing 2D boxes; generated from the seed when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Lift per-view features into a BEV map.
    LiftSplat {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        /// Directory holding the feature and depth tensors; defaults to the
        /// scene's directory.
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tensor")]
        format: Format,
    },
    /// Sample BEV and image features along each query's ray segment.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tensor")]
        format: Format,
        /// Use hashed pseudo-random sampling parameters instead of uniform ones.
        #[arg(long)]
        provider_seed: Option<u64>,
    },
    /// Hungarian assignment of predictions to ground truths.
    Assign {
        #[command(flatten)]
        common: Common,
        /// Cost matrix as a JSON array of rows.
        #[arg(long, conflicts_with_all = ["preds", "gts"])]
        matrix: Option<PathBuf>,
        #[arg(long)]
        preds: Option<PathBuf>,
        #[arg(long)]
        gts: Option<PathBuf>,
    },
    /// Center-distance detection metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        preds: PathBuf,
        /// Ground truth JSONL; defaults to the scene objects.
        #[arg(long)]
        gts: Option<PathBuf>,
        /// Scene used for ground truth and foreground recall.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Image-space dispersion of radial versus grid query layouts.
    Dispersion {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds starting at the config seed.
        #[arg(long, default_value_t = 10)]
        scenes: u64,
        /// Pixel distance under which two projections count as close.
        #[arg(long)]
        threshold_px: Option<f64>,
    },
}

enum Failure {
    Usage(String),
    Lib(rayq::Error),
}

impl From<rayq::Error> for Failure {
    fn from(e: rayq::Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RAYFORMER_LOG", "warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}

fn load_config(common: &Common) -> CliResult<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<PipelineConfig>(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common) -> CliResult<&Path> {
    fs::create_dir_all(&common.out)?;
    Ok(&common.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn read_jsonl_file<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    Ok(read_jsonl(BufReader::new(fs::File::open(path)?))?)
}

fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_jsonl(&mut w, items)?;
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn save_tensor(path: &Path, shape: Vec<usize>, data: &[f64]) -> CliResult<()> {
    Tensor::from_f64(shape, data)?.save(path)?;
    Ok(())
}

fn feature_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("features_{view}.tensor"))
}

fn depth_dist_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("depth_dist_{view}.tensor"))
}

fn inputs_dir(scene: &Path, inputs: &Option<PathBuf>) -> PathBuf {
    inputs
        .clone()
        .unwrap_or_else(|| scene.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn expect_rank3(t: &Tensor, path: &Path) -> CliResult<(usize, usize, usize)> {
    match t.shape[..] {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(rayq::Error::Format(format!("{}: expected a rank-3 tensor, got shape {:?}", path.display(), t.shape)).into()),
    }
}

/// Frame-0 inputs read from the tensors written by `gen-scene`.
fn load_frame(cfg: &PipelineConfig, scene: &Scene, dir: &Path) -> CliResult<FrameInputs> {
    let mut features = Vec::new();
    let mut depths = Vec::new();
    for view in 0..scene.cameras.len() {
        let fp = feature_path(dir, view);
        let ft = Tensor::load(&fp)?;
        let (h, w, c) = expect_rank3(&ft, &fp)?;
        features.push(ImageFeatureMap::new(view, 0, h, w, c, scene.feature_stride, ft.to_f64())?);
        let dp = depth_dist_path(dir, view);
        let dt = Tensor::load(&dp)?;
        let (dh, dw, k) = expect_rank3(&dt, &dp)?;
        if k != cfg.depth.num_bins() {
            return Err(rayq::Error::Shape(format!(
                "{} has {k} depth bins, config expects {}",
                dp.display(),
                cfg.depth.num_bins()
            ))
            .into());
        }
        depths.push(DepthDistribution::new(dh, dw, k, dt.to_f64())?);
    }
    Ok(FrameInputs {
        cameras: scene.cameras.clone(),
        features,
        depths,
    })
}

#[derive(Serialize)]
struct BevJson<'a> {
    extent: f64,
    resolution: usize,
    channels: usize,
    /// `[ix][iy][c]` row-major.
    data: &'a [f64],
}

#[derive(Serialize)]
struct PointRecord<'a> {
    branch: Branch,
    #[serde(flatten)]
    point: &'a SamplingPoint,
}

#[derive(Serialize)]
struct SampledJson<'a> {
    bev: &'a [Vec<f64>],
    image: &'a [Vec<f64>],
    fused: &'a [Vec<f64>],
}

#[derive(Serialize)]
struct SeedDispersion {
    seed: u64,
    #[serde(flatten)]
    report: DispersionReport,
}

#[derive(Serialize)]
struct DispersionSummary {
    threshold_px: f64,
    num_scenes: usize,
    radial_below_grid_on_every_seed: bool,
    scenes: Vec<SeedDispersion>,
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenScene { common } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let scene = generate_scene(cfg.seed, &cfg.scene)?;
            write_json(&out.join("scene.json"), &scene)?;
            for (view, r) in scene.views().iter().enumerate() {
                let depth: Vec<f64> = r.depth.iter().map(|d| d.unwrap_or(0.0)).collect();
                save_tensor(&out.join(format!("depth_{view}.tensor")), vec![r.rows, r.cols], &depth)?;
                let f = scene.id_feature_map(view)?;
                save_tensor(&feature_path(out, view), vec![f.height(), f.width(), f.channels()], f.data())?;
                let d = scene.depth_distribution(view, &cfg.depth)?;
                save_tensor(&depth_dist_path(out, view), vec![d.height(), d.width(), d.bins()], d.data())?;
            }
        }
        Command::InitQueries { common, scene } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let scene: Scene = match scene {
                Some(p) => read_json(&p)?,
                None => generate_scene(cfg.seed, &cfg.scene)?,
            };
            let queries = build_queries(&cfg, &scene.boxes2d, &scene.cameras)?;
            write_jsonl_file(&out.join("queries.jsonl"), &queries)?;
        }
        Command::LiftSplat {
            common,
            scene,
            inputs,
            format,
        } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let s: Scene = read_json(&scene)?;
            let f = load_frame(&cfg, &s, &inputs_dir(&scene, &inputs))?;
            let bev = lift_splat_multi(&f.cameras, &f.features, &f.depths, &cfg.depth, &cfg.bev)?;
            write_bev(out, &bev, format)?;
        }
        Command::Sample {
            common,
            scene,
            queries,
            inputs,
            format,
            provider_seed,
        } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let s: Scene = read_json(&scene)?;
            let qs: Vec<Query> = read_jsonl_file(&queries)?;
            let first = load_frame(&cfg, &s, &inputs_dir(&scene, &inputs))?;
            let provider: Box<dyn ParameterProvider> = match provider_seed {
                Some(seed) => Box::new(SeededProvider {
                    seed,
                    offset_scale: 0.5,
                }),
                None => Box::new(UniformProvider),
            };
            let sampled = sample_frames(&cfg, &s, first, &qs, provider.as_ref())?;
            let records: Vec<PointRecord> = sampled
                .bev_points
                .iter()
                .map(|p| PointRecord {
                    branch: Branch::Bev,
                    point: p,
                })
                .chain(sampled.image_points.iter().map(|p| PointRecord {
                    branch: Branch::Image,
                    point: p,
                }))
                .collect();
            write_jsonl_file(&out.join("sampling_points.jsonl"), &records)?;
            match format {
                Format::Json => write_json(
                    &out.join("sampled.json"),
                    &SampledJson {
                        bev: &sampled.bev,
                        image: &sampled.image,
                        fused: &sampled.fused,
                    },
                )?,
                Format::Tensor => {
                    let c = sampled.fused.first().map_or(0, Vec::len);
                    let mut data = Vec::with_capacity(qs.len() * 3 * c);
                    for n in 0..qs.len() {
                        data.extend_from_slice(&sampled.bev[n]);
                        data.extend_from_slice(&sampled.image[n]);
                        data.extend_from_slice(&sampled.fused[n]);
                    }
                    save_tensor(&out.join("sampled.tensor"), vec![qs.len(), 3, c], &data)?;
                }
            }
        }
        Command::Assign {
            common,
            matrix,
            preds,
            gts,
        } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let m = match (matrix, preds, gts) {
                (Some(path), None, None) => {
                    let rows: Vec<Vec<f64>> = read_json(&path)?;
                    CostMatrix::from_rows(&rows)
                        .map_err(|e| rayq::Error::Format(format!("{}: {e}", path.display())))?
                }
                (None, Some(p), Some(g)) => {
                    let preds: Vec<Prediction> = read_jsonl_file(&p)?;
                    let gts: Vec<GroundTruth> = read_jsonl_file(&g)?;
                    cost_matrix(&preds, &gts, &cfg.cost)?
                }
                _ => return Err(Failure::Usage("assign needs either --matrix or both --preds and --gts".into())),
            };
            write_json(&out.join("assignment.json"), &hungarian_assign(&m)?)?;
        }
        Command::Eval {
            common,
            preds,
            gts,
            scene,
        } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let scene: Option<Scene> = scene.map(|p| read_json(&p)).transpose()?;
            let gts: Vec<GroundTruth> = match (&gts, &scene) {
                (Some(p), _) => read_jsonl_file(p)?,
                (None, Some(s)) => s.objects.clone(),
                (None, None) => return Err(Failure::Usage("eval needs --gts or --scene".into())),
            };
            let preds: Vec<Prediction> = read_jsonl_file(&preds)?;
            let mut metrics = evaluate(&preds, &gts)?;
            if let Some(s) = &scene {
                let probe = rayq::pipeline::midpoint_probe(&cfg);
                let cov = foreground_coverage(s, &cfg.foreground.rays, probe, cfg.foreground.budget)?;
                metrics.foreground_recall = Some(cov.recall);
            }
            write_json(&out.join("metrics.json"), &metrics)?;
        }
        Command::Dispersion {
            common,
            scenes,
            threshold_px,
        } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let threshold = threshold_px.unwrap_or(cfg.dispersion_threshold_px);
            let radial = query_centers(&rayq::query::init_base_queries(&cfg.layout, &cfg.template, 0)?)?;
            let mut reports = Vec::new();
            for seed in cfg.seed..cfg.seed + scenes {
                let scene = generate_scene(seed, &cfg.scene)?;
                let grid = scene.seeded_grid(radial.len(), cfg.layout.max_depth, cfg.template.z)?;
                let report = dispersion_experiment(&scene.cameras, &radial, &grid, threshold)?;
                reports.push(SeedDispersion { seed, report });
            }
            let all = reports.iter().all(|r| r.report.radial_fraction < r.report.grid_fraction);
            write_json(
                &out.join("dispersion.json"),
                &DispersionSummary {
                    threshold_px: threshold,
                    num_scenes: reports.len(),
                    radial_below_grid_on_every_seed: all,
                    scenes: reports,
                },
            )?;
        }
    }
    Ok(())
}

fn write_bev(out: &Path, bev: &BevFeatureMap, format: Format) -> CliResult<()> {
    let n = bev.spec().resolution();
    match format {
        Format::Tensor => save_tensor(&out.join("bev.tensor"), vec![n, n, bev.channels()], bev.data()),
        Format::Json => write_json(
            &out.join("bev.json"),
            &BevJson {
                extent: bev.spec().extent(),
                resolution: n,
                channels: bev.channels(),
                data: bev.data(),
            },
        ),
    }
}
