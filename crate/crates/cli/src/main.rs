use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use roadcal::image_selection::{overlay, write_utility_csv};
use roadcal::io;
use roadcal::local_map::projection_overlay;
use roadcal::optimizer::{
    encode_repeat_csv, encode_summary_csv, encode_sweep_csv, repeatability, sweep_all, Session,
};
use roadcal::synthetic::{render_dataset, SceneSpec};
use roadcal::{CameraSide, Config, Dataset, Error, Pose6, Result};

#[derive(Parser)]
#[command(name = "roadcal", version, about = "Targetless LiDAR-stereo extrinsic calibration from road markings")]
struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with known extrinsics.
    Generate {
        /// Scene description (TOML); the built-in scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Scale factor for all noise levels; 0 renders a noise-free dataset.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Score every frame and write the utility table and segment overlays.
    Select {
        #[command(flatten)]
        data: DataArgs,
        /// Number of frames to select.
        #[arg(long)]
        images: Option<usize>,
    },
    /// Estimate the camera extrinsic.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        init: InitArgs,
        /// Number of informative frames to calibrate on.
        #[arg(long)]
        images: Option<usize>,
    },
    /// Evaluate all costs along each parameter around a reference pose.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        reference: ReferenceArgs,
        /// Pose the cost inputs are prepared at; the reference when omitted.
        #[command(flatten)]
        init: InitArgs,
        /// Number of informative frames to sweep over.
        #[arg(long)]
        images: Option<usize>,
        /// Explicit frame indices instead of the most informative ones.
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
    },
    /// Calibrate repeatedly from random starts around a reference pose.
    Repeat {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        reference: ReferenceArgs,
        /// Runs per image count.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Project the map onto a stereo frame under a given extrinsic.
    Project {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        reference: ReferenceArgs,
        /// Frame index; the most informative frame when omitted.
        #[arg(long)]
        frame: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Left,
    Right,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "left")]
    camera: Side,
    /// Use precomputed disparity maps from the dataset instead of stereo matching.
    #[arg(long)]
    disparity: bool,
}

#[derive(Args)]
struct InitArgs {
    /// Initial extrinsic `tx,ty,tz,rx,ry,rz` in meters and degrees.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "init_file")]
    init: Option<String>,
    /// Initial extrinsic from a result file.
    #[arg(long)]
    init_file: Option<PathBuf>,
}

#[derive(Args)]
struct ReferenceArgs {
    /// Reference extrinsic `tx,ty,tz,rx,ry,rz` in meters and degrees.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "reference_file")]
    reference: Option<String>,
    /// Reference extrinsic from a result file, e.g. `truth.txt` or a calibration result.
    #[arg(long)]
    reference_file: Option<PathBuf>,
}

fn parse_pose(s: &str) -> Result<Pose6> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("pose {s:?}: expected six comma-separated numbers")))?;
    if v.len() != 6 || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("pose {s:?}: expected six finite numbers")));
    }
    Ok(Pose6::from_degrees(v[0], v[1], v[2], v[3], v[4], v[5]))
}

fn pose_arg(text: &Option<String>, file: &Option<PathBuf>) -> Result<Option<Pose6>> {
    match (text, file) {
        (Some(s), _) => parse_pose(s).map(Some),
        (None, Some(p)) => Ok(Some(io::read_result(p)?.pose)),
        (None, None) => Ok(None),
    }
}

fn required(p: Option<Pose6>, flag: &str) -> Result<Pose6> {
    p.ok_or_else(|| Error::Config(format!("--{flag} or --{flag}-file is required")))
}

fn side(s: Side) -> CameraSide {
    match s {
        Side::Left => CameraSide::Left,
        Side::Right => CameraSide::Right,
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    Ok(c)
}

fn load_dataset(d: &DataArgs) -> Result<Dataset> {
    let ds = Dataset::load(&d.dataset, d.disparity)?;
    log::info!(
        "dataset {}: {} frames, {} scans",
        d.dataset.display(),
        ds.frames.len(),
        ds.scans.len()
    );
    Ok(ds)
}

fn run(cli: &Cli) -> Result<()> {
    let mut config = load_config(cli)?;
    match &cli.command {
        Command::Generate { spec, noise } => {
            let mut s = match spec {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    SceneSpec::from_toml(&text)?
                }
                None => SceneSpec::default(),
            };
            if let Some(f) = noise {
                if !(*f >= 0.0 && f.is_finite()) {
                    return Err(Error::Config(format!("--noise must be a finite scale >= 0, got {f}")));
                }
                s.noise.range_sigma *= f;
                s.noise.intensity_sigma *= f;
                s.noise.gray_sigma *= f;
            }
            log::info!("rendering with seed {}", config.seed);
            let ds = render_dataset(&s, config.seed)?;
            ds.write(&cli.out)?;
            log::info!(
                "wrote {} frames and {} scans to {}",
                ds.dataset.frames.len(),
                ds.dataset.scans.len(),
                cli.out.display()
            );
        }
        Command::Select { data, images } => {
            if let Some(k) = images {
                config.images = *k;
            }
            let ds = load_dataset(data)?;
            let session = Session::new(&ds, side(data.camera), &config)?;
            let selected = session.select(config.images)?;
            create_dir(&cli.out.join("overlays"))?;
            write_utility_csv(&cli.out.join("utility.csv"), &session.utilities(), &selected)?;
            for a in &session.analyses {
                if let Some(v) = &a.vanishing {
                    let img = roadcal::optimizer::side_image(&ds.frames[a.frame_id], session.side);
                    io::write_ppm(
                        &cli.out.join("overlays").join(format!("frame_{:04}.ppm", a.frame_id)),
                        &overlay(img, &a.segments, v),
                    )?;
                }
            }
            println!("selected frames {selected:?}");
        }
        Command::Calibrate { data, init, images } => {
            if let Some(k) = images {
                config.images = *k;
            }
            let init = required(pose_arg(&init.init, &init.init_file)?, "init")?;
            let ds = load_dataset(data)?;
            let session = Session::new(&ds, side(data.camera), &config)?;
            let r = session.calibrate(&init, config.images)?;
            create_dir(&cli.out)?;
            write(&cli.out.join("result.txt"), io::encode_result(&r.record()).as_bytes())?;
            print!("{}", io::encode_result(&r.record()));
        }
        Command::Sweep {
            data,
            reference,
            init,
            images,
            frames,
        } => {
            if let Some(k) = images {
                config.images = *k;
            }
            let reference = required(
                pose_arg(&reference.reference, &reference.reference_file)?,
                "reference",
            )?;
            let prepare_at = pose_arg(&init.init, &init.init_file)?.unwrap_or(reference);
            let ds = load_dataset(data)?;
            let session = Session::new(&ds, side(data.camera), &config)?;
            let ids = if frames.is_empty() {
                session.select(config.images)?
            } else {
                frames.clone()
            };
            log::info!("sweeping with frames {ids:?}");
            let problem = session.problem(&ids, &prepare_at)?;
            let rows = sweep_all(&problem, &reference, &config.sweep);
            create_dir(&cli.out)?;
            write(&cli.out.join("sweep.csv"), &encode_sweep_csv(&rows)?)?;
        }
        Command::Repeat { data, reference, runs } => {
            if let Some(n) = runs {
                config.repeat.runs = *n;
            }
            config.validate()?;
            let reference = required(
                pose_arg(&reference.reference, &reference.reference_file)?,
                "reference",
            )?;
            let ds = load_dataset(data)?;
            let session = Session::new(&ds, side(data.camera), &config)?;
            let report = repeatability(&session, &reference, &config.repeat, &config.nelder_mead(), config.seed)?;
            create_dir(&cli.out)?;
            write(&cli.out.join("repeat.csv"), &encode_repeat_csv(&report)?)?;
            write(&cli.out.join("repeat_summary.csv"), &encode_summary_csv(&report)?)?;
        }
        Command::Project { data, reference, frame } => {
            let pose = required(
                pose_arg(&reference.reference, &reference.reference_file)?,
                "reference",
            )?;
            let ds = load_dataset(data)?;
            let session = Session::new(&ds, side(data.camera), &config)?;
            let id = match frame {
                Some(f) => *f,
                None => session.select(1)?[0],
            };
            let lidar = session.project(id, &pose)?;
            let gray = roadcal::optimizer::side_image(&ds.frames[id], session.side);
            create_dir(&cli.out)?;
            let path = cli.out.join(format!("project_{id:04}.ppm"));
            io::write_ppm(&path, &projection_overlay(gray, &lidar))?;
            log::info!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
