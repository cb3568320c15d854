use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use amodal_vis::metrics::evaluate;
use amodal_vis::pipeline::{
    checkpoint_path, infer, is_prediction_dir, read_tracks, render_overlays, train, write_tracks, Checkpoint, GenerateConfig, Model,
    RunConfig, TrackSet,
};
use amodal_vis::synthgen::{generate_dataset, list_videos, read_dataset, read_video, write_dataset, VideoSample, MANIFEST_NAME};
use amodal_vis::{Error, Result};

#[derive(Parser)]
#[command(name = "amodal-vis", version, about = "Amodal video instance segmentation on synthetic occlusion videos")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into OUT/train and OUT/test.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; checkpoints are written to OUT.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint produced with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict tracks for one video directory or every video under a dataset root.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth and write an evaluation report.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Path of the JSON report; the text table goes to stdout.
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Draw predicted tracks over the frames of a video.
    Render {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn is_video_dir(dir: &Path) -> bool {
    dir.join(MANIFEST_NAME).exists() && !is_prediction_dir(dir)
}

fn load_videos(path: &Path) -> Result<Vec<(String, VideoSample)>> {
    let dirs = if is_video_dir(path) { vec![path.to_path_buf()] } else { list_videos(path)? };
    if dirs.is_empty() {
        return Err(Error::InvalidInput(format!("no videos found under {}", path.display())));
    }
    dirs.iter().map(|d| Ok((dir_name(d), read_video(d)?))).collect()
}

fn dir_name(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = match config {
                Some(p) => GenerateConfig::from_file(&p)?,
                None => GenerateConfig::default(),
            };
            let train_set = generate_dataset(&cfg.scene, cfg.train_videos, cfg.seed)?;
            let test_set = generate_dataset(&cfg.scene, cfg.test_videos, cfg.seed + cfg.train_videos as u64)?;
            write_dataset(&train_set, &out.join("train"))?;
            write_dataset(&test_set, &out.join("test"))?;
            println!("wrote {} train and {} test videos to {}", train_set.len(), test_set.len(), out.display());
        }
        Command::Train { config, out, resume } => {
            let cfg = RunConfig::from_file(&config)?;
            let root = cfg
                .data
                .train_dir
                .clone()
                .ok_or_else(|| Error::Config("data.train_dir must be set for training".into()))?;
            let videos = read_dataset(&root)?;
            if videos.is_empty() {
                return Err(Error::InvalidInput(format!("no training videos under {}", root.display())));
            }
            let ckpt = resume.map(|p| Checkpoint::load(&p)).transpose()?;
            let (trainer, losses) = train(&cfg, &videos, Some(&out), ckpt.as_ref())?;
            let last = losses.last().copied().unwrap_or(f64::NAN);
            println!("trained {} steps, final loss {last:.6}, checkpoint {}", trainer.step, checkpoint_path(&out).display());
        }
        Command::Infer { checkpoint, video, out } => {
            let model = Model::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            if is_video_dir(&video) {
                let set = infer(&model, &read_video(&video)?)?;
                write_tracks(&set, &out)?;
                println!("{} tracks written to {}", set.tracks.len(), out.display());
            } else {
                let videos = load_videos(&video)?;
                for (name, v) in &videos {
                    write_tracks(&infer(&model, v)?, &out.join(name))?;
                }
                println!("predictions for {} videos written to {}", videos.len(), out.display());
            }
        }
        Command::Eval { pred, gt, metrics } => {
            let videos = load_videos(&gt)?;
            let single = is_video_dir(&gt);
            let mut preds = Vec::with_capacity(videos.len());
            let mut gts = Vec::with_capacity(videos.len());
            for (name, v) in &videos {
                let dir = if single { pred.clone() } else { pred.join(name) };
                preds.push(read_tracks(&dir)?);
                gts.push(TrackSet::from_ground_truth(v));
            }
            let report = evaluate(&preds, &gts)?;
            if let Some(parent) = metrics.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|source| Error::Io { path: parent.to_path_buf(), source })?;
            }
            fs::write(&metrics, serde_json::to_string_pretty(&report)?).map_err(|source| Error::Io { path: metrics.clone(), source })?;
            print!("{}", report.to_table());
        }
        Command::Render { pred, video, out } => {
            let tracks = read_tracks(&pred)?;
            let files = render_overlays(&read_video(&video)?, &tracks, &out)?;
            println!("{} frames written to {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
