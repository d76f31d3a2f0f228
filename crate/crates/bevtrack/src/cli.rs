//! Subcommands of the `bevtrack` binary.

use std::path::{Path, PathBuf};

use bevtrack_core::affinity::CrossAttention;
use bevtrack_core::detect::DEFAULT_THETA;
use bevtrack_core::metrics::{evaluate, MotReport, DEFAULT_RADIUS};
use bevtrack_core::pipeline::{Pipeline, PipelineConfig};
use bevtrack_core::tokens::DEFAULT_CHANNELS;
use bevtrack_core::tracker::{AssociationConfig, KalmanFilter};
use clap::{Args, Parser, Subcommand};
use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::{
    format_tracks, read_gt, read_scene_config, read_tracks, write_scene, write_text, AssociationFile,
    CalibrationDoc, FrameDoc, WeightsDoc,
};
use crate::plot::{render_svg, PlotOptions};
use crate::simulator::{corrupt, generate};

/// Environment variable holding the log filter (`error`, `warn`, `info`,
/// `debug`, `trace`).
pub const LOG_ENV: &str = "BEVTRACK_LOG";

#[derive(Debug, Parser)]
#[command(name = "bevtrack", version, about = "Multi-view BEV pedestrian tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene: calibration, frames and ground truth.
    Simulate(SimulateArgs),
    /// Track pedestrians through a directory of frame files.
    Track(TrackArgs),
    /// Score a track file against ground truth.
    Eval(EvalArgs),
    /// Draw trajectories as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene config (TOML); absent fields take their defaults.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Directory of frame files (`*.json`).
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    /// Affinity weights; the reference kernel is used when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Association config (TOML) with AssociationConfig field names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Detection threshold.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Weight of the affinity distance in the stage-1 cost.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Stage-1 matching threshold.
    #[arg(long)]
    pub tau1: Option<f64>,
    /// Stage-2 matching threshold, meters.
    #[arg(long)]
    pub tau2: Option<f64>,
    /// Frames a lost track is kept.
    #[arg(long)]
    pub retention: Option<u32>,
    /// Worker threads for reading frames (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub tracks: PathBuf,
    /// Match radius, meters.
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    pub radius: f64,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    /// Ground truth drawn underneath as dashed lines.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = PlotOptions::default().width)]
    pub width: u32,
    #[arg(long, default_value_t = PlotOptions::default().height)]
    pub height: u32,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Track(a) => track(&a).map(|_| ()),
        Command::Eval(a) => {
            print!("{}", eval(&a)?);
            Ok(())
        }
        Command::Plot(a) => plot(&a),
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = read_scene_config(&args.config)?;
    let truth = generate(&cfg)?;
    let frames = corrupt(&truth, &cfg)?;
    write_scene(&args.out, &truth, &frames, cfg.dense_frames)?;
    info!(
        "wrote {} frames, {} identities to {}",
        frames.len(),
        truth.trajectories.len(),
        args.out.display()
    );
    Ok(())
}

fn dimension(path: &Path, message: impl ToString) -> Error {
    Error::Dimension {
        frame: path.display().to_string(),
        message: message.to_string(),
    }
}

fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn pipeline_config(args: &TrackArgs) -> Result<PipelineConfig> {
    let mut association = AssociationConfig::default();
    let mut theta = DEFAULT_THETA;
    if let Some(path) = &args.config {
        let file = AssociationFile::read(path)?;
        file.apply(&mut association);
        theta = file.theta.unwrap_or(theta);
    }
    association.lambda = args.lambda.unwrap_or(association.lambda);
    association.tau1 = args.tau1.unwrap_or(association.tau1);
    association.tau2_meters = args.tau2.unwrap_or(association.tau2_meters);
    association.retention_frames = args.retention.unwrap_or(association.retention_frames);
    theta = args.theta.unwrap_or(theta);
    association.validate().map_err(|e| Error::Config(e.to_string()))?;
    if !theta.is_finite() {
        return Err(Error::Config("theta must be finite".into()));
    }
    Ok(PipelineConfig {
        theta,
        association,
        ..PipelineConfig::default()
    })
}

/// Runs the tracker over a frame directory and writes the track file.
/// Returns the number of records written.
pub fn track(args: &TrackArgs) -> Result<usize> {
    let config = pipeline_config(args)?;
    let calibration = CalibrationDoc::read(&args.calib)?;
    let cameras = calibration.calibrations()?;
    let attention = match &args.weights {
        Some(path) => Some(WeightsDoc::read(path)?.to_attention()?),
        None => None,
    };
    debug!("{} cameras, config {config:?}", cameras.len());

    let paths = frame_paths(&args.frames)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    // Parsing and heatmap decoding run in parallel; the ordered collect keeps
    // the result independent of the thread count.
    let parsed: Vec<Result<(FrameDoc, bevtrack_core::pipeline::FrameInput)>> = pool.install(|| {
        paths
            .par_iter()
            .map(|p| {
                let doc = FrameDoc::read(p)?;
                let input = doc.to_input(config.theta).map_err(|m| dimension(p, m))?;
                Ok((doc, input))
            })
            .collect()
    });
    let mut frames = Vec::with_capacity(parsed.len());
    for (path, item) in paths.iter().zip(parsed) {
        let (doc, input) = item?;
        frames.push((path, doc, input));
    }
    frames.sort_by_key(|(_, doc, _)| doc.frame_index);
    for pair in frames.windows(2) {
        if pair[0].1.frame_index == pair[1].1.frame_index {
            return Err(dimension(
                pair[1].0,
                format!("frame index {} repeats {}", pair[1].1.frame_index, pair[0].0.display()),
            ));
        }
    }

    let mut records = Vec::new();
    if let Some((first_path, first, _)) = frames.first() {
        let grid_cfg = first.grid;
        if let Some(calib_grid) = calibration.grid {
            if calib_grid != grid_cfg {
                return Err(dimension(first_path, "grid differs from the calibration grid"));
            }
        }
        if let Some((path, _, _)) = frames.iter().find(|(_, d, _)| d.grid != grid_cfg) {
            return Err(dimension(path, format!("grid differs from {}", first_path.display())));
        }
        let grid = grid_cfg.to_grid().map_err(|e| dimension(first_path, e))?;
        let attention = match attention {
            Some(a) => a,
            None => {
                let channels = frames
                    .iter()
                    .find_map(|(_, d, _)| d.channels())
                    .unwrap_or(DEFAULT_CHANNELS);
                CrossAttention::reference(channels).map_err(|e| {
                    dimension(first_path, format!("{channels} feature channels: {e}"))
                })?
            }
        };
        let channels = attention.channels();
        let mut pipeline = Pipeline::new(grid, attention, KalmanFilter::default(), config)
            .map_err(|e| Error::Config(e.to_string()))?;
        for (path, doc, input) in &frames {
            if let Some(c) = doc.channels().filter(|&c| c != channels) {
                return Err(dimension(path, format!("features have {c} channels, kernel expects {channels}")));
            }
            let out = pipeline.process(input).map_err(|e| dimension(path, e))?;
            debug!(
                "frame {}: {} detections, {} records",
                input.frame_index,
                out.detections.len(),
                out.records.len()
            );
            records.extend(out.records);
        }
    }
    write_text(&args.out, &format_tracks(&records))?;
    info!("wrote {} track records from {} frames", records.len(), frames.len());
    Ok(records.len())
}

/// Machine-readable form of a report.
#[derive(Debug, Serialize)]
struct ReportRecord {
    mota: f64,
    motp: f64,
    idf1: f64,
    mt: f64,
    ml: f64,
    gt: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    idsw: usize,
    idtp: usize,
    idfp: usize,
    idfn: usize,
    gt_ids: usize,
    pred_ids: usize,
}

impl From<&MotReport> for ReportRecord {
    fn from(r: &MotReport) -> Self {
        Self {
            mota: r.mota,
            motp: r.motp,
            idf1: r.idf1,
            mt: r.mt,
            ml: r.ml,
            gt: r.gt,
            fp: r.fp,
            fn_: r.fn_,
            idsw: r.idsw,
            idtp: r.idtp,
            idfp: r.idfp,
            idfn: r.idfn,
            gt_ids: r.gt_ids,
            pred_ids: r.pred_ids,
        }
    }
}

/// Aligned table followed by one JSON line.
pub fn render_report(r: &MotReport) -> String {
    let rows = [
        ("MOTA", format!("{:.3}", r.mota)),
        ("MOTP", format!("{:.3} m", r.motp)),
        ("IDF1", format!("{:.3}", r.idf1)),
        ("MT", format!("{:.1} %", r.mt)),
        ("ML", format!("{:.1} %", r.ml)),
        ("GT", r.gt.to_string()),
        ("FP", r.fp.to_string()),
        ("FN", r.fn_.to_string()),
        ("IDSW", r.idsw.to_string()),
        ("IDTP", r.idtp.to_string()),
        ("IDFP", r.idfp.to_string()),
        ("IDFN", r.idfn.to_string()),
        ("GT IDs", r.gt_ids.to_string()),
        ("Track IDs", r.pred_ids.to_string()),
    ];
    let mut out = String::new();
    for (name, value) in rows {
        out.push_str(&format!("{name:<10}{value:>12}\n"));
    }
    out.push_str(&serde_json::to_string(&ReportRecord::from(r)).expect("plain data serializes"));
    out.push('\n');
    out
}

pub fn eval(args: &EvalArgs) -> Result<String> {
    if !(args.radius > 0.0) || !args.radius.is_finite() {
        return Err(Error::Config("radius must be positive".into()));
    }
    let gt = read_gt(&args.gt)?;
    if gt.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let tracks = read_tracks(&args.tracks)?;
    let report = evaluate(&gt, &tracks, args.radius).map_err(|e| match e {
        bevtrack_core::Error::EmptyGroundTruth => Error::EmptyGroundTruth,
        other => Error::format(&args.gt, other),
    })?;
    Ok(render_report(&report))
}

pub fn plot(args: &PlotArgs) -> Result<()> {
    let tracks = read_tracks(&args.tracks)?;
    let gt = match &args.gt {
        Some(path) => Some(read_gt(path)?),
        None => None,
    };
    let opts = PlotOptions {
        width: args.width,
        height: args.height,
        ..PlotOptions::default()
    };
    write_text(&args.out, &render_svg(&tracks, gt.as_deref(), &opts))
}
