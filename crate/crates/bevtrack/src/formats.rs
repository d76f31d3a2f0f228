//! On-disk formats: calibration, frame and weights documents (JSON), scene
//! and association configs (TOML), and the comma-separated track and ground
//! truth files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use bevtrack_core::affinity::{ConvLayer, CrossAttention, MicroCnnWeights};
use bevtrack_core::detect::{Detection, Heatmap};
use bevtrack_core::geometry::{CameraCalibration, Cell, GroundGrid, Subcell};
use bevtrack_core::metrics::GtTrajectory;
use bevtrack_core::pipeline::FrameInput;
use bevtrack_core::tokens::BevFeature;
use bevtrack_core::tracker::{AssociationConfig, TrackRecord};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{GridConfig, SceneConfig, SceneTruth, SimFrame};

pub const WEIGHTS_FORMAT: &str = "bevtrack-weights";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: u32,
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    /// `(height, width)` in pixels.
    pub image_size: (u32, u32),
}

impl From<&CameraCalibration> for CameraRecord {
    fn from(c: &CameraCalibration) -> Self {
        let flat = |m: &Matrix3<f64>| std::array::from_fn(|i| m[(i / 3, i % 3)]);
        Self {
            id: c.camera_id,
            k: flat(&c.k),
            r: flat(&c.r),
            t: [c.t.x, c.t.y, c.t.z],
            image_size: c.image_size,
        }
    }
}

impl CameraRecord {
    pub fn to_calibration(&self) -> bevtrack_core::Result<CameraCalibration> {
        CameraCalibration::new(
            self.id,
            Matrix3::from_row_slice(&self.k),
            Matrix3::from_row_slice(&self.r),
            Vector3::from(self.t),
            self.image_size,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    pub cameras: Vec<CameraRecord>,
}

impl CalibrationDoc {
    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e))
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    /// Validated cameras; a broken calibration is a configuration error.
    pub fn calibrations(&self) -> Result<Vec<CameraCalibration>> {
        self.cameras
            .iter()
            .map(|c| c.to_calibration().map_err(|e| Error::Config(e.to_string())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub cell: (usize, usize),
    pub subcell: (f64, f64),
    pub score: f64,
    /// Token feature; required in sparse frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

/// Heatmap and BEV tensor of a dense frame, all row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseMaps {
    pub scores: Vec<f64>,
    /// Row offsets for every cell, then column offsets.
    pub offsets: Vec<f64>,
    pub channels: usize,
    /// `channels × rows × cols`.
    pub bev: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDoc {
    pub frame_index: i64,
    pub grid: GridConfig,
    pub detections: Vec<DetectionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<DenseMaps>,
}

impl FrameDoc {
    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e))
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    /// Sparse document carrying each detection's feature.
    pub fn sparse(frame: &SimFrame, grid: &GroundGrid) -> Self {
        Self {
            frame_index: frame.frame_index,
            grid: (*grid).into(),
            detections: frame
                .detections
                .iter()
                .map(|d| DetectionRecord {
                    cell: (d.detection.cell.row, d.detection.cell.col),
                    subcell: (d.detection.subcell.drow, d.detection.subcell.dcol),
                    score: d.detection.score,
                    feature: Some(d.feature.clone()),
                })
                .collect(),
            dense: None,
        }
    }

    /// Dense document: full heatmap and BEV map, detections listed without
    /// features.
    pub fn dense(frame: &SimFrame, grid: &GroundGrid, channels: usize) -> Self {
        let heatmap = frame.heatmap(grid);
        let bev = frame.bev(grid, channels);
        let mut doc = Self::sparse(frame, grid);
        for d in &mut doc.detections {
            d.feature = None;
        }
        doc.dense = Some(DenseMaps {
            scores: heatmap.scores().to_vec(),
            offsets: heatmap.offsets().map(<[f64]>::to_vec).unwrap_or_default(),
            channels,
            bev: bev.data().to_vec(),
        });
        doc
    }

    /// Channel count of the features this frame carries, if any.
    pub fn channels(&self) -> Option<usize> {
        match &self.dense {
            Some(d) => Some(d.channels),
            None => self.detections.iter().find_map(|d| d.feature.as_ref().map(Vec::len)),
        }
    }

    /// Tracker input. Dense frames are decoded at `theta`; sparse frames are
    /// passed through and thresholded by the pipeline.
    pub fn to_input(&self, theta: f64) -> std::result::Result<FrameInput, String> {
        let grid = self.grid.to_grid().map_err(|e| e.to_string())?;
        if let Some(dense) = &self.dense {
            let offsets = (!dense.offsets.is_empty()).then(|| dense.offsets.clone());
            let heatmap = Heatmap::new(
                grid.rows,
                grid.cols,
                dense.scores.clone(),
                offsets,
                self.frame_index,
            )
            .map_err(|e| e.to_string())?;
            let bev = BevFeature::new(
                dense.channels,
                grid.rows,
                grid.cols,
                dense.bev.clone(),
                self.frame_index,
            )
            .map_err(|e| e.to_string())?;
            return FrameInput::from_dense(&heatmap, &bev, theta).map_err(|e| e.to_string());
        }
        let mut detections = Vec::with_capacity(self.detections.len());
        let mut features = Vec::with_capacity(self.detections.len());
        for (i, d) in self.detections.iter().enumerate() {
            let cell = Cell::new(d.cell.0, d.cell.1);
            if !grid.contains(cell) {
                return Err(format!(
                    "detection {i} cell ({}, {}) outside the {}×{} grid",
                    cell.row, cell.col, grid.rows, grid.cols
                ));
            }
            let (dr, dc) = d.subcell;
            if !(0.0..1.0).contains(&dr) || !(0.0..1.0).contains(&dc) {
                return Err(format!("detection {i} subcell outside [0, 1)"));
            }
            let feature = d
                .feature
                .clone()
                .ok_or_else(|| format!("detection {i} has no feature"))?;
            detections.push(Detection {
                cell,
                subcell: Subcell::new(dr, dc),
                score: d.score,
                frame_index: self.frame_index,
            });
            features.push(feature);
        }
        Ok(FrameInput {
            frame_index: self.frame_index,
            detections,
            features,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDoc {
    pub format: String,
    pub version: u32,
    pub gamma: f64,
    pub layers: Vec<LayerRecord>,
}

impl WeightsDoc {
    pub fn from_attention(a: &CrossAttention) -> Self {
        Self {
            format: WEIGHTS_FORMAT.to_owned(),
            version: WEIGHTS_VERSION,
            gamma: a.gamma,
            layers: a
                .weights
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weight: l.weight.clone(),
                    bias: l.bias.clone(),
                    scale: l.scale.clone(),
                    shift: l.shift.clone(),
                })
                .collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e))
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn to_attention(&self) -> Result<CrossAttention> {
        let bad = |m: String| Error::Config(format!("weights: {m}"));
        if self.format != WEIGHTS_FORMAT {
            return Err(bad(format!("unknown format `{}`", self.format)));
        }
        if self.version != WEIGHTS_VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        let layers: Vec<ConvLayer> = self
            .layers
            .iter()
            .map(|l| {
                ConvLayer::new(
                    l.in_dim,
                    l.out_dim,
                    l.weight.clone(),
                    l.bias.clone(),
                    l.scale.clone(),
                    l.shift.clone(),
                )
                .map_err(|e| bad(e.to_string()))
            })
            .collect::<Result<_>>()?;
        let layers: [ConvLayer; 3] = layers
            .try_into()
            .map_err(|v: Vec<_>| bad(format!("expected 3 layers, found {}", v.len())))?;
        let weights = MicroCnnWeights::new(layers).map_err(|e| bad(e.to_string()))?;
        CrossAttention::new(weights, self.gamma).map_err(|e| bad(e.to_string()))
    }
}

/// Association thresholds as read from a config file; absent fields keep
/// their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssociationFile {
    pub lambda: Option<f64>,
    pub tau1: Option<f64>,
    pub tau2_meters: Option<f64>,
    pub gate_threshold: Option<f64>,
    pub retention_frames: Option<u32>,
    pub theta: Option<f64>,
}

impl AssociationFile {
    pub fn read(path: &Path) -> Result<Self> {
        toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&self, cfg: &mut AssociationConfig) {
        let AssociationFile {
            lambda,
            tau1,
            tau2_meters,
            gate_threshold,
            retention_frames,
            theta: _,
        } = *self;
        cfg.lambda = lambda.unwrap_or(cfg.lambda);
        cfg.tau1 = tau1.unwrap_or(cfg.tau1);
        cfg.tau2_meters = tau2_meters.unwrap_or(cfg.tau2_meters);
        cfg.gate_threshold = gate_threshold.unwrap_or(cfg.gate_threshold);
        cfg.retention_frames = retention_frames.unwrap_or(cfg.retention_frames);
    }
}

pub fn read_scene_config(path: &Path) -> Result<SceneConfig> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// One `frame,id,x,y` line, coordinates to 3 decimals.
pub fn format_gt(trajectories: &[GtTrajectory]) -> String {
    let mut rows: Vec<(i64, u64, f64, f64)> = trajectories
        .iter()
        .flat_map(|t| t.samples.iter().map(move |&(f, x, y)| (f, t.identity, x, y)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut out = String::new();
    for (f, id, x, y) in rows {
        writeln!(out, "{f},{id},{x:.3},{y:.3}").expect("writing to a String");
    }
    out
}

/// One `frame,id,x,y,score` line per record, in frame then id order.
pub fn format_tracks(records: &[TrackRecord]) -> String {
    let mut sorted: Vec<&TrackRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.track_id));
    let mut out = String::new();
    for r in sorted {
        writeln!(out, "{},{},{:.3},{:.3},{:.3}", r.frame, r.track_id, r.x, r.y, r.score)
            .expect("writing to a String");
    }
    out
}

/// `(frame, id, x, y, score)` rows of a track or ground-truth file. Blank
/// lines and lines starting with `#` are skipped; the score column is
/// optional.
pub fn parse_points(text: &str, path: &Path) -> Result<Vec<(i64, u64, f64, f64, Option<f64>)>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::format(path, format!("line {}: {what}", n + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(bad("expected frame,id,x,y[,score]"));
        }
        let frame = fields[0].parse().map_err(|_| bad("bad frame"))?;
        let id = fields[1].parse().map_err(|_| bad("bad id"))?;
        let coord = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
        let x = coord(fields[2]).ok_or_else(|| bad("bad x"))?;
        let y = coord(fields[3]).ok_or_else(|| bad("bad y"))?;
        let score = match fields.get(4) {
            Some(s) => Some(coord(s).ok_or_else(|| bad("bad score"))?),
            None => None,
        };
        rows.push((frame, id, x, y, score));
    }
    Ok(rows)
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackRecord>> {
    let rows = parse_points(&read_text(path)?, path)?;
    Ok(rows
        .into_iter()
        .map(|(frame, track_id, x, y, score)| TrackRecord {
            frame,
            track_id,
            x,
            y,
            score: score.unwrap_or(1.0),
        })
        .collect())
}

/// Ground truth grouped by identity; a repeated (frame, id) pair is an error.
pub fn read_gt(path: &Path) -> Result<Vec<GtTrajectory>> {
    let rows = parse_points(&read_text(path)?, path)?;
    let mut by_id: BTreeMap<u64, BTreeMap<i64, (f64, f64)>> = BTreeMap::new();
    for (frame, id, x, y, _) in rows {
        if by_id.entry(id).or_default().insert(frame, (x, y)).is_some() {
            return Err(Error::format(path, format!("identity {id} appears twice in frame {frame}")));
        }
    }
    Ok(by_id
        .into_iter()
        .map(|(identity, samples)| GtTrajectory {
            identity,
            samples: samples.into_iter().map(|(f, (x, y))| (f, x, y)).collect(),
        })
        .collect())
}

/// Writes a simulated scene: `calibration.json`, `gt.txt` and one
/// `frames/frame_NNNNNN.json` per frame.
pub fn write_scene(dir: &Path, truth: &SceneTruth, frames: &[SimFrame], dense: bool) -> Result<()> {
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let calibration = CalibrationDoc {
        grid: Some(truth.grid.into()),
        cameras: truth.calibrations.iter().map(CameraRecord::from).collect(),
    };
    write_text(&dir.join("calibration.json"), &calibration.to_json())?;
    write_text(&dir.join("gt.txt"), &format_gt(&truth.trajectories))?;
    for f in frames {
        let doc = if dense {
            FrameDoc::dense(f, &truth.grid, truth.channels)
        } else {
            FrameDoc::sparse(f, &truth.grid)
        };
        let name = format!("frame_{:06}.json", f.frame_index);
        write_text(&frames_dir.join(name), &doc.to_json())?;
    }
    Ok(())
}
