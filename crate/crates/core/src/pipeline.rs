//! Per-frame inference: tokens, cross-attention against the live tracks,
//! token refinement and association.

use alloc::vec::Vec;

use crate::affinity::{refine_tokens, AffinityMatrix, CrossAttention};
use crate::detect::{decode, Detection, Heatmap, DEFAULT_THETA};
use crate::geometry::{Cell, GroundGrid};
use crate::matrix::Matrix;
use crate::tokens::{add_positional_code, extract_tokens, BevFeature, Token, TokenSet};
use crate::tracker::{AssociationConfig, KalmanFilter, TrackRecord, Tracker};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Detection score threshold (strict).
    pub theta: f64,
    pub association: AssociationConfig,
    /// Add the 3D positional code to queries and keys.
    pub positional_encoding: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            association: AssociationConfig::default(),
            positional_encoding: true,
        }
    }
}

/// Detections of one frame with the BEV feature at each detection.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame_index: i64,
    pub detections: Vec<Detection>,
    pub features: Vec<Vec<f64>>,
}

impl FrameInput {
    /// Decodes a heatmap and reads the feature of every peak from `bev`.
    pub fn from_dense(heatmap: &Heatmap, bev: &BevFeature, theta: f64) -> Result<Self> {
        if (heatmap.rows(), heatmap.cols()) != (bev.rows(), bev.cols()) {
            return Err(Error::ShapeMismatch {
                left_rows: heatmap.rows(),
                left_cols: heatmap.cols(),
                right_rows: bev.rows(),
                right_cols: bev.cols(),
            });
        }
        let detections = decode(heatmap, theta);
        let tokens = extract_tokens(bev, &detections)?;
        Ok(Self {
            frame_index: heatmap.frame_index,
            detections,
            features: tokens.tokens.into_iter().map(|t| t.feature).collect(),
        })
    }
}

/// Everything produced for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub records: Vec<TrackRecord>,
    /// Detections kept after thresholding, the affinity rows.
    pub detections: Vec<Detection>,
    /// Affinity between kept detections and the tracks alive before the step.
    pub affinity: AffinityMatrix,
    /// Ids of those tracks, the affinity columns.
    pub track_ids: Vec<u64>,
}

/// Adds the positional code to the leading `6·⌊C/6⌋` channels.
pub fn encode_feature(feature: &[f64], cell: Cell, frame: i64) -> Vec<f64> {
    let mut out = feature.to_vec();
    let span = out.len() - out.len() % 6;
    add_positional_code(&mut out[..span], cell.row as f64, cell.col as f64, frame as f64)
        .expect("span is a multiple of 6");
    out
}

/// Online tracker driven by per-frame detections and features.
#[derive(Debug, Clone)]
pub struct Pipeline {
    attention: CrossAttention,
    tracker: Tracker,
    config: PipelineConfig,
}

impl Pipeline {
    pub fn new(
        grid: GroundGrid,
        attention: CrossAttention,
        filter: KalmanFilter,
        config: PipelineConfig,
    ) -> Result<Self> {
        Ok(Self {
            tracker: Tracker::new(grid, config.association, filter)?,
            attention,
            config,
        })
    }

    /// Reference kernel, default filter and default thresholds.
    pub fn reference(grid: GroundGrid, channels: usize) -> Result<Self> {
        Self::new(
            grid,
            CrossAttention::reference(channels)?,
            KalmanFilter::default(),
            PipelineConfig::default(),
        )
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn encode(&self, feature: &[f64], cell: Cell, frame: i64) -> Vec<f64> {
        if self.config.positional_encoding {
            encode_feature(feature, cell, frame)
        } else {
            feature.to_vec()
        }
    }

    pub fn process(&mut self, frame: &FrameInput) -> Result<FrameOutput> {
        if frame.features.len() != frame.detections.len() {
            return Err(Error::DimensionMismatch {
                what: "features per detection",
                expected: frame.detections.len(),
                got: frame.features.len(),
            });
        }
        let channels = self.attention.channels();
        let grid = *self.tracker.grid();
        let mut raw = TokenSet::new(frame.frame_index, Vec::new());
        let mut detections = Vec::new();
        for (d, f) in frame.detections.iter().zip(&frame.features) {
            if !(d.score > self.config.theta) {
                continue;
            }
            if !grid.contains(d.cell) {
                return Err(Error::CellOutOfRange {
                    row: d.cell.row,
                    col: d.cell.col,
                    rows: grid.rows,
                    cols: grid.cols,
                });
            }
            if f.len() != channels {
                return Err(Error::ChannelMismatch {
                    left: channels,
                    right: f.len(),
                });
            }
            raw.tokens.push(Token {
                feature: f.clone(),
                cell: d.cell,
                subcell: d.subcell,
                frame_index: frame.frame_index,
                detection_id: detections.len(),
            });
            detections.push(*d);
        }

        let queries = rows_to_matrix(
            raw.tokens.iter().map(|t| self.encode(&t.feature, t.cell, frame.frame_index)),
            channels,
        );
        let tracks = self.tracker.candidates();
        let keys = rows_to_matrix(
            tracks.iter().map(|t| self.encode(&t.feature, t.last_cell, t.last_frame)),
            channels,
        );
        let values = rows_to_matrix(tracks.iter().map(|t| t.feature.clone()), channels);
        let track_ids = tracks.iter().map(|t| t.track_id).collect();

        let attention = self.attention.attend(&queries, &keys, &values)?;
        let refined = refine_tokens(&raw, &attention.attended)?;
        let records = self
            .tracker
            .step(frame.frame_index, &detections, &refined, &attention.affinity)?;
        Ok(FrameOutput {
            records,
            detections,
            affinity: attention.affinity,
            track_ids,
        })
    }

    /// Runs a whole sequence and concatenates the records.
    pub fn run<'a>(&mut self, frames: impl IntoIterator<Item = &'a FrameInput>) -> Result<Vec<TrackRecord>> {
        let mut out = Vec::new();
        for f in frames {
            out.extend(self.process(f)?.records);
        }
        Ok(out)
    }
}

fn rows_to_matrix(rows: impl Iterator<Item = Vec<f64>>, cols: usize) -> Matrix {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend(r);
        n += 1;
    }
    Matrix::from_row_major(n, cols, data).expect("rows have the checked width")
}
