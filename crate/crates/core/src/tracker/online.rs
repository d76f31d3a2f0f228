//! Two-stage online association and track lifecycle.
//!
//! Stage 1 fuses the appearance distance derived from the cross-attention
//! affinity with the gated Mahalanobis distance of the Kalman prediction and
//! matches on the result. Stage 2 links what is left by Euclidean distance
//! between detected and predicted centers. Unmatched detections start new
//! tracks; unmatched tracks are kept as lost for a fixed number of frames.

use alloc::vec::Vec;

use super::assignment::hungarian;
use super::kalman::{KalmanFilter, KalmanState, CHI2_95_4DOF};
use crate::affinity::AffinityMatrix;
use crate::detect::Detection;
use crate::geometry::{Cell, GroundGrid};
use crate::matrix::Matrix;
use crate::tokens::TokenSet;
use crate::{Error, Result};

/// Thresholds and weights of the association.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationConfig {
    /// Weight of the appearance distance in the stage-1 cost.
    pub lambda: f64,
    /// Stage-1 matching threshold on the fused cost.
    pub tau1: f64,
    /// Stage-2 matching threshold on center distance, meters.
    pub tau2_meters: f64,
    /// Squared Mahalanobis gate.
    pub gate_threshold: f64,
    /// Frames a lost track is kept before removal.
    pub retention_frames: u32,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.98,
            tau1: 0.5,
            tau2_meters: 1.8,
            gate_threshold: CHI2_95_4DOF,
            retention_frames: 10,
        }
    }
}

impl AssociationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig("lambda must lie in [0, 1]"));
        }
        if !(self.tau1 > 0.0) || !(self.tau2_meters > 0.0) || !(self.gate_threshold > 0.0) {
            return Err(Error::InvalidConfig("thresholds must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Active,
    /// Consecutive frames without a match.
    Lost(u32),
    Removed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub track_id: u64,
    pub state: KalmanState,
    /// Latest refined token.
    pub feature: Vec<f64>,
    pub status: TrackStatus,
    pub last_frame: i64,
    pub last_cell: Cell,
    /// `(frame, x, y)` of every matched frame.
    pub history: Vec<(i64, f64, f64)>,
}

impl Tracklet {
    pub fn is_live(&self) -> bool {
        self.status != TrackStatus::Removed
    }
}

/// One output line: an active track at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub frame: i64,
    pub track_id: u64,
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// `max(inner) - inner`. The entry/exit row and column are not used.
pub fn affinity_to_distance(aff: &AffinityMatrix) -> Matrix {
    match aff.inner.max() {
        Some(max) => aff.inner.map(|v| max - v),
        None => Matrix::zeros(aff.rows(), aff.cols()),
    }
}

/// `λ·D_A + (1 − λ)·D_m`, with entries whose Mahalanobis distance exceeds
/// the gate set to `+inf`.
pub fn fuse_distances(d_a: &Matrix, d_m: &Matrix, cfg: &AssociationConfig) -> Result<Matrix> {
    if d_a.rows() != d_m.rows() || d_a.cols() != d_m.cols() {
        return Err(Error::ShapeMismatch {
            left_rows: d_a.rows(),
            left_cols: d_a.cols(),
            right_rows: d_m.rows(),
            right_cols: d_m.cols(),
        });
    }
    let lambda = cfg.lambda;
    Ok(Matrix::from_fn(d_a.rows(), d_a.cols(), |i, j| {
        let dm = d_m[(i, j)];
        if dm > cfg.gate_threshold {
            f64::INFINITY
        } else if lambda == 1.0 {
            d_a[(i, j)]
        } else {
            lambda * d_a[(i, j)] + (1.0 - lambda) * dm
        }
    }))
}

/// Sequential tracker state for one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    grid: GroundGrid,
    config: AssociationConfig,
    filter: KalmanFilter,
    tracks: Vec<Tracklet>,
    removed: Vec<Tracklet>,
    next_id: u64,
    last_frame: Option<i64>,
}

impl Tracker {
    pub fn new(grid: GroundGrid, config: AssociationConfig, filter: KalmanFilter) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            grid,
            config,
            filter,
            tracks: Vec::new(),
            removed: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &AssociationConfig {
        &self.config
    }

    pub fn grid(&self) -> &GroundGrid {
        &self.grid
    }

    /// Active and lost tracks, in creation order. These are the affinity
    /// columns expected by [`Tracker::step`].
    pub fn candidates(&self) -> &[Tracklet] {
        &self.tracks
    }

    /// Tracks that exceeded the retention window.
    pub fn removed(&self) -> &[Tracklet] {
        &self.removed
    }

    /// Advances the tracker by one frame.
    ///
    /// `tokens` are the refined tokens of `detections` (same order) and `aff`
    /// is the combined affinity between those tokens (rows) and
    /// [`Tracker::candidates`] (columns).
    pub fn step(
        &mut self,
        frame: i64,
        detections: &[Detection],
        tokens: &TokenSet,
        aff: &AffinityMatrix,
    ) -> Result<Vec<TrackRecord>> {
        if tokens.len() != detections.len() {
            return Err(Error::DimensionMismatch {
                what: "tokens per detection",
                expected: detections.len(),
                got: tokens.len(),
            });
        }
        if aff.rows() != detections.len() {
            return Err(Error::DimensionMismatch {
                what: "affinity rows",
                expected: detections.len(),
                got: aff.rows(),
            });
        }
        if aff.cols() != self.tracks.len() {
            return Err(Error::DimensionMismatch {
                what: "affinity columns",
                expected: self.tracks.len(),
                got: aff.cols(),
            });
        }
        let elapsed = match self.last_frame {
            Some(prev) if frame <= prev => {
                return Err(Error::InvalidConfig("frames must be strictly increasing"))
            }
            Some(prev) => (frame - prev) as u32,
            None => 1,
        };
        self.last_frame = Some(frame);

        for t in &mut self.tracks {
            for _ in 0..elapsed {
                t.state = self.filter.predict(&t.state);
            }
        }

        let positions: Vec<(f64, f64)> = detections.iter().map(|d| d.position(&self.grid)).collect();
        let (n_det, n_trk) = (detections.len(), self.tracks.len());
        let mut det_match: Vec<Option<usize>> = alloc::vec![None; n_det];
        let mut trk_match: Vec<Option<usize>> = alloc::vec![None; n_trk];

        // Stage 1: appearance + motion.
        if n_det > 0 && n_trk > 0 {
            let d_a = affinity_to_distance(aff);
            let mut d_m = Matrix::zeros(n_det, n_trk);
            for (i, &(x, y)) in positions.iter().enumerate() {
                for (j, t) in self.tracks.iter().enumerate() {
                    d_m[(i, j)] = self.filter.mahalanobis(&t.state, x, y)?;
                }
            }
            let cost = fuse_distances(&d_a, &d_m, &self.config)?;
            for (i, j) in hungarian(&cost, self.config.tau1).matches {
                det_match[i] = Some(j);
                trk_match[j] = Some(i);
            }
        }

        // Stage 2: center distance over the leftovers.
        let open_dets: Vec<usize> = (0..n_det).filter(|&i| det_match[i].is_none()).collect();
        let open_trks: Vec<usize> = (0..n_trk).filter(|&j| trk_match[j].is_none()).collect();
        if !open_dets.is_empty() && !open_trks.is_empty() {
            let cost = Matrix::from_fn(open_dets.len(), open_trks.len(), |a, b| {
                let (x, y) = positions[open_dets[a]];
                let (px, py) = self.tracks[open_trks[b]].state.position();
                libm::hypot(x - px, y - py)
            });
            for (a, b) in hungarian(&cost, self.config.tau2_meters).matches {
                let (i, j) = (open_dets[a], open_trks[b]);
                det_match[i] = Some(j);
                trk_match[j] = Some(i);
            }
        }

        let mut records = Vec::new();
        for (j, track) in self.tracks.iter_mut().enumerate() {
            match trk_match[j] {
                Some(i) => {
                    let (x, y) = positions[i];
                    track.state = self.filter.update(&track.state, x, y)?;
                    track.feature.clone_from(&tokens.tokens[i].feature);
                    track.status = TrackStatus::Active;
                    track.last_frame = frame;
                    track.last_cell = detections[i].cell;
                    let (px, py) = track.state.position();
                    track.history.push((frame, px, py));
                    records.push(TrackRecord {
                        frame,
                        track_id: track.track_id,
                        x: px,
                        y: py,
                        score: detections[i].score,
                    });
                }
                None => {
                    let lost = match track.status {
                        TrackStatus::Lost(k) => k + elapsed,
                        _ => elapsed,
                    };
                    track.status = if lost > self.config.retention_frames {
                        TrackStatus::Removed
                    } else {
                        TrackStatus::Lost(lost)
                    };
                }
            }
        }
        let (live, gone): (Vec<_>, Vec<_>) =
            core::mem::take(&mut self.tracks).into_iter().partition(Tracklet::is_live);
        self.tracks = live;
        self.removed.extend(gone);

        for (i, d) in detections.iter().enumerate() {
            if det_match[i].is_some() {
                continue;
            }
            let (x, y) = positions[i];
            let track_id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Tracklet {
                track_id,
                state: self.filter.initiate(x, y),
                feature: tokens.tokens[i].feature.clone(),
                status: TrackStatus::Active,
                last_frame: frame,
                last_cell: d.cell,
                history: alloc::vec![(frame, x, y)],
            });
            records.push(TrackRecord {
                frame,
                track_id,
                x,
                y,
                score: d.score,
            });
        }
        records.sort_by_key(|r| r.track_id);
        Ok(records)
    }
}
