//! CLEAR MOT and identity (IDF1) metrics on ground-plane points.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::matrix::Matrix;
use crate::tracker::{hungarian, TrackRecord};
use crate::{Error, Result};

/// Default matching radius, meters.
pub const DEFAULT_RADIUS: f64 = 1.0;

/// Coverage at or above which a ground-truth identity is mostly tracked.
pub const MOSTLY_TRACKED: f64 = 0.8;
/// Coverage at or below which a ground-truth identity is mostly lost.
pub const MOSTLY_LOST: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct GtTrajectory {
    pub identity: u64,
    /// `(frame, x, y)` with strictly increasing frames.
    pub samples: Vec<(i64, f64, f64)>,
}

/// An identified ground-plane point within one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePoint {
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

impl FramePoint {
    pub const fn new(id: u64, x: f64, y: f64) -> Self {
        Self { id, x, y }
    }

    fn distance(&self, other: &FramePoint) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }
}

/// Correspondences of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    /// `(gt id, predicted id, distance)`, sorted by gt id.
    pub pairs: Vec<(u64, u64, f64)>,
    pub unmatched_gt: Vec<u64>,
    pub unmatched_pred: Vec<u64>,
}

impl FrameMatch {
    /// The correspondences as a gt → predicted id map, the carryover for the
    /// next frame.
    pub fn mapping(&self) -> BTreeMap<u64, u64> {
        self.pairs.iter().map(|&(g, p, _)| (g, p)).collect()
    }
}

/// CLEAR correspondence for one frame.
///
/// Pairs from `carryover` (the previous frame's correspondences) that are
/// still within `r` are kept. The remaining points are matched by a
/// minimum-distance assignment that first maximizes the number of pairs
/// within `r`.
pub fn frame_match(
    gt: &[FramePoint],
    pred: &[FramePoint],
    r: f64,
    carryover: &BTreeMap<u64, u64>,
) -> FrameMatch {
    let mut gt_used = alloc::vec![false; gt.len()];
    let mut pred_used = alloc::vec![false; pred.len()];
    let mut pairs = Vec::new();

    for (gi, g) in gt.iter().enumerate() {
        let Some(&pid) = carryover.get(&g.id) else {
            continue;
        };
        if let Some(pi) = pred.iter().position(|p| p.id == pid) {
            let d = g.distance(&pred[pi]);
            if !pred_used[pi] && d <= r {
                gt_used[gi] = true;
                pred_used[pi] = true;
                pairs.push((g.id, pid, d));
            }
        }
    }

    let open_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let open_pred: Vec<usize> = (0..pred.len()).filter(|&j| !pred_used[j]).collect();
    if !open_gt.is_empty() && !open_pred.is_empty() {
        let cost = Matrix::from_fn(open_gt.len(), open_pred.len(), |a, b| {
            let d = gt[open_gt[a]].distance(&pred[open_pred[b]]);
            if d <= r {
                d
            } else {
                f64::INFINITY
            }
        });
        // Any admissible pair saves more than all distances together.
        let threshold = r * (open_gt.len().min(open_pred.len()) + 1) as f64 + 1.0;
        for (a, b) in hungarian(&cost, threshold).matches {
            let (gi, pi) = (open_gt[a], open_pred[b]);
            gt_used[gi] = true;
            pred_used[pi] = true;
            pairs.push((gt[gi].id, pred[pi].id, cost[(a, b)]));
        }
    }

    pairs.sort_by_key(|p| p.0);
    FrameMatch {
        pairs,
        unmatched_gt: (0..gt.len()).filter(|&i| !gt_used[i]).map(|i| gt[i].id).collect(),
        unmatched_pred: (0..pred.len()).filter(|&j| !pred_used[j]).map(|j| pred[j].id).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotReport {
    pub mota: f64,
    /// Mean matched distance, meters.
    pub motp: f64,
    pub idf1: f64,
    /// Mostly tracked identities, percent.
    pub mt: f64,
    /// Mostly lost identities, percent.
    pub ml: f64,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
    /// Ground-truth points over the sequence.
    pub gt: usize,
    pub matches: usize,
    pub gt_ids: usize,
    pub pred_ids: usize,
}

type Frames = BTreeMap<i64, Vec<FramePoint>>;

fn group_gt(gt: &[GtTrajectory]) -> Result<Frames> {
    let mut frames: Frames = BTreeMap::new();
    for traj in gt {
        if traj.samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig(
                "ground-truth frames must be strictly increasing per identity",
            ));
        }
        for &(f, x, y) in &traj.samples {
            frames.entry(f).or_default().push(FramePoint::new(traj.identity, x, y));
        }
    }
    Ok(frames)
}

fn group_tracks(tracks: &[TrackRecord]) -> Frames {
    let mut frames: Frames = BTreeMap::new();
    for t in tracks {
        frames
            .entry(t.frame)
            .or_default()
            .push(FramePoint::new(t.track_id, t.x, t.y));
    }
    frames
}

/// Evaluates predicted tracks against ground truth over the union of their
/// frames.
pub fn evaluate(gt: &[GtTrajectory], tracks: &[TrackRecord], r: f64) -> Result<MotReport> {
    let gt_frames = group_gt(gt)?;
    let pred_frames = group_tracks(tracks);
    let total_gt: usize = gt_frames.values().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let total_pred: usize = pred_frames.values().map(Vec::len).sum();

    let frames: BTreeSet<i64> = gt_frames.keys().chain(pred_frames.keys()).copied().collect();
    let empty = Vec::new();
    let mut carryover = BTreeMap::new();
    let mut last_pred: BTreeMap<u64, u64> = BTreeMap::new();
    let mut matched_frames: BTreeMap<u64, usize> = BTreeMap::new();
    let mut present_frames: BTreeMap<u64, usize> = BTreeMap::new();
    let (mut fp, mut fn_, mut idsw, mut matches) = (0, 0, 0, 0);
    let mut dist_sum = 0.0;
    // Identity overlap counts, (gt id, pred id) -> frames within r.
    let mut overlap: BTreeMap<(u64, u64), usize> = BTreeMap::new();

    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let p = pred_frames.get(&f).unwrap_or(&empty);
        for point in g {
            *present_frames.entry(point.id).or_default() += 1;
        }
        let fm = frame_match(g, p, r, &carryover);
        for &(gid, pid, d) in &fm.pairs {
            if let Some(prev) = last_pred.insert(gid, pid) {
                if prev != pid {
                    idsw += 1;
                }
            }
            *matched_frames.entry(gid).or_default() += 1;
            dist_sum += d;
        }
        matches += fm.pairs.len();
        fp += fm.unmatched_pred.len();
        fn_ += fm.unmatched_gt.len();
        carryover = fm.mapping();

        for a in g {
            for b in p {
                if a.distance(b) <= r {
                    *overlap.entry((a.id, b.id)).or_default() += 1;
                }
            }
        }
    }

    let gt_ids: Vec<u64> = present_frames.keys().copied().collect();
    let pred_ids: Vec<u64> = {
        let set: BTreeSet<u64> = tracks.iter().map(|t| t.track_id).collect();
        set.into_iter().collect()
    };
    let idtp = identity_true_positives(&gt_ids, &pred_ids, &overlap);
    let idfn = total_gt - idtp;
    let idfp = total_pred - idtp;

    let (mut mt, mut ml) = (0usize, 0usize);
    for (id, &present) in &present_frames {
        let coverage = *matched_frames.get(id).unwrap_or(&0) as f64 / present as f64;
        if coverage >= MOSTLY_TRACKED {
            mt += 1;
        } else if coverage <= MOSTLY_LOST {
            ml += 1;
        }
    }
    let n_ids = gt_ids.len() as f64;
    Ok(MotReport {
        mota: 1.0 - (fn_ + fp + idsw) as f64 / total_gt as f64,
        motp: if matches > 0 {
            dist_sum / matches as f64
        } else {
            0.0
        },
        idf1: 2.0 * idtp as f64 / (total_gt + total_pred) as f64,
        mt: 100.0 * mt as f64 / n_ids,
        ml: 100.0 * ml as f64 / n_ids,
        fp,
        fn_,
        idsw,
        idtp,
        idfp,
        idfn,
        gt: total_gt,
        matches,
        gt_ids: gt_ids.len(),
        pred_ids: pred_ids.len(),
    })
}

/// Largest total overlap over one-to-one identity mappings.
fn identity_true_positives(
    gt_ids: &[u64],
    pred_ids: &[u64],
    overlap: &BTreeMap<(u64, u64), usize>,
) -> usize {
    if gt_ids.is_empty() || pred_ids.is_empty() {
        return 0;
    }
    let cost = Matrix::from_fn(gt_ids.len(), pred_ids.len(), |a, b| {
        -(*overlap.get(&(gt_ids[a], pred_ids[b])).unwrap_or(&0) as f64)
    });
    hungarian(&cost, 0.0)
        .matches
        .iter()
        .map(|&(a, b)| overlap[&(gt_ids[a], pred_ids[b])])
        .sum()
}
