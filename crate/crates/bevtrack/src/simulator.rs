//! Deterministic synthetic multi-camera pedestrian scenes.
//!
//! Pedestrians perform a reflecting random walk on the ground grid with a
//! minimum mutual separation. Each identity owns a random unit feature
//! vector; observed tokens are that vector plus gaussian noise. Cameras sit
//! outside the grid perimeter and look at its center.

use bevtrack_core::detect::{Detection, Heatmap};
use bevtrack_core::geometry::{
    project_world_to_image, CameraCalibration, Cell, GroundGrid, Subcell, WorldPoint,
};
use bevtrack_core::metrics::GtTrajectory;
use bevtrack_core::pipeline::FrameInput;
use bevtrack_core::tokens::{BevFeature, DEFAULT_CHANNELS};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

/// Peak score written for every visible pedestrian.
pub const PEAK_SCORE: f64 = 0.9;

/// Camera mounting height, meters.
const CAMERA_HEIGHT: f64 = 6.0;
/// Horizontal distance of the cameras outside the grid, meters.
const CAMERA_STANDOFF: f64 = 4.0;
const IMAGE_SIZE: (u32, u32) = (1080, 1920);
const FOCAL_PX: f64 = 420.0;
/// Distance kept between pedestrians and the grid border, meters.
const BORDER_MARGIN: f64 = 0.2;
const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, thiserror::Error)]
#[error("invalid scene config: {0}")]
pub struct ConfigInvalid(pub String);

/// Ground grid as written in config and frame files: either the explicit
/// fields or a preset name (`"wildtrack"`, `"multiviewx"`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr")]
pub struct GridConfig {
    pub origin: (f64, f64),
    pub cell_size: f64,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GridRepr {
    Preset(String),
    Explicit {
        origin: (f64, f64),
        cell_size: f64,
        rows: usize,
        cols: usize,
    },
}

impl TryFrom<GridRepr> for GridConfig {
    type Error = String;

    fn try_from(r: GridRepr) -> Result<Self, String> {
        match r {
            GridRepr::Preset(name) => match name.as_str() {
                "wildtrack" => Ok(GroundGrid::wildtrack().into()),
                "multiviewx" => Ok(GroundGrid::multiviewx().into()),
                other => Err(format!("unknown grid preset `{other}`")),
            },
            GridRepr::Explicit {
                origin,
                cell_size,
                rows,
                cols,
            } => Ok(Self {
                origin,
                cell_size,
                rows,
                cols,
            }),
        }
    }
}

impl From<GroundGrid> for GridConfig {
    fn from(g: GroundGrid) -> Self {
        Self {
            origin: g.origin,
            cell_size: g.cell_size,
            rows: g.rows,
            cols: g.cols,
        }
    }
}

impl GridConfig {
    pub fn to_grid(&self) -> Result<GroundGrid, bevtrack_core::Error> {
        GroundGrid::new(self.origin, self.cell_size, self.rows, self.cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub num_pedestrians: usize,
    pub num_cameras: usize,
    pub num_frames: usize,
    pub grid: GridConfig,
    pub channels: usize,
    /// Meters per frame.
    pub walk_speed: f64,
    /// Standard deviation of the per-frame heading change, radians.
    pub heading_sigma: f64,
    /// Minimum distance between two pedestrians, meters.
    pub min_separation: f64,
    /// Per pedestrian and frame probability of leaving; each exit is
    /// replaced by a newly entering identity.
    pub entry_exit_rate: f64,
    pub feature_noise_sigma: f64,
    pub miss_rate: f64,
    /// Expected clutter detections per frame.
    pub false_positive_rate: f64,
    /// Also write heatmaps and dense BEV maps.
    pub dense_frames: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_pedestrians: 20,
            num_cameras: 5,
            num_frames: 40,
            grid: GroundGrid::wildtrack().into(),
            channels: DEFAULT_CHANNELS,
            walk_speed: 0.5,
            heading_sigma: 0.25,
            min_separation: 1.2,
            entry_exit_rate: 0.02,
            feature_noise_sigma: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            dense_frames: false,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<GroundGrid, ConfigInvalid> {
        let bad = |m: &str| Err(ConfigInvalid(m.to_owned()));
        let grid = self.grid.to_grid().map_err(|e| ConfigInvalid(format!("grid: {e}")))?;
        if self.num_pedestrians == 0 || self.num_cameras == 0 || self.num_frames == 0 {
            return bad("num_pedestrians, num_cameras and num_frames must be positive");
        }
        if self.channels == 0 {
            return bad("channels must be positive");
        }
        for (name, p) in [
            ("entry_exit_rate", self.entry_exit_rate),
            ("miss_rate", self.miss_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigInvalid(format!("{name} must lie in [0, 1]")));
            }
        }
        for (name, v) in [
            ("walk_speed", self.walk_speed),
            ("heading_sigma", self.heading_sigma),
            ("min_separation", self.min_separation),
            ("feature_noise_sigma", self.feature_noise_sigma),
            ("false_positive_rate", self.false_positive_rate),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ConfigInvalid(format!("{name} must be finite and nonnegative")));
            }
        }
        let area = grid.x_extent() * grid.y_extent();
        let needed = self.num_pedestrians as f64 * self.min_separation.powi(2);
        if needed > 0.25 * area {
            return bad("grid is too small for num_pedestrians at min_separation");
        }
        Ok(grid)
    }
}

/// One observed detection of a simulated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDetection {
    pub detection: Detection,
    pub feature: Vec<f64>,
    /// Ground-truth identity, `None` for clutter.
    pub identity: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub frame_index: i64,
    pub detections: Vec<SimDetection>,
}

impl SimFrame {
    pub fn to_input(&self) -> FrameInput {
        FrameInput {
            frame_index: self.frame_index,
            detections: self.detections.iter().map(|d| d.detection).collect(),
            features: self.detections.iter().map(|d| d.feature.clone()).collect(),
        }
    }

    /// Heatmap with a peak at every detection and a gaussian falloff of one
    /// cell, offsets carrying the sub-cell positions.
    pub fn heatmap(&self, grid: &GroundGrid) -> Heatmap {
        let mut h = Heatmap::zeros(grid.rows, grid.cols, self.frame_index);
        for d in &self.detections {
            let c = d.detection.cell;
            let r0 = c.row.saturating_sub(2);
            let c0 = c.col.saturating_sub(2);
            for r in r0..(c.row + 3).min(grid.rows) {
                for k in c0..(c.col + 3).min(grid.cols) {
                    let dr = r as f64 - c.row as f64;
                    let dc = k as f64 - c.col as f64;
                    let s = d.detection.score * (-(dr * dr + dc * dc) / 2.0).exp();
                    if s > h.score(r, k) {
                        h.set_score(r, k, s);
                    }
                }
            }
        }
        for d in &self.detections {
            let c = d.detection.cell;
            h.set_score(c.row, c.col, d.detection.score);
            h.set_offset(c.row, c.col, d.detection.subcell);
        }
        h
    }

    /// Dense BEV map holding each detection feature at its cell, zero
    /// elsewhere.
    pub fn bev(&self, grid: &GroundGrid, channels: usize) -> BevFeature {
        let mut bev = BevFeature::zeros(channels, grid.rows, grid.cols, self.frame_index);
        for d in &self.detections {
            bev.set_feature(d.detection.cell, &d.feature)
                .expect("simulated cells are inside the grid");
        }
        bev
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub grid: GroundGrid,
    pub channels: usize,
    pub trajectories: Vec<GtTrajectory>,
    /// Noise-applied tokens of every visible pedestrian, before misses and
    /// clutter.
    pub frames: Vec<SimFrame>,
    pub calibrations: Vec<CameraCalibration>,
    /// Identity feature vectors, indexed by `identity - 1`.
    pub identity_features: Vec<Vec<f64>>,
}

impl SceneTruth {
    pub fn heatmaps(&self) -> Vec<Heatmap> {
        self.frames.iter().map(|f| f.heatmap(&self.grid)).collect()
    }
}

#[derive(Default)]
struct Crowd {
    walkers: Vec<Walker>,
    /// Pedestrians who left; they keep walking away outside the grid.
    departed: Vec<Walker>,
    features: Vec<Vec<f64>>,
    trajectories: Vec<GtTrajectory>,
}

impl Crowd {
    fn add(&mut self, rng: &mut ChaCha8Rng, channels: usize, x: f64, y: f64, heading: f64) {
        let identity = self.features.len() as u64 + 1;
        self.features.push(unit_vector(rng, channels));
        self.trajectories.push(GtTrajectory {
            identity,
            samples: Vec::new(),
        });
        self.walkers.push(Walker {
            identity,
            x,
            y,
            heading,
            leaving: None,
        });
    }

    /// Positions of every walker except `skip`.
    fn positions(&self, skip: usize) -> Vec<(f64, f64)> {
        self.walkers
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != skip)
            .map(|(_, w)| (w.x, w.y))
            .collect()
    }
}

struct Walker {
    identity: u64,
    x: f64,
    y: f64,
    heading: f64,
    /// Outward heading once the pedestrian has decided to leave.
    leaving: Option<f64>,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn far_enough(x: f64, y: f64, others: &[(f64, f64)], min_sep: f64) -> bool {
    others.iter().all(|&(ox, oy)| (x - ox).hypot(y - oy) >= min_sep)
}

/// Walkable rectangle `(x0, y0, x1, y1)`.
fn walkable(grid: &GroundGrid) -> (f64, f64, f64, f64) {
    (
        grid.origin.0 + BORDER_MARGIN,
        grid.origin.1 + BORDER_MARGIN,
        grid.origin.0 + grid.x_extent() - BORDER_MARGIN,
        grid.origin.1 + grid.y_extent() - BORDER_MARGIN,
    )
}

fn random_free_point(
    rng: &mut ChaCha8Rng,
    grid: &GroundGrid,
    others: &[(f64, f64)],
    min_sep: f64,
) -> Option<(f64, f64)> {
    let (x0, y0, x1, y1) = walkable(grid);
    (0..PLACEMENT_ATTEMPTS).find_map(|_| {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        far_enough(x, y, others, min_sep).then_some((x, y))
    })
}

/// A free point on the walkable border and the inward heading there.
fn random_entry_point(
    rng: &mut ChaCha8Rng,
    grid: &GroundGrid,
    others: &[(f64, f64)],
    min_sep: f64,
) -> Option<(f64, f64, f64)> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let (x0, y0, x1, y1) = walkable(grid);
    (0..PLACEMENT_ATTEMPTS).find_map(|_| {
        let (x, y, heading) = match rng.random_range(0..4) {
            0 => (x0, rng.random_range(y0..y1), 0.0),
            1 => (x1, rng.random_range(y0..y1), PI),
            2 => (rng.random_range(x0..x1), y0, FRAC_PI_2),
            _ => (rng.random_range(x0..x1), y1, -FRAC_PI_2),
        };
        far_enough(x, y, others, min_sep).then_some((x, y, heading))
    })
}

/// Heading that leaves the walkable area through its nearest edge.
fn exit_heading(x: f64, y: f64, grid: &GroundGrid) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    let (x0, y0, x1, y1) = walkable(grid);
    [(x - x0, PI), (x1 - x, 0.0), (y - y0, -FRAC_PI_2), (y1 - y, FRAC_PI_2)]
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, h)| h)
        .expect("four edges")
}

/// Distance from a wall at which pedestrians start turning along it, meters.
const WALL_RANGE: f64 = 2.5;

/// Heading that stops approaching any wall closer than `WALL_RANGE`.
fn wall_target(x: f64, y: f64, heading: f64, grid: &GroundGrid) -> f64 {
    let (x0, y0, x1, y1) = walkable(grid);
    let (mut hx, mut hy) = (heading.cos(), heading.sin());
    if (x - x0 < WALL_RANGE && hx < 0.0) || (x1 - x < WALL_RANGE && hx > 0.0) {
        hx = 0.0;
    }
    if (y - y0 < WALL_RANGE && hy < 0.0) || (y1 - y < WALL_RANGE && hy > 0.0) {
        hy = 0.0;
    }
    if hx == 0.0 && hy == 0.0 {
        // Heading straight into a corner: aim for the center instead.
        return ((y0 + y1) / 2.0 - y).atan2((x0 + x1) / 2.0 - x);
    }
    hy.atan2(hx)
}

/// Largest steered heading change per frame, radians.
const MAX_TURN: f64 = 0.35;

fn turn_towards(heading: f64, target: f64, max_turn: f64) -> f64 {
    let diff = (target - heading + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
        - std::f64::consts::PI;
    heading + diff.clamp(-max_turn, max_turn)
}

/// Heading offsets tried in order when the intended step is blocked.
const DEFLECTIONS: [f64; 9] = [0.0, 0.4, -0.4, 0.8, -0.8, 1.2, -1.2, 1.6, -1.6];

/// Cameras spread evenly along a rectangle around the grid, each looking at
/// the grid center.
pub fn perimeter_cameras(grid: &GroundGrid, count: usize) -> Vec<CameraCalibration> {
    let (xe, ye) = (grid.x_extent(), grid.y_extent());
    let (xmin, ymin) = (grid.origin.0 - CAMERA_STANDOFF, grid.origin.1 - CAMERA_STANDOFF);
    let (w, h) = (xe + 2.0 * CAMERA_STANDOFF, ye + 2.0 * CAMERA_STANDOFF);
    let perimeter = 2.0 * (w + h);
    let target = Vector3::new(grid.origin.0 + xe / 2.0, grid.origin.1 + ye / 2.0, 0.0);
    let k = Matrix3::new(
        FOCAL_PX,
        0.0,
        f64::from(IMAGE_SIZE.1) / 2.0,
        0.0,
        FOCAL_PX,
        f64::from(IMAGE_SIZE.0) / 2.0,
        0.0,
        0.0,
        1.0,
    );
    (0..count)
        .map(|i| {
            // Start mid-way along the first side so two cameras never share a corner.
            let s = (i as f64 + 0.5) / count as f64 * perimeter;
            let (px, py) = if s < w {
                (xmin + s, ymin)
            } else if s < w + h {
                (xmin + w, ymin + (s - w))
            } else if s < 2.0 * w + h {
                (xmin + w - (s - w - h), ymin + h)
            } else {
                (xmin, ymin + h - (s - 2.0 * w - h))
            };
            let center = Vector3::new(px, py, CAMERA_HEIGHT);
            let forward = (target - center).normalize();
            let right = forward.cross(&Vector3::z()).normalize();
            let down = forward.cross(&right);
            let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
            let t = -(r * center);
            CameraCalibration::new(i as u32, k, r, t, IMAGE_SIZE)
                .expect("look-at rotation is orthonormal")
        })
        .collect()
}

/// Number of cameras that see a ground point inside their image.
pub fn visible_from(calibrations: &[CameraCalibration], x: f64, y: f64) -> usize {
    calibrations
        .iter()
        .filter(|c| {
            project_world_to_image(c, WorldPoint::ground(x, y))
                .map(|p| p.in_front() && c.contains_pixel(p.u, p.v))
                .unwrap_or(false)
        })
        .count()
}

/// Generates the scene: trajectories, noisy tokens and calibrations.
pub fn generate(cfg: &SceneConfig) -> Result<SceneTruth, ConfigInvalid> {
    let grid = cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.feature_noise_sigma)
        .map_err(|e| ConfigInvalid(format!("feature_noise_sigma: {e}")))?;
    let heading_noise = Normal::new(0.0, cfg.heading_sigma)
        .map_err(|e| ConfigInvalid(format!("heading_sigma: {e}")))?;

    let mut crowd = Crowd::default();
    for _ in 0..cfg.num_pedestrians {
        let others = crowd.positions(usize::MAX);
        let (x, y) = random_free_point(&mut rng, &grid, &others, cfg.min_separation)
            .ok_or_else(|| ConfigInvalid("could not place a pedestrian".into()))?;
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        crowd.add(&mut rng, cfg.channels, x, y, heading);
    }

    let (x0, y0, x1, y1) = walkable(&grid);
    let mut frames = Vec::with_capacity(cfg.num_frames);
    for f in 0..cfg.num_frames {
        if f > 0 {
            for w in crowd.walkers.iter_mut().filter(|w| w.leaving.is_none()) {
                if rng.random_bool(cfg.entry_exit_rate) {
                    w.leaving = Some(exit_heading(w.x, w.y, &grid));
                }
            }
            // Sequential moves keep every pair separated.
            for i in 0..crowd.walkers.len() {
                let others = crowd.positions(i);
                let w = &crowd.walkers[i];
                let intended = match w.leaving {
                    Some(target) => turn_towards(w.heading, target, MAX_TURN),
                    None => {
                        let h = w.heading + heading_noise.sample(&mut rng);
                        turn_towards(h, wall_target(w.x, w.y, h, &grid), MAX_TURN)
                    }
                };
                let inside = |x: f64, y: f64| (x0..=x1).contains(&x) && (y0..=y1).contains(&y);
                let step = DEFLECTIONS.iter().find_map(|d| {
                    let h = intended + d;
                    let (nx, ny) = (w.x + cfg.walk_speed * h.cos(), w.y + cfg.walk_speed * h.sin());
                    let allowed = w.leaving.is_some() || inside(nx, ny);
                    (allowed && far_enough(nx, ny, &others, cfg.min_separation)).then_some((nx, ny, h))
                });
                if let Some((nx, ny, h)) = step {
                    let w = &mut crowd.walkers[i];
                    w.x = nx;
                    w.y = ny;
                    w.heading = h;
                }
            }
            // Pedestrians outside the walkable area have left; each is
            // replaced by one entering through the border.
            for w in &mut crowd.departed {
                w.x += cfg.walk_speed * w.heading.cos();
                w.y += cfg.walk_speed * w.heading.sin();
            }
            let (stay, gone): (Vec<Walker>, Vec<Walker>) = std::mem::take(&mut crowd.walkers)
                .into_iter()
                .partition(|w| (x0..=x1).contains(&w.x) && (y0..=y1).contains(&w.y));
            crowd.walkers = stay;
            let exits = gone.len();
            crowd.departed.extend(gone);
            for _ in 0..exits {
                // Entrants also keep clear of those walking out.
                let mut others = crowd.positions(usize::MAX);
                others.extend(crowd.departed.iter().map(|w| (w.x, w.y)));
                let (x, y, heading) = random_entry_point(&mut rng, &grid, &others, cfg.min_separation)
                    .ok_or_else(|| ConfigInvalid("could not place an entering pedestrian".into()))?;
                crowd.add(&mut rng, cfg.channels, x, y, heading);
            }
        }

        let mut detections = Vec::with_capacity(crowd.walkers.len());
        for w in &crowd.walkers {
            crowd.trajectories[(w.identity - 1) as usize]
                .samples
                .push((f as i64, w.x, w.y));
            let (cell, subcell) = grid
                .locate(w.x, w.y)
                .expect("walkers stay inside the grid");
            let base = &crowd.features[(w.identity - 1) as usize];
            let feature = if cfg.feature_noise_sigma > 0.0 {
                base.iter().map(|v| v + noise.sample(&mut rng)).collect()
            } else {
                base.clone()
            };
            detections.push(SimDetection {
                detection: Detection {
                    cell,
                    subcell,
                    score: PEAK_SCORE,
                    frame_index: f as i64,
                },
                feature,
                identity: Some(w.identity),
            });
        }
        frames.push(SimFrame {
            frame_index: f as i64,
            detections,
        });
    }
    let Crowd {
        mut trajectories,
        features: identity_features,
        ..
    } = crowd;
    trajectories.retain(|t| !t.samples.is_empty());

    Ok(SceneTruth {
        grid,
        channels: cfg.channels,
        trajectories,
        frames,
        calibrations: perimeter_cameras(&grid, cfg.num_cameras),
        identity_features,
    })
}

/// Applies misses and clutter. Clutter cells keep a Chebyshev distance of at
/// least two cells from every other detection so heatmap decoding keeps them
/// apart.
pub fn corrupt(truth: &SceneTruth, cfg: &SceneConfig) -> Result<Vec<SimFrame>, ConfigInvalid> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let clutter = if cfg.false_positive_rate > 0.0 {
        Some(
            Poisson::new(cfg.false_positive_rate)
                .map_err(|e| ConfigInvalid(format!("false_positive_rate: {e}")))?,
        )
    } else {
        None
    };
    let grid = truth.grid;
    let mut out = Vec::with_capacity(truth.frames.len());
    for frame in &truth.frames {
        let mut detections: Vec<SimDetection> = frame
            .detections
            .iter()
            .filter(|_| !(cfg.miss_rate > 0.0 && rng.random_bool(cfg.miss_rate)))
            .cloned()
            .collect();
        let count = clutter.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..count {
            let spot = (0..PLACEMENT_ATTEMPTS).find_map(|_| {
                let cell = Cell::new(rng.random_range(0..grid.rows), rng.random_range(0..grid.cols));
                let clear = frame.detections.iter().chain(&detections).all(|d| {
                    let c = d.detection.cell;
                    c.row.abs_diff(cell.row) >= 2 || c.col.abs_diff(cell.col) >= 2
                });
                clear.then_some(cell)
            });
            let Some(cell) = spot else { continue };
            let subcell = Subcell::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            detections.push(SimDetection {
                detection: Detection {
                    cell,
                    subcell,
                    score: PEAK_SCORE,
                    frame_index: frame.frame_index,
                },
                feature: unit_vector(&mut rng, truth.channels),
                identity: None,
            });
        }
        out.push(SimFrame {
            frame_index: frame.frame_index,
            detections,
        });
    }
    Ok(out)
}
