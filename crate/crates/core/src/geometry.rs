//! Pinhole projection, the z = 0 ground-plane homography and the discretized
//! bird's-eye-view grid.
//!
//! World coordinates are meters. Grid rows follow world `x` and grid columns
//! follow world `y`; cells are indexed row-major.

use libm::floor;
use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};

use crate::{Error, Result};

/// Depths with smaller magnitude are treated as lying on the camera plane.
pub const DEPTH_EPS: f64 = 1e-12;

/// Tolerance on orthonormality and unit determinant of rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

/// Intrinsics, extrinsics and image size of one calibrated camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    pub camera_id: u32,
    /// Intrinsic matrix, pixels.
    pub k: Matrix3<f64>,
    /// World-to-camera rotation.
    pub r: Matrix3<f64>,
    /// World-to-camera translation, meters.
    pub t: Vector3<f64>,
    /// `(height, width)` in pixels.
    pub image_size: (u32, u32),
}

impl CameraCalibration {
    /// Validates and builds a calibration.
    pub fn new(
        camera_id: u32,
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        image_size: (u32, u32),
    ) -> Result<Self> {
        let calib = Self {
            camera_id,
            k,
            r,
            t,
            image_size,
        };
        calib.validate()?;
        Ok(calib)
    }

    /// Checks that `R` is a proper rotation and `K` is upper triangular with a
    /// positive diagonal.
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason| Error::InvalidCalibration {
            camera_id: self.camera_id,
            reason,
        };
        let all = self.k.iter().chain(self.r.iter()).chain(self.t.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite entry"));
        }
        let gram = self.r.transpose() * self.r;
        if (gram - Matrix3::identity()).amax() > ROTATION_TOL {
            return Err(invalid("R is not orthonormal"));
        }
        if (self.r.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(invalid("det(R) != 1"));
        }
        if self.k[(1, 0)] != 0.0 || self.k[(2, 0)] != 0.0 || self.k[(2, 1)] != 0.0 {
            return Err(invalid("K is not upper triangular"));
        }
        if (0..3).any(|i| self.k[(i, i)] <= 0.0) {
            return Err(invalid("K has a non-positive diagonal entry"));
        }
        Ok(())
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    /// Whether a pixel lies inside the image bounds.
    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        let (h, w) = self.image_size;
        u >= 0.0 && v >= 0.0 && u < f64::from(w) && v < f64::from(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// A projected pixel together with its homogeneous depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl ImagePoint {
    /// `false` for points behind the camera.
    pub fn in_front(&self) -> bool {
        self.depth > 0.0
    }
}

/// `P = K [R | t]`.
pub fn projection_matrix(calib: &CameraCalibration) -> Matrix3x4<f64> {
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&calib.r);
    rt.set_column(3, &calib.t);
    calib.k * rt
}

/// Projects a world point to pixel coordinates.
///
/// Points behind the camera still produce a pixel; check
/// [`ImagePoint::in_front`] to filter them.
pub fn project_world_to_image(calib: &CameraCalibration, p: WorldPoint) -> Result<ImagePoint> {
    project_with(&projection_matrix(calib), p)
}

/// Projects with an explicit 3x4 matrix.
pub fn project_with(p_mat: &Matrix3x4<f64>, p: WorldPoint) -> Result<ImagePoint> {
    let h = p_mat * Vector4::new(p.x, p.y, p.z, 1.0);
    dehomogenize(h).map(|(u, v)| ImagePoint { u, v, depth: h.z })
}

fn dehomogenize(h: Vector3<f64>) -> Result<(f64, f64)> {
    if h.z.abs() < DEPTH_EPS {
        return Err(Error::DepthDegenerate { depth: h.z });
    }
    Ok((h.x / h.z, h.y / h.z))
}

/// Ground-plane (z = 0) homography: `P` with its third column removed.
pub fn ground_homography(calib: &CameraCalibration) -> Result<Matrix3<f64>> {
    let p = projection_matrix(calib);
    let mut h = Matrix3::zeros();
    h.set_column(0, &p.column(0));
    h.set_column(1, &p.column(1));
    h.set_column(2, &p.column(3));
    if is_singular(&h) {
        return Err(Error::SingularHomography);
    }
    Ok(h)
}

/// Maps a ground point through a homography to pixel coordinates.
pub fn ground_to_image(h: &Matrix3<f64>, x: f64, y: f64) -> Result<(f64, f64)> {
    dehomogenize(h * Vector3::new(x, y, 1.0))
}

/// Back-projects a pixel onto the ground plane through `H⁻¹`.
pub fn image_to_ground(h: &Matrix3<f64>, u: f64, v: f64) -> Result<(f64, f64)> {
    if is_singular(h) {
        return Err(Error::SingularHomography);
    }
    let inv = h.try_inverse().ok_or(Error::SingularHomography)?;
    let g = inv * Vector3::new(u, v, 1.0);
    if g.z.abs() < DEPTH_EPS {
        return Err(Error::PointAtInfinity);
    }
    Ok((g.x / g.z, g.y / g.z))
}

fn is_singular(h: &Matrix3<f64>) -> bool {
    let scale = h.norm();
    if !(scale > 0.0) || !scale.is_finite() {
        return true;
    }
    h.determinant().abs() <= 1e-12 * scale * scale * scale
}

/// Integer grid cell, `row` along world `x` and `col` along world `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Fractional position inside a cell, each component in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Subcell {
    pub drow: f64,
    pub dcol: f64,
}

impl Subcell {
    pub const fn new(drow: f64, dcol: f64) -> Self {
        Self { drow, dcol }
    }
}

/// Default resolution of ground annotations, meters per cell.
pub const BASE_CELL_METERS: f64 = 0.10;
/// Default downsampling of the annotation grid.
pub const DEFAULT_DOWNSAMPLE: u32 = 4;

/// Discretized ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundGrid {
    /// World `(x, y)` of the corner of cell `(0, 0)`.
    pub origin: (f64, f64),
    pub cell_size: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GroundGrid {
    pub fn new(origin: (f64, f64), cell_size: f64, rows: usize, cols: usize) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::InvalidGrid("cell_size must be positive"));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidGrid("rows and cols must be positive"));
        }
        if !origin.0.is_finite() || !origin.1.is_finite() {
            return Err(Error::InvalidGrid("origin must be finite"));
        }
        Ok(Self {
            origin,
            cell_size,
            rows,
            cols,
        })
    }

    /// Grid covering `x_extent × y_extent` meters from the origin, with
    /// `cell_size = base_cell · downsample`.
    pub fn from_extent(
        origin: (f64, f64),
        x_extent: f64,
        y_extent: f64,
        base_cell: f64,
        downsample: u32,
    ) -> Result<Self> {
        let cell = base_cell * f64::from(downsample);
        if !(cell > 0.0) {
            return Err(Error::InvalidGrid("cell_size must be positive"));
        }
        let count = |extent: f64| libm::ceil(snap(extent / cell)) as usize;
        Self::new(origin, cell, count(x_extent), count(y_extent))
    }

    /// 12 m × 36 m region at 0.4 m cells (30 × 90).
    pub fn wildtrack() -> Self {
        Self::from_extent((0.0, 0.0), 12.0, 36.0, BASE_CELL_METERS, DEFAULT_DOWNSAMPLE)
            .expect("preset grid is valid")
    }

    /// 16 m × 25 m region at 0.4 m cells (40 × 63).
    pub fn multiviewx() -> Self {
        Self::from_extent((0.0, 0.0), 16.0, 25.0, BASE_CELL_METERS, DEFAULT_DOWNSAMPLE)
            .expect("preset grid is valid")
    }

    pub fn x_extent(&self) -> f64 {
        self.rows as f64 * self.cell_size
    }

    pub fn y_extent(&self) -> f64 {
        self.cols as f64 * self.cell_size
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    /// Cell containing `(x, y)`, or `None` when the point is outside the grid.
    pub fn world_to_grid(&self, x: f64, y: f64) -> Option<Cell> {
        let row = self.axis_index(x - self.origin.0)?;
        let col = self.axis_index(y - self.origin.1)?;
        let cell = Cell::new(row, col);
        self.contains(cell).then_some(cell)
    }

    fn axis_index(&self, offset: f64) -> Option<usize> {
        let q = floor(snap(offset / self.cell_size));
        if !q.is_finite() || q < 0.0 {
            return None;
        }
        Some(q as usize)
    }

    /// World coordinates of a cell center.
    pub fn grid_to_world(&self, cell: Cell) -> (f64, f64) {
        self.position(cell, Subcell::new(0.5, 0.5))
    }

    /// World coordinates of a sub-cell position.
    pub fn position(&self, cell: Cell, subcell: Subcell) -> (f64, f64) {
        (
            self.origin.0 + (cell.row as f64 + subcell.drow) * self.cell_size,
            self.origin.1 + (cell.col as f64 + subcell.dcol) * self.cell_size,
        )
    }

    /// Cell and sub-cell offset of a world point inside the grid.
    pub fn locate(&self, x: f64, y: f64) -> Option<(Cell, Subcell)> {
        let cell = self.world_to_grid(x, y)?;
        let frac = |v: f64, o: f64, i: usize| {
            let f = (v - o) / self.cell_size - i as f64;
            f.clamp(0.0, 1.0 - f64::EPSILON)
        };
        Some((
            cell,
            Subcell::new(
                frac(x, self.origin.0, cell.row),
                frac(y, self.origin.1, cell.col),
            ),
        ))
    }
}

/// Snaps quotients that are integers up to rounding error (`1.2 / 0.4`) onto
/// the integer.
fn snap(q: f64) -> f64 {
    let r = libm::round(q);
    if (q - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        q
    }
}
