//! SE(2) ego poses and the bird's-eye-view grid they act on.
//!
//! Grid convention: the ego vehicle sits at the grid center. Column index `j`
//! runs along ego-forward `x`, row index `i` along ego-left `y`, and a cell's
//! value lives at its center.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar rigid transform: translation in meters, heading in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(yaw: f64) -> f64 {
    if yaw > -PI && yaw <= PI {
        return yaw;
    }
    let a = yaw.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, yaw: 0.0 };

    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 { x, y, yaw: normalize_angle(yaw) }
    }

    /// `self ∘ other`: the pose of frame `other` expressed through frame `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(
            c * other.x - s * other.y + self.x,
            s * other.x + c * other.y + self.y,
            self.yaw + other.yaw,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)
    }

    /// Maps a point given in this pose's child frame into its parent frame.
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [c * p[0] - s * p[1] + self.x, s * p[0] + c * p[1] + self.y]
    }

    pub fn is_identity(&self) -> bool {
        self.x == 0.0 && self.y == 0.0 && self.yaw == 0.0
    }

    pub fn approx_eq(&self, other: &Pose2, tol: f64) -> bool {
        (self.x - other.x).abs() <= tol
            && (self.y - other.y).abs() <= tol
            && normalize_angle(self.yaw - other.yaw).abs() <= tol
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Pose2::IDENTITY
    }
}

/// Transform taking coordinates in the previous ego frame to the current one.
///
/// Both poses are world-frame ego poses. A world-fixed point `p_prev` seen from
/// `pose_prev` lands at `relative_transform(prev, cur).apply(p_prev)` when seen
/// from `pose_cur`.
pub fn relative_transform(pose_prev: &Pose2, pose_cur: &Pose2) -> Pose2 {
    if pose_prev == pose_cur {
        return Pose2::IDENTITY;
    }
    pose_cur.inverse().compose(pose_prev)
}

/// BEV raster geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Lateral cells (rows, ego-left `y`).
    pub h_cells: usize,
    /// Longitudinal cells (columns, ego-forward `x`).
    pub w_cells: usize,
    pub cell_size_m: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { h_cells: 50, w_cells: 100, cell_size_m: 1.0 }
    }
}

/// Fractional coordinates within this distance of an integer snap to it.
const SNAP_TOL: f64 = 1e-9;

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_TOL {
        r
    } else {
        v
    }
}

impl GridSpec {
    pub fn new(h_cells: usize, w_cells: usize, cell_size_m: f64) -> Result<Self> {
        let spec = GridSpec { h_cells, w_cells, cell_size_m };
        spec.validate()?;
        Ok(spec)
    }

    /// The reduced grid used by the desk-scale benchmark.
    pub fn benchmark() -> Self {
        GridSpec { h_cells: 32, w_cells: 64, cell_size_m: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h_cells == 0 || self.w_cells == 0 {
            return Err(Error::InvalidArgument("grid must have at least one cell per axis".into()));
        }
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return Err(Error::InvalidArgument("cell_size_m must be positive".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.h_cells * self.w_cells
    }

    fn center(&self) -> (f64, f64) {
        ((self.h_cells as f64 - 1.0) / 2.0, (self.w_cells as f64 - 1.0) / 2.0)
    }

    /// Ego-frame meters to fractional `(row, col)` grid coordinates.
    pub fn ego_to_grid(&self, p: [f64; 2]) -> (f64, f64) {
        let (ci, cj) = self.center();
        (p[1] / self.cell_size_m + ci, p[0] / self.cell_size_m + cj)
    }

    /// Fractional `(row, col)` grid coordinates to ego-frame meters.
    pub fn grid_to_ego(&self, i: f64, j: f64) -> [f64; 2] {
        let (ci, cj) = self.center();
        [(j - cj) * self.cell_size_m, (i - ci) * self.cell_size_m]
    }

    /// Whether a fractional coordinate lies on the sampled lattice hull.
    pub fn contains(&self, i: f64, j: f64) -> bool {
        i >= 0.0 && i <= (self.h_cells - 1) as f64 && j >= 0.0 && j <= (self.w_cells - 1) as f64
    }

    /// Index of the cell whose center is nearest, if that cell exists.
    pub fn nearest_cell(&self, i: f64, j: f64) -> Option<(usize, usize)> {
        let (ri, rj) = (i.round(), j.round());
        if ri < 0.0 || rj < 0.0 || ri > (self.h_cells - 1) as f64 || rj > (self.w_cells - 1) as f64 {
            return None;
        }
        Some((ri as usize, rj as usize))
    }

    /// Source coordinate in the previous grid for a (fractional) coordinate in
    /// the current grid, under relative transform `rel` (previous → current).
    pub fn map_back(&self, rel: &Pose2, i: f64, j: f64) -> (f64, f64) {
        if rel.is_identity() {
            return (i, j);
        }
        let q = self.grid_to_ego(i, j);
        let p = rel.inverse().apply(q);
        let (si, sj) = self.ego_to_grid(p);
        (snap(si), snap(sj))
    }
}

/// Per-cell fractional source coordinates for a backward warp.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub h: usize,
    pub w: usize,
    /// `(row, col)` source coordinates, destination cells in row-major order.
    pub coords: Vec<(f64, f64)>,
}

impl Flow {
    pub fn source(&self, i: usize, j: usize) -> (f64, f64) {
        self.coords[i * self.w + j]
    }

    /// True when the source coordinate lies inside `[0, h-1] x [0, w-1]`.
    pub fn in_bounds(&self, i: usize, j: usize) -> bool {
        let (si, sj) = self.source(i, j);
        si >= 0.0 && si <= (self.h - 1) as f64 && sj >= 0.0 && sj <= (self.w - 1) as f64
    }
}

/// For every destination cell center of the current frame, the fractional
/// coordinate of the same world point in the previous frame's grid.
pub fn backward_flow(spec: &GridSpec, rel: &Pose2) -> Flow {
    let mut coords = Vec::with_capacity(spec.cells());
    for i in 0..spec.h_cells {
        for j in 0..spec.w_cells {
            coords.push(spec.map_back(rel, i as f64, j as f64));
        }
    }
    Flow { h: spec.h_cells, w: spec.w_cells, coords }
}
