use crate::numerics::Grid2D;

use super::raster::{rasterize_map, LocalMapGrid};
use super::{MazeSpec, Pose};

pub const ANGLE_BINS: usize = 30;
pub const FOV_DEGREES: f64 = 90.0;
const BIN_DEGREES: f64 = 360.0 / ANGLE_BINS as f64;

/// 3-hot heading code: the bin nearest the heading and its two circular
/// neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AngleCode {
    pub center: usize,
}

impl AngleCode {
    pub fn indices(&self) -> [usize; 3] {
        [(self.center + ANGLE_BINS - 1) % ANGLE_BINS, self.center, (self.center + 1) % ANGLE_BINS]
    }

    pub fn bits(&self) -> [f64; ANGLE_BINS] {
        let mut b = [0.0; ANGLE_BINS];
        for i in self.indices() {
            b[i] = 1.0;
        }
        b
    }

    /// Heading of the centre bin in degrees.
    pub fn quantized_heading(&self) -> f64 {
        self.center as f64 * BIN_DEGREES
    }
}

pub fn discretize_angle(heading: f64) -> AngleCode {
    let bin = (heading.rem_euclid(360.0) / BIN_DEGREES).round() as usize % ANGLE_BINS;
    AngleCode { center: bin }
}

/// Inset sample points of a cell, relative to its top-left corner.
const PROBES: [f64; 3] = [0.05, 0.5, 0.95];

/// Whether any part of fine cell `to` is seen from the centre of fine cell
/// `from`: some probe point of `to` (centre, inset corners, inset edge
/// midpoints) is joined to the centre by a segment passing through the
/// interior of no wall cell other than `to` itself.
pub fn line_of_sight(maze: &MazeSpec, from: (isize, isize), to: (isize, isize)) -> bool {
    seen_within(maze, from, to, None)
}

/// As [`line_of_sight`], counting only probe points whose bearing lies
/// within half the field of view of `heading`.
fn seen_within(maze: &MazeSpec, from: (isize, isize), to: (isize, isize), heading: Option<f64>) -> bool {
    if from == to {
        return true;
    }
    let a = (from.0 as f64 + 0.5, from.1 as f64 + 0.5);
    PROBES
        .iter()
        .flat_map(|&pr| PROBES.iter().map(move |&pc| (to.0 as f64 + pr, to.1 as f64 + pc)))
        .filter(|b| heading.is_none_or(|h| angle_diff(bearing(b.0 - a.0, b.1 - a.1), h).abs() <= FOV_DEGREES / 2.0))
        .any(|b| segment_clear(maze, a, b, to))
}

/// Grid traversal of the segment `a -> b`; grazing a lattice corner enters
/// neither flanking cell.
fn segment_clear(maze: &MazeSpec, a: (f64, f64), b: (f64, f64), goal: (isize, isize)) -> bool {
    let (dr, dc) = (b.0 - a.0, b.1 - a.1);
    let (mut r, mut c) = (a.0.floor() as isize, a.1.floor() as isize);
    let (sr, sc) = (if dr < 0.0 { -1 } else { 1 }, if dc < 0.0 { -1 } else { 1 });
    let t_delta_r = if dr == 0.0 { f64::INFINITY } else { 1.0 / dr.abs() };
    let t_delta_c = if dc == 0.0 { f64::INFINITY } else { 1.0 / dc.abs() };
    let first = |x: f64, cell: isize, d: f64, td: f64| {
        if d == 0.0 {
            f64::INFINITY
        } else if d > 0.0 {
            (cell as f64 + 1.0 - x) * td
        } else {
            (x - cell as f64) * td
        }
    };
    let mut t_r = first(a.0, r, dr, t_delta_r);
    let mut t_c = first(a.1, c, dc, t_delta_c);
    while (r, c) != goal {
        let t = t_r.min(t_c);
        if t >= 1.0 {
            return false;
        }
        if (t_r - t_c).abs() < 1e-12 {
            r += sr;
            c += sc;
            t_r += t_delta_r;
            t_c += t_delta_c;
        } else if t_r < t_c {
            r += sr;
            t_r += t_delta_r;
        } else {
            c += sc;
            t_c += t_delta_c;
        }
        if (r, c) != goal && maze.fine_is_wall(r, c) {
            return false;
        }
    }
    true
}

/// Bearing of `(drow, dcol)` in degrees clockwise from north.
fn bearing(drow: f64, dcol: f64) -> f64 {
    dcol.atan2(-drow).to_degrees()
}

fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + 180.0).rem_euclid(360.0) - 180.0
}

/// Ground-truth visible excerpt: the local raster window with every cell
/// that has no unoccluded probe point inside the field of view around the
/// quantized heading set to 0.
pub fn true_visible_local_map(maze: &MazeSpec, pose: &Pose, size: usize) -> LocalMapGrid {
    let raster = rasterize_map(maze);
    visible_window(maze, &raster.grid, pose, size)
}

pub(crate) fn visible_window(maze: &MazeSpec, raster: &Grid2D, pose: &Pose, size: usize) -> LocalMapGrid {
    let (ar, ac) = pose.fine_cell();
    let (ar, ac) = (ar as isize, ac as isize);
    let heading = discretize_angle(pose.heading).quantized_heading();
    let half = (size / 2) as isize;
    let n = maze.fine_width() as isize;
    let grid = Grid2D::from_fn(size, size, |u, v| {
        let (fr, fc) = (ar + u as isize - half, ac + v as isize - half);
        if fr < 0 || fc < 0 || fr >= n || fc >= n {
            return 0.0;
        }
        if seen_within(maze, (ar, ac), (fr, fc), Some(heading)) {
            raster.get(fr as usize, fc as usize)
        } else {
            0.0
        }
    });
    LocalMapGrid { grid }
}
