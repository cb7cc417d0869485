use crate::numerics::Grid2D;

use super::{Cell, MazeSpec, Pose, FINE};

/// Default local window extent in fine cells.
pub const LOCAL_MAP_SIZE: usize = 15;

/// Fine-cell map image: -0.5 walls, +0.5 everything navigable.
#[derive(Clone, Debug, PartialEq)]
pub struct MapRaster {
    pub grid: Grid2D,
}

impl MapRaster {
    pub fn side(&self) -> usize {
        self.grid.rows
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.len() == 0
    }
}

/// North-up `L x L` window centred on a fine cell; zero outside the map.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMapGrid {
    pub grid: Grid2D,
}

pub fn rasterize_map(maze: &MazeSpec) -> MapRaster {
    let n = maze.fine_width();
    MapRaster {
        grid: Grid2D::from_fn(n, n, |r, c| if maze.fine_cell(r, c).is_navigable() { 0.5 } else { -0.5 }),
    }
}

/// Map image fed to the map-interpretation network. Identical to the raster
/// except that the target maze cell carries an X of dark pixels (corners and
/// centre of its 3x3 block), so the target is visible in the image.
pub fn map_image(maze: &MazeSpec) -> Grid2D {
    let mut g = rasterize_map(maze).grid;
    let (tr, tc) = maze.target();
    for (dr, dc) in [(0, 0), (0, 2), (1, 1), (2, 0), (2, 2)] {
        g.set(tr * FINE + dr, tc * FINE + dc, -0.5);
    }
    debug_assert_eq!(maze.cell(tr, tc), Cell::Target);
    g
}

/// `size x size` excerpt of `source` centred on fine cell `(row, col)`.
pub fn window(source: &Grid2D, row: usize, col: usize, size: usize) -> Grid2D {
    let half = (size / 2) as isize;
    Grid2D::from_fn(size, size, |u, v| {
        source.get_or_zero(row as isize + u as isize - half, col as isize + v as isize - half)
    })
}

pub fn true_local_map(maze: &MazeSpec, pose: &Pose, size: usize) -> LocalMapGrid {
    let (r, c) = pose.fine_cell();
    LocalMapGrid { grid: window(&rasterize_map(maze).grid, r, c, size) }
}

/// Row-major index of the fine cell containing the pose.
pub fn true_cell_index(pose: &Pose, maze: &MazeSpec) -> usize {
    let (r, c) = pose.fine_cell();
    r * maze.fine_width() + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::generate_maze;

    fn pose_at(row: f64, col: f64) -> Pose {
        Pose { row, col, heading: 0.0, vel: (0.0, 0.0) }
    }

    #[test]
    fn raster_sizes() {
        let m5 = generate_maze(5, 1).unwrap();
        let r5 = rasterize_map(&m5);
        assert_eq!((r5.grid.rows, r5.grid.cols), (15, 15));
        // outer wall ring expands to three rows of -0.5
        for fr in 0..3 {
            assert!(r5.grid.row(fr).iter().all(|&v| v == -0.5));
        }
        let m21 = generate_maze(21, 1).unwrap();
        assert_eq!(rasterize_map(&m21).len(), 3969);
    }

    #[test]
    fn blocks_are_uniform_and_target_is_white() {
        let m = generate_maze(9, 4).unwrap();
        let r = rasterize_map(&m);
        for fr in 0..27 {
            for fc in 0..27 {
                let expect = if m.cell(fr / 3, fc / 3) == Cell::Wall { -0.5 } else { 0.5 };
                assert_eq!(r.grid.get(fr, fc), expect);
            }
        }
        let img = map_image(&m);
        let (tr, tc) = m.target();
        assert_eq!(img.get(3 * tr + 1, 3 * tc + 1), -0.5);
        assert_eq!(img.get(3 * tr, 3 * tc + 1), 0.5);
    }

    #[test]
    fn index_and_window() {
        let m = generate_maze(5, 2).unwrap();
        assert_eq!(true_cell_index(&pose_at(3.2, 3.9), &m), 48);
        assert_eq!(true_cell_index(&pose_at(3.2, 6.9), &m), 51);
        let lm = true_local_map(&m, &pose_at(1.5, 1.5), LOCAL_MAP_SIZE);
        // cells above/left of the map are padding
        assert_eq!(lm.grid.get(0, 0), 0.0);
        assert_eq!(lm.grid.get(5, 7), 0.0);
        assert_eq!(lm.grid.get(7, 7), -0.5);
    }

    #[test]
    fn open_room_window_is_uniform() {
        let mut cells = vec![Cell::Wall; 11 * 11];
        for r in 1..10 {
            for c in 1..10 {
                cells[r * 11 + c] = Cell::Open;
            }
        }
        let grid = Grid2D::from_fn(33, 33, |r, c| if cells[(r / 3) * 11 + c / 3] == Cell::Wall { -0.5 } else { 0.5 });
        let w = window(&grid, 16, 16, 15);
        assert!(w.data.iter().all(|&v| v == 0.5));
    }
}
