//! Grid mazes, the fine-cell map raster, agent dynamics, first-person
//! rendering and the ground-truth oracles used by the training losses.
//!
//! Coordinates: positions are `(row, col)` in fine-cell units, three fine
//! cells per maze cell. North is `-row`, east is `+col`; headings are degrees
//! clockwise from north.

mod env;
mod raster;
mod render;
mod visibility;

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use env::{Action, EnvConfig, EnvState, Pose, StepOutcome};
pub use raster::{map_image, rasterize_map, true_cell_index, true_local_map, window, LocalMapGrid, MapRaster, LOCAL_MAP_SIZE};
pub use render::{render, render_with_hits, Observation, RenderConfig, RayHit};
pub use visibility::{discretize_angle, line_of_sight, true_visible_local_map, AngleCode, ANGLE_BINS, FOV_DEGREES};

/// Fine cells per maze cell along each axis.
pub const FINE: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum MazeError {
    #[error("invalid maze size {0}: width must be odd and within 5..=63")]
    InvalidSize(usize),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("malformed maze text: {0}")]
    Parse(String),
    #[error("maze violates invariant: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Open,
    Target,
    Spawn,
}

impl Cell {
    pub fn is_navigable(self) -> bool {
        !matches!(self, Cell::Wall)
    }

    fn symbol(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Open => '.',
            Cell::Target => 'X',
            Cell::Spawn => 'S',
        }
    }

    fn from_symbol(c: char) -> Option<Cell> {
        Some(match c {
            '#' => Cell::Wall,
            '.' => Cell::Open,
            'X' => Cell::Target,
            'S' => Cell::Spawn,
            _ => return None,
        })
    }
}

/// Square maze of `width x width` cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MazeSpec {
    width: usize,
    seed: u64,
    cells: Vec<Cell>,
}

impl MazeSpec {
    /// Builds a maze from explicit cells and checks every invariant.
    pub fn from_cells(width: usize, seed: u64, cells: Vec<Cell>) -> Result<Self, MazeError> {
        if cells.len() != width * width {
            return Err(MazeError::Parse(format!("expected {} cells, got {}", width * width, cells.len())));
        }
        let m = MazeSpec { width, seed, cells };
        m.validate()?;
        Ok(m)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cell(&self, r: usize, c: usize) -> Cell {
        self.cells[r * self.width + c]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn fine_width(&self) -> usize {
        self.width * FINE
    }

    /// Number of fine location cells `N`.
    pub fn fine_count(&self) -> usize {
        self.fine_width() * self.fine_width()
    }

    pub fn fine_cell(&self, fr: usize, fc: usize) -> Cell {
        self.cell(fr / FINE, fc / FINE)
    }

    /// True for wall fine cells and for anything outside the map.
    pub fn fine_is_wall(&self, fr: isize, fc: isize) -> bool {
        let n = self.fine_width() as isize;
        if fr < 0 || fc < 0 || fr >= n || fc >= n {
            return true;
        }
        self.fine_cell(fr as usize, fc as usize) == Cell::Wall
    }

    pub fn fine_is_target(&self, fr: isize, fc: isize) -> bool {
        let n = self.fine_width() as isize;
        fr >= 0 && fc >= 0 && fr < n && fc < n && self.fine_cell(fr as usize, fc as usize) == Cell::Target
    }

    fn find(&self, kind: Cell) -> Option<(usize, usize)> {
        self.cells.iter().position(|&c| c == kind).map(|i| (i / self.width, i % self.width))
    }

    pub fn target(&self) -> (usize, usize) {
        self.find(Cell::Target).expect("validated maze has a target")
    }

    pub fn spawn(&self) -> (usize, usize) {
        self.find(Cell::Spawn).expect("validated maze has a spawn")
    }

    pub fn navigable_cells(&self) -> Vec<(usize, usize)> {
        (0..self.width)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.cell(r, c).is_navigable())
            .collect()
    }

    /// Per-fine-cell planner input from ground truth: 1.0 target, 0.99
    /// navigable, 0 wall.
    pub fn ground_truth_values(&self) -> Vec<f64> {
        let n = self.fine_width();
        let mut v = Vec::with_capacity(n * n);
        for fr in 0..n {
            for fc in 0..n {
                v.push(match self.fine_cell(fr, fc) {
                    Cell::Wall => 0.0,
                    Cell::Target => 1.0,
                    Cell::Open | Cell::Spawn => 0.99,
                });
            }
        }
        v
    }

    /// BFS distance (4-neighbourhood, fine grid) from each fine cell to the
    /// nearest target fine cell; `None` for walls and unreachable cells.
    pub fn fine_distance_to_target(&self) -> Vec<Option<u32>> {
        let n = self.fine_width();
        let mut dist = vec![None; n * n];
        let mut queue = VecDeque::new();
        for fr in 0..n {
            for fc in 0..n {
                if self.fine_cell(fr, fc) == Cell::Target {
                    dist[fr * n + fc] = Some(0);
                    queue.push_back((fr, fc));
                }
            }
        }
        while let Some((r, c)) = queue.pop_front() {
            let d = dist[r * n + c].unwrap();
            for (dr, dc) in [(-1isize, 0isize), (0, 1), (1, 0), (0, -1)] {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if self.fine_is_wall(nr, nc) {
                    continue;
                }
                let idx = nr as usize * n + nc as usize;
                if dist[idx].is_none() {
                    dist[idx] = Some(d + 1);
                    queue.push_back((nr as usize, nc as usize));
                }
            }
        }
        dist
    }

    /// Checks the border, the single target/spawn and the tree property.
    pub fn validate(&self) -> Result<(), MazeError> {
        let w = self.width;
        if w < 5 || w % 2 == 0 || w > 63 {
            return Err(MazeError::InvalidSize(w));
        }
        for i in 0..w {
            for (r, c) in [(0, i), (w - 1, i), (i, 0), (i, w - 1)] {
                if self.cell(r, c) != Cell::Wall {
                    return Err(MazeError::Invalid(format!("border cell ({r},{c}) is not a wall")));
                }
            }
        }
        let targets = self.cells.iter().filter(|&&c| c == Cell::Target).count();
        let spawns = self.cells.iter().filter(|&&c| c == Cell::Spawn).count();
        if targets != 1 || spawns != 1 {
            return Err(MazeError::Invalid(format!("{targets} targets and {spawns} spawns")));
        }
        let nav = self.navigable_cells();
        let mut edges = 0;
        for &(r, c) in &nav {
            if self.cell(r + 1, c).is_navigable() {
                edges += 1;
            }
            if self.cell(r, c + 1).is_navigable() {
                edges += 1;
            }
        }
        // connectivity
        let mut seen = vec![false; w * w];
        let mut stack = vec![nav[0]];
        seen[nav[0].0 * w + nav[0].1] = true;
        let mut reached = 0;
        while let Some((r, c)) = stack.pop() {
            reached += 1;
            for (nr, nc) in [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)] {
                if self.cell(nr, nc).is_navigable() && !seen[nr * w + nc] {
                    seen[nr * w + nc] = true;
                    stack.push((nr, nc));
                }
            }
        }
        if reached != nav.len() || edges + 1 != nav.len() {
            return Err(MazeError::Invalid(format!(
                "navigable graph is not a tree ({} cells, {edges} edges, {reached} reachable)",
                nav.len()
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "width {} seed {}", self.width, self.seed).unwrap();
        for r in 0..self.width {
            let line: String = (0..self.width).map(|c| self.cell(r, c).symbol()).collect();
            writeln!(s, "{line}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, MazeError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| MazeError::Parse("empty file".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (width, seed) = match parts.as_slice() {
            ["width", w, "seed", s] => (
                w.parse::<usize>().map_err(|e| MazeError::Parse(format!("width: {e}")))?,
                s.parse::<u64>().map_err(|e| MazeError::Parse(format!("seed: {e}")))?,
            ),
            _ => return Err(MazeError::Parse(format!("bad header {header:?}"))),
        };
        let mut cells = Vec::with_capacity(width * width);
        for (i, line) in lines.take(width).enumerate() {
            let row: Vec<Cell> = line
                .trim_end()
                .chars()
                .map(|ch| Cell::from_symbol(ch).ok_or_else(|| MazeError::Parse(format!("line {}: bad symbol {ch:?}", i + 2))))
                .collect::<Result<_, _>>()?;
            if row.len() != width {
                return Err(MazeError::Parse(format!("line {} has {} cells, expected {width}", i + 2, row.len())));
            }
            cells.extend(row);
        }
        Self::from_cells(width, seed, cells)
    }
}

/// Seeded randomized depth-first-search maze with spawn and target at
/// Manhattan distance at least `width / 2`.
pub fn generate_maze(width: usize, seed: u64) -> Result<MazeSpec, MazeError> {
    if width < 5 || width % 2 == 0 || width > 63 {
        return Err(MazeError::InvalidSize(width));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((width as u64) << 56) ^ 0x6d61_7a65);
    let mut cells = vec![Cell::Wall; width * width];
    let nodes = (width - 1) / 2;
    let mut visited = vec![false; nodes * nodes];
    let start = (rng.gen_range(0..nodes), rng.gen_range(0..nodes));
    let mut stack = vec![start];
    visited[start.0 * nodes + start.1] = true;
    cells[(2 * start.0 + 1) * width + 2 * start.1 + 1] = Cell::Open;
    while let Some(&(r, c)) = stack.last() {
        let mut next: Vec<(usize, usize)> = Vec::with_capacity(4);
        if r > 0 && !visited[(r - 1) * nodes + c] {
            next.push((r - 1, c));
        }
        if r + 1 < nodes && !visited[(r + 1) * nodes + c] {
            next.push((r + 1, c));
        }
        if c > 0 && !visited[r * nodes + c - 1] {
            next.push((r, c - 1));
        }
        if c + 1 < nodes && !visited[r * nodes + c + 1] {
            next.push((r, c + 1));
        }
        match next.choose(&mut rng) {
            Some(&(nr, nc)) => {
                visited[nr * nodes + nc] = true;
                cells[(2 * nr + 1) * width + 2 * nc + 1] = Cell::Open;
                cells[(r + nr + 1) * width + c + nc + 1] = Cell::Open;
                stack.push((nr, nc));
            }
            None => {
                stack.pop();
            }
        }
    }
    let nav: Vec<(usize, usize)> = (0..width * width).filter(|&i| cells[i] == Cell::Open).map(|i| (i / width, i % width)).collect();
    let pairs: Vec<((usize, usize), (usize, usize))> = nav
        .iter()
        .flat_map(|&a| nav.iter().map(move |&b| (a, b)))
        .filter(|&(a, b)| 2 * (a.0.abs_diff(b.0) + a.1.abs_diff(b.1)) >= width)
        .collect();
    let &(spawn, target) = pairs.choose(&mut rng).expect("opposite corners are always far enough apart");
    cells[spawn.0 * width + spawn.1] = Cell::Spawn;
    cells[target.0 * width + target.1] = Cell::Target;
    let maze = MazeSpec { width, seed, cells };
    debug_assert!(maze.validate().is_ok());
    Ok(maze)
}

/// Path of maze `index` of a given size inside a maze-set directory.
pub fn maze_path(set_dir: &Path, size: usize, index: usize) -> PathBuf {
    set_dir.join(size.to_string()).join(format!("{index}.maze"))
}

pub fn write_maze(path: &Path, maze: &MazeSpec) -> Result<(), MazeError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, maze.to_text())?;
    Ok(())
}

pub fn read_maze(path: &Path) -> Result<MazeSpec, MazeError> {
    MazeSpec::from_text(&fs::read_to_string(path)?)
}

/// Loads a `<set>/<size>/<index>.maze` directory, sorted by size then index.
pub fn read_maze_set(set_dir: &Path) -> Result<Vec<(usize, usize, MazeSpec)>, MazeError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(set_dir)? {
        let entry = entry?;
        let Some(size) = entry.file_name().to_str().and_then(|s| s.parse::<usize>().ok()) else { continue };
        if !entry.file_type()?.is_dir() {
            continue;
        }
        for f in fs::read_dir(entry.path())? {
            let f = f?;
            let name = f.file_name();
            let Some(index) = name.to_str().and_then(|s| s.strip_suffix(".maze")).and_then(|s| s.parse::<usize>().ok()) else {
                continue;
            };
            out.push((size, index, read_maze(&f.path())?));
        }
    }
    out.sort_by_key(|(s, i, _)| (*s, *i));
    Ok(out)
}
