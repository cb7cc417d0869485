use super::visibility::{discretize_angle, AngleCode};
use super::{MazeSpec, Pose};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov: f64,
    /// Wall height and camera height in fine cells.
    pub wall_height: f64,
    pub camera_height: f64,
    pub floor: [f32; 3],
    pub target_floor: [f32; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 32,
            height: 32,
            fov: 90.0,
            wall_height: 3.0,
            camera_height: 1.5,
            floor: [0.2, 0.2, 0.2],
            target_floor: [0.1, 0.7, 0.1],
        }
    }
}

/// First-person image stored channel-major (`3 x H x W`), values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub image: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub angle: AngleCode,
}

impl Observation {
    pub fn pixel(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.image[(channel * self.height + y) * self.width + x]
    }
}

/// Wall fine cell struck by one image column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub row: isize,
    pub col: isize,
    /// Perpendicular (camera-plane) distance.
    pub distance: f64,
}

pub fn render(maze: &MazeSpec, pose: &Pose, cfg: &RenderConfig) -> Observation {
    render_with_hits(maze, pose, cfg).0
}

/// Casts one ray per column. Returns the image and the wall cell each
/// column hit.
pub fn render_with_hits(maze: &MazeSpec, pose: &Pose, cfg: &RenderConfig) -> (Observation, Vec<RayHit>) {
    let (w, h) = (cfg.width, cfg.height);
    let (fr, fc) = pose.forward();
    // right-hand camera plane
    let (pr, pc) = (fc, -fr);
    let half_plane = (cfg.fov.to_radians() / 2.0).tan();
    let focal = w as f64 / 2.0 / half_plane;
    let mut image = vec![0f32; 3 * w * h];
    let mut hits = Vec::with_capacity(w);
    for x in 0..w {
        let u = half_plane * (2.0 * (x as f64 + 0.5) / w as f64 - 1.0);
        let ray = (fr + pr * u, fc + pc * u);
        let hit = cast(maze, pose.row, pose.col, ray);
        hits.push(hit);
        let top = focal * (cfg.wall_height - cfg.camera_height) / hit.distance;
        let bottom = focal * cfg.camera_height / hit.distance;
        let shade = (1.0 / hit.distance).min(1.0) as f32;
        for y in 0..h {
            let dy = y as f64 + 0.5 - h as f64 / 2.0;
            let colour = if dy < 0.0 && -dy < top || dy >= 0.0 && dy < bottom {
                [shade; 3]
            } else if dy > 0.0 {
                let d = focal * cfg.camera_height / dy;
                let (wr, wc) = (pose.row + ray.0 * d, pose.col + ray.1 * d);
                if maze.fine_is_target(wr.floor() as isize, wc.floor() as isize) {
                    cfg.target_floor
                } else {
                    cfg.floor
                }
            } else {
                [0.0; 3]
            };
            for (ch, v) in colour.iter().enumerate() {
                image[(ch * h + y) * w + x] = *v;
            }
        }
    }
    let obs = Observation { image, height: h, width: w, angle: discretize_angle(pose.heading) };
    (obs, hits)
}

/// Grid DDA; `ray` need not be normalised, distances are in units of its
/// forward component.
fn cast(maze: &MazeSpec, row: f64, col: f64, ray: (f64, f64)) -> RayHit {
    let (mut mr, mut mc) = (row.floor() as isize, col.floor() as isize);
    let dr = if ray.0 == 0.0 { f64::INFINITY } else { (1.0 / ray.0).abs() };
    let dc = if ray.1 == 0.0 { f64::INFINITY } else { (1.0 / ray.1).abs() };
    let (step_r, mut side_r) = if ray.0 < 0.0 { (-1, (row - mr as f64) * dr) } else { (1, (mr as f64 + 1.0 - row) * dr) };
    let (step_c, mut side_c) = if ray.1 < 0.0 { (-1, (col - mc as f64) * dc) } else { (1, (mc as f64 + 1.0 - col) * dc) };
    loop {
        let distance = if side_r < side_c {
            mr += step_r;
            side_r += dr;
            side_r - dr
        } else {
            mc += step_c;
            side_c += dc;
            side_c - dc
        };
        if maze.fine_is_wall(mr, mc) {
            return RayHit { row: mr, col: mc, distance: distance.max(1e-6) };
        }
    }
}
