use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[min_x, max_x] × [min_y, max_y]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.min[0], r.min[1], r.max[0], r.max[1]]
    }
}

impl Rect {
    pub const fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min: [min_x, min_y],
            max: [max_x, max_y],
        }
    }

    /// Strict interior test; points on the boundary are outside.
    pub fn contains_open(&self, p: [f64; 2]) -> bool {
        p[0] > self.min[0] && p[0] < self.max[0] && p[1] > self.min[1] && p[1] < self.max[1]
    }

    pub fn contains_closed(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        let w = (self.max[0].min(other.max[0]) - self.min[0].max(other.min[0])).max(0.0);
        let h = (self.max[1].min(other.max[1]) - self.min[1].max(other.min[1])).max(0.0);
        w * h
    }

    fn is_valid(&self) -> bool {
        self.min.iter().chain(&self.max).all(|v| v.is_finite())
            && self.max[0] > self.min[0]
            && self.max[1] > self.min[1]
    }
}

/// Static maze layout plus task endpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeSpec {
    pub name: String,
    pub arena: Rect,
    #[serde(default)]
    pub walls: Vec<Rect>,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub episode_length: usize,
    /// Zero the coordinate slots and append a coarse top-down view.
    #[serde(default)]
    pub images: bool,
}

/// Cell size used by the construction-time reachability flood fill.
const FLOOD_CELL: f64 = 0.25;

impl MazeSpec {
    /// Checks endpoint placement and start-to-goal connectivity.
    pub fn validate(&self) -> Result<()> {
        if !self.arena.is_valid() || self.walls.iter().any(|w| !w.is_valid()) {
            return Err(Error::Config(format!("{}: degenerate rectangle", self.name)));
        }
        if self.episode_length == 0 {
            return Err(Error::Config(format!("{}: episode_length must be ≥ 1", self.name)));
        }
        for (label, p) in [("start", self.start), ("goal", self.goal)] {
            if !self.arena.contains_open(p) {
                return Err(Error::Config(format!(
                    "{}: {label} {p:?} not strictly inside arena",
                    self.name
                )));
            }
            if self.in_wall(p) {
                return Err(Error::Config(format!(
                    "{}: {label} {p:?} lies inside a wall",
                    self.name
                )));
            }
        }
        if !self.reachable() {
            return Err(Error::Config(format!(
                "{}: no collision-free path from start to goal",
                self.name
            )));
        }
        Ok(())
    }

    pub fn in_wall(&self, p: [f64; 2]) -> bool {
        self.walls.iter().any(|w| w.contains_open(p))
    }

    /// Position is inside the arena and not inside any wall.
    pub fn is_free(&self, p: [f64; 2]) -> bool {
        self.arena.contains_closed(p) && !self.in_wall(p)
    }

    fn reachable(&self) -> bool {
        let nx = (self.arena.width() / FLOOD_CELL).ceil() as usize;
        let ny = (self.arena.height() / FLOOD_CELL).ceil() as usize;
        let cell_of = |p: [f64; 2]| {
            let i = (((p[0] - self.arena.min[0]) / FLOOD_CELL) as usize).min(nx - 1);
            let j = (((p[1] - self.arena.min[1]) / FLOOD_CELL) as usize).min(ny - 1);
            (i, j)
        };
        let free = |i: usize, j: usize| {
            let cell = Rect::new(
                self.arena.min[0] + i as f64 * FLOOD_CELL,
                self.arena.min[1] + j as f64 * FLOOD_CELL,
                self.arena.min[0] + (i + 1) as f64 * FLOOD_CELL,
                self.arena.min[1] + (j + 1) as f64 * FLOOD_CELL,
            );
            self.walls.iter().all(|w| w.intersection_area(&cell) <= 0.0)
        };
        let start = cell_of(self.start);
        let goal = cell_of(self.goal);
        let mut seen = vec![false; nx * ny];
        let mut queue = VecDeque::from([start]);
        seen[start.1 * nx + start.0] = true;
        while let Some((i, j)) = queue.pop_front() {
            if (i, j) == goal {
                return true;
            }
            let mut push = |a: usize, b: usize| {
                if !seen[b * nx + a] && free(a, b) {
                    seen[b * nx + a] = true;
                    queue.push_back((a, b));
                }
            };
            if i > 0 {
                push(i - 1, j);
            }
            if i + 1 < nx {
                push(i + 1, j);
            }
            if j > 0 {
                push(i, j - 1);
            }
            if j + 1 < ny {
                push(i, j + 1);
            }
        }
        false
    }

    /// ⊃-shaped corridor: 12×12 arena with a single block, start (0,0), goal (0,8).
    pub fn point_maze() -> Self {
        Self {
            name: "point_maze".into(),
            arena: Rect::new(-2.0, -2.0, 10.0, 10.0),
            walls: vec![Rect::new(-2.0, 2.0, 6.0, 6.0)],
            start: [0.0, 0.0],
            goal: [0.0, 8.0],
            episode_length: 500,
            images: false,
        }
    }

    /// 18×18 arena split into four rooms by cross walls with 2-wide doorways.
    pub fn four_rooms() -> Self {
        let (lo, hi) = (6.5, 7.5);
        Self {
            name: "four_rooms".into(),
            arena: Rect::new(-2.0, -2.0, 16.0, 16.0),
            walls: vec![
                // vertical wall at x = 7, doorways centred at y = 3 and y = 11
                Rect::new(lo, -2.0, hi, 2.0),
                Rect::new(lo, 4.0, hi, 10.0),
                Rect::new(lo, 12.0, hi, 16.0),
                // horizontal wall at y = 7, doorways centred at x = 3 and x = 11
                Rect::new(-2.0, lo, 2.0, hi),
                Rect::new(4.0, lo, lo, hi),
                Rect::new(hi, lo, 10.0, hi),
                Rect::new(12.0, lo, 16.0, hi),
            ],
            start: [0.0, 0.0],
            goal: [14.0, 14.0],
            episode_length: 1000,
            images: false,
        }
    }

    /// Built-in presets: `point_maze`, `four_rooms`, and their `_images` variants.
    pub fn preset(name: &str) -> Result<Self> {
        let (base, images) = match name.strip_suffix("_images") {
            Some(b) => (b, true),
            None => (name, false),
        };
        let mut spec = match base {
            "point_maze" => Self::point_maze(),
            "four_rooms" => Self::four_rooms(),
            _ => return Err(Error::Config(format!("unknown maze preset `{name}`"))),
        };
        spec.images = images;
        spec.name = name.to_string();
        Ok(spec)
    }

    /// Parses a maze from TOML text and validates it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: MazeSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}
