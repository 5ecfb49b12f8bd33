use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::maze::{MazeSpec, Rect};

/// Side length of the coarse top-down view.
pub const VIEW_CELLS: usize = 5;
pub const VIEW_CHANNELS: usize = 3;
/// Thickness of the implicit outer wall shown in the top-down view.
const OUTER_WALL: f64 = 1.0;
/// Success threshold on the L2 distance to the goal.
pub const SUCCESS_RADIUS: f64 = 1.5;

/// Point-mass dynamics constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Dynamics {
    /// Velocity change per unit action.
    pub accel_gain: f64,
    /// Per-axis speed cap, in meters per step.
    pub max_speed: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            accel_gain: 0.25,
            max_speed: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub step_index: usize,
}

pub type Observation = Vec<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

impl StepOutcome {
    pub fn success(&self) -> bool {
        self.reward > 0.0
    }
}

pub fn observation_dim(spec: &MazeSpec) -> usize {
    if spec.images {
        6 + VIEW_CELLS * VIEW_CELLS * VIEW_CHANNELS
    } else {
        6
    }
}

pub fn reset(spec: &MazeSpec) -> (EnvState, Observation) {
    let state = EnvState {
        position: spec.start,
        velocity: [0.0, 0.0],
        step_index: 0,
    };
    let obs = observe(spec, &state);
    (state, obs)
}

pub fn observe(spec: &MazeSpec, state: &EnvState) -> Observation {
    let [x, y] = state.position;
    let [vx, vy] = state.velocity;
    let [gx, gy] = spec.goal;
    if spec.images {
        let mut obs = vec![0.0, 0.0, vx, vy, gx, gy];
        obs.extend(render_topdown(spec, state));
        obs
    } else {
        vec![x, y, vx, vy, gx, gy]
    }
}

pub fn distance_to_goal(spec: &MazeSpec, position: [f64; 2]) -> f64 {
    let dx = position[0] - spec.goal[0];
    let dy = position[1] - spec.goal[1];
    (dx * dx + dy * dy).sqrt()
}

/// Advances one step. Actions are clipped to `[-1, 1]²`; motion is resolved
/// along x first, then y, zeroing any velocity component that would enter a wall.
pub fn step(spec: &MazeSpec, dynamics: &Dynamics, state: &EnvState, action: &[f64]) -> StepOutcome {
    let mut next = *state;
    for axis in 0..2 {
        let a = action.get(axis).copied().unwrap_or(0.0);
        let a = if a.is_finite() { a.clamp(-1.0, 1.0) } else { 0.0 };
        next.velocity[axis] = (next.velocity[axis] + dynamics.accel_gain * a)
            .clamp(-dynamics.max_speed, dynamics.max_speed);
    }
    for axis in 0..2 {
        let from = next.position;
        let mut to = from;
        to[axis] += next.velocity[axis];
        if blocked(spec, from, to, axis) {
            next.velocity[axis] = 0.0;
        } else {
            next.position = to;
        }
    }
    next.step_index += 1;
    let reward = if distance_to_goal(spec, next.position) <= SUCCESS_RADIUS {
        1.0
    } else {
        0.0
    };
    let done = reward > 0.0 || next.step_index >= spec.episode_length;
    StepOutcome {
        observation: observe(spec, &next),
        state: next,
        reward,
        done,
    }
}

/// Sweeps the axis-aligned move `from → to` against walls and the arena bounds.
fn blocked(spec: &MazeSpec, from: [f64; 2], to: [f64; 2], axis: usize) -> bool {
    let other = 1 - axis;
    if to[axis] < spec.arena.min[axis] || to[axis] > spec.arena.max[axis] {
        return true;
    }
    let lo = from[axis].min(to[axis]);
    let hi = from[axis].max(to[axis]);
    spec.walls.iter().any(|w| {
        from[other] > w.min[other] && from[other] < w.max[other] && hi > w.min[axis] && lo < w.max[axis]
    })
}

fn view_region(spec: &MazeSpec) -> Rect {
    Rect::new(
        spec.arena.min[0] - OUTER_WALL,
        spec.arena.min[1] - OUTER_WALL,
        spec.arena.max[0] + OUTER_WALL,
        spec.arena.max[1] + OUTER_WALL,
    )
}

fn view_cell(region: &Rect, p: [f64; 2]) -> (usize, usize) {
    let cw = region.width() / VIEW_CELLS as f64;
    let ch = region.height() / VIEW_CELLS as f64;
    let i = ((p[0] - region.min[0]) / cw).floor().clamp(0.0, (VIEW_CELLS - 1) as f64) as usize;
    let j = ((p[1] - region.min[1]) / ch).floor().clamp(0.0, (VIEW_CELLS - 1) as f64) as usize;
    (i, j)
}

/// Index into the flattened view: row (y cell) major, then column (x cell), then channel.
pub fn view_index(col: usize, row: usize, channel: usize) -> usize {
    (row * VIEW_CELLS + col) * VIEW_CHANNELS + channel
}

/// Coarse 5×5×3 view over the arena plus its outer wall: wall occupancy fraction,
/// one-hot agent cell, one-hot goal cell.
pub fn render_topdown(spec: &MazeSpec, state: &EnvState) -> Vec<f64> {
    let region = view_region(spec);
    let cw = region.width() / VIEW_CELLS as f64;
    let ch = region.height() / VIEW_CELLS as f64;
    let mut grid = vec![0.0; VIEW_CELLS * VIEW_CELLS * VIEW_CHANNELS];
    for row in 0..VIEW_CELLS {
        for col in 0..VIEW_CELLS {
            let cell = Rect::new(
                region.min[0] + col as f64 * cw,
                region.min[1] + row as f64 * ch,
                region.min[0] + (col + 1) as f64 * cw,
                region.min[1] + (row + 1) as f64 * ch,
            );
            let area = cw * ch;
            let outside = area - cell.intersection_area(&spec.arena);
            let walls: f64 = spec.walls.iter().map(|w| w.intersection_area(&cell)).sum();
            let occupied = ((outside + walls) / area).min(1.0);
            grid[view_index(col, row, 0)] = if occupied < 1e-12 { 0.0 } else { occupied };
        }
    }
    let (ai, aj) = view_cell(&region, state.position);
    grid[view_index(ai, aj, 1)] = 1.0;
    let (gi, gj) = view_cell(&region, spec.goal);
    grid[view_index(gi, gj, 2)] = 1.0;
    grid
}

/// Stateful wrapper around [`reset`] / [`step`].
#[derive(Clone, Debug)]
pub struct PointMazeEnv {
    spec: MazeSpec,
    dynamics: Dynamics,
    state: EnvState,
}

impl PointMazeEnv {
    pub fn new(spec: MazeSpec, dynamics: Dynamics) -> Result<Self> {
        spec.validate()?;
        let (state, _) = reset(&spec);
        Ok(Self {
            spec,
            dynamics,
            state,
        })
    }

    pub fn spec(&self) -> &MazeSpec {
        &self.spec
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn obs_dim(&self) -> usize {
        observation_dim(&self.spec)
    }

    pub fn reset(&mut self) -> Observation {
        let (state, obs) = reset(&self.spec);
        self.state = state;
        obs
    }

    pub fn step(&mut self, action: &[f64]) -> StepOutcome {
        let out = step(&self.spec, &self.dynamics, &self.state, action);
        self.state = out.state;
        out
    }
}

/// Hand-coded waypoint follower, used as a reachability witness and an evaluation ceiling.
#[derive(Clone, Debug)]
pub struct WaypointController {
    waypoints: Vec<[f64; 2]>,
    next: usize,
}

impl WaypointController {
    pub fn new(waypoints: Vec<[f64; 2]>) -> Self {
        Self { waypoints, next: 0 }
    }

    /// Route through the corridor or doorways of a built-in preset.
    pub fn for_preset(spec: &MazeSpec) -> Option<Self> {
        let base = spec.name.trim_end_matches("_images");
        let route = match base {
            "point_maze" => vec![[8.0, 0.0], [8.0, 8.0], spec.goal],
            "four_rooms" => vec![[3.0, 3.0], [11.0, 3.0], [11.0, 11.0], spec.goal],
            _ => return None,
        };
        Some(Self::new(route))
    }

    pub fn reset(&mut self) {
        self.next = 0;
    }

    pub fn act(&mut self, state: &EnvState) -> [f64; 2] {
        let last = self.waypoints.len() - 1;
        while self.next < last && dist(state.position, self.waypoints[self.next]) < 0.75 {
            self.next += 1;
        }
        let target = self.waypoints[self.next];
        let mut action = [0.0; 2];
        for (k, a) in action.iter_mut().enumerate() {
            let err = target[k] - state.position[k];
            *a = (0.6 * err - 2.0 * state.velocity[k]).clamp(-1.0, 1.0);
        }
        action
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
