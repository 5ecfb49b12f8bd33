//! Kinematic point-robot mazes with sparse success reward.

mod maze;
mod point;

pub use maze::{MazeSpec, Rect};
pub use point::{
    distance_to_goal, observation_dim, observe, render_topdown, reset, step, view_index, Dynamics,
    EnvState, Observation, PointMazeEnv, StepOutcome, WaypointController, SUCCESS_RADIUS,
    VIEW_CELLS, VIEW_CHANNELS,
};
