//! Experiment orchestration: configuration and variants, training runs with periodic
//! greedy evaluation, metrics files, checkpoints, visual exports and plotting.

mod config;
mod plot;
mod run;
mod visuals;

pub use config::{ExperimentConfig, Variant, OUT_DIR_ENV};
pub use plot::{curves, mean_stderr, plot, render_curves_svg, smooth, Curve};
pub use run::{
    dump_buffers, evaluate, evaluate_with_return, load_checkpoint, read_metrics, run_dir, run_experiment,
    run_single, write_metrics, LoadedPolicy, MetricsRow, METRICS_HEADER,
};
pub use visuals::{
    emit_visuals, pick_trajectories, read_cell_scores, render_cells_svg, render_trajectories_svg, write_cell_table,
    write_latent_trajectories, CELL_HEADER, EXPORTED_TRAJECTORIES,
};
