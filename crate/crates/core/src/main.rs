use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hess::envs::{MazeSpec, PointMazeEnv};
use hess::harness::{
    evaluate_with_return, load_checkpoint, plot, read_cell_scores, read_metrics, render_cells_svg,
    render_trajectories_svg, run_dir, run_single, write_metrics, ExperimentConfig, LoadedPolicy, Variant,
};
use hess::latent::LatentPoint;
use hess::Result;

#[derive(Parser)]
#[command(name = "hess", about = "Hierarchical RL with a stable learned subgoal space on point mazes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant for the configured seeds (or one given seed).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Learning-curve table and SVG from one or more metrics files.
    Plot {
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        window: usize,
    },
    /// Latent-space exports from a checkpoint: cell heatmap, greedy latent
    /// trajectories and the embedding of a position grid.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            variant,
            seed,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_file(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(v) = variant {
                cfg.variant = v.parse::<Variant>()?;
            }
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let out = cfg.resolved_out_dir();
            std::fs::create_dir_all(&out)?;
            let mut all = Vec::new();
            for &s in &cfg.seeds {
                let rows = run_single(&cfg, cfg.variant, s, &run_dir(&out, cfg.variant, s))?;
                if let Some(last) = rows.last() {
                    println!("{} seed {}: final success {:.2}", cfg.variant, s, last.success_rate);
                }
                all.extend(rows);
            }
            write_metrics(&all, &out.join(format!("metrics_{}.csv", cfg.variant)))?;
        }
        Command::Eval { checkpoint, episodes } => {
            let (cfg, mut policy) = load_checkpoint(&checkpoint)?;
            let mut env = PointMazeEnv::new(cfg.maze_spec()?, cfg.dynamics)?;
            let (sr, ret) = evaluate_with_return(&mut policy, &mut env, episodes)?;
            println!("success_rate {sr:.3}  mean_return {ret:.3}  episodes {episodes}");
        }
        Command::Plot { metrics, out, window } => {
            let mut rows = Vec::new();
            for m in &metrics {
                rows.extend(read_metrics(m)?);
            }
            for c in plot(&rows, &out, window)? {
                if let (Some(s), Some(m)) = (c.steps.last(), c.mean.last()) {
                    println!("{}: step {s} mean success {m:.3}", c.variant);
                }
            }
        }
        Command::Visualize { checkpoint, out } => {
            let out = out
                .or_else(|| std::env::var_os(hess::harness::OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| checkpoint.join("visuals"));
            visualize(&checkpoint, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn visualize(checkpoint: &std::path::Path, out: &std::path::Path) -> Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(out)?;
    let cells = checkpoint.join("cells.tsv");
    if cells.exists() {
        std::fs::copy(&cells, out.join("cells.tsv"))?;
        std::fs::write(out.join("cells.svg"), render_cells_svg(&read_cell_scores(&cells)?))?;
    }
    let (cfg, mut policy) = load_checkpoint(checkpoint)?;
    let LoadedPolicy::Hier(hier) = &mut policy else {
        println!("flat checkpoint: no latent space to visualise");
        return Ok(());
    };
    let spec: MazeSpec = cfg.maze_spec()?;
    let mut env = PointMazeEnv::new(spec.clone(), cfg.dynamics)?;

    let mut trajs = Vec::new();
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("latent_trajectories.tsv"))?);
    writeln!(f, "traj\tt\tx\ty\tz0\tz1\tsubgoal0\tsubgoal1")?;
    for i in 0..5 {
        use hess::agent::Policy;
        hier.reset();
        let mut obs = env.reset();
        let mut latents = Vec::new();
        for t in 0.. {
            let state = *env.state();
            let a = hier.act(&obs, &state)?;
            let z = LatentPoint::new(hier.phi.forward(&obs)?);
            let g = hier.current_subgoal().cloned().unwrap_or_else(|| z.clone());
            writeln!(
                f,
                "{i}\t{t}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
                state.position[0], state.position[1], z.0[0], z.0[1], g.0[0], g.0[1]
            )?;
            latents.push(z);
            let step = env.step(&a);
            if step.done {
                break;
            }
            obs = step.observation;
        }
        trajs.push(latents);
    }
    f.flush()?;
    std::fs::write(out.join("latent_trajectories.svg"), render_trajectories_svg(&trajs))?;

    let mut g = std::io::BufWriter::new(std::fs::File::create(out.join("embedding_grid.tsv"))?);
    writeln!(g, "x\ty\tz0\tz1")?;
    let steps = 40;
    for iy in 0..=steps {
        for ix in 0..=steps {
            let x = spec.arena.min[0] + (spec.arena.max[0] - spec.arena.min[0]) * ix as f64 / steps as f64;
            let y = spec.arena.min[1] + (spec.arena.max[1] - spec.arena.min[1]) * iy as f64 / steps as f64;
            if !spec.is_free([x, y]) {
                continue;
            }
            let state = hess::envs::EnvState {
                position: [x, y],
                velocity: [0.0, 0.0],
                step_index: 0,
            };
            let z = hier.phi.forward(&hess::envs::observe(&spec, &state))?;
            writeln!(g, "{x:?}\t{y:?}\t{:?}\t{:?}", z[0], z[1])?;
        }
    }
    Ok(())
}
