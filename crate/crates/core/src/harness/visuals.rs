use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::agent::{HierAgent, StoredTrajectory};
use crate::error::Result;
use crate::explorer::{score_terms, ExplorerConfig};
use crate::latent::LatentPoint;
use crate::latent_stats::LatentGrid;
use crate::subgoal_repr::SubgoalRepr;

/// Number of trajectories in the latent-trajectory export.
pub const EXPORTED_TRAJECTORIES: usize = 5;

pub const CELL_HEADER: &str = "cell_x\tcell_y\tvisit_density\tnovelty\tpotential\tscore";

/// One row per occupied cell: visit density, normalised novelty (per the configured
/// source), potential and the selection score `novelty − α·potential`.
pub fn write_cell_table(grid: &LatentGrid, explorer: &ExplorerConfig, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{CELL_HEADER}")?;
    if grid.total_mass() <= 0.0 {
        return Ok(());
    }
    for (key, stats) in grid.cells() {
        let centre = LatentPoint::new(
            key.0
                .iter()
                .map(|k| (*k as f64 + 0.5) * grid.config().grid_size)
                .collect(),
        );
        let (n, u) = score_terms(explorer, grid, &centre)?;
        writeln!(
            f,
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}",
            key.0[0],
            key.0.get(1).copied().unwrap_or(0),
            stats.visit_mass / grid.total_mass(),
            n,
            u,
            n - explorer.alpha * u
        )?;
    }
    Ok(())
}

/// Up to five trajectories: the most recent successful ones, topped up with the
/// longest remaining ones.
pub fn pick_trajectories(recent: &[StoredTrajectory]) -> Vec<&StoredTrajectory> {
    let mut picked: Vec<&StoredTrajectory> = recent.iter().rev().filter(|t| t.success).take(EXPORTED_TRAJECTORIES).collect();
    if picked.len() < EXPORTED_TRAJECTORIES {
        let mut rest: Vec<&StoredTrajectory> = recent.iter().filter(|t| !t.success).collect();
        rest.sort_by(|a, b| b.states.len().cmp(&a.states.len()).then(b.episode.cmp(&a.episode)));
        picked.extend(rest.into_iter().take(EXPORTED_TRAJECTORIES - picked.len()));
    }
    picked
}

/// Columns: `traj  episode  success  t  x  y  z0  z1 …`; one row per state.
pub fn write_latent_trajectories(repr: &SubgoalRepr, trajs: &[&StoredTrajectory], path: &Path) -> Result<Vec<Vec<LatentPoint>>> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let d = repr.latent_dim();
    let zs: Vec<String> = (0..d).map(|k| format!("z{k}")).collect();
    writeln!(f, "traj\tepisode\tsuccess\tt\tx\ty\t{}", zs.join("\t"))?;
    let mut all = Vec::new();
    for (i, tr) in trajs.iter().enumerate() {
        let states: Vec<&[f64]> = tr.states.iter().map(Vec::as_slice).collect();
        let latents = repr.encode_batch(&states)?;
        for (t, (s, z)) in tr.states.iter().zip(&latents).enumerate() {
            let zc: Vec<String> = z.0.iter().map(|v| format!("{v:?}")).collect();
            writeln!(f, "{i}\t{}\t{}\t{t}\t{:?}\t{:?}\t{}", tr.episode, u8::from(tr.success), s[0], s[1], zc.join("\t"))?;
        }
        all.push(latents);
    }
    Ok(all)
}

const PALETTE: [&str; 9] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf",
];

/// Scatter/line plot of latent trajectories (first two latent coordinates).
pub fn render_trajectories_svg(trajs: &[Vec<LatentPoint>]) -> String {
    let pts: Vec<(f64, f64)> = trajs
        .iter()
        .flatten()
        .map(|z| (z.0[0], z.0.get(1).copied().unwrap_or(0.0)))
        .collect();
    let (w, h, pad) = (480.0, 480.0, 30.0);
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    let sx = (w - 2.0 * pad) / (x1 - x0).max(1e-9);
    let sy = (h - 2.0 * pad) / (y1 - y0).max(1e-9);
    for (i, tr) in trajs.iter().enumerate() {
        let path: Vec<String> = tr
            .iter()
            .map(|z| {
                let x = pad + (z.0[0] - x0) * sx;
                let y = h - pad - (z.0.get(1).copied().unwrap_or(0.0) - y0) * sy;
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            PALETTE[i % PALETTE.len()],
            path.join(" ")
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{pad}\" y=\"18\" font-size=\"12\">latent x [{x0:.2}, {x1:.2}]  y [{y0:.2}, {y1:.2}]</text>"
    );
    svg.push_str("</svg>\n");
    svg
}

/// Heatmap of the score column of a cell table, as SVG.
pub fn render_cells_svg(cells: &[(i64, i64, f64)]) -> String {
    let (w, h) = (480.0, 480.0);
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if cells.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let xmin = cells.iter().map(|c| c.0).min().unwrap_or(0);
    let xmax = cells.iter().map(|c| c.0).max().unwrap_or(0);
    let ymin = cells.iter().map(|c| c.1).min().unwrap_or(0);
    let ymax = cells.iter().map(|c| c.1).max().unwrap_or(0);
    let smin = cells.iter().map(|c| c.2).fold(f64::MAX, f64::min);
    let smax = cells.iter().map(|c| c.2).fold(f64::MIN, f64::max);
    let cw = w / (xmax - xmin + 1) as f64;
    let ch = h / (ymax - ymin + 1) as f64;
    for &(x, y, s) in cells {
        let v = if smax > smin { (s - smin) / (smax - smin) } else { 0.5 };
        let shade = (255.0 * (1.0 - v)).round() as u8;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cw:.1}\" height=\"{ch:.1}\" fill=\"rgb(255,{shade},{shade})\" stroke=\"#ccc\"/>",
            (x - xmin) as f64 * cw,
            h - (y - ymin + 1) as f64 * ch
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Reads `(cell_x, cell_y, score)` back from a cell table.
pub fn read_cell_scores(path: &Path) -> Result<Vec<(i64, i64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 6 {
            continue;
        }
        let parse_err = |c: &str| crate::error::Error::Format(format!("bad cell table value `{c}`"));
        let x = cols[0].parse().map_err(|_| parse_err(cols[0]))?;
        let y = cols[1].parse().map_err(|_| parse_err(cols[1]))?;
        let s = cols[5].parse().map_err(|_| parse_err(cols[5]))?;
        out.push((x, y, s));
    }
    Ok(out)
}

/// Cell table, latent trajectories and their SVG renderings.
pub fn emit_visuals(agent: &HierAgent, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cells_path = dir.join("cells.tsv");
    write_cell_table(agent.grid(), &agent.config().explorer, &cells_path)?;
    fs::write(dir.join("cells.svg"), render_cells_svg(&read_cell_scores(&cells_path)?))?;
    let recent: Vec<StoredTrajectory> = agent.recent_trajectories().iter().cloned().collect();
    let picked = pick_trajectories(&recent);
    let latents = write_latent_trajectories(agent.repr(), &picked, &dir.join("latent_trajectories.tsv"))?;
    fs::write(dir.join("latent_trajectories.svg"), render_trajectories_svg(&latents))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_stats::GridConfig;

    #[test]
    fn empty_grid_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cells.tsv");
        write_cell_table(&LatentGrid::new(GridConfig::default()), &ExplorerConfig::default(), &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().trim(), CELL_HEADER);
    }

    #[test]
    fn score_column_is_consistent() {
        let mut g = LatentGrid::new(GridConfig::default());
        let a = LatentPoint::new(vec![0.5, 0.5]);
        let b = LatentPoint::new(vec![4.0, -2.0]);
        g.record_trajectory(&[a.clone(), b.clone(), a.clone()]).unwrap();
        g.record_potential_sample(&a, &LatentPoint::new(vec![5.0, 0.5]), &a).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cells.tsv");
        let cfg = ExplorerConfig::default();
        write_cell_table(&g, &cfg, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let rows: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| l.split('\t').map(|c| c.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert!((r[5] - (r[3] - cfg.alpha * r[4])).abs() < 1e-12);
        }
    }

    #[test]
    fn trajectory_rows_match_lengths() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let repr = SubgoalRepr::new(6, Default::default(), &mut rng).unwrap();
        let trajs: Vec<StoredTrajectory> = (0..7)
            .map(|i| StoredTrajectory {
                episode: i,
                success: i == 2,
                states: vec![vec![i as f64; 6]; 3 + i as usize],
            })
            .collect();
        let picked = pick_trajectories(&trajs);
        assert_eq!(picked.len(), 5);
        assert_eq!(picked[0].episode, 2);
        assert_eq!(picked[1].episode, 6);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        write_latent_trajectories(&repr, &picked, &p).unwrap();
        let rows = fs::read_to_string(&p).unwrap().lines().count() - 1;
        assert_eq!(rows, picked.iter().map(|t| t.states.len()).sum::<usize>());
    }
}
