//! Value iteration on a small hand-made grid with a wall of empty regions.

use contact_traj::dp::{self, DpConfig};
use contact_traj::frs::{self, GridSpec};

fn main() -> contact_traj::Result<()> {
    let spec = GridSpec { center: [0.0, 0.0], side: 5.0, rows: 5, cols: 5 };
    // an isotropic cluster per region (so moves are deterministic), except a
    // wall in column 2 with a gap at the top row
    let mut outputs = Vec::new();
    for m in 0..spec.n_regions() {
        let (row, col) = spec.row_col(m);
        if col == 2 && row < 4 {
            continue;
        }
        let c = spec.region_center(m);
        for d in [[0.2, 0.2], [-0.2, 0.2], [0.2, -0.2], [-0.2, -0.2]] {
            outputs.push([c[0] + d[0], c[1] + d[1]]);
        }
    }
    let grid = frs::assign(&spec, &outputs)?;
    let start = spec.index(0, 0);
    let goal = spec.index(0, 4);
    let (path, vf) = dp::plan(&grid, &DpConfig::default(), start, goal)?;
    println!("value iteration: {} sweeps", vf.sweeps);
    for (m, c) in path.nodes.iter().zip(&path.regions) {
        let (row, col) = spec.row_col(*m);
        println!("region {m:2} (row {row}, col {col}) center {c:?}");
    }
    Ok(())
}
