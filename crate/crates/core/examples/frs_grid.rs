//! Grow the feasible sample set until the per-region fractions settle, then
//! print the densest regions with their principal directions.

use contact_traj::constraints::ConstraintRegistry;
use contact_traj::contact_qp;
use contact_traj::frs::{self, GridSpec, GrowConfig};
use contact_traj::sampler::{self, SamplerConfig};
use contact_traj::{RobotModel, StateSample};
use nalgebra::{DMatrix, DVector};

fn main() -> contact_traj::Result<()> {
    let model = RobotModel::planar_four_link();
    let q0 = DVector::from_column_slice(&[-1.22, 0.949, 0.610, 0.210]);
    let reg = ConstraintRegistry::with_contact(&model, model.end_effector_pose(&q0), false);
    let sc = SamplerConfig::from_model(&model, 1);
    let w_c = DMatrix::identity(3, 3);
    let spec = GridSpec { center: [1.8945, -0.0705], side: 2.795, rows: 20, cols: 20 };
    let grow = GrowConfig { delta_n: 1000, eps_g: 1e-4, min_samples: 0, max_samples: 10_000 };

    let growth = frs::grow_until_converged(&spec, &grow, Vec::new(), |x: &StateSample| model.output_map(x), |call| {
        let set = sampler::build_sample_range(&reg, &sc, (call * 1500) as u64, 1500);
        Ok(contact_qp::filter(&model, &reg, &set, &w_c, 0.01).states)
    })?;
    for e in &growth.trace.entries {
        println!("N_s {:6}  max gradient {:.3e}", e.n_s, e.max_gradient);
    }
    println!("converged: {}", growth.converged);

    let mut ranked: Vec<usize> = (0..growth.grid.n_regions()).collect();
    ranked.sort_by(|&a, &b| growth.grid.regions[b].frs.total_cmp(&growth.grid.regions[a].frs));
    for &m in ranked.iter().take(5) {
        let r = &growth.grid.regions[m];
        println!("region {m:3} center {:?} FRS {:.4} PSV {:?}", growth.grid.centers[m], r.frs, r.psv);
    }
    Ok(())
}
