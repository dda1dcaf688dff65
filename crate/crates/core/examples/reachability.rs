//! Propagate the reachable set of the four-link arm for a few steps and
//! compare the sampled growth with the analytic one-step bound.

use contact_traj::constraints::ConstraintRegistry;
use contact_traj::reach::{self, ReachConfig};
use contact_traj::{RobotModel, StateSample};
use nalgebra::DVector;

fn main() -> contact_traj::Result<()> {
    let model = RobotModel::planar_four_link();
    let q0 = DVector::from_column_slice(&[-1.22, 0.949, 0.610, 0.210]);
    let x0 = StateSample::at_rest(q0.clone());
    let reg = ConstraintRegistry::with_contact(&model, model.end_effector_pose(&q0), false);
    let config = ReachConfig::default();

    let set = reach::propagate(&model, &reg, &config, &x0, 0.08)?;
    let y0 = model.output_map(&x0);
    for s in &set.stats {
        let spread = set
            .outputs_at(s.k)
            .iter()
            .map(|y| ((y[0] - y0[0]).powi(2) + (y[1] - y0[1]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        println!(
            "k {:2}: parents {:3}, QPs {:5}, added {:4}, hull area {:.5} m^2, max distance {:.4} m",
            s.k, s.parents, s.qp_solved, s.added, s.hull_area, spread
        );
    }

    // the one-step output bound must cover every sampled first step
    let first = set.steps[1].clone();
    let node = &set.nodes[first.start];
    let k = reach::calibrate_k(&model, &[(x0.clone(), node.u.clone(), node.fc, config.dt)])?;
    let bound = reach::z3_bound(&model, &x0, &node.u, &node.fc, config.dt, k)?;
    let moved = ((node.output[0] - y0[0]).powi(2) + (node.output[1] - y0[1]).powi(2)).sqrt();
    println!("first child moved {moved:.3e} m, bound {bound:.3e} m");
    Ok(())
}
