//! Draw states near the contact manifold and project them onto it.

use contact_traj::constraints::ConstraintRegistry;
use contact_traj::sampler::{self, SamplerConfig};
use contact_traj::RobotModel;
use nalgebra::DVector;

fn main() {
    let model = RobotModel::planar_four_link();
    let q0 = DVector::from_column_slice(&[-1.22, 0.949, 0.610, 0.210]);
    let anchor = model.end_effector_pose(&q0);
    let reg = ConstraintRegistry::with_contact(&model, anchor, false);
    let config = SamplerConfig::from_model(&model, 7);

    let set = sampler::build_sample_set(&reg, &config, 2000);
    println!("drawn {}, kept {}, discarded {}", set.drawn, set.repaired, set.discarded);
    let worst_eq = set.states.iter().map(|x| reg.max_equality_residual(x)).fold(0.0, f64::max);
    let worst_in = set.states.iter().map(|x| reg.max_inequality_violation(x)).fold(0.0, f64::max);
    println!("worst equality residual {worst_eq:.2e}, worst inequality violation {worst_in:.2e}");
    if let Some(x) = set.states.first() {
        println!("first sample pose {:?} (anchor {:?})", model.end_effector_pose(&x.q), anchor);
    }
}
