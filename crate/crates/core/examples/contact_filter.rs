//! Keep the sampled states for which a pushing wrench inside the friction
//! pyramid exists, and show the cheapest torque/wrench pair for one of them.

use contact_traj::constraints::ConstraintRegistry;
use contact_traj::contact_qp::{self, friction_pyramid};
use contact_traj::sampler::{self, SamplerConfig};
use contact_traj::RobotModel;
use nalgebra::{DMatrix, DVector};

fn main() {
    let model = RobotModel::planar_four_link();
    let q0 = DVector::from_column_slice(&[-1.22, 0.949, 0.610, 0.210]);
    let reg = ConstraintRegistry::with_contact(&model, model.end_effector_pose(&q0), false);
    let set = sampler::build_sample_set(&reg, &SamplerConfig::from_model(&model, 3), 2000);

    let w_c = DMatrix::identity(3, 3);
    let feasible = contact_qp::filter(&model, &reg, &set, &w_c, 0.01);
    println!("{} of {} repaired samples admit a contact wrench", feasible.len(), set.len());

    let pyramid = friction_pyramid(&model);
    if let (Some(x), Some(a)) = (feasible.states.first(), feasible.annotations.first()) {
        println!("q = {}", x.q.transpose());
        println!("u* = {}", a.u_opt.transpose());
        println!("F* = {:?}, inside pyramid: {}", a.fc_opt, pyramid.contains(&a.fc_opt, 1e-9));
    }
}
