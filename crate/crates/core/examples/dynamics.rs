//! Mass matrix, contact Jacobian and one integration step of the four-link arm.

use contact_traj::{ContactWrench, RobotModel, StateSample};
use nalgebra::DVector;

fn main() -> contact_traj::Result<()> {
    let model = RobotModel::planar_four_link();
    let q = DVector::from_column_slice(&[-1.22, 0.949, 0.610, 0.210]);
    let x = StateSample::at_rest(q.clone());

    println!("mass matrix:{}", model.mass_matrix(&q));
    println!("end-effector pose: {:?}", model.end_effector_pose(&q));
    println!("output (link 2 endpoint): {:?}", model.output_map(&x));
    println!("contact Jacobian:{}", model.contact_jacobian(&q));

    let u = model.gravity_compensation(&x);
    let push = ContactWrench::new(-5.0, 1.0, 0.0);
    let dt = 0.01;
    let next = model.step(&x, &u, &push, dt)?;
    let euler = model.euler_step(&x, &u, &push, dt)?;
    println!("gravity torque: {}", u.transpose());
    println!("after {dt} s with a 5 N push, qd = {}", next.qd.transpose());
    println!("second-order step minus Euler step, |dq| = {:.3e}", (&next.q - &euler.q).norm());
    Ok(())
}
