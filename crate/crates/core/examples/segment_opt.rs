//! One contact segment: find a horizon from the reachable set, then optimize.

use contact_traj::constraints::ConstraintRegistry;
use contact_traj::reach::{self, ReachConfig};
use contact_traj::trajopt::{self, SegmentSpec, SqpSettings, TrajoptWeights};
use contact_traj::{RobotModel, StateSample};
use nalgebra::DVector;

fn main() -> contact_traj::Result<()> {
    let model = RobotModel::planar_four_link();
    let q0 = DVector::from_column_slice(&[-1.22, 0.949, 0.610, 0.210]);
    let x0 = StateSample::at_rest(q0.clone());
    let reg = ConstraintRegistry::with_contact(&model, model.end_effector_pose(&q0), false);
    let y0 = model.output_map(&x0);
    let target = [y0[0] + 0.02, y0[1] + 0.10];

    let config = ReachConfig { t_max: 0.3, ..ReachConfig::default() };
    let horizon = reach::find_horizon(&model, &reg, &config, &x0, target)?;
    println!("target contained after {:.2} s, planning over {:.2} s", horizon.t_reach, horizon.planned);

    let spec = SegmentSpec::new(x0, target, horizon.planned, config.dt, TrajoptWeights::defaults(model.n_q))?;
    let (traj, report) = trajopt::solve_segment(&model, &reg, &spec, &horizon.set, &SqpSettings::default())?;
    println!("SQP iterations {}, KKT {:.2e}, terminal error {:.2e} m", report.iterations, report.kkt, report.terminal_error);
    println!(
        "dynamics defect {:.1e}, constraint violation {:.1e}, contact drift {:.1e}, max F_x {:.2e}",
        traj.dynamics_defect(&model)?,
        traj.constraint_violation(&model, &reg),
        traj.contact_drift(&reg),
        traj.max_push()
    );
    Ok(())
}
