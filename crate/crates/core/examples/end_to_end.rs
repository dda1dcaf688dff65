//! The complete chain on the bundled four-link preset, in memory: samples,
//! region fractions, region path, and the concatenated trajectory. Takes a
//! minute or two in release mode.

use contact_traj::config::PipelineConfig;
use contact_traj::{contact_qp, dp, frs, sampler, trajopt};

fn main() -> contact_traj::Result<()> {
    let config = PipelineConfig::from_toml(include_str!("../presets/planar4.toml"))?;
    let model = &config.robot;
    let reg = config.registry()?;
    let x0 = config.x0()?;

    let set = sampler::build_sample_set(&reg, &config.sampler_config()?, config.sampler.n_samples);
    let feasible = contact_qp::filter(model, &reg, &set, &config.w_c()?, config.contact_qp.dt);
    let outputs: Vec<[f64; 2]> = feasible.states.iter().map(|x| model.output_map(x)).collect();
    let grid = frs::assign(&config.grid, &outputs)?;
    println!("{} feasible samples of {} drawn", feasible.len(), set.drawn);

    let start = config.grid.locate(model.output_map(&x0)).expect("start inside the grid");
    let goal = config.grid.locate(config.goal).expect("goal inside the grid");
    let (path, _) = dp::plan(&grid, &config.dp, start, goal)?;
    println!("region path {:?}", path.nodes);

    let plan = trajopt::plan_end_to_end(model, &reg, &config.plan_config()?, &x0, &path, config.goal)?;
    for s in &plan.segments {
        println!(
            "segment {:2} -> {:?}: reached at {:.2} s, {} steps, error {:.3e}",
            s.index, s.target, s.t_reach, s.n_steps, s.report.terminal_error
        );
    }
    if !plan.skipped.is_empty() {
        println!("passed over unreachable intermediate targets {:?}", plan.skipped);
    }
    let traj = &plan.trajectory;
    let y = traj.final_output();
    println!("final output {y:?}, goal {:?}", config.goal);
    println!(
        "defect {:.1e}, violation {:.1e}, drift {:.1e}, max F_x {:.2e}",
        traj.dynamics_defect(model)?,
        traj.constraint_violation(model, &reg),
        traj.contact_drift(&reg),
        traj.max_push()
    );
    Ok(())
}
