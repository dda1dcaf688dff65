//! Run the staged pipeline on the two-link preset into a temporary directory
//! and list what each stage wrote.

use contact_traj::config::{PipelineConfig, Scale};
use contact_traj::pipeline::{self, Stage};

fn main() -> contact_traj::Result<()> {
    let config = PipelineConfig::from_toml(include_str!("../presets/planar2.toml"))?.with_scale(Scale::Desk);
    let out = std::env::temp_dir().join("contact-traj-pipeline-example");
    for m in pipeline::run(&config, Scale::Desk, Stage::All, &out)? {
        println!("{:6} {:5.2} s  {:?}", m.stage.name(), m.wall_time_s, m.artifacts);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
