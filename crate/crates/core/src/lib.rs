pub mod config;
pub mod constraints;
pub mod contact_qp;
pub mod dp;
pub mod error;
pub mod frs;
pub mod hull;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod qp;
pub mod reach;
pub mod sampler;
pub mod trajopt;

pub use error::{Error, Result};
pub use model::{ContactWrench, RobotModel, StateSample};
