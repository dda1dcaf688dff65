//! Pipeline configuration as read from a TOML file.
//!
//! Module settings keep the key names of the library structs. Matrices are
//! written as lists of rows, and the optional `[scales.*]` tables override
//! the sample counts for `--scale desk|paper`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraints::ConstraintRegistry;
use crate::dp::DpConfig;
use crate::error::{Error, Result};
use crate::frs::{GridSpec, GrowConfig};
use crate::model::{RobotModel, StateSample};
use crate::reach::ReachConfig;
use crate::sampler::SamplerConfig;
use crate::trajopt::{PlanConfig, SqpSettings, TrajoptWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSection {
    pub x_anchor: f64,
    pub y_anchor: f64,
    pub theta_anchor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSection {
    /// Anchor pose; taken from the end effector at `q0` when absent.
    #[serde(default)]
    pub anchor: Option<AnchorSection>,
    #[serde(default)]
    pub hold_orientation: bool,
    /// No contact constraints at all (free arm).
    #[serde(default)]
    pub free: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub n_samples: usize,
    #[serde(default)]
    pub mu_x: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma_x: Option<Vec<Vec<f64>>>,
    pub alpha: f64,
    pub n_iter_max: usize,
    pub eps_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactQpSection {
    pub w_c: Vec<Vec<f64>>,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachSection {
    pub dt: f64,
    pub n_input_samples: usize,
    #[serde(default)]
    pub mu_u: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma_u: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub k_remainder: Option<f64>,
    #[serde(default)]
    pub alpha_hull: Option<f64>,
    pub t_max: f64,
    pub horizon_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajoptSection {
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
    pub w3: Vec<Vec<f64>>,
    #[serde(default)]
    pub sqp: SqpSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub q0: Vec<f64>,
    /// Zero velocity when absent.
    #[serde(default)]
    pub qd0: Option<Vec<f64>>,
}

/// Sample counts for one run scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSection {
    pub n_samples: usize,
    pub delta_n: usize,
    pub eps_g: f64,
    #[serde(default)]
    pub max_samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scales {
    #[serde(default)]
    pub desk: Option<ScaleSection>,
    #[serde(default)]
    pub paper: Option<ScaleSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub goal: [f64; 2],
    pub robot: RobotModel,
    pub contact: ContactSection,
    pub initial: InitialSection,
    pub sampler: SamplerSection,
    pub contact_qp: ContactQpSection,
    pub grid: GridSpec,
    pub growth: GrowConfig,
    pub dp: DpConfig,
    pub reach: ReachSection,
    pub trajopt: TrajoptSection,
    #[serde(default)]
    pub scales: Scales,
}

fn matrix(name: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidConfig(format!("{name} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn vector(name: &str, v: &[f64], n: usize) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(Error::InvalidConfig(format!("{name} must have {n} entries")));
    }
    Ok(DVector::from_column_slice(v))
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Apply the `[scales.*]` override for `scale`, if one is given.
    pub fn with_scale(mut self, scale: Scale) -> Self {
        let s = match scale {
            Scale::Desk => self.scales.desk,
            Scale::Paper => self.scales.paper,
        };
        if let Some(s) = s {
            self.sampler.n_samples = s.n_samples;
            self.growth.delta_n = s.delta_n;
            self.growth.eps_g = s.eps_g;
            self.growth.max_samples = s.max_samples;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.x0()?;
        self.sampler_config()?.validate()?;
        self.w_c()?;
        self.trajopt_weights()?.validate(self.robot.n_q)?;
        self.reach_config()?;
        if !self.grid.contains(self.goal) {
            return Err(Error::InvalidConfig(format!("goal {:?} lies outside the grid box", self.goal)));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 || !(self.grid.side > 0.0) {
            return Err(Error::InvalidConfig("grid needs positive side and dimensions".into()));
        }
        if self.contact_qp.dt <= 0.0 || self.reach.dt <= 0.0 {
            return Err(Error::InvalidConfig("time steps must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, for manifests.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }

    pub fn x0(&self) -> Result<StateSample> {
        let n = self.robot.n_q;
        let q = vector("initial.q0", &self.initial.q0, n)?;
        let qd = match &self.initial.qd0 {
            Some(v) => vector("initial.qd0", v, n)?,
            None => DVector::zeros(n),
        };
        Ok(StateSample::new(q, qd))
    }

    pub fn anchor(&self) -> Result<[f64; 3]> {
        Ok(match &self.contact.anchor {
            Some(a) => [a.x_anchor, a.y_anchor, a.theta_anchor],
            None => self.robot.end_effector_pose(&self.x0()?.q),
        })
    }

    pub fn registry(&self) -> Result<ConstraintRegistry> {
        if self.contact.free {
            return Ok(ConstraintRegistry::boxes(&self.robot));
        }
        Ok(ConstraintRegistry::with_contact(&self.robot, self.anchor()?, self.contact.hold_orientation))
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let n_x = self.robot.n_x();
        let mut c = SamplerConfig::from_model(&self.robot, self.seed);
        if let Some(mu) = &self.sampler.mu_x {
            c.mu_x = vector("sampler.mu_x", mu, n_x)?;
        }
        if let Some(s) = &self.sampler.sigma_x {
            c.sigma_x = matrix("sampler.sigma_x", s, n_x)?;
        }
        c.alpha = self.sampler.alpha;
        c.n_iter_max = self.sampler.n_iter_max;
        c.eps_e = self.sampler.eps_e;
        Ok(c)
    }

    pub fn w_c(&self) -> Result<DMatrix<f64>> {
        matrix("contact_qp.w_c", &self.contact_qp.w_c, 3)
    }

    pub fn reach_config(&self) -> Result<ReachConfig> {
        let n = self.robot.n_q;
        let r = &self.reach;
        Ok(ReachConfig {
            dt: r.dt,
            n_input_samples: r.n_input_samples,
            mu_u: r.mu_u.as_deref().map(|v| vector("reach.mu_u", v, n)).transpose()?,
            sigma_u: r.sigma_u.as_deref().map(|m| matrix("reach.sigma_u", m, n)).transpose()?,
            k_remainder: r.k_remainder,
            alpha_hull: r.alpha_hull,
            t_max: r.t_max,
            horizon_margin: r.horizon_margin,
            seed: self.seed,
        })
    }

    pub fn trajopt_weights(&self) -> Result<TrajoptWeights> {
        let t = &self.trajopt;
        Ok(TrajoptWeights {
            w1: matrix("trajopt.w1", &t.w1, self.robot.n_q)?,
            w2: matrix("trajopt.w2", &t.w2, 3)?,
            w3: matrix("trajopt.w3", &t.w3, 2)?,
        })
    }

    pub fn plan_config(&self) -> Result<PlanConfig> {
        Ok(PlanConfig { reach: self.reach_config()?, weights: self.trajopt_weights()?, sqp: self.trajopt.sqp })
    }
}
