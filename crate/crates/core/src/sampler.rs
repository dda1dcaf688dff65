//! Gaussian state sampling with null-space constraint repair.
//!
//! Each draw is pulled onto the equality manifold with a projected
//! Gauss-Newton iteration that leaves already-satisfied equalities untouched to
//! first order, then pushed inside violated inequalities with a projector that
//! also protects equalities and nearly active inequalities.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{check_full_row_rank, ConstraintRegistry};
use crate::contact_qp::FeasibilityResult;
use crate::linalg;
use crate::model::{RobotModel, StateSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mu_x: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
    pub alpha: f64,
    pub n_iter_max: usize,
    pub eps_e: f64,
    pub rng_seed: u64,
}

impl SamplerConfig {
    /// Mean at the middle of the joint box with zero velocity; diagonal
    /// covariance with standard deviation half of each box half-width.
    pub fn from_model(model: &RobotModel, seed: u64) -> Self {
        let n = model.n_q;
        let mut mu = DVector::zeros(2 * n);
        let mut var = DVector::zeros(2 * n);
        for i in 0..n {
            mu[i] = 0.5 * (model.q_min[i] + model.q_max[i]);
            var[i] = (0.25 * (model.q_max[i] - model.q_min[i])).powi(2);
            var[n + i] = (0.25 * (model.qd_max[i] - model.qd_min[i])).powi(2);
        }
        Self {
            mu_x: mu,
            sigma_x: DMatrix::from_diagonal(&var),
            alpha: 0.5,
            n_iter_max: 100,
            eps_e: 1e-6,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::InvalidConfig(m.to_string()));
        let d = self.mu_x.len();
        if self.sigma_x.shape() != (d, d) {
            return bad("sigma_x shape does not match mu_x");
        }
        if self.sigma_x.clone().cholesky().is_none() {
            return bad("sigma_x must be symmetric positive definite");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.eps_e > 0.0) {
            return bad("eps_e must be positive");
        }
        Ok(())
    }
}

/// Outcome of a repair pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Repair {
    Repaired { x: StateSample, iterations: usize },
    Discard,
}

impl Repair {
    pub fn state(self) -> Option<StateSample> {
        match self {
            Repair::Repaired { x, .. } => Some(x),
            Repair::Discard => None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SampleSet {
    pub states: Vec<StateSample>,
    /// Per-state QP annotations; empty until the set is filtered.
    #[serde(default)]
    pub annotations: Vec<FeasibilityResult>,
    pub drawn: usize,
    pub repaired: usize,
    pub discarded: usize,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Independent random stream for sample `index`, so parallel runs match serial ones.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_one(config: &SamplerConfig, chol: &DMatrix<f64>, index: u64) -> StateSample {
    let mut rng = sample_rng(config.rng_seed, index);
    let z = DVector::from_fn(config.mu_x.len(), |_, _| StandardNormal.sample(&mut rng));
    StateSample::from_vector(&(&config.mu_x + chol * z))
}

fn covariance_factor(config: &SamplerConfig) -> DMatrix<f64> {
    config
        .sigma_x
        .clone()
        .cholesky()
        .map(|c| c.l())
        .expect("sigma_x must be positive definite")
}

/// `n` Gaussian draws starting at stream index `start`.
pub fn draw_range(config: &SamplerConfig, start: u64, n: usize) -> Vec<StateSample> {
    let chol = covariance_factor(config);
    (0..n as u64).map(|i| draw_one(config, &chol, start + i)).collect()
}

pub fn draw(config: &SamplerConfig, n: usize) -> Vec<StateSample> {
    draw_range(config, 0, n)
}

/// One projected step on the violated equalities, or `None` when the stacked
/// Jacobian is rank deficient or the step leaves finite values.
pub fn equality_step(reg: &ConstraintRegistry, config: &SamplerConfig, x: &StateSample) -> Option<StateSample> {
    let part = reg.partition(x);
    let vals = reg.stack_values(x, &part);
    let jac = reg.stack_jacobians(x, &part).ok()?;
    let p_e = linalg::null_projector(&jac.j_e, reg.n_x());
    let jp = &jac.j_not_e * &p_e;
    check_full_row_rank(&jp).ok()?;
    let dx = &p_e * linalg::pinv(&jp, linalg::RANK_RTOL) * &vals.v_not_e;
    let next = StateSample::from_vector(&(x.to_vector() - dx * config.alpha));
    next.is_finite().then_some(next)
}

/// Pull violated equalities to zero while projecting out motion of the satisfied ones.
pub fn repair_equalities(reg: &ConstraintRegistry, config: &SamplerConfig, x: &StateSample) -> Repair {
    let mut x = x.clone();
    for l in 0..=config.n_iter_max {
        let part = reg.partition(&x);
        let vals = reg.stack_values(&x, &part);
        if part.h_not_e.is_empty() || vals.v_not_e.amax() <= config.eps_e {
            return Repair::Repaired { x, iterations: l };
        }
        if l == config.n_iter_max {
            break;
        }
        match equality_step(reg, config, &x) {
            Some(next) => x = next,
            None => return Repair::Discard,
        }
    }
    Repair::Discard
}

/// Push violated inequalities to interior targets while protecting equalities
/// and nearly active inequalities, then re-check the equalities.
pub fn repair_inequalities(reg: &ConstraintRegistry, config: &SamplerConfig, x: &StateSample) -> Repair {
    let n_x = reg.n_x();
    let margin = reg.interior_margin;
    let mut x = x.clone();
    let mut iterations = config.n_iter_max + 1;
    for l in 0..=config.n_iter_max {
        let part = reg.partition(&x);
        if part.h_not_i.is_empty() {
            iterations = l;
            break;
        }
        if l == config.n_iter_max {
            return Repair::Discard;
        }
        let Ok(jac) = reg.stack_jacobians(&x, &part) else {
            return Repair::Discard;
        };
        // protected rows: every equality and the satisfied inequality rows close to their bound
        let mut protected = vec![jac.j_e.clone(), jac.j_not_e.clone()];
        let mut row = 0;
        for &h in &part.h_i {
            let c = &reg.inequalities[h];
            let v = c.value(&x);
            let s = c.scale();
            for r in 0..c.dim() {
                if v[r] > -margin * s[r] {
                    protected.push(jac.j_i.rows(row + r, 1).into_owned());
                }
            }
            row += c.dim();
        }
        let j_aug = linalg::vstack(&protected, n_x);
        let p_aug = linalg::null_projector(&j_aug, n_x);
        let jp = &jac.j_not_i * &p_aug;
        if check_full_row_rank(&jp).is_err() {
            return Repair::Discard;
        }
        let mut err = Vec::new();
        for &h in &part.h_not_i {
            let c = &reg.inequalities[h];
            let v = c.value(&x);
            let s = c.scale();
            for r in 0..c.dim() {
                err.push(-margin * s[r] - v[r]);
            }
        }
        let err = DVector::from_vec(err);
        let dx = &p_aug * linalg::pinv(&jp, linalg::RANK_RTOL) * err;
        x = StateSample::from_vector(&(x.to_vector() + dx * config.alpha));
        if !x.is_finite() {
            return Repair::Discard;
        }
    }
    if reg.max_equality_residual(&x) > config.eps_e {
        match repair_equalities(reg, config, &x) {
            Repair::Repaired { x: y, iterations: k } => {
                x = y;
                iterations += k;
            }
            Repair::Discard => return Repair::Discard,
        }
    }
    if reg.max_inequality_violation(&x) > 0.0 || reg.max_equality_residual(&x) > config.eps_e {
        return Repair::Discard;
    }
    Repair::Repaired { x, iterations }
}

/// Full repair chain for one draw.
pub fn repair(reg: &ConstraintRegistry, config: &SamplerConfig, x: &StateSample) -> Option<StateSample> {
    let x = repair_equalities(reg, config, x).state()?;
    repair_inequalities(reg, config, &x).state()
}

/// Draw, repair and keep stream indices `start..start + n`.
pub fn build_sample_range(reg: &ConstraintRegistry, config: &SamplerConfig, start: u64, n: usize) -> SampleSet {
    let chol = covariance_factor(config);
    let states: Vec<StateSample> = (0..n as u64)
        .into_par_iter()
        .filter_map(|i| repair(reg, config, &draw_one(config, &chol, start + i)))
        .collect();
    let kept = states.len();
    SampleSet {
        states,
        annotations: Vec::new(),
        drawn: n,
        repaired: kept,
        discarded: n - kept,
        seed: config.rng_seed,
    }
}

pub fn build_sample_set(reg: &ConstraintRegistry, config: &SamplerConfig, n: usize) -> SampleSet {
    build_sample_range(reg, config, 0, n)
}
