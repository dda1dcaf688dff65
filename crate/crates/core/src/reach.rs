//! Sampled forward reachable sets over short horizons.
//!
//! From the initial state, random torques are drawn, each is paired with the
//! cheapest admissible contact wrench (a 3-variable QP), and the state is
//! stepped. Later steps only expand states whose outputs sit on the hull
//! boundary, which keeps the per-step cost at boundary count times draw count.
//! The `Z2`/`Z3` bounds give an analytic outer ball on one-step motion.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintRegistry;
use crate::contact_qp::{self, friction_pyramid, CHECK_TOL};
use crate::error::{Error, Result};
use crate::hull::ConcaveHull;
use crate::linalg;
use crate::model::{ContactWrench, RobotModel, StateSample};

/// Number of random instances used to calibrate the remainder constant.
pub const CALIBRATION_DRAWS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachConfig {
    pub dt: f64,
    pub n_input_samples: usize,
    /// Input mean; `None` uses gravity compensation at the initial state.
    pub mu_u: Option<DVector<f64>>,
    /// Input covariance; `None` uses a diagonal with std of a third of the torque half-range.
    pub sigma_u: Option<DMatrix<f64>>,
    /// Remainder constant `K`; `None` calibrates it.
    pub k_remainder: Option<f64>,
    /// Hull peel threshold; `None` uses [`hull_threshold`].
    pub alpha_hull: Option<f64>,
    pub t_max: f64,
    /// Planned segment horizon as a multiple of the first containing time.
    pub horizon_margin: f64,
    pub seed: u64,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            n_input_samples: 200,
            mu_u: None,
            sigma_u: None,
            k_remainder: None,
            alpha_hull: None,
            t_max: 0.1,
            horizon_margin: 3.33,
            seed: 0,
        }
    }
}

/// A propagated state with the input and wrench that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachNode {
    pub state: StateSample,
    pub output: [f64; 2],
    pub parent: Option<usize>,
    pub u: DVector<f64>,
    pub fc: ContactWrench,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub k: usize,
    pub parents: usize,
    /// QPs solved at this step: parents times their box-feasible draws.
    pub qp_solved: usize,
    pub added: usize,
    pub hull_area: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachableSet {
    pub dt: f64,
    pub nodes: Vec<ReachNode>,
    /// Node index range of each time step; step 0 holds the initial state.
    pub steps: Vec<Range<usize>>,
    /// Hull of the cumulative outputs up to each step.
    pub hulls: Vec<ConcaveHull>,
    pub stats: Vec<StepStats>,
}

impl ReachableSet {
    pub fn n_steps(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn outputs_at(&self, k: usize) -> Vec<[f64; 2]> {
        self.nodes[self.steps[k].clone()].iter().map(|n| n.output).collect()
    }

    /// Outputs over `[0, k dt]`.
    pub fn cumulative_outputs(&self, k: usize) -> Vec<[f64; 2]> {
        self.nodes[..self.steps[k].end].iter().map(|n| n.output).collect()
    }

    pub fn hull(&self, k: usize) -> &ConcaveHull {
        &self.hulls[k]
    }

    pub fn contains(&self, k: usize, y: [f64; 2]) -> bool {
        self.hulls[k].contains(y)
    }

    /// States, inputs and wrenches from the root to `node`.
    pub fn rollout(&self, node: usize) -> (Vec<StateSample>, Vec<DVector<f64>>, Vec<ContactWrench>) {
        let mut chain = vec![node];
        while let Some(p) = self.nodes[*chain.last().expect("nonempty")].parent {
            chain.push(p);
        }
        chain.reverse();
        let states = chain.iter().map(|&i| self.nodes[i].state.clone()).collect();
        let inputs = chain[1..].iter().map(|&i| self.nodes[i].u.clone()).collect();
        let wrenches = chain[1..].iter().map(|&i| self.nodes[i].fc).collect();
        (states, inputs, wrenches)
    }

    /// Node of step `k` whose output is closest to `y`.
    pub fn closest_at(&self, k: usize, y: [f64; 2]) -> usize {
        self.steps[k]
            .clone()
            .min_by(|&a, &b| {
                let da = sq_dist(self.nodes[a].output, y);
                let db = sq_dist(self.nodes[b].output, y);
                da.total_cmp(&db)
            })
            .expect("nonempty step")
    }
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Random stream for the draws of one parent at one step.
pub fn draw_rng(seed: u64, k: usize, parent: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ splitmix(k as u64)) ^ parent as u64))
}

/// Input distribution resolved against the model and the initial state.
#[derive(Debug, Clone)]
pub struct InputDistribution {
    pub mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl InputDistribution {
    pub fn new(model: &RobotModel, config: &ReachConfig, x0: &StateSample) -> Result<Self> {
        let n = model.n_q;
        let mean = config.mu_u.clone().unwrap_or_else(|| model.gravity_compensation(x0));
        let sigma = config.sigma_u.clone().unwrap_or_else(|| {
            DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| ((model.u_max[i] - model.u_min[i]) / 6.0).powi(2)))
        });
        let chol = sigma
            .cholesky()
            .ok_or_else(|| Error::InvalidConfig("sigma_u must be positive definite".into()))?
            .l();
        Ok(Self { mean, chol })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol * z
    }
}

/// Floor of the default hull threshold as a fraction of the bounding-box diagonal.
pub const HULL_DIAMETER_FRACTION: f64 = 0.1;

/// Default peel threshold for reach clouds: twice the median nearest-neighbor
/// spacing, floored at a fraction of the cloud diameter. Children of one parent
/// land in tight clumps, so the spacing alone would peel the hull down to a skeleton.
pub fn hull_threshold(config: &ReachConfig, points: &[[f64; 2]]) -> Option<f64> {
    if config.alpha_hull.is_some() {
        return config.alpha_hull;
    }
    let spacing = crate::hull::default_threshold(points)?;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
    Some(spacing.max(HULL_DIAMETER_FRACTION * diag))
}

fn build_hull(config: &ReachConfig, points: &[[f64; 2]]) -> ConcaveHull {
    ConcaveHull::build(points, hull_threshold(config, points))
}

fn within_box(u: &DVector<f64>, lo: &[f64], hi: &[f64]) -> bool {
    u.iter().zip(lo).zip(hi).all(|((&v, &l), &h)| v >= l && v <= h)
}

/// Expand one parent: box-feasible draws, wrench QP, step, post-check.
/// Returns the new nodes and the number of QPs solved.
fn expand(
    model: &RobotModel,
    reg: &ConstraintRegistry,
    inputs: &InputDistribution,
    config: &ReachConfig,
    parent: usize,
    x: &StateSample,
    k: usize,
) -> (Vec<ReachNode>, usize) {
    let w_c = DMatrix::identity(3, 3);
    let pyramid = friction_pyramid(model);
    let mut rng = draw_rng(config.seed, k, parent);
    let mut out = Vec::new();
    let mut solved = 0;
    for _ in 0..config.n_input_samples {
        let u = inputs.sample(&mut rng);
        if !within_box(&u, &model.u_min, &model.u_max) {
            continue;
        }
        solved += 1;
        let Ok(res) = contact_qp::evaluate_with_input(model, reg, x, &u, &w_c, config.dt) else {
            continue;
        };
        if !res.feasible || pyramid.violation(&res.fc_opt) > CHECK_TOL {
            continue;
        }
        let Ok(next) = model.step(x, &u, &res.fc_opt, config.dt) else {
            continue;
        };
        if !next.is_finite() || reg.max_inequality_violation(&next) > CHECK_TOL {
            continue;
        }
        let output = model.output_map(&next);
        out.push(ReachNode { state: next, output, parent: Some(parent), u, fc: res.fc_opt, k });
    }
    (out, solved)
}

/// Incremental propagation, one time step per call to [`Propagator::advance`].
pub struct Propagator<'a> {
    model: &'a RobotModel,
    reg: &'a ConstraintRegistry,
    config: &'a ReachConfig,
    inputs: InputDistribution,
    /// Expand every state of the previous step instead of the boundary only.
    pub full: bool,
    pub set: ReachableSet,
}

impl<'a> Propagator<'a> {
    pub fn new(model: &'a RobotModel, reg: &'a ConstraintRegistry, config: &'a ReachConfig, x0: &StateSample) -> Result<Self> {
        let check = contact_qp::evaluate_sample(model, reg, x0, &DMatrix::identity(3, 3), config.dt)?;
        if !check.feasible {
            return Err(Error::InfeasibleInitialState("contact QP has no solution at x0".into()));
        }
        let inputs = InputDistribution::new(model, config, x0)?;
        let root = ReachNode {
            state: x0.clone(),
            output: model.output_map(x0),
            parent: None,
            u: DVector::zeros(model.n_q),
            fc: ContactWrench::zero(),
            k: 0,
        };
        let hull = build_hull(config, &[root.output]);
        let set = ReachableSet {
            dt: config.dt,
            nodes: vec![root],
            steps: vec![0..1],
            hulls: vec![hull],
            stats: vec![StepStats { k: 0, parents: 0, qp_solved: 0, added: 1, hull_area: 0.0 }],
        };
        Ok(Self { model, reg, config, inputs, full: false, set })
    }

    /// States of the last step to expand: those on the boundary of the hull of
    /// that step's outputs or of the cumulative hull.
    fn parents(&self) -> Vec<usize> {
        let k = self.set.n_steps();
        let range = self.set.steps[k].clone();
        if self.full || k == 0 {
            return range.collect();
        }
        let slice = self.set.outputs_at(k);
        let slice_hull = build_hull(self.config, &slice);
        let mut flags = vec![false; range.len()];
        for &i in slice_hull.boundary_indices() {
            flags[i] = true;
        }
        for &i in self.set.hulls[k].boundary_indices() {
            if range.contains(&i) {
                flags[i - range.start] = true;
            }
        }
        range.zip(flags).filter(|&(_, f)| f).map(|(i, _)| i).collect()
    }

    pub fn advance(&mut self) -> Result<()> {
        let k = self.set.n_steps() + 1;
        let parents = self.parents();
        let results: Vec<(Vec<ReachNode>, usize)> = parents
            .par_iter()
            .map(|&p| expand(self.model, self.reg, &self.inputs, self.config, p, &self.set.nodes[p].state, k))
            .collect();
        let solved: usize = results.iter().map(|r| r.1).sum();
        let start = self.set.nodes.len();
        for (nodes, _) in results {
            self.set.nodes.extend(nodes);
        }
        let added = self.set.nodes.len() - start;
        if added == 0 {
            return Err(Error::NoFeasibleInput(k));
        }
        self.set.steps.push(start..self.set.nodes.len());
        let hull = build_hull(self.config, &self.set.cumulative_outputs(k));
        self.set.stats.push(StepStats { k, parents: parents.len(), qp_solved: solved, added, hull_area: hull.area() });
        self.set.hulls.push(hull);
        Ok(())
    }
}

fn steps_for(t: f64, dt: f64) -> usize {
    (t / dt - 1e-9).ceil().max(0.0) as usize
}

/// Reachable set over `[0, t]` with `t` a multiple of `dt`.
pub fn propagate(model: &RobotModel, reg: &ConstraintRegistry, config: &ReachConfig, x0: &StateSample, t: f64) -> Result<ReachableSet> {
    let mut prop = Propagator::new(model, reg, config, x0)?;
    for _ in 0..steps_for(t, config.dt) {
        prop.advance()?;
    }
    Ok(prop.set)
}

#[derive(Debug, Clone)]
pub struct Horizon {
    /// Earliest multiple of `dt` whose hull contains the goal.
    pub t_reach: f64,
    pub k_reach: usize,
    /// Segment horizon handed to the optimizer.
    pub planned: f64,
    pub set: ReachableSet,
}

pub fn planned_horizon(t_reach: f64, config: &ReachConfig) -> f64 {
    let k = (config.horizon_margin * t_reach / config.dt).round().max(1.0);
    k * config.dt
}

/// Propagate until the cumulative hull contains `goal`, up to `t_max`.
pub fn find_horizon(model: &RobotModel, reg: &ConstraintRegistry, config: &ReachConfig, x0: &StateSample, goal: [f64; 2]) -> Result<Horizon> {
    let mut prop = Propagator::new(model, reg, config, x0)?;
    let k_max = steps_for(config.t_max, config.dt);
    for k in 1..=k_max {
        prop.advance()?;
        let set = &prop.set;
        if set.contains(k, goal) || (k == 1 && sq_dist(goal, set.nodes[0].output) == 0.0) {
            let t = k as f64 * config.dt;
            return Ok(Horizon { t_reach: t, k_reach: k, planned: planned_horizon(t, config), set: prop.set });
        }
    }
    Err(Error::NotReachableWithinHorizon(config.t_max))
}

/// Fixed-step RK4 on the continuous dynamics with constant input and wrench.
fn rk4(model: &RobotModel, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench, t: f64, steps: usize) -> Result<DVector<f64>> {
    let h = t / steps as f64;
    let f = |v: &DVector<f64>| model.b1(&StateSample::from_vector(v), u, fc);
    let mut v = x.to_vector();
    for _ in 0..steps {
        let k1 = f(&v)?;
        let k2 = f(&(&v + &k1 * (0.5 * h)))?;
        let k3 = f(&(&v + &k2 * (0.5 * h)))?;
        let k4 = f(&(&v + &k3 * h))?;
        v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(v)
}

const RK4_STEPS: usize = 64;

/// `|| x(T) - (x + T B1) ||` against a fine RK4 reference.
pub fn remainder(model: &RobotModel, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench, t: f64) -> Result<f64> {
    let truth = rk4(model, x, u, fc, t, RK4_STEPS)?;
    let first = x.to_vector() + model.b1(x, u, fc)? * t;
    Ok((truth - first).norm())
}

/// `K = 2 max ||remainder|| / T` over the given instances.
pub fn calibrate_k(model: &RobotModel, instances: &[(StateSample, DVector<f64>, ContactWrench, f64)]) -> Result<f64> {
    let ratios: Vec<Result<f64>> = instances
        .par_iter()
        .map(|(x, u, fc, t)| remainder(model, x, u, fc, *t).map(|r| r / t))
        .collect();
    let mut k = 0.0_f64;
    for r in ratios {
        k = k.max(r?);
    }
    Ok(2.0 * k.max(f64::MIN_POSITIVE))
}

/// Random `(x, u, F, T)` instances around the operating region: states uniform in
/// the joint box with velocities in a fifth of the velocity box, inputs from the
/// reach distribution clipped to the torque box, wrenches inside the pyramid with
/// normal force up to `f_max`, horizons uniform in `(0, t_max]`.
pub fn calibration_instances(
    model: &RobotModel,
    inputs: &InputDistribution,
    f_max: f64,
    t_max: f64,
    n: usize,
    seed: u64,
) -> Vec<(StateSample, DVector<f64>, ContactWrench, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x5eed));
    let nq = model.n_q;
    (0..n)
        .map(|_| {
            let q = DVector::from_fn(nq, |i, _| rng.gen_range(model.q_min[i]..model.q_max[i]));
            let qd = DVector::from_fn(nq, |i, _| 0.2 * rng.gen_range(model.qd_min[i]..model.qd_max[i]));
            let mut u = inputs.sample(&mut rng);
            for i in 0..nq {
                u[i] = u[i].clamp(model.u_min[i], model.u_max[i]);
            }
            let fx = -rng.gen_range(0.0..f_max);
            let fy = rng.gen_range(-1.0..1.0) * model.mu * fx.abs();
            let tz = rng.gen_range(-1.0..1.0) * model.contact_arm * fx.abs();
            let t = rng.gen_range(0.0..t_max).max(1e-4);
            (StateSample::new(q, qd), u, ContactWrench::new(fx, fy, tz), t)
        })
        .collect()
}

/// `T ||I + Z1|| ||B1|| + K T` with `Z1 = dB1/dx`.
pub fn z2_bound(model: &RobotModel, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench, t: f64, k: f64) -> Result<f64> {
    let observed = remainder(model, x, u, fc, t)?;
    if observed > k * t {
        return Err(Error::RemainderBoundViolated { observed, bound: k * t });
    }
    Ok(z2_rate(model, x, u, fc, k)? * t)
}

/// `Z2 / T`, which does not depend on `T`.
pub fn z2_rate(model: &RobotModel, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench, k: f64) -> Result<f64> {
    let b1 = model.b1(x, u, fc)?;
    let z1 = model.b1_state_jacobian(x, u, fc)?;
    let n = z1.nrows();
    Ok(linalg::spectral_norm(&(DMatrix::identity(n, n) + z1)) * b1.norm() + k)
}

/// `||J_y|| Z2`.
pub fn z3_bound(model: &RobotModel, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench, t: f64, k: f64) -> Result<f64> {
    Ok(linalg::spectral_norm(&model.output_jacobian(x)) * z2_bound(model, x, u, fc, t, k)?)
}

/// Smallest multiple of `dt` whose output ball around `g(x0)` reaches `goal`.
///
/// The ball radius grows linearly, `r(t) = c t`, with `c` the largest `||J_y|| Z2 / T`
/// over the given feasible input/wrench pairs.
pub fn t_backslash_min(
    model: &RobotModel,
    x0: &StateSample,
    goal: [f64; 2],
    pairs: &[(DVector<f64>, ContactWrench)],
    k: f64,
    dt: f64,
    t_max: f64,
) -> Result<f64> {
    let jy = linalg::spectral_norm(&model.output_jacobian(x0));
    let mut c = 0.0_f64;
    for (u, fc) in pairs {
        c = c.max(jy * z2_rate(model, x0, u, fc, k)?);
    }
    let d = sq_dist(model.output_map(x0), goal).sqrt();
    let steps = if d == 0.0 { 1.0 } else { (d / (c * dt)).ceil().max(1.0) };
    let t = steps * dt;
    if t > t_max + 1e-12 {
        return Err(Error::NotReachableWithinHorizon(t_max));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_link_setup() -> (RobotModel, ConstraintRegistry, StateSample) {
        let model = RobotModel::planar_two_link();
        let reg = ConstraintRegistry::boxes(&model);
        let x0 = StateSample::at_rest(DVector::from_column_slice(&[-0.5, 1.0]));
        (model, reg, x0)
    }

    #[test]
    fn equilibrium_with_tiny_spread_stays_put() {
        let (model, reg, x0) = two_link_setup();
        let config = ReachConfig {
            n_input_samples: 1,
            sigma_u: Some(DMatrix::identity(2, 2) * 1e-20),
            ..ReachConfig::default()
        };
        let set = propagate(&model, &reg, &config, &x0, 0.01).unwrap();
        let y0 = model.output_map(&x0);
        for y in set.cumulative_outputs(1) {
            assert!(sq_dist(y, y0).sqrt() < 1e-6);
        }
    }

    #[test]
    fn cumulative_sets_nest() {
        let (model, reg, x0) = two_link_setup();
        let config = ReachConfig { n_input_samples: 20, ..ReachConfig::default() };
        let set = propagate(&model, &reg, &config, &x0, 0.03).unwrap();
        for k in 1..=3 {
            let prev = set.cumulative_outputs(k - 1);
            let cur = set.cumulative_outputs(k);
            assert_eq!(&cur[..prev.len()], &prev[..]);
        }
    }

    #[test]
    fn equilibrium_bound_is_k_t() {
        let (model, _, x0) = two_link_setup();
        let u = model.gravity_compensation(&x0);
        let b = z2_bound(&model, &x0, &u, &ContactWrench::zero(), 0.02, 5.0).unwrap();
        assert!((b - 0.1).abs() < 1e-9);
    }

    #[test]
    fn goal_at_start_gives_one_step() {
        let (model, _, x0) = two_link_setup();
        let u = model.gravity_compensation(&x0);
        let t = t_backslash_min(&model, &x0, model.output_map(&x0), &[(u, ContactWrench::zero())], 1.0, 0.01, 0.1).unwrap();
        assert_eq!(t, 0.01);
    }

    #[test]
    fn rollout_replays_the_chain() {
        let (model, reg, x0) = two_link_setup();
        let config = ReachConfig { n_input_samples: 10, ..ReachConfig::default() };
        let set = propagate(&model, &reg, &config, &x0, 0.03).unwrap();
        let last = set.steps[3].start;
        let (states, inputs, wrenches) = set.rollout(last);
        assert_eq!(states.len(), 4);
        for k in 0..3 {
            let next = model.step(&states[k], &inputs[k], &wrenches[k], 0.01).unwrap();
            assert!((next.to_vector() - states[k + 1].to_vector()).amax() < 1e-12);
        }
    }
}
