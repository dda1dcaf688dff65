//! Segment trajectory optimization and end-to-end concatenation.
//!
//! Each segment is a direct transcription over states, torques and wrenches,
//! solved by SQP: the dynamics and constraints are linearized around the
//! current iterate, the quadratic subproblem goes to a sparse interior-point
//! solver, and an l1 merit line search with one penalty per row picks the
//! step. The subproblem Hessian is Gauss-Newton on the objective.
//!
//! The contact pose and velocity enter as stiff quadratic penalties by
//! default. Holding the pose exactly at every step couples it to the torques
//! only through `dt^2`, which gives multipliers of order `1/dt^2` and an
//! indefinite Lagrangian; the penalty keeps the drift well below a millimetre
//! while leaving the subproblems well conditioned. Setting the pose weight to
//! zero restores the hard equality.

use std::sync::Arc;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintRegistry, Level, StateConstraint};
use crate::contact_qp::friction_pyramid;
use crate::dp::NodePath;
use crate::error::{Error, Result};
use crate::hull::ConcaveHull;
use crate::model::{ContactWrench, RobotModel, StateSample};
use crate::reach::{self, ReachConfig, ReachableSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<StateSample>,
    pub outputs: Vec<[f64; 2]>,
    pub inputs: Vec<DVector<f64>>,
    pub wrenches: Vec<ContactWrench>,
    pub dt: f64,
}

impl Trajectory {
    /// Roll `inputs` and `wrenches` forward from `x0`.
    pub fn rollout(model: &RobotModel, x0: &StateSample, inputs: &[DVector<f64>], wrenches: &[ContactWrench], dt: f64) -> Result<Self> {
        let mut states = vec![x0.clone()];
        for (u, f) in inputs.iter().zip(wrenches) {
            let next = model.step(states.last().unwrap(), u, f, dt)?;
            states.push(next);
        }
        let outputs = states.iter().map(|x| model.output_map(x)).collect();
        Ok(Self { states, outputs, inputs: inputs.to_vec(), wrenches: wrenches.to_vec(), dt })
    }

    pub fn n_steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn final_state(&self) -> &StateSample {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn final_output(&self) -> [f64; 2] {
        *self.outputs.last().expect("trajectory has at least one state")
    }

    /// Largest `||x_{k+1} - step(x_k, u_k, F_k)||_inf`.
    pub fn dynamics_defect(&self, model: &RobotModel) -> Result<f64> {
        let mut worst = 0.0_f64;
        for k in 0..self.n_steps() {
            let next = model.step(&self.states[k], &self.inputs[k], &self.wrenches[k], self.dt)?;
            worst = worst.max((next.to_vector() - self.states[k + 1].to_vector()).amax());
        }
        Ok(worst)
    }

    /// Largest violation of the state inequalities, torque box, friction
    /// pyramid and mixed constraints along the trajectory.
    pub fn constraint_violation(&self, model: &RobotModel, reg: &ConstraintRegistry) -> f64 {
        let pyramid = friction_pyramid(model);
        let mut worst = self.states.iter().map(|x| reg.max_inequality_violation(x)).fold(0.0_f64, f64::max);
        for (k, (u, f)) in self.inputs.iter().zip(&self.wrenches).enumerate() {
            for i in 0..model.n_q {
                worst = worst.max(u[i] - model.u_max[i]).max(model.u_min[i] - u[i]);
            }
            worst = worst.max(pyramid.violation(f));
            let x = self.states[k].to_vector();
            for mc in &reg.mixed {
                let v = &mc.a_x * &x + &mc.a_u * u - &mc.b;
                worst = worst.max(v.max());
            }
        }
        worst
    }

    /// Largest residual of the position-level equalities (the contact pose).
    pub fn contact_drift(&self, reg: &ConstraintRegistry) -> f64 {
        self.states
            .iter()
            .flat_map(|x| reg.equalities.iter().filter(|c| c.level() == Level::Position).map(move |c| c.value(x).amax()))
            .fold(0.0, f64::max)
    }

    /// Largest pushing component `F_x`; negative means the contact pushed at every step.
    pub fn max_push(&self) -> f64 {
        self.wrenches.iter().map(|f| f.fx).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Stage weights of the segment objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajoptWeights {
    /// Input weight (n_q x n_q).
    pub w1: DMatrix<f64>,
    /// Wrench weight (3 x 3).
    pub w2: DMatrix<f64>,
    /// Terminal output weight (2 x 2).
    pub w3: DMatrix<f64>,
}

impl TrajoptWeights {
    pub fn scaled_identity(n_q: usize, w1: f64, w2: f64, w3: f64) -> Self {
        Self {
            w1: DMatrix::identity(n_q, n_q) * w1,
            w2: DMatrix::identity(3, 3) * w2,
            w3: DMatrix::identity(2, 2) * w3,
        }
    }

    pub fn defaults(n_q: usize) -> Self {
        Self::scaled_identity(n_q, 1e-4, 1e-4, 1e3)
    }

    pub fn validate(&self, n_q: usize) -> Result<()> {
        for (name, w, n) in [("w1", &self.w1, n_q), ("w2", &self.w2, 3), ("w3", &self.w3, 2)] {
            if w.nrows() != n || w.ncols() != n {
                return Err(Error::InvalidConfig(format!("{name} must be {n}x{n}")));
            }
            if (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) || w.clone().cholesky().is_none() {
                return Err(Error::InvalidConfig(format!("{name} must be symmetric positive definite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub x0: StateSample,
    pub target: [f64; 2],
    pub horizon: f64,
    pub n_steps: usize,
    pub dt: f64,
    pub weights: TrajoptWeights,
}

impl SegmentSpec {
    pub fn new(x0: StateSample, target: [f64; 2], horizon: f64, dt: f64, weights: TrajoptWeights) -> Result<Self> {
        let n_steps = (horizon / dt).round();
        if !(n_steps >= 1.0) || dt <= 0.0 {
            return Err(Error::InvalidConfig(format!("horizon {horizon} s gives no step at dt {dt}")));
        }
        Ok(Self { x0, target, horizon: n_steps * dt, n_steps: n_steps as usize, dt, weights })
    }

    /// Segment cost of a trajectory (without the barrier and velocity penalty).
    pub fn objective(&self, traj: &Trajectory) -> f64 {
        let w = &self.weights;
        let stage: f64 = traj
            .inputs
            .iter()
            .zip(&traj.wrenches)
            .map(|(u, f)| {
                let fv = f.to_vector();
                u.dot(&(&w.w1 * u)) + fv.dot(&(&w.w2 * &fv))
            })
            .sum();
        let y = traj.final_output();
        let e = DVector::from_column_slice(&[self.target[0] - y[0], self.target[1] - y[1]]);
        stage + e.dot(&(&w.w3 * &e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqpSettings {
    pub max_iter: usize,
    /// Convergence threshold on the KKT residual.
    pub kkt_tol: f64,
    /// Primal tolerance on equalities and inequalities at convergence.
    pub feas_tol: f64,
    /// Required pushing force: `F_x <= -push_margin`.
    pub push_margin: f64,
    /// Weight of the relaxed log-barrier on the hull signed distance.
    pub barrier_weight: f64,
    /// Signed distance below which the barrier switches to its quadratic extension.
    pub barrier_relax: f64,
    /// Weight of the soft contact-velocity penalty.
    pub velocity_weight: f64,
    /// Penalty on the contact pose residual; zero holds the pose as a hard equality.
    pub position_weight: f64,
    /// Central-difference step for the dynamics Jacobians.
    pub fd_step: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self {
            max_iter: 300,
            kkt_tol: 1e-4,
            feas_tol: 1e-9,
            push_margin: 1e-6,
            barrier_weight: 1e-6,
            barrier_relax: 1e-3,
            velocity_weight: 1.0,
            position_weight: 1e5,
            fd_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub iterations: usize,
    pub kkt: f64,
    pub objective: f64,
    pub terminal_error: f64,
    /// Share of the outputs inside the reachable-output hull.
    pub hull_fraction: f64,
}

/// Relaxed log-barrier value and first two derivatives in `s`.
fn barrier(s: f64, delta: f64) -> (f64, f64, f64) {
    if s >= delta {
        (-s.ln(), -1.0 / s, 1.0 / (s * s))
    } else {
        let r = (s - 2.0 * delta) / delta;
        (0.5 * (r * r - 1.0) - delta.ln(), r / delta, 1.0 / (delta * delta))
    }
}

/// Decision vector layout: `w_k = (u_k, F_k)` for `k < N`, then `x_k` for `1 <= k <= N`.
struct Layout {
    n: usize,
    n_steps: usize,
}

impl Layout {
    fn nw(&self) -> usize {
        self.n + 3
    }
    fn nx(&self) -> usize {
        2 * self.n
    }
    fn w(&self, k: usize) -> usize {
        k * self.nw()
    }
    fn x(&self, k: usize) -> usize {
        self.n_steps * self.nw() + (k - 1) * self.nx()
    }
    fn len(&self) -> usize {
        self.n_steps * (self.nw() + self.nx())
    }
}

#[derive(Clone)]
struct Iterate {
    w: Vec<DVector<f64>>,
    x: Vec<StateSample>,
}

impl Iterate {
    fn input(&self, n: usize, k: usize) -> (DVector<f64>, ContactWrench) {
        (self.w[k].rows(0, n).into_owned(), ContactWrench::from_slice(&self.w[k].as_slice()[n..]))
    }

    fn apply(&self, lay: &Layout, d: &[f64], alpha: f64) -> Self {
        let w = (0..lay.n_steps)
            .map(|k| &self.w[k] + DVector::from_column_slice(&d[lay.w(k)..lay.w(k) + lay.nw()]) * alpha)
            .collect();
        let mut x = vec![self.x[0].clone()];
        for k in 1..=lay.n_steps {
            let v = self.x[k].to_vector() + DVector::from_column_slice(&d[lay.x(k)..lay.x(k) + lay.nx()]) * alpha;
            x.push(StateSample::from_vector(&v));
        }
        Self { w, x }
    }
}

/// Sparse row collector for one constraint block.
#[derive(Clone, Default)]
struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    rhs: Vec<f64>,
}

impl Rows {
    fn push_block(&mut self, col: usize, m: &DMatrix<f64>, row0: usize) {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != 0.0 {
                    self.i.push(row0 + r);
                    self.j.push(col + c);
                    self.v.push(v);
                }
            }
        }
    }

    /// Append rows `a z <= rhs` (or `= rhs`) made of `(column offset, block)` pairs.
    fn push(&mut self, blocks: &[(usize, &DMatrix<f64>)], rhs: &DVector<f64>) {
        let row0 = self.rhs.len();
        for (col, m) in blocks {
            self.push_block(*col, m, row0);
        }
        self.rhs.extend(rhs.iter());
    }

    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn scale_rows(&mut self, s: &[f64]) {
        for (v, &i) in self.v.iter_mut().zip(&self.i) {
            *v *= s[i];
        }
        for (r, si) in self.rhs.iter_mut().zip(s) {
            *r *= si;
        }
    }

    /// `sum |a_r . z|` style products: returns `A^T y`.
    fn mul(&self, d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for ((&i, &j), &v) in self.i.iter().zip(&self.j).zip(&self.v) {
            out[i] += v * d[j];
        }
        out
    }

    fn transpose_mul(&self, y: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for ((&i, &j), &v) in self.i.iter().zip(&self.j).zip(&self.v) {
            out[j] += v * y[i];
        }
        out
    }
}

struct Problem<'a> {
    model: &'a RobotModel,
    reg: &'a ConstraintRegistry,
    spec: &'a SegmentSpec,
    hull: Option<&'a ConcaveHull>,
    settings: &'a SqpSettings,
    lay: Layout,
}

/// Objective, its gradient and Gauss-Newton Hessian (dense, upper triangle used).
struct Model {
    f: f64,
    g: Vec<f64>,
    h: Vec<(usize, usize, f64)>,
}

impl<'a> Problem<'a> {
    /// Equalities held exactly at every step.
    fn hard(&self) -> impl Iterator<Item = &Arc<dyn StateConstraint>> {
        let soft = self.settings.position_weight > 0.0;
        self.reg.equalities.iter().filter(move |c| c.level() == Level::Position && !soft)
    }

    /// Equalities moved into the objective as quadratic penalties.
    fn penalized(&self) -> impl Iterator<Item = &Arc<dyn StateConstraint>> {
        let soft = self.settings.position_weight > 0.0;
        self.reg.equalities.iter().filter(move |c| c.level() == Level::Velocity || (soft && c.level() == Level::Position))
    }

    fn pyramid_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let p = friction_pyramid(self.model);
        let mut rhs = p.rhs.clone();
        rhs[0] = -self.settings.push_margin;
        (p.d_c, rhs)
    }

    fn hull_distance(&self, y: [f64; 2]) -> Option<(f64, [f64; 2])> {
        let hull = self.hull?;
        if !matches!(hull, ConcaveHull::Polygon { .. }) {
            return None;
        }
        let s = hull.signed_distance(y);
        let h = 1e-7;
        let gx = (hull.signed_distance([y[0] + h, y[1]]) - hull.signed_distance([y[0] - h, y[1]])) / (2.0 * h);
        let gy = (hull.signed_distance([y[0], y[1] + h]) - hull.signed_distance([y[0], y[1] - h])) / (2.0 * h);
        Some((s, [gx, gy]))
    }

    fn objective(&self, it: &Iterate, with_derivatives: bool) -> Model {
        let lay = &self.lay;
        let n = lay.n;
        let w = &self.spec.weights;
        let mut f = 0.0;
        let mut g = vec![0.0; if with_derivatives { lay.len() } else { 0 }];
        let mut h = Vec::new();
        let add_block = |h: &mut Vec<(usize, usize, f64)>, off: usize, m: &DMatrix<f64>| {
            for r in 0..m.nrows() {
                for c in r..m.ncols() {
                    if m[(r, c)] != 0.0 {
                        h.push((off + r, off + c, m[(r, c)]));
                    }
                }
            }
        };
        for k in 0..lay.n_steps {
            let wk = &it.w[k];
            let u = wk.rows(0, n);
            let fc = wk.rows(n, 3);
            let wu = &w.w1 * u;
            let wf = &w.w2 * fc;
            f += u.dot(&wu) + fc.dot(&wf);
            if with_derivatives {
                let w1s = &w.w1 + w.w1.transpose();
                let w2s = &w.w2 + w.w2.transpose();
                let gu = &w1s * u;
                let gf = &w2s * fc;
                for i in 0..n {
                    g[lay.w(k) + i] += gu[i];
                }
                for i in 0..3 {
                    g[lay.w(k) + n + i] += gf[i];
                }
                add_block(&mut h, lay.w(k), &w1s);
                add_block(&mut h, lay.w(k) + n, &w2s);
            }
        }
        let velocity: Vec<_> = self.penalized().collect();
        for k in 1..=lay.n_steps {
            let x = &it.x[k];
            let mut jac_terms: Vec<(DMatrix<f64>, DVector<f64>, f64)> = Vec::new();
            for c in &velocity {
                let v = c.value(x);
                let wt = if c.level() == Level::Position { self.settings.position_weight } else { self.settings.velocity_weight };
                f += wt * v.norm_squared();
                if with_derivatives {
                    jac_terms.push((c.jacobian(x), v, wt));
                }
            }
            let y = self.model.output_map(x);
            if let Some((s, gs)) = self.hull_distance(y) {
                let (b, db, d2b) = barrier(s, self.settings.barrier_relax);
                let mu = self.settings.barrier_weight;
                f += mu * b;
                if with_derivatives {
                    let gy = self.model.output_jacobian(x);
                    let grad = gy.transpose() * DVector::from_column_slice(&gs);
                    for i in 0..lay.nx() {
                        g[lay.x(k) + i] += mu * db * grad[i];
                    }
                    add_block(&mut h, lay.x(k), &(&grad * grad.transpose() * (mu * d2b)));
                }
            }
            if k == lay.n_steps {
                let e = DVector::from_column_slice(&[y[0] - self.spec.target[0], y[1] - self.spec.target[1]]);
                let w3s = &w.w3 + w.w3.transpose();
                f += e.dot(&(&w.w3 * &e));
                if with_derivatives {
                    let gy = self.model.output_jacobian(x);
                    let grad = gy.transpose() * (&w3s * &e);
                    for i in 0..lay.nx() {
                        g[lay.x(k) + i] += grad[i];
                    }
                    add_block(&mut h, lay.x(k), &(gy.transpose() * &w3s * &gy));
                }
            }
            for (j, v, wt) in jac_terms {
                let grad = j.transpose() * v * (2.0 * wt);
                for i in 0..lay.nx() {
                    g[lay.x(k) + i] += grad[i];
                }
                add_block(&mut h, lay.x(k), &(j.transpose() * &j * (2.0 * wt)));
            }
        }
        Model { f, g, h }
    }

    /// Equality residuals (dynamics defects, contact pose) and inequality values.
    fn residuals(&self, it: &Iterate) -> Result<(Vec<f64>, Vec<f64>)> {
        let lay = &self.lay;
        let n = lay.n;
        let mut eq = Vec::new();
        let mut ineq = Vec::new();
        let (d_c, rhs) = self.pyramid_rows();
        for k in 0..lay.n_steps {
            let (u, fc) = it.input(n, k);
            let next = self.model.step(&it.x[k], &u, &fc, self.spec.dt)?;
            eq.extend((it.x[k + 1].to_vector() - next.to_vector()).iter());
            for c in self.hard() {
                eq.extend(c.value(&it.x[k + 1]).iter());
            }
            for c in &self.reg.inequalities {
                ineq.extend(c.value(&it.x[k + 1]).iter());
            }
            for i in 0..n {
                ineq.push(u[i] - self.model.u_max[i]);
                ineq.push(self.model.u_min[i] - u[i]);
            }
            ineq.extend((&d_c * fc.to_vector() - &rhs).iter());
            let xv = it.x[k].to_vector();
            for mc in &self.reg.mixed {
                ineq.extend((&mc.a_x * &xv + &mc.a_u * &u - &mc.b).iter());
            }
        }
        Ok((eq, ineq))
    }

    /// Weighted l1 violation with one penalty per row.
    fn violation_l1(eq: &[f64], ineq: &[f64], nu_eq: &[f64], nu_in: &[f64]) -> f64 {
        eq.iter().zip(nu_eq).map(|(v, w)| w * v.abs()).sum::<f64>()
            + ineq.iter().zip(nu_in).map(|(v, w)| w * v.max(0.0)).sum::<f64>()
    }

    fn violation_inf(eq: &[f64], ineq: &[f64]) -> f64 {
        eq.iter().map(|v| v.abs()).chain(ineq.iter().map(|v| v.max(0.0))).fold(0.0, f64::max)
    }

    /// Central-difference Jacobians of the step map in `x` and `w`.
    fn step_jacobians(&self, x: &StateSample, w: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.lay.n;
        let (nx, nw) = (self.lay.nx(), self.lay.nw());
        let h = self.settings.fd_step;
        let xv = x.to_vector();
        let eval = |xv: &DVector<f64>, w: &DVector<f64>| -> Result<DVector<f64>> {
            let u = w.rows(0, n).into_owned();
            let fc = ContactWrench::from_slice(&w.as_slice()[n..]);
            Ok(self.model.step(&StateSample::from_vector(xv), &u, &fc, self.spec.dt)?.to_vector())
        };
        // Richardson extrapolation of two central differences cancels the h^2 term
        let column = |v: &DVector<f64>, j: usize, f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>| -> Result<DVector<f64>> {
            let hj = h * v[j].abs().max(1.0);
            let diff = |step: f64| -> Result<DVector<f64>> {
                let (mut p, mut m) = (v.clone(), v.clone());
                p[j] += step;
                m[j] -= step;
                Ok((f(&p)? - f(&m)?) / (2.0 * step))
            };
            let coarse = diff(hj)?;
            let fine = diff(0.5 * hj)?;
            Ok((fine * 4.0 - coarse) / 3.0)
        };
        let mut a = DMatrix::zeros(nx, nx);
        for j in 0..nx {
            a.set_column(j, &column(&xv, j, &|p| eval(p, w))?);
        }
        let mut b = DMatrix::zeros(nx, nw);
        for j in 0..nw {
            b.set_column(j, &column(w, j, &|p| eval(&xv, p))?);
        }
        Ok((a, b))
    }

    /// Linearized constraints at `it`: equality rows then inequality rows.
    fn linearize(&self, it: &Iterate) -> Result<(Rows, Rows)> {
        let lay = &self.lay;
        let n = lay.n;
        let nx = lay.nx();
        let (d_c, p_rhs) = self.pyramid_rows();
        let mut eq = Rows::default();
        let mut ineq = Rows::default();
        let ident = DMatrix::identity(nx, nx);
        let mut u_box = DMatrix::zeros(2 * n, lay.nw());
        for i in 0..n {
            u_box[(2 * i, i)] = 1.0;
            u_box[(2 * i + 1, i)] = -1.0;
        }
        let mut pyr = DMatrix::zeros(5, lay.nw());
        pyr.view_mut((0, n), (5, 3)).copy_from(&d_c);
        for k in 0..lay.n_steps {
            let (u, fc) = it.input(n, k);
            let next = self.model.step(&it.x[k], &u, &fc, self.spec.dt)?;
            let defect = it.x[k + 1].to_vector() - next.to_vector();
            let (a, b) = self.step_jacobians(&it.x[k], &it.w[k])?;
            let (na, nb) = (-a, -b);
            if k == 0 {
                eq.push(&[(lay.x(1), &ident), (lay.w(0), &nb)], &-&defect);
            } else {
                eq.push(&[(lay.x(k + 1), &ident), (lay.x(k), &na), (lay.w(k), &nb)], &-&defect);
            }
            for c in self.hard() {
                eq.push(&[(lay.x(k + 1), &c.jacobian(&it.x[k + 1]))], &-c.value(&it.x[k + 1]));
            }
            for c in &self.reg.inequalities {
                ineq.push(&[(lay.x(k + 1), &c.jacobian(&it.x[k + 1]))], &-c.value(&it.x[k + 1]));
            }
            let mut ub = DVector::zeros(2 * n);
            for i in 0..n {
                ub[2 * i] = self.model.u_max[i] - u[i];
                ub[2 * i + 1] = u[i] - self.model.u_min[i];
            }
            ineq.push(&[(lay.w(k), &u_box)], &ub);
            ineq.push(&[(lay.w(k), &pyr)], &(&p_rhs - &d_c * fc.to_vector()));
            let xv = it.x[k].to_vector();
            for mc in &self.reg.mixed {
                let mut a_w = DMatrix::zeros(mc.b.len(), lay.nw());
                a_w.view_mut((0, 0), (mc.b.len(), n)).copy_from(&mc.a_u);
                let v = &mc.a_x * &xv + &mc.a_u * &u - &mc.b;
                if k == 0 {
                    ineq.push(&[(lay.w(k), &a_w)], &-v);
                } else {
                    ineq.push(&[(lay.w(k), &a_w), (lay.x(k), &mc.a_x)], &-v);
                }
            }
        }
        Ok((eq, ineq))
    }
}

/// Inverse infinity norm of each row in scaled variables.
fn row_scales(rows: &Rows, scale: &[f64]) -> Vec<f64> {
    let mut norm = vec![0.0_f64; rows.len()];
    for ((&i, &j), &v) in rows.i.iter().zip(&rows.j).zip(&rows.v) {
        norm[i] = norm[i].max((v * scale[j]).abs());
    }
    norm.into_iter().map(|n| if n > 1e-12 { 1.0 / n } else { 1.0 }).collect()
}

struct QpStep {
    d: Vec<f64>,
    y_eq: Vec<f64>,
    y_in: Vec<f64>,
}

/// Solve the subproblem in scaled variables `d = scale * d~` so torques and
/// states enter with comparable magnitudes.
fn solve_qp(n: usize, scale: &[f64], model: &Model, rho: f64, eq: &Rows, ineq: &Rows) -> Option<QpStep> {
    let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
    for &(r, c, v) in &model.h {
        pi.push(r);
        pj.push(c);
        pv.push(v * scale[r] * scale[c]);
    }
    for i in 0..n {
        pi.push(i);
        pj.push(i);
        pv.push(rho);
    }
    let q: Vec<f64> = model.g.iter().zip(scale).map(|(g, s)| g * s).collect();
    let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
    let m_eq = eq.len();
    let mut ai = eq.i.clone();
    let mut aj = eq.j.clone();
    let mut av = eq.v.clone();
    ai.extend(ineq.i.iter().map(|r| r + m_eq));
    aj.extend(&ineq.j);
    av.extend(&ineq.v);
    for (v, &j) in av.iter_mut().zip(&aj) {
        *v *= scale[j];
    }
    let a = CscMatrix::new_from_triplets(m_eq + ineq.len(), n, ai, aj, av);
    let mut b = eq.rhs.clone();
    b.extend(&ineq.rhs);
    let cones = [SupportedConeT::ZeroConeT(m_eq), SupportedConeT::NonnegativeConeT(ineq.len())];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_feas(1e-9)
        .tol_gap_abs(1e-9)
        .tol_gap_rel(1e-9)
        .build()
        .ok()?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings);
    solver.solve();
    let sol = &solver.solution;
    matches!(sol.status, SolverStatus::Solved | SolverStatus::AlmostSolved).then(|| QpStep {
        d: sol.x.iter().zip(scale).map(|(x, s)| x * s).collect(),
        y_eq: sol.z[..m_eq].to_vec(),
        y_in: sol.z[m_eq..].to_vec(),
    })
}

/// Solve one segment by SQP from an initial guess `(inputs, wrenches, states)`.
/// `hull` is the reachable-output hull used by the barrier and the report.
pub fn solve_with_guess(
    model: &RobotModel,
    reg: &ConstraintRegistry,
    spec: &SegmentSpec,
    guess: &Trajectory,
    hull: Option<&ConcaveHull>,
    settings: &SqpSettings,
) -> Result<(Trajectory, SegmentReport)> {
    spec.weights.validate(model.n_q)?;
    if guess.n_steps() != spec.n_steps || guess.states.len() != spec.n_steps + 1 {
        return Err(Error::InvalidConfig("initial guess length does not match the horizon".into()));
    }
    let prob = Problem { model, reg, spec, hull, settings, lay: Layout { n: model.n_q, n_steps: spec.n_steps } };
    let lay = &prob.lay;
    let n = model.n_q;
    let mut states = guess.states.clone();
    states[0] = spec.x0.clone();
    let mut it = Iterate {
        w: (0..spec.n_steps)
            .map(|k| {
                let mut w = DVector::zeros(lay.nw());
                w.rows_mut(0, n).copy_from(&guess.inputs[k]);
                w.rows_mut(n, 3).copy_from(&guess.wrenches[k].to_vector());
                w
            })
            .collect(),
        x: states,
    };
    for x in &it.x {
        if !x.is_finite() {
            return Err(Error::InfeasibleInitialState("initial guess is not finite".into()));
        }
    }

    let to_traj = |it: &Iterate| -> Result<Trajectory> {
        let (inputs, wrenches): (Vec<_>, Vec<_>) = (0..spec.n_steps).map(|k| it.input(n, k)).unzip();
        Trajectory::rollout(model, &spec.x0, &inputs, &wrenches, spec.dt)
    };

    let u_scale: Vec<f64> = (0..n).map(|i| (model.u_max[i].abs().max(model.u_min[i].abs()) / 10.0).max(1.0)).collect();
    let f_scale = u_scale.iter().sum::<f64>() / n as f64;
    let mut scale = vec![1.0; lay.len()];
    for k in 0..spec.n_steps {
        scale[lay.w(k)..lay.w(k) + n].copy_from_slice(&u_scale);
        scale[lay.w(k) + n..lay.w(k) + n + 3].fill(f_scale);
    }
    // states take a Jacobi scale from the penalty curvature so the stiff pose
    // terms do not dominate the subproblem
    let mut diag = vec![0.0_f64; lay.len()];
    for &(r, c, v) in &prob.objective(&it, true).h {
        if r == c {
            diag[r] += v;
        }
    }
    for j in lay.x(1)..lay.len() {
        scale[j] = 1.0 / diag[j].max(1.0).sqrt();
    }
    // fixed row scales from the first linearization keep the merit comparable across iterations
    let (eq0, in0) = prob.linearize(&it)?;
    let eq_scale = row_scales(&eq0, &scale);
    let in_scale = row_scales(&in0, &scale);
    let scaled = |v: Vec<f64>, s: &[f64]| -> Vec<f64> { v.into_iter().zip(s).map(|(a, b)| a * b).collect() };
    let residuals = |it: &Iterate| -> Result<(Vec<f64>, Vec<f64>)> {
        let (e, i) = prob.residuals(it)?;
        Ok((scaled(e, &eq_scale), scaled(i, &in_scale)))
    };

    // per-row penalties: a single global weight would amplify rounding in
    // weakly coupled rows by the largest multiplier anywhere
    let mut nu_eq = vec![1.0_f64; eq0.len()];
    let mut nu_in = vec![1.0_f64; in0.len()];
    let mut rho = 1e-8_f64;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut best: Option<(f64, Iterate)> = None;
    while iterations < settings.max_iter {
        iterations += 1;
        let obj = prob.objective(&it, true);
        let (req, rin) = residuals(&it)?;
        let viol = Problem::violation_inf(&req, &rin);
        let (mut eq, mut ineq) = prob.linearize(&it)?;
        eq.scale_rows(&eq_scale);
        ineq.scale_rows(&in_scale);
        let nz = lay.len();
        let Some(step) = solve_qp(nz, &scale, &obj, rho, &eq, &ineq) else {
            if rho < 1e6 {
                rho *= 100.0;
                continue;
            }
            break;
        };
        // stationarity with the subproblem multipliers, in scaled variables
        let at_eq = eq.transpose_mul(&step.y_eq, lay.len());
        let at_in = ineq.transpose_mul(&step.y_in, lay.len());
        let mut stationarity = 0.0_f64;
        let mut g_norm = 0.0_f64;
        for j in 0..lay.len() {
            stationarity = stationarity.max(((obj.g[j] + at_eq[j] + at_in[j]) * scale[j]).abs());
            g_norm = g_norm.max((obj.g[j] * scale[j]).abs());
        }
        stationarity /= g_norm.max(1.0);
        let complementarity = step.y_in.iter().zip(&rin).fold(0.0_f64, |m, (y, h)| m.max((y * h).abs()));
        kkt = stationarity.max(viol).max(complementarity);
        if viol <= settings.feas_tol && best.as_ref().map_or(true, |(m, _)| obj.f < *m) {
            best = Some((obj.f, it.clone()));
        }
        if kkt <= settings.kkt_tol && viol <= settings.feas_tol {
            converged = true;
            break;
        }
        for (w, y) in nu_eq.iter_mut().zip(&step.y_eq).chain(nu_in.iter_mut().zip(&step.y_in)) {
            if *w < 1.1 * y.abs() {
                *w = 2.0 * y.abs();
            }
        }
        let v1 = Problem::violation_l1(&req, &rin, &nu_eq, &nu_in);
        let merit0 = obj.f + v1;
        let dir: f64 = obj.g.iter().zip(&step.d).map(|(a, b)| a * b).sum::<f64>() - v1;
        let merit_at = |trial: &Iterate| -> Option<f64> {
            let (te, ti) = residuals(trial).ok()?;
            let m = prob.objective(trial, false).f + Problem::violation_l1(&te, &ti, &nu_eq, &nu_in);
            m.is_finite().then_some(m)
        };
        let accept = |m: Option<f64>, alpha: f64| m.is_some_and(|m| m <= merit0 + 1e-4 * alpha * dir.min(0.0));
        let mut alpha = 1.0;
        let mut accepted = false;
        let full = it.apply(lay, &step.d, 1.0);
        if accept(merit_at(&full), 1.0) {
            it = full;
            accepted = true;
        } else if let Ok((te, ti)) = residuals(&full) {
            // second-order correction: the same subproblem with the constraint
            // values seen at the trial point, which absorbs the curvature the
            // linearization missed without leaving active bounds
            let (ad_e, ad_i) = (eq.mul(&step.d), ineq.mul(&step.d));
            let mut eq2 = eq.clone();
            let mut ineq2 = ineq.clone();
            eq2.rhs = te.iter().zip(&ad_e).map(|(c, a)| a - c).collect();
            ineq2.rhs = ti.iter().zip(&ad_i).map(|(c, a)| a - c).collect();
            if let Some(corr) = solve_qp(nz, &scale, &obj, rho, &eq2, &ineq2) {
                let trial = it.apply(lay, &corr.d, 1.0);
                if accept(merit_at(&trial), 1.0) {
                    it = trial;
                    accepted = true;
                }
            }
        }
        if !accepted {
            alpha = 0.5;
            while alpha >= 1e-8 {
                let trial = it.apply(lay, &step.d, alpha);
                if accept(merit_at(&trial), alpha) {
                    it = trial;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
        }
        if accepted {
            if alpha == 1.0 {
                rho = (rho / 3.0).max(1e-10);
            }
        } else {
            rho *= 10.0;
            if rho > 1e8 {
                break;
            }
        }
    }

    let final_it = if converged { it } else { best.map(|(_, b)| b).unwrap_or(it) };
    let traj = to_traj(&final_it)?;
    if !converged {
        return Err(Error::NlpNotConverged { iterations, kkt, best: Box::new(traj) });
    }
    let y = traj.final_output();
    let terminal_error = ((y[0] - spec.target[0]).powi(2) + (y[1] - spec.target[1]).powi(2)).sqrt();
    let hull_fraction = match hull {
        Some(h) => traj.outputs.iter().filter(|&&o| h.contains(o)).count() as f64 / traj.outputs.len() as f64,
        None => 1.0,
    };
    let report = SegmentReport { iterations, kkt, objective: spec.objective(&traj), terminal_error, hull_fraction };
    Ok((traj, report))
}

/// Stretch a rollout of `K` steps over `n_steps` by interpolating joint
/// positions in time; velocities are rescaled and torques come from inverse
/// dynamics with a small pushing wrench.
pub fn stretch_guess(model: &RobotModel, rollout: &[StateSample], n_steps: usize, dt: f64, push: f64) -> Trajectory {
    let k_src = rollout.len().saturating_sub(1);
    let ratio = k_src as f64 / n_steps as f64;
    let at = |tau: f64| -> StateSample {
        if k_src == 0 {
            return StateSample::at_rest(rollout[0].q.clone());
        }
        let i = (tau.floor() as usize).min(k_src - 1);
        let s = tau - i as f64;
        let q = &rollout[i].q * (1.0 - s) + &rollout[i + 1].q * s;
        let qd = (&rollout[i].qd * (1.0 - s) + &rollout[i + 1].qd * s) * ratio;
        StateSample::new(q, qd)
    };
    let mut states: Vec<StateSample> = (0..=n_steps).map(|j| at(j as f64 * ratio)).collect();
    states[0] = rollout[0].clone();
    let fc = ContactWrench::new(-2.0 * push, 0.0, 0.0);
    let jct = |q: &DVector<f64>| model.contact_jacobian(q).transpose();
    let inputs = (0..n_steps)
        .map(|k| {
            let x = &states[k];
            let qdd = (&states[k + 1].qd - &x.qd) / dt;
            let (bias, grav) = model.bias_and_gravity(&x.q, &x.qd);
            let tau = model.mass_matrix(&x.q) * qdd + bias + grav - jct(&x.q) * fc.to_vector();
            let lo = DVector::from_column_slice(&model.u_min);
            let hi = DVector::from_column_slice(&model.u_max);
            tau.zip_zip_map(&lo, &hi, |t, l, h| t.clamp(l, h))
        })
        .collect::<Vec<_>>();
    let outputs = states.iter().map(|x| model.output_map(x)).collect();
    Trajectory { states, outputs, inputs, wrenches: vec![fc; n_steps], dt }
}

/// Initial guess from a reachable set: the rollout of the node closest to
/// `target`, stretched over the segment horizon.
pub fn guess_from_reach(model: &RobotModel, spec: &SegmentSpec, set: &ReachableSet, settings: &SqpSettings) -> Trajectory {
    let k_last = set.n_steps();
    let node = set.closest_at(k_last, spec.target);
    let (states, _, _) = set.rollout(node);
    let mut rollout = states;
    rollout[0] = spec.x0.clone();
    stretch_guess(model, &rollout, spec.n_steps, spec.dt, settings.push_margin)
}

/// Solve one segment seeded from the reachable set computed at its start.
pub fn solve_segment(
    model: &RobotModel,
    reg: &ConstraintRegistry,
    spec: &SegmentSpec,
    set: &ReachableSet,
    settings: &SqpSettings,
) -> Result<(Trajectory, SegmentReport)> {
    let guess = guess_from_reach(model, spec, set, settings);
    solve_with_guess(model, reg, spec, &guess, Some(set.hull(set.n_steps())), settings)
}

/// Join segments, dropping each junction state that repeats the previous end.
pub fn concatenate(parts: &[Trajectory]) -> Option<Trajectory> {
    let first = parts.first()?;
    let mut out = first.clone();
    for p in &parts[1..] {
        out.states.extend(p.states.iter().skip(1).cloned());
        out.outputs.extend(p.outputs.iter().skip(1).cloned());
        out.inputs.extend(p.inputs.iter().cloned());
        out.wrenches.extend(p.wrenches.iter().cloned());
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub reach: ReachConfig,
    pub weights: TrajoptWeights,
    pub sqp: SqpSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub index: usize,
    pub target: [f64; 2],
    pub t_reach: f64,
    pub horizon: f64,
    pub n_steps: usize,
    pub report: SegmentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub trajectory: Trajectory,
    pub segments: Vec<SegmentRecord>,
    /// Intermediate targets (by index into the target list) that were not
    /// reachable within the horizon cap and were passed over.
    pub skipped: Vec<usize>,
}

/// Segment targets: the centers of the path regions after the first, with
/// the goal itself replacing the last one.
pub fn segment_targets(path: &NodePath, goal: [f64; 2]) -> Vec<[f64; 2]> {
    let mut targets: Vec<[f64; 2]> = path.regions.iter().skip(1).cloned().collect();
    match targets.last_mut() {
        Some(t) => *t = goal,
        None => targets.push(goal),
    }
    targets
}

/// Plan every segment of `path` in turn, each starting where the previous ended.
pub fn plan_end_to_end(
    model: &RobotModel,
    reg: &ConstraintRegistry,
    config: &PlanConfig,
    x0: &StateSample,
    path: &NodePath,
    goal: [f64; 2],
) -> Result<Plan> {
    let mut x = x0.clone();
    let mut parts: Vec<Trajectory> = Vec::new();
    let mut segments = Vec::new();
    let mut skipped = Vec::new();
    let targets = segment_targets(path, goal);
    let last = targets.len() - 1;
    for (index, target) in targets.into_iter().enumerate() {
        let fail = |parts: &[Trajectory], e: Error| Error::SegmentFailed {
            index,
            partial: Box::new(concatenate(parts).unwrap_or_else(|| Trajectory {
                states: vec![x0.clone()],
                outputs: vec![model.output_map(x0)],
                inputs: Vec::new(),
                wrenches: Vec::new(),
                dt: config.reach.dt,
            })),
            source: Box::new(e),
        };
        // a region center that the reachable set never covers is passed over in
        // favor of the next one; the sampled regions need not be reachable from
        // the branch of the contact manifold the robot is on
        let horizon = match reach::find_horizon(model, reg, &config.reach, &x, target) {
            Ok(h) => h,
            Err(Error::NotReachableWithinHorizon(_)) if index < last => {
                skipped.push(index);
                continue;
            }
            Err(e) => return Err(fail(&parts, e)),
        };
        let spec = SegmentSpec::new(x.clone(), target, horizon.planned, config.reach.dt, config.weights.clone())
            .map_err(|e| fail(&parts, e))?;
        let (traj, report) = solve_segment(model, reg, &spec, &horizon.set, &config.sqp).map_err(|e| fail(&parts, e))?;
        x = traj.final_state().clone();
        segments.push(SegmentRecord { index, target, t_reach: horizon.t_reach, horizon: spec.horizon, n_steps: spec.n_steps, report });
        parts.push(traj);
    }
    let trajectory = concatenate(&parts).expect("at least one segment");
    Ok(Plan { trajectory, segments, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn free_arm() -> (RobotModel, ConstraintRegistry, StateSample) {
        let model = RobotModel::planar_two_link();
        let reg = ConstraintRegistry::boxes(&model);
        let x0 = StateSample::at_rest(DVector::from_column_slice(&[0.3, 0.4]));
        (model, reg, x0)
    }

    fn hold_guess(model: &RobotModel, x0: &StateSample, n: usize, dt: f64) -> Trajectory {
        let u = model.gravity_compensation(x0);
        let f = ContactWrench::new(-2e-6, 0.0, 0.0);
        Trajectory::rollout(model, x0, &vec![u; n], &vec![f; n], dt).unwrap()
    }

    #[test]
    fn stay_put_single_step_holds_gravity() {
        let (model, reg, x0) = free_arm();
        let y0 = model.output_map(&x0);
        // one step moves the output only by O(dt^2), so the terminal weight has
        // to be stiff before holding still beats cheaper torques
        let spec = SegmentSpec::new(x0.clone(), y0, 0.01, 0.01, TrajoptWeights::scaled_identity(2, 1e-4, 1e-4, 1e10)).unwrap();
        assert_eq!(spec.n_steps, 1);
        let hold = hold_guess(&model, &x0, 1, 0.01);
        let mut guess = hold.clone();
        guess.inputs[0] *= 0.5;
        let guess = Trajectory::rollout(&model, &x0, &guess.inputs, &guess.wrenches, 0.01).unwrap();
        let (traj, report) = solve_with_guess(&model, &reg, &spec, &guess, None, &SqpSettings::default()).unwrap();
        assert!(report.terminal_error < 1e-6, "terminal error {}", report.terminal_error);
        // torque and wrench share the load: u + J^T F balances gravity, and the
        // split is no more expensive than torque alone
        let g = model.gravity_compensation(&x0);
        let jt = model.contact_jacobian(&x0.q).transpose();
        let total = &traj.inputs[0] + jt * traj.wrenches[0].to_vector();
        assert!((&total - &g).amax() < 1e-3 * g.amax(), "u + J^T F {total} vs {g}");
        assert!(report.objective <= spec.objective(&hold) + 1e-12);
        assert!(friction_pyramid(&model).contains(&traj.wrenches[0], 1e-9));
        assert!(traj.max_push() <= -SqpSettings::default().push_margin + 1e-12);
        assert!(traj.dynamics_defect(&model).unwrap() <= 1e-6);
    }

    #[test]
    fn beats_random_shooting_on_a_reachable_target() {
        let (model, reg, x0) = free_arm();
        let (dt, n) = (0.01, 5);
        let weights = TrajoptWeights::scaled_identity(2, 1e-4, 1e-4, 1e6);
        let g = model.gravity_compensation(&x0);
        let f = ContactWrench::new(-2e-6, 0.0, 0.0);
        let bump = DVector::from_column_slice(&[8.0, -5.0]);
        let target = Trajectory::rollout(&model, &x0, &vec![&g + &bump; n], &vec![f; n], dt).unwrap().final_output();
        let spec = SegmentSpec::new(x0.clone(), target, n as f64 * dt, dt, weights).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut best: Option<(f64, f64)> = None;
        for _ in 0..10_000 {
            let inputs: Vec<DVector<f64>> = (0..n)
                .map(|_| &g + DVector::from_fn(2, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); 10.0 * z }))
                .collect();
            let t = Trajectory::rollout(&model, &x0, &inputs, &vec![f; n], dt).unwrap();
            let cost = spec.objective(&t);
            if best.map_or(true, |(c, _)| cost < c) {
                let y = t.final_output();
                best = Some((cost, ((y[0] - target[0]).powi(2) + (y[1] - target[1]).powi(2)).sqrt()));
            }
        }
        let (best_cost, best_err) = best.unwrap();

        let guess = hold_guess(&model, &x0, n, dt);
        let (traj, report) = solve_with_guess(&model, &reg, &spec, &guess, None, &SqpSettings::default()).unwrap();
        assert!(report.terminal_error <= 1e-3, "terminal error {}", report.terminal_error);
        assert!(report.terminal_error <= best_err.max(1e-6), "{} vs shooting {}", report.terminal_error, best_err);
        assert!(report.objective <= best_cost, "{} vs shooting {}", report.objective, best_cost);
        assert!(traj.dynamics_defect(&model).unwrap() <= 1e-6);
        assert!(traj.constraint_violation(&model, &reg) <= 1e-6);
    }

    #[test]
    fn mismatched_guess_is_rejected() {
        let (model, reg, x0) = free_arm();
        let spec = SegmentSpec::new(x0.clone(), model.output_map(&x0), 0.03, 0.01, TrajoptWeights::defaults(2)).unwrap();
        let guess = hold_guess(&model, &x0, 2, 0.01);
        assert!(solve_with_guess(&model, &reg, &spec, &guess, None, &SqpSettings::default()).is_err());
    }

    #[test]
    fn horizon_rounds_to_whole_steps() {
        let x0 = StateSample::at_rest(DVector::zeros(2));
        let w = TrajoptWeights::defaults(2);
        let s = SegmentSpec::new(x0.clone(), [0.0, 0.0], 0.0349, 0.01, w.clone()).unwrap();
        assert_eq!(s.n_steps, 3);
        assert!((s.horizon - 0.03).abs() < 1e-15);
        assert!(SegmentSpec::new(x0, [0.0, 0.0], 0.004, 0.01, w).is_err());
    }

    #[test]
    fn weights_must_be_spd() {
        let mut w = TrajoptWeights::defaults(2);
        assert!(w.validate(2).is_ok());
        assert!(w.validate(3).is_err());
        w.w3[(0, 1)] = 5e3;
        w.w3[(1, 0)] = 5e3;
        assert!(w.validate(2).is_err());
    }

    #[test]
    fn concatenation_drops_repeated_junctions() {
        let (model, _, x0) = free_arm();
        let a = hold_guess(&model, &x0, 3, 0.01);
        let b = hold_guess(&model, a.final_state(), 2, 0.01);
        let joined = concatenate(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(joined.n_steps(), 5);
        assert_eq!(joined.states.len(), 6);
        assert_eq!(joined.states[3], b.states[0]);
        assert_eq!(&joined.states[..4], &a.states[..]);
        assert_eq!(joined.outputs.len(), joined.states.len());
        assert!(concatenate(&[]).is_none());
    }

    #[test]
    fn targets_end_at_the_goal() {
        let path = NodePath { nodes: vec![3, 4, 5], regions: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], n_dp: 3 };
        assert_eq!(segment_targets(&path, [2.1, 0.1]), vec![[1.0, 0.0], [2.1, 0.1]]);
        let single = NodePath { nodes: vec![4], regions: vec![[1.0, 0.0]], n_dp: 1 };
        assert_eq!(segment_targets(&single, [1.1, 0.0]), vec![[1.1, 0.0]]);
    }

    #[test]
    fn relaxed_barrier_is_smooth_at_the_switch() {
        let d = 1e-3;
        let (a, da, dda) = barrier(d, d);
        let (b, db, _) = barrier(d * (1.0 - 1e-9), d);
        assert!((a - b).abs() < 1e-6);
        assert!((da - db).abs() < 1e-3 * da.abs());
        assert!(dda > 0.0);
        assert!(barrier(-1.0, d).0.is_finite());
    }
}
