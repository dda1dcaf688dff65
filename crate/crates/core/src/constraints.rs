//! State constraints, feasible/violated index partitions and stacked values/Jacobians.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{RobotModel, StateSample};

/// Step used by finite-difference Jacobians of constraint functions.
pub const CONSTRAINT_FD_STEP: f64 = 1e-6;

/// Whether a constraint depends on velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Position,
    Velocity,
}

/// A vector-valued function of the state. Equalities ask for `value = 0`,
/// inequalities for `value <= 0` componentwise.
pub trait StateConstraint: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn value(&self, x: &StateSample) -> DVector<f64>;

    /// `d value / d x` with `x = (q, qd)`.
    fn jacobian(&self, x: &StateSample) -> DMatrix<f64> {
        linalg::fd_jacobian(|v| self.value(&StateSample::from_vector(v)), &x.to_vector(), CONSTRAINT_FD_STEP)
    }

    fn level(&self) -> Level {
        Level::Velocity
    }

    /// Natural range of each component, used to place interior targets.
    fn scale(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), 1.0)
    }
}

impl fmt::Debug for dyn StateConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.name(), self.dim())
    }
}

/// Scalar bound on one coordinate of `x`: `x_i - hi <= 0` or `lo - x_i <= 0`.
#[derive(Debug, Clone)]
pub struct BoxBound {
    name: String,
    index: usize,
    n_x: usize,
    bound: f64,
    upper: bool,
    half_width: f64,
    level: Level,
}

impl BoxBound {
    pub fn upper(index: usize, n_x: usize, bound: f64, half_width: f64) -> Self {
        Self::new(index, n_x, bound, true, half_width)
    }

    pub fn lower(index: usize, n_x: usize, bound: f64, half_width: f64) -> Self {
        Self::new(index, n_x, bound, false, half_width)
    }

    fn new(index: usize, n_x: usize, bound: f64, upper: bool, half_width: f64) -> Self {
        let n_q = n_x / 2;
        let (sym, j) = if index < n_q { ("q", index) } else { ("qd", index - n_q) };
        let name = format!("{sym}{}_{}", j + 1, if upper { "max" } else { "min" });
        let level = if index < n_q { Level::Position } else { Level::Velocity };
        Self { name, index, n_x, bound, upper, half_width, level }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    fn coord(&self, x: &StateSample) -> f64 {
        let n_q = x.q.len();
        if self.index < n_q {
            x.q[self.index]
        } else {
            x.qd[self.index - n_q]
        }
    }
}

impl StateConstraint for BoxBound {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &StateSample) -> DVector<f64> {
        let c = self.coord(x);
        let v = if self.upper { c - self.bound } else { self.bound - c };
        DVector::from_element(1, v)
    }

    fn jacobian(&self, _x: &StateSample) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(1, self.n_x);
        j[(0, self.index)] = if self.upper { 1.0 } else { -1.0 };
        j
    }

    fn level(&self) -> Level {
        self.level
    }

    fn scale(&self) -> DVector<f64> {
        DVector::from_element(1, self.half_width)
    }
}

/// Two scalar bounds per coordinate for the joint position and velocity boxes.
pub fn state_boxes(model: &RobotModel) -> Vec<Arc<dyn StateConstraint>> {
    let n = model.n_q;
    let n_x = 2 * n;
    let mut out: Vec<Arc<dyn StateConstraint>> = Vec::with_capacity(2 * n_x);
    for i in 0..n_x {
        let (lo, hi) = if i < n {
            (model.q_min[i], model.q_max[i])
        } else {
            (model.qd_min[i - n], model.qd_max[i - n])
        };
        let hw = 0.5 * (hi - lo);
        out.push(Arc::new(BoxBound::lower(i, n_x, lo, hw)));
        out.push(Arc::new(BoxBound::upper(i, n_x, hi, hw)));
    }
    out
}

/// End-effector pose pinned to an anchor: `(x, y[, theta]) - anchor`.
#[derive(Debug, Clone)]
pub struct ContactPose {
    model: RobotModel,
    anchor: [f64; 3],
    hold_orientation: bool,
}

impl ContactPose {
    pub fn new(model: RobotModel, anchor: [f64; 3], hold_orientation: bool) -> Self {
        Self { model, anchor, hold_orientation }
    }
}

impl StateConstraint for ContactPose {
    fn name(&self) -> &str {
        "contact_pose"
    }

    fn dim(&self) -> usize {
        if self.hold_orientation { 3 } else { 2 }
    }

    fn value(&self, x: &StateSample) -> DVector<f64> {
        let pose = self.model.end_effector_pose(&x.q);
        DVector::from_fn(self.dim(), |r, _| pose[r] - self.anchor[r])
    }

    fn jacobian(&self, x: &StateSample) -> DMatrix<f64> {
        let n = self.model.n_q;
        let jc = self.model.contact_jacobian(&x.q);
        let mut j = DMatrix::zeros(self.dim(), 2 * n);
        j.view_mut((0, 0), (self.dim(), n)).copy_from(&jc.rows(0, self.dim()));
        j
    }

    fn level(&self) -> Level {
        Level::Position
    }
}

/// End-effector velocity held at zero: rows of `J_c(q) qd`.
#[derive(Debug, Clone)]
pub struct ContactVelocity {
    model: RobotModel,
    hold_orientation: bool,
}

impl ContactVelocity {
    pub fn new(model: RobotModel, hold_orientation: bool) -> Self {
        Self { model, hold_orientation }
    }
}

impl StateConstraint for ContactVelocity {
    fn name(&self) -> &str {
        "contact_velocity"
    }

    fn dim(&self) -> usize {
        if self.hold_orientation { 3 } else { 2 }
    }

    fn value(&self, x: &StateSample) -> DVector<f64> {
        let jc = self.model.contact_jacobian(&x.q);
        jc.rows(0, self.dim()) * &x.qd
    }

    fn jacobian(&self, x: &StateSample) -> DMatrix<f64> {
        let n = self.model.n_q;
        let d = self.dim();
        let dq = linalg::fd_jacobian(
            |q| self.model.contact_jacobian(q).rows(0, d) * &x.qd,
            &x.q,
            CONSTRAINT_FD_STEP,
        );
        let mut j = DMatrix::zeros(d, 2 * n);
        j.view_mut((0, 0), (d, n)).copy_from(&dq);
        j.view_mut((0, n), (d, n)).copy_from(&self.model.contact_jacobian(&x.q).rows(0, d));
        j
    }
}

/// Affine constraint `A x - b`.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub name: String,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub level: Level,
}

impl StateConstraint for LinearConstraint {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn value(&self, x: &StateSample) -> DVector<f64> {
        &self.a * x.to_vector() - &self.b
    }

    fn jacobian(&self, _x: &StateSample) -> DMatrix<f64> {
        self.a.clone()
    }

    fn level(&self) -> Level {
        self.level
    }
}

type ValueFn = dyn Fn(&StateSample) -> DVector<f64> + Send + Sync;

/// Constraint given by a closure; its Jacobian comes from finite differences.
pub struct FnConstraint {
    name: String,
    dim: usize,
    level: Level,
    f: Box<ValueFn>,
}

impl FnConstraint {
    pub fn new<F>(name: impl Into<String>, dim: usize, level: Level, f: F) -> Self
    where
        F: Fn(&StateSample) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { name: name.into(), dim, level, f: Box::new(f) }
    }
}

impl StateConstraint for FnConstraint {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &StateSample) -> DVector<f64> {
        (self.f)(x)
    }

    fn level(&self) -> Level {
        self.level
    }
}

/// Mixed state-input constraint `a_x x + a_u u - b <= 0`.
#[derive(Debug, Clone)]
pub struct MixedLinear {
    pub a_x: DMatrix<f64>,
    pub a_u: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Feasible (`h_e`, `h_i`) and violated (`h_not_e`, `h_not_i`) constraint indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexPartition {
    pub h_e: Vec<usize>,
    pub h_not_e: Vec<usize>,
    pub h_i: Vec<usize>,
    pub h_not_i: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StackedValues {
    pub v_e: DVector<f64>,
    pub v_not_e: DVector<f64>,
    pub v_i: DVector<f64>,
    pub v_not_i: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct StackedJacobians {
    pub j_e: DMatrix<f64>,
    pub j_not_e: DMatrix<f64>,
    pub j_i: DMatrix<f64>,
    pub j_not_i: DMatrix<f64>,
}

/// Full-row-rank check with the shared relative cutoff.
pub fn check_full_row_rank(j: &DMatrix<f64>) -> Result<()> {
    if j.nrows() == 0 {
        return Ok(());
    }
    let r = linalg::rank(j, linalg::RANK_RTOL);
    if r < j.nrows() {
        Err(Error::RankDeficient { rank: r, rows: j.nrows() })
    } else {
        Ok(())
    }
}

#[derive(Clone)]
pub struct ConstraintRegistry {
    pub equalities: Vec<Arc<dyn StateConstraint>>,
    pub inequalities: Vec<Arc<dyn StateConstraint>>,
    pub mixed: Vec<MixedLinear>,
    pub eps_h: f64,
    pub interior_margin: f64,
    n_x: usize,
}

impl fmt::Debug for ConstraintRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintRegistry")
            .field("equalities", &self.equalities)
            .field("inequalities", &self.inequalities.len())
            .field("eps_h", &self.eps_h)
            .finish()
    }
}

impl ConstraintRegistry {
    pub fn new(n_x: usize) -> Self {
        Self {
            equalities: Vec::new(),
            inequalities: Vec::new(),
            mixed: Vec::new(),
            eps_h: 1e-6,
            interior_margin: 0.05,
            n_x,
        }
    }

    /// Joint position and velocity boxes only.
    pub fn boxes(model: &RobotModel) -> Self {
        let mut reg = Self::new(model.n_x());
        reg.inequalities = state_boxes(model);
        reg
    }

    /// Boxes plus the end effector pinned at `anchor` with zero velocity.
    pub fn with_contact(model: &RobotModel, anchor: [f64; 3], hold_orientation: bool) -> Self {
        let mut reg = Self::boxes(model);
        reg.push_equality(Arc::new(ContactPose::new(model.clone(), anchor, hold_orientation)));
        reg.push_equality(Arc::new(ContactVelocity::new(model.clone(), hold_orientation)));
        reg
    }

    pub fn push_equality(&mut self, c: Arc<dyn StateConstraint>) {
        self.equalities.push(c);
    }

    pub fn push_inequality(&mut self, c: Arc<dyn StateConstraint>) {
        self.inequalities.push(c);
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_e(&self) -> usize {
        self.equalities.len()
    }

    pub fn n_i(&self) -> usize {
        self.inequalities.len()
    }

    pub fn partition(&self, x: &StateSample) -> IndexPartition {
        let mut part = IndexPartition::default();
        for (h, c) in self.equalities.iter().enumerate() {
            if c.value(x).norm() <= self.eps_h {
                part.h_e.push(h);
            } else {
                part.h_not_e.push(h);
            }
        }
        for (h, c) in self.inequalities.iter().enumerate() {
            if c.value(x).iter().all(|&v| v <= 0.0) {
                part.h_i.push(h);
            } else {
                part.h_not_i.push(h);
            }
        }
        part
    }

    fn stack_set(set: &[Arc<dyn StateConstraint>], idx: &[usize], x: &StateSample) -> DVector<f64> {
        let parts: Vec<DVector<f64>> = idx.iter().map(|&h| set[h].value(x)).collect();
        linalg::vcat(&parts)
    }

    fn stack_jac(&self, set: &[Arc<dyn StateConstraint>], idx: &[usize], x: &StateSample) -> DMatrix<f64> {
        let blocks: Vec<DMatrix<f64>> = idx.iter().map(|&h| set[h].jacobian(x)).collect();
        linalg::vstack(&blocks, self.n_x)
    }

    pub fn stack_values(&self, x: &StateSample, part: &IndexPartition) -> StackedValues {
        StackedValues {
            v_e: Self::stack_set(&self.equalities, &part.h_e, x),
            v_not_e: Self::stack_set(&self.equalities, &part.h_not_e, x),
            v_i: Self::stack_set(&self.inequalities, &part.h_i, x),
            v_not_i: Self::stack_set(&self.inequalities, &part.h_not_i, x),
        }
    }

    /// Stacked Jacobians in the same row order as [`Self::stack_values`].
    ///
    /// Fails when the equality rows (`J_e` over `J_not_e`) or the violated
    /// inequality rows are rank deficient.
    pub fn stack_jacobians(&self, x: &StateSample, part: &IndexPartition) -> Result<StackedJacobians> {
        let jac = StackedJacobians {
            j_e: self.stack_jac(&self.equalities, &part.h_e, x),
            j_not_e: self.stack_jac(&self.equalities, &part.h_not_e, x),
            j_i: self.stack_jac(&self.inequalities, &part.h_i, x),
            j_not_i: self.stack_jac(&self.inequalities, &part.h_not_i, x),
        };
        check_full_row_rank(&linalg::vstack(&[jac.j_e.clone(), jac.j_not_e.clone()], self.n_x))?;
        check_full_row_rank(&jac.j_not_i)?;
        Ok(jac)
    }

    /// All equality values stacked in registry order.
    pub fn equality_values(&self, x: &StateSample) -> DVector<f64> {
        let all: Vec<usize> = (0..self.n_e()).collect();
        Self::stack_set(&self.equalities, &all, x)
    }

    /// All inequality values stacked in registry order.
    pub fn inequality_values(&self, x: &StateSample) -> DVector<f64> {
        let all: Vec<usize> = (0..self.n_i()).collect();
        Self::stack_set(&self.inequalities, &all, x)
    }

    pub fn max_equality_residual(&self, x: &StateSample) -> f64 {
        self.equality_values(x).amax()
    }

    /// Largest positive inequality value, or 0.
    pub fn max_inequality_violation(&self, x: &StateSample) -> f64 {
        self.inequality_values(x).iter().fold(0.0_f64, |m, &v| m.max(v))
    }

    pub fn is_feasible(&self, x: &StateSample, eps_e: f64) -> bool {
        self.max_equality_residual(x) <= eps_e && self.max_inequality_violation(x) <= 0.0
    }

    /// Velocity-level equalities, which stay affine in `qd` for a fixed `q`.
    pub fn velocity_equalities(&self) -> impl Iterator<Item = &Arc<dyn StateConstraint>> {
        self.equalities.iter().filter(|c| c.level() == Level::Velocity)
    }
}
