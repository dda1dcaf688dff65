//! Planar n-link chain dynamics with an end-effector contact wrench.
//!
//! Links are uniform rods (inertia `m L^2 / 12` about the center of mass) with the
//! center of mass at `com_ratio * L` along the link. Gravity acts along `-y`.
//! Joint angles are relative; the absolute angle of link `j` is `q_1 + ... + q_j`.
//!
//! The equations of motion are assembled in absolute-angle coordinates, where the
//! inertia matrix has the closed form `A_jk cos(theta_j - theta_k) + I_j delta_jk`,
//! and mapped back to joint space through the constant lower-triangular map
//! `theta = S q`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Mass matrices with a larger condition number are treated as singular.
pub const MAX_MASS_CONDITION: f64 = 1e12;

/// Perturbation length (in state space) for the difference inside the second-order term.
pub const B2_FD_STEP: f64 = 1e-4;

fn default_gravity() -> f64 {
    9.81
}

fn default_output_link() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub n_q: usize,
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    /// Fraction of each link length at which its center of mass sits.
    #[serde(default)]
    pub com_ratios: Vec<f64>,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub qd_min: Vec<f64>,
    pub qd_max: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub mu: f64,
    /// Moment arm `L_c` bounding the contact torque.
    pub contact_arm: f64,
    /// 1-based index of the link whose distal endpoint is the output point.
    #[serde(default = "default_output_link")]
    pub output_link: usize,
}

/// Joint-space state `x = (q, qd)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl StateSample {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Self {
        Self { q, qd }
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q, qd: DVector::zeros(n) }
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self { q: x.rows(0, n).into_owned(), qd: x.rows(n, n).into_owned() }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        linalg::vcat(&[self.q.clone(), self.qd.clone()])
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }

    pub fn dim(&self) -> usize {
        2 * self.q.len()
    }
}

/// Planar contact wrench at the end effector.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactWrench {
    pub fx: f64,
    pub fy: f64,
    pub tz: f64,
}

impl ContactWrench {
    pub fn new(fx: f64, fy: f64, tz: f64) -> Self {
        Self { fx, fy, tz }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.fx, self.fy, self.tz])
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { fx: v[0], fy: v[1], tz: v[2] }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { fx: c * self.fx, fy: c * self.fy, tz: c * self.tz }
    }
}

impl RobotModel {
    /// Fill defaults that depend on `n_q` and check the invariants.
    pub fn validated(mut self) -> Result<Self> {
        if self.com_ratios.is_empty() {
            self.com_ratios = vec![0.5; self.n_q];
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_q;
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if n == 0 {
            return bad("n_q must be at least 1".into());
        }
        for (name, v) in [
            ("masses", &self.masses),
            ("lengths", &self.lengths),
            ("com_ratios", &self.com_ratios),
            ("q_min", &self.q_min),
            ("q_max", &self.q_max),
            ("qd_min", &self.qd_min),
            ("qd_max", &self.qd_max),
            ("u_min", &self.u_min),
            ("u_max", &self.u_max),
        ] {
            if v.len() != n {
                return bad(format!("{name} has length {} but n_q = {n}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} has non-finite entries"));
            }
        }
        if self.masses.iter().any(|&m| m <= 0.0) {
            return bad("masses must be positive".into());
        }
        if self.lengths.iter().any(|&l| l <= 0.0) {
            return bad("lengths must be positive".into());
        }
        if self.com_ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return bad("com_ratios must lie in [0, 1]".into());
        }
        for (lo, hi, name) in [
            (&self.q_min, &self.q_max, "q"),
            (&self.qd_min, &self.qd_max, "qd"),
            (&self.u_min, &self.u_max, "u"),
        ] {
            if lo.iter().zip(hi).any(|(a, b)| a >= b) {
                return bad(format!("{name}_min must be below {name}_max"));
            }
        }
        if !(self.mu > 0.0) {
            return bad("mu must be positive".into());
        }
        if !(self.contact_arm > 0.0) {
            return bad("contact_arm must be positive".into());
        }
        if self.output_link < 1 || self.output_link > n {
            return bad(format!("output_link must be in [1, {n}]"));
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        2 * self.n_q
    }

    fn absolute_angles(&self, q: &DVector<f64>) -> Vec<f64> {
        let mut acc = 0.0;
        q.iter()
            .map(|&qi| {
                acc += qi;
                acc
            })
            .collect()
    }

    /// Distance from joint `j` to the center of mass of link `i` measured along link `j`.
    fn lever(&self, i: usize, j: usize) -> f64 {
        if j < i {
            self.lengths[j]
        } else if j == i {
            self.com_ratios[i] * self.lengths[i]
        } else {
            0.0
        }
    }

    fn link_inertia(&self, i: usize) -> f64 {
        self.masses[i] * self.lengths[i] * self.lengths[i] / 12.0
    }

    /// Coefficients `A_jk` of the absolute-angle inertia matrix.
    fn coupling(&self) -> DMatrix<f64> {
        let n = self.n_q;
        DMatrix::from_fn(n, n, |j, k| {
            (j.max(k)..n).map(|i| self.masses[i] * self.lever(i, j) * self.lever(i, k)).sum()
        })
    }

    /// `S^T X S` for the lower-triangular ones matrix `S`.
    fn to_joint_space(x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        // suffix sums over rows then columns
        let mut rows = x.clone();
        for j in (0..n.saturating_sub(1)).rev() {
            let next = rows.row(j + 1).into_owned();
            let mut r = rows.row_mut(j);
            r += next;
        }
        let mut out = rows;
        for k in (0..n.saturating_sub(1)).rev() {
            let next = out.column(k + 1).into_owned();
            let mut c = out.column_mut(k);
            c += next;
        }
        out
    }

    fn suffix_sum(v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for j in (0..v.len().saturating_sub(1)).rev() {
            out[j] += out[j + 1];
        }
        out
    }

    /// Joint-space inertia matrix `M(q)`.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n_q;
        let th = self.absolute_angles(q);
        let a = self.coupling();
        let m_abs = DMatrix::from_fn(n, n, |j, k| {
            a[(j, k)] * (th[j] - th[k]).cos() + if j == k { self.link_inertia(j) } else { 0.0 }
        });
        let m = Self::to_joint_space(&m_abs);
        // the suffix sums round differently above and below the diagonal
        (&m + m.transpose()) * 0.5
    }

    /// Coriolis/centrifugal vector `b(q, qd)` and gravity vector `p(q)`.
    pub fn bias_and_gravity(&self, q: &DVector<f64>, qd: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.n_q;
        let th = self.absolute_angles(q);
        let w = self.absolute_angles(qd);
        let a = self.coupling();
        let c_abs = DVector::from_fn(n, |j, _| {
            (0..n).map(|k| a[(j, k)] * (th[j] - th[k]).sin() * w[k] * w[k]).sum::<f64>()
        });
        let p_abs = DVector::from_fn(n, |j, _| {
            let moment: f64 = (j..n).map(|i| self.masses[i] * self.lever(i, j)).sum();
            self.gravity * th[j].cos() * moment
        });
        (Self::suffix_sum(&c_abs), Self::suffix_sum(&p_abs))
    }

    /// Distal endpoint of link `link` (1-based) in the plane.
    pub fn link_endpoint(&self, q: &DVector<f64>, link: usize) -> [f64; 2] {
        let th = self.absolute_angles(q);
        let (mut x, mut y) = (0.0, 0.0);
        for j in 0..link {
            x += self.lengths[j] * th[j].cos();
            y += self.lengths[j] * th[j].sin();
        }
        [x, y]
    }

    /// End-effector pose `(x, y, theta)`.
    pub fn end_effector_pose(&self, q: &DVector<f64>) -> [f64; 3] {
        let [x, y] = self.link_endpoint(q, self.n_q);
        [x, y, q.sum()]
    }

    /// Positional Jacobian (2 x n_q) of the endpoint of `link`.
    pub fn endpoint_jacobian(&self, q: &DVector<f64>, link: usize) -> DMatrix<f64> {
        let n = self.n_q;
        let th = self.absolute_angles(q);
        let mut jac = DMatrix::zeros(2, n);
        for k in 0..link {
            for j in k..link {
                jac[(0, k)] -= self.lengths[j] * th[j].sin();
                jac[(1, k)] += self.lengths[j] * th[j].cos();
            }
        }
        jac
    }

    /// Contact Jacobian `J_c` (3 x n_q): rows are d(x, y, theta)/dq of the end effector.
    pub fn contact_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n_q;
        let pos = self.endpoint_jacobian(q, n);
        let mut jac = DMatrix::zeros(3, n);
        jac.view_mut((0, 0), (2, n)).copy_from(&pos);
        jac.row_mut(2).fill(1.0);
        jac
    }

    /// Output point `y = g(x)`: distal endpoint of `output_link`.
    pub fn output_map(&self, x: &StateSample) -> [f64; 2] {
        self.link_endpoint(&x.q, self.output_link)
    }

    /// Output Jacobian `dg/dx` (2 x 2 n_q); the velocity block is zero.
    pub fn output_jacobian(&self, x: &StateSample) -> DMatrix<f64> {
        let n = self.n_q;
        let mut jac = DMatrix::zeros(2, 2 * n);
        jac.view_mut((0, 0), (2, n)).copy_from(&self.endpoint_jacobian(&x.q, self.output_link));
        jac
    }

    /// Joint accelerations `M^-1 (u + J_c^T F_c - b - p)`.
    pub fn acceleration(&self, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench) -> Result<DVector<f64>> {
        let m = self.mass_matrix(&x.q);
        let cond = linalg::spd_condition(&m);
        if !(cond <= MAX_MASS_CONDITION) {
            return Err(Error::SingularMassMatrix { cond });
        }
        let (b, p) = self.bias_and_gravity(&x.q, &x.qd);
        let jc = self.contact_jacobian(&x.q);
        let rhs = u + jc.transpose() * fc.to_vector() - b - p;
        let chol = m.cholesky().ok_or(Error::SingularMassMatrix { cond })?;
        Ok(chol.solve(&rhs))
    }

    /// First-order term `B_1 = [qd; M^-1 (u + J_c^T F_c - b - p)]`.
    pub fn b1(&self, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench) -> Result<DVector<f64>> {
        let acc = self.acceleration(x, u, fc)?;
        Ok(linalg::vcat(&[x.qd.clone(), acc]))
    }

    /// `dB_1/dx` at fixed input and wrench, by central differences.
    pub fn b1_state_jacobian(&self, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench) -> Result<DMatrix<f64>> {
        // validate once so the closure below cannot hit a singular matrix at x itself
        self.b1(x, u, fc)?;
        let mut failure = None;
        let jac = linalg::fd_jacobian(
            |xv| match self.b1(&StateSample::from_vector(xv), u, fc) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    DVector::zeros(xv.len())
                }
            },
            &x.to_vector(),
            B2_FD_STEP,
        );
        match failure {
            Some(e) => Err(e),
            None => Ok(jac),
        }
    }

    /// `B_2 = (dB_1/dx) B_1`, the derivative of `B_1` along itself, by a
    /// central difference in that direction.
    pub fn b2(&self, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench, b1: &DVector<f64>) -> Result<DVector<f64>> {
        let norm = b1.norm();
        if norm == 0.0 {
            return Ok(DVector::zeros(b1.len()));
        }
        let s = B2_FD_STEP / norm;
        let xv = x.to_vector();
        let fwd = self.b1(&StateSample::from_vector(&(&xv + b1 * s)), u, fc)?;
        let back = self.b1(&StateSample::from_vector(&(&xv - b1 * s)), u, fc)?;
        Ok((fwd - back) / (2.0 * s))
    }

    /// Second-order discrete step `x + B_1 dt + B_2 dt^2 / 2` with `B_2 = (dB_1/dx) B_1`.
    pub fn step(&self, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench, dt: f64) -> Result<StateSample> {
        let b1 = self.b1(x, u, fc)?;
        let b2 = self.b2(x, u, fc, &b1)?;
        let next = x.to_vector() + &b1 * dt + b2 * (0.5 * dt * dt);
        Ok(StateSample::from_vector(&next))
    }

    /// First-order step `x + B_1 dt`.
    pub fn euler_step(&self, x: &StateSample, u: &DVector<f64>, fc: &ContactWrench, dt: f64) -> Result<StateSample> {
        let b1 = self.b1(x, u, fc)?;
        Ok(StateSample::from_vector(&(x.to_vector() + b1 * dt)))
    }

    /// Torque holding the chain still at `x` with zero wrench: `b + p`.
    pub fn gravity_compensation(&self, x: &StateSample) -> DVector<f64> {
        let (b, p) = self.bias_and_gravity(&x.q, &x.qd);
        b + p
    }

    pub fn q_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_vec(self.q_min.clone()), DVector::from_vec(self.q_max.clone()))
    }

    pub fn u_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_vec(self.u_min.clone()), DVector::from_vec(self.u_max.clone()))
    }

    /// The 4-DOF planar robot used in the contact experiment.
    pub fn planar_four_link() -> Self {
        use std::f64::consts::PI;
        Self {
            n_q: 4,
            masses: vec![2.0, 1.5, 1.0, 1.0],
            lengths: vec![1.0, 1.5, 2.5, 1.0],
            com_ratios: vec![0.5; 4],
            gravity: 9.81,
            q_min: vec![-2.0 / 3.0 * PI; 4],
            q_max: vec![2.0 / 3.0 * PI; 4],
            qd_min: vec![-1.5 * PI; 4],
            qd_max: vec![1.5 * PI; 4],
            u_min: vec![-1000.0; 4],
            u_max: vec![1000.0; 4],
            mu: 0.6,
            contact_arm: 0.1,
            output_link: 2,
        }
    }

    /// A free two-link arm used for reduced checks.
    pub fn planar_two_link() -> Self {
        use std::f64::consts::PI;
        Self {
            n_q: 2,
            masses: vec![1.0, 1.0],
            lengths: vec![1.0, 1.0],
            com_ratios: vec![0.5; 2],
            gravity: 9.81,
            q_min: vec![-2.0 / 3.0 * PI; 2],
            q_max: vec![2.0 / 3.0 * PI; 2],
            qd_min: vec![-1.5 * PI; 2],
            qd_max: vec![1.5 * PI; 2],
            u_min: vec![-60.0; 2],
            u_max: vec![60.0; 2],
            mu: 0.6,
            contact_arm: 0.1,
            output_link: 2,
        }
    }

    /// Single uniform rod pendulum, mostly for tests.
    pub fn pendulum(mass: f64, length: f64, gravity: f64) -> Self {
        Self {
            n_q: 1,
            masses: vec![mass],
            lengths: vec![length],
            com_ratios: vec![0.5],
            gravity,
            q_min: vec![-10.0],
            q_max: vec![10.0],
            qd_min: vec![-10.0],
            qd_max: vec![10.0],
            u_min: vec![-100.0],
            u_max: vec![100.0],
            mu: 0.6,
            contact_arm: 0.1,
            output_link: 1,
        }
    }
}
