//! Per-state contact feasibility: does a torque and a contact wrench exist that
//! respect the torque box, the friction pyramid and the state constraints one
//! step ahead? Solved as a small convex QP minimizing `F' W_c F`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintRegistry, Level};
use crate::error::Result;
use crate::linalg;
use crate::model::{ContactWrench, RobotModel, StateSample};
use crate::qp::{QpProblem, QpSettings, QpSolution, QpStatus};
use crate::sampler::SampleSet;

/// `F_x <= -STRICT_MARGIN` stands in for the strict `F_x < 0`.
pub const STRICT_MARGIN: f64 = 1e-9;

/// Tolerance used when re-checking a QP answer against its constraints.
pub const CHECK_TOL: f64 = 1e-6;

/// Linear friction pyramid `D_c F <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidMatrix {
    pub d_c: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl PyramidMatrix {
    pub fn contains(&self, f: &ContactWrench, tol: f64) -> bool {
        self.violation(f) <= tol
    }

    /// Largest row of `D_c F - rhs`, or 0 when inside.
    pub fn violation(&self, f: &ContactWrench) -> f64 {
        (&self.d_c * f.to_vector() - &self.rhs).iter().fold(0.0_f64, |m, &v| m.max(v))
    }
}

/// Rows `[1,0,0]`, `[mu,±1,0]`, `[L_c,0,±1]`: a pushing contact with Coulomb
/// friction and a bounded torsional moment.
pub fn friction_pyramid(model: &RobotModel) -> PyramidMatrix {
    let (mu, lc) = (model.mu, model.contact_arm);
    let d_c = DMatrix::from_row_slice(
        5,
        3,
        &[1.0, 0.0, 0.0, mu, 1.0, 0.0, mu, -1.0, 0.0, lc, 0.0, 1.0, lc, 0.0, -1.0],
    );
    let mut rhs = DVector::zeros(5);
    rhs[0] = -STRICT_MARGIN;
    PyramidMatrix { d_c, rhs }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    pub u_opt: DVector<f64>,
    pub fc_opt: ContactWrench,
    pub objective: f64,
    pub status: QpStatus,
}

/// Next velocity as an affine function of the decision vector:
/// `qd' = qd_bar + G z` with `q' = q + dt qd` fixed.
#[derive(Debug, Clone)]
pub struct NextStateMap {
    pub x_bar: StateSample,
    pub g: DMatrix<f64>,
}

/// Decision variables are `(u, F)`, or `F` alone when `fixed_u` is given.
pub fn next_state_map(
    model: &RobotModel,
    x: &StateSample,
    dt: f64,
    fixed_u: Option<&DVector<f64>>,
) -> Result<NextStateMap> {
    let n = model.n_q;
    let zero = DVector::zeros(n);
    // validates the mass matrix conditioning
    let drift = model.acceleration(x, fixed_u.unwrap_or(&zero), &ContactWrench::zero())?;
    let m = model.mass_matrix(&x.q);
    let chol = m.cholesky().expect("mass matrix checked above");
    let jct = model.contact_jacobian(&x.q).transpose();
    let cols = if fixed_u.is_some() { 3 } else { n + 3 };
    let mut b = DMatrix::zeros(n, cols);
    if fixed_u.is_some() {
        b.copy_from(&jct);
    } else {
        b.view_mut((0, 0), (n, n)).fill_with_identity();
        b.view_mut((0, n), (n, 3)).copy_from(&jct);
    }
    let g = chol.solve(&b) * dt;
    let x_bar = StateSample::new(&x.q + &x.qd * dt, &x.qd + drift * dt);
    Ok(NextStateMap { x_bar, g })
}

/// Convex QP for one state. With `fixed_u` the torque is given and only the wrench is decided.
pub fn build_problem(
    model: &RobotModel,
    reg: &ConstraintRegistry,
    x: &StateSample,
    w_c: &DMatrix<f64>,
    dt: f64,
    fixed_u: Option<&DVector<f64>>,
) -> Result<QpProblem> {
    let n = model.n_q;
    let map = next_state_map(model, x, dt, fixed_u)?;
    let nz = map.g.ncols();
    let f_off = nz - 3;

    let mut h = DMatrix::zeros(nz, nz);
    h.view_mut((f_off, f_off), (3, 3)).copy_from(&(w_c + w_c.transpose()));
    let g = DVector::zeros(nz);

    let mut a_in: Vec<DMatrix<f64>> = Vec::new();
    let mut b_in: Vec<DVector<f64>> = Vec::new();

    if fixed_u.is_none() {
        let mut box_a = DMatrix::zeros(2 * n, nz);
        let mut box_b = DVector::zeros(2 * n);
        for i in 0..n {
            box_a[(2 * i, i)] = 1.0;
            box_b[2 * i] = model.u_max[i];
            box_a[(2 * i + 1, i)] = -1.0;
            box_b[2 * i + 1] = -model.u_min[i];
        }
        a_in.push(box_a);
        b_in.push(box_b);
    }

    let pyr = friction_pyramid(model);
    let mut pa = DMatrix::zeros(5, nz);
    pa.view_mut((0, f_off), (5, 3)).copy_from(&pyr.d_c);
    a_in.push(pa);
    b_in.push(pyr.rhs.clone());

    // state inequalities at the next step, linear in qd'
    for c in &reg.inequalities {
        let v = c.value(&map.x_bar);
        let j = c.jacobian(&map.x_bar);
        a_in.push(j.columns(n, n) * &map.g);
        b_in.push(-v);
    }
    for mc in &reg.mixed {
        let vx = &mc.a_x * map.x_bar.to_vector();
        let mut row = mc.a_x.columns(n, n) * &map.g;
        match fixed_u {
            Some(u) => {
                b_in.push(&mc.b - vx - &mc.a_u * u);
            }
            None => {
                let mut left = row.columns_mut(0, n);
                left += &mc.a_u;
                b_in.push(&mc.b - vx);
            }
        }
        a_in.push(row);
    }

    let mut a_eq: Vec<DMatrix<f64>> = Vec::new();
    let mut b_eq: Vec<DVector<f64>> = Vec::new();
    for c in reg.equalities.iter().filter(|c| c.level() == Level::Velocity) {
        let v = c.value(&map.x_bar);
        let j = c.jacobian(&map.x_bar);
        a_eq.push(j.columns(n, n) * &map.g);
        b_eq.push(-v);
    }

    Ok(QpProblem::new(h, g)
        .with_equalities(linalg::vstack(&a_eq, nz), linalg::vcat(&b_eq))
        .with_inequalities(linalg::vstack(&a_in, nz), linalg::vcat(&b_in)))
}

fn result_from(model: &RobotModel, problem: &QpProblem, sol: &QpSolution, fixed_u: Option<&DVector<f64>>) -> FeasibilityResult {
    let n = model.n_q;
    let nz = problem.n();
    let f_off = nz - 3;
    let fc = ContactWrench::from_slice(&sol.z.as_slice()[f_off..]);
    let u = match fixed_u {
        Some(u) => u.clone(),
        None => sol.z.rows(0, n).into_owned(),
    };
    let ok = sol.status == QpStatus::Optimal && problem.kkt_residual(&sol.z, &sol.lambda_eq, &sol.lambda_in).primal <= CHECK_TOL;
    FeasibilityResult {
        feasible: ok,
        u_opt: u,
        fc_opt: fc,
        objective: if ok { sol.objective } else { f64::NAN },
        status: sol.status,
    }
}

/// Solve the feasibility QP over `(u, F)` at `x`.
pub fn evaluate_sample(
    model: &RobotModel,
    reg: &ConstraintRegistry,
    x: &StateSample,
    w_c: &DMatrix<f64>,
    dt: f64,
) -> Result<FeasibilityResult> {
    let p = build_problem(model, reg, x, w_c, dt, None)?;
    let sol = p.solve(&QpSettings::default());
    Ok(result_from(model, &p, &sol, None))
}

/// Solve for the wrench alone with the torque fixed to `u`.
pub fn evaluate_with_input(
    model: &RobotModel,
    reg: &ConstraintRegistry,
    x: &StateSample,
    u: &DVector<f64>,
    w_c: &DMatrix<f64>,
    dt: f64,
) -> Result<FeasibilityResult> {
    let p = build_problem(model, reg, x, w_c, dt, Some(u))?;
    let sol = p.solve(&QpSettings::default());
    Ok(result_from(model, &p, &sol, Some(u)))
}

/// Keep the samples whose QP is feasible, annotated with the optimal torque and wrench.
pub fn filter(model: &RobotModel, reg: &ConstraintRegistry, samples: &SampleSet, w_c: &DMatrix<f64>, dt: f64) -> SampleSet {
    let results: Vec<Option<FeasibilityResult>> = samples
        .states
        .par_iter()
        .map(|x| evaluate_sample(model, reg, x, w_c, dt).ok().filter(|r| r.feasible))
        .collect();
    let mut out = SampleSet { seed: samples.seed, drawn: samples.drawn, ..SampleSet::default() };
    for (x, r) in samples.states.iter().zip(results) {
        if let Some(r) = r {
            out.states.push(x.clone());
            out.annotations.push(r);
        }
    }
    out.repaired = out.states.len();
    out.discarded = out.drawn - out.repaired;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_ray_rows() {
        let p = friction_pyramid(&RobotModel::planar_four_link());
        let v = &p.d_c * ContactWrench::new(-1.0, 0.0, 0.0).to_vector();
        let expect = [-1.0, -0.6, -0.6, -0.1, -0.1];
        for (a, b) in v.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(!p.contains(&ContactWrench::new(1.0, 0.0, 0.0), 0.0));
    }

    #[test]
    fn static_pose_needs_no_wrench() {
        let model = RobotModel::planar_two_link();
        let reg = ConstraintRegistry::boxes(&model);
        let x = StateSample::at_rest(DVector::from_column_slice(&[0.3, 0.4]));
        let r = evaluate_sample(&model, &reg, &x, &DMatrix::identity(3, 3), 0.01).unwrap();
        assert!(r.feasible);
        assert!(r.objective.abs() < 1e-12);
        assert!(r.fc_opt.to_vector().amax() < 1e-6);
    }

    #[test]
    fn zero_torque_box_is_infeasible_under_gravity() {
        let mut model = RobotModel::planar_two_link();
        let pose = model.end_effector_pose(&DVector::from_column_slice(&[0.3, 0.4]));
        model.u_min = vec![-1e-12; 2];
        model.u_max = vec![1e-12; 2];
        model.mu = 1e-3;
        model.contact_arm = 1e-3;
        let reg = ConstraintRegistry::with_contact(&model, pose, false);
        let x = StateSample::at_rest(DVector::from_column_slice(&[0.3, 0.4]));
        let r = evaluate_sample(&model, &reg, &x, &DMatrix::identity(3, 3), 0.01).unwrap();
        assert!(!r.feasible);
    }
}
