//! Dense primal active-set solver for small convex quadratic programs
//!
//! ```text
//! minimize    0.5 z' H z + g' z
//! subject to  A_eq z  = b_eq
//!             A_in z <= b_in
//! ```
//!
//! `H` only needs to be positive semidefinite. Directions of zero curvature are
//! followed as descent rays, so linear programs are handled by the same loop.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub lambda_in: DVector<f64>,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    pub max_iter: usize,
    /// Primal feasibility tolerance on normalized rows.
    pub feas_tol: f64,
    /// Multipliers above `-dual_tol` count as nonnegative.
    pub dual_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { max_iter: 200, feas_tol: 1e-9, dual_tol: 1e-10 }
    }
}

/// KKT residuals of a candidate primal/dual pair.
#[derive(Debug, Clone, Copy)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z)
    }

    pub fn kkt_residual(&self, z: &DVector<f64>, lambda_eq: &DVector<f64>, lambda_in: &DVector<f64>) -> KktResidual {
        let grad = &self.h * z + &self.g + self.a_eq.transpose() * lambda_eq + self.a_in.transpose() * lambda_in;
        let r_eq = &self.a_eq * z - &self.b_eq;
        let r_in = &self.a_in * z - &self.b_in;
        let primal = r_eq.amax().max(r_in.iter().fold(0.0_f64, |m, &v| m.max(v)));
        let dual = lambda_in.iter().fold(0.0_f64, |m, &l| m.max(-l));
        let complementarity = lambda_in.iter().zip(r_in.iter()).fold(0.0_f64, |m, (l, r)| m.max((l * r).abs()));
        KktResidual { stationarity: grad.amax(), primal, dual, complementarity }
    }

    pub fn solve(&self, settings: &QpSettings) -> QpSolution {
        solve(self, settings)
    }
}

/// Problem with unit-norm constraint rows; zero rows are dropped after a consistency check.
struct Normalized {
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    eq_rows: Vec<(usize, f64)>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
    in_rows: Vec<(usize, f64)>,
}

fn normalize(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64, equality: bool) -> Option<(DMatrix<f64>, DVector<f64>, Vec<(usize, f64)>)> {
    let n = a.ncols();
    let mut rows = Vec::new();
    for i in 0..a.nrows() {
        let norm = a.row(i).norm();
        if norm <= 1e-14 {
            let inconsistent = if equality { b[i].abs() > tol } else { b[i] < -tol };
            if inconsistent {
                return None;
            }
            continue;
        }
        rows.push((i, norm));
    }
    let mut an = DMatrix::zeros(rows.len(), n);
    let mut bn = DVector::zeros(rows.len());
    for (r, &(i, norm)) in rows.iter().enumerate() {
        an.set_row(r, &(a.row(i) / norm));
        bn[r] = b[i] / norm;
    }
    Some((an, bn, rows))
}

struct ActiveSetResult {
    status: QpStatus,
    z: DVector<f64>,
    working: Vec<usize>,
    lambda_eq: DVector<f64>,
    lambda_w: DVector<f64>,
    iterations: usize,
}

/// Active-set iterations from a feasible `z`. `stop` ends the loop early once it returns true.
#[allow(clippy::too_many_arguments)]
fn active_set(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
    mut z: DVector<f64>,
    settings: &QpSettings,
    stop: impl Fn(&DVector<f64>) -> bool,
) -> ActiveSetResult {
    let n = z.len();
    let m_eq = a_eq.nrows();
    let mut working: Vec<usize> = Vec::new();
    let h_scale = h.amax().max(1.0);
    for it in 0..settings.max_iter {
        if stop(&z) {
            return ActiveSetResult {
                status: QpStatus::Optimal,
                z,
                working,
                lambda_eq: DVector::zeros(m_eq),
                lambda_w: DVector::zeros(0),
                iterations: it,
            };
        }
        let mut blocks = vec![a_eq.clone()];
        for &i in &working {
            blocks.push(a_in.rows(i, 1).into_owned());
        }
        let a_w = linalg::vstack(&blocks, n);
        let grad = h * &z + g;
        let zb = linalg::null_basis(&a_w, n, 1e-12);

        let mut step: Option<(DVector<f64>, bool)> = None;
        if zb.ncols() > 0 {
            let rg = zb.transpose() * &grad;
            let hr = zb.transpose() * h * &zb;
            let eig = SymmetricEigen::new(hr);
            let lam_max = eig.eigenvalues.iter().fold(0.0_f64, |m, &l| m.max(l));
            let cut = 1e-12 * h_scale.max(lam_max);
            let mut ray = DVector::zeros(zb.ncols());
            let mut newton = DVector::zeros(zb.ncols());
            for k in 0..eig.eigenvalues.len() {
                let v = eig.eigenvectors.column(k);
                let c = v.dot(&rg);
                if eig.eigenvalues[k] <= cut {
                    ray -= v * c;
                } else {
                    newton -= v * (c / eig.eigenvalues[k]);
                }
            }
            let gscale = grad.amax().max(1.0);
            if ray.amax() > 1e-12 * gscale {
                step = Some((&zb * ray, true));
            } else {
                let p = &zb * newton;
                if p.amax() > 1e-13 * (1.0 + z.amax()) {
                    step = Some((p, false));
                }
            }
        }

        match step {
            None => {
                // stationary on the working set: check multipliers
                let lam = if a_w.nrows() > 0 {
                    linalg::pinv(&a_w.transpose(), 1e-12) * (-&grad)
                } else {
                    DVector::zeros(0)
                };
                let lam_w = lam.rows(m_eq, working.len()).into_owned();
                let mut worst = None;
                let mut worst_val = -settings.dual_tol;
                for (k, &l) in lam_w.iter().enumerate() {
                    if l < worst_val {
                        worst_val = l;
                        worst = Some(k);
                    }
                }
                match worst {
                    None => {
                        return ActiveSetResult {
                            status: QpStatus::Optimal,
                            z,
                            working,
                            lambda_eq: lam.rows(0, m_eq).into_owned(),
                            lambda_w: lam_w,
                            iterations: it,
                        };
                    }
                    Some(k) => {
                        working.remove(k);
                    }
                }
            }
            Some((p, is_ray)) => {
                let mut alpha = if is_ray { f64::INFINITY } else { 1.0 };
                let mut blocking = None;
                for i in 0..a_in.nrows() {
                    if working.contains(&i) {
                        continue;
                    }
                    let ap = a_in.row(i).dot(&p.transpose());
                    if ap > 1e-14 * p.amax().max(1e-300) {
                        let slack = b_in[i] - a_in.row(i).dot(&z.transpose());
                        let ai = (slack / ap).max(0.0);
                        if ai < alpha {
                            alpha = ai;
                            blocking = Some(i);
                        }
                    }
                }
                if alpha.is_infinite() {
                    return ActiveSetResult {
                        status: QpStatus::Unbounded,
                        z,
                        working,
                        lambda_eq: DVector::zeros(m_eq),
                        lambda_w: DVector::zeros(0),
                        iterations: it,
                    };
                }
                z += &p * alpha;
                if let Some(i) = blocking {
                    working.push(i);
                }
            }
        }
    }
    ActiveSetResult {
        status: QpStatus::IterationLimit,
        z,
        working,
        lambda_eq: DVector::zeros(m_eq),
        lambda_w: DVector::zeros(0),
        iterations: settings.max_iter,
    }
}

fn infeasible(n: usize, p: &QpProblem, iterations: usize) -> QpSolution {
    QpSolution {
        status: QpStatus::Infeasible,
        z: DVector::zeros(n),
        lambda_eq: DVector::zeros(p.a_eq.nrows()),
        lambda_in: DVector::zeros(p.a_in.nrows()),
        iterations,
        objective: f64::NAN,
    }
}

/// Find a point satisfying the normalized constraints.
fn phase_one(nz: &Normalized, n: usize, settings: &QpSettings) -> Result<(DVector<f64>, usize), usize> {
    let z0 = if nz.a_eq.nrows() > 0 {
        linalg::pinv(&nz.a_eq, 1e-12) * &nz.b_eq
    } else {
        DVector::zeros(n)
    };
    if nz.a_eq.nrows() > 0 && (&nz.a_eq * &z0 - &nz.b_eq).amax() > settings.feas_tol.max(1e-9) {
        return Err(0);
    }
    let viol = (&nz.a_in * &z0 - &nz.b_in).iter().fold(0.0_f64, |m, &v| m.max(v));
    if viol <= settings.feas_tol {
        return Ok((z0, 0));
    }
    // minimize t subject to A_in z - t <= b_in, t >= 0 over (z, t)
    let m = nz.a_in.nrows();
    let mut a = DMatrix::zeros(m + 1, n + 1);
    a.view_mut((0, 0), (m, n)).copy_from(&nz.a_in);
    a.view_mut((0, n), (m, 1)).fill(-1.0);
    a[(m, n)] = -1.0;
    let mut b = DVector::zeros(m + 1);
    b.rows_mut(0, m).copy_from(&nz.b_in);
    let mut a_eq = DMatrix::zeros(nz.a_eq.nrows(), n + 1);
    a_eq.view_mut((0, 0), (nz.a_eq.nrows(), n)).copy_from(&nz.a_eq);
    let mut g = DVector::zeros(n + 1);
    g[n] = 1.0;
    let mut start = DVector::zeros(n + 1);
    start.rows_mut(0, n).copy_from(&z0);
    start[n] = viol;
    let tol = settings.feas_tol;
    let lp_settings = QpSettings { max_iter: settings.max_iter.max(4 * (n + m)), ..*settings };
    let res = active_set(&DMatrix::zeros(n + 1, n + 1), &g, &a_eq, &a, &b, start, &lp_settings, |w| w[n] <= tol);
    if res.z[n] <= tol {
        let z = res.z.rows(0, n).into_owned();
        let v = (&nz.a_in * &z - &nz.b_in).iter().fold(0.0_f64, |m, &v| m.max(v));
        if v <= 10.0 * tol {
            return Ok((z, res.iterations));
        }
    }
    Err(res.iterations)
}

pub fn solve(p: &QpProblem, settings: &QpSettings) -> QpSolution {
    let n = p.n();
    let Some((a_eq, b_eq, eq_rows)) = normalize(&p.a_eq, &p.b_eq, settings.feas_tol, true) else {
        return infeasible(n, p, 0);
    };
    let Some((a_in, b_in, in_rows)) = normalize(&p.a_in, &p.b_in, settings.feas_tol, false) else {
        return infeasible(n, p, 0);
    };
    let nz = Normalized { a_eq, b_eq, eq_rows, a_in, b_in, in_rows };

    let (z0, it1) = match phase_one(&nz, n, settings) {
        Ok(v) => v,
        Err(it) => return infeasible(n, p, it),
    };
    let res = active_set(&p.h, &p.g, &nz.a_eq, &nz.a_in, &nz.b_in, z0, settings, |_| false);

    // map multipliers back to the caller's row scaling
    let mut lambda_eq = DVector::zeros(p.a_eq.nrows());
    let mut lambda_in = DVector::zeros(p.a_in.nrows());
    if res.status == QpStatus::Optimal {
        for (r, &(i, norm)) in nz.eq_rows.iter().enumerate() {
            lambda_eq[i] = res.lambda_eq[r] / norm;
        }
        for (k, &w) in res.working.iter().enumerate() {
            let (i, norm) = nz.in_rows[w];
            lambda_in[i] = res.lambda_w[k] / norm;
        }
    }
    let objective = p.objective(&res.z);
    QpSolution {
        status: res.status,
        z: res.z,
        lambda_eq,
        lambda_in,
        iterations: it1 + res.iterations,
        objective,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::new(dm(2, 2, &[2.0, 0.0, 0.0, 4.0]), dv(&[-2.0, -4.0]));
        let s = p.solve(&QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((&s.z - dv(&[1.0, 1.0])).amax() < 1e-12);
    }

    #[test]
    fn bound_becomes_active() {
        // min (z - 2)^2 s.t. z <= 1
        let p = QpProblem::new(dm(1, 1, &[2.0]), dv(&[-4.0])).with_inequalities(dm(1, 1, &[1.0]), dv(&[1.0]));
        let s = p.solve(&QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z[0] - 1.0).abs() < 1e-12);
        assert!((s.lambda_in[0] - 2.0).abs() < 1e-10);
        assert!(p.kkt_residual(&s.z, &s.lambda_eq, &s.lambda_in).max() < 1e-10);
    }

    #[test]
    fn linear_program_vertex() {
        // min -x - y s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0  -> (1.6, 1.2)
        let a = dm(4, 2, &[1.0, 2.0, 3.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let p = QpProblem::new(DMatrix::zeros(2, 2), dv(&[-1.0, -1.0])).with_inequalities(a, dv(&[4.0, 6.0, 0.0, 0.0]));
        let s = p.solve(&QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((&s.z - dv(&[1.6, 1.2])).amax() < 1e-10);
        assert!(p.kkt_residual(&s.z, &s.lambda_eq, &s.lambda_in).max() < 1e-10);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let a = dm(2, 1, &[1.0, -1.0]);
        let p = QpProblem::new(dm(1, 1, &[1.0]), dv(&[0.0])).with_inequalities(a, dv(&[-1.0, -1.0]));
        assert_eq!(p.solve(&QpSettings::default()).status, QpStatus::Infeasible);
        let p = QpProblem::new(DMatrix::zeros(1, 1), dv(&[-1.0]));
        assert_eq!(p.solve(&QpSettings::default()).status, QpStatus::Unbounded);
    }

    #[test]
    fn equality_constrained_projection() {
        // min |z|^2 s.t. z1 + z2 + z3 = 3
        let p = QpProblem::new(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3))
            .with_equalities(dm(1, 3, &[1.0, 1.0, 1.0]), dv(&[3.0]));
        let s = p.solve(&QpSettings::default());
        assert!((&s.z - dv(&[1.0, 1.0, 1.0])).amax() < 1e-12);
        assert!(p.kkt_residual(&s.z, &s.lambda_eq, &s.lambda_in).max() < 1e-10);
    }

    #[test]
    fn infeasible_start_needs_phase_one() {
        // min |z|^2 s.t. z1 >= 1, z2 >= 2, z1 + z2 <= 10
        let a = dm(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]);
        let p = QpProblem::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2)).with_inequalities(a, dv(&[-1.0, -2.0, 10.0]));
        let s = p.solve(&QpSettings::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((&s.z - dv(&[1.0, 2.0])).amax() < 1e-10);
    }
}
