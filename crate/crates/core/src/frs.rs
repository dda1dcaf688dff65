//! Output-space grid with per-region fraction of reachable samples and
//! principal directions of the sample clouds.

use nalgebra::{Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this ratio of covariance singular values a region counts as isotropic.
pub const ISOTROPY_RATIO: f64 = 1.5;

/// Consecutive empty batches tolerated while growing the sample set.
pub const MAX_EMPTY_BATCHES: usize = 3;

/// Axis-aligned box split into `rows x cols` equal cells. Region `m = row * cols + col`,
/// rows counting up in `y`, columns in `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub center: [f64; 2],
    pub side: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn n_regions(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell_size(&self) -> [f64; 2] {
        [self.side / self.cols as f64, self.side / self.rows as f64]
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.center[0] - 0.5 * self.side, self.center[1] - 0.5 * self.side]
    }

    pub fn region_center(&self, m: usize) -> [f64; 2] {
        let (row, col) = (m / self.cols, m % self.cols);
        let [w, h] = self.cell_size();
        let lo = self.lower();
        [lo[0] + (col as f64 + 0.5) * w, lo[1] + (row as f64 + 0.5) * h]
    }

    pub fn row_col(&self, m: usize) -> (usize, usize) {
        (m / self.cols, m % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    fn strictly_inside(&self, m: usize, y: [f64; 2]) -> bool {
        let c = self.region_center(m);
        let [w, h] = self.cell_size();
        (y[0] - c[0]).abs() < 0.5 * w && (y[1] - c[1]).abs() < 0.5 * h
    }

    /// Region whose open interior contains `y`; points on shared edges or
    /// outside the box belong to none.
    pub fn locate(&self, y: [f64; 2]) -> Option<usize> {
        let lo = self.lower();
        let [w, h] = self.cell_size();
        let tc = ((y[0] - lo[0]) / w).floor();
        let tr = ((y[1] - lo[1]) / h).floor();
        if !tc.is_finite() || !tr.is_finite() {
            return None;
        }
        // the floor can land one cell off near an edge; settle it with the center test
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (r, c) = (tr as i64 + dr, tc as i64 + dc);
                if r < 0 || c < 0 || r >= self.rows as i64 || c >= self.cols as i64 {
                    continue;
                }
                let m = self.index(r as usize, c as usize);
                if self.strictly_inside(m, y) {
                    return Some(m);
                }
            }
        }
        None
    }

    pub fn contains(&self, y: [f64; 2]) -> bool {
        let lo = self.lower();
        y[0] >= lo[0] && y[0] <= lo[0] + self.side && y[1] >= lo[1] && y[1] <= lo[1] + self.side
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub count: usize,
    pub frs: f64,
    pub psv: Option<[f64; 2]>,
    pub singular_values: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputGrid {
    pub spec: GridSpec,
    pub centers: Vec<[f64; 2]>,
    pub half_width: f64,
    /// `card(X_R)`, including samples that fell on no region.
    pub n_samples: usize,
    pub regions: Vec<RegionStats>,
}

impl OutputGrid {
    pub fn frs_values(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.frs).collect()
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }
}

/// Covariance eigen-structure of a 2-D cloud: the leading direction (canonical
/// sign) and the singular values, or `None` for the direction when fewer than two
/// points are given or the cloud is too isotropic.
pub fn principal_direction(points: &[[f64; 2]]) -> (Option<[f64; 2]>, [f64; 2]) {
    let n = points.len();
    if n < 2 {
        return (None, [0.0, 0.0]);
    }
    let nf = n as f64;
    let mean = points.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / nf, a[1] + p[1] / nf]);
    let mut cov = Matrix2::<f64>::zeros();
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        cov[(0, 0)] += d[0] * d[0] / nf;
        cov[(0, 1)] += d[0] * d[1] / nf;
        cov[(1, 1)] += d[1] * d[1] / nf;
    }
    cov[(1, 0)] = cov[(0, 1)];
    let eig = SymmetricEigen::new(cov);
    let (i_max, i_min) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let s_max = eig.eigenvalues[i_max].max(0.0);
    let s_min = eig.eigenvalues[i_min].max(0.0);
    let sv = [s_max, s_min];
    if s_max <= 0.0 || s_max < ISOTROPY_RATIO * s_min {
        return (None, sv);
    }
    let v = eig.eigenvectors.column(i_max);
    let norm = v.norm();
    let mut d = [v[0] / norm, v[1] / norm];
    let first = if d[0] != 0.0 { d[0] } else { d[1] };
    if first < 0.0 {
        d = [-d[0], -d[1]];
    }
    (Some(d), sv)
}

/// Bin outputs of the feasible set into the grid and compute per-region statistics.
pub fn assign(spec: &GridSpec, outputs: &[[f64; 2]]) -> Result<OutputGrid> {
    if outputs.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut members: Vec<Vec<[f64; 2]>> = vec![Vec::new(); spec.n_regions()];
    for &y in outputs {
        if let Some(m) = spec.locate(y) {
            members[m].push(y);
        }
    }
    let ns = outputs.len() as f64;
    let regions = members
        .iter()
        .map(|pts| {
            let (psv, sv) = principal_direction(pts);
            RegionStats { count: pts.len(), frs: pts.len() as f64 / ns, psv, singular_values: sv }
        })
        .collect();
    Ok(OutputGrid {
        spec: *spec,
        centers: (0..spec.n_regions()).map(|m| spec.region_center(m)).collect(),
        half_width: 0.5 * spec.cell_size()[0],
        n_samples: outputs.len(),
        regions,
    })
}

/// `N_m / N_s` for region `m`.
pub fn frs(grid: &OutputGrid, m: usize) -> Result<f64> {
    if grid.n_samples == 0 {
        return Err(Error::EmptySampleSet);
    }
    Ok(grid.regions[m].count as f64 / grid.n_samples as f64)
}

pub fn psv(grid: &OutputGrid, m: usize) -> Option<[f64; 2]> {
    grid.regions[m].psv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub n_s: usize,
    pub frs: Vec<f64>,
    /// Largest `|gradient|` over regions relative to the previous entry (0 for the first).
    pub max_gradient: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrsTrace {
    pub entries: Vec<TraceEntry>,
}

impl FrsTrace {
    fn entry(&self, n_s: usize) -> Result<&TraceEntry> {
        self.entries.iter().find(|e| e.n_s == n_s).ok_or(Error::MissingTraceEntry(n_s))
    }

    pub fn push(&mut self, n_s: usize, frs: Vec<f64>) {
        let max_gradient = match self.entries.last() {
            Some(prev) => {
                let dn = (n_s - prev.n_s) as f64;
                prev.frs.iter().zip(&frs).fold(0.0_f64, |m, (a, b)| m.max((b - a).abs() / dn))
            }
            None => 0.0,
        };
        self.entries.push(TraceEntry { n_s, frs, max_gradient });
    }
}

/// `(F_m at N_s + dn  -  F_m at N_s) / dn`.
pub fn gradient(trace: &FrsTrace, m: usize, n_s: usize, dn: usize) -> Result<f64> {
    let a = trace.entry(n_s)?;
    let b = trace.entry(n_s + dn)?;
    Ok((b.frs[m] - a.frs[m]) / dn as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowConfig {
    pub delta_n: usize,
    pub eps_g: f64,
    /// Convergence is not declared before this many feasible samples.
    pub min_samples: usize,
    /// Hard cap; reaching it stops growth without convergence.
    pub max_samples: usize,
}

#[derive(Debug, Clone)]
pub struct Growth<T> {
    pub grid: OutputGrid,
    pub trace: FrsTrace,
    /// Feasible samples used for the final grid, in arrival order.
    pub samples: Vec<T>,
    pub converged: bool,
}

/// Add feasible samples `delta_n` at a time until the largest FRS gradient drops to `eps_g`.
///
/// `pool` holds samples already available; `next_batch` produces more on demand and may
/// return any number of feasible samples. Surplus beyond a full batch is kept for the next one.
pub fn grow_until_converged<T, O, B>(
    spec: &GridSpec,
    config: &GrowConfig,
    pool: Vec<T>,
    output: O,
    mut next_batch: B,
) -> Result<Growth<T>>
where
    O: Fn(&T) -> [f64; 2],
    B: FnMut(usize) -> Result<Vec<T>>,
{
    if !(config.eps_g > 0.0) || config.delta_n == 0 {
        return Err(Error::InvalidConfig("eps_g and delta_n must be positive".into()));
    }
    let mut samples: Vec<T> = Vec::new();
    let mut outputs: Vec<[f64; 2]> = Vec::new();
    let mut buffer: std::collections::VecDeque<T> = pool.into();
    let mut trace = FrsTrace::default();
    let mut calls = 0;
    let mut empty_streak = 0;
    loop {
        while buffer.len() < config.delta_n && samples.len() + buffer.len() < config.max_samples {
            let batch = next_batch(calls)?;
            calls += 1;
            if batch.is_empty() {
                empty_streak += 1;
                if empty_streak >= MAX_EMPTY_BATCHES {
                    return Err(Error::SamplerStalled(empty_streak));
                }
            } else {
                empty_streak = 0;
            }
            buffer.extend(batch);
        }
        let take = config.delta_n.min(buffer.len()).min(config.max_samples - samples.len());
        if take == 0 {
            break;
        }
        for t in buffer.drain(..take) {
            outputs.push(output(&t));
            samples.push(t);
        }
        let grid = assign(spec, &outputs)?;
        trace.push(samples.len(), grid.frs_values());
        let last = trace.entries.last().expect("just pushed");
        let converged = trace.entries.len() >= 2 && last.max_gradient <= config.eps_g && samples.len() >= config.min_samples;
        if converged {
            return Ok(Growth { grid, trace, samples, converged: true });
        }
        if samples.len() >= config.max_samples {
            break;
        }
    }
    if outputs.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let grid = assign(spec, &outputs)?;
    Ok(Growth { grid, trace, samples, converged: false })
}
