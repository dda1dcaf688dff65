//! Value iteration over the output grid. Rewards favor regions holding many
//! feasible samples; transitions spread along each region's principal direction.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frs::OutputGrid;

/// Moves in action-index order: E, NE, N, NW, W, SW, S, SE as `(d_col, d_row)`.
pub const ACTIONS: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub gamma: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub k_f: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { gamma: 0.95, eta1: 10.0, eta2: 100.0, eta3: 1.0, k_f: 10.0, tol: 1e-9, max_sweeps: 10_000 }
    }
}

impl DpConfig {
    pub fn scaled(&self, c: f64) -> Self {
        Self { eta1: c * self.eta1, eta2: c * self.eta2, eta3: c * self.eta3, k_f: c * self.k_f, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePath {
    pub nodes: Vec<usize>,
    pub regions: Vec<[f64; 2]>,
    pub n_dp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub sweeps: usize,
    /// Sup-norm change of each sweep.
    pub deltas: Vec<f64>,
}

pub fn reward(config: &DpConfig, frs: f64, is_goal: bool) -> f64 {
    if frs == 0.0 {
        -config.eta1
    } else if is_goal {
        config.eta2 + config.k_f * frs
    } else {
        -config.eta3 + config.k_f * frs
    }
}

fn unit(d: (i64, i64)) -> [f64; 2] {
    let n = ((d.0 * d.0 + d.1 * d.1) as f64).sqrt();
    [d.0 as f64 / n, d.1 as f64 / n]
}

fn neighbor(grid: &OutputGrid, s: usize, d: (i64, i64)) -> Option<usize> {
    let spec = &grid.spec;
    let (r, c) = spec.row_col(s);
    let (r2, c2) = (r as i64 + d.1, c as i64 + d.0);
    if r2 < 0 || c2 < 0 || r2 >= spec.rows as i64 || c2 >= spec.cols as i64 {
        None
    } else {
        Some(spec.index(r2 as usize, c2 as usize))
    }
}

/// Distribution over next regions for action `a` at `s`, or `None` when the
/// action is masked (it leaves the grid or targets a region without samples).
pub fn transition(grid: &OutputGrid, s: usize, a: usize) -> Option<Vec<(usize, f64)>> {
    let intended = neighbor(grid, s, ACTIONS[a])?;
    if grid.regions[intended].frs == 0.0 {
        return None;
    }
    let Some(p) = grid.regions[s].psv else {
        return Some(vec![(intended, 1.0)]);
    };
    let pa = unit(ACTIONS[a]);
    let sign = if p[0] * pa[0] + p[1] * pa[1] >= 0.0 { 1.0 } else { -1.0 };
    let sp = [sign * p[0], sign * p[1]];
    let mut weights = Vec::new();
    let mut total = 0.0;
    for &d in &ACTIONS {
        if let Some(n) = neighbor(grid, s, d) {
            if grid.regions[n].frs == 0.0 {
                continue;
            }
            let u = unit(d);
            let w = (sp[0] * u[0] + sp[1] * u[1]).max(0.0);
            if w > 0.0 {
                weights.push((n, w));
                total += w;
            }
        }
    }
    if total <= 0.0 {
        return Some(vec![(intended, 1.0)]);
    }
    Some(weights.into_iter().map(|(n, w)| (n, w / total)).collect())
}

fn q_value(grid: &OutputGrid, config: &DpConfig, values: &[f64], s: usize, a: usize, r: f64) -> Option<f64> {
    let t = transition(grid, s, a)?;
    Some(r + config.gamma * t.iter().map(|&(n, p)| p * values[n]).sum::<f64>())
}

/// Jacobi value iteration; the goal region is absorbing with value equal to its reward.
pub fn value_iteration(grid: &OutputGrid, config: &DpConfig, goal: usize) -> Result<ValueFunction> {
    let n = grid.n_regions();
    let rewards: Vec<f64> = (0..n).map(|s| reward(config, grid.regions[s].frs, s == goal)).collect();
    let transitions: Vec<Vec<Option<Vec<(usize, f64)>>>> =
        (0..n).map(|s| (0..ACTIONS.len()).map(|a| transition(grid, s, a)).collect()).collect();
    let mut values = rewards.clone();
    let mut deltas = Vec::new();
    for sweep in 1..=config.max_sweeps {
        let next: Vec<f64> = (0..n)
            .map(|s| {
                if s == goal {
                    return rewards[s];
                }
                transitions[s]
                    .iter()
                    .flatten()
                    .map(|t| rewards[s] + config.gamma * t.iter().map(|&(m, p)| p * values[m]).sum::<f64>())
                    .fold(None, |best: Option<f64>, q| Some(best.map_or(q, |b| b.max(q))))
                    .unwrap_or(rewards[s])
            })
            .collect();
        let delta = next.iter().zip(&values).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        values = next;
        deltas.push(delta);
        if delta <= config.tol {
            return Ok(ValueFunction { values, sweeps: sweep, deltas });
        }
    }
    Err(Error::ValueIterationDiverged(config.max_sweeps))
}

/// Regions reachable from `start` through unmasked moves, skipping `blocked`.
fn reachable(grid: &OutputGrid, start: usize, blocked: &[bool]) -> Vec<bool> {
    let mut seen = vec![false; grid.n_regions()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(s) = queue.pop_front() {
        for a in 0..ACTIONS.len() {
            if let Some(n) = neighbor(grid, s, ACTIONS[a]) {
                if !seen[n] && !blocked[n] && grid.regions[n].frs > 0.0 {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    seen
}

/// Most likely successor of `(s, a)`, preferring the intended neighbor on ties.
fn mode(grid: &OutputGrid, s: usize, a: usize) -> Option<usize> {
    let t = transition(grid, s, a)?;
    let intended = neighbor(grid, s, ACTIONS[a])?;
    let best = t.iter().map(|&(_, p)| p).fold(0.0_f64, f64::max);
    if t.iter().any(|&(n, p)| n == intended && p >= best) {
        return Some(intended);
    }
    t.iter().find(|&&(_, p)| p >= best).map(|&(n, _)| n)
}

/// Greedy rollout of the converged values from `start` to `goal`.
pub fn extract_path(grid: &OutputGrid, config: &DpConfig, vf: &ValueFunction, start: usize, goal: usize) -> Result<NodePath> {
    let n = grid.n_regions();
    let no_path = Error::NoPath { start, goal };
    if grid.regions[start].frs == 0.0 || grid.regions[goal].frs == 0.0 {
        return Err(no_path);
    }
    if !reachable(grid, start, &vec![false; n])[goal] {
        return Err(no_path);
    }
    let mut visited = vec![false; n];
    let mut nodes = vec![start];
    visited[start] = true;
    let mut s = start;
    while s != goal {
        let r = reward(config, grid.regions[s].frs, false);
        let mut ranked: Vec<(usize, f64)> = (0..ACTIONS.len())
            .filter_map(|a| q_value(grid, config, &vf.values, s, a, r).map(|q| (a, q)))
            .collect();
        // stable sort keeps the smaller action index first on ties
        ranked.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal));
        let next = ranked.iter().filter_map(|&(a, _)| mode(grid, s, a)).find(|&m| {
            !visited[m] && (m == goal || reachable(grid, m, &visited)[goal])
        });
        match next {
            Some(m) => {
                visited[m] = true;
                nodes.push(m);
                s = m;
            }
            None => return Err(no_path),
        }
        if nodes.len() > n {
            return Err(no_path);
        }
    }
    Ok(NodePath {
        regions: nodes.iter().map(|&m| grid.centers[m]).collect(),
        n_dp: nodes.len(),
        nodes,
    })
}

/// Value iteration followed by the greedy rollout.
pub fn plan(grid: &OutputGrid, config: &DpConfig, start: usize, goal: usize) -> Result<(NodePath, ValueFunction)> {
    let vf = value_iteration(grid, config, goal)?;
    let path = extract_path(grid, config, &vf, start, goal)?;
    Ok((path, vf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frs::{GridSpec, RegionStats};

    pub(crate) fn grid_from(rows: usize, cols: usize, frs: &[f64], psv: &[Option<[f64; 2]>]) -> OutputGrid {
        let spec = GridSpec { center: [0.0, 0.0], side: 1.0, rows, cols };
        OutputGrid {
            spec,
            centers: (0..rows * cols).map(|m| spec.region_center(m)).collect(),
            half_width: 0.5 / cols as f64,
            n_samples: 100,
            regions: frs
                .iter()
                .zip(psv)
                .map(|(&f, &p)| RegionStats { count: (f * 100.0) as usize, frs: f, psv: p, singular_values: [0.0, 0.0] })
                .collect(),
        }
    }

    #[test]
    fn reward_cases() {
        let c = DpConfig::default();
        assert_eq!(reward(&c, 0.0, false), -10.0);
        assert_eq!(reward(&c, 0.0, true), -10.0);
        assert!((reward(&c, 0.3, true) - 103.0).abs() < 1e-12);
        assert!((reward(&c, 0.3, false) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_psv_is_deterministic() {
        let g = grid_from(3, 3, &[0.1; 9], &[None; 9]);
        assert_eq!(transition(&g, 4, 0), Some(vec![(5, 1.0)]));
        assert_eq!(transition(&g, 5, 0), None);
    }

    #[test]
    fn axis_psv_concentrates_on_east() {
        // only the four axis neighbors of the center hold samples
        let frs = [0.0, 0.2, 0.0, 0.2, 0.2, 0.2, 0.0, 0.2, 0.0];
        let mut psv = [None; 9];
        psv[4] = Some([1.0, 0.0]);
        let g = grid_from(3, 3, &frs, &psv);
        assert_eq!(transition(&g, 4, 0), Some(vec![(5, 1.0)]));
        // the folded sign makes west symmetric
        assert_eq!(transition(&g, 4, 4), Some(vec![(3, 1.0)]));
    }

    #[test]
    fn two_cell_path() {
        let g = grid_from(1, 2, &[0.5, 0.5], &[None, None]);
        let (path, _) = plan(&g, &DpConfig::default(), 0, 1).unwrap();
        assert_eq!(path.nodes, vec![0, 1]);
    }

    #[test]
    fn unreachable_goal_reports_no_path() {
        let g = grid_from(1, 3, &[0.5, 0.0, 0.5], &[None; 3]);
        assert!(matches!(plan(&g, &DpConfig::default(), 0, 2), Err(Error::NoPath { .. })));
    }
}
