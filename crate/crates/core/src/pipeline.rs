//! Stage runner behind the `plan` binary.
//!
//! Each stage reads the artifacts of the stages before it from the output
//! directory, writes its own files and a `manifest_<stage>.json`. Numeric
//! CSVs carry a header row and print floats as `{:.15e}`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Scale};
use crate::contact_qp::{self, FeasibilityResult};
use crate::dp::{self, NodePath};
use crate::error::{Error, Result};
use crate::frs::{self, GrowConfig, OutputGrid};
use crate::model::{ContactWrench, StateSample};
use crate::qp::QpStatus;
use crate::reach;
use crate::sampler::{self, SampleSet};
use crate::trajopt::{self, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sample,
    Frs,
    Dp,
    Reach,
    Plan,
    All,
}

impl Stage {
    pub const CHAIN: [Stage; 5] = [Stage::Sample, Stage::Frs, Stage::Dp, Stage::Reach, Stage::Plan];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Frs => "frs",
            Stage::Dp => "dp",
            Stage::Reach => "reach",
            Stage::Plan => "plan",
            Stage::All => "all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Stage::Sample, Stage::Frs, Stage::Dp, Stage::Reach, Stage::Plan, Stage::All]
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage {s:?}")))
    }
}

/// Process exit status for a failed run: 2 when an input artifact is missing, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MissingArtifact(_) => 2,
        _ => 1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub seed: u64,
    pub scale: Scale,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub counts: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

/// Float format used in every CSV.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.15e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn require(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::MissingArtifact(p.display().to_string()))
    }
}

fn read_json<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let text = fs::read_to_string(require(dir, name)?)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{name}: {e}")))
}

/// Numeric rows of a CSV written by this module, header dropped.
fn read_csv(dir: &Path, name: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(require(dir, name)?).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|s| if s.is_empty() { Ok(f64::NAN) } else { s.parse::<f64>() })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("{name}: {e}")))?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

fn state_header(n: usize) -> Vec<String> {
    indexed("q", n).chain(indexed("qd", n)).collect()
}

fn state_fields(x: &StateSample) -> impl Iterator<Item = String> + '_ {
    x.q.iter().chain(x.qd.iter()).map(|&v| fmt_f64(v))
}

const WRENCH_HEADER: [&str; 3] = ["fc_x", "fc_y", "tau_z"];

fn wrench_fields(f: &ContactWrench) -> [String; 3] {
    [fmt_f64(f.fx), fmt_f64(f.fy), fmt_f64(f.tz)]
}

/// Feasible samples as stored by the sample stage.
pub fn read_feasible(dir: &Path, n_q: usize) -> Result<Vec<StateSample>> {
    let (header, rows) = read_csv(dir, "feasible.csv")?;
    if header.len() < 2 * n_q {
        return Err(Error::Parse("feasible.csv has too few columns".into()));
    }
    Ok(rows
        .iter()
        .map(|r| StateSample::new(DVector::from_column_slice(&r[..n_q]), DVector::from_column_slice(&r[n_q..2 * n_q])))
        .collect())
}

/// Trajectory rows `(k, t, q.., qd.., u.., fc..)`; the last row has no input.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let n = traj.states.first().map_or(0, |x| x.q.len());
    let header: Vec<String> = ["k".to_string(), "t".to_string()]
        .into_iter()
        .chain(state_header(n))
        .chain(indexed("u", n))
        .chain(WRENCH_HEADER.iter().map(|s| s.to_string()))
        .collect();
    let rows = traj.states.iter().enumerate().map(|(k, x)| {
        let mut row = vec![k.to_string(), fmt_f64(k as f64 * traj.dt)];
        row.extend(state_fields(x));
        match (traj.inputs.get(k), traj.wrenches.get(k)) {
            (Some(u), Some(f)) => {
                row.extend(u.iter().map(|&v| fmt_f64(v)));
                row.extend(wrench_fields(f));
            }
            _ => row.extend(std::iter::repeat(String::new()).take(n + 3)),
        }
        row
    });
    write_csv(path, &header, rows)
}

fn manifest(config: &PipelineConfig, scale: Scale, stage: Stage, started: Instant, counts: &[(&str, f64)], artifacts: &[&str]) -> Manifest {
    Manifest {
        stage,
        seed: config.seed,
        scale,
        config_hash: config.hash(),
        wall_time_s: started.elapsed().as_secs_f64(),
        counts: counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
    }
}

/// Draw, repair and QP-filter the configured number of samples.
fn stage_sample(config: &PipelineConfig, scale: Scale, out: &Path) -> Result<Manifest> {
    let t0 = Instant::now();
    let model = &config.robot;
    let reg = config.registry()?;
    let sc = config.sampler_config()?;
    let set = sampler::build_sample_set(&reg, &sc, config.sampler.n_samples);
    let header = state_header(model.n_q);
    write_csv(&out.join("samples.csv"), &header, set.states.iter().map(|x| state_fields(x).collect()))?;
    write_json(&out.join("samples.json"), &SampleCounters::of(&set))?;

    let feasible = contact_qp::filter(model, &reg, &set, &config.w_c()?, config.contact_qp.dt);
    let fheader: Vec<String> = header
        .iter()
        .cloned()
        .chain(indexed("u_opt", model.n_q))
        .chain(WRENCH_HEADER.iter().map(|s| format!("{s}_opt")))
        .chain(["objective".to_string()])
        .collect();
    let rows = feasible.states.iter().zip(&feasible.annotations).map(|(x, a): (&StateSample, &FeasibilityResult)| {
        let mut row: Vec<String> = state_fields(x).collect();
        row.extend(a.u_opt.iter().map(|&v| fmt_f64(v)));
        row.extend(wrench_fields(&a.fc_opt));
        row.push(fmt_f64(a.objective));
        row
    });
    write_csv(&out.join("feasible.csv"), &fheader, rows)?;
    write_json(&out.join("feasible.json"), &SampleCounters::of(&feasible))?;
    let optimal = feasible.annotations.iter().filter(|a| a.status == QpStatus::Optimal).count();
    Ok(manifest(
        config,
        scale,
        Stage::Sample,
        t0,
        &[
            ("drawn", set.drawn as f64),
            ("repaired", set.repaired as f64),
            ("discarded", set.discarded as f64),
            ("feasible", feasible.len() as f64),
            ("qp_optimal", optimal as f64),
        ],
        &["samples.csv", "samples.json", "feasible.csv", "feasible.json"],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCounters {
    pub seed: u64,
    pub drawn: usize,
    pub repaired: usize,
    pub discarded: usize,
    pub rows: usize,
}

impl SampleCounters {
    fn of(set: &SampleSet) -> Self {
        Self { seed: set.seed, drawn: set.drawn, repaired: set.repaired, discarded: set.discarded, rows: set.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrsSummary {
    pub converged: bool,
    pub n_samples: usize,
    /// Feasible samples taken from the sample stage before any new draws.
    pub pool: usize,
    pub extra_draws: usize,
}

/// Feed the stored feasible samples (then fresh draws, up to the cap) into the
/// convergence loop and write the final grid.
fn stage_frs(config: &PipelineConfig, scale: Scale, out: &Path) -> Result<Manifest> {
    let t0 = Instant::now();
    let model = &config.robot;
    let pool = read_feasible(out, model.n_q)?;
    let counters: SampleCounters = read_json(out, "samples.json")?;
    let reg = config.registry()?;
    let sc = config.sampler_config()?;
    let w_c = config.w_c()?;
    let n_pool = pool.len();
    // the whole pool is always used; a cap above it allows more draws
    let grow = GrowConfig {
        min_samples: config.growth.min_samples.max(n_pool),
        max_samples: config.growth.max_samples.max(n_pool),
        ..config.growth
    };
    let mut extra_draws = 0usize;
    let growth = frs::grow_until_converged(&config.grid, &grow, pool, |x: &StateSample| model.output_map(x), |call| {
        let start = (counters.drawn + call * grow.delta_n) as u64;
        extra_draws += grow.delta_n;
        let set = sampler::build_sample_range(&reg, &sc, start, grow.delta_n);
        Ok(contact_qp::filter(model, &reg, &set, &w_c, config.contact_qp.dt).states)
    })?;
    let grid = &growth.grid;
    write_json(&out.join("grid.json"), grid)?;
    let header: Vec<String> =
        ["m", "center_x", "center_y", "count", "frs", "psv_x", "psv_y"].iter().map(|s| s.to_string()).collect();
    let rows = grid.regions.iter().enumerate().map(|(m, r)| {
        let c = grid.centers[m];
        let (px, py) = r.psv.map_or((String::new(), String::new()), |p| (fmt_f64(p[0]), fmt_f64(p[1])));
        vec![m.to_string(), fmt_f64(c[0]), fmt_f64(c[1]), r.count.to_string(), fmt_f64(r.frs), px, py]
    });
    write_csv(&out.join("frs.csv"), &header, rows)?;
    let theader = vec!["n_s".to_string(), "max_gradient".to_string()];
    let trows = growth.trace.entries.iter().map(|e| vec![e.n_s.to_string(), fmt_f64(e.max_gradient)]);
    write_csv(&out.join("trace.csv"), &theader, trows)?;
    write_json(&out.join("trace.json"), &growth.trace)?;
    let summary = FrsSummary { converged: growth.converged, n_samples: growth.samples.len(), pool: n_pool, extra_draws };
    write_json(&out.join("frs.json"), &summary)?;
    let nonzero = grid.regions.iter().filter(|r| r.count > 0).count();
    Ok(manifest(
        config,
        scale,
        Stage::Frs,
        t0,
        &[
            ("n_samples", summary.n_samples as f64),
            ("pool", n_pool as f64),
            ("extra_draws", extra_draws as f64),
            ("trace_entries", growth.trace.entries.len() as f64),
            ("converged", growth.converged as u8 as f64),
            ("regions_nonzero", nonzero as f64),
        ],
        &["grid.json", "frs.csv", "trace.csv", "trace.json", "frs.json"],
    ))
}

fn stage_dp(config: &PipelineConfig, scale: Scale, out: &Path) -> Result<Manifest> {
    let t0 = Instant::now();
    let grid: OutputGrid = read_json(out, "grid.json")?;
    let y0 = config.robot.output_map(&config.x0()?);
    let start = grid.spec.locate(y0).ok_or(Error::OutsideGrid(y0))?;
    let goal = grid.spec.locate(config.goal).ok_or(Error::OutsideGrid(config.goal))?;
    let (path, vf) = dp::plan(&grid, &config.dp, start, goal)?;
    write_json(&out.join("path.json"), &path)?;
    let header: Vec<String> = ["m", "center_x", "center_y", "value"].iter().map(|s| s.to_string()).collect();
    let rows = vf
        .values
        .iter()
        .enumerate()
        .map(|(m, v)| vec![m.to_string(), fmt_f64(grid.centers[m][0]), fmt_f64(grid.centers[m][1]), fmt_f64(*v)]);
    write_csv(&out.join("values.csv"), &header, rows)?;
    Ok(manifest(
        config,
        scale,
        Stage::Dp,
        t0,
        &[("start", start as f64), ("goal", goal as f64), ("n_dp", path.n_dp as f64), ("sweeps", vf.sweeps as f64)],
        &["path.json", "values.csv"],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetContainment {
    pub target: [f64; 2],
    /// First step whose cumulative hull contains the target.
    pub first_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachSummary {
    pub dt: f64,
    pub steps: usize,
    pub stats: Vec<reach::StepStats>,
    pub targets: Vec<TargetContainment>,
}

/// Reachable set from the initial state over the configured horizon cap.
fn stage_reach(config: &PipelineConfig, scale: Scale, out: &Path) -> Result<Manifest> {
    let t0 = Instant::now();
    let path: NodePath = read_json(out, "path.json")?;
    let model = &config.robot;
    let reg = config.registry()?;
    let rc = config.reach_config()?;
    let set = reach::propagate(model, &reg, &rc, &config.x0()?, rc.t_max)?;
    let n = model.n_q;
    let mut step_of = vec![0usize; set.nodes.len()];
    for (k, r) in set.steps.iter().enumerate() {
        step_of[r.clone()].fill(k);
    }
    let header: Vec<String> = ["k".to_string(), "node".to_string(), "parent".to_string()]
        .into_iter()
        .chain(state_header(n))
        .chain(["y1".to_string(), "y2".to_string()])
        .collect();
    let rows = set.nodes.iter().enumerate().map(|(i, node)| {
        let mut row = vec![step_of[i].to_string(), i.to_string(), node.parent.map_or(String::new(), |p| p.to_string())];
        row.extend(state_fields(&node.state));
        row.extend([fmt_f64(node.output[0]), fmt_f64(node.output[1])]);
        row
    });
    write_csv(&out.join("reach_nodes.csv"), &header, rows)?;
    let hheader: Vec<String> = ["k", "vertex", "x", "y"].iter().map(|s| s.to_string()).collect();
    let hrows = set.hulls.iter().enumerate().flat_map(|(k, h)| {
        h.ring().into_iter().enumerate().map(move |(v, p)| vec![k.to_string(), v.to_string(), fmt_f64(p[0]), fmt_f64(p[1])])
    });
    write_csv(&out.join("reach_hulls.csv"), &hheader, hrows)?;
    let targets: Vec<TargetContainment> = trajopt::segment_targets(&path, config.goal)
        .into_iter()
        .map(|t| TargetContainment { target: t, first_step: (1..=set.n_steps()).find(|&k| set.contains(k, t)) })
        .collect();
    let first = targets.first().and_then(|t| t.first_step);
    let summary = ReachSummary { dt: set.dt, steps: set.n_steps(), stats: set.stats.clone(), targets };
    write_json(&out.join("reach.json"), &summary)?;
    Ok(manifest(
        config,
        scale,
        Stage::Reach,
        t0,
        &[
            ("steps", set.n_steps() as f64),
            ("nodes", set.nodes.len() as f64),
            ("first_target_step", first.map_or(-1.0, |k| k as f64)),
        ],
        &["reach_nodes.csv", "reach_hulls.csv", "reach.json"],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub goal: [f64; 2],
    pub final_output: [f64; 2],
    pub terminal_error: f64,
    pub dynamics_defect: f64,
    pub constraint_violation: f64,
    pub contact_drift: f64,
    pub max_push: f64,
    pub skipped: Vec<usize>,
    pub segments: Vec<trajopt::SegmentRecord>,
}

fn stage_plan(config: &PipelineConfig, scale: Scale, out: &Path) -> Result<Manifest> {
    let t0 = Instant::now();
    let path: NodePath = read_json(out, "path.json")?;
    let model = &config.robot;
    let reg = config.registry()?;
    let plan = match trajopt::plan_end_to_end(model, &reg, &config.plan_config()?, &config.x0()?, &path, config.goal) {
        Ok(p) => p,
        Err(e) => {
            if let Error::SegmentFailed { partial, .. } = &e {
                write_trajectory(&out.join("trajectory_partial.csv"), partial)?;
            }
            return Err(e);
        }
    };
    let traj = &plan.trajectory;
    write_trajectory(&out.join("trajectory.csv"), traj)?;
    let y = traj.final_output();
    let summary = PlanSummary {
        goal: config.goal,
        final_output: y,
        terminal_error: ((y[0] - config.goal[0]).powi(2) + (y[1] - config.goal[1]).powi(2)).sqrt(),
        dynamics_defect: traj.dynamics_defect(model)?,
        constraint_violation: traj.constraint_violation(model, &reg),
        contact_drift: traj.contact_drift(&reg),
        max_push: traj.max_push(),
        skipped: plan.skipped.clone(),
        segments: plan.segments.clone(),
    };
    write_json(&out.join("plan.json"), &summary)?;
    Ok(manifest(
        config,
        scale,
        Stage::Plan,
        t0,
        &[
            ("segments", plan.segments.len() as f64),
            ("skipped", plan.skipped.len() as f64),
            ("steps", traj.n_steps() as f64),
            ("terminal_error", summary.terminal_error),
        ],
        &["trajectory.csv", "plan.json"],
    ))
}

/// Run one stage (or the whole chain) and write its manifest(s) into `out`.
pub fn run(config: &PipelineConfig, scale: Scale, stage: Stage, out: &Path) -> Result<Vec<Manifest>> {
    fs::create_dir_all(out)?;
    let stages: Vec<Stage> = match stage {
        Stage::All => Stage::CHAIN.to_vec(),
        s => vec![s],
    };
    let mut manifests = Vec::new();
    for s in stages {
        let m = match s {
            Stage::Sample => stage_sample(config, scale, out)?,
            Stage::Frs => stage_frs(config, scale, out)?,
            Stage::Dp => stage_dp(config, scale, out)?,
            Stage::Reach => stage_reach(config, scale, out)?,
            Stage::Plan => stage_plan(config, scale, out)?,
            Stage::All => unreachable!("expanded above"),
        };
        write_json(&out.join(format!("manifest_{s}.json")), &m)?;
        manifests.push(m);
    }
    Ok(manifests)
}
