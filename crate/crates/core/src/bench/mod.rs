//! Benchmarks: the 2D Riemann suite, the gain of the corrected solver over
//! the baseline at equal resolution, mesh convergence and error against
//! wall time.

use std::sync::OnceLock;

use crate::bc::{BackPressure, BoundaryData};
use crate::error::{Error, Result};
use crate::euler::{prim_admissible, Cons, GasModel, Prim};
use crate::mesh::{project_fine_to_coarse, Mesh, ParentMap};
use crate::mlcorr::Network;
use crate::solver::{compute_dt, Solver, StepConfig};
use crate::train::dataset::substeps;

mod study;

pub use study::{fit_slope, mesh_size, timing_csv, ConvergenceReport, ConvergenceRow, Model, Study, TimingRow};

const CASE_FILE: &str = include_str!("../../data/riemann_cases.csv");

/// Four constant states on `[0,1]²` separated by `x = 0.5` and `y = 0.5`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiemannCase {
    pub id: usize,
    /// Quadrant 1 upper-right, 2 upper-left, 3 lower-left, 4 lower-right.
    pub states: [Prim; 4],
    pub final_time: f64,
}

impl RiemannCase {
    pub fn quadrant(x: [f64; 2]) -> usize {
        match (x[0] >= 0.5, x[1] >= 0.5) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> Prim {
        self.states[Self::quadrant(x)]
    }

    pub fn on_mesh(&self, mesh: &Mesh) -> Vec<Prim> {
        mesh.cells.iter().map(|c| self.eval(c.centroid)).collect()
    }
}

fn builtin(id: usize) -> Option<RiemannCase> {
    let p = |r, u, v, p| Prim::new(r, u, v, p);
    match id {
        6 => Some(RiemannCase {
            id,
            states: [
                p(1.0, 0.75, -0.5, 1.0),
                p(2.0, 0.75, 0.5, 1.0),
                p(2.0, -0.75, 0.5, 1.0),
                p(3.0, -0.75, -0.5, 1.0),
            ],
            final_time: 0.3,
        }),
        11 => Some(RiemannCase {
            id,
            states: [
                p(1.0, 0.1, 0.1, 1.0),
                p(0.5313, 0.8276, 0.0, 0.4),
                p(0.8, 0.1, 0.0, 1.4),
                p(0.5313, 0.1, 0.7276, 0.4),
            ],
            final_time: 0.3,
        }),
        _ => None,
    }
}

fn parse_cases(text: &str) -> Result<Vec<RiemannCase>> {
    let bad = |line: usize, why: &str| Error::Format(format!("riemann case file line {line}: {why}"));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("id,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 18 {
            return Err(bad(n + 1, &format!("expected 18 fields, found {}", fields.len())));
        }
        let id: usize = fields[0].parse().map_err(|_| bad(n + 1, "bad id"))?;
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(n + 1, "bad number"))?;
        let q = |k: usize| Prim::new(v[1 + 4 * k], v[2 + 4 * k], v[3 + 4 * k], v[4 + 4 * k]);
        out.push(RiemannCase {
            id,
            states: [q(0), q(1), q(2), q(3)],
            final_time: v[0],
        });
    }
    Ok(out)
}

fn case_table() -> &'static [RiemannCase] {
    static TABLE: OnceLock<Vec<RiemannCase>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut cases = parse_cases(CASE_FILE).expect("bundled case file parses");
        cases.extend([6, 11].into_iter().filter_map(builtin));
        cases.sort_by_key(|c| c.id);
        cases
    })
}

pub fn riemann_case(id: usize) -> Result<RiemannCase> {
    case_table()
        .iter()
        .find(|c| c.id == id)
        .cloned()
        .ok_or(Error::UnknownCase(id))
}

/// All cases in id order.
pub fn riemann_cases() -> Vec<RiemannCase> {
    case_table().to_vec()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainRow {
    pub step: usize,
    pub time: f64,
    pub l_coarse: f64,
    pub l_ml: f64,
    pub gain: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GainReport {
    pub rows: Vec<GainRow>,
    pub steps: usize,
    /// Why the runs stopped early, if they did.
    pub truncated: Option<String>,
    /// Last states reached: projected reference, baseline, corrected.
    pub last: Option<[Vec<Cons>; 3]>,
}

pub const GAIN_HEADER: &str = "step,time,L_coarse,L_ML,gain_pct";

impl GainReport {
    pub fn csv(&self, header_comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header_comment {
            s.push_str(&format!("# {h}\n"));
        }
        if let Some(why) = &self.truncated {
            s.push_str(&format!("# truncated: {why}\n"));
        }
        s.push_str(GAIN_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:?},{:?},{:?},{:?}\n",
                r.step, r.time, r.l_coarse, r.l_ml, r.gain
            ));
        }
        s
    }

    /// Mean gain over the recorded rows in the final `fraction` of the run.
    pub fn tail_gain(&self, fraction: f64) -> Option<f64> {
        let start = self.steps as f64 * (1.0 - fraction);
        let tail: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.step as f64 > start)
            .map(|r| r.gain)
            .collect();
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

pub fn gain(l_coarse: f64, l_ml: f64) -> f64 {
    if l_coarse > 0.0 {
        100.0 * (l_coarse - l_ml) / l_coarse
    } else {
        0.0
    }
}

/// `Σ_j ‖u_j^ref − u_j‖₁` over primitives, optionally weighted by `|C_j|`.
pub fn l1_error(mesh: &Mesh, reference: &[Prim], u: &[Prim], area_weighted: bool) -> f64 {
    reference
        .iter()
        .zip(u)
        .zip(&mesh.cells)
        .map(|((r, u), c)| {
            let d: f64 = (0..4).map(|k| (r.0[k] - u.0[k]).abs()).sum();
            if area_weighted {
                d * c.area
            } else {
                d
            }
        })
        .sum()
}

pub struct GainSetup<'a> {
    pub coarse: &'a Mesh,
    pub fine: &'a Mesh,
    pub map: &'a ParentMap,
    /// Baseline configuration; the corrected run uses the same method with
    /// the network switched on.
    pub step: StepConfig,
    pub freestream: Prim,
    pub back_pressure: BackPressure,
    pub net: &'a Network,
    pub params: &'a [f64],
    pub steps: usize,
    pub record_every: usize,
    pub area_weighted: bool,
}

fn prims(gas: &GasModel, w: &[Cons]) -> Result<Vec<Prim>> {
    w.iter().enumerate().map(|(i, w)| gas.cons_to_prim(w, i)).collect()
}

/// Fine reference, coarse baseline and coarse corrected runs from the same
/// initial data, all on the coarse time step.
pub fn run_gain(setup: &GainSetup, initial: &dyn Fn([f64; 2]) -> Prim) -> Result<GainReport> {
    let GainSetup {
        coarse,
        fine,
        map,
        step,
        ..
    } = *setup;
    if map.num_coarse() != coarse.num_cells() || map.num_fine() != fine.num_cells() {
        return Err(Error::InvalidInput(
            "fine mesh is not a refinement of the coarse mesh".into(),
        ));
    }
    if setup.params.len() != setup.net.num_params() {
        return Err(Error::SizeMismatch {
            expected: setup.net.num_params(),
            found: setup.params.len(),
        });
    }
    let base_cfg = StepConfig {
        mode: step.mode.baseline(),
        ..step
    };
    let ml_cfg = StepConfig {
        mode: step.mode.with_ml(),
        ..step
    };
    let gas = base_cfg.gas()?;

    let fine_u0: Vec<Prim> = fine.cells.iter().map(|c| initial(c.centroid)).collect();
    if let Some(i) = fine_u0.iter().position(|u| !prim_admissible(u)) {
        return Err(Error::InvalidInput(format!(
            "initial state in fine cell {i} is not admissible"
        )));
    }
    let mut wf: Vec<Cons> = fine_u0.iter().map(|u| gas.prim_to_cons(u)).collect();
    let w0 = project_fine_to_coarse(&wf, map)?;
    let coarse_u0 = prims(&gas, &w0)?;

    let dt = compute_dt(coarse, step.co);
    let sub = substeps(coarse, fine, step.co);
    let fine_bc = BoundaryData::resolve(fine, setup.freestream, setup.back_pressure, &fine_u0)?;
    let coarse_bc = || BoundaryData::resolve(coarse, setup.freestream, setup.back_pressure, &coarse_u0);
    let fine_solver = Solver::with_dt(fine, base_cfg, fine_bc, dt / sub as f64)?;
    let base_solver = Solver::with_dt(coarse, base_cfg, coarse_bc()?, dt)?;
    let ml_solver = Solver::with_dt(coarse, ml_cfg, coarse_bc()?, dt)?;
    let provider = setup.net.provider(setup.params);

    let mut report = GainReport {
        steps: setup.steps,
        ..Default::default()
    };
    let mut wb = w0.clone();
    let mut wm = w0;
    let every = setup.record_every.max(1);
    for n in 1..=setup.steps {
        let advanced = (|| -> Result<()> {
            for _ in 0..sub {
                wf = fine_solver.step(&wf, None).map_err(|e| with_run("reference", e))?.0;
            }
            wb = base_solver.step(&wb, None).map_err(|e| with_run("baseline", e))?.0;
            wm = ml_solver
                .step(&wm, Some(&provider))
                .map_err(|e| with_run("corrected", e))?
                .0;
            Ok(())
        })();
        if let Err(e) = advanced {
            report.truncated = Some(format!("step {n}: {e}"));
            log::warn!("gain run stopped at step {n}: {e}");
            break;
        }
        if n % every == 0 || n == setup.steps {
            let wr = project_fine_to_coarse(&wf, map)?;
            let ur = prims(&gas, &wr)?;
            let l_coarse = l1_error(coarse, &ur, &prims(&gas, &wb)?, setup.area_weighted);
            let l_ml = l1_error(coarse, &ur, &prims(&gas, &wm)?, setup.area_weighted);
            report.rows.push(GainRow {
                step: n,
                time: n as f64 * dt,
                l_coarse,
                l_ml,
                gain: gain(l_coarse, l_ml),
            });
        }
    }
    report.last = Some([project_fine_to_coarse(&wf, map)?, wb, wm]);
    Ok(report)
}

fn with_run(run: &str, e: Error) -> Error {
    Error::InvalidInput(format!("{run} run: {e}"))
}

/// Relative distance between a field and its mirror image across the
/// vertical line through the middle of the mesh's bounding box (`u ↦ −u`).
/// Mirrored centroids are matched to the nearest cell centroid.
pub fn mirror_asymmetry(mesh: &Mesh, gas: &GasModel, w: &[Cons]) -> Result<f64> {
    let u = prims(gas, w)?;
    let (lo, hi) = mesh.bounding_box();
    let axis = lo[0] + hi[0];
    let centroids: Vec<[f64; 2]> = mesh.cells.iter().map(|c| c.centroid).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (i, c) in mesh.cells.iter().enumerate() {
        let m = [axis - c.centroid[0], c.centroid[1]];
        let j = nearest(&centroids, m);
        let mirrored = Prim::new(u[j].rho(), -u[j].vel()[0], u[j].vel()[1], u[j].p());
        num += c.area * (0..4).map(|k| (u[i].0[k] - mirrored.0[k]).abs()).sum::<f64>();
        den += c.area * (0..4).map(|k| u[i].0[k].abs()).sum::<f64>();
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

fn nearest(points: &[[f64; 2]], x: [f64; 2]) -> usize {
    let d2 = |p: &[f64; 2]| (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = d2(p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[cfg(test)]
mod tests;
