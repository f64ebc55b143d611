//! Mesh convergence and error against wall time on a ladder of uniformly
//! refined meshes. The reference for every level is a run on a mesh
//! `reference_depth` refinements above the finest level, projected down.

use std::time::{Duration, Instant};

use crate::bc::BoundaryData;
use crate::error::{Error, Result};
use crate::euler::{prim_admissible, Cons, Prim};
use crate::mesh::{project_fine_to_coarse, refine_uniform, Mesh, ParentMap};
use crate::mlcorr::Network;
use crate::solver::{compute_dt, GradientMode, Solver, StepConfig};

use super::prims;

/// `√(mean |C|)`.
pub fn mesh_size(mesh: &Mesh) -> f64 {
    (mesh.total_area() / mesh.num_cells() as f64).sqrt()
}

/// Least-squares slope of `ln e` against `ln h`.
pub fn fit_slope(h: &[f64], e: &[f64]) -> Result<f64> {
    if h.len() != e.len() || h.len() < 2 {
        return Err(Error::InvalidInput(
            "slope fit needs at least two (h, error) pairs".into(),
        ));
    }
    if h.iter().chain(e).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(
            "slope fit needs positive finite sizes and errors".into(),
        ));
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("slope fit needs distinct mesh sizes".into()));
    }
    Ok(sxy / sxx)
}

pub type Model<'a> = (&'a Network, &'a [f64]);

pub struct Study {
    step: StepConfig,
    t_final: f64,
    levels: usize,
    /// Ladder, intermediate meshes and the reference mesh last.
    meshes: Vec<Mesh>,
    /// `maps[k]` takes `meshes[k + 1]` onto `meshes[k]`.
    maps: Vec<ParentMap>,
    labels: Vec<String>,
    initial: Vec<Vec<Vec<Cons>>>,
    reference: Vec<Vec<Vec<Prim>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub mode: GradientMode,
    pub level: usize,
    pub cells: usize,
    pub h: f64,
    /// Mean over the initial conditions.
    pub error: f64,
    pub per_case: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub slopes: Vec<(GradientMode, f64)>,
}

impl ConvergenceReport {
    pub fn slope(&self, mode: GradientMode) -> Option<f64> {
        self.slopes.iter().find(|(m, _)| *m == mode).map(|s| s.1)
    }

    pub fn csv(&self, header_comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header_comment {
            s.push_str(&format!("# {h}\n"));
        }
        for (m, a) in &self.slopes {
            s.push_str(&format!("# slope {} {a:?}\n", m.name()));
        }
        s.push_str("mode,h,error\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:?},{:?}\n", r.mode.name(), r.h, r.error));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub mode: GradientMode,
    pub h: f64,
    pub cells: usize,
    pub wall_s: f64,
    pub error: f64,
}

pub fn timing_csv(rows: &[TimingRow], header_comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(h) = header_comment {
        s.push_str(&format!("# {h}\n"));
    }
    s.push_str("mode,h,cells,wall_s,error\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:?},{},{:?},{:?}\n",
            r.mode.name(),
            r.h,
            r.cells,
            r.wall_s,
            r.error
        ));
    }
    s
}

impl Study {
    /// Build the ladder from `base`, run the baseline solver on the
    /// reference mesh for every initial condition and project the results.
    pub fn prepare(
        base: Mesh,
        levels: usize,
        reference_depth: usize,
        step: StepConfig,
        t_final: f64,
        initial: &[(String, &dyn Fn([f64; 2]) -> Prim)],
    ) -> Result<Study> {
        if levels == 0 || reference_depth == 0 {
            return Err(Error::InvalidInput(
                "need at least one level and one reference refinement".into(),
            ));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        step.validate()?;
        let mut meshes = vec![base];
        let mut maps = Vec::new();
        for _ in 1..levels + reference_depth {
            let (fine, map) = refine_uniform(meshes.last().expect("nonempty"))?;
            meshes.push(fine);
            maps.push(map);
        }
        let mut study = Study {
            step: StepConfig {
                mode: step.mode.baseline(),
                ..step
            },
            t_final,
            levels,
            meshes,
            maps,
            labels: Vec::new(),
            initial: Vec::new(),
            reference: Vec::new(),
        };
        let gas = study.step.gas()?;
        let top = study.meshes.len() - 1;
        for (label, ic) in initial {
            let u0: Vec<Prim> = study.meshes[top].cells.iter().map(|c| ic(c.centroid)).collect();
            if let Some(i) = u0.iter().position(|u| !prim_admissible(u)) {
                return Err(Error::InvalidInput(format!(
                    "{label}: initial state in cell {i} is not admissible"
                )));
            }
            let w0: Vec<Cons> = u0.iter().map(|u| gas.prim_to_cons(u)).collect();
            let init = study.project_down(&w0)?;
            let (wt, _) = study.advance(top, study.step.mode, None, w0)?;
            let reference = study
                .project_down(&wt)?
                .iter()
                .map(|w| prims(&gas, w))
                .collect::<Result<_>>()?;
            log::info!("reference for {label} done");
            study.labels.push(label.clone());
            study.initial.push(init);
            study.reference.push(reference);
        }
        Ok(study)
    }

    /// Restrictions of a reference-mesh field to every ladder level.
    fn project_down(&self, w: &[Cons]) -> Result<Vec<Vec<Cons>>> {
        let mut out = vec![Vec::new(); self.levels];
        let mut cur = w.to_vec();
        for k in (0..self.meshes.len() - 1).rev() {
            cur = project_fine_to_coarse(&cur, &self.maps[k])?;
            if k < self.levels {
                out[k] = cur.clone();
            }
        }
        Ok(out)
    }

    pub fn levels(&self) -> &[Mesh] {
        &self.meshes[..self.levels]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Steps and time step that land exactly on the final time.
    pub fn schedule(&self, mesh: &Mesh) -> (usize, f64) {
        let dt = compute_dt(mesh, self.step.co);
        let n = (self.t_final / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        (n, self.t_final / n as f64)
    }

    fn advance(
        &self,
        mesh_index: usize,
        mode: GradientMode,
        model: Option<Model>,
        w0: Vec<Cons>,
    ) -> Result<(Vec<Cons>, Duration)> {
        let mesh = &self.meshes[mesh_index];
        let cfg = StepConfig { mode, ..self.step };
        let provider = match (mode.is_ml(), model) {
            (false, _) => None,
            (true, Some((net, params))) => Some(net.provider(params)),
            (true, None) => {
                return Err(Error::InvalidInput(format!("mode {} needs a model", mode.name())));
            }
        };
        let gas = cfg.gas()?;
        let u0 = prims(&gas, &w0)?;
        let bc = BoundaryData::from_initial(mesh, Prim::new(1.0, 0.0, 0.0, 1.0), &u0)?;
        let (n, dt) = self.schedule(mesh);
        let solver = Solver::with_dt(mesh, cfg, bc, dt)?;
        let start = Instant::now();
        let mut w = w0;
        for k in 1..=n {
            w = solver
                .step(&w, provider.as_ref().map(|p| p as _))
                .map_err(|e| Error::StepRejected {
                    step: k,
                    source: Box::new(e),
                })?
                .0;
        }
        Ok((w, start.elapsed()))
    }

    /// Final state on ladder level `level` for initial condition `case`.
    pub fn run(&self, case: usize, level: usize, mode: GradientMode, model: Option<Model>) -> Result<Vec<Cons>> {
        Ok(self.timed_run(case, level, mode, model)?.0)
    }

    fn timed_run(
        &self,
        case: usize,
        level: usize,
        mode: GradientMode,
        model: Option<Model>,
    ) -> Result<(Vec<Cons>, Duration)> {
        if case >= self.labels.len() || level >= self.levels {
            return Err(Error::InvalidInput(format!("no case {case} on level {level}")));
        }
        self.advance(level, mode, model, self.initial[case][level].clone())
    }

    /// `Σ |C| ‖u − u_ref‖₁ / Σ |C|` over primitives.
    pub fn error(&self, case: usize, level: usize, w: &[Cons]) -> Result<f64> {
        let mesh = &self.meshes[level];
        let u = prims(&self.step.gas()?, w)?;
        let reference = &self.reference[case][level];
        Ok(super::l1_error(mesh, reference, &u, true) / mesh.total_area())
    }

    pub fn convergence(&self, modes: &[GradientMode], model: Option<Model>) -> Result<ConvergenceReport> {
        if self.levels < 3 {
            return Err(Error::InvalidInput(format!(
                "convergence study needs at least 3 levels, got {}",
                self.levels
            )));
        }
        let mut rows = Vec::new();
        let mut slopes = Vec::new();
        for &mode in modes {
            let mut hs = Vec::new();
            let mut es = Vec::new();
            for level in 0..self.levels {
                let per_case = (0..self.labels.len())
                    .map(|c| self.error(c, level, &self.run(c, level, mode, model)?))
                    .collect::<Result<Vec<f64>>>()?;
                let error = per_case.iter().sum::<f64>() / per_case.len().max(1) as f64;
                let mesh = &self.meshes[level];
                log::info!("{} level {level}: error {error:.6e}", mode.name());
                hs.push(mesh_size(mesh));
                es.push(error);
                rows.push(ConvergenceRow {
                    mode,
                    level,
                    cells: mesh.num_cells(),
                    h: mesh_size(mesh),
                    error,
                    per_case,
                });
            }
            slopes.push((mode, fit_slope(&hs, &es)?));
        }
        Ok(ConvergenceReport { rows, slopes })
    }

    /// Median wall time of `repeats` runs per (mode, level) after one
    /// untimed warmup, for initial condition `case`.
    pub fn timing(
        &self,
        modes: &[GradientMode],
        model: Option<Model>,
        case: usize,
        repeats: usize,
    ) -> Result<Vec<TimingRow>> {
        if repeats < 3 {
            return Err(Error::InvalidInput(format!(
                "timing needs at least 3 repeats, got {repeats}"
            )));
        }
        let mut rows = Vec::new();
        for &mode in modes {
            for level in 0..self.levels {
                let (w, _) = self.timed_run(case, level, mode, model)?;
                let mut times = (0..repeats)
                    .map(|_| Ok(self.timed_run(case, level, mode, model)?.1.as_secs_f64()))
                    .collect::<Result<Vec<f64>>>()?;
                times.sort_by(f64::total_cmp);
                let mesh = &self.meshes[level];
                rows.push(TimingRow {
                    mode,
                    h: mesh_size(mesh),
                    cells: mesh.num_cells(),
                    wall_s: times[times.len() / 2],
                    error: self.error(case, level, &w)?,
                });
            }
        }
        Ok(rows)
    }
}
