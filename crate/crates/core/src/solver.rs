//! Finite-volume residual, explicit Euler stepping and rollouts.
//!
//! One step runs: conservative → primitive, neighbor gathering with ghost
//! states, optional network correction coefficients, gradient, limiter,
//! MUSCL face states, Rusanov fluxes, update. The time step is fixed per run
//! from `Δt = Co · min √|C|`, so runs on different meshes or with different
//! gradient modes visit the same time instants.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::bc::{ghost_state, BoundaryData};
use crate::error::{Error, Result};
use crate::euler::{Cons, GasModel, Prim};
use crate::mesh::{FaceSide, Mesh};
use crate::recon::{self, Alpha, GradientMethod};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Gg,
    Lsq,
    MlGg,
    MlLsq,
}

impl GradientMode {
    pub fn method(self) -> GradientMethod {
        match self {
            GradientMode::Gg | GradientMode::MlGg => GradientMethod::GreenGauss,
            GradientMode::Lsq | GradientMode::MlLsq => GradientMethod::LeastSquares,
        }
    }

    pub fn is_ml(self) -> bool {
        matches!(self, GradientMode::MlGg | GradientMode::MlLsq)
    }

    /// Same reconstruction with the correction switched on.
    pub fn with_ml(self) -> Self {
        match self.method() {
            GradientMethod::GreenGauss => GradientMode::MlGg,
            GradientMethod::LeastSquares => GradientMode::MlLsq,
        }
    }

    pub fn baseline(self) -> Self {
        match self.method() {
            GradientMethod::GreenGauss => GradientMode::Gg,
            GradientMethod::LeastSquares => GradientMode::Lsq,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GradientMode::Gg => "gg",
            GradientMode::Lsq => "lsq",
            GradientMode::MlGg => "ml_gg",
            GradientMode::MlLsq => "ml_lsq",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    pub co: f64,
    pub mode: GradientMode,
    pub limiter: bool,
    pub venkat_k: f64,
    pub gamma: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            co: 0.01,
            mode: GradientMode::Lsq,
            limiter: true,
            venkat_k: 5.0,
            gamma: 1.4,
        }
    }
}

impl StepConfig {
    pub fn gas(&self) -> Result<GasModel> {
        GasModel::new(self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.co > 0.0 && self.co.is_finite()) {
            return Err(Error::InvalidInput(format!("Co must be positive, got {}", self.co)));
        }
        if !(self.venkat_k > 0.0) {
            return Err(Error::InvalidInput(format!(
                "limiter constant must be positive, got {}",
                self.venkat_k
            )));
        }
        self.gas().map(|_| ())
    }
}

/// `Δt = Co · min_j √|C_j|`.
pub fn compute_dt(mesh: &Mesh, co: f64) -> f64 {
    co * mesh.min_sqrt_area()
}

/// Source of correction coefficients for the ML gradient modes.
pub trait AlphaProvider<T: Real> {
    fn alpha(&self, mesh: &Mesh, u: &[Prim<T>], nb: &[[Prim<T>; 3]]) -> Result<Vec<Alpha<T>>>;
}

/// Rusanov flux through a face with unit normal `n`, from primitive states.
pub fn rusanov_prim<T: Real>(gas: &GasModel, l: &Prim<T>, r: &Prim<T>, n: [f64; 2]) -> [T; 4] {
    let fl = gas.flux_prim(l, n);
    let fr = gas.flux_prim(r, n);
    let s = gas.wave_speed_prim(l, n).max(gas.wave_speed_prim(r, n));
    let wl = gas.prim_to_cons(l);
    let wr = gas.prim_to_cons(r);
    [0, 1, 2, 3].map(|k| (fl[k] + fr[k]) * 0.5 - s * (wr.0[k] - wl.0[k]) * 0.5)
}

/// Rusanov flux from conservative states; both must be admissible.
pub fn rusanov_flux<T: Real>(gas: &GasModel, l: &Cons<T>, r: &Cons<T>, n: [f64; 2]) -> Result<[T; 4]> {
    let pl = gas.cons_to_prim(l, 0)?;
    let pr = gas.cons_to_prim(r, 1)?;
    Ok(rusanov_prim(gas, &pl, &pr, n))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Cells that fell back to first order this step.
    pub fallbacks: usize,
    /// Ghost states whose density or pressure was floored.
    pub clamps: usize,
    /// Realized `Co · max(|v| + c)`.
    pub cfl: f64,
}

/// Everything one step needs besides the state.
pub struct Solver<'m> {
    mesh: &'m Mesh,
    cfg: StepConfig,
    gas: GasModel,
    bc: BoundaryData,
    dt: f64,
    face_slots: Vec<[usize; 2]>,
}

impl<'m> Solver<'m> {
    pub fn new(mesh: &'m Mesh, cfg: StepConfig, bc: BoundaryData) -> Result<Self> {
        let dt = compute_dt(mesh, cfg.co);
        Self::with_dt(mesh, cfg, bc, dt)
    }

    /// Solver with an explicit time step (sub-stepping, fixed end times).
    pub fn with_dt(mesh: &'m Mesh, cfg: StepConfig, bc: BoundaryData, dt: f64) -> Result<Self> {
        cfg.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let face_slots = mesh
            .faces
            .iter()
            .enumerate()
            .map(|(f, face)| {
                let l = recon::slot_of(mesh, face.left, f)?;
                let r = match face.right {
                    FaceSide::Cell { id, .. } => recon::slot_of(mesh, id, f)?,
                    FaceSide::Boundary(_) => usize::MAX,
                };
                Ok([l, r])
            })
            .collect::<Result<_>>()?;
        Ok(Solver {
            mesh,
            gas: cfg.gas()?,
            cfg,
            bc,
            dt,
            face_slots,
        })
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn gas(&self) -> &GasModel {
        &self.gas
    }

    pub fn boundary(&self) -> &BoundaryData {
        &self.bc
    }

    pub fn primitives<T: Real>(&self, w: &[Cons<T>]) -> Result<Vec<Prim<T>>> {
        if w.len() != self.mesh.num_cells() {
            return Err(Error::SizeMismatch {
                expected: self.mesh.num_cells(),
                found: w.len(),
            });
        }
        w.iter().enumerate().map(|(i, w)| self.gas.cons_to_prim(w, i)).collect()
    }

    /// `R_i = Σ_faces H·|S|`, so that `|C_i| dw_i/dt = −R_i`.
    pub fn residual<T: Real>(
        &self,
        w: &[Cons<T>],
        alpha: Option<&dyn AlphaProvider<T>>,
    ) -> Result<(Vec<[T; 4]>, StepStats)> {
        let mesh = self.mesh;
        let u = self.primitives(w)?;
        let (nb, clamps) = recon::neighbor_values(mesh, &u, &self.bc, &self.gas);
        let alpha_field = if self.cfg.mode.is_ml() {
            let provider = alpha.ok_or_else(|| {
                Error::InvalidInput(format!(
                    "gradient mode {} needs network parameters",
                    self.cfg.mode.name()
                ))
            })?;
            Some(provider.alpha(mesh, &u, &nb)?)
        } else {
            None
        };
        let grad = recon::gradient(self.cfg.mode.method(), mesh, &u, &nb, alpha_field.as_deref())?;
        let phi = if self.cfg.limiter {
            recon::venkat_limiter(mesh, &u, &nb, &grad, self.cfg.venkat_k)
        } else {
            recon::unlimited(mesh.num_cells())
        };
        let (states, fallbacks) = recon::face_states(mesh, &u, &grad, &phi);

        let mut clamps = clamps;
        let mut res = vec![[T::zero(); 4]; mesh.num_cells()];
        for (f, face) in mesh.faces.iter().enumerate() {
            let [sl, sr] = self.face_slots[f];
            let i = face.left;
            let ul = states[i][sl];
            let h = match face.right {
                FaceSide::Cell { id: j, .. } => {
                    let h = rusanov_prim(&self.gas, &ul, &states[j][sr], face.normal);
                    for k in 0..4 {
                        res[j][k] -= h[k] * face.length;
                    }
                    h
                }
                FaceSide::Boundary(tag) => {
                    let (g, c) = ghost_state(
                        tag,
                        &ul,
                        face.normal,
                        &self.bc.freestream,
                        self.bc.back_pressure(f),
                        &self.gas,
                    );
                    clamps += c as usize;
                    rusanov_prim(&self.gas, &ul, &g, face.normal)
                }
            };
            for k in 0..4 {
                res[i][k] += h[k] * face.length;
            }
        }

        let lmax = u
            .iter()
            .map(|p| {
                let [_, vx, vy, _] = p.values().0;
                vx.hypot(vy) + self.gas.sound_speed(&p.values())
            })
            .fold(0.0, f64::max);
        Ok((
            res,
            StepStats {
                fallbacks,
                clamps,
                cfl: self.cfg.co * lmax,
            },
        ))
    }

    /// `w^{n+1} = w^n − Δt/|C| R`. Rejects a result with a non-admissible cell.
    pub fn step<T: Real>(
        &self,
        w: &[Cons<T>],
        alpha: Option<&dyn AlphaProvider<T>>,
    ) -> Result<(Vec<Cons<T>>, StepStats)> {
        let (res, stats) = self.residual(w, alpha)?;
        let next: Vec<Cons<T>> = w
            .iter()
            .zip(&res)
            .zip(&self.mesh.cells)
            .map(|((w, r), c)| {
                let s = self.dt / c.area;
                Cons([0, 1, 2, 3].map(|k| w.0[k] - r[k] * s))
            })
            .collect();
        for (i, w) in next.iter().enumerate() {
            self.gas.cons_to_prim(w, i)?;
        }
        Ok((next, stats))
    }
}

/// Domain totals `Σ |C| w` per component.
pub fn totals(mesh: &Mesh, w: &[Cons]) -> [f64; 4] {
    let mut t = [0.0; 4];
    for (w, c) in w.iter().zip(&mesh.cells) {
        for k in 0..4 {
            t[k] += c.area * w.0[k];
        }
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub step: usize,
    pub time: f64,
    pub w: Vec<Cons>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub step: usize,
    pub time: f64,
    pub totals: [f64; 4],
    pub fallbacks: usize,
    pub clamps: usize,
    pub cfl: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutRecord {
    pub frames: Vec<Frame>,
    pub diagnostics: Vec<Diagnostics>,
}

impl RolloutRecord {
    pub fn last(&self) -> Option<&Frame> {
        self.frames.last()
    }

    pub fn diagnostics_csv(&self, header_comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(h) = header_comment {
            s.push_str(&format!("# {h}\n"));
        }
        s.push_str("step,time,mass,mom_x,mom_y,energy,fallbacks\n");
        for d in &self.diagnostics {
            s.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{}\n",
                d.step, d.time, d.totals[0], d.totals[1], d.totals[2], d.totals[3], d.fallbacks
            ));
        }
        s
    }
}

/// Advance `steps` steps, keeping every `save_every`-th frame (and frame 0).
pub fn rollout(
    solver: &Solver,
    w0: Vec<Cons>,
    steps: usize,
    save_every: usize,
    alpha: Option<&dyn AlphaProvider<f64>>,
) -> Result<RolloutRecord> {
    let save_every = save_every.max(1);
    let mesh = solver.mesh();
    let mut rec = RolloutRecord::default();
    rec.diagnostics.push(Diagnostics {
        step: 0,
        time: 0.0,
        totals: totals(mesh, &w0),
        fallbacks: 0,
        clamps: 0,
        cfl: 0.0,
    });
    let mut w = w0;
    rec.frames.push(Frame {
        step: 0,
        time: 0.0,
        w: w.clone(),
    });
    for n in 1..=steps {
        let (next, stats) = solver.step(&w, alpha).map_err(|e| Error::StepRejected {
            step: n,
            source: Box::new(e),
        })?;
        w = next;
        let time = n as f64 * solver.dt();
        rec.diagnostics.push(Diagnostics {
            step: n,
            time,
            totals: totals(mesh, &w),
            fallbacks: stats.fallbacks,
            clamps: stats.clamps,
            cfl: stats.cfl,
        });
        if n % save_every == 0 || n == steps {
            rec.frames.push(Frame {
                step: n,
                time,
                w: w.clone(),
            });
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests;
