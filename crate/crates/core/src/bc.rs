//! Ghost states for boundary faces.
//!
//! Periodic faces never reach this module: the mesh merges them into
//! interior faces. Every other tag synthesizes a primitive ghost state from
//! the interior state and the outward unit normal.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::euler::{GasModel, Prim};
use crate::mesh::{BoundaryTag, FaceSide, Mesh};

/// Floor applied to ghost density and pressure when a formula drives them
/// non-positive.
pub const GHOST_FLOOR: f64 = 1e-10;

/// Boundary data shared by all boundary faces of a run.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    /// Freestream state for inflow faces.
    pub freestream: Prim,
    back_pressure: Vec<f64>,
}

/// How subsonic-outflow faces get their static pressure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackPressure {
    Uniform(f64),
    /// Pressure of the adjacent cell in the initial condition.
    Initial,
}

impl BoundaryData {
    pub fn new(mesh: &Mesh, freestream: Prim, back_pressure: f64) -> Result<Self> {
        Self::with_face_pressure(mesh, freestream, |_| back_pressure)
    }

    /// Back pressure taken face by face from the initial primitive field.
    pub fn from_initial(mesh: &Mesh, freestream: Prim, initial: &[Prim]) -> Result<Self> {
        if initial.len() != mesh.num_cells() {
            return Err(Error::SizeMismatch {
                expected: mesh.num_cells(),
                found: initial.len(),
            });
        }
        Self::with_face_pressure(mesh, freestream, |f| initial[mesh.faces[f].left].p())
    }

    pub fn resolve(mesh: &Mesh, freestream: Prim, rule: BackPressure, initial: &[Prim]) -> Result<Self> {
        match rule {
            BackPressure::Uniform(p) => Self::new(mesh, freestream, p),
            BackPressure::Initial => Self::from_initial(mesh, freestream, initial),
        }
    }

    fn with_face_pressure(mesh: &Mesh, freestream: Prim, p_of: impl Fn(usize) -> f64) -> Result<Self> {
        let uses_freestream = mesh.faces.iter().any(|f| {
            matches!(
                f.right,
                FaceSide::Boundary(BoundaryTag::SupersonicIn | BoundaryTag::SubsonicIn)
            )
        });
        if uses_freestream && !crate::euler::prim_admissible(&freestream) {
            return Err(Error::InvalidInput(format!(
                "freestream state {:?} is not admissible",
                freestream.0
            )));
        }
        let mut back_pressure = vec![f64::NAN; mesh.faces.len()];
        for (f, face) in mesh.faces.iter().enumerate() {
            if face.right == FaceSide::Boundary(BoundaryTag::SubsonicOut) {
                let p = p_of(f);
                if !(p > 0.0 && p.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "back pressure {p} on face {f} must be positive"
                    )));
                }
                back_pressure[f] = p;
            }
        }
        Ok(BoundaryData {
            freestream,
            back_pressure,
        })
    }

    pub fn back_pressure(&self, face: usize) -> f64 {
        self.back_pressure[face]
    }
}

/// Ghost state for one boundary face. The flag reports whether the density
/// or pressure had to be floored at [`GHOST_FLOOR`].
pub fn ghost_state<T: Real>(
    tag: BoundaryTag,
    interior: &Prim<T>,
    n: [f64; 2],
    freestream: &Prim,
    back_pressure: f64,
    gas: &GasModel,
) -> (Prim<T>, bool) {
    let [rho, u, v, p] = interior.0;
    let ghost = match tag {
        BoundaryTag::SupersonicIn => freestream.lift(),
        BoundaryTag::SupersonicOut | BoundaryTag::Periodic(_) => *interior,
        BoundaryTag::SlipWall => {
            let vn = u * n[0] + v * n[1];
            Prim([rho, u - vn * (2.0 * n[0]), v - vn * (2.0 * n[1]), p])
        }
        BoundaryTag::SubsonicIn => {
            // reference state from the interior
            let c0 = gas.sound_speed(interior);
            let z0 = rho * c0;
            let [rb, ub, vb, pb] = freestream.0;
            let dvn = (u * (-n[0]) + v * (-n[1])) + (ub * n[0] + vb * n[1]);
            let pg = (z0 * dvn * -1.0 + (p + pb)) * 0.5;
            let rg = (pg - pb) / (c0 * c0) + rb;
            let s = (pg - pb) / z0;
            Prim([rg, s * n[0] + ub, s * n[1] + vb, pg])
        }
        BoundaryTag::SubsonicOut => {
            let c0 = gas.sound_speed(interior);
            let z0 = rho * c0;
            let pg = T::cst(back_pressure);
            let rg = rho + (pg - p) / (c0 * c0);
            // outgoing Riemann invariant p + ρ₀c₀ v·n carried from the interior
            let s = (p - pg) / z0;
            Prim([rg, u + s * n[0], v + s * n[1], pg])
        }
    };
    floor_state(ghost)
}

fn floor_state<T: Real>(w: Prim<T>) -> (Prim<T>, bool) {
    let [rho, u, v, p] = w.0;
    let mut clamped = false;
    let rho = if rho.value() > GHOST_FLOOR {
        rho
    } else {
        clamped = true;
        T::cst(GHOST_FLOOR)
    };
    let p = if p.value() > GHOST_FLOOR {
        p
    } else {
        clamped = true;
        T::cst(GHOST_FLOOR)
    };
    (Prim([rho, u, v, p]), clamped)
}
