//! Gradient reconstruction, slope limiting and MUSCL face states.
//!
//! Everything works on primitive variables. Neighbor values are gathered once
//! per step into a `[Prim; 3]` per cell in stencil order, with ghost states
//! already synthesized, so the gradient, limiter and network code never needs
//! to know about boundaries.
//!
//! The corrected gradients take per-slot, per-variable coefficients `α`:
//!
//! * Green-Gauss: `∇u_i = Σ_k ((½+α_k) u_i + (½−α_k) u_k) n_k|S_k| / |C_i|`
//! * least squares: `∇u_i = Σ_k c_k (1+α_k)(u_k − u_i)`
//!
//! Both are evaluated as baseline plus an `α`-weighted correction, with the
//! velocity columns acting in the cell's local frame so that `α` is a
//! rotation-invariant quantity.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::bc::{ghost_state, BoundaryData};
use crate::error::{Error, Result};
use crate::euler::{GasModel, Prim};
use crate::mesh::{FaceSide, Mesh, Neighbor};

/// Per-cell gradient of the four primitives: `grad[var][axis]`.
pub type Grad<T> = [[T; 2]; 4];

/// Per-cell correction coefficients: `alpha[slot][var]`.
pub type Alpha<T> = [[T; 4]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    GreenGauss,
    LeastSquares,
}

/// Neighbor values in stencil order, ghosts included. Also returns how many
/// ghost states had to be floored.
pub fn neighbor_values<T: Real>(
    mesh: &Mesh,
    u: &[Prim<T>],
    bc: &BoundaryData,
    gas: &GasModel,
) -> (Vec<[Prim<T>; 3]>, usize) {
    let mut clamps = 0;
    let nb = (0..mesh.num_cells())
        .map(|i| {
            mesh.stencil(i).map(|e| match e.neighbor {
                Neighbor::Cell(j) => u[j],
                Neighbor::Ghost(f) => {
                    let FaceSide::Boundary(tag) = mesh.faces[f].right else {
                        unreachable!("ghost neighbor on interior face")
                    };
                    let (g, clamped) = ghost_state(tag, &u[i], e.normal, &bc.freestream, bc.back_pressure(f), gas);
                    clamps += clamped as usize;
                    g
                }
            })
        })
        .collect();
    (nb, clamps)
}

/// `u_k − u_i` per slot and variable.
pub fn differences<T: Real>(u: &Prim<T>, nb: &[Prim<T>; 3]) -> [[T; 4]; 3] {
    nb.map(|n| [0, 1, 2, 3].map(|v| n.0[v] - u.0[v]))
}

/// Orthonormal frame of a cell: `e1` points to the first stencil neighbor,
/// `e2` is `e1` turned a quarter counterclockwise. Rows are `[e1, e2]`.
pub fn local_frame(mesh: &Mesh, cell: usize) -> [[f64; 2]; 2] {
    let d = mesh.stencil(cell)[0].offset;
    let l = d[0].hypot(d[1]);
    let e1 = [d[0] / l, d[1] / l];
    [e1, [-e1[1], e1[0]]]
}

/// Express the velocity part of per-slot differences in the local frame.
pub fn to_local<T: Real>(frame: &[[f64; 2]; 2], d: [T; 4]) -> [T; 4] {
    let [e1, e2] = frame;
    [d[0], d[1] * e1[0] + d[2] * e1[1], d[1] * e2[0] + d[2] * e2[1], d[3]]
}

/// Network input of a cell: `u_k − u_i` with velocities in the local frame.
pub fn local_differences<T: Real>(mesh: &Mesh, cell: usize, u: &Prim<T>, nb: &[Prim<T>; 3]) -> [[T; 4]; 3] {
    let frame = local_frame(mesh, cell);
    differences(u, nb).map(|d| to_local(&frame, d))
}

/// Green-Gauss gradients `Σ_k ½(u_i + u_k) n_k|S_k| / |C_i|`, evaluated as
/// `Σ_k ½(u_k − u_i) n_k|S_k| / |C_i|` (equal on a closed cell), so adding a
/// constant to `u` leaves the result bit for bit unchanged.
pub fn gradient_gg<T: Real>(mesh: &Mesh, u: &[Prim<T>], nb: &[[Prim<T>; 3]]) -> Vec<Grad<T>> {
    (0..mesh.num_cells())
        .map(|i| {
            let w = mesh.gg_weights(i);
            let mut g = [[T::zero(); 2]; 4];
            for (k, wk) in w.iter().enumerate() {
                for v in 0..4 {
                    let half = (nb[i][k].0[v] - u[i].0[v]) * 0.5;
                    g[v][0] += half * wk[0];
                    g[v][1] += half * wk[1];
                }
            }
            g
        })
        .collect()
}

/// Weighted least-squares gradients `Σ_k c_k (u_k − u_i)`.
pub fn gradient_lsq<T: Real>(mesh: &Mesh, u: &[Prim<T>], nb: &[[Prim<T>; 3]]) -> Result<Vec<Grad<T>>> {
    (0..mesh.num_cells())
        .map(|i| {
            let c = mesh.lsq_coefficients(i)?;
            let mut g = [[T::zero(); 2]; 4];
            for (k, ck) in c.iter().enumerate() {
                for v in 0..4 {
                    let du = nb[i][k].0[v] - u[i].0[v];
                    g[v][0] += du * ck[0];
                    g[v][1] += du * ck[1];
                }
            }
            Ok(g)
        })
        .collect()
}

/// Add the learned correction to baseline gradients in place.
///
/// Green-Gauss gains `Σ_k α_k (u_i − u_k) n_k|S_k| / |C_i|`, least squares
/// gains `Σ_k α_k c_k (u_k − u_i)`. The velocity columns of `α` act on the
/// velocity components in the cell's local frame; the resulting correction
/// is rotated back. A zero `α` adds exact zeros, and a sum started from
/// `+0.0` is never `−0.0`, so the baseline comes back bit for bit.
pub fn apply_correction<T: Real>(
    method: GradientMethod,
    mesh: &Mesh,
    u: &[Prim<T>],
    nb: &[[Prim<T>; 3]],
    alpha: &[Alpha<T>],
    grad: &mut [Grad<T>],
) -> Result<()> {
    for i in 0..mesh.num_cells() {
        let (weights, sign) = match method {
            GradientMethod::GreenGauss => (*mesh.gg_weights(i), -1.0),
            GradientMethod::LeastSquares => (*mesh.lsq_coefficients(i)?, 1.0),
        };
        let frame = local_frame(mesh, i);
        // correction per local variable
        let mut corr = [[T::zero(); 2]; 4];
        for k in 0..3 {
            let d = to_local(&frame, [0, 1, 2, 3].map(|v| nb[i][k].0[v] - u[i].0[v]));
            for v in 0..4 {
                let s = alpha[i][k][v] * d[v] * sign;
                corr[v][0] += s * weights[k][0];
                corr[v][1] += s * weights[k][1];
            }
        }
        let [e1, e2] = frame;
        let g = &mut grad[i];
        for a in 0..2 {
            g[0][a] += corr[0][a];
            g[1][a] += corr[1][a] * e1[0] + corr[2][a] * e2[0];
            g[2][a] += corr[1][a] * e1[1] + corr[2][a] * e2[1];
            g[3][a] += corr[3][a];
        }
    }
    Ok(())
}

pub fn gradient<T: Real>(
    method: GradientMethod,
    mesh: &Mesh,
    u: &[Prim<T>],
    nb: &[[Prim<T>; 3]],
    alpha: Option<&[Alpha<T>]>,
) -> Result<Vec<Grad<T>>> {
    let mut g = match method {
        GradientMethod::GreenGauss => gradient_gg(mesh, u, nb),
        GradientMethod::LeastSquares => gradient_lsq(mesh, u, nb)?,
    };
    if let Some(a) = alpha {
        apply_correction(method, mesh, u, nb, a, &mut g)?;
    }
    Ok(g)
}

/// Smooth min-max function of the Venkatakrishnan limiter.
pub fn venkat_l<T: Real>(a: T, b: T, omega: f64) -> T {
    let a2 = a * a;
    (a2 + a * b * 2.0 + omega) / (a2 + b * b * 2.0 + a * b + omega)
}

/// Per-cell, per-variable limiter values in `[0, 1]`.
pub fn venkat_limiter<T: Real>(
    mesh: &Mesh,
    u: &[Prim<T>],
    nb: &[[Prim<T>; 3]],
    grad: &[Grad<T>],
    k_venkat: f64,
) -> Vec<[T; 4]> {
    (0..mesh.num_cells())
        .map(|i| {
            let omega = (k_venkat * mesh.cells[i].area.sqrt()).powi(3);
            let st = mesh.stencil(i);
            [0, 1, 2, 3].map(|v| {
                let ui = u[i].0[v];
                let (mut lo, mut hi) = (ui, ui);
                for n in &nb[i] {
                    lo = lo.min(n.0[v]);
                    hi = hi.max(n.0[v]);
                }
                let mut phi = T::cst(1.0);
                for e in st {
                    let d = grad[i][v][0] * e.face_offset[0] + grad[i][v][1] * e.face_offset[1];
                    let dv = d.value();
                    let phi_k = if dv > 0.0 {
                        venkat_l(hi - ui, d, omega)
                    } else if dv < 0.0 {
                        venkat_l(lo - ui, d, omega)
                    } else {
                        T::cst(1.0)
                    };
                    phi = phi.min(phi_k);
                }
                phi.max(T::zero())
            })
        })
        .collect()
}

/// Limiter values of exactly one (no limiting).
pub fn unlimited<T: Real>(n: usize) -> Vec<[T; 4]> {
    vec![[T::cst(1.0); 4]; n]
}

/// MUSCL face states `u_i + φ_i (r_f − r_i)·∇u_i` per cell and stencil slot.
///
/// A cell whose face states are not admissible falls back to first order
/// (`φ_i = 0` for all variables). Returns the states and the number of
/// fallbacks.
pub fn face_states<T: Real>(
    mesh: &Mesh,
    u: &[Prim<T>],
    grad: &[Grad<T>],
    phi: &[[T; 4]],
) -> (Vec<[Prim<T>; 3]>, usize) {
    let mut fallbacks = 0;
    let states = (0..mesh.num_cells())
        .map(|i| {
            let st = mesh.stencil(i);
            let faces = st.map(|e| {
                Prim([0, 1, 2, 3].map(|v| {
                    let d = grad[i][v][0] * e.face_offset[0] + grad[i][v][1] * e.face_offset[1];
                    u[i].0[v] + phi[i][v] * d
                }))
            });
            if faces.iter().all(|f| f.0[0].value() > 0.0 && f.0[3].value() > 0.0) {
                faces
            } else {
                fallbacks += 1;
                [u[i]; 3]
            }
        })
        .collect();
    (states, fallbacks)
}

/// Slot of `face` in the stencil of `cell`.
pub fn slot_of(mesh: &Mesh, cell: usize, face: usize) -> Result<usize> {
    mesh.stencil(cell)
        .iter()
        .position(|e| e.face == face)
        .ok_or_else(|| Error::MeshSetup(format!("face {face} not in stencil of cell {cell}")))
}
