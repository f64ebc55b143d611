//! Pointwise algebra of the 2D Euler equations for a polytropic ideal gas.
//!
//! Conservative states are `(ρ, ρu, ρv, E)`, primitive states `(ρ, u, v, p)`.
//! All functions are generic over [`Real`] so they can be traced.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Conservative state `(ρ, ρu, ρv, E)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cons<T = f64>(pub [T; 4]);

/// Primitive state `(ρ, u, v, p)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prim<T = f64>(pub [T; 4]);

impl<T: Real> Cons<T> {
    pub fn rho(&self) -> T {
        self.0[0]
    }
    pub fn mom(&self) -> [T; 2] {
        [self.0[1], self.0[2]]
    }
    pub fn energy(&self) -> T {
        self.0[3]
    }
    pub fn values(&self) -> Cons<f64> {
        Cons(self.0.map(|x| x.value()))
    }
}

impl<T: Real> Prim<T> {
    pub fn new(rho: T, u: T, v: T, p: T) -> Self {
        Prim([rho, u, v, p])
    }
    pub fn rho(&self) -> T {
        self.0[0]
    }
    pub fn vel(&self) -> [T; 2] {
        [self.0[1], self.0[2]]
    }
    pub fn p(&self) -> T {
        self.0[3]
    }
    pub fn values(&self) -> Prim<f64> {
        Prim(self.0.map(|x| x.value()))
    }
}

impl Cons<f64> {
    pub fn lift<T: Real>(&self) -> Cons<T> {
        Cons(self.0.map(T::cst))
    }
}

impl Prim<f64> {
    pub fn lift<T: Real>(&self) -> Prim<T> {
        Prim(self.0.map(T::cst))
    }
}

pub const PRIM_NAMES: [&str; 4] = ["rho", "u", "v", "p"];

/// Ideal-gas closure `E = p/(γ−1) + ½ρ|v|²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasModel {
    pub gamma: f64,
}

impl Default for GasModel {
    fn default() -> Self {
        GasModel { gamma: 1.4 }
    }
}

impl GasModel {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_nan() || gamma <= 1.0 {
            return Err(Error::InvalidInput(format!("gamma must exceed 1, got {gamma}")));
        }
        Ok(GasModel { gamma })
    }

    /// Specific heat at constant volume with the gas constant scaled out.
    pub fn cv(&self) -> f64 {
        1.0 / (self.gamma - 1.0)
    }

    pub fn prim_to_cons<T: Real>(&self, u: &Prim<T>) -> Cons<T> {
        let [rho, vx, vy, p] = u.0;
        let kinetic = rho * (vx * vx + vy * vy) * 0.5;
        Cons([rho, rho * vx, rho * vy, p / (self.gamma - 1.0) + kinetic])
    }

    /// Inverse of [`prim_to_cons`](Self::prim_to_cons); `cell` only labels errors.
    pub fn cons_to_prim<T: Real>(&self, w: &Cons<T>, cell: usize) -> Result<Prim<T>> {
        let [rho, mx, my, e] = w.0;
        if !(rho.value() > 0.0) {
            return Err(Error::Admissibility {
                cell,
                component: "rho",
                value: rho.value(),
            });
        }
        let vx = mx / rho;
        let vy = my / rho;
        let internal = e - (mx * vx + my * vy) * 0.5;
        if !(internal.value() > 0.0) {
            return Err(Error::Admissibility {
                cell,
                component: "internal energy",
                value: internal.value(),
            });
        }
        Ok(Prim([rho, vx, vy, internal * (self.gamma - 1.0)]))
    }

    pub fn sound_speed<T: Real>(&self, u: &Prim<T>) -> T {
        (u.p() * self.gamma / u.rho()).sqrt()
    }

    /// Physical flux `f(w)·n` evaluated from the primitive form of the state.
    pub fn flux_prim<T: Real>(&self, u: &Prim<T>, n: [f64; 2]) -> [T; 4] {
        let [rho, vx, vy, p] = u.0;
        let vn = vx * n[0] + vy * n[1];
        let mass = rho * vn;
        let kinetic = rho * (vx * vx + vy * vy) * 0.5;
        let e = p / (self.gamma - 1.0) + kinetic;
        [mass, mass * vx + p * n[0], mass * vy + p * n[1], (e + p) * vn]
    }

    /// Physical flux `f(w)·n`.
    pub fn physical_flux<T: Real>(&self, w: &Cons<T>, n: [f64; 2]) -> Result<[T; 4]> {
        let u = self.cons_to_prim(w, 0)?;
        Ok(self.flux_prim(&u, n))
    }

    /// `|v·n| + c`.
    pub fn max_wave_speed<T: Real>(&self, w: &Cons<T>, n: [f64; 2]) -> Result<T> {
        let u = self.cons_to_prim(w, 0)?;
        Ok(self.wave_speed_prim(&u, n))
    }

    pub fn wave_speed_prim<T: Real>(&self, u: &Prim<T>, n: [f64; 2]) -> T {
        let vn = u.0[1] * n[0] + u.0[2] * n[1];
        vn.abs() + self.sound_speed(u)
    }

    /// Entropy pair `η = −ρs`, `q = −ρs v` with `s = C_v log(p/ρ^γ)`.
    pub fn entropy_pair<T: Real>(&self, w: &Cons<T>) -> Result<(T, [T; 2])> {
        let u = self.cons_to_prim(w, 0)?;
        Ok(self.entropy_pair_prim(&u))
    }

    pub fn entropy_pair_prim<T: Real>(&self, u: &Prim<T>) -> (T, [T; 2]) {
        let [rho, vx, vy, p] = u.0;
        let s = (p.ln() - rho.ln() * self.gamma) * self.cv();
        let eta = -(rho * s);
        (eta, [eta * vx, eta * vy])
    }
}

/// `ρ > 0` and `E − ½ρ|v|² > 0`.
pub fn is_admissible(w: &Cons<f64>) -> bool {
    let [rho, mx, my, e] = w.0;
    rho > 0.0 && e - 0.5 * (mx * mx + my * my) / rho > 0.0
}

pub fn prim_admissible<T: Real>(u: &Prim<T>) -> bool {
    u.rho().value() > 0.0 && u.p().value() > 0.0
}
