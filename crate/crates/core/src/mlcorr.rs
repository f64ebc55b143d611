//! Branch/trunk network producing the gradient correction coefficients.
//!
//! Inputs per interior cell: the twelve neighbor differences `u_k − u_i`
//! (slot-major, stencil order, velocity in the cell's local frame) and the
//! three stencil angles. The branch
//! normalizes the differences per sample, lifts them to width `W`, applies
//! residual blocks `h ← h + σ(A h + b)` and projects to `12·p` features. The
//! trunk maps the angles through one hidden layer to `p` features. Output
//! `o` is the inner product of its `p` branch features with the trunk
//! features.
//!
//! The raw output is multiplied by the gate `s²/(s² + ε)` (`s²` the input
//! variance), so a locally constant field gets no correction, and saturated
//! into `[−α_max, α_max]` with a scaled `tanh`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::euler::Prim;
use crate::mesh::Mesh;
use crate::recon::{local_differences, Alpha};
use crate::solver::AlphaProvider;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// `x · sigmoid(x)`
    Swish,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Activation::Tanh => 0,
            Activation::Swish => 1,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Swish),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }

    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Swish => x / ((-x).exp() + 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Branch width.
    pub width: usize,
    /// Residual blocks in the branch.
    pub blocks: usize,
    pub trunk_width: usize,
    /// Inner-product dimension shared by branch and trunk.
    pub p: usize,
    pub activation: Activation,
    pub eps: f64,
    pub alpha_max: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            width: 8,
            blocks: 2,
            trunk_width: 8,
            p: 8,
            activation: Activation::Tanh,
            eps: 1e-6,
            alpha_max: 0.5,
        }
    }
}

/// One entry of the shape table: a `rows × cols` block at `offset`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Layer {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const INPUTS: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    cfg: NetConfig,
    layers: Vec<Layer>,
    count: usize,
}

// layer indices in the shape table
const LIFT_W: usize = 0;
const LIFT_B: usize = 1;

impl Network {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        if cfg.width == 0 || cfg.trunk_width == 0 || cfg.p == 0 {
            return Err(Error::InvalidInput("network widths must be positive".into()));
        }
        if !(cfg.eps > 0.0) || !(cfg.alpha_max > 0.0) {
            return Err(Error::InvalidInput(
                "normalization eps and alpha_max must be positive".into(),
            ));
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            layers.push(Layer {
                name,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };
        let (w, p, tw) = (cfg.width, cfg.p, cfg.trunk_width);
        push("branch.lift.w".into(), w, INPUTS);
        push("branch.lift.b".into(), w, 1);
        for k in 0..cfg.blocks {
            push(format!("branch.block{k}.w"), w, w);
            push(format!("branch.block{k}.b"), w, 1);
        }
        push("branch.head.w".into(), INPUTS * p, w);
        push("branch.head.b".into(), INPUTS * p, 1);
        push("trunk.hidden.w".into(), tw, 3);
        push("trunk.hidden.b".into(), tw, 1);
        push("trunk.out.w".into(), p, tw);
        push("trunk.out.b".into(), p, 1);
        Ok(Network {
            cfg,
            layers,
            count: offset,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.count
    }

    pub fn shape_table(&self) -> &[Layer] {
        &self.layers
    }

    fn block(&self, k: usize) -> (usize, usize) {
        (2 + 2 * k, 3 + 2 * k)
    }

    fn head(&self) -> (usize, usize) {
        let b = 2 + 2 * self.cfg.blocks;
        (b, b + 1)
    }

    fn trunk_layers(&self) -> [usize; 4] {
        let b = 4 + 2 * self.cfg.blocks;
        [b, b + 1, b + 2, b + 3]
    }

    /// Seeded initialization: uniform Glorot weights, zero biases, head
    /// weights scaled down so the initial correction is small.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.count];
        let (head_w, _) = self.head();
        for (idx, l) in self.layers.iter().enumerate() {
            if l.cols == 1 && l.name.ends_with(".b") {
                continue;
            }
            let limit = (6.0 / (l.rows + l.cols) as f64).sqrt();
            let scale = if idx == head_w { 0.1 } else { 1.0 };
            for v in &mut params[l.offset..l.offset + l.len()] {
                *v = scale * limit * rng.random_range(-1.0..1.0);
            }
        }
        params
    }

    fn dense<T: Real>(&self, params: &[T], w: usize, b: usize, x: &[T], act: bool) -> Vec<T> {
        let (lw, lb) = (&self.layers[w], &self.layers[b]);
        (0..lw.rows)
            .map(|r| {
                let row = &params[lw.offset + r * lw.cols..lw.offset + (r + 1) * lw.cols];
                let y = T::affine(row, x, params[lb.offset + r]);
                if act {
                    self.cfg.activation.apply(y)
                } else {
                    y
                }
            })
            .collect()
    }

    fn check(layer: usize, xs: &[impl Real]) -> Result<()> {
        if xs.iter().all(|x| x.value().is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { layer })
        }
    }

    /// Trunk features for one set of stencil angles.
    pub fn trunk<T: Real>(&self, params: &[T], theta: &[f64; 3]) -> Vec<T> {
        let [hw, hb, ow, ob] = self.trunk_layers();
        let th = theta.map(T::cst);
        let h = self.dense(params, hw, hb, &th, true);
        self.dense(params, ow, ob, &h, false)
    }

    /// Correction coefficients for one interior cell.
    pub fn forward<T: Real>(&self, params: &[T], du: &[[T; 4]; 3], theta: &[f64; 3]) -> Result<Alpha<T>> {
        if params.len() != self.count {
            return Err(Error::SizeMismatch {
                expected: self.count,
                found: params.len(),
            });
        }
        let trunk = self.trunk(params, theta);
        self.forward_with_trunk(params, du, &trunk)
    }

    fn forward_with_trunk<T: Real>(&self, params: &[T], du: &[[T; 4]; 3], trunk: &[T]) -> Result<Alpha<T>> {
        let x: Vec<T> = du.iter().flatten().copied().collect();
        let n = INPUTS as f64;
        let mean = T::sum(&x) / n;
        let centered: Vec<T> = x.iter().map(|&v| v - mean).collect();
        let sq: Vec<T> = centered.iter().map(|&c| c * c).collect();
        let var = T::sum(&sq) / n;
        let inv = (var + self.cfg.eps).sqrt();
        let xn: Vec<T> = centered.iter().map(|&c| c / inv).collect();

        let mut h = self.dense(params, LIFT_W, LIFT_B, &xn, true);
        Self::check(0, &h)?;
        for k in 0..self.cfg.blocks {
            let (w, b) = self.block(k);
            let r = self.dense(params, w, b, &h, true);
            for (hv, rv) in h.iter_mut().zip(r) {
                *hv += rv;
            }
            Self::check(k + 1, &h)?;
        }
        let (hw, hb) = self.head();
        let feats = self.dense(params, hw, hb, &h, false);
        Self::check(self.cfg.blocks + 1, &feats)?;
        Self::check(self.cfg.blocks + 2, trunk)?;

        let p = self.cfg.p;
        let gate = var / (var + self.cfg.eps);
        let amax = self.cfg.alpha_max;
        let mut alpha = [[T::zero(); 4]; 3];
        for o in 0..INPUTS {
            let raw = T::affine(&feats[o * p..(o + 1) * p], trunk, T::zero());
            alpha[o / 4][o % 4] = (gate * raw / amax).tanh() * amax;
        }
        Self::check(self.cfg.blocks + 3, alpha.as_flattened())?;
        Ok(alpha)
    }

    /// Correction field for a whole mesh; boundary-adjacent cells get zeros.
    pub fn alpha_field<T: Real>(
        &self,
        mesh: &Mesh,
        params: &[T],
        u: &[Prim<T>],
        nb: &[[Prim<T>; 3]],
    ) -> Result<Vec<Alpha<T>>> {
        if params.len() != self.count {
            return Err(Error::SizeMismatch {
                expected: self.count,
                found: params.len(),
            });
        }
        (0..mesh.num_cells())
            .map(|i| match mesh.stencil_angles(i) {
                None => Ok([[T::zero(); 4]; 3]),
                Some(theta) => {
                    let trunk = self.trunk(params, &theta);
                    self.forward_with_trunk(params, &local_differences(mesh, i, &u[i], &nb[i]), &trunk)
                }
            })
            .collect()
    }

    pub fn provider<'a, T: Real>(&'a self, params: &'a [T]) -> Correction<'a, T> {
        Correction { net: self, params }
    }
}

/// Network plus parameters, usable by the solver.
pub struct Correction<'a, T> {
    pub net: &'a Network,
    pub params: &'a [T],
}

impl<T: Real> AlphaProvider<T> for Correction<'_, T> {
    fn alpha(&self, mesh: &Mesh, u: &[Prim<T>], nb: &[[Prim<T>; 3]]) -> Result<Vec<Alpha<T>>> {
        self.net.alpha_field(mesh, self.params, u, nb)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GFNN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout (little-endian): magic `GFNN`, `u32` version,
/// hyper-parameters (`u32` activation, `f64` eps, `f64` alpha_max),
/// `u32` layer count, per layer (`u32` name length, name bytes, `u64` rows,
/// `u64` cols, `u64` offset), `u64` parameter count, raw `f64` parameters.
pub fn save_params(out: &mut impl Write, net: &Network, params: &[f64]) -> Result<()> {
    if params.len() != net.num_params() {
        return Err(Error::SizeMismatch {
            expected: net.num_params(),
            found: params.len(),
        });
    }
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    b.extend_from_slice(&net.cfg.activation.code().to_le_bytes());
    b.extend_from_slice(&net.cfg.eps.to_le_bytes());
    b.extend_from_slice(&net.cfg.alpha_max.to_le_bytes());
    b.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for l in &net.layers {
        b.extend_from_slice(&(l.name.len() as u32).to_le_bytes());
        b.extend_from_slice(l.name.as_bytes());
        for v in [l.rows, l.cols, l.offset] {
            b.extend_from_slice(&(v as u64).to_le_bytes());
        }
    }
    b.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        b.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&b)?;
    Ok(())
}

fn take<const N: usize>(input: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    input
        .read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn take_u64(input: &mut impl Read) -> Result<usize> {
    Ok(u64::from_le_bytes(take(input)?) as usize)
}

/// Load a checkpoint, rebuilding the network from its shape table.
pub fn load_params(input: &mut impl Read) -> Result<(Network, Vec<f64>)> {
    if &take::<4>(input)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(input)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let activation = Activation::from_code(u32::from_le_bytes(take(input)?))?;
    let eps = f64::from_le_bytes(take(input)?);
    let alpha_max = f64::from_le_bytes(take(input)?);
    let n_layers = u32::from_le_bytes(take(input)?) as usize;
    if n_layers > 10_000 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let len = u32::from_le_bytes(take(input)?) as usize;
        if len > 256 {
            return Err(Error::Format("implausible layer name".into()));
        }
        let mut name = vec![0u8; len];
        input
            .read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("bad layer name".into()))?;
        layers.push(Layer {
            name,
            rows: take_u64(input)?,
            cols: take_u64(input)?,
            offset: take_u64(input)?,
        });
    }
    if layers.len() < 8 || (layers.len() - 8) % 2 != 0 {
        return Err(Error::Format(format!("shape table has {} entries", layers.len())));
    }
    let blocks = (layers.len() - 8) / 2;
    let width = layers[LIFT_W].rows;
    let trunk_width = layers[layers.len() - 4].rows;
    let p = layers[layers.len() - 2].rows;
    let net = Network::new(NetConfig {
        width,
        blocks,
        trunk_width,
        p,
        activation,
        eps,
        alpha_max,
    })?;
    if net.layers != layers {
        return Err(Error::Format(
            "shape table does not match the network architecture".into(),
        ));
    }
    let count = take_u64(input)?;
    if count != net.num_params() {
        return Err(Error::SizeMismatch {
            expected: net.num_params(),
            found: count,
        });
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(f64::from_le_bytes(take(input)?));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Format("checkpoint holds non-finite parameters".into()));
    }
    Ok((net, params))
}
