//! Reverse-mode automatic differentiation on a scalar tape.
//!
//! Every numerical kernel in this crate is generic over [`Real`], so the same
//! code runs either on plain `f64` or on [`Var`], a traced scalar that records
//! each operation on a thread-local [`Tape`]. A tape is a Wengert list: node
//! `k` stores its parents together with the local partial derivatives, which
//! makes the backward sweep a single reverse pass.
//!
//! Non-smooth primitives (`max`, `min`, `abs`, value comparisons) differentiate
//! the branch taken during recording. At exact ties `max`/`min` pick the first
//! argument.

use std::cell::RefCell;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

/// Scalar type the solver, the network and the losses are written against.
pub trait Real:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// A value that carries no derivative information.
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    /// Larger of the two; the first argument wins ties.
    #[inline]
    fn max(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }

    /// Smaller of the two; the first argument wins ties.
    #[inline]
    fn min(self, other: Self) -> Self {
        if self.value() <= other.value() {
            self
        } else {
            other
        }
    }

    /// `bias + Σ w_k x_k`.
    #[inline]
    fn affine(weights: &[Self], xs: &[Self], bias: Self) -> Self {
        debug_assert_eq!(weights.len(), xs.len());
        let mut acc = bias;
        for (&w, &x) in weights.iter().zip(xs) {
            acc += w * x;
        }
        acc
    }

    #[inline]
    fn sum(xs: &[Self]) -> Self {
        let mut acc = Self::zero();
        for &x in xs {
            acc += x;
        }
        acc
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

const CONST: u32 = u32::MAX;

/// Error raised while recording, with the index of the node that failed.
#[derive(Clone, Debug, PartialEq)]
pub struct TapeFault {
    pub op: &'static str,
    pub node: usize,
    pub operand: f64,
}

#[derive(Default)]
struct TapeData {
    // parents of node k live in parent_idx[offsets[k]..offsets[k + 1]]
    offsets: Vec<u32>,
    parent_idx: Vec<u32>,
    partial: Vec<f64>,
    fault: Option<TapeFault>,
    active: bool,
    generation: u32,
}

impl TapeData {
    fn reset(&mut self) {
        self.offsets.clear();
        self.offsets.push(0);
        self.parent_idx.clear();
        self.partial.clear();
        self.fault = None;
    }

    #[inline]
    fn push(&mut self, parents: &[(u32, f64)]) -> u32 {
        let id = self.offsets.len() as u32 - 1;
        for &(p, d) in parents {
            if p != CONST {
                self.parent_idx.push(p);
                self.partial.push(d);
            }
        }
        self.offsets.push(self.parent_idx.len() as u32);
        id
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }
}

thread_local! {
    static TAPE: RefCell<TapeData> = RefCell::new(TapeData::default());
}

/// Handle owning the recording tape of the current thread.
///
/// Only one tape may be active per thread; [`Var`]s must not outlive it.
pub struct Tape {
    generation: u32,
}

impl Tape {
    /// Start a fresh recording on this thread.
    pub fn new() -> Result<Self> {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            if t.active {
                return Err(Error::Tape("a tape is already active on this thread".into()));
            }
            t.active = true;
            t.generation = t.generation.wrapping_add(1);
            t.reset();
            Ok(Tape {
                generation: t.generation,
            })
        })
    }

    /// Register an independent variable.
    pub fn var(&self, value: f64) -> Var {
        let idx = TAPE.with(|t| t.borrow_mut().push(&[]));
        Var { val: value, idx }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        TAPE.with(|t| t.borrow().len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First recording fault, if any.
    pub fn fault(&self) -> Option<TapeFault> {
        TAPE.with(|t| t.borrow().fault.clone())
    }

    /// Adjoints of every node with respect to `output`.
    pub fn adjoints(&self, output: Var) -> Result<Vec<f64>> {
        self.adjoints_seeded(&[(output, 1.0)])
    }

    /// Reverse sweep seeded with `Σ seed_k · out_k`.
    pub fn adjoints_seeded(&self, seeds: &[(Var, f64)]) -> Result<Vec<f64>> {
        TAPE.with(|t| {
            let t = t.borrow();
            debug_assert_eq!(t.generation, self.generation);
            if let Some(f) = &t.fault {
                return Err(Error::Tape(format!("{} of {} at node {}", f.op, f.operand, f.node)));
            }
            let n = t.len();
            let mut adj = vec![0.0; n];
            for &(v, s) in seeds {
                if v.idx != CONST {
                    adj[v.idx as usize] += s;
                }
            }
            for k in (0..n).rev() {
                let a = adj[k];
                if a == 0.0 {
                    continue;
                }
                let lo = t.offsets[k] as usize;
                let hi = t.offsets[k + 1] as usize;
                for e in lo..hi {
                    adj[t.parent_idx[e] as usize] += a * t.partial[e];
                }
            }
            Ok(adj)
        })
    }

    /// Gradient of `output` with respect to the given inputs.
    pub fn gradient(&self, output: Var, inputs: &[Var]) -> Result<Vec<f64>> {
        let adj = self.adjoints(output)?;
        Ok(inputs.iter().map(|v| v.adjoint_in(&adj)).collect())
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            t.active = false;
            t.reset();
            t.offsets.shrink_to(1 << 16);
            t.parent_idx.shrink_to(1 << 16);
            t.partial.shrink_to(1 << 16);
        });
    }
}

/// Traced scalar recorded on the thread's active [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var {
    val: f64,
    idx: u32,
}

impl Var {
    #[inline]
    fn record(val: f64, parents: &[(u32, f64)]) -> Var {
        if parents.iter().all(|&(p, _)| p == CONST) {
            return Var { val, idx: CONST };
        }
        let idx = TAPE.with(|t| t.borrow_mut().push(parents));
        Var { val, idx }
    }

    fn fault(op: &'static str, operand: f64) {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            if t.fault.is_none() {
                let node = t.len();
                t.fault = Some(TapeFault { op, node, operand });
            }
        });
    }

    pub fn is_const(self) -> bool {
        self.idx == CONST
    }

    /// Adjoint of this variable in a vector produced by [`Tape::adjoints`].
    pub fn adjoint_in(self, adj: &[f64]) -> f64 {
        if self.idx == CONST {
            0.0
        } else {
            adj[self.idx as usize]
        }
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        Var::record(self.val + o.val, &[(self.idx, 1.0), (o.idx, 1.0)])
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        Var::record(self.val - o.val, &[(self.idx, 1.0), (o.idx, -1.0)])
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        Var::record(self.val * o.val, &[(self.idx, o.val), (o.idx, self.val)])
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        if o.val == 0.0 && !(self.is_const() && o.is_const()) {
            Var::fault("division by zero", o.val);
        }
        let q = self.val / o.val;
        Var::record(q, &[(self.idx, 1.0 / o.val), (o.idx, -q / o.val)])
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        Var::record(-self.val, &[(self.idx, -1.0)])
    }
}

impl Add<f64> for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: f64) -> Var {
        Var::record(self.val + o, &[(self.idx, 1.0)])
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: f64) -> Var {
        Var::record(self.val - o, &[(self.idx, 1.0)])
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: f64) -> Var {
        Var::record(self.val * o, &[(self.idx, o)])
    }
}

impl Div<f64> for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: f64) -> Var {
        if o == 0.0 && !self.is_const() {
            Var::fault("division by zero", o);
        }
        Var::record(self.val / o, &[(self.idx, 1.0 / o)])
    }
}

impl AddAssign for Var {
    #[inline]
    fn add_assign(&mut self, o: Var) {
        *self = *self + o;
    }
}

impl SubAssign for Var {
    #[inline]
    fn sub_assign(&mut self, o: Var) {
        *self = *self - o;
    }
}

impl MulAssign for Var {
    #[inline]
    fn mul_assign(&mut self, o: Var) {
        *self = *self * o;
    }
}

impl Real for Var {
    #[inline]
    fn cst(v: f64) -> Self {
        Var { val: v, idx: CONST }
    }

    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn sqrt(self) -> Self {
        if self.val <= 0.0 && !self.is_const() {
            Var::fault("sqrt of non-positive value", self.val);
        }
        let r = self.val.sqrt();
        Var::record(r, &[(self.idx, 0.5 / r)])
    }

    fn ln(self) -> Self {
        if self.val <= 0.0 && !self.is_const() {
            Var::fault("log of non-positive value", self.val);
        }
        Var::record(self.val.ln(), &[(self.idx, 1.0 / self.val)])
    }

    fn exp(self) -> Self {
        let e = self.val.exp();
        Var::record(e, &[(self.idx, e)])
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        Var::record(t, &[(self.idx, 1.0 - t * t)])
    }

    fn abs(self) -> Self {
        // zero at the kink, the symmetric difference quotient there
        let s = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        Var::record(self.val.abs(), &[(self.idx, s)])
    }

    fn affine(weights: &[Self], xs: &[Self], bias: Self) -> Self {
        debug_assert_eq!(weights.len(), xs.len());
        let mut val = bias.val;
        for (w, x) in weights.iter().zip(xs) {
            val += w.val * x.val;
        }
        let mut parents: Vec<(u32, f64)> = Vec::with_capacity(2 * xs.len() + 1);
        parents.push((bias.idx, 1.0));
        for (w, x) in weights.iter().zip(xs) {
            parents.push((w.idx, x.val));
            parents.push((x.idx, w.val));
        }
        Var::record(val, &parents)
    }

    fn sum(xs: &[Self]) -> Self {
        let mut val = 0.0;
        for x in xs {
            val += x.val;
        }
        let parents: Vec<(u32, f64)> = xs.iter().map(|x| (x.idx, 1.0)).collect();
        Var::record(val, &parents)
    }
}

/// Record `program` on a fresh tape with `params` as the independent
/// variables and return the output value together with its gradient.
pub fn record_and_backprop<F>(params: &[f64], program: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new()?;
    let vars = tape.vars(params);
    let out = program(&tape, &vars)?;
    let grad = tape.gradient(out, &vars)?;
    Ok((out.value(), grad))
}

/// Loss over a multi-step rollout, accumulated step by step.
///
/// `advance` maps a state to the next state; `step_loss` scores one
/// transition. The total loss is `Σ_k step_loss(k, w_k, w_{k+1})`.
pub trait RolloutProgram {
    type State<T: Real>: Clone;

    fn advance<T: Real>(&self, state: &Self::State<T>, params: &[T]) -> Result<Self::State<T>>;

    fn step_loss<T: Real>(&self, step: usize, prev: &Self::State<T>, next: &Self::State<T>, params: &[T]) -> Result<T>;

    /// Loss terms depending only on the parameters (added once).
    fn param_loss<T: Real>(&self, _params: &[T]) -> T {
        T::zero()
    }

    fn flatten(state: &Self::State<f64>) -> Vec<f64>;
    fn lift(flat: &[Var], like: &Self::State<f64>) -> Self::State<Var>;
    fn flatten_var(state: &Self::State<Var>) -> Vec<Var>;
}

/// Loss value, gradient and the largest tape length seen while computing them.
#[derive(Clone, Debug)]
pub struct RolloutGradient {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub peak_nodes: usize,
}

/// Differentiate a `steps`-long rollout by recording it in one piece.
pub fn rollout_grad<P: RolloutProgram>(
    program: &P,
    initial: &P::State<f64>,
    steps: usize,
    params: &[f64],
) -> Result<RolloutGradient> {
    checkpointed_rollout_grad(program, initial, steps, steps.max(1), params)
}

/// Differentiate a rollout with segment recomputation.
///
/// The forward pass keeps only the states at segment boundaries; the backward
/// pass re-records one segment at a time, seeded with the adjoint of the
/// segment's final state, so the tape never holds more than `segment` steps.
pub fn checkpointed_rollout_grad<P: RolloutProgram>(
    program: &P,
    initial: &P::State<f64>,
    steps: usize,
    segment: usize,
    params: &[f64],
) -> Result<RolloutGradient> {
    if steps == 0 {
        return Err(Error::InvalidInput("rollout needs at least one step".into()));
    }
    let segment = segment.clamp(1, steps);
    let mut checkpoints = vec![initial.clone()];
    let mut state = initial.clone();
    let starts: Vec<usize> = (0..steps).step_by(segment).collect();
    for (s, &start) in starts.iter().enumerate() {
        let end = (start + segment).min(steps);
        for _ in start..end {
            state = program.advance(&state, params)?;
        }
        if s + 1 < starts.len() {
            checkpoints.push(state.clone());
        }
    }

    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut peak = 0;
    let mut end_adjoint: Option<Vec<f64>> = None;
    for (s, &start) in starts.iter().enumerate().rev() {
        let end = (start + segment).min(steps);
        let tape = Tape::new()?;
        let pvars = tape.vars(params);
        let start_flat = P::flatten(&checkpoints[s]);
        let svars = tape.vars(&start_flat);
        let mut cur = P::lift(&svars, &checkpoints[s]);
        let mut seg_loss = Var::cst(0.0);
        for k in start..end {
            let next = program.advance(&cur, &pvars)?;
            seg_loss += program.step_loss(k, &cur, &next, &pvars)?;
            cur = next;
        }
        if s == 0 {
            seg_loss += program.param_loss(&pvars);
        }
        let mut seeds = vec![(seg_loss, 1.0)];
        if let Some(adj) = &end_adjoint {
            let out = P::flatten_var(&cur);
            seeds.extend(out.into_iter().zip(adj.iter().copied()));
        }
        let adj = tape.adjoints_seeded(&seeds)?;
        for (g, p) in grad.iter_mut().zip(&pvars) {
            *g += p.adjoint_in(&adj);
        }
        end_adjoint = Some(svars.iter().map(|v| v.adjoint_in(&adj)).collect());
        loss += seg_loss.value();
        peak = peak.max(tape.len());
    }
    Ok(RolloutGradient {
        loss,
        grad,
        peak_nodes: peak,
    })
}

/// Central finite-difference derivative of `f` at `x` along coordinate `k`.
///
/// The step is `rel_step · max(|x_k|, 1)`.
pub fn central_difference<F>(f: &F, x: &[f64], k: usize, rel_step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let h = rel_step * x[k].abs().max(1.0);
    let mut xp = x.to_vec();
    xp[k] += h;
    let fp = f(&xp)?;
    xp[k] = x[k] - h;
    let fm = f(&xp)?;
    Ok((fp - fm) / (2.0 * h))
}

/// Fourth-order central difference `(−f₂ + 8f₁ − 8f₋₁ + f₋₂)/(12h)`, same
/// step convention as [`central_difference`].
pub fn central_difference4<F>(f: &F, x: &[f64], k: usize, rel_step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let h = rel_step * x[k].abs().max(1.0);
    let mut xp = x.to_vec();
    let mut at = |d: f64| {
        xp[k] = x[k] + d;
        f(&xp)
    };
    let (f2, f1, fm1, fm2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
    Ok((-f2 + 8.0 * f1 - 8.0 * fm1 + fm2) / (12.0 * h))
}
