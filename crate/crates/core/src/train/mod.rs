//! Losses, optimizer and the training loop of the gradient correction.
//!
//! Each training sample is one ML-corrected coarse step from a projected
//! reference state, scored against the projected reference one step later:
//!
//! `L = 100·‖u^ML − u^ref‖₂/‖u^ref‖₂ + λ_TVD L_TVD + λ_ent L_ent + λ_reg ‖p‖₁`

pub mod dataset;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{central_difference4, rollout_grad, Real, RolloutProgram, Var};
use crate::error::{Error, Result};
use crate::euler::{Cons, Prim};
use crate::mesh::Mesh;
use crate::mlcorr::Network;
use crate::recon::{gradient_lsq, neighbor_values};
use crate::solver::{AlphaProvider, Solver};

pub use dataset::{
    generate_dataset, read_dataset, write_dataset, Dataset, DatasetSpec, Family, FamilyCounts, InitialCondition,
    Trajectory,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub tvd: f64,
    pub ent: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            tvd: 1e-6,
            ent: 1e5,
            reg: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tvd", self.tvd), ("ent", self.ent), ("reg", self.reg)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "loss weight {name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Learning rate factor applied once per epoch.
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Save a checkpoint every this many epochs (the last epoch always).
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Weight the supervision norm by cell area.
    pub area_weighted: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 6e-5,
            decay: 0.9,
            epochs: 30,
            batch_size: 1,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.0,
            checkpoint_every: 1,
            seed: 0,
            area_weighted: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(format!("lr must be nonnegative, got {}", self.lr)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {b}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidInput("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Loss total and its four unweighted components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts<T> {
    pub total: T,
    pub sup: T,
    pub ent: T,
    pub tvd: T,
    pub reg: T,
}

impl LossParts<f64> {
    fn add(&mut self, o: &LossParts<f64>) {
        self.total += o.total;
        self.sup += o.sup;
        self.ent += o.ent;
        self.tvd += o.tvd;
        self.reg += o.reg;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.sup *= s;
        self.ent *= s;
        self.tvd *= s;
        self.reg *= s;
    }
}

/// `√s`, with the zero subgradient at `s = 0`.
fn safe_sqrt<T: Real>(s: T) -> T {
    if s.value() > 0.0 {
        s.sqrt()
    } else {
        T::zero()
    }
}

/// `100·‖u − u_ref‖₂ / ‖u_ref‖₂` over all cells and primitives jointly,
/// optionally weighted by `weights` per cell.
pub fn loss_sup<T: Real>(u: &[Prim<T>], u_ref: &[Prim], weights: Option<&[f64]>) -> Result<T> {
    if u.len() != u_ref.len() {
        return Err(Error::SizeMismatch {
            expected: u_ref.len(),
            found: u.len(),
        });
    }
    let mut num = T::zero();
    let mut den = 0.0;
    for (i, (a, r)) in u.iter().zip(u_ref).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        for v in 0..4 {
            let d = a.0[v] - r.0[v];
            num += d * d * w;
            den += r.0[v] * r.0[v] * w;
        }
    }
    if den == 0.0 {
        return Err(Error::InvalidInput("reference field has zero norm".into()));
    }
    Ok(safe_sqrt(num) * (100.0 / den.sqrt()))
}

/// `Σ_i max(0, |∇u_i^{t+Δt}| − |∇u_i^t|)` with least-squares gradients and
/// the Frobenius norm of the 4×2 gradient.
pub fn loss_tvd<T: Real>(solver: &Solver, prev: &[Prim<T>], next: &[Prim<T>]) -> Result<T> {
    let mesh = solver.mesh();
    let norms = |u: &[Prim<T>]| -> Result<Vec<T>> {
        let (nb, _) = neighbor_values(mesh, u, solver.boundary(), solver.gas());
        Ok(gradient_lsq(mesh, u, &nb)?
            .iter()
            .map(|g| {
                let mut s = T::zero();
                for row in g {
                    s += row[0] * row[0] + row[1] * row[1];
                }
                safe_sqrt(s)
            })
            .collect())
    };
    let (a, b) = (norms(prev)?, norms(next)?);
    let mut acc = T::zero();
    for (a, b) in a.into_iter().zip(b) {
        acc += (b - a).max(T::zero());
    }
    Ok(acc)
}

/// `|C_i| ∇·q_i` by Green-Gauss with arithmetic face averages of `q`.
fn entropy_flux_divergence<T: Real>(solver: &Solver, u: &[Prim<T>]) -> (Vec<T>, Vec<T>) {
    let mesh = solver.mesh();
    let gas = solver.gas();
    let (nb, _) = neighbor_values(mesh, u, solver.boundary(), gas);
    let mut eta = Vec::with_capacity(u.len());
    let mut div = Vec::with_capacity(u.len());
    for (i, ui) in u.iter().enumerate() {
        let (e, qi) = gas.entropy_pair_prim(ui);
        let area = mesh.cells[i].area;
        let mut d = T::zero();
        for (k, w) in mesh.gg_weights(i).iter().enumerate() {
            let (_, qk) = gas.entropy_pair_prim(&nb[i][k]);
            d += ((qi[0] + qk[0]) * w[0] + (qi[1] + qk[1]) * w[1]) * (0.5 * area);
        }
        eta.push(e);
        div.push(d);
    }
    (eta, div)
}

/// `(1/N) Σ_i max(0, |C_i|(η^{t+Δt} − η^t) + (|C_i|Δt/2)(∇·q^{t+Δt} + ∇·q^t))²`.
pub fn loss_entropy<T: Real>(solver: &Solver, prev: &[Prim<T>], next: &[Prim<T>]) -> T {
    let mesh = solver.mesh();
    let (e0, d0) = entropy_flux_divergence(solver, prev);
    let (e1, d1) = entropy_flux_divergence(solver, next);
    let half_dt = 0.5 * solver.dt();
    let mut acc = T::zero();
    for i in 0..mesh.num_cells() {
        let r = (e1[i] - e0[i]) * mesh.cells[i].area + (d1[i] + d0[i]) * half_dt;
        let r = r.max(T::zero());
        acc += r * r;
    }
    acc / mesh.num_cells() as f64
}

/// `‖p‖₁`.
pub fn loss_reg<T: Real>(params: &[T]) -> T {
    let mut acc = T::zero();
    for &p in params {
        acc += p.abs();
    }
    acc
}

/// Weighted sum of already computed components.
pub fn combine<T: Real>(w: &LossWeights, sup: T, ent: T, tvd: T, reg: T) -> LossParts<T> {
    LossParts {
        total: sup + tvd * w.tvd + ent * w.ent + reg * w.reg,
        sup,
        ent,
        tvd,
        reg,
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One Lion update in place. Returns `false` (and leaves everything
/// untouched) when the gradient is not finite.
#[allow(clippy::too_many_arguments)]
pub fn lion_step(
    params: &mut [f64],
    grad: &[f64],
    moment: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
) -> Result<bool> {
    if params.len() != grad.len() || params.len() != moment.len() {
        return Err(Error::SizeMismatch {
            expected: params.len(),
            found: grad.len().min(moment.len()),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        log::warn!("non-finite gradient, optimizer step skipped");
        return Ok(false);
    }
    for ((p, &g), m) in params.iter_mut().zip(grad).zip(moment.iter_mut()) {
        let c = beta1 * *m + (1.0 - beta1) * g;
        *p -= lr * (sign(c) + weight_decay * *p);
        *m = beta2 * *m + (1.0 - beta2) * g;
    }
    Ok(true)
}

/// The solver, the network and the loss weights of one training setup.
pub struct Objective<'a> {
    pub solver: &'a Solver<'a>,
    pub net: &'a Network,
    pub weights: LossWeights,
    pub area_weighted: bool,
}

impl<'a> Objective<'a> {
    pub fn new(solver: &'a Solver<'a>, net: &'a Network, weights: LossWeights) -> Result<Self> {
        weights.validate()?;
        if !solver.config().mode.is_ml() {
            return Err(Error::InvalidInput(format!(
                "training needs an ML gradient mode, got {}",
                solver.config().mode.name()
            )));
        }
        Ok(Objective {
            solver,
            net,
            weights,
            area_weighted: false,
        })
    }

    pub fn mesh(&self) -> &'a Mesh {
        self.solver.mesh()
    }

    /// ML step from `w`; losses of the transition except the parameter term.
    pub fn transition<T: Real>(
        &self,
        params: &[T],
        w: &[Cons<T>],
        target: &[Cons],
    ) -> Result<(Vec<Cons<T>>, LossParts<T>)> {
        let provider = self.net.provider(params);
        let (next, _) = self.solver.step(w, Some(&provider as &dyn AlphaProvider<T>))?;
        let parts = self.score(w, &next, target)?;
        Ok((next, parts))
    }

    fn score<T: Real>(&self, w: &[Cons<T>], next: &[Cons<T>], target: &[Cons]) -> Result<LossParts<T>> {
        let prev = self.solver.primitives(w)?;
        let u = self.solver.primitives(next)?;
        let u_ref = self.solver.primitives(target)?;
        let areas = self.area_weighted.then(|| self.mesh().areas());
        let sup = loss_sup(&u, &u_ref, areas.as_deref())?;
        let tvd = loss_tvd(self.solver, &prev, &u)?;
        let ent = loss_entropy(self.solver, &prev, &u);
        Ok(combine(&self.weights, sup, ent, tvd, T::zero()))
    }

    /// Full loss of one sample, parameter term included.
    pub fn evaluate(&self, params: &[f64], w: &[Cons], target: &[Cons]) -> Result<LossParts<f64>> {
        let (_, p) = self.transition(params, w, target)?;
        let reg = loss_reg(params);
        Ok(combine(&self.weights, p.sup, p.ent, p.tvd, reg))
    }

    /// Loss and gradient of a rollout along `refs` (`refs[0]` is the start;
    /// `refs.len() − 1` steps).
    pub fn gradient(&self, params: &[f64], refs: &[Vec<Cons>]) -> Result<(f64, Vec<f64>)> {
        let program = Unroll { obj: self, refs };
        let g = rollout_grad(&program, &refs[0], refs.len() - 1, params)?;
        Ok((g.loss, g.grad))
    }

    /// Same loss as [`Objective::gradient`], value only.
    pub fn rollout_loss(&self, params: &[f64], refs: &[Vec<Cons>]) -> Result<f64> {
        let program = Unroll { obj: self, refs };
        let mut w = refs[0].clone();
        let mut loss = 0.0;
        for k in 0..refs.len() - 1 {
            let next = program.advance(&w, params)?;
            loss += program.step_loss(k, &w, &next, params)?;
            w = next;
        }
        Ok(loss + program.param_loss(params))
    }
}

/// Multi-step rollout against a reference sequence.
struct Unroll<'o, 'a> {
    obj: &'o Objective<'a>,
    refs: &'o [Vec<Cons>],
}

impl RolloutProgram for Unroll<'_, '_> {
    type State<T: Real> = Vec<Cons<T>>;

    fn advance<T: Real>(&self, state: &Vec<Cons<T>>, params: &[T]) -> Result<Vec<Cons<T>>> {
        let provider = self.obj.net.provider(params);
        Ok(self.obj.solver.step(state, Some(&provider as &dyn AlphaProvider<T>))?.0)
    }

    fn step_loss<T: Real>(&self, step: usize, prev: &Vec<Cons<T>>, next: &Vec<Cons<T>>, _params: &[T]) -> Result<T> {
        Ok(self.obj.score(prev, next, &self.refs[step + 1])?.total)
    }

    fn param_loss<T: Real>(&self, params: &[T]) -> T {
        loss_reg(params) * self.obj.weights.reg
    }

    fn flatten(state: &Vec<Cons>) -> Vec<f64> {
        state.iter().flat_map(|c| c.0).collect()
    }

    fn lift(flat: &[Var], _like: &Vec<Cons>) -> Vec<Cons<Var>> {
        flat.chunks_exact(4).map(|c| Cons([c[0], c[1], c[2], c[3]])).collect()
    }

    fn flatten_var(state: &Vec<Cons<Var>>) -> Vec<Var> {
        state.iter().flat_map(|c| c.0).collect()
    }
}

/// Mean loss over every pair of a set.
pub fn evaluate_set(obj: &Objective, params: &[f64], set: &[Trajectory]) -> Result<LossParts<f64>> {
    let pairs = Dataset::pairs(set);
    let mut acc = LossParts::default();
    for &(t, k) in &pairs {
        let f = &set[t].frames;
        acc.add(&obj.evaluate(params, &f[k], &f[k + 1])?);
    }
    acc.scale(1.0 / pairs.len().max(1) as f64);
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    pub train: LossParts<f64>,
    /// Learning rate used during this epoch (the initial rate on row 0).
    pub lr: f64,
    pub val_total: f64,
    pub val_sup: f64,
}

pub const HISTORY_HEADER: &str = "epoch,step,total,sup,ent,tvd,reg,lr,val_total,val_sup";

pub fn history_csv(rows: &[HistoryRow], header_comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(h) = header_comment {
        s.push_str(&format!("# {h}\n"));
    }
    s.push_str(HISTORY_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.epoch,
            r.step,
            r.train.total,
            r.train.sup,
            r.train.ent,
            r.train.tvd,
            r.train.reg,
            r.lr,
            r.val_total,
            r.val_sup
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Vec<f64>,
    pub history: Vec<HistoryRow>,
    /// Optimizer steps skipped for a non-finite gradient.
    pub skipped: usize,
}

fn eval_row(obj: &Objective, params: &[f64], data: &Dataset, epoch: usize, step: usize, lr: f64) -> Result<HistoryRow> {
    let train = evaluate_set(obj, params, &data.train)?;
    let val = if data.validation.is_empty() {
        LossParts::default()
    } else {
        evaluate_set(obj, params, &data.validation)?
    };
    if !(train.total.is_finite() && val.total.is_finite()) {
        return Err(Error::Diverged {
            epoch,
            what: format!("loss {} / validation {}", train.total, val.total),
        });
    }
    Ok(HistoryRow {
        epoch,
        step,
        train,
        lr,
        val_total: val.total,
        val_sup: val.sup,
    })
}

/// Train from `init`. Row 0 of the history evaluates the initial parameters;
/// row `e` evaluates the parameters after epoch `e`. `on_epoch` receives
/// every row with the parameters it describes (checkpointing hook).
pub fn train(
    cfg: &TrainConfig,
    obj: &Objective,
    data: &Dataset,
    init: Vec<f64>,
    mut on_epoch: impl FnMut(&HistoryRow, &[f64]) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if init.len() != obj.net.num_params() {
        return Err(Error::SizeMismatch {
            expected: obj.net.num_params(),
            found: init.len(),
        });
    }
    if obj.solver.dt().to_bits() != data.dt.to_bits() {
        return Err(Error::InvalidInput(format!(
            "solver time step {} differs from the dataset's {}",
            obj.solver.dt(),
            data.dt
        )));
    }
    let mut params = init;
    let mut moment = vec![0.0; params.len()];
    let mut pairs = Dataset::pairs(&data.train);
    let mut step = 0;
    let mut skipped = 0;
    let mut history = vec![eval_row(obj, &params, data, 0, 0, cfg.lr)?];
    on_epoch(&history[0], &params)?;
    log::info!("epoch 0: loss {:.6e}", history[0].train.total);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * cfg.decay.powi(epoch as i32);
        let mut rng = dataset::trajectory_rng(cfg.seed, epoch as u64);
        pairs.shuffle(&mut rng);
        for batch in pairs.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; params.len()];
            for &(t, k) in batch {
                let refs = &data.train[t].frames[k..k + 2];
                let (loss, g) = obj.gradient(&params, refs)?;
                log::debug!("step {step} sample ({t},{k}) loss {loss:.6e}");
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            if lion_step(
                &mut params,
                &grad,
                &mut moment,
                lr,
                cfg.beta1,
                cfg.beta2,
                cfg.weight_decay,
            )? {
                step += 1;
            } else {
                skipped += 1;
            }
        }
        let row = eval_row(obj, &params, data, epoch + 1, step, lr)?;
        log::info!(
            "epoch {}: loss {:.6e} (sup {:.6e}) val {:.6e}",
            row.epoch,
            row.train.total,
            row.train.sup,
            row.val_total
        );
        on_epoch(&row, &params)?;
        history.push(row);
    }
    Ok(TrainOutcome {
        params,
        history,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub index: usize,
    pub ad: f64,
    pub fd: f64,
    pub rel: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub loss: f64,
    pub params: usize,
    pub passed: usize,
    /// Mismatches explained by a branch switch inside the difference stencil:
    /// the one-sided differences disagree and one of them matches the
    /// derivative of the taken branch.
    pub kinks: Vec<GradcheckEntry>,
    /// Mismatches that go away with a ten times larger step: the difference
    /// quotient was dominated by rounding in the loss.
    pub noisy: Vec<GradcheckEntry>,
    pub failures: Vec<GradcheckEntry>,
    pub max_rel: f64,
}

impl GradcheckReport {
    pub fn fraction_passed(&self) -> f64 {
        self.passed as f64 / self.params.max(1) as f64
    }

    pub fn ok(&self, min_fraction: f64) -> bool {
        self.failures.is_empty() && self.fraction_passed() >= min_fraction
    }
}

/// Compare the reverse-mode gradient of the rollout loss along `refs` with
/// fourth-order central differences, parameter by parameter.
///
/// The relative error is `|ad − fd| / max(|ad|, |fd|, floor)` with
/// `floor = 1e-6 · max_k |ad_k|`, so parameters with a negligible influence
/// are compared on the scale of the whole gradient. A mismatch that
/// disappears when the step shrinks by 10 or 100 comes from a branch switch
/// inside the wider stencil and is reported as a kink; one that disappears
/// when the step grows by 10 is reported as rounding noise.
pub fn gradcheck(
    obj: &Objective,
    params: &[f64],
    refs: &[Vec<Cons>],
    rel_step: f64,
    tol: f64,
) -> Result<GradcheckReport> {
    if refs.len() < 2 {
        return Err(Error::InvalidInput("gradient check needs at least one step".into()));
    }
    let (loss, ad) = obj.gradient(params, refs)?;
    let f = |p: &[f64]| obj.rollout_loss(p, refs);
    let gmax = ad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-6 * gmax).max(f64::MIN_POSITIVE);
    let rel_err = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(floor);
    let mut report = GradcheckReport {
        loss,
        params: params.len(),
        passed: 0,
        kinks: Vec::new(),
        noisy: Vec::new(),
        failures: Vec::new(),
        max_rel: 0.0,
    };
    for k in 0..params.len() {
        let fd = central_difference4(&f, params, k, rel_step)?;
        let rel = rel_err(ad[k], fd);
        report.max_rel = report.max_rel.max(rel);
        let entry = GradcheckEntry {
            index: k,
            ad: ad[k],
            fd,
            rel,
        };
        if rel < tol {
            report.passed += 1;
            continue;
        }
        let agrees =
            |step: f64| -> Result<bool> { Ok(rel_err(ad[k], central_difference4(&f, params, k, step)?) < tol) };
        if agrees(rel_step / 10.0)? || agrees(rel_step / 100.0)? {
            report.kinks.push(entry);
        } else if agrees(rel_step * 10.0)? {
            report.noisy.push(entry);
        } else {
            report.failures.push(entry);
        }
    }
    Ok(report)
}
