use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fvml::bc::BoundaryData;
use fvml::bench::{mirror_asymmetry, riemann_case, run_gain, timing_csv, GainSetup, Model, Study};
use fvml::io::{field_hash, sha256_hex, write_frame};
use fvml::mesh::{refine_uniform, write_ascii};
use fvml::mlcorr::{load_params, save_params, Network};
use fvml::solver::{rollout, Solver, StepConfig};
use fvml::train::dataset::trajectory_rng;
use fvml::train::{
    generate_dataset, gradcheck as check, history_csv, read_dataset, write_dataset, Dataset, InitialCondition,
    Objective,
};
use fvml::{Mesh, Prim};

use crate::config::{InitialSpec, RunConfig};
use crate::{Failure, EXIT_GRADCHECK, EXIT_NUMERIC};

pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub output: PathBuf,
    /// Directory of the configuration file; relative mesh paths start here.
    pub base: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub skip_gradcheck: bool,
}

impl Context {
    fn dir(&self, name: &str) -> Result<PathBuf, Failure> {
        let d = self.output.join(name);
        fs::create_dir_all(&d).map_err(|e| Failure::io(&d, e))?;
        Ok(d)
    }

    fn mesh(&self) -> Result<Mesh, Failure> {
        self.cfg.mesh.build(&self.base)
    }

    fn comment(&self) -> String {
        format!("config {}", self.hash)
    }

    /// Explicit `--checkpoint`, else the last trained model if there is one.
    fn model(&self) -> Result<Option<(Network, Vec<f64>, String)>, Failure> {
        let path = match &self.checkpoint {
            Some(p) => p.clone(),
            None => {
                let p = self.output.join("train").join("model.ckpt");
                if !p.exists() {
                    return Ok(None);
                }
                p
            }
        };
        let bytes = fs::read(&path).map_err(|e| Failure::io(&path, e))?;
        let (net, params) =
            load_params(&mut bytes.as_slice()).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        log::info!("loaded {} ({} parameters)", path.display(), params.len());
        Ok(Some((net, params, sha256_hex(&bytes))))
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn write_toml(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    write(path, toml::to_string(value).expect("sidecar serializes"))
}

fn read_data(ctx: &Context) -> Result<(Dataset, Mesh), Failure> {
    let dir = ctx.output.join("dataset");
    if !dir.join("manifest.toml").exists() {
        return Err(Failure::config(format!(
            "no dataset in {} (run `fvml dataset` first)",
            dir.display()
        )));
    }
    Ok(read_dataset(&dir)?)
}

/// Single-step solver on the dataset mesh. The boundary data come from the
/// first training frame.
fn training_solver<'m>(ctx: &Context, mesh: &'m Mesh, data: &Dataset) -> Result<Solver<'m>, Failure> {
    let cfg = StepConfig {
        co: data.spec.co,
        mode: ctx.cfg.step.mode.with_ml(),
        ..ctx.cfg.step
    };
    let gas = cfg.gas()?;
    let first = &data.train[0].frames[0];
    let u0 = first
        .iter()
        .enumerate()
        .map(|(i, w)| gas.cons_to_prim(w, i))
        .collect::<fvml::Result<Vec<Prim>>>()?;
    let bc = BoundaryData::resolve(mesh, ctx.cfg.bc.freestream(), ctx.cfg.bc.back_pressure, &u0)?;
    Ok(Solver::with_dt(mesh, cfg, bc, data.dt)?)
}

pub fn mesh(ctx: &Context) -> Result<(), Failure> {
    let mesh = ctx.mesh()?;
    let dir = ctx.dir("mesh")?;
    write(
        &dir.join("mesh.txt"),
        format!("# {}\n{}", ctx.comment(), write_ascii(&mesh)),
    )?;
    println!(
        "mesh: {} cells, {} faces, area {:.6}",
        mesh.num_cells(),
        mesh.faces.len(),
        mesh.total_area()
    );
    Ok(())
}

pub fn dataset(ctx: &Context) -> Result<(), Failure> {
    let coarse = ctx.mesh()?;
    let (fine, map) = refine_uniform(&coarse)?;
    let reference = StepConfig {
        mode: ctx.cfg.step.mode.baseline(),
        ..ctx.cfg.step
    };
    let data = generate_dataset(&ctx.cfg.dataset, &coarse, &fine, &map, &reference)?;
    let dir = ctx.output.join("dataset");
    write_dataset(&dir, &data, &coarse, &ctx.hash)?;
    println!(
        "dataset: {} training and {} validation trajectories on {} cells, dt {:e}, {} substeps",
        data.train.len(),
        data.validation.len(),
        coarse.num_cells(),
        data.dt,
        data.substeps
    );
    Ok(())
}

/// What `train` checks before it starts.
#[derive(Debug, Serialize, Deserialize)]
struct GradcheckStatus {
    config_hash: String,
    mesh_sha256: String,
    network_sha256: String,
    passed: bool,
    fraction_passed: f64,
    ties: usize,
    rounding: usize,
    failures: usize,
    max_rel: f64,
}

fn network_hash(ctx: &Context) -> String {
    let key = (ctx.cfg.network, ctx.cfg.step.mode.with_ml(), ctx.cfg.loss);
    sha256_hex(format!("{key:?}").as_bytes())
}

pub fn gradcheck(ctx: &Context) -> Result<(), Failure> {
    let (data, mesh) = read_data(ctx)?;
    let g = &ctx.cfg.gradcheck;
    let traj = data.train.get(g.trajectory).ok_or_else(|| {
        Failure::config(format!(
            "gradcheck.trajectory {} out of range ({} trajectories)",
            g.trajectory,
            data.train.len()
        ))
    })?;
    let solver = training_solver(ctx, &mesh, &data)?;
    let net = Network::new(ctx.cfg.network)?;
    let obj = Objective::new(&solver, &net, ctx.cfg.loss)?;
    let params = net.init_params(ctx.cfg.train.seed);
    let n = (g.steps + 1).min(traj.frames.len());
    let report = check(&obj, &params, &traj.frames[..n], g.rel_step, g.tol)?;

    let dir = ctx.dir("gradcheck")?;
    let mut csv = format!("# {}\nindex,class,ad,fd,rel\n", ctx.comment());
    for (class, set) in [
        ("tie", &report.kinks),
        ("rounding", &report.noisy),
        ("fail", &report.failures),
    ] {
        for e in set {
            csv.push_str(&format!("{},{class},{:?},{:?},{:?}\n", e.index, e.ad, e.fd, e.rel));
        }
    }
    write(&dir.join("report.csv"), csv)?;
    let status = GradcheckStatus {
        config_hash: ctx.hash.clone(),
        mesh_sha256: sha256_hex(write_ascii(&mesh).as_bytes()),
        network_sha256: network_hash(ctx),
        passed: report.ok(g.min_fraction),
        fraction_passed: report.fraction_passed(),
        ties: report.kinks.len(),
        rounding: report.noisy.len(),
        failures: report.failures.len(),
        max_rel: report.max_rel,
    };
    write_toml(&dir.join("status.toml"), &status)?;
    println!(
        "gradcheck: {}/{} parameters agree, {} ties, {} rounding, {} failures",
        report.passed, report.params, status.ties, status.rounding, status.failures
    );
    if !status.passed {
        return Err(Failure {
            code: EXIT_GRADCHECK,
            message: format!(
                "gradient check failed: {:.4} passed (need {}), {} failures",
                status.fraction_passed, g.min_fraction, status.failures
            ),
        });
    }
    Ok(())
}

fn require_gradcheck(ctx: &Context, mesh: &Mesh) -> Result<(), Failure> {
    let path = ctx.output.join("gradcheck").join("status.toml");
    let refuse = |why: String| Failure {
        code: EXIT_GRADCHECK,
        message: format!("{why}; run `fvml gradcheck` or pass --skip-gradcheck"),
    };
    let text = fs::read_to_string(&path).map_err(|_| refuse(format!("no gradient check at {}", path.display())))?;
    let status: GradcheckStatus =
        toml::from_str(&text).map_err(|e| refuse(format!("unreadable {}: {e}", path.display())))?;
    if !status.passed {
        return Err(refuse("the last gradient check failed".into()));
    }
    if status.mesh_sha256 != sha256_hex(write_ascii(mesh).as_bytes()) || status.network_sha256 != network_hash(ctx) {
        return Err(refuse(
            "the gradient check was run for a different mesh or network".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct ModelSidecar<'a> {
    config_hash: &'a str,
    dataset_mesh_sha256: String,
    epochs: usize,
    skipped_batches: usize,
    gradcheck_skipped: bool,
}

pub fn train(ctx: &Context) -> Result<(), Failure> {
    let (data, mesh) = read_data(ctx)?;
    if ctx.skip_gradcheck {
        log::warn!("training without a gradient check");
    } else {
        require_gradcheck(ctx, &mesh)?;
    }
    let solver = training_solver(ctx, &mesh, &data)?;
    let net = Network::new(ctx.cfg.network)?;
    let obj = Objective::new(&solver, &net, ctx.cfg.loss)?;
    let init = match &ctx.checkpoint {
        Some(_) => {
            let (loaded, params, _) = ctx.model()?.expect("checkpoint given");
            if loaded.config() != net.config() {
                return Err(Failure::config("checkpoint network differs from [network]"));
            }
            params
        }
        None => net.init_params(ctx.cfg.train.seed),
    };
    let dir = ctx.dir("train")?;
    let tc = &ctx.cfg.train;
    let save = |path: &Path, params: &[f64]| -> Result<(), Failure> {
        let mut buf = Vec::new();
        save_params(&mut buf, &net, params)?;
        write(path, buf)
    };
    let mut io_error = None;
    let outcome = fvml::train::train(tc, &obj, &data, init, |row, params| {
        log::info!(
            "epoch {} loss {:.6} sup {:.6} val_sup {:.6}",
            row.epoch,
            row.train.total,
            row.train.sup,
            row.val_sup
        );
        let every = tc.checkpoint_every.max(1);
        if row.epoch > 0 && (row.epoch % every == 0 || row.epoch == tc.epochs) {
            if let Err(e) = save(&dir.join(format!("epoch_{:04}.ckpt", row.epoch)), params) {
                io_error = Some(e);
            }
        }
        Ok(())
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    save(&dir.join("model.ckpt"), &outcome.params)?;
    write(
        &dir.join("history.csv"),
        history_csv(&outcome.history, Some(&ctx.comment())),
    )?;
    write_toml(
        &dir.join("model.toml"),
        &ModelSidecar {
            config_hash: &ctx.hash,
            dataset_mesh_sha256: sha256_hex(write_ascii(&mesh).as_bytes()),
            epochs: tc.epochs,
            skipped_batches: outcome.skipped,
            gradcheck_skipped: ctx.skip_gradcheck,
        },
    )?;
    let first = &outcome.history[0];
    let last = outcome.history.last().expect("history has row 0");
    println!(
        "train: {} epochs, loss {:.6} -> {:.6}, val sup {:.6} -> {:.6}",
        tc.epochs, first.train.total, last.train.total, first.val_sup, last.val_sup
    );
    Ok(())
}

fn initial_field(spec: &InitialSpec, mesh: &Mesh) -> Result<Vec<Prim>, Failure> {
    Ok(match spec {
        InitialSpec::Riemann { case } => riemann_case(*case)?.on_mesh(mesh),
        InitialSpec::Uniform { state } => vec![Prim(*state); mesh.num_cells()],
        InitialSpec::Sample {
            family,
            seed,
            max_amplitude,
        } => InitialCondition::sample(*family, &mut trajectory_rng(*seed, 0), *max_amplitude).on_mesh(mesh),
    })
}

#[derive(Serialize)]
struct FrameEntry {
    step: usize,
    time: f64,
    file: String,
    field_sha256: String,
}

#[derive(Serialize)]
struct SimulateManifest {
    config_hash: String,
    mode: String,
    checkpoint_sha256: Option<String>,
    cells: usize,
    dt: f64,
    frames: Vec<FrameEntry>,
}

pub fn simulate(ctx: &Context) -> Result<(), Failure> {
    let mesh = ctx.mesh()?;
    let model = match &ctx.checkpoint {
        Some(_) => ctx.model()?,
        None => None,
    };
    let mode = match model {
        Some(_) => ctx.cfg.step.mode.with_ml(),
        None => ctx.cfg.step.mode.baseline(),
    };
    let cfg = StepConfig { mode, ..ctx.cfg.step };
    let gas = cfg.gas()?;
    let u0 = initial_field(&ctx.cfg.simulate.initial, &mesh)?;
    if let Some(i) = u0.iter().position(|u| !fvml::euler::prim_admissible(u)) {
        return Err(Failure::config(format!("initial state in cell {i} is not admissible")));
    }
    let bc = BoundaryData::resolve(&mesh, ctx.cfg.bc.freestream(), ctx.cfg.bc.back_pressure, &u0)?;
    let solver = Solver::new(&mesh, cfg, bc)?;
    let w0 = u0.iter().map(|u| gas.prim_to_cons(u)).collect();
    let provider = model.as_ref().map(|(net, params, _)| net.provider(params.as_slice()));
    let sim = &ctx.cfg.simulate;
    let record = rollout(
        &solver,
        w0,
        sim.steps,
        sim.save_every,
        provider.as_ref().map(|p| p as _),
    )?;

    let dir = ctx.dir("simulate")?;
    let mut frames = Vec::new();
    for f in &record.frames {
        let file = format!("frame_{:06}.fvmf", f.step);
        let mut buf = Vec::new();
        write_frame(&mut buf, f.time, &f.w)?;
        write(&dir.join(&file), buf)?;
        frames.push(FrameEntry {
            step: f.step,
            time: f.time,
            file,
            field_sha256: field_hash(&f.w),
        });
    }
    write(
        &dir.join("diagnostics.csv"),
        record.diagnostics_csv(Some(&ctx.comment())),
    )?;
    write_toml(
        &dir.join("manifest.toml"),
        &SimulateManifest {
            config_hash: ctx.hash.clone(),
            mode: mode.name().into(),
            checkpoint_sha256: model.as_ref().map(|m| m.2.clone()),
            cells: mesh.num_cells(),
            dt: solver.dt(),
            frames,
        },
    )?;
    let last = record.last().expect("frame 0 is always kept");
    println!(
        "simulate: {} {} steps to t = {:.6}, final field {}",
        mode.name(),
        last.step,
        last.time,
        field_hash(&last.w)
    );
    Ok(())
}

pub fn bench(ctx: &Context) -> Result<(), Failure> {
    let b = &ctx.cfg.bench;
    if b.gain.is_none() && b.convergence.is_none() && b.timing.is_none() {
        return Err(Failure::config(
            "nothing to run: add [bench.gain], [bench.convergence] or [bench.timing]",
        ));
    }
    let loaded = ctx.model()?;
    let needs_model = b.gain.is_some()
        || b.convergence.iter().flat_map(|c| &c.modes).any(|m| m.is_ml())
        || b.timing.iter().flat_map(|t| &t.modes).any(|m| m.is_ml());
    if needs_model && loaded.is_none() {
        return Err(Failure::config("no model: pass --checkpoint or run `fvml train` first"));
    }
    let model: Option<Model> = loaded.as_ref().map(|(n, p, _)| (n, p.as_slice()));
    let comment = match &loaded {
        Some((_, _, h)) => format!("{} checkpoint {h}", ctx.comment()),
        None => ctx.comment(),
    };
    let mesh = ctx.mesh()?;
    let dir = ctx.dir("bench")?;
    let mut truncated = None;

    if let Some(g) = &b.gain {
        let (net, params) = model.expect("checked above");
        let (fine, map) = refine_uniform(&mesh)?;
        let case = riemann_case(g.case)?;
        let report = run_gain(
            &GainSetup {
                coarse: &mesh,
                fine: &fine,
                map: &map,
                step: ctx.cfg.step,
                freestream: ctx.cfg.bc.freestream(),
                back_pressure: ctx.cfg.bc.back_pressure,
                net,
                params,
                steps: g.steps,
                record_every: g.record_every,
                area_weighted: g.area_weighted,
            },
            &|x| case.eval(x),
        )?;
        let mut header = format!("{comment} case {}", g.case);
        if let Some([_, base, ml]) = &report.last {
            let gas = ctx.cfg.step.gas()?;
            header.push_str(&format!(
                " mirror_asymmetry baseline {:?} ml {:?}",
                mirror_asymmetry(&mesh, &gas, base)?,
                mirror_asymmetry(&mesh, &gas, ml)?
            ));
        }
        write(&dir.join("gain.csv"), report.csv(Some(&header)))?;
        match report.tail_gain(0.25) {
            Some(t) => println!("gain: case {} mean gain over the last quarter {t:.2}%", g.case),
            None => println!("gain: case {} no rows recorded", g.case),
        }
        if let Some(why) = &report.truncated {
            truncated = Some(format!("gain run truncated: {why}"));
        }
    }

    let ics = |ids: &[usize]| -> Result<Vec<(String, Box<dyn Fn([f64; 2]) -> Prim>)>, Failure> {
        ids.iter()
            .map(|&id| {
                let c = riemann_case(id)?;
                Ok((
                    format!("case {id}"),
                    Box::new(move |x| c.eval(x)) as Box<dyn Fn([f64; 2]) -> Prim>,
                ))
            })
            .collect()
    };
    let step = StepConfig {
        mode: ctx.cfg.step.mode.baseline(),
        ..ctx.cfg.step
    };

    if let Some(c) = &b.convergence {
        let owned = ics(&c.cases)?;
        let refs: Vec<(String, &dyn Fn([f64; 2]) -> Prim)> =
            owned.iter().map(|(l, f)| (l.clone(), f.as_ref())).collect();
        let study = Study::prepare(mesh.clone(), c.levels, c.reference_depth, step, c.t_final, &refs)?;
        let report = study.convergence(&c.modes, model)?;
        write(&dir.join("convergence.csv"), report.csv(Some(&comment)))?;
        for (m, s) in &report.slopes {
            println!("convergence: {} slope {s:.3}", m.name());
        }
    }

    if let Some(t) = &b.timing {
        let owned = ics(&[t.case])?;
        let refs: Vec<(String, &dyn Fn([f64; 2]) -> Prim)> =
            owned.iter().map(|(l, f)| (l.clone(), f.as_ref())).collect();
        let study = Study::prepare(mesh.clone(), t.levels, t.reference_depth, step, t.t_final, &refs)?;
        let rows = study.timing(&t.modes, model, 0, t.repeats)?;
        write(&dir.join("timing.csv"), timing_csv(&rows, Some(&comment)))?;
        for r in &rows {
            println!(
                "timing: {} {} cells {:.4} s error {:.4e}",
                r.mode.name(),
                r.cells,
                r.wall_s,
                r.error
            );
        }
    }

    if let Some(message) = truncated {
        return Err(Failure {
            code: EXIT_NUMERIC,
            message,
        });
    }
    Ok(())
}
