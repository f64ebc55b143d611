//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test -p fvml-core --test acceptance`. Select criteria
//! with `FVML_ACCEPTANCE=1,2,5` (criterion 10 reruns 6 to 8). Failing
//! criteria are reported; the process exits nonzero on failure only when
//! `FVML_ACCEPTANCE_STRICT=1`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fvml::bc::{BackPressure, BoundaryData};
use fvml::bench::{riemann_case, run_gain, GainSetup, Study};
use fvml::euler::GasModel;
use fvml::io::sha256_hex;
use fvml::mesh::{jittered_square, refine_uniform, SideTags};
use fvml::mlcorr::{save_params, NetConfig, Network};
use fvml::recon::{gradient, gradient_lsq, neighbor_values, GradientMethod};
use fvml::solver::{totals, GradientMode, Solver, StepConfig};
use fvml::train::dataset::trajectory_rng;
use fvml::train::{
    evaluate_set, generate_dataset, gradcheck, history_csv, train, write_dataset, Dataset, DatasetSpec, Family,
    FamilyCounts, HistoryRow, InitialCondition, LossWeights, Objective, TrainConfig,
};
use fvml::{BoundaryTag, Cons, Mesh, Prim};

type Check = std::result::Result<String, String>;

struct Outcome {
    id: usize,
    name: &'static str,
    check: Check,
    secs: f64,
}

fn timed(id: usize, name: &'static str, f: impl FnOnce() -> Check) -> Outcome {
    let t = Instant::now();
    let check = f();
    Outcome {
        id,
        name,
        check,
        secs: t.elapsed().as_secs_f64(),
    }
}

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(secs: f64, limit: f64, detail: String) -> Check {
    if secs < limit {
        Ok(detail)
    } else {
        Err(format!("{detail}; runtime {secs:.1}s over {limit}s"))
    }
}

fn periodic(n: usize, seed: u64) -> Mesh {
    jittered_square(n, 0.25, seed, [0.0, 0.0], [1.0, 1.0], SideTags::periodic()).unwrap()
}

fn freestream() -> Prim {
    Prim::new(1.0, 0.0, 0.0, 1.0)
}

fn cons(gas: &GasModel, u: &[Prim]) -> Vec<Cons> {
    u.iter().map(|u| gas.prim_to_cons(u)).collect()
}

// 1

fn baseline_equivalence() -> Check {
    let t = Instant::now();
    let mesh = periodic(23, 5);
    let gas = GasModel::default();
    let net = Network::new(NetConfig::default()).unwrap();
    let zeros = vec![0.0; net.num_params()];
    let provider = net.provider(&zeros);
    let case = riemann_case(6).unwrap();
    let w0 = cons(&gas, &case.on_mesh(&mesh));
    let steps = 500;
    let mut details = Vec::new();
    for (base, ml) in [
        (GradientMode::Lsq, GradientMode::MlLsq),
        (GradientMode::Gg, GradientMode::MlGg),
    ] {
        let solver = |mode| {
            let cfg = StepConfig {
                mode,
                ..StepConfig::default()
            };
            Solver::new(&mesh, cfg, BoundaryData::new(&mesh, freestream(), 1.0).unwrap()).unwrap()
        };
        let (sb, sm) = (solver(base), solver(ml));
        let (mut wb, mut wm) = (w0.clone(), w0.clone());
        for n in 1..=steps {
            wb = sb.step(&wb, None).map_err(|e| format!("{}: {e}", base.name()))?.0;
            wm = sm
                .step(&wm, Some(&provider))
                .map_err(|e| format!("{}: {e}", ml.name()))?
                .0;
            let same = wb
                .iter()
                .zip(&wm)
                .all(|(a, b)| a.0.iter().zip(&b.0).all(|(x, y)| x.to_bits() == y.to_bits()));
            if !same {
                return Err(format!("{} and {} differ at step {n}", base.name(), ml.name()));
            }
        }
        details.push(format!("{}={}", ml.name(), base.name()));
    }
    within(
        t.elapsed().as_secs_f64(),
        60.0,
        format!(
            "{} cells, {steps} steps, bitwise: {}",
            mesh.num_cells(),
            details.join(", ")
        ),
    )
}

// 2

fn lsq_linear_exactness() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut stencils, mut worst) = (0usize, 0.0f64);
    for m in 0..10u64 {
        let sides = if m % 2 == 0 {
            SideTags::periodic()
        } else {
            SideTags::uniform(BoundaryTag::SlipWall)
        };
        let mesh = jittered_square(23, 0.25, 100 + m, [0.0, 0.0], [1.0, 1.0], sides).map_err(|e| e.to_string())?;
        let coef: [[f64; 3]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
        let f = |x: [f64; 2]| Prim(coef.map(|c| c[0] + c[1] * x[0] + c[2] * x[1]));
        let u: Vec<Prim> = mesh.cells.iter().map(|c| f(c.centroid)).collect();
        // neighbor values at the stencil offsets, ghosts included
        let nb: Vec<[Prim; 3]> = (0..mesh.num_cells())
            .map(|i| {
                let x = mesh.cells[i].centroid;
                mesh.stencil(i).map(|e| f([x[0] + e.offset[0], x[1] + e.offset[1]]))
            })
            .collect();
        let g = gradient_lsq(&mesh, &u, &nb).map_err(|e| e.to_string())?;
        for gi in &g {
            for (v, c) in coef.iter().enumerate() {
                worst = worst.max((gi[v][0] - c[1]).abs()).max((gi[v][1] - c[2]).abs());
            }
        }
        stencils += mesh.num_cells();
    }
    let detail = format!("{stencils} stencils, max error {worst:.2e}");
    if stencils < 10_000 || worst >= 1e-12 {
        return Err(detail);
    }
    within(t.elapsed().as_secs_f64(), 10.0, detail)
}

// 3

fn conservation() -> Check {
    let t = Instant::now();
    let mesh = periodic(23, 8);
    let gas = GasModel::default();
    let case = riemann_case(6).unwrap();
    let w0 = cons(&gas, &case.on_mesh(&mesh));
    let net = Network::new(NetConfig::default()).unwrap();
    let params = net.init_params(3);
    let provider = net.provider(&params);
    let mut worst = 0.0f64;
    for mode in [GradientMode::Lsq, GradientMode::Gg, GradientMode::MlLsq] {
        let cfg = StepConfig {
            mode,
            ..StepConfig::default()
        };
        let solver = Solver::new(&mesh, cfg, BoundaryData::new(&mesh, freestream(), 1.0).unwrap()).unwrap();
        let mut w = w0.clone();
        for _ in 0..100 {
            let alpha = mode
                .is_ml()
                .then_some(&provider as &dyn fvml::solver::AlphaProvider<f64>);
            w = solver.step(&w, alpha).map_err(|e| e.to_string())?.0;
        }
        let (a, b) = (totals(&mesh, &w0), totals(&mesh, &w));
        for k in 0..4 {
            let scale: f64 = w0.iter().zip(&mesh.cells).map(|(w, c)| c.area * w.0[k].abs()).sum();
            worst = worst.max((b[k] - a[k]).abs() / scale);
        }
    }
    let detail = format!("max relative drift {worst:.2e} over lsq, gg, ml_lsq");
    if worst >= 1e-11 {
        return Err(detail);
    }
    within(t.elapsed().as_secs_f64(), 60.0, detail)
}

// 4

fn ad_correctness() -> Check {
    let t = Instant::now();
    let coarse = jittered_square(5, 0.25, 7, [0.0, 0.0], [1.0, 1.0], SideTags::periodic()).unwrap();
    let (fine, map) = refine_uniform(&coarse).unwrap();
    let spec = DatasetSpec {
        train: FamilyCounts { f1: 1, f2: 1, f3: 1 },
        validation: FamilyCounts { f1: 0, f2: 0, f3: 1 },
        steps: 3,
        max_amplitude: 2.0,
        seed: 3,
        ..DatasetSpec::default()
    };
    let data = generate_dataset(&spec, &coarse, &fine, &map, &StepConfig::default()).map_err(|e| e.to_string())?;
    let net = Network::new(NetConfig::default()).unwrap();
    let cfg = StepConfig {
        co: spec.co,
        mode: GradientMode::MlLsq,
        ..StepConfig::default()
    };
    let solver = Solver::with_dt(
        &coarse,
        cfg,
        BoundaryData::new(&coarse, freestream(), 1.0).unwrap(),
        data.dt,
    )
    .unwrap();
    let obj = Objective::new(&solver, &net, LossWeights::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params: Vec<f64> = net
        .init_params(4)
        .into_iter()
        .map(|v| v + 0.05 * (rng.random::<f64>() - 0.5))
        .collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for traj in &data.train {
        let rep = gradcheck(&obj, &params, &traj.frames[..3], 1e-5, 1e-5).map_err(|e| e.to_string())?;
        ok &= rep.ok(0.99);
        lines.push(format!(
            "{}: {}/{} within 1e-5, {} branch ties, {} rounding, {} failures",
            traj.family.name(),
            rep.passed,
            rep.params,
            rep.kinks.len(),
            rep.noisy.len(),
            rep.failures.len()
        ));
        for (what, list) in [
            ("tie", &rep.kinks),
            ("rounding", &rep.noisy),
            ("mismatch", &rep.failures),
        ] {
            for k in list {
                println!(
                    "    {what} {} param {}: ad {:.6e} fd {:.6e} rel {:.2e}",
                    traj.family.name(),
                    k.index,
                    k.ad,
                    k.fd,
                    k.rel
                );
            }
        }
    }
    let detail = format!("{} cells, 2 steps; {}", coarse.num_cells(), lines.join("; "));
    if !ok {
        return Err(detail);
    }
    within(t.elapsed().as_secs_f64(), 300.0, detail)
}

// 5

fn rotate(v: [f64; 2], c: f64, s: f64) -> [f64; 2] {
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

fn invariance() -> Check {
    let t = Instant::now();
    let net = Network::new(NetConfig::default()).unwrap();
    let params = net.init_params(21);
    let gas = GasModel::default();
    let methods = [GradientMethod::GreenGauss, GradientMethod::LeastSquares];

    // shift: dyadic data keeps every difference exact
    let mesh = periodic(12, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dyadic = |rng: &mut ChaCha8Rng, lo: f64| lo + rng.random_range(0..1u64 << 20) as f64 / (1u64 << 20) as f64;
    let u: Vec<Prim> = (0..mesh.num_cells())
        .map(|_| {
            Prim::new(
                dyadic(&mut rng, 1.0),
                dyadic(&mut rng, -0.5),
                dyadic(&mut rng, -0.5),
                dyadic(&mut rng, 1.0),
            )
        })
        .collect();
    let bc = BoundaryData::new(&mesh, freestream(), 1.0).unwrap();
    let (nb, _) = neighbor_values(&mesh, &u, &bc, &gas);
    let alpha = net.alpha_field(&mesh, &params, &u, &nb).map_err(|e| e.to_string())?;
    for c in [3.0, -0.5, 17.0] {
        let us: Vec<Prim> = u.iter().map(|p| Prim(p.0.map(|v| v + c))).collect();
        let (nbs, _) = neighbor_values(&mesh, &us, &bc, &gas);
        let alphas = net.alpha_field(&mesh, &params, &us, &nbs).map_err(|e| e.to_string())?;
        if alpha != alphas {
            return Err(format!("alpha changed under shift {c}"));
        }
        for m in methods {
            let a = gradient(m, &mesh, &u, &nb, Some(&alpha)).map_err(|e| e.to_string())?;
            let b = gradient(m, &mesh, &us, &nbs, Some(&alphas)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{m:?} gradient changed under shift {c}"));
            }
        }
    }

    // rotation
    let m = jittered_square(
        7,
        0.25,
        4,
        [0.0, 0.0],
        [1.0, 1.0],
        SideTags::uniform(BoundaryTag::SlipWall),
    )
    .unwrap();
    let u: Vec<Prim> = m
        .cells
        .iter()
        .map(|c| {
            let [x, y] = c.centroid;
            Prim::new(
                1.0 + 0.3 * (5.0 * x).sin(),
                0.4 * y - 0.1,
                (3.0 * x * y).cos(),
                1.0 + 0.2 * x,
            )
        })
        .collect();
    let (mut worst_alpha, mut worst_grad) = (0.0f64, 0.0f64);
    for ang in [0.3f64, 1.9, -2.6] {
        let (c, s) = (ang.cos(), ang.sin());
        let mr = m
            .transformed(|q| {
                let r = rotate(q, c, s);
                [r[0] + 0.7, r[1] - 1.3]
            })
            .map_err(|e| e.to_string())?;
        let ur: Vec<Prim> = u
            .iter()
            .map(|w| {
                let v = rotate([w.0[1], w.0[2]], c, s);
                Prim::new(w.0[0], v[0], v[1], w.0[3])
            })
            .collect();
        let (nb, _) = neighbor_values(&m, &u, &BoundaryData::new(&m, freestream(), 1.0).unwrap(), &gas);
        let (nbr, _) = neighbor_values(&mr, &ur, &BoundaryData::new(&mr, freestream(), 1.0).unwrap(), &gas);
        let a = net.alpha_field(&m, &params, &u, &nb).map_err(|e| e.to_string())?;
        let ar = net.alpha_field(&mr, &params, &ur, &nbr).map_err(|e| e.to_string())?;
        for (x, y) in a.iter().flatten().flatten().zip(ar.iter().flatten().flatten()) {
            worst_alpha = worst_alpha.max((x - y).abs());
        }
        for method in methods {
            let g = gradient(method, &m, &u, &nb, Some(&a)).map_err(|e| e.to_string())?;
            let gr = gradient(method, &mr, &ur, &nbr, Some(&ar)).map_err(|e| e.to_string())?;
            for (g, gr) in g.iter().zip(&gr) {
                for v in [0, 3] {
                    let e = rotate(g[v], c, s);
                    worst_grad = worst_grad.max((e[0] - gr[v][0]).abs()).max((e[1] - gr[v][1]).abs());
                }
                let rows = [rotate(g[1], c, s), rotate(g[2], c, s)];
                let col0 = rotate([rows[0][0], rows[1][0]], c, s);
                let col1 = rotate([rows[0][1], rows[1][1]], c, s);
                let want = [[col0[0], col1[0]], [col0[1], col1[1]]];
                for i in 0..2 {
                    for j in 0..2 {
                        worst_grad = worst_grad.max((want[i][j] - gr[1 + i][j]).abs());
                    }
                }
            }
        }
    }

    // boundary rows
    let (nb, _) = neighbor_values(&m, &u, &BoundaryData::new(&m, freestream(), 1.0).unwrap(), &gas);
    let a = net.alpha_field(&m, &params, &u, &nb).map_err(|e| e.to_string())?;
    let mut boundary = 0;
    for c in 0..m.num_cells() {
        if m.is_boundary_adjacent(c) {
            boundary += 1;
            if a[c].iter().flatten().any(|&x| x != 0.0) {
                return Err(format!("boundary cell {c} has nonzero alpha"));
            }
        }
    }
    let detail = format!(
        "shift exact; rotation max |Δα| {worst_alpha:.1e}, max gradient error {worst_grad:.1e}; {boundary} boundary rows zero"
    );
    if worst_alpha >= 1e-11 || worst_grad >= 1e-11 || boundary == 0 {
        return Err(detail);
    }
    within(t.elapsed().as_secs_f64(), 60.0, detail)
}

// 6 to 8 share a model and write their artifacts into one directory

const DESK_LR: f64 = 6e-4;

struct Desk {
    coarse: Mesh,
    net: Network,
    data: Dataset,
    history: Vec<HistoryRow>,
    params: Vec<f64>,
    secs: f64,
}

fn desk_training(dir: &Path) -> Result<Desk, String> {
    let t = Instant::now();
    let base = periodic(9, 1);
    let (coarse, _) = refine_uniform(&base).map_err(|e| e.to_string())?;
    let (fine, map) = refine_uniform(&coarse).map_err(|e| e.to_string())?;
    let spec = DatasetSpec {
        steps: 25,
        seed: 1,
        ..DatasetSpec::default()
    };
    let data = generate_dataset(&spec, &coarse, &fine, &map, &StepConfig::default()).map_err(|e| e.to_string())?;
    let hash = sha256_hex(format!("{spec:?}").as_bytes());
    write_dataset(&dir.join("dataset"), &data, &coarse, &hash).map_err(|e| e.to_string())?;

    let net = Network::new(NetConfig::default()).unwrap();
    let cfg = StepConfig {
        co: spec.co,
        mode: GradientMode::MlLsq,
        ..StepConfig::default()
    };
    let solver = Solver::with_dt(
        &coarse,
        cfg,
        BoundaryData::new(&coarse, freestream(), 1.0).unwrap(),
        data.dt,
    )
    .map_err(|e| e.to_string())?;
    let obj = Objective::new(&solver, &net, LossWeights::default()).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        epochs: 10,
        lr: DESK_LR,
        ..TrainConfig::default()
    };
    let zero = evaluate_set(&obj, &vec![0.0; net.num_params()], &data.train).map_err(|e| e.to_string())?;
    println!("    zero-correction train loss {:.6}", zero.total);
    let out = train(&tc, &obj, &data, net.init_params(tc.seed), |r, _| {
        println!(
            "    epoch {:2} total {:.6} sup {:.6} val_sup {:.6}",
            r.epoch, r.train.total, r.train.sup, r.val_sup
        );
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    fs::write(dir.join("history.csv"), history_csv(&out.history, Some(&hash))).map_err(|e| e.to_string())?;
    let mut ck = Vec::new();
    save_params(&mut ck, &net, &out.params).map_err(|e| e.to_string())?;
    fs::write(dir.join("model.ckpt"), ck).map_err(|e| e.to_string())?;
    Ok(Desk {
        coarse,
        net,
        data,
        history: out.history,
        params: out.params,
        secs: t.elapsed().as_secs_f64(),
    })
}

fn training_regression(desk: &Desk) -> Check {
    let frames: usize = desk.data.train.iter().map(|t| t.frames.len() - 1).sum();
    let first = &desk.history[0];
    let last = desk.history.last().unwrap();
    let drop = 1.0 - last.train.total / first.train.total;
    let detail = format!(
        "{} cells, {frames} training pairs, 10 epochs: loss {:.5} -> {:.5} ({:.1}% decrease), val sup {:.5} -> {:.5}",
        desk.coarse.num_cells(),
        first.train.total,
        last.train.total,
        100.0 * drop,
        first.val_sup,
        last.val_sup
    );
    let ok = frames >= 200 && desk.coarse.num_cells() >= 600 && drop >= 0.30 && last.val_sup < first.val_sup;
    if !ok {
        return Err(detail);
    }
    within(desk.secs, 3600.0, detail)
}

fn gain_reproduction(desk: &Desk, dir: &Path) -> Check {
    let t = Instant::now();
    let coarse = jittered_square(
        27,
        0.25,
        6,
        [0.0, 0.0],
        [1.0, 1.0],
        SideTags::uniform(BoundaryTag::SubsonicOut),
    )
    .map_err(|e| e.to_string())?;
    let (fine, map) = refine_uniform(&coarse).map_err(|e| e.to_string())?;
    let case = riemann_case(6).map_err(|e| e.to_string())?;
    let setup = GainSetup {
        coarse: &coarse,
        fine: &fine,
        map: &map,
        step: StepConfig {
            co: 0.01,
            mode: GradientMode::Lsq,
            ..StepConfig::default()
        },
        freestream: freestream(),
        back_pressure: BackPressure::Initial,
        net: &desk.net,
        params: &desk.params,
        steps: 2000,
        record_every: 10,
        area_weighted: false,
    };
    let report = run_gain(&setup, &|x| case.eval(x)).map_err(|e| e.to_string())?;
    fs::write(dir.join("gain_case6.csv"), report.csv(Some("case 6"))).map_err(|e| e.to_string())?;
    if let Some(why) = &report.truncated {
        return Err(format!("run truncated: {why}"));
    }
    let tail = report.tail_gain(0.25).unwrap_or(f64::NAN);
    let half = report.tail_gain(0.5).unwrap_or(f64::NAN);
    let detail = format!(
        "{} cells, 2000 steps: mean gain {tail:.2}% over the last 25%, {half:.2}% over the last half",
        coarse.num_cells()
    );
    if !(tail > 5.0) {
        return Err(detail);
    }
    within(t.elapsed().as_secs_f64(), 1800.0, detail)
}

const CONVERGENCE_CASES: [usize; 6] = [3, 4, 6, 11, 12, 17];

fn convergence(desk: &Desk, dir: &Path) -> Check {
    let t = Instant::now();
    let cases: Vec<_> = CONVERGENCE_CASES.iter().map(|&id| riemann_case(id).unwrap()).collect();
    let evals: Vec<Box<dyn Fn([f64; 2]) -> Prim>> = cases
        .iter()
        .map(|c| {
            let c = c.clone();
            Box::new(move |x| c.eval(x)) as Box<dyn Fn([f64; 2]) -> Prim>
        })
        .collect();
    let ics: Vec<(String, &dyn Fn([f64; 2]) -> Prim)> = cases
        .iter()
        .zip(&evals)
        .map(|(c, f)| (format!("case {}", c.id), f.as_ref()))
        .collect();
    let cfg = StepConfig {
        co: 0.01,
        mode: GradientMode::Lsq,
        ..StepConfig::default()
    };
    let study = Study::prepare(periodic(9, 2), 3, 2, cfg, 0.2, &ics).map_err(|e| e.to_string())?;
    let report = study
        .convergence(
            &[GradientMode::Lsq, GradientMode::MlLsq],
            Some((&desk.net, &desk.params)),
        )
        .map_err(|e| e.to_string())?;
    fs::write(
        dir.join("convergence.csv"),
        report.csv(Some("cases 3 4 6 11 12 17, T = 0.2")),
    )
    .map_err(|e| e.to_string())?;
    for r in &report.rows {
        println!(
            "    {} {} cells h {:.5} error {:.6e}",
            r.mode.name(),
            r.cells,
            r.h,
            r.error
        );
    }
    let base = report.slope(GradientMode::Lsq).unwrap();
    let ml = report.slope(GradientMode::MlLsq).unwrap();
    let cells: Vec<String> = study.levels().iter().map(|m| m.num_cells().to_string()).collect();
    let detail = format!(
        "{} cases on {} cells: baseline slope {base:.3}, corrected slope {ml:.3}",
        cases.len(),
        cells.join("/")
    );
    if !((base - 0.567).abs() <= 0.15 && ml >= base) {
        return Err(detail);
    }
    within(t.elapsed().as_secs_f64(), 7200.0, detail)
}

// 9

fn dataset_audit(desk: Option<&Desk>) -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut lo = [f64::INFINITY; 2];
    for family in [Family::F1, Family::F2, Family::F3] {
        for _ in 0..10_000 {
            let ic = InitialCondition::sample(family, &mut rng, 6.0);
            for i in 0..12 {
                for j in 0..12 {
                    let u = ic.eval([(i as f64 + 0.5) / 12.0, (j as f64 + 0.5) / 12.0]);
                    lo[0] = lo[0].min(u.rho());
                    lo[1] = lo[1].min(u.p());
                }
            }
        }
    }
    let full = DatasetSpec::default();
    let seq = full.train.sequence();
    let mix = [Family::F1, Family::F2, Family::F3].map(|f| seq.iter().filter(|&&g| g == f).count());
    let mut detail = format!(
        "3x10^4 draws: min rho {:.3}, min p {:.3}; full scale {} trajectories mix {:?} -> {} frames",
        lo[0],
        lo[1],
        seq.len(),
        mix,
        full.train_frames()
    );
    let mut ok = lo[0] > 0.0 && lo[1] > 0.0 && mix == [4, 2, 2] && full.train_frames() == 16_000;
    let sampler = trajectory_rng(0, 0).random::<u64>() == trajectory_rng(0, 0).random::<u64>();
    ok &= sampler;
    if let Some(d) = desk {
        let fams: Vec<Family> = d.data.train.iter().map(|t| t.family).collect();
        let pairs = Dataset::pairs(&d.data.train).len();
        let expect = d.data.spec.train_frames();
        detail.push_str(&format!(
            "; desk scale families {:?}, {pairs} training pairs (expected {expect})",
            fams.iter().map(|f| f.name()).collect::<Vec<_>>()
        ));
        ok &= fams == d.data.spec.train.sequence() && pairs == expect;
    }
    if !ok {
        return Err(detail);
    }
    within(t.elapsed().as_secs_f64(), 300.0, detail)
}

// 10

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = fs::read_dir(&d) else { continue };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = fs::read(&p) {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

fn determinism(first: &Path, second: &Path) -> Check {
    let (a, b) = (files(first), files(second));
    if a.is_empty() {
        return Err("no artifacts from the first run".into());
    }
    let names = |v: &[(PathBuf, Vec<u8>)]| v.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
    if names(&a) != names(&b) {
        return Err(format!("artifact sets differ: {:?} vs {:?}", names(&a), names(&b)));
    }
    let differ: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    verdict(
        differ.is_empty(),
        if differ.is_empty() {
            format!("{} artifacts byte-identical", a.len())
        } else {
            format!("differing artifacts: {}", differ.join(", "))
        },
    )
}

fn run_six_to_eight(dir: &Path, wanted: &dyn Fn(usize) -> bool, out: &mut Vec<Outcome>) -> Option<Desk> {
    let _ = fs::remove_dir_all(dir);
    fs::create_dir_all(dir).unwrap();
    let desk = match desk_training(dir) {
        Ok(d) => d,
        Err(e) => {
            out.push(Outcome {
                id: 6,
                name: "training regression",
                check: Err(e),
                secs: 0.0,
            });
            return None;
        }
    };
    if wanted(6) {
        out.push(Outcome {
            id: 6,
            name: "training regression",
            check: training_regression(&desk),
            secs: desk.secs,
        });
    }
    if wanted(7) {
        out.push(timed(7, "gain reproduction", || gain_reproduction(&desk, dir)));
    }
    if wanted(8) {
        out.push(timed(8, "convergence study", || convergence(&desk, dir)));
    }
    Some(desk)
}

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("FVML_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: usize| selected.as_ref().is_none_or(|s| s.contains(&id));
    let strict = std::env::var("FVML_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");

    let mut results: Vec<Outcome> = Vec::new();
    let report = |o: Outcome, results: &mut Vec<Outcome>| {
        print_line(&o);
        results.push(o);
    };
    let simple: [(usize, &'static str, fn() -> Check); 5] = [
        (1, "baseline equivalence", baseline_equivalence),
        (2, "LSQ linear exactness", lsq_linear_exactness),
        (3, "conservation", conservation),
        (4, "AD correctness", ad_correctness),
        (5, "invariance suite", invariance),
    ];
    for (id, name, f) in simple {
        if wanted(id) {
            report(timed(id, name, f), &mut results);
        }
    }
    let heavy = |id| wanted(id) || wanted(10);
    let mut desk = None;
    if heavy(6) || heavy(7) || heavy(8) {
        let mut out = Vec::new();
        desk = run_six_to_eight(&root.join("run1"), &|id| heavy(id), &mut out);
        for o in out {
            if wanted(o.id) {
                report(o, &mut results);
            }
        }
    }
    if wanted(9) {
        report(timed(9, "dataset audit", || dataset_audit(desk.as_ref())), &mut results);
    }
    if wanted(10) {
        let o = timed(10, "determinism", || {
            let mut out = Vec::new();
            run_six_to_eight(&root.join("run2"), &|_| true, &mut out);
            determinism(&root.join("run1"), &root.join("run2"))
        });
        report(o, &mut results);
    }

    let failed = results.iter().filter(|o| o.check.is_err()).count();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed,
        results.len()
    );
    if strict && failed > 0 {
        std::process::exit(1);
    }
}

fn print_line(o: &Outcome) {
    let (tag, detail) = match &o.check {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {:2} {:<22} {detail} [{:.1}s]", o.id, o.name, o.secs);
}
