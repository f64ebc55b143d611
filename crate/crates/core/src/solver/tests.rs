use super::*;
use crate::mesh::{jittered_square, structured_square, BoundaryTag, SideTags};
use proptest::prelude::*;
use std::f64::consts::PI;

const GAS: GasModel = GasModel { gamma: 1.4 };

fn periodic(n: usize, seed: u64) -> Mesh {
    jittered_square(n, 0.25, seed, [0.0, 0.0], [1.0, 1.0], SideTags::periodic()).unwrap()
}

fn rest() -> Prim {
    Prim::new(1.0, 0.0, 0.0, 1.0)
}

fn solver(mesh: &Mesh, mode: GradientMode) -> Solver<'_> {
    let cfg = StepConfig {
        mode,
        ..StepConfig::default()
    };
    Solver::new(mesh, cfg, BoundaryData::new(mesh, rest(), 1.0).unwrap()).unwrap()
}

fn init(mesh: &Mesh, f: impl Fn(f64, f64) -> Prim) -> Vec<Cons> {
    mesh.cells
        .iter()
        .map(|c| GAS.prim_to_cons(&f(c.centroid[0], c.centroid[1])))
        .collect()
}

fn quadrants(x: f64, y: f64) -> Prim {
    match (x >= 0.5, y >= 0.5) {
        (true, true) => Prim::new(1.0, 0.75, -0.5, 1.0),
        (false, true) => Prim::new(2.0, 0.75, 0.5, 1.0),
        (false, false) => Prim::new(2.0, -0.75, 0.5, 1.0),
        (true, false) => Prim::new(3.0, -0.75, -0.5, 1.0),
    }
}

#[test]
fn rusanov_consistency() {
    let u = Prim::new(1.3, 0.4, -0.2, 0.9);
    let n = [0.6, 0.8];
    let h = rusanov_prim(&GAS, &u, &u, n);
    assert_eq!(h, GAS.flux_prim(&u, n));
}

#[test]
fn rusanov_matches_scalar_oracle_on_sod_states() {
    let (rl, ul, pl) = (1.0, 0.0, 1.0);
    let (rr, ur, pr) = (0.125, 0.0, 0.1);
    let g = 1.4;
    let energy = |r: f64, u: f64, p: f64| p / (g - 1.0) + 0.5 * r * u * u;
    let flux = |r: f64, u: f64, p: f64| [r * u, r * u * u + p, 0.0, (energy(r, u, p) + p) * u];
    let speed = |r: f64, u: f64, p: f64| u.abs() + (g * p / r).sqrt();
    let s = speed(rl, ul, pl).max(speed(rr, ur, pr));
    let (fl, fr) = (flux(rl, ul, pl), flux(rr, ur, pr));
    let wl = [rl, rl * ul, 0.0, energy(rl, ul, pl)];
    let wr = [rr, rr * ur, 0.0, energy(rr, ur, pr)];
    let oracle: Vec<f64> = (0..4)
        .map(|k| 0.5 * (fl[k] + fr[k]) - 0.5 * s * (wr[k] - wl[k]))
        .collect();
    let h = rusanov_flux(
        &GAS,
        &GAS.prim_to_cons(&Prim::new(rl, ul, 0.0, pl)),
        &GAS.prim_to_cons(&Prim::new(rr, ur, 0.0, pr)),
        [1.0, 0.0],
    )
    .unwrap();
    for k in 0..4 {
        assert!((h[k] - oracle[k]).abs() < 1e-14, "{k}: {} vs {}", h[k], oracle[k]);
    }
    assert!(rusanov_flux(
        &GAS,
        &Cons([-1.0, 0.0, 0.0, 1.0]),
        &Cons([1.0, 0.0, 0.0, 2.5]),
        [1.0, 0.0]
    )
    .is_err());
}

#[test]
fn dt_rule() {
    let m = structured_square(1, 1, [0.0, 0.0], [0.02, 0.01], SideTags::periodic()).unwrap();
    assert!((m.cells[0].area - 1e-4).abs() < 1e-18);
    assert!((compute_dt(&m, 0.01) - 1e-4).abs() < 1e-16);
    assert!((compute_dt(&m, 0.03) - 3e-4).abs() < 1e-16);
}

#[test]
fn constant_state_has_zero_residual() {
    let m = periodic(6, 1);
    let w = init(&m, |_, _| Prim::new(1.2, 0.3, -0.7, 2.0));
    for mode in [GradientMode::Gg, GradientMode::Lsq] {
        let (r, stats) = solver(&m, mode).residual(&w, None).unwrap();
        assert!(r.iter().flatten().all(|x| x.abs() < 1e-13));
        assert_eq!(stats.fallbacks, 0);
    }
}

#[test]
fn periodic_residual_telescopes() {
    let m = periodic(7, 2);
    let w = init(&m, quadrants);
    let (r, _) = solver(&m, GradientMode::Lsq).residual(&w, None).unwrap();
    for k in 0..4 {
        let sum: f64 = r.iter().map(|x| x[k]).sum();
        let norm: f64 = r.iter().map(|x| x[k].abs()).sum();
        assert!(sum.abs() <= 1e-11 * norm.max(1.0), "{k}: {sum}");
    }
}

#[test]
fn periodic_conservation_over_100_steps() {
    let m = periodic(10, 3);
    let s = solver(&m, GradientMode::Lsq);
    let w0 = init(&m, quadrants);
    let rec = rollout(&s, w0, 100, 50, None).unwrap();
    let t0 = rec.diagnostics[0].totals;
    let t1 = rec.diagnostics.last().unwrap().totals;
    for k in 0..4 {
        let scale = t0[k].abs().max(1.0);
        assert!((t1[k] - t0[k]).abs() / scale < 1e-11, "{k}: {} -> {}", t0[k], t1[k]);
    }
    assert_eq!(rec.frames.len(), 3);
    assert!(rec.frames.windows(2).all(|f| f[0].time < f[1].time));
}

#[test]
fn closed_box_keeps_mass_and_energy() {
    let m = jittered_square(
        8,
        0.2,
        4,
        [0.0, 0.0],
        [1.0, 1.0],
        SideTags::uniform(BoundaryTag::SlipWall),
    )
    .unwrap();
    let s = solver(&m, GradientMode::Gg);
    let w0 = init(&m, |x, y| {
        Prim::new(1.0 + 0.5 * (x > 0.5) as u8 as f64, 0.2 * y, -0.1, 1.0 + x)
    });
    let rec = rollout(&s, w0, 50, 50, None).unwrap();
    let t0 = rec.diagnostics[0].totals;
    let t1 = rec.diagnostics.last().unwrap().totals;
    assert!((t1[0] - t0[0]).abs() < 1e-13);
    assert!((t1[3] - t0[3]).abs() < 1e-12);
}

#[test]
fn zero_residual_is_a_fixed_point_and_zero_steps_keep_initial_state() {
    let m = periodic(5, 5);
    let w = init(&m, |_, _| rest());
    let s = solver(&m, GradientMode::Lsq);
    let (next, _) = s.step(&w, None).unwrap();
    for (a, b) in next.iter().zip(&w) {
        for k in 0..4 {
            assert!((a.0[k] - b.0[k]).abs() < 1e-15);
        }
    }
    let rec = rollout(&s, w.clone(), 0, 1, None).unwrap();
    assert_eq!(rec.frames.len(), 1);
    assert_eq!(rec.frames[0].w, w);
}

#[test]
fn ml_mode_requires_provider() {
    let m = periodic(4, 1);
    let w = init(&m, |_, _| rest());
    let err = solver(&m, GradientMode::MlLsq).step(&w, None).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn blow_up_is_rejected_with_step_and_cell() {
    let m = periodic(5, 6);
    let cfg = StepConfig::default();
    let bc = BoundaryData::new(&m, rest(), 1.0).unwrap();
    let s = Solver::with_dt(&m, cfg, bc, 5.0).unwrap();
    let w0 = init(&m, quadrants);
    match rollout(&s, w0, 3, 1, None).unwrap_err() {
        Error::StepRejected { step, source } => {
            assert_eq!(step, 1);
            assert!(matches!(*source, Error::Admissibility { .. }));
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn rollouts_are_deterministic() {
    let m = periodic(6, 8);
    let s = solver(&m, GradientMode::Lsq);
    let a = rollout(&s, init(&m, quadrants), 20, 5, None).unwrap();
    let b = rollout(&s, init(&m, quadrants), 20, 5, None).unwrap();
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.diagnostics_csv(None), b.diagnostics_csv(None));
}

#[test]
fn smooth_fields_need_no_fallback() {
    let m = periodic(12, 9);
    let s = solver(&m, GradientMode::Lsq);
    let w0 = init(&m, |x, y| {
        Prim::new(1.0 + 0.2 * (2.0 * PI * x).sin(), 0.5, 0.3 * (2.0 * PI * y).cos(), 1.0)
    });
    let rec = rollout(&s, w0, 20, 20, None).unwrap();
    assert!(rec.diagnostics.iter().all(|d| d.fallbacks == 0));
    assert!(rec.diagnostics[1].cfl > 0.0);
}

#[test]
fn advected_density_wave_converges() {
    // ρ = 1 + 0.2 sin 2π(x + y) carried by (u, v) = (1, 1) at p = 1
    let exact = |x: f64, y: f64, t: f64| 1.0 + 0.2 * (2.0 * PI * (x + y - 2.0 * t)).sin();
    let t_end = 0.05;
    let mut errs = Vec::new();
    let base = structured_square(8, 8, [0.0, 0.0], [1.0, 1.0], SideTags::periodic()).unwrap();
    let (m1, _) = crate::mesh::refine_uniform(&base).unwrap();
    let (m2, _) = crate::mesh::refine_uniform(&m1).unwrap();
    let (m3, _) = crate::mesh::refine_uniform(&m2).unwrap();
    let dt = compute_dt(&m3, 0.01);
    let steps = (t_end / dt).round() as usize;
    for m in [&m1, &m2, &m3] {
        let s = Solver::with_dt(m, StepConfig::default(), BoundaryData::new(m, rest(), 1.0).unwrap(), dt).unwrap();
        let w0 = init(m, |x, y| Prim::new(exact(x, y, 0.0), 1.0, 1.0, 1.0));
        let rec = rollout(&s, w0, steps, steps, None).unwrap();
        let t = steps as f64 * dt;
        let w = &rec.last().unwrap().w;
        let err: f64 = m
            .cells
            .iter()
            .zip(w)
            .map(|(c, w)| c.area * (w.0[0] - exact(c.centroid[0], c.centroid[1], t)).abs())
            .sum();
        errs.push(err);
    }
    assert!(errs[0] / errs[1] > 1.8 && errs[1] / errs[2] > 1.8, "{errs:?}");
}

fn admissible_prim() -> impl Strategy<Value = Prim> {
    (0.1f64..4.0, -2.0f64..2.0, -2.0f64..2.0, 0.1f64..4.0).prop_map(|(r, u, v, p)| Prim::new(r, u, v, p))
}

proptest! {
    #[test]
    fn rusanov_is_antisymmetric(l in admissible_prim(), r in admissible_prim(), t in 0.0f64..6.3) {
        let n = [t.cos(), t.sin()];
        let a = rusanov_prim(&GAS, &l, &r, n);
        let b = rusanov_prim(&GAS, &r, &l, [-n[0], -n[1]]);
        for k in 0..4 {
            prop_assert!((a[k] + b[k]).abs() < 1e-13 * (1.0 + a[k].abs()));
        }
    }
}
