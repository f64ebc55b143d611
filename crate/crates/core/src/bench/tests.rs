use std::f64::consts::PI;
use std::time::Instant;

use super::*;
use crate::bc::BackPressure;
use crate::mesh::{jittered_square, refine_uniform, structured_square, BoundaryTag, SideTags};
use crate::mlcorr::NetConfig;
use crate::solver::GradientMode;

fn close(a: Prim, b: [f64; 4]) -> bool {
    a.0.iter().zip(b).all(|(x, y)| x == &y)
}

#[test]
fn case_6_matches_table() {
    let c = riemann_case(6).unwrap();
    assert!(close(c.states[0], [1.0, 0.75, -0.5, 1.0]));
    assert!(close(c.states[1], [2.0, 0.75, 0.5, 1.0]));
    assert!(close(c.states[2], [2.0, -0.75, 0.5, 1.0]));
    assert!(close(c.states[3], [3.0, -0.75, -0.5, 1.0]));
}

#[test]
fn case_11_quadrant_2() {
    let c = riemann_case(11).unwrap();
    assert!(close(c.states[1], [0.5313, 0.8276, 0.0, 0.4]));
}

#[test]
fn every_case_is_admissible_and_listed_once() {
    let cases = riemann_cases();
    let ids: Vec<usize> = cases.iter().map(|c| c.id).collect();
    assert_eq!(ids, (1..=18).collect::<Vec<_>>());
    for c in &cases {
        assert!(c.final_time > 0.0);
        for s in &c.states {
            assert!(prim_admissible(s), "case {} state {:?}", c.id, s.0);
        }
    }
}

#[test]
fn file_cases_transcribed() {
    // spot checks against the classic listing, (ρ, u, v, p)
    let c = riemann_case(3).unwrap();
    assert!(close(c.states[2], [0.138, 1.206, 1.206, 0.029]));
    let c = riemann_case(14).unwrap();
    assert!(close(c.states[0], [2.0, 0.0, -0.5606, 8.0]));
    assert_eq!(c.final_time, 0.1);
}

#[test]
fn unknown_case_rejected() {
    assert!(matches!(riemann_case(0), Err(Error::UnknownCase(0))));
    assert!(matches!(riemann_case(19), Err(Error::UnknownCase(19))));
}

#[test]
fn malformed_case_file_rejected() {
    assert!(parse_cases("1,0.2,1,0,0,1\n").is_err());
    assert!(parse_cases("1,0.2,1,0,0,1,1,0,0,1,1,0,0,1,1,0,0,x\n").is_err());
    assert_eq!(parse_cases("# c\nid,t\n").unwrap().len(), 0);
}

#[test]
fn quadrant_layout() {
    assert_eq!(RiemannCase::quadrant([0.75, 0.75]), 0);
    assert_eq!(RiemannCase::quadrant([0.25, 0.75]), 1);
    assert_eq!(RiemannCase::quadrant([0.25, 0.25]), 2);
    assert_eq!(RiemannCase::quadrant([0.75, 0.25]), 3);
}

#[test]
fn gain_formula() {
    assert_eq!(gain(2.0, 1.5), 25.0);
    assert_eq!(gain(2.0, 3.0), -50.0);
    assert_eq!(gain(0.0, 1.0), 0.0);
}

#[test]
fn tail_gain_uses_last_fraction() {
    let row = |step, gain| GainRow {
        step,
        time: 0.0,
        l_coarse: 1.0,
        l_ml: 1.0,
        gain,
    };
    let r = GainReport {
        rows: vec![row(1, 100.0), row(2, 100.0), row(3, 4.0), row(4, 6.0)],
        steps: 4,
        ..Default::default()
    };
    assert_eq!(r.tail_gain(0.5), Some(5.0));
    assert_eq!(GainReport::default().tail_gain(0.25), None);
}

struct GainFixture {
    coarse: Mesh,
    fine: Mesh,
    map: ParentMap,
    net: Network,
}

fn fixture(tag: BoundaryTag) -> GainFixture {
    let sides = match tag {
        BoundaryTag::Periodic(_) => SideTags::periodic(),
        t => SideTags::uniform(t),
    };
    let coarse = jittered_square(6, 0.2, 3, [0.0, 0.0], [1.0, 1.0], sides).unwrap();
    let (fine, map) = refine_uniform(&coarse).unwrap();
    let net = Network::new(NetConfig::default()).unwrap();
    GainFixture { coarse, fine, map, net }
}

fn setup<'a>(f: &'a GainFixture, params: &'a [f64], steps: usize) -> GainSetup<'a> {
    GainSetup {
        coarse: &f.coarse,
        fine: &f.fine,
        map: &f.map,
        step: StepConfig {
            co: 0.05,
            mode: GradientMode::Lsq,
            ..Default::default()
        },
        freestream: Prim::new(1.0, 0.0, 0.0, 1.0),
        back_pressure: BackPressure::Initial,
        net: &f.net,
        params,
        steps,
        record_every: 1,
        area_weighted: false,
    }
}

#[test]
fn zero_params_give_zero_gain_on_every_step() {
    let f = fixture(BoundaryTag::SubsonicOut);
    let zeros = vec![0.0; f.net.num_params()];
    let case = riemann_case(6).unwrap();
    for mode in [GradientMode::Lsq, GradientMode::Gg] {
        let mut s = setup(&f, &zeros, 30);
        s.step.mode = mode;
        let r = run_gain(&s, &|x| case.eval(x)).unwrap();
        assert!(r.truncated.is_none());
        assert_eq!(r.rows.len(), 30);
        for row in &r.rows {
            assert!(row.l_coarse > 0.0);
            assert_eq!(row.l_ml.to_bits(), row.l_coarse.to_bits());
            assert_eq!(row.gain, 0.0);
        }
        let [_, b, m] = r.last.unwrap();
        assert_eq!(b, m);
    }
}

#[test]
fn gain_rerun_is_identical() {
    let f = fixture(BoundaryTag::Periodic(0));
    let params = f.net.init_params(4);
    let case = riemann_case(11).unwrap();
    let s = setup(&f, &params, 12);
    let a = run_gain(&s, &|x| case.eval(x)).unwrap().csv(Some("h"));
    let b = run_gain(&s, &|x| case.eval(x)).unwrap().csv(Some("h"));
    assert_eq!(a, b);
    assert!(a.starts_with("# h\nstep,time,L_coarse,L_ML,gain_pct\n"));
    assert_eq!(a.lines().count(), 14);
}

#[test]
fn gain_error_matches_direct_oracle() {
    // one step, errors recomputed independently from separate runs
    let f = fixture(BoundaryTag::Periodic(0));
    let params = f.net.init_params(9);
    let case = riemann_case(6).unwrap();
    let s = setup(&f, &params, 1);
    let r = run_gain(&s, &|x| case.eval(x)).unwrap();

    let gas = GasModel::new(1.4).unwrap();
    let wf0: Vec<Cons> = case.on_mesh(&f.fine).iter().map(|u| gas.prim_to_cons(u)).collect();
    let w0 = project_fine_to_coarse(&wf0, &f.map).unwrap();
    let dt = compute_dt(&f.coarse, 0.05);
    let sub = substeps(&f.coarse, &f.fine, 0.05);
    let bc = |m: &Mesh| BoundaryData::new(m, Prim::new(1.0, 0.0, 0.0, 1.0), 1.0).unwrap();
    let cfg = s.step;
    let fine = Solver::with_dt(&f.fine, cfg, bc(&f.fine), dt / sub as f64).unwrap();
    let mut wf = wf0;
    for _ in 0..sub {
        wf = fine.step(&wf, None).unwrap().0;
    }
    let base = Solver::with_dt(&f.coarse, cfg, bc(&f.coarse), dt).unwrap();
    let ml_cfg = StepConfig {
        mode: GradientMode::MlLsq,
        ..cfg
    };
    let ml = Solver::with_dt(&f.coarse, ml_cfg, bc(&f.coarse), dt).unwrap();
    let wb = base.step(&w0, None).unwrap().0;
    let wm = ml.step(&w0, Some(&f.net.provider(&params))).unwrap().0;
    let wr = project_fine_to_coarse(&wf, &f.map).unwrap();
    let l1 = |a: &[Cons], b: &[Cons]| -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (a, b))| {
                let (pa, pb) = (gas.cons_to_prim(a, i).unwrap(), gas.cons_to_prim(b, i).unwrap());
                (0..4).map(|k| (pa.0[k] - pb.0[k]).abs()).sum::<f64>()
            })
            .sum()
    };
    let (lc, lm) = (l1(&wr, &wb), l1(&wr, &wm));
    assert_eq!(r.rows[0].l_coarse, lc);
    assert_eq!(r.rows[0].l_ml, lm);
    assert!((r.rows[0].gain - 100.0 * (lc - lm) / lc).abs() < 1e-12);
    assert_eq!(r.rows[0].time, dt);
}

#[test]
fn gain_truncates_on_rejected_step() {
    let f = fixture(BoundaryTag::Periodic(0));
    let params = f.net.init_params(1);
    let mut s = setup(&f, &params, 50);
    s.step.co = 3.0;
    s.step.limiter = false;
    let vacuum = |x: [f64; 2]| {
        if x[0] < 0.5 {
            Prim::new(1.0, -6.0, 0.0, 0.01)
        } else {
            Prim::new(1.0, 6.0, 0.0, 0.01)
        }
    };
    let r = run_gain(&s, &vacuum).unwrap();
    assert!(r.truncated.is_some());
    assert!(r.rows.len() < 50);
    assert!(r.csv(None).contains("# truncated: step"));
}

#[test]
fn gain_rejects_mismatched_inputs() {
    let f = fixture(BoundaryTag::Periodic(0));
    let zeros = vec![0.0; f.net.num_params()];
    let rest = |_: [f64; 2]| Prim::new(1.0, 0.0, 0.0, 1.0);
    let (fine2, map2) = refine_uniform(&f.fine).unwrap();
    let mut s = setup(&f, &zeros, 1);
    s.fine = &fine2;
    s.map = &map2;
    assert!(matches!(run_gain(&s, &rest), Err(Error::InvalidInput(_))));
    let short = [0.0; 3];
    let s = setup(&f, &short, 1);
    assert!(matches!(run_gain(&s, &rest), Err(Error::SizeMismatch { .. })));
}

#[test]
fn mirror_asymmetry_small_for_symmetric_field() {
    let mesh = structured_square(6, 6, [0.0, 0.0], [1.0, 1.0], SideTags::periodic()).unwrap();
    let gas = GasModel::new(1.4).unwrap();
    // even ρ, odd u; the diagonal split keeps the mesh from being exactly symmetric
    let sym = |m: &Mesh| -> Vec<Cons> {
        m.cells
            .iter()
            .map(|c| {
                let d = c.centroid[0] - 0.5;
                gas.prim_to_cons(&Prim::new(1.0 + d * d, d, c.centroid[1], 1.0))
            })
            .collect()
    };
    let w = sym(&mesh);
    let a = mirror_asymmetry(&mesh, &gas, &w).unwrap();
    assert!(a < 0.05, "{a}");
    let skew: Vec<Cons> = mesh
        .cells
        .iter()
        .map(|c| gas.prim_to_cons(&Prim::new(1.0 + c.centroid[0], 0.0, 0.0, 1.0)))
        .collect();
    assert!(mirror_asymmetry(&mesh, &gas, &skew).unwrap() > 0.1);
}

#[test]
fn slope_of_exact_power_law() {
    let h: Vec<f64> = [0.1, 0.05, 0.025, 0.0125].to_vec();
    let e: Vec<f64> = h.iter().map(|h| 3.7 * h.powf(1.3)).collect();
    assert!((fit_slope(&h, &e).unwrap() - 1.3).abs() < 1e-10);
    assert!(fit_slope(&h[..1], &e[..1]).is_err());
    assert!(fit_slope(&[0.1, 0.1], &[1.0, 2.0]).is_err());
    assert!(fit_slope(&[0.1, 0.2], &[0.0, 2.0]).is_err());
}

#[test]
fn mesh_size_of_unit_square() {
    let m = structured_square(4, 4, [0.0, 0.0], [1.0, 1.0], SideTags::periodic()).unwrap();
    assert!((mesh_size(&m) - (1.0f64 / 32.0).sqrt()).abs() < 1e-15);
}

fn smooth(x: [f64; 2]) -> Prim {
    Prim::new(
        1.0 + 0.2 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin(),
        1.0,
        0.5,
        1.0,
    )
}

fn smooth_study(levels: usize) -> Study {
    let base = structured_square(4, 4, [0.0, 0.0], [1.0, 1.0], SideTags::periodic()).unwrap();
    let cfg = StepConfig {
        co: 0.2,
        ..Default::default()
    };
    Study::prepare(base, levels, 2, cfg, 0.2, &[("smooth".into(), &smooth)]).unwrap()
}

#[test]
fn smooth_field_converges() {
    let s = smooth_study(3);
    let r = s.convergence(&[GradientMode::Lsq, GradientMode::Gg], None).unwrap();
    assert_eq!(r.rows.len(), 6);
    for m in [GradientMode::Lsq, GradientMode::Gg] {
        let a = r.slope(m).unwrap();
        assert!((0.8..=2.2).contains(&a), "{} slope {a}", m.name());
    }
    let csv = r.csv(None);
    assert!(csv.contains("mode,h,error\nlsq,"));
}

#[test]
fn convergence_needs_three_levels_and_model() {
    let s = smooth_study(2);
    assert!(s.convergence(&[GradientMode::Lsq], None).is_err());
    let s = smooth_study(3);
    assert!(s.convergence(&[GradientMode::MlLsq], None).is_err());
}

#[test]
fn schedule_lands_on_final_time() {
    let s = smooth_study(1);
    let (n, dt) = s.schedule(&s.levels()[0]);
    assert!((n as f64 * dt - 0.2).abs() < 1e-14);
    assert!(dt <= compute_dt(&s.levels()[0], 0.2) * (1.0 + 1e-12));
}

#[test]
fn zero_model_matches_baseline_in_study() {
    let s = smooth_study(1);
    let net = Network::new(NetConfig::default()).unwrap();
    let zeros = vec![0.0; net.num_params()];
    let a = s.run(0, 0, GradientMode::Lsq, None).unwrap();
    let b = s.run(0, 0, GradientMode::MlLsq, Some((&net, &zeros))).unwrap();
    assert_eq!(a, b);
}

#[test]
fn timing_rows_for_every_mode_and_level() {
    let s = smooth_study(2);
    let net = Network::new(NetConfig::default()).unwrap();
    let p = net.init_params(0);
    let rows = s
        .timing(&[GradientMode::Lsq, GradientMode::MlLsq], Some((&net, &p)), 0, 3)
        .unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].mode, GradientMode::Lsq);
    assert_eq!(rows[2].mode, GradientMode::MlLsq);
    assert_eq!(rows[0].h, rows[2].h);
    assert!(rows.iter().all(|r| r.wall_s > 0.0 && r.error > 0.0));
    assert!(timing_csv(&rows, None).starts_with("mode,h,cells,wall_s,error\nlsq,"));
    assert!(s.timing(&[GradientMode::Lsq], None, 0, 2).is_err());
}

#[test]
fn timer_is_monotone_with_nonzero_resolution() {
    let t0 = Instant::now();
    let mut last = t0.elapsed();
    let mut x = 0.0f64;
    for k in 0..10_000 {
        x += (k as f64).sqrt();
        let now = t0.elapsed();
        assert!(now >= last);
        last = now;
    }
    assert!(x > 0.0);
    assert!(t0.elapsed().as_nanos() > 0);
}
