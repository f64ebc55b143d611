//! Shared fixtures for the benchmarks: a jittered periodic square carrying
//! Riemann configuration 6 and a randomly initialised correction network.

use fvml::bc::BoundaryData;
use fvml::bench::riemann_case;
use fvml::mesh::{jittered_square, SideTags};
use fvml::mlcorr::{NetConfig, Network};
use fvml::solver::{GradientMode, Solver, StepConfig};
use fvml::{Cons, Mesh, Prim};

pub struct Fixture {
    pub mesh: Mesh,
    pub u: Vec<Prim>,
    pub w: Vec<Cons>,
    pub net: Network,
    pub params: Vec<f64>,
}

impl Fixture {
    /// `2 n²` cells.
    pub fn new(n: usize) -> Fixture {
        let mesh = jittered_square(n, 0.25, 1, [0.0, 0.0], [1.0, 1.0], SideTags::periodic()).expect("mesh");
        let case = riemann_case(6).expect("case 6");
        let u = case.on_mesh(&mesh);
        let gas = StepConfig::default().gas().expect("gas");
        let w = u.iter().map(|p| gas.prim_to_cons(p)).collect();
        let net = Network::new(NetConfig::default()).expect("network");
        let params = net.init_params(0);
        Fixture {
            mesh,
            u,
            w,
            net,
            params,
        }
    }

    pub fn solver(&self, mode: GradientMode) -> Solver<'_> {
        let cfg = StepConfig {
            mode,
            ..StepConfig::default()
        };
        let bc = BoundaryData::from_initial(&self.mesh, Prim::new(1.0, 0.0, 0.0, 1.0), &self.u).expect("bc");
        Solver::new(&self.mesh, cfg, bc).expect("solver")
    }
}
