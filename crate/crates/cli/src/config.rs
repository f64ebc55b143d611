//! Run configuration. Everything that affects numerics lives here; the
//! command line only picks the command, paths and verbosity.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fvml::bc::BackPressure;
use fvml::io::sha256_hex;
use fvml::mesh::{forward_step, jittered_square, read_ascii, refine_uniform, structured_square, SideTags};
use fvml::mlcorr::NetConfig;
use fvml::solver::{GradientMode, StepConfig};
use fvml::train::{DatasetSpec, Family, LossWeights, TrainConfig};
use fvml::{BoundaryTag, Mesh, Prim};

use crate::Failure;

pub const CONFIG_KEYS: &str = "\
CONFIGURATION (TOML, unknown keys are rejected)
  output = \"fvml-out\"        output root (overridden by --output / FVML_OUTPUT)
  seed = <u64>               optional; overrides dataset.seed and train.seed
  workers = 1                recorded only; runs are serial

  [mesh] kind = \"jittered\"   n, jitter = 0.25, seed = 0, refine = 0, boundary = \"periodic\"
  [mesh] kind = \"structured\" nx, ny, refine = 0, boundary = \"periodic\"
  [mesh] kind = \"forward_step\" h
  [mesh] kind = \"file\"       path
         boundary: periodic | slip_wall | subsonic_out | supersonic_out | subsonic_in | supersonic_in
         (square meshes cover [0,1]^2)

  [step]     co = 0.01, mode = \"lsq\" (gg | lsq | ml_gg | ml_lsq), limiter = true,
             venkat_k = 5.0, gamma = 1.4
  [bc]       freestream = [rho, u, v, p] = [1, 0, 0, 1],
             back_pressure = \"initial\" | { uniform = <p> }
  [network]  width = 8, blocks = 2, trunk_width = 8, p = 8, activation = \"tanh\" (tanh | swish),
             eps = 1e-6, alpha_max = 0.5
  [dataset]  train = { f1 = 4, f2 = 2, f3 = 2 }, validation = { f1 = 2, f2 = 1, f3 = 1 },
             max_amplitude = 6.0, steps = 2000, stride = 1, co = 0.03, seed = 0
  [train]    lr = 6e-5, decay = 0.9, epochs = 30, batch_size = 1, beta1 = 0.9, beta2 = 0.99,
             weight_decay = 0.0, checkpoint_every = 1, seed = 0, area_weighted = false
  [loss]     tvd = 1e-6, ent = 1e5, reg = 1e-4
  [gradcheck] rel_step = 1e-5, tol = 1e-5, min_fraction = 0.99, steps = 2, trajectory = 0
  [simulate] steps = 100, save_every = 10,
             initial = { kind = \"riemann\", case = 6 }
                     | { kind = \"uniform\", state = [rho, u, v, p] }
                     | { kind = \"sample\", family = \"f1\", seed = 0, max_amplitude = 6.0 }
  [bench.gain]        case = 6, steps = 2000, record_every = 10, area_weighted = false
  [bench.convergence] cases = [3, 4, 6, 11, 12, 17], levels = 3, reference_depth = 2,
                      t_final = 0.2, modes = [\"lsq\", \"ml_lsq\"]
  [bench.timing]      case = 6, levels = 3, reference_depth = 1, t_final = 0.2, repeats = 3,
                      modes = [\"lsq\", \"ml_lsq\"]
";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub workers: usize,
    pub mesh: MeshSpec,
    #[serde(default)]
    pub step: StepConfig,
    #[serde(default)]
    pub bc: BcConfig,
    #[serde(default)]
    pub network: NetConfig,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("fvml-out")
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sides {
    Periodic,
    SlipWall,
    SubsonicOut,
    SupersonicOut,
    SubsonicIn,
    SupersonicIn,
}

impl Sides {
    fn tags(self) -> SideTags {
        match self {
            Sides::Periodic => SideTags::periodic(),
            Sides::SlipWall => SideTags::uniform(BoundaryTag::SlipWall),
            Sides::SubsonicOut => SideTags::uniform(BoundaryTag::SubsonicOut),
            Sides::SupersonicOut => SideTags::uniform(BoundaryTag::SupersonicOut),
            Sides::SubsonicIn => SideTags::uniform(BoundaryTag::SubsonicIn),
            Sides::SupersonicIn => SideTags::uniform(BoundaryTag::SupersonicIn),
        }
    }
}

fn periodic() -> Sides {
    Sides::Periodic
}

fn jitter() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSpec {
    Jittered {
        n: usize,
        #[serde(default = "jitter")]
        jitter: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        refine: usize,
        #[serde(default = "periodic")]
        boundary: Sides,
    },
    Structured {
        nx: usize,
        ny: usize,
        #[serde(default)]
        refine: usize,
        #[serde(default = "periodic")]
        boundary: Sides,
    },
    ForwardStep {
        h: f64,
    },
    File {
        path: PathBuf,
    },
}

impl MeshSpec {
    /// `base` resolves relative file paths.
    pub fn build(&self, base: &Path) -> Result<Mesh, Failure> {
        let refine = |mut m: Mesh, times: usize| -> Result<Mesh, Failure> {
            for _ in 0..times {
                m = refine_uniform(&m)?.0;
            }
            Ok(m)
        };
        let (lo, hi) = ([0.0, 0.0], [1.0, 1.0]);
        match self {
            MeshSpec::Jittered {
                n,
                jitter,
                seed,
                refine: r,
                boundary,
            } => refine(jittered_square(*n, *jitter, *seed, lo, hi, boundary.tags())?, *r),
            MeshSpec::Structured {
                nx,
                ny,
                refine: r,
                boundary,
            } => refine(structured_square(*nx, *ny, lo, hi, boundary.tags())?, *r),
            MeshSpec::ForwardStep { h } => Ok(forward_step(*h)?),
            MeshSpec::File { path } => {
                let p = base.join(path);
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Failure::config(format!("mesh file {}: {e}", p.display())))?;
                Ok(read_ascii(&text)?)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub freestream: [f64; 4],
    pub back_pressure: BackPressure,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            freestream: [1.0, 0.0, 0.0, 1.0],
            back_pressure: BackPressure::Initial,
        }
    }
}

impl BcConfig {
    pub fn freestream(&self) -> Prim {
        Prim(self.freestream)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub rel_step: f64,
    pub tol: f64,
    pub min_fraction: f64,
    pub steps: usize,
    pub trajectory: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            rel_step: 1e-5,
            tol: 1e-5,
            min_fraction: 0.99,
            steps: 2,
            trajectory: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Riemann {
        case: usize,
    },
    Uniform {
        state: [f64; 4],
    },
    Sample {
        family: Family,
        #[serde(default)]
        seed: u64,
        #[serde(default = "max_amplitude")]
        max_amplitude: f64,
    },
}

fn max_amplitude() -> f64 {
    6.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub steps: usize,
    pub save_every: usize,
    pub initial: InitialSpec,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            steps: 100,
            save_every: 10,
            initial: InitialSpec::Riemann { case: 6 },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<GainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainConfig {
    pub case: usize,
    pub steps: usize,
    pub record_every: usize,
    pub area_weighted: bool,
}

impl Default for GainConfig {
    fn default() -> Self {
        GainConfig {
            case: 6,
            steps: 2000,
            record_every: 10,
            area_weighted: false,
        }
    }
}

fn default_modes() -> Vec<GradientMode> {
    vec![GradientMode::Lsq, GradientMode::MlLsq]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub cases: Vec<usize>,
    pub levels: usize,
    pub reference_depth: usize,
    pub t_final: f64,
    pub modes: Vec<GradientMode>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            cases: vec![3, 4, 6, 11, 12, 17],
            levels: 3,
            reference_depth: 2,
            t_final: 0.2,
            modes: default_modes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub case: usize,
    pub levels: usize,
    pub reference_depth: usize,
    pub t_final: f64,
    pub repeats: usize,
    pub modes: Vec<GradientMode>,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            case: 6,
            levels: 3,
            reference_depth: 1,
            t_final: 0.2,
            repeats: 3,
            modes: default_modes(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, Failure> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Failure::config(e.to_string()))?;
        if let Some(s) = cfg.seed {
            cfg.dataset.seed = s;
            cfg.train.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Failure::config(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::config(m));
        self.step.validate()?;
        self.dataset.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        fvml::mlcorr::Network::new(self.network)?;
        if !fvml::euler::prim_admissible(&self.bc.freestream()) {
            return bad(format!("freestream {:?} is not admissible", self.bc.freestream));
        }
        let g = &self.gradcheck;
        if !(g.rel_step > 0.0 && g.tol > 0.0 && (0.0..=1.0).contains(&g.min_fraction) && g.steps >= 1) {
            return bad("gradcheck needs rel_step > 0, tol > 0, min_fraction in [0,1], steps >= 1".into());
        }
        if self.simulate.save_every == 0 {
            return bad("simulate.save_every must be at least 1".into());
        }
        if let Some(c) = &self.bench.convergence {
            if c.levels < 3 {
                return bad(format!("bench.convergence.levels must be at least 3, got {}", c.levels));
            }
            if c.cases.is_empty() || c.modes.is_empty() {
                return bad("bench.convergence needs cases and modes".into());
            }
            for &id in &c.cases {
                fvml::bench::riemann_case(id)?;
            }
        }
        if let Some(t) = &self.bench.timing {
            if t.repeats < 3 {
                return bad(format!("bench.timing.repeats must be at least 3, got {}", t.repeats));
            }
            fvml::bench::riemann_case(t.case)?;
        }
        if let Some(g) = &self.bench.gain {
            fvml::bench::riemann_case(g.case)?;
        }
        if let InitialSpec::Riemann { case } = self.simulate.initial {
            fvml::bench::riemann_case(case)?;
        }
        Ok(())
    }

    /// Hash of the canonical serialization; independent of formatting and
    /// of the output location.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        canonical.seed = None;
        let text = toml::to_string(&canonical).expect("config serializes");
        sha256_hex(text.as_bytes())
    }
}
