//! Training data: parametrized initial conditions on `[0,1]²`, fine-grid
//! reference trajectories and their projection onto the coarse mesh.
//!
//! Three families are sampled, all with parameters drawn from `U(0,1)`:
//!
//! * `f1`: sums of sines in `x` and `y` with random amplitudes and phases;
//! * `f2`: piecewise constant over the four quadrants plus a disk of radius
//!   0.125 around the center;
//! * `f3`: piecewise constant over the four quadrants.
//!
//! Density and pressure carry positive offsets, so every draw is admissible.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bc::BoundaryData;
use crate::error::{Error, Result};
use crate::euler::{Cons, GasModel, Prim};
use crate::io::{read_frame, sha256_hex, write_frame};
use crate::mesh::{project_fine_to_coarse, read_ascii, write_ascii, Mesh, ParentMap};
use crate::solver::{compute_dt, Solver, StepConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    F1,
    F2,
    F3,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::F1 => "f1",
            Family::F2 => "f2",
            Family::F3 => "f3",
        }
    }
}

/// Number of trajectories per family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyCounts {
    pub f1: usize,
    pub f2: usize,
    pub f3: usize,
}

impl FamilyCounts {
    pub fn total(&self) -> usize {
        self.f1 + self.f2 + self.f3
    }

    /// Families in generation order: all `f1`, then `f2`, then `f3`.
    pub fn sequence(&self) -> Vec<Family> {
        let mut v = vec![Family::F1; self.f1];
        v.extend(std::iter::repeat_n(Family::F2, self.f2));
        v.extend(std::iter::repeat_n(Family::F3, self.f3));
        v
    }

    pub fn fractions(&self) -> [f64; 3] {
        let n = self.total().max(1) as f64;
        [self.f1 as f64 / n, self.f2 as f64 / n, self.f3 as f64 / n]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub train: FamilyCounts,
    pub validation: FamilyCounts,
    /// The `max` amplitude of the samplers.
    pub max_amplitude: f64,
    /// Training pairs per trajectory.
    pub steps: usize,
    /// Pairs start every `stride` coarse steps (1: consecutive frames).
    pub stride: usize,
    pub co: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            train: FamilyCounts { f1: 4, f2: 2, f3: 2 },
            validation: FamilyCounts { f1: 2, f2: 1, f3: 1 },
            max_amplitude: 6.0,
            steps: 2000,
            stride: 1,
            co: 0.03,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.stride == 0 {
            return Err(Error::InvalidInput(
                "dataset needs at least one step and a positive stride".into(),
            ));
        }
        if self.train.total() == 0 {
            return Err(Error::InvalidInput(
                "dataset needs at least one training trajectory".into(),
            ));
        }
        if !(self.max_amplitude > 0.0 && self.max_amplitude.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "max_amplitude must be positive, got {}",
                self.max_amplitude
            )));
        }
        if !(self.co > 0.0 && self.co.is_finite()) {
            return Err(Error::InvalidInput(format!("co must be positive, got {}", self.co)));
        }
        Ok(())
    }

    /// Training pairs this produces.
    pub fn train_frames(&self) -> usize {
        self.train.total() * self.steps
    }

    /// Last coarse step a trajectory has to reach.
    pub fn horizon(&self) -> usize {
        (self.steps - 1) * self.stride + 1
    }

    fn keeps(&self, n: usize) -> bool {
        let start = |m: usize| m % self.stride == 0 && m / self.stride < self.steps;
        n == 0 || start(n) || start(n - 1)
    }
}

/// One drawn initial condition, evaluable anywhere in the plane.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    Sine {
        a: [f64; 8],
        phi: [f64; 2],
        max: f64,
    },
    /// Values for: disk, lower-left, lower-right, upper-left, upper-right.
    Disk {
        values: [Prim; 5],
    },
    /// Values for: lower-left, lower-right, upper-left, upper-right.
    Quadrants {
        values: [Prim; 4],
    },
}

fn draw<const N: usize>(rng: &mut impl Rng) -> [f64; N] {
    std::array::from_fn(|_| rng.random::<f64>())
}

/// Piecewise primitives from per-variable parameter vectors `p_0..p_3`
/// (density offset ½, pressure offset 0.2).
fn piecewise<const N: usize>(rng: &mut impl Rng, max: f64) -> [Prim; N] {
    let p: [[f64; N]; 4] = std::array::from_fn(|_| draw(rng));
    std::array::from_fn(|r| Prim::new(max * p[0][r] + 0.5, max * p[1][r], max * p[2][r], max * p[3][r] + 0.2))
}

impl InitialCondition {
    pub fn sample(family: Family, rng: &mut impl Rng, max: f64) -> Self {
        match family {
            Family::F1 => {
                let a = draw::<8>(rng);
                // phases cover a full period
                let phi = draw::<2>(rng).map(|v| 2.0 * v);
                InitialCondition::Sine { a, phi, max }
            }
            Family::F2 => InitialCondition::Disk {
                values: piecewise(rng, max),
            },
            Family::F3 => InitialCondition::Quadrants {
                values: piecewise(rng, max),
            },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            InitialCondition::Sine { .. } => Family::F1,
            InitialCondition::Disk { .. } => Family::F2,
            InitialCondition::Quadrants { .. } => Family::F3,
        }
    }

    pub fn eval(&self, [x, y]: [f64; 2]) -> Prim {
        let quadrant = || match (x < 0.5, y < 0.5) {
            (true, true) => 0,
            (false, true) => 1,
            (true, false) => 2,
            (false, false) => 3,
        };
        match self {
            InitialCondition::Sine { a, phi, max } => {
                let sx = (4.0 * PI * x + phi[0] * PI).sin();
                let sy = (4.0 * PI * y + phi[1] * PI).sin();
                Prim::new(
                    0.5 * max * (a[0] * sx + a[1] * sy + a[0] + a[1] + 0.1),
                    3.0 * (a[2] * sx + a[3] * sy),
                    3.0 * (a[4] * sx + a[5] * sy),
                    0.5 * max * (a[6] * sx + a[7] * sy + a[6] + a[7] + 0.1),
                )
            }
            InitialCondition::Disk { values } => {
                if (x - 0.5).hypot(y - 0.5) <= 0.125 {
                    values[0]
                } else {
                    values[1 + quadrant()]
                }
            }
            InitialCondition::Quadrants { values } => values[quadrant()],
        }
    }

    /// Values at the cell centroids.
    pub fn on_mesh(&self, mesh: &Mesh) -> Vec<Prim> {
        mesh.cells.iter().map(|c| self.eval(c.centroid)).collect()
    }
}

/// Independent random stream of one trajectory.
pub fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const VALIDATION_STREAM: u64 = 1 << 32;

/// Projected reference states of one initial condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub family: Family,
    pub stream: u64,
    /// Coarse step index of every stored frame.
    pub steps: Vec<usize>,
    pub frames: Vec<Vec<Cons>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    /// Coarse time step shared by the reference and the trained solver.
    pub dt: f64,
    /// Fine steps per coarse step.
    pub substeps: usize,
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
}

impl Dataset {
    /// `(trajectory, k)` for every training pair `frames[k] → frames[k+1]`
    /// (frames one coarse step apart).
    pub fn pairs(set: &[Trajectory]) -> Vec<(usize, usize)> {
        set.iter()
            .enumerate()
            .flat_map(|(t, tr)| {
                tr.steps
                    .windows(2)
                    .enumerate()
                    .filter(|(_, w)| w[1] == w[0] + 1)
                    .map(move |(k, _)| (t, k))
            })
            .collect()
    }
}

/// Smallest sub-step count keeping the fine time step within the fine
/// stability bound at the same `Co`.
pub fn substeps(coarse: &Mesh, fine: &Mesh, co: f64) -> usize {
    let ratio = compute_dt(coarse, co) / compute_dt(fine, co);
    let n = ratio.ceil();
    // ratios within rounding of an integer are that integer
    if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round().max(1.0) as usize
    } else {
        n.max(1.0) as usize
    }
}

fn run_trajectory(
    ic: &InitialCondition,
    stream: u64,
    fine_solver: &Solver,
    map: &ParentMap,
    gas: &GasModel,
    spec: &DatasetSpec,
    sub: usize,
) -> Result<Trajectory> {
    let fine = fine_solver.mesh();
    let mut w: Vec<Cons> = ic.on_mesh(fine).iter().map(|u| gas.prim_to_cons(u)).collect();
    let mut frames = vec![project_fine_to_coarse(&w, map)?];
    let mut steps = vec![0];
    for n in 1..=spec.horizon() {
        for s in 0..sub {
            w = fine_solver
                .step(&w, None)
                .map_err(|e| Error::StepRejected {
                    step: (n - 1) * sub + s + 1,
                    source: Box::new(e),
                })?
                .0;
        }
        if spec.keeps(n) {
            frames.push(project_fine_to_coarse(&w, map)?);
            steps.push(n);
        }
    }
    Ok(Trajectory {
        family: ic.family(),
        stream,
        steps,
        frames,
    })
}

/// Run the reference solver on the fine mesh for every drawn initial
/// condition and project each coarse-step frame onto the coarse mesh.
pub fn generate_dataset(
    spec: &DatasetSpec,
    coarse: &Mesh,
    fine: &Mesh,
    map: &ParentMap,
    reference: &StepConfig,
) -> Result<Dataset> {
    spec.validate()?;
    if map.num_coarse() != coarse.num_cells() || map.num_fine() != fine.num_cells() {
        return Err(Error::InvalidInput(
            "fine mesh is not a refinement of the coarse mesh".into(),
        ));
    }
    if reference.mode.is_ml() {
        return Err(Error::InvalidInput(
            "the reference solver must use a baseline gradient".into(),
        ));
    }
    let cfg = StepConfig {
        co: spec.co,
        ..*reference
    };
    let gas = cfg.gas()?;
    let dt = compute_dt(coarse, spec.co);
    let sub = substeps(coarse, fine, spec.co);
    let bc = BoundaryData::new(fine, Prim::new(1.0, 0.0, 0.0, 1.0), 1.0)?;
    let solver = Solver::with_dt(fine, cfg, bc, dt / sub as f64)?;

    let mut index = 0;
    let mut run_set = |counts: &FamilyCounts, base: u64| -> Result<Vec<Trajectory>> {
        counts
            .sequence()
            .into_iter()
            .enumerate()
            .map(|(k, family)| {
                let stream = base + k as u64;
                let ic = InitialCondition::sample(family, &mut trajectory_rng(spec.seed, stream), spec.max_amplitude);
                let t = run_trajectory(&ic, stream, &solver, map, &gas, spec, sub).map_err(|e| Error::Trajectory {
                    index,
                    source: Box::new(e),
                });
                log::info!("trajectory {index} ({}) done", family.name());
                index += 1;
                t
            })
            .collect()
    };
    let train = run_set(&spec.train, 0)?;
    let validation = run_set(&spec.validation, VALIDATION_STREAM)?;
    Ok(Dataset {
        spec: spec.clone(),
        dt,
        substeps: sub,
        train,
        validation,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    set: String,
    index: usize,
    family: Family,
    stream: u64,
    file: String,
    frames: usize,
    sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config_hash: String,
    coarse_cells: usize,
    coarse_mesh_sha256: String,
    dt: f64,
    substeps: usize,
    spec: DatasetSpec,
    trajectories: Vec<ManifestEntry>,
}

const MANIFEST: &str = "manifest.toml";
const COARSE_MESH: &str = "coarse.mesh";

fn trajectory_bytes(t: &Trajectory, dt: f64) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for (&n, f) in t.steps.iter().zip(&t.frames) {
        write_frame(&mut buf, n as f64 * dt, f)?;
    }
    Ok(buf)
}

/// Write the dataset as `manifest.toml`, `coarse.mesh` and one frame file
/// per trajectory. Returns the manifest text.
pub fn write_dataset(dir: &Path, data: &Dataset, coarse: &Mesh, config_hash: &str) -> Result<String> {
    fs::create_dir_all(dir)?;
    let mesh_text = write_ascii(coarse);
    fs::write(dir.join(COARSE_MESH), &mesh_text)?;
    let mut entries = Vec::new();
    for (set, list) in [("train", &data.train), ("validation", &data.validation)] {
        for (index, t) in list.iter().enumerate() {
            let bytes = trajectory_bytes(t, data.dt)?;
            let file = format!("{set}_{index:03}.fvmf");
            fs::write(dir.join(&file), &bytes)?;
            entries.push(ManifestEntry {
                set: set.into(),
                index,
                family: t.family,
                stream: t.stream,
                file,
                frames: t.frames.len(),
                sha256: sha256_hex(&bytes),
            });
        }
    }
    let manifest = Manifest {
        format: "fvml-dataset-1".into(),
        config_hash: config_hash.into(),
        coarse_cells: coarse.num_cells(),
        coarse_mesh_sha256: sha256_hex(mesh_text.as_bytes()),
        dt: data.dt,
        substeps: data.substeps,
        spec: data.spec.clone(),
        trajectories: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST), &text)?;
    Ok(text)
}

/// Load a dataset written by [`write_dataset`], verifying every hash.
pub fn read_dataset(dir: &Path) -> Result<(Dataset, Mesh)> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format(format!("{MANIFEST}: {e}")))?;
    let mesh_text = fs::read_to_string(dir.join(COARSE_MESH))?;
    if sha256_hex(mesh_text.as_bytes()) != manifest.coarse_mesh_sha256 {
        return Err(Error::Format("coarse mesh does not match the manifest hash".into()));
    }
    let coarse = read_ascii(&mesh_text)?;
    let mut data = Dataset {
        spec: manifest.spec,
        dt: manifest.dt,
        substeps: manifest.substeps,
        train: Vec::new(),
        validation: Vec::new(),
    };
    for e in manifest.trajectories {
        let bytes = fs::read(dir.join(&e.file))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(Error::Format(format!("{}: hash mismatch", e.file)));
        }
        let mut input = bytes.as_slice();
        let mut frames = Vec::with_capacity(e.frames);
        let mut steps = Vec::with_capacity(e.frames);
        for _ in 0..e.frames {
            let (time, w) = read_frame(&mut input)?;
            steps.push((time / data.dt).round() as usize);
            if w.len() != coarse.num_cells() {
                return Err(Error::SizeMismatch {
                    expected: coarse.num_cells(),
                    found: w.len(),
                });
            }
            frames.push(w);
        }
        let t = Trajectory {
            family: e.family,
            stream: e.stream,
            steps,
            frames,
        };
        match e.set.as_str() {
            "train" => data.train.push(t),
            "validation" => data.validation.push(t),
            other => return Err(Error::Format(format!("unknown set {other:?}"))),
        }
    }
    Ok((data, coarse))
}
