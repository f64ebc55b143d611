//! Unstructured triangular meshes.
//!
//! A [`Mesh`] is immutable once built. Besides the raw triangulation it holds
//! everything the finite-volume scheme needs per cell: areas, centroids, the
//! three faces with outward normals, and an ordered three-entry stencil.
//!
//! Stencil order is counterclockwise around the centroid. The first entry is
//! the neighbor that follows the widest angular gap, which makes the order
//! independent of the coordinate frame. Ties fall back to the smaller
//! neighbor id.
//!
//! Periodic boundary faces are merged pairwise into interior faces; the
//! partner cell's centroid is shifted by the period so that offsets and
//! angles see the virtual neighbor.

mod generate;
mod io;
mod refine;

pub use generate::{forward_step, jittered_square, structured_square, SideTags};
pub use io::{read_ascii, write_ascii};
pub use refine::{project_fine_to_coarse, refine_uniform, ParentMap};

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition family attached to a boundary face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    /// Paired with the face of the same group on the opposite side.
    Periodic(u32),
    SupersonicIn,
    SupersonicOut,
    SubsonicIn,
    SubsonicOut,
    SlipWall,
}

impl BoundaryTag {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryTag::Periodic(_) => "periodic",
            BoundaryTag::SupersonicIn => "supersonic_in",
            BoundaryTag::SupersonicOut => "supersonic_out",
            BoundaryTag::SubsonicIn => "subsonic_in",
            BoundaryTag::SubsonicOut => "subsonic_out",
            BoundaryTag::SlipWall => "slip_wall",
        }
    }

    pub fn parse(name: &str, pair: Option<u32>) -> Result<Self> {
        Ok(match name {
            "periodic" => BoundaryTag::Periodic(pair.unwrap_or(0)),
            "supersonic_in" => BoundaryTag::SupersonicIn,
            "supersonic_out" => BoundaryTag::SupersonicOut,
            "subsonic_in" => BoundaryTag::SubsonicIn,
            "subsonic_out" => BoundaryTag::SubsonicOut,
            "slip_wall" => BoundaryTag::SlipWall,
            other => return Err(Error::Format(format!("unknown boundary type '{other}'"))),
        })
    }
}

/// A tagged boundary edge given by its two node ids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: BoundaryTag,
}

/// How boundary edges get their tags: explicit edges first, then `default`.
#[derive(Clone, Debug, Default)]
pub struct BoundarySpec {
    pub edges: Vec<BoundaryEdge>,
    pub default: Option<BoundaryTag>,
}

impl BoundarySpec {
    pub fn uniform(tag: BoundaryTag) -> Self {
        BoundarySpec {
            edges: Vec::new(),
            default: Some(tag),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    /// Node ids, counterclockwise.
    pub nodes: [usize; 3],
    pub area: f64,
    pub centroid: [f64; 2],
    pub region: u32,
    pub faces: [usize; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaceSide {
    /// Interior (or merged periodic) face. `shift` is added to the right
    /// cell's centroid to place it next to the left cell.
    Cell {
        id: usize,
        shift: [f64; 2],
    },
    Boundary(BoundaryTag),
}

#[derive(Clone, Debug)]
pub struct Face {
    pub nodes: [usize; 2],
    pub length: f64,
    pub midpoint: [f64; 2],
    /// Unit normal pointing from `left` into the right cell (or out of the domain).
    pub normal: [f64; 2],
    pub left: usize,
    pub right: FaceSide,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        matches!(self.right, FaceSide::Boundary(_))
    }
}

/// Neighbor in a cell stencil: another cell, or the ghost behind a boundary face.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Neighbor {
    Cell(usize),
    Ghost(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct StencilEntry {
    pub face: usize,
    pub neighbor: Neighbor,
    /// Outward unit normal of the face as seen from this cell.
    pub normal: [f64; 2],
    pub length: f64,
    /// Neighbor centroid minus own centroid (periodic shift / mirror applied).
    pub offset: [f64; 2],
    /// Face midpoint minus own centroid.
    pub face_offset: [f64; 2],
}

/// Immutable triangulation with the derived finite-volume geometry.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub cells: Vec<Cell>,
    pub faces: Vec<Face>,
    stencils: Vec<[StencilEntry; 3]>,
    angles: Vec<Option<[f64; 3]>>,
    boundary_adjacent: Vec<bool>,
    boundary_edges: Vec<BoundaryEdge>,
    lsq_coeffs: Vec<[[f64; 2]; 3]>,
    lsq_condition: Vec<f64>,
    gg_weights: Vec<[[f64; 2]; 3]>,
}

pub const LSQ_MAX_CONDITION: f64 = 1e12;

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Counterclockwise angle from `a` to `b` in `[0, 2π)`.
pub fn ccw_angle(a: [f64; 2], b: [f64; 2]) -> f64 {
    let t = cross(a, b).atan2(dot(a, b));
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl Mesh {
    /// Build the mesh and all derived geometry. Triangles may come in either
    /// orientation; they are stored counterclockwise.
    pub fn build(
        nodes: Vec<[f64; 2]>,
        triangles: &[[usize; 3]],
        regions: Option<&[u32]>,
        boundary: &BoundarySpec,
    ) -> Result<Mesh> {
        if triangles.is_empty() {
            return Err(Error::MeshSetup("no triangles".into()));
        }
        if let Some(r) = regions {
            if r.len() != triangles.len() {
                return Err(Error::SizeMismatch {
                    expected: triangles.len(),
                    found: r.len(),
                });
            }
        }
        let (lo, hi) = bbox(&nodes);
        let extent = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
        let area_floor = 1e-14 * extent * extent;

        let mut cells = Vec::with_capacity(triangles.len());
        let mut seen = HashMap::with_capacity(triangles.len());
        for (id, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&n| n >= nodes.len()) {
                return Err(Error::Mesh {
                    cell: id,
                    what: "references a missing node".into(),
                });
            }
            let mut t = *tri;
            let p = t.map(|n| nodes[n]);
            let signed = 0.5 * cross(sub(p[1], p[0]), sub(p[2], p[0]));
            if signed.abs() <= area_floor {
                return Err(Error::Mesh {
                    cell: id,
                    what: format!("degenerate triangle (area {signed:e})"),
                });
            }
            if signed < 0.0 {
                t.swap(1, 2);
            }
            let mut key = t;
            key.sort_unstable();
            if let Some(prev) = seen.insert(key, id) {
                return Err(Error::Mesh {
                    cell: id,
                    what: format!("duplicates cell {prev}"),
                });
            }
            let centroid = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
            cells.push(Cell {
                nodes: t,
                area: signed.abs(),
                centroid,
                region: regions.map_or(0, |r| r[id]),
                faces: [usize::MAX; 3],
            });
        }

        // edge -> incident (cell, local edge)
        let mut edges: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::with_capacity(cells.len() * 2);
        for (c, cell) in cells.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (cell.nodes[k], cell.nodes[(k + 1) % 3]);
                let inc = edges.entry(edge_key(a, b)).or_default();
                inc.push((c, k));
                if inc.len() > 2 {
                    return Err(Error::NonManifoldEdge { a, b });
                }
            }
        }

        let tag_of: HashMap<(usize, usize), BoundaryTag> = boundary
            .edges
            .iter()
            .map(|e| (edge_key(e.nodes[0], e.nodes[1]), e.tag))
            .collect();

        // deterministic face order: by (first incident cell, local edge)
        let mut edge_list: Vec<(&(usize, usize), &Vec<(usize, usize)>)> = edges.iter().collect();
        edge_list.sort_by_key(|(_, inc)| inc[0]);

        let mut faces = Vec::with_capacity(edge_list.len());
        let mut boundary_edges = Vec::new();
        for (&key, inc) in edge_list {
            let (c, k) = inc[0];
            let cell = &cells[c];
            let (a, b) = (cell.nodes[k], cell.nodes[(k + 1) % 3]);
            let (pa, pb) = (nodes[a], nodes[b]);
            let d = sub(pb, pa);
            let length = d[0].hypot(d[1]);
            let normal = [d[1] / length, -d[0] / length];
            let midpoint = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            let right = if inc.len() == 2 {
                FaceSide::Cell {
                    id: inc[1].0,
                    shift: [0.0, 0.0],
                }
            } else {
                let tag = tag_of
                    .get(&key)
                    .copied()
                    .or(boundary.default)
                    .ok_or_else(|| Error::MeshSetup(format!("boundary edge ({a}, {b}) has no tag")))?;
                boundary_edges.push(BoundaryEdge { nodes: [a, b], tag });
                FaceSide::Boundary(tag)
            };
            let f = faces.len();
            faces.push(Face {
                nodes: [a, b],
                length,
                midpoint,
                normal,
                left: c,
                right,
            });
            cells[c].faces[k] = f;
            if inc.len() == 2 {
                let (c2, k2) = inc[1];
                cells[c2].faces[k2] = f;
            }
        }

        let faces = pair_periodic(faces, &mut cells, extent)?;

        let mut mesh = Mesh {
            nodes,
            cells,
            faces,
            stencils: Vec::new(),
            angles: Vec::new(),
            boundary_adjacent: Vec::new(),
            boundary_edges,
            lsq_coeffs: Vec::new(),
            lsq_condition: Vec::new(),
            gg_weights: Vec::new(),
        };
        mesh.derive_stencils();
        Ok(mesh)
    }

    fn derive_stencils(&mut self) {
        let n = self.cells.len();
        self.stencils = Vec::with_capacity(n);
        self.angles = Vec::with_capacity(n);
        self.boundary_adjacent = Vec::with_capacity(n);
        self.lsq_coeffs = Vec::with_capacity(n);
        self.lsq_condition = Vec::with_capacity(n);
        self.gg_weights = Vec::with_capacity(n);
        for i in 0..n {
            let cell = &self.cells[i];
            let mut entries = cell.faces.map(|f| {
                let face = &self.faces[f];
                let face_offset = sub(face.midpoint, cell.centroid);
                match face.right {
                    FaceSide::Cell { id, shift } => {
                        // geometry is stored on the left side; the right cell
                        // sees everything translated by -shift
                        let (j, normal, pos, face_offset) = if face.left == i {
                            let c = self.cells[id].centroid;
                            (id, face.normal, [c[0] + shift[0], c[1] + shift[1]], face_offset)
                        } else {
                            let c = self.cells[face.left].centroid;
                            let mid = [face.midpoint[0] - shift[0], face.midpoint[1] - shift[1]];
                            (
                                face.left,
                                [-face.normal[0], -face.normal[1]],
                                [c[0] - shift[0], c[1] - shift[1]],
                                sub(mid, cell.centroid),
                            )
                        };
                        StencilEntry {
                            face: f,
                            neighbor: Neighbor::Cell(j),
                            normal,
                            length: face.length,
                            offset: sub(pos, cell.centroid),
                            face_offset,
                        }
                    }
                    FaceSide::Boundary(_) => {
                        let n = face.normal;
                        let h = dot(face_offset, n);
                        StencilEntry {
                            face: f,
                            neighbor: Neighbor::Ghost(f),
                            normal: n,
                            length: face.length,
                            offset: [2.0 * h * n[0], 2.0 * h * n[1]],
                            face_offset,
                        }
                    }
                }
            });
            order_stencil(&mut entries);
            let adjacent = entries.iter().any(|e| matches!(e.neighbor, Neighbor::Ghost(_)));
            let angles = if adjacent { None } else { Some(stencil_gaps(&entries)) };

            let mut m = [0.0; 3]; // xx, xy, yy
            for e in &entries {
                let w = 1.0 / dot(e.offset, e.offset);
                m[0] += w * e.offset[0] * e.offset[0];
                m[1] += w * e.offset[0] * e.offset[1];
                m[2] += w * e.offset[1] * e.offset[1];
            }
            let det = m[0] * m[2] - m[1] * m[1];
            let tr = m[0] + m[2];
            let disc = (0.25 * (m[0] - m[2]).powi(2) + m[1] * m[1]).sqrt();
            let (lmax, lmin) = (0.5 * tr + disc, 0.5 * tr - disc);
            let condition = if lmin > 0.0 && det > 1e-14 * tr * tr {
                lmax / lmin
            } else {
                f64::INFINITY
            };
            let coeffs = entries.map(|e| {
                let w = 1.0 / dot(e.offset, e.offset);
                let (bx, by) = (w * e.offset[0], w * e.offset[1]);
                [(m[2] * bx - m[1] * by) / det, (m[0] * by - m[1] * bx) / det]
            });
            let gg = entries.map(|e| {
                let s = e.length / cell.area;
                [e.normal[0] * s, e.normal[1] * s]
            });

            self.stencils.push(entries);
            self.angles.push(angles);
            self.boundary_adjacent.push(adjacent);
            self.lsq_coeffs.push(coeffs);
            self.lsq_condition.push(condition);
            self.gg_weights.push(gg);
        }
    }

    /// Rebuild with every node mapped through `f` (same topology and tags).
    pub fn transformed(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Mesh> {
        let tris: Vec<[usize; 3]> = self.cells.iter().map(|c| c.nodes).collect();
        let regions: Vec<u32> = self.cells.iter().map(|c| c.region).collect();
        Mesh::build(
            self.nodes.iter().map(|&p| f(p)).collect(),
            &tris,
            Some(&regions),
            &BoundarySpec {
                edges: self.boundary_edges.clone(),
                default: None,
            },
        )
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn stencil(&self, cell: usize) -> &[StencilEntry; 3] {
        &self.stencils[cell]
    }

    /// The three counterclockwise gaps between successive stencil neighbors,
    /// or `None` for cells touching a non-periodic boundary.
    pub fn stencil_angles(&self, cell: usize) -> Option<[f64; 3]> {
        self.angles[cell]
    }

    pub fn is_boundary_adjacent(&self, cell: usize) -> bool {
        self.boundary_adjacent[cell]
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    /// Per-slot least-squares coefficients: `∇u = Σ_k c_k (u_k − u_i)`.
    pub fn lsq_coefficients(&self, cell: usize) -> Result<&[[f64; 2]; 3]> {
        let condition = self.lsq_condition[cell];
        if condition > LSQ_MAX_CONDITION {
            return Err(Error::DegenerateStencil { cell, condition });
        }
        Ok(&self.lsq_coeffs[cell])
    }

    /// Per-slot `n|S|/|C|` used by the Green-Gauss gradient.
    pub fn gg_weights(&self, cell: usize) -> &[[f64; 2]; 3] {
        &self.gg_weights[cell]
    }

    pub fn areas(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.area).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(|c| c.area).sum()
    }

    pub fn min_sqrt_area(&self) -> f64 {
        self.cells.iter().map(|c| c.area.sqrt()).fold(f64::INFINITY, f64::min)
    }

    /// Average cell length `sqrt(mean |C|)`.
    pub fn mean_cell_length(&self) -> f64 {
        (self.total_area() / self.cells.len() as f64).sqrt()
    }

    pub fn perimeter(&self, cell: usize) -> f64 {
        self.cells[cell].faces.iter().map(|&f| self.faces[f].length).sum()
    }

    /// `‖Σ_faces n|S|‖` for one cell; zero for a closed polygon.
    pub fn closure_defect(&self, cell: usize) -> f64 {
        let mut s = [0.0, 0.0];
        for e in &self.stencils[cell] {
            s[0] += e.normal[0] * e.length;
            s[1] += e.normal[1] * e.length;
        }
        s[0].hypot(s[1])
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        bbox(&self.nodes)
    }

    /// Cells crossed by the horizontal line `y`, sorted by centroid x.
    pub fn slice_y(&self, y: f64) -> Vec<usize> {
        let mut hits: Vec<usize> = (0..self.cells.len())
            .filter(|&c| {
                let ys = self.cells[c].nodes.map(|n| self.nodes[n][1]);
                let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                lo <= y && y < hi
            })
            .collect();
        hits.sort_by(|&a, &b| self.cells[a].centroid[0].total_cmp(&self.cells[b].centroid[0]));
        hits
    }
}

fn bbox(nodes: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in nodes {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn neighbor_key(n: Neighbor) -> (u8, usize) {
    match n {
        Neighbor::Cell(c) => (0, c),
        Neighbor::Ghost(f) => (1, f),
    }
}

/// Counterclockwise gaps `θ_k` from entry `k` to entry `k+1`.
fn stencil_gaps(e: &[StencilEntry; 3]) -> [f64; 3] {
    [0, 1, 2].map(|k| ccw_angle(e[k].offset, e[(k + 1) % 3].offset))
}

fn order_stencil(entries: &mut [StencilEntry; 3]) {
    entries.sort_by(|a, b| {
        let ta = a.offset[1].atan2(a.offset[0]);
        let tb = b.offset[1].atan2(b.offset[0]);
        ta.total_cmp(&tb)
    });
    let gaps = stencil_gaps(entries);
    let widest = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // entry following the widest gap; near-ties resolved by neighbor id
    let start = (0..3)
        .filter(|&k| gaps[k] >= widest - 1e-9)
        .map(|k| (k + 1) % 3)
        .min_by_key(|&k| neighbor_key(entries[k].neighbor))
        .unwrap_or(0);
    entries.rotate_left(start);
}

/// Merge periodic boundary faces into interior faces.
fn pair_periodic(faces: Vec<Face>, cells: &mut [Cell], extent: f64) -> Result<Vec<Face>> {
    let tol = 1e-9 * extent;
    let mut groups: HashMap<u32, Vec<usize>> = HashMap::new();
    for (f, face) in faces.iter().enumerate() {
        if let FaceSide::Boundary(BoundaryTag::Periodic(g)) = face.right {
            groups.entry(g).or_default().push(f);
        }
    }
    if groups.is_empty() {
        return Ok(faces);
    }
    let mut group_ids: Vec<u32> = groups.keys().copied().collect();
    group_ids.sort_unstable();

    // kept face -> (absorbed partner, shift applied to the partner's centroid)
    let mut merged_into: HashMap<usize, (usize, [f64; 2])> = HashMap::new();
    let mut absorbed_by: HashMap<usize, usize> = HashMap::new();
    let mut removed = vec![false; faces.len()];
    for g in group_ids {
        let members = &groups[&g];
        let d = {
            let f = &faces[members[0]];
            [-f.normal[1], f.normal[0]]
        };
        let m = [-d[1], d[0]];
        let proj: Vec<f64> = members.iter().map(|&f| dot(faces[f].midpoint, m)).collect();
        let a = proj.iter().copied().fold(f64::INFINITY, f64::min);
        let b = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if b - a <= tol {
            return Err(Error::MeshSetup(format!("periodic group {g} does not span two sides")));
        }
        let t = [(b - a) * m[0], (b - a) * m[1]];
        let mut side_a = Vec::new();
        let mut side_b = Vec::new();
        for (&f, &p) in members.iter().zip(&proj) {
            if (p - a).abs() <= tol {
                side_a.push(f);
            } else if (p - b).abs() <= tol {
                side_b.push(f);
            } else {
                return Err(Error::MeshSetup(format!(
                    "periodic face {f} (group {g}) lies on neither side"
                )));
            }
        }
        if side_a.len() != side_b.len() {
            return Err(Error::MeshSetup(format!(
                "periodic group {g}: sides have {} and {} faces",
                side_a.len(),
                side_b.len()
            )));
        }
        let mut used = vec![false; side_b.len()];
        for &fa in &side_a {
            let target = [faces[fa].midpoint[0] + t[0], faces[fa].midpoint[1] + t[1]];
            let hit = side_b.iter().enumerate().find(|(k, &fb)| {
                !used[*k] && {
                    let q = faces[fb].midpoint;
                    (q[0] - target[0]).abs() <= tol && (q[1] - target[1]).abs() <= tol
                }
            });
            let (k, &fb) =
                hit.ok_or_else(|| Error::MeshSetup(format!("periodic face {fa} (group {g}) has no partner")))?;
            used[k] = true;
            if (faces[fa].length - faces[fb].length).abs() > 1e-10 * extent {
                return Err(Error::MeshSetup(format!(
                    "periodic faces {fa} and {fb} differ in length"
                )));
            }
            merged_into.insert(fa, (fb, [-t[0], -t[1]]));
            absorbed_by.insert(fb, fa);
            removed[fb] = true;
        }
    }

    // renumber
    let mut new_id = vec![usize::MAX; faces.len()];
    let mut out = Vec::with_capacity(faces.len() - merged_into.len());
    for (f, face) in faces.iter().enumerate() {
        if removed[f] {
            continue;
        }
        new_id[f] = out.len();
        let mut face = face.clone();
        if let Some(&(fb, shift)) = merged_into.get(&f) {
            face.right = FaceSide::Cell {
                id: faces[fb].left,
                shift,
            };
        }
        out.push(face);
    }
    for (&fb, &fa) in &absorbed_by {
        new_id[fb] = new_id[fa];
    }
    for cell in cells.iter_mut() {
        for f in cell.faces.iter_mut() {
            *f = new_id[*f];
        }
    }
    Ok(out)
}
