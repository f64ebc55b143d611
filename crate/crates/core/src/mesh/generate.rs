use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cross, edge_key, sub, BoundaryEdge, BoundarySpec, BoundaryTag, Mesh};
use crate::error::{Error, Result};

/// Boundary tags for the four sides of an axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SideTags {
    pub left: BoundaryTag,
    pub right: BoundaryTag,
    pub bottom: BoundaryTag,
    pub top: BoundaryTag,
}

impl SideTags {
    /// Doubly periodic: group 0 pairs left/right, group 1 pairs bottom/top.
    pub fn periodic() -> Self {
        SideTags {
            left: BoundaryTag::Periodic(0),
            right: BoundaryTag::Periodic(0),
            bottom: BoundaryTag::Periodic(1),
            top: BoundaryTag::Periodic(1),
        }
    }

    pub fn uniform(tag: BoundaryTag) -> Self {
        SideTags {
            left: tag,
            right: tag,
            bottom: tag,
            top: tag,
        }
    }
}

fn grid_nodes(nx: usize, ny: usize, lo: [f64; 2], hi: [f64; 2]) -> Vec<[f64; 2]> {
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([
                lo[0] + (hi[0] - lo[0]) * i as f64 / nx as f64,
                lo[1] + (hi[1] - lo[1]) * j as f64 / ny as f64,
            ]);
        }
    }
    nodes
}

fn split_quads(nx: usize, ny: usize, keep: impl Fn(usize, usize) -> bool) -> Vec<[usize; 3]> {
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            if !keep(i, j) {
                continue;
            }
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            tris.push([a, b, c]);
            tris.push([a, c, d]);
        }
    }
    tris
}

/// Tag every boundary edge of a triangulation by its midpoint and outward normal.
fn tag_boundary(
    nodes: &[[f64; 2]],
    tris: &[[usize; 3]],
    rule: impl Fn([f64; 2], [f64; 2]) -> BoundaryTag,
) -> Vec<BoundaryEdge> {
    let mut count: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    for t in tris {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            count
                .entry(edge_key(a, b))
                .and_modify(|e| e.2 += 1)
                .or_insert((a, b, 1));
        }
    }
    let mut edges: Vec<BoundaryEdge> = count
        .into_values()
        .filter(|e| e.2 == 1)
        .map(|(a, b, _)| {
            let (p, q) = (nodes[a], nodes[b]);
            let d = sub(q, p);
            let len = d[0].hypot(d[1]);
            let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
            BoundaryEdge {
                nodes: [a, b],
                tag: rule(mid, [d[1] / len, -d[0] / len]),
            }
        })
        .collect();
    edges.sort_by_key(|e| edge_key(e.nodes[0], e.nodes[1]));
    edges
}

fn side_rule(sides: SideTags) -> impl Fn([f64; 2], [f64; 2]) -> BoundaryTag {
    move |_, n| {
        if n[0] < -0.5 {
            sides.left
        } else if n[0] > 0.5 {
            sides.right
        } else if n[1] < -0.5 {
            sides.bottom
        } else {
            sides.top
        }
    }
}

/// Rectangle split into `nx × ny` quads, each cut along its rising diagonal.
pub fn structured_square(nx: usize, ny: usize, lo: [f64; 2], hi: [f64; 2], sides: SideTags) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidInput("grid needs at least one quad".into()));
    }
    let nodes = grid_nodes(nx, ny, lo, hi);
    let tris = split_quads(nx, ny, |_, _| true);
    let edges = tag_boundary(&nodes, &tris, side_rule(sides));
    Mesh::build(nodes, &tris, None, &BoundarySpec { edges, default: None })
}

/// Square grid with interior nodes displaced by up to `jitter` cell widths,
/// then made Delaunay by edge flips. Boundary nodes stay on the grid so that
/// periodic sides still match.
pub fn jittered_square(n: usize, jitter: f64, seed: u64, lo: [f64; 2], hi: [f64; 2], sides: SideTags) -> Result<Mesh> {
    if n < 2 {
        return Err(Error::InvalidInput("jittered grid needs n >= 2".into()));
    }
    if !(0.0..0.35).contains(&jitter) {
        return Err(Error::InvalidInput(format!("jitter {jitter} outside [0, 0.35)")));
    }
    let mut nodes = grid_nodes(n, n, lo, hi);
    let h = [(hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 1..n {
        for i in 1..n {
            let p = &mut nodes[j * (n + 1) + i];
            p[0] += jitter * h[0] * rng.random_range(-1.0..1.0);
            p[1] += jitter * h[1] * rng.random_range(-1.0..1.0);
        }
    }
    let mut tris = split_quads(n, n, |_, _| true);
    for (c, t) in tris.iter().enumerate() {
        if signed_area(&nodes, t) <= 0.0 {
            return Err(Error::Mesh {
                cell: c,
                what: "jitter inverted a triangle".into(),
            });
        }
    }
    lawson_flips(&nodes, &mut tris);
    let edges = tag_boundary(&nodes, &tris, side_rule(sides));
    Mesh::build(nodes, &tris, None, &BoundarySpec { edges, default: None })
}

fn signed_area(nodes: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    0.5 * cross(sub(nodes[t[1]], nodes[t[0]]), sub(nodes[t[2]], nodes[t[0]]))
}

/// `> 0` when `d` lies inside the circumcircle of counterclockwise `(a, b, c)`.
fn in_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let r = |p: [f64; 2]| {
        let (x, y) = (p[0] - d[0], p[1] - d[1]);
        [x, y, x * x + y * y]
    };
    let (a, b, c) = (r(a), r(b), r(c));
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
}

fn lawson_flips(nodes: &[[f64; 2]], tris: &mut [[usize; 3]]) {
    for _pass in 0..200 {
        let mut owner: HashMap<(usize, usize), usize> = HashMap::with_capacity(3 * tris.len());
        for (t, tri) in tris.iter().enumerate() {
            for k in 0..3 {
                owner.insert((tri[k], tri[(k + 1) % 3]), t);
            }
        }
        let mut flipped = vec![false; tris.len()];
        let mut any = false;
        for t1 in 0..tris.len() {
            if flipped[t1] {
                continue;
            }
            for k in 0..3 {
                let [a, b, c] = [tris[t1][k], tris[t1][(k + 1) % 3], tris[t1][(k + 2) % 3]];
                let Some(&t2) = owner.get(&(b, a)) else {
                    continue;
                };
                if flipped[t2] {
                    continue;
                }
                let tri2 = tris[t2];
                let Some(&d) = tri2.iter().find(|&&v| v != a && v != b) else {
                    continue;
                };
                if in_circle(nodes[a], nodes[b], nodes[c], nodes[d]) <= 1e-14 {
                    continue;
                }
                let n1 = [a, d, c];
                let n2 = [d, b, c];
                if signed_area(nodes, &n1) <= 0.0 || signed_area(nodes, &n2) <= 0.0 {
                    continue;
                }
                tris[t1] = n1;
                tris[t2] = n2;
                flipped[t1] = true;
                flipped[t2] = true;
                any = true;
                break;
            }
        }
        if !any {
            return;
        }
    }
}

/// Mach 3 forward-facing step: channel `[0,3]×[0,1]` minus the step
/// `x ≥ 0.6, y < 0.2`. Left side is supersonic inflow, right side supersonic
/// outflow, all other sides slip walls. The quad size is the closest to
/// `h_target` that resolves the step corner exactly.
pub fn forward_step(h_target: f64) -> Result<Mesh> {
    if !(h_target > 0.0 && h_target <= 0.2) {
        return Err(Error::InvalidInput(format!(
            "forward step spacing {h_target} outside (0, 0.2]"
        )));
    }
    let n = (((1.0 / h_target) / 5.0).round() as usize).max(1) * 5;
    let (nx, ny) = (3 * n, n);
    let (step_i, step_j) = (3 * n / 5, n / 5);
    let all = grid_nodes(nx, ny, [0.0, 0.0], [3.0, 1.0]);
    let tris = split_quads(nx, ny, |i, j| !(i >= step_i && j < step_j));

    // drop nodes buried inside the step
    let mut used = vec![false; all.len()];
    for t in &tris {
        for &v in t {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; all.len()];
    let mut nodes = Vec::with_capacity(all.len());
    for (v, p) in all.iter().enumerate() {
        if used[v] {
            remap[v] = nodes.len();
            nodes.push(*p);
        }
    }
    let tris: Vec<[usize; 3]> = tris.iter().map(|t| t.map(|v| remap[v])).collect();
    let edges = tag_boundary(&nodes, &tris, |mid, normal| {
        if mid[0] < 1e-12 && normal[0] < -0.5 {
            BoundaryTag::SupersonicIn
        } else if mid[0] > 3.0 - 1e-12 && normal[0] > 0.5 {
            BoundaryTag::SupersonicOut
        } else {
            BoundaryTag::SlipWall
        }
    });
    Mesh::build(nodes, &tris, None, &BoundarySpec { edges, default: None })
}
