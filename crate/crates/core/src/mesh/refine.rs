use std::collections::HashMap;

use super::{edge_key, BoundaryEdge, BoundarySpec, Mesh};
use crate::error::{Error, Result};
use crate::euler::Cons;

/// Coarse-to-fine correspondence produced by [`refine_uniform`].
#[derive(Clone, Debug)]
pub struct ParentMap {
    /// Coarse parent of every fine cell.
    pub parent: Vec<usize>,
    /// Fine children of every coarse cell.
    pub children: Vec<[usize; 4]>,
    pub child_area: Vec<[f64; 4]>,
}

impl ParentMap {
    pub fn num_coarse(&self) -> usize {
        self.children.len()
    }

    pub fn num_fine(&self) -> usize {
        self.parent.len()
    }
}

/// Split every triangle into four through its edge midpoints.
pub fn refine_uniform(mesh: &Mesh) -> Result<(Mesh, ParentMap)> {
    let mut nodes = mesh.nodes.clone();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
        *mid.entry(edge_key(a, b)).or_insert_with(|| {
            let (p, q) = (nodes[a], nodes[b]);
            nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
            nodes.len() - 1
        })
    };

    let mut tris = Vec::with_capacity(4 * mesh.cells.len());
    let mut regions = Vec::with_capacity(4 * mesh.cells.len());
    for cell in &mesh.cells {
        let [a, b, c] = cell.nodes;
        let ab = midpoint(a, b, &mut nodes);
        let bc = midpoint(b, c, &mut nodes);
        let ca = midpoint(c, a, &mut nodes);
        tris.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        regions.extend_from_slice(&[cell.region; 4]);
    }

    let mut edges = Vec::with_capacity(2 * mesh.boundary_edges().len());
    for e in mesh.boundary_edges() {
        let [a, b] = e.nodes;
        let m = midpoint(a, b, &mut nodes);
        edges.push(BoundaryEdge {
            nodes: [a, m],
            tag: e.tag,
        });
        edges.push(BoundaryEdge {
            nodes: [m, b],
            tag: e.tag,
        });
    }

    let fine = Mesh::build(nodes, &tris, Some(&regions), &BoundarySpec { edges, default: None })?;
    let n = mesh.cells.len();
    let parent = (0..4 * n).map(|f| f / 4).collect();
    let children = (0..n).map(|c| [4 * c, 4 * c + 1, 4 * c + 2, 4 * c + 3]).collect();
    let child_area = (0..n)
        .map(|c| [0, 1, 2, 3].map(|k| fine.cells[4 * c + k].area))
        .collect();
    Ok((
        fine,
        ParentMap {
            parent,
            children,
            child_area,
        },
    ))
}

/// Area-weighted average of fine cells onto their coarse parents.
pub fn project_fine_to_coarse(fine: &[Cons], map: &ParentMap) -> Result<Vec<Cons>> {
    if fine.len() != map.num_fine() {
        return Err(Error::SizeMismatch {
            expected: map.num_fine(),
            found: fine.len(),
        });
    }
    Ok(map
        .children
        .iter()
        .zip(&map.child_area)
        .map(|(kids, areas)| {
            let total: f64 = areas.iter().sum();
            let mut acc = [0.0; 4];
            for (&c, &a) in kids.iter().zip(areas) {
                for (s, v) in acc.iter_mut().zip(fine[c].0) {
                    *s += a * v;
                }
            }
            Cons(acc.map(|s| s / total))
        })
        .collect())
}
