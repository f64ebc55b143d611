//! Plain-text mesh format.
//!
//! ```text
//! nodes N cells M
//! x y                 (N lines)
//! i j k region        (M lines, 0-based node ids)
//! btag a b type [g]   (one line per tagged boundary edge)
//! ```
//!
//! `type` is one of `periodic`, `supersonic_in`, `supersonic_out`,
//! `subsonic_in`, `subsonic_out`, `slip_wall`; periodic edges carry their
//! pairing group `g`. Blank lines and `#` comments are ignored.

use std::fmt::Write as _;

use super::{BoundaryEdge, BoundarySpec, BoundaryTag, Mesh};
use crate::error::{Error, Result};

pub fn write_ascii(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "nodes {} cells {}", mesh.nodes.len(), mesh.cells.len());
    for p in &mesh.nodes {
        let _ = writeln!(s, "{:?} {:?}", p[0], p[1]);
    }
    for c in &mesh.cells {
        let _ = writeln!(s, "{} {} {} {}", c.nodes[0], c.nodes[1], c.nodes[2], c.region);
    }
    for e in mesh.boundary_edges() {
        let _ = match e.tag {
            BoundaryTag::Periodic(g) => writeln!(s, "btag {} {} periodic {}", e.nodes[0], e.nodes[1], g),
            tag => writeln!(s, "btag {} {} {}", e.nodes[0], e.nodes[1], tag.name()),
        };
    }
    s
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Format(format!("line {line}: missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::Format(format!("line {line}: bad {what} '{tok}'")))
}

pub fn read_ascii(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (ln, header) = lines.next().ok_or_else(|| Error::Format("empty mesh file".into()))?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some("nodes") {
        return Err(Error::Format(format!("line {ln}: expected 'nodes N cells M'")));
    }
    let n_nodes: usize = parse(tok.next(), ln, "node count")?;
    if tok.next() != Some("cells") {
        return Err(Error::Format(format!("line {ln}: expected 'cells M'")));
    }
    let n_cells: usize = parse(tok.next(), ln, "cell count")?;

    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::Format("truncated node list".into()))?;
        let mut t = l.split_whitespace();
        nodes.push([parse(t.next(), ln, "x")?, parse(t.next(), ln, "y")?]);
    }
    let mut tris = Vec::with_capacity(n_cells);
    let mut regions = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::Format("truncated cell list".into()))?;
        let mut t = l.split_whitespace();
        tris.push([
            parse(t.next(), ln, "node id")?,
            parse(t.next(), ln, "node id")?,
            parse(t.next(), ln, "node id")?,
        ]);
        regions.push(match t.next() {
            Some(r) => parse(Some(r), ln, "region")?,
            None => 0,
        });
    }
    let mut edges = Vec::new();
    for (ln, l) in lines {
        let mut t = l.split_whitespace();
        if t.next() != Some("btag") {
            return Err(Error::Format(format!("line {ln}: expected 'btag'")));
        }
        let a: usize = parse(t.next(), ln, "node id")?;
        let b: usize = parse(t.next(), ln, "node id")?;
        let kind = t
            .next()
            .ok_or_else(|| Error::Format(format!("line {ln}: missing boundary type")))?;
        let pair = match t.next() {
            Some(g) => Some(parse(Some(g), ln, "periodic group")?),
            None => None,
        };
        if a >= n_nodes || b >= n_nodes {
            return Err(Error::Format(format!("line {ln}: node id out of range")));
        }
        edges.push(BoundaryEdge {
            nodes: [a, b],
            tag: BoundaryTag::parse(kind, pair)?,
        });
    }
    Mesh::build(nodes, &tris, Some(&regions), &BoundarySpec { edges, default: None })
}
