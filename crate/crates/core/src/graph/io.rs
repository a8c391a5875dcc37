//! Text formats for graphs and coordinates.
//!
//! Edge lists are comma-separated `i,j,weight` lines, one undirected edge
//! per line with 0-based node indices. Lines starting with `#` are
//! comments; the writer records the node count and normalization flag in
//! comments so a round trip preserves both. Coordinate files are
//! `node_id,lat,lon` lines covering every node exactly once.

use std::fs;
use std::path::Path;

use crate::{Error, Result, SensorGraph};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Reads an edge list. The node count comes from a `# nodes N` comment when
/// present, otherwise from the largest index seen.
pub fn read_edge_list(path: &Path) -> Result<SensorGraph> {
    let text = fs::read_to_string(path)?;
    let mut declared_nodes: Option<usize> = None;
    let mut normalized = false;
    let mut links: Vec<(usize, usize, f64, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut parts = comment.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some("nodes"), Some(n)) => {
                    declared_nodes = Some(n.parse().map_err(|_| {
                        parse_err(lineno, format!("bad node count {:?}", n))
                    })?);
                }
                (Some("normalized"), Some(flag)) => {
                    normalized = flag == "true";
                }
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(
                lineno,
                format!("expected i,j,weight, got {:?}", raw),
            ));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad node index {:?}", fields[0])))?;
        let j: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad node index {:?}", fields[1])))?;
        let w: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad weight {:?}", fields[2])))?;
        links.push((i, j, w, lineno));
    }

    let n = declared_nodes.unwrap_or_else(|| {
        links
            .iter()
            .map(|&(i, j, _, _)| i.max(j) + 1)
            .max()
            .unwrap_or(0)
    });
    let mut g = SensorGraph::empty(n);
    for (i, j, w, lineno) in links {
        if i >= n || j >= n {
            return Err(parse_err(
                lineno,
                format!("edge ({}, {}) exceeds declared node count {}", i, j, n),
            ));
        }
        if i == j {
            return Err(parse_err(lineno, format!("self-edge at node {}", i)));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(parse_err(lineno, format!("invalid weight {}", w)));
        }
        if g.weight(i, j) != 0.0 && g.weight(i, j) != w {
            return Err(parse_err(
                lineno,
                format!("conflicting duplicate edge ({}, {})", i, j),
            ));
        }
        g.set_edge(i, j, w);
    }
    // Revalidate through the public constructor so the invariants hold.
    SensorGraph::from_weights(n, g.weights().to_vec(), normalized)
}

/// Writes each undirected edge once (`i < j`), with full float precision.
pub fn write_edge_list(graph: &SensorGraph, path: &Path) -> Result<()> {
    let n = graph.n_nodes();
    let mut out = String::new();
    out.push_str(&format!("# nodes {}\n", n));
    out.push_str(&format!("# normalized {}\n", graph.is_normalized()));
    for i in 0..n {
        for j in (i + 1)..n {
            let w = graph.weight(i, j);
            if w > 0.0 {
                out.push_str(&format!("{},{},{:.17e}\n", i, j, w));
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads `node_id,lat,lon` lines. Every id in `0..n` must appear exactly
/// once; the result is ordered by node id.
pub fn read_coordinates(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut entries: Vec<(usize, f64, f64, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(
                lineno,
                format!("expected node_id,lat,lon, got {:?}", raw),
            ));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad node id {:?}", fields[0])))?;
        let lat: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad latitude {:?}", fields[1])))?;
        let lon: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad longitude {:?}", fields[2])))?;
        entries.push((id, lat, lon, lineno));
    }
    let n = entries.len();
    let mut coords = vec![None; n];
    for (id, lat, lon, lineno) in entries {
        if id >= n {
            return Err(parse_err(
                lineno,
                format!("node id {} out of range for {} entries", id, n),
            ));
        }
        if coords[id].is_some() {
            return Err(parse_err(lineno, format!("duplicate node id {}", id)));
        }
        coords[id] = Some((lat, lon));
    }
    Ok(coords.into_iter().map(|c| c.unwrap()).collect())
}
