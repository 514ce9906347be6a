//! Line-oriented text dataset format.
//!
//! ```text
//! nodes=<N> feats=<F> classes=<C> directed=<0|1> task=<node|graph> [graphs=<G>] [rownorm=<0|1>]
//! <N lines of F space-separated decimals>
//! <N label lines (node task) or G label lines (graph task)>
//! <graph task only: one line of N space-separated graph ids>
//! <edge lines "u v">
//! <train mask line> <val mask line> <test mask line>   (three lines of 0/1)
//! ```
//!
//! Undirected files may list each edge once or in both directions. Blank
//! lines and lines starting with `#` are skipped. Features are L1
//! row-normalized on load unless the header says `rownorm=0`; [`save_graph`]
//! writes `rownorm=0` so a saved graph reloads bit-exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphIndex, GraphParts, Masks, Task};
use crate::tensor::DenseMatrix;

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let text = fs::read_to_string(path)?;
    parse_graph(&text)
}

pub fn save_graph(graph: &Graph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_graph(graph))?;
    Ok(())
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_tokens<T: std::str::FromStr>(line_no: usize, text: &str, expected: usize, what: &str) -> Result<Vec<T>> {
    let vals: Vec<T> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| perr(line_no, format!("bad {what} value {t:?}")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(perr(
            line_no,
            format!("expected {expected} {what} values, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

struct Header {
    nodes: usize,
    feats: usize,
    classes: usize,
    directed: bool,
    task: Task,
    graphs: Option<usize>,
    rownorm: bool,
}

fn parse_header(line_no: usize, text: &str) -> Result<Header> {
    let mut kv = HashMap::new();
    for tok in text.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| perr(line_no, format!("header token {tok:?} is not key=value")))?;
        kv.insert(k, v);
    }
    let num = |key: &str| -> Result<usize> {
        kv.get(key)
            .ok_or_else(|| perr(line_no, format!("header is missing {key}")))?
            .parse()
            .map_err(|_| perr(line_no, format!("header {key} is not a count")))
    };
    let flag = |key: &str, default: bool| -> Result<bool> {
        match kv.get(key) {
            None => Ok(default),
            Some(&"0") => Ok(false),
            Some(&"1") => Ok(true),
            Some(v) => Err(perr(line_no, format!("header {key}={v} must be 0 or 1"))),
        }
    };
    let task = match kv.get("task") {
        Some(&"node") | None => Task::Node,
        Some(&"graph") => Task::Graph,
        Some(v) => return Err(perr(line_no, format!("unknown task {v:?}"))),
    };
    let graphs = match task {
        Task::Graph => Some(num("graphs")?),
        Task::Node => None,
    };
    Ok(Header {
        nodes: num("nodes")?,
        feats: num("feats")?,
        classes: num("classes")?,
        directed: flag("directed", false)?,
        task,
        graphs,
        rownorm: flag("rownorm", true)?,
    })
}

fn parse_mask(line_no: usize, text: &str, len: usize) -> Result<Vec<bool>> {
    let vals: Vec<u8> = parse_tokens(line_no, text, len, "mask")?;
    vals.into_iter()
        .map(|v| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(perr(line_no, format!("mask value {v} must be 0 or 1"))),
        })
        .collect()
}

/// L1 row normalization; all-zero rows are left alone.
pub fn row_normalize(features: &mut DenseMatrix) {
    for r in 0..features.rows() {
        let row = features.row_mut(r);
        let norm: f64 = row.iter().map(|&v| (v as f64).abs()).sum();
        if norm > 0.0 && norm.is_finite() {
            row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        }
    }
}

pub fn parse_graph(text: &str) -> Result<Graph> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let Some(&(hline, htext)) = lines.first() else {
        return Err(perr(1, "empty dataset file"));
    };
    let h = parse_header(hline, htext)?;
    let n = h.nodes;
    let items = h.graphs.unwrap_or(n);
    let graph_id_lines = usize::from(h.task == Task::Graph);
    let fixed = 1 + n + items + graph_id_lines;
    if lines.len() < fixed + 3 {
        let last = lines.last().map_or(1, |l| l.0);
        return Err(perr(
            last,
            format!(
                "file ends early: need at least {} content lines, found {}",
                fixed + 3,
                lines.len()
            ),
        ));
    }

    let mut features = Vec::with_capacity(n * h.feats);
    for &(no, l) in &lines[1..1 + n] {
        features.extend(parse_tokens::<f32>(no, l, h.feats, "feature")?);
    }
    let mut features = DenseMatrix::new(n, h.feats, features)?;
    if h.rownorm {
        row_normalize(&mut features);
    }

    let mut labels = Vec::with_capacity(items);
    for &(no, l) in &lines[1 + n..1 + n + items] {
        let label = parse_tokens::<usize>(no, l, 1, "label")?[0];
        if label >= h.classes {
            return Err(perr(no, format!("label {label} with {} classes", h.classes)));
        }
        labels.push(label);
    }

    let graph_index = if h.task == Task::Graph {
        let (no, l) = lines[1 + n + items];
        let ids: Vec<usize> = parse_tokens(no, l, n, "graph id")?;
        if let Some(&g) = ids.iter().find(|&&g| g >= items) {
            return Err(perr(no, format!("graph id {g} with {items} graphs")));
        }
        Some(GraphIndex {
            node_graph: ids,
            num_graphs: items,
        })
    } else {
        None
    };

    let mask_start = lines.len() - 3;
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(no, l) in &lines[fixed..mask_start] {
        let e: Vec<usize> = parse_tokens(no, l, 2, "edge endpoint")?;
        let (u, v) = (e[0], e[1]);
        if u >= n || v >= n {
            return Err(Error::Validation(format!(
                "line {no}: edge ({u}, {v}) references a node >= {n}"
            )));
        }
        if u == v {
            return Err(perr(no, format!("self-loop on node {u}")));
        }
        neighbors[u].push(v);
        if !h.directed {
            neighbors[v].push(u);
        }
    }
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
    }

    let masks = Masks {
        train: parse_mask(lines[mask_start].0, lines[mask_start].1, items)?,
        val: parse_mask(lines[mask_start + 1].0, lines[mask_start + 1].1, items)?,
        test: parse_mask(lines[mask_start + 2].0, lines[mask_start + 2].1, items)?,
    };

    Graph::from_parts(GraphParts {
        features,
        neighbors,
        labels,
        num_classes: h.classes,
        masks,
        directed: h.directed,
        task: h.task,
        graph_index,
    })
}

pub fn format_graph(g: &Graph) -> String {
    let mut out = String::new();
    let n = g.num_nodes();
    write!(
        out,
        "nodes={n} feats={} classes={} directed={} task={}",
        g.num_features(),
        g.num_classes(),
        u8::from(g.is_directed()),
        g.task().as_str()
    )
    .unwrap();
    if let Some(gi) = g.graph_index() {
        write!(out, " graphs={}", gi.num_graphs).unwrap();
    }
    out.push_str(" rownorm=0\n");
    for row in g.features().row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    for l in g.labels() {
        writeln!(out, "{l}").unwrap();
    }
    if let Some(gi) = g.graph_index() {
        let ids: Vec<String> = gi.node_graph.iter().map(|v| v.to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    for v in 0..n {
        for &u in g.neighbors(v) {
            if g.is_directed() || v < u {
                writeln!(out, "{v} {u}").unwrap();
            }
        }
    }
    for m in [&g.masks().train, &g.masks().val, &g.masks().test] {
        let bits: Vec<&str> = m.iter().map(|&b| if b { "1" } else { "0" }).collect();
        out.push_str(&bits.join(" "));
        out.push('\n');
    }
    out
}
