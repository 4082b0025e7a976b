//! Line-delimited graph files: one JSON record per line, undirected edges
//! listed once, floats written with 17 significant digits so values
//! round-trip exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EdgeData, Graph, GraphError};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    n: usize,
    edges: Vec<(usize, usize)>,
    node_feats: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_feats: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_target: Option<f64>,
}

/// JSON formatter that prints every float with 17 significant digits.
struct SigDigits;

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

pub fn save_graphs<P: AsRef<Path>>(graphs: &[Graph], path: P) -> Result<(), GraphError> {
    let mut out = BufWriter::new(File::create(path)?);
    for g in graphs {
        if !g.is_undirected() {
            return Err(GraphError::Directed { op: "save_graphs" });
        }
        // the pair-per-line format cannot express self-loops
        if g.has_self_loops() {
            return Err(GraphError::AlreadySelfLooped);
        }
        if !g.node_feats().is_finite()
            || g.edge_feats().is_some_and(|f| !f.is_finite())
            || g.graph_target().is_some_and(|t| !t.is_finite())
        {
            return Err(GraphError::NonFinite);
        }
        let pairs = g.pairs();
        let record = GraphRecord {
            n: g.n(),
            edges: pairs.iter().map(|&(i, j, _)| (i, j)).collect(),
            node_feats: (0..g.n()).map(|i| g.node_feats().row_slice(i).to_vec()).collect(),
            edge_feats: g
                .edge_feats()
                .map(|f| pairs.iter().map(|&(_, _, k)| f.row_slice(k).to_vec()).collect()),
            node_labels: g.node_labels().map(<[usize]>::to_vec),
            edge_labels: g
                .edge_labels()
                .map(|l| pairs.iter().map(|&(_, _, k)| l[k]).collect()),
            graph_label: g.graph_label(),
            graph_target: g.graph_target(),
        };
        let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits);
        record
            .serialize(&mut ser)
            .map_err(|e| GraphError::Parse { line: 0, msg: e.to_string() })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_graphs<P: AsRef<Path>>(path: P) -> Result<Vec<Graph>, GraphError> {
    let reader = BufReader::new(File::open(path)?);
    let mut graphs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: GraphRecord = serde_json::from_str(&line)
            .map_err(|e| GraphError::Parse { line: lineno, msg: e.to_string() })?;
        graphs.push(graph_from_record(record, lineno)?);
    }
    Ok(graphs)
}

fn graph_from_record(r: GraphRecord, line: usize) -> Result<Graph, GraphError> {
    let schema = |msg: String| GraphError::Schema { line, msg };
    if r.node_feats.len() != r.n {
        return Err(schema(format!(
            "{} node feature rows for {} nodes",
            r.node_feats.len(),
            r.n
        )));
    }
    let f = r.node_feats.first().map_or(0, Vec::len);
    if r.node_feats.iter().any(|row| row.len() != f) {
        return Err(schema("inconsistent node feature width".into()));
    }
    let node_feats = Tensor::new(r.n, f, r.node_feats.concat());
    let edge_feats = r
        .edge_feats
        .map(|rows| {
            if rows.len() != r.edges.len() {
                return Err(schema(format!(
                    "{} edge feature rows for {} edges",
                    rows.len(),
                    r.edges.len()
                )));
            }
            let w = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|row| row.len() != w) {
                return Err(schema("inconsistent edge feature width".into()));
            }
            Ok(Tensor::new(rows.len(), w, rows.concat()))
        })
        .transpose()?;
    let mut g = Graph::undirected_with(
        r.n,
        &r.edges,
        node_feats,
        EdgeData { feats: edge_feats, labels: r.edge_labels },
    )
    .map_err(|e| schema(e.to_string()))?;
    if let Some(nl) = r.node_labels {
        g = g.with_node_labels(nl).map_err(|e| schema(e.to_string()))?;
    }
    if let Some(l) = r.graph_label {
        g = g.with_graph_label(l);
    }
    if let Some(t) = r.graph_target {
        g = g.with_graph_target(t);
    }
    Ok(g)
}
