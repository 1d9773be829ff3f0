//! CSV readers and writers for edge lists, coordinates, data matrices and
//! diagnostics. Numbers are written with 17 significant digits.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{Edge, WeightedGraph};
use crate::model::{EdgeDiagnostics, NodeDiagnostics};

/// Round-trip decimal form of `v`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

const MISSING: [&str; 6] = ["", "na", "nan", "null", "none", "."];

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<f64> {
    let t = raw.trim();
    if MISSING.contains(&t.to_ascii_lowercase().as_str()) {
        return Err(Error::MissingValue(format!("row {row}, column '{col}'")));
    }
    let v: f64 = t
        .parse()
        .map_err(|_| Error::Parse(format!("row {row}, column '{col}': '{t}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("row {row}, column '{col}': {t} is not finite")));
    }
    Ok(v)
}

/// A numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Reads a headed numeric CSV. Empty cells and `NA`-like tokens are
/// reported as missing values; rows are numbered from 0 after the header.
pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Parse("missing header row".into()));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::DimensionMismatch(format!(
                "row {r} has {} fields, header has {}",
                rec.len(),
                header.len()
            )));
        }
        for (c, cell) in rec.iter().enumerate() {
            data.push(parse_cell(cell, r, &header[c])?);
        }
        rows += 1;
    }
    Ok(Table { values: DMatrix::from_row_slice(rows, header.len(), &data), header })
}

pub fn read_coords<R: Read>(input: R) -> Result<Vec<Vec<f64>>> {
    let t = read_table(input)?;
    Ok(t.values.row_iter().map(|r| r.iter().cloned().collect()).collect())
}

/// Reads an `i,j,w` edge list (0-based node indices) for a graph on
/// `n_nodes` nodes.
pub fn read_edges<R: Read>(input: R, n_nodes: usize) -> Result<WeightedGraph> {
    let t = read_table(input)?;
    if t.header != ["i", "j", "w"] {
        return Err(Error::Parse(format!("edge list header must be i,j,w, got {}", t.header.join(","))));
    }
    let mut edges = Vec::with_capacity(t.values.nrows());
    for r in 0..t.values.nrows() {
        let index = |c: usize| -> Result<usize> {
            let v = t.values[(r, c)];
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Parse(format!("row {r}: node index {v} is not a non-negative integer")));
            }
            Ok(v as usize)
        };
        let (i, j) = (index(0)?, index(1)?);
        if i.max(j) >= n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "row {r}: edge ({i}, {j}) but the data have {n_nodes} nodes"
            )));
        }
        edges.push(Edge { i, j, w: t.values[(r, 2)] });
    }
    WeightedGraph::new(n_nodes, edges)
}

pub fn write_edges<W: Write>(graph: &WeightedGraph, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "w"])?;
    for e in graph.edges() {
        w.write_record([e.i.to_string(), e.j.to_string(), fmt_f64(e.w)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table<W: Write>(header: &[String], values: &DMatrix<f64>, out: W) -> Result<()> {
    if header.len() != values.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} column names for {} columns",
            header.len(),
            values.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in values.row_iter() {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edge_diagnostics<W: Write>(diag: &[EdgeDiagnostics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "w", "delta", "var_factor", "standardized", "flag"])?;
    for d in diag {
        w.write_record([
            d.edge.i.to_string(),
            d.edge.j.to_string(),
            fmt_f64(d.edge.w),
            fmt_f64(d.delta),
            fmt_f64(d.var_factor),
            fmt_f64(d.standardized),
            u8::from(d.is_outlier).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `node,score,flag`; both fields are empty where the statistic is undefined.
pub fn write_node_diagnostics<W: Write>(diag: &[NodeDiagnostics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "score", "flag"])?;
    for d in diag {
        w.write_record([
            d.node.to_string(),
            d.score.map(fmt_f64).unwrap_or_default(),
            d.is_outlier.map(|f| u8::from(f).to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_precision() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -7.0, 1e-17]);
        let mut buf = Vec::new();
        write_table(&["a".into(), "b".into()], &m, &mut buf).unwrap();
        let t = read_table(buf.as_slice()).unwrap();
        assert_eq!(t.values, m);
        assert_eq!(t.header, ["a", "b"]);
    }

    #[test]
    fn missing_values_are_located() {
        let err = read_table("a,b\n1,2\n3,NA\n".as_bytes()).unwrap_err();
        assert!(matches!(&err, Error::MissingValue(m) if m.contains("row 1") && m.contains("'b'")), "{err}");
        assert!(matches!(read_table("a,b\n1,\n".as_bytes()), Err(Error::MissingValue(_))));
        assert!(matches!(read_table("a,b\n1,x\n".as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn ragged_rows() {
        assert!(read_table("a,b\n1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn edge_lists() {
        let g = read_edges("i,j,w\n0,1,0.5\n2,1,1\n".as_bytes(), 3).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert_eq!((g.edges()[1].i, g.edges()[1].j), (1, 2));
        let mut buf = Vec::new();
        write_edges(&g, &mut buf).unwrap();
        assert_eq!(read_edges(buf.as_slice(), 3).unwrap(), g);
        assert!(matches!(read_edges("i,j,w\n0,5,1\n".as_bytes(), 3), Err(Error::DimensionMismatch(_))));
        assert!(matches!(read_edges("a,b,c\n0,1,1\n".as_bytes(), 3), Err(Error::Parse(_))));
        assert!(matches!(read_edges("i,j,w\n0,1.5,1\n".as_bytes(), 3), Err(Error::Parse(_))));
    }
}
