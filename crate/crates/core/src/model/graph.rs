//! District neighbourhood graph for the ICAR prior.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    neighbours: Vec<Vec<usize>>,
    component_of: Vec<usize>,
    components: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    /// Builds a graph from undirected edges. Pairs are normalised to `i < j`.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut normalised = Vec::new();
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::schema(format!(
                    "edge ({a}, {b}) references a node outside [0, {node_count})"
                )));
            }
            if a == b {
                return Err(Error::schema(format!("self-loop on node {a}")));
            }
            normalised.push((a.min(b), a.max(b)));
        }
        let mut sorted = normalised.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::schema(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }

        let mut neighbours = vec![Vec::new(); node_count];
        for &(i, j) in &normalised {
            neighbours[i].push(j);
            neighbours[j].push(i);
        }

        // Label components by breadth-first search in node order.
        let mut component_of = vec![usize::MAX; node_count];
        let mut components = Vec::new();
        for start in 0..node_count {
            if component_of[start] != usize::MAX {
                continue;
            }
            let id = components.len();
            let mut members = vec![start];
            component_of[start] = id;
            let mut head = 0;
            while head < members.len() {
                let v = members[head];
                head += 1;
                for &w in &neighbours[v] {
                    if component_of[w] == usize::MAX {
                        component_of[w] = id;
                        members.push(w);
                    }
                }
            }
            members.sort_unstable();
            components.push(members);
        }

        Ok(AdjacencyGraph {
            node_count,
            edges: normalised,
            neighbours,
            component_of,
            components,
        })
    }

    /// Rook adjacency on a `rows × cols` grid, nodes numbered row-major.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols));
                }
            }
        }
        AdjacencyGraph::new(rows * cols, edges).expect("grid edges are valid")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbours(&self, node: usize) -> &[usize] {
        &self.neighbours[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbours[node].len()
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn component_of(&self, node: usize) -> usize {
        self.component_of[node]
    }

    pub fn is_isolated(&self, node: usize) -> bool {
        self.neighbours[node].is_empty()
    }

    /// Reads an edge list CSV: header row, then two integer columns.
    pub fn load_csv(path: &Path, node_count: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, node_count)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, node_count: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut edges = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::parse("edge list", e))?;
            if row.len() < 2 {
                return Err(Error::parse("edge list", format!("row {} has fewer than two columns", line + 1)));
            }
            let parse = |k: usize| -> Result<usize> {
                row[k].trim().parse::<usize>().map_err(|e| {
                    Error::parse("edge list", format!("row {}: '{}': {e}", line + 1, &row[k]))
                })
            };
            edges.push((parse(0)?, parse(1)?));
        }
        AdjacencyGraph::new(node_count, edges)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["from", "to"]).map_err(|e| Error::parse("edge list", e))?;
        for &(i, j) in &self.edges {
            wtr.write_record([i.to_string(), j.to_string()])
                .map_err(|e| Error::parse("edge list", e))?;
        }
        wtr.flush().map_err(|e| Error::parse("edge list", e))?;
        Ok(())
    }
}
