//! Undirected simple graphs with the canonical lower-triangle edge order.
//!
//! Adjacency is a bit-packed symmetric n×n matrix (n²/8 bytes), zero
//! diagonal. Vertices and block labels are 1-based throughout the public
//! API; conversion to 0-based happens only at storage boundaries.
//!
//! The canonical enumeration of the C(n,2) vertex pairs walks the strict
//! lower triangle column by column: (2,1), (3,1), …, (n,1), (3,2), …,
//! (n,n−1). `edge_index` and `edge_pair` convert between a pair (i, j),
//! i > j, and its 1-based position t in that walk.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Largest supported vertex count. Dense bit-packed storage costs n²/8
/// bytes (50 MB at the limit); every pipeline pass is Θ(n²) anyway.
pub const MAX_VERTICES: usize = 20_000;

/// Number of unordered vertex pairs, C(n,2).
pub fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Linear index t ∈ {1..C(n,2)} of the pair (i, j), i > j, in the
/// column-major lower-triangle order.
///
/// t = (j−1)·n − j(j−1)/2 + (i − j).
pub fn edge_index(i: usize, j: usize, n: usize) -> Result<usize> {
    if j < 1 || i <= j || i > n {
        let bad = if i > n { i } else { j.min(i) };
        return Err(Error::InvalidVertex { vertex: bad, n });
    }
    Ok((j - 1) * n - j * (j - 1) / 2 + (i - j))
}

/// Inverse of [`edge_index`]: the pair (i, j), i > j, at linear index t.
pub fn edge_pair(t: usize, n: usize) -> Result<(usize, usize)> {
    let max = pair_count(n);
    if t < 1 || t > max {
        return Err(Error::InvalidIndex { index: t, max });
    }
    // Entries in columns 1..=c total c·n − c(c+1)/2. Start from a float
    // estimate of the column and fix up with exact integer arithmetic.
    let tf = t as f64;
    let nf = n as f64;
    let disc = (2.0 * nf - 1.0) * (2.0 * nf - 1.0) - 8.0 * tf;
    let mut j = (((2.0 * nf - 1.0) - disc.max(0.0).sqrt()) / 2.0).ceil() as usize;
    j = j.clamp(1, n - 1);
    let cum = |c: usize| c * n - c * (c + 1) / 2;
    while j > 1 && cum(j - 1) >= t {
        j -= 1;
    }
    while cum(j) < t {
        j += 1;
    }
    let i = j + (t - cum(j - 1));
    Ok((i, j))
}

/// An entry of the canonical edge enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeIndex {
    /// 1-based linear position in {1..C(n,2)}.
    pub t: usize,
    /// Row vertex, i > j.
    pub i: usize,
    /// Column vertex.
    pub j: usize,
}

impl EdgeIndex {
    pub fn from_pair(i: usize, j: usize, n: usize) -> Result<Self> {
        Ok(Self { t: edge_index(i, j, n)?, i, j })
    }

    pub fn from_linear(t: usize, n: usize) -> Result<Self> {
        let (i, j) = edge_pair(t, n)?;
        Ok(Self { t, i, j })
    }
}

/// Undirected simple graph with optional block labels.
///
/// Immutable once built; share by reference across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    bits: Vec<u64>,
    degrees: Vec<usize>,
    edges: usize,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Empty graph on n vertices.
    pub fn new(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument { message: "n must be positive".into() });
        }
        if n > MAX_VERTICES {
            return Err(Error::CapacityExceeded { n, max: MAX_VERTICES });
        }
        let words = (n * n).div_ceil(64);
        Ok(Self { n, bits: vec![0; words], degrees: vec![0; n], edges: 0, labels: None })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::new(n)?;
        for &(i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    fn bit(&self, i0: usize, j0: usize) -> bool {
        let idx = i0 * self.n + j0;
        self.bits[idx / 64] >> (idx % 64) & 1 == 1
    }

    fn set_bit(&mut self, i0: usize, j0: usize) {
        let idx = i0 * self.n + j0;
        self.bits[idx / 64] |= 1 << (idx % 64);
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v < 1 || v > self.n {
            return Err(Error::InvalidVertex { vertex: v, n: self.n });
        }
        Ok(())
    }

    /// Insert the undirected edge {i, j}. Duplicates collapse silently;
    /// direction of the argument pair is ignored.
    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        self.check_vertex(i)?;
        self.check_vertex(j)?;
        if i == j {
            return Err(Error::SelfLoop { vertex: i });
        }
        let (a, b) = (i - 1, j - 1);
        if !self.bit(a, b) {
            self.set_bit(a, b);
            self.set_bit(b, a);
            self.degrees[a] += 1;
            self.degrees[b] += 1;
            self.edges += 1;
        }
        Ok(())
    }

    /// Attach per-vertex block labels in {1..m}, where m is the largest
    /// label present.
    pub fn set_labels(&mut self, labels: Vec<usize>) -> Result<()> {
        if labels.len() != self.n {
            return Err(Error::InvalidArgument {
                message: format!("{} labels for {} vertices", labels.len(), self.n),
            });
        }
        let m = labels.iter().copied().max().unwrap_or(0);
        for (v0, &lab) in labels.iter().enumerate() {
            if lab < 1 {
                return Err(Error::InvalidLabel { vertex: v0 + 1, label: lab, blocks: m });
            }
        }
        self.labels = Some(labels);
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    /// Number of unordered vertex pairs, C(n,2).
    pub fn pair_count(&self) -> usize {
        pair_count(self.n)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> Result<bool> {
        self.check_vertex(i)?;
        self.check_vertex(j)?;
        if i == j {
            return Ok(false);
        }
        Ok(self.bit(i - 1, j - 1))
    }

    /// Degree of vertex i: Σ_p adj[i][p].
    pub fn degree(&self, i: usize) -> Result<usize> {
        self.check_vertex(i)?;
        Ok(self.degrees[i - 1])
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Largest block id among the labels, if labels are present.
    pub fn block_count(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().copied().max().unwrap_or(0))
    }

    /// Edges in canonical order as 1-based (i, j) pairs with i > j.
    pub fn canonical_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edges);
        for j in 1..self.n {
            for i in (j + 1)..=self.n {
                if self.bit(i - 1, j - 1) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Iterate the canonical pair walk, yielding (t, i, j, y) with y the
    /// edge indicator. Avoids materialising observation vectors.
    pub fn pair_walk(&self) -> impl Iterator<Item = (usize, usize, usize, bool)> + '_ {
        let n = self.n;
        (1..n).flat_map(move |j| {
            ((j + 1)..=n).map(move |i| (i, j))
        })
        .enumerate()
        .map(move |(t0, (i, j))| (t0 + 1, i, j, self.bit(i - 1, j - 1)))
    }
}

/// Read a graph from an edge-list file, optionally with a labels file.
///
/// Format: first line `n m`, then m lines `i j` (1-based, whitespace
/// separated, LF or CRLF). The labels file holds n lines, one block id
/// per line. Duplicate edges collapse; self-loops are rejected.
pub fn read_graph<P: AsRef<Path>>(path: P, labels_path: Option<P>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    let mut graph = parse_graph(&text)?;
    if let Some(lp) = labels_path {
        let lp = lp.as_ref();
        let ltext = fs::read_to_string(lp)
            .map_err(|e| Error::Io { path: lp.display().to_string(), message: e.to_string() })?;
        graph.set_labels(parse_labels(&ltext, graph.vertex_count())?)?;
    }
    Ok(graph)
}

/// Parse the edge-list format from a string.
pub fn parse_graph(text: &str) -> Result<Graph> {
    let mut lines = text.lines().enumerate();
    let (n, m) = loop {
        match lines.next() {
            Some((lineno, raw)) => {
                let line = raw.trim();
                if line.is_empty() {
                    continue;
                }
                let mut parts = line.split_whitespace();
                let n: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: lineno + 1,
                        message: "expected header `n m`".into(),
                    })?;
                let m: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: lineno + 1,
                        message: "expected header `n m`".into(),
                    })?;
                if parts.next().is_some() {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        message: "trailing fields in header".into(),
                    });
                }
                break (n, m);
            }
            None => {
                return Err(Error::Parse { line: 1, message: "empty file".into() });
            }
        }
    };
    let mut graph = Graph::new(n)?;
    let mut seen = 0usize;
    for (lineno, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if seen == m {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("more than the declared {m} edges"),
            });
        }
        let mut parts = line.split_whitespace();
        let parse_vertex = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: "expected edge line `i j`".into(),
            })
        };
        let i = parse_vertex(parts.next())?;
        let j = parse_vertex(parts.next())?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "trailing fields in edge line".into(),
            });
        }
        graph.add_edge(i, j)?;
        seen += 1;
    }
    if seen != m {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("declared {m} edges, found {seen}"),
        });
    }
    Ok(graph)
}

/// Parse a labels file: n lines, one block id per line.
pub fn parse_labels(text: &str, n: usize) -> Result<Vec<usize>> {
    let mut labels = Vec::with_capacity(n);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let lab: usize = line.parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            message: format!("expected a block id, got `{line}`"),
        })?;
        labels.push(lab);
    }
    if labels.len() != n {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("expected {n} labels, found {}", labels.len()),
        });
    }
    Ok(labels)
}

/// Serialise a graph to the edge-list format, edges in canonical order.
pub fn format_graph(g: &Graph) -> String {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", g.vertex_count(), g.edge_count()));
    for (i, j) in g.canonical_edges() {
        out.push_str(&format!("{i} {j}\n"));
    }
    out
}

/// Write a graph (and its labels, when present and requested) to disk.
pub fn write_graph<P: AsRef<Path>>(g: &Graph, path: P, labels_path: Option<P>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    f.write_all(format_graph(g).as_bytes())
        .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    if let Some(lp) = labels_path {
        let lp = lp.as_ref();
        let labels = g.labels().ok_or(Error::MissingLabels)?;
        let mut text = String::new();
        for lab in labels {
            text.push_str(&format!("{lab}\n"));
        }
        fs::write(lp, text)
            .map_err(|e| Error::Io { path: lp.display().to_string(), message: e.to_string() })?;
    }
    Ok(())
}
