//! Target interaction graphs in graph-Laplacian diagonal form.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingMatrix;
use crate::equilibrium::Crystal;
use crate::error::{Error, Result};

/// Names accepted by [`named_graph`].
pub const GRAPH_NAMES: [&str; 8] =
    ["all_to_all", "dimer", "ring", "nearest_neighbor", "annni", "ladder", "star", "trimer_pair"];

/// Edges of 2D graphs join ions closer than this multiple of the minimum distance.
pub const NEIGHBOR_THRESHOLD: f64 = 1.2;

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    pub matrix: CouplingMatrix,
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

impl InteractionGraph {
    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn j(&self) -> &DMatrix<f64> {
        &self.matrix.j
    }

    /// Upper-triangle nonzero edges, 0-based.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let w = self.matrix.j[(i, j)];
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// Relabels vertex `i` as `perm[i]`: `J'_{p(i) p(j)} = J_ij`.
    pub fn permuted(&self, perm: &[usize]) -> InteractionGraph {
        let mut g = self.clone();
        g.matrix.j = permute_matrix(&self.matrix.j, perm);
        g
    }

    /// Linear combination `a self + b other`, renormalized to Laplacian form.
    pub fn combine(&self, a: f64, other: &InteractionGraph, b: f64) -> Result<InteractionGraph> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), actual: other.n() });
        }
        let mut g = laplacian_form(&CouplingMatrix::raw(&self.matrix.j * a + &other.matrix.j * b));
        g.name = format!("{}+{}", self.name, other.name);
        Ok(g)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], name: &str) -> Result<InteractionGraph> {
        let mut j = DMatrix::zeros(n, n);
        for &(a, b, w) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidArgument(format!("bad edge ({a}, {b}) for {n} vertices")));
            }
            j[(a, b)] += w;
            j[(b, a)] += w;
        }
        let mut g = laplacian_form(&CouplingMatrix::raw(j));
        g.name = name.to_string();
        Ok(g)
    }
}

pub fn permute_matrix(j: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let n = j.nrows();
    let mut out = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            out[(perm[a], perm[b])] = j[(a, b)];
        }
    }
    out
}

/// Replaces the diagonal by minus the off-diagonal row sums.
pub fn laplacian_form(j: &CouplingMatrix) -> InteractionGraph {
    InteractionGraph { matrix: j.to_laplacian(), name: "custom".into(), params: BTreeMap::new() }
}

/// Where the ions sit: a chain labelled left to right, or a solved crystal.
#[derive(Clone, Copy, Debug)]
pub enum Layout<'a> {
    Chain(usize),
    Planar(&'a Crystal),
}

impl Layout<'_> {
    pub fn n(&self) -> usize {
        match self {
            Layout::Chain(n) => *n,
            Layout::Planar(c) => c.len(),
        }
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        match self {
            Layout::Chain(_) => (i as f64 - j as f64).abs(),
            Layout::Planar(c) => c.distance(i, j),
        }
    }
}

/// Off-diagonal `J_ij = j0 / d_ij^alpha`, with `d_ij = |i - j|` on chains and
/// Euclidean distance in planar crystals.
pub fn power_law_graph(layout: Layout, alpha: f64, j0: f64) -> Result<InteractionGraph> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    if !(j0 > 0.0) {
        return Err(Error::InvalidArgument(format!("J0 must be > 0, got {j0}")));
    }
    let n = layout.n();
    let mut j = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a + 1..n {
            let w = j0 / layout.distance(a, b).powf(alpha);
            j[(a, b)] = w;
            j[(b, a)] = w;
        }
    }
    let mut g = laplacian_form(&CouplingMatrix::raw(j));
    g.name = "power_law".into();
    g.params = BTreeMap::from([("alpha".into(), alpha), ("j0".into(), j0)]);
    Ok(g)
}

fn incompatible(name: &str, reason: impl Into<String>) -> Error {
    Error::IncompatibleN { name: name.into(), reason: reason.into() }
}

/// Catalogue of target graphs.
///
/// Chains: `all_to_all`, `dimer` (i with N+1-i), `ring`, `nearest_neighbor`,
/// `annni` (next-nearest coupling `ratio` times nearest, default -1/2) and
/// `ladder` (rungs i to N+1-i, legs along each half). Planar crystals:
/// `all_to_all`, `dimer` (point-inversion partners), `ring` (cycle of the
/// non-central ions by angle), `nearest_neighbor`, `star` (centre to every
/// ion plus the inversion diameters) and `trimer_pair` (two triangles of
/// alternate outer ions). All edges carry weight `j0` (default 1).
pub fn named_graph(name: &str, layout: Layout, params: &BTreeMap<String, f64>) -> Result<InteractionGraph> {
    let n = layout.n();
    let j0 = params.get("j0").copied().unwrap_or(1.0);
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    match (name, layout) {
        ("all_to_all", _) => {
            for a in 0..n {
                for b in a + 1..n {
                    edges.push((a, b, j0));
                }
            }
        }
        ("dimer", Layout::Chain(_)) => {
            for a in 0..n / 2 {
                edges.push((a, n - 1 - a, j0));
            }
        }
        ("dimer", Layout::Planar(c)) => {
            for (a, b) in inversion_pairs(c).ok_or_else(|| incompatible(name, "crystal lacks inversion symmetry"))? {
                edges.push((a, b, j0));
            }
        }
        ("ring", Layout::Chain(_)) => {
            if n < 3 {
                return Err(incompatible(name, "ring needs N >= 3"));
            }
            for a in 0..n - 1 {
                edges.push((a, a + 1, j0));
            }
            edges.push((0, n - 1, j0));
        }
        ("ring", Layout::Planar(c)) => {
            let cycle = angular_cycle(c);
            if cycle.len() < 3 {
                return Err(incompatible(name, "ring needs at least 3 outer ions"));
            }
            for w in 0..cycle.len() {
                edges.push((cycle[w], cycle[(w + 1) % cycle.len()], j0));
            }
        }
        ("nearest_neighbor", Layout::Chain(_)) => {
            for a in 0..n.saturating_sub(1) {
                edges.push((a, a + 1, j0));
            }
        }
        ("nearest_neighbor", Layout::Planar(c)) => {
            let cut = NEIGHBOR_THRESHOLD * c.min_distance();
            for a in 0..n {
                for b in a + 1..n {
                    if c.distance(a, b) < cut {
                        edges.push((a, b, j0));
                    }
                }
            }
        }
        ("annni", Layout::Chain(_)) => {
            let ratio = params.get("ratio").copied().unwrap_or(-0.5);
            if n < 3 {
                return Err(incompatible(name, "ANNNI needs N >= 3"));
            }
            for a in 0..n - 1 {
                edges.push((a, a + 1, j0));
            }
            for a in 0..n - 2 {
                edges.push((a, a + 2, ratio * j0));
            }
        }
        ("ladder", Layout::Chain(_)) => {
            if n < 4 || n % 2 != 0 {
                return Err(incompatible(name, "ladder needs even N >= 4"));
            }
            let half = n / 2;
            for a in 0..half {
                edges.push((a, n - 1 - a, j0));
            }
            for a in 0..half - 1 {
                edges.push((a, a + 1, j0));
                edges.push((n - 2 - a, n - 1 - a, j0));
            }
        }
        ("star", Layout::Planar(c)) => {
            let centre = central_ion(c).ok_or_else(|| incompatible(name, "no central ion"))?;
            for a in (0..n).filter(|&a| a != centre) {
                edges.push((centre.min(a), centre.max(a), j0));
            }
            for (a, b) in inversion_pairs(c).ok_or_else(|| incompatible(name, "crystal lacks inversion symmetry"))? {
                edges.push((a, b, j0));
            }
        }
        ("trimer_pair", Layout::Planar(c)) => {
            let cycle = angular_cycle(c);
            if n != 7 || cycle.len() != 6 || central_ion(c).is_none() {
                return Err(incompatible(name, "trimer pair needs a centred 7-ion hexagon"));
            }
            for start in 0..2 {
                let tri = [cycle[start], cycle[start + 2], cycle[start + 4]];
                for (a, b) in [(0, 1), (1, 2), (0, 2)] {
                    edges.push((tri[a], tri[b], j0));
                }
            }
        }
        (other, _) if GRAPH_NAMES.contains(&other) => {
            return Err(incompatible(other, "not defined for this geometry"));
        }
        (other, _) => return Err(Error::UnknownName(other.into())),
    }
    let mut g = InteractionGraph::from_edges(n, &edges, name)?;
    g.params = params.clone();
    Ok(g)
}

fn radius(c: &Crystal, i: usize) -> f64 {
    c.positions[i].iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn central_ion(c: &Crystal) -> Option<usize> {
    let tol = 1e-6 * c.min_distance();
    (0..c.len()).find(|&i| radius(c, i) < tol)
}

/// Non-central ions ordered by angle.
fn angular_cycle(c: &Crystal) -> Vec<usize> {
    let centre = central_ion(c);
    let mut ions: Vec<usize> = (0..c.len()).filter(|&i| Some(i) != centre).collect();
    let angle = |i: usize| {
        let p = &c.positions[i];
        p[1].atan2(p[0]).rem_euclid(std::f64::consts::TAU)
    };
    ions.sort_by(|&a, &b| angle(a).partial_cmp(&angle(b)).unwrap());
    ions
}

/// Pairs of ions mapped to each other by `u -> -u`; `None` if some ion has no partner.
fn inversion_pairs(c: &Crystal) -> Option<Vec<(usize, usize)>> {
    let tol = 1e-6 * c.min_distance();
    let centre = central_ion(c);
    let mut pairs = Vec::new();
    for a in 0..c.len() {
        if Some(a) == centre {
            continue;
        }
        let partner = (0..c.len())
            .find(|&b| b != a && c.positions[a].iter().zip(&c.positions[b]).all(|(x, y)| (x + y).abs() < tol))?;
        if a < partner {
            pairs.push((a, partner));
        }
    }
    Some(pairs)
}

/// Maps entry (i, j) to (N-1-i, N-1-j).
pub fn flip(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.nrows();
    DMatrix::from_fn(n, n, |a, b| j[(n - 1 - a, n - 1 - b)])
}

/// `||J~ - flip(J~)|| / (2 ||J~||)` over the stripped matrix. Zero for any graph
/// realizable on a mirror-symmetric chain.
pub fn antidiagonal_defect(g: &InteractionGraph) -> f64 {
    let s = g.matrix.stripped();
    let norm = s.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (&s - flip(&s)).norm() / (2.0 * norm)
}

/// Graph JSON document, 1-based vertex indices.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl TryFrom<&GraphDoc> for InteractionGraph {
    type Error = Error;

    fn try_from(doc: &GraphDoc) -> Result<Self> {
        let edges = doc
            .edges
            .iter()
            .map(|&(a, b, w)| {
                if a == 0 || b == 0 {
                    Err(Error::InvalidArgument("graph indices are 1-based".into()))
                } else {
                    Ok((a - 1, b - 1, w))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        InteractionGraph::from_edges(doc.n, &edges, "custom")
    }
}

impl From<&InteractionGraph> for GraphDoc {
    fn from(g: &InteractionGraph) -> Self {
        Self { n: g.n(), edges: g.edges().into_iter().map(|(a, b, w)| (a + 1, b + 1, w)).collect() }
    }
}

#[cfg(test)]
pub(crate) fn is_laplacian(m: &CouplingMatrix) -> bool {
    m.convention == crate::coupling::DiagonalConvention::LaplacianDiagonal
        && (0..m.n()).all(|i| m.j.row(i).iter().sum::<f64>().abs() < 1e-10)
}
