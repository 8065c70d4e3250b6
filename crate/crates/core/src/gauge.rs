//! Flux bookkeeping on link graphs.
//!
//! A link `(j, k)` with phase φ contributes `+φ` when a cycle walks from
//! `j` to `k` and `−φ` when it walks from `k` to `j`. Fluxes are reported
//! in (−π, π].

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Reduce an angle to (−π, π].
pub fn wrap_angle(x: f64) -> f64 {
    let mut r = x.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    // rem_euclid can return TAU itself for tiny negative inputs
    if r <= -PI {
        r += TAU;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    pub num_sites: usize,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanningForest {
    pub tree_edges: Vec<usize>,
    pub cotree_edges: Vec<usize>,
    /// Parent edge of each site (None for roots).
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
    component: Vec<usize>,
}

impl Graph {
    pub fn new(num_sites: usize, edges: Vec<(usize, usize)>) -> Self {
        Self { num_sites, edges }
    }

    /// Closed ring 0 → 1 → … → n−1 → 0.
    pub fn ring(n: usize) -> Self {
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)).collect())
    }

    /// Square lattice of `rows × cols` sites, row-major numbering.
    pub fn square_lattice(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let s = r * cols + c;
                if c + 1 < cols {
                    edges.push((s, s + 1));
                }
                if r + 1 < rows {
                    edges.push((s, s + cols));
                }
            }
        }
        Self::new(rows * cols, edges)
    }

    /// Counter-clockwise plaquettes of [`Graph::square_lattice`].
    pub fn square_plaquettes(rows: usize, cols: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for r in 0..rows.saturating_sub(1) {
            for c in 0..cols.saturating_sub(1) {
                let s = r * cols + c;
                out.push(vec![s, s + 1, s + 1 + cols, s + cols]);
            }
        }
        out
    }

    fn edge_between(&self, a: usize, b: usize) -> Option<(usize, f64)> {
        self.edges.iter().enumerate().find_map(|(i, &(j, k))| {
            if (j, k) == (a, b) {
                Some((i, 1.0))
            } else if (j, k) == (b, a) {
                Some((i, -1.0))
            } else {
                None
            }
        })
    }

    fn neighbors(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.num_sites];
        for (e, &(j, k)) in self.edges.iter().enumerate() {
            adj[j].push((k, e));
            adj[k].push((j, e));
        }
        for list in &mut adj {
            list.sort();
        }
        adj
    }

    /// Breadth-first spanning forest, lowest-index site first, neighbors
    /// visited in ascending order.
    pub fn spanning_forest(&self) -> SpanningForest {
        let adj = self.neighbors();
        let n = self.num_sites;
        let mut parent = vec![None; n];
        let mut depth = vec![0; n];
        let mut component = vec![usize::MAX; n];
        let mut in_tree = vec![false; self.edges.len()];
        for root in 0..n {
            if component[root] != usize::MAX {
                continue;
            }
            component[root] = root;
            let mut queue = VecDeque::from([root]);
            while let Some(v) = queue.pop_front() {
                for &(w, e) in &adj[v] {
                    if component[w] == usize::MAX {
                        component[w] = root;
                        parent[w] = Some(e);
                        depth[w] = depth[v] + 1;
                        in_tree[e] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        let tree_edges = (0..self.edges.len()).filter(|&e| in_tree[e]).collect();
        let cotree_edges = (0..self.edges.len()).filter(|&e| !in_tree[e]).collect();
        SpanningForest { tree_edges, cotree_edges, parent, depth, component }
    }

    pub fn is_connected(&self) -> bool {
        let f = self.spanning_forest();
        f.component.iter().all(|&c| c == 0)
    }

    /// Fundamental cycle of each co-tree edge: walk the edge `j → k`, then
    /// return along the tree from `k` to `j`.
    pub fn fundamental_cycles(&self) -> Vec<Vec<usize>> {
        let f = self.spanning_forest();
        f.cotree_edges
            .iter()
            .map(|&e| {
                let (j, k) = self.edges[e];
                let (up_k, up_j) = tree_paths(self, &f, k, j);
                // j, k, ..., lca, ..., (back to j, omitted)
                let mut cycle = vec![j];
                cycle.extend(up_k);
                let down: Vec<usize> = up_j.into_iter().rev().collect();
                if down.len() > 2 {
                    cycle.extend(&down[1..down.len() - 1]);
                }
                cycle
            })
            .collect()
    }
}

/// Paths from `a` and from `b` up to their lowest common ancestor,
/// both inclusive of the endpoints.
fn tree_paths(g: &Graph, f: &SpanningForest, mut a: usize, mut b: usize) -> (Vec<usize>, Vec<usize>) {
    let other = |v: usize, e: usize| {
        let (j, k) = g.edges[e];
        if j == v {
            k
        } else {
            j
        }
    };
    let mut pa = vec![a];
    let mut pb = vec![b];
    while f.depth[a] > f.depth[b] {
        a = other(a, f.parent[a].unwrap());
        pa.push(a);
    }
    while f.depth[b] > f.depth[a] {
        b = other(b, f.parent[b].unwrap());
        pb.push(b);
    }
    while a != b {
        a = other(a, f.parent[a].unwrap());
        b = other(b, f.parent[b].unwrap());
        pa.push(a);
        pb.push(b);
    }
    (pa, pb)
}

/// Signed phase sum around a closed walk, wrapped to (−π, π].
pub fn loop_flux(graph: &Graph, phases: &[f64], cycle: &[usize]) -> Result<f64> {
    if phases.len() != graph.edges.len() {
        return Err(Error::Dimension(format!(
            "{} phases for {} links",
            phases.len(),
            graph.edges.len()
        )));
    }
    if cycle.len() < 2 {
        return Err(Error::Config("a cycle needs at least two sites".into()));
    }
    let mut total = 0.0;
    for i in 0..cycle.len() {
        let (a, b) = (cycle[i], cycle[(i + 1) % cycle.len()]);
        let (e, sign) = graph
            .edge_between(a, b)
            .ok_or_else(|| Error::Config(format!("cycle uses missing link ({}, {})", a + 1, b + 1)))?;
        total += sign * phases[e];
    }
    Ok(wrap_angle(total))
}

/// Per-site angles α_j acting as φ_jk → φ_jk + α_j − α_k.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeTransform {
    pub angles: Vec<f64>,
}

pub fn apply_gauge(graph: &Graph, phases: &[f64], transform: &GaugeTransform) -> Vec<f64> {
    graph
        .edges
        .iter()
        .zip(phases)
        .map(|(&(j, k), &p)| p + transform.angles[j] - transform.angles[k])
        .collect()
}

/// Phases realizing the target flux of every fundamental cycle: tree links
/// carry zero, each co-tree link carries its cycle's flux.
pub fn compile_fluxes(graph: &Graph, targets: &[f64]) -> Result<Vec<f64>> {
    if !graph.is_connected() {
        return Err(Error::Config("link graph is disconnected".into()));
    }
    let forest = graph.spanning_forest();
    if targets.len() != forest.cotree_edges.len() {
        return Err(Error::Config(format!(
            "graph has {} independent cycles but {} target fluxes were given",
            forest.cotree_edges.len(),
            targets.len()
        )));
    }
    let mut phases = vec![0.0; graph.edges.len()];
    for (&e, &t) in forest.cotree_edges.iter().zip(targets) {
        phases[e] = wrap_angle(t);
    }
    Ok(phases)
}

/// Phases realizing target fluxes through an arbitrary set of independent
/// cycles (for example lattice plaquettes). Tree links carry zero; the
/// co-tree phases solve the linear system cycle × co-tree.
pub fn compile_cycle_fluxes(graph: &Graph, cycles: &[Vec<usize>], targets: &[f64]) -> Result<Vec<f64>> {
    if !graph.is_connected() {
        return Err(Error::Config("link graph is disconnected".into()));
    }
    if cycles.len() != targets.len() {
        return Err(Error::Config(format!("{} cycles but {} targets", cycles.len(), targets.len())));
    }
    let forest = graph.spanning_forest();
    let m = forest.cotree_edges.len();
    if cycles.len() != m {
        return Err(Error::Config(format!(
            "graph has {m} independent cycles but {} were given",
            cycles.len()
        )));
    }
    // row i: signed incidence of cycle i on each co-tree edge
    let mut a = vec![vec![0.0; m + 1]; m];
    for (i, cycle) in cycles.iter().enumerate() {
        for s in 0..cycle.len() {
            let (u, v) = (cycle[s], cycle[(s + 1) % cycle.len()]);
            let (e, sign) = graph
                .edge_between(u, v)
                .ok_or_else(|| Error::Config(format!("cycle uses missing link ({}, {})", u + 1, v + 1)))?;
            if let Some(col) = forest.cotree_edges.iter().position(|&c| c == e) {
                a[i][col] += sign;
            }
        }
        a[i][m] = targets[i];
    }
    // Gauss-Jordan with partial pivoting
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Config("cycles are not independent".into()));
        }
        a.swap(col, pivot);
        let p = a[col][col];
        for x in &mut a[col] {
            *x /= p;
        }
        for row in 0..m {
            if row != col && a[row][col] != 0.0 {
                let f = a[row][col];
                for c in 0..=m {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut phases = vec![0.0; graph.edges.len()];
    for (i, &e) in forest.cotree_edges.iter().enumerate() {
        phases[e] = wrap_angle(a[i][m]);
    }
    Ok(phases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::new(3, vec![(0, 1), (1, 2), (2, 0)])
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn triangle_fluxes() {
        let g = triangle();
        let f = loop_flux(&g, &[0.0, 0.0, PI / 2.0], &[0, 1, 2]).unwrap();
        assert!((f - PI / 2.0).abs() < 1e-15);
        let f = loop_flux(&g, &[PI / 3.0; 3], &[0, 1, 2]).unwrap();
        assert!((f - PI).abs() < 1e-12);
        let f = loop_flux(&g, &[0.0, 0.0, PI / 2.0], &[0, 2, 1]).unwrap();
        assert!((f + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn missing_link_is_an_error() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)]);
        assert!(loop_flux(&g, &[0.0, 0.0], &[0, 1, 2]).is_err());
    }

    #[test]
    fn gauge_examples() {
        let g = triangle();
        let phases = [0.0, 0.0, PI / 2.0];
        let id = apply_gauge(&g, &phases, &GaugeTransform { angles: vec![0.0; 3] });
        assert_eq!(id, phases.to_vec());
        let t = apply_gauge(&g, &phases, &GaugeTransform { angles: vec![PI / 6.0, 0.0, 0.0] });
        assert!((t[0] - PI / 6.0).abs() < 1e-15);
        assert!(t[1].abs() < 1e-15);
        assert!((t[2] - PI / 3.0).abs() < 1e-15);
        assert!((loop_flux(&g, &t, &[0, 1, 2]).unwrap() - PI / 2.0).abs() < 1e-15);

        // open chain: any phase can be removed
        let chain = Graph::new(2, vec![(0, 1)]);
        let t = apply_gauge(&chain, &[1.234], &GaugeTransform { angles: vec![0.0, 1.234] });
        assert!(t[0].abs() < 1e-15);
    }

    #[test]
    fn compile_triangle() {
        let g = triangle();
        let p = compile_fluxes(&g, &[PI / 2.0]).unwrap();
        assert_eq!(p.iter().filter(|x| **x != 0.0).count(), 1);
        let cycles = g.fundamental_cycles();
        assert_eq!(cycles.len(), 1);
        assert!((loop_flux(&g, &p, &cycles[0]).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((loop_flux(&g, &p, &[0, 1, 2]).unwrap().abs() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn compile_tree_and_errors() {
        let tree = Graph::new(4, vec![(0, 1), (1, 2), (1, 3)]);
        assert_eq!(compile_fluxes(&tree, &[]).unwrap(), vec![0.0; 3]);
        assert!(compile_fluxes(&tree, &[1.0]).is_err());
        let split = Graph::new(4, vec![(0, 1), (2, 3)]);
        assert!(compile_fluxes(&split, &[]).is_err());
    }

    #[test]
    fn compile_square_plaquettes() {
        let g = Graph::square_lattice(3, 3);
        let plaq = Graph::square_plaquettes(3, 3);
        assert_eq!(plaq.len(), 4);
        let p = compile_cycle_fluxes(&g, &plaq, &[PI / 3.0; 4]).unwrap();
        for c in &plaq {
            assert!((loop_flux(&g, &p, c).unwrap() - PI / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fundamental_cycles_close() {
        let g = Graph::square_lattice(3, 4);
        let cycles = g.fundamental_cycles();
        assert_eq!(cycles.len(), g.edges.len() - g.num_sites + 1);
        for c in &cycles {
            // every consecutive pair, including the wrap-around, is a link
            assert!(loop_flux(&g, &vec![0.0; g.edges.len()], c).is_ok(), "{c:?}");
        }
    }
}
