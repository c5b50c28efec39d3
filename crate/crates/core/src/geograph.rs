//! Sensor adjacency: haversine k-NN graph construction and per-hop
//! neighbourhood sampling.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::SensorLocation;
use crate::error::{Error, Result};
use crate::Rng;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Great-circle distance in meters between two `(lat, lon)` points in degrees.
pub fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Undirected graph over sensors with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    adjacency: Vec<Vec<usize>>,
    edge_lengths: Vec<Vec<f64>>,
}

impl SpatialGraph {
    /// Graph from an undirected edge list `(u, v, length_m)`.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut pairs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
        for &(u, v, len) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) outside {n_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop on node {u}")));
            }
            pairs[u].push((v, len));
            pairs[v].push((u, len));
        }
        let mut adjacency = Vec::with_capacity(n_nodes);
        let mut edge_lengths = Vec::with_capacity(n_nodes);
        for mut p in pairs {
            p.sort_by_key(|a| a.0);
            p.dedup_by_key(|e| e.0);
            adjacency.push(p.iter().map(|e| e.0).collect());
            edge_lengths.push(p.iter().map(|e| e.1).collect());
        }
        Ok(Self {
            adjacency,
            edge_lengths,
        })
    }

    pub fn empty(n_nodes: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); n_nodes],
            edge_lengths: vec![Vec::new(); n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn edge_lengths(&self, node: usize) -> &[f64] {
        &self.edge_lengths[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Edges with `u < v`, ordered.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (u, (adj, lens)) in self.adjacency.iter().zip(&self.edge_lengths).enumerate() {
            for (&v, &len) in adj.iter().zip(lens) {
                if u < v {
                    out.push((u, v, len));
                }
            }
        }
        out
    }

    fn bfs(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_nodes()];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("visited");
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Longest shortest-path hop count, or `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for s in 0..self.n_nodes() {
            for d in self.bfs(s) {
                best = best.max(d?);
            }
        }
        Some(best)
    }

    /// Debug dump: one `u v length_m` line per edge.
    pub fn edge_list_text(&self) -> String {
        let mut s = String::new();
        for (u, v, len) in self.edges() {
            let _ = writeln!(s, "{u} {v} {len:.3}");
        }
        s
    }
}

/// Symmetrized k-nearest-neighbour graph by haversine distance.
///
/// Each sensor selects its `k` nearest others (ties by ascending sensor id);
/// an edge exists if either endpoint selected the other.
pub fn build_knn_graph(locations: &[SensorLocation], k: usize) -> Result<SpatialGraph> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if locations.len() < 2 {
        return Err(Error::InvalidArgument(
            "graph needs at least 2 locations".into(),
        ));
    }
    let n = locations.len();
    let mut edges = Vec::new();
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (haversine(locations[i].coords(), locations[j].coords()), j))
            .collect();
        for &(d, j) in &cand {
            if d == 0.0 && i < j {
                log::warn!(
                    "sensors `{}` and `{}` share coordinates; ties broken by id",
                    locations[i].id,
                    locations[j].id
                );
            }
        }
        cand.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| locations[a.1].id.cmp(&locations[b.1].id))
        });
        for &(d, j) in cand.iter().take(k) {
            edges.push((i, j, d));
        }
    }
    SpatialGraph::from_edges(n, &edges)
}

/// Per-hop sampling budgets, innermost hop first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleBudget(pub Vec<usize>);

impl Default for SampleBudget {
    fn default() -> Self {
        Self(vec![3, 5])
    }
}

impl SampleBudget {
    pub fn validate(&self) -> Result<()> {
        if self.0.len() != 2 || self.0.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "sample budget must have 2 positive entries, got {:?}",
                self.0
            )));
        }
        Ok(())
    }
}

/// Sampled two-hop neighbourhood of a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub hop1: Vec<usize>,
    /// `hop2[i]` holds the sampled neighbours of `hop1[i]`.
    pub hop2: Vec<Vec<usize>>,
}

fn sample_from(adj: &[usize], budget: usize, rng: &mut Rng) -> Vec<usize> {
    if adj.len() <= budget {
        return adj.to_vec();
    }
    let mut picked: Vec<usize> = index::sample(rng, adj.len(), budget)
        .into_iter()
        .map(|i| adj[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Uniform sampling without replacement: `budget[0]` first-hop neighbours,
/// then `budget[1]` neighbours of each of those.
pub fn sample_neighborhood(
    g: &SpatialGraph,
    node: usize,
    budget: &SampleBudget,
    rng: &mut Rng,
) -> Neighborhood {
    let hop1 = sample_from(g.neighbors(node), budget.0[0], rng);
    let hop2 = hop1
        .iter()
        .map(|&u| sample_from(g.neighbors(u), budget.0[1], rng))
        .collect();
    Neighborhood { hop1, hop2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn loc(id: &str, lat: f64, lon: f64) -> SensorLocation {
        SensorLocation::new(id, lat, lon, 0.0).unwrap()
    }

    #[test]
    fn haversine_reference_values() {
        assert_eq!(haversine((51.0, -2.0), (51.0, -2.0)), 0.0);
        let half = haversine((0.0, 0.0), (0.0, 180.0));
        assert!((half - std::f64::consts::PI * EARTH_RADIUS_M).abs() < 1e-6);
        assert!((half - 20_015_086.796).abs() < 1.0);
    }

    #[test]
    fn collinear_path() {
        let locs = vec![loc("a", 0.0, 0.0), loc("b", 0.0, 0.01), loc("c", 0.0, 0.02)];
        let g = build_knn_graph(&locs, 1).unwrap();
        let pairs: Vec<_> = g.edges().iter().map(|e| (e.0, e.1)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2)]);
        assert_eq!(g.diameter(), Some(2));
    }

    #[test]
    fn saturated_k_is_complete() {
        let locs: Vec<_> = (0..5)
            .map(|i| loc(&format!("s{i}"), i as f64 * 0.01, (i * i) as f64 * 0.003))
            .collect();
        let g = build_knn_graph(&locs, 4).unwrap();
        assert_eq!(g.n_edges(), 10);
        assert_eq!(g.diameter(), Some(1));
        let g = build_knn_graph(&locs, 99).unwrap();
        assert_eq!(g.n_edges(), 10);
    }

    #[test]
    fn construction_errors() {
        let locs = vec![loc("a", 0.0, 0.0), loc("b", 0.0, 0.01)];
        assert!(build_knn_graph(&locs, 0).is_err());
        assert!(build_knn_graph(&locs[..1], 1).is_err());
    }

    #[test]
    fn duplicate_coordinates_tie_break_by_id() {
        let locs = vec![loc("z", 0.0, 0.0), loc("b", 0.0, 0.01), loc("a", 0.0, 0.01)];
        let g = build_knn_graph(&locs, 1).unwrap();
        // z's two candidates are equidistant; "a" sorts first
        assert!(g.has_edge(0, 2));
        assert!(!g.has_edge(0, 1));
    }

    #[test]
    fn sampling_edge_cases() {
        let g = SpatialGraph::from_edges(4, &[(0, 1, 1.0), (0, 2, 1.0)]).unwrap();
        let mut rng = seeded_rng(0);
        let nb = sample_neighborhood(&g, 0, &SampleBudget::default(), &mut rng);
        assert_eq!(nb.hop1, vec![1, 2]);
        assert_eq!(nb.hop2, vec![vec![0], vec![0]]);
        let iso = sample_neighborhood(&g, 3, &SampleBudget::default(), &mut rng);
        assert!(iso.hop1.is_empty() && iso.hop2.is_empty());
    }

    #[test]
    fn budget_validation() {
        assert!(SampleBudget::default().validate().is_ok());
        assert!(SampleBudget(vec![3]).validate().is_err());
        assert!(SampleBudget(vec![0, 5]).validate().is_err());
    }

    #[test]
    fn edge_dump() {
        let g = SpatialGraph::from_edges(3, &[(2, 0, 12.5)]).unwrap();
        assert_eq!(g.edge_list_text(), "0 2 12.500\n");
        assert!(SpatialGraph::from_edges(2, &[(1, 1, 0.0)]).is_err());
    }
}
