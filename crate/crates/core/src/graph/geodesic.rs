use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::pointcloud::Point3;

/// Undirected KNN graph over token centers with Euclidean edge lengths.
///
/// Disconnected components are joined by repeatedly adding the shortest edge
/// between two different components.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    /// Sorted by neighbor index.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    pub bridges: Vec<(usize, usize)>,
}

impl KnnGraph {
    pub fn build(centers: &[Point3], knn_k: usize) -> Result<Self> {
        let n = centers.len();
        if n < 2 {
            return Err(Error::InvalidArgument("need at least 2 centers".into()));
        }
        if knn_k == 0 {
            return Err(Error::InvalidArgument("knn_k must be at least 1".into()));
        }
        let dist = |i: usize, j: usize| (centers[i] - centers[j]).norm();
        let mut adj = vec![Vec::new(); n];
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            order.clear();
            order.extend((0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)));
            order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(d, j) in order.iter().take(knn_k) {
                adj[i].push((j, d));
                adj[j].push((i, d));
            }
        }

        let mut bridges = Vec::new();
        loop {
            let comp = components(&adj);
            let count = comp.iter().max().map_or(0, |m| m + 1);
            if count <= 1 {
                break;
            }
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..n {
                for j in i + 1..n {
                    if comp[i] == comp[j] {
                        continue;
                    }
                    let d = dist(i, j);
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, i, j));
                    }
                }
            }
            let (d, i, j) = best.expect("at least two components");
            adj[i].push((j, d));
            adj[j].push((i, d));
            bridges.push((i, j));
        }

        for list in &mut adj {
            list.sort_unstable_by(|a, b| a.0.cmp(&b.0));
            list.dedup_by_key(|e| e.0);
        }
        Ok(Self {
            neighbors: adj,
            bridges,
        })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Hop counts from `source` (unreachable nodes get `usize::MAX`).
    pub fn hop_distances(&self, source: usize) -> Vec<usize> {
        let mut hops = vec![usize::MAX; self.len()];
        hops[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.neighbors[u] {
                if hops[v] == usize::MAX {
                    hops[v] = hops[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        hops
    }

    /// Nodes within `r` hops of `source`, excluding `source`, ascending by index.
    pub fn hop_neighborhood(&self, source: usize, r: usize) -> Vec<usize> {
        self.hop_distances(source)
            .into_iter()
            .enumerate()
            .filter(|&(j, h)| j != source && h <= r)
            .map(|(j, _)| j)
            .collect()
    }

    /// Single-source shortest path lengths.
    pub fn dijkstra(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.len()];
        dist[source] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(State {
            cost: 0.0,
            node: source,
        });
        while let Some(State { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &(next, w) in &self.neighbors[node] {
                let c = cost + w;
                if c < dist[next] {
                    dist[next] = c;
                    heap.push(State { cost: c, node: next });
                }
            }
        }
        dist
    }
}

fn components(adj: &[Vec<(usize, f64)>]) -> Vec<usize> {
    let n = adj.len();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

#[derive(Copy, Clone, PartialEq)]
struct State {
    cost: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All-pairs shortest-path lengths over the bridged KNN graph of the centers.
pub fn geodesic_distances(centers: &[Point3], knn_k: usize) -> Result<DMatrix<f64>> {
    let graph = KnnGraph::build(centers, knn_k)?;
    Ok(graph_geodesics(&graph))
}

pub(crate) fn graph_geodesics(graph: &KnnGraph) -> DMatrix<f64> {
    let n = graph.len();
    let mut out = DMatrix::zeros(n, n);
    for s in 0..n {
        for (t, d) in graph.dijkstra(s).into_iter().enumerate() {
            out[(s, t)] = d;
        }
    }
    // Dijkstra from each end may differ in the last ulp; keep the matrix exactly symmetric.
    for i in 0..n {
        for j in i + 1..n {
            let m = out[(i, j)].min(out[(j, i)]);
            out[(i, j)] = m;
            out[(j, i)] = m;
        }
    }
    out
}
