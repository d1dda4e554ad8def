use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Mesh;

/// One-ring and geodesic-ball neighborhoods of every vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexGraph {
    pub ring_neighbors: Vec<Vec<usize>>,
    pub geodesic_neighbors: Vec<Vec<usize>>,
    pub radius: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphReport {
    /// Vertices not referenced by any triangle.
    pub isolated: Vec<usize>,
}

impl VertexGraph {
    pub fn vertex_count(&self) -> usize {
        self.ring_neighbors.len()
    }

    /// Graph on permuted vertices where new vertex `i` is old vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> VertexGraph {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let remap = |lists: &[Vec<usize>]| {
            perm.iter()
                .map(|&old| {
                    let mut l: Vec<usize> = lists[old].iter().map(|&u| inverse[u]).collect();
                    l.sort_unstable();
                    l
                })
                .collect()
        };
        VertexGraph {
            ring_neighbors: remap(&self.ring_neighbors),
            geodesic_neighbors: remap(&self.geodesic_neighbors),
            radius: self.radius,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Builds one-ring adjacency from the triangles and the geodesic ball of
/// `radius` by Dijkstra over edges weighted with their Euclidean length.
/// Neighbor lists are sorted ascending and never contain the vertex itself.
pub fn build_vertex_graph(mesh: &Mesh, radius: f64) -> (VertexGraph, GraphReport) {
    let n = mesh.vertex_count();
    let verts = mesh.vertices();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for &(a, b) in mesh.edges() {
        let w = (verts[a] - verts[b]).norm();
        adjacency[a].push((b, w));
        adjacency[b].push((a, w));
    }
    for list in &mut adjacency {
        list.sort_by_key(|&(u, _)| u);
    }
    let ring_neighbors: Vec<Vec<usize>> = adjacency.iter().map(|l| l.iter().map(|&(u, _)| u).collect()).collect();

    let geodesic_neighbors: Vec<Vec<usize>> =
        (0..n).into_par_iter().map(|src| geodesic_ball(&adjacency, src, radius)).collect();

    let isolated = (0..n).filter(|&v| ring_neighbors[v].is_empty()).collect::<Vec<_>>();
    if !isolated.is_empty() {
        log::warn!("{} isolated vertices have empty neighborhoods", isolated.len());
    }
    (VertexGraph { ring_neighbors, geodesic_neighbors, radius }, GraphReport { isolated })
}

fn geodesic_ball(adjacency: &[Vec<(usize, f64)>], src: usize, radius: f64) -> Vec<usize> {
    let mut best: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert(src, 0.0);
    heap.push(Entry { dist: 0.0, vertex: src });
    let mut settled = Vec::new();
    while let Some(Entry { dist, vertex }) = heap.pop() {
        if dist > best[&vertex] {
            continue;
        }
        settled.push(vertex);
        for &(u, w) in &adjacency[vertex] {
            let nd = dist + w;
            if nd <= radius && best.get(&u).map_or(true, |&d| nd < d) {
                best.insert(u, nd);
                heap.push(Entry { dist: nd, vertex: u });
            }
        }
    }
    let mut out: Vec<usize> = settled.into_iter().filter(|&u| u != src).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Subsamples each geodesic list uniformly without replacement to at most
/// `max_edges` entries. One-ring lists are untouched.
pub fn sample_edge_dropout(graph: &VertexGraph, max_edges: usize, seed: u64) -> VertexGraph {
    let max_edges = max_edges.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geodesic_neighbors = graph
        .geodesic_neighbors
        .iter()
        .map(|list| {
            if list.len() <= max_edges {
                return list.clone();
            }
            let mut picked: Vec<usize> = sample(&mut rng, list.len(), max_edges).into_iter().map(|i| list[i]).collect();
            picked.sort_unstable();
            picked
        })
        .collect();
    VertexGraph { ring_neighbors: graph.ring_neighbors.clone(), geodesic_neighbors, radius: graph.radius }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Point;

    fn triangle() -> Mesh {
        Mesh::new(
            vec![Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0), Point::new(0.5, 0.75f64.sqrt(), 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    fn strip(n: usize) -> Mesh {
        let mut verts = Vec::new();
        for i in 0..n {
            verts.push(Point::new(i as f64, 0.0, 0.0));
            verts.push(Point::new(i as f64, 1.0, 0.0));
        }
        let mut tris = Vec::new();
        for i in 0..n - 1 {
            let (a, b, c, d) = (2 * i, 2 * i + 1, 2 * i + 2, 2 * i + 3);
            tris.push([a, c, b]);
            tris.push([b, c, d]);
        }
        Mesh::new(verts, tris).unwrap()
    }

    #[test]
    fn equilateral_triangle_is_complete() {
        let (g, report) = build_vertex_graph(&triangle(), 10.0);
        assert!(report.isolated.is_empty());
        assert_eq!(g.ring_neighbors, vec![vec![1, 2], vec![0, 2], vec![0, 1]]);
        assert_eq!(g.geodesic_neighbors, g.ring_neighbors);
    }

    #[test]
    fn small_radius_truncates() {
        let (g, _) = build_vertex_graph(&strip(5), 0.5);
        assert!(g.geodesic_neighbors.iter().all(Vec::is_empty));
        assert!(g.ring_neighbors.iter().all(|l| !l.is_empty()));
    }

    #[test]
    fn isolated_vertex_reported() {
        let mut verts = triangle().vertices().to_vec();
        verts.push(Point::new(5.0, 5.0, 5.0));
        let m = Mesh::new(verts, vec![[0, 1, 2]]).unwrap();
        let (g, report) = build_vertex_graph(&m, 1.0);
        assert_eq!(report.isolated, vec![3]);
        assert!(g.ring_neighbors[3].is_empty() && g.geodesic_neighbors[3].is_empty());
    }

    #[test]
    fn dropout_budget_and_determinism() {
        let graph = VertexGraph {
            ring_neighbors: vec![vec![1], vec![0]],
            geodesic_neighbors: vec![(1..41).collect(), vec![0, 2, 3]],
            radius: 1.0,
        };
        let a = sample_edge_dropout(&graph, 15, 7);
        let b = sample_edge_dropout(&graph, 15, 7);
        assert_eq!(a, b);
        assert_eq!(a.geodesic_neighbors[0].len(), 15);
        assert!(a.geodesic_neighbors[0].iter().all(|u| graph.geodesic_neighbors[0].contains(u)));
        assert_eq!(a.geodesic_neighbors[1], vec![0, 2, 3]);
        assert_eq!(a.ring_neighbors, graph.ring_neighbors);
        let c = sample_edge_dropout(&graph, 15, 8);
        assert_ne!(a.geodesic_neighbors[0], c.geodesic_neighbors[0]);
    }
}
