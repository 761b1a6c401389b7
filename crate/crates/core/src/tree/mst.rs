use std::collections::HashMap;

use petgraph::unionfind::UnionFind;

use super::{ConnectionStats, SnakeGraph};
use crate::real::Real;

/// Kruskal on weight `1 - score`: a spanning forest keeping the most
/// vessel-like connections. Ties go to the lower id pair, so the result does
/// not depend on edge insertion order.
pub fn mst<T: Real>(graph: &SnakeGraph<T>) -> Vec<((usize, usize), ConnectionStats<T>)> {
    let index: HashMap<usize, usize> = graph.vertices.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut edges: Vec<(&(usize, usize), &ConnectionStats<T>)> = graph
        .edges
        .iter()
        .filter(|((a, b), _)| a != b && index.contains_key(a) && index.contains_key(b))
        .collect();
    edges.sort_by(|(ka, sa), (kb, sb)| {
        let (wa, wb) = (T::one() - sa.score, T::one() - sb.score);
        wa.partial_cmp(&wb)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ka.cmp(kb))
    });
    let mut uf = UnionFind::<usize>::new(graph.vertices.len());
    edges
        .into_iter()
        .filter(|((a, b), _)| uf.union(index[a], index[b]))
        .map(|(k, s)| (*k, *s))
        .collect()
}
