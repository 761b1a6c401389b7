//! Decomposition of a curve skeleton into simple paths.

use std::collections::HashMap;

use super::VoxelSet;
use crate::geom::WorldPoint;
use crate::real::Real;
use crate::volume::Grid;

pub const DEFAULT_MIN_CURVE_VOXELS: usize = 3;

/// An ordered path of skeleton voxels, without radii.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialCurve<T> {
    pub id: usize,
    pub voxels: Vec<[usize; 3]>,
    pub points: Vec<WorldPoint<T>>,
}

impl<T: Real> InitialCurve<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> T {
        crate::geom::polyline_length(&self.points)
    }
}

fn adjacent(a: &[usize; 3], b: &[usize; 3]) -> bool {
    a != b && (0..3).all(|k| a[k].abs_diff(b[k]) <= 1)
}

/// Splits the 26-adjacency graph of `skeleton` (minus redundant triangle
/// diagonals) at junction voxels (degree >= 3). Every maximal path whose interior avoids junctions becomes a curve;
/// a junction voxel at either end is kept, so it appears in every incident
/// curve. Curves with fewer than `min_voxels` voxels are dropped.
pub fn extract_curves<T: Real>(skeleton: &VoxelSet, grid: &Grid<T>, min_voxels: usize) -> Vec<InitialCurve<T>> {
    let nodes: Vec<[usize; 3]> = skeleton.iter().copied().collect();
    let index: HashMap<[usize; 3], usize> = nodes.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let neighbours: Vec<Vec<usize>> = nodes
        .iter()
        .map(|v| {
            let mut out = Vec::new();
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let w = [v[0] as i64 + dx, v[1] as i64 + dy, v[2] as i64 + dz];
                        if w.iter().any(|&c| c < 0) {
                            continue;
                        }
                        let w = [w[0] as usize, w[1] as usize, w[2] as usize];
                        if let Some(&n) = index.get(&w) {
                            out.push(n);
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect();
    // Drop the long side of every triangle: a diagonal link a-b is redundant
    // when a common neighbour c is strictly closer (L1) to both ends.
    let l1 = |a: usize, b: usize| -> usize { (0..3).map(|k| nodes[a][k].abs_diff(nodes[b][k])).sum() };
    let neighbours: Vec<Vec<usize>> = (0..nodes.len())
        .map(|a| {
            neighbours[a]
                .iter()
                .copied()
                .filter(|&b| {
                    let ab = l1(a, b);
                    !neighbours[a]
                        .iter()
                        .any(|&c| c != b && l1(a, c) < ab && l1(c, b) < ab && neighbours[b].contains(&c))
                })
                .collect()
        })
        .collect();
    let junction: Vec<bool> = neighbours.iter().map(|n| n.len() >= 3).collect();
    let mut visited = vec![false; nodes.len()];
    let mut paths: Vec<Vec<usize>> = Vec::new();

    // Walks from `start` away from `prev`, returning the visited chain and the
    // terminating junction (if any).
    let walk = |start: usize, prev: usize, visited: &mut Vec<bool>| -> Vec<usize> {
        let mut chain = Vec::new();
        let (mut prev, mut cur) = (prev, start);
        loop {
            if junction[cur] {
                chain.push(cur);
                return chain;
            }
            if visited[cur] {
                return chain;
            }
            visited[cur] = true;
            chain.push(cur);
            let next = neighbours[cur].iter().copied().find(|&n| n != prev);
            match next {
                Some(n) => {
                    prev = cur;
                    cur = n;
                }
                None => return chain,
            }
        }
    };

    for s in 0..nodes.len() {
        if visited[s] || junction[s] {
            continue;
        }
        visited[s] = true;
        let nb = &neighbours[s];
        let forward = nb.first().map(|&n| walk(n, s, &mut visited)).unwrap_or_default();
        let backward = nb.get(1).map(|&n| walk(n, s, &mut visited)).unwrap_or_default();
        let mut path: Vec<usize> = backward.into_iter().rev().collect();
        path.push(s);
        path.extend(forward);
        paths.push(path);
    }
    // Junction-to-junction links (two adjacent junction voxels belonging to
    // different branches) carry no interior voxel and are never long enough.

    paths
        .into_iter()
        .filter(|p| p.len() >= min_voxels.max(1))
        .enumerate()
        .map(|(id, p)| {
            let voxels: Vec<[usize; 3]> = p.iter().map(|&i| nodes[i]).collect();
            debug_assert!(voxels.windows(2).all(|w| adjacent(&w[0], &w[1])));
            let points = voxels.iter().map(|v| grid.voxel_center(v[0], v[1], v[2])).collect();
            InitialCurve { id, voxels, points }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid<f64> {
        Grid::new([40, 40, 40], [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn straight_path() {
        let s: VoxelSet = (0..10).map(|i| [i + 5, 5, 5]).collect();
        let c = extract_curves(&s, &grid(), 3);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 10);
        assert_eq!(c[0].points[0].x, 5.0);
    }

    #[test]
    fn two_isolated_voxels() {
        let s: VoxelSet = [[1, 1, 1], [5, 5, 5]].into_iter().collect();
        assert!(extract_curves(&s, &grid(), 3).is_empty());
    }

    #[test]
    fn y_shape() {
        // junction at (20,20,20); arms along +x, +y and the -x-y diagonal
        let j = [20usize, 20, 20];
        let mut s = VoxelSet::new();
        s.insert(j);
        for i in 1..=10 {
            s.insert([20 + i, 20, 20]);
            s.insert([20, 20 + i, 20]);
            s.insert([20 - i, 20 - i, 20]);
        }
        let c = extract_curves(&s, &grid(), 3);
        assert_eq!(c.len(), 3);
        for curve in &c {
            assert_eq!(curve.len(), 11);
            let first = curve.voxels[0];
            let last = *curve.voxels.last().unwrap();
            assert!(first == j || last == j);
        }
    }
}
