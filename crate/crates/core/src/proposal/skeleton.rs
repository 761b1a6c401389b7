//! Topology-preserving 3D thinning.
//!
//! Border voxels are peeled in six directional sub-iterations (+x, -x, +y, -y,
//! +z, -z). A voxel is removed only if it is a simple point, i.e. deleting it
//! keeps the 26-connectivity of the foreground and the 6-connectivity of the
//! background within its 3x3x3 neighbourhood, and it is not a curve endpoint
//! (at most one foreground 26-neighbour). Candidates are marked first and then
//! deleted in lattice order, re-checking each one against the current state.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use super::BinaryMask;
use crate::real::Real;

/// Voxel index triples `[i, j, k]`.
pub type VoxelSet = BTreeSet<[usize; 3]>;

const CENTER: usize = 13;

#[inline]
fn cube_index(dx: i32, dy: i32, dz: i32) -> usize {
    ((dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)) as usize
}

fn cube_offset(i: usize) -> [i32; 3] {
    [(i % 3) as i32 - 1, ((i / 3) % 3) as i32 - 1, (i / 9) as i32 - 1]
}

struct Adjacency {
    n26: Vec<Vec<usize>>,
    n6: Vec<Vec<usize>>,
    in_n18: [bool; 27],
    face: [bool; 27],
}

fn adjacency() -> &'static Adjacency {
    static ADJ: OnceLock<Adjacency> = OnceLock::new();
    ADJ.get_or_init(|| {
        let mut n26 = vec![Vec::new(); 27];
        let mut n6 = vec![Vec::new(); 27];
        let mut in_n18 = [false; 27];
        let mut face = [false; 27];
        for a in 0..27 {
            let oa = cube_offset(a);
            let l1: i32 = oa.iter().map(|c| c.abs()).sum();
            in_n18[a] = a != CENTER && l1 <= 2;
            face[a] = l1 == 1;
            for b in 0..27 {
                if a == b {
                    continue;
                }
                let ob = cube_offset(b);
                let d: Vec<i32> = (0..3).map(|k| (oa[k] - ob[k]).abs()).collect();
                if d.iter().all(|&x| x <= 1) {
                    n26[a].push(b);
                    if d.iter().sum::<i32>() == 1 {
                        n6[a].push(b);
                    }
                }
            }
        }
        Adjacency { n26, n6, in_n18, face }
    })
}

/// Simple-point test on a 3x3x3 neighbourhood (`cube[13]` is the centre).
pub fn is_simple_point(cube: &[bool; 27]) -> bool {
    let adj = adjacency();

    // Foreground: exactly one 26-component in N26 minus the centre.
    let mut seen = [false; 27];
    let mut fg_components = 0;
    for s in 0..27 {
        if s == CENTER || !cube[s] || seen[s] {
            continue;
        }
        fg_components += 1;
        if fg_components > 1 {
            return false;
        }
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj.n26[u] {
                if v != CENTER && cube[v] && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    if fg_components != 1 {
        return false;
    }

    // Background: exactly one 6-component in N18 that touches a face neighbour.
    let mut seen = [false; 27];
    let mut bg_components = 0;
    for s in 0..27 {
        if !adj.face[s] || cube[s] || seen[s] {
            continue;
        }
        bg_components += 1;
        if bg_components > 1 {
            return false;
        }
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj.n6[u] {
                if adj.in_n18[v] && !cube[v] && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    bg_components == 1
}

struct Padded {
    dims: [usize; 3],
    data: Vec<bool>,
    offsets: [isize; 27],
}

impl Padded {
    fn new<T: Real>(mask: &BinaryMask<T>) -> Self {
        let g = mask.grid();
        let dims = [g.dims[0] + 2, g.dims[1] + 2, g.dims[2] + 2];
        let mut data = vec![false; dims[0] * dims[1] * dims[2]];
        for k in 0..g.dims[2] {
            for j in 0..g.dims[1] {
                for i in 0..g.dims[0] {
                    if mask.get(i, j, k) {
                        data[(i + 1) + dims[0] * ((j + 1) + dims[1] * (k + 1))] = true;
                    }
                }
            }
        }
        let mut offsets = [0isize; 27];
        for (c, off) in offsets.iter_mut().enumerate() {
            let o = cube_offset(c);
            *off = o[0] as isize + dims[0] as isize * (o[1] as isize + dims[1] as isize * o[2] as isize);
        }
        Self { dims, data, offsets }
    }

    #[inline]
    fn cube(&self, idx: usize) -> [bool; 27] {
        let mut c = [false; 27];
        for (n, off) in self.offsets.iter().enumerate() {
            c[n] = self.data[(idx as isize + off) as usize];
        }
        c
    }

    fn unpad(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i - 1, j - 1, k - 1]
    }
}

fn neighbour_count(cube: &[bool; 27]) -> usize {
    cube.iter().enumerate().filter(|&(i, &v)| i != CENTER && v).count()
}

fn deletable(cube: &[bool; 27]) -> bool {
    neighbour_count(cube) > 1 && is_simple_point(cube)
}

/// Thins a mask to a one-voxel-wide curve skeleton.
pub fn skeletonize<T: Real>(mask: &BinaryMask<T>) -> VoxelSet {
    let mut vol = Padded::new(mask);
    let mut fg: Vec<usize> = vol
        .data
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(i, _)| i)
        .collect();
    let directions = [
        cube_index(1, 0, 0),
        cube_index(-1, 0, 0),
        cube_index(0, 1, 0),
        cube_index(0, -1, 0),
        cube_index(0, 0, 1),
        cube_index(0, 0, -1),
    ];
    loop {
        let mut changed = false;
        for &dir in &directions {
            let marked: Vec<usize> = fg
                .iter()
                .copied()
                .filter(|&idx| {
                    let c = vol.cube(idx);
                    !c[dir] && deletable(&c)
                })
                .collect();
            for idx in marked {
                if deletable(&vol.cube(idx)) {
                    vol.data[idx] = false;
                    changed = true;
                }
            }
            fg.retain(|&i| vol.data[i]);
        }
        if !changed {
            break;
        }
    }
    fg.iter().map(|&i| vol.unpad(i)).collect()
}
