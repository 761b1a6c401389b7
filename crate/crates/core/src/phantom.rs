//! Deterministic synthetic vascular trees and their rasterised volumes.
//!
//! A phantom is a forest-free tree of smooth tubes: one root vessel running
//! along the longest axis and `n_terminal_branches - 1` children, each leaving
//! an existing vessel at 20°–70° from its tangent. Radii taper monotonically
//! from root to tips. The same [`PhantomSpec`] always produces the same tree
//! and the same volume, noise included.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geom::{Vec3, WorldPoint};
use crate::real::Real;
use crate::trace::Trace;
use crate::volume::{Grid, Polarity, Volume3, VolumeError};

/// Branch angle range relative to the parent tangent, degrees.
pub const BRANCH_ANGLE_DEG: (f64, f64) = (20.0, 70.0);
/// Child root radius as a fraction of the parent radius at the attachment.
pub const CHILD_TAPER: (f64, f64) = (0.6, 0.9);
/// Tip radius as a fraction of a vessel's root radius.
const TIP_TAPER: (f64, f64) = (0.65, 0.9);
/// Minimum wall-to-wall clearance between unrelated vessels, mm.
const CLEARANCE_MM: f64 = 2.0;
const MAX_PLACEMENT_ATTEMPTS: usize = 400;
const NOISE_STREAM: u64 = 0x0000_05ee_d0f7_015e;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("volume too small: {available:.2} mm of usable extent, need {needed:.2} mm")]
    VolumeTooSmall { available: f64, needed: f64 },
    #[error("could not place branch {branch} after {attempts} attempts")]
    Placement { branch: usize, attempts: usize },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Parameters of a synthetic phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec<T> {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing_mm: [T; 3],
    pub n_terminal_branches: usize,
    pub radius_range_mm: (T, T),
    pub foreground_mean: T,
    pub background_mean: T,
    pub polarity: Polarity,
    pub noise_sigma: T,
    pub min_branch_len_mm: T,
}

impl<T: Real> Default for PhantomSpec<T> {
    fn default() -> Self {
        Self {
            seed: 1,
            dims: [128, 128, 128],
            spacing_mm: [T::lit(0.5); 3],
            n_terminal_branches: 6,
            radius_range_mm: (T::lit(1.0), T::lit(2.5)),
            foreground_mean: T::lit(200.0),
            background_mean: T::lit(50.0),
            polarity: Polarity::Bright,
            noise_sigma: T::lit(7.5),
            min_branch_len_mm: T::lit(12.0),
        }
    }
}

impl<T: Real> PhantomSpec<T> {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: &str| Err(PhantomError::InvalidSpec(m.to_string()));
        if self.n_terminal_branches == 0 {
            return bad("n_terminal_branches must be >= 1");
        }
        let (lo, hi) = self.radius_range_mm;
        if !(lo > T::zero()) || !(lo <= hi) || !hi.is_finite() {
            return bad("radius range must satisfy 0 < min <= max");
        }
        if self.foreground_mean == self.background_mean {
            return bad("foreground_mean must differ from background_mean");
        }
        if !self.foreground_mean.is_finite() || !self.background_mean.is_finite() {
            return bad("intensity means must be finite");
        }
        if !(self.noise_sigma >= T::zero()) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be >= 0");
        }
        if !(self.min_branch_len_mm > T::zero()) {
            return bad("min_branch_len_mm must be > 0");
        }
        Grid::new(self.dims, self.spacing_mm, [T::zero(); 3])?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid<T>, PhantomError> {
        Ok(Grid::new(self.dims, self.spacing_mm, [T::zero(); 3])?)
    }

    /// Absolute intensity difference between vessel and background.
    pub fn contrast(&self) -> T {
        (self.foreground_mean - self.background_mean).abs()
    }

    /// (vessel, background) intensities after applying polarity.
    pub fn levels(&self) -> (T, T) {
        match self.polarity {
            Polarity::Bright => (self.foreground_mean, self.background_mean),
            Polarity::Dark => (self.background_mean, self.foreground_mean),
        }
    }
}

/// Where a child trace leaves its parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Attachment {
    /// Index of the parent trace in [`GroundTruthTree::traces`].
    pub parent: usize,
    /// Index of the attachment point on the parent.
    pub point: usize,
}

/// Ground-truth vascular tree: traces plus parent links.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthTree<T> {
    pub traces: Vec<Trace<T>>,
    pub parents: Vec<Option<Attachment>>,
}

impl<T: Real> GroundTruthTree<T> {
    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.traces.iter().map(Trace::len).sum()
    }

    pub fn max_radius(&self) -> T {
        self.traces
            .iter()
            .flat_map(|t| t.radii.iter().copied())
            .fold(T::zero(), T::max)
    }

    /// Indices of traces that are children of `parent`.
    pub fn children_of(&self, parent: usize) -> impl Iterator<Item = (usize, Attachment)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter_map(move |(i, a)| a.filter(|a| a.parent == parent).map(|a| (i, a)))
    }

    /// Checks the forest property of the parent links.
    pub fn is_forest(&self) -> bool {
        (0..self.len()).all(|start| {
            let mut seen = vec![false; self.len()];
            let mut cur = start;
            loop {
                if seen[cur] {
                    return false;
                }
                seen[cur] = true;
                match self.parents[cur] {
                    Some(a) if a.parent < self.len() => cur = a.parent,
                    Some(_) => return false,
                    None => return true,
                }
            }
        })
    }
}

struct Bounds<T> {
    lo: [T; 3],
    hi: [T; 3],
}

impl<T: Real> Bounds<T> {
    fn contains(&self, p: WorldPoint<T>) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }

    fn size(&self, a: usize) -> T {
        self.hi[a] - self.lo[a]
    }
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> T {
    T::lit(if hi > lo { rng.random_range(lo..hi) } else { lo })
}

/// Rotates `dir` by `angle` (radians) towards a random perpendicular.
fn deflect<T: Real>(rng: &mut ChaCha8Rng, dir: Vec3<T>, angle: f64) -> Vec3<T> {
    let u = dir.any_perpendicular();
    let w = dir.cross(u);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let side = u * T::lit(phi.cos()) + w * T::lit(phi.sin());
    (dir * T::lit(angle.cos()) + side * T::lit(angle.sin()))
        .normalized()
        .unwrap_or(dir)
}

fn catmull_rom<T: Real>(ctrl: &[Vec3<T>], samples_per_seg: usize) -> Vec<Vec3<T>> {
    let n = ctrl.len();
    let get = |i: isize| ctrl[i.clamp(0, n as isize - 1) as usize];
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut out = Vec::with_capacity((n - 1) * samples_per_seg + 1);
    for s in 0..n - 1 {
        let (p0, p1, p2, p3) = (
            get(s as isize - 1),
            get(s as isize),
            get(s as isize + 1),
            get(s as isize + 2),
        );
        for k in 0..samples_per_seg {
            let t = T::from_usize_lossy(k) / T::from_usize_lossy(samples_per_seg);
            let t2 = t * t;
            let t3 = t2 * t;
            let p = (p1 * two
                + (p2 - p0) * t
                + (p0 * two - p1 * T::lit(5.0) + p2 * T::lit(4.0) - p3) * t2
                + (-p0 + p1 * T::lit(3.0) - p2 * T::lit(3.0) + p3) * t3)
                * half;
            out.push(p);
        }
    }
    out.push(ctrl[n - 1]);
    out
}

/// Random smooth curve from `start` heading roughly along `dir`, truncated at
/// the bounds.
fn grow_curve<T: Real>(
    rng: &mut ChaCha8Rng,
    start: WorldPoint<T>,
    dir: Vec3<T>,
    length: T,
    bounds: &Bounds<T>,
) -> Vec<WorldPoint<T>> {
    let len = length.to_f64_lossy();
    let n_seg = ((len / 8.0).round() as usize).clamp(2, 8);
    let seg = length / T::from_usize_lossy(n_seg);
    let mut ctrl = vec![start];
    let mut d = dir;
    let mut p = start;
    for i in 0..n_seg {
        if i > 0 {
            let a: f64 = rng.random_range(0.0..18.0f64.to_radians());
            d = deflect(rng, d, a);
        }
        p += d * seg;
        ctrl.push(p);
    }
    let dense = catmull_rom(&ctrl, 24);
    let mut out = Vec::with_capacity(dense.len());
    for q in dense {
        if !bounds.contains(q) {
            break;
        }
        out.push(q);
    }
    out
}

fn tapered<T: Real>(id: usize, points: Vec<WorldPoint<T>>, r0: T, r1: T, step: T) -> Option<Trace<T>> {
    if points.len() < 2 {
        return None;
    }
    let raw = Trace::with_uniform_radius(id, points, r0);
    let mut t = raw.resample_at_most(step).ok()?;
    let total = t.length();
    let mut s = T::zero();
    for j in 0..t.len() {
        if j > 0 {
            s += t.points[j].dist(t.points[j - 1]);
        }
        let f = if total > T::zero() { s / total } else { T::zero() };
        t.radii[j] = r0 + (r1 - r0) * f;
    }
    Some(t)
}

fn clear_of<T: Real>(
    candidate: &Trace<T>,
    skip_prefix_mm: T,
    others: &[Trace<T>],
    parent: usize,
    clearance: T,
) -> bool {
    let mut s = T::zero();
    for (j, p) in candidate.points.iter().enumerate() {
        if j > 0 {
            s += p.dist(candidate.points[j - 1]);
        }
        let r = candidate.radii[j];
        for (ti, t) in others.iter().enumerate() {
            if ti == parent && s < skip_prefix_mm {
                continue;
            }
            for (q, rq) in t.points.iter().zip(&t.radii) {
                if p.dist_sq(*q) < (r + *rq + clearance).powi(2) {
                    return false;
                }
            }
        }
    }
    true
}

/// Builds a seeded random tree of smooth vessels fitting inside the volume.
pub fn generate_tree<T: Real>(spec: &PhantomSpec<T>) -> Result<GroundTruthTree<T>, PhantomError> {
    spec.validate()?;
    let grid = spec.grid()?;
    let (r_min, r_max) = spec.radius_range_mm;
    let margin = r_max + grid.max_spacing();
    let extent = grid.extent();
    let bounds = Bounds {
        lo: [margin; 3],
        hi: extent.map(|e| e - margin),
    };
    let main_axis = (0..3)
        .max_by(|&a, &b| bounds.size(a).partial_cmp(&bounds.size(b)).unwrap())
        .unwrap();
    let available = bounds.size(main_axis);
    if (0..3).any(|a| bounds.size(a) < T::zero()) || available < spec.min_branch_len_mm {
        return Err(PhantomError::VolumeTooSmall {
            available: available.to_f64_lossy(),
            needed: spec.min_branch_len_mm.to_f64_lossy(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let step = grid.min_spacing() * T::lit(0.5);
    let min_len = spec.min_branch_len_mm;
    let clearance = T::lit(CLEARANCE_MM);

    // Root vessel along the longest axis.
    let root = {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut start = [T::zero(); 3];
            for a in 0..3 {
                start[a] = if a == main_axis {
                    bounds.lo[a] + bounds.size(a) * uniform::<T>(&mut rng, 0.0, 0.08)
                } else {
                    bounds.lo[a] + bounds.size(a) * uniform::<T>(&mut rng, 0.3, 0.7)
                };
            }
            let tilt = rng.random_range(0.0..12.0f64.to_radians());
            let dir = deflect(&mut rng, Vec3::axis(main_axis), tilt);
            let length = available * uniform::<T>(&mut rng, 0.8, 0.95);
            let pts = grow_curve(&mut rng, Vec3::from_array(start), dir, length, &bounds);
            let r0 = r_max;
            let r1 = (r0 * uniform::<T>(&mut rng, TIP_TAPER.0, TIP_TAPER.1)).max(r_min);
            if let Some(t) = tapered(0, pts, r0, r1, step) {
                if t.length() >= min_len {
                    break t;
                }
            }
            if attempt >= MAX_PLACEMENT_ATTEMPTS {
                return Err(PhantomError::Placement {
                    branch: 0,
                    attempts: attempt,
                });
            }
        }
    };

    let mut traces = vec![root];
    let mut parents: Vec<Option<Attachment>> = vec![None];
    let max_child_len = (available * T::lit(0.55)).max(min_len * T::lit(1.5));

    for branch in 1..spec.n_terminal_branches {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let parent = rng.random_range(0..traces.len());
            let pt = &traces[parent];
            let n = pt.len();
            if n < 8 {
                continue;
            }
            let j = rng.random_range(n / 4..(3 * n) / 4);
            let Some(tangent) = (pt.points[j + 1] - pt.points[j - 1]).normalized() else {
                continue;
            };
            let angle = rng.random_range(BRANCH_ANGLE_DEG.0..BRANCH_ANGLE_DEG.1).to_radians();
            let dir = deflect(&mut rng, tangent, angle);
            let length = uniform::<T>(&mut rng, min_len.to_f64_lossy(), max_child_len.to_f64_lossy());
            let start = pt.points[j];
            let r_parent = pt.radii[j];
            let r0 = (r_parent * uniform::<T>(&mut rng, CHILD_TAPER.0, CHILD_TAPER.1)).max(r_min);
            let r1 = (r0 * uniform::<T>(&mut rng, TIP_TAPER.0, TIP_TAPER.1)).max(r_min);
            let pts = grow_curve(&mut rng, start, dir, length, &bounds);
            let Some(child) = tapered(branch, pts, r0, r1, step) else {
                continue;
            };
            if child.length() < min_len {
                continue;
            }
            // Near its root a child necessarily overlaps the parent lumen.
            let angle_sin = T::lit(angle.sin());
            let skip = (r_parent + r0 + clearance) / angle_sin;
            if !clear_of(&child, skip, &traces, parent, clearance) {
                continue;
            }
            traces.push(child);
            parents.push(Some(Attachment { parent, point: j }));
            placed = true;
            break;
        }
        if !placed {
            return Err(PhantomError::Placement {
                branch,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }
    Ok(GroundTruthTree { traces, parents })
}

/// Per-voxel signed distance to the nearest vessel wall (negative inside).
pub fn wall_distance<T: Real>(tree: &GroundTruthTree<T>, grid: &Grid<T>, reach: T) -> Vec<T> {
    let mut delta = vec![T::infinity(); grid.len()];
    for t in &tree.traces {
        for s in 0..t.len().saturating_sub(1) {
            let (a, b) = (t.points[s], t.points[s + 1]);
            let (ra, rb) = (t.radii[s], t.radii[s + 1]);
            let mid = a.lerp(b, T::lit(0.5));
            let half = a.dist(b) * T::lit(0.5);
            let Some(bx) = grid.index_box(mid, half + ra.max(rb) + reach) else {
                continue;
            };
            for k in bx[2].0..=bx[2].1 {
                for jj in bx[1].0..=bx[1].1 {
                    for i in bx[0].0..=bx[0].1 {
                        let p = grid.voxel_center(i, jj, k);
                        let u = crate::geom::segment_param(p, a, b);
                        let q = a.lerp(b, u);
                        let r = ra + (rb - ra) * u;
                        let d = p.dist(q) - r;
                        let idx = grid.linear(i, jj, k);
                        if d < delta[idx] {
                            delta[idx] = d;
                        }
                    }
                }
            }
        }
        if t.len() == 1 {
            let p0 = t.points[0];
            if let Some(bx) = grid.index_box(p0, t.radii[0] + reach) {
                for k in bx[2].0..=bx[2].1 {
                    for jj in bx[1].0..=bx[1].1 {
                        for i in bx[0].0..=bx[0].1 {
                            let idx = grid.linear(i, jj, k);
                            let d = grid.voxel_center(i, jj, k).dist(p0) - t.radii[0];
                            delta[idx] = delta[idx].min(d);
                        }
                    }
                }
            }
        }
    }
    delta
}

/// Renders the tree into a volume: vessel level inside the lumen, a
/// half-cosine ramp one voxel wide centred on the wall, background outside,
/// plus seeded Gaussian noise.
pub fn rasterize<T: Real>(tree: &GroundTruthTree<T>, spec: &PhantomSpec<T>) -> Result<Volume3<T>, PhantomError> {
    spec.validate()?;
    let grid = spec.grid()?;
    let width = grid.min_spacing();
    let half = width * T::lit(0.5);
    let delta = wall_distance(tree, &grid, width);
    let (fg, bg) = spec.levels();
    let pi = T::lit(PI);
    let mut voxels: Vec<T> = delta
        .iter()
        .map(|&d| {
            if d <= -half {
                fg
            } else if d >= half {
                bg
            } else {
                let w = (T::one() - (pi * (d + half) / width).cos()) * T::lit(0.5);
                fg + (bg - fg) * w
            }
        })
        .collect();
    if spec.noise_sigma > T::zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ NOISE_STREAM);
        let normal =
            Normal::new(0.0, spec.noise_sigma.to_f64_lossy()).map_err(|e| PhantomError::InvalidSpec(e.to_string()))?;
        for v in voxels.iter_mut() {
            *v += T::lit(normal.sample(&mut rng));
        }
    }
    Ok(Volume3::new(grid, voxels)?)
}
