//! Curve proposals: centreline distance maps, their masked L2 loss,
//! binarisation, 3D thinning and decomposition of the skeleton into curves.

mod curves;
mod skeleton;

pub use curves::{extract_curves, InitialCurve, DEFAULT_MIN_CURVE_VOXELS};
pub use skeleton::{is_simple_point, skeletonize, VoxelSet};

use thiserror::Error;

use crate::geom::cumulative_length;
use crate::real::Real;
use crate::trace::Trace;
use crate::volume::{Grid, Volume3, VolumeError};

/// Default binarisation threshold on a distance map.
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ProposalError {
    #[error("non-positive radius {radius} at trace {trace}, point {point}")]
    NonPositiveRadius { trace: usize, point: usize, radius: f64 },
    #[error("threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("distance map value {value} at voxel {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("geometry mismatch between maps")]
    GeometryMismatch,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Centreline distance map: 1 on centrelines, falling linearly to 0 at the wall.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMap<T> {
    grid: Grid<T>,
    values: Vec<T>,
}

impl<T: Real> DistanceMap<T> {
    pub fn new(grid: Grid<T>, values: Vec<T>) -> Result<Self, ProposalError> {
        if values.len() != grid.len() {
            return Err(ProposalError::GeometryMismatch);
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= T::zero() && **v <= T::one()))
        {
            return Err(ProposalError::OutOfRange {
                index: i,
                value: v.to_f64_lossy(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Interprets a volume (e.g. an externally predicted map) as a distance
    /// map, clamping values into [0, 1].
    pub fn from_volume_clamped(vol: &Volume3<T>) -> Self {
        Self {
            grid: *vol.grid(),
            values: vol.voxels().iter().map(|v| v.max(T::zero()).min(T::one())).collect(),
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn to_volume(&self) -> Volume3<T> {
        Volume3::new(self.grid, self.values.clone()).expect("distance map values are finite")
    }
}

/// Boolean voxel mask on a lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask<T> {
    grid: Grid<T>,
    values: Vec<bool>,
}

impl<T: Real> BinaryMask<T> {
    pub fn new(grid: Grid<T>, values: Vec<bool>) -> Result<Self, ProposalError> {
        if values.len() != grid.len() {
            return Err(ProposalError::GeometryMismatch);
        }
        Ok(Self { grid, values })
    }

    pub fn empty(grid: Grid<T>) -> Self {
        Self {
            values: vec![false; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.values[self.grid.linear(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.grid.linear(i, j, k);
        self.values[idx] = v;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    /// Foreground voxels as index triples.
    pub fn voxels(&self) -> VoxelSet {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| self.grid.unravel(i))
            .collect()
    }

    pub fn from_voxels(grid: Grid<T>, voxels: &VoxelSet) -> Self {
        let mut m = Self::empty(grid);
        for v in voxels {
            m.set(v[0], v[1], v[2], true);
        }
        m
    }
}

/// Evaluates the centreline distance transform at every voxel centre:
/// `max_{i,j} max(0, r_ij - |p_ij - p|) / r_ij`.
pub fn distance_map<T: Real>(traces: &[Trace<T>], grid: &Grid<T>) -> Result<DistanceMap<T>, ProposalError> {
    for t in traces {
        for (j, r) in t.radii.iter().enumerate() {
            if !(*r > T::zero()) {
                return Err(ProposalError::NonPositiveRadius {
                    trace: t.id,
                    point: j,
                    radius: r.to_f64_lossy(),
                });
            }
        }
    }
    let mut values = vec![T::zero(); grid.len()];
    for t in traces {
        for (c, &r) in t.points.iter().zip(&t.radii) {
            let Some(bx) = grid.index_box(*c, r) else {
                continue;
            };
            for k in bx[2].0..=bx[2].1 {
                for j in bx[1].0..=bx[1].1 {
                    for i in bx[0].0..=bx[0].1 {
                        let d = grid.voxel_center(i, j, k).dist(*c);
                        let v = (r - d).max(T::zero()) / r;
                        let idx = grid.linear(i, j, k);
                        if v > values[idx] {
                            values[idx] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(DistanceMap { grid: *grid, values })
}

/// Erases the map around each trace over `length_mm` of arc length centred
/// at each of the given arc-length fractions, out to one voxel beyond the
/// lumen, simulating segmentation dropouts.
pub fn inject_cuts<T: Real>(map: &mut DistanceMap<T>, traces: &[Trace<T>], fractions: &[T], length_mm: T) {
    let grid = map.grid;
    let margin = grid.max_spacing();
    for t in traces {
        let cum = cumulative_length(&t.points);
        let total = cum.last().copied().unwrap_or(T::zero());
        for f in fractions {
            let mid = total * *f;
            let half = length_mm * T::lit(0.5);
            for (j, s) in cum.iter().enumerate() {
                if (*s - mid).abs() > half {
                    continue;
                }
                let reach = t.radii[j] + margin;
                let Some(bx) = grid.index_box(t.points[j], reach) else {
                    continue;
                };
                for k in bx[2].0..=bx[2].1 {
                    for jj in bx[1].0..=bx[1].1 {
                        for i in bx[0].0..=bx[0].1 {
                            if grid.voxel_center(i, jj, k).dist(t.points[j]) <= reach {
                                map.values[grid.linear(i, jj, k)] = T::zero();
                            }
                        }
                    }
                }
            }
        }
    }
}

/// L2 norm of `pred - gt` restricted to voxels where `gt` is non-zero.
pub fn seg_loss<T: Real>(pred: &DistanceMap<T>, gt: &DistanceMap<T>) -> Result<T, ProposalError> {
    if pred.grid != gt.grid {
        return Err(ProposalError::GeometryMismatch);
    }
    let sq: T = pred
        .values
        .iter()
        .zip(&gt.values)
        .filter(|(_, g)| **g != T::zero())
        .map(|(p, g)| (*p - *g) * (*p - *g))
        .sum();
    Ok(sq.sqrt())
}

/// Voxels with value `>= tau`.
pub fn binarize<T: Real>(map: &DistanceMap<T>, tau: T) -> Result<BinaryMask<T>, ProposalError> {
    if !(tau > T::zero() && tau < T::one()) {
        return Err(ProposalError::BadThreshold(tau.to_f64_lossy()));
    }
    Ok(BinaryMask {
        grid: map.grid,
        values: map.values.iter().map(|v| *v >= tau).collect(),
    })
}

/// The proposal chain from a distance map: threshold, thin, split into curves.
pub fn propose<T: Real>(
    map: &DistanceMap<T>,
    tau: T,
    min_curve_voxels: usize,
) -> Result<Vec<InitialCurve<T>>, ProposalError> {
    let mask = binarize(map, tau)?;
    let skel = skeletonize(&mask);
    Ok(extract_curves(&skel, mask.grid(), min_curve_voxels))
}
