//! 3D scalar volumes addressed in world millimetres.
//!
//! Voxel `(i, j, k)` has its centre at `origin + (i, j, k) * spacing`. Samples
//! are stored x-fastest. Every read outside the lattice sees the value 0, so
//! interpolation near the border fades towards zero instead of clamping.

use thiserror::Error;

use crate::geom::{Vec3, WorldPoint};
use crate::real::Real;

/// Default cubic patch side length fed to direction/radius predictors.
pub const DEFAULT_PATCH_SIDE: usize = 19;

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("voxel spacing must be positive and finite, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("dimensions must be non-zero, got {0:?}")]
    BadDims([usize; 3]),
    #[error("expected {expected} voxels for the given dims, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite voxel value at linear index {0}")]
    NonFinite(usize),
    #[error("gradient at margin: point {0:?} is not one voxel inside the volume")]
    GradientAtMargin([f64; 3]),
    #[error("patch side must be odd, got {0}")]
    EvenPatchSide(usize),
    #[error("patch sampling step must be positive, got {0}")]
    BadPatchStep(f64),
    #[error("geometry mismatch between volumes")]
    GeometryMismatch,
}

/// Whether vessels appear brighter or darker than the background.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Polarity {
    #[default]
    Bright,
    Dark,
}

impl Polarity {
    /// +1 for bright vessels, -1 for dark ones.
    pub fn sign<T: Real>(self) -> T {
        match self {
            Polarity::Bright => T::one(),
            Polarity::Dark => -T::one(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Bright => "bright",
            Polarity::Dark => "dark",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bright" | "bright-vessel" => Some(Polarity::Bright),
            "dark" | "dark-vessel" | "black" => Some(Polarity::Dark),
            _ => None,
        }
    }
}

/// Lattice geometry shared by volumes, distance maps and masks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T> {
    pub dims: [usize; 3],
    pub spacing: [T; 3],
    pub origin: [T; 3],
}

impl<T: Real> Grid<T> {
    pub fn new(dims: [usize; 3], spacing: [T; 3], origin: [T; 3]) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::BadDims(dims));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > T::zero())) {
            return Err(VolumeError::BadSpacing(spacing.map(|s| s.to_f64_lossy())));
        }
        Ok(Self { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_spacing(&self) -> T {
        self.spacing[0].min(self.spacing[1]).min(self.spacing[2])
    }

    pub fn max_spacing(&self) -> T {
        self.spacing[0].max(self.spacing[1]).max(self.spacing[2])
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    #[inline]
    pub fn contains_index(&self, i: i64, j: i64, k: i64) -> bool {
        i >= 0
            && j >= 0
            && k >= 0
            && (i as usize) < self.dims[0]
            && (j as usize) < self.dims[1]
            && (k as usize) < self.dims[2]
    }

    /// World position of a voxel centre.
    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> WorldPoint<T> {
        Vec3::new(
            self.origin[0] + T::from_usize_lossy(i) * self.spacing[0],
            self.origin[1] + T::from_usize_lossy(j) * self.spacing[1],
            self.origin[2] + T::from_usize_lossy(k) * self.spacing[2],
        )
    }

    /// Continuous (fractional) voxel coordinates of a world point.
    #[inline]
    pub fn continuous_index(&self, p: WorldPoint<T>) -> [T; 3] {
        [
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Nearest voxel to a world point, if it lies on the lattice.
    pub fn nearest_voxel(&self, p: WorldPoint<T>) -> Option<[usize; 3]> {
        let u = self.continuous_index(p);
        let r: Vec<i64> = u.iter().map(|c| c.round().to_i64().unwrap_or(-1)).collect();
        if self.contains_index(r[0], r[1], r[2]) {
            Some([r[0] as usize, r[1] as usize, r[2] as usize])
        } else {
            None
        }
    }

    /// Inclusive voxel index range whose centres may lie within `radius` of `p`,
    /// clipped to the lattice. `None` when the ball misses the lattice.
    pub fn index_box(&self, p: WorldPoint<T>, radius: T) -> Option<[(usize, usize); 3]> {
        let u = self.continuous_index(p);
        let mut out = [(0usize, 0usize); 3];
        for a in 0..3 {
            let r = radius / self.spacing[a];
            let lo = (u[a] - r).ceil().to_i64().unwrap_or(i64::MAX).max(0);
            let hi = (u[a] + r)
                .floor()
                .to_i64()
                .unwrap_or(i64::MIN)
                .min(self.dims[a] as i64 - 1);
            if lo > hi {
                return None;
            }
            out[a] = (lo as usize, hi as usize);
        }
        Some(out)
    }

    /// World-space extent of the lattice (centre of first to centre of last voxel).
    pub fn extent(&self) -> [T; 3] {
        [0, 1, 2].map(|a| T::from_usize_lossy(self.dims[a] - 1) * self.spacing[a])
    }

    /// Whether `p` lies at least `margin` millimetres inside the lattice bounds.
    pub fn contains_with_margin(&self, p: WorldPoint<T>, margin: T) -> bool {
        let e = self.extent();
        (0..3).all(|a| {
            let c = p[a] - self.origin[a];
            c >= margin && c <= e[a] - margin
        })
    }

    pub fn cast<U: Real>(&self) -> Grid<U> {
        Grid {
            dims: self.dims,
            spacing: self.spacing.map(|s| U::lit(s.to_f64_lossy())),
            origin: self.origin.map(|s| U::lit(s.to_f64_lossy())),
        }
    }
}

/// Immutable scalar volume with anisotropic spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3<T> {
    grid: Grid<T>,
    voxels: Vec<T>,
}

impl<T: Real> Volume3<T> {
    pub fn new(grid: Grid<T>, voxels: Vec<T>) -> Result<Self, VolumeError> {
        if voxels.len() != grid.len() {
            return Err(VolumeError::LengthMismatch {
                expected: grid.len(),
                actual: voxels.len(),
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self { grid, voxels })
    }

    pub fn filled(grid: Grid<T>, value: T) -> Self {
        Self {
            voxels: vec![value; grid.len()],
            grid,
        }
    }

    /// Builds a volume by evaluating `f` at every voxel centre.
    pub fn from_fn(grid: Grid<T>, mut f: impl FnMut(WorldPoint<T>) -> T) -> Result<Self, VolumeError> {
        let mut voxels = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    voxels.push(f(grid.voxel_center(i, j, k)));
                }
            }
        }
        Self::new(grid, voxels)
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn voxels(&self) -> &[T] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<T> {
        self.voxels
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> T {
        self.voxels[self.grid.linear(i, j, k)]
    }

    #[inline]
    fn at_signed(&self, i: i64, j: i64, k: i64) -> T {
        if self.grid.contains_index(i, j, k) {
            self.at(i as usize, j as usize, k as usize)
        } else {
            T::zero()
        }
    }

    /// (min, max) over all voxels.
    pub fn value_range(&self) -> (T, T) {
        self.voxels
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Trilinear interpolation at a world point; lattice points outside the
    /// volume contribute 0.
    pub fn interp(&self, p: WorldPoint<T>) -> T {
        let u = self.grid.continuous_index(p);
        let d = self.grid.dims;
        for a in 0..3 {
            if !(u[a] > -T::one() && u[a] < T::from_usize_lossy(d[a])) {
                return T::zero();
            }
        }
        let f = u.map(|c| c.floor());
        let i0 = f.map(|c| c.to_i64().unwrap_or(0));
        let w = [u[0] - f[0], u[1] - f[1], u[2] - f[2]];
        let mut acc = T::zero();
        for dz in 0..2i64 {
            let wz = if dz == 0 { T::one() - w[2] } else { w[2] };
            if wz == T::zero() {
                continue;
            }
            for dy in 0..2i64 {
                let wy = if dy == 0 { T::one() - w[1] } else { w[1] };
                if wy == T::zero() {
                    continue;
                }
                for dx in 0..2i64 {
                    let wx = if dx == 0 { T::one() - w[0] } else { w[0] };
                    if wx == T::zero() {
                        continue;
                    }
                    acc += wx * wy * wz * self.at_signed(i0[0] + dx, i0[1] + dy, i0[2] + dz);
                }
            }
        }
        acc
    }

    /// Intensity gradient (per mm) by central differences of [`interp`](Self::interp)
    /// with a step of half the spacing along each axis.
    pub fn gradient(&self, p: WorldPoint<T>) -> Result<Vec3<T>, VolumeError> {
        let u = self.grid.continuous_index(p);
        let one = T::one();
        for a in 0..3 {
            let hi = T::from_usize_lossy(self.grid.dims[a]) - T::lit(2.0);
            if !(u[a] >= one && u[a] <= hi) {
                return Err(VolumeError::GradientAtMargin(p.to_array().map(|c| c.to_f64_lossy())));
            }
        }
        let half = T::lit(0.5);
        let mut g = [T::zero(); 3];
        for (a, ga) in g.iter_mut().enumerate() {
            let h = self.grid.spacing[a] * half;
            let e = Vec3::axis(a) * h;
            *ga = (self.interp(p + e) - self.interp(p - e)) / (h + h);
        }
        Ok(Vec3::from_array(g))
    }

    /// Samples a `side`³ cube centred on `center` with lattice step `step_mm`.
    pub fn extract_patch(&self, center: WorldPoint<T>, side: usize, step_mm: T) -> Result<Patch<T>, VolumeError> {
        if side.is_multiple_of(2) {
            return Err(VolumeError::EvenPatchSide(side));
        }
        if !(step_mm > T::zero() && step_mm.is_finite()) {
            return Err(VolumeError::BadPatchStep(step_mm.to_f64_lossy()));
        }
        let half = (side / 2) as i64;
        let mut values = Vec::with_capacity(side * side * side);
        for c in -half..=half {
            for b in -half..=half {
                for a in -half..=half {
                    let off = Vec3::new(T::lit(a as f64), T::lit(b as f64), T::lit(c as f64)) * step_mm;
                    values.push(self.interp(center + off));
                }
            }
        }
        Ok(Patch {
            side,
            values,
            center,
            step_mm,
        })
    }

    pub fn cast<U: Real>(&self) -> Volume3<U> {
        Volume3 {
            grid: self.grid.cast(),
            voxels: self.voxels.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Cubic intensity patch around a world point, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T> {
    pub side: usize,
    pub values: Vec<T>,
    pub center: WorldPoint<T>,
    pub step_mm: T,
}

impl<T: Real> Patch<T> {
    pub fn at(&self, a: usize, b: usize, c: usize) -> T {
        self.values[a + self.side * (b + self.side * c)]
    }

    /// Trilinear lookup at a world point (clamped to zero outside the cube).
    pub fn sample(&self, p: WorldPoint<T>) -> T {
        let half = T::from_usize_lossy(self.side / 2);
        let u = [
            (p.x - self.center.x) / self.step_mm + half,
            (p.y - self.center.y) / self.step_mm + half,
            (p.z - self.center.z) / self.step_mm + half,
        ];
        let n = self.side as i64;
        let f = u.map(|c| c.floor());
        let i0 = f.map(|c| c.to_i64().unwrap_or(-10));
        let w = [u[0] - f[0], u[1] - f[1], u[2] - f[2]];
        let mut acc = T::zero();
        for dz in 0..2i64 {
            for dy in 0..2i64 {
                for dx in 0..2i64 {
                    let (i, j, k) = (i0[0] + dx, i0[1] + dy, i0[2] + dz);
                    if i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n {
                        continue;
                    }
                    let wx = if dx == 0 { T::one() - w[0] } else { w[0] };
                    let wy = if dy == 0 { T::one() - w[1] } else { w[1] };
                    let wz = if dz == 0 { T::one() - w[2] } else { w[2] };
                    acc += wx * wy * wz * self.at(i as usize, j as usize, k as usize);
                }
            }
        }
        acc
    }

    /// Mean over the outermost shell of the cube.
    pub fn border_mean(&self) -> T {
        let n = self.side;
        let mut sum = T::zero();
        let mut count = 0usize;
        for c in 0..n {
            for b in 0..n {
                for a in 0..n {
                    if a == 0 || b == 0 || c == 0 || a == n - 1 || b == n - 1 || c == n - 1 {
                        sum += self.at(a, b, c);
                        count += 1;
                    }
                }
            }
        }
        sum / T::from_usize_lossy(count)
    }

    /// Standard deviation over the outermost shell of the cube.
    pub fn border_std(&self) -> T {
        let n = self.side;
        let mean = self.border_mean();
        let mut sum = T::zero();
        let mut count = 0usize;
        for c in 0..n {
            for b in 0..n {
                for a in 0..n {
                    if a == 0 || b == 0 || c == 0 || a == n - 1 || b == n - 1 || c == n - 1 {
                        let d = self.at(a, b, c) - mean;
                        sum += d * d;
                        count += 1;
                    }
                }
            }
        }
        (sum / T::from_usize_lossy(count)).sqrt()
    }

    pub fn center_value(&self) -> T {
        let h = self.side / 2;
        self.at(h, h, h)
    }
}
