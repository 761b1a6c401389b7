//! The trace: an ordered centreline polyline with a lumen radius per point.
//!
//! Curve proposals, evolving snakes, ground truth and tree branches all share
//! this representation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{cumulative_length, polyline_length, WorldPoint};
use crate::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("points and radii differ in length ({points} vs {radii})")]
    LengthMismatch { points: usize, radii: usize },
    #[error("trace needs at least {need} points, has {have}")]
    TooShort { need: usize, have: usize },
    #[error("trace has zero arc length")]
    ZeroLength,
    #[error("resample spacing must be positive, got {0}")]
    BadSpacing(f64),
    #[error("non-positive radius {radius} at point {index}")]
    NonPositiveRadius { index: usize, radius: f64 },
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
}

/// Growth state of one end of a snake.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceStatus {
    Growing,
    TerminatedLowConfidence,
    TerminatedCollision,
    TerminatedMaxIters,
}

impl TraceStatus {
    pub fn is_growing(self) -> bool {
        self == TraceStatus::Growing
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraceStatus::Growing => "growing",
            TraceStatus::TerminatedLowConfidence => "terminated-low-confidence",
            TraceStatus::TerminatedCollision => "terminated-collision",
            TraceStatus::TerminatedMaxIters => "terminated-max-iters",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "growing" => TraceStatus::Growing,
            "terminated-low-confidence" => TraceStatus::TerminatedLowConfidence,
            "terminated-collision" => TraceStatus::TerminatedCollision,
            "terminated-max-iters" => TraceStatus::TerminatedMaxIters,
            _ => return None,
        })
    }
}

/// Ordered centreline points with per-point radii (mm).
#[derive(Clone, Debug, PartialEq)]
pub struct Trace<T> {
    pub id: usize,
    pub points: Vec<WorldPoint<T>>,
    pub radii: Vec<T>,
    /// Status of the start (`[0]`) and end (`[1]`) of the trace.
    pub ends: [TraceStatus; 2],
}

impl<T: Real> Trace<T> {
    pub fn new(id: usize, points: Vec<WorldPoint<T>>, radii: Vec<T>) -> Result<Self, TraceError> {
        if points.len() != radii.len() {
            return Err(TraceError::LengthMismatch {
                points: points.len(),
                radii: radii.len(),
            });
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(TraceError::NonFinite(i));
        }
        Ok(Self {
            id,
            points,
            radii,
            ends: [TraceStatus::Growing; 2],
        })
    }

    /// A trace whose every point carries the same radius.
    pub fn with_uniform_radius(id: usize, points: Vec<WorldPoint<T>>, radius: T) -> Self {
        let radii = vec![radius; points.len()];
        Self {
            id,
            points,
            radii,
            ends: [TraceStatus::Growing; 2],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn length(&self) -> T {
        polyline_length(&self.points)
    }

    /// Summary status: growing while either end grows; otherwise the most
    /// specific termination reason (max-iters, then collision, then confidence).
    pub fn status(&self) -> TraceStatus {
        use TraceStatus::*;
        if self.ends.iter().any(|s| s.is_growing()) {
            Growing
        } else if self.ends.contains(&TerminatedMaxIters) {
            TerminatedMaxIters
        } else if self.ends.contains(&TerminatedCollision) {
            TerminatedCollision
        } else {
            TerminatedLowConfidence
        }
    }

    pub fn check_radii(&self) -> Result<(), TraceError> {
        for (i, r) in self.radii.iter().enumerate() {
            if !(*r > T::zero()) {
                return Err(TraceError::NonPositiveRadius {
                    index: i,
                    radius: r.to_f64_lossy(),
                });
            }
        }
        Ok(())
    }

    pub fn reversed(&self) -> Self {
        let mut t = self.clone();
        t.points.reverse();
        t.radii.reverse();
        t.ends.swap(0, 1);
        t
    }

    /// Re-places points at uniform arc length close to `spacing`, keeping both
    /// endpoints exactly; radii are interpolated linearly in arc length.
    pub fn resample(&self, spacing: T) -> Result<Self, TraceError> {
        self.resample_impl(spacing, false)
    }

    /// Like [`resample`](Self::resample) but never spaces points further apart
    /// than `spacing`.
    pub fn resample_at_most(&self, spacing: T) -> Result<Self, TraceError> {
        self.resample_impl(spacing, true)
    }

    fn resample_impl(&self, spacing: T, ceil: bool) -> Result<Self, TraceError> {
        if !(spacing > T::zero() && spacing.is_finite()) {
            return Err(TraceError::BadSpacing(spacing.to_f64_lossy()));
        }
        if self.points.len() < 2 {
            return Err(TraceError::TooShort {
                need: 2,
                have: self.points.len(),
            });
        }
        let cum = cumulative_length(&self.points);
        let total = *cum.last().unwrap();
        if !(total > T::zero()) {
            return Err(TraceError::ZeroLength);
        }
        let ratio = total / spacing;
        let n_seg = if ceil { ratio.ceil() } else { ratio.round() };
        let n_seg = n_seg.to_usize().unwrap_or(1).max(1);
        let step = total / T::from_usize_lossy(n_seg);
        let mut points = Vec::with_capacity(n_seg + 1);
        let mut radii = Vec::with_capacity(n_seg + 1);
        let mut seg = 0usize;
        for i in 0..=n_seg {
            if i == n_seg {
                points.push(*self.points.last().unwrap());
                radii.push(*self.radii.last().unwrap());
                break;
            }
            let s = step * T::from_usize_lossy(i);
            while seg + 2 < cum.len() && cum[seg + 1] < s {
                seg += 1;
            }
            let l = cum[seg + 1] - cum[seg];
            let t = if l > T::zero() {
                ((s - cum[seg]) / l).max(T::zero()).min(T::one())
            } else {
                T::zero()
            };
            points.push(self.points[seg].lerp(self.points[seg + 1], t));
            radii.push(self.radii[seg] + (self.radii[seg + 1] - self.radii[seg]) * t);
        }
        Ok(Self {
            id: self.id,
            points,
            radii,
            ends: self.ends,
        })
    }

    pub fn cast<U: Real>(&self) -> Trace<U> {
        Trace {
            id: self.id,
            points: self.points.iter().map(|p| p.cast()).collect(),
            radii: self.radii.iter().map(|r| U::lit(r.to_f64_lossy())).collect(),
            ends: self.ends,
        }
    }
}
