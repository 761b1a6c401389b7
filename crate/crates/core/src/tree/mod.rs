//! Global tree assembly: score every plausible gap between traced snakes,
//! keep a maximum-score spanning forest and fill the kept gaps.

mod merge;
mod mst;

pub use merge::{merge, SegmentKind, TreeLink, VesselTree};
pub use mst::mst;

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::Vec3;
use crate::real::Real;
use crate::trace::{Trace, TraceError};
use crate::volume::Volume3;

pub const DEFAULT_SCORE_MIN: f64 = 0.05;
pub const DEFAULT_GAP_MAX_MM: f64 = 10.0;
/// Background samples per trace point.
pub const RING_SAMPLES: usize = 8;
/// Standard deviations are floored at this fraction of the volume's value range.
pub const STD_FLOOR_FRACTION: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("trace {0} is empty")]
    EmptyTrace(usize),
    #[error("duplicate trace id {0}")]
    DuplicateId(usize),
    #[error("edge references unknown trace {0}")]
    UnknownTrace(usize),
    #[error("edge {0}-{1} closes a cycle")]
    Cycle(usize, usize),
    #[error("edge endpoint index {index} out of range for trace {trace}")]
    BadEndpoint { trace: usize, index: usize },
    #[error("bad tree parameter: {0}")]
    Config(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Intensity statistics of a candidate connection between two traces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConnectionStats<T> {
    pub i_f: T,
    pub delta_f: T,
    pub i_b: T,
    pub delta_b: T,
    pub i_g: T,
    pub gap_mm: T,
    /// Closest point pair: index into the first trace, index into the second.
    pub endpoints: (usize, usize),
    /// Background ring samples that fell inside the volume.
    pub ring_samples: usize,
    pub score: T,
}

impl<T: Real> ConnectionStats<T> {
    fn swapped(mut self) -> Self {
        self.endpoints = (self.endpoints.1, self.endpoints.0);
        self
    }
}

/// Posterior-style ratio `N_f(x) / (N_f(x) + N_b(x))` of two normal
/// densities, evaluated in log space so far tails stay finite.
pub fn connection_score<T: Real>(x: T, i_f: T, delta_f: T, i_b: T, delta_b: T) -> T {
    let (x, mf, sf, mb, sb) = (
        x.to_f64_lossy(),
        i_f.to_f64_lossy(),
        delta_f.to_f64_lossy(),
        i_b.to_f64_lossy(),
        delta_b.to_f64_lossy(),
    );
    let log_f = -0.5 * ((x - mf) / sf).powi(2) - sf.ln();
    let log_b = -0.5 * ((x - mb) / sb).powi(2) - sb.ln();
    T::lit(1.0 / (1.0 + (log_b - log_f).exp()))
}

fn tangent<T: Real>(t: &Trace<T>, j: usize) -> Vec3<T> {
    let n = t.len();
    let a = t.points[j.saturating_sub(1)];
    let b = t.points[(j + 1).min(n - 1)];
    (b - a).normalized().unwrap_or(Vec3::axis(0))
}

fn mean_std<T: Real>(xs: &[T], floor: T) -> (T, T) {
    if xs.is_empty() {
        return (T::zero(), floor);
    }
    let n = T::from_usize_lossy(xs.len());
    let m = xs.iter().copied().sum::<T>() / n;
    let v = xs.iter().map(|x| (*x - m) * (*x - m)).sum::<T>() / n;
    (m, v.sqrt().max(floor))
}

fn std_floor<T: Real>(vol: &Volume3<T>) -> T {
    let (lo, hi) = vol.value_range();
    (T::lit(STD_FLOOR_FRACTION) * (hi - lo)).max(T::lit(1e-6))
}

fn closest_pair<T: Real>(a: &Trace<T>, b: &Trace<T>) -> (usize, usize, T) {
    let mut best = (0, 0, T::infinity());
    for (i, p) in a.points.iter().enumerate() {
        for (j, q) in b.points.iter().enumerate() {
            let d = p.dist_sq(*q);
            if d < best.2 {
                best = (i, j, d);
            }
        }
    }
    (best.0, best.1, best.2.sqrt())
}

/// Foreground, background and gap intensity statistics between two traces
/// and the resulting connection score. Symmetric in its arguments.
pub fn connection_stats<T: Real>(
    ti: &Trace<T>,
    tj: &Trace<T>,
    vol: &Volume3<T>,
) -> Result<ConnectionStats<T>, TreeError> {
    for t in [ti, tj] {
        if t.is_empty() {
            return Err(TreeError::EmptyTrace(t.id));
        }
    }
    if tj.id < ti.id {
        return connection_stats(tj, ti, vol).map(ConnectionStats::swapped);
    }
    let floor = std_floor(vol);
    let grid = vol.grid();

    let fg: Vec<T> = ti.points.iter().chain(&tj.points).map(|p| vol.interp(*p)).collect();
    let (i_f, delta_f) = mean_std(&fg, floor);

    let mut bg = Vec::new();
    for t in [ti, tj] {
        for j in 0..t.len() {
            let u = tangent(t, j);
            let e1 = u.any_perpendicular();
            let e2 = u.cross(e1);
            let r2 = t.radii[j] * T::lit(2.0);
            for k in 0..RING_SAMPLES {
                let th = T::lit(std::f64::consts::TAU * k as f64 / RING_SAMPLES as f64);
                let q = t.points[j] + (e1 * th.cos() + e2 * th.sin()) * r2;
                if grid.contains_with_margin(q, T::zero()) {
                    bg.push(vol.interp(q));
                }
            }
        }
    }
    let (i_b, delta_b) = mean_std(&bg, floor);

    let (ei, ej, gap) = closest_pair(ti, tj);
    let (pa, pb) = (ti.points[ei], tj.points[ej]);
    let step = grid.min_spacing() * T::lit(0.5);
    let n = (gap / step).ceil().to_usize().unwrap_or(0).max(1);
    let i_g = (0..=n)
        .map(|k| vol.interp(pa.lerp(pb, T::from_usize_lossy(k) / T::from_usize_lossy(n))))
        .sum::<T>()
        / T::from_usize_lossy(n + 1);

    Ok(ConnectionStats {
        i_f,
        delta_f,
        i_b,
        delta_b,
        i_g,
        gap_mm: gap,
        endpoints: (ei, ej),
        ring_samples: bg.len(),
        score: connection_score(i_g, i_f, delta_f, i_b, delta_b),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeConfig<T> {
    pub score_min: T,
    pub gap_max_mm: T,
    /// Pairs closer than this are touching; `None` means half the minimum
    /// voxel spacing.
    pub touch_mm: Option<T>,
    /// Point spacing of synthesized gap segments.
    pub gap_spacing_mm: T,
}

impl<T: Real> Default for TreeConfig<T> {
    fn default() -> Self {
        Self {
            score_min: T::lit(DEFAULT_SCORE_MIN),
            gap_max_mm: T::lit(DEFAULT_GAP_MAX_MM),
            touch_mm: None,
            gap_spacing_mm: T::one(),
        }
    }
}

impl<T: Real> TreeConfig<T> {
    pub fn validate(&self) -> Result<(), TreeError> {
        if !(self.score_min >= T::zero() && self.score_min <= T::one()) {
            return Err(TreeError::Config(format!(
                "score_min {} outside [0, 1]",
                self.score_min
            )));
        }
        if !(self.gap_max_mm >= T::zero() && self.gap_max_mm.is_finite()) {
            return Err(TreeError::Config(format!(
                "gap_max_mm {} must be finite and >= 0",
                self.gap_max_mm
            )));
        }
        if let Some(t) = self.touch_mm {
            if !(t >= T::zero() && t.is_finite()) {
                return Err(TreeError::Config(format!("touch_mm {t} must be finite and >= 0")));
            }
        }
        if !(self.gap_spacing_mm > T::zero() && self.gap_spacing_mm.is_finite()) {
            return Err(TreeError::Config(format!(
                "gap_spacing_mm {} must be positive",
                self.gap_spacing_mm
            )));
        }
        Ok(())
    }
}

/// Undirected graph over trace ids; one edge per unordered pair, keyed by
/// `(lower id, higher id)`, with stats oriented the same way.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SnakeGraph<T> {
    pub vertices: Vec<usize>,
    pub edges: BTreeMap<(usize, usize), ConnectionStats<T>>,
}

impl<T: Real> SnakeGraph<T> {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

fn aabb<T: Real>(t: &Trace<T>) -> ([T; 3], [T; 3]) {
    let mut lo = [T::infinity(); 3];
    let mut hi = [T::neg_infinity(); 3];
    for p in &t.points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

fn box_gap<T: Real>(a: &([T; 3], [T; 3]), b: &([T; 3], [T; 3])) -> T {
    (0..3)
        .map(|k| {
            let d = (a.0[k] - b.1[k]).max(b.0[k] - a.1[k]).max(T::zero());
            d * d
        })
        .sum::<T>()
        .sqrt()
}

/// Scores all trace pairs within `gap_max_mm` of each other. Pairs in
/// `touching` (trace-id pairs, e.g. from collision termination) or closer
/// than the touch distance become score-1 edges; other pairs are kept when
/// their score reaches `score_min` and all background samples were inside
/// the volume.
pub fn build_graph<T: Real>(
    traces: &[Trace<T>],
    vol: &Volume3<T>,
    touching: &[(usize, usize)],
    cfg: &TreeConfig<T>,
) -> Result<SnakeGraph<T>, TreeError> {
    cfg.validate()?;
    let mut ids: Vec<usize> = traces.iter().map(|t| t.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(TreeError::DuplicateId(w[0]));
    }
    if let Some(t) = traces.iter().find(|t| t.is_empty()) {
        return Err(TreeError::EmptyTrace(t.id));
    }
    let touch = cfg.touch_mm.unwrap_or(vol.grid().min_spacing() * T::lit(0.5));
    let touching: Vec<(usize, usize)> = touching.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();

    let mut order: Vec<usize> = (0..traces.len()).collect();
    order.sort_by_key(|&i| traces[i].id);
    let boxes: Vec<_> = order.iter().map(|&i| aabb(&traces[i])).collect();
    let pairs: Vec<(usize, usize)> = (0..order.len())
        .flat_map(|a| ((a + 1)..order.len()).map(move |b| (a, b)))
        .filter(|&(a, b)| box_gap(&boxes[a], &boxes[b]) <= cfg.gap_max_mm)
        .collect();

    let scored: Vec<Option<((usize, usize), ConnectionStats<T>)>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ta, tb) = (&traces[order[a]], &traces[order[b]]);
            let mut s = connection_stats(ta, tb, vol)?;
            if s.gap_mm > cfg.gap_max_mm {
                return Ok(None);
            }
            let key = (ta.id, tb.id);
            if touching.contains(&key) || s.gap_mm <= touch {
                s.score = T::one();
                return Ok(Some((key, s)));
            }
            let keep = s.ring_samples >= RING_SAMPLES && s.score >= cfg.score_min;
            Ok(keep.then_some((key, s)))
        })
        .collect::<Result<_, TreeError>>()?;

    Ok(SnakeGraph {
        vertices: ids,
        edges: scored.into_iter().flatten().collect(),
    })
}

/// Graph, spanning forest and merged tree in one call.
pub fn assemble<T: Real>(
    traces: &[Trace<T>],
    vol: &Volume3<T>,
    touching: &[(usize, usize)],
    cfg: &TreeConfig<T>,
) -> Result<VesselTree<T>, TreeError> {
    let graph = build_graph(traces, vol, touching, cfg)?;
    let kept = mst(&graph);
    merge(traces, &kept, cfg.gap_spacing_mm)
}
