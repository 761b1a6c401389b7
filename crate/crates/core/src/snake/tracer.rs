use rayon::prelude::*;

use super::{
    external_energy_points, internal_energy_points, normalized_entropy, stretch_force, Collision, Registry, SnakeError,
    TracerConfig,
};
use crate::geom::{cumulative_length, Vec3};
use crate::predictor::{DirectionSet, EndpointQuery, Predictor};
use crate::proposal::InitialCurve;
use crate::real::Real;
use crate::trace::{Trace, TraceStatus};
use crate::volume::Volume3;

/// Step halvings tried before a relaxation step is abandoned.
const MAX_HALVINGS: usize = 12;

/// How snakes were scheduled; recorded with the results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OrderMode {
    #[default]
    Sequential,
    Parallel,
}

impl OrderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderMode::Sequential => "sequential",
            OrderMode::Parallel => "parallel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sequential" => Some(OrderMode::Sequential),
            "parallel" => Some(OrderMode::Parallel),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SnakeOutcome<T> {
    Accepted {
        trace: Trace<T>,
        collisions: Vec<Collision>,
    },
    /// Fewer than `min_trace_points` points survived.
    Rejected { id: usize, points: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TracingOutput<T> {
    /// Accepted traces in processing order.
    pub traces: Vec<Trace<T>>,
    pub collisions: Vec<Collision>,
    /// Ids of rejected initial curves.
    pub rejected: Vec<usize>,
    pub mode: OrderMode,
}

fn total_energy<T: Real>(p: &[Vec3<T>], vol: &Volume3<T>, cfg: &TracerConfig<T>) -> T {
    internal_energy_points(p, cfg).unwrap_or(T::zero()) + external_energy_points(p, vol, cfg)
}

fn energy_gradient<T: Real>(p: &[Vec3<T>], vol: &Volume3<T>, cfg: &TracerConfig<T>) -> Vec<Vec3<T>> {
    let n = p.len();
    let mut g = vec![Vec3::zero(); n];
    let h = crate::geom::polyline_length(p) / T::from_usize_lossy(n - 1);
    if h > T::zero() {
        let two = T::lit(2.0);
        let a = cfg.alpha / h;
        let b = cfg.beta * two / (h * h * h * h);
        for j in 1..n - 1 {
            let cs = (p[j + 1] - p[j - 1]) / (two * h);
            let css = p[j - 1] - p[j] * two + p[j + 1];
            g[j + 1] += cs * a;
            g[j - 1] -= cs * a;
            g[j - 1] += css * b;
            g[j + 1] += css * b;
            g[j] -= css * (b * two);
        }
    }
    let w = -cfg.intensity_weight * cfg.polarity.sign::<T>();
    for (gj, pj) in g.iter_mut().zip(p).take(n - 1).skip(1) {
        if let Ok(d) = vol.gradient(*pj) {
            *gj += d * w;
        }
    }
    g[0] = Vec3::zero();
    g[n - 1] = Vec3::zero();
    g
}

/// One normalised gradient-descent step on the interior points (endpoints
/// fixed). The largest displacement is `descent_step`, halved until the
/// energy does not increase; if no step qualifies the points are left as is.
/// Returns whether the points moved.
pub fn relax<T: Real>(points: &mut [Vec3<T>], vol: &Volume3<T>, cfg: &TracerConfig<T>) -> bool {
    if points.len() < 3 {
        return false;
    }
    let g = energy_gradient(points, vol, cfg);
    let gmax = g.iter().map(|v| v.norm()).fold(T::zero(), T::max);
    if !(gmax > T::zero() && gmax.is_finite()) {
        return false;
    }
    let e0 = total_energy(points, vol, cfg);
    let mut step = cfg.descent_step;
    let mut trial = points.to_vec();
    for _ in 0..MAX_HALVINGS {
        let s = step / gmax;
        for (t, (p, d)) in trial.iter_mut().zip(points.iter().zip(&g)) {
            *t = *p - *d * s;
        }
        if total_energy(&trial, vol, cfg) <= e0 {
            points.copy_from_slice(&trial);
            return true;
        }
        step *= T::lit(0.5);
    }
    false
}

fn query<'a, T: Real>(p: Vec3<T>, vol: &'a Volume3<T>, cfg: &TracerConfig<T>) -> EndpointQuery<'a, T> {
    EndpointQuery {
        endpoint: p,
        volume: vol,
        patch_side: cfg.patch_side,
        patch_step_mm: vol.grid().min_spacing(),
    }
}

/// Grows each still-growing end by one predictor step, relaxes the interior
/// and resamples.
pub fn evolve_step<T: Real, P: Predictor<T> + ?Sized>(
    trace: &Trace<T>,
    vol: &Volume3<T>,
    predictor: &mut P,
    dirs: &DirectionSet<T>,
    cfg: &TracerConfig<T>,
    registry: &Registry<T>,
) -> Result<(Trace<T>, Vec<Collision>), SnakeError> {
    let mut t = trace.clone();
    let mut collisions = Vec::new();
    for end in 0..2 {
        if !t.ends[end].is_growing() {
            continue;
        }
        let n = t.len();
        let (e, prev) = if end == 0 {
            (t.points[0], t.points[1])
        } else {
            (t.points[n - 1], t.points[n - 2])
        };
        let Some(outward) = (e - prev).normalized() else {
            t.ends[end] = TraceStatus::TerminatedLowConfidence;
            continue;
        };
        let pred = predictor.predict(&query(e, vol, cfg), dirs)?;
        pred.validate(dirs.len())?;
        if normalized_entropy(&pred.magnitudes)? > cfg.entropy_threshold {
            t.ends[end] = TraceStatus::TerminatedLowConfidence;
            continue;
        }
        let Some(u) = stretch_force(&pred, outward, dirs).normalized() else {
            t.ends[end] = TraceStatus::TerminatedLowConfidence;
            continue;
        };
        let r = pred.radius_mm;
        let q = e + u * (cfg.gamma_factor * r);
        if !vol.grid().contains_with_margin(q, T::zero()) {
            t.ends[end] = TraceStatus::TerminatedLowConfidence;
            continue;
        }
        if end == 0 {
            t.points.insert(0, q);
            t.radii.insert(0, r);
        } else {
            t.points.push(q);
            t.radii.push(r);
        }
        if let Some((other, other_point)) = registry.collision(q, r) {
            t.ends[end] = TraceStatus::TerminatedCollision;
            collisions.push(Collision {
                trace: t.id,
                end,
                other,
                other_point,
            });
        }
    }
    relax(&mut t.points, vol, cfg);
    let t = t.resample(cfg.resample_spacing_mm)?;
    Ok((t, collisions))
}

/// Seeds a snake from an initial curve and evolves it until both ends stop.
pub fn trace_snake<T: Real, P: Predictor<T> + ?Sized>(
    init: &InitialCurve<T>,
    vol: &Volume3<T>,
    predictor: &mut P,
    dirs: &DirectionSet<T>,
    cfg: &TracerConfig<T>,
    registry: &Registry<T>,
) -> Result<SnakeOutcome<T>, SnakeError> {
    cfg.validate()?;
    let pts = &init.points;
    if pts.len() < 2 {
        return Ok(SnakeOutcome::Rejected {
            id: init.id,
            points: pts.len(),
        });
    }
    let r0 = predictor.predict(&query(pts[0], vol, cfg), dirs)?;
    r0.validate(dirs.len())?;
    let r1 = predictor.predict(&query(pts[pts.len() - 1], vol, cfg), dirs)?;
    r1.validate(dirs.len())?;
    let cum = cumulative_length(pts);
    let total = *cum.last().unwrap();
    let radii = cum
        .iter()
        .map(|s| {
            let f = if total > T::zero() { *s / total } else { T::zero() };
            r0.radius_mm + (r1.radius_mm - r0.radius_mm) * f
        })
        .collect();
    let mut t = Trace::new(init.id, pts.clone(), radii)?.resample(cfg.resample_spacing_mm)?;
    let mut collisions = Vec::new();
    let mut iters = 0;
    while iters < cfg.max_iters_per_end && t.ends.iter().any(|e| e.is_growing()) {
        let (next, c) = evolve_step(&t, vol, predictor, dirs, cfg, registry)?;
        t = next;
        collisions.extend(c);
        iters += 1;
    }
    for e in &mut t.ends {
        if e.is_growing() {
            *e = TraceStatus::TerminatedMaxIters;
        }
    }
    if t.len() < cfg.min_trace_points {
        return Ok(SnakeOutcome::Rejected {
            id: init.id,
            points: t.len(),
        });
    }
    Ok(SnakeOutcome::Accepted { trace: t, collisions })
}

/// Processing order: longest curve first, ties by lowest id.
fn processing_order<T: Real>(curves: &[InitialCurve<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..curves.len()).collect();
    let lengths: Vec<T> = curves.iter().map(|c| c.length()).collect();
    order.sort_by(|&a, &b| {
        lengths[b]
            .partial_cmp(&lengths[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(curves[a].id.cmp(&curves[b].id))
    });
    order
}

/// Whether every point of `curve` already lies inside an accepted trace.
fn covered<T: Real>(curve: &InitialCurve<T>, registry: &Registry<T>) -> bool {
    !registry.is_empty() && curve.points.iter().all(|p| registry.collision(*p, T::zero()).is_some())
}

/// Traces every initial curve in turn, skipping curves that earlier traces
/// already cover; each accepted trace joins the registry that later snakes
/// collide with.
pub fn trace_all<T: Real, P: Predictor<T> + ?Sized>(
    curves: &[InitialCurve<T>],
    vol: &Volume3<T>,
    predictor: &mut P,
    dirs: &DirectionSet<T>,
    cfg: &TracerConfig<T>,
) -> Result<TracingOutput<T>, SnakeError> {
    cfg.validate()?;
    let mut registry = Registry::default();
    let mut collisions = Vec::new();
    let mut rejected = Vec::new();
    for i in processing_order(curves) {
        if covered(&curves[i], &registry) {
            rejected.push(curves[i].id);
            continue;
        }
        match trace_snake(&curves[i], vol, predictor, dirs, cfg, &registry)? {
            SnakeOutcome::Accepted { trace, collisions: c } => {
                collisions.extend(c);
                registry.add(trace);
            }
            SnakeOutcome::Rejected { id, .. } => rejected.push(id),
        }
    }
    Ok(TracingOutput {
        traces: registry.into_traces(),
        collisions,
        rejected,
        mode: OrderMode::Sequential,
    })
}

/// Cuts a trace traced in isolation where it first runs into `registry`,
/// scanning outward from its arc-length midpoint in both directions.
fn commit<T: Real>(mut t: Trace<T>, registry: &Registry<T>, collisions: &mut Vec<Collision>) -> Trace<T> {
    let cum = cumulative_length(&t.points);
    let half = *cum.last().unwrap() * T::lit(0.5);
    let mid = cum.iter().position(|s| *s >= half).unwrap_or(0);
    let n = t.len();
    let mut hi = n - 1;
    for j in mid..n {
        if let Some((other, other_point)) = registry.collision(t.points[j], t.radii[j]) {
            hi = j;
            t.ends[1] = TraceStatus::TerminatedCollision;
            collisions.push(Collision {
                trace: t.id,
                end: 1,
                other,
                other_point,
            });
            break;
        }
    }
    let mut lo = 0;
    for j in (0..=mid.min(hi)).rev() {
        if let Some((other, other_point)) = registry.collision(t.points[j], t.radii[j]) {
            lo = j;
            t.ends[0] = TraceStatus::TerminatedCollision;
            collisions.push(Collision {
                trace: t.id,
                end: 0,
                other,
                other_point,
            });
            break;
        }
    }
    t.points = t.points[lo..=hi].to_vec();
    t.radii = t.radii[lo..=hi].to_vec();
    t
}

/// Traces all curves concurrently against an empty registry, then commits
/// them in the sequential order, truncating each where it meets an already
/// committed trace. Results can differ from [`trace_all`].
pub fn trace_all_parallel<T: Real, P: Predictor<T> + Clone + Send + Sync>(
    curves: &[InitialCurve<T>],
    vol: &Volume3<T>,
    predictor: &P,
    dirs: &DirectionSet<T>,
    cfg: &TracerConfig<T>,
) -> Result<TracingOutput<T>, SnakeError> {
    cfg.validate()?;
    let order = processing_order(curves);
    let frozen = Registry::default();
    let outcomes: Vec<SnakeOutcome<T>> = order
        .par_iter()
        .map(|&i| {
            let mut p = predictor.clone();
            trace_snake(&curves[i], vol, &mut p, dirs, cfg, &frozen)
        })
        .collect::<Result<_, _>>()?;
    let mut registry = Registry::default();
    let mut collisions = Vec::new();
    let mut rejected = Vec::new();
    for (&i, outcome) in order.iter().zip(outcomes) {
        if covered(&curves[i], &registry) {
            rejected.push(curves[i].id);
            continue;
        }
        match outcome {
            SnakeOutcome::Accepted { trace, .. } => {
                let t = commit(trace, &registry, &mut collisions);
                if t.len() < cfg.min_trace_points {
                    collisions.retain(|c| c.trace != t.id);
                    rejected.push(t.id);
                } else {
                    registry.add(t);
                }
            }
            SnakeOutcome::Rejected { id, .. } => rejected.push(id),
        }
    }
    Ok(TracingOutput {
        traces: registry.into_traces(),
        collisions,
        rejected,
        mode: OrderMode::Parallel,
    })
}
