//! Tracing accuracy: radius-thresholded point matching, overlap (OV) and
//! average-inside distance (AI), plus identity switches (IDS), MOTA and IDF1
//! computed over whole traces.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::geom::WorldPoint;
use crate::real::Real;
use crate::trace::Trace;

/// Fraction of matched points a trace needs to count as found.
pub const DEFAULT_MAJORITY: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("ground-truth trace {trace} has non-positive radius at point {point}")]
    NonPositiveRadius { trace: usize, point: usize },
    #[error("ground truth has no points")]
    EmptyGroundTruth,
    #[error("majority fraction {0} outside (0, 1]")]
    BadMajority(f64),
}

/// Point- and trace-level matching between predicted and ground-truth traces.
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence<T> {
    /// Per ground-truth trace and point: id of the contributing predicted
    /// trace, `None` when unmatched.
    pub gt_points: Vec<Vec<Option<usize>>>,
    /// Per predicted trace and point: distance to the nearest ground-truth
    /// point when matched.
    pub pred_points: Vec<Vec<Option<T>>>,
    /// Per ground-truth trace: contributing predicted id -> matched points.
    pub contributing: Vec<BTreeMap<usize, usize>>,
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    /// Ground-truth point count.
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchReport<T> {
    pub ov: T,
    pub ai: T,
    pub ids: usize,
    pub mota: T,
    pub idf1: T,
    pub corr: Correspondence<T>,
}

/// Uniform grid over points, for radius queries no larger than the cell.
struct PointHash<T> {
    cell: T,
    buckets: HashMap<[i64; 3], Vec<(usize, usize)>>,
}

impl<T: Real> PointHash<T> {
    fn new(traces: &[Trace<T>], cell: T) -> Self {
        let mut h = Self {
            cell,
            buckets: HashMap::new(),
        };
        for (i, t) in traces.iter().enumerate() {
            for (j, p) in t.points.iter().enumerate() {
                let k = h.key(*p);
                h.buckets.entry(k).or_default().push((i, j));
            }
        }
        h
    }

    fn key(&self, p: WorldPoint<T>) -> [i64; 3] {
        p.to_array()
            .map(|c| (c / self.cell).floor().to_i64().unwrap_or(i64::MAX))
    }

    fn near(&self, p: WorldPoint<T>) -> impl Iterator<Item = (usize, usize)> + '_ {
        let c = self.key(p);
        (0..27).flat_map(move |n| {
            let k = [c[0] + n % 3 - 1, c[1] + (n / 3) % 3 - 1, c[2] + n / 9 - 1];
            self.buckets.get(&k).into_iter().flatten().copied()
        })
    }
}

fn check_gt<T: Real>(gt: &[Trace<T>]) -> Result<(), MetricsError> {
    for (i, t) in gt.iter().enumerate() {
        if let Some(j) = t.radii.iter().position(|r| !(*r > T::zero())) {
            return Err(MetricsError::NonPositiveRadius { trace: i, point: j });
        }
    }
    Ok(())
}

/// Matches points in both directions. A ground-truth point with radius `r`
/// is matched when a predicted point lies strictly within `r`; it is
/// attributed to the trace of the nearest such point (distance ties go to the
/// trace that dominates the rest of the ground-truth trace, then to the
/// lowest id). A predicted point is matched when it lies strictly within the
/// radius of some ground-truth point. Traces count as found (TP) or as false
/// positives (FP) by the `majority` fraction of matched points.
pub fn match_points<T: Real>(
    pred: &[Trace<T>],
    gt: &[Trace<T>],
    majority: f64,
) -> Result<Correspondence<T>, MetricsError> {
    if !(majority > 0.0 && majority <= 1.0) {
        return Err(MetricsError::BadMajority(majority));
    }
    check_gt(gt)?;
    let cell = gt
        .iter()
        .flat_map(|t| t.radii.iter().copied())
        .fold(T::zero(), T::max)
        .max(T::lit(1e-6));
    let pred_hash = PointHash::new(pred, cell);
    let gt_hash = PointHash::new(gt, cell);

    let mut gt_points = Vec::with_capacity(gt.len());
    let mut contributing = Vec::with_capacity(gt.len());
    for t in gt {
        // Candidate ids at the minimum distance, per point.
        let tied: Vec<Vec<usize>> = t
            .points
            .iter()
            .zip(&t.radii)
            .map(|(p, r)| {
                let mut best = *r;
                let mut ids: Vec<usize> = Vec::new();
                for (pi, pj) in pred_hash.near(*p) {
                    let d = pred[pi].points[pj].dist(*p);
                    if d < best {
                        best = d;
                        ids.clear();
                    }
                    if d == best && d < *r && !ids.contains(&pred[pi].id) {
                        ids.push(pred[pi].id);
                    }
                }
                ids.sort_unstable();
                ids
            })
            .collect();
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for ids in tied.iter().filter(|ids| ids.len() == 1) {
            *votes.entry(ids[0]).or_default() += 1;
        }
        let dominant = votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(id, _)| *id);
        let assigned: Vec<Option<usize>> = tied
            .iter()
            .map(|ids| match ids.as_slice() {
                [] => None,
                [one] => Some(*one),
                many => Some(dominant.filter(|d| many.contains(d)).unwrap_or(many[0])),
            })
            .collect();
        let mut c = BTreeMap::new();
        for id in assigned.iter().flatten() {
            *c.entry(*id).or_default() += 1;
        }
        gt_points.push(assigned);
        contributing.push(c);
    }

    let pred_points: Vec<Vec<Option<T>>> = pred
        .iter()
        .map(|t| {
            t.points
                .iter()
                .map(|p| {
                    let mut inside = false;
                    let mut nearest = T::infinity();
                    for (gi, gj) in gt_hash.near(*p) {
                        let d = gt[gi].points[gj].dist(*p);
                        inside |= d < gt[gi].radii[gj];
                        nearest = nearest.min(d);
                    }
                    inside.then_some(nearest)
                })
                .collect()
        })
        .collect();

    let found = |n: usize, total: usize| total > 0 && n as f64 >= majority * total as f64;
    let tp = gt_points
        .iter()
        .filter(|m| found(m.iter().flatten().count(), m.len()))
        .count();
    let fp = pred_points
        .iter()
        .filter(|m| !m.is_empty() && !found(m.iter().flatten().count(), m.len()))
        .count();
    Ok(Correspondence {
        t: gt.iter().map(Trace::len).sum(),
        gt_points,
        pred_points,
        contributing,
        tp,
        fn_: gt.len() - tp,
        fp,
    })
}

/// Overlap and average-inside distance (mm). AI is 0 when no predicted
/// point is matched.
pub fn compute_ov_ai<T: Real>(corr: &Correspondence<T>) -> (T, T) {
    let gt_total: usize = corr.gt_points.iter().map(Vec::len).sum();
    let gt_hit: usize = corr.gt_points.iter().map(|m| m.iter().flatten().count()).sum();
    let pred_total: usize = corr.pred_points.iter().map(Vec::len).sum();
    let inside: Vec<T> = corr.pred_points.iter().flatten().flatten().copied().collect();
    let total = gt_total + pred_total;
    let ov = if total == 0 {
        T::zero()
    } else {
        T::from_usize_lossy(gt_hit + inside.len()) / T::from_usize_lossy(total)
    };
    let ai = if inside.is_empty() {
        T::zero()
    } else {
        inside.iter().copied().sum::<T>() / T::from_usize_lossy(inside.len())
    };
    (ov, ai)
}

/// Identity switches, MOTA and IDF1.
pub fn compute_mot<T: Real>(corr: &Correspondence<T>) -> Result<(usize, T, T), MetricsError> {
    if corr.t == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let ids: usize = corr.contributing.iter().map(|c| c.len().saturating_sub(1)).sum();
    let mota = T::one() - T::from_usize_lossy(corr.fn_ + corr.fp + ids) / T::from_usize_lossy(corr.t);
    let den = 2 * corr.tp + corr.fp + corr.fn_;
    let idf1 = if den == 0 {
        T::zero()
    } else {
        T::from_usize_lossy(2 * corr.tp) / T::from_usize_lossy(den)
    };
    Ok((ids, mota, idf1))
}

pub fn evaluate<T: Real>(pred: &[Trace<T>], gt: &[Trace<T>], majority: f64) -> Result<MatchReport<T>, MetricsError> {
    let corr = match_points(pred, gt, majority)?;
    let (ov, ai) = compute_ov_ai(&corr);
    let (ids, mota, idf1) = compute_mot(&corr)?;
    Ok(MatchReport {
        ov,
        ai,
        ids,
        mota,
        idf1,
        corr,
    })
}
