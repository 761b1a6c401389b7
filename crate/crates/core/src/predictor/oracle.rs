use super::{encode_target, DirectionSet, EndpointQuery, Prediction, Predictor, PredictorError, DEFAULT_KAPPA};
use crate::geom::{Vec3, WorldPoint};
use crate::phantom::GroundTruthTree;
use crate::real::Real;

/// Beyond this multiple of the nearest radius the oracle reports no direction.
pub const DEFAULT_FAR_FACTOR: f64 = 2.0;

#[derive(Clone, Debug)]
struct Node<T> {
    point: WorldPoint<T>,
    radius: T,
    tangents: Vec<Vec3<T>>,
    /// At a free end of a vessel: the direction leading out of it.
    tip: Option<Vec3<T>>,
}

/// Reads directions and radii straight off a ground-truth tree.
///
/// Each ground-truth point carries its outgoing tangents: both neighbours at
/// interior points, the continuing direction at a tip, plus the first segment
/// of every child leaving at that point. Past a tip the prediction is
/// uniform, so snakes stop there. A child's first point duplicates its
/// attachment point and is not indexed separately. Each tangent is turned into
/// an aim at the centreline one radius further along it.
#[derive(Clone, Debug)]
pub struct OraclePredictor<T> {
    nodes: Vec<Node<T>>,
    kappa: T,
    far_factor: T,
}

impl<T: Real> OraclePredictor<T> {
    pub fn new(tree: &GroundTruthTree<T>) -> Result<Self, PredictorError> {
        Self::with_params(tree, T::lit(DEFAULT_KAPPA), T::lit(DEFAULT_FAR_FACTOR))
    }

    pub fn with_params(tree: &GroundTruthTree<T>, kappa: T, far_factor: T) -> Result<Self, PredictorError> {
        if tree.point_count() == 0 {
            return Err(PredictorError::EmptyTree);
        }
        if !(kappa > T::zero()) {
            return Err(PredictorError::BadKappa(kappa.to_f64_lossy()));
        }
        let mut base = Vec::with_capacity(tree.len());
        let mut nodes: Vec<Node<T>> = Vec::new();
        for (ti, t) in tree.traces.iter().enumerate() {
            base.push(nodes.len());
            let child = tree.parents.get(ti).copied().flatten().is_some();
            let n = t.points.len();
            for j in 0..n {
                if child && j == 0 && n > 1 {
                    continue;
                }
                let fwd = (j + 1 < n)
                    .then(|| (t.points[j + 1] - t.points[j]).normalized())
                    .flatten();
                let back = (j > 0).then(|| (t.points[j - 1] - t.points[j]).normalized()).flatten();
                let tip = match (fwd, back) {
                    (Some(f), None) => Some(-f),
                    (None, Some(b)) => Some(-b),
                    _ => None,
                };
                let tangents = match tip {
                    Some(out) => vec![out],
                    None => fwd.into_iter().chain(back).collect(),
                };
                nodes.push(Node {
                    point: t.points[j],
                    radius: t.radii[j],
                    tangents,
                    tip,
                });
            }
        }
        for (ci, att) in tree.parents.iter().enumerate() {
            let (Some(att), Some(c)) = (att, tree.traces.get(ci)) else {
                continue;
            };
            if c.points.len() < 2 || att.parent >= tree.len() {
                continue;
            }
            let offset = usize::from(tree.parents[att.parent].is_some());
            let Some(idx) = att.point.checked_sub(offset).map(|p| base[att.parent] + p) else {
                continue;
            };
            if let Some(dir) = (c.points[1] - c.points[0]).normalized() {
                nodes[idx].tangents.push(dir);
            }
        }
        Ok(Self {
            nodes,
            kappa,
            far_factor,
        })
    }

    fn nearest(&self, p: WorldPoint<T>) -> &Node<T> {
        let mut best = &self.nodes[0];
        let mut best_d = T::infinity();
        for n in &self.nodes {
            let d = n.point.dist_sq(p);
            if d < best_d {
                best_d = d;
                best = n;
            }
        }
        best
    }

    /// Prediction at an arbitrary point.
    pub fn predict_at(&self, p: WorldPoint<T>, dirs: &DirectionSet<T>) -> Result<Prediction<T>, PredictorError> {
        let n = self.nearest(p);
        let past_tip = n.tip.is_some_and(|out| (p - n.point).dot(out) > T::zero());
        if past_tip || n.point.dist(p) > self.far_factor * n.radius || n.tangents.is_empty() {
            return Ok(Prediction::uniform(n.radius, dirs.len()));
        }
        // Aim at the centreline one radius ahead along each tangent; on the
        // centreline this is the tangent itself, off it the aim corrects drift.
        let aims: Vec<Vec3<T>> = n
            .tangents
            .iter()
            .map(|u| (n.point + *u * n.radius - p).normalized().unwrap_or(*u))
            .collect();
        Ok(Prediction {
            radius_mm: n.radius,
            magnitudes: encode_target(&aims, dirs, self.kappa)?,
        })
    }
}

impl<T: Real> Predictor<T> for OraclePredictor<T> {
    fn predict(
        &mut self,
        query: &EndpointQuery<'_, T>,
        dirs: &DirectionSet<T>,
    ) -> Result<Prediction<T>, PredictorError> {
        self.predict_at(query.endpoint, dirs)
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}
