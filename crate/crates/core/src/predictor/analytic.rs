use super::{DirectionSet, EndpointQuery, Prediction, Predictor, PredictorError};
use crate::geom::Vec3;
use crate::real::Real;
use crate::volume::{Patch, Polarity};

/// Rays cast perpendicular to the winning direction when measuring the radius.
const RADIUS_RAYS: usize = 8;
/// Sub-steps per patch step along a radius ray.
const RADIUS_OVERSAMPLE: usize = 4;

/// Image-only predictor: scores each direction by the mean intensity along a
/// ray from the patch centre (above the border level, plus a noise floor) and
/// measures the radius as the half-maximum crossing across the best direction.
#[derive(Clone, Copy, Debug, Default)]
pub struct AnalyticPredictor {
    pub polarity: Polarity,
}

impl AnalyticPredictor {
    pub fn new(polarity: Polarity) -> Self {
        Self { polarity }
    }

    pub fn predict_patch<T: Real>(&self, patch: &Patch<T>, dirs: &DirectionSet<T>) -> Prediction<T> {
        let sign = self.polarity.sign::<T>();
        let half = patch.side / 2;
        let step = patch.step_mm;
        let extent = T::from_usize_lossy(half.max(1)) * step;
        let background = sign * patch.border_mean();
        // Noise level of a ray mean: a floor added to every score so that a
        // patch of pure noise reads as (nearly) uniform rather than as a
        // handful of confident directions.
        let floor = patch.border_std() / T::from_usize_lossy(half.max(1)).sqrt();

        let mut scores: Vec<T> = dirs
            .vectors()
            .iter()
            .map(|v| {
                let mut acc = T::zero();
                for s in 1..=half {
                    let p = patch.center + *v * (step * T::from_usize_lossy(s));
                    acc += sign * patch.sample(p);
                }
                let mean = acc / T::from_usize_lossy(half.max(1));
                (mean - background).max(T::zero()) + floor
            })
            .collect();
        let total: T = scores.iter().copied().sum();
        if !(total > T::zero()) {
            return Prediction::uniform(extent, dirs.len());
        }
        for s in &mut scores {
            *s /= total;
        }
        let best = dirs.get(super::argmax(&scores));
        let radius = self.half_max_radius(patch, best, background, extent);
        Prediction {
            radius_mm: radius.max(step).min(extent),
            magnitudes: scores,
        }
    }

    /// Mean distance, over rays perpendicular to `axis`, at which the
    /// intensity first drops below halfway between centre and background.
    fn half_max_radius<T: Real>(&self, patch: &Patch<T>, axis: Vec3<T>, background: T, extent: T) -> T {
        let sign = self.polarity.sign::<T>();
        let center = sign * patch.center_value();
        let level = background + (center - background) * T::lit(0.5);
        let e1 = axis.any_perpendicular();
        let e2 = axis.cross(e1);
        let dt = patch.step_mm / T::from_usize_lossy(RADIUS_OVERSAMPLE);
        let n = (extent / dt).to_usize().unwrap_or(0);
        let mut sum = T::zero();
        for r in 0..RADIUS_RAYS {
            let a = T::lit(2.0 * std::f64::consts::PI * r as f64 / RADIUS_RAYS as f64);
            let dir = e1 * a.cos() + e2 * a.sin();
            let mut prev = center;
            let mut hit = extent;
            for s in 1..=n {
                let t = dt * T::from_usize_lossy(s);
                let v = sign * patch.sample(patch.center + dir * t);
                if v < level {
                    let frac = if prev > v {
                        (prev - level) / (prev - v)
                    } else {
                        T::zero()
                    };
                    hit = t - dt + dt * frac;
                    break;
                }
                prev = v;
            }
            sum += hit;
        }
        sum / T::from_usize_lossy(RADIUS_RAYS)
    }
}

impl<T: Real> Predictor<T> for AnalyticPredictor {
    fn predict(
        &mut self,
        query: &EndpointQuery<'_, T>,
        dirs: &DirectionSet<T>,
    ) -> Result<Prediction<T>, PredictorError> {
        Ok(self.predict_patch(&query.patch()?, dirs))
    }

    fn name(&self) -> &'static str {
        "analytic"
    }
}
