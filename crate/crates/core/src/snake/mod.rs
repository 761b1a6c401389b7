//! Open-curve snakes: energies, predictor-driven stretching and termination.

mod registry;
mod tracer;

pub use registry::{Collision, Registry};
pub use tracer::{
    evolve_step, relax, trace_all, trace_all_parallel, trace_snake, OrderMode, SnakeOutcome, TracingOutput,
};

use thiserror::Error;

use crate::geom::Vec3;
use crate::predictor::{check_simplex, DirectionSet, Prediction, PredictorError, DEFAULT_DIRECTIONS};
use crate::real::Real;
use crate::trace::{Trace, TraceError};
use crate::volume::{Polarity, Volume3, DEFAULT_PATCH_SIDE};

#[derive(Debug, Error)]
pub enum SnakeError {
    #[error("internal energy needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid tracer config: {0}")]
    Config(String),
    #[error("magnitudes are not a probability vector: {0}")]
    Simplex(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Tracing parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TracerConfig<T> {
    /// Elasticity weight on `|c_s|²`.
    pub alpha: T,
    /// Stiffness weight on `|c_ss|²`.
    pub beta: T,
    /// Growth step as a fraction of the predicted radius.
    pub gamma_factor: T,
    /// Normalised entropy above which an end stops.
    pub entropy_threshold: T,
    pub max_iters_per_end: usize,
    pub resample_spacing_mm: T,
    pub min_trace_points: usize,
    /// Largest displacement of any point in one relaxation step, mm.
    pub descent_step: T,
    pub intensity_weight: T,
    pub polarity: Polarity,
    pub directions: usize,
    pub patch_side: usize,
}

impl<T: Real> TracerConfig<T> {
    /// Defaults scaled to a lattice with the given smallest spacing.
    pub fn for_spacing(min_spacing: T) -> Self {
        Self {
            alpha: T::lit(0.1),
            beta: T::lit(0.1),
            gamma_factor: T::lit(0.5),
            entropy_threshold: T::lit(0.9),
            max_iters_per_end: 500,
            resample_spacing_mm: min_spacing,
            min_trace_points: 5,
            descent_step: min_spacing * T::lit(0.1),
            intensity_weight: T::one(),
            polarity: Polarity::Bright,
            directions: DEFAULT_DIRECTIONS,
            patch_side: DEFAULT_PATCH_SIDE,
        }
    }

    pub fn validate(&self) -> Result<(), SnakeError> {
        let bad = |m: &str| Err(SnakeError::Config(m.to_string()));
        if !(self.alpha >= T::zero() && self.beta >= T::zero()) {
            return bad("alpha and beta must be >= 0");
        }
        if !(self.gamma_factor > T::zero()) {
            return bad("gamma_factor must be > 0");
        }
        if !(self.entropy_threshold > T::zero() && self.entropy_threshold < T::one()) {
            return bad("entropy_threshold must lie in (0, 1)");
        }
        if !(self.resample_spacing_mm > T::zero()) {
            return bad("resample_spacing_mm must be > 0");
        }
        if !(self.descent_step > T::zero()) {
            return bad("descent_step must be > 0");
        }
        if !(self.intensity_weight > T::zero()) {
            return bad("intensity_weight must be > 0");
        }
        if self.min_trace_points < 2 {
            return bad("min_trace_points must be >= 2");
        }
        if self.directions < 2 {
            return bad("directions must be >= 2");
        }
        if self.patch_side.is_multiple_of(2) || self.patch_side < 3 {
            return bad("patch_side must be odd and >= 3");
        }
        Ok(())
    }
}

impl<T: Real> Default for TracerConfig<T> {
    fn default() -> Self {
        Self::for_spacing(T::one())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyBreakdown<T> {
    pub internal: T,
    pub external: T,
    pub total: T,
}

/// Mean segment length, used as the arc-length step of the stencils.
fn mean_step<T: Real>(points: &[Vec3<T>]) -> T {
    crate::geom::polyline_length(points) / T::from_usize_lossy(points.len() - 1)
}

/// `Σ α|c_s|² + β|c_ss|²` over interior points; both weights vanish at the ends.
pub fn internal_energy<T: Real>(t: &Trace<T>, cfg: &TracerConfig<T>) -> Result<T, SnakeError> {
    internal_energy_points(&t.points, cfg)
}

pub(crate) fn internal_energy_points<T: Real>(p: &[Vec3<T>], cfg: &TracerConfig<T>) -> Result<T, SnakeError> {
    if p.len() < 3 {
        return Err(SnakeError::TooFewPoints(p.len()));
    }
    let h = mean_step(p);
    if !(h > T::zero()) {
        return Ok(T::zero());
    }
    let two = T::lit(2.0);
    let mut e = T::zero();
    for j in 1..p.len() - 1 {
        let cs = (p[j + 1] - p[j - 1]) / (two * h);
        let css = (p[j - 1] - p[j] * two + p[j + 1]) / (h * h);
        e += cfg.alpha * cs.norm_sq() + cfg.beta * css.norm_sq();
    }
    Ok(e)
}

/// `-w Σ I(p)` over all points, with `I` negated for dark vessels.
pub fn external_energy<T: Real>(t: &Trace<T>, vol: &Volume3<T>, cfg: &TracerConfig<T>) -> T {
    external_energy_points(&t.points, vol, cfg)
}

pub(crate) fn external_energy_points<T: Real>(p: &[Vec3<T>], vol: &Volume3<T>, cfg: &TracerConfig<T>) -> T {
    let s = cfg.polarity.sign::<T>();
    -cfg.intensity_weight * s * p.iter().map(|q| vol.interp(*q)).sum::<T>()
}

pub fn energy<T: Real>(
    t: &Trace<T>,
    vol: &Volume3<T>,
    cfg: &TracerConfig<T>,
) -> Result<EnergyBreakdown<T>, SnakeError> {
    let internal = internal_energy(t, cfg)?;
    let external = external_energy(t, vol, cfg);
    Ok(EnergyBreakdown {
        internal,
        external,
        total: internal + external,
    })
}

/// `Σ -k log₂ k / log₂ D`, with `0 log 0 = 0`.
pub fn normalized_entropy<T: Real>(k: &[T]) -> Result<T, SnakeError> {
    check_simplex(k).map_err(|e| SnakeError::Simplex(e.to_string()))?;
    if k.len() < 2 {
        return Err(SnakeError::Simplex("need at least 2 entries".into()));
    }
    let h: T = k.iter().filter(|&&x| x > T::zero()).map(|&x| -x * x.log2()).sum();
    let h = h / T::from_usize_lossy(k.len()).log2();
    Ok(h.max(T::zero()).min(T::one()))
}

/// Picks the bin with the largest `sign(outward · v_m) k_m` and returns
/// `k_m v_m`, or zero when no direction points outward with positive mass.
pub fn stretch_force<T: Real>(pred: &Prediction<T>, outward: Vec3<T>, dirs: &DirectionSet<T>) -> Vec3<T> {
    let mut best = None;
    let mut best_score = T::zero();
    for (m, (v, &k)) in dirs.vectors().iter().zip(&pred.magnitudes).enumerate() {
        let d = outward.dot(*v);
        let score = if d > T::zero() {
            k
        } else if d < T::zero() {
            -k
        } else {
            T::zero()
        };
        if score > best_score {
            best_score = score;
            best = Some(m);
        }
    }
    match best {
        Some(m) => dirs.get(m) * pred.magnitudes[m],
        None => Vec3::zero(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn cfg(alpha: f64, beta: f64) -> TracerConfig<f64> {
        TracerConfig {
            alpha,
            beta,
            ..TracerConfig::default()
        }
    }

    #[test]
    fn straight_line_has_no_bending_energy() {
        let t = Trace::with_uniform_radius(0, (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect(), 1.0);
        assert_eq!(internal_energy(&t, &cfg(0.0, 1.0)).unwrap(), 0.0);
        assert_eq!(internal_energy(&t, &cfg(0.0, 0.0)).unwrap(), 0.0);
        // |c_s| = 1 at each of the 3 interior points
        assert!((internal_energy(&t, &cfg(1.0, 0.0)).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn right_angle_stencil() {
        let t = Trace::with_uniform_radius(
            0,
            vec![Vec3::new(1.0, 0.0, 0.0), Vec3::zero(), Vec3::new(0.0, 1.0, 0.0)],
            1.0,
        );
        // h = 1, c_ss = (1, 1, 0) -> |c_ss|² = 2
        assert!((internal_energy(&t, &cfg(0.0, 1.0)).unwrap() - 2.0).abs() < 1e-12);
        let short = Trace::with_uniform_radius(0, vec![Vec3::zero(), Vec3::axis(0)], 1.0);
        assert!(matches!(
            internal_energy(&short, &cfg(1.0, 1.0)),
            Err(SnakeError::TooFewPoints(2))
        ));
    }

    #[test]
    fn external_energy_constant_and_zero() {
        let g = Grid::new([10, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        let t = Trace::with_uniform_radius(0, (0..4).map(|i| Vec3::new(2.0 + i as f64, 4.0, 4.0)).collect(), 1.0);
        let c = cfg(0.1, 0.1);
        assert!((external_energy(&t, &Volume3::filled(g, 3.0), &c) + 12.0).abs() < 1e-12);
        assert_eq!(external_energy(&t, &Volume3::filled(g, 0.0), &c), 0.0);
        let dark = TracerConfig {
            polarity: Polarity::Dark,
            ..c
        };
        assert!((external_energy(&t, &Volume3::filled(g, 3.0), &dark) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_cases() {
        let u = vec![1.0f64 / 500.0; 500];
        assert!((normalized_entropy(&u).unwrap() - 1.0).abs() < 1e-9);
        let mut one = vec![0.0f64; 500];
        one[7] = 1.0;
        assert_eq!(normalized_entropy(&one).unwrap(), 0.0);
        assert!((normalized_entropy(&[0.5f64, 0.5, 0.0, 0.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(normalized_entropy(&[0.5, 0.6]).is_err());
        assert!(normalized_entropy(&[1.2, -0.2]).is_err());
    }

    #[test]
    fn stretch_force_cases() {
        let dirs = DirectionSet::<f64>::new(500).unwrap();
        let x = Vec3::axis(0);
        let (mp, mn) = (dirs.nearest(x), dirs.nearest(-x));
        let mut k = vec![0.0; 500];
        k[mp] = 0.9;
        k[mn] = 0.1;
        let p = Prediction {
            radius_mm: 1.0,
            magnitudes: k,
        };
        assert_eq!(stretch_force(&p, x, &dirs), dirs.get(mp) * 0.9);
        assert_eq!(stretch_force(&p, -x, &dirs), dirs.get(mn) * 0.1);
        let mut one_hot = vec![0.0; 500];
        one_hot[mp] = 1.0;
        let inward = Prediction {
            radius_mm: 1.0,
            magnitudes: one_hot,
        };
        assert_eq!(stretch_force(&inward, -x, &dirs), Vec3::zero());
        assert_eq!(stretch_force(&inward, x, &dirs), dirs.get(mp));
        // only the sign of outward · v matters
        assert_eq!(stretch_force(&p, x * 7.5, &dirs), stretch_force(&p, x, &dirs));
    }

    #[test]
    fn config_validation() {
        TracerConfig::<f64>::for_spacing(0.5).validate().unwrap();
        let bad = TracerConfig {
            entropy_threshold: 1.0,
            ..TracerConfig::<f64>::default()
        };
        assert!(bad.validate().is_err());
        let bad = TracerConfig {
            patch_side: 18,
            ..TracerConfig::<f64>::default()
        };
        assert!(bad.validate().is_err());
    }
}
