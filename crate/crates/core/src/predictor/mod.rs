//! Direction/radius prediction at snake endpoints.
//!
//! A predictor looks at an endpoint (and, if it wants, the intensity patch
//! around it) and returns a radius plus a probability mass over a fixed set of
//! unit directions. Three implementations are provided: a ground-truth
//! [`OraclePredictor`], an image-based [`AnalyticPredictor`], and
//! [`ExternalPredictor`], which forwards patches to a separate process.

mod analytic;
mod external;
mod oracle;

pub use analytic::AnalyticPredictor;
pub use external::{read_request, read_response, write_request, write_response, ExternalPredictor, PatchRequest};
pub use oracle::{OraclePredictor, DEFAULT_FAR_FACTOR};

use thiserror::Error;

use crate::geom::{Vec3, WorldPoint};
use crate::real::Real;
use crate::volume::{Patch, Volume3, VolumeError, DEFAULT_PATCH_SIDE};

pub const DEFAULT_DIRECTIONS: usize = 500;
pub const DEFAULT_KAPPA: f64 = 20.0;
/// Tolerance on the sum of a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("direction count must be at least 2, got {0}")]
    BadDirectionCount(usize),
    #[error("kappa must be positive, got {0}")]
    BadKappa(f64),
    #[error("target direction {0} has zero length")]
    ZeroDirection(usize),
    #[error("no target directions given")]
    NoDirections,
    #[error("ground-truth tree is empty")]
    EmptyTree,
    #[error("magnitudes are not on the simplex: {0}")]
    Simplex(String),
    #[error("radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("prediction has {got} magnitudes, expected {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("predictor bridge: {0}")]
    Bridge(String),
    #[error("predictor bridge i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// `D` unit vectors spread evenly over the sphere (spherical Fibonacci lattice).
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet<T> {
    vectors: Vec<Vec3<T>>,
}

impl<T: Real> DirectionSet<T> {
    pub fn new(d: usize) -> Result<Self, PredictorError> {
        if d < 2 {
            return Err(PredictorError::BadDirectionCount(d));
        }
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let vectors = (0..d)
            .map(|m| {
                let z = 1.0 - (2.0 * m as f64 + 1.0) / d as f64;
                let rho = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden * m as f64;
                let (x, y) = (rho * phi.cos(), rho * phi.sin());
                let n = (x * x + y * y + z * z).sqrt();
                Vec3::new(T::lit(x / n), T::lit(y / n), T::lit(z / n))
            })
            .collect();
        Ok(Self { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec3<T>] {
        &self.vectors
    }

    pub fn get(&self, m: usize) -> Vec3<T> {
        self.vectors[m]
    }

    /// Index of the lattice direction closest to `u` (largest dot product).
    pub fn nearest(&self, u: Vec3<T>) -> usize {
        let mut best = 0;
        let mut best_dot = T::neg_infinity();
        for (m, v) in self.vectors.iter().enumerate() {
            let d = v.dot(u);
            if d > best_dot {
                best_dot = d;
                best = m;
            }
        }
        best
    }
}

/// Predicted radius and direction distribution at an endpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub radius_mm: T,
    pub magnitudes: Vec<T>,
}

impl<T: Real> Prediction<T> {
    pub fn uniform(radius_mm: T, d: usize) -> Self {
        Self {
            radius_mm,
            magnitudes: vec![T::one() / T::from_usize_lossy(d); d],
        }
    }

    /// Checks the radius and that the magnitudes form a probability vector
    /// of the expected length.
    pub fn validate(&self, d: usize) -> Result<(), PredictorError> {
        if !(self.radius_mm > T::zero() && self.radius_mm.is_finite()) {
            return Err(PredictorError::BadRadius(self.radius_mm.to_f64_lossy()));
        }
        if self.magnitudes.len() != d {
            return Err(PredictorError::WrongLength {
                got: self.magnitudes.len(),
                expected: d,
            });
        }
        check_simplex(&self.magnitudes)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.magnitudes)
    }
}

pub(crate) fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_simplex<T: Real>(k: &[T]) -> Result<(), PredictorError> {
    if k.is_empty() {
        return Err(PredictorError::Simplex("empty vector".into()));
    }
    if let Some((i, v)) = k.iter().enumerate().find(|(_, v)| !(**v >= T::zero())) {
        return Err(PredictorError::Simplex(format!("entry {i} is {v}")));
    }
    let s: f64 = k.iter().map(|v| v.to_f64_lossy()).sum();
    // f32 accumulation over hundreds of entries needs a little headroom.
    let tol = SIMPLEX_TOL.max(4.0 * k.len() as f64 * T::epsilon().to_f64_lossy());
    if (s - 1.0).abs() > tol {
        return Err(PredictorError::Simplex(format!("sum is {s}")));
    }
    Ok(())
}

/// Soft direction target: `k_m ∝ Σ_u exp(kappa (v_m · u))`, normalised.
pub fn encode_target<T: Real>(
    true_dirs: &[Vec3<T>],
    dirs: &DirectionSet<T>,
    kappa: T,
) -> Result<Vec<T>, PredictorError> {
    if !(kappa > T::zero() && kappa.is_finite()) {
        return Err(PredictorError::BadKappa(kappa.to_f64_lossy()));
    }
    if true_dirs.is_empty() {
        return Err(PredictorError::NoDirections);
    }
    let units: Vec<Vec3<T>> = true_dirs
        .iter()
        .enumerate()
        .map(|(i, u)| u.normalized().ok_or(PredictorError::ZeroDirection(i)))
        .collect::<Result<_, _>>()?;
    // Subtracting kappa keeps every exponent <= 0.
    let mut k: Vec<T> = dirs
        .vectors()
        .iter()
        .map(|v| units.iter().map(|u| (kappa * (v.dot(*u) - T::one())).exp()).sum())
        .collect();
    let total: T = k.iter().copied().sum();
    for x in &mut k {
        *x /= total;
    }
    Ok(k)
}

/// Everything a predictor may inspect about one snake end.
pub struct EndpointQuery<'a, T> {
    pub endpoint: WorldPoint<T>,
    pub volume: &'a Volume3<T>,
    pub patch_side: usize,
    pub patch_step_mm: T,
}

impl<'a, T: Real> EndpointQuery<'a, T> {
    pub fn new(endpoint: WorldPoint<T>, volume: &'a Volume3<T>) -> Self {
        Self {
            endpoint,
            volume,
            patch_side: DEFAULT_PATCH_SIDE,
            patch_step_mm: volume.grid().min_spacing(),
        }
    }

    /// The intensity patch centred on the endpoint. Built on demand, since the
    /// oracle never looks at it.
    pub fn patch(&self) -> Result<Patch<T>, PredictorError> {
        Ok(self
            .volume
            .extract_patch(self.endpoint, self.patch_side, self.patch_step_mm)?)
    }
}

/// Source of direction/radius predictions.
pub trait Predictor<T: Real> {
    fn predict(
        &mut self,
        query: &EndpointQuery<'_, T>,
        dirs: &DirectionSet<T>,
    ) -> Result<Prediction<T>, PredictorError>;

    /// Short name recorded in run metadata.
    fn name(&self) -> &'static str;
}

impl<T: Real, P: Predictor<T> + ?Sized> Predictor<T> for Box<P> {
    fn predict(
        &mut self,
        query: &EndpointQuery<'_, T>,
        dirs: &DirectionSet<T>,
    ) -> Result<Prediction<T>, PredictorError> {
        (**self).predict(query, dirs)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}
