//! Vessel centreline tracing with open-curve snakes.
//!
//! Curves proposed from a centreline distance map are grown and relaxed as
//! snakes steered by a direction/radius predictor, joined into a loop-free
//! tree by a maximum-score spanning forest over gap intensities, and scored
//! with overlap and multi-object tracking metrics. All numeric code is
//! generic over `f32`/`f64`; the aliases below fix `f64`.

// `!(x > 0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geom;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod predictor;
pub mod proposal;
pub mod real;
pub mod snake;
pub mod trace;
pub mod tree;
pub mod volume;

pub use real::Real;

pub type Vec3 = geom::Vec3<f64>;
pub type Grid = volume::Grid<f64>;
pub type Volume = volume::Volume3<f64>;
pub type Trace = trace::Trace<f64>;
pub type DistanceMap = proposal::DistanceMap<f64>;
pub type InitialCurve = proposal::InitialCurve<f64>;
pub type Prediction = predictor::Prediction<f64>;
pub type DirectionSet = predictor::DirectionSet<f64>;
pub type TracerConfig = snake::TracerConfig<f64>;
pub type PhantomSpec = phantom::PhantomSpec<f64>;
pub type GroundTruthTree = phantom::GroundTruthTree<f64>;
pub type VesselTree = tree::VesselTree<f64>;
pub type MatchReport = metrics::MatchReport<f64>;
