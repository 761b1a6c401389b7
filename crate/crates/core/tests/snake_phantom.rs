use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snaketrace::geom::Vec3;
use snaketrace::phantom::{generate_tree, rasterize, GroundTruthTree, PhantomSpec};
use snaketrace::predictor::{
    AnalyticPredictor, DirectionSet, EndpointQuery, OraclePredictor, Prediction, Predictor, PredictorError,
};
use snaketrace::proposal::InitialCurve;
use snaketrace::snake::{
    evolve_step, external_energy, internal_energy, normalized_entropy, relax, trace_all, trace_all_parallel,
    trace_snake, OrderMode, Registry, SnakeOutcome, TracerConfig,
};
use snaketrace::trace::{Trace, TraceStatus};
use snaketrace::volume::{Grid, Volume3};

fn single_branch(seed: u64) -> (PhantomSpec<f64>, GroundTruthTree<f64>, Volume3<f64>) {
    let spec = PhantomSpec {
        seed,
        n_terminal_branches: 1,
        dims: [96, 96, 96],
        ..PhantomSpec::default()
    };
    let tree = generate_tree(&spec).unwrap();
    let vol = rasterize(&tree, &spec).unwrap();
    (spec, tree, vol)
}

/// Initial curve from the voxels nearest to a run of ground-truth points.
fn curve_from(grid: &Grid<f64>, pts: &[Vec3<f64>]) -> InitialCurve<f64> {
    let mut voxels: Vec<[usize; 3]> = Vec::new();
    for p in pts {
        let v = grid.nearest_voxel(*p).unwrap();
        if voxels.last() != Some(&v) {
            voxels.push(v);
        }
    }
    let points = voxels.iter().map(|v| grid.voxel_center(v[0], v[1], v[2])).collect();
    InitialCurve { id: 0, voxels, points }
}

/// Distance from `p` to the ground-truth polyline, and the radius there.
fn to_centerline(tree: &GroundTruthTree<f64>, p: Vec3<f64>) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for t in &tree.traces {
        for w in 0..t.len() - 1 {
            let (a, b) = (t.points[w], t.points[w + 1]);
            let s = snaketrace::geom::segment_param(p, a, b);
            let d = a.lerp(b, s).dist(p);
            if d < best.0 {
                best = (d, t.radii[w] + (t.radii[w + 1] - t.radii[w]) * s);
            }
        }
    }
    best
}

#[test]
fn oracle_snake_stays_in_lumen_and_covers_branch() {
    for seed in [3u64, 11, 27] {
        let (spec, tree, vol) = single_branch(seed);
        let grid = spec.grid().unwrap();
        let gt = &tree.traces[0];
        let mid = gt.len() / 2;
        let init = curve_from(&grid, &gt.points[mid - 4..=mid + 4]);
        let dirs = DirectionSet::new(500).unwrap();
        let mut oracle = OraclePredictor::new(&tree).unwrap();
        let cfg = TracerConfig::for_spacing(grid.min_spacing());
        let registry = Registry::default();

        // step by step: every new endpoint must sit inside the true lumen
        let mut t = match trace_snake(
            &init,
            &vol,
            &mut oracle,
            &dirs,
            &TracerConfig {
                max_iters_per_end: 0,
                ..cfg.clone()
            },
            &registry,
        )
        .unwrap()
        {
            SnakeOutcome::Accepted { trace, .. } => trace,
            other => panic!("{other:?}"),
        };
        t.ends = [TraceStatus::Growing; 2];
        let mut steps = 0;
        while t.ends.iter().any(|e| e.is_growing()) && steps < cfg.max_iters_per_end {
            let (next, _) = evolve_step(&t, &vol, &mut oracle, &dirs, &cfg, &registry).unwrap();
            for p in [next.points[0], *next.points.last().unwrap()] {
                let (d, r) = to_centerline(&tree, p);
                assert!(
                    d <= r,
                    "seed {seed} step {steps}: endpoint {d:.3} mm off, radius {r:.3}"
                );
            }
            t = next;
            steps += 1;
        }
        assert!(
            t.ends.iter().all(|e| *e == TraceStatus::TerminatedLowConfidence),
            "{:?}",
            t.ends
        );

        let covered = gt
            .points
            .iter()
            .zip(&gt.radii)
            .filter(|(q, r)| t.points.iter().any(|p| p.dist(**q) < **r))
            .count();
        let frac = covered as f64 / gt.len() as f64;
        assert!(frac >= 0.95, "seed {seed}: coverage {frac:.3}");
    }
}

#[test]
fn oracle_snake_from_full_branch_init_covers_it() {
    let (spec, tree, vol) = single_branch(5);
    let grid = spec.grid().unwrap();
    let gt = &tree.traces[0];
    let init = curve_from(&grid, &gt.points);
    let dirs = DirectionSet::new(500).unwrap();
    let mut oracle = OraclePredictor::new(&tree).unwrap();
    let cfg = TracerConfig::for_spacing(grid.min_spacing());
    let SnakeOutcome::Accepted { trace, .. } =
        trace_snake(&init, &vol, &mut oracle, &dirs, &cfg, &Registry::default()).unwrap()
    else {
        panic!("rejected");
    };
    let covered = gt
        .points
        .iter()
        .zip(&gt.radii)
        .filter(|(q, r)| trace.points.iter().any(|p| p.dist(**q) < **r))
        .count();
    assert!(covered as f64 >= 0.95 * gt.len() as f64);
}

#[test]
fn background_seed_is_rejected() {
    let (spec, _tree, vol) = single_branch(3);
    let grid = spec.grid().unwrap();
    // three voxels in a corner far away from the vessel
    let voxels = vec![[10, 10, 85], [11, 10, 85], [12, 10, 85]];
    let points = voxels.iter().map(|v| grid.voxel_center(v[0], v[1], v[2])).collect();
    let init = InitialCurve { id: 4, voxels, points };
    let dirs = DirectionSet::new(500).unwrap();
    let cfg = TracerConfig::for_spacing(grid.min_spacing());
    let out = trace_snake(
        &init,
        &vol,
        &mut AnalyticPredictor::default(),
        &dirs,
        &cfg,
        &Registry::default(),
    )
    .unwrap();
    assert!(matches!(out, SnakeOutcome::Rejected { id: 4, .. }), "{out:?}");
}

#[test]
fn zero_iterations_returns_resampled_input() {
    let (spec, tree, vol) = single_branch(3);
    let grid = spec.grid().unwrap();
    let gt = &tree.traces[0];
    let init = curve_from(&grid, &gt.points[10..60]);
    let dirs = DirectionSet::new(500).unwrap();
    let cfg = TracerConfig {
        max_iters_per_end: 0,
        ..TracerConfig::for_spacing(grid.min_spacing())
    };
    let mut oracle = OraclePredictor::new(&tree).unwrap();
    let SnakeOutcome::Accepted { trace, collisions } =
        trace_snake(&init, &vol, &mut oracle, &dirs, &cfg, &Registry::default()).unwrap()
    else {
        panic!("rejected");
    };
    assert!(collisions.is_empty());
    assert_eq!(trace.status(), TraceStatus::TerminatedMaxIters);
    assert_eq!(trace.ends, [TraceStatus::TerminatedMaxIters; 2]);
    assert_eq!(trace.points[0], init.points[0]);
    assert_eq!(trace.points.last(), init.points.last());
    let expected = Trace::with_uniform_radius(0, init.points.clone(), 1.0)
        .resample(cfg.resample_spacing_mm)
        .unwrap();
    assert_eq!(trace.points, expected.points);
}

struct Uniform;

impl Predictor<f64> for Uniform {
    fn predict(
        &mut self,
        _: &EndpointQuery<'_, f64>,
        dirs: &DirectionSet<f64>,
    ) -> Result<Prediction<f64>, PredictorError> {
        Ok(Prediction::uniform(1.0, dirs.len()))
    }

    fn name(&self) -> &'static str {
        "uniform"
    }
}

#[test]
fn uniform_prediction_stops_both_ends_at_once() {
    let (spec, tree, vol) = single_branch(3);
    let grid = spec.grid().unwrap();
    let init = curve_from(&grid, &tree.traces[0].points[20..60]);
    let dirs = DirectionSet::new(500).unwrap();
    assert!((normalized_entropy(&Prediction::<f64>::uniform(1.0, 500).magnitudes).unwrap() - 1.0).abs() < 1e-9);
    let cfg = TracerConfig::for_spacing(grid.min_spacing());
    let t = Trace::with_uniform_radius(0, init.points.clone(), 1.0);
    let (next, c) = evolve_step(&t, &vol, &mut Uniform, &dirs, &cfg, &Registry::default()).unwrap();
    assert!(c.is_empty());
    assert_eq!(next.ends, [TraceStatus::TerminatedLowConfidence; 2]);
    assert_eq!(next.points[0], t.points[0]);
    assert_eq!(next.points.last(), t.points.last());
}

#[test]
fn centerline_beats_shifted_copy() {
    let (spec, tree, vol) = single_branch(8);
    let cfg = TracerConfig::for_spacing(spec.grid().unwrap().min_spacing());
    let gt = &tree.traces[0];
    let shift = Vec3::new(0.0, 0.0, 4.0 * spec.radius_range_mm.1);
    let shifted = Trace::with_uniform_radius(0, gt.points.iter().map(|p| *p + shift).collect(), 1.0);
    assert!(external_energy(gt, &vol, &cfg) < external_energy(&shifted, &vol, &cfg));
}

#[test]
fn each_end_grows_at_most_one_step() {
    let (spec, tree, vol) = single_branch(13);
    let grid = spec.grid().unwrap();
    let gt = &tree.traces[0];
    let mid = gt.len() / 2;
    let dirs = DirectionSet::new(500).unwrap();
    let cfg = TracerConfig::for_spacing(grid.min_spacing());
    let mut oracle = OraclePredictor::new(&tree).unwrap();
    let mut t = Trace::with_uniform_radius(0, curve_from(&grid, &gt.points[mid - 5..=mid + 5]).points, 1.0);
    for _ in 0..40 {
        let (next, _) = evolve_step(&t, &vol, &mut oracle, &dirs, &cfg, &Registry::default()).unwrap();
        let growth_0 = next.points[0].dist(t.points[0]);
        let growth_1 = next.points.last().unwrap().dist(*t.points.last().unwrap());

        assert!(growth_0 <= cfg.gamma_factor * next.radii[0] + 1e-9);
        assert!(growth_1 <= cfg.gamma_factor * next.radii.last().unwrap() + 1e-9);

        t = next;
    }
}

#[test]
fn covered_curves_are_skipped_in_both_modes() {
    let (spec, tree, vol) = single_branch(21);
    let grid = spec.grid().unwrap();
    let gt = &tree.traces[0];
    let curves = vec![
        InitialCurve {
            id: 0,
            ..curve_from(&grid, &gt.points[5..40])
        },
        InitialCurve {
            id: 1,
            ..curve_from(&grid, &gt.points[60..120])
        },
    ];
    let dirs = DirectionSet::new(500).unwrap();
    let cfg = TracerConfig::for_spacing(grid.min_spacing());
    let mut oracle = OraclePredictor::new(&tree).unwrap();
    let a = trace_all(&curves, &vol, &mut oracle, &dirs, &cfg).unwrap();
    let b = trace_all(&curves, &vol, &mut oracle.clone(), &dirs, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mode, OrderMode::Sequential);
    // the longer curve goes first and grows over the whole branch
    assert_eq!(a.traces.len(), 1);
    assert_eq!(a.traces[0].id, 1);
    assert_eq!(a.rejected, vec![0]);

    let p = trace_all_parallel(&curves, &vol, &oracle, &dirs, &cfg).unwrap();
    assert_eq!(p.mode, OrderMode::Parallel);
    assert_eq!(p.traces.len(), 1);
    assert_eq!(p.traces[0].id, 1);
    assert_eq!(p.rejected, vec![0]);
}

#[test]
fn growing_end_stops_on_accepted_trace() {
    let (spec, tree, vol) = single_branch(21);
    let grid = spec.grid().unwrap();
    let gt = &tree.traces[0];
    let mut registry = Registry::default();
    let mut accepted = gt.clone();
    accepted.id = 9;
    accepted.points = gt.points[100..140].to_vec();
    accepted.radii = gt.radii[100..140].to_vec();
    registry.add(accepted);
    let dirs = DirectionSet::new(500).unwrap();
    let cfg = TracerConfig::for_spacing(grid.min_spacing());
    let mut oracle = OraclePredictor::new(&tree).unwrap();
    let init = InitialCurve {
        id: 2,
        ..curve_from(&grid, &gt.points[40..70])
    };
    let SnakeOutcome::Accepted { trace, collisions } =
        trace_snake(&init, &vol, &mut oracle, &dirs, &cfg, &registry).unwrap()
    else {
        panic!("rejected");
    };
    assert_eq!(trace.ends[1], TraceStatus::TerminatedCollision);
    assert_eq!(collisions.len(), 1);
    assert_eq!((collisions[0].trace, collisions[0].end, collisions[0].other), (2, 1, 9));
    // the end stopped at the boundary of the other trace, not beyond it
    let end = *trace.points.last().unwrap();
    assert!(end.dist(gt.points[100]) < 3.0 * spec.radius_range_mm.1);
}

fn energy(t: &[Vec3<f64>], vol: &Volume3<f64>, cfg: &TracerConfig<f64>) -> f64 {
    let tr = Trace::with_uniform_radius(0, t.to_vec(), 1.0);
    internal_energy(&tr, cfg).unwrap() + external_energy(&tr, vol, cfg)
}

#[test]
fn relaxation_never_increases_energy() {
    let (spec, tree, vol) = single_branch(17);
    let cfg = TracerConfig::for_spacing(spec.grid().unwrap().min_spacing());
    let gt = &tree.traces[0];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let a = rng.random_range(0..gt.len() - 12);
        let n = rng.random_range(4..12);
        let jitter = rng.random_range(0.0..2.0);
        let mut pts: Vec<Vec3<f64>> = gt.points[a..a + n]
            .iter()
            .map(|p| {
                *p + Vec3::new(
                    rng.random_range(-jitter..=jitter),
                    rng.random_range(-jitter..=jitter),
                    rng.random_range(-jitter..=jitter),
                )
            })
            .collect();
        for _ in 0..5 {
            let e0 = energy(&pts, &vol, &cfg);
            let ends = (pts[0], *pts.last().unwrap());
            relax(&mut pts, &vol, &cfg);
            assert!(energy(&pts, &vol, &cfg) <= e0);
            assert_eq!((pts[0], *pts.last().unwrap()), ends);
        }
    }
}

proptest! {
    #[test]
    fn entropy_is_normalised(raw in prop::collection::vec(0.0f64..1.0, 2..600)) {
        let s: f64 = raw.iter().sum();
        prop_assume!(s > 1e-9);
        let k: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let h = normalized_entropy(&k).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
    }

    #[test]
    fn stretch_force_ignores_outward_scale(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let dirs = DirectionSet::<f64>::new(64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let pred = Prediction { radius_mm: 1.0, magnitudes: raw.iter().map(|x| x / s).collect() };
        let out = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        prop_assume!(out.norm() > 1e-3);
        let u = out.normalized().unwrap();
        prop_assert_eq!(
            snaketrace::snake::stretch_force(&pred, u, &dirs),
            snaketrace::snake::stretch_force(&pred, u * scale, &dirs)
        );
    }
}
