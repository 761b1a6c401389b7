//! End-to-end run: propose curves from a distance map, trace them, assemble
//! the tree and, when ground truth is available, evaluate.
//!
//! Configuration is a flat `key = value` text; every key has a default and
//! spacing-dependent values default to the volume's smallest spacing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use thiserror::Error;

use crate::metrics::{evaluate, MatchReport, MetricsError, DEFAULT_MAJORITY};
use crate::predictor::{
    AnalyticPredictor, DirectionSet, ExternalPredictor, OraclePredictor, Predictor, PredictorError,
};
use crate::proposal::{
    distance_map, propose, DistanceMap, InitialCurve, ProposalError, DEFAULT_MIN_CURVE_VOXELS, DEFAULT_TAU,
};
use crate::snake::{trace_all, trace_all_parallel, OrderMode, SnakeError, TracerConfig, TracingOutput};
use crate::trace::Trace;
use crate::tree::{assemble, TreeConfig, TreeError, VesselTree, DEFAULT_GAP_MAX_MM, DEFAULT_SCORE_MIN};
use crate::volume::{Polarity, Volume3, DEFAULT_PATCH_SIDE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key}: {msg}")]
    Value { key: String, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PredictorChoice {
    Oracle,
    Analytic,
    /// Program and arguments of a prediction server.
    External(Vec<String>),
}

/// Which predicted unit carries an identity during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredUnit {
    /// A connected tree: traces joined through gap fills share one identity.
    Component,
    /// Every segment on its own.
    Trace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_factor: f64,
    pub entropy_threshold: f64,
    pub max_iters_per_end: usize,
    /// `None`: the volume's smallest spacing.
    pub resample_spacing_mm: Option<f64>,
    pub min_trace_points: usize,
    /// `None`: a tenth of the volume's smallest spacing.
    pub descent_step: Option<f64>,
    pub intensity_weight: f64,
    pub polarity: Polarity,
    pub directions: usize,
    pub patch_side: usize,
    pub tau: f64,
    pub min_curve_voxels: usize,
    pub score_min: f64,
    pub gap_max_mm: f64,
    /// Build the global tree; off leaves every trace on its own.
    pub tree: bool,
    pub predictor: PredictorChoice,
    pub mode: OrderMode,
    pub majority: f64,
    pub pred_unit: PredUnit,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TracerConfig::<f64>::default();
        Self {
            alpha: t.alpha,
            beta: t.beta,
            gamma_factor: t.gamma_factor,
            entropy_threshold: t.entropy_threshold,
            max_iters_per_end: t.max_iters_per_end,
            resample_spacing_mm: None,
            min_trace_points: t.min_trace_points,
            descent_step: None,
            intensity_weight: t.intensity_weight,
            polarity: Polarity::Bright,
            directions: t.directions,
            patch_side: DEFAULT_PATCH_SIDE,
            tau: DEFAULT_TAU,
            min_curve_voxels: DEFAULT_MIN_CURVE_VOXELS,
            score_min: DEFAULT_SCORE_MIN,
            gap_max_mm: DEFAULT_GAP_MAX_MM,
            tree: true,
            predictor: PredictorChoice::Oracle,
            mode: OrderMode::Sequential,
            majority: DEFAULT_MAJORITY,
            pred_unit: PredUnit::Component,
        }
    }
}

fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V, ConfigError> {
    v.parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        msg: format!("cannot parse {v:?}"),
    })
}

fn auto(key: &str, v: &str) -> Result<Option<f64>, ConfigError> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn bool_value(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.into(),
            msg: format!("expected true or false, got {v:?}"),
        }),
    }
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 22] = [
        "alpha",
        "beta",
        "gamma_factor",
        "entropy_threshold",
        "max_iters_per_end",
        "resample_spacing_mm",
        "min_trace_points",
        "descent_step",
        "intensity_weight",
        "polarity",
        "directions",
        "patch_side",
        "tau",
        "min_curve_voxels",
        "score_min",
        "gap_max_mm",
        "tree",
        "predictor",
        "mode",
        "majority",
        "pred_unit",
        "predictor_cmd",
    ];

    /// Sets one key. `predictor_cmd` holds the whitespace-separated command
    /// of an external predictor and implies `predictor = external`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let bad = |msg: &str| ConfigError::Value {
            key: key.into(),
            msg: msg.into(),
        };
        match key {
            "alpha" => self.alpha = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "gamma_factor" => self.gamma_factor = num(key, v)?,
            "entropy_threshold" => self.entropy_threshold = num(key, v)?,
            "max_iters_per_end" => self.max_iters_per_end = num(key, v)?,
            "resample_spacing_mm" => self.resample_spacing_mm = auto(key, v)?,
            "min_trace_points" => self.min_trace_points = num(key, v)?,
            "descent_step" => self.descent_step = auto(key, v)?,
            "intensity_weight" => self.intensity_weight = num(key, v)?,
            "polarity" => self.polarity = Polarity::parse(v).ok_or_else(|| bad("expected bright or dark"))?,
            "directions" => self.directions = num(key, v)?,
            "patch_side" => self.patch_side = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "min_curve_voxels" => self.min_curve_voxels = num(key, v)?,
            "score_min" => self.score_min = num(key, v)?,
            "gap_max_mm" => self.gap_max_mm = num(key, v)?,
            "tree" => self.tree = bool_value(key, v)?,
            "predictor" => {
                self.predictor = match v {
                    "oracle" => PredictorChoice::Oracle,
                    "analytic" => PredictorChoice::Analytic,
                    "external" => match &self.predictor {
                        PredictorChoice::External(c) => PredictorChoice::External(c.clone()),
                        _ => PredictorChoice::External(Vec::new()),
                    },
                    _ => return Err(bad("expected oracle, analytic or external")),
                }
            }
            "predictor_cmd" => {
                self.predictor = PredictorChoice::External(v.split_whitespace().map(String::from).collect())
            }
            "mode" => self.mode = OrderMode::parse(v).ok_or_else(|| bad("expected sequential or parallel"))?,
            "majority" => self.majority = num(key, v)?,
            "pred_unit" => {
                self.pred_unit = match v {
                    "component" => PredUnit::Component,
                    "trace" => PredUnit::Trace,
                    _ => return Err(bad("expected component or trace")),
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Every key with its current value, in a form [`from_text`](Self::from_text) reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let opt = |o: Option<f64>| o.map_or("auto".to_string(), |v| v.to_string());
        let mut m = BTreeMap::new();
        m.insert("alpha", self.alpha.to_string());
        m.insert("beta", self.beta.to_string());
        m.insert("gamma_factor", self.gamma_factor.to_string());
        m.insert("entropy_threshold", self.entropy_threshold.to_string());
        m.insert("max_iters_per_end", self.max_iters_per_end.to_string());
        m.insert("resample_spacing_mm", opt(self.resample_spacing_mm));
        m.insert("min_trace_points", self.min_trace_points.to_string());
        m.insert("descent_step", opt(self.descent_step));
        m.insert("intensity_weight", self.intensity_weight.to_string());
        m.insert("polarity", self.polarity.as_str().to_string());
        m.insert("directions", self.directions.to_string());
        m.insert("patch_side", self.patch_side.to_string());
        m.insert("tau", self.tau.to_string());
        m.insert("min_curve_voxels", self.min_curve_voxels.to_string());
        m.insert("score_min", self.score_min.to_string());
        m.insert("gap_max_mm", self.gap_max_mm.to_string());
        m.insert("tree", self.tree.to_string());
        let (p, cmd) = match &self.predictor {
            PredictorChoice::Oracle => ("oracle", None),
            PredictorChoice::Analytic => ("analytic", None),
            PredictorChoice::External(c) => ("external", Some(c.join(" "))),
        };
        m.insert("predictor", p.to_string());
        if let Some(c) = cmd {
            m.insert("predictor_cmd", c);
        }
        m.insert("mode", self.mode.as_str().to_string());
        m.insert("majority", self.majority.to_string());
        m.insert(
            "pred_unit",
            match self.pred_unit {
                PredUnit::Component => "component",
                PredUnit::Trace => "trace",
            }
            .to_string(),
        );
        m
    }

    pub fn tracer(&self, min_spacing: f64) -> TracerConfig<f64> {
        TracerConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma_factor: self.gamma_factor,
            entropy_threshold: self.entropy_threshold,
            max_iters_per_end: self.max_iters_per_end,
            resample_spacing_mm: self.resample_spacing_mm.unwrap_or(min_spacing),
            min_trace_points: self.min_trace_points,
            descent_step: self.descent_step.unwrap_or(0.1 * min_spacing),
            intensity_weight: self.intensity_weight,
            polarity: self.polarity,
            directions: self.directions,
            patch_side: self.patch_side,
        }
    }

    pub fn tree_config(&self, min_spacing: f64) -> TreeConfig<f64> {
        TreeConfig {
            score_min: self.score_min,
            gap_max_mm: self.gap_max_mm,
            touch_mm: None,
            gap_spacing_mm: self.resample_spacing_mm.unwrap_or(min_spacing),
        }
    }

    /// Range checks for every field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| {
            Err(ConfigError::Value {
                key: key.into(),
                msg: msg.into(),
            })
        };
        for (k, v) in [
            ("resample_spacing_mm", self.resample_spacing_mm),
            ("descent_step", self.descent_step),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(k, "must be positive");
                }
            }
        }
        if let Err(SnakeError::Config(m)) = self.tracer(1.0).validate() {
            let key = m.split_whitespace().next().unwrap_or("tracer").to_string();
            return Err(ConfigError::Value { key, msg: m });
        }
        if self.max_iters_per_end == 0 {
            return bad("max_iters_per_end", "must be >= 1");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", "must lie in (0, 1]");
        }
        if self.min_curve_voxels < 2 {
            return bad("min_curve_voxels", "must be >= 2");
        }
        if let Err(TreeError::Config(m)) = self.tree_config(1.0).validate() {
            return bad("tree", &m);
        }
        if !(self.majority > 0.0 && self.majority <= 1.0) {
            return bad("majority", "must lie in (0, 1]");
        }
        if matches!(&self.predictor, PredictorChoice::External(c) if c.is_empty()) {
            return bad("predictor_cmd", "external predictor needs a command");
        }
        if self.mode == OrderMode::Parallel && matches!(self.predictor, PredictorChoice::External(_)) {
            return bad("mode", "parallel tracing needs the oracle or analytic predictor");
        }
        Ok(())
    }
}

/// Parses `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("no proposal source: give a distance map or ground truth")]
    NoProposalSource,
    #[error("propose: {0}")]
    Propose(#[from] ProposalError),
    #[error("predictor: {0}")]
    Predictor(#[from] PredictorError),
    #[error("trace: {0}")]
    Trace(#[from] SnakeError),
    #[error("tree: {0}")]
    Tree(#[from] TreeError),
    #[error("eval: {0}")]
    Eval(#[from] MetricsError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
}

impl StageError {
    pub fn stage(&self) -> &'static str {
        match self {
            StageError::NoProposalSource | StageError::Propose(_) => "propose",
            StageError::Predictor(_) | StageError::Trace(_) => "trace",
            StageError::Tree(_) => "tree",
            StageError::Eval(_) => "eval",
            StageError::Config(_) => "config",
        }
    }
}

pub struct PipelineInput<'a> {
    pub volume: &'a Volume3<f64>,
    pub distance_map: Option<&'a DistanceMap<f64>>,
    pub ground_truth: Option<&'a VesselTree<f64>>,
}

pub struct PipelineOutput {
    pub initial_curves: usize,
    pub tracing: TracingOutput<f64>,
    pub tree: VesselTree<f64>,
    pub report: Option<MatchReport<f64>>,
    /// Wall-clock seconds per stage, in run order.
    pub timings: Vec<(&'static str, f64)>,
}

/// Evaluation units for a predicted tree.
pub fn prediction_units(tree: &VesselTree<f64>, unit: PredUnit) -> Vec<Trace<f64>> {
    match unit {
        PredUnit::Component => tree.component_traces(),
        PredUnit::Trace => tree.traces.clone(),
    }
}

fn make_predictor(cfg: &PipelineConfig, gt: Option<&VesselTree<f64>>) -> Result<Box<dyn Predictor<f64>>, StageError> {
    Ok(match &cfg.predictor {
        PredictorChoice::Oracle => {
            let gt = gt.ok_or(PredictorError::EmptyTree)?;
            Box::new(OraclePredictor::new(&gt.to_ground_truth())?)
        }
        PredictorChoice::Analytic => Box::new(AnalyticPredictor::new(cfg.polarity)),
        PredictorChoice::External(cmd) => Box::new(ExternalPredictor::spawn(&cmd[0], &cmd[1..])?),
    })
}

/// Initial curves from a distance map, or from the ground truth's own map.
pub fn propose_stage(
    grid: &crate::volume::Grid<f64>,
    map: Option<&DistanceMap<f64>>,
    gt: Option<&VesselTree<f64>>,
    cfg: &PipelineConfig,
) -> Result<Vec<InitialCurve<f64>>, StageError> {
    let owned;
    let map = match (map, gt) {
        (Some(m), _) => m,
        (None, Some(gt)) => {
            owned = distance_map(&gt.traces, grid)?;
            &owned
        }
        (None, None) => return Err(StageError::NoProposalSource),
    };
    Ok(propose(map, cfg.tau, cfg.min_curve_voxels)?)
}

/// Traces every curve with the configured predictor and order mode.
pub fn trace_stage(
    curves: &[InitialCurve<f64>],
    volume: &Volume3<f64>,
    gt: Option<&VesselTree<f64>>,
    cfg: &PipelineConfig,
) -> Result<TracingOutput<f64>, StageError> {
    cfg.validate()?;
    let tracer = cfg.tracer(volume.grid().min_spacing());
    let dirs = DirectionSet::new(cfg.directions)?;
    Ok(match (cfg.mode, &cfg.predictor) {
        (OrderMode::Parallel, PredictorChoice::Oracle) => {
            let gt = gt.ok_or(PredictorError::EmptyTree)?;
            let p = OraclePredictor::new(&gt.to_ground_truth())?;
            trace_all_parallel(curves, volume, &p, &dirs, &tracer)?
        }
        (OrderMode::Parallel, PredictorChoice::Analytic) => {
            trace_all_parallel(curves, volume, &AnalyticPredictor::new(cfg.polarity), &dirs, &tracer)?
        }
        _ => {
            let mut p = make_predictor(cfg, gt)?;
            trace_all(curves, volume, &mut p, &dirs, &tracer)?
        }
    })
}

/// The global tree over traced snakes, or singletons when the tree is off.
pub fn tree_stage(
    traces: &[Trace<f64>],
    touching: &[(usize, usize)],
    volume: &Volume3<f64>,
    cfg: &PipelineConfig,
) -> Result<VesselTree<f64>, StageError> {
    cfg.validate()?;
    Ok(if cfg.tree {
        assemble(traces, volume, touching, &cfg.tree_config(volume.grid().min_spacing()))?
    } else {
        VesselTree::singletons(traces)
    })
}

pub fn eval_stage(
    pred: &VesselTree<f64>,
    gt: &VesselTree<f64>,
    cfg: &PipelineConfig,
) -> Result<MatchReport<f64>, StageError> {
    Ok(evaluate(
        &prediction_units(pred, cfg.pred_unit),
        &gt.traces,
        cfg.majority,
    )?)
}

/// Trace-id pairs that touched during tracing.
pub fn touching_pairs(tracing: &TracingOutput<f64>) -> Vec<(usize, usize)> {
    tracing.collisions.iter().map(|c| (c.trace, c.other)).collect()
}

/// Runs propose, trace, tree and (with ground truth) eval.
pub fn run(input: &PipelineInput<'_>, cfg: &PipelineConfig) -> Result<PipelineOutput, StageError> {
    cfg.validate()?;
    let mut timings = Vec::new();

    let t0 = Instant::now();
    let curves = propose_stage(input.volume.grid(), input.distance_map, input.ground_truth, cfg)?;
    timings.push(("propose", t0.elapsed().as_secs_f64()));

    let t0 = Instant::now();
    let tracing = trace_stage(&curves, input.volume, input.ground_truth, cfg)?;
    timings.push(("trace", t0.elapsed().as_secs_f64()));

    let t0 = Instant::now();
    let tree = tree_stage(&tracing.traces, &touching_pairs(&tracing), input.volume, cfg)?;
    timings.push(("tree", t0.elapsed().as_secs_f64()));

    let report = match input.ground_truth {
        Some(gt) => {
            let t0 = Instant::now();
            let r = eval_stage(&tree, gt, cfg)?;
            timings.push(("eval", t0.elapsed().as_secs_f64()));
            Some(r)
        }
        None => None,
    };

    Ok(PipelineOutput {
        initial_curves: curves.len(),
        tracing,
        tree,
        report,
        timings,
    })
}
