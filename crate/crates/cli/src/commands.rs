use std::fmt;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use snaketrace::io::TraceFile;
use snaketrace::phantom::{generate_tree, rasterize};
use snaketrace::pipeline::{
    eval_stage, parse_kv, propose_stage, touching_pairs, trace_stage, tree_stage, ConfigError, PipelineConfig,
    StageError,
};
use snaketrace::predictor::{read_request, write_response, AnalyticPredictor, DirectionSet};
use snaketrace::proposal::{distance_map, DistanceMap};
use snaketrace::volume::Polarity;
use snaketrace::{InitialCurve, PhantomSpec, Trace, VesselTree, Volume};

use crate::figures::write_figures;
use crate::files::{ensure_dir, read_text, read_traces, read_volume, write_text, write_traces, write_volume};
use crate::manifest::{RunManifest, StageTiming};
use crate::report::{write_csv, ReportRow};
use crate::ConfigArgs;

/// A failed command: bad configuration (exit 2) or a failing stage (exit 3).
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Stage(&'static str, anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Stage(..) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "bad config: {e:#}"),
            Failure::Stage(s, e) => write!(f, "{s} stage failed: {e:#}"),
        }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        match e {
            StageError::Config(c) => Failure::Config(c.into()),
            other => Failure::Stage(other.stage(), other.into()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn stage(name: &'static str) -> impl Fn(anyhow::Error) -> Failure {
    move |e| Failure::Stage(name, e)
}

fn split_set(s: &str) -> Result<(&str, &str), Failure> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| config_err(anyhow::anyhow!("--set expects KEY=VALUE, got {s:?}")))
}

pub fn load_config(args: &ConfigArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &args.config {
        let text = read_text(path).map_err(config_err)?;
        cfg.apply_text(&text)
            .map_err(|e| config_err(anyhow::Error::from(e).context(path.display().to_string())))?;
    }
    for s in &args.set {
        let (k, v) = split_set(s)?;
        cfg.set(k, v).map_err(config_err)?;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn phantom_set(spec: &mut PhantomSpec, key: &str, v: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::Value {
        key: key.into(),
        msg: format!("cannot parse {v:?}"),
    };
    let f = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let triple = |s: &str| -> Result<[f64; 3], ConfigError> {
        let parts: Vec<f64> = s.split(',').map(f).collect::<Result<_, _>>()?;
        match parts[..] {
            [a] => Ok([a; 3]),
            [a, b, c] => Ok([a, b, c]),
            _ => Err(bad()),
        }
    };
    match key {
        "seed" => spec.seed = v.parse().map_err(|_| bad())?,
        "dims" => {
            let d = triple(v)?;
            if d.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
                return Err(bad());
            }
            spec.dims = d.map(|x| x as usize);
        }
        "spacing_mm" => spec.spacing_mm = triple(v)?,
        "n_terminal_branches" => spec.n_terminal_branches = v.parse().map_err(|_| bad())?,
        "radius_min_mm" => spec.radius_range_mm.0 = f(v)?,
        "radius_max_mm" => spec.radius_range_mm.1 = f(v)?,
        "foreground_mean" => spec.foreground_mean = f(v)?,
        "background_mean" => spec.background_mean = f(v)?,
        "polarity" => spec.polarity = Polarity::parse(v).ok_or_else(bad)?,
        "noise_sigma" => spec.noise_sigma = f(v)?,
        "min_branch_len_mm" => spec.min_branch_len_mm = f(v)?,
        _ => return Err(ConfigError::UnknownKey(key.into())),
    }
    Ok(())
}

pub fn phantom(spec_path: Option<&Path>, set: &[String], out: &Path) -> Outcome {
    let mut spec = PhantomSpec::default();
    if let Some(p) = spec_path {
        let text = read_text(p).map_err(config_err)?;
        for (k, v) in parse_kv(&text).map_err(config_err)? {
            phantom_set(&mut spec, &k, &v).map_err(config_err)?;
        }
    }
    for s in set {
        let (k, v) = split_set(s)?;
        phantom_set(&mut spec, k, v).map_err(config_err)?;
    }
    spec.validate().map_err(config_err)?;
    let tree = generate_tree(&spec).map_err(|e| Failure::Stage("phantom", e.into()))?;
    let vol = rasterize(&tree, &spec).map_err(|e| Failure::Stage("phantom", e.into()))?;
    let map = distance_map(&tree.traces, vol.grid()).map_err(|e| Failure::Stage("phantom", e.into()))?;
    ensure_dir(out).map_err(stage("phantom"))?;
    write_volume(&out.join("volume.dvol"), &vol).map_err(stage("phantom"))?;
    write_volume(&out.join("gt_distance.dvol"), &map.to_volume()).map_err(stage("phantom"))?;
    write_traces(
        &out.join("gt.swc"),
        &TraceFile::new(VesselTree::from_ground_truth(&tree)),
    )
    .map_err(stage("phantom"))?;
    println!(
        "phantom seed {}: {} traces, {} points -> {}",
        spec.seed,
        tree.len(),
        tree.point_count(),
        out.display()
    );
    Ok(())
}

fn read_map(path: &Path) -> anyhow::Result<DistanceMap<f64>> {
    Ok(DistanceMap::from_volume_clamped(&read_volume(path)?))
}

fn curves_to_file(curves: &[InitialCurve], radius: f64) -> TraceFile<f64> {
    let traces: Vec<Trace> = curves
        .iter()
        .map(|c| Trace::with_uniform_radius(c.id, c.points.clone(), radius))
        .collect();
    TraceFile::new(VesselTree::singletons(&traces))
}

pub fn propose(map: Option<&Path>, gt: Option<&Path>, volume: Option<&Path>, cfg: &ConfigArgs, out: &Path) -> Outcome {
    let cfg = load_config(cfg)?;
    let map = map.map(read_map).transpose().map_err(stage("propose"))?;
    let gt = gt.map(read_traces).transpose().map_err(stage("propose"))?;
    let grid = match (&map, volume) {
        (Some(m), _) => *m.grid(),
        (None, Some(v)) => *read_volume(v).map_err(stage("propose"))?.grid(),
        (None, None) => return Err(StageError::NoProposalSource.into()),
    };
    let curves = propose_stage(&grid, map.as_ref(), gt.as_ref().map(|f| &f.tree), &cfg)?;
    write_traces(out, &curves_to_file(&curves, grid.min_spacing())).map_err(stage("propose"))?;
    println!("{} initial curves -> {}", curves.len(), out.display());
    Ok(())
}

fn file_to_curves(file: &TraceFile<f64>, vol: &Volume) -> Vec<InitialCurve> {
    file.traced()
        .into_iter()
        .map(|t| InitialCurve {
            id: t.id,
            voxels: t.points.iter().filter_map(|p| vol.grid().nearest_voxel(*p)).collect(),
            points: t.points,
        })
        .collect()
}

pub fn trace(volume: &Path, curves: &Path, gt: Option<&Path>, cfg: &ConfigArgs, out: &Path) -> Outcome {
    let cfg = load_config(cfg)?;
    let vol = read_volume(volume).map_err(stage("trace"))?;
    let curves = file_to_curves(&read_traces(curves).map_err(stage("trace"))?, &vol);
    let gt = gt.map(read_traces).transpose().map_err(stage("trace"))?;
    let tracing = trace_stage(&curves, &vol, gt.as_ref().map(|f| &f.tree), &cfg)?;
    let file = TraceFile {
        tree: VesselTree::singletons(&tracing.traces),
        touching: touching_pairs(&tracing),
    };
    write_traces(out, &file).map_err(stage("trace"))?;
    println!(
        "{} traces accepted, {} curves rejected ({} mode) -> {}",
        tracing.traces.len(),
        tracing.rejected.len(),
        tracing.mode.as_str(),
        out.display()
    );
    Ok(())
}

pub fn tree(volume: &Path, traces: &Path, cfg: &ConfigArgs, out: &Path) -> Outcome {
    let cfg = load_config(cfg)?;
    let vol = read_volume(volume).map_err(stage("tree"))?;
    let file = read_traces(traces).map_err(stage("tree"))?;
    let tree = tree_stage(&file.traced(), &file.touching, &vol, &cfg)?;
    let n = tree.component_count();
    write_traces(
        out,
        &TraceFile {
            tree,
            touching: file.touching,
        },
    )
    .map_err(stage("tree"))?;
    println!("{n} trees -> {}", out.display());
    Ok(())
}

fn scan_name(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "scan".into(), |s| s.to_string_lossy().into_owned())
}

pub fn eval(pred: &Path, gt: &Path, cfg: &ConfigArgs, out: Option<&Path>) -> Outcome {
    let cfg = load_config(cfg)?;
    let p = read_traces(pred).map_err(stage("eval"))?;
    let g = read_traces(gt).map_err(stage("eval"))?;
    let report = eval_stage(&p.tree, &g.tree, &cfg)?;
    let row = ReportRow::new(&scan_name(pred), &report);
    if let Some(out) = out {
        write_csv(out, std::slice::from_ref(&row)).map_err(stage("eval"))?;
    }
    print!("{}", row.summary());
    Ok(())
}

#[derive(Args, Clone, Debug)]
pub struct PipelineArgs {
    /// Input volume (DVOL).
    #[arg(long, required_unless_present = "replay")]
    pub volume: Option<PathBuf>,
    /// Centreline distance map (DVOL) to propose curves from.
    #[arg(long)]
    pub distance_map: Option<PathBuf>,
    /// Ground-truth traces: oracle predictions, fallback proposals, evaluation.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Repeat the run recorded in a manifest (inputs must be unchanged).
    #[arg(long, conflicts_with_all = ["volume", "distance_map", "gt", "config", "set"])]
    pub replay: Option<PathBuf>,
}

pub fn pipeline(args: &PipelineArgs) -> Outcome {
    let (cfg, volume, map_path, gt_path) = match &args.replay {
        Some(m) => {
            let man = RunManifest::load(m).map_err(config_err)?;
            man.verify_inputs().map_err(config_err)?;
            let cfg = PipelineConfig::from_text(&man.config_text()).map_err(config_err)?;
            let input = |role: &str| man.inputs.get(role).map(|r| r.path.clone());
            let volume = input("volume").ok_or_else(|| config_err(anyhow::anyhow!("manifest has no volume input")))?;
            (cfg, volume, input("distance_map"), input("gt"))
        }
        None => (
            load_config(&args.config)?,
            args.volume.clone().expect("clap requires --volume"),
            args.distance_map.clone(),
            args.gt.clone(),
        ),
    };
    if map_path.is_none() && gt_path.is_none() {
        return Err(StageError::NoProposalSource.into());
    }

    let mut man = RunManifest::new(
        "pipeline",
        cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        cfg.mode.as_str(),
    );
    man.add_input("volume", &volume).map_err(stage("load"))?;
    for (role, p) in [("distance_map", &map_path), ("gt", &gt_path)] {
        if let Some(p) = p {
            man.add_input(role, p).map_err(stage("load"))?;
        }
    }

    let t0 = Instant::now();
    let vol = read_volume(&volume).map_err(stage("load"))?;
    let map = map_path.as_deref().map(read_map).transpose().map_err(stage("load"))?;
    let gt = gt_path.as_deref().map(read_traces).transpose().map_err(stage("load"))?;
    let gt_tree = gt.as_ref().map(|f| &f.tree);
    let mut timings = vec![("load", t0.elapsed().as_secs_f64())];

    let t0 = Instant::now();
    let curves = propose_stage(vol.grid(), map.as_ref(), gt_tree, &cfg)?;
    timings.push(("propose", t0.elapsed().as_secs_f64()));
    let t0 = Instant::now();
    let tracing = trace_stage(&curves, &vol, gt_tree, &cfg)?;
    timings.push(("trace", t0.elapsed().as_secs_f64()));
    let t0 = Instant::now();
    let touching = touching_pairs(&tracing);
    let tree = tree_stage(&tracing.traces, &touching, &vol, &cfg)?;
    timings.push(("tree", t0.elapsed().as_secs_f64()));

    ensure_dir(&args.out).map_err(stage("write"))?;
    let out = &args.out;
    write_traces(
        &out.join("tree.swc"),
        &TraceFile {
            tree: tree.clone(),
            touching,
        },
    )
    .map_err(stage("write"))?;
    man.outputs.push("tree.swc".into());

    let mut summary = format!(
        "initial curves {}\naccepted traces {}\nrejected curves {}\ntrees {}\norder mode {}\n",
        curves.len(),
        tracing.traces.len(),
        tracing.rejected.len(),
        tree.component_count(),
        tracing.mode.as_str()
    );
    if let Some(gt) = gt_tree {
        let t0 = Instant::now();
        let report = eval_stage(&tree, gt, &cfg)?;
        timings.push(("eval", t0.elapsed().as_secs_f64()));
        let row = ReportRow::new(&scan_name(&volume), &report);
        write_csv(&out.join("report.csv"), std::slice::from_ref(&row)).map_err(stage("write"))?;
        man.outputs.push("report.csv".into());
        summary.push_str(&row.summary());
    }
    write_text(&out.join("summary.txt"), &summary).map_err(stage("write"))?;
    man.outputs.push("summary.txt".into());
    man.outputs
        .extend(write_figures(out, &vol, &tree).map_err(stage("write"))?);
    man.outputs.push("manifest.json".into());
    man.timings = timings
        .into_iter()
        .map(|(s, t)| StageTiming {
            stage: s.into(),
            seconds: t,
        })
        .collect();
    man.save(&out.join("manifest.json")).map_err(stage("write"))?;
    print!("{summary}");
    Ok(())
}

/// Answers prediction requests on stdin with the analytic predictor until EOF.
pub fn predictor_server(polarity: &str) -> Outcome {
    let polarity =
        Polarity::parse(polarity).ok_or_else(|| config_err(anyhow::anyhow!("unknown polarity {polarity:?}")))?;
    let predictor = AnalyticPredictor::new(polarity);
    let mut input = BufReader::new(std::io::stdin().lock());
    let mut output = BufWriter::new(std::io::stdout().lock());
    let mut dirs: Option<DirectionSet<f64>> = None;
    let fail = |e: anyhow::Error| Failure::Stage("predictor", e);
    while let Some(req) = read_request(&mut input).map_err(|e| fail(e.into()))? {
        if dirs.as_ref().is_none_or(|d| d.len() != req.directions) {
            dirs = Some(DirectionSet::new(req.directions).map_err(|e| fail(e.into()))?);
        }
        let pred = predictor.predict_patch(&req.to_patch::<f64>(), dirs.as_ref().unwrap());
        write_response(&mut output, &pred).map_err(|e| fail(e.into()))?;
        output.flush().map_err(|e| fail(e.into()))?;
    }
    Ok(())
}
