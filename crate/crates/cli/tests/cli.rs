use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use snaketrace::io::{read_dvol, read_swc};

fn snaketrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snaketrace"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn make_phantom(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["phantom", "--set", "dims=64", "--set", "seed=2", "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = snaketrace(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn phantom_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = make_phantom(dir.path(), "a", &[]);
    let b = make_phantom(dir.path(), "b", &[]);
    for f in ["volume.dvol", "gt_distance.dvol", "gt.swc"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = make_phantom(dir.path(), "c", &["--set", "seed=3"]);
    assert_ne!(fs::read(a.join("gt.swc")).unwrap(), fs::read(c.join("gt.swc")).unwrap());
}

#[test]
fn phantom_artifacts_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let p = make_phantom(dir.path(), "p", &["--set", "n_terminal_branches=1"]);
    let vol = read_dvol::<f64>(&mut fs::read(p.join("volume.dvol")).unwrap().as_slice()).unwrap();
    assert_eq!(vol.grid().dims, [64; 3]);
    let map = read_dvol::<f64>(&mut fs::read(p.join("gt_distance.dvol")).unwrap().as_slice()).unwrap();
    assert!(map.voxels().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(map.voxels().iter().any(|v| *v > 0.9));
    let gt = read_swc::<f64>(&mut fs::read(p.join("gt.swc")).unwrap().as_slice()).unwrap();
    assert_eq!(gt.tree.traces.len(), 1);
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = make_phantom(dir.path(), "p", &[]);
    let d = |f: &str| dir.path().join(f);
    let run = |args: &[&str]| {
        let o = snaketrace(args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    run(&[
        "propose",
        "--map",
        s(&p.join("gt_distance.dvol")),
        "--out",
        s(&d("curves.swc")),
    ]);
    run(&[
        "trace",
        "--volume",
        s(&p.join("volume.dvol")),
        "--curves",
        s(&d("curves.swc")),
        "--gt",
        s(&p.join("gt.swc")),
        "--out",
        s(&d("traces.swc")),
    ]);
    run(&[
        "tree",
        "--volume",
        s(&p.join("volume.dvol")),
        "--traces",
        s(&d("traces.swc")),
        "--out",
        s(&d("tree.swc")),
    ]);
    let summary = run(&[
        "eval",
        "--pred",
        s(&d("tree.swc")),
        "--gt",
        s(&p.join("gt.swc")),
        "--out",
        s(&d("report.csv")),
    ]);
    assert!(summary.contains("IDS  0"), "{summary}");
    let csv = fs::read_to_string(d("report.csv")).unwrap();
    assert!(csv.starts_with("scan,ov,ai,tp,fn,fp,ids,mota,idf1\n"), "{csv}");
}

#[test]
fn self_evaluation_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let p = make_phantom(dir.path(), "p", &[]);
    let gt = p.join("gt.swc");
    let csv = dir.path().join("r.csv");
    let o = snaketrace(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[1..], ["1.0", "0.0", row[3], "0", "0", "0", "1.0", "1.0"]);
}

#[test]
fn missing_proposal_source_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = make_phantom(dir.path(), "p", &[]);
    let o = snaketrace(&[
        "pipeline",
        "--volume",
        s(&p.join("volume.dvol")),
        "--out",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no proposal source"), "{}", stderr(&o));
}

#[test]
fn bad_configuration_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = make_phantom(dir.path(), "p", &[]);
    let vol = p.join("volume.dvol");
    let out = dir.path().join("run");
    for set in ["tau=2", "no_such_key=1", "alpha", "mode=sideways"] {
        let o = snaketrace(&["pipeline", "--volume", s(&vol), "--out", s(&out), "--set", set]);
        assert_eq!(o.status.code(), Some(2), "{set}: {}", stderr(&o));
    }
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "tau = 0.5\nthis line has no equals sign\n").unwrap();
    let o = snaketrace(&["pipeline", "--volume", s(&vol), "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(
        snaketrace(&["phantom", "--set", "dims=0", "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(snaketrace(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn pipeline_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = make_phantom(dir.path(), "p", &[]);
    let out = dir.path().join("run");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# tracer\ntau = 0.5\npredictor = oracle\n").unwrap();
    let o = snaketrace(&[
        "pipeline",
        "--volume",
        s(&p.join("volume.dvol")),
        "--gt",
        s(&p.join("gt.swc")),
        "--config",
        s(&cfg),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "tree.swc",
        "report.csv",
        "summary.txt",
        "manifest.json",
        "mip_x.pgm",
        "mip_y.pgm",
        "mip_z.pgm",
        "overlay_x.svg",
        "overlay_y.svg",
        "overlay_z.svg",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["tau"], "0.5");
    assert_eq!(manifest["inputs"]["volume"]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["inputs"].get("distance_map").is_none());
    let pgm = fs::read(out.join("mip_z.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
    assert_eq!(pgm.len(), b"P5\n64 64\n255\n".len() + 64 * 64);
}

#[test]
fn replay_refuses_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = make_phantom(dir.path(), "p", &[]);
    let out = dir.path().join("run");
    let o = snaketrace(&[
        "pipeline",
        "--volume",
        s(&p.join("volume.dvol")),
        "--gt",
        s(&p.join("gt.swc")),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut swc = fs::read_to_string(p.join("gt.swc")).unwrap();
    swc.push_str("# edited\n");
    fs::write(p.join("gt.swc"), swc).unwrap();
    let o = snaketrace(&[
        "pipeline",
        "--replay",
        s(&out.join("manifest.json")),
        "--out",
        s(&dir.path().join("again")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("gt.swc"), "{}", stderr(&o));
}

#[test]
fn external_predictor_runs_through_the_bridge() {
    let dir = tempfile::tempdir().unwrap();
    let p = make_phantom(dir.path(), "p", &[]);
    let out = dir.path().join("run");
    let cmd = format!("predictor_cmd={} predictor-server", env!("CARGO_BIN_EXE_snaketrace"));
    let o = snaketrace(&[
        "pipeline",
        "--volume",
        s(&p.join("volume.dvol")),
        "--distance-map",
        s(&p.join("gt_distance.dvol")),
        "--gt",
        s(&p.join("gt.swc")),
        "--set",
        "predictor=external",
        "--set",
        &cmd,
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("IDS"), "{summary}");
}
