//! SWC-style trace files: one point per line, `id type x y z radius parent`,
//! with `# trace <id> <kind> <start> <end>` comments opening each trace and
//! `# collision <a> <b>` comments listing touching trace pairs.
//!
//! Points of a trace are written in polyline order. Each trace hangs off the
//! point it is linked to, so parents inside a trace may point forward to the
//! next line when the trace is entered in its middle.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use super::IoError;
use crate::geom::Vec3;
use crate::real::Real;
use crate::trace::{Trace, TraceStatus};
use crate::tree::{SegmentKind, TreeError, TreeLink, VesselTree};

pub const TYPE_TRACE: i64 = 3;
pub const TYPE_GAP: i64 = 6;

/// A parsed trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile<T> {
    pub tree: VesselTree<T>,
    /// Touching trace-id pairs, `(lower, higher)`.
    pub touching: Vec<(usize, usize)>,
}

impl<T: Real> TraceFile<T> {
    pub fn new(tree: VesselTree<T>) -> Self {
        Self {
            tree,
            touching: Vec::new(),
        }
    }

    /// Traced segments only, without gap fills.
    pub fn traced(&self) -> Vec<Trace<T>> {
        self.tree
            .traces
            .iter()
            .zip(&self.tree.kinds)
            .filter(|(_, k)| **k == SegmentKind::Traced)
            .map(|(t, _)| t.clone())
            .collect()
    }
}

fn kind_str(k: SegmentKind) -> &'static str {
    match k {
        SegmentKind::Traced => "traced",
        SegmentKind::Gap => "gap",
    }
}

pub fn write_swc<T: Real>(w: &mut impl Write, file: &TraceFile<T>) -> Result<(), IoError> {
    let tree = &file.tree;
    if !tree.is_forest() {
        return Err(TreeError::Config("trace links contain a cycle".into()).into());
    }
    writeln!(w, "# snaketrace trace file")?;
    writeln!(w, "# columns: id type x_mm y_mm z_mm radius_mm parent_id")?;
    let mut touching = file.touching.clone();
    touching.iter_mut().for_each(|p| *p = (p.0.min(p.1), p.0.max(p.1)));
    touching.sort_unstable();
    touching.dedup();
    for (a, b) in touching {
        writeln!(w, "# collision {a} {b}")?;
    }

    let n = tree.traces.len();
    let neighbours: Vec<_> = (0..n).map(|i| tree.neighbours(i)).collect();
    let mut base: Vec<Option<usize>> = vec![None; n];
    let mut next = 1usize;
    for root in 0..n {
        if base[root].is_some() {
            continue;
        }
        let mut queue = VecDeque::from([(root, 0usize, -1i64)]);
        base[root] = Some(next);
        next += tree.traces[root].len();
        while let Some((s, entry, parent)) = queue.pop_front() {
            let t = &tree.traces[s];
            let b = base[s].unwrap();
            let ty = match tree.kinds[s] {
                SegmentKind::Traced => TYPE_TRACE,
                SegmentKind::Gap => TYPE_GAP,
            };
            writeln!(
                w,
                "# trace {} {} {} {}",
                t.id,
                kind_str(tree.kinds[s]),
                t.ends[0].as_str(),
                t.ends[1].as_str()
            )?;
            for (k, (p, r)) in t.points.iter().zip(&t.radii).enumerate() {
                let par = match k.cmp(&entry) {
                    std::cmp::Ordering::Equal => parent,
                    std::cmp::Ordering::Greater => (b + k - 1) as i64,
                    std::cmp::Ordering::Less => (b + k + 1) as i64,
                };
                writeln!(
                    w,
                    "{} {} {} {} {} {} {}",
                    b + k,
                    ty,
                    p.x.to_f64_lossy(),
                    p.y.to_f64_lossy(),
                    p.z.to_f64_lossy(),
                    r.to_f64_lossy(),
                    par
                )?;
            }
            for &(own, other, other_point) in &neighbours[s] {
                if base[other].is_none() {
                    base[other] = Some(next);
                    next += tree.traces[other].len();
                    queue.push_back((other, other_point, (b + own) as i64));
                }
            }
        }
    }
    Ok(())
}

struct Node {
    line: usize,
    block: usize,
    index: usize,
    parent: i64,
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { line, msg: msg.into() }
}

pub fn read_swc<T: Real>(r: &mut impl BufRead) -> Result<TraceFile<T>, IoError> {
    let mut traces: Vec<Trace<T>> = Vec::new();
    let mut kinds = Vec::new();
    let mut headed: Vec<bool> = Vec::new();
    let mut touching = Vec::new();
    let mut nodes: HashMap<u64, Node> = HashMap::new();
    let mut order: Vec<u64> = Vec::new();
    let mut current: Option<usize> = None;
    let mut prev_id: Option<u64> = None;

    let mut line_no = 0;
    let mut buf = String::new();
    loop {
        buf.clear();
        if r.read_line(&mut buf)? == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            return Err(parse_err(line_no, "truncated: missing end of line"));
        }
        let line = buf.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            let f: Vec<&str> = c.split_whitespace().collect();
            match f.first().copied() {
                Some("trace") => {
                    let id = f
                        .get(1)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(line_no, "trace comment without an id"))?;
                    let kind = match f.get(2).copied() {
                        None | Some("traced") => SegmentKind::Traced,
                        Some("gap") => SegmentKind::Gap,
                        Some(o) => return Err(parse_err(line_no, format!("unknown trace kind {o:?}"))),
                    };
                    let mut t = Trace::with_uniform_radius(id, Vec::new(), T::one());
                    for e in 0..2 {
                        if let Some(s) = f.get(3 + e) {
                            t.ends[e] = TraceStatus::parse(s)
                                .ok_or_else(|| parse_err(line_no, format!("unknown status {s:?}")))?;
                        }
                    }
                    traces.push(t);
                    kinds.push(kind);
                    headed.push(true);
                    current = Some(traces.len() - 1);
                }
                Some("collision") => {
                    let ab: Vec<usize> = f[1..].iter().filter_map(|s| s.parse().ok()).collect();
                    if ab.len() != 2 || f.len() != 3 {
                        return Err(parse_err(line_no, "collision comment needs two trace ids"));
                    }
                    touching.push((ab[0].min(ab[1]), ab[0].max(ab[1])));
                }
                _ => {}
            }
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(parse_err(line_no, format!("expected 7 columns, found {}", f.len())));
        }
        let id: u64 = f[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad node id {:?}", f[0])))?;
        let ty: i64 = f[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad type {:?}", f[1])))?;
        let mut v = [0.0f64; 4];
        for (k, s) in f[2..6].iter().enumerate() {
            v[k] = s.parse().map_err(|_| parse_err(line_no, format!("bad number {s:?}")))?;
            if !v[k].is_finite() {
                return Err(parse_err(line_no, format!("non-finite value {s:?}")));
            }
        }
        if v[3] <= 0.0 {
            return Err(parse_err(line_no, format!("non-positive radius {}", v[3])));
        }
        let parent: i64 = f[6]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad parent {:?}", f[6])))?;
        if parent < -1 || parent == id as i64 {
            return Err(parse_err(line_no, format!("invalid parent {parent}")));
        }

        // Without trace comments, unbranched runs in file order become traces.
        let continues = current.is_some_and(|c| headed[c] || (prev_id.is_some_and(|p| p as i64 == parent)));
        if !continues {
            let kind = if ty == TYPE_GAP {
                SegmentKind::Gap
            } else {
                SegmentKind::Traced
            };
            traces.push(Trace::with_uniform_radius(usize::MAX, Vec::new(), T::one()));
            kinds.push(kind);
            headed.push(false);
            current = Some(traces.len() - 1);
        }
        let block = current.unwrap();
        let t = &mut traces[block];
        let node = Node {
            line: line_no,
            block,
            index: t.points.len(),
            parent,
        };
        t.points.push(Vec3::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2])));
        t.radii.push(T::lit(v[3]));
        if nodes.insert(id, node).is_some() {
            return Err(parse_err(line_no, format!("duplicate node id {id}")));
        }
        order.push(id);
        prev_id = Some(id);
    }

    let mut next_id = traces
        .iter()
        .filter(|t| t.id != usize::MAX)
        .map(|t| t.id + 1)
        .max()
        .unwrap_or(0);
    for t in traces.iter_mut().filter(|t| t.id == usize::MAX) {
        t.id = next_id;
        next_id += 1;
    }

    let mut links = Vec::new();
    for id in &order {
        let n = &nodes[id];
        if n.parent < 0 {
            continue;
        }
        let p = nodes
            .get(&(n.parent as u64))
            .ok_or_else(|| parse_err(n.line, format!("parent {} not found", n.parent)))?;
        if p.block != n.block {
            links.push(TreeLink {
                a: p.block,
                a_point: p.index,
                b: n.block,
                b_point: n.index,
            });
        }
    }
    let tree = VesselTree { traces, kinds, links };
    if !tree.is_forest() {
        return Err(parse_err(line_no, "trace links contain a cycle"));
    }
    Ok(TraceFile { tree, touching })
}
