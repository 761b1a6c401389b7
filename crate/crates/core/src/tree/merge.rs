use std::collections::HashMap;

use petgraph::unionfind::UnionFind;

use super::{ConnectionStats, TreeError};
use crate::phantom::{Attachment, GroundTruthTree};
use crate::real::Real;
use crate::trace::Trace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    /// A traced snake.
    Traced,
    /// A straight segment synthesized to bridge a gap.
    Gap,
}

/// Joins point `a_point` of trace `a` to point `b_point` of trace `b`
/// (indices into [`VesselTree::traces`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TreeLink {
    pub a: usize,
    pub a_point: usize,
    pub b: usize,
    pub b_point: usize,
}

/// Traced and gap-filling segments with the links between them; the link
/// graph over segments is a forest.
#[derive(Clone, Debug, PartialEq)]
pub struct VesselTree<T> {
    pub traces: Vec<Trace<T>>,
    pub kinds: Vec<SegmentKind>,
    pub links: Vec<TreeLink>,
}

impl<T: Real> VesselTree<T> {
    /// Every trace on its own, no links.
    pub fn singletons(traces: &[Trace<T>]) -> Self {
        Self {
            traces: traces.to_vec(),
            kinds: vec![SegmentKind::Traced; traces.len()],
            links: Vec::new(),
        }
    }

    /// Component label per segment: the lowest segment index in its component.
    pub fn components(&self) -> Vec<usize> {
        let mut uf = UnionFind::<usize>::new(self.traces.len());
        for l in &self.links {
            uf.union(l.a, l.b);
        }
        let mut label = HashMap::new();
        (0..self.traces.len())
            .map(|i| *label.entry(uf.find(i)).or_insert(i))
            .collect()
    }

    pub fn component_count(&self) -> usize {
        let c = self.components();
        c.iter().enumerate().filter(|(i, l)| i == *l).count()
    }

    /// `links = segments - components`, i.e. no cycles.
    pub fn is_forest(&self) -> bool {
        self.links.len() + self.component_count() == self.traces.len()
    }

    /// Links touching segment `i`, seen from `i`: `(own point, other segment, other point)`.
    pub fn neighbours(&self, i: usize) -> Vec<(usize, usize, usize)> {
        self.links
            .iter()
            .filter_map(|l| {
                if l.a == i {
                    Some((l.a_point, l.b, l.b_point))
                } else if l.b == i {
                    Some((l.b_point, l.a, l.a_point))
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn total_length(&self) -> T {
        self.traces.iter().map(Trace::length).sum()
    }

    /// One trace per connected component, points concatenated segment by
    /// segment; it takes the id of the component's first segment.
    pub fn component_traces(&self) -> Vec<Trace<T>> {
        let labels = self.components();
        let mut out: Vec<Trace<T>> = Vec::new();
        let mut slot = HashMap::new();
        for (i, t) in self.traces.iter().enumerate() {
            let k = *slot.entry(labels[i]).or_insert_with(|| {
                out.push(Trace::with_uniform_radius(
                    self.traces[labels[i]].id,
                    Vec::new(),
                    T::one(),
                ));
                out.len() - 1
            });
            out[k].points.extend_from_slice(&t.points);
            out[k].radii.extend_from_slice(&t.radii);
        }
        out
    }

    /// The ground-truth tree as segments linked at their attachment points.
    pub fn from_ground_truth(gt: &GroundTruthTree<T>) -> Self {
        let mut tree = Self::singletons(&gt.traces);
        for (child, att) in gt.parents.iter().enumerate() {
            if let Some(a) = att {
                tree.links.push(TreeLink {
                    a: a.parent,
                    a_point: a.point,
                    b: child,
                    b_point: 0,
                });
            }
        }
        tree
    }

    /// Parent links for oracle use: each component is walked from its first
    /// segment; a segment entered at its last point is reversed, one entered
    /// mid-way becomes a root of its own.
    pub fn to_ground_truth(&self) -> GroundTruthTree<T> {
        let n = self.traces.len();
        let mut traces = self.traces.clone();
        let mut parents = vec![None; n];
        let mut seen = vec![false; n];
        for root in 0..n {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            let mut stack = vec![root];
            while let Some(s) = stack.pop() {
                for (own, other, other_point) in self.neighbours(s) {
                    if seen[other] {
                        continue;
                    }
                    seen[other] = true;
                    let own = if traces[s].points.first() == self.traces[s].points.first() {
                        own
                    } else {
                        self.traces[s].len() - 1 - own
                    };
                    let last = self.traces[other].len() - 1;
                    if other_point == last && last > 0 {
                        traces[other] = self.traces[other].reversed();
                    }
                    if other_point == 0 || other_point == last {
                        parents[other] = Some(Attachment { parent: s, point: own });
                    }
                    stack.push(other);
                }
            }
        }
        GroundTruthTree { traces, parents }
    }
}

/// Bridges every kept edge with a straight segment between its closest
/// points, spaced at most `spacing` apart with radii interpolated linearly.
/// Gap segments take ids after the largest trace id.
pub fn merge<T: Real>(
    traces: &[Trace<T>],
    edges: &[((usize, usize), ConnectionStats<T>)],
    spacing: T,
) -> Result<VesselTree<T>, TreeError> {
    let mut index = HashMap::new();
    for (i, t) in traces.iter().enumerate() {
        if index.insert(t.id, i).is_some() {
            return Err(TreeError::DuplicateId(t.id));
        }
    }
    let mut tree = VesselTree::singletons(traces);
    let mut uf = UnionFind::<usize>::new(traces.len());
    let mut next_id = traces.iter().map(|t| t.id + 1).max().unwrap_or(0);
    for &((ia, ib), s) in edges {
        let a = *index.get(&ia).ok_or(TreeError::UnknownTrace(ia))?;
        let b = *index.get(&ib).ok_or(TreeError::UnknownTrace(ib))?;
        let (ea, eb) = s.endpoints;
        for (t, e) in [(a, ea), (b, eb)] {
            if e >= traces[t].len() {
                return Err(TreeError::BadEndpoint {
                    trace: traces[t].id,
                    index: e,
                });
            }
        }
        if !uf.union(a, b) {
            return Err(TreeError::Cycle(ia, ib));
        }
        let (pa, pb) = (traces[a].points[ea], traces[b].points[eb]);
        let (ra, rb) = (traces[a].radii[ea], traces[b].radii[eb]);
        let raw = Trace::new(next_id, vec![pa, pb], vec![ra, rb])?;
        let mut gap = if pa.dist(pb) > T::zero() {
            raw.resample_at_most(spacing)?
        } else {
            raw
        };
        gap.ends = [crate::trace::TraceStatus::TerminatedCollision; 2];
        next_id += 1;
        let g = tree.traces.len();
        let last = gap.len() - 1;
        tree.traces.push(gap);
        tree.kinds.push(SegmentKind::Gap);
        tree.links.push(TreeLink {
            a,
            a_point: ea,
            b: g,
            b_point: 0,
        });
        tree.links.push(TreeLink {
            a: g,
            a_point: last,
            b,
            b_point: eb,
        });
    }
    Ok(tree)
}
