use std::collections::HashMap;

use crate::geom::WorldPoint;
use crate::real::Real;
use crate::trace::Trace;

/// A snake end that stopped on contact with an accepted trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Collision {
    pub trace: usize,
    /// 0 for the start of the trace, 1 for its end.
    pub end: usize,
    pub other: usize,
    pub other_point: usize,
}

/// Accepted traces with a uniform-grid spatial hash over their points.
#[derive(Clone, Debug)]
pub struct Registry<T> {
    traces: Vec<Trace<T>>,
    cell: T,
    buckets: HashMap<[i64; 3], Vec<(usize, usize)>>,
    max_radius: T,
}

impl<T: Real> Default for Registry<T> {
    fn default() -> Self {
        Self::new(T::lit(2.0))
    }
}

impl<T: Real> Registry<T> {
    pub fn new(cell_mm: T) -> Self {
        Self {
            traces: Vec::new(),
            cell: cell_mm,
            buckets: HashMap::new(),
            max_radius: T::zero(),
        }
    }

    fn key(&self, p: WorldPoint<T>) -> [i64; 3] {
        p.to_array()
            .map(|c| (c / self.cell).floor().to_i64().unwrap_or(i64::MAX))
    }

    pub fn add(&mut self, t: Trace<T>) {
        let slot = self.traces.len();
        for (j, (p, r)) in t.points.iter().zip(&t.radii).enumerate() {
            let k = self.key(*p);
            self.buckets.entry(k).or_default().push((slot, j));
            self.max_radius = self.max_radius.max(*r);
        }
        self.traces.push(t);
    }

    pub fn traces(&self) -> &[Trace<T>] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<Trace<T>> {
        self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// The closest accepted point `q` with `|p - q| <= max(r, r_q)`, as
    /// `(trace id, point index)`.
    pub fn collision(&self, p: WorldPoint<T>, r: T) -> Option<(usize, usize)> {
        if self.traces.is_empty() {
            return None;
        }
        let reach = r.max(self.max_radius);
        let n = (reach / self.cell).ceil().to_i64().unwrap_or(1);
        let c = self.key(p);
        let mut best: Option<(T, usize, usize)> = None;
        for dz in -n..=n {
            for dy in -n..=n {
                for dx in -n..=n {
                    let Some(b) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &(slot, j) in b {
                        let t = &self.traces[slot];
                        let d = t.points[j].dist(p);
                        if d <= r.max(t.radii[j]) && best.is_none_or(|(bd, _, _)| d < bd) {
                            best = Some((d, slot, j));
                        }
                    }
                }
            }
        }
        best.map(|(_, slot, j)| (self.traces[slot].id, j))
    }
}
