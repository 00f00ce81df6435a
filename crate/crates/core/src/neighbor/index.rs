use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernel::{in_range, Point, Region, MAX_DIM};

type CellKey = [i64; MAX_DIM];

/// Fixed-radius neighbor index.
///
/// In one dimension points are kept sorted by coordinate; in higher dimensions
/// they are bucketed into a uniform grid whose cell side equals the radius, so
/// a query only has to look at the `3^d` surrounding cells.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    dim: usize,
    radius: f64,
    ids: Vec<usize>,
    points: Vec<Point>,
    slot_of: HashMap<usize, usize>,
    layout: Layout,
    bounds: Option<Region>,
}

#[derive(Clone, Debug)]
enum Layout {
    /// Slots sorted by x, with the sorted keys alongside for binary search.
    Line { order: Vec<usize>, keys: Vec<f64> },
    Grid {
        inv_cell: f64,
        cells: HashMap<CellKey, Vec<usize>>,
    },
}

/// Build an index over `(id, position)` pairs.
pub fn build_index(points: &[(usize, Point)], d: usize, radius: f64) -> Result<NeighborIndex> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid("radius", format!("must be > 0, got {radius}")));
    }
    if d == 0 || d > MAX_DIM {
        return Err(Error::invalid("d", format!("dimension must be in 1..={MAX_DIM}")));
    }
    let mut slot_of = HashMap::with_capacity(points.len());
    for (slot, (id, _)) in points.iter().enumerate() {
        if slot_of.insert(*id, slot).is_some() {
            return Err(Error::invalid("points", format!("duplicate id {id}")));
        }
    }
    let mut index = NeighborIndex {
        dim: d,
        radius,
        ids: points.iter().map(|(id, _)| *id).collect(),
        points: points.iter().map(|(_, p)| *p).collect(),
        slot_of,
        layout: if d == 1 {
            Layout::Line {
                order: Vec::new(),
                keys: Vec::new(),
            }
        } else {
            Layout::Grid {
                inv_cell: 1.0 / radius,
                cells: HashMap::new(),
            }
        },
        bounds: None,
    };
    index.rebuild_layout(false);
    Ok(index)
}

impl NeighborIndex {
    /// Index over dense ids `0..positions.len()`.
    pub(crate) fn dense(positions: &[Point], d: usize, radius: f64) -> Result<Self> {
        let pts: Vec<(usize, Point)> = positions.iter().copied().enumerate().collect();
        build_index(&pts, d, radius)
    }

    /// Replace all positions of a dense index. The 1-d layout is re-sorted by
    /// insertion from the previous order, which is linear when particles
    /// moved only a little.
    pub(crate) fn refresh(&mut self, positions: &[Point]) {
        debug_assert_eq!(positions.len(), self.points.len());
        self.points.copy_from_slice(positions);
        self.rebuild_layout(true);
    }

    pub fn with_bounds(mut self, bounds: Region) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn bounds(&self) -> Option<&Region> {
        self.bounds.as_ref()
    }

    pub fn position(&self, id: usize) -> Option<Point> {
        self.slot_of.get(&id).map(|&s| self.points[s])
    }

    pub(crate) fn slot(&self, id: usize) -> Option<usize> {
        self.slot_of.get(&id).copied()
    }

    pub(crate) fn id_at(&self, slot: usize) -> usize {
        self.ids[slot]
    }

    pub(crate) fn point_at(&self, slot: usize) -> &Point {
        &self.points[slot]
    }

    fn rebuild_layout(&mut self, warm: bool) {
        match &mut self.layout {
            Layout::Line { order, keys } => {
                if !warm || order.len() != self.points.len() {
                    order.clear();
                    order.extend(0..self.points.len());
                    let pts = &self.points;
                    order.sort_by(|&a, &b| pts[a].x().total_cmp(&pts[b].x()));
                } else {
                    // insertion sort from the previous order
                    let pts = &self.points;
                    for i in 1..order.len() {
                        let cur = order[i];
                        let x = pts[cur].x();
                        let mut j = i;
                        while j > 0 && pts[order[j - 1]].x() > x {
                            order[j] = order[j - 1];
                            j -= 1;
                        }
                        order[j] = cur;
                    }
                }
                keys.clear();
                keys.extend(order.iter().map(|&s| self.points[s].x()));
            }
            Layout::Grid { inv_cell, cells } => {
                for v in cells.values_mut() {
                    v.clear();
                }
                let inv = *inv_cell;
                for (slot, p) in self.points.iter().enumerate() {
                    cells.entry(cell_of(p, self.dim, inv)).or_default().push(slot);
                }
                if !warm {
                    return;
                }
                cells.retain(|_, v| !v.is_empty());
            }
        }
    }

    /// Visit every slot whose point lies within `r` of `p`. `r` must not
    /// exceed the index radius.
    #[inline]
    pub(crate) fn for_each_slot_within(&self, p: &Point, r: f64, mut f: impl FnMut(usize)) {
        debug_assert!(r <= self.radius * (1.0 + 1e-12));
        match &self.layout {
            Layout::Line { order, keys } => {
                let x = p.x();
                let start = keys.partition_point(|&k| k < x - r);
                for (k, &slot) in keys[start..].iter().zip(&order[start..]) {
                    if *k > x + r {
                        break;
                    }
                    if in_range(p, &self.points[slot], r) {
                        f(slot);
                    }
                }
            }
            Layout::Grid { inv_cell, cells } => {
                let mut lo = [0i64; MAX_DIM];
                let mut hi = [0i64; MAX_DIM];
                for k in 0..self.dim {
                    lo[k] = ((p.0[k] - r) * inv_cell).floor() as i64;
                    hi[k] = ((p.0[k] + r) * inv_cell).floor() as i64;
                }
                let mut key = lo;
                loop {
                    if let Some(slots) = cells.get(&key) {
                        for &slot in slots {
                            if in_range(p, &self.points[slot], r) {
                                f(slot);
                            }
                        }
                    }
                    // odometer over the cell block
                    let mut k = 0;
                    loop {
                        if k == self.dim {
                            return;
                        }
                        if key[k] < hi[k] {
                            key[k] += 1;
                            break;
                        }
                        key[k] = lo[k];
                        k += 1;
                    }
                }
            }
        }
    }

    /// Ids within the index radius of `p`, ascending.
    pub fn query(&self, p: &Point) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_slot_within(p, self.radius, |s| out.push(self.ids[s]));
        out.sort_unstable();
        out
    }
}

#[inline]
fn cell_of(p: &Point, dim: usize, inv: f64) -> CellKey {
    let mut key = [0i64; MAX_DIM];
    for (k, x) in key.iter_mut().zip(&p.0).take(dim) {
        *k = (x * inv).floor() as i64;
    }
    key
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{sample_poisson_points, RngStream};
    use proptest::prelude::*;

    fn scan(points: &[(usize, Point)], q: &Point, r: f64) -> Vec<usize> {
        let mut v: Vec<usize> = points
            .iter()
            .filter(|(_, p)| (p.dist2(q)).sqrt() <= r)
            .map(|(id, _)| *id)
            .collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn empty_index() {
        let idx = build_index(&[], 1, 1.0).unwrap();
        assert!(idx.query(&Point::line(0.0)).is_empty());
        let idx = build_index(&[], 2, 1.0).unwrap();
        assert!(idx.query(&Point::ORIGIN).is_empty());
    }

    #[test]
    fn hand_checked_line() {
        let pts = vec![(0, Point::line(0.0)), (1, Point::line(0.5)), (2, Point::line(2.0))];
        let idx = build_index(&pts, 1, 1.0).unwrap();
        assert_eq!(idx.query(&Point::line(0.0)), vec![0, 1]);
        // distance exactly 1 counts
        assert_eq!(idx.query(&Point::line(1.0)), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_duplicates_and_bad_radius() {
        let pts = vec![(3, Point::line(0.0)), (3, Point::line(1.0))];
        assert!(build_index(&pts, 1, 1.0).is_err());
        assert!(build_index(&[], 1, 0.0).is_err());
        assert!(build_index(&[], 4, 1.0).is_err());
    }

    #[test]
    fn grid_matches_linear_scan() {
        let mut rng = RngStream::new(21, 0);
        let region = Region::new(&[0.0, 0.0], &[100.0, 100.0]).unwrap();
        let mut pts = Vec::new();
        for i in 0..1000 {
            let x = 100.0 * rng.uniform();
            let y = 100.0 * rng.uniform();
            pts.push((i, Point([x, y, 0.0])));
        }
        let idx = build_index(&pts, 2, 1.0).unwrap();
        for _ in 0..1000 {
            let q = Point([100.0 * rng.uniform(), 100.0 * rng.uniform(), 0.0]);
            assert_eq!(idx.query(&q), scan(&pts, &q, 1.0));
        }
        let _ = region;
    }

    #[test]
    fn three_dimensional_grid_matches_scan() {
        let mut rng = RngStream::new(22, 0);
        let region = Region::cube(3, 5.0).unwrap();
        let pts: Vec<(usize, Point)> = sample_poisson_points(&mut rng, 2.0, &region)
            .unwrap()
            .into_iter()
            .enumerate()
            .collect();
        let idx = build_index(&pts, 3, 1.3).unwrap();
        for (_, p) in pts.iter().take(200) {
            assert_eq!(idx.query(p), scan(&pts, p, 1.3));
        }
    }

    #[test]
    fn refresh_keeps_queries_exact() {
        let mut rng = RngStream::new(23, 0);
        let mut pos: Vec<Point> = (0..300).map(|_| Point::line(50.0 * rng.uniform())).collect();
        let mut idx = NeighborIndex::dense(&pos, 1, 1.0).unwrap();
        for _ in 0..20 {
            for p in pos.iter_mut() {
                p.0[0] += 0.3 * rng.standard_normal();
            }
            idx.refresh(&pos);
            let pts: Vec<(usize, Point)> = pos.iter().copied().enumerate().collect();
            for q in pos.iter().take(50) {
                assert_eq!(idx.query(q), scan(&pts, q, 1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn translation_invariant(
            xs in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0), 1..60),
            shift in (-100.0f64..100.0, -100.0f64..100.0),
            d in 1usize..=2,
        ) {
            let pts: Vec<(usize, Point)> = xs.iter().enumerate()
                .map(|(i, &(x, y))| (i, Point([x, if d == 2 { y } else { 0.0 }, 0.0])))
                .collect();
            // shift by a multiple of 1/8 so translated distances are exact
            let s = Point([(shift.0 * 8.0).round() / 8.0, if d == 2 { (shift.1 * 8.0).round() / 8.0 } else { 0.0 }, 0.0]);
            let moved: Vec<(usize, Point)> = pts.iter().map(|(i, p)| (*i, p.add(&s))).collect();
            let a = build_index(&pts, d, 1.5).unwrap();
            let b = build_index(&moved, d, 1.5).unwrap();
            for (i, p) in &pts {
                let qa = a.query(p);
                let qb = b.query(&p.add(&s));
                prop_assert_eq!(&qa, &scan(&pts, p, 1.5));
                prop_assert_eq!(&qa, &qb);
                prop_assert!(qa.contains(i));
            }
        }
    }
}
