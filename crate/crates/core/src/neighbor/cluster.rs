use std::collections::BTreeSet;

use serde::Serialize;

use super::NeighborIndex;
use crate::error::{Error, Result};

/// Radius-connected component of the Gilbert graph containing a seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClusterResult {
    pub members: BTreeSet<usize>,
    /// Some member lies within one radius of the index bounds. Always false
    /// when the index has no bounds.
    pub touches_boundary: bool,
}

impl ClusterResult {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Breadth-first search over the radius graph from `seed`.
pub fn gilbert_cluster(index: &NeighborIndex, seed: usize) -> Result<ClusterResult> {
    let start = index
        .slot(seed)
        .ok_or_else(|| Error::invalid("seed", format!("unknown id {seed}")))?;
    let slots = cluster_slots(index, &[start], index.radius(), |_| true);
    let touches_boundary = index.bounds().is_some_and(|b| {
        slots
            .iter()
            .any(|&s| b.depth(index.point_at(s)) < index.radius())
    });
    Ok(ClusterResult {
        members: slots.iter().map(|&s| index.id_at(s)).collect(),
        touches_boundary,
    })
}

/// Slots reachable from `starts` through links of length at most `r` and
/// members accepted by `admit`. Start slots are always included.
pub(crate) fn cluster_slots(
    index: &NeighborIndex,
    starts: &[usize],
    r: f64,
    mut admit: impl FnMut(usize) -> bool,
) -> Vec<usize> {
    let mut seen = vec![false; index.len()];
    let mut queue: Vec<usize> = Vec::with_capacity(starts.len());
    for &s in starts {
        if !seen[s] {
            seen[s] = true;
            queue.push(s);
        }
    }
    let mut head = 0;
    while head < queue.len() {
        let cur = queue[head];
        head += 1;
        let p = *index.point_at(cur);
        index.for_each_slot_within(&p, r, |nb| {
            if !seen[nb] && admit(nb) {
                seen[nb] = true;
                queue.push(nb);
            }
        });
    }
    queue
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Point, Region, RngStream, sample_poisson_points};
    use crate::neighbor::build_index;
    use proptest::prelude::*;

    /// O(n^2) pairwise BFS, independent of the index.
    pub(crate) fn bfs_oracle(points: &[Point], seed: usize, r: f64) -> BTreeSet<usize> {
        let mut seen = vec![false; points.len()];
        seen[seed] = true;
        let mut stack = vec![seed];
        while let Some(i) = stack.pop() {
            for j in 0..points.len() {
                if !seen[j] && (points[i].dist2(&points[j])).sqrt() <= r {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        (0..points.len()).filter(|&i| seen[i]).collect()
    }

    fn line(xs: &[f64]) -> Vec<(usize, Point)> {
        xs.iter().enumerate().map(|(i, &x)| (i, Point::line(x))).collect()
    }

    #[test]
    fn hand_checked_chain() {
        let idx = build_index(&line(&[0.0, 0.8, 1.7, 3.0]), 1, 1.0).unwrap();
        let c = gilbert_cluster(&idx, 0).unwrap();
        assert_eq!(c.members, BTreeSet::from([0, 1, 2]));
        assert!(!c.touches_boundary);
    }

    #[test]
    fn singleton_and_unknown_seed() {
        let idx = build_index(&[(5, Point::line(2.0))], 1, 1.0).unwrap();
        assert_eq!(gilbert_cluster(&idx, 5).unwrap().members, BTreeSet::from([5]));
        assert!(gilbert_cluster(&idx, 0).is_err());
    }

    #[test]
    fn boundary_flag() {
        let b = Region::interval(-5.0, 5.0).unwrap();
        let idx = build_index(&line(&[0.0, 0.9, 1.8, 2.7, 3.6, 4.5]), 1, 1.0)
            .unwrap()
            .with_bounds(b);
        assert!(gilbert_cluster(&idx, 0).unwrap().touches_boundary);
        let idx = build_index(&line(&[0.0, 0.9]), 1, 1.0).unwrap().with_bounds(b);
        assert!(!gilbert_cluster(&idx, 0).unwrap().touches_boundary);
    }

    #[test]
    fn matches_oracle_on_poisson_lines() {
        let region = Region::interval(0.0, 40.0).unwrap();
        for run in 0..1000 {
            let mut rng = RngStream::new(31, run);
            let mut pts = vec![Point::line(20.0)];
            pts.extend(sample_poisson_points(&mut rng, 0.5, &region).unwrap());
            let idx = NeighborIndex::dense(&pts, 1, 1.0).unwrap();
            let seed = (run as usize) % pts.len();
            assert_eq!(gilbert_cluster(&idx, seed).unwrap().members, bfs_oracle(&pts, seed, 1.0));
        }
    }

    proptest! {
        #[test]
        fn membership_is_symmetric(xs in prop::collection::vec((0.0f64..15.0, 0.0f64..15.0), 1..80)) {
            let pts: Vec<(usize, Point)> = xs.iter().enumerate()
                .map(|(i, &(x, y))| (i, Point([x, y, 0.0]))).collect();
            let idx = build_index(&pts, 2, 1.0).unwrap();
            let c0 = gilbert_cluster(&idx, 0).unwrap();
            for i in 0..pts.len() {
                let ci = gilbert_cluster(&idx, i).unwrap();
                prop_assert_eq!(c0.members.contains(&i), ci.members == c0.members);
            }
            let raw: Vec<Point> = pts.iter().map(|p| p.1).collect();
            prop_assert_eq!(&c0.members, &bfs_oracle(&raw, 0, 1.0));
        }
    }
}
