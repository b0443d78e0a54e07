//! Exact nearest-neighbour index over a point cloud.
//!
//! The tree is stored implicitly: points are permuted so that for every range
//! `[lo, hi)` the median element `mid = (lo + hi) / 2` splits the range on the
//! axis `depth % 3`. No node structs, no pointers.

use std::sync::Arc;

use super::{GeometryError, PointCloud, Vec3};

/// Balanced k-d tree over an immutable point set. Cheap to clone and safe to
/// share between threads.
#[derive(Clone, Debug)]
pub struct NnIndex {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    points: Vec<Vec3>,
    /// original index of each permuted point
    ids: Vec<usize>,
    /// permuted position of each original point
    pos_of: Vec<usize>,
}

impl NnIndex {
    pub fn build(cloud: &PointCloud) -> NnIndex {
        let mut items: Vec<(Vec3, usize)> =
            cloud.points().iter().copied().enumerate().map(|(i, p)| (p, i)).collect();
        build_range(&mut items, 0);
        let (points, ids): (Vec<Vec3>, Vec<usize>) = items.into_iter().unzip();
        let mut pos_of = vec![0; ids.len()];
        for (pos, &id) in ids.iter().enumerate() {
            pos_of[id] = pos;
        }
        NnIndex { inner: Arc::new(Inner { points, ids, pos_of }) }
    }

    pub fn from_points(points: &[Vec3]) -> Result<NnIndex, GeometryError> {
        Ok(NnIndex::build(&PointCloud::new(points.to_vec())?))
    }

    pub fn len(&self) -> usize {
        self.inner.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.points.is_empty()
    }

    /// Closest point and its distance.
    pub fn nearest(&self, q: Vec3) -> (Vec3, f64) {
        let (i, d2) = self.nearest_index_sq(q);
        (self.point(i), d2.sqrt())
    }

    /// Original index of the closest point and its distance. Ties resolve to
    /// the lowest original index, exactly as a front-to-back linear scan would.
    pub fn nearest_index(&self, q: Vec3) -> (usize, f64) {
        let (i, d2) = self.nearest_index_sq(q);
        (i, d2.sqrt())
    }

    /// Point by original index.
    pub fn point(&self, original: usize) -> Vec3 {
        self.inner.points[self.inner.pos_of[original]]
    }

    fn nearest_index_sq(&self, q: Vec3) -> (usize, f64) {
        let mut best = Best { d2: f64::INFINITY, id: usize::MAX, pos: usize::MAX };
        search(&self.inner, 0, self.inner.points.len(), 0, q, &mut best);
        (self.inner.ids[best.pos], best.d2)
    }

    /// Nearest point (not just its index) without the id lookup.
    pub fn nearest_point(&self, q: Vec3) -> (usize, Vec3, f64) {
        let mut best = Best { d2: f64::INFINITY, id: usize::MAX, pos: usize::MAX };
        search(&self.inner, 0, self.inner.points.len(), 0, q, &mut best);
        (best.id, self.inner.points[best.pos], best.d2.sqrt())
    }
}

struct Best {
    d2: f64,
    id: usize,
    pos: usize,
}

fn build_range(items: &mut [(Vec3, usize)], depth: usize) {
    if items.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |a, b| {
        a.0.axis(axis).total_cmp(&b.0.axis(axis)).then(a.1.cmp(&b.1))
    });
    let (left, rest) = items.split_at_mut(mid);
    build_range(left, depth + 1);
    build_range(&mut rest[1..], depth + 1);
}

fn search(inner: &Inner, lo: usize, hi: usize, depth: usize, q: Vec3, best: &mut Best) {
    if lo >= hi {
        return;
    }
    let mid = lo + (hi - lo) / 2;
    let p = inner.points[mid];
    let id = inner.ids[mid];
    let d2 = q.distance_squared(p);
    if d2 < best.d2 || (d2 == best.d2 && id < best.id) {
        *best = Best { d2, id, pos: mid };
    }
    let axis = depth % 3;
    let diff = q.axis(axis) - p.axis(axis);
    let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
    search(inner, near.0, near.1, depth + 1, q, best);
    // `<=` keeps equidistant candidates reachable so ties resolve by id
    if diff * diff <= best.d2 {
        search(inner, far.0, far.1, depth + 1, q, best);
    }
}
