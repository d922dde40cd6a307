//! Uniform node lattices `h·ℤ^N` restricted to a box, with row-major
//! indexing (axis 0 varies slowest). Unused trailing axes have extent 1.

pub type Point = [f64; 3];
pub type Node = [i64; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    dim: usize,
    h: f64,
    lo: Node,
    extents: [usize; 3],
    strides: [usize; 3],
}

impl Lattice {
    /// Lattice of nodes `lo + k` for `0 ≤ k_i < extents_i`.
    pub fn new(dim: usize, h: f64, lo: Node, extents: [usize; 3]) -> Self {
        assert!((1..=3).contains(&dim), "dimension must be 1, 2 or 3");
        assert!(h > 0.0 && h.is_finite(), "spacing must be positive");
        let mut lo = lo;
        let mut extents = extents;
        for a in dim..3 {
            lo[a] = 0;
            extents[a] = 1;
        }
        assert!(extents.iter().all(|&e| e > 0), "empty lattice");
        let strides = [extents[1] * extents[2], extents[2], 1];
        Lattice {
            dim,
            h,
            lo,
            extents,
            strides,
        }
    }

    /// Smallest lattice covering `[min, max]` plus `pad` extra nodes per side.
    pub fn covering(dim: usize, h: f64, min: Point, max: Point, pad: usize) -> Self {
        let mut lo = [0i64; 3];
        let mut extents = [1usize; 3];
        for a in 0..dim {
            let l = (min[a] / h).floor() as i64 - pad as i64;
            let u = (max[a] / h).ceil() as i64 + pad as i64;
            lo[a] = l;
            extents[a] = (u - l + 1) as usize;
        }
        Lattice::new(dim, h, lo, extents)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lo(&self) -> Node {
        self.lo
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell volume `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Integer node coordinates of a linear index.
    pub fn node(&self, idx: usize) -> Node {
        let i0 = idx / self.strides[0];
        let rem = idx % self.strides[0];
        let i1 = rem / self.strides[1];
        let i2 = rem % self.strides[1];
        [
            self.lo[0] + i0 as i64,
            self.lo[1] + i1 as i64,
            self.lo[2] + i2 as i64,
        ]
    }

    pub fn index(&self, node: Node) -> Option<usize> {
        let mut idx = 0usize;
        for a in 0..3 {
            let k = node[a] - self.lo[a];
            if k < 0 || k as usize >= self.extents[a] {
                return None;
            }
            idx += k as usize * self.strides[a];
        }
        Some(idx)
    }

    /// Physical coordinates of a linear index; unused axes are 0.
    pub fn point(&self, idx: usize) -> Point {
        self.node_point(self.node(idx))
    }

    pub fn node_point(&self, node: Node) -> Point {
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = node[a] as f64 * self.h;
        }
        p
    }

    /// Index of `idx + offset`, or `None` if it leaves the box.
    #[inline]
    pub fn shifted(&self, idx: usize, offset: Node) -> Option<usize> {
        let node = self.node(idx);
        self.index([
            node[0] + offset[0],
            node[1] + offset[1],
            node[2] + offset[2],
        ])
    }

    /// Node nearest to a physical point (may lie outside the box).
    pub fn nearest_node(&self, p: Point) -> Node {
        let mut n = [0i64; 3];
        for a in 0..self.dim {
            n[a] = (p[a] / self.h).round() as i64;
        }
        n
    }

    /// True when the node sits on the outermost `width` layers of the box.
    pub fn near_box_edge(&self, idx: usize, width: usize) -> bool {
        let node = self.node(idx);
        (0..self.dim).any(|a| {
            let k = (node[a] - self.lo[a]) as usize;
            k < width || k + width >= self.extents[a]
        })
    }

    /// Linear indices of all nodes within Euclidean distance `r` (inclusive
    /// when `closed`) of `center`.
    pub fn ball_indices(&self, center: Point, r: f64, closed: bool) -> Vec<usize> {
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..3 {
            if a < self.dim {
                lo[a] = (((center[a] - r) / self.h).floor() as i64).max(self.lo[a]);
                hi[a] = (((center[a] + r) / self.h).ceil() as i64)
                    .min(self.lo[a] + self.extents[a] as i64 - 1);
            } else {
                lo[a] = 0;
                hi[a] = 0;
            }
        }
        let r2 = r * r;
        let mut out = Vec::new();
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let node = [i, j, k];
                    let p = self.node_point(node);
                    let d2 = dist2(&p, &center);
                    if d2 < r2 || (closed && d2 <= r2) {
                        out.push(self.index(node).expect("clipped to box"));
                    }
                }
            }
        }
        out
    }
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    dist2(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let lat = Lattice::new(3, 0.5, [-2, 3, -1], [4, 5, 6]);
        assert_eq!(lat.len(), 120);
        for idx in 0..lat.len() {
            assert_eq!(lat.index(lat.node(idx)), Some(idx));
        }
        assert_eq!(lat.index([-3, 3, -1]), None);
        assert_eq!(lat.point(0), [-1.0, 1.5, -0.5]);
    }

    #[test]
    fn unused_axes_collapse() {
        let lat = Lattice::new(1, 0.25, [0, 7, 7], [5, 9, 9]);
        assert_eq!(lat.len(), 5);
        assert_eq!(lat.point(4), [1.0, 0.0, 0.0]);
        assert_eq!(lat.shifted(4, [1, 0, 0]), None);
        assert_eq!(lat.shifted(3, [1, 0, 0]), Some(4));
    }

    #[test]
    fn ball_counts() {
        let lat = Lattice::covering(2, 0.1, [-1.0, -1.0, 0.0], [1.0, 1.0, 0.0], 0);
        // radius exactly one spacing: open ball has 1 node, closed has 5
        assert_eq!(lat.ball_indices([0.0; 3], 0.1, false).len(), 1);
        assert_eq!(lat.ball_indices([0.0; 3], 0.1, true).len(), 5);
    }
}
