//! Test domains on a lattice and a numerical Reifenberg-flatness scan.
//!
//! A [`GridDomain`] is a boolean mask over a [`Lattice`]; nodes are in `Ω`
//! when their center is. Every generator leaves [`MARGIN`] empty layers
//! around the mask so that zero extension is representable for stencils up
//! to that width.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lattice::{dist2, Lattice, Point};

/// Empty node layers kept between the mask and the lattice edge.
pub const MARGIN: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct GridDomain {
    lattice: Lattice,
    mask: Vec<bool>,
    label: String,
    params: Value,
}

impl GridDomain {
    /// Validates the margin and connectivity invariants.
    pub fn from_mask(lattice: Lattice, mask: Vec<bool>, label: &str, params: Value) -> Result<Self> {
        if mask.len() != lattice.len() {
            return Err(Error::Domain(format!(
                "mask has {} nodes, lattice has {}",
                mask.len(),
                lattice.len()
            )));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::Domain(format!("{label}: mask is empty")));
        }
        if let Some(idx) = (0..mask.len()).find(|&i| mask[i] && lattice.near_box_edge(i, MARGIN)) {
            return Err(Error::Domain(format!(
                "{label}: node {:?} lies within {MARGIN} layers of the lattice edge",
                lattice.node(idx)
            )));
        }
        let dom = GridDomain {
            lattice,
            mask,
            label: label.to_string(),
            params,
        };
        let comps = dom.component_count();
        if comps != 1 {
            return Err(Error::Domain(format!("{label}: mask has {comps} connected components")));
        }
        Ok(dom)
    }

    /// Mask from a predicate on node centers over a padded bounding box.
    pub fn from_predicate(
        dim: usize,
        h: f64,
        min: Point,
        max: Point,
        label: &str,
        params: Value,
        inside: impl Fn(&Point) -> bool + Sync,
    ) -> Result<Self> {
        let lattice = Lattice::covering(dim, h, min, max, MARGIN + 1);
        let mask = (0..lattice.len())
            .into_par_iter()
            .map(|i| inside(&lattice.point(i)))
            .collect();
        GridDomain::from_mask(lattice, mask, label, params)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn h(&self) -> f64 {
        self.lattice.h()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn params(&self) -> &Value {
        &self.params
    }

    pub fn inside_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Indices of all mask-true nodes, ascending.
    pub fn inside_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Axis-neighbor offsets (`2N` of them).
    pub fn axis_offsets(&self) -> Vec<[i64; 3]> {
        let mut out = Vec::with_capacity(2 * self.dim());
        for a in 0..self.dim() {
            let mut e = [0i64; 3];
            e[a] = 1;
            out.push(e);
            e[a] = -1;
            out.push(e);
        }
        out
    }

    fn component_count(&self) -> usize {
        let offsets = self.axis_offsets();
        let mut seen = vec![false; self.mask.len()];
        let mut comps = 0;
        for start in 0..self.mask.len() {
            if !self.mask[start] || seen[start] {
                continue;
            }
            comps += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(i) = queue.pop_front() {
                for off in &offsets {
                    if let Some(j) = self.lattice.shifted(i, *off) {
                        if self.mask[j] && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        comps
    }

    /// Inside nodes with at least one outside axis neighbor: the discrete `∂Ω`.
    pub fn boundary_points(&self) -> Vec<usize> {
        let offsets = self.axis_offsets();
        (0..self.mask.len())
            .filter(|&i| {
                self.mask[i]
                    && offsets.iter().any(|off| {
                        self.lattice
                            .shifted(i, *off)
                            .is_none_or(|j| !self.mask[j])
                    })
            })
            .collect()
    }

    /// Outside nodes with at least one inside axis neighbor. The discrete
    /// solution vanishes here, so these nodes sit on the effective boundary
    /// of the zero-extended problem.
    pub fn exterior_boundary_points(&self) -> Vec<usize> {
        let offsets = self.axis_offsets();
        (0..self.mask.len())
            .filter(|&i| {
                !self.mask[i]
                    && offsets
                        .iter()
                        .any(|off| self.lattice.shifted(i, *off).is_some_and(|j| self.mask[j]))
            })
            .collect()
    }

    /// Largest distance between inside nodes along any axis, a cheap
    /// diameter proxy used for argument validation.
    pub fn extent_diameter(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for i in self.inside_indices() {
            let p = self.lattice.point(i);
            for a in 0..self.dim() {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (0..self.dim())
            .map(|a| (hi[a] - lo[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

// ---------------------------------------------------------------------------
// Generators

fn check_resolution(r: f64, h: f64) -> Result<()> {
    if !(r > 0.0) || !(h > 0.0) {
        return Err(Error::Domain(format!("radius {r} and spacing {h} must be positive")));
    }
    if h > r / 16.0 {
        return Err(Error::Domain(format!("spacing {h} too coarse for radius {r} (need h ≤ R/16)")));
    }
    Ok(())
}

/// Open interval `(a, b)` in one dimension.
pub fn interval(a: f64, b: f64, h: f64) -> Result<GridDomain> {
    if !(b > a) || !(h > 0.0) || h > (b - a) / 2.0 {
        return Err(Error::Domain(format!("bad interval ({a}, {b}) with h = {h}")));
    }
    GridDomain::from_predicate(
        1,
        h,
        [a, 0.0, 0.0],
        [b, 0.0, 0.0],
        "interval",
        json!({"a": a, "b": b, "h": h}),
        |p| p[0] > a + 1e-12 * h && p[0] < b - 1e-12 * h,
    )
}

/// Open ball `|x| < R`.
pub fn ball(dim: usize, radius: f64, h: f64) -> Result<GridDomain> {
    check_resolution(radius, h)?;
    let r2 = radius * radius;
    GridDomain::from_predicate(
        dim,
        h,
        [-radius; 3],
        [radius; 3],
        "ball",
        json!({"N": dim, "R": radius, "h": h}),
        |p| dist2(p, &[0.0; 3]) < r2,
    )
}

/// Upper half-ball `|x| < R, x_N > 0`.
pub fn half_space_ball(dim: usize, radius: f64, h: f64) -> Result<GridDomain> {
    check_resolution(radius, h)?;
    if dim < 2 {
        return Err(Error::Domain("half-ball needs N ≥ 2".into()));
    }
    let r2 = radius * radius;
    let mut min = [-radius; 3];
    min[dim - 1] = 0.0;
    GridDomain::from_predicate(
        dim,
        h,
        min,
        [radius; 3],
        "half_space_ball",
        json!({"N": dim, "R": radius, "h": h}),
        move |p| p[dim - 1] > 0.0 && dist2(p, &[0.0; 3]) < r2,
    )
}

/// Polar angle in `[0, 2π)`.
pub fn polar_angle(x: f64, y: f64) -> f64 {
    let t = y.atan2(x);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

/// Planar sector `θ ∈ (0, ω)`, `0 < |x| < R` with apex at the origin.
pub fn cone_domain(omega: f64, radius: f64, h: f64) -> Result<GridDomain> {
    if !(omega > 0.0 && omega < 2.0 * PI) {
        return Err(Error::Domain(format!("aperture {omega} outside (0, 2π)")));
    }
    check_resolution(radius, h)?;
    let r2 = radius * radius;
    GridDomain::from_predicate(
        2,
        h,
        [-radius; 3],
        [radius; 3],
        "cone",
        json!({"omega": omega, "R": radius, "h": h}),
        move |p| {
            let d2 = p[0] * p[0] + p[1] * p[1];
            if d2 == 0.0 || d2 >= r2 {
                return false;
            }
            let t = polar_angle(p[0], p[1]);
            t > 0.0 && t < omega
        },
    )
}

/// Closed Koch-type curve: a regular polygon inscribed in the circle of
/// radius `R`, each edge recursively replaced by four edges with an outward
/// bump of height `delta · L` over its middle third. Returned counterclockwise.
pub fn koch_polygon(delta: f64, depth: u32, radius: f64, sides: usize) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = (0..sides)
        .map(|k| {
            let t = PI / 2.0 + 2.0 * PI * k as f64 / sides as f64;
            [radius * t.cos(), radius * t.sin()]
        })
        .collect();
    for _ in 0..depth {
        let mut next = Vec::with_capacity(pts.len() * 4);
        for k in 0..pts.len() {
            let p = pts[k];
            let q = pts[(k + 1) % pts.len()];
            let d = [q[0] - p[0], q[1] - p[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            // outward normal of a counterclockwise edge
            let n = [d[1] / len, -d[0] / len];
            next.push(p);
            next.push([p[0] + d[0] / 3.0, p[1] + d[1] / 3.0]);
            next.push([
                p[0] + d[0] / 2.0 + n[0] * delta * len,
                p[1] + d[1] / 2.0 + n[1] * delta * len,
            ]);
            next.push([p[0] + 2.0 * d[0] / 3.0, p[1] + 2.0 * d[1] / 3.0]);
        }
        pts = next;
    }
    pts
}

/// Number of polygon sides used by [`koch_domain`].
pub const KOCH_SIDES: usize = 6;

/// Interior of [`koch_polygon`] with a hexagonal base. The finest
/// generation's thirds must span at least four nodes.
pub fn koch_domain(delta: f64, depth: u32, radius: f64, h: f64) -> Result<GridDomain> {
    koch_domain_with_sides(delta, depth, radius, h, KOCH_SIDES)
}

pub fn koch_domain_with_sides(
    delta: f64,
    depth: u32,
    radius: f64,
    h: f64,
    sides: usize,
) -> Result<GridDomain> {
    if !(0.0..0.4).contains(&delta) {
        return Err(Error::Domain(format!("koch amplitude {delta} outside [0, 0.4)")));
    }
    if sides < 3 {
        return Err(Error::Domain("koch base polygon needs at least 3 sides".into()));
    }
    check_resolution(radius, h)?;
    let side = 2.0 * radius * (PI / sides as f64).sin();
    let finest = side / 3f64.powi(depth as i32);
    if finest < 4.0 * h {
        return Err(Error::Domain(format!(
            "depth {depth} under-resolved: finest thirds {finest:.4e} < 4h = {:.4e}",
            4.0 * h
        )));
    }
    let poly = koch_polygon(delta, depth, radius, sides);
    let reach = radius * (1.0 + delta) + 2.0 * h;
    let lattice = Lattice::covering(2, h, [-reach; 3], [reach; 3], MARGIN + 1);
    let mask = scanline_fill(&lattice, &poly);
    GridDomain::from_mask(
        lattice,
        mask,
        "koch",
        json!({"delta": delta, "depth": depth, "R": radius, "h": h, "sides": sides}),
    )
}

/// Even-odd fill of a closed polygon, evaluated at node centers.
fn scanline_fill(lattice: &Lattice, poly: &[[f64; 2]]) -> Vec<bool> {
    let [ex, ey, _] = lattice.extents();
    let lo = lattice.lo();
    let h = lattice.h();
    let rows: Vec<Vec<bool>> = (0..ey)
        .into_par_iter()
        .map(|j| {
            let y = (lo[1] + j as i64) as f64 * h;
            let mut xs = Vec::new();
            for k in 0..poly.len() {
                let p = poly[k];
                let q = poly[(k + 1) % poly.len()];
                if (p[1] <= y && y < q[1]) || (q[1] <= y && y < p[1]) {
                    xs.push(p[0] + (y - p[1]) * (q[0] - p[0]) / (q[1] - p[1]));
                }
            }
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut row = vec![false; ex];
            for pair in xs.chunks_exact(2) {
                for (i, cell) in row.iter_mut().enumerate() {
                    let x = (lo[0] + i as i64) as f64 * h;
                    if x > pair[0] && x < pair[1] {
                        *cell = true;
                    }
                }
            }
            row
        })
        .collect();
    // row-major: axis 0 (x) slowest
    let mut mask = vec![false; lattice.len()];
    for (j, row) in rows.iter().enumerate() {
        for (i, &b) in row.iter().enumerate() {
            mask[i * ey + j] = b;
        }
    }
    mask
}

// ---------------------------------------------------------------------------
// Flatness

/// Directions scanned by the flatness fit: 720 angles over a half-turn in
/// 2D, a 1000-point Fibonacci sphere in 3D.
pub fn scan_directions(dim: usize) -> Vec<Point> {
    match dim {
        2 => (0..720)
            .map(|k| {
                let t = PI * k as f64 / 720.0;
                [t.cos(), t.sin(), 0.0]
            })
            .collect(),
        3 => {
            let n = 1000;
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let t = golden * k as f64;
                    [rho * t.cos(), rho * t.sin(), z]
                })
                .collect()
        }
        _ => panic!("flatness is defined for N = 2 or 3"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessSample {
    pub center: Point,
    pub radius: f64,
    pub normal: Point,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatnessReport {
    pub dim: usize,
    pub samples: Vec<FlatnessSample>,
    pub eps_max: f64,
    pub r0: f64,
}

/// Best-slab flatness of the boundary nodes in `B(center, r)`: the minimum
/// over scanned normals of half the slab width, divided by `r`, clamped to 1.
pub fn flatness_at(
    dom: &GridDomain,
    boundary: &[bool],
    center: Point,
    radius: f64,
    directions: &[Point],
) -> Result<FlatnessSample> {
    let lat = dom.lattice();
    let pts: Vec<Point> = lat
        .ball_indices(center, radius, true)
        .into_iter()
        .filter(|&i| boundary[i])
        .map(|i| lat.point(i))
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptyBall { center, radius });
    }
    let mut best = (f64::INFINITY, [0.0; 3]);
    for n in directions {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &pts {
            let s = (p[0] - center[0]) * n[0] + (p[1] - center[1]) * n[1] + (p[2] - center[2]) * n[2];
            lo = lo.min(s);
            hi = hi.max(s);
        }
        let half = 0.5 * (hi - lo);
        if half < best.0 {
            best = (half, *n);
        }
    }
    Ok(FlatnessSample {
        center,
        radius,
        normal: best.1,
        eps: (best.0 / radius).min(1.0),
    })
}

/// Flatness at explicit centers and radii.
pub fn measure_flatness_at(dom: &GridDomain, centers: &[Point], radii: &[f64]) -> Result<FlatnessReport> {
    if !(2..=3).contains(&dom.dim()) {
        return Err(Error::Domain("flatness needs N = 2 or 3".into()));
    }
    let h = dom.h();
    let half_diam = dom.extent_diameter() / 2.0;
    for &r in radii {
        if r < 4.0 * h * (1.0 - 1e-12) || r > half_diam {
            return Err(Error::Domain(format!(
                "radius {r} outside [4h, diameter/2] = [{}, {half_diam}]",
                4.0 * h
            )));
        }
    }
    let mut is_boundary = vec![false; dom.lattice().len()];
    for i in dom.boundary_points() {
        is_boundary[i] = true;
    }
    let directions = scan_directions(dom.dim());
    let tasks: Vec<(Point, f64)> = centers
        .iter()
        .flat_map(|c| radii.iter().map(move |r| (*c, *r)))
        .collect();
    let samples = tasks
        .par_iter()
        .map(|(c, r)| flatness_at(dom, &is_boundary, *c, *r, &directions))
        .collect::<Result<Vec<_>>>()?;
    let eps_max = samples.iter().fold(0.0f64, |a, s| a.max(s.eps));
    Ok(FlatnessReport {
        dim: dom.dim(),
        samples,
        eps_max,
        r0: radii.iter().cloned().fold(0.0, f64::max),
    })
}

/// Flatness at `n_centers` boundary nodes picked at even strides through
/// the boundary list.
pub fn measure_flatness(dom: &GridDomain, radii: &[f64], n_centers: usize) -> Result<FlatnessReport> {
    let centers = strided_boundary_centers(dom, n_centers);
    measure_flatness_at(dom, &centers, radii)
}

pub fn strided_boundary_centers(dom: &GridDomain, n: usize) -> Vec<Point> {
    strided(dom, &dom.boundary_points(), n)
}

/// As [`strided_boundary_centers`], over the exterior fringe.
pub fn strided_exterior_centers(dom: &GridDomain, n: usize) -> Vec<Point> {
    strided(dom, &dom.exterior_boundary_points(), n)
}

fn strided(dom: &GridDomain, bnd: &[usize], n: usize) -> Vec<Point> {
    if bnd.is_empty() || n == 0 {
        return Vec::new();
    }
    let n = n.min(bnd.len());
    (0..n)
        .map(|k| dom.lattice().point(bnd[k * bnd.len() / n]))
        .collect()
}

impl FlatnessReport {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        if self.dim == 3 {
            writeln!(w, "x,y,z,r,eps,nx,ny,nz")?;
        } else {
            writeln!(w, "x,y,r,eps,nx,ny")?;
        }
        for s in &self.samples {
            let c = &s.center;
            let n = &s.normal;
            if self.dim == 3 {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    fmt17(c[0]), fmt17(c[1]), fmt17(c[2]), fmt17(s.radius),
                    fmt17(s.eps), fmt17(n[0]), fmt17(n[1]), fmt17(n[2])
                )?;
            } else {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    fmt17(c[0]), fmt17(c[1]), fmt17(s.radius), fmt17(s.eps), fmt17(n[0]), fmt17(n[1])
                )?;
            }
        }
        Ok(())
    }
}

/// 17 significant digits, the round-trip precision of `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

// ---------------------------------------------------------------------------
// Raster persistence
//
// Header (16 bytes, little endian): N as u16, h as f64, three u16 extents.
// Body: row-major bitmask, bit k of byte k/8 is node k (LSB first).
// Sidecar JSON: label, generator parameters and the lattice origin.

pub const HEADER_LEN: usize = 16;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    label: String,
    params: Value,
    origin: [i64; 3],
}

impl GridDomain {
    pub fn write_raster(&self, mut w: impl Write) -> Result<()> {
        let ext = self.lattice.extents();
        if ext.iter().any(|&e| e > u16::MAX as usize) {
            return Err(Error::Format("lattice extent exceeds 65535 nodes".into()));
        }
        let mut header = [0u8; HEADER_LEN];
        header[0..2].copy_from_slice(&(self.dim() as u16).to_le_bytes());
        header[2..10].copy_from_slice(&self.h().to_le_bytes());
        for a in 0..3 {
            header[10 + 2 * a..12 + 2 * a].copy_from_slice(&(ext[a] as u16).to_le_bytes());
        }
        w.write_all(&header)?;
        let mut bits = vec![0u8; self.mask.len().div_ceil(8)];
        for (k, &b) in self.mask.iter().enumerate() {
            if b {
                bits[k / 8] |= 1 << (k % 8);
            }
        }
        w.write_all(&bits)?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&Sidecar {
            label: self.label.clone(),
            params: self.params.clone(),
            origin: self.lattice.lo(),
        })
        .expect("sidecar serializes")
    }

    /// Reads header and mask; the sidecar supplies label, params and origin.
    pub fn read_raster(mut r: impl Read, sidecar: &str) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(sidecar)?;
        let (lattice, mask) = read_header_and_mask(&mut r, side.origin)?;
        GridDomain::from_mask(lattice, mask, &side.label, side.params)
    }

    /// Writes `path` and `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_raster(&mut buf)?;
        fs::write(path, buf)?;
        fs::write(sidecar_path(path), self.sidecar_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = fs::read_to_string(sidecar_path(path))?;
        GridDomain::read_raster(fs::File::open(path)?, &side)
    }
}

pub(crate) fn read_header_and_mask(r: &mut impl Read, origin: [i64; 3]) -> Result<(Lattice, Vec<bool>)> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let dim = u16::from_le_bytes([header[0], header[1]]) as usize;
    let h = f64::from_le_bytes(header[2..10].try_into().unwrap());
    let mut ext = [0usize; 3];
    for a in 0..3 {
        ext[a] = u16::from_le_bytes([header[10 + 2 * a], header[11 + 2 * a]]) as usize;
    }
    if !(1..=3).contains(&dim) || !(h > 0.0) || ext.contains(&0) {
        return Err(Error::Format(format!("bad raster header: N={dim}, h={h}, extents={ext:?}")));
    }
    let lattice = Lattice::new(dim, h, origin, ext);
    let mut bits = vec![0u8; lattice.len().div_ceil(8)];
    r.read_exact(&mut bits)?;
    let mask = (0..lattice.len()).map(|k| bits[k / 8] >> (k % 8) & 1 == 1).collect();
    Ok((lattice, mask))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_space_ball_area() {
        let dom = half_space_ball(2, 1.0, 1.0 / 64.0).unwrap();
        let expected = PI / 2.0 * 64.0 * 64.0;
        let got = dom.inside_count() as f64;
        assert!((got - expected).abs() / expected < 0.03, "{got} vs {expected}");
        let lat = dom.lattice();
        assert!(!dom.contains(lat.index([0, 0, 0]).unwrap()));
        assert!(dom.contains(lat.index([0, 32, 0]).unwrap()));
        assert!(half_space_ball(2, 1.0, 0.1).is_err());
    }

    #[test]
    fn cone_examples() {
        let h = 1.0 / 32.0;
        let half = cone_domain(PI, 1.0, h).unwrap();
        let ball = half_space_ball(2, 1.0, h).unwrap();
        // same lattice box up to the lower padding; compare sets of points
        let set = |d: &GridDomain| {
            let mut v: Vec<_> = d.inside_indices().into_iter().map(|i| d.lattice().node(i)).collect();
            v.sort();
            v
        };
        assert_eq!(set(&half), set(&ball));

        let cone = cone_domain(1.5 * PI, 1.0, h).unwrap();
        let lat = cone.lattice();
        assert!(cone.contains(lat.index([-8, -8, 0]).unwrap())); // angle 5π/4
        assert!(!cone.contains(lat.index([8, -8, 0]).unwrap())); // angle 7π/4
        assert!(cone_domain(0.0, 1.0, h).is_err());
        assert!(cone_domain(2.0 * PI, 1.0, h).is_err());
    }

    #[test]
    fn boundary_of_half_ball_has_first_row() {
        let h = 1.0 / 64.0;
        let dom = half_space_ball(2, 1.0, h).unwrap();
        let bnd = dom.boundary_points();
        for k in -5..=5 {
            let idx = dom.lattice().index([k, 1, 0]).unwrap();
            assert!(bnd.contains(&idx));
        }
        // every boundary node has an outside node within one spacing
        for &i in &bnd {
            assert!(dom.axis_offsets().iter().any(|o| {
                dom.lattice().shifted(i, *o).is_none_or(|j| !dom.contains(j))
            }));
        }
    }

    #[test]
    fn rejects_full_box_and_disconnected_masks() {
        let lat = Lattice::new(2, 0.1, [0, 0, 0], [12, 12, 1]);
        assert!(GridDomain::from_mask(lat.clone(), vec![true; 144], "full", Value::Null).is_err());
        let mut mask = vec![false; 144];
        mask[lat.index([5, 5, 0]).unwrap()] = true;
        mask[lat.index([5, 7, 0]).unwrap()] = true;
        assert!(GridDomain::from_mask(lat.clone(), mask.clone(), "two", Value::Null).is_err());
        mask[lat.index([5, 6, 0]).unwrap()] = true;
        assert!(GridDomain::from_mask(lat, mask, "one", Value::Null).is_ok());
    }

    #[test]
    fn koch_polygon_vertex_count_and_resolution() {
        assert_eq!(koch_polygon(0.1, 3, 1.0, 6).len(), 6 * 64);
        assert!(koch_domain(0.1, 3, 0.5, 1.0 / 64.0).is_err());
        assert!(koch_domain(0.5, 1, 0.5, 1.0 / 64.0).is_err());
        let dom = koch_domain(0.1, 2, 0.5, 1.0 / 128.0).unwrap();
        assert_eq!(dom.label(), "koch");
    }

    #[test]
    fn koch_boundary_grows_with_depth() {
        let h = 1.0 / 256.0;
        let counts: Vec<usize> = (0..=3)
            .map(|d| koch_domain(0.2, d, 0.5, h).unwrap().boundary_points().len())
            .collect();
        assert!(counts.windows(2).all(|w| w[1] > w[0]), "{counts:?}");
    }

    fn koch_eps_max(delta: f64, h: f64) -> f64 {
        let dom = koch_domain(delta, 3, 0.5, h).unwrap();
        let all = dom.boundary_points().len();
        measure_flatness(&dom, &[8.0 * h, 1.0 / 16.0, 0.125], all).unwrap().eps_max
    }

    #[test]
    fn koch_flatness_moderate_amplitude() {
        let e = koch_eps_max(0.1, 1.0 / 256.0);
        assert!(e > 0.05 && e < 0.3, "eps_max {e}");
    }

    #[test]
    fn koch_flatness_monotone_in_delta() {
        let h = 1.0 / 256.0;
        let eps: Vec<f64> = [0.05, 0.1, 0.15, 0.2, 0.25].iter().map(|&d| koch_eps_max(d, h)).collect();
        assert!(eps.windows(2).all(|w| w[1] >= w[0]), "{eps:?}");
        // thin spikes need a finer lattice at the largest amplitude
        let h = 1.0 / 512.0;
        assert!(koch_domain(0.35, 3, 0.5, 1.0 / 256.0).is_err());
        assert!(koch_eps_max(0.35, h) > koch_eps_max(0.1, h));
    }

    #[test]
    fn koch_small_amplitude_sits_on_corner_plateau() {
        // a 120° corner against its best line gives ε = 1/4
        for delta in [0.0, 0.01, 0.05] {
            let e = koch_eps_max(delta, 1.0 / 256.0);
            assert!((e - 0.25).abs() < 0.02, "delta {delta}: {e}");
        }
    }

    #[test]
    fn koch_connected_over_parameter_grid() {
        for delta in [0.0, 0.05, 0.1, 0.2, 0.25] {
            for depth in 0..=3 {
                let dom = koch_domain(delta, depth, 0.5, 1.0 / 256.0).unwrap();
                for i in dom.boundary_points() {
                    assert!(dom.axis_offsets().iter().any(|&o| dom
                        .lattice()
                        .shifted(i, o)
                        .is_some_and(|j| !dom.contains(j))));
                }
            }
        }
    }

    #[test]
    fn flatness_of_flat_part() {
        let h = 1.0 / 64.0;
        let dom = half_space_ball(2, 1.0, h).unwrap();
        let centers = [[0.0, h, 0.0], [0.2, h, 0.0], [-0.1, h, 0.0]];
        for r in [4.0 * h, 8.0 * h, 0.25, 0.5] {
            let rep = measure_flatness_at(&dom, &centers, &[r]).unwrap();
            for s in &rep.samples {
                assert!(s.eps <= 2.0 * h / r + 1e-12, "eps {} at r {r}", s.eps);
                assert!(s.normal[1].abs() > 0.99);
            }
        }
    }

    #[test]
    fn flatness_of_cone_apex() {
        let h = 1.0 / 256.0;
        let dom = cone_domain(1.5 * PI, 1.0, h).unwrap();
        let apex = dom.boundary_points()
            .into_iter()
            .map(|i| dom.lattice().point(i))
            .min_by(|a, b| dist2(a, &[0.0; 3]).partial_cmp(&dist2(b, &[0.0; 3])).unwrap())
            .unwrap();
        let expected = (PI / 4.0).sin() / 2.0;
        for r in [0.1, 0.2, 0.4] {
            let rep = measure_flatness_at(&dom, &[apex], &[r]).unwrap();
            assert!((rep.eps_max - expected).abs() < 0.03, "r={r}: {} vs {expected}", rep.eps_max);
        }
    }

    #[test]
    fn flatness_radius_validation() {
        let h = 1.0 / 64.0;
        let dom = half_space_ball(2, 1.0, h).unwrap();
        assert!(measure_flatness(&dom, &[h], 4).is_err());
        assert!(measure_flatness(&dom, &[5.0], 4).is_err());
    }

    #[test]
    fn half_ball_flatness_shrinks_with_h() {
        let radii = [0.125, 0.25];
        let eps: Vec<f64> = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]
            .iter()
            .map(|&h| {
                let dom = half_space_ball(2, 1.0, h).unwrap();
                let centers: Vec<Point> = [-0.3, 0.0, 0.3].iter().map(|&x| [x, h, 0.0]).collect();
                measure_flatness_at(&dom, &centers, &radii).unwrap().eps_max
            })
            .collect();
        assert!(eps.windows(2).all(|w| w[1] <= w[0]), "{eps:?}");
    }

    #[test]
    fn raster_round_trip() {
        let dom = koch_domain(0.1, 2, 0.5, 1.0 / 128.0).unwrap();
        let mut buf = Vec::new();
        dom.write_raster(&mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + dom.lattice().len().div_ceil(8));
        let back = GridDomain::read_raster(&buf[..], &dom.sidecar_json()).unwrap();
        assert_eq!(back, dom);
    }

    #[test]
    fn three_dimensional_half_ball_flatness() {
        let h = 1.0 / 32.0;
        let dom = half_space_ball(3, 1.0, h).unwrap();
        let rep = measure_flatness_at(&dom, &[[0.0, 0.0, h]], &[0.25]).unwrap();
        assert!(rep.eps_max <= 2.0 * h / 0.25);
        let mut out = Vec::new();
        rep.write_csv(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("x,y,z,r,eps,nx,ny,nz\n"));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn boundary_nodes_touch_the_outside(kind in 0usize..4, radius in 0.5f64..1.5, inv_h in 32usize..64, omega in 0.6f64..6.0) {
            let h = 1.0 / inv_h as f64;
            let dom = match kind {
                0 => ball(2, radius, h),
                1 => half_space_ball(2, radius, h),
                2 => cone_domain(omega, radius, h),
                _ => ball(3, radius, radius / 16.0),
            }
            .unwrap();
            for i in dom.boundary_points() {
                let p = dom.lattice().point(i);
                let near = dom.lattice().ball_indices(p, dom.h() * 1.000001, true);
                proptest::prop_assert!(near.iter().any(|&j| !dom.contains(j)));
            }
        }
    }
}
