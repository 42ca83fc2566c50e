//! Uniform two-dimensional lattices: periodic tori and polygonal Lipschitz
//! domains rasterized onto a square of side `extent`.
//!
//! Fields live at cell centers. A cell with indices `(i, j)` has center
//! `((i + 1/2) h, (j + 1/2) h)` and flat index `j * n + i`. Nodal fields
//! (finite element unknowns) live at cell corners; see [`Grid::nodes_per_side`].

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    PeriodicTorus,
    MaskedDomain,
}

/// Polygonal domains available for masked grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    UnitSquare,
    /// Square minus its upper-right quadrant; the re-entrant corner sits at
    /// the centroid of the bounding square.
    LShape,
    /// Square whose bottom edge is replaced by `k` triangular teeth of slope 1.
    Sawtooth(usize),
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::UnitSquare => write!(f, "unit-square"),
            Shape::LShape => write!(f, "l-shape"),
            Shape::Sawtooth(k) => write!(f, "sawtooth({k})"),
        }
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "unit-square" | "square" => return Ok(Shape::UnitSquare),
            "l-shape" => return Ok(Shape::LShape),
            _ => {}
        }
        let teeth = s
            .strip_prefix("sawtooth(")
            .and_then(|rest| rest.strip_suffix(')'))
            .or_else(|| s.strip_prefix("sawtooth:"));
        match teeth.map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 1 => Ok(Shape::Sawtooth(k)),
            _ => Err(Error::UnknownShape(s.to_string())),
        }
    }
}

impl Serialize for Shape {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Shape {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Shape {
    /// Closed boundary polygon (counter-clockwise) of the shape scaled to `extent`.
    pub fn polygon(&self, extent: f64) -> Vec<[f64; 2]> {
        let e = extent;
        match *self {
            Shape::UnitSquare => vec![[0.0, 0.0], [e, 0.0], [e, e], [0.0, e]],
            Shape::LShape => vec![
                [0.0, 0.0],
                [e, 0.0],
                [e, 0.5 * e],
                [0.5 * e, 0.5 * e],
                [0.5 * e, e],
                [0.0, e],
            ],
            Shape::Sawtooth(k) => {
                let w = e / k as f64;
                let mut pts = Vec::with_capacity(2 * k + 3);
                for t in 0..k {
                    pts.push([t as f64 * w, 0.0]);
                    pts.push([(t as f64 + 0.5) * w, 0.5 * w]);
                }
                pts.push([e, 0.0]);
                pts.push([e, e]);
                pts.push([0.0, e]);
                pts
            }
        }
    }
}

/// Rasterized domain: membership, distance to the boundary, and diameter.
#[derive(Debug, Clone)]
pub struct DomainMask {
    pub shape: Shape,
    pub inside: Vec<bool>,
    /// Euclidean distance from each cell center to the polygon boundary
    /// (zero for cells outside).
    pub delta: Vec<f64>,
    /// Diameter `R0` of the domain.
    pub diameter: f64,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct Grid {
    n: usize,
    extent: f64,
    h: f64,
    topology: Topology,
    mask: Option<DomainMask>,
}

impl Grid {
    /// Grid on the unit square (extent 1).
    pub fn new(n: usize, topology: Topology, shape: Option<Shape>) -> Result<Self> {
        Self::with_extent(n, 1.0, topology, shape)
    }

    pub fn with_extent(
        n: usize,
        extent: f64,
        topology: Topology,
        shape: Option<Shape>,
    ) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidGrid(format!("n = {n} < 4")));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "extent {extent} must be positive"
            )));
        }
        let h = extent / n as f64;
        match (topology, shape) {
            (Topology::PeriodicTorus, None) => Ok(Grid {
                n,
                extent,
                h,
                topology,
                mask: None,
            }),
            (Topology::PeriodicTorus, Some(_)) => Err(Error::InvalidGrid(
                "periodic tori do not take a shape".into(),
            )),
            (Topology::MaskedDomain, None) => {
                Err(Error::InvalidGrid("masked domains require a shape".into()))
            }
            (Topology::MaskedDomain, Some(shape)) => {
                let mask = rasterize(n, extent, shape)?;
                Ok(Grid {
                    n,
                    extent,
                    h,
                    topology,
                    mask: Some(mask),
                })
            }
        }
    }

    pub fn periodic(n: usize, extent: f64) -> Result<Self> {
        Self::with_extent(n, extent, Topology::PeriodicTorus, None)
    }

    pub fn masked(n: usize, extent: f64, shape: Shape) -> Result<Self> {
        Self::with_extent(n, extent, Topology::MaskedDomain, Some(shape))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn is_periodic(&self) -> bool {
        self.topology == Topology::PeriodicTorus
    }

    pub fn mask(&self) -> Option<&DomainMask> {
        self.mask.as_ref()
    }

    pub fn shape(&self) -> Option<Shape> {
        self.mask.as_ref().map(|m| m.shape)
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn cell_ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    #[inline]
    pub fn cell_center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.cell_ij(idx);
        [(i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h]
    }

    #[inline]
    pub fn inside(&self, idx: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m.inside[idx])
    }

    pub fn inside_count(&self) -> usize {
        match &self.mask {
            None => self.cell_count(),
            Some(m) => m.inside.iter().filter(|&&b| b).count(),
        }
    }

    /// Distance from the cell center to the boundary; infinite on tori.
    #[inline]
    pub fn delta(&self, idx: usize) -> f64 {
        self.mask.as_ref().map_or(f64::INFINITY, |m| m.delta[idx])
    }

    /// Domain diameter `R0`; for tori, the diameter of the fundamental cell.
    pub fn diameter(&self) -> f64 {
        self.mask
            .as_ref()
            .map_or(self.extent * std::f64::consts::SQRT_2, |m| m.diameter)
    }

    /// Number of nodes per side: `n` on a torus (wrap-around), `n + 1` otherwise.
    pub fn nodes_per_side(&self) -> usize {
        if self.is_periodic() {
            self.n
        } else {
            self.n + 1
        }
    }

    pub fn node_count(&self) -> usize {
        let m = self.nodes_per_side();
        m * m
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.nodes_per_side() + i
    }

    #[inline]
    pub fn node_position(&self, idx: usize) -> [f64; 2] {
        let m = self.nodes_per_side();
        [(idx % m) as f64 * self.h, (idx / m) as f64 * self.h]
    }

    /// The four corner nodes of a cell in the order (0,0), (1,0), (0,1), (1,1).
    #[inline]
    pub fn cell_nodes(&self, idx: usize) -> [usize; 4] {
        let (i, j) = self.cell_ij(idx);
        if self.is_periodic() {
            let n = self.n;
            let (i1, j1) = ((i + 1) % n, (j + 1) % n);
            [j * n + i, j * n + i1, j1 * n + i, j1 * n + i1]
        } else {
            let m = self.n + 1;
            [
                j * m + i,
                j * m + i + 1,
                (j + 1) * m + i,
                (j + 1) * m + i + 1,
            ]
        }
    }

    /// Displacement `b - a`, using the minimum image on tori.
    #[inline]
    pub fn displacement(&self, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        let mut d = [b[0] - a[0], b[1] - a[1]];
        if self.is_periodic() {
            for c in &mut d {
                *c -= self.extent * (*c / self.extent).round();
            }
        }
        d
    }

    #[inline]
    pub fn distance(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        let d = self.displacement(a, b);
        d[0].hypot(d[1])
    }

    /// Index of the cell containing a point (wrapped on tori, clamped otherwise).
    pub fn locate_cell(&self, p: [f64; 2]) -> usize {
        let coord = |x: f64| -> usize {
            let k = (x / self.h).floor() as i64;
            if self.is_periodic() {
                k.rem_euclid(self.n as i64) as usize
            } else {
                k.clamp(0, self.n as i64 - 1) as usize
            }
        };
        self.cell_index(coord(p[0]), coord(p[1]))
    }

    /// Calls `visit` for every cell whose center lies in the closed ball
    /// `|x - center| <= radius` (minimum image on tori, each cell once).
    pub fn for_each_cell_in_ball(
        &self,
        center: [f64; 2],
        radius: f64,
        mut visit: impl FnMut(usize),
    ) {
        self.for_each_row_interval(center, radius, |j, k0, k1| {
            for k in k0..=k1 {
                visit(self.cell_index(self.wrap(k), j));
            }
        });
    }

    #[inline]
    fn wrap(&self, k: i64) -> usize {
        k.rem_euclid(self.n as i64) as usize
    }

    /// Enumerates, per row `j`, the inclusive range of (unwrapped) column
    /// offsets whose cell centers lie in the ball.
    pub(crate) fn for_each_row_interval(
        &self,
        center: [f64; 2],
        radius: f64,
        mut visit: impl FnMut(usize, i64, i64),
    ) {
        let h = self.h;
        let n = self.n as i64;
        let r2 = radius * radius;
        let half = 0.5 * self.extent;
        let periodic = self.is_periodic();

        let (row_lo, row_hi) = if periodic && radius >= half {
            (0, n - 1)
        } else {
            let lo = ((center[1] - radius) / h - 0.5).ceil() as i64 - 1;
            let hi = ((center[1] + radius) / h - 0.5).floor() as i64 + 1;
            if periodic {
                (lo, hi)
            } else {
                (lo.max(0), hi.min(n - 1))
            }
        };
        for jr in row_lo..=row_hi {
            let y = (jr as f64 + 0.5) * h;
            let mut dy = y - center[1];
            if periodic && radius >= half {
                dy -= self.extent * (dy / self.extent).round();
            }
            let rem = r2 - dy * dy;
            if rem < 0.0 {
                continue;
            }
            let j = if periodic { self.wrap(jr) } else { jr as usize };
            let w = rem.sqrt();
            if periodic && w >= half {
                visit(j, 0, n - 1);
                continue;
            }
            let inside = |k: i64| {
                let dx = (k as f64 + 0.5) * h - center[0];
                dx * dx <= rem
            };
            let mut k0 = ((center[0] - w) / h - 0.5).ceil() as i64;
            let mut k1 = ((center[0] + w) / h - 0.5).floor() as i64;
            while inside(k0 - 1) {
                k0 -= 1;
            }
            while !inside(k0) && k0 <= k1 {
                k0 += 1;
            }
            while inside(k1 + 1) {
                k1 += 1;
            }
            while !inside(k1) && k1 >= k0 {
                k1 -= 1;
            }
            if !periodic {
                k0 = k0.max(0);
                k1 = k1.min(n - 1);
            } else if k1 - k0 + 1 > n {
                k1 = k0 + n - 1;
            }
            if k0 <= k1 {
                visit(j, k0, k1);
            }
        }
    }

    /// Writes `x, y, inside, delta` per cell.
    pub fn write_mask_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,inside,delta")?;
        for idx in 0..self.cell_count() {
            let [x, y] = self.cell_center(idx);
            let delta = self.mask.as_ref().map_or(f64::INFINITY, |m| m.delta[idx]);
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(x),
                fmt_f64(y),
                u8::from(self.inside(idx)),
                fmt_f64(delta)
            )?;
        }
        Ok(())
    }
}

/// Which cells of a ball enter an average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallRegion {
    FullBall,
    IntersectDomain,
}

/// Arithmetic mean of a cell field over the cells whose centers lie in
/// `B_radius(center)`, optionally intersected with the domain.
pub fn ball_average(
    grid: &Grid,
    field: &[f64],
    center: [f64; 2],
    radius: f64,
    region: BallRegion,
) -> Result<f64> {
    if radius < grid.h() {
        return Err(Error::invalid(format!(
            "ball radius {radius} is below the grid spacing {}",
            grid.h()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    grid.for_each_cell_in_ball(center, radius, |idx| {
        if region == BallRegion::FullBall || grid.inside(idx) {
            sum += field[idx];
            count += 1;
        }
    });
    if count == 0 {
        return Err(Error::EmptyRegion {
            x: center[0],
            y: center[1],
            radius,
        });
    }
    Ok(sum / count as f64)
}

/// Fast repeated ball averages via per-row prefix sums.
///
/// The cell selection is identical to [`ball_average`]; only the summation
/// order differs.
#[derive(Debug, Clone)]
pub struct BallAverager<'g> {
    grid: &'g Grid,
    // per row: n + 1 prefix entries
    values: Vec<f64>,
    counts: Vec<f64>,
}

impl<'g> BallAverager<'g> {
    pub fn new(grid: &'g Grid, field: &[f64], region: BallRegion) -> Self {
        let n = grid.n();
        let mut values = vec![0.0; n * (n + 1)];
        let mut counts = vec![0.0; n * (n + 1)];
        for j in 0..n {
            let base = j * (n + 1);
            for i in 0..n {
                let idx = grid.cell_index(i, j);
                let take = region == BallRegion::FullBall || grid.inside(idx);
                let (v, c) = if take { (field[idx], 1.0) } else { (0.0, 0.0) };
                values[base + i + 1] = values[base + i] + v;
                counts[base + i + 1] = counts[base + i] + c;
            }
        }
        BallAverager {
            grid,
            values,
            counts,
        }
    }

    #[inline]
    fn row_sum(&self, table: &[f64], j: usize, k0: i64, k1: i64) -> f64 {
        let n = self.grid.n() as i64;
        let base = j * (self.grid.n() + 1);
        let prefix = |k: i64| table[base + k as usize];
        // [k0, k1] may wrap on tori; split into in-range pieces
        let q0 = k0.div_euclid(n);
        let q1 = k1.div_euclid(n);
        let r0 = k0.rem_euclid(n);
        let r1 = k1.rem_euclid(n);
        if q0 == q1 {
            prefix(r1 + 1) - prefix(r0)
        } else {
            let full = (q1 - q0 - 1) as f64 * prefix(n);
            (prefix(n) - prefix(r0)) + full + prefix(r1 + 1)
        }
    }

    /// Sum and cell count over the ball.
    pub fn sum_count(&self, center: [f64; 2], radius: f64) -> (f64, f64) {
        let mut s = 0.0;
        let mut c = 0.0;
        self.grid
            .for_each_row_interval(center, radius, |j, k0, k1| {
                s += self.row_sum(&self.values, j, k0, k1);
                c += self.row_sum(&self.counts, j, k0, k1);
            });
        (s, c)
    }

    pub fn average(&self, center: [f64; 2], radius: f64) -> Option<f64> {
        let (s, c) = self.sum_count(center, radius);
        (c > 0.5).then(|| s / c)
    }
}

/// Inside cells with `delta <= r` (the boundary layer `O_r`).
pub fn layer_set(grid: &Grid, r: f64) -> Result<Vec<bool>> {
    let mask = grid
        .mask()
        .ok_or_else(|| Error::invalid("layer sets need a masked domain"))?;
    if !(r > 0.0) {
        return Err(Error::invalid(format!("layer width {r} must be positive")));
    }
    Ok(mask
        .inside
        .iter()
        .zip(&mask.delta)
        .map(|(&inside, &d)| inside && d <= r)
        .collect())
}

fn rasterize(n: usize, extent: f64, shape: Shape) -> Result<DomainMask> {
    if let Shape::Sawtooth(k) = shape {
        if 4 * k > n {
            return Err(Error::InvalidGrid(format!(
                "sawtooth({k}) needs at least {} cells per side",
                4 * k
            )));
        }
    }
    let polygon = shape.polygon(extent);
    let h = extent / n as f64;
    let tiny = 1e-9 * h;
    let mut inside = vec![false; n * n];
    let mut delta = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let p = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
            let d = boundary_distance(&polygon, p);
            let idx = j * n + i;
            if d > tiny && point_in_polygon(&polygon, p) {
                inside[idx] = true;
                delta[idx] = d;
            }
        }
    }
    check_connected(n, &inside)?;
    let mut diameter: f64 = 0.0;
    for a in &polygon {
        for b in &polygon {
            diameter = diameter.max((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    Ok(DomainMask {
        shape,
        inside,
        delta,
        diameter,
        polygon,
    })
}

fn point_in_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    let m = poly.len();
    for a in 0..m {
        let (pa, pb) = (poly[a], poly[(a + 1) % m]);
        if (pa[1] > p[1]) != (pb[1] > p[1]) {
            let x = pa[0] + (p[1] - pa[1]) / (pb[1] - pa[1]) * (pb[0] - pa[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn boundary_distance(poly: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let m = poly.len();
    (0..m)
        .map(|a| segment_distance(poly[a], poly[(a + 1) % m], p))
        .fold(f64::INFINITY, f64::min)
}

fn segment_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0);
    (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
}

fn check_connected(n: usize, inside: &[bool]) -> Result<()> {
    let total = inside.iter().filter(|&&b| b).count();
    let Some(start) = inside.iter().position(|&b| b) else {
        return Err(Error::InvalidGrid("domain mask is empty".into()));
    };
    let mut seen = vec![false; inside.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut reached = 0;
    while let Some(idx) = stack.pop() {
        reached += 1;
        let (i, j) = (idx % n, idx / n);
        let mut push = |ii: usize, jj: usize| {
            let k = jj * n + ii;
            if inside[k] && !seen[k] {
                seen[k] = true;
                stack.push(k);
            }
        };
        if i > 0 {
            push(i - 1, j);
        }
        if i + 1 < n {
            push(i + 1, j);
        }
        if j > 0 {
            push(i, j - 1);
        }
        if j + 1 < n {
            push(i, j + 1);
        }
    }
    if reached != total {
        return Err(Error::InvalidGrid(format!(
            "domain mask has {} cells outside the main component",
            total - reached
        )));
    }
    Ok(())
}
