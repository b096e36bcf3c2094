//! Exact convex polygon algebra on the (position, speed) plane.
//!
//! Bounded sets carry both vertex and halfspace forms. Unbounded sets (light
//! stop regions, collision constraints, crossing targets) are kept as bare
//! halfspace lists. All uncertainty sets here are segments along the position
//! axis, so Pontryagin differences reduce to offset shifts.

use nalgebra::Vector2;
use thiserror::Error;

pub type Point = Vector2<f64>;

/// Collinearity / duplicate tolerance in metres.
pub const EPS: f64 = 1e-9;

/// Half-width of the box used to test halfspace-only regions for emptiness.
const BIG: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("convex hull of an empty point set")]
    EmptyHull,
    #[error("non-finite coordinate in input")]
    NonFinite,
    #[error("operation needs a bounded polygon")]
    Unbounded,
    #[error("segment bounds reversed: lo={lo} > hi={hi}")]
    BadSegment { lo: f64, hi: f64 },
}

/// `normal · x <= offset`, normal has unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Halfspace {
    pub normal: Vector2<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vector2<f64>, offset: f64) -> Self {
        let n = normal.norm();
        debug_assert!(n > 0.0, "zero halfspace normal");
        Self {
            normal: normal / n,
            offset: offset / n,
        }
    }

    /// `s <= b`
    pub fn position_at_most(b: f64) -> Self {
        Self::new(Vector2::new(1.0, 0.0), b)
    }

    /// `s >= b`
    pub fn position_at_least(b: f64) -> Self {
        Self::new(Vector2::new(-1.0, 0.0), -b)
    }

    pub fn speed_at_most(b: f64) -> Self {
        Self::new(Vector2::new(0.0, 1.0), b)
    }

    pub fn speed_at_least(b: f64) -> Self {
        Self::new(Vector2::new(0.0, -1.0), -b)
    }

    #[inline]
    pub fn eval(&self, p: &Point) -> f64 {
        self.normal.dot(p) - self.offset
    }

    #[inline]
    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        self.eval(p) <= tol
    }

    /// Tightening so that `x + w` stays inside for every `w` in the segment.
    pub fn erode(&self, seg: &AxisSegment) -> Halfspace {
        let a = self.normal.x;
        Halfspace {
            normal: self.normal,
            offset: self.offset - (a * seg.lo).max(a * seg.hi),
        }
    }

    /// Uniform outward push of the face by `d`.
    pub fn inflate(&self, d: f64) -> Halfspace {
        Halfspace {
            normal: self.normal,
            offset: self.offset + d,
        }
    }

    /// Re-express in coordinates shifted by `-shift` along position.
    pub fn shift_position(&self, shift: f64) -> Halfspace {
        Halfspace {
            normal: self.normal,
            offset: self.offset + self.normal.x * shift,
        }
    }
}

/// Interval on the position axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSegment {
    pub lo: f64,
    pub hi: f64,
}

impl AxisSegment {
    pub fn new(lo: f64, hi: f64) -> Result<Self, GeometryError> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if lo > hi {
            return Err(GeometryError::BadSegment { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub const ZERO: AxisSegment = AxisSegment { lo: 0.0, hi: 0.0 };

    pub fn scaled(&self, f: f64) -> AxisSegment {
        let (a, b) = (self.lo * f, self.hi * f);
        AxisSegment {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn endpoints(&self) -> [Point; 2] {
        [Vector2::new(self.lo, 0.0), Vector2::new(self.hi, 0.0)]
    }
}

/// Bounded convex polygon. Vertices are CCW with no repeated or collinear
/// points; one or two vertices encode a point or a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
    halfspaces: Vec<Halfspace>,
}

impl Polygon {
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn from_box(s_lo: f64, s_hi: f64, v_lo: f64, v_hi: f64) -> Polygon {
        convex_hull(&[
            Vector2::new(s_lo, v_lo),
            Vector2::new(s_hi, v_lo),
            Vector2::new(s_hi, v_hi),
            Vector2::new(s_lo, v_hi),
        ])
        .expect("box corners are finite")
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        self.halfspaces.iter().all(|h| h.contains(p, tol))
    }

    pub fn minkowski_sum_segment(&self, seg: &AxisSegment) -> Polygon {
        let mut pts = Vec::with_capacity(2 * self.vertices.len());
        for v in &self.vertices {
            pts.push(v + Vector2::new(seg.lo, 0.0));
            pts.push(v + Vector2::new(seg.hi, 0.0));
        }
        convex_hull(&pts).expect("non-empty")
    }

    pub fn pontryagin_diff_segment(&self, seg: &AxisSegment) -> Region {
        let tight: Vec<Halfspace> = self.halfspaces.iter().map(|h| h.erode(seg)).collect();
        clip_polygon(&self.vertices, &tight)
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    fn from_canonical(vertices: Vec<Point>) -> Polygon {
        let halfspaces = halfspaces_of(&vertices);
        Polygon {
            vertices,
            halfspaces,
        }
    }
}

/// Possibly unbounded intersection of halfspaces, known to be non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceRegion {
    halfspaces: Vec<Halfspace>,
}

impl HalfspaceRegion {
    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Empty,
    Polygon(Polygon),
    Halfspaces(HalfspaceRegion),
}

impl Region {
    /// Builds a halfspace-only region, detecting emptiness.
    pub fn from_halfspaces(hs: Vec<Halfspace>) -> Region {
        if hs.is_empty() {
            return Region::Halfspaces(HalfspaceRegion { halfspaces: hs });
        }
        let bx = Polygon::from_box(-BIG, BIG, -BIG, BIG);
        match clip_polygon(bx.vertices(), &hs) {
            Region::Empty => Region::Empty,
            _ => Region::Halfspaces(HalfspaceRegion { halfspaces: hs }),
        }
    }

    /// The whole plane.
    pub fn everything() -> Region {
        Region::Halfspaces(HalfspaceRegion { halfspaces: vec![] })
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Region::Empty)
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        match self {
            Region::Empty => &[],
            Region::Polygon(p) => p.halfspaces(),
            Region::Halfspaces(h) => h.halfspaces(),
        }
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        match self {
            Region::Empty => false,
            Region::Polygon(poly) => poly.contains(p, tol),
            Region::Halfspaces(h) => h.halfspaces.iter().all(|hs| hs.contains(p, tol)),
        }
    }

    pub fn pontryagin_diff_segment(&self, seg: &AxisSegment) -> Region {
        match self {
            Region::Empty => Region::Empty,
            Region::Polygon(p) => p.pontryagin_diff_segment(seg),
            Region::Halfspaces(h) => {
                Region::from_halfspaces(h.halfspaces.iter().map(|x| x.erode(seg)).collect())
            }
        }
    }

    pub fn minkowski_sum_segment(&self, seg: &AxisSegment) -> Result<Region, GeometryError> {
        match self {
            Region::Empty => Ok(Region::Empty),
            Region::Polygon(p) => Ok(Region::Polygon(p.minkowski_sum_segment(seg))),
            Region::Halfspaces(_) => Err(GeometryError::Unbounded),
        }
    }

    pub fn intersect(&self, other: &Region) -> Region {
        intersect(self, other)
    }
}

impl From<Polygon> for Region {
    fn from(p: Polygon) -> Self {
        Region::Polygon(p)
    }
}

#[inline]
fn cross(o: &Point, a: &Point, b: &Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// True when `a` is right of, or within `EPS` of, the line `o -> b`.
#[inline]
fn not_left(o: &Point, a: &Point, b: &Point) -> bool {
    let len = (b - o).norm();
    if len <= EPS {
        return true;
    }
    cross(o, a, b) / len <= EPS
}

/// Andrew's monotone chain, CCW output starting at the lexicographic minimum.
pub fn convex_hull(points: &[Point]) -> Result<Polygon, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyHull);
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(GeometryError::NonFinite);
    }
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| (*a - *b).norm() <= EPS);
    if pts.len() == 1 {
        return Ok(Polygon::from_canonical(pts));
    }

    let mut lower: Vec<Point> = Vec::with_capacity(pts.len());
    for p in &pts {
        while lower.len() >= 2 && not_left(&lower[lower.len() - 2], &lower[lower.len() - 1], p) {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Point> = Vec::with_capacity(pts.len());
    for p in pts.iter().rev() {
        while upper.len() >= 2 && not_left(&upper[upper.len() - 2], &upper[upper.len() - 1], p) {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    // near-coincident endpoints can survive the chain
    let mut hull: Vec<Point> = Vec::with_capacity(lower.len());
    for p in lower {
        if hull.last().is_none_or(|q: &Point| (p - q).norm() > EPS) {
            hull.push(p);
        }
    }
    while hull.len() > 1 && (hull[0] - hull[hull.len() - 1]).norm() <= EPS {
        hull.pop();
    }
    Ok(Polygon::from_canonical(hull))
}

fn halfspaces_of(v: &[Point]) -> Vec<Halfspace> {
    match v.len() {
        1 => {
            let p = v[0];
            vec![
                Halfspace::position_at_most(p.x),
                Halfspace::position_at_least(p.x),
                Halfspace::speed_at_most(p.y),
                Halfspace::speed_at_least(p.y),
            ]
        }
        2 => {
            let (p, q) = (v[0], v[1]);
            let d = (q - p).normalize();
            let n = Vector2::new(d.y, -d.x);
            vec![
                Halfspace::new(n, n.dot(&p)),
                Halfspace::new(-n, -n.dot(&p)),
                Halfspace::new(d, d.dot(&q)),
                Halfspace::new(-d, -d.dot(&p)),
            ]
        }
        n => (0..n)
            .map(|i| {
                let p = v[i];
                let q = v[(i + 1) % n];
                let e = q - p;
                let normal = Vector2::new(e.y, -e.x);
                Halfspace::new(normal, normal.dot(&p))
            })
            .collect(),
    }
}

fn clip_one(poly: &[Point], h: &Halfspace) -> Vec<Point> {
    let n = poly.len();
    if n == 1 {
        return if h.contains(&poly[0], EPS) {
            poly.to_vec()
        } else {
            vec![]
        };
    }
    let mut out = Vec::with_capacity(n + 2);
    let edges = if n == 2 { 1 } else { n };
    for i in 0..edges {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let fp = h.eval(&p);
        let fq = h.eval(&q);
        if fp <= EPS {
            out.push(p);
        }
        if (fp < -EPS && fq > EPS) || (fp > EPS && fq < -EPS) {
            let t = fp / (fp - fq);
            out.push(p + (q - p) * t);
        }
        if n == 2 && fq <= EPS {
            out.push(q);
        }
    }
    out
}

fn clip_polygon(vertices: &[Point], hs: &[Halfspace]) -> Region {
    let mut cur = vertices.to_vec();
    for h in hs {
        cur = clip_one(&cur, h);
        if cur.is_empty() {
            return Region::Empty;
        }
        cur = convex_hull(&cur).expect("non-empty").vertices;
    }
    Region::Polygon(Polygon::from_canonical(cur))
}

/// Halfspace intersection; bounded whenever either input is.
pub fn intersect(a: &Region, b: &Region) -> Region {
    match (a, b) {
        (Region::Empty, _) | (_, Region::Empty) => Region::Empty,
        (Region::Polygon(p), other) | (other, Region::Polygon(p)) => {
            clip_polygon(p.vertices(), other.halfspaces())
        }
        (Region::Halfspaces(x), Region::Halfspaces(y)) => {
            let mut hs = x.halfspaces.clone();
            hs.extend_from_slice(&y.halfspaces);
            Region::from_halfspaces(hs)
        }
    }
}
