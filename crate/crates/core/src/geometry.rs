//! Bounded convex domains in one and two dimensions and their geometric queries.

use crate::error::{Error, Result};
use crate::grid::Point;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub type Mat2 = [[f64; 2]; 2];

/// Boundary point with outward unit normal and surface weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySample {
    pub point: Point,
    pub normal: Point,
    pub weight: f64,
}

/// A displacement field `d` used to build mapped domains `{x + t·d(x)}`.
pub trait Displacement: Send + Sync + fmt::Debug {
    fn displacement(&self, x: Point) -> Point;
    fn lipschitz(&self) -> f64;
}

#[derive(Clone, Debug)]
enum Shape {
    Interval { lo: f64, hi: f64 },
    /// `{x : (x−c)ᵀ Q (x−c) < 1}`; `radius` is set for balls.
    Ellipse { center: Point, q: Mat2, radius: Option<f64> },
    /// Counterclockwise vertices.
    Polygon { vertices: Vec<Point> },
    /// Image of `base` under `x ↦ x + t·d(x)`.
    Mapped { base: Box<ConvexDomain>, field: Arc<dyn Displacement>, t: f64, outline: Vec<Point> },
}

/// Kind tag of a domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Interval,
    Ball,
    Ellipse,
    Polygon,
    Mapped,
}

/// Validated bounded convex domain.
#[derive(Clone, Debug)]
pub struct ConvexDomain {
    shape: Shape,
    bbox: (Point, Point),
    volume: f64,
}

/// Serializable domain description: `{"kind": ..., "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum DomainSpec {
    Interval {
        lo: f64,
        hi: f64,
    },
    Ball {
        #[serde(default)]
        center: [f64; 2],
        radius: f64,
    },
    Ellipse {
        #[serde(default)]
        center: [f64; 2],
        semi_axes: [f64; 2],
        /// Rotation of the first semi-axis from the x axis, radians.
        #[serde(default)]
        angle: f64,
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
    },
}

/// Validate a description and build the domain.
pub fn build_domain(spec: &DomainSpec) -> Result<ConvexDomain> {
    match spec {
        DomainSpec::Interval { lo, hi } => ConvexDomain::interval(*lo, *hi),
        DomainSpec::Ball { center, radius } => ConvexDomain::ball(*center, *radius),
        DomainSpec::Ellipse { center, semi_axes, angle } => {
            ConvexDomain::ellipse(*center, *semi_axes, *angle)
        }
        DomainSpec::Polygon { vertices } => ConvexDomain::polygon(vertices.clone()),
    }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn mat_vec(a: &Mat2, x: Point) -> Point {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

fn inverse(a: &Mat2) -> Result<Mat2> {
    let d = det(a);
    if d.abs() < 1e-300 {
        return Err(Error::Degenerate("singular linear map".into()));
    }
    Ok([[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]])
}

/// Rotation by `phi` (counterclockwise).
pub fn rotation(phi: f64) -> Mat2 {
    let (s, c) = phi.sin_cos();
    [[c, -s], [s, c]]
}

/// Eigen-decomposition of a symmetric 2×2 matrix: ascending eigenvalues and the unit
/// eigenvector of the smaller one (the other is its +90° rotation).
fn sym_eigen(q: &Mat2) -> (f64, f64, Point) {
    let (a, b, d) = (q[0][0], 0.5 * (q[0][1] + q[1][0]), q[1][1]);
    let m = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (m - r, m + r);
    // Two candidate eigenvectors; the longer one is well conditioned.
    let c1 = [b, l1 - a];
    let c2 = [l1 - d, b];
    let c = if norm(c1) >= norm(c2) { c1 } else { c2 };
    let n = norm(c);
    let v = if n > 0.0 {
        [c[0] / n, c[1] / n]
    } else if a <= d {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    (l1, l2, v)
}

/// Distance from `(y0, y1)` (first quadrant) to the ellipse with semi-axes `e0 ≥ e1`,
/// following Eberly's bisection method.
fn ellipse_distance_quadrant(e0: f64, e1: f64, y0: f64, y1: f64) -> f64 {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g != 0.0 {
                let r0 = (e0 / e1) * (e0 / e1);
                let sbar = ellipse_root(r0, z0, z1, g);
                let x0 = r0 * y0 / (sbar + r0);
                let x1 = y1 / (sbar + 1.0);
                (x0 - y0).hypot(x1 - y1)
            } else {
                0.0
            }
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer0 = e0 * y0;
        let denom0 = e0 * e0 - e1 * e1;
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            let x0 = e0 * xde0;
            let x1 = e1 * (1.0 - xde0 * xde0).max(0.0).sqrt();
            (x0 - y0).hypot(x1)
        } else {
            (y0 - e0).abs()
        }
    }
}

fn ellipse_root(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..200 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        let gs = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if gs > 0.0 {
            s0 = s;
        } else if gs < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    norm([ap[0] - t * ab[0], ap[1] - t * ab[1]])
}

fn shoelace(v: &[Point]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| cross(v[i], v[(i + 1) % n])).sum::<f64>()
}

/// Index of the first vertex where a closed polyline fails to turn strictly left, or
/// `None` when it is a strictly convex counterclockwise loop.
fn first_nonconvex_vertex(v: &[Point], tol: f64) -> Option<usize> {
    let n = v.len();
    let mut turning = 0.0;
    for i in 0..n {
        let e_in = sub(v[i], v[(i + n - 1) % n]);
        let e_out = sub(v[(i + 1) % n], v[i]);
        let c = cross(e_in, e_out);
        if c <= tol * norm(e_in) * norm(e_out) {
            return Some(i);
        }
        turning += c.atan2(e_in[0] * e_out[0] + e_in[1] * e_out[1]);
    }
    if (turning - 2.0 * PI).abs() > 1e-6 {
        return Some(0);
    }
    None
}

const MAPPED_OUTLINE: usize = 4096;

impl ConvexDomain {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Degenerate(format!("interval ({lo}, {hi})")));
        }
        Ok(ConvexDomain { shape: Shape::Interval { lo, hi }, bbox: ([lo, 0.0], [hi, 0.0]), volume: hi - lo })
    }

    pub fn ball(center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Degenerate(format!("radius {radius}")));
        }
        let q = [[1.0 / (radius * radius), 0.0], [0.0, 1.0 / (radius * radius)]];
        Ok(Self::ellipse_raw(center, q, Some(radius)))
    }

    /// Ellipse with semi-axes `axes`, the first rotated by `angle` from the x axis.
    pub fn ellipse(center: Point, axes: [f64; 2], angle: f64) -> Result<Self> {
        if !(axes[0] > 0.0 && axes[1] > 0.0) || !axes.iter().all(|a| a.is_finite()) {
            return Err(Error::Degenerate(format!("semi-axes {axes:?}")));
        }
        let r = rotation(angle);
        let d = [[1.0 / (axes[0] * axes[0]), 0.0], [0.0, 1.0 / (axes[1] * axes[1])]];
        let q = mat_mul(&mat_mul(&r, &d), &transpose(&r));
        Ok(Self::ellipse_raw(center, q, None))
    }

    /// Ellipse `{(x−c)ᵀ Q (x−c) < 1}` for a symmetric positive definite `Q`.
    pub fn ellipse_from_matrix(center: Point, q: Mat2) -> Result<Self> {
        let q = [[q[0][0], 0.5 * (q[0][1] + q[1][0])], [0.5 * (q[0][1] + q[1][0]), q[1][1]]];
        let (l1, _, _) = sym_eigen(&q);
        if !(l1 > 0.0) {
            return Err(Error::Degenerate("matrix is not positive definite".into()));
        }
        Ok(Self::ellipse_raw(center, q, None))
    }

    fn ellipse_raw(center: Point, q: Mat2, radius: Option<f64>) -> Self {
        let d = det(&q);
        let hx = (q[1][1] / d).sqrt();
        let hy = (q[0][0] / d).sqrt();
        ConvexDomain {
            shape: Shape::Ellipse { center, q, radius },
            bbox: ([center[0] - hx, center[1] - hy], [center[0] + hx, center[1] + hy]),
            volume: PI / d.sqrt(),
        }
    }

    /// Strictly convex polygon; clockwise input is reoriented.
    pub fn polygon(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Degenerate("polygon needs at least 3 vertices".into()));
        }
        let area = shoelace(&vertices);
        if !(area.abs() > 1e-14) {
            return Err(Error::Degenerate("polygon has zero area".into()));
        }
        let n = vertices.len();
        let ccw: Vec<Point> = if area > 0.0 { vertices } else { vertices.into_iter().rev().collect() };
        if let Some(i) = first_nonconvex_vertex(&ccw, 0.0) {
            let index = if area > 0.0 { i } else { n - 1 - i };
            return Err(Error::NonConvex { index });
        }
        Ok(Self::polygon_unchecked(ccw))
    }

    /// Polygon without convexity validation, for testing the convexity gate.
    pub fn polygon_unchecked(vertices: Vec<Point>) -> Self {
        let lo = [
            vertices.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min),
            vertices.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min),
        ];
        let hi = [
            vertices.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max),
            vertices.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max),
        ];
        let volume = shoelace(&vertices).abs();
        ConvexDomain { shape: Shape::Polygon { vertices }, bbox: (lo, hi), volume }
    }

    /// Image of a planar domain under `x ↦ x + t·d(x)`, which must be injective:
    /// `t·Lip(d) < 1`.
    pub fn mapped(base: &ConvexDomain, field: Arc<dyn Displacement>, t: f64) -> Result<Self> {
        if base.dim() != 2 {
            return Err(Error::Unsupported("mapped domains are planar".into()));
        }
        let lip = t.abs() * field.lipschitz();
        if lip >= 1.0 {
            return Err(Error::StepTooLarge(lip));
        }
        let outline: Vec<Point> = base
            .outline(MAPPED_OUTLINE)
            .into_iter()
            .map(|x| {
                let d = field.displacement(x);
                [x[0] + t * d[0], x[1] + t * d[1]]
            })
            .collect();
        let lo = [
            outline.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min),
            outline.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min),
        ];
        let hi = [
            outline.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max),
            outline.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max),
        ];
        let volume = shoelace(&outline);
        if !(volume > 0.0) {
            return Err(Error::StepTooLarge(lip));
        }
        Ok(ConvexDomain {
            shape: Shape::Mapped { base: Box::new(base.clone()), field, t, outline },
            bbox: (lo, hi),
            volume,
        })
    }

    pub fn kind(&self) -> DomainKind {
        match &self.shape {
            Shape::Interval { .. } => DomainKind::Interval,
            Shape::Ellipse { radius: Some(_), .. } => DomainKind::Ball,
            Shape::Ellipse { .. } => DomainKind::Ellipse,
            Shape::Polygon { .. } => DomainKind::Polygon,
            Shape::Mapped { .. } => DomainKind::Mapped,
        }
    }

    /// True for kinds with C^{1,1} boundary, where boundary traces are meaningful.
    pub fn is_smooth(&self) -> bool {
        matches!(self.kind(), DomainKind::Interval | DomainKind::Ball | DomainKind::Ellipse)
    }

    pub fn dim(&self) -> usize {
        if matches!(self.shape, Shape::Interval { .. }) {
            1
        } else {
            2
        }
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Bounding box `(lo, hi)`; 1D domains use the first coordinate only.
    pub fn bbox(&self) -> (Point, Point) {
        self.bbox
    }

    /// Bounding box as slices of the domain's dimension.
    pub fn bbox_slices(&self) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = self.bbox;
        (lo[..self.dim()].to_vec(), hi[..self.dim()].to_vec())
    }

    /// Centre of the bounding box.
    pub fn center(&self) -> Point {
        let (lo, hi) = self.bbox;
        [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])]
    }

    /// Ellipse data `(center, Q)`, for ellipses and balls.
    pub fn ellipse_data(&self) -> Option<(Point, Mat2)> {
        match &self.shape {
            Shape::Ellipse { center, q, .. } => Some((*center, *q)),
            _ => None,
        }
    }

    pub fn vertices(&self) -> Option<&[Point]> {
        match &self.shape {
            Shape::Polygon { vertices } => Some(vertices),
            _ => None,
        }
    }

    pub fn interval_bounds(&self) -> Option<(f64, f64)> {
        match &self.shape {
            Shape::Interval { lo, hi } => Some((*lo, *hi)),
            _ => None,
        }
    }

    /// Description for persistence; mapped domains have none.
    pub fn to_spec(&self) -> Result<DomainSpec> {
        match &self.shape {
            Shape::Interval { lo, hi } => Ok(DomainSpec::Interval { lo: *lo, hi: *hi }),
            Shape::Ellipse { center, radius: Some(r), .. } => {
                Ok(DomainSpec::Ball { center: *center, radius: *r })
            }
            Shape::Ellipse { center, q, .. } => {
                let (l1, l2, v) = sym_eigen(q);
                Ok(DomainSpec::Ellipse {
                    center: *center,
                    semi_axes: [1.0 / l1.sqrt(), 1.0 / l2.sqrt()],
                    angle: v[1].atan2(v[0]),
                })
            }
            Shape::Polygon { vertices } => Ok(DomainSpec::Polygon { vertices: vertices.clone() }),
            Shape::Mapped { .. } => Err(Error::Unsupported("mapped domains have no file form".into())),
        }
    }

    /// Strict membership test.
    pub fn contains(&self, x: Point) -> bool {
        match &self.shape {
            Shape::Interval { lo, hi } => *lo < x[0] && x[0] < *hi,
            Shape::Ellipse { center, q, .. } => {
                let d = sub(x, *center);
                let m = mat_vec(q, d);
                d[0] * m[0] + d[1] * m[1] < 1.0
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                (0..n).all(|i| cross(sub(vertices[(i + 1) % n], vertices[i]), sub(x, vertices[i])) > 0.0)
            }
            Shape::Mapped { base, field, t, .. } => {
                let mut y = x;
                for _ in 0..200 {
                    let d = field.displacement(y);
                    let next = [x[0] - t * d[0], x[1] - t * d[1]];
                    let step = norm(sub(next, y));
                    y = next;
                    if step < 1e-15 {
                        break;
                    }
                }
                base.contains(y)
            }
        }
    }

    /// Projection of the domain onto the first axis, `[lo, hi]`.
    pub fn projection(&self) -> (f64, f64) {
        (self.bbox.0[0], self.bbox.1[0])
    }

    /// Section `(y₁, y₂)` along the second axis at abscissa `x'`; degenerate at the ends of
    /// the projection. 1D domains return their endpoints.
    pub fn vertical_section(&self, xp: f64) -> Result<(f64, f64)> {
        if let Shape::Interval { lo, hi } = self.shape {
            return Ok((lo, hi));
        }
        let (plo, phi) = self.projection();
        let slack = 1e-12 * (phi - plo);
        if xp < plo - slack || xp > phi + slack {
            return Err(Error::OutOfProjection { x: xp, lo: plo, hi: phi });
        }
        let xp = xp.clamp(plo, phi);
        match &self.shape {
            Shape::Ellipse { center, q, .. } => {
                let dx = xp - center[0];
                let disc = (q[0][1] * q[0][1] - q[0][0] * q[1][1]) * dx * dx + q[1][1];
                let r = disc.max(0.0).sqrt();
                let base = -q[0][1] * dx;
                Ok((center[1] + (base - r) / q[1][1], center[1] + (base + r) / q[1][1]))
            }
            Shape::Polygon { vertices } => Ok(polyline_section(vertices, xp)),
            Shape::Mapped { outline, .. } => Ok(polyline_section(outline, xp)),
            Shape::Interval { .. } => unreachable!(),
        }
    }

    /// Distance to the boundary.
    pub fn boundary_distance(&self, x: Point) -> f64 {
        match &self.shape {
            Shape::Interval { lo, hi } => (x[0] - lo).abs().min((x[0] - hi).abs()),
            Shape::Ellipse { center, radius: Some(r), .. } => (r - norm(sub(x, *center))).abs(),
            Shape::Ellipse { center, q, .. } => {
                let (l1, l2, v) = sym_eigen(q);
                let (e0, e1) = (1.0 / l1.sqrt(), 1.0 / l2.sqrt());
                let d = sub(x, *center);
                let y0 = (d[0] * v[0] + d[1] * v[1]).abs();
                let y1 = (-d[0] * v[1] + d[1] * v[0]).abs();
                if (e0 - e1).abs() <= 1e-15 * e0 {
                    return (e0 - y0.hypot(y1)).abs();
                }
                ellipse_distance_quadrant(e0, e1, y0, y1)
            }
            Shape::Polygon { vertices } => closed_polyline_distance(vertices, x),
            Shape::Mapped { outline, .. } => closed_polyline_distance(outline, x),
        }
    }

    /// Counterclockwise boundary points, equally spaced in the natural parameter.
    pub fn outline(&self, n: usize) -> Vec<Point> {
        match &self.shape {
            Shape::Interval { lo, hi } => vec![[*lo, 0.0], [*hi, 0.0]],
            Shape::Ellipse { .. } => {
                let (c, a, b) = self.ellipse_frame();
                (0..n)
                    .map(|k| {
                        let th = 2.0 * PI * k as f64 / n as f64;
                        let (s, co) = th.sin_cos();
                        [c[0] + co * a[0] + s * b[0], c[1] + co * a[1] + s * b[1]]
                    })
                    .collect()
            }
            Shape::Polygon { vertices } => {
                let per = self.perimeter();
                let mut out = Vec::with_capacity(n + vertices.len());
                let m = vertices.len();
                for i in 0..m {
                    let (a, b) = (vertices[i], vertices[(i + 1) % m]);
                    let k = ((n as f64 * norm(sub(b, a)) / per).round() as usize).max(1);
                    for j in 0..k {
                        let t = j as f64 / k as f64;
                        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                    }
                }
                out
            }
            Shape::Mapped { outline, .. } => outline.clone(),
        }
    }

    /// Ellipse centre and the two conjugate semi-axis vectors, positively oriented.
    fn ellipse_frame(&self) -> (Point, Point, Point) {
        let Shape::Ellipse { center, q, .. } = &self.shape else { unreachable!() };
        let (l1, l2, v) = sym_eigen(q);
        let (e0, e1) = (1.0 / l1.sqrt(), 1.0 / l2.sqrt());
        (*center, [e0 * v[0], e0 * v[1]], [-e1 * v[1], e1 * v[0]])
    }

    /// Boundary length (2D) or endpoint count (1D).
    pub fn perimeter(&self) -> f64 {
        match &self.shape {
            Shape::Interval { .. } => 2.0,
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                (0..n).map(|i| norm(sub(vertices[(i + 1) % n], vertices[i]))).sum()
            }
            _ => self.boundary_quadrature(2048).iter().map(|b| b.weight).sum(),
        }
    }

    /// Boundary samples with outward normals and weights realizing `∫_{∂Ω} · dσ`.
    pub fn boundary_quadrature(&self, n: usize) -> Vec<BoundarySample> {
        match &self.shape {
            Shape::Interval { lo, hi } => vec![
                BoundarySample { point: [*lo, 0.0], normal: [-1.0, 0.0], weight: 1.0 },
                BoundarySample { point: [*hi, 0.0], normal: [1.0, 0.0], weight: 1.0 },
            ],
            Shape::Ellipse { .. } => {
                let (c, a, b) = self.ellipse_frame();
                (0..n)
                    .map(|k| {
                        let th = 2.0 * PI * k as f64 / n as f64;
                        let (s, co) = th.sin_cos();
                        let tan = [-s * a[0] + co * b[0], -s * a[1] + co * b[1]];
                        let len = norm(tan);
                        BoundarySample {
                            point: [c[0] + co * a[0] + s * b[0], c[1] + co * a[1] + s * b[1]],
                            normal: [tan[1] / len, -tan[0] / len],
                            weight: len * 2.0 * PI / n as f64,
                        }
                    })
                    .collect()
            }
            Shape::Polygon { vertices } => {
                let per = self.perimeter();
                let m = vertices.len();
                let mut out = Vec::with_capacity(n + m);
                for i in 0..m {
                    let (a, b) = (vertices[i], vertices[(i + 1) % m]);
                    let e = sub(b, a);
                    let len = norm(e);
                    let k = ((n as f64 * len / per).round() as usize).max(1);
                    for j in 0..k {
                        let t = (j as f64 + 0.5) / k as f64;
                        out.push(BoundarySample {
                            point: [a[0] + t * e[0], a[1] + t * e[1]],
                            normal: [e[1] / len, -e[0] / len],
                            weight: len / k as f64,
                        });
                    }
                }
                out
            }
            Shape::Mapped { base, field, t, .. } => {
                let eta = 1e-6;
                let push = |x: Point| {
                    let d = field.displacement(x);
                    [x[0] + t * d[0], x[1] + t * d[1]]
                };
                base.boundary_quadrature(n)
                    .into_iter()
                    .map(|b| {
                        let tan = [-b.normal[1], b.normal[0]];
                        let p = push([b.point[0] + eta * tan[0], b.point[1] + eta * tan[1]]);
                        let m = push([b.point[0] - eta * tan[0], b.point[1] - eta * tan[1]]);
                        let dt = [(p[0] - m[0]) / (2.0 * eta), (p[1] - m[1]) / (2.0 * eta)];
                        let len = norm(dt);
                        BoundarySample {
                            point: push(b.point),
                            normal: [dt[1] / len, -dt[0] / len],
                            weight: b.weight * len,
                        }
                    })
                    .collect()
            }
        }
    }

    /// Whether the stored region is convex.
    pub fn check_convex(&self) -> bool {
        match &self.shape {
            Shape::Interval { .. } | Shape::Ellipse { .. } => true,
            Shape::Polygon { vertices } => {
                let ccw: Vec<Point> = if shoelace(vertices) > 0.0 {
                    vertices.clone()
                } else {
                    vertices.iter().rev().cloned().collect()
                };
                first_nonconvex_vertex(&ccw, 0.0).is_none()
            }
            Shape::Mapped { outline, .. } => first_nonconvex_vertex(outline, -1e-9).is_none(),
        }
    }

    /// Error unless the domain is convex.
    pub fn require_convex(&self) -> Result<()> {
        if self.check_convex() {
            return Ok(());
        }
        match &self.shape {
            Shape::Polygon { vertices } => {
                let ccw = shoelace(vertices) > 0.0;
                let v: Vec<Point> = if ccw { vertices.clone() } else { vertices.iter().rev().cloned().collect() };
                let i = first_nonconvex_vertex(&v, 0.0).unwrap_or(0);
                Err(Error::NonConvex { index: if ccw { i } else { v.len() - 1 - i } })
            }
            _ => Err(Error::NonConvex { index: 0 }),
        }
    }

    /// Image under the affine map `x ↦ A x + b` (1D domains use `A[0][0]`, `b[0]`).
    pub fn affine_image(&self, a: &Mat2, b: Point) -> Result<ConvexDomain> {
        match &self.shape {
            Shape::Interval { lo, hi } => {
                let (p, q) = (a[0][0] * lo + b[0], a[0][0] * hi + b[0]);
                ConvexDomain::interval(p.min(q), p.max(q))
            }
            Shape::Ellipse { center, q, radius } => {
                let ai = inverse(a)?;
                let qn = mat_mul(&mat_mul(&transpose(&ai), q), &ai);
                let c = mat_vec(a, *center);
                let c = [c[0] + b[0], c[1] + b[1]];
                let ata = mat_mul(&transpose(a), a);
                let conformal = (ata[0][1]).abs() < 1e-15 * ata[0][0] && (ata[0][0] - ata[1][1]).abs() < 1e-15 * ata[0][0];
                match radius {
                    Some(r) if conformal => ConvexDomain::ball(c, r * ata[0][0].sqrt()),
                    _ => ConvexDomain::ellipse_from_matrix(c, qn),
                }
            }
            Shape::Polygon { vertices } => {
                let v: Vec<Point> = vertices
                    .iter()
                    .map(|x| {
                        let y = mat_vec(a, *x);
                        [y[0] + b[0], y[1] + b[1]]
                    })
                    .collect();
                ConvexDomain::polygon(v)
            }
            Shape::Mapped { .. } => Err(Error::Unsupported("affine image of a mapped domain".into())),
        }
    }

    pub fn translated(&self, d: Point) -> Result<ConvexDomain> {
        self.affine_image(&[[1.0, 0.0], [0.0, 1.0]], d)
    }

    /// Domain expressed in coordinates rotated by `-phi`, so that the direction at angle
    /// `phi + π/2` becomes the second axis.
    pub fn in_frame(&self, phi: f64) -> Result<ConvexDomain> {
        if phi == 0.0 {
            return Ok(self.clone());
        }
        self.affine_image(&transpose(&rotation(phi)), [0.0, 0.0])
    }

    /// Inverse of [`ConvexDomain::in_frame`].
    pub fn from_frame(&self, phi: f64) -> Result<ConvexDomain> {
        if phi == 0.0 {
            return Ok(self.clone());
        }
        self.affine_image(&rotation(phi), [0.0, 0.0])
    }
}

fn closed_polyline_distance(v: &[Point], x: Point) -> f64 {
    let n = v.len();
    (0..n).map(|i| segment_distance(x, v[i], v[(i + 1) % n])).fold(f64::INFINITY, f64::min)
}

/// Section of a closed convex polyline by the line `x = xp`.
fn polyline_section(v: &[Point], xp: f64) -> (f64, f64) {
    let n = v.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let (xmin, xmax) = (a[0].min(b[0]), a[0].max(b[0]));
        if xp < xmin || xp > xmax {
            continue;
        }
        if a[0] == b[0] {
            lo = lo.min(a[1].min(b[1]));
            hi = hi.max(a[1].max(b[1]));
        } else {
            let t = (xp - a[0]) / (b[0] - a[0]);
            let y = a[1] + t * (b[1] - a[1]);
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if lo > hi {
        // Rounding at an extreme vertex: fall back to the nearest vertex.
        let v0 = v.iter().min_by(|p, q| (p[0] - xp).abs().total_cmp(&(q[0] - xp).abs())).unwrap();
        return (v0[1], v0[1]);
    }
    (lo, hi)
}

/// Symmetric Hausdorff distance between two boundaries, measured on boundary samples.
pub fn hausdorff_on_samples(a: &ConvexDomain, b: &ConvexDomain, n: usize) -> f64 {
    let ab = a.outline(n).into_iter().map(|p| b.boundary_distance(p)).fold(0.0, f64::max);
    let ba = b.outline(n).into_iter().map(|p| a.boundary_distance(p)).fold(0.0, f64::max);
    ab.max(ba)
}
