//! Shape functional `J = λ_{s,p}(Ω) + C₀²Γ(1+s)²|Ω|`, its Hadamard derivative, the
//! Steiner vector field and its flow, finite-difference checks, and the rigidity report.

use crate::eigensolve::{boundary_ratio_of, domain_grid, solve_lambda_with, BoundaryTrace, SolverOptions, SpectralSolution};
use crate::error::{Error, Result};
use crate::fracops::FracOrder;
use crate::geometry::{rotation, ConvexDomain, Displacement, DomainKind, Mat2};
use crate::grid::{GridFunction, Point};
use crate::steiner::{drop_collinear, symmetrize_set_in_frame, SymTime};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

/// Version tag of [`standard_battery`].
pub const BATTERY_VERSION: &str = "v1";

/// Normalized `|dJ·X|` at or below which a field counts as critical.
pub const CRITICAL_THRESHOLD: f64 = 5e-3;

/// Largest trace variation compatible with a critical verdict.
pub const TRACE_VARIATION_LIMIT: f64 = 0.02;

/// `Γ(1+s)²`.
pub fn gamma_factor(s: f64) -> f64 {
    gamma(1.0 + s).powi(2)
}

/// Vector field kinds.
#[derive(Clone, Debug)]
pub enum FieldKind {
    Translation(Point),
    /// `X(x) = A x + b`; the identity field is `A = I`, `b = 0`.
    Affine { a: Mat2, b: Point },
    /// `ψ(|x−c|/ρ)·d` with `ψ(r) = (1−r²)³` for `r < 1`.
    NormalBump { center: Point, direction: Point, radius: f64 },
    /// `(0, −½(y₁+y₂)(x'))` in the frame rotated by `phi`, zero off the closed domain.
    Steiner { frame_domain: ConvexDomain, phi: f64 },
    /// Bilinear interpolation of two component grids, zero outside them.
    Sampled { x: GridFunction, y: GridFunction },
}

/// Lipschitz vector field with an identifier.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub id: String,
    pub kind: FieldKind,
    lipschitz: f64,
}

fn mat_vec(a: &Mat2, x: Point) -> Point {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

fn spectral_norm(a: &Mat2) -> f64 {
    // Largest singular value from the eigenvalues of AᵀA.
    let p = a[0][0] * a[0][0] + a[1][0] * a[1][0];
    let q = a[0][1] * a[0][1] + a[1][1] * a[1][1];
    let r = a[0][0] * a[0][1] + a[1][0] * a[1][1];
    (0.5 * (p + q) + (0.25 * (p - q) * (p - q) + r * r).sqrt()).sqrt()
}

fn bump_profile(r: f64) -> f64 {
    if r < 1.0 {
        (1.0 - r * r).powi(3)
    } else {
        0.0
    }
}

/// Closed-domain membership with a relative tolerance for boundary points.
fn in_closure(dom: &ConvexDomain, x: Point) -> bool {
    if dom.contains(x) {
        return true;
    }
    let (lo, hi) = dom.bbox();
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    dom.boundary_distance(x) <= 1e-9 * scale
}

/// Midpoint `½(y₁+y₂)` of the section at `x'`.
fn section_midpoint(dom: &ConvexDomain, xp: f64) -> Result<f64> {
    let (y1, y2) = dom.vertical_section(xp)?;
    Ok(0.5 * (y1 + y2))
}

impl VectorField {
    pub fn translation(v: Point) -> Self {
        VectorField {
            id: format!("translate({},{})", v[0], v[1]),
            kind: FieldKind::Translation(v),
            lipschitz: 0.0,
        }
    }

    pub fn identity() -> Self {
        Self::affine("identity", [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    }

    pub fn affine(id: &str, a: Mat2, b: Point) -> Self {
        VectorField { id: id.to_string(), kind: FieldKind::Affine { a, b }, lipschitz: spectral_norm(&a) }
    }

    /// Bump of radius `radius` at `center` pointing along `direction` (normalized).
    pub fn normal_bump(id: &str, center: Point, direction: Point, radius: f64) -> Result<Self> {
        let len = direction[0].hypot(direction[1]);
        if !(radius > 0.0) || !(len > 0.0) {
            return Err(Error::InvalidParameter("bump needs a positive radius and a nonzero direction".into()));
        }
        // max |ψ'| = (6/√5)(4/5)² at r = 1/√5.
        let lipschitz = 6.0 / 5f64.sqrt() * 0.64 / radius;
        Ok(VectorField {
            id: id.to_string(),
            kind: FieldKind::NormalBump { center, direction: [direction[0] / len, direction[1] / len], radius },
            lipschitz,
        })
    }

    /// Field interpolated from component grids on a common 2D grid.
    pub fn sampled(id: &str, x: GridFunction, y: GridFunction) -> Result<Self> {
        x.check_same_grid(&y)?;
        if x.ndim() != 2 {
            return Err(Error::Unsupported("sampled fields are planar".into()));
        }
        let lip = |g: &GridFunction| {
            let mut m = 0.0f64;
            for i in 0..g.dims[0] {
                for j in 0..g.dims[1] {
                    let v = g.values[g.flat_index(i, j)];
                    if i + 1 < g.dims[0] {
                        m = m.max((g.values[g.flat_index(i + 1, j)] - v).abs());
                    }
                    if j + 1 < g.dims[1] {
                        m = m.max((g.values[g.flat_index(i, j + 1)] - v).abs());
                    }
                }
            }
            m / g.spacing
        };
        // Bilinear interpolation at most doubles the per-axis bound.
        let lipschitz = 2.0 * lip(&x).hypot(lip(&y));
        Ok(VectorField { id: id.to_string(), kind: FieldKind::Sampled { x, y }, lipschitz })
    }

    pub fn lipschitz_estimate(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, p: Point) -> Point {
        match &self.kind {
            FieldKind::Translation(v) => *v,
            FieldKind::Affine { a, b } => {
                let y = mat_vec(a, p);
                [y[0] + b[0], y[1] + b[1]]
            }
            FieldKind::NormalBump { center, direction, radius } => {
                let r = (p[0] - center[0]).hypot(p[1] - center[1]) / radius;
                let w = bump_profile(r);
                [w * direction[0], w * direction[1]]
            }
            FieldKind::Steiner { frame_domain, phi } => {
                let rot = rotation(*phi);
                let z = [rot[0][0] * p[0] + rot[1][0] * p[1], rot[0][1] * p[0] + rot[1][1] * p[1]];
                if !in_closure(frame_domain, z) {
                    return [0.0, 0.0];
                }
                let m = section_midpoint(frame_domain, z[0]).unwrap_or(0.0);
                mat_vec(&rot, [0.0, -m])
            }
            FieldKind::Sampled { x, y } => [bilinear(x, p), bilinear(y, p)],
        }
    }

    pub fn is_steiner(&self) -> bool {
        matches!(self.kind, FieldKind::Steiner { .. })
    }
}

fn bilinear(g: &GridFunction, p: Point) -> f64 {
    let h = g.spacing;
    let fx = (p[0] - g.origin[0]) / h;
    let fy = (p[1] - g.origin[1]) / h;
    if fx < 0.0 || fy < 0.0 || fx > (g.dims[0] - 1) as f64 || fy > (g.dims[1] - 1) as f64 {
        return 0.0;
    }
    let (i, j) = ((fx.floor() as usize).min(g.dims[0] - 2), (fy.floor() as usize).min(g.dims[1] - 2));
    let (tx, ty) = (fx - i as f64, fy - j as f64);
    let v = |a, b| g.values[g.flat_index(a, b)];
    (1.0 - tx) * ((1.0 - ty) * v(i, j) + ty * v(i, j + 1)) + tx * ((1.0 - ty) * v(i + 1, j) + ty * v(i + 1, j + 1))
}

impl Displacement for VectorField {
    fn displacement(&self, x: Point) -> Point {
        self.eval(x)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id)
    }
}

/// Steiner vector field of a convex domain about `{x_N = 0}`.
pub fn steiner_vector_field(dom: &ConvexDomain) -> Result<VectorField> {
    steiner_vector_field_in_frame(dom, 0.0)
}

/// Steiner field in the frame rotated by `phi`; the Lipschitz estimate is the largest
/// slope of the section midpoints.
pub fn steiner_vector_field_in_frame(dom: &ConvexDomain, phi: f64) -> Result<VectorField> {
    dom.require_convex()?;
    if dom.dim() != 2 {
        return Err(Error::Unsupported("the Steiner field is planar".into()));
    }
    if dom.kind() == DomainKind::Mapped {
        return Err(Error::Unsupported("Steiner field of a mapped domain".into()));
    }
    let frame_domain = dom.in_frame(phi)?;
    let (lo, hi) = frame_domain.projection();
    let lipschitz = match (frame_domain.ellipse_data(), frame_domain.vertices()) {
        (Some((_, q)), _) => (q[0][1] / q[1][1]).abs(),
        (None, Some(v)) => {
            let mut xs: Vec<f64> = v.iter().map(|p| p[0]).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            let mut best = 0.0f64;
            for w in xs.windows(2) {
                let (m0, m1) = (section_midpoint(&frame_domain, w[0])?, section_midpoint(&frame_domain, w[1])?);
                best = best.max(((m1 - m0) / (w[1] - w[0])).abs());
            }
            best
        }
        _ => {
            let _ = (lo, hi);
            return Err(Error::Unsupported("Steiner field of this domain kind".into()));
        }
    };
    let deg = (phi.to_degrees() * 1e6).round() / 1e6;
    Ok(VectorField {
        id: format!("steiner-{deg}"),
        kind: FieldKind::Steiner { frame_domain, phi },
        lipschitz,
    })
}

fn map_point(x: Point, v: Point, t: f64) -> Point {
    [x[0] + t * v[0], x[1] + t * v[1]]
}

/// Image `Φ_t(Ω)`: `Φ_t = id + tX` in general and `Φ_t = id + (1−e^{−t})V` for the
/// Steiner kind.
pub fn deform(dom: &ConvexDomain, x: &VectorField, t: f64) -> Result<ConvexDomain> {
    if t == 0.0 {
        return Ok(dom.clone());
    }
    if let Some((lo, hi)) = dom.interval_bounds() {
        let step = if x.is_steiner() { 1.0 - (-t).exp() } else { t };
        let (a, b) = (lo + step * x.eval([lo, 0.0])[0], hi + step * x.eval([hi, 0.0])[0]);
        if !(a < b) {
            return Err(Error::StepTooLarge(step.abs() * x.lipschitz));
        }
        return ConvexDomain::interval(a, b);
    }
    match &x.kind {
        FieldKind::Translation(v) => dom.translated([t * v[0], t * v[1]]),
        FieldKind::Affine { a, b } => {
            let m = [[1.0 + t * a[0][0], t * a[0][1]], [t * a[1][0], 1.0 + t * a[1][1]]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if !(det > 0.0) {
                return Err(Error::StepTooLarge(t.abs() * x.lipschitz));
            }
            dom.affine_image(&m, [t * b[0], t * b[1]])
        }
        FieldKind::Steiner { frame_domain, phi } => {
            let e = 1.0 - (-t).exp();
            let (lo, hi) = frame_domain.projection();
            let image = if frame_domain.ellipse_data().is_some() {
                // V is affine on the closed ellipse: −m(x') with m linear.
                let (c0, c1) = (lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo));
                let (m0, m1) = (section_midpoint(frame_domain, c0)?, section_midpoint(frame_domain, c1)?);
                let slope = (m1 - m0) / (c1 - c0);
                let offset = m0 - slope * c0;
                frame_domain.affine_image(&[[1.0, 0.0], [-e * slope, 1.0]], [0.0, -e * offset])?
            } else if let Some(v) = frame_domain.vertices() {
                // Push both boundary chains at every vertex abscissa.
                let mut xs: Vec<f64> = v.iter().map(|p| p[0]).collect();
                xs.sort_by(f64::total_cmp);
                xs.dedup();
                let push = |p: Point| map_point(p, x_frame_steiner(frame_domain, p), e);
                let mut ring = Vec::with_capacity(2 * xs.len());
                for &xp in &xs {
                    let (y1, _) = frame_domain.vertical_section(xp)?;
                    ring.push(push([xp, y1]));
                }
                for (i, &xp) in xs.iter().enumerate().rev() {
                    let (y1, y2) = frame_domain.vertical_section(xp)?;
                    let end = i == 0 || i + 1 == xs.len();
                    if !(end && y2 - y1 <= 1e-14 * (hi - lo)) {
                        ring.push(push([xp, y2]));
                    }
                }
                ConvexDomain::polygon(drop_collinear(ring))?
            } else {
                return Err(Error::Unsupported("Steiner flow of this domain kind".into()));
            };
            image.from_frame(*phi)
        }
        FieldKind::NormalBump { .. } | FieldKind::Sampled { .. } => {
            ConvexDomain::mapped(dom, Arc::new(x.clone()), t)
        }
    }
}

fn x_frame_steiner(frame_domain: &ConvexDomain, p: Point) -> Point {
    [0.0, -section_midpoint(frame_domain, p[0]).unwrap_or(0.0)]
}

/// `λ_{s,p}(Ω) + C₀²Γ(1+s)²|Ω|` with default solver options.
pub fn shape_functional(dom: &ConvexDomain, o: FracOrder, p: f64, c0: f64) -> Result<f64> {
    shape_functional_with(dom, o, p, c0, &SolverOptions::default())
}

pub fn shape_functional_with(dom: &ConvexDomain, o: FracOrder, p: f64, c0: f64, opts: &SolverOptions) -> Result<f64> {
    check_c0(c0)?;
    Ok(averaged_lambda(dom, o, p, opts)? + c0 * c0 * gamma_factor(o.s) * dom.volume())
}

/// `λ_{s,p}`, averaged over sub-cell lattice offsets when `opts.shifts > 1`.
pub fn averaged_lambda(dom: &ConvexDomain, o: FracOrder, p: f64, opts: &SolverOptions) -> Result<f64> {
    let k = opts.shifts.max(1);
    if k == 1 {
        return Ok(solve_lambda_with(dom, o, p, opts, None)?.lambda);
    }
    let base = fixed_spacing(dom, opts)?;
    let h = base.spacing.unwrap();
    let ky = if dom.dim() == 2 { k } else { 1 };
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..ky {
            let offset = [base.offset[0] + (i as f64 + 0.5) / k as f64 * h, base.offset[1] + (j as f64 + 0.5) / ky as f64 * h];
            let shifted = SolverOptions { offset, ..base.clone() };
            total += solve_lambda_with(dom, o, p, &shifted, None)?.lambda;
        }
    }
    Ok(total / (k * ky) as f64)
}

fn check_c0(c0: f64) -> Result<()> {
    if c0 >= 0.0 && c0.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("C0 = {c0} must be a finite nonnegative number")))
    }
}

/// Boundary samples used for volume derivatives.
const VOLUME_QUADRATURE: usize = 2048;

/// `∫_{∂Ω} X·ν dσ`.
pub fn volume_derivative(dom: &ConvexDomain, x: &VectorField) -> f64 {
    if let Some(v) = dom.vertices() {
        return polygon_flux(v, x);
    }
    dom.boundary_quadrature(VOLUME_QUADRATURE)
        .iter()
        .map(|b| {
            let v = x.eval(b.point);
            b.weight * (v[0] * b.normal[0] + v[1] * b.normal[1])
        })
        .sum()
}

/// Flux through a polygon edge by edge. Steiner fields are piecewise affine between the
/// vertex abscissas of their frame, so edges are cut there and each piece is integrated
/// exactly; other fields get a fixed composite rule.
fn polygon_flux(v: &[Point], x: &VectorField) -> f64 {
    let (gx, gw) = crate::quad::gauss_legendre(4);
    let frame = match &x.kind {
        FieldKind::Steiner { phi, .. } => Some(rotation(*phi)),
        _ => None,
    };
    let abscissa = |r: &Mat2, p: Point| r[0][0] * p[0] + r[1][0] * p[1];
    let m = v.len();
    let per: f64 = (0..m).map(|i| (v[(i + 1) % m][0] - v[i][0]).hypot(v[(i + 1) % m][1] - v[i][1])).sum();
    let mut total = 0.0;
    for i in 0..m {
        let (a, b) = (v[i], v[(i + 1) % m]);
        let e = [b[0] - a[0], b[1] - a[1]];
        let len = e[0].hypot(e[1]);
        let normal = [e[1] / len, -e[0] / len];
        let mut cuts = vec![0.0, 1.0];
        match &frame {
            Some(r) => {
                let (fa, fb) = (abscissa(r, a), abscissa(r, b));
                for w in v {
                    let s = (abscissa(r, *w) - fa) / (fb - fa);
                    if s > 0.0 && s < 1.0 {
                        cuts.push(s);
                    }
                }
            }
            None => {
                let k = ((VOLUME_QUADRATURE as f64 * len / per).ceil() as usize / 4).max(1);
                cuts.extend((1..k).map(|j| j as f64 / k as f64));
            }
        }
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            let (c, r) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            for (xi, wi) in gx.iter().zip(&gw) {
                let s = c + r * xi;
                let f = x.eval([a[0] + s * e[0], a[1] + s * e[1]]);
                total += wi * r * len * (f[0] * normal[0] + f[1] * normal[1]);
            }
        }
    }
    total
}

/// First variation of `J` and its two parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeDerivative {
    pub dj: f64,
    pub dlambda: f64,
    pub dvol: f64,
    /// `max |X·ν|` over the trace samples.
    pub normal_sup: f64,
}

/// `dJ·X = −Γ(1+s)² ∫_{∂Ω} ((u/δ^s)² − C₀²) X·ν dσ` by quadrature over the trace samples.
pub fn shape_derivative(
    dom: &ConvexDomain,
    sol: &SpectralSolution,
    trace: &BoundaryTrace,
    x: &VectorField,
    c0: f64,
) -> Result<ShapeDerivative> {
    check_c0(c0)?;
    let (lo, hi) = dom.bbox();
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let on_boundary = trace.samples.iter().filter(|t| dom.boundary_distance(t.point) <= 1e-8 * scale).count();
    if trace.samples.is_empty() || on_boundary != trace.samples.len() {
        return Err(Error::MissingTrace { expected: trace.samples.len().max(1), got: on_boundary });
    }
    let g = gamma_factor(sol.order.s);
    let (mut dl, mut dv, mut sup) = (0.0, 0.0, 0.0f64);
    for t in &trace.samples {
        let v = x.eval(t.point);
        let xn = v[0] * t.normal[0] + v[1] * t.normal[1];
        dl -= g * t.weight * t.ratio * t.ratio * xn;
        dv += t.weight * xn;
        sup = sup.max(xn.abs());
    }
    Ok(ShapeDerivative { dj: dl + c0 * c0 * g * dv, dlambda: dl, dvol: dv, normal_sup: sup })
}

/// How the finite-difference derivative is formed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FdMethod {
    /// One-sided quotients at a decreasing positive sequence, extrapolated by Richardson.
    Richardson { ts: Vec<f64> },
    /// Least-squares cubic through `points` equispaced samples of `[−t_max, t_max]`;
    /// the derivative is the linear coefficient.
    SymmetricFit { t_max: f64, points: usize },
}

/// Finite-difference estimate of `dJ·X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdEstimate {
    pub estimate: f64,
    /// Standard error of the fitted slope (symmetric fit only).
    pub std_error: Option<f64>,
    /// Observed convergence order of the quotients (Richardson only).
    pub order: Option<f64>,
    /// `(t, J(Φ_t Ω))`.
    pub samples: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Solver options with the cell size of the base domain, so every deformed domain is
/// solved at the same spacing.
pub fn fixed_spacing(dom: &ConvexDomain, opts: &SolverOptions) -> Result<SolverOptions> {
    if opts.spacing.is_some() {
        return Ok(opts.clone());
    }
    let h = domain_grid(dom, opts)?.spacing;
    Ok(SolverOptions { spacing: Some(h), ..opts.clone() })
}

/// `J(Φ_t Ω)` recomputed from scratch at each `t`.
pub fn functional_along(
    dom: &ConvexDomain,
    o: FracOrder,
    p: f64,
    c0: f64,
    x: &VectorField,
    ts: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<(f64, f64)>> {
    let fixed = fixed_spacing(dom, opts)?;
    ts.par_iter()
        .map(|&t| {
            let d = deform(dom, x, t)?;
            Ok((t, shape_functional_with(&d, o, p, c0, &fixed)?))
        })
        .collect()
}

pub fn finite_difference_shape_derivative(
    dom: &ConvexDomain,
    o: FracOrder,
    p: f64,
    c0: f64,
    x: &VectorField,
    method: &FdMethod,
    opts: &SolverOptions,
) -> Result<FdEstimate> {
    match method {
        FdMethod::Richardson { ts } => {
            if ts.len() < 2 || ts.iter().any(|&t| !(t > 0.0)) || ts.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(Error::InvalidParameter("t sequence must be positive and decreasing".into()));
            }
            let mut all = vec![0.0];
            all.extend_from_slice(ts);
            let samples = functional_along(dom, o, p, c0, x, &all, opts)?;
            let j0 = samples[0].1;
            let q: Vec<f64> = samples[1..].iter().map(|&(t, j)| (j - j0) / t).collect();
            let mut warnings = Vec::new();
            let diffs: Vec<f64> = q.windows(2).map(|w| w[1] - w[0]).collect();
            if diffs.windows(2).any(|d| d[0] * d[1] < 0.0) {
                warnings.push("difference quotients are not monotone; noise dominates".into());
            }
            let mut est = *q.last().unwrap();
            for i in 0..q.len() - 1 {
                let r = ts[i] / ts[i + 1];
                est = (r * q[i + 1] - q[i]) / (r - 1.0);
            }
            let order = if q.len() >= 3 {
                let n = q.len();
                let r = ts[n - 2] / ts[n - 1];
                let ratio = (q[n - 3] - q[n - 2]).abs() / (q[n - 2] - q[n - 1]).abs();
                ratio.is_finite().then(|| ratio.ln() / r.ln())
            } else {
                None
            };
            Ok(FdEstimate { estimate: est, std_error: None, order, samples, warnings })
        }
        FdMethod::SymmetricFit { t_max, points } => {
            if !(*t_max > 0.0) || *points < 7 {
                return Err(Error::InvalidParameter("symmetric fit needs t_max > 0 and at least 7 points".into()));
            }
            let n = *points;
            let ts: Vec<f64> = (0..n).map(|k| t_max * (2.0 * k as f64 / (n - 1) as f64 - 1.0)).collect();
            let samples = functional_along(dom, o, p, c0, x, &ts, opts)?;
            let (slope, se) = cubic_slope(&samples);
            Ok(FdEstimate { estimate: slope, std_error: Some(se), order: None, samples, warnings: Vec::new() })
        }
    }
}

/// Linear coefficient of a least-squares cubic and its standard error.
pub fn cubic_slope(samples: &[(f64, f64)]) -> (f64, f64) {
    let n = samples.len();
    let tscale = samples.iter().fold(0.0f64, |m, s| m.max(s.0.abs())).max(f64::MIN_POSITIVE);
    let b = DMatrix::from_fn(n, 4, |i, j| (samples[i].0 / tscale).powi(j as i32));
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.1));
    let btb = b.transpose() * &b;
    let inv = btb.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(4, 4));
    let coef = &inv * b.transpose() * &y;
    let rss = (&b * &coef - &y).norm_squared();
    let sigma2 = if n > 4 { rss / (n - 4) as f64 } else { 0.0 };
    (coef[1] / tscale, (sigma2 * inv[(1, 1)]).sqrt() / tscale)
}

/// Standard battery: two translations, the identity, eight boundary bumps and the
/// Steiner field in four frames. Planar domains only; intervals get the translation and
/// the identity.
pub fn standard_battery(dom: &ConvexDomain) -> Result<Vec<VectorField>> {
    let mut out = vec![VectorField::translation([1.0, 0.0])];
    out[0].id = "translate-x".into();
    if dom.dim() == 1 {
        out.push(VectorField::identity());
        return Ok(out);
    }
    let mut ty = VectorField::translation([0.0, 1.0]);
    ty.id = "translate-y".into();
    out.push(ty);
    out.push(VectorField::identity());
    let (lo, hi) = dom.bbox();
    let radius = 0.5 * (hi[0] - lo[0]).min(hi[1] - lo[1]) * 0.5;
    let quad = dom.boundary_quadrature(64);
    for k in 0..8 {
        let b = &quad[k * quad.len() / 8];
        out.push(VectorField::normal_bump(&format!("bump-{k}"), b.point, b.normal, radius)?);
    }
    for (k, deg) in [0.0f64, 45.0, 90.0, 135.0].into_iter().enumerate() {
        let mut v = steiner_vector_field_in_frame(dom, deg.to_radians())?;
        v.id = format!("steiner-{}", [0, 45, 90, 135][k]);
        out.push(v);
    }
    Ok(out)
}

/// Verdict of the rigidity check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Critical,
    NotCritical,
}

/// One battery field in a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldEntry {
    pub field: String,
    pub dj_analytic: f64,
    pub dlambda: f64,
    pub dvol: f64,
    /// `|dJ·X| / (Γ(1+s)²C₀²|∂Ω|·max|X·ν|)`, zero when `X·ν` vanishes.
    pub normalized: f64,
    pub dj_fd: Option<f64>,
    pub fd_std_error: Option<f64>,
    pub discrepancy: Option<f64>,
}

/// Outcome of the rigidity experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub version: String,
    pub battery: String,
    pub config_hash: Option<String>,
    pub s: f64,
    pub p: f64,
    pub lambda: f64,
    pub j: f64,
    pub c0: f64,
    pub volume: f64,
    pub perimeter: f64,
    pub trace_variation: f64,
    pub trace_flagged: usize,
    pub max_normalized: f64,
    /// Most negative `dJ·V` over the Steiner frames, with its field id.
    pub steiner_dj: f64,
    pub steiner_field: String,
    pub entries: Vec<FieldEntry>,
    pub verdict: Verdict,
}

/// Controls of [`rigidity_check_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidityOptions {
    pub solver: SolverOptions,
    /// Also estimate every field by finite differences (one full solve per `t`).
    pub finite_differences: Option<FdMethod>,
    /// Fixed `C₀`; `None` uses the mean boundary ratio.
    pub c0: Option<f64>,
    /// Battery fields whose id starts with one of these prefixes; `None` keeps all.
    pub fields: Option<Vec<String>>,
}

impl Default for RigidityOptions {
    fn default() -> Self {
        RigidityOptions { solver: SolverOptions::default(), finite_differences: None, c0: None, fields: None }
    }
}

pub fn rigidity_check(dom: &ConvexDomain, o: FracOrder, p: f64) -> Result<ShapeReport> {
    rigidity_check_with(dom, o, p, &RigidityOptions::default())
}

/// Solve, fit the trace, set `C₀` to the mean trace and evaluate `dJ` over the battery.
pub fn rigidity_check_with(dom: &ConvexDomain, o: FracOrder, p: f64, opts: &RigidityOptions) -> Result<ShapeReport> {
    dom.require_convex()?;
    if !dom.is_smooth() || dom.dim() != 2 {
        return Err(Error::Unsupported("the rigidity check needs a smooth planar domain (ball or ellipse)".into()));
    }
    let sol = solve_lambda_with(dom, o, p, &opts.solver, None)?;
    let trace = boundary_ratio_of(&sol.u, dom, o, opts.solver.trace_samples)?;
    let c0 = match opts.c0 {
        Some(c) => check_c0(c).map(|_| c)?,
        None => trace.mean,
    };
    let g = gamma_factor(o.s);
    let perimeter = dom.perimeter();
    let mut battery = standard_battery(dom)?;
    if let Some(sel) = &opts.fields {
        battery.retain(|x| sel.iter().any(|p| x.id.starts_with(p.as_str())));
        if battery.is_empty() {
            return Err(Error::InvalidParameter(format!("no battery field matches {sel:?}")));
        }
    }
    let mut entries = Vec::with_capacity(battery.len());
    for x in &battery {
        let d = shape_derivative(dom, &sol, &trace, x, c0)?;
        let normalized = if d.normal_sup > 1e-12 { d.dj.abs() / (g * c0 * c0 * perimeter * d.normal_sup) } else { 0.0 };
        let fd = match &opts.finite_differences {
            Some(m) => Some(finite_difference_shape_derivative(dom, o, p, c0, x, m, &opts.solver)?),
            None => None,
        };
        entries.push(FieldEntry {
            field: x.id.clone(),
            dj_analytic: d.dj,
            dlambda: d.dlambda,
            dvol: d.dvol,
            normalized,
            dj_fd: fd.as_ref().map(|f| f.estimate),
            fd_std_error: fd.as_ref().and_then(|f| f.std_error),
            discrepancy: fd.as_ref().map(|f| (f.estimate - d.dj).abs()),
        });
    }
    let max_normalized = entries.iter().map(|e| e.normalized).fold(0.0, f64::max);
    let (steiner_field, steiner_dj) = entries
        .iter()
        .filter(|e| e.field.starts_with("steiner"))
        .map(|e| (e.field.clone(), e.dj_analytic))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or_default();
    let critical = trace.relative_variation <= TRACE_VARIATION_LIMIT && max_normalized <= CRITICAL_THRESHOLD;
    Ok(ShapeReport {
        version: crate::VERSION.to_string(),
        battery: BATTERY_VERSION.to_string(),
        config_hash: None,
        s: o.s,
        p,
        lambda: sol.lambda,
        j: sol.lambda + c0 * c0 * g * dom.volume(),
        c0,
        volume: dom.volume(),
        perimeter,
        trace_variation: trace.relative_variation,
        trace_flagged: trace.flagged,
        max_normalized,
        steiner_dj,
        steiner_field,
        entries,
        verdict: if critical { Verdict::Critical } else { Verdict::NotCritical },
    })
}

impl ShapeReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        writeln!(w, "field,dj_analytic,dj_fd,dvol,discrepancy")?;
        for e in &self.entries {
            writeln!(w, "{},{},{},{},{}", e.field, e.dj_analytic, opt(e.dj_fd), e.dvol, opt(e.discrepancy))?;
        }
        Ok(())
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        match self.verdict {
            Verdict::Critical => format!(
                "critical: trace variation {:.2}%, max normalized |dJ·X| = {:.2e}; the domain is a solution domain",
                100.0 * self.trace_variation,
                self.max_normalized
            ),
            Verdict::NotCritical => format!(
                "not critical: dJ·V = {:.4e} ({}), trace variation {:.2}%, max normalized |dJ·X| = {:.2e}",
                self.steiner_dj,
                self.steiner_field,
                100.0 * self.trace_variation,
                self.max_normalized
            ),
        }
    }
}

/// `(t, J(Ω^t))` along the continuous Steiner symmetrization in the frame `phi`.
pub fn steiner_flow_curve(
    dom: &ConvexDomain,
    o: FracOrder,
    p: f64,
    c0: f64,
    phi: f64,
    times: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<(f64, f64)>> {
    let fixed = fixed_spacing(dom, opts)?;
    times
        .par_iter()
        .map(|&t| {
            let d = symmetrize_set_in_frame(dom, SymTime::new(t)?, phi)?;
            Ok((t, shape_functional_with(&d, o, p, c0, &fixed)?))
        })
        .collect()
}

pub fn write_flow_csv<W: Write>(curve: &[(f64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "t,J")?;
    for (t, j) in curve {
        writeln!(w, "{t},{j}")?;
    }
    Ok(())
}
