//! Positive minimizers of `[u]²` over `‖u‖_{L^p} = 1`, `u = 0` off the domain, for
//! `p ∈ [1, 2]`, and extraction of the boundary ratio `u/δ^s`.

use crate::error::{Error, Result};
use crate::fracops::{DirichletOperator, FracOrder};
use crate::geometry::ConvexDomain;
use crate::grid::{GridFunction, Point};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Discretization and iteration controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Cells across the longest side of the bounding box.
    pub resolution: usize,
    /// Overrides `resolution` with a fixed cell size; nodes then sit on the global
    /// lattice `offset + (k + ½)h`.
    pub spacing: Option<f64>,
    /// Lattice offset used with a fixed spacing.
    pub offset: [f64; 2],
    /// Shape functionals average `λ` over `shifts^N` sub-cell lattice offsets, which
    /// smooths the staircase noise of the discrete domain. 1 disables averaging.
    pub shifts: usize,
    /// Empty cells added on every side of the bounding box.
    pub margin: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Relative change at which the `p ∈ (1,2)` fixed point and the inverse power
    /// iteration stop.
    pub fixed_point_tol: f64,
    pub max_outer_iter: usize,
    /// Damping of the `p ∈ (1,2)` fixed point.
    pub theta: f64,
    /// Boundary samples used by the trace fit in 2D.
    pub trace_samples: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            resolution: 96,
            spacing: None,
            offset: [0.0, 0.0],
            shifts: 1,
            margin: 2,
            cg_tol: 1e-10,
            cg_max_iter: 5000,
            fixed_point_tol: 1e-9,
            max_outer_iter: 2000,
            theta: 0.5,
            trace_samples: 128,
        }
    }
}

/// Grid covering the domain's bounding box with the configured margin.
pub fn domain_grid(dom: &ConvexDomain, opts: &SolverOptions) -> Result<GridFunction> {
    let (lo, hi) = dom.bbox_slices();
    match opts.spacing {
        None => GridFunction::covering(&lo, &hi, opts.resolution, opts.margin),
        Some(h) => {
            if !(h > 0.0) {
                return Err(Error::InvalidParameter(format!("spacing {h} must be positive")));
            }
            let mut origin = Vec::new();
            let mut dims = Vec::new();
            for (d, (a, b)) in lo.iter().zip(&hi).enumerate() {
                let m = opts.margin.max(1) as f64;
                let kmin = ((a - opts.offset[d]) / h - 0.5).floor() - m;
                let kmax = ((b - opts.offset[d]) / h - 0.5).ceil() + m;
                origin.push(opts.offset[d] + (kmin + 0.5) * h);
                dims.push((kmax - kmin) as usize + 1);
            }
            GridFunction::zeros(origin, h, dims)
        }
    }
}

/// Dirichlet operator on the grid nodes strictly inside the domain.
pub fn discretize(dom: &ConvexDomain, o: FracOrder, opts: &SolverOptions) -> Result<DirichletOperator> {
    if dom.dim() != o.dim {
        return Err(Error::InvalidParameter(format!("domain is {}D but order has N = {}", dom.dim(), o.dim)));
    }
    let grid = domain_grid(dom, opts)?;
    let active: Vec<bool> = (0..grid.len()).into_par_iter().map(|i| dom.contains(grid.node(i))).collect();
    DirichletOperator::new(&grid, &active, o)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Result of a conjugate-gradient solve.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
}

/// Conjugate gradients for `A x = b` to relative residual `tol`.
pub fn conjugate_gradient(
    op: &DirichletOperator,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = op.apply_vec(&x);
        r.iter_mut().zip(&ax).for_each(|(ri, a)| *ri -= a);
    }
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    let mut history = Vec::new();
    for it in 0..=max_iter {
        let rel = rr.sqrt() / bnorm;
        history.push(rel);
        if rel <= tol {
            return Ok(CgOutcome { x, iterations: it, residual: rel });
        }
        if it == max_iter {
            break;
        }
        op.apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        // Recompute the true residual now and then to stop drift.
        if (it + 1) % 200 == 0 {
            let ax = op.apply_vec(&x);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: *history.last().unwrap(), history })
}

/// Torsion function: `(−Δ)^s w = 1` in the domain, `w = 0` outside.
pub fn solve_torsion(dom: &ConvexDomain, o: FracOrder) -> Result<GridFunction> {
    solve_torsion_with(dom, o, &SolverOptions::default())
}

pub fn solve_torsion_with(dom: &ConvexDomain, o: FracOrder, opts: &SolverOptions) -> Result<GridFunction> {
    let op = discretize(dom, o, opts)?;
    let out = conjugate_gradient(&op, &vec![1.0; op.len()], None, opts.cg_tol, opts.cg_max_iter)?;
    Ok(op.extend(&out.x))
}

/// Positive minimizer and its energy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralSolution {
    /// Minimizer, normalized in `L^p`.
    pub u: GridFunction,
    /// `[u]²`, from the weak form `⟨(−Δ)^s u, u⟩`.
    pub lambda: f64,
    pub p: f64,
    pub order: FracOrder,
    /// `‖(−Δ)^s u − λu^{p−1}‖ / ‖λu^{p−1}‖` over the active nodes.
    pub residual: f64,
    /// Outer iterations (linear solves for `p = 1`).
    pub iterations: usize,
    pub warnings: Vec<String>,
}

fn lp_norm_nodes(x: &[f64], p: f64, vol: f64) -> f64 {
    (x.iter().map(|v| v.abs().powf(p)).sum::<f64>() * vol).powf(1.0 / p)
}

fn normalize(x: &mut [f64], p: f64, vol: f64) {
    let n = lp_norm_nodes(x, p, vol);
    x.iter_mut().for_each(|v| *v /= n);
}

/// Clamp negatives to zero; values below `−1e-12·max` produce a warning.
fn project(x: &mut [f64], warnings: &mut Vec<String>) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let worst = x.iter().cloned().fold(0.0f64, f64::min);
    if worst < -1e-12 * m {
        warnings.push(format!("projected negative iterate values (min {worst:.3e})"));
    }
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn el_residual(op: &DirichletOperator, u: &[f64], lambda: f64, p: f64) -> f64 {
    let au = op.apply_vec(u);
    let rhs: Vec<f64> = u.iter().map(|v| lambda * if p == 1.0 { 1.0 } else { v.powf(p - 1.0) }).collect();
    let num: f64 = au.iter().zip(&rhs).map(|(a, b)| (a - b) * (a - b)).sum();
    (num / dot(&rhs, &rhs)).sqrt()
}

fn check_p(p: f64) -> Result<()> {
    if (1.0..=2.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("p = {p} must lie in [1, 2]")))
    }
}

/// `λ_{s,p}` and its minimizer with default options.
pub fn solve_lambda(dom: &ConvexDomain, o: FracOrder, p: f64) -> Result<SpectralSolution> {
    solve_lambda_with(dom, o, p, &SolverOptions::default(), None)
}

/// `λ_{s,p}` with explicit options and an optional initial iterate (used by the iterative
/// cases `p > 1`; it must live on the grid of [`domain_grid`]).
pub fn solve_lambda_with(
    dom: &ConvexDomain,
    o: FracOrder,
    p: f64,
    opts: &SolverOptions,
    init: Option<&GridFunction>,
) -> Result<SpectralSolution> {
    check_p(p)?;
    let op = discretize(dom, o, opts)?;
    let vol = op.grid().cell_volume();
    let mut warnings = Vec::new();
    let (x, iterations) = if p == 1.0 {
        let w = conjugate_gradient(&op, &vec![1.0; op.len()], None, opts.cg_tol, opts.cg_max_iter)?;
        let mut x = w.x;
        project(&mut x, &mut warnings);
        normalize(&mut x, 1.0, vol);
        (x, 1)
    } else {
        let mut x = match init {
            Some(g) => {
                g.check_same_grid(op.grid())?;
                op.restrict(g)
            }
            None => vec![1.0; op.len()],
        };
        project(&mut x, &mut warnings);
        if x.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidParameter("initial iterate vanishes on the domain".into()));
        }
        normalize(&mut x, p, vol);
        if p == 2.0 {
            inverse_power(&op, x, opts, &mut warnings)?
        } else {
            fixed_point(&op, x, p, opts, &mut warnings)?
        }
    };
    let u = op.extend(&x);
    // [u]² in weak form; equal to the pair form of `seminorm_squared` up to rounding.
    let lambda = vol * dot(&op.apply_vec(&x), &x);
    let residual = el_residual(&op, &x, lambda, p);
    Ok(SpectralSolution { u, lambda, p, order: o, residual, iterations, warnings })
}

fn inverse_power(
    op: &DirichletOperator,
    mut x: Vec<f64>,
    opts: &SolverOptions,
    warnings: &mut Vec<String>,
) -> Result<(Vec<f64>, usize)> {
    let vol = op.grid().cell_volume();
    let mut mu = dot(&op.apply_vec(&x), &x) / dot(&x, &x);
    let mut history = Vec::new();
    for it in 1..=opts.max_outer_iter {
        let guess: Vec<f64> = x.iter().map(|v| v / mu).collect();
        let y = conjugate_gradient(op, &x, Some(&guess), opts.cg_tol.min(1e-12), opts.cg_max_iter)?.x;
        let mut next = y;
        project(&mut next, warnings);
        normalize(&mut next, 2.0, vol);
        let change = lp_norm_nodes(&next.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>(), 2.0, vol);
        history.push(change);
        x = next;
        mu = dot(&op.apply_vec(&x), &x) / dot(&x, &x);
        if change <= opts.fixed_point_tol {
            return Ok((x, it));
        }
    }
    Err(Error::Stagnation { iterations: opts.max_outer_iter, change: *history.last().unwrap(), history })
}

fn fixed_point(
    op: &DirichletOperator,
    mut x: Vec<f64>,
    p: f64,
    opts: &SolverOptions,
    warnings: &mut Vec<String>,
) -> Result<(Vec<f64>, usize)> {
    let vol = op.grid().cell_volume();
    let theta = opts.theta;
    let mut v_prev: Option<Vec<f64>> = None;
    let mut history = Vec::new();
    for it in 1..=opts.max_outer_iter {
        let rhs: Vec<f64> = x.iter().map(|u| u.powf(p - 1.0)).collect();
        let v = conjugate_gradient(op, &rhs, v_prev.as_deref(), opts.cg_tol.min(1e-12), opts.cg_max_iter)?.x;
        let mut vn = v.clone();
        project(&mut vn, warnings);
        normalize(&mut vn, p, vol);
        let mut next: Vec<f64> = x.iter().zip(&vn).map(|(a, b)| (1.0 - theta) * a + theta * b).collect();
        normalize(&mut next, p, vol);
        let change = lp_norm_nodes(&next.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>(), p, vol);
        history.push(change);
        x = next;
        v_prev = Some(v);
        if change <= opts.fixed_point_tol {
            return Ok((x, it));
        }
    }
    Err(Error::Stagnation { iterations: opts.max_outer_iter, change: *history.last().unwrap(), history })
}

/// Fitted boundary ratio at one boundary sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub point: Point,
    pub normal: Point,
    /// Surface weight of the sample in the boundary quadrature.
    pub weight: f64,
    /// Fitted `C(x₀)`.
    pub ratio: f64,
    /// Relative least-squares residual of the fit.
    pub residual: f64,
    pub points: usize,
    pub flagged: bool,
}

/// Boundary ratio `u/δ^s` sampled along the boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTrace {
    pub samples: Vec<TraceSample>,
    /// Surface-weighted mean ratio.
    pub mean: f64,
    /// `(max − min) / mean`.
    pub relative_variation: f64,
    pub flagged: usize,
}

/// Fit tolerance above which a sample is flagged.
pub const FIT_TOLERANCE: f64 = 0.05;

/// Boundary ratio of a solution.
pub fn boundary_ratio(sol: &SpectralSolution, dom: &ConvexDomain, o: FracOrder) -> Result<BoundaryTrace> {
    boundary_ratio_of(&sol.u, dom, o, SolverOptions::default().trace_samples)
}

/// Boundary ratio of any grid function vanishing off a smooth domain.
///
/// Near the boundary `u = C δ^s + O(δ^{s+1})`, while the discrete solution carries a
/// boundary layer behaving like an `O(h)` shift of `δ`. The fit therefore uses
/// `u ≈ a₀ δ^s + a₁ h δ^{s−1} + a₂ δ^{s+1}/h` over nodes with `δ ∈ [2h, 12h]` whose
/// tangential offset from the sample is at most `8h`, and reports `C = a₀`.
pub fn boundary_ratio_of(u: &GridFunction, dom: &ConvexDomain, o: FracOrder, samples: usize) -> Result<BoundaryTrace> {
    if !dom.is_smooth() {
        return Err(Error::Unsupported("boundary ratios need a smooth domain (interval, ball or ellipse)".into()));
    }
    if u.ndim() != dom.dim() || o.dim != dom.dim() {
        return Err(Error::GridMismatch("grid, order and domain dimensions differ".into()));
    }
    let h = u.spacing;
    let s = o.s;
    // Candidate nodes: inside, within 12h of the boundary.
    let near: Vec<(Point, f64, f64)> = (0..u.len())
        .filter_map(|i| {
            let x = u.node(i);
            if !dom.contains(x) {
                return None;
            }
            let d = dom.boundary_distance(x);
            (d >= 2.0 * h * (1.0 - 1e-12) && d <= 12.0 * h * (1.0 + 1e-12)).then_some((x, d, u.values[i]))
        })
        .collect();
    let quad = dom.boundary_quadrature(samples);
    let fitted: Vec<TraceSample> = quad
        .par_iter()
        .enumerate()
        .map(|(k, b)| {
            let tan = [-b.normal[1], b.normal[0]];
            let pts: Vec<(f64, f64)> = near
                .iter()
                .filter(|(x, d, _)| {
                    let r = [x[0] - b.point[0], x[1] - b.point[1]];
                    let along = r[0] * b.normal[0] + r[1] * b.normal[1];
                    let across = r[0] * tan[0] + r[1] * tan[1];
                    if dom.dim() == 1 {
                        along < 0.0 && (along.abs() - d).abs() <= 1e-9 * h
                    } else {
                        along < 0.0 && along > -14.0 * h && across.abs() <= 8.0 * h
                    }
                })
                .map(|&(_, d, v)| (d / h, v))
                .collect();
            if pts.len() < 6 {
                return Err(Error::TooFewFitPoints { sample: k, points: pts.len() });
            }
            let m = pts.len();
            let basis = DMatrix::from_fn(m, 3, |i, j| pts[i].0.powf(s + [0.0, -1.0, 1.0][j]));
            let rhs = DVector::from_iterator(m, pts.iter().map(|p| p.1));
            let coef = basis
                .clone()
                .svd(true, true)
                .solve(&rhs, 1e-14)
                .map_err(|e| Error::Degenerate(format!("trace fit: {e}")))?;
            let res = (&basis * &coef - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE);
            let ratio = coef[0] / h.powf(s);
            Ok(TraceSample {
                point: b.point,
                normal: b.normal,
                weight: b.weight,
                ratio,
                residual: res,
                points: m,
                flagged: res > FIT_TOLERANCE || !(ratio > 0.0),
            })
        })
        .collect::<Result<_>>()?;
    let wsum: f64 = fitted.iter().map(|t| t.weight).sum();
    let mean = fitted.iter().map(|t| t.weight * t.ratio).sum::<f64>() / wsum;
    let (lo, hi) = fitted.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t.ratio), b.max(t.ratio)));
    let flagged = fitted.iter().filter(|t| t.flagged).count();
    Ok(BoundaryTrace { samples: fitted, mean, relative_variation: (hi - lo) / mean, flagged })
}

/// Summary written next to a persisted solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionSidecar {
    pub lambda: f64,
    pub p: f64,
    pub s: f64,
    pub dim: usize,
    pub residual: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
    pub trace_mean: Option<f64>,
    pub trace_relative_variation: Option<f64>,
    pub trace_flagged: Option<usize>,
    pub version: String,
}

impl SpectralSolution {
    pub fn sidecar(&self, trace: Option<&BoundaryTrace>) -> SolutionSidecar {
        SolutionSidecar {
            lambda: self.lambda,
            p: self.p,
            s: self.order.s,
            dim: self.order.dim,
            residual: self.residual,
            iterations: self.iterations,
            warnings: self.warnings.clone(),
            trace_mean: trace.map(|t| t.mean),
            trace_relative_variation: trace.map(|t| t.relative_variation),
            trace_flagged: trace.map(|t| t.flagged),
            version: crate::VERSION.to_string(),
        }
    }

    /// Write `u` to `path` (binary for `.bin`, CSV otherwise) and the sidecar to
    /// `path` with extension `.json`.
    pub fn save(&self, path: &Path, trace: Option<&BoundaryTrace>) -> Result<()> {
        self.u.save(path)?;
        let json = serde_json::to_string_pretty(&self.sidecar(trace))?;
        std::fs::write(path.with_extension("json"), json + "\n")?;
        Ok(())
    }
}
