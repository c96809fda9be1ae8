//! Nonlocal kernel layer: normalization constant, lattice quadrature of the singular
//! kernel, Gagliardo seminorm, regularized energy, Riesz pairing, and the discrete
//! fractional Laplacian.
//!
//! The discretization treats a grid function as piecewise constant on square cells of
//! side `h`. Far interactions use the exact cell integrals of `|z|^{-N-2s}`, the
//! self-cell uses a quadratic Taylor model whose second moment is corrected for the
//! Taylor error of the far cells, and the zero exterior enters through the total
//! exterior mass of the cell.
//!
//! Fourier convention for oracles: unitary transform `û(ξ) = (2π)^{-N/2} ∫ u(x) e^{-ix·ξ} dx`,
//! under which `(−Δ)^s` has symbol `|ξ|^{2s}` and `[u]² = ∫ |ξ|^{2s} |û(ξ)|² dξ`.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::quad::{gauss_legendre, integrate, integrate_adaptive, pairwise_sum};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::gamma;
use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt;
use std::sync::Arc;

/// Fractional order `s` together with the spatial dimension.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FracOrder {
    pub s: f64,
    pub dim: usize,
}

impl FracOrder {
    pub fn new(s: f64, dim: usize) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidParameter(format!("s = {s} must lie in (0, 1)")));
        }
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension {dim} must be 1 or 2")));
        }
        Ok(FracOrder { s, dim })
    }

    fn check_grid(&self, u: &GridFunction) -> Result<()> {
        if u.ndim() != self.dim {
            return Err(Error::GridMismatch(format!(
                "order has N = {} but grid is {}D",
                self.dim,
                u.ndim()
            )));
        }
        Ok(())
    }
}

/// `c_{N,s} = π^{-N/2} s 4^s Γ(N/2+s) / Γ(1−s)`.
pub fn normalization_constant(o: FracOrder) -> f64 {
    let n = o.dim as f64;
    PI.powf(-n / 2.0) * o.s * 4f64.powf(o.s) * gamma(n / 2.0 + o.s) / gamma(1.0 - o.s)
}

/// `∫_{ℝ²∖[−½,½]²} |z|^{-2-γ} dz` for `γ > 0`.
fn exterior_square_moment(gamma_: f64) -> f64 {
    8.0 / gamma_ * integrate(|t| (2.0 * t.cos()).powf(gamma_), 0.0, FRAC_PI_4, 40)
}

/// Cell-integrated kernel weights on the unit lattice, with the self-cell constants.
#[derive(Clone, Debug)]
pub struct LatticeKernel {
    pub order: FracOrder,
    /// Largest offset per axis covered by the weight table.
    pub reach: usize,
    /// `W_k = ∫_{k+[−½,½]^N} |z|^{-N-2s} dz` indexed by `|k|` per axis (`W_0 = 0`).
    weights: Vec<f64>,
    /// Exterior mass `∫_{ℝ^N ∖ cell_0} |z|^{-N-2s} dz`.
    pub exterior: f64,
    /// Corrected second moment of the self-cell, per axis.
    pub moment: f64,
}

const MOMENT_REACH_1D: usize = 2000;
const MOMENT_REACH_2D: usize = 64;

impl LatticeKernel {
    pub fn new(order: FracOrder, reach: usize) -> Result<Self> {
        let s = order.s;
        let reach = reach.max(1);
        let (weights, exterior, moment) = if order.dim == 1 {
            let w: Vec<f64> = (0..=reach)
                .map(|k| if k == 0 { 0.0 } else { weight_1d(k as f64, s) })
                .collect();
            let exterior = 4f64.powf(s) / s;
            let near = 2.0 * 0.5f64.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
            (w, exterior, near + moment_defect_1d(s))
        } else {
            let n = reach + 1;
            let mut w = vec![0.0; n * n];
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|a| (0..=a).map(|b| cell_integral_2d(a, b, s, None)).collect())
                .collect();
            for (a, row) in rows.iter().enumerate() {
                for (b, &v) in row.iter().enumerate() {
                    w[a * n + b] = v;
                    w[b * n + a] = v;
                }
            }
            w[0] = 0.0;
            let exterior = exterior_square_moment(2.0 * s);
            let near = 2.0 / (1.0 - s)
                * integrate(|t| (2.0 * t.cos()).powf(2.0 * s - 2.0), 0.0, FRAC_PI_4, 40);
            (w, exterior, near + moment_defect_2d(s))
        };
        let k = LatticeKernel { order, reach, weights, exterior, moment };
        if 2.0 * k.weight(1, 0) + k.moment <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lattice symbol not positive for s = {s}"
            )));
        }
        Ok(k)
    }

    /// Weight for offset `(dx, dy)`; 1D kernels use `dx` only.
    #[inline]
    pub fn weight(&self, dx: usize, dy: usize) -> f64 {
        if self.order.dim == 1 {
            debug_assert_eq!(dy, 0);
            self.weights[dx]
        } else {
            self.weights[dx * (self.reach + 1) + dy]
        }
    }

    /// Diagonal coefficient `S + N·M'` of the unit-lattice operator.
    pub fn diagonal(&self) -> f64 {
        self.exterior + self.order.dim as f64 * self.moment
    }

    /// Exterior mass of the kernel outside a box, seen from a point inside it, in
    /// lattice units. `dist` lists the distances to the box faces (1D: left, right;
    /// 2D: right, top, left, bottom).
    pub fn box_tail(&self, dist: &[f64]) -> f64 {
        let s = self.order.s;
        if self.order.dim == 1 {
            return (dist[0].powf(-2.0 * s) + dist[1].powf(-2.0 * s)) / (2.0 * s);
        }
        let mut total = 0.0;
        for j in 0..4 {
            let d = dist[j];
            let lo = -(dist[(j + 3) % 4] / d).atan();
            let hi = (dist[(j + 1) % 4] / d).atan();
            let arc = integrate_adaptive(&|p: f64| p.cos().powf(2.0 * s), lo, hi, 1e-13);
            total += d.powf(-2.0 * s) * arc;
        }
        total / (2.0 * s)
    }
}

fn weight_1d(k: f64, s: f64) -> f64 {
    ((k - 0.5).powf(-2.0 * s) - (k + 0.5).powf(-2.0 * s)) / (2.0 * s)
}

/// `Σ_{k≠0} ∫_{cell k} (z² − k²) |z|^{-1-2s} dz`, with an asymptotic tail.
fn moment_defect_1d(s: f64) -> f64 {
    let (x, w) = gauss_legendre(12);
    let cell = |k: f64| -> f64 {
        x.iter()
            .zip(&w)
            .map(|(xi, wi)| {
                let z = k + 0.5 * xi;
                0.5 * wi * (z * z - k * k) * z.powf(-1.0 - 2.0 * s)
            })
            .sum()
    };
    let terms: Vec<f64> = (1..=MOMENT_REACH_1D).map(|k| 2.0 * cell(k as f64)).collect();
    let kk = MOMENT_REACH_1D as f64;
    let tail = -(1.0 + 4.0 * s) / (12.0 * s) * (kk + 0.5).powf(-2.0 * s);
    pairwise_sum(&terms) + tail
}

/// Per-axis moment defect `Σ_{k≠0} ∫_{cell k} (z₁² − k₁²) |z|^{-2-2s} dz`.
fn moment_defect_2d(s: f64) -> f64 {
    let r = MOMENT_REACH_2D;
    let rows: Vec<f64> = (0..=r)
        .into_par_iter()
        .map(|a| {
            let mut acc = 0.0;
            for b in 0..=r {
                if a == 0 && b == 0 {
                    continue;
                }
                let mult = if a == 0 { 1.0 } else { 2.0 } * if b == 0 { 1.0 } else { 2.0 };
                acc += mult * cell_integral_2d(a, b, s, Some((a * a) as f64));
            }
            acc
        })
        .collect();
    let tail = -(1.0 + 2.0 * s) / 12.0
        * exterior_square_moment(2.0 * s)
        * (2.0 * r as f64 + 1.0).powf(-2.0 * s);
    pairwise_sum(&rows) + tail
}

/// Integral over the unit cell centred at `(a, b)` of `|z|^{-2-2s}`, or of
/// `(z₁² − shift)|z|^{-2-2s}` when `moment = Some(shift)`.
fn cell_integral_2d(a: usize, b: usize, s: f64, moment: Option<f64>) -> f64 {
    let near = a.max(b) <= 3;
    let sub = if near { 4 } else { 1 };
    let (x, w) = gauss_legendre(if near { 8 } else { 6 });
    let hsub = 1.0 / sub as f64;
    let mut acc = 0.0;
    for i in 0..sub {
        for j in 0..sub {
            let cx = a as f64 - 0.5 + (i as f64 + 0.5) * hsub;
            let cy = b as f64 - 0.5 + (j as f64 + 0.5) * hsub;
            for (xi, wi) in x.iter().zip(&w) {
                for (yj, wj) in x.iter().zip(&w) {
                    let zx = cx + 0.5 * hsub * xi;
                    let zy = cy + 0.5 * hsub * yj;
                    let k = (zx * zx + zy * zy).powf(-1.0 - s);
                    acc += wi * wj * moment.map_or(k, |c| (zx * zx - c) * k);
                }
            }
        }
    }
    acc * 0.25 * hsub * hsub
}

/// Dot product with a fixed 4-lane accumulation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Clone, Debug)]
struct Run {
    ix: usize,
    iy0: usize,
    start: usize,
    len: usize,
}

/// Off-diagonal couplings as a circular convolution on a doubled lattice.
#[derive(Clone)]
struct Spectral {
    len: [usize; 2],
    kernel_hat: Vec<Complex64>,
    fwd: [Arc<dyn Fft<f64>>; 2],
    inv: [Arc<dyn Fft<f64>>; 2],
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral").field("len", &self.len).finish()
    }
}

fn transpose_into(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

impl Spectral {
    /// `coupling(dx, dy)` is the weight between lattice offsets; the lattice is `shape`.
    fn new(shape: [usize; 2], coupling: impl Fn(usize, usize) -> f64) -> Self {
        let len = [if shape[0] == 1 { 1 } else { 2 * shape[0] }, 2 * shape[1]];
        let mut planner = FftPlanner::new();
        let fwd = [planner.plan_fft_forward(len[0]), planner.plan_fft_forward(len[1])];
        let inv = [planner.plan_fft_inverse(len[0]), planner.plan_fft_inverse(len[1])];
        let offset = |k: usize, n: usize, l: usize| -> Option<usize> {
            if k < n {
                Some(k)
            } else if k + n > l {
                Some(l - k)
            } else {
                None
            }
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); len[0] * len[1]];
        for a in 0..len[0] {
            for b in 0..len[1] {
                if let (Some(dx), Some(dy)) = (offset(a, shape[0], len[0]), offset(b, shape[1], len[1])) {
                    if dx + dy > 0 {
                        buf[a * len[1] + b] = Complex64::new(coupling(dx, dy), 0.0);
                    }
                }
            }
        }
        let mut sp = Spectral { len, kernel_hat: Vec::new(), fwd, inv };
        sp.forward(&mut buf);
        let norm = 1.0 / (len[0] * len[1]) as f64;
        buf.iter_mut().for_each(|z| *z *= norm);
        sp.kernel_hat = buf;
        sp
    }

    /// 2D transform; the result is left in transposed layout.
    fn forward(&self, buf: &mut Vec<Complex64>) {
        let [l0, l1] = self.len;
        self.fwd[1].process(buf);
        if l0 > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); buf.len()];
            transpose_into(buf, &mut t, l0, l1);
            self.fwd[0].process(&mut t);
            *buf = t;
        }
    }

    /// Inverse of [`Spectral::forward`].
    fn inverse(&self, buf: &mut Vec<Complex64>) {
        let [l0, l1] = self.len;
        if l0 > 1 {
            self.inv[0].process(buf);
            let mut t = vec![Complex64::new(0.0, 0.0); buf.len()];
            transpose_into(buf, &mut t, l1, l0);
            *buf = t;
        }
        self.inv[1].process(buf);
    }

    /// `Σ_j K(i−j) x_j` at the given cells.
    fn convolve(&self, cells: &[[usize; 2]], x: &[f64], out: &mut [f64]) {
        let l1 = self.len[1];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len[0] * l1];
        for (c, &v) in cells.iter().zip(x) {
            buf[c[0] * l1 + c[1]] = Complex64::new(v, 0.0);
        }
        self.forward(&mut buf);
        buf.iter_mut().zip(&self.kernel_hat).for_each(|(z, k)| *z *= k);
        self.inverse(&mut buf);
        for (c, o) in cells.iter().zip(out.iter_mut()) {
            *o = buf[c[0] * l1 + c[1]].re;
        }
    }
}

/// Discrete `(−Δ)^s` restricted to a set of active grid nodes, with zero values on all
/// other nodes and outside the grid. Symmetric positive definite.
#[derive(Clone, Debug)]
pub struct DirichletOperator {
    pub order: FracOrder,
    template: GridFunction,
    kernel: LatticeKernel,
    scale: f64,
    /// Flat grid indices of the active nodes, increasing.
    pub nodes: Vec<usize>,
    cells: Vec<[usize; 2]>,
    runs: Vec<Run>,
    nbrs: Vec<[u32; 4]>,
    wext: Vec<f64>,
    ry: usize,
    spectral: Spectral,
}

impl DirichletOperator {
    /// Operator on the nodes where `active` is true. Active nodes must avoid the outer
    /// ring of the grid.
    pub fn new(grid: &GridFunction, active: &[bool], order: FracOrder) -> Result<Self> {
        order.check_grid(grid)?;
        if active.len() != grid.len() {
            return Err(Error::GridMismatch("mask length differs from grid".into()));
        }
        let mut template = grid.clone();
        template.values.iter_mut().for_each(|v| *v = 0.0);
        let mut probe = template.clone();
        for (v, &a) in probe.values.iter_mut().zip(active) {
            *v = if a { 1.0 } else { 0.0 };
        }
        if !probe.has_zero_margin() {
            return Err(Error::SupportAtBoundary);
        }
        let nodes: Vec<usize> = (0..grid.len()).filter(|&i| active[i]).collect();
        if nodes.is_empty() {
            return Err(Error::Degenerate("no active nodes".into()));
        }
        // 1D grids are handled as a single column.
        let cell_of = |i: usize| -> [usize; 2] {
            if grid.ndim() == 1 {
                [0, i]
            } else {
                grid.multi_index(i)
            }
        };
        let cells: Vec<[usize; 2]> = nodes.iter().map(|&i| cell_of(i)).collect();
        let mut runs: Vec<Run> = Vec::new();
        for (k, c) in cells.iter().enumerate() {
            match runs.last_mut() {
                Some(r) if r.ix == c[0] && r.iy0 + r.len == c[1] => r.len += 1,
                _ => runs.push(Run { ix: c[0], iy0: c[1], start: k, len: 1 }),
            }
        }
        let mut lookup = std::collections::HashMap::with_capacity(cells.len());
        for (k, c) in cells.iter().enumerate() {
            lookup.insert(*c, k as u32);
        }
        let nbrs = cells
            .iter()
            .map(|c| {
                let get = |dx: i64, dy: i64| -> u32 {
                    let key = [(c[0] as i64 + dx) as usize, (c[1] as i64 + dy) as usize];
                    *lookup.get(&key).unwrap_or(&u32::MAX)
                };
                if grid.ndim() == 1 {
                    [get(0, 1), get(0, -1), u32::MAX, u32::MAX]
                } else {
                    [get(1, 0), get(-1, 0), get(0, 1), get(0, -1)]
                }
            })
            .collect();
        let (rx, ry) = if grid.ndim() == 1 {
            (0, grid.dims[0])
        } else {
            (grid.dims[0], grid.dims[1])
        };
        let kernel = LatticeKernel::new(order, rx.max(ry))?;
        let row = 2 * ry + 1;
        let mut wext = vec![0.0; (rx + 1) * row];
        for dx in 0..=rx {
            for k in 0..row {
                let dy = (k as i64 - ry as i64).unsigned_abs() as usize;
                wext[dx * row + k] =
                    if grid.ndim() == 1 { kernel.weight(dy, 0) } else { kernel.weight(dx, dy) };
            }
        }
        let scale = normalization_constant(order) * grid.spacing.powf(-2.0 * order.s);
        let half_m = 0.5 * kernel.moment;
        let spectral = Spectral::new([rx.max(1), ry], |dx, dy| {
            let w = if grid.ndim() == 1 { kernel.weight(dy, 0) } else { kernel.weight(dx, dy) };
            if dx + dy == 1 { w + half_m } else { w }
        });
        Ok(DirichletOperator { order, template, kernel, scale, nodes, cells, runs, nbrs, wext, ry, spectral })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn grid(&self) -> &GridFunction {
        &self.template
    }

    pub fn kernel(&self) -> &LatticeKernel {
        &self.kernel
    }

    /// `y = A x` on the active nodes, with the off-diagonal sum done by FFT.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.spectral.convolve(&self.cells, x, y);
        let diag = self.kernel.diagonal();
        for ((yi, &xi), _) in y.iter_mut().zip(x).zip(&self.nodes) {
            *yi = self.scale * (diag * xi - *yi);
        }
    }

    /// `y = A x` by direct summation; the reference for [`DirichletOperator::apply`].
    pub fn apply_direct(&self, x: &[f64], y: &mut [f64]) {
        let row = 2 * self.ry + 1;
        let diag = self.kernel.diagonal();
        let half_m = 0.5 * self.kernel.moment;
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let [ix, iy] = self.cells[i];
            let mut far = 0.0;
            for r in &self.runs {
                let dx = ix.abs_diff(r.ix);
                let off = dx * row + r.iy0 + self.ry - iy;
                far += dot(&x[r.start..r.start + r.len], &self.wext[off..off + r.len]);
            }
            let mut near = 0.0;
            for &n in &self.nbrs[i] {
                if n != u32::MAX {
                    near += x[n as usize];
                }
            }
            *yi = self.scale * (diag * x[i] - far - half_m * near);
        });
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        y
    }

    /// Restriction of a grid function to the active nodes.
    pub fn restrict(&self, u: &GridFunction) -> Vec<f64> {
        self.nodes.iter().map(|&i| u.values[i]).collect()
    }

    /// Zero extension of active-node values to the grid.
    pub fn extend(&self, x: &[f64]) -> GridFunction {
        let mut g = self.template.clone();
        for (&i, &v) in self.nodes.iter().zip(x) {
            g.values[i] = v;
        }
        g
    }
}

/// Indices of nonzero nodes with their lattice coordinates (1D as a single column).
fn support(u: &GridFunction) -> Vec<(usize, [usize; 2])> {
    (0..u.len())
        .filter(|&i| u.values[i] != 0.0)
        .map(|i| (i, if u.ndim() == 1 { [0, i] } else { u.multi_index(i) }))
        .collect()
}

fn lattice_shape(u: &GridFunction) -> [usize; 2] {
    if u.ndim() == 1 {
        [1, u.dims[0]]
    } else {
        [u.dims[0], u.dims[1]]
    }
}

fn kernel_for(u: &GridFunction, o: FracOrder) -> Result<LatticeKernel> {
    o.check_grid(u)?;
    let [nx, ny] = lattice_shape(u);
    LatticeKernel::new(o, nx.max(ny))
}

#[inline]
fn kernel_weight(k: &LatticeKernel, a: [usize; 2], b: [usize; 2]) -> f64 {
    let (dx, dy) = (a[0].abs_diff(b[0]), a[1].abs_diff(b[1]));
    if k.order.dim == 1 {
        k.weight(dy, 0)
    } else {
        k.weight(dx, dy)
    }
}

/// `(−Δ)^s u` at every grid node.
pub fn apply_fractional_laplacian(u: &GridFunction, o: FracOrder) -> Result<GridFunction> {
    let k = kernel_for(u, o)?;
    let supp = support(u);
    let [nx, ny] = lattice_shape(u);
    let scale = normalization_constant(o) * u.spacing.powf(-2.0 * o.s);
    let at = |ix: i64, iy: i64| -> f64 {
        if ix < 0 || iy < 0 || ix >= nx as i64 || iy >= ny as i64 {
            0.0
        } else if u.ndim() == 1 {
            u.values[iy as usize]
        } else {
            u.values[ix as usize * ny + iy as usize]
        }
    };
    let mut out = u.clone();
    out.values.par_iter_mut().enumerate().for_each(|(i, v)| {
        let c = if u.ndim() == 1 { [0, i] } else { u.multi_index(i) };
        let mut far = 0.0;
        for &(j, cj) in &supp {
            if j != i {
                far += kernel_weight(&k, c, cj) * u.values[j];
            }
        }
        let (ix, iy) = (c[0] as i64, c[1] as i64);
        let mut near = at(ix, iy + 1) + at(ix, iy - 1);
        if u.ndim() == 2 {
            near += at(ix + 1, iy) + at(ix - 1, iy);
        }
        *v = scale * (k.diagonal() * u.values[i] - far - 0.5 * k.moment * near);
    });
    Ok(out)
}

/// Squared Gagliardo seminorm `[u]²`, summed in pair form over the grid with the
/// exterior of the grid box added through the closed-form tail.
pub fn seminorm_squared(u: &GridFunction, o: FracOrder) -> Result<f64> {
    let k = kernel_for(u, o)?;
    let supp = support(u);
    if supp.is_empty() {
        return Ok(0.0);
    }
    let [nx, ny] = lattice_shape(u);
    let cell_of = |i: usize| if u.ndim() == 1 { [0, i] } else { u.multi_index(i) };
    let per_node: Vec<f64> = supp
        .par_iter()
        .map(|&(i, ci)| {
            let ui = u.values[i];
            let mut pair = 0.0;
            for j in 0..u.len() {
                if j == i {
                    continue;
                }
                let w = kernel_weight(&k, ci, cell_of(j));
                let uj = u.values[j];
                if uj != 0.0 {
                    pair += 0.5 * w * (ui - uj) * (ui - uj);
                } else {
                    pair += w * ui * ui;
                }
            }
            let (ix, iy) = (ci[0] as f64, ci[1] as f64);
            let dist: Vec<f64> = if u.ndim() == 1 {
                vec![iy + 0.5, (ny - 1) as f64 - iy + 0.5]
            } else {
                vec![(nx - 1) as f64 - ix + 0.5, (ny - 1) as f64 - iy + 0.5, ix + 0.5, iy + 0.5]
            };
            let tail = k.box_tail(&dist) * ui * ui;
            // Nearest-neighbour differences, each unordered pair counted once.
            let fwd = |dx: usize, dy: usize| -> f64 {
                let (jx, jy) = (ci[0] + dx, ci[1] + dy);
                if jx >= nx || jy >= ny {
                    0.0
                } else if u.ndim() == 1 {
                    u.values[jy]
                } else {
                    u.values[jx * ny + jy]
                }
            };
            let bwd = |dx: usize, dy: usize| -> Option<f64> {
                if ci[0] < dx || ci[1] < dy {
                    Some(0.0)
                } else {
                    let (jx, jy) = (ci[0] - dx, ci[1] - dy);
                    let v = if u.ndim() == 1 { u.values[jy] } else { u.values[jx * ny + jy] };
                    (v == 0.0).then_some(0.0)
                }
            };
            let mut grad = 0.0;
            let axes: &[(usize, usize)] = if u.ndim() == 1 { &[(0, 1)] } else { &[(0, 1), (1, 0)] };
            for &(dx, dy) in axes {
                let f = fwd(dx, dy);
                grad += (f - ui) * (f - ui);
                // Pairs with a zero node behind are not visited from that node.
                if let Some(b) = bwd(dx, dy) {
                    grad += (ui - b) * (ui - b);
                }
            }
            pair + tail + 0.5 * k.moment * grad
        })
        .collect();
    Ok(normalization_constant(o) * u.spacing.powf(o.dim as f64 - 2.0 * o.s) * pairwise_sum(&per_node))
}

/// Gagliardo seminorm `[u]_{H^s}`.
pub fn gagliardo_seminorm(u: &GridFunction, o: FracOrder) -> Result<f64> {
    Ok(seminorm_squared(u, o)?.max(0.0).sqrt())
}

/// Bilinear form `⟨(−Δ)^s u, v⟩`.
pub fn bilinear_form(u: &GridFunction, v: &GridFunction, o: FracOrder) -> Result<f64> {
    u.check_same_grid(v)?;
    Ok(apply_fractional_laplacian(u, o)?.inner(v))
}

/// Regularized kernel `κ_ε(z) = (|z|² + ε²)^{-(N+2s)/2}`.
pub fn regularized_kernel(r2: f64, o: FracOrder, eps: f64) -> f64 {
    (r2 + eps * eps).powf(-(o.dim as f64 + 2.0 * o.s) / 2.0)
}

/// Lattice sum `h^N Σ_{k ∈ ℤ^N} κ_ε(kh)`, the discrete total mass of `κ_ε`.
pub fn regularized_mass(o: FracOrder, h: f64, eps: f64) -> f64 {
    let kmax = ((40.0 * eps / h).ceil() as usize).max(64);
    let beta = o.dim as f64 + 2.0 * o.s;
    let kap = |k2: f64| regularized_kernel(k2 * h * h, o, eps);
    let core = if o.dim == 1 {
        let terms: Vec<f64> = (1..=kmax).map(|k| 2.0 * kap((k * k) as f64)).collect();
        kap(0.0) + pairwise_sum(&terms)
    } else {
        let rows: Vec<f64> = (0..=kmax)
            .map(|a| {
                let mut acc = 0.0;
                for b in 0..=kmax {
                    let m = if a == 0 { 1.0 } else { 2.0 } * if b == 0 { 1.0 } else { 2.0 };
                    acc += m * kap((a * a + b * b) as f64);
                }
                acc
            })
            .collect();
        pairwise_sum(&rows)
    };
    // Exterior of the summed block: binomial series of (r² + ε²)^{-β/2} in ε²/r².
    let a = (kmax as f64 + 0.5) * h;
    let mut coef = 1.0;
    let mut tail = 0.0;
    for m in 0..4 {
        let g = 2.0 * o.s + 2.0 * m as f64;
        let shell = if o.dim == 1 {
            2.0 * a.powf(-g) / g
        } else {
            exterior_square_moment(g) * (2.0 * a).powf(-g)
        };
        tail += coef * eps.powi(2 * m as i32) * shell;
        coef *= (-beta / 2.0 - m as f64) / (m as f64 + 1.0);
    }
    core * h.powi(o.dim as i32) + tail
}

/// Riesz pairing `∬ u(x) v(y) κ_ε(x − y) dx dy`, symmetric in `(u, v)` bit for bit.
///
/// The lattice sum is a circular convolution on the doubled grid, evaluated by FFT.
pub fn riesz_pairing(u: &GridFunction, v: &GridFunction, o: FracOrder, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {eps} must be positive")));
    }
    o.check_grid(u)?;
    u.check_same_grid(v)?;
    let shape = lattice_shape(u);
    let h = u.spacing;
    let cells: Vec<[usize; 2]> = (0..u.len()).map(|i| if u.ndim() == 1 { [0, i] } else { u.multi_index(i) }).collect();
    let sp = Spectral::new(shape, |dx, dy| regularized_kernel(((dx * dx + dy * dy) as f64) * h * h, o, eps));
    let diag = regularized_kernel(0.0, o, eps);
    let half = |a: &GridFunction, b: &GridFunction| -> f64 {
        let mut kb = vec![0.0; b.len()];
        sp.convolve(&cells, &b.values, &mut kb);
        let terms: Vec<f64> = a.values.iter().zip(&kb).zip(&b.values).map(|((x, k), y)| x * (k + diag * y)).collect();
        pairwise_sum(&terms)
    };
    // Floating-point addition commutes, so swapping u and v gives the same bits.
    Ok(0.5 * (half(u, v) + half(v, u)) * h.powi(2 * o.dim as i32))
}

/// Regularized energy `J_ε[u] = (c_{N,s}/2) ∬ (u(x) − u(y))² κ_ε(x − y) dx dy`.
pub fn regularized_energy(u: &GridFunction, o: FracOrder, eps: f64) -> Result<f64> {
    let pair = riesz_pairing(u, u, o, eps)?;
    let mass = regularized_mass(o, u.spacing, eps);
    let l2 = u.inner(u);
    Ok((normalization_constant(o) * (mass * l2 - pair)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(h: f64, half: f64) -> GridFunction {
        GridFunction::covering(&[-half], &[half], (2.0 * half / h).round() as usize, 2).unwrap()
    }

    fn plane(h: f64, half: f64) -> GridFunction {
        let n = (2.0 * half / h).round() as usize;
        GridFunction::covering(&[-half, -half], &[half, half], n, 2).unwrap()
    }

    fn bump(p: [f64; 2], c: [f64; 2], r: f64) -> f64 {
        let q = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (r * r);
        if q < 1.0 {
            (1.0 - q).powi(3)
        } else {
            0.0
        }
    }

    /// Unitary 1D Fourier transform of an even function by trapezoid quadrature.
    fn fourier_even(f: &dyn Fn(f64) -> f64, xi: f64, xmax: f64) -> f64 {
        let n = 4000;
        let dx = xmax / n as f64;
        let mut acc = 0.5 * f(0.0);
        for k in 1..=n {
            let x = k as f64 * dx;
            acc += f(x) * (x * xi).cos();
        }
        2.0 * acc * dx / (2.0 * PI).sqrt()
    }

    fn pairing_by_direct_sum(u: &GridFunction, v: &GridFunction, o: FracOrder, eps: f64) -> f64 {
        let h = u.spacing;
        let mut acc = 0.0;
        for i in 0..u.len() {
            for j in 0..u.len() {
                let (a, b) = (u.node(i), u.node(j));
                let r2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
                acc += u.values[i] * v.values[j] * regularized_kernel(r2, o, eps);
            }
        }
        acc * h.powi(2 * o.dim as i32)
    }

    #[test]
    fn fft_pairing_matches_direct_sum() {
        let o = FracOrder::new(0.4, 2).unwrap();
        let g = plane(0.1, 1.0);
        let u = g.from_fn(|p| bump(p, [0.2, -0.1], 0.6));
        let v = g.from_fn(|p| bump(p, [-0.3, 0.2], 0.5));
        for eps in [0.05, 0.3] {
            let (a, b) = (riesz_pairing(&u, &v, o, eps).unwrap(), pairing_by_direct_sum(&u, &v, o, eps));
            assert!((a / b - 1.0).abs() < 1e-12, "{a} vs {b}");
            assert_eq!(a, riesz_pairing(&v, &u, o, eps).unwrap());
        }
        let o1 = FracOrder::new(0.7, 1).unwrap();
        let l = line(0.02, 1.0);
        let w = l.from_fn(|p| (1.0 - 4.0 * p[0] * p[0]).max(0.0));
        let (a, b) = (riesz_pairing(&w, &w, o1, 0.1).unwrap(), pairing_by_direct_sum(&w, &w, o1, 0.1));
        assert!((a / b - 1.0).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn normalization_constant_values() {
        let c1 = normalization_constant(FracOrder::new(0.5, 1).unwrap());
        let c2 = normalization_constant(FracOrder::new(0.5, 2).unwrap());
        assert!((c1 - 1.0 / PI).abs() < 1e-13);
        assert!((c2 - 0.5 / PI).abs() < 1e-13);
        for dim in [1, 2] {
            let a = normalization_constant(FracOrder::new(1e-4, dim).unwrap()) / 1e-4;
            let b = normalization_constant(FracOrder::new(2e-4, dim).unwrap()) / 2e-4;
            assert!((a / b - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(FracOrder::new(0.0, 1).is_err());
        assert!(FracOrder::new(1.0, 2).is_err());
        assert!(FracOrder::new(0.5, 3).is_err());
    }

    #[test]
    fn lattice_weights_exhaust_exterior_mass() {
        for s in [0.2, 0.5, 0.8] {
            let r = 40;
            let k1 = LatticeKernel::new(FracOrder::new(s, 1).unwrap(), r).unwrap();
            let inner: f64 = (1..=r).map(|k| 2.0 * k1.weight(k, 0)).sum();
            let outer = ((r as f64 + 0.5).powf(-2.0 * s)) / s;
            assert!((inner + outer - k1.exterior).abs() < 1e-12 * k1.exterior);

            let k2 = LatticeKernel::new(FracOrder::new(s, 2).unwrap(), r).unwrap();
            let mut inner = 0.0;
            for a in 0..=r {
                for b in 0..=r {
                    let m = if a == 0 { 1.0 } else { 2.0 } * if b == 0 { 1.0 } else { 2.0 };
                    inner += m * k2.weight(a, b);
                }
            }
            let outer = k2.exterior * (2.0 * r as f64 + 1.0).powf(-2.0 * s);
            assert!(((inner + outer) / k2.exterior - 1.0).abs() < 1e-9, "s={s}");
        }
    }

    #[test]
    fn box_tail_matches_lattice_remainder() {
        let o = FracOrder::new(0.4, 2).unwrap();
        let k = LatticeKernel::new(o, 30).unwrap();
        let (nx, ny) = (12usize, 9usize);
        for &(ix, iy) in &[(0usize, 0usize), (5, 4), (11, 2)] {
            let mut inside = 0.0;
            for jx in 0..nx {
                for jy in 0..ny {
                    inside += k.weight(ix.abs_diff(jx), iy.abs_diff(jy));
                }
            }
            let dist = [
                (nx - 1 - ix) as f64 + 0.5,
                (ny - 1 - iy) as f64 + 0.5,
                ix as f64 + 0.5,
                iy as f64 + 0.5,
            ];
            let tail = k.box_tail(&dist);
            assert!(((inside + tail) / k.exterior - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seminorm_of_zero_is_zero() {
        let o = FracOrder::new(0.3, 2).unwrap();
        assert_eq!(gagliardo_seminorm(&plane(0.1, 1.0), o).unwrap(), 0.0);
        assert_eq!(regularized_energy(&plane(0.1, 1.0), o, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn weak_form_matches_pair_form() {
        for (dim, s) in [(1, 0.3), (1, 0.8), (2, 0.25), (2, 0.5), (2, 0.75)] {
            let o = FracOrder::new(s, dim).unwrap();
            let g = if dim == 1 { line(1.0 / 64.0, 1.5) } else { plane(1.0 / 16.0, 1.5) };
            let u = g.from_fn(|p| bump(p, [0.2, -0.1], 0.9));
            let v = g.from_fn(|p| bump(p, [-0.3, 0.2], 0.8));
            let pair = seminorm_squared(&u, o).unwrap();
            let weak = bilinear_form(&u, &u, o).unwrap();
            assert!((pair / weak - 1.0).abs() < 1e-8, "dim={dim} s={s}: {pair} vs {weak}");
            let uv = bilinear_form(&u, &v, o).unwrap();
            let vu = bilinear_form(&v, &u, o).unwrap();
            assert!((uv - vu).abs() < 1e-10 * uv.abs());
        }
    }

    #[test]
    fn operator_on_semicircle_matches_closed_form() {
        // (−Δ)^s (1−|x|²)^s_+ = 4^s Γ(N/2+s) Γ(1+s) / Γ(N/2) inside the ball.
        let s = 0.5;
        let o = FracOrder::new(s, 1).unwrap();
        let exact = 4f64.powf(s) * gamma(0.5 + s) * gamma(1.0 + s) / gamma(0.5);
        let g = GridFunction::covering(&[-1.0], &[1.0], 512, 2).unwrap();
        let u = g.from_fn(|p| (1.0 - p[0] * p[0]).max(0.0).powf(s));
        let lap = apply_fractional_laplacian(&u, o).unwrap();
        let mid = lap.values[lap.len() / 2];
        assert!((mid / exact - 1.0).abs() < 0.02, "{mid} vs {exact}");
    }

    #[test]
    fn gaussian_matches_fourier_oracle() {
        let gauss = |x: f64| (-x * x / 2.0).exp();
        for s in [0.3, 0.5, 0.7] {
            let o = FracOrder::new(s, 1).unwrap();
            // Oracle: ∫|ξ|^{2s}|û|² dξ and (2π)^{-1/2}∫|ξ|^{2s} û dξ with û from quadrature.
            let (nxi, ximax) = (1200, 12.0);
            let dxi = ximax / nxi as f64;
            let (mut energy, mut at0) = (0.0, 0.0);
            for k in 1..=nxi {
                let xi = k as f64 * dxi;
                let uh = fourier_even(&gauss, xi, 12.0);
                let wgt = if k == nxi { 0.5 } else { 1.0 };
                energy += 2.0 * wgt * xi.powf(2.0 * s) * uh * uh * dxi;
                at0 += 2.0 * wgt * xi.powf(2.0 * s) * uh * dxi;
            }
            at0 /= (2.0 * PI).sqrt();
            let g = line(1.0 / 64.0, 10.0);
            let u = g.from_fn(|p| gauss(p[0]));
            let e = seminorm_squared(&u, o).unwrap();
            assert!((e / energy - 1.0).abs() < 0.01, "s={s}: {e} vs {energy}");
            let lap = apply_fractional_laplacian(&u, o).unwrap();
            let mid = 0.5 * (lap.values[lap.len() / 2] + lap.values[lap.len() / 2 - 1]);
            // Nodes sit at ±h/2; the Gaussian's curvature shifts the value by O(h²).
            assert!((mid / at0 - 1.0).abs() < 0.01, "s={s}: {mid} vs {at0}");
        }
    }

    #[test]
    fn gaussian_2d_at_origin() {
        let s = 0.5;
        let o = FracOrder::new(s, 2).unwrap();
        // Radial oracle: (2π)^{-1} ∫ |ξ|^{2s} e^{-|ξ|²/2} dξ = ∫_0^∞ r^{2s+1} e^{-r²/2} dr.
        let oracle = integrate_adaptive(&|r: f64| r.powf(2.0 * s + 1.0) * (-r * r / 2.0).exp(), 0.0, 20.0, 1e-12);
        let g = plane(1.0 / 16.0, 6.0);
        let u = g.from_fn(|p| (-(p[0] * p[0] + p[1] * p[1]) / 2.0).exp());
        let lap = apply_fractional_laplacian(&u, o).unwrap();
        let c = g.dims[0] / 2;
        let centre = g.flat_index(c, c);
        assert!((lap.values[centre] / oracle - 1.0).abs() < 0.01, "{} vs {oracle}", lap.values[centre]);
    }

    #[test]
    fn seminorm_scaling_exponent() {
        for (dim, s) in [(1, 0.5), (1, 0.8), (2, 0.5)] {
            let o = FracOrder::new(s, dim).unwrap();
            let g = if dim == 1 { line(1.0 / 128.0, 2.5) } else { plane(1.0 / 24.0, 2.5) };
            let u1 = g.from_fn(|p| bump(p, [0.0, 0.0], 1.0));
            let u2 = g.from_fn(|p| bump([p[0] / 2.0, p[1] / 2.0], [0.0, 0.0], 1.0));
            let ratio = seminorm_squared(&u2, o).unwrap() / seminorm_squared(&u1, o).unwrap();
            let exponent = ratio.log2();
            let expected = dim as f64 - 2.0 * s;
            assert!((exponent - expected).abs() < 0.05, "dim={dim} s={s}: {exponent}");
        }
    }

    #[test]
    fn positive_at_interior_maximum() {
        let o = FracOrder::new(0.3, 2).unwrap();
        let g = plane(0.1, 1.5);
        let u = g.from_fn(|p| bump(p, [0.05, 0.05], 1.0));
        let lap = apply_fractional_laplacian(&u, o).unwrap();
        let (imax, _) = u.values.iter().enumerate().fold((0, 0.0), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
        assert!(lap.values[imax] > 0.0);
    }

    #[test]
    fn regularized_mass_matches_closed_form() {
        for (dim, s) in [(1, 0.3), (2, 0.5), (2, 0.8)] {
            let o = FracOrder::new(s, dim).unwrap();
            let eps: f64 = 0.2;
            let n = dim as f64;
            let exact = eps.powf(-2.0 * s) * PI.powf(n / 2.0) * gamma(s) / gamma(n / 2.0 + s);
            let got = regularized_mass(o, 0.01, eps);
            assert!((got / exact - 1.0).abs() < 1e-6, "dim={dim}: {got} vs {exact}");
        }
    }

    #[test]
    fn regularized_energy_increases_to_seminorm() {
        let o = FracOrder::new(0.5, 2).unwrap();
        let g = plane(1.0 / 20.0, 1.6);
        let u = g.from_fn(|p| bump(p, [0.1, 0.0], 1.0));
        let full = seminorm_squared(&u, o).unwrap();
        let mut prev = 0.0;
        for eps in [0.4, 0.2, 0.1, 0.05] {
            let j = regularized_energy(&u, o, eps).unwrap();
            assert!(j > prev && j <= full, "eps={eps}: {j} vs {full}");
            prev = j;
        }
        assert!(prev > 0.7 * full);
        assert!(regularized_energy(&u, o, 0.0).is_err());
    }

    #[test]
    fn pairing_is_positive_and_exactly_symmetric() {
        let o = FracOrder::new(0.6, 2).unwrap();
        let g = plane(0.1, 1.5);
        let u = g.from_fn(|p| bump(p, [0.3, 0.0], 0.9));
        let v = g.from_fn(|p| bump(p, [-0.2, 0.4], 0.7));
        assert!(riesz_pairing(&u, &u, o, 0.1).unwrap() > 0.0);
        assert_eq!(riesz_pairing(&u, &v, o, 0.1).unwrap(), riesz_pairing(&v, &u, o, 0.1).unwrap());
        let other = plane(0.2, 1.5);
        assert!(riesz_pairing(&u, &other, o, 0.1).is_err());
    }

    #[test]
    fn dirichlet_operator_matches_full_grid_operator() {
        let o = FracOrder::new(0.35, 2).unwrap();
        let g = plane(0.1, 1.2);
        let active: Vec<bool> = (0..g.len()).map(|i| { let p = g.node(i); p[0] * p[0] + 2.0 * p[1] * p[1] < 1.0 }).collect();
        let op = DirichletOperator::new(&g, &active, o).unwrap();
        let u = g.from_fn(|p| if p[0] * p[0] + 2.0 * p[1] * p[1] < 1.0 { 1.0 + p[0] * p[1] } else { 0.0 });
        let x = op.restrict(&u);
        let y = op.apply_vec(&x);
        let full = apply_fractional_laplacian(&u, o).unwrap();
        for (k, &i) in op.nodes.iter().enumerate() {
            assert!((y[k] - full.values[i]).abs() < 1e-10 * full.values[i].abs().max(1.0));
        }
    }

    #[test]
    fn fft_apply_matches_direct_sum() {
        for dim in [1, 2] {
            let o = FracOrder::new(0.6, dim).unwrap();
            let g = if dim == 1 { line(1.0 / 40.0, 1.2) } else { plane(0.07, 1.2) };
            let inside = |p: crate::grid::Point| p[0] * p[0] + 1.5 * p[1] * p[1] < 1.0;
            let active: Vec<bool> = (0..g.len()).map(|i| inside(g.node(i))).collect();
            let op = DirichletOperator::new(&g, &active, o).unwrap();
            let x: Vec<f64> = (0..op.len()).map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0).collect();
            let fast = op.apply_vec(&x);
            let mut slow = vec![0.0; x.len()];
            op.apply_direct(&x, &mut slow);
            let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12 * scale, "{dim}D: {a} vs {b}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn operator_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, cx in -0.3f64..0.3, s in 0.1f64..0.9) {
            let o = FracOrder::new(s, 1).unwrap();
            let g = line(1.0 / 32.0, 1.5);
            let u = g.from_fn(|p| bump(p, [cx, 0.0], 0.8));
            let v = g.from_fn(|p| bump(p, [-cx, 0.0], 1.0));
            let mut w = u.clone();
            for (k, x) in w.values.iter_mut().enumerate() { *x = a * u.values[k] + b * v.values[k]; }
            let lu = apply_fractional_laplacian(&u, o).unwrap();
            let lv = apply_fractional_laplacian(&v, o).unwrap();
            let lw = apply_fractional_laplacian(&w, o).unwrap();
            let scale = lu.values.iter().chain(&lv.values).fold(0.0f64, |m, x| m.max(x.abs())) * (a.abs() + b.abs()).max(1.0);
            for k in 0..lw.len() {
                prop_assert!((lw.values[k] - a * lu.values[k] - b * lv.values[k]).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn pairing_symmetry_random(c1 in -0.5f64..0.5, c2 in -0.5f64..0.5, eps in 0.02f64..0.5) {
            let o = FracOrder::new(0.5, 1).unwrap();
            let g = line(1.0 / 32.0, 2.0);
            let u = g.from_fn(|p| bump(p, [c1, 0.0], 0.7));
            let v = g.from_fn(|p| bump(p, [c2, 0.0], 1.1));
            prop_assert_eq!(riesz_pairing(&u, &v, o, eps).unwrap(), riesz_pairing(&v, &u, o, eps).unwrap());
        }
    }
}
