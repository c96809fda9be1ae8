//! Continuous Steiner symmetrization with respect to the hyperplane `{x_N = 0}`.
//!
//! An interval `[a, b]` evolves by `a^t = ½(a−b+e^{−t}(a+b))`, `b^t = ½(b−a+e^{−t}(a+b))`:
//! its midpoint decays exponentially and its width is fixed. Unions evolve interval by
//! interval until two neighbours touch; touching intervals merge and the merged interval
//! continues with the same law.

use crate::error::{Error, Result};
use crate::fracops::{seminorm_squared, FracOrder};
use crate::geometry::ConvexDomain;
use crate::grid::{GridFunction, Point};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Symmetrization time `t ∈ [0, +∞]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SymTime(f64);

impl SymTime {
    pub const ZERO: SymTime = SymTime(0.0);
    pub const INFINITY: SymTime = SymTime(f64::INFINITY);

    pub fn new(t: f64) -> Result<Self> {
        if t >= 0.0 {
            Ok(SymTime(t))
        } else {
            Err(Error::InvalidParameter(format!("symmetrization time {t} must be nonnegative")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// `e^{−t}`, zero at `t = +∞`.
    pub fn decay(self) -> f64 {
        (-self.0).exp()
    }
}

/// Closed-form symmetrization of a single interval.
pub fn symmetrize_interval(a: f64, b: f64, t: SymTime) -> Result<(f64, f64)> {
    if !(a < b) {
        return Err(Error::DegenerateInterval { a, b });
    }
    if t.is_infinite() {
        return Ok((-(b - a) / 2.0, (b - a) / 2.0));
    }
    if t.value() == 0.0 {
        return Ok((a, b));
    }
    let e = t.decay();
    Ok((0.5 * (a - b + e * (a + b)), 0.5 * (b - a + e * (a + b))))
}

/// Finite union of disjoint closed intervals, sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    /// Validated union: `aᵢ < bᵢ < aᵢ₊₁`.
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(a, b)) in intervals.iter().enumerate() {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(Error::DegenerateInterval { a, b });
            }
            if i > 0 && !(intervals[i - 1].1 < a) {
                return Err(Error::InvalidParameter(format!("intervals {} and {i} overlap or touch", i - 1)));
            }
        }
        Ok(IntervalUnion { intervals })
    }

    /// Union of arbitrary intervals; overlapping or touching pieces are merged.
    pub fn from_unsorted(mut v: Vec<(f64, f64)>) -> Result<Self> {
        v.retain(|(a, b)| b > a);
        v.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match out.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        Self::new(out)
    }

    pub fn empty() -> Self {
        IntervalUnion { intervals: Vec::new() }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    /// Whether every interval of `other` lies inside one interval of `self`, with slack `tol`.
    pub fn contains_union(&self, other: &IntervalUnion, tol: f64) -> bool {
        other.intervals.iter().all(|&(a, b)| {
            self.intervals.iter().any(|&(c, d)| c - tol <= a && b <= d + tol)
        })
    }
}

/// Continuous Steiner symmetrization of an interval union.
pub fn symmetrize_interval_union(m: &IntervalUnion, t: SymTime) -> IntervalUnion {
    let ivs = &m.intervals;
    if ivs.is_empty() || t.value() == 0.0 {
        return m.clone();
    }
    if t.is_infinite() {
        let w = m.measure();
        return IntervalUnion { intervals: vec![(-w / 2.0, w / 2.0)] };
    }
    let scale = ivs.iter().fold(0.0f64, |s, &(a, b)| s.max(a.abs()).max(b.abs()));
    let touch = 1e-12 * scale.max(1e-300);
    // (midpoint, width) at the current clock `now`.
    let mut state: Vec<(f64, f64)> = ivs.iter().map(|&(a, b)| (0.5 * (a + b), b - a)).collect();
    let mut now = 0.0;
    loop {
        // Earliest contact between neighbours: e^{−Δ} = (wᵢ+wᵢ₊₁) / (2(mᵢ₊₁−mᵢ)).
        let mut next: Option<(f64, usize)> = None;
        for i in 0..state.len().saturating_sub(1) {
            let ((m0, w0), (m1, w1)) = (state[i], state[i + 1]);
            let ratio = (w0 + w1) / (2.0 * (m1 - m0));
            let dt = if ratio >= 1.0 { 0.0 } else { -ratio.ln() };
            if next.is_none_or(|(best, _)| dt < best) {
                next = Some((dt, i));
            }
        }
        match next {
            Some((dt, _)) if now + dt < t.value() => {
                let e = (-dt).exp();
                for s in state.iter_mut() {
                    s.0 *= e;
                }
                now += dt;
                // Merge every neighbour pair that is now in contact.
                let mut merged: Vec<(f64, f64)> = Vec::with_capacity(state.len());
                for &(m, w) in &state {
                    if let Some(last) = merged.last_mut() {
                        let gap = (m - w / 2.0) - (last.0 + last.1 / 2.0);
                        if gap <= touch {
                            let lo = last.0 - last.1 / 2.0;
                            let width = last.1 + w;
                            *last = (lo + width / 2.0, width);
                            continue;
                        }
                    }
                    merged.push((m, w));
                }
                state = merged;
            }
            _ => {
                let e = (-(t.value() - now)).exp();
                let out: Vec<(f64, f64)> =
                    state.iter().map(|&(m, w)| (m * e - w / 2.0, m * e + w / 2.0)).collect();
                return IntervalUnion::from_unsorted(out).expect("symmetrized intervals are valid");
            }
        }
    }
}

/// Symmetrization of a convex domain about `{x_N = 0}`.
pub fn symmetrize_set(dom: &ConvexDomain, t: SymTime) -> Result<ConvexDomain> {
    dom.require_convex()?;
    if let Some((lo, hi)) = dom.interval_bounds() {
        let (a, b) = symmetrize_interval(lo, hi, t)?;
        return ConvexDomain::interval(a, b);
    }
    if t.value() == 0.0 {
        return Ok(dom.clone());
    }
    let e = t.decay();
    if let Some((c, q)) = dom.ellipse_data() {
        // Section midpoints c_y − (Q₁₂/Q₂₂)(x'−c_x) decay by e^{−t}; half-widths are fixed.
        let center = [c[0], c[1] * e];
        if q[0][1] == 0.0 {
            if let Some(DomainSpecBall { radius }) = ball_radius(dom) {
                return ConvexDomain::ball(center, radius);
            }
        }
        let k = q[0][1] / q[1][1];
        let q12 = e * q[0][1];
        let q11 = q[0][0] - k * q[0][1] + e * e * k * q[0][1];
        return ConvexDomain::ellipse_from_matrix(center, [[q11, q12], [q12, q[1][1]]]);
    }
    if let Some(vertices) = dom.vertices() {
        let mut xs: Vec<f64> = vertices.iter().map(|v| v[0]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut lower = Vec::with_capacity(xs.len());
        let mut upper = Vec::with_capacity(xs.len());
        for &x in &xs {
            let (y1, y2) = dom.vertical_section(x)?;
            let (m, w) = (0.5 * (y1 + y2) * e, y2 - y1);
            lower.push([x, m - w / 2.0]);
            upper.push([x, m + w / 2.0]);
        }
        let mut ring: Vec<Point> = lower;
        for (i, p) in upper.into_iter().enumerate().rev() {
            let last = i + 1 == xs.len();
            let first = i == 0;
            let dup = (last && ring[ring.len() - 1] == p) || (first && ring[0] == p);
            if !dup {
                ring.push(p);
            }
        }
        return ConvexDomain::polygon(drop_collinear(ring));
    }
    Err(Error::Unsupported("symmetrization of this domain kind".into()))
}

struct DomainSpecBall {
    radius: f64,
}

fn ball_radius(dom: &ConvexDomain) -> Option<DomainSpecBall> {
    match dom.to_spec() {
        Ok(crate::geometry::DomainSpec::Ball { radius, .. }) => Some(DomainSpecBall { radius }),
        _ => None,
    }
}

/// Remove repeated and collinear vertices of a closed polyline.
pub(crate) fn drop_collinear(v: Vec<Point>) -> Vec<Point> {
    let mut out = v;
    loop {
        let n = out.len();
        if n < 4 {
            return out;
        }
        let scale = out.iter().fold(0.0f64, |s, p| s.max(p[0].abs()).max(p[1].abs())).max(1.0);
        let bad = (0..n).find(|&i| {
            let (a, b, c) = (out[(i + n - 1) % n], out[i], out[(i + 1) % n]);
            let cr = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            cr.abs() <= 1e-13 * scale * scale
        });
        match bad {
            Some(i) => {
                out.remove(i);
            }
            None => return out,
        }
    }
}

/// Symmetrization about the line through the origin perpendicular to the direction
/// `(−sin φ, cos φ)`.
pub fn symmetrize_set_in_frame(dom: &ConvexDomain, t: SymTime, phi: f64) -> Result<ConvexDomain> {
    symmetrize_set(&dom.in_frame(phi)?, t)?.from_frame(phi)
}

/// How superlevel thresholds are chosen for function symmetrization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "levels")]
pub enum Layering {
    /// Every distinct value of a column is a threshold: the layer cake is exact for the
    /// piecewise-constant representative.
    Exact,
    /// `levels` equispaced thresholds in `(0, max u]`.
    Uniform(usize),
}

impl Default for Layering {
    fn default() -> Self {
        Layering::Exact
    }
}

/// Column layout of a grid: column starts, length, and the coordinate of node 0 along
/// the symmetrization axis.
fn columns(u: &GridFunction) -> (usize, usize, f64) {
    let len = u.column_len();
    (u.len() / len, len, *u.origin.last().unwrap())
}

/// Superlevel union `{v ≥ c}` of a piecewise-constant column.
fn superlevel(col: &[f64], c: f64, y0: f64, h: f64) -> IntervalUnion {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (k, &v) in col.iter().chain(std::iter::once(&f64::NEG_INFINITY)).enumerate() {
        match (v >= c, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push((y0 + (s as f64 - 0.5) * h, y0 + (k as f64 - 0.5) * h));
                start = None;
            }
            _ => {}
        }
    }
    IntervalUnion { intervals: out }
}

/// Add `weight × |E ∩ cell_k| / h` to each cell via a difference array.
fn deposit(acc: &mut [f64], diff: &mut [f64], set: &IntervalUnion, weight: f64, y0: f64, h: f64) -> Result<()> {
    let n = acc.len();
    let lo_edge = y0 - 0.5 * h;
    for &(a, b) in set.intervals() {
        let (fa, fb) = ((a - lo_edge) / h, (b - lo_edge) / h);
        if fa < -1e-9 || fb > n as f64 + 1e-9 {
            return Err(Error::SupportAtBoundary);
        }
        let (fa, fb) = (fa.max(0.0), fb.min(n as f64));
        let (ka, kb) = ((fa.floor() as usize).min(n - 1), (fb.floor() as usize).min(n - 1));
        if ka == kb {
            acc[ka] += weight * (fb - fa);
            continue;
        }
        acc[ka] += weight * (ka as f64 + 1.0 - fa);
        acc[kb] += weight * (fb - kb as f64);
        if ka + 1 < kb {
            diff[ka + 1] += weight;
            diff[kb] -= weight;
        }
    }
    Ok(())
}

/// Layer-cake representation of one column: `(weight, E_t({v ≥ c}))` per threshold.
fn column_layers(col: &[f64], t: SymTime, layering: Layering, vmax: f64, y0: f64, h: f64) -> Vec<(f64, IntervalUnion)> {
    let thresholds: Vec<f64> = match layering {
        Layering::Exact => {
            let mut v: Vec<f64> = col.iter().cloned().filter(|&x| x > 0.0).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        }
        Layering::Uniform(levels) => {
            let step = vmax / levels as f64;
            (1..=levels).map(|l| l as f64 * step).collect()
        }
    };
    let mut out = Vec::with_capacity(thresholds.len());
    let mut prev = 0.0;
    for &c in &thresholds {
        let set = superlevel(col, c, y0, h);
        if !set.intervals().is_empty() {
            out.push((c - prev, symmetrize_interval_union(&set, t)));
        }
        prev = c;
    }
    out
}

fn symmetrize_column(col: &[f64], t: SymTime, layering: Layering, vmax: f64, y0: f64, h: f64) -> Result<Vec<f64>> {
    let n = col.len();
    let mut acc = vec![0.0; n];
    let mut diff = vec![0.0; n + 1];
    for (w, set) in column_layers(col, t, layering, vmax, y0, h) {
        deposit(&mut acc, &mut diff, &set, w, y0, h)?;
    }
    let mut run = 0.0;
    for k in 0..n {
        run += diff[k];
        acc[k] += run;
    }
    Ok(acc)
}

fn check_layering(layering: Layering) -> Result<()> {
    if let Layering::Uniform(levels) = layering {
        if levels < 16 {
            return Err(Error::InvalidParameter(format!("levels = {levels} must be at least 16")));
        }
    }
    Ok(())
}

/// Layer-cake representation of `u^t` before resampling onto cells: for each column (in
/// grid order), the weighted symmetrized superlevel unions of its piecewise-constant
/// representative. `Σ w·χ_E` over a column's layers is the exact symmetrized profile.
pub fn symmetrized_layers(u: &GridFunction, t: SymTime, layering: Layering) -> Result<Vec<Vec<(f64, IntervalUnion)>>> {
    u.check_nonnegative()?;
    check_layering(layering)?;
    let vmax = u.max();
    let (_, len, y0) = columns(u);
    let h = u.spacing;
    Ok(u.values.par_chunks(len).map(|col| column_layers(col, t, layering, vmax, y0, h)).collect())
}

/// Symmetrization `u^t` of a nonnegative grid function along its last axis, by layer
/// cake over superlevel sets of the piecewise-constant representative and exact
/// resampling onto the cells.
pub fn symmetrize_function(u: &GridFunction, t: SymTime, layering: Layering) -> Result<GridFunction> {
    u.check_nonnegative()?;
    check_layering(layering)?;
    let vmax = u.max();
    if t.value() == 0.0 || vmax == 0.0 {
        return Ok(u.clone());
    }
    let (_, len, y0) = columns(u);
    let h = u.spacing;
    let cols: Vec<Vec<f64>> = u
        .values
        .par_chunks(len)
        .map(|col| symmetrize_column(col, t, layering, vmax, y0, h))
        .collect::<Result<_>>()?;
    let mut out = u.clone();
    for (dst, src) in out.values.chunks_mut(len).zip(cols) {
        dst.copy_from_slice(&src);
    }
    Ok(out)
}

/// Largest first difference across neighbouring cells, divided by the spacing.
pub fn discrete_lipschitz(u: &GridFunction) -> f64 {
    let mut best = 0.0f64;
    for i in 0..u.len() {
        let [a, b] = u.multi_index(i);
        if u.ndim() == 1 {
            if a + 1 < u.dims[0] {
                best = best.max((u.values[i + 1] - u.values[i]).abs());
            }
        } else {
            if b + 1 < u.dims[1] {
                best = best.max((u.values[i + 1] - u.values[i]).abs());
            }
            if a + 1 < u.dims[0] {
                best = best.max((u.values[i + u.dims[1]] - u.values[i]).abs());
            }
        }
    }
    best / u.spacing
}

/// `∫_{p}^{q}`-type antiderivatives of `k(z) = (c² + z²)^{-β}` along a column.
#[derive(Clone, Copy, Debug)]
struct ColumnKernel {
    c: f64,
    beta: f64,
    /// `½B(a, ½)` with `a = β − ½`.
    half_beta: f64,
}

impl ColumnKernel {
    fn new(c: f64, beta: f64) -> Self {
        let a = beta - 0.5;
        ColumnKernel { c, beta, half_beta: 0.5 * statrs::function::beta::beta(a, 0.5) }
    }

    /// `F(z) = ∫_0^z k` for `z ≥ 0`, via `z = c·tan θ`.
    fn first(&self, z: f64) -> f64 {
        let (c, b) = (self.c, self.beta);
        let r = (c * c + z * z).sqrt();
        let sin = z / r;
        let angular = if b == 1.5 {
            sin
        } else if b == 1.0 {
            sin.atan2(c / r)
        } else {
            // ∫_0^φ cos^{2β−2} = ½B(β−½, ½)·I_{sin²φ}(½, β−½).
            self.half_beta * statrs::function::beta::beta_reg(0.5, b - 0.5, sin * sin)
        };
        c.powf(1.0 - 2.0 * b) * angular
    }

    /// Even second antiderivative `G` with `G(0) = 0` and `G'' = k`.
    fn second(&self, z: f64) -> f64 {
        let z = z.abs();
        let (c, b) = (self.c, self.beta);
        let h = if b == 1.0 {
            0.5 * (1.0 + (z / c).powi(2)).ln()
        } else {
            ((c * c + z * z).powf(1.0 - b) - c.powf(2.0 - 2.0 * b)) / (2.0 * (1.0 - b))
        };
        z * self.first(z) - h
    }
}

/// Signed jumps of `Σ w·χ_E` over a column's layers, merged at equal positions.
fn column_steps(layers: &[(f64, IntervalUnion)]) -> Vec<(f64, f64)> {
    let mut steps: Vec<(f64, f64)> = layers
        .iter()
        .flat_map(|(w, e)| e.intervals().iter().flat_map(move |&(a, b)| [(a, *w), (b, -*w)]))
        .collect();
    steps.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(steps.len());
    for (p, w) in steps {
        match out.last_mut() {
            Some(last) if last.0 == p => last.1 += w,
            _ => out.push((p, w)),
        }
    }
    out.retain(|s| s.1 != 0.0);
    out
}

/// Riesz pairing `∬ f(x) f(y) κ_ε(x − y)` of a layer-cake profile, integrated exactly
/// along columns and by the midpoint rule across columns of spacing `h`.
///
/// Continuous symmetrization acts column by column and the column kernels
/// `z ↦ κ_ε(d, z)` are symmetric decreasing, so this functional cannot decrease under
/// [`symmetrized_layers`] at any `t`: no resampling error enters the comparison.
pub fn layered_riesz_pairing(layers: &[Vec<(f64, IntervalUnion)>], h: f64, o: FracOrder, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {eps} must be positive")));
    }
    if o.dim == 1 && layers.len() != 1 {
        return Err(Error::InvalidParameter("a 1D profile has exactly one column".into()));
    }
    let beta = (o.dim as f64 + 2.0 * o.s) / 2.0;
    let steps: Vec<(usize, Vec<(f64, f64)>)> =
        layers.iter().map(|l| column_steps(l)).enumerate().filter(|(_, s)| !s.is_empty()).collect();
    let rows: Vec<f64> = steps
        .par_iter()
        .map(|(i, si)| {
            let mut acc = 0.0;
            for (j, sj) in &steps {
                if j < i {
                    continue;
                }
                let d = (j - i) as f64 * h;
                let k = ColumnKernel::new((d * d + eps * eps).sqrt(), beta);
                let mut pair = 0.0;
                for &(p, wp) in si {
                    for &(q, wq) in sj {
                        pair -= wp * wq * k.second(p - q);
                    }
                }
                acc += if j == i { pair } else { 2.0 * pair };
            }
            acc
        })
        .collect();
    Ok(crate::quad::pairwise_sum(&rows) * h.powi(2 * (o.dim as i32 - 1)))
}

/// Energies `[u^t]²` along a sequence of symmetrization times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// Least-squares slope of energy against time over the first quartile of times.
    pub rate: f64,
    /// Every step decreases by more than `1e-6` relative.
    pub strictly_decreasing: bool,
    /// No step increases by more than `1e-9` relative.
    pub weakly_decreasing: bool,
    /// `rate < −1e-6·energies[0]`.
    pub strict_decrease_verdict: bool,
}

impl FlowReport {
    pub fn from_samples(times: Vec<f64>, energies: Vec<f64>) -> Self {
        let n = times.len();
        let q = ((n as f64 / 4.0).ceil() as usize).max(2).min(n);
        let (tx, ey) = (&times[..q], &energies[..q]);
        let rate = if q >= 2 {
            let mt = tx.iter().sum::<f64>() / q as f64;
            let me = ey.iter().sum::<f64>() / q as f64;
            let num: f64 = tx.iter().zip(ey).map(|(t, e)| (t - mt) * (e - me)).sum();
            let den: f64 = tx.iter().map(|t| (t - mt) * (t - mt)).sum();
            if den > 0.0 { num / den } else { 0.0 }
        } else {
            0.0
        };
        let e0 = energies.first().copied().unwrap_or(0.0).abs();
        let strictly = energies.windows(2).all(|w| w[1] < w[0] * (1.0 - 1e-6));
        let weakly = energies.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
        FlowReport {
            times,
            energies,
            rate,
            strictly_decreasing: n >= 2 && strictly,
            weakly_decreasing: weakly,
            strict_decrease_verdict: rate < -1e-6 * e0,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,energy")?;
        for (t, e) in self.times.iter().zip(&self.energies) {
            writeln!(w, "{t},{e}")?;
        }
        Ok(())
    }
}

/// Seminorm energies of `u^t` over increasing times starting at 0.
pub fn steiner_flow_report(u: &GridFunction, o: FracOrder, times: &[f64], layering: Layering) -> Result<FlowReport> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("empty time list".into()));
    }
    if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("times must increase from 0".into()));
    }
    let energies = times
        .iter()
        .map(|&t| {
            let ut = symmetrize_function(u, SymTime::new(t)?, layering)?;
            seminorm_squared(&ut, o)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(FlowReport::from_samples(times.to_vec(), energies))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::hausdorff_on_samples;
    use proptest::prelude::*;

    fn st(t: f64) -> SymTime {
        SymTime::new(t).unwrap()
    }

    #[test]
    fn single_interval_closed_form() {
        assert_eq!(symmetrize_interval(0.0, 2.0, SymTime::INFINITY).unwrap(), (-1.0, 1.0));
        assert_eq!(symmetrize_interval(-0.3, 0.7, SymTime::ZERO).unwrap(), (-0.3, 0.7));
        // (a+b)e^{−t} = 4·½ = 2, so a^t = ½(−2+2) = 0 and b^t = ½(2+2) = 2.
        let (a, b) = symmetrize_interval(1.0, 3.0, st(2f64.ln())).unwrap();
        assert!(a.abs() < 1e-15 && (b - 2.0).abs() < 1e-15);
        assert!(symmetrize_interval(1.0, 1.0, st(1.0)).is_err());
        assert!(SymTime::new(-1.0).is_err());
    }

    #[test]
    fn union_merges_on_contact() {
        let m = IntervalUnion::new(vec![(-3.0, -1.0), (1.0, 3.0)]).unwrap();
        let at = symmetrize_interval_union(&m, st(2f64.ln()));
        assert_eq!(at.intervals().len(), 1);
        assert!((at.intervals()[0].0 + 2.0).abs() < 1e-12 && (at.intervals()[0].1 - 2.0).abs() < 1e-12);
        let later = symmetrize_interval_union(&m, st(3.0));
        assert!((later.intervals()[0].0 + 2.0).abs() < 1e-12);
        assert_eq!(symmetrize_interval_union(&m, SymTime::INFINITY).intervals(), &[(-2.0, 2.0)]);
        let before = symmetrize_interval_union(&m, st(0.5));
        assert_eq!(before.intervals().len(), 2);
    }

    #[test]
    fn union_reduces_to_single_interval_formula() {
        let m = IntervalUnion::new(vec![(0.4, 1.7)]).unwrap();
        for t in [0.1, 1.0, 5.0] {
            let (a, b) = symmetrize_interval(0.4, 1.7, st(t)).unwrap();
            let (c, d) = symmetrize_interval_union(&m, st(t)).intervals()[0];
            assert!((a - c).abs() < 1e-15 && (b - d).abs() < 1e-15);
        }
    }

    #[test]
    fn disk_off_axis_moves_towards_axis() {
        let d = ConvexDomain::ball([0.0, 0.8], 0.5).unwrap();
        let t = 0.7;
        let s = symmetrize_set(&d, st(t)).unwrap();
        let expect = ConvexDomain::ball([0.0, 0.8 * (-t as f64).exp()], 0.5).unwrap();
        assert!(hausdorff_on_samples(&s, &expect, 256) < 1e-12);
        let unit = ConvexDomain::ball([0.0, 0.0], 1.0).unwrap();
        assert!(hausdorff_on_samples(&symmetrize_set(&unit, st(2.0)).unwrap(), &unit, 256) < 1e-15);
    }

    #[test]
    fn triangle_at_infinity() {
        let tri = ConvexDomain::polygon(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let s = symmetrize_set(&tri, SymTime::INFINITY).unwrap();
        // Oracle: {0 < x < 1, |y| < (1−x)/2} is the triangle (0,−½), (1,0), (0,½).
        let expect = ConvexDomain::polygon(vec![[0.0, -0.5], [1.0, 0.0], [0.0, 0.5]]).unwrap();
        assert!((s.volume() - 0.5).abs() < 1e-15);
        assert!(hausdorff_on_samples(&s, &expect, 128) < 1e-14);
    }

    #[test]
    fn ellipse_volume_is_preserved_in_every_frame() {
        let e = ConvexDomain::ellipse([0.2, 0.3], [1.3, 0.8], 0.6).unwrap();
        for phi in [0.0, 0.7, 2.0] {
            for t in [0.1, 1.0, f64::INFINITY] {
                let s = symmetrize_set_in_frame(&e, st(t), phi).unwrap();
                assert!((s.volume() / e.volume() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nonconvex_sets_are_refused() {
        let p = ConvexDomain::polygon_unchecked(vec![[0.0, 0.0], [2.0, 0.0], [1.0, 0.1], [0.0, 2.0]]);
        assert!(symmetrize_set(&p, st(1.0)).is_err());
    }

    fn grid2d() -> GridFunction {
        GridFunction::covering(&[-1.5, -1.5], &[1.5, 1.5], 48, 2).unwrap()
    }

    fn cone(p: Point, c: Point) -> f64 {
        (1.0 - ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()).max(0.0)
    }

    #[test]
    fn symmetric_decreasing_function_is_fixed() {
        let u = grid2d().from_fn(|p| cone(p, [0.0, 0.0]));
        for t in [0.3, 2.0, f64::INFINITY] {
            let ut = symmetrize_function(&u, st(t), Layering::Exact).unwrap();
            let err = ut.sub(&u).unwrap().lp_norm(f64::INFINITY);
            assert!(err < 1e-12, "t={t}: {err}");
        }
    }

    #[test]
    fn shifted_cone_follows_its_centre() {
        let c = 0.3;
        let t = 0.8;
        let g = GridFunction::covering(&[-1.6, -1.6], &[1.6, 1.6], 160, 2).unwrap();
        let u = g.from_fn(|p| cone(p, [0.0, c]));
        let ut = symmetrize_function(&u, st(t), Layering::Uniform(256)).unwrap();
        let expect = g.from_fn(|p| cone(p, [0.0, c * (-t as f64).exp()]));
        // Cell averaging of the symmetrized profile spreads the cone by O(h).
        let err = ut.sub(&expect).unwrap().lp_norm(1.0) / expect.lp_norm(1.0);
        assert!(err < 0.02, "{err}");
    }

    #[test]
    fn mass_is_preserved() {
        let u = grid2d().from_fn(|p| cone(p, [0.2, 0.4]) + 0.5 * cone([p[0] * 2.0, p[1] * 2.0], [0.0, -1.0]));
        for layering in [Layering::Exact, Layering::Uniform(64)] {
            let ut = symmetrize_function(&u, st(0.4), layering).unwrap();
            let m0 = u.lp_norm(1.0);
            let tol = match layering {
                Layering::Exact => 1e-12,
                Layering::Uniform(l) => u.max() * 9.0 / l as f64 / m0,
            };
            assert!((ut.lp_norm(1.0) / m0 - 1.0).abs() < tol.max(1e-12));
        }
    }

    #[test]
    fn function_symmetrization_validates_input() {
        let mut u = grid2d();
        assert_eq!(symmetrize_function(&u, st(1.0), Layering::Exact).unwrap(), u);
        u.values[100] = -1.0;
        assert!(symmetrize_function(&u, st(1.0), Layering::Exact).is_err());
        u.values[100] = 1.0;
        assert!(symmetrize_function(&u, st(1.0), Layering::Uniform(8)).is_err());
    }

    #[test]
    fn support_leaving_grid_is_an_error() {
        let g = GridFunction::covering(&[1.0], &[3.0], 40, 1).unwrap();
        let u = g.from_fn(|p| (0.5 - (p[0] - 2.0).abs()).max(0.0));
        assert!(matches!(symmetrize_function(&u, st(2.0), Layering::Exact), Err(Error::SupportAtBoundary)));
    }

    #[test]
    fn flow_report_of_fixed_point_is_flat() {
        let o = FracOrder::new(0.5, 2).unwrap();
        let u = grid2d().from_fn(|p| cone(p, [0.0, 0.0]));
        let r = steiner_flow_report(&u, o, &[0.0, 0.1, 0.2, 0.4], Layering::Exact).unwrap();
        assert_eq!(r.energies[0], seminorm_squared(&u, o).unwrap());
        assert!(r.energies.iter().all(|e| (e / r.energies[0] - 1.0).abs() < 1e-6));
        assert!(!r.strict_decrease_verdict);
        assert!(steiner_flow_report(&u, o, &[], Layering::Exact).is_err());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,energy\n0,"));
    }

    #[test]
    fn column_kernel_antiderivatives_match_quadrature() {
        use crate::quad::integrate_adaptive;
        for (c, beta) in [(0.07, 1.5), (0.3, 1.3), (0.05, 1.0), (0.2, 0.8)] {
            let k = ColumnKernel::new(c, beta);
            let kern = |z: f64| (c * c + z * z).powf(-beta);
            for z in [0.01, 0.2, 1.7] {
                let f = integrate_adaptive(&kern, 0.0, z, 1e-13);
                assert!((k.first(z) / f - 1.0).abs() < 1e-10, "F c={c} β={beta} z={z}");
                let first = |w: f64| k.first(w);
                let g = integrate_adaptive(&first, 0.0, z, 1e-13);
                assert!((k.second(z) / g - 1.0).abs() < 1e-9, "G c={c} β={beta} z={z}");
            }
        }
    }

    #[test]
    fn layered_pairing_agrees_with_lattice_pairing() {
        let o = FracOrder::new(0.5, 2).unwrap();
        let g = GridFunction::covering(&[-1.5, -1.5], &[1.5, 1.5], 96, 2).unwrap();
        let u = g.from_fn(|p| (1.0 - 2.0 * (p[0] * p[0] + (p[1] - 0.2 - 0.5 * p[0]).powi(2))).max(0.0).powi(3));
        let layers = symmetrized_layers(&u, SymTime::ZERO, Layering::Exact).unwrap();
        for eps in [0.1, 0.3] {
            let a = layered_riesz_pairing(&layers, u.spacing, o, eps).unwrap();
            let b = crate::fracops::riesz_pairing(&u, &u, o, eps).unwrap();
            assert!((a / b - 1.0).abs() < 1e-2, "eps={eps}: {a} vs {b}");
        }
        let o1 = FracOrder::new(0.3, 1).unwrap();
        let l = GridFunction::covering(&[-2.0], &[2.0], 400, 2).unwrap();
        let w = l.from_fn(|p| (1.0 - p[0] * p[0]).max(0.0).powi(2));
        let lw = symmetrized_layers(&w, SymTime::ZERO, Layering::Exact).unwrap();
        let (a, b) = (layered_riesz_pairing(&lw, w.spacing, o1, 0.2).unwrap(), crate::fracops::riesz_pairing(&w, &w, o1, 0.2).unwrap());
        assert!((a / b - 1.0).abs() < 1e-3, "{a} vs {b}");
        assert!(layered_riesz_pairing(&lw, w.spacing, o1, 0.0).is_err());
    }

    #[test]
    fn layered_pairing_of_two_indicators_is_exact() {
        // Two unit-weight intervals in one column: ∫∫ (c² + (a−b)²)^{-1} over [0,1]×[2,3]
        // with c = ε, for N = 1 and s = ½.
        let o = FracOrder::new(0.5, 1).unwrap();
        let eps: f64 = 0.4;
        let m = IntervalUnion::new(vec![(0.0, 1.0), (2.0, 3.0)]).unwrap();
        let got = layered_riesz_pairing(&[vec![(1.0, m)]], 1.0, o, eps).unwrap();
        let g = |z: f64| z * (z / eps).atan() / eps - 0.5 * (1.0 + (z / eps).powi(2)).ln();
        let cross = g(3.0) - 2.0 * g(2.0) + g(1.0);
        let own = 2.0 * (g(1.0) - g(0.0));
        assert!((got - (2.0 * own + 2.0 * cross)).abs() < 1e-13, "{got}");
    }

    #[test]
    fn layered_pairing_grows_for_a_sheared_bump() {
        let o = FracOrder::new(0.5, 2).unwrap();
        let u = grid2d().from_fn(|p| (1.0 - 2.0 * (p[0] * p[0] + (p[1] - 0.3 - 0.6 * p[0]).powi(2))).max(0.0).powi(3));
        let base = symmetrized_layers(&u, SymTime::ZERO, Layering::Exact).unwrap();
        let mut prev = layered_riesz_pairing(&base, u.spacing, o, 0.1).unwrap();
        for t in [0.1, 0.4, f64::INFINITY] {
            let l = symmetrized_layers(&u, st(t), Layering::Exact).unwrap();
            let cur = layered_riesz_pairing(&l, u.spacing, o, 0.1).unwrap();
            assert!(cur > prev * (1.0 + 1e-4), "t={t}: {cur} vs {prev}");
            prev = cur;
        }
        // The layers carry all of the mass of u^t.
        let l = symmetrized_layers(&u, st(0.4), Layering::Exact).unwrap();
        let mass: f64 = l.iter().flatten().map(|(w, e)| w * e.measure()).sum::<f64>() * u.spacing;
        assert!((mass / (u.lp_norm(1.0)) - 1.0).abs() < 1e-12);
    }

    fn arb_union() -> impl Strategy<Value = IntervalUnion> {
        prop::collection::vec((-5.0f64..5.0, 0.01f64..1.5), 1..6).prop_map(|v| {
            IntervalUnion::from_unsorted(v.into_iter().map(|(a, w)| (a, a + w)).collect()).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn width_is_invariant(a in -10.0f64..10.0, w in 1e-3f64..10.0, t in 0.0f64..20.0) {
            let (p, q) = symmetrize_interval(a, a + w, st(t)).unwrap();
            prop_assert!(((q - p) - w).abs() <= 1e-12 * w.max(a.abs()));
        }

        #[test]
        fn union_axioms(m in arb_union(), t in 0.0f64..4.0, s in 0.0f64..4.0) {
            let et = symmetrize_interval_union(&m, st(t));
            prop_assert!((et.measure() - m.measure()).abs() <= 1e-12 * m.measure());
            let two = symmetrize_interval_union(&symmetrize_interval_union(&m, st(s)), st(t));
            let one = symmetrize_interval_union(&m, st(s + t));
            prop_assert_eq!(two.intervals().len(), one.intervals().len());
            for (x, y) in two.intervals().iter().zip(one.intervals()) {
                prop_assert!((x.0 - y.0).abs() < 1e-12 * 10.0 && (x.1 - y.1).abs() < 1e-12 * 10.0);
            }
        }

        #[test]
        fn union_monotonicity(m in arb_union(), extra in arb_union(), t in 0.0f64..4.0) {
            let mut all: Vec<(f64, f64)> = m.intervals().to_vec();
            all.extend_from_slice(extra.intervals());
            let big = IntervalUnion::from_unsorted(all).unwrap();
            let (a, b) = (symmetrize_interval_union(&m, st(t)), symmetrize_interval_union(&big, st(t)));
            prop_assert!(b.contains_union(&a, 1e-12 * 10.0));
        }
    }
}
