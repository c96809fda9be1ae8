//! Seeded randomized property suites for the symmetrization and kernel layers.
//!
//! Every suite draws its cases from a ChaCha stream derived from the run seed and the
//! suite name, so a given seed reproduces the same cases and the same report.

use crate::fracops::{regularized_energy, seminorm_squared};
use crate::grid::{GridFunction, Point};
use crate::shape::{deform, steiner_vector_field_in_frame, volume_derivative};
use crate::steiner::{
    discrete_lipschitz, layered_riesz_pairing, symmetrize_function, symmetrize_interval, symmetrize_interval_union,
    symmetrize_set_in_frame, symmetrized_layers, IntervalUnion, Layering, SymTime,
};
use crate::{ConvexDomain, FracOrder, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Case counts for each suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteSizes {
    pub intervals: usize,
    pub unions: usize,
    pub function_pairs: usize,
    pub seminorm_functions: usize,
    pub pairing_functions: usize,
    pub domains: usize,
    /// Cells across the 2D test box.
    pub grid: usize,
}

impl SuiteSizes {
    /// The full sizes used for acceptance runs.
    pub fn full() -> Self {
        SuiteSizes { intervals: 1000, unions: 500, function_pairs: 100, seminorm_functions: 40, pairing_functions: 50, domains: 40, grid: 48 }
    }

    /// A reduced run for quick checks.
    pub fn quick() -> Self {
        SuiteSizes { intervals: 200, unions: 100, function_pairs: 10, seminorm_functions: 6, pairing_functions: 6, domains: 8, grid: 48 }
    }
}

/// Outcome of one suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// All suites of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestReport {
    pub version: String,
    pub seed: u64,
    pub sizes: SuiteSizes,
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

/// Names of the available suites, in run order.
pub const SUITES: [&str; 6] =
    ["interval-formulas", "union-axioms", "non-expansive", "seminorm-decrease", "riesz-pairing", "steiner-consistency"];

fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a over the suite name keeps suites independent of run order.
    let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x1000_0000_01b3));
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Runs the named suite.
pub fn run_suite(name: &str, seed: u64, sizes: &SuiteSizes) -> Result<SuiteResult> {
    let mut rng = rng_for(seed, name);
    let (cases, failures) = match name {
        "interval-formulas" => interval_formulas(&mut rng, sizes.intervals),
        "union-axioms" => union_axioms(&mut rng, sizes.unions),
        "non-expansive" => non_expansive(&mut rng, sizes.function_pairs)?,
        "seminorm-decrease" => seminorm_decrease(&mut rng, sizes.seminorm_functions, sizes.grid)?,
        "riesz-pairing" => pairing_increase(&mut rng, sizes.pairing_functions, sizes.grid)?,
        "steiner-consistency" => steiner_consistency(&mut rng, sizes.domains)?,
        other => return Err(crate::Error::InvalidParameter(format!("unknown suite '{other}'"))),
    };
    Ok(SuiteResult { name: name.to_string(), cases, failures })
}

/// Runs every suite in [`SUITES`].
pub fn run_all(seed: u64, sizes: &SuiteSizes) -> Result<SelftestReport> {
    let suites = SUITES.iter().map(|n| run_suite(n, seed, sizes)).collect::<Result<_>>()?;
    Ok(SelftestReport { version: crate::VERSION.to_string(), seed, sizes: sizes.clone(), suites })
}

fn st(t: f64) -> SymTime {
    SymTime::new(t).expect("nonnegative time")
}

type Outcome = (usize, Vec<String>);

fn interval_formulas(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut fails = Vec::new();
    match symmetrize_interval(1.0, 3.0, st(2f64.ln())) {
        Ok((a, b)) if a.abs() <= 1e-15 && (b - 2.0).abs() <= 1e-15 => {}
        r => fails.push(format!("(1,3) at t=ln2 gave {r:?}")),
    }
    for _ in 0..n {
        let a = rng.gen_range(-10.0..10.0);
        let w = rng.gen_range(1e-3..10.0);
        let t = rng.gen_range(0.0..20.0);
        let b = a + w;
        if symmetrize_interval(a, b, SymTime::ZERO).ok() != Some((a, b)) {
            fails.push(format!("t=0 not the identity on ({a},{b})"));
        }
        let (p, q) = symmetrize_interval(a, b, st(t)).expect("valid interval");
        // Width is b − a as stored, so compare against that difference.
        if ((q - p) - (b - a)).abs() > 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
            fails.push(format!("width drift on ({a},{b}) at t={t}: {}", (q - p) - (b - a)));
        }
    }
    (n + 1, fails)
}

fn random_union(rng: &mut ChaCha8Rng, k: usize) -> IntervalUnion {
    let v = (0..k)
        .map(|_| {
            let a = rng.gen_range(-5.0..5.0);
            (a, a + rng.gen_range(0.01..1.5))
        })
        .collect();
    IntervalUnion::from_unsorted(v).expect("positive widths")
}

fn close_unions(x: &IntervalUnion, y: &IntervalUnion, tol: f64) -> bool {
    x.intervals().len() == y.intervals().len()
        && x.intervals().iter().zip(y.intervals()).all(|(p, q)| (p.0 - q.0).abs() <= tol && (p.1 - q.1).abs() <= tol)
}

fn union_axioms(rng: &mut ChaCha8Rng, n: usize) -> Outcome {
    let mut fails = Vec::new();
    let mut merges = 0;
    for case in 0..n {
        let k = rng.gen_range(1..6);
        let m = random_union(rng, k);
        let t = rng.gen_range(0.0..4.0);
        let s = rng.gen_range(0.0..4.0);
        let et = symmetrize_interval_union(&m, st(t));
        if (et.measure() - m.measure()).abs() > 1e-12 * m.measure() {
            fails.push(format!("case {case}: measure {} → {}", m.measure(), et.measure()));
        }
        let one = symmetrize_interval_union(&m, st(s + t));
        let two = symmetrize_interval_union(&symmetrize_interval_union(&m, st(s)), st(t));
        if one.intervals().len() < m.intervals().len() {
            merges += 1;
        }
        if !close_unions(&one, &two, 1e-12) {
            fails.push(format!("case {case}: semigroup broken for s={s}, t={t}"));
        }
        let k = rng.gen_range(1..4);
        let extra = random_union(rng, k);
        let mut all = m.intervals().to_vec();
        all.extend_from_slice(extra.intervals());
        let big = IntervalUnion::from_unsorted(all).expect("positive widths");
        if !symmetrize_interval_union(&big, st(t)).contains_union(&et, 1e-12) {
            fails.push(format!("case {case}: monotonicity broken at t={t}"));
        }
    }
    if n >= 50 && merges == 0 {
        fails.push("no merge events were exercised".into());
    }
    (n, fails)
}

/// Sum of a few random tents; support stays inside `[−2.5, 2.5]`.
fn random_profile_1d(rng: &mut ChaCha8Rng, g: &GridFunction) -> GridFunction {
    let k = rng.gen_range(1..5);
    let tents: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| (rng.gen_range(-1.5..1.5), rng.gen_range(0.1..1.0), rng.gen_range(0.2..1.0)))
        .collect();
    g.from_fn(|p| tents.iter().map(|&(c, r, a)| a * (1.0 - (p[0] - c).abs() / r).max(0.0)).sum())
}

/// A few random sheared and stretched smooth bumps `(1 − |q|²)³₊` inside the unit disk.
#[derive(Clone, Debug)]
pub struct RandomBumps(Vec<(Point, [f64; 4], f64)>);

impl RandomBumps {
    pub fn draw(rng: &mut ChaCha8Rng) -> Self {
        let k = rng.gen_range(1..4);
        RandomBumps(
            (0..k)
                .map(|_| {
                    let c = [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)];
                    let (sx, sy, sh) = (rng.gen_range(1.5..3.5), rng.gen_range(1.5..3.5), rng.gen_range(-1.5..1.5));
                    (c, [sx, 0.0, sh, sy], rng.gen_range(0.3..1.0))
                })
                .collect(),
        )
    }

    pub fn eval(&self, p: Point) -> f64 {
        self.0
            .iter()
            .map(|&(c, m, a)| {
                let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
                let (qx, qy) = (m[0] * dx + m[1] * dy, m[2] * dx + m[3] * dy);
                a * (1.0 - qx * qx - qy * qy).max(0.0).powi(3)
            })
            .sum()
    }

    pub fn sample(&self, g: &GridFunction) -> GridFunction {
        g.from_fn(|p| self.eval(p))
    }
}

fn diff_norm(a: &GridFunction, b: &GridFunction, p: f64) -> f64 {
    a.sub(b).expect("same grid").lp_norm(p)
}

/// Slack for uniform layering: each threshold step moves at most `max/levels` of value
/// on the union of the two supports.
pub fn quantization_bound(u: &GridFunction, v: &GridFunction, layering: Layering, p: f64) -> f64 {
    match layering {
        Layering::Exact => 0.0,
        Layering::Uniform(levels) => {
            let supp = (0..u.len()).filter(|&i| u.values[i] > 0.0 || v.values[i] > 0.0).count() as f64 * u.cell_volume();
            let step = u.max().max(v.max()) / levels as f64;
            if p.is_infinite() {
                step
            } else {
                step * supp.powf(1.0 / p)
            }
        }
    }
}

fn non_expansive(rng: &mut ChaCha8Rng, n: usize) -> Result<Outcome> {
    let g = GridFunction::covering(&[-4.0], &[4.0], 1024, 2)?;
    let times = [0.05, 0.2, 0.5, 1.5, f64::INFINITY];
    let mut fails = Vec::new();
    let mut cases = 0;
    for pair in 0..n {
        let u = random_profile_1d(rng, &g);
        let v = if pair % 2 == 0 {
            random_profile_1d(rng, &g)
        } else {
            // Nearby pairs probe the bound where it is tight.
            let w = random_profile_1d(rng, &g);
            let mut v = u.clone();
            v.values.iter_mut().zip(&w.values).for_each(|(a, b)| *a += 0.05 * b);
            v
        };
        for &t in &times {
            for layering in [Layering::Exact, Layering::Uniform(64)] {
                let ut = symmetrize_function(&u, st(t), layering)?;
                let vt = symmetrize_function(&v, st(t), layering)?;
                for p in [1.0, 2.0, f64::INFINITY] {
                    cases += 1;
                    let before = diff_norm(&u, &v, p);
                    let after = diff_norm(&ut, &vt, p);
                    let slack = 2.0 * quantization_bound(&u, &v, layering, p) + 1e-12 * before.max(1.0);
                    if after > before + slack {
                        fails.push(format!("pair {pair}, t={t}, {layering:?}, p={p}: {after} > {before} + {slack}"));
                    }
                }
                if layering == Layering::Exact {
                    let (lu, lt) = (discrete_lipschitz(&u), discrete_lipschitz(&ut));
                    if lt > lu * (1.0 + 1e-9) + 1e-12 {
                        fails.push(format!("pair {pair}, t={t}: Lipschitz {lt} > {lu}"));
                    }
                }
            }
        }
    }
    Ok((cases, fails))
}

fn disk_grid(cells: usize) -> Result<GridFunction> {
    GridFunction::covering(&[-1.6, -1.6], &[1.6, 1.6], cells, 2)
}

/// Cone tilted by a shear, so that no centre makes it radially decreasing.
pub fn sheared_bump(g: &GridFunction) -> GridFunction {
    g.from_fn(|p| {
        let (x, y) = (p[0] / 0.7, (p[1] - 0.3 - 0.6 * p[0]) / 0.7);
        (1.0 - (x * x + y * y).sqrt()).max(0.0)
    })
}

fn seminorm_decrease(rng: &mut ChaCha8Rng, n: usize, cells: usize) -> Result<Outcome> {
    let o = FracOrder::new(0.5, 2)?;
    let g = disk_grid(cells)?;
    let mut fails = Vec::new();
    let mut cases = 0;
    for case in 0..n {
        let u = RandomBumps::draw(rng).sample(&g);
        let e0 = seminorm_squared(&u, o)?;
        let t = if case % 5 == 4 { f64::INFINITY } else { rng.gen_range(0.01..2.0) };
        let e = seminorm_squared(&symmetrize_function(&u, st(t), Layering::Exact)?, o)?;
        cases += 1;
        if e > e0 * (1.0 + 1e-6) {
            fails.push(format!("case {case}, t={t}: [u^t]² = {e} > [u]² = {e0}"));
        }
    }
    let times: Vec<f64> = (0..=10).map(|k| 0.05 * k as f64).collect();
    let bump = sheared_bump(&g);
    let mut prev = f64::INFINITY;
    for &t in &times {
        let e = seminorm_squared(&symmetrize_function(&bump, st(t), Layering::Exact)?, o)?;
        cases += 1;
        if !(e < prev * (1.0 - 1e-6)) {
            fails.push(format!("sheared bump: energy {e} at t={t} is not below {prev}"));
        }
        prev = e;
    }
    let radial = g.from_fn(|p| (1.0 - (p[0] * p[0] + p[1] * p[1]).sqrt() / 0.9).max(0.0));
    let e0 = seminorm_squared(&radial, o)?;
    for &t in &times[1..] {
        let e = seminorm_squared(&symmetrize_function(&radial, st(t), Layering::Exact)?, o)?;
        cases += 1;
        if (e / e0 - 1.0).abs() > 1e-6 {
            fails.push(format!("symmetric cone drifted at t={t}: {e} vs {e0}"));
        }
    }
    Ok((cases, fails))
}

fn pairing_increase(rng: &mut ChaCha8Rng, n: usize, cells: usize) -> Result<Outcome> {
    let o = FracOrder::new(0.5, 2)?;
    let g = disk_grid(cells)?;
    let mut fails = Vec::new();
    let mut cases = 0;
    for case in 0..n {
        let u = RandomBumps::draw(rng).sample(&g);
        let t = rng.gen_range(0.05..2.0);
        let base = symmetrized_layers(&u, SymTime::ZERO, Layering::Exact)?;
        let moved = symmetrized_layers(&u, st(t), Layering::Exact)?;
        let ut = symmetrize_function(&u, st(t), Layering::Exact)?;
        for eps in [0.05, 0.1, 0.2] {
            cases += 1;
            let (a, b) = (layered_riesz_pairing(&base, g.spacing, o, eps)?, layered_riesz_pairing(&moved, g.spacing, o, eps)?);
            if b < a * (1.0 - 1e-12) {
                fails.push(format!("case {case}, eps={eps}, t={t}: pairing {b} < {a}"));
            }
            let (ja, jb) = (regularized_energy(&u, o, eps)?, regularized_energy(&ut, o, eps)?);
            if jb > ja * (1.0 + 1e-9) {
                fails.push(format!("case {case}, eps={eps}, t={t}: J_eps {jb} > {ja}"));
            }
        }
    }
    Ok((cases, fails))
}

fn random_domain(rng: &mut ChaCha8Rng, k: usize) -> Result<ConvexDomain> {
    let c = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
    match k % 3 {
        0 => ConvexDomain::ellipse(c, [rng.gen_range(0.5..1.5), rng.gen_range(0.3..1.0)], rng.gen_range(0.0..3.14)),
        1 => ConvexDomain::ball(c, rng.gen_range(0.3..1.2)),
        _ => {
            // Random points on a circle at sorted angles form a strictly convex polygon.
            let m = rng.gen_range(3..8);
            let mut ang: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            ang.sort_by(f64::total_cmp);
            ang.dedup_by(|a, b| (*a - *b).abs() < 0.05);
            if ang.len() < 3 || ang[0] + std::f64::consts::TAU - ang[ang.len() - 1] < 0.05 {
                return ConvexDomain::polygon(vec![c, [c[0] + 1.0, c[1]], [c[0], c[1] + 1.0]]);
            }
            ConvexDomain::polygon(ang.iter().map(|a| [c[0] + a.cos(), c[1] + 0.7 * a.sin()]).collect())
        }
    }
}

fn steiner_consistency(rng: &mut ChaCha8Rng, n: usize) -> Result<Outcome> {
    let mut fails = Vec::new();
    let mut cases = 0;
    for k in 0..n {
        let dom = random_domain(rng, k)?;
        let phi = if k % 2 == 0 { 0.0 } else { rng.gen_range(0.0..3.14) };
        let v = steiner_vector_field_in_frame(&dom, phi)?;
        let dvol = volume_derivative(&dom, &v);
        cases += 1;
        if dvol.abs() > 1e-6 * dom.volume() {
            fails.push(format!("domain {k}: dVol·V = {dvol:e}"));
        }
        for t in [0.05, 0.1, 0.5] {
            cases += 1;
            let a = deform(&dom, &v, t)?;
            let b = symmetrize_set_in_frame(&dom, st(t), phi)?;
            let d = crate::geometry::hausdorff_on_samples(&a, &b, 256);
            if d > 1e-8 {
                fails.push(format!("domain {k}, t={t}: Hausdorff gap {d:e}"));
            }
        }
    }
    Ok((cases, fails))
}
