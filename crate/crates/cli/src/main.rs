//! `fracshape` command-line driver.
//!
//! Exit codes: 0 success (including a "not critical" verdict), 1 property-suite failure
//! in `selftest --ci`, 2 usage or runtime error.

mod config;
mod plot;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{parse_c0, parse_times, DomainSource, ExperimentConfig, RawConfig, OUT_ENV};
use fracshape::eigensolve::{boundary_ratio_of, solve_lambda_with, BoundaryTrace, SolverOptions};
use fracshape::selftest::{run_suite, SelftestReport, SuiteSizes, SUITES};
use fracshape::shape::{rigidity_check_with, steiner_flow_curve, write_flow_csv, FdMethod, RigidityOptions};
use fracshape::steiner::{steiner_flow_report, symmetrize_function, symmetrize_set};
use fracshape::{DomainSpec, FracOrder, GridFunction, SymTime, VERSION};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "fracshape", version, about = "Continuous Steiner symmetrization and fractional shape derivatives")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by all subcommands; each overrides the config file.
#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset (interval, ball, disk, ellipse, square, triangle), inline JSON, or a JSON/TOML file.
    #[arg(long, global = true)]
    domain: Option<String>,
    #[arg(long, global = true)]
    s: Option<f64>,
    #[arg(long, global = true)]
    p: Option<f64>,
    /// `mean-trace` or a fixed nonnegative value.
    #[arg(long, global = true)]
    c0: Option<String>,
    /// Cells across the longest side of the bounding box.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Layer-cake levels; 0 is exact.
    #[arg(long, global = true)]
    levels: Option<usize>,
    /// Lattice offsets per axis averaged along flows.
    #[arg(long, global = true)]
    shifts: Option<usize>,
    /// Battery field id prefixes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    battery: Option<Vec<String>>,
    /// Times: `a:b:step`, a comma list, or one value.
    #[arg(long, visible_alias = "t", global = true)]
    times: Option<String>,
    /// Output directory (overrides FRACSHAPE_OUT, which overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for λ and the minimizer; report the boundary ratio.
    Solve,
    /// Symmetrize the domain, or a grid function given by `--function`.
    Symmetrize {
        /// Grid function (CSV or .bin) to symmetrize instead of the domain.
        #[arg(long)]
        function: Option<PathBuf>,
    },
    /// Shape-derivative battery and critical / not-critical verdict.
    Rigidity {
        /// Also estimate each field by finite differences.
        #[arg(long)]
        fd: bool,
    },
    /// SVG chart of a flow or trace CSV.
    Plotdata {
        #[arg(long)]
        input: PathBuf,
        /// Column for the vertical axis (default: the second).
        #[arg(long)]
        column: Option<String>,
    },
    /// Run the randomized property suites.
    Selftest {
        #[arg(long)]
        quick: bool,
        /// Exit with status 1 if any suite fails.
        #[arg(long)]
        ci: bool,
        /// Run only these suites.
        #[arg(long, value_delimiter = ',')]
        suite: Option<Vec<String>>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn flag_layer(c: &Common, fd: Option<bool>) -> Result<RawConfig> {
    Ok(RawConfig {
        domain: c.domain.clone().map(DomainSource::Named),
        s: c.s,
        p: c.p,
        c0: c.c0.as_deref().map(parse_c0).transpose()?,
        resolution: c.resolution,
        levels: c.levels,
        shifts: c.shifts,
        battery: c.battery.clone(),
        times: c.times.as_deref().map(parse_times).transpose()?,
        output_dir: c.out.clone(),
        seed: c.seed,
        finite_differences: fd,
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.common.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    let fd = matches!(cli.command, Command::Rigidity { fd: true }).then_some(true);
    let env = RawConfig { output_dir: std::env::var_os(OUT_ENV).map(PathBuf::from), ..Default::default() };
    let cfg = ExperimentConfig::resolve(file.overlay(env).overlay(flag_layer(&cli.common, fd)?))?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.output_dir.display()))?;
    match cli.command {
        Command::Solve => cmd_solve(&cfg),
        Command::Symmetrize { function } => cmd_symmetrize(&cfg, function.as_deref()),
        Command::Rigidity { .. } => cmd_rigidity(&cfg),
        Command::Plotdata { input, column } => cmd_plotdata(&cfg, &input, column.as_deref()),
        Command::Selftest { quick, ci, suite } => cmd_selftest(&cfg, quick, ci, suite),
    }
}

/// Metadata stamped on every report.
#[derive(Serialize)]
struct Stamp<'a> {
    version: &'static str,
    config_hash: String,
    config: &'a ExperimentConfig,
}

fn stamp(cfg: &ExperimentConfig) -> Stamp<'_> {
    Stamp { version: VERSION, config_hash: cfg.hash(), config: cfg }
}

fn csv_header(cfg: &ExperimentConfig) -> String {
    format!("# fracshape {VERSION} config {}\n", cfg.hash())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn solver_options(cfg: &ExperimentConfig) -> SolverOptions {
    SolverOptions { resolution: cfg.resolution, ..Default::default() }
}

fn order(cfg: &ExperimentConfig, dim: usize) -> Result<FracOrder> {
    Ok(FracOrder::new(cfg.s, dim)?)
}

#[derive(Serialize)]
struct TraceSummary {
    mean: f64,
    relative_variation: f64,
    flagged: usize,
    samples: usize,
}

#[derive(Serialize)]
struct SolveReport<'a> {
    #[serde(flatten)]
    stamp: Stamp<'a>,
    lambda: f64,
    residual: f64,
    iterations: usize,
    warnings: Vec<String>,
    volume: f64,
    trace: Option<TraceSummary>,
}

fn trace_csv(cfg: &ExperimentConfig, trace: &BoundaryTrace) -> String {
    let mut out = csv_header(cfg) + "arclength,x,y,ratio,flagged\n";
    let mut arc = 0.0;
    for (i, t) in trace.samples.iter().enumerate() {
        if i > 0 {
            let q = trace.samples[i - 1].point;
            arc += (t.point[0] - q[0]).hypot(t.point[1] - q[1]);
        }
        out += &format!("{arc},{},{},{},{}\n", t.point[0], t.point[1], t.ratio, u8::from(t.flagged));
    }
    out
}

fn cmd_solve(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let dom = cfg.build_domain()?;
    let o = order(cfg, dom.dim())?;
    let opts = solver_options(cfg);
    let sol = solve_lambda_with(&dom, o, cfg.p, &opts, None)?;
    let samples = if dom.dim() == 1 { 2 } else { opts.trace_samples };
    let trace = if dom.is_smooth() { Some(boundary_ratio_of(&sol.u, &dom, o, samples)?) } else { None };
    let out = &cfg.output_dir;
    sol.u.save(&out.join("solution.bin"))?;
    if let Some(t) = &trace {
        write_text(&out.join("trace.csv"), &trace_csv(cfg, t))?;
    }
    let report = SolveReport {
        stamp: stamp(cfg),
        lambda: sol.lambda,
        residual: sol.residual,
        iterations: sol.iterations,
        warnings: sol.warnings.clone(),
        volume: dom.volume(),
        trace: trace.as_ref().map(|t| TraceSummary {
            mean: t.mean,
            relative_variation: t.relative_variation,
            flagged: t.flagged,
            samples: t.samples.len(),
        }),
    };
    write_json(&out.join("solve.json"), &report)?;
    println!("lambda = {:.10}", sol.lambda);
    match &trace {
        Some(t) => println!(
            "trace mean = {:.6} (variation {:.3}%, {} flagged)",
            t.mean,
            100.0 * t.relative_variation,
            t.flagged
        ),
        None => println!("trace: not available on polygons"),
    }
    for w in &sol.warnings {
        println!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DomainStep {
    t: f64,
    volume: f64,
    relative_volume_change: f64,
    domain: DomainSpec,
}

#[derive(Serialize)]
struct SymmetrizeDomainReport<'a> {
    #[serde(flatten)]
    stamp: Stamp<'a>,
    steps: Vec<DomainStep>,
}

#[derive(Serialize)]
struct SymmetrizeFunctionReport<'a> {
    #[serde(flatten)]
    stamp: Stamp<'a>,
    input: String,
    flow: fracshape::steiner::FlowReport,
}

fn cmd_symmetrize(cfg: &ExperimentConfig, function: Option<&Path>) -> Result<ExitCode> {
    if cfg.times.is_empty() {
        bail!("empty t list: pass --times (for example 0:0.5:0.05)");
    }
    let out = &cfg.output_dir;
    if let Some(path) = function {
        let u = GridFunction::load(path).with_context(|| format!("cannot load grid function {}", path.display()))?;
        let o = order(cfg, u.ndim())?;
        let flow = steiner_flow_report(&u, o, &cfg.times, cfg.layering())
            .context("flow times must increase from 0")?;
        for (k, &t) in cfg.times.iter().enumerate() {
            symmetrize_function(&u, SymTime::new(t)?, cfg.layering())?.save(&out.join(format!("u_t{k:03}.csv")))?;
        }
        let mut csv = Vec::new();
        flow.write_csv(&mut csv)?;
        write_text(&out.join("flow.csv"), &(csv_header(cfg) + &String::from_utf8(csv)?))?;
        println!("energy {:.8e} -> {:.8e}", flow.energies[0], flow.energies[flow.energies.len() - 1]);
        println!(
            "weakly decreasing: {}, strictly decreasing: {}",
            flow.weakly_decreasing, flow.strictly_decreasing
        );
        let report = SymmetrizeFunctionReport { stamp: stamp(cfg), input: path.display().to_string(), flow };
        write_json(&out.join("symmetrize.json"), &report)?;
        return Ok(ExitCode::SUCCESS);
    }
    let dom = cfg.build_domain()?;
    let v0 = dom.volume();
    let mut steps = Vec::new();
    for (k, &t) in cfg.times.iter().enumerate() {
        let d = symmetrize_set(&dom, SymTime::new(t)?)?;
        let spec = d.to_spec()?;
        write_json(&out.join(format!("domain_t{k:03}.json")), &spec)?;
        let step = DomainStep { t, volume: d.volume(), relative_volume_change: (d.volume() - v0) / v0, domain: spec };
        println!("t = {t}: volume {:.12} (relative change {:+.2e})", step.volume, step.relative_volume_change);
        steps.push(step);
    }
    write_json(&out.join("symmetrize.json"), &SymmetrizeDomainReport { stamp: stamp(cfg), steps })?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_rigidity(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let dom = cfg.build_domain()?;
    if dom.dim() != 2 || !dom.is_smooth() {
        bail!("the rigidity experiment needs a smooth planar domain (ball or ellipse)");
    }
    let o = order(cfg, 2)?;
    let opts = RigidityOptions {
        solver: solver_options(cfg),
        finite_differences: cfg.finite_differences.then(|| FdMethod::SymmetricFit { t_max: 0.05, points: 11 }),
        c0: cfg.c0.fixed(),
        fields: (!cfg.battery.is_empty()).then(|| cfg.battery.clone()),
    };
    let mut report = rigidity_check_with(&dom, o, cfg.p, &opts)?;
    report.config_hash = Some(cfg.hash());
    let out = &cfg.output_dir;
    write_json(&out.join("rigidity.json"), &report)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_text(&out.join("rigidity.csv"), &(csv_header(cfg) + &String::from_utf8(csv)?))?;
    println!("{}", report.summary());
    if !cfg.times.is_empty() && !report.steiner_field.is_empty() {
        let deg: f64 = report.steiner_field.trim_start_matches("steiner-").parse().unwrap_or(0.0);
        let flow_opts = SolverOptions { shifts: cfg.shifts, ..opts.solver.clone() };
        let curve = steiner_flow_curve(&dom, o, cfg.p, report.c0, deg.to_radians(), &cfg.times, &flow_opts)?;
        let mut csv = Vec::new();
        write_flow_csv(&curve, &mut csv)?;
        write_text(&out.join("flow.csv"), &(csv_header(cfg) + &String::from_utf8(csv)?))?;
        let decreasing = curve.windows(2).all(|w| w[1].1 < w[0].1);
        println!("J along the Steiner flow ({}): strictly decreasing = {decreasing}", report.steiner_field);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_plotdata(cfg: &ExperimentConfig, input: &Path, column: Option<&str>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(input).with_context(|| format!("cannot read input {}", input.display()))?;
    // Trace tables plot the ratio against arclength unless told otherwise.
    let column = column.or_else(|| text.lines().any(|l| l.starts_with("arclength,")).then_some("ratio"));
    let series = plot::read_series(&text, column).with_context(|| format!("cannot parse {}", input.display()))?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
    let title = format!("{} vs {} ({stem})", series.y_label, series.x_label);
    let path = cfg.output_dir.join(format!("{stem}.svg"));
    write_text(&path, &plot::svg_line_chart(&series, &title))?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SelftestOutput<'a> {
    #[serde(flatten)]
    stamp: Stamp<'a>,
    report: SelftestReport,
}

fn cmd_selftest(cfg: &ExperimentConfig, quick: bool, ci: bool, only: Option<Vec<String>>) -> Result<ExitCode> {
    let sizes = if quick { SuiteSizes::quick() } else { SuiteSizes::full() };
    let names: Vec<String> = only.unwrap_or_else(|| SUITES.iter().map(|s| s.to_string()).collect());
    let mut suites = Vec::new();
    for name in &names {
        let r = run_suite(name, cfg.seed, &sizes)?;
        println!("{:<20} {} ({} cases, {} failures)", r.name, if r.passed() { "PASS" } else { "FAIL" }, r.cases, r.failures.len());
        for f in r.failures.iter().take(5) {
            println!("    {f}");
        }
        suites.push(r);
    }
    let report = SelftestReport { version: VERSION.to_string(), seed: cfg.seed, sizes, suites };
    let passed = report.passed();
    write_json(&cfg.output_dir.join("selftest.json"), &SelftestOutput { stamp: stamp(cfg), report })?;
    Ok(if ci && !passed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}
