//! Experiment configuration: defaults, then the config file, then the output-dir
//! environment variable, then command-line flags. Later layers win.

use anyhow::{bail, Context, Result};
use fracshape::{build_domain, ConvexDomain, DomainSpec, Layering};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Overrides the output directory of the config file; `--out` still wins.
pub const OUT_ENV: &str = "FRACSHAPE_OUT";
pub const DEFAULT_OUT: &str = "fracshape-out";

/// How `C₀` is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum C0Policy {
    Fixed(f64),
    Rule(C0Rule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum C0Rule {
    #[serde(rename = "mean-trace")]
    MeanTrace,
}

impl C0Policy {
    pub fn fixed(&self) -> Option<f64> {
        match self {
            C0Policy::Fixed(c) => Some(*c),
            C0Policy::Rule(_) => None,
        }
    }
}

pub fn parse_c0(s: &str) -> Result<C0Policy> {
    if s == "mean-trace" {
        return Ok(C0Policy::Rule(C0Rule::MeanTrace));
    }
    let c: f64 = s.parse().with_context(|| format!("C0 must be 'mean-trace' or a number, got '{s}'"))?;
    Ok(C0Policy::Fixed(c))
}

/// A domain given by preset name, file path, or inline description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSource {
    Spec(DomainSpec),
    Named(String),
}

/// Everything optional: the shape of both the config file and the flag layer.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub domain: Option<DomainSource>,
    pub s: Option<f64>,
    pub p: Option<f64>,
    pub c0: Option<C0Policy>,
    pub resolution: Option<usize>,
    /// 0 selects exact layering.
    pub levels: Option<usize>,
    pub shifts: Option<usize>,
    pub battery: Option<Vec<String>>,
    pub times: Option<Vec<f64>>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub finite_differences: Option<bool>,
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// `self` with every field set in `top` replaced.
    pub fn overlay(self, top: RawConfig) -> RawConfig {
        RawConfig {
            domain: top.domain.or(self.domain),
            s: top.s.or(self.s),
            p: top.p.or(self.p),
            c0: top.c0.or(self.c0),
            resolution: top.resolution.or(self.resolution),
            levels: top.levels.or(self.levels),
            shifts: top.shifts.or(self.shifts),
            battery: top.battery.or(self.battery),
            times: top.times.or(self.times),
            output_dir: top.output_dir.or(self.output_dir),
            seed: top.seed.or(self.seed),
            finite_differences: top.finite_differences.or(self.finite_differences),
        }
    }
}

/// Fully resolved and validated experiment settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    pub s: f64,
    pub p: f64,
    pub c0: C0Policy,
    pub resolution: usize,
    pub levels: usize,
    pub shifts: usize,
    pub battery: Vec<String>,
    pub times: Vec<f64>,
    pub seed: u64,
    pub finite_differences: bool,
    /// Not part of the hash: where results go does not change them.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

pub fn preset(name: &str) -> Option<DomainSpec> {
    Some(match name {
        "interval" => DomainSpec::Interval { lo: -1.0, hi: 1.0 },
        "ball" | "disk" => DomainSpec::Ball { center: [0.0, 0.0], radius: 1.0 },
        "ellipse" => DomainSpec::Ellipse { center: [0.0, 0.0], semi_axes: [1.3, 0.8], angle: 0.0 },
        "square" => DomainSpec::Polygon { vertices: vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]] },
        "triangle" => DomainSpec::Polygon { vertices: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] },
        _ => return None,
    })
}

/// Resolve a `--domain` value: preset name, inline JSON, or a JSON/TOML file.
pub fn resolve_domain(src: &DomainSource) -> Result<DomainSpec> {
    let name = match src {
        DomainSource::Spec(s) => return Ok(s.clone()),
        DomainSource::Named(n) => n.trim(),
    };
    if let Some(s) = preset(name) {
        return Ok(s);
    }
    if name.starts_with('{') {
        return serde_json::from_str(name).with_context(|| format!("invalid inline domain '{name}'"));
    }
    let path = Path::new(name);
    if !path.exists() {
        bail!("unknown domain '{name}': not a preset (interval, ball, disk, ellipse, square, triangle), inline JSON or a file");
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read domain file {name}"))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("invalid domain file {name}"))
    } else {
        serde_json::from_str(&text).with_context(|| format!("invalid domain file {name}"))
    }
}

impl ExperimentConfig {
    pub fn resolve(raw: RawConfig) -> Result<Self> {
        let src = raw.domain.unwrap_or(DomainSource::Named("ball".into()));
        let domain = resolve_domain(&src)?;
        let dim = if matches!(domain, DomainSpec::Interval { .. }) { 1 } else { 2 };
        let cfg = ExperimentConfig {
            domain,
            s: raw.s.unwrap_or(0.5),
            p: raw.p.unwrap_or(1.0),
            c0: raw.c0.unwrap_or(C0Policy::Rule(C0Rule::MeanTrace)),
            resolution: raw.resolution.unwrap_or(if dim == 1 { 256 } else { 96 }),
            levels: raw.levels.unwrap_or(0),
            shifts: raw.shifts.unwrap_or(1),
            battery: raw.battery.unwrap_or_default(),
            times: raw.times.unwrap_or_default(),
            seed: raw.seed.unwrap_or(0),
            finite_differences: raw.finite_differences.unwrap_or(false),
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        };
        cfg.validate(dim)?;
        Ok(cfg)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            bail!("s = {} must lie in (0, 1)", self.s);
        }
        if !(1.0..=2.0).contains(&self.p) {
            bail!("p = {} must lie in [1, 2]", self.p);
        }
        let min = if dim == 1 { 64 } else { 48 };
        if self.resolution < min {
            bail!("resolution {} is below the minimum {min} for {dim}D domains", self.resolution);
        }
        if self.levels != 0 && self.levels < 16 {
            bail!("levels must be 0 (exact) or at least 16, got {}", self.levels);
        }
        if self.shifts == 0 {
            bail!("shifts must be at least 1");
        }
        if let Some(c) = self.c0.fixed() {
            if !(c >= 0.0 && c.is_finite()) {
                bail!("C0 = {c} must be a finite nonnegative number");
            }
        }
        if self.times.iter().any(|t| !(*t >= 0.0)) {
            bail!("symmetrization times must be nonnegative");
        }
        Ok(())
    }

    pub fn build_domain(&self) -> Result<ConvexDomain> {
        build_domain(&self.domain).map_err(|e| match e {
            fracshape::Error::NonConvex { index } => anyhow::anyhow!(
                "refusing a non-convex domain: the rigidity theorem and the Steiner field assume a convex domain \
                 (polygon is not convex at vertex {index})"
            ),
            e => e.into(),
        })
    }

    pub fn layering(&self) -> Layering {
        if self.levels == 0 {
            Layering::Exact
        } else {
            Layering::Uniform(self.levels)
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses `a:b:step` (inclusive), a comma list, or a single number.
pub fn parse_times(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        bail!("empty t list");
    }
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>()
            .with_context(|| format!("invalid range '{s}'"))?;
        let (a, b, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || b < a {
            bail!("range '{s}' needs a positive step and end >= start");
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|k| a + k as f64 * step).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("invalid time '{p}'")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_inclusive_without_drift() {
        let t = parse_times("0:0.5:0.05").unwrap();
        assert_eq!(t.len(), 11);
        assert_eq!(t[0], 0.0);
        assert!((t[10] - 0.5).abs() < 1e-15);
        assert_eq!(parse_times("0.1, 0.3").unwrap(), vec![0.1, 0.3]);
        assert!(parse_times(" ").is_err());
        assert!(parse_times("0:1:0").is_err());
    }

    #[test]
    fn later_layers_win() {
        let file = || -> RawConfig { toml::from_str("s = 0.3\np = 1.5\noutput_dir = \"from-file\"\n").unwrap() };
        let env = || RawConfig { output_dir: Some("from-env".into()), ..Default::default() };
        let flags = RawConfig { p: Some(2.0), ..Default::default() };
        let cfg = ExperimentConfig::resolve(file().overlay(env()).overlay(flags)).unwrap();
        assert_eq!((cfg.s, cfg.p), (0.3, 2.0));
        assert_eq!(cfg.output_dir, PathBuf::from("from-env"));
        let flags = RawConfig { output_dir: Some("from-flag".into()), ..Default::default() };
        let cfg = ExperimentConfig::resolve(file().overlay(env()).overlay(flags)).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("from-flag"));
        assert_eq!(ExperimentConfig::resolve(file()).unwrap().output_dir, PathBuf::from("from-file"));
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        let bad = [
            RawConfig { p: Some(2.5), ..Default::default() },
            RawConfig { s: Some(1.0), ..Default::default() },
            RawConfig { resolution: Some(40), ..Default::default() },
            RawConfig { domain: Some(DomainSource::Named("interval".into())), resolution: Some(60), ..Default::default() },
        ];
        for raw in bad {
            assert!(ExperimentConfig::resolve(raw).is_err());
        }
        let ok = RawConfig { resolution: Some(48), ..Default::default() };
        assert!(ExperimentConfig::resolve(ok).is_ok());
    }

    #[test]
    fn config_file_accepts_tables_and_policies() {
        let raw: RawConfig = toml::from_str(
            "c0 = 0.7\n[domain]\nkind = \"ellipse\"\nparams = { semi_axes = [1.2, 0.9] }\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::resolve(raw).unwrap();
        assert_eq!(cfg.c0, C0Policy::Fixed(0.7));
        assert!(matches!(cfg.domain, DomainSpec::Ellipse { semi_axes: [1.2, 0.9], .. }));
        let raw: RawConfig = toml::from_str("c0 = \"mean-trace\"\ndomain = \"square\"\n").unwrap();
        assert_eq!(ExperimentConfig::resolve(raw).unwrap().c0.fixed(), None);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::resolve(RawConfig { output_dir: Some("x".into()), ..Default::default() }).unwrap();
        let b = ExperimentConfig::resolve(RawConfig { output_dir: Some("y".into()), ..Default::default() }).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = ExperimentConfig::resolve(RawConfig { p: Some(1.5), ..Default::default() }).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
