//! Nonnegative functions sampled at the centres of a uniform grid of square cells.

use crate::error::{Error, Result};
use crate::quad::pairwise_sum;
use std::io::{BufRead, Write};
use std::path::Path;

/// A point in the plane; one-dimensional points use only the first coordinate.
pub type Point = [f64; 2];

/// Grid samples, implicitly zero outside the grid box.
///
/// Storage is row-major with the last axis fastest. In 2D the last axis is `y`, the
/// symmetrization direction, so each column `x = const` is a contiguous slice.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridFunction {
    /// Coordinates of node 0 (a cell centre).
    pub origin: Vec<f64>,
    /// Cell side length, shared by all axes.
    pub spacing: f64,
    /// Node counts per axis.
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(origin: Vec<f64>, spacing: f64, dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if !(1..=2).contains(&dims.len()) || origin.len() != dims.len() {
            return Err(Error::InvalidParameter("grid must be 1D or 2D".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidParameter(format!("spacing {spacing} must be positive")));
        }
        if dims.iter().product::<usize>() != values.len() || dims.contains(&0) {
            return Err(Error::GridMismatch(format!(
                "dims {:?} do not match {} values",
                dims,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at index {i}")));
        }
        Ok(GridFunction { origin, spacing, dims, values })
    }

    pub fn zeros(origin: Vec<f64>, spacing: f64, dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(origin, spacing, dims, vec![0.0; n])
    }

    /// Zero grid covering the box `[lo, hi]` with `resolution` cells across its longest
    /// side, `margin` extra cells on every side, and nodes placed symmetrically about the
    /// box centre.
    pub fn covering(lo: &[f64], hi: &[f64], resolution: usize, margin: usize) -> Result<Self> {
        if lo.len() != hi.len() || resolution == 0 {
            return Err(Error::InvalidParameter("bad covering box".into()));
        }
        let width = lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        if !(width > 0.0) {
            return Err(Error::Degenerate("empty bounding box".into()));
        }
        let h = width / resolution as f64;
        let mut origin = Vec::new();
        let mut dims = Vec::new();
        for (a, b) in lo.iter().zip(hi) {
            let c = 0.5 * (a + b);
            let half = ((0.5 * (b - a) / h) - 1e-9).ceil().max(1.0) as usize + margin;
            origin.push(c - (half as f64 - 0.5) * h);
            dims.push(2 * half);
        }
        Self::zeros(origin, h, dims)
    }

    pub fn from_fn<F: Fn(Point) -> f64>(&self, f: F) -> Self {
        let mut g = self.clone();
        for (i, v) in g.values.iter_mut().enumerate() {
            *v = f(self.node(i));
        }
        g
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Length of one column along the last axis.
    pub fn column_len(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Per-axis multi-index of a flat index.
    pub fn multi_index(&self, i: usize) -> [usize; 2] {
        if self.ndim() == 1 {
            [i, 0]
        } else {
            [i / self.dims[1], i % self.dims[1]]
        }
    }

    pub fn flat_index(&self, ix: usize, iy: usize) -> usize {
        if self.ndim() == 1 {
            ix
        } else {
            ix * self.dims[1] + iy
        }
    }

    /// Coordinates of node `i`.
    pub fn node(&self, i: usize) -> Point {
        let [a, b] = self.multi_index(i);
        if self.ndim() == 1 {
            [self.origin[0] + a as f64 * self.spacing, 0.0]
        } else {
            [
                self.origin[0] + a as f64 * self.spacing,
                self.origin[1] + b as f64 * self.spacing,
            ]
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.ndim() as i32)
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.dims == other.dims
            && self.spacing == other.spacing
            && self.origin.iter().zip(&other.origin).all(|(a, b)| a == b)
    }

    pub fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs {:?}", self.dims, other.dims)))
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Continuous L^p norm of the piecewise-constant extension; `p = f64::INFINITY` allowed.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.values.iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        let terms: Vec<f64> = self.values.iter().map(|v| v.abs().powf(p)).collect();
        (pairwise_sum(&terms) * self.cell_volume()).powf(1.0 / p)
    }

    pub fn inner(&self, other: &GridFunction) -> f64 {
        let terms: Vec<f64> = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        pairwise_sum(&terms) * self.cell_volume()
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_same_grid(other)?;
        let mut g = self.clone();
        for (a, b) in g.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
        Ok(g)
    }

    pub fn scaled(&self, k: f64) -> GridFunction {
        let mut g = self.clone();
        g.values.iter_mut().for_each(|v| *v *= k);
        g
    }

    pub fn check_nonnegative(&self) -> Result<()> {
        match self.values.iter().position(|&v| v < 0.0) {
            Some(index) => Err(Error::NegativeValue { index, value: self.values[index] }),
            None => Ok(()),
        }
    }

    /// True when every node on the outer ring of the grid is zero.
    pub fn has_zero_margin(&self) -> bool {
        (0..self.len()).all(|i| {
            let m = self.multi_index(i);
            let on_edge = (0..self.ndim()).any(|d| m[d] == 0 || m[d] + 1 == self.dims[d]);
            !on_edge || self.values[i] == 0.0
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# fracshape grid v1")?;
        writeln!(w, "# dims: {}", join(self.dims.iter()))?;
        writeln!(w, "# origin: {}", join(self.origin.iter()))?;
        writeln!(w, "# spacing: {}", self.spacing)?;
        for row in self.values.chunks(self.column_len()) {
            writeln!(w, "{}", row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let (mut dims, mut origin, mut spacing) = (None, None, None);
        let mut values = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, val)) = rest.split_once(':') {
                    let nums = val.split_whitespace();
                    match key.trim() {
                        "dims" => dims = Some(parse_all::<usize>(nums)?),
                        "origin" => origin = Some(parse_all::<f64>(nums)?),
                        "spacing" => spacing = parse_all::<f64>(nums)?.first().copied(),
                        _ => {}
                    }
                }
                continue;
            }
            values.extend(parse_all::<f64>(line.split(','))?);
        }
        let missing = |k: &str| Error::Parse(format!("grid csv missing '{k}' header"));
        Self::new(
            origin.ok_or_else(|| missing("origin"))?,
            spacing.ok_or_else(|| missing("spacing"))?,
            dims.ok_or_else(|| missing("dims"))?,
            values,
        )
    }

    /// Little-endian binary: magic, ndim, dims, origin, spacing, values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BIN_MAGIC)?;
        w.write_all(&(self.ndim() as u32).to_le_bytes())?;
        for d in &self.dims {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for o in &self.origin {
            w.write_all(&o.to_le_bytes())?;
        }
        w.write_all(&self.spacing.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Parse("truncated or invalid binary grid".into());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(bad)?;
            pos += n;
            Ok(s)
        };
        if take(BIN_MAGIC.len())? != BIN_MAGIC {
            return Err(bad());
        }
        let nd = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if !(1..=2).contains(&nd) {
            return Err(bad());
        }
        let mut dims = Vec::new();
        for _ in 0..nd {
            dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let mut read_f64 = || -> Result<f64> { Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())) };
        let mut origin = Vec::new();
        for _ in 0..nd {
            origin.push(read_f64()?);
        }
        let spacing = read_f64()?;
        let n: usize = dims.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(read_f64()?);
        }
        Self::new(origin, spacing, dims, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        if path.extension().is_some_and(|e| e == "bin") {
            self.write_binary(file)
        } else {
            self.write_csv(file)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "bin") {
            Self::read_binary(&std::fs::read(path)?)
        } else {
            Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
        }
    }
}

const BIN_MAGIC: &[u8] = b"FSGRID1\0";

fn join<T: ToString>(it: impl Iterator<Item = T>) -> String {
    it.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_all<'a, T: std::str::FromStr>(it: impl Iterator<Item = &'a str>) -> Result<Vec<T>> {
    it.map(|s| s.trim().parse::<T>().map_err(|_| Error::Parse(format!("bad number '{s}'"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GridFunction {
        let g = GridFunction::covering(&[-1.0, -0.5], &[1.0, 0.5], 8, 1).unwrap();
        g.from_fn(|p| (1.0 - p[0] * p[0] - 4.0 * p[1] * p[1]).max(0.0))
    }

    #[test]
    fn covering_is_symmetric_about_box_centre() {
        let g = GridFunction::covering(&[0.0, 1.0], &[2.0, 2.0], 8, 2).unwrap();
        assert_eq!(g.spacing, 0.25);
        assert_eq!(g.dims, vec![12, 8]);
        let first = g.node(0);
        let last = g.node(g.len() - 1);
        assert!((first[0] + last[0] - 2.0).abs() < 1e-14);
        assert!((first[1] + last[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = sample();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GridFunction::read_csv(&buf[..]).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let g = sample();
        let mut buf = Vec::new();
        g.write_binary(&mut buf).unwrap();
        assert_eq!(GridFunction::read_binary(&buf).unwrap(), g);
        assert!(GridFunction::read_binary(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn rejects_mismatched_dims() {
        assert!(GridFunction::new(vec![0.0], 0.1, vec![3], vec![0.0; 4]).is_err());
        assert!(GridFunction::new(vec![0.0], -0.1, vec![1], vec![0.0]).is_err());
    }

    #[test]
    fn norms_of_constant_block() {
        let g = GridFunction::new(vec![0.0], 0.5, vec![4], vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        assert!((g.lp_norm(1.0) - 2.0).abs() < 1e-15);
        assert!((g.lp_norm(2.0) - 2.0).abs() < 1e-15);
        assert_eq!(g.lp_norm(f64::INFINITY), 2.0);
        assert!(g.has_zero_margin());
    }
}
