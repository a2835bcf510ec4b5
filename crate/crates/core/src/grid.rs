//! Uniform periodic grids over the square `(0, ell)^2` and the height profiles
//! sampled on them.
//!
//! Grid point `(i, j)` sits at `x = (i * spacing, j * spacing)`; index `i`
//! runs along `x1` and `j` along `x2`. Fields are stored row-major with the
//! flat index `i * n + j`, and every stencil wraps modulo `n` in both axes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Minimum number of samples per axis.
pub const MIN_SAMPLES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    ell: f64,
    n: usize,
}

impl GridSpec {
    pub fn new(ell: f64, n: usize) -> Result<Self> {
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::InvalidGrid(format!("side length must be positive, got {ell}")));
        }
        if n < MIN_SAMPLES {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_SAMPLES} samples per axis, got {n}"
            )));
        }
        Ok(GridSpec { ell, n })
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.ell / self.n as f64
    }

    /// Quadrature weight of one grid point.
    pub fn cell_area(&self) -> f64 {
        let s = self.spacing();
        s * s
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n + j
    }

    /// Index with periodic wrap-around of signed offsets.
    #[inline]
    pub fn wrapped(&self, i: isize, j: isize) -> usize {
        let n = self.n as isize;
        self.index(i.rem_euclid(n) as usize, j.rem_euclid(n) as usize)
    }

    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        let s = self.spacing();
        (i as f64 * s, j as f64 * s)
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "grid (ell={}, n={}) vs (ell={}, n={})",
                self.ell, self.n, other.ell, other.n
            )))
        }
    }
}

/// Film thickness sampled on a periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridProfile {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridProfile {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                i: k / spec.n(),
                j: k % spec.n(),
                value: values[k],
            });
        }
        Ok(GridProfile { spec, values })
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        GridProfile {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let n = spec.n();
        let mut values = Vec::with_capacity(spec.len());
        for i in 0..n {
            for j in 0..n {
                let (x1, x2) = spec.coords(i, j);
                values.push(f(x1, x2));
            }
        }
        GridProfile::new(spec, values)
    }

    /// `amplitude * cos(2 pi (k1 x1 + k2 x2) / ell + phase)` added to `mean`.
    pub fn fourier_mode(spec: GridSpec, mean: f64, amplitude: f64, k: [i32; 2], phase: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI / spec.ell();
        GridProfile::from_fn(spec, |x1, x2| {
            mean + amplitude * (w * (k[0] as f64 * x1 + k[1] as f64 * x2) + phase).cos()
        })
        .expect("trigonometric profile is finite")
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.index(i, j)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Membership in the admissible class: finite and nonnegative.
    pub fn is_admissible(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Grid integral of the profile.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_area()
    }

    /// `self + t * direction`, used by line searches.
    pub fn offset(&self, direction: &[f64], t: f64) -> GridProfile {
        debug_assert_eq!(direction.len(), self.values.len());
        GridProfile {
            spec: self.spec,
            values: self
                .values
                .iter()
                .zip(direction)
                .map(|(h, d)| h + t * d)
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridProfile {
        GridProfile {
            spec: self.spec,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Maximum absolute pointwise difference.
    pub fn max_abs_diff(&self, other: &GridProfile) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Structured-grid text: header `ell n`, then `n` rows of `n` heights.
    pub fn to_text(&self) -> String {
        let n = self.spec.n();
        let mut out = String::with_capacity(n * n * 25 + 32);
        let _ = writeln!(out, "{} {}", fmt_num(self.spec.ell()), n);
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| fmt_num(self.get(i, j))).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header line `ell n`".into(),
        })?;
        let mut parts = header.split_whitespace();
        let parse_err = |line: usize, message: String| Error::Parse { line: line + 1, message };
        let ell: f64 = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(hline, "header must start with the side length".into()))?;
        let n: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(hline, "header must give the sample count".into()))?;
        if parts.next().is_some() {
            return Err(parse_err(hline, "header has extra tokens".into()));
        }
        let spec = GridSpec::new(ell, n)?;
        let mut values = Vec::with_capacity(spec.len());
        let mut rows = 0;
        for (lno, line) in lines {
            if rows == n {
                return Err(parse_err(lno, format!("more than {n} rows")));
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(lno, format!("bad number: {e}")))?;
            if row.len() != n {
                return Err(parse_err(lno, format!("expected {n} values, found {}", row.len())));
            }
            values.extend(row);
            rows += 1;
        }
        if rows != n {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: format!("expected {n} rows, found {rows}"),
            });
        }
        GridProfile::new(spec, values)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GridProfile::parse_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Periodic finite-difference stencils acting on flat row-major fields.
pub(crate) mod stencil {
    use super::GridSpec;

    /// Central difference `(f[i+1] - f[i-1]) / 2s` along `axis` (0 = x1, 1 = x2).
    pub fn central(spec: &GridSpec, f: &[f64], axis: usize) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        central_into(spec, f, axis, &mut out);
        out
    }

    pub fn central_into(spec: &GridSpec, f: &[f64], axis: usize, out: &mut [f64]) {
        let n = spec.n();
        let inv = 0.5 / spec.spacing();
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for j in 0..n {
                let jp = (j + 1) % n;
                let jm = (j + n - 1) % n;
                let (a, b) = if axis == 0 {
                    (f[ip * n + j], f[im * n + j])
                } else {
                    (f[i * n + jp], f[i * n + jm])
                };
                out[i * n + j] = (a - b) * inv;
            }
        }
    }

    /// Compact second differences `(f_xx, f_xy, f_yy)`.
    pub fn hessian(spec: &GridSpec, f: &[f64]) -> Vec<[f64; 3]> {
        let n = spec.n();
        let s = spec.spacing();
        let inv2 = 1.0 / (s * s);
        let inv4 = 0.25 * inv2;
        let mut out = vec![[0.0; 3]; f.len()];
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            for j in 0..n {
                let jp = (j + 1) % n;
                let jm = (j + n - 1) % n;
                let c = f[i * n + j];
                let xx = (f[ip * n + j] - 2.0 * c + f[im * n + j]) * inv2;
                let yy = (f[i * n + jp] - 2.0 * c + f[i * n + jm]) * inv2;
                let xy = (f[ip * n + jp] - f[ip * n + jm] - f[im * n + jp] + f[im * n + jm]) * inv4;
                out[i * n + j] = [xx, xy, yy];
            }
        }
        out
    }

    /// Central-difference divergence of the vector field `(a, b)`.
    pub fn divergence(spec: &GridSpec, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = central(spec, a, 0);
        let db = central(spec, b, 1);
        for (o, d) in out.iter_mut().zip(db) {
            *o += d;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(-1.0, 16).is_err());
        assert!(GridSpec::new(0.0, 16).is_err());
        assert!(GridSpec::new(1.0, 4).is_err());
        assert!(GridSpec::new(1.0, 8).is_ok());
    }

    #[test]
    fn rejects_non_finite_with_location() {
        let spec = GridSpec::new(1.0, 8).unwrap();
        let mut v = vec![1.0; 64];
        v[8 * 3 + 5] = f64::NAN;
        match GridProfile::new(spec, v) {
            Err(Error::NonFinite { i, j, .. }) => assert_eq!((i, j), (3, 5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let spec = GridSpec::new(2.5, 8).unwrap();
        let h = GridProfile::from_fn(spec, |x, y| 0.3 + 0.01 * (x * 1.7).sin() * (y * 0.3).cos()).unwrap();
        let back = GridProfile::parse_text(&h.to_text()).unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "1.0 8\n".to_string() + &"1 1 1 1 1 1 1 1\n".repeat(3) + "1 1 x 1 1 1 1 1\n";
        match GridProfile::parse_text(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn central_difference_is_antisymmetric() {
        // sum f * D g == - sum D f * g on a periodic grid
        let spec = GridSpec::new(1.0, 12).unwrap();
        let f: Vec<f64> = (0..144).map(|k| ((k * 37 % 19) as f64).sin()).collect();
        let g: Vec<f64> = (0..144).map(|k| ((k * 11 % 23) as f64).cos()).collect();
        for axis in 0..2 {
            let dg = stencil::central(&spec, &g, axis);
            let df = stencil::central(&spec, &f, axis);
            let lhs: f64 = f.iter().zip(&dg).map(|(a, b)| a * b).sum();
            let rhs: f64 = df.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!((lhs + rhs).abs() < 1e-12, "{lhs} {rhs}");
        }
    }
}
