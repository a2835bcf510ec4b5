//! Surface-tension densities: positively one-homogeneous functions on
//! `R^3 \ {0}` with closed-form gradients and Hessians, plus the convexity
//! and Wulff-facet diagnostics used by the stability experiments.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Built-in surface-tension families.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Anisotropy {
    /// `psi(xi) = |xi|`.
    Isotropic,
    /// `psi(xi) = |xi| (1 + a (xi1^4 + xi2^4 + xi3^4) / |xi|^4)`, `a > -1`.
    Cubic { a: f64 },
    /// Smoothed cylinder: `gamma/c_k * s_k(xi3) + beta * s_k(|xi'|)` with
    /// `s_k(t) = sqrt(t^2 + k^2 |xi|^2) - k |xi|` and `c_k = s_k(1)` at unit
    /// argument. Its Wulff shape carries an (approximate, up to the smoothing
    /// scale) horizontal top facet of radius `beta` at height `gamma`.
    Faceted { beta: f64, gamma: f64, smoothing: f64 },
}

pub const DEFAULT_FACET_SMOOTHING: f64 = 1e-3;

impl Anisotropy {
    pub fn cubic(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > -1.0) {
            return Err(Error::InvalidParameter(format!("cubic anisotropy needs a > -1, got {a}")));
        }
        Ok(Anisotropy::Cubic { a })
    }

    pub fn faceted(beta: f64, gamma: f64, smoothing: f64) -> Result<Self> {
        for (name, v) in [("beta", beta), ("gamma", gamma), ("smoothing", smoothing)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("faceted {name} must be positive, got {v}")));
            }
        }
        Ok(Anisotropy::Faceted { beta, gamma, smoothing })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Anisotropy::Isotropic => "isotropic",
            Anisotropy::Cubic { .. } => "cubic",
            Anisotropy::Faceted { .. } => "faceted",
        }
    }

    pub fn evaluate(&self, xi: Vec3) -> Result<f64> {
        check_nonzero(xi)?;
        Ok(self.value(xi))
    }

    pub fn gradient(&self, xi: Vec3) -> Result<Vec3> {
        check_nonzero(xi)?;
        Ok(self.grad(xi))
    }

    pub fn hessian(&self, xi: Vec3) -> Result<Mat3> {
        check_nonzero(xi)?;
        Ok(self.hess(xi))
    }

    /// Unchecked evaluation; `xi` must be nonzero.
    pub(crate) fn value(&self, xi: Vec3) -> f64 {
        let r = norm(xi);
        match *self {
            Anisotropy::Isotropic => r,
            Anisotropy::Cubic { a } => {
                let q = xi[0].powi(4) + xi[1].powi(4) + xi[2].powi(4);
                r + a * q / (r * r * r)
            }
            Anisotropy::Faceted { beta, gamma, smoothing: k } => {
                let (m, nn) = facet_metrics(k);
                let ck = (1.0 + k * k).sqrt() - k;
                gamma / ck * (quad_norm(nn, xi) - k * r) + beta * (quad_norm(m, xi) - k * r)
            }
        }
    }

    pub(crate) fn grad(&self, xi: Vec3) -> Vec3 {
        let r = norm(xi);
        match *self {
            Anisotropy::Isotropic => scale(xi, 1.0 / r),
            Anisotropy::Cubic { a } => {
                let q = xi[0].powi(4) + xi[1].powi(4) + xi[2].powi(4);
                let r3 = r * r * r;
                let r5 = r3 * r * r;
                let mut g = [0.0; 3];
                for i in 0..3 {
                    g[i] = xi[i] / r + a * (4.0 * xi[i].powi(3) / r3 - 3.0 * q * xi[i] / r5);
                }
                g
            }
            Anisotropy::Faceted { beta, gamma, smoothing: k } => {
                let (m, nn) = facet_metrics(k);
                let ck = (1.0 + k * k).sqrt() - k;
                let gn = quad_norm_grad(nn, xi);
                let gm = quad_norm_grad(m, xi);
                let mut g = [0.0; 3];
                for i in 0..3 {
                    let gr = xi[i] / r;
                    g[i] = gamma / ck * (gn[i] - k * gr) + beta * (gm[i] - k * gr);
                }
                g
            }
        }
    }

    pub(crate) fn hess(&self, xi: Vec3) -> Mat3 {
        let r = norm(xi);
        let iso = norm_hessian(xi, r);
        match *self {
            Anisotropy::Isotropic => iso,
            Anisotropy::Cubic { a } => {
                let q = xi[0].powi(4) + xi[1].powi(4) + xi[2].powi(4);
                let r3 = r * r * r;
                let r5 = r3 * r * r;
                let r7 = r5 * r * r;
                let mut h = iso;
                for i in 0..3 {
                    for j in 0..3 {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        let t = 12.0 * xi[i] * xi[i] * delta / r3
                            - 12.0 * xi[i].powi(3) * xi[j] / r5
                            - 12.0 * xi[j].powi(3) * xi[i] / r5
                            - 3.0 * q * delta / r5
                            + 15.0 * q * xi[i] * xi[j] / r7;
                        h[i][j] += a * t;
                    }
                }
                h
            }
            Anisotropy::Faceted { beta, gamma, smoothing: k } => {
                let (m, nn) = facet_metrics(k);
                let ck = (1.0 + k * k).sqrt() - k;
                let hn = quad_norm_hessian(nn, xi);
                let hm = quad_norm_hessian(m, xi);
                let mut h = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        h[i][j] = gamma / ck * (hn[i][j] - k * iso[i][j]) + beta * (hm[i][j] - k * iso[i][j]);
                    }
                }
                h
            }
        }
    }

    /// Constant `c` with `|xi| / c <= psi(xi) <= c |xi|`.
    pub fn frobenius_constant(&self) -> f64 {
        match *self {
            Anisotropy::Isotropic => 1.0,
            Anisotropy::Cubic { a } => {
                // q / r^4 ranges over [1/3, 1]
                let lo = (1.0 + a / 3.0).min(1.0 + a);
                let hi = (1.0 + a / 3.0).max(1.0 + a);
                hi.max(1.0 / lo)
            }
            Anisotropy::Faceted { .. } => {
                // axisymmetric: scan the polar angle, then pad for the sampling gap
                let steps = 100_000;
                let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
                for s in 0..=steps {
                    let th = PI * s as f64 / steps as f64;
                    let v = self.value([th.sin(), 0.0, th.cos()]);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                1.001 * hi.max(1.0 / lo)
            }
        }
    }
}

fn check_nonzero(xi: Vec3) -> Result<()> {
    if xi.iter().all(|v| *v == 0.0) || xi.iter().any(|v| !v.is_finite()) {
        Err(Error::ZeroVector)
    } else {
        Ok(())
    }
}

/// Diagonal metrics `(M, N)` of the two smoothed cylinder terms.
fn facet_metrics(k: f64) -> (Vec3, Vec3) {
    let k2 = k * k;
    ([1.0 + k2, 1.0 + k2, k2], [k2, k2, 1.0 + k2])
}

fn quad_norm(d: Vec3, xi: Vec3) -> f64 {
    (d[0] * xi[0] * xi[0] + d[1] * xi[1] * xi[1] + d[2] * xi[2] * xi[2]).sqrt()
}

fn quad_norm_grad(d: Vec3, xi: Vec3) -> Vec3 {
    let q = quad_norm(d, xi);
    [d[0] * xi[0] / q, d[1] * xi[1] / q, d[2] * xi[2] / q]
}

fn quad_norm_hessian(d: Vec3, xi: Vec3) -> Mat3 {
    let q = quad_norm(d, xi);
    let mx = [d[0] * xi[0], d[1] * xi[1], d[2] * xi[2]];
    let mut h = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] = -mx[i] * mx[j] / (q * q * q);
        }
        h[i][i] += d[i] / q;
    }
    h
}

fn norm_hessian(xi: Vec3, r: f64) -> Mat3 {
    let mut h = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            h[i][j] = -xi[i] * xi[j] / (r * r * r);
        }
        h[i][i] += 1.0 / r;
    }
    h
}

pub(crate) fn norm(x: Vec3) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn scale(x: Vec3, s: f64) -> Vec3 {
    [x[0] * s, x[1] * s, x[2] * s]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// An orthonormal basis of the plane orthogonal to the unit vector `xi`.
pub fn orthonormal_complement(xi: Vec3) -> (Vec3, Vec3) {
    let pick = if xi[0].abs() <= xi[1].abs() && xi[0].abs() <= xi[2].abs() {
        [1.0, 0.0, 0.0]
    } else if xi[1].abs() <= xi[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let w1 = cross(xi, pick);
    let w1 = scale(w1, 1.0 / norm(w1));
    let w2 = cross(xi, w1);
    (w1, scale(w2, 1.0 / norm(w2)))
}

fn restricted_min_eig(h: &Mat3, w1: Vec3, w2: Vec3) -> f64 {
    let apply = |w: Vec3| -> Vec3 {
        [
            h[0][0] * w[0] + h[0][1] * w[1] + h[0][2] * w[2],
            h[1][0] * w[0] + h[1][1] * w[1] + h[1][2] * w[2],
            h[2][0] * w[0] + h[2][1] * w[1] + h[2][2] * w[2],
        ]
    };
    let a = dot(w1, apply(w1));
    let b = 0.5 * (dot(w1, apply(w2)) + dot(w2, apply(w1)));
    let c = dot(w2, apply(w2));
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    mean - rad
}

/// Smallest eigenvalue of `D^2 psi(xi)` restricted to `xi^perp`.
pub fn tangential_convexity(psi: &Anisotropy, xi: Vec3) -> Result<f64> {
    check_nonzero(xi)?;
    let u = scale(xi, 1.0 / norm(xi));
    let (w1, w2) = orthonormal_complement(u);
    Ok(tangential_convexity_in_basis(psi, u, w1, w2))
}

pub(crate) fn tangential_convexity_in_basis(psi: &Anisotropy, u: Vec3, w1: Vec3, w2: Vec3) -> f64 {
    restricted_min_eig(&psi.hess(u), w1, w2)
}

/// Minimum tangential convexity over a Fibonacci sampling of the sphere.
pub fn min_tangential_convexity(psi: &Anisotropy, samples: usize) -> f64 {
    fibonacci_sphere(samples)
        .into_iter()
        .map(|u| {
            let (w1, w2) = orthonormal_complement(u);
            tangential_convexity_in_basis(psi, u, w1, w2)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn fibonacci_sphere(count: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Outcome of the horizontal-facet test on the Wulff shape.
#[derive(Clone, Debug, PartialEq)]
pub struct WulffReport {
    pub facet_found: bool,
    /// Largest radius `beta` with `{|x| <= beta, y = gamma}` inside the closed Wulff shape.
    pub facet_radius: f64,
    /// `gamma = psi(e3)`.
    pub facet_height: f64,
    pub min_tangential_hessian: f64,
    /// Largest violation of `gamma * nu3 <= psi(nu)`; positive means the top
    /// point `(0, 0, gamma)` lies outside the Wulff shape.
    pub top_violation: f64,
}

/// Support-plane tolerance.
pub const WULFF_TOLERANCE: f64 = 1e-8;
/// Smallest polar angle in the sampling ladder.
pub const WULFF_MIN_POLAR: f64 = 1e-2;

/// Samples the support planes `z . nu <= psi(nu)` of the Wulff shape on a
/// polar/azimuthal grid refined geometrically towards `e3`, and measures the
/// horizontal disc around `(0, 0, psi(e3))` that stays inside all of them.
///
/// For a density that is smooth at `e3` the admissible radius shrinks
/// linearly with the smallest sampled polar angle; a facet keeps it bounded
/// away from zero. Both the full ladder and the ladder without its finest
/// level are evaluated, and a facet is reported only when the radius
/// survives the refinement.
pub fn wulff_facet_test(psi: &Anisotropy, samples: usize) -> Result<WulffReport> {
    if samples < 1000 {
        return Err(Error::InvalidParameter(format!("need at least 1000 samples, got {samples}")));
    }
    let gamma = psi.value([0.0, 0.0, 1.0]);
    let n_azimuth = ((samples as f64).sqrt().round() as usize).max(8);
    let n_polar = (samples / n_azimuth).max(16);
    let n_ladder = n_polar / 3;
    let ladder_top = 0.5_f64;
    let mut polar: Vec<f64> = (0..n_ladder)
        .map(|i| WULFF_MIN_POLAR * (ladder_top / WULFF_MIN_POLAR).powf(i as f64 / (n_ladder - 1) as f64))
        .collect();
    let n_rest = n_polar - n_ladder;
    polar.extend((1..=n_rest).map(|i| ladder_top + (PI - ladder_top) * i as f64 / n_rest as f64));

    let mut beta_fine = f64::INFINITY;
    let mut beta_coarse = f64::INFINITY;
    let mut top_violation = f64::NEG_INFINITY;
    let mut min_hess = f64::INFINITY;
    for &th in &polar {
        for a in 0..n_azimuth {
            let phi = 2.0 * PI * a as f64 / n_azimuth as f64;
            let nu = [th.sin() * phi.cos(), th.sin() * phi.sin(), th.cos()];
            let val = psi.value(nu);
            let slack = val - gamma * nu[2];
            top_violation = top_violation.max(-slack);
            let horizontal = th.sin();
            if horizontal > 1e-12 {
                let radius = (slack + WULFF_TOLERANCE) / horizontal;
                beta_fine = beta_fine.min(radius);
                if th >= 2.0 * WULFF_MIN_POLAR {
                    beta_coarse = beta_coarse.min(radius);
                }
            }
            let (w1, w2) = orthonormal_complement(nu);
            min_hess = min_hess.min(tangential_convexity_in_basis(psi, nu, w1, w2));
        }
    }
    // e3 itself
    top_violation = top_violation.max(0.0);
    min_hess = min_hess.min(tangential_convexity(psi, [0.0, 0.0, 1.0])?);

    let on_boundary = top_violation <= WULFF_TOLERANCE;
    let survives = beta_fine >= 0.75 * beta_coarse;
    let facet_found = on_boundary && survives && beta_fine > WULFF_TOLERANCE;
    Ok(WulffReport {
        facet_found,
        facet_radius: if on_boundary { beta_fine.max(0.0) } else { 0.0 },
        facet_height: gamma,
        min_tangential_hessian: min_hess,
        top_violation,
    })
}
