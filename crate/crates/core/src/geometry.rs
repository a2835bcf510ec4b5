//! Differential geometry of graph surfaces `x -> (x, h(x))` over the periodic
//! square.
//!
//! Gradients use central differences. The curvature sum `H` is the negative
//! central-difference divergence of the flux `Dh / J`, so its grid sum
//! telescopes to zero. Second derivatives use the compact three-point
//! stencils.

use crate::error::{Error, Result};
use crate::grid::{stencil, GridProfile, GridSpec};

/// Derived geometric fields of a profile, one entry per grid point.
#[derive(Clone, Debug)]
pub struct SurfaceGeometry {
    pub spec: GridSpec,
    /// `Dh`.
    pub grad: Vec<[f64; 2]>,
    /// `D^2 h`, symmetric.
    pub hess: Vec<[[f64; 2]; 2]>,
    /// `J = sqrt(1 + |Dh|^2)`.
    pub area_elem: Vec<f64>,
    /// Upward unit normal `(-Dh, 1) / J`.
    pub normal: Vec<[f64; 3]>,
    /// Sum of principal curvatures, flux form.
    pub curvature_sum: Vec<f64>,
    /// Sum of squared principal curvatures.
    pub shape_norm_sq: Vec<f64>,
    /// Curvature from the expanded formula `-lap h / J + <D^2h Dh, Dh> / J^3`.
    /// Agrees with `curvature_sum` to second order in the spacing.
    pub expanded_curvature: Vec<f64>,
}

impl SurfaceGeometry {
    /// Shape operator at grid point `k`, with its trace shifted to the flux
    /// curvature so that `k1 + k2 = H` holds exactly at grid level.
    pub fn shape_operator(&self, k: usize) -> [[f64; 2]; 2] {
        let [p1, p2] = self.grad[k];
        let j = self.area_elem[k];
        let d2 = self.hess[k];
        // S = -(1/J) (I + p p^T)^{-1} D^2h with (I + p p^T)^{-1} = I - p p^T / J^2
        let j2 = j * j;
        let g = [
            [1.0 - p1 * p1 / j2, -p1 * p2 / j2],
            [-p2 * p1 / j2, 1.0 - p2 * p2 / j2],
        ];
        let mut s = [[0.0; 2]; 2];
        for (r, srow) in s.iter_mut().enumerate() {
            for (c, sv) in srow.iter_mut().enumerate() {
                *sv = -(g[r][0] * d2[0][c] + g[r][1] * d2[1][c]) / j;
            }
        }
        let shift = 0.5 * (self.curvature_sum[k] - (s[0][0] + s[1][1]));
        s[0][0] += shift;
        s[1][1] += shift;
        s
    }

    /// Principal curvatures `(k1, k2)` with `k1 <= k2`.
    pub fn principal_curvatures(&self, k: usize) -> (f64, f64) {
        let s = self.shape_operator(k);
        let half_tr = 0.5 * (s[0][0] + s[1][1]);
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        // S is self-adjoint in the surface metric, so the discriminant is >= 0
        let disc = (half_tr * half_tr - det).max(0.0).sqrt();
        (half_tr - disc, half_tr + disc)
    }

    /// `|H|^{p-2} H`, continuous at `H = 0` for `p > 2`.
    pub fn curvature_power(&self, p: f64) -> Vec<f64> {
        self.curvature_sum.iter().map(|&h| signed_power(h, p - 1.0)).collect()
    }
}

/// `|x|^{q-1} x`, i.e. `sign(x) |x|^q`.
#[inline]
pub fn signed_power(x: f64, q: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(q)
    }
}

pub fn differentiate(h: &GridProfile) -> Result<SurfaceGeometry> {
    let spec = *h.spec();
    let vals = h.values();
    if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            i: k / spec.n(),
            j: k % spec.n(),
            value: vals[k],
        });
    }
    let p1 = stencil::central(&spec, vals, 0);
    let p2 = stencil::central(&spec, vals, 1);
    let len = spec.len();
    let mut area_elem = Vec::with_capacity(len);
    let mut flux1 = Vec::with_capacity(len);
    let mut flux2 = Vec::with_capacity(len);
    for k in 0..len {
        let j = (1.0 + p1[k] * p1[k] + p2[k] * p2[k]).sqrt();
        area_elem.push(j);
        flux1.push(p1[k] / j);
        flux2.push(p2[k] / j);
    }
    let mut curvature_sum = stencil::divergence(&spec, &flux1, &flux2);
    for v in curvature_sum.iter_mut() {
        *v = -*v;
    }
    let compact = stencil::hessian(&spec, vals);
    let hess: Vec<[[f64; 2]; 2]> = compact.iter().map(|&[xx, xy, yy]| [[xx, xy], [xy, yy]]).collect();
    let grad: Vec<[f64; 2]> = p1.iter().zip(&p2).map(|(&a, &b)| [a, b]).collect();
    let normal = grad
        .iter()
        .zip(&area_elem)
        .map(|(&[a, b], &j)| [-a / j, -b / j, 1.0 / j])
        .collect();
    let expanded_curvature = grad
        .iter()
        .zip(&hess)
        .zip(&area_elem)
        .map(|((&p, d2), &j)| {
            let lap = d2[0][0] + d2[1][1];
            let quad = p[0] * (d2[0][0] * p[0] + d2[0][1] * p[1]) + p[1] * (d2[1][0] * p[0] + d2[1][1] * p[1]);
            -lap / j + quad / (j * j * j)
        })
        .collect();
    let mut geom = SurfaceGeometry {
        spec,
        grad,
        hess,
        area_elem,
        normal,
        curvature_sum,
        shape_norm_sq: vec![0.0; len],
        expanded_curvature,
    };
    for k in 0..len {
        let (k1, k2) = geom.principal_curvatures(k);
        geom.shape_norm_sq[k] = k1 * k1 + k2 * k2;
    }
    Ok(geom)
}

/// Discrete `W^{2,p}` norm `(sum (|h|^p + |Dh|^p + |D^2h|^p) s^2)^{1/p}`.
pub fn sobolev_w2p_norm(h: &GridProfile, p: f64) -> Result<f64> {
    if !(p > 2.0) {
        return Err(Error::InvalidParameter(format!("Sobolev exponent must exceed 2, got {p}")));
    }
    let geom = differentiate(h)?;
    let sum: f64 = (0..h.spec().len())
        .map(|k| {
            let [a, b] = geom.grad[k];
            let d = geom.hess[k];
            let hnorm = (d[0][0] * d[0][0] + d[0][1] * d[0][1] + d[1][0] * d[1][0] + d[1][1] * d[1][1]).sqrt();
            h.values()[k].abs().powf(p) + (a * a + b * b).sqrt().powf(p) + hnorm.powf(p)
        })
        .sum();
    Ok((sum * h.spec().cell_area()).powf(1.0 / p))
}

/// `max |Dh|` over the grid.
pub fn lipschitz_seminorm(h: &GridProfile) -> f64 {
    let spec = h.spec();
    let p1 = stencil::central(spec, h.values(), 0);
    let p2 = stencil::central(spec, h.values(), 1);
    p1.iter()
        .zip(&p2)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .fold(0.0, f64::max)
}
