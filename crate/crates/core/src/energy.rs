//! The configuration functional, the incremental objective with its
//! penalization, and the discrete first variation.
//!
//! Everything here is the exact derivative of the discrete sums, built from
//! the same central-difference stencils as the geometry module, so pairing
//! the gradient field with a test field reproduces directional derivatives
//! up to rounding.

use crate::anisotropy::Anisotropy;
use crate::elasticity::ElasticState;
use crate::error::{Error, Result};
use crate::geometry::{differentiate, signed_power, SurfaceGeometry};
use crate::grid::{fmt_num, stencil, GridProfile, GridSpec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizationParams {
    pub epsilon: f64,
    pub p: f64,
    pub tau: f64,
    pub lambda0: f64,
}

impl RegularizationParams {
    pub fn new(epsilon: f64, p: f64, tau: f64, lambda0: f64) -> Result<Self> {
        let params = RegularizationParams {
            epsilon,
            p,
            tau,
            lambda0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            bad.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.p > 2.0 && self.p.is_finite()) {
            bad.push(format!("p must exceed 2, got {}", self.p));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            bad.push(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            bad.push(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(bad.join("; ")))
        }
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.epsilon, self.p, tau, self.lambda0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub elastic: f64,
    pub surface_aniso: f64,
    pub surface_reg: f64,
    /// Elastic plus surface parts; the penalization is kept apart.
    pub total: f64,
    pub penalization: f64,
}

impl EnergyBreakdown {
    fn from_parts(elastic: f64, surface_aniso: f64, surface_reg: f64, penalization: f64) -> Self {
        EnergyBreakdown {
            elastic,
            surface_aniso,
            surface_reg,
            total: elastic + surface_aniso + surface_reg,
            penalization,
        }
    }

    /// The incremental objective `total + penalization`.
    pub fn objective(&self) -> f64 {
        self.total + self.penalization
    }

    pub const CSV_HEADER: &'static str = "step,time,elastic,surface_aniso,surface_reg,penalization,total";

    pub fn csv_row(&self, step: usize, time: f64) -> String {
        format!(
            "{step},{},{},{},{},{},{}",
            fmt_num(time),
            fmt_num(self.elastic),
            fmt_num(self.surface_aniso),
            fmt_num(self.surface_reg),
            fmt_num(self.penalization),
            fmt_num(self.total)
        )
    }
}

fn surface_parts(geom: &SurfaceGeometry, psi: &Anisotropy, params: &RegularizationParams) -> (f64, f64) {
    let area = geom.spec.cell_area();
    let mut aniso = 0.0;
    let mut reg = 0.0;
    for k in 0..geom.spec.len() {
        let [p1, p2] = geom.grad[k];
        aniso += psi.value([-p1, -p2, 1.0]);
        reg += geom.curvature_sum[k].abs().powf(params.p) * geom.area_elem[k];
    }
    (aniso * area, params.epsilon / params.p * reg * area)
}

/// Surface parts only: `sum psi(-Dh, 1) s^2` and `(eps / p) sum |H|^p J s^2`.
pub fn surface_energy(h: &GridProfile, psi: &Anisotropy, params: &RegularizationParams) -> Result<EnergyBreakdown> {
    let geom = differentiate(h)?;
    let (a, r) = surface_parts(&geom, psi, params);
    Ok(EnergyBreakdown::from_parts(0.0, a, r, 0.0))
}

/// `F(h, u)` for a state solved on `h`.
pub fn total_energy(
    h: &GridProfile,
    state: &ElasticState,
    psi: &Anisotropy,
    params: &RegularizationParams,
) -> Result<EnergyBreakdown> {
    check_state(h, state)?;
    let s = surface_energy(h, psi, params)?;
    Ok(EnergyBreakdown::from_parts(state.energy(), s.surface_aniso, s.surface_reg, 0.0))
}

fn check_state(h: &GridProfile, state: &ElasticState) -> Result<()> {
    h.spec().check_same(state.mesh().grid())?;
    if h.max_abs_diff(state.heights()) != 0.0 {
        return Err(Error::GridMismatch("elastic state was solved on a different profile".into()));
    }
    Ok(())
}

/// `(1 / 2 tau) sum (h - h_prev)^2 / J_prev s^2`.
pub fn penalization(h: &GridProfile, h_prev: &GridProfile, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    h.spec().check_same(h_prev.spec())?;
    let jp = area_elements(h_prev);
    let sum: f64 = h
        .values()
        .iter()
        .zip(h_prev.values())
        .zip(&jp)
        .map(|((a, b), j)| (a - b) * (a - b) / j)
        .sum();
    Ok(sum * h.spec().cell_area() / (2.0 * tau))
}

pub(crate) fn area_elements(h: &GridProfile) -> Vec<f64> {
    let spec = h.spec();
    let p1 = stencil::central(spec, h.values(), 0);
    let p2 = stencil::central(spec, h.values(), 1);
    p1.iter().zip(&p2).map(|(a, b)| (1.0 + a * a + b * b).sqrt()).collect()
}

/// The incremental objective at `h` with the displacement remainder of
/// `state` held fixed on the mapped slab.
pub fn incremental_objective(
    h: &GridProfile,
    h_prev: &GridProfile,
    state: &ElasticState,
    psi: &Anisotropy,
    params: &RegularizationParams,
) -> Result<EnergyBreakdown> {
    let elastic = state.frozen_energy(h)?;
    let s = surface_energy(h, psi, params)?;
    let pen = penalization(h, h_prev, params.tau)?;
    Ok(EnergyBreakdown::from_parts(elastic, s.surface_aniso, s.surface_reg, pen))
}

/// The first-variation field split by origin. Each field `g` is an `L^2`
/// density: the directional derivative along `phi` is `sum g phi s^2`.
#[derive(Clone, Debug)]
pub struct VariationTerms {
    pub elastic: Vec<f64>,
    pub anisotropy: Vec<f64>,
    pub regularization: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl VariationTerms {
    pub fn total(&self) -> Vec<f64> {
        (0..self.elastic.len())
            .map(|k| self.elastic[k] + self.anisotropy[k] + self.regularization[k] + self.velocity[k])
            .collect()
    }
}

/// Gradient of the incremental objective with the displacement frozen.
pub fn first_variation(
    h: &GridProfile,
    state: &ElasticState,
    h_prev: &GridProfile,
    psi: &Anisotropy,
    params: &RegularizationParams,
) -> Result<Vec<f64>> {
    Ok(first_variation_terms(h, state, h_prev, psi, params)?.total())
}

pub fn first_variation_terms(
    h: &GridProfile,
    state: &ElasticState,
    h_prev: &GridProfile,
    psi: &Anisotropy,
    params: &RegularizationParams,
) -> Result<VariationTerms> {
    h.spec().check_same(h_prev.spec())?;
    let spec = h.spec();
    let geom = differentiate(h)?;
    let area = spec.cell_area();
    let elastic: Vec<f64> = state.frozen_energy_gradient(h)?.into_iter().map(|g| g / area).collect();
    let jp = area_elements(h_prev);
    let velocity = h
        .values()
        .iter()
        .zip(h_prev.values())
        .zip(&jp)
        .map(|((a, b), j)| (a - b) / (params.tau * j))
        .collect();
    Ok(VariationTerms {
        elastic,
        anisotropy: anisotropy_gradient(&geom, psi),
        regularization: regularization_gradient(&geom, params),
        velocity,
    })
}

/// `D1 psi_1 + D2 psi_2` with `psi_k` evaluated at `(-Dh, 1)`.
fn anisotropy_gradient(geom: &SurfaceGeometry, psi: &Anisotropy) -> Vec<f64> {
    let len = geom.spec.len();
    let mut g1 = Vec::with_capacity(len);
    let mut g2 = Vec::with_capacity(len);
    for &[p1, p2] in &geom.grad {
        let g = psi.grad([-p1, -p2, 1.0]);
        g1.push(g[0]);
        g2.push(g[1]);
    }
    stencil::divergence(&geom.spec, &g1, &g2)
}

/// Gradient of `(eps / p) sum |H|^p J s^2` through the flux curvature.
fn regularization_gradient(geom: &SurfaceGeometry, params: &RegularizationParams) -> Vec<f64> {
    let spec = &geom.spec;
    let len = spec.len();
    let eps = params.epsilon;
    let weight: Vec<f64> = (0..len)
        .map(|k| eps * signed_power(geom.curvature_sum[k], params.p - 1.0) * geom.area_elem[k])
        .collect();
    let a1 = stencil::central(spec, &weight, 0);
    let a2 = stencil::central(spec, &weight, 1);
    let mut q1 = vec![0.0; len];
    let mut q2 = vec![0.0; len];
    for k in 0..len {
        let [p1, p2] = geom.grad[k];
        let j = geom.area_elem[k];
        let j3 = j * j * j;
        let ap = a1[k] * p1 + a2[k] * p2;
        let area_term = eps / params.p * geom.curvature_sum[k].abs().powf(params.p) / j;
        q1[k] = a1[k] / j - ap * p1 / j3 + area_term * p1;
        q2[k] = a2[k] / j - ap * p2 / j3 + area_term * p2;
    }
    let mut g = stencil::divergence(spec, &q1, &q2);
    for v in g.iter_mut() {
        *v = -*v;
    }
    g
}

/// Directional derivative of the discrete curvature sum along `phi`.
pub fn curvature_derivative(h: &GridProfile, phi: &[f64]) -> Result<Vec<f64>> {
    let geom = differentiate(h)?;
    check_len(h.spec(), phi)?;
    Ok(curvature_derivative_with(&geom, phi))
}

fn curvature_derivative_with(geom: &SurfaceGeometry, phi: &[f64]) -> Vec<f64> {
    let spec = &geom.spec;
    let d1 = stencil::central(spec, phi, 0);
    let d2 = stencil::central(spec, phi, 1);
    let mut f1 = vec![0.0; phi.len()];
    let mut f2 = vec![0.0; phi.len()];
    for k in 0..phi.len() {
        let [p1, p2] = geom.grad[k];
        let j = geom.area_elem[k];
        let pd = p1 * d1[k] + p2 * d2[k];
        f1[k] = d1[k] / j - p1 * pd / (j * j * j);
        f2[k] = d2[k] / j - p2 * pd / (j * j * j);
    }
    let mut out = stencil::divergence(spec, &f1, &f2);
    for v in out.iter_mut() {
        *v = -*v;
    }
    out
}

/// The same derivative in expanded form, `-lap phi / J + lap h <Dh, Dphi> / J^3
/// + (2 <D^2h Dh, Dphi> + <D^2phi Dh, Dh>) / J^3 - 3 <D^2h Dh, Dh> <Dh, Dphi> / J^5`,
/// on compact second differences. Agrees with [`curvature_derivative`] to
/// second order in the spacing.
pub fn curvature_derivative_expanded(h: &GridProfile, phi: &[f64]) -> Result<Vec<f64>> {
    let geom = differentiate(h)?;
    check_len(h.spec(), phi)?;
    let spec = h.spec();
    let d1 = stencil::central(spec, phi, 0);
    let d2 = stencil::central(spec, phi, 1);
    let hp = stencil::hessian(spec, phi);
    Ok((0..phi.len())
        .map(|k| {
            let p = geom.grad[k];
            let j = geom.area_elem[k];
            let hh = geom.hess[k];
            let dp = [d1[k], d2[k]];
            let [xx, xy, yy] = hp[k];
            let lap_phi = xx + yy;
            let lap_h = hh[0][0] + hh[1][1];
            let pd = p[0] * dp[0] + p[1] * dp[1];
            let hpv = [hh[0][0] * p[0] + hh[0][1] * p[1], hh[1][0] * p[0] + hh[1][1] * p[1]];
            let hp_dphi = hpv[0] * dp[0] + hpv[1] * dp[1];
            let hp_p = hpv[0] * p[0] + hpv[1] * p[1];
            let phipp = xx * p[0] * p[0] + 2.0 * xy * p[0] * p[1] + yy * p[1] * p[1];
            let j3 = j * j * j;
            -lap_phi / j + lap_h * pd / j3 + (2.0 * hp_dphi + phipp) / j3 - 3.0 * hp_p * pd / (j3 * j * j)
        })
        .collect())
}

fn check_len(spec: &GridSpec, phi: &[f64]) -> Result<()> {
    if phi.len() != spec.len() {
        return Err(Error::GridMismatch(format!(
            "test field has {} entries, expected {}",
            phi.len(),
            spec.len()
        )));
    }
    Ok(())
}

/// Directional derivative assembled term by term in forward mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pairing {
    pub elastic: f64,
    pub anisotropy: f64,
    pub area: f64,
    pub curvature: f64,
    pub velocity: f64,
}

impl Pairing {
    pub fn total(&self) -> f64 {
        self.elastic + self.anisotropy + self.area + self.curvature + self.velocity
    }
}

/// `<g, phi>` computed without the adjoint: every term is differentiated
/// along `phi` directly.
pub fn pair_variation(
    h: &GridProfile,
    state: &ElasticState,
    h_prev: &GridProfile,
    psi: &Anisotropy,
    params: &RegularizationParams,
    phi: &[f64],
) -> Result<Pairing> {
    check_len(h.spec(), phi)?;
    h.spec().check_same(h_prev.spec())?;
    let spec = h.spec();
    let area = spec.cell_area();
    let geom = differentiate(h)?;
    let d1 = stencil::central(spec, phi, 0);
    let d2 = stencil::central(spec, phi, 1);
    let dh = curvature_derivative_with(&geom, phi);
    let el = state.frozen_energy_gradient(h)?;
    let jp = area_elements(h_prev);
    let mut out = Pairing {
        elastic: 0.0,
        anisotropy: 0.0,
        area: 0.0,
        curvature: 0.0,
        velocity: 0.0,
    };
    for k in 0..spec.len() {
        let [p1, p2] = geom.grad[k];
        let j = geom.area_elem[k];
        let hk = geom.curvature_sum[k];
        let g = psi.grad([-p1, -p2, 1.0]);
        out.elastic += el[k] * phi[k];
        out.anisotropy -= g[0] * d1[k] + g[1] * d2[k];
        out.area += params.epsilon / params.p * hk.abs().powf(params.p) * (p1 * d1[k] + p2 * d2[k]) / j;
        out.curvature += params.epsilon * signed_power(hk, params.p - 1.0) * j * dh[k];
        out.velocity += (h.values()[k] - h_prev.values()[k]) * phi[k] / (params.tau * jp[k]);
    }
    out.anisotropy *= area;
    out.area *= area;
    out.curvature *= area;
    out.velocity *= area;
    Ok(out)
}

/// Discrete `L^2` norm `(sum g^2 s^2)^{1/2}`.
pub fn l2_norm(spec: &GridSpec, g: &[f64]) -> f64 {
    (g.iter().map(|x| x * x).sum::<f64>() * spec.cell_area()).sqrt()
}
