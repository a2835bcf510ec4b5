//! Stability experiments around the flat film.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::anisotropy::{min_tangential_convexity, wulff_facet_test, Anisotropy, WulffReport};
use crate::elasticity::{solve_equilibrium, ElasticTensor, Mismatch, SlabMesh};
use crate::error::{Error, Result};
use crate::evolution::{run, EvolutionParams, EvolutionTrace, RunStatus};
use crate::geometry::{differentiate, sobolev_w2p_norm};
use crate::grid::{fmt_num, GridProfile, GridSpec};
use crate::stepper::StepParams;

/// Relative step of the second difference, as a fraction of `d`.
pub const SECOND_VARIATION_STEP: f64 = 1e-3;

/// Elastic energy plus the anisotropic surface energy, elasticity re-solved.
fn reduced_energy(h: &GridProfile, tensor: &ElasticTensor, mismatch: &Mismatch, psi: &Anisotropy, mesh: &SlabMesh) -> Result<f64> {
    let state = solve_equilibrium(h, tensor, mismatch, mesh)?;
    let geom = differentiate(h)?;
    let aniso: f64 = geom.grad.iter().map(|&[a, b]| psi.value([-a, -b, 1.0])).sum::<f64>() * h.spec().cell_area();
    Ok(state.energy() + aniso)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondVariation {
    pub value: f64,
    /// The same difference quotient at half the step.
    pub half_step: f64,
}

impl SecondVariation {
    /// Relative disagreement between the two step sizes.
    pub fn richardson_gap(&self) -> f64 {
        (self.value - self.half_step).abs() / self.value.abs().max(self.half_step.abs()).max(f64::MIN_POSITIVE)
    }
}

fn check_mode(mode: &GridProfile) -> Result<()> {
    let scale = mode.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mean = mode.mean();
    if mean.abs() > 1e-12 * scale.max(1.0) {
        return Err(Error::NonzeroMean(mean));
    }
    Ok(())
}

/// `(G(d + s phi) - 2 G(d) + G(d - s phi)) / s^2` with `s = 1e-3 d`.
pub fn second_variation_flat(
    d: f64,
    tensor: &ElasticTensor,
    mismatch: &Mismatch,
    psi: &Anisotropy,
    mode: &GridProfile,
    mesh: &SlabMesh,
) -> Result<f64> {
    Ok(second_variation_detailed(d, tensor, mismatch, psi, mode, mesh, false)?.value)
}

pub fn second_variation_detailed(
    d: f64,
    tensor: &ElasticTensor,
    mismatch: &Mismatch,
    psi: &Anisotropy,
    mode: &GridProfile,
    mesh: &SlabMesh,
    with_half_step: bool,
) -> Result<SecondVariation> {
    if !(d > 0.0) {
        return Err(Error::InvalidParameter(format!("flat height must be positive, got {d}")));
    }
    mesh.grid().check_same(mode.spec())?;
    check_mode(mode)?;
    let flat = GridProfile::constant(*mode.spec(), d);
    let g0 = reduced_energy(&flat, tensor, mismatch, psi, mesh)?;
    let quotient = |s: f64| -> Result<f64> {
        let gp = reduced_energy(&flat.offset(mode.values(), s), tensor, mismatch, psi, mesh)?;
        let gm = reduced_energy(&flat.offset(mode.values(), -s), tensor, mismatch, psi, mesh)?;
        Ok((gp - 2.0 * g0 + gm) / (s * s))
    };
    let s = SECOND_VARIATION_STEP * d;
    let value = quotient(s)?;
    let half_step = if with_half_step { quotient(0.5 * s)? } else { f64::NAN };
    Ok(SecondVariation { value, half_step })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeKind {
    Cos,
    Sin,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeValue {
    pub k: [i32; 2],
    pub kind: ModeKind,
    pub value: f64,
}

/// One representative of each `+-k` pair with `0 < |k| <= max_mode`.
pub fn fourier_modes(max_mode: u32) -> Vec<[i32; 2]> {
    let m = max_mode as i32;
    let mut out = Vec::new();
    for k1 in 0..=m {
        for k2 in -m..=m {
            if k1 == 0 && k2 <= 0 {
                continue;
            }
            if k1 * k1 + k2 * k2 <= m * m {
                out.push([k1, k2]);
            }
        }
    }
    out
}

pub fn mode_profile(spec: GridSpec, k: [i32; 2], kind: ModeKind) -> GridProfile {
    let phase = match kind {
        ModeKind::Cos => 0.0,
        ModeKind::Sin => -0.5 * PI,
    };
    GridProfile::fourier_mode(spec, 0.0, 1.0, k, phase)
}

pub fn second_variation_spectrum(
    d: f64,
    tensor: &ElasticTensor,
    mismatch: &Mismatch,
    psi: &Anisotropy,
    mesh: &SlabMesh,
    max_mode: u32,
) -> Result<Vec<ModeValue>> {
    let mut out = Vec::new();
    for k in fourier_modes(max_mode) {
        for kind in [ModeKind::Cos, ModeKind::Sin] {
            let mode = mode_profile(*mesh.grid(), k, kind);
            let value = second_variation_flat(d, tensor, mismatch, psi, &mode, mesh)?;
            out.push(ModeValue { k, kind, value });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Prechecks {
    pub min_tangential_convexity: f64,
    pub convexity_holds: bool,
    pub spectrum: Vec<ModeValue>,
    pub second_variation_positive: bool,
}

impl Prechecks {
    pub fn pass(&self) -> bool {
        self.convexity_holds && self.second_variation_positive
    }
}

pub fn prechecks(setup: &StabilitySetup) -> Result<Prechecks> {
    let min_conv = min_tangential_convexity(&setup.psi, setup.convexity_samples);
    let spectrum =
        second_variation_spectrum(setup.d, &setup.tensor, &setup.mismatch, &setup.psi, &setup.mesh, setup.max_mode)?;
    Ok(Prechecks {
        min_tangential_convexity: min_conv,
        convexity_holds: min_conv > 0.0,
        second_variation_positive: spectrum.iter().all(|m| m.value > 0.0),
        spectrum,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Convex,
    Faceted,
}

impl Regime {
    pub fn tag(&self) -> &'static str {
        match self {
            Regime::Convex => "convex",
            Regime::Faceted => "faceted",
        }
    }
}

#[derive(Clone, Debug)]
pub struct StabilitySetup {
    pub regime: Regime,
    pub d: f64,
    pub psi: Anisotropy,
    pub tensor: ElasticTensor,
    pub mismatch: Mismatch,
    pub mesh: SlabMesh,
    /// Zero-mean perturbation added to `d`.
    pub perturbation: GridProfile,
    pub evolution: EvolutionParams,
    pub step: StepParams,
    /// `sigma = sigma_factor * delta`.
    pub sigma_factor: f64,
    pub max_mode: u32,
    pub convexity_samples: usize,
}

#[derive(Clone, Debug)]
pub struct AsymptoticData {
    /// `(t, distance)` at steps 1, 2, 4, ... and the final step.
    pub samples: Vec<(f64, f64)>,
    pub decayed: bool,
    pub terminal_residual: f64,
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub regime: Regime,
    pub d: f64,
    /// Initial distance `|h0 - d|_{W^{2,p}}`.
    pub delta: f64,
    pub sigma: f64,
    pub prechecks: Option<Prechecks>,
    pub wulff: Option<WulffReport>,
    /// `(t, distance)` after every step, starting at `t = 0`.
    pub distances: Vec<(f64, f64)>,
    pub sup_distance: f64,
    pub bounded: bool,
    pub run_status: RunStatus,
    pub asymptotic: Option<AsymptoticData>,
}

impl StabilityReport {
    /// Whether the report asserts asymptotic stability.
    pub fn asymptotic_claim(&self) -> bool {
        self.asymptotic.as_ref().is_some_and(|a| a.decayed)
    }
}

fn distance(h: &GridProfile, d: f64, p: f64) -> Result<f64> {
    sobolev_w2p_norm(&h.map(|v| v - d), p)
}

fn evolve(setup: &StabilitySetup) -> Result<(EvolutionTrace, Vec<(f64, f64)>, f64)> {
    check_mode(&setup.perturbation)?;
    let h0 = GridProfile::constant(*setup.mesh.grid(), setup.d).offset(setup.perturbation.values(), 1.0);
    let p = setup.step.regularization.p;
    let trace = run(&h0, &setup.psi, &setup.tensor, &setup.mismatch, &setup.mesh, &setup.evolution, &setup.step)?;
    let delta = distance(&h0, setup.d, p)?;
    let mut distances = vec![(0.0, delta)];
    for (rec, &t) in trace.records.iter().zip(&trace.times) {
        distances.push((t, distance(&rec.h_new, setup.d, p)?));
    }
    Ok((trace, distances, delta))
}

fn base_report(setup: &StabilitySetup, trace: &EvolutionTrace, distances: Vec<(f64, f64)>, delta: f64) -> StabilityReport {
    let sup = distances.iter().map(|x| x.1).fold(0.0, f64::max);
    let sigma = setup.sigma_factor * delta;
    let wulff = match setup.regime {
        Regime::Faceted => wulff_facet_test(&setup.psi, 4000).ok(),
        Regime::Convex => None,
    };
    StabilityReport {
        regime: setup.regime,
        d: setup.d,
        delta,
        sigma,
        prechecks: None,
        wulff,
        bounded: sup <= sigma,
        sup_distance: sup,
        distances,
        run_status: trace.status.clone(),
        asymptotic: None,
    }
}

/// Runs from `d + perturbation` and tracks the distance to the flat state.
pub fn lyapunov_experiment(setup: &StabilitySetup) -> Result<StabilityReport> {
    let (trace, distances, delta) = evolve(setup)?;
    Ok(base_report(setup, &trace, distances, delta))
}

/// Checks the convexity and second-variation hypotheses first; only when
/// both hold is the long run evaluated for decay. Otherwise the report
/// carries Lyapunov data alone.
pub fn asymptotic_experiment(setup: &StabilitySetup) -> Result<StabilityReport> {
    let checks = prechecks(setup)?;
    let (trace, distances, delta) = evolve(setup)?;
    let mut report = base_report(setup, &trace, distances, delta);
    if checks.pass() {
        let n = report.distances.len() - 1;
        let mut samples = Vec::new();
        let mut i = 1;
        while i <= n {
            samples.push(report.distances[i]);
            i *= 2;
        }
        if n >= 1 && samples.last().map(|s| s.0) != Some(report.distances[n].0) {
            samples.push(report.distances[n]);
        }
        let last = report.distances[n].1;
        report.asymptotic = Some(AsymptoticData {
            samples,
            decayed: n >= 1 && last <= 0.1 * report.distances[0].1,
            terminal_residual: trace.records.last().map_or(0.0, |r| r.el_residual),
        });
    }
    report.prechecks = Some(checks);
    Ok(report)
}

impl StabilityReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "regime = {}", self.regime.tag());
        let _ = writeln!(s, "d = {}", fmt_num(self.d));
        let _ = writeln!(s, "delta = {}", fmt_num(self.delta));
        let _ = writeln!(s, "sigma = {}", fmt_num(self.sigma));
        let _ = writeln!(s, "run_status = {}", self.run_status.label());
        let _ = writeln!(s, "sup_distance = {}", fmt_num(self.sup_distance));
        let _ = writeln!(s, "bounded = {}", self.bounded);
        if let Some(c) = &self.prechecks {
            let _ = writeln!(s, "min_tangential_convexity = {}", fmt_num(c.min_tangential_convexity));
            let _ = writeln!(s, "convexity_holds = {}", c.convexity_holds);
            let _ = writeln!(s, "second_variation_positive = {}", c.second_variation_positive);
            let min = c.spectrum.iter().map(|m| m.value).fold(f64::INFINITY, f64::min);
            let _ = writeln!(s, "min_second_variation = {}", fmt_num(min));
        }
        if let Some(w) = &self.wulff {
            let _ = writeln!(s, "facet_found = {}", w.facet_found);
            let _ = writeln!(s, "facet_radius = {}", fmt_num(w.facet_radius));
            let _ = writeln!(s, "facet_height = {}", fmt_num(w.facet_height));
        }
        match &self.asymptotic {
            Some(a) => {
                let _ = writeln!(s, "claim = asymptotic-stability-tested");
                let _ = writeln!(s, "decayed = {}", a.decayed);
                let _ = writeln!(s, "terminal_el_residual = {}", fmt_num(a.terminal_residual));
            }
            None => {
                let _ = writeln!(s, "claim = lyapunov-only");
            }
        }
        s
    }

    /// `k1,k2,kind,value` rows.
    pub fn spectrum_csv(&self) -> String {
        let mut s = String::from("k1,k2,kind,value\n");
        if let Some(c) = &self.prechecks {
            for m in &c.spectrum {
                let kind = match m.kind {
                    ModeKind::Cos => "cos",
                    ModeKind::Sin => "sin",
                };
                let _ = writeln!(s, "{},{},{kind},{}", m.k[0], m.k[1], fmt_num(m.value));
            }
        }
        s
    }

    pub fn distance_csv(&self) -> String {
        let mut s = String::from("time,distance\n");
        for (t, d) in &self.distances {
            let _ = writeln!(s, "{},{}", fmt_num(*t), fmt_num(*d));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_list_has_one_of_each_pair() {
        let modes = fourier_modes(1);
        assert_eq!(modes, vec![[0, 1], [1, 0]]);
        let m4 = fourier_modes(4);
        assert!(m4.iter().all(|k| !m4.contains(&[-k[0], -k[1]])));
        assert_eq!(m4.len(), 24);
    }

    fn flat_setup(n: usize, layers: usize) -> (SlabMesh, ElasticTensor) {
        let spec = GridSpec::new(1.0, n).unwrap();
        (SlabMesh::new(spec, layers).unwrap(), ElasticTensor::isotropic(1.0, 1.0).unwrap())
    }

    #[test]
    fn cosine_mode_matches_area_second_variation() {
        let (mesh, t) = flat_setup(64, 4);
        let mode = mode_profile(*mesh.grid(), [1, 0], ModeKind::Cos);
        let sv = second_variation_detailed(0.1, &t, &Mismatch::zero(), &Anisotropy::Isotropic, &mode, &mesh, true).unwrap();
        let exact = 2.0 * PI * PI;
        assert!((sv.value - exact).abs() <= 1e-2 * exact, "{} vs {exact}", sv.value);
        assert!(sv.richardson_gap() <= 1e-2);
        let double = mode.map(|v| 2.0 * v);
        let v2 = second_variation_flat(0.1, &t, &Mismatch::zero(), &Anisotropy::Isotropic, &double, &mesh).unwrap();
        assert!((v2 - 4.0 * sv.value).abs() <= 1e-3 * 4.0 * sv.value);
    }

    #[test]
    fn zero_mismatch_modes_are_orthogonal_and_nonnegative() {
        let (mesh, t) = flat_setup(16, 4);
        let psi = Anisotropy::cubic(0.05).unwrap();
        let q = |phi: &GridProfile| second_variation_flat(0.2, &t, &Mismatch::zero(), &psi, phi, &mesh).unwrap();
        let a = mode_profile(*mesh.grid(), [1, 0], ModeKind::Cos);
        for (k, kind) in [([0, 1], ModeKind::Cos), ([1, 0], ModeKind::Sin), ([1, 1], ModeKind::Cos)] {
            let b = mode_profile(*mesh.grid(), k, kind);
            let (qa, qb) = (q(&a), q(&b));
            assert!(qa >= 0.0 && qb >= 0.0);
            let plus = a.offset(b.values(), 1.0);
            let minus = a.offset(b.values(), -1.0);
            let cross = 0.25 * (q(&plus) - q(&minus));
            assert!(cross.abs() <= 1e-6 * qa.max(qb), "{k:?} {cross}");
        }
    }

    #[test]
    fn mismatch_lowers_the_second_variation() {
        let (mesh, t) = flat_setup(16, 4);
        let mode = mode_profile(*mesh.grid(), [1, 0], ModeKind::Cos);
        let values: Vec<f64> = [0.0, 0.05, 0.1]
            .iter()
            .map(|&e| {
                let m = if e == 0.0 { Mismatch::zero() } else { Mismatch::new(e, e).unwrap() };
                second_variation_flat(0.2, &t, &m, &Anisotropy::Isotropic, &mode, &mesh).unwrap()
            })
            .collect();
        assert!(values[0] > values[1] && values[1] > values[2], "{values:?}");
    }

    #[test]
    fn zero_perturbation_is_stationary() {
        let (mesh, t) = flat_setup(16, 4);
        let reg = crate::energy::RegularizationParams::new(1e-3, 3.0, 1e-3, 1.0).unwrap();
        let setup = StabilitySetup {
            regime: Regime::Convex,
            d: 0.2,
            psi: Anisotropy::Isotropic,
            tensor: t,
            mismatch: Mismatch::new(0.02, 0.02).unwrap(),
            perturbation: GridProfile::constant(*mesh.grid(), 0.0),
            mesh,
            evolution: EvolutionParams::new(3e-3, 1e-3, 1.0).unwrap(),
            step: StepParams::new(reg),
            sigma_factor: 10.0,
            max_mode: 1,
            convexity_samples: 200,
        };
        // stressed flat films thin uniformly but stay flat
        let (trace, _, _) = evolve(&setup).unwrap();
        for r in &trace.records {
            assert!(r.h_new.max() - r.h_new.min() <= 1e-14, "{}", r.h_new.max() - r.h_new.min());
            assert!(r.h_new.max() < 0.2);
        }
        let setup = StabilitySetup {
            mismatch: Mismatch::zero(),
            ..setup
        };
        let rep = lyapunov_experiment(&setup).unwrap();
        assert_eq!(rep.sup_distance, 0.0);
        assert_eq!(rep.distances.len(), 4);
        assert!(rep.bounded);
        assert!(!rep.asymptotic_claim());
    }

    #[test]
    fn nonzero_mean_mode_rejected() {
        let spec = GridSpec::new(1.0, 16).unwrap();
        let mesh = SlabMesh::new(spec, 4).unwrap();
        let t = ElasticTensor::isotropic(1.0, 1.0).unwrap();
        let bad = GridProfile::constant(spec, 0.1);
        let r = second_variation_flat(0.2, &t, &Mismatch::zero(), &Anisotropy::Isotropic, &bad, &mesh);
        assert!(matches!(r, Err(Error::NonzeroMean(_))));
    }
}
