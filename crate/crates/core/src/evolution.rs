//! The time loop of the minimizing-movements scheme, its safeguards and the
//! estimates recorded along the way.

use crate::anisotropy::Anisotropy;
use crate::elasticity::{solve_equilibrium_with, ElasticState, ElasticTensor, Mismatch, SlabMesh};
use crate::energy::{total_energy, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::geometry::{differentiate, lipschitz_seminorm, signed_power};
use crate::grid::{stencil, GridProfile};
use crate::stepper::{minimize_step, StepParams, StepRecord};

/// Slack allowed in the step-to-step energy comparison.
pub const ENERGY_SLACK: f64 = 1e-10;

#[derive(Clone, Copy, Debug)]
pub struct EvolutionParams {
    pub final_time: f64,
    pub tau: f64,
    pub lambda0: f64,
    /// `C0` as a fraction of `min h0`.
    pub floor_fraction: f64,
    /// Stop as soon as a step touches the gradient bound.
    pub stop_on_saturation: bool,
    /// Step halvings allowed when a step fails to converge.
    pub max_retries: usize,
}

impl EvolutionParams {
    pub fn new(final_time: f64, tau: f64, lambda0: f64) -> Result<Self> {
        let p = EvolutionParams {
            final_time,
            tau,
            lambda0,
            floor_fraction: 0.5,
            stop_on_saturation: false,
            max_retries: 3,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            bad.push(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.final_time >= self.tau && self.final_time.is_finite()) {
            bad.push(format!("final time {} must be at least tau", self.final_time));
        }
        if !(self.lambda0 > 0.0) {
            bad.push(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        if !(self.floor_fraction > 0.0 && self.floor_fraction < 1.0) {
            bad.push(format!("floor fraction must lie in (0, 1), got {}", self.floor_fraction));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(bad.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    /// A step left the safe region; its result was discarded.
    SafeguardStop(String),
    /// A step did not converge even after the allowed halvings.
    StepFailure(String),
    EnergyIncrease { step: usize, increase: f64 },
    /// The gradient bound became active and the run was asked to stop.
    Saturated,
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::SafeguardStop(_) => "safeguard-stop",
            RunStatus::StepFailure(_) => "step-failure",
            RunStatus::EnergyIncrease { .. } => "energy-increase",
            RunStatus::Saturated => "saturated",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionTrace {
    pub h0: GridProfile,
    pub state0: ElasticState,
    pub initial: EnergyBreakdown,
    pub records: Vec<StepRecord>,
    /// `times[i]` is the time of `records[i]`.
    pub times: Vec<f64>,
    pub taus: Vec<f64>,
    /// `sum tau |(h_i - h_{i-1}) / tau|^2_{L^2}`.
    pub dissipation: f64,
    /// `sum tau |D^2(|H|^{p-2} H)|^2_{L^2}`.
    pub curvature_regularity: f64,
    pub floor: f64,
    pub lambda0: f64,
    pub status: RunStatus,
}

impl EvolutionTrace {
    /// Time of the last recorded profile.
    pub fn safe_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// `2 sqrt(1 + lambda0^2) F(h0, u0)`.
    pub fn dissipation_bound(&self) -> f64 {
        2.0 * (1.0 + self.lambda0 * self.lambda0).sqrt() * self.initial.total
    }

    pub fn profile(&self, i: usize) -> &GridProfile {
        if i == 0 {
            &self.h0
        } else {
            &self.records[i - 1].h_new
        }
    }

    fn state(&self, i: usize) -> &ElasticState {
        if i == 0 {
            &self.state0
        } else {
            &self.records[i - 1].state
        }
    }

    fn time(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.times[i - 1]
        }
    }

    /// Energies `F(h_i, u_i)` including the initial one.
    pub fn energies(&self) -> Vec<f64> {
        std::iter::once(self.initial.total)
            .chain(self.records.iter().map(|r| r.breakdown.total))
            .collect()
    }
}

pub fn run(
    h0: &GridProfile,
    psi: &Anisotropy,
    tensor: &ElasticTensor,
    mismatch: &Mismatch,
    mesh: &SlabMesh,
    params: &EvolutionParams,
    step: &StepParams,
) -> Result<EvolutionTrace> {
    run_with_observer(h0, psi, tensor, mismatch, mesh, params, step, |_, _, _, _| Ok(()))
}

/// As [`run`], calling `observe(index, time, tau, record)` after every stored step.
#[allow(clippy::too_many_arguments)]
pub fn run_with_observer(
    h0: &GridProfile,
    psi: &Anisotropy,
    tensor: &ElasticTensor,
    mismatch: &Mismatch,
    mesh: &SlabMesh,
    params: &EvolutionParams,
    step: &StepParams,
    mut observe: impl FnMut(usize, f64, f64, &StepRecord) -> Result<()>,
) -> Result<EvolutionTrace> {
    params.validate()?;
    let lip0 = lipschitz_seminorm(h0);
    if !(lip0 < params.lambda0) || !(h0.min() > 0.0) {
        return Err(Error::Infeasible(format!(
            "initial profile needs |Dh| < {:e} and h > 0, has |Dh| = {lip0:e}, min h = {:e}",
            params.lambda0,
            h0.min()
        )));
    }
    let mut step = *step;
    step.regularization.lambda0 = params.lambda0;
    let floor = params.floor_fraction * h0.min();
    let state0 = solve_equilibrium_with(h0, tensor, mismatch, mesh, &step.solve, None)?;
    let initial = total_energy(h0, &state0, psi, &step.regularization)?;
    let mut trace = EvolutionTrace {
        h0: h0.clone(),
        state0,
        initial,
        records: Vec::new(),
        times: Vec::new(),
        taus: Vec::new(),
        dissipation: 0.0,
        curvature_regularity: 0.0,
        floor,
        lambda0: params.lambda0,
        status: RunStatus::Completed,
    };
    let end = params.final_time;
    let mut t = 0.0;
    while end - t > 1e-12 * end {
        let tau_full = params.tau.min(end - t);
        let last = trace.records.len();
        let (h_prev, u_prev) = (trace.profile(last).clone(), trace.state(last).clone());
        let prev_energy = trace.energies()[last];
        let mut tau = tau_full;
        let mut outcome = None;
        let mut failure = String::new();
        for _ in 0..=params.max_retries {
            let mut sp = step;
            sp.regularization = step.regularization.with_tau(tau)?;
            match minimize_step(&h_prev, &u_prev, psi, tensor, mismatch, &sp) {
                Ok(rec) if rec.converged => {
                    outcome = Some(rec);
                    break;
                }
                Ok(rec) => failure = format!("residual {:e} after {} updates at tau {tau:e}", rec.el_residual, rec.outer_iterations),
                Err(e) => failure = format!("{e} at tau {tau:e}"),
            }
            tau *= 0.5;
        }
        let Some(rec) = outcome else {
            trace.status = RunStatus::StepFailure(failure);
            break;
        };
        let lip = lipschitz_seminorm(&rec.h_new);
        let min = rec.h_new.min();
        if !(min >= floor) || !(lip < params.lambda0) {
            trace.status = RunStatus::SafeguardStop(format!(
                "at t = {:e}: min h = {min:e} (floor {floor:e}), |Dh| = {lip:e} (bound {:e})",
                t + tau,
                params.lambda0
            ));
            break;
        }
        let increase = rec.breakdown.total - prev_energy;
        if increase > ENERGY_SLACK {
            trace.status = RunStatus::EnergyIncrease {
                step: last + 1,
                increase,
            };
            break;
        }
        let grid = rec.h_new.spec();
        let velocity_sq: f64 = rec
            .h_new
            .values()
            .iter()
            .zip(h_prev.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            * grid.cell_area()
            / (tau * tau);
        trace.dissipation += tau * velocity_sq;
        trace.curvature_regularity += tau * curvature_hessian_sq(&rec.h_new, step.regularization.p)?;
        t += tau;
        let saturated = rec.constraint_active;
        trace.times.push(t);
        trace.taus.push(tau);
        trace.records.push(rec);
        observe(trace.records.len(), t, tau, trace.records.last().expect("just pushed"))?;
        if saturated && params.stop_on_saturation {
            trace.status = RunStatus::Saturated;
            break;
        }
    }
    Ok(trace)
}

/// `sum |D^2(|H|^{p-2} H)|^2 s^2` with the compact Hessian stencil.
pub fn curvature_hessian_sq(h: &GridProfile, p: f64) -> Result<f64> {
    let geom = differentiate(h)?;
    let w: Vec<f64> = geom.curvature_sum.iter().map(|&x| signed_power(x, p - 1.0)).collect();
    let d2 = stencil::hessian(h.spec(), &w);
    Ok(d2.iter().map(|[xx, xy, yy]| xx * xx + 2.0 * xy * xy + yy * yy).sum::<f64>() * h.spec().cell_area())
}

fn check_time(trace: &EvolutionTrace, t: f64) -> Result<()> {
    let t_max = trace.safe_time();
    if !(t >= 0.0 && t <= t_max) {
        return Err(Error::TimeOutOfRange { t, t_max });
    }
    Ok(())
}

/// Index `i >= 1` of the step interval `[t_{i-1}, t_i]` containing `t`.
fn interval(trace: &EvolutionTrace, t: f64) -> usize {
    match trace.times.iter().position(|&ti| t < ti) {
        Some(i) => i + 1,
        None => trace.times.len(),
    }
}

/// `h_{i-1} + (t - t_{i-1}) / tau_i (h_i - h_{i-1})`.
pub fn interpolate_linear(trace: &EvolutionTrace, t: f64) -> Result<GridProfile> {
    check_time(trace, t)?;
    if trace.records.is_empty() {
        return Ok(trace.h0.clone());
    }
    let i = interval(trace, t);
    if t == trace.time(i) {
        return Ok(trace.profile(i).clone());
    }
    let a = trace.profile(i - 1);
    let b = trace.profile(i);
    let theta = (t - trace.time(i - 1)) / trace.taus[i - 1];
    let vals = a.values().iter().zip(b.values()).map(|(x, y)| x + theta * (y - x)).collect();
    GridProfile::new(*a.spec(), vals)
}

/// The record valid on `[t_{i-1}, t_i)`; the final record at the end time.
pub fn interpolate_constant(trace: &EvolutionTrace, t: f64) -> Result<(GridProfile, ElasticState)> {
    check_time(trace, t)?;
    if trace.records.is_empty() {
        return Ok((trace.h0.clone(), trace.state0.clone()));
    }
    let i = interval(trace, t);
    Ok((trace.profile(i).clone(), trace.state(i).clone()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolderReport {
    pub exponent: f64,
    /// Smallest `C` with `|h(t2) - h(t1)|_inf <= C (dt^a + dt^{1/2})` over all pairs.
    pub constant: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub pairs: usize,
}

pub fn holder_time_diagnostic(trace: &EvolutionTrace, p: f64) -> HolderReport {
    let exponent = (p * p - 4.0) / (8.0 * p * p);
    let count = trace.records.len() + 1;
    let mut best = 0.0;
    let mut worst = None;
    let mut pairs = 0;
    for a in 0..count {
        for b in a + 1..count {
            let dt = trace.time(b) - trace.time(a);
            let diff = trace.profile(b).max_abs_diff(trace.profile(a));
            let c = diff / (dt.powf(exponent) + dt.sqrt());
            pairs += 1;
            if c > best {
                best = c;
                worst = Some((a, b));
            }
        }
    }
    HolderReport {
        exponent,
        constant: best,
        worst_pair: worst,
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::RegularizationParams;
    use crate::grid::GridSpec;

    fn setup(n: usize, amplitude: f64) -> (GridProfile, SlabMesh, StepParams) {
        let spec = GridSpec::new(1.0, n).unwrap();
        let h0 = GridProfile::fourier_mode(spec, 0.2, amplitude, [1, 0], 0.0);
        let mesh = SlabMesh::new(spec, 4).unwrap();
        let reg = RegularizationParams::new(1e-3, 3.0, 1e-3, 1.0).unwrap();
        (h0, mesh, StepParams::new(reg))
    }

    fn short_run(amplitude: f64) -> EvolutionTrace {
        let (h0, mesh, step) = setup(16, amplitude);
        let params = EvolutionParams::new(4e-3, 1e-3, 1.0).unwrap();
        let tensor = ElasticTensor::isotropic(1.0, 1.0).unwrap();
        run(&h0, &Anisotropy::Isotropic, &tensor, &Mismatch::zero(), &mesh, &params, &step).unwrap()
    }

    #[test]
    fn flat_film_is_stationary() {
        let trace = short_run(0.0);
        assert_eq!(trace.status, RunStatus::Completed);
        assert_eq!(trace.records.len(), 4);
        assert_eq!(trace.dissipation, 0.0);
        assert!((trace.safe_time() - 4e-3).abs() < 1e-15);
        for r in &trace.records {
            assert_eq!(r.h_new.max_abs_diff(&trace.h0), 0.0);
        }
        assert_eq!(holder_time_diagnostic(&trace, 3.0).constant, 0.0);
    }

    #[test]
    fn sinusoid_energy_decreases_within_bound() {
        let trace = short_run(0.01);
        assert_eq!(trace.status, RunStatus::Completed);
        let e = trace.energies();
        assert!(e.windows(2).all(|w| w[1] <= w[0] + ENERGY_SLACK));
        assert!(trace.dissipation > 0.0 && trace.dissipation <= trace.dissipation_bound());
        assert!(trace.curvature_regularity > 0.0);
    }

    #[test]
    fn interpolants_at_nodes_and_midpoints() {
        let trace = short_run(0.01);
        let tau = trace.taus[0];
        let h1 = trace.profile(1);
        assert_eq!(interpolate_linear(&trace, tau).unwrap().max_abs_diff(h1), 0.0);
        let mid = interpolate_linear(&trace, 1.5 * tau).unwrap();
        let h2 = trace.profile(2);
        for k in 0..mid.values().len() {
            let avg = 0.5 * (h1.values()[k] + h2.values()[k]);
            assert!((mid.values()[k] - avg).abs() <= 1e-15);
        }
        let (c, _) = interpolate_constant(&trace, 1.5 * tau).unwrap();
        assert_eq!(c.max_abs_diff(h2), 0.0);
        // right-open: the node itself belongs to the next interval
        let (c, _) = interpolate_constant(&trace, tau).unwrap();
        assert_eq!(c.max_abs_diff(h2), 0.0);
        let (c, _) = interpolate_constant(&trace, 0.0).unwrap();
        assert_eq!(c.max_abs_diff(h1), 0.0);
        let (c, _) = interpolate_constant(&trace, trace.safe_time()).unwrap();
        assert_eq!(c.max_abs_diff(&trace.records.last().unwrap().h_new), 0.0);
        // difference quotient inside a step
        let (a, b) = (interpolate_linear(&trace, 1.25 * tau).unwrap(), interpolate_linear(&trace, 1.75 * tau).unwrap());
        for k in 0..a.values().len() {
            let q = (b.values()[k] - a.values()[k]) / (0.5 * tau);
            let exact = (h2.values()[k] - h1.values()[k]) / tau;
            assert!((q - exact).abs() <= 1e-9 * exact.abs().max(1.0), "{q} {exact}");
        }
    }

    #[test]
    fn out_of_range_time_rejected() {
        let trace = short_run(0.0);
        assert!(matches!(interpolate_linear(&trace, -1e-3), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(interpolate_constant(&trace, 1.0), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn single_step_holder_constant() {
        let (h0, mesh, step) = setup(16, 0.01);
        let params = EvolutionParams::new(1e-3, 1e-3, 1.0).unwrap();
        let tensor = ElasticTensor::isotropic(1.0, 1.0).unwrap();
        let trace = run(&h0, &Anisotropy::Isotropic, &tensor, &Mismatch::zero(), &mesh, &params, &step).unwrap();
        let rep = holder_time_diagnostic(&trace, 3.0);
        assert_eq!(rep.pairs, 1);
        let a = 5.0 / 72.0;
        let expected = trace.profile(1).max_abs_diff(&h0) / (1e-3f64.powf(a) + 1e-3f64.sqrt());
        assert!((rep.constant - expected).abs() <= 1e-15 * expected);
        assert_eq!(rep.exponent, a);
    }

    #[test]
    fn steep_initial_profile_rejected() {
        let (h0, mesh, step) = setup(16, 0.2);
        let params = EvolutionParams::new(1e-3, 1e-3, 1.0).unwrap();
        let tensor = ElasticTensor::isotropic(1.0, 1.0).unwrap();
        let r = run(&h0, &Anisotropy::Isotropic, &tensor, &Mismatch::zero(), &mesh, &params, &step);
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }
}
