//! One incremental minimum problem: minimize the penalized energy over
//! admissible profiles with the gradient bound, starting from the previous
//! profile.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crate::anisotropy::Anisotropy;
use crate::elasticity::{solve_equilibrium_with, ElasticState, ElasticTensor, Mismatch, SolveOptions};
use crate::energy::{
    area_elements, first_variation, incremental_objective, l2_norm, total_energy, EnergyBreakdown,
    RegularizationParams,
};
use crate::error::{Error, Result};
use crate::geometry::{differentiate, lipschitz_seminorm};
use crate::grid::GridProfile;
use crate::precond::SpectralPreconditioner;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescentMethod {
    /// Preconditioned steepest descent with feasibility by rejection.
    ProjectedGradient,
    /// Limited-memory BFGS, memory 10.
    QuasiNewton,
}

impl DescentMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            DescentMethod::ProjectedGradient => "projected-gradient",
            DescentMethod::QuasiNewton => "quasi-newton",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "projected-gradient" => Some(DescentMethod::ProjectedGradient),
            "quasi-newton" => Some(DescentMethod::QuasiNewton),
            _ => None,
        }
    }
}

/// When the elastic equilibrium is recomputed during a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResolveCadence {
    EveryUpdate,
    /// After this many accepted updates.
    Every(usize),
    /// Once the frozen-displacement subproblem meets the tolerance.
    OnInnerConvergence,
}

impl ResolveCadence {
    pub fn tag(&self) -> String {
        match self {
            ResolveCadence::EveryUpdate => "every-update".into(),
            ResolveCadence::Every(k) => format!("every-{k}"),
            ResolveCadence::OnInnerConvergence => "inner-convergence".into(),
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "every-update" => Some(ResolveCadence::EveryUpdate),
            "inner-convergence" => Some(ResolveCadence::OnInnerConvergence),
            _ => {
                let k: usize = tag.strip_prefix("every-")?.parse().ok()?;
                (k > 0).then_some(ResolveCadence::Every(k))
            }
        }
    }
}

pub const LBFGS_MEMORY: usize = 10;

#[derive(Clone, Copy, Debug)]
pub struct StepParams {
    pub regularization: RegularizationParams,
    pub method: DescentMethod,
    /// Cap on accepted profile updates.
    pub max_iterations: usize,
    pub el_tolerance: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub cadence: ResolveCadence,
    pub solve: SolveOptions,
}

impl StepParams {
    pub fn new(regularization: RegularizationParams) -> Self {
        StepParams {
            regularization,
            method: DescentMethod::QuasiNewton,
            max_iterations: 500,
            el_tolerance: 1e-7,
            armijo: 1e-4,
            shrink: 0.5,
            cadence: ResolveCadence::EveryUpdate,
            solve: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regularization.validate()?;
        if !(self.el_tolerance > 0.0) || !(self.armijo > 0.0 && self.armijo < 1.0) || !(self.shrink > 0.0 && self.shrink < 1.0)
        {
            return Err(Error::InvalidParameter(
                "step tolerances must be positive with armijo and shrink in (0, 1)".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub h_new: GridProfile,
    pub state: ElasticState,
    /// Energy at the new profile; `penalization` is relative to `h_prev`.
    pub breakdown: EnergyBreakdown,
    pub el_residual: f64,
    /// Accepted profile updates.
    pub outer_iterations: usize,
    pub elastic_solves: usize,
    pub converged: bool,
    pub constraint_active: bool,
    pub wall_time: Duration,
}

/// Relative slack below which two objective values are indistinguishable;
/// summing a few thousand cell terms loses about three digits.
const ROUNDOFF: f64 = 1e-12;

pub fn minimize_step(
    h_prev: &GridProfile,
    u_prev: &ElasticState,
    psi: &Anisotropy,
    tensor: &ElasticTensor,
    mismatch: &Mismatch,
    params: &StepParams,
) -> Result<StepRecord> {
    let start = Instant::now();
    params.validate()?;
    let reg = &params.regularization;
    let spec = h_prev.spec();
    let lip = lipschitz_seminorm(h_prev);
    if lip > reg.lambda0 || !(h_prev.min() > 0.0) {
        return Err(Error::Infeasible(format!(
            "previous profile has |Dh| = {lip:e} (bound {:e}) and min h = {:e}",
            reg.lambda0,
            h_prev.min()
        )));
    }
    let mesh = u_prev.mesh().clone();
    let mut solves = 0;
    let mut resolve = |h: &GridProfile, warm: &ElasticState| -> Result<ElasticState> {
        solves += 1;
        solve_equilibrium_with(h, tensor, mismatch, &mesh, &params.solve, Some(warm.remainder()))
    };
    let same_state = u_prev.heights().max_abs_diff(h_prev) == 0.0
        && u_prev.mismatch() == mismatch
        && u_prev.tensor() == tensor
        && u_prev.mesh().grid() == spec;
    let mut state = if same_state { u_prev.clone() } else { resolve(h_prev, u_prev)? };

    let precond = build_preconditioner(h_prev, psi, reg)?;
    let objective = |h: &GridProfile, st: &ElasticState| -> Result<f64> {
        Ok(incremental_objective(h, h_prev, st, psi, reg)?.objective())
    };

    let mut h = h_prev.clone();
    let mut g_val = objective(&h, &state)?;
    let mut grad = first_variation(&h, &state, h_prev, psi, reg)?;
    let mut residual = l2_norm(spec, &grad);
    let mut fresh = true;
    let mut updates = 0;
    let mut since_resolve = 0;
    let mut constraint_active = false;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    while !(fresh && residual <= params.el_tolerance) && updates < params.max_iterations {
        if !fresh && residual <= params.el_tolerance {
            state = resolve(&h, &state)?;
            fresh = true;
            since_resolve = 0;
            g_val = objective(&h, &state)?;
            grad = first_variation(&h, &state, h_prev, psi, reg)?;
            residual = l2_norm(spec, &grad);
            continue;
        }
        let mut dir = match params.method {
            DescentMethod::QuasiNewton => two_loop(&grad, &memory, &precond),
            DescentMethod::ProjectedGradient => precond.apply(&grad),
        };
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&dir, &grad) * spec.cell_area();
        if !(slope < 0.0) {
            memory.clear();
            dir = precond.apply(&grad);
            dir.iter_mut().for_each(|d| *d = -*d);
            slope = dot(&dir, &grad) * spec.cell_area();
        }

        let search = line_search(&h, &dir, slope, g_val, params, |trial| {
            if lipschitz_seminorm(trial) > reg.lambda0 || !(trial.min() > params.solve.floor.max(0.0)) {
                return Ok(None);
            }
            objective(trial, &state).map(Some)
        })?;
        if search.rejected {
            constraint_active = true;
        }
        let Some((h_new, g_new)) = search.accepted else {
            if !memory.is_empty() {
                memory.clear();
                continue;
            }
            if !fresh {
                state = resolve(&h, &state)?;
                fresh = true;
                since_resolve = 0;
                g_val = objective(&h, &state)?;
                grad = first_variation(&h, &state, h_prev, psi, reg)?;
                residual = l2_norm(spec, &grad);
                continue;
            }
            break;
        };

        updates += 1;
        since_resolve += 1;
        let grad_new_frozen = first_variation(&h_new, &state, h_prev, psi, reg)?;
        let frozen_residual = l2_norm(spec, &grad_new_frozen);
        let do_resolve = !mismatch.is_zero()
            && match params.cadence {
                ResolveCadence::EveryUpdate => true,
                ResolveCadence::Every(k) => since_resolve >= k,
                ResolveCadence::OnInnerConvergence => frozen_residual <= params.el_tolerance,
            };
        let (grad_new, g_after) = if do_resolve {
            state = resolve(&h_new, &state)?;
            since_resolve = 0;
            fresh = true;
            (first_variation(&h_new, &state, h_prev, psi, reg)?, objective(&h_new, &state)?)
        } else {
            fresh = mismatch.is_zero();
            (grad_new_frozen, g_new)
        };
        if params.method == DescentMethod::QuasiNewton {
            let s: Vec<f64> = h_new.values().iter().zip(h.values()).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * (dot(&s, &s) * dot(&y, &y)).sqrt() {
                if memory.len() == LBFGS_MEMORY {
                    memory.pop_front();
                }
                memory.push_back((s, y, 1.0 / sy));
            }
        }
        h = h_new;
        g_val = g_after;
        grad = grad_new;
        residual = l2_norm(spec, &grad);
    }

    // certificate from scratch on the final profile
    if state.heights().max_abs_diff(&h) != 0.0 {
        state = resolve(&h, &state)?;
    }
    let grad = first_variation(&h, &state, h_prev, psi, reg)?;
    let el_residual = l2_norm(spec, &grad);
    let mut breakdown = total_energy(&h, &state, psi, reg)?;
    breakdown.penalization = crate::energy::penalization(&h, h_prev, reg.tau)?;
    Ok(StepRecord {
        h_new: h,
        state,
        breakdown,
        el_residual,
        outer_iterations: updates,
        elastic_solves: solves,
        converged: el_residual <= params.el_tolerance,
        constraint_active,
        wall_time: start.elapsed(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Search {
    accepted: Option<(GridProfile, f64)>,
    rejected: bool,
}

/// Armijo backtracking from unit step. `eval` returns `None` for infeasible
/// trials.
fn line_search(
    h: &GridProfile,
    dir: &[f64],
    slope: f64,
    g0: f64,
    params: &StepParams,
    mut eval: impl FnMut(&GridProfile) -> Result<Option<f64>>,
) -> Result<Search> {
    let mut t = 1.0;
    let mut rejected = false;
    for _ in 0..60 {
        let trial = h.offset(dir, t);
        match eval(&trial)? {
            None => rejected = true,
            Some(g) => {
                let predicted = params.armijo * t * slope;
                let noise = ROUNDOFF * g0.abs();
                if g <= g0 + predicted || (-t * slope < noise && g <= g0 + noise) {
                    return Ok(Search {
                        accepted: Some((trial, g)),
                        rejected,
                    });
                }
                if -t * slope < 1e-3 * noise {
                    break;
                }
            }
        }
        t *= params.shrink;
    }
    Ok(Search { accepted: None, rejected })
}

fn two_loop(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, precond: &SpectralPreconditioner) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    let mut r = precond.apply(&q);
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &r);
        r.iter_mut().zip(s).for_each(|(ri, si)| *ri += (a - b) * si);
    }
    r
}

/// Symbol coefficients frozen at `h_prev`: mean penalty weight, mean
/// horizontal Hessian of the anisotropy and the linearized regularization.
fn build_preconditioner(h_prev: &GridProfile, psi: &Anisotropy, reg: &RegularizationParams) -> Result<SpectralPreconditioner> {
    let geom = differentiate(h_prev)?;
    let len = h_prev.spec().len() as f64;
    let c0 = area_elements(h_prev).iter().map(|j| 1.0 / (reg.tau * j)).sum::<f64>() / len;
    let alpha = geom
        .grad
        .iter()
        .map(|&[p1, p2]| {
            let hs = psi.hess([-p1, -p2, 1.0]);
            0.5 * (hs[0][0] + hs[1][1])
        })
        .sum::<f64>()
        / len;
    let beta = reg.epsilon * (reg.p - 1.0) * geom.curvature_sum.iter().map(|x| x.abs().powf(reg.p - 2.0)).sum::<f64>()
        / len;
    Ok(SpectralPreconditioner::new(h_prev.spec(), c0, alpha.max(0.0), beta))
}
