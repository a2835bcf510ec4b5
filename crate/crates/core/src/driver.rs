//! Experiment orchestration shared by the command line and the tests.

use crate::anisotropy::Anisotropy;
use crate::config::{AnisotropyConfig, Experiment, InitialConfig, RunConfig};
use crate::elasticity::{solve_equilibrium_with, ElasticTensor, Mismatch, SlabMesh};
use crate::energy::{first_variation, l2_norm, total_energy, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::evolution::{holder_time_diagnostic, run_with_observer, EvolutionParams, EvolutionTrace};
use crate::grid::GridProfile;
use crate::output::{summary_text, write_file, RunWriter, StepDiagnostics};
use crate::stability::{asymptotic_experiment, lyapunov_experiment, Regime, StabilityReport, StabilitySetup};
use crate::stepper::StepParams;

/// Everything a run needs, built and validated from a config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub psi: Anisotropy,
    pub tensor: ElasticTensor,
    pub mismatch: Mismatch,
    pub mesh: SlabMesh,
    pub h0: GridProfile,
    pub step: StepParams,
    pub evolution: EvolutionParams,
}

impl Prepared {
    pub fn new(config: &RunConfig) -> Result<Self> {
        Ok(Prepared {
            psi: config.anisotropy()?,
            tensor: config.tensor()?,
            mismatch: config.mismatch()?,
            mesh: config.mesh()?,
            h0: config.initial_profile()?,
            step: config.step_params()?,
            evolution: config.evolution_params()?,
            config: config.clone(),
        })
    }

    pub fn regime(&self) -> Regime {
        match self.config.anisotropy {
            AnisotropyConfig::Faceted { .. } => Regime::Faceted,
            _ => Regime::Convex,
        }
    }

    /// Flat height and zero-mean perturbation taken from the initial profile.
    pub fn stability_setup(&self) -> StabilitySetup {
        let d = match self.config.initial {
            InitialConfig::Flat { d } | InitialConfig::Sinusoid { d, .. } => d,
            InitialConfig::File { .. } => self.h0.mean(),
        };
        StabilitySetup {
            regime: self.regime(),
            d,
            psi: self.psi,
            tensor: self.tensor,
            mismatch: self.mismatch,
            mesh: self.mesh.clone(),
            perturbation: self.h0.map(|v| v - d),
            evolution: self.evolution,
            step: self.step,
            sigma_factor: self.config.sigma_factor,
            max_mode: self.config.max_mode,
            convexity_samples: self.config.convexity_samples,
        }
    }
}

/// Energy of the initial configuration with its elastic equilibrium.
pub fn initial_energy(prep: &Prepared) -> Result<EnergyBreakdown> {
    let state = solve_equilibrium_with(&prep.h0, &prep.tensor, &prep.mismatch, &prep.mesh, &prep.step.solve, None)?;
    total_energy(&prep.h0, &state, &prep.psi, &prep.step.regularization)
}

/// Runs the evolution and writes `steps.csv`, field dumps and `summary.txt`.
pub fn simulate(prep: &Prepared) -> Result<EvolutionTrace> {
    let cfg = &prep.config;
    let mut writer = RunWriter::create(&cfg.output_dir, &cfg.to_toml(), cfg.dump_every)?;
    let state0 = solve_equilibrium_with(&prep.h0, &prep.tensor, &prep.mismatch, &prep.mesh, &prep.step.solve, None)?;
    let initial = total_energy(&prep.h0, &state0, &prep.psi, &prep.step.regularization)?;
    let g0 = first_variation(&prep.h0, &state0, &prep.h0, &prep.psi, &prep.step.regularization)?;
    writer.row(
        0,
        0.0,
        0.0,
        &prep.h0,
        &initial,
        &StepDiagnostics {
            el_residual: l2_norm(prep.h0.spec(), &g0),
            outer_iterations: 0,
            elastic_solves: 1,
            constraint_active: false,
        },
    )?;
    let trace = run_with_observer(
        &prep.h0,
        &prep.psi,
        &prep.tensor,
        &prep.mismatch,
        &prep.mesh,
        &prep.evolution,
        &prep.step,
        |i, t, tau, rec| {
            writer.row(
                i,
                t,
                tau,
                &rec.h_new,
                &rec.breakdown,
                &StepDiagnostics {
                    el_residual: rec.el_residual,
                    outer_iterations: rec.outer_iterations,
                    elastic_solves: rec.elastic_solves,
                    constraint_active: rec.constraint_active,
                },
            )
        },
    )?;
    let holder = holder_time_diagnostic(&trace, prep.step.regularization.p);
    writer.finish(&summary_text(&trace, prep.evolution.final_time, &holder))?;
    Ok(trace)
}

/// Runs the stability experiment named by the config and writes
/// `report.txt`, `spectrum.csv` and `distance.csv`.
pub fn stability(prep: &Prepared) -> Result<StabilityReport> {
    let cfg = &prep.config;
    let setup = prep.stability_setup();
    let report = match cfg.experiment {
        Experiment::StabilityLyapunov => lyapunov_experiment(&setup)?,
        Experiment::StabilityAsymptotic => asymptotic_experiment(&setup)?,
        other => {
            return Err(Error::Config(vec![format!(
                "experiment must be stability-lyapunov or stability-asymptotic for the stability command, got {}",
                other.tag()
            )]))
        }
    };
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config.toml"), &cfg.to_toml())?;
    write_file(&dir.join("report.txt"), &report.to_text())?;
    write_file(&dir.join("spectrum.csv"), &report.spectrum_csv())?;
    write_file(&dir.join("distance.csv"), &report.distance_csv())?;
    Ok(report)
}
