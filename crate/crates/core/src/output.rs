//! File outputs: per-step CSV, field dumps and run summaries.
//!
//! Every number is written with 17 significant digits.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::evolution::{EvolutionTrace, HolderReport, RunStatus};
use crate::geometry::lipschitz_seminorm;
use crate::grid::{fmt_num, GridProfile};

pub const STEP_CSV_HEADER: &str = "step,time,tau,elastic,surface_aniso,surface_reg,penalization,total,\
el_residual,outer_iterations,elastic_solves,min_h,lipschitz,constraint_active";

/// Diagnostics of one row besides the energy breakdown.
#[derive(Clone, Copy, Debug)]
pub struct StepDiagnostics {
    pub el_residual: f64,
    pub outer_iterations: usize,
    pub elastic_solves: usize,
    pub constraint_active: bool,
}

pub fn step_csv_row(
    step: usize,
    time: f64,
    tau: f64,
    h: &GridProfile,
    breakdown: &EnergyBreakdown,
    diag: &StepDiagnostics,
) -> String {
    format!(
        "{step},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        fmt_num(time),
        fmt_num(tau),
        fmt_num(breakdown.elastic),
        fmt_num(breakdown.surface_aniso),
        fmt_num(breakdown.surface_reg),
        fmt_num(breakdown.penalization),
        fmt_num(breakdown.total),
        fmt_num(diag.el_residual),
        diag.outer_iterations,
        diag.elastic_solves,
        fmt_num(h.min()),
        fmt_num(lipschitz_seminorm(h)),
        diag.constraint_active,
    )
}

/// Output directory of one run.
pub struct RunWriter {
    dir: PathBuf,
    csv: BufWriter<File>,
    dump_every: usize,
}

impl RunWriter {
    /// Creates the directory and writes the config echo and the CSV header.
    pub fn create(dir: &Path, config_echo: &str, dump_every: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if dump_every > 0 {
            let fields = dir.join("fields");
            std::fs::create_dir_all(&fields).map_err(|e| Error::io(&fields, e))?;
        }
        write_file(&dir.join("config.toml"), config_echo)?;
        let path = dir.join("steps.csv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut csv = BufWriter::new(file);
        writeln!(csv, "{STEP_CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            csv,
            dump_every,
        })
    }

    pub fn row(
        &mut self,
        step: usize,
        time: f64,
        tau: f64,
        h: &GridProfile,
        breakdown: &EnergyBreakdown,
        diag: &StepDiagnostics,
    ) -> Result<()> {
        let line = step_csv_row(step, time, tau, h, breakdown, diag);
        writeln!(self.csv, "{line}").map_err(|e| Error::io(self.dir.join("steps.csv"), e))?;
        if self.dump_every > 0 && step.is_multiple_of(self.dump_every) {
            h.write(&self.dir.join("fields").join(format!("h_{step:06}.txt")))?;
        }
        Ok(())
    }

    pub fn finish(mut self, summary: &str) -> Result<()> {
        self.csv.flush().map_err(|e| Error::io(self.dir.join("steps.csv"), e))?;
        write_file(&self.dir.join("summary.txt"), summary)
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn status_detail(status: &RunStatus) -> String {
    match status {
        RunStatus::Completed | RunStatus::Saturated => String::new(),
        RunStatus::SafeguardStop(m) | RunStatus::StepFailure(m) => m.clone(),
        RunStatus::EnergyIncrease { step, increase } => format!("step {step} raised the energy by {increase:e}"),
    }
}

/// `key = value` lines describing a finished run.
pub fn summary_text(trace: &EvolutionTrace, final_time: f64, holder: &HolderReport) -> String {
    let mut s = String::new();
    let energies = trace.energies();
    let _ = writeln!(s, "status = {}", trace.status.label());
    let detail = status_detail(&trace.status);
    if !detail.is_empty() {
        let _ = writeln!(s, "status_detail = {detail}");
    }
    let _ = writeln!(s, "steps = {}", trace.records.len());
    let _ = writeln!(s, "final_time = {}", fmt_num(final_time));
    let _ = writeln!(s, "empirical_t0 = {}", fmt_num(trace.safe_time()));
    let _ = writeln!(s, "floor = {}", fmt_num(trace.floor));
    let _ = writeln!(s, "lambda0 = {}", fmt_num(trace.lambda0));
    let _ = writeln!(s, "initial_energy = {}", fmt_num(energies[0]));
    let _ = writeln!(s, "final_energy = {}", fmt_num(*energies.last().expect("initial energy")));
    let _ = writeln!(s, "dissipation = {}", fmt_num(trace.dissipation));
    let _ = writeln!(s, "dissipation_bound = {}", fmt_num(trace.dissipation_bound()));
    let _ = writeln!(s, "curvature_regularity = {}", fmt_num(trace.curvature_regularity));
    let _ = writeln!(s, "holder_exponent = {}", fmt_num(holder.exponent));
    let _ = writeln!(s, "holder_constant = {}", fmt_num(holder.constant));
    if let Some((a, b)) = holder.worst_pair {
        let _ = writeln!(s, "holder_worst_pair = {a},{b}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn row_matches_header() {
        let h = GridProfile::constant(GridSpec::new(1.0, 8).unwrap(), 0.1);
        let b = EnergyBreakdown {
            elastic: 0.0,
            surface_aniso: 1.0,
            surface_reg: 0.0,
            total: 1.0,
            penalization: 0.0,
        };
        let diag = StepDiagnostics {
            el_residual: 0.0,
            outer_iterations: 0,
            elastic_solves: 0,
            constraint_active: false,
        };
        let row = step_csv_row(3, 0.25, 1e-3, &h, &b, &diag);
        assert_eq!(row.split(',').count(), STEP_CSV_HEADER.split(',').count());
        assert!(row.starts_with("3,2.5000000000000000e-1,"));
    }
}
