//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use filmflow::anisotropy::Anisotropy;
use filmflow::config::{Experiment, RunConfig};
use filmflow::driver::{simulate, stability, Prepared};
use filmflow::elasticity::{assembled_system, solve_equilibrium, ElasticTensor, Mismatch, SlabMesh};
use filmflow::energy::{first_variation, incremental_objective, RegularizationParams};
use filmflow::evolution::{run, EvolutionTrace, RunStatus, ENERGY_SLACK};
use filmflow::geometry::{differentiate, lipschitz_seminorm};
use filmflow::grid::{GridProfile, GridSpec};
use filmflow::stability::{second_variation_detailed, second_variation_flat};
use filmflow::stepper::{minimize_step, StepParams};

type Outcome = Result<String, String>;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

fn load(name: &str, out: &std::path::Path, extra: &[&str]) -> Prepared {
    let mut sets = vec![format!("output_dir={}", out.join(name).display())];
    sets.extend(extra.iter().map(|s| s.to_string()));
    let cfg = RunConfig::load(&configs_dir().join(format!("{name}.toml")), &sets).expect("shipped config loads");
    Prepared::new(&cfg).expect("shipped config is valid")
}

fn ensure(ok: bool, message: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message)
    }
}

/// Random admissible profile: a few smooth modes plus small grid noise.
fn random_admissible(spec: GridSpec, rng: &mut ChaCha8Rng) -> GridProfile {
    let modes: Vec<[f64; 4]> = (0..6)
        .map(|_| {
            [
                rng.gen_range(-4..=4) as f64,
                rng.gen_range(-4..=4) as f64,
                rng.gen_range(0.0..0.004),
                rng.gen_range(0.0..2.0 * PI),
            ]
        })
        .collect();
    let noise = 0.05 * spec.spacing();
    let vals: Vec<f64> = (0..spec.len())
        .map(|idx| {
            let (x, y) = spec.coords(idx / spec.n(), idx % spec.n());
            let smooth: f64 = modes
                .iter()
                .map(|&[k1, k2, a, ph]| a * (2.0 * PI * (k1 * x + k2 * y) + ph).cos())
                .sum();
            0.2 + smooth + noise * rng.gen_range(-1.0..1.0)
        })
        .collect();
    GridProfile::new(spec, vals).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for n in [16, 32, 64] {
        let spec = GridSpec::new(1.0, n).unwrap();
        for _ in 0..100 {
            let h = random_admissible(spec, &mut rng);
            ensure(h.min() > 0.0 && lipschitz_seminorm(&h) < 1.0, "profile not admissible".into())?;
            let g = differentiate(&h).map_err(|e| e.to_string())?;
            let mean = g.curvature_sum.iter().sum::<f64>() / spec.len() as f64;
            worst = worst.max(mean.abs());
        }
    }
    ensure(worst <= 1e-12, format!("max |mean H| = {worst:e}"))?;
    Ok(format!("max |mean H| = {worst:e} over 300 profiles"))
}

/// Traces of every shipped example, computed once for criteria 2, 3 and 9.
struct ExampleRuns {
    traces: Vec<(String, EvolutionTrace)>,
}

fn example_runs() -> Result<ExampleRuns, String> {
    let out = scratch();
    let mut traces = Vec::new();
    for name in ["flat", "default", "sinusoid_decay", "elastic_sinusoid"] {
        let prep = load(name, out.path(), &[]);
        let trace = simulate(&prep).map_err(|e| format!("{name}: {e}"))?;
        traces.push((name.to_string(), trace));
    }
    for name in ["convex", "faceted"] {
        let prep = load(name, out.path(), &[]);
        let setup = prep.stability_setup();
        let h0 = GridProfile::constant(*setup.mesh.grid(), setup.d).offset(setup.perturbation.values(), 1.0);
        let trace = run(&h0, &prep.psi, &prep.tensor, &prep.mismatch, &prep.mesh, &prep.evolution, &prep.step)
            .map_err(|e| format!("{name}: {e}"))?;
        traces.push((name.to_string(), trace));
    }
    Ok(ExampleRuns { traces })
}

fn criterion_2(runs: &ExampleRuns) -> Outcome {
    let mut steps = 0;
    for (name, trace) in &runs.traces {
        ensure(trace.status == RunStatus::Completed, format!("{name}: status {:?}", trace.status))?;
        let e = trace.energies();
        for (i, w) in e.windows(2).enumerate() {
            ensure(w[1] <= w[0] + ENERGY_SLACK, format!("{name}: step {} raises energy by {:e}", i + 1, w[1] - w[0]))?;
        }
        steps += trace.records.len();
    }
    Ok(format!("{} runs, {steps} accepted steps nonincreasing", runs.traces.len()))
}

fn criterion_3(runs: &ExampleRuns) -> Outcome {
    let mut worst = 0.0f64;
    for (name, trace) in &runs.traces {
        // recompute the sum from the stored profiles
        let mut sum = 0.0;
        for i in 1..=trace.records.len() {
            let tau = trace.taus[i - 1];
            let (a, b) = (trace.profile(i - 1), trace.profile(i));
            let area = a.spec().cell_area();
            let v: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (y - x) * (y - x)).sum::<f64>() * area / (tau * tau);
            sum += tau * v;
        }
        let lambda0 = trace.lambda0;
        let bound = 2.0 * (1.0 + lambda0 * lambda0).sqrt() * trace.energies()[0];
        ensure(
            (sum - trace.dissipation).abs() <= 1e-12 * bound,
            format!("{name}: accumulator {:e} vs recomputed {sum:e}", trace.dissipation),
        )?;
        ensure(sum <= bound, format!("{name}: dissipation {sum:e} exceeds {bound:e}"))?;
        worst = worst.max(sum / bound);
    }
    Ok(format!("max dissipation / bound = {worst:e}"))
}

fn criterion_4() -> Outcome {
    let spec = GridSpec::new(1.0, 32).unwrap();
    let h = GridProfile::from_fn(spec, |x, y| {
        0.2 + 0.03 * (2.0 * PI * x).sin() + 0.02 * (2.0 * PI * (x + 2.0 * y)).cos()
    })
    .unwrap();
    let h_prev = h.map(|v| 0.98 * v + 0.003);
    let mesh = SlabMesh::new(spec, 8).unwrap();
    let tensor = ElasticTensor::isotropic(1.0, 1.0).unwrap();
    let mismatch = Mismatch::new(0.05, 0.04).unwrap();
    let state = solve_equilibrium(&h, &tensor, &mismatch, &mesh).map_err(|e| e.to_string())?;
    let psi = Anisotropy::cubic(0.2).unwrap();
    let reg = RegularizationParams::new(1e-3, 3.0, 1e-3, 2.0).unwrap();
    let grad = first_variation(&h, &state, &h_prev, &psi, &reg).map_err(|e| e.to_string())?;
    let objective = |g: &GridProfile| incremental_objective(g, &h_prev, &state, &psi, &reg).unwrap().objective();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dir = GridProfile::from_fn(spec, |x, y| {
            c[0] + c[1] * (2.0 * PI * x).sin()
                + c[2] * (2.0 * PI * y).cos()
                + c[3] * (2.0 * PI * (x - y)).sin()
                + c[4] * (4.0 * PI * x).cos()
                + c[5] * (2.0 * PI * (x + 3.0 * y)).sin()
        })
        .unwrap();
        let s = 1e-6;
        let fd = (objective(&h.offset(dir.values(), s)) - objective(&h.offset(dir.values(), -s))) / (2.0 * s);
        let an: f64 = grad.iter().zip(dir.values()).map(|(a, b)| a * b).sum::<f64>() * spec.cell_area();
        worst = worst.max((fd - an).abs() / an.abs());
    }
    ensure(worst <= 1e-5, format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:e} over 10 directions"))
}

/// Traction-free vertical gradient from the 3x3 system on rows 33, 23, 13.
fn affine_gradient_oracle(c: &[[f64; 6]; 6], e: [f64; 2]) -> Vector3<f64> {
    // Voigt strain (e1, e2, b3, b2, b1, 0)
    let rows = [2, 3, 4];
    let a = Matrix3::from_fn(|r, k| c[rows[r]][[4, 3, 2][k]]);
    let rhs = Vector3::from_fn(|r, _| -(c[rows[r]][0] * e[0] + c[rows[r]][1] * e[1]));
    a.lu().solve(&rhs).expect("nonsingular")
}

fn criterion_5() -> Outcome {
    let mut voigt = *ElasticTensor::isotropic(1.0, 1.0).unwrap().voigt();
    voigt[0][4] = 0.2;
    voigt[4][0] = 0.2;
    voigt[1][3] = 0.15;
    voigt[3][1] = 0.15;
    let tensor = ElasticTensor::from_voigt(voigt).map_err(|e| e.to_string())?;
    let e = [0.02, 0.015];
    let mismatch = Mismatch::new(e[0], e[1]).unwrap();
    let b = affine_gradient_oracle(&voigt, e);
    let spec = GridSpec::new(1.0, 16).unwrap();
    let mesh = SlabMesh::new(spec, 8).unwrap();
    let d = 0.2;
    let state = solve_equilibrium(&GridProfile::constant(spec, d), &tensor, &mismatch, &mesh).map_err(|e| e.to_string())?;
    let mut nodal = 0.0f64;
    for i in 0..16 {
        for j in 0..16 {
            for k in 0..=8 {
                let (x, u) = state.node(i, j, k);
                let exact = [e[0] * x[0] + b[0] * x[2], e[1] * x[1] + b[1] * x[2], b[2] * x[2]];
                for c in 0..3 {
                    nodal = nodal.max((u[c] - exact[c]).abs());
                }
            }
        }
    }
    ensure(nodal <= 1e-9, format!("nodal deviation {nodal:e}"))?;

    let small = GridSpec::new(1.0, 8).unwrap();
    let mesh = SlabMesh::new(small, 4).unwrap();
    let h = GridProfile::from_fn(small, |x, y| 0.2 + 0.03 * (2.0 * PI * x).cos() * (2.0 * PI * y).sin()).unwrap();
    let cg = solve_equilibrium(&h, &tensor, &mismatch, &mesh).map_err(|e| e.to_string())?;
    let (dense, load) = assembled_system(&h, &tensor, &mismatch, &mesh).map_err(|e| e.to_string())?;
    let dim = load.len();
    let k = DMatrix::from_fn(dim, dim, |r, c| dense[r][c]);
    let x = k.lu().solve(&DVector::from_vec(load)).ok_or("dense solve failed")?;
    let direct = cg.energy_of_remainder(x.as_slice()).map_err(|e| e.to_string())?;
    let rel = (cg.energy() - direct).abs() / direct.abs();
    ensure(rel <= 1e-8, format!("CG energy {:e} vs direct {direct:e}, relative {rel:e}", cg.energy()))?;
    Ok(format!("nodal deviation {nodal:e}; CG vs direct energy relative {rel:e}"))
}

/// Cosine coefficient of `(k, 0)` in `h - mean`.
fn mode_amplitude(h: &GridProfile, k: f64) -> f64 {
    let spec = h.spec();
    let mean = h.mean();
    let n = spec.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (x, _) = spec.coords(i, j);
            s += (h.get(i, j) - mean) * (2.0 * PI * k * x / spec.ell()).cos();
        }
    }
    2.0 * s / (n * n) as f64
}

fn criterion_6() -> Outcome {
    let out = scratch();
    let prep = load("sinusoid_decay", out.path(), &[]);
    let trace = simulate(&prep).map_err(|e| e.to_string())?;
    ensure(trace.records.len() == 50, format!("{} steps instead of 50", trace.records.len()))?;
    let a0 = mode_amplitude(&trace.h0, 1.0);
    let rate = (2.0 * PI / prep.config.ell).powi(2);
    let mut worst = 0.0f64;
    for (i, &t) in trace.times.iter().enumerate() {
        let ratio = mode_amplitude(trace.profile(i + 1), 1.0) / a0;
        let exact = (-rate * t).exp();
        worst = worst.max((ratio - exact).abs() / exact);
    }
    ensure(worst <= 0.05, format!("max relative deviation {worst:e}"))?;
    Ok(format!("max relative deviation from exp(-|k|^2 t) {worst:e} over 50 steps"))
}

/// Derivative-free coordinate descent: each coordinate moves to the vertex
/// of the parabola through three objective values.
fn coordinate_descent(h0: &GridProfile, f: impl Fn(&GridProfile) -> f64, tol: f64) -> (GridProfile, usize) {
    let mut vals = h0.values().to_vec();
    let spec = *h0.spec();
    let probe = 1e-4;
    let eval = |v: &Vec<f64>| f(&GridProfile::new(spec, v.clone()).unwrap());
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut biggest = 0.0f64;
        for k in 0..vals.len() {
            let x = vals[k];
            let f0 = eval(&vals);
            vals[k] = x + probe;
            let fp = eval(&vals);
            vals[k] = x - probe;
            let fm = eval(&vals);
            let curv = fp - 2.0 * f0 + fm;
            let step = if curv > 0.0 { -0.5 * probe * (fp - fm) / curv } else { 0.0 };
            let step = step.clamp(-probe * 10.0, probe * 10.0);
            vals[k] = x + step;
            if eval(&vals) > f0 {
                vals[k] = x;
            } else {
                biggest = biggest.max(step.abs());
            }
        }
        if biggest < tol || sweeps >= 20_000 {
            return (GridProfile::new(spec, vals).unwrap(), sweeps);
        }
    }
}

fn criterion_7() -> Outcome {
    let spec = GridSpec::new(1.0, 16).unwrap();
    let h_prev = GridProfile::fourier_mode(spec, 0.2, 0.05, [1, 0], 0.0);
    let mesh = SlabMesh::new(spec, 4).unwrap();
    let tensor = ElasticTensor::isotropic(1.0, 1.0).unwrap();
    let none = Mismatch::zero();
    let state = solve_equilibrium(&h_prev, &tensor, &none, &mesh).map_err(|e| e.to_string())?;
    let psi = Anisotropy::Isotropic;
    let reg = RegularizationParams::new(1e-3, 3.0, 1e-2, 1.0).unwrap();
    let mut params = StepParams::new(reg);
    params.el_tolerance = 1e-9;
    let rec = minimize_step(&h_prev, &state, &psi, &tensor, &none, &params).map_err(|e| e.to_string())?;
    ensure(rec.converged, format!("stepper residual {:e}", rec.el_residual))?;
    let objective = |h: &GridProfile| incremental_objective(h, &h_prev, &state, &psi, &reg).unwrap().objective();
    let (oracle, sweeps) = coordinate_descent(&h_prev, objective, 1e-11);
    let diff = rec.h_new.max_abs_diff(&oracle);
    ensure(diff <= 1e-6, format!("max-norm difference {diff:e} after {sweeps} sweeps"))?;
    Ok(format!("max-norm difference {diff:e}; oracle took {sweeps} sweeps"))
}

fn criterion_8() -> Outcome {
    let out = scratch();
    let convex = load("convex", out.path(), &[]);
    ensure(convex.config.experiment == Experiment::StabilityAsymptotic, "convex config is not asymptotic".into())?;
    let rep = stability(&convex).map_err(|e| e.to_string())?;
    let checks = rep.prechecks.as_ref().ok_or("no prechecks in convex report")?;
    ensure(checks.pass(), "convex prechecks failed".into())?;
    let asym = rep.asymptotic.as_ref().ok_or("convex report has no asymptotic data")?;
    let first = rep.distances[0].1;
    let last = rep.distances.last().unwrap().1;
    let factor = first / last;
    ensure(asym.decayed && factor >= 10.0, format!("decay factor {factor:e}"))?;
    ensure(rep.asymptotic_claim(), "no asymptotic claim".into())?;

    let faceted = load("faceted", out.path(), &["experiment=stability-asymptotic"]);
    let rep = stability(&faceted).map_err(|e| e.to_string())?;
    let checks = rep.prechecks.as_ref().ok_or("no prechecks in faceted report")?;
    ensure(!checks.convexity_holds, "faceted density passed the convexity precheck".into())?;
    ensure(rep.asymptotic.is_none() && !rep.asymptotic_claim(), "faceted regime made an asymptotic claim".into())?;
    ensure(rep.distances.len() > 1 && rep.sup_distance.is_finite(), "faceted report lacks Lyapunov data".into())?;
    let text = rep.to_text();
    ensure(text.contains("claim = lyapunov-only"), "faceted report text lacks the lyapunov-only tag".into())?;
    Ok(format!(
        "convex decay factor {factor:.3e}; faceted lyapunov-only (sup distance {:e}, bounded {})",
        rep.sup_distance, rep.bounded
    ))
}

fn criterion_9(runs: &ExampleRuns) -> Outcome {
    let mut count = 0;
    for (name, trace) in &runs.traces {
        for (i, rec) in trace.records.iter().enumerate() {
            let lip = lipschitz_seminorm(&rec.h_new);
            ensure(
                rec.h_new.min() >= trace.floor && lip < trace.lambda0,
                format!("{name}: step {} violates the safeguards", i + 1),
            )?;
            count += 1;
        }
    }
    // a strongly stressed film thins below a tight floor
    let out = scratch();
    let text = "\
experiment = \"simulate\"
[grid]
n = 16
layers = 4
[physics]
mismatch = [0.05, 0.05]
[evolution]
tau = 1e-2
final_time = 1.0
lambda0 = 1.0
floor_fraction = 0.999
[initial]
kind = \"flat\"
d = 0.1
";
    let dir = out.path().join("thinning");
    let cfg = RunConfig::from_text(text, &[format!("output_dir={}", dir.display())]).map_err(|e| e.to_string())?;
    let trace = simulate(&Prepared::new(&cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(matches!(trace.status, RunStatus::SafeguardStop(_)), format!("status {:?}", trace.status))?;
    ensure(trace.safe_time() < 1.0, "stop did not happen before the final time".into())?;
    for rec in &trace.records {
        ensure(rec.h_new.min() >= trace.floor, "a recorded profile is below the floor".into())?;
    }
    let summary = std::fs::read_to_string(dir.join("summary.txt")).map_err(|e| e.to_string())?;
    ensure(
        summary.contains("status = safeguard-stop") && summary.contains("empirical_t0 = "),
        "summary lacks the stop report".into(),
    )?;
    Ok(format!(
        "{count} example profiles within safeguards; stressed film stopped at T0 = {:e}",
        trace.safe_time()
    ))
}

fn criterion_10() -> Outcome {
    let spec = GridSpec::new(1.0, 64).unwrap();
    let mesh = SlabMesh::new(spec, 8).unwrap();
    let tensor = ElasticTensor::isotropic(1.0, 1.0).unwrap();
    let none = Mismatch::zero();
    let psi = Anisotropy::Isotropic;
    let phi = GridProfile::from_fn(spec, |x, _| (2.0 * PI * x).cos()).unwrap();
    let sv = second_variation_detailed(0.1, &tensor, &none, &psi, &phi, &mesh, true).map_err(|e| e.to_string())?;
    // int |D phi|^2 over the unit square
    let exact = (2.0 * PI).powi(2) * 0.5;
    let rel = (sv.value - exact).abs() / exact;
    ensure(rel <= 1e-2, format!("value {:e} vs {exact:e}", sv.value))?;
    ensure(sv.richardson_gap() <= 1e-2, format!("half-step gap {:e}", sv.richardson_gap()))?;
    let doubled = second_variation_flat(0.1, &tensor, &none, &psi, &phi.map(|v| 2.0 * v), &mesh).map_err(|e| e.to_string())?;
    let scaling = (doubled - 4.0 * sv.value).abs() / (4.0 * sv.value);
    ensure(scaling <= 1e-3, format!("quadratic scaling error {scaling:e}"))?;
    Ok(format!("relative error {rel:e} to the area second variation; scaling error {scaling:e}"))
}

fn report(number: usize, title: &str, elapsed: Duration, outcome: &Outcome) -> bool {
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d.as_str(), true),
        Err(d) => ("FAIL", d.as_str(), false),
    };
    println!("{tag} criterion {number:>2} {title}: {detail} [{:.1} s]", elapsed.as_secs_f64());
    ok
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn check(number: usize, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = guarded(f);
    report(number, title, start.elapsed(), &outcome)
}

fn main() {
    let mut all = check(1, "zero-mean curvature", criterion_1);
    let start = Instant::now();
    let runs = catch_unwind(example_runs).unwrap_or_else(|_| Err("example runs panicked".into()));
    let examples_time = start.elapsed();
    let with_runs = |n: usize, title: &str, f: fn(&ExampleRuns) -> Outcome| match &runs {
        Ok(r) => check(n, title, || f(r)),
        Err(e) => report(n, title, examples_time, &Err(e.clone())),
    };
    all &= with_runs(2, "energy monotonicity", criterion_2);
    all &= with_runs(3, "dissipation bound", criterion_3);
    all &= check(4, "gradient consistency", criterion_4);
    all &= check(5, "elasticity oracle", criterion_5);
    all &= check(6, "linearized decay", criterion_6);
    all &= check(7, "stepper oracle", criterion_7);
    all &= check(8, "stability gating", criterion_8);
    all &= with_runs(9, "safeguard enforcement", criterion_9);
    all &= check(10, "second-variation analytics", criterion_10);
    if !all {
        std::process::exit(1);
    }
}
