//! Experiment drivers behind the subcommands.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use qnd_squeeze::husimi::{q_grid, QGrid, QSource};
use nalgebra::DMatrix;
use num_complex::Complex64;
use qnd_squeeze::master_eq::{
    conditional_density, initial_density, integrate_with, DephasingForm, HybridState, ModelParams, TimeGrid,
};
use qnd_squeeze::pure_measure::{
    conditional_gaussian, conditional_state, detection_grid, detection_probability, outcome_cutoff,
    pmf_mean_variance, DetectionOutcome, InteractionSetting,
};
use qnd_squeeze::spin_core::{build_spin_coherent, hermiticity_error, spin_operator_matrices, GroundExcitedAmplitudes};
use qnd_squeeze::validation::{
    default_sweep_cases, fault_injection_case, fock_oracle_report, me_vs_pure_all_outcomes, normalization_sweep,
    stirling_regime_check, OracleReport,
};
use qnd_squeeze::{master_eq, pure_measure::LightPair, Error};

use crate::config::{fmt_f64, Resolved, SweepMode, SweepParameter, ValidationTolerances};
use crate::output::{write_text, Cell, CsvWriter, Header, VERSION};

pub fn header(command: &str, r: &Resolved, seedless: bool) -> Header {
    let extra = if seedless { vec!["seedless = true".to_string()] } else { Vec::new() };
    Header::new(command, &r.echo(), &extra)
}

/// Warns when the closed-form Gaussian approximations are outside the
/// regime they were derived for.
fn asymptotic_warning(n_atoms: usize, gt: f64, outcome: DetectionOutcome) -> Option<String> {
    let gt_sqrt_n = gt * (n_atoms as f64).sqrt();
    if outcome.n_c < 10 || outcome.n_d < 10 || gt_sqrt_n > 0.5 {
        Some(format!(
            "warning: Gaussian approximation outside its regime (n_c = {}, n_d = {}, gt*sqrt(N) = {gt_sqrt_n:.3})",
            outcome.n_c, outcome.n_d
        ))
    } else {
        None
    }
}

const Q_NOTE: &str = "theta = 0 is the J_z = -N/2 pole; phi is the azimuth about z, measured from +x";

fn write_qgrid(path: PathBuf, header: &Header, q: &QGrid) -> Result<PathBuf> {
    let mut w = CsvWriter::create(&path, &header.with_note(Q_NOTE), &["theta", "phi", "q"])?;
    for (i, theta) in q.thetas.iter().enumerate() {
        for (j, phi) in q.phis.iter().enumerate() {
            w.row(vec![(*theta).into(), (*phi).into(), q.values[(i, j)].into()])?;
        }
    }
    w.finish()
}

fn write_lobes(path: PathBuf, header: &Header, q: &QGrid, level: f64) -> Result<PathBuf> {
    let note = format!("super-level components of Q at {level} * max(Q) = {}", fmt_f64(level * q.max()));
    let mut w = CsvWriter::create(&path, &header.with_note(Q_NOTE).with_note(&note), &["cells", "mass", "theta", "phi"])?;
    for lobe in q.super_level_sets(level * q.max()) {
        w.row(vec![lobe.cells.into(), lobe.mass.into(), lobe.centroid.theta.into(), lobe.centroid.phi.into()])?;
    }
    w.finish()
}

/// Conditional pmf, detection grid and optionally the Q function of the
/// conditional state, for the instantaneous model.
pub fn run_pure(r: &Resolved, header: &Header) -> Result<Vec<PathBuf>> {
    let gt = r.gt()?;
    let setting = InteractionSetting::from_gt(gt)?;
    if let Some(w) = asymptotic_warning(r.n_atoms, gt, r.outcome) {
        eprintln!("{w}");
    }
    let state = build_spin_coherent(&r.ge, r.n_atoms)?;
    let cond = conditional_state(&state, &r.light, &setting, r.outcome)?;
    let gauss = match conditional_gaussian(&r.ge, r.n_atoms, &r.light, &setting, r.outcome) {
        Ok(g) => Some(g),
        Err(e) => {
            eprintln!("warning: no Gaussian approximation: {e}");
            None
        }
    };
    let mut files = Vec::new();

    let mut w = CsvWriter::create(&r.out_dir.join("conditional_pmf.csv"), header, &["k", "p_exact", "p_gaussian"])?;
    for (k, p) in cond.probabilities().into_iter().enumerate() {
        let g = gauss.map_or(f64::NAN, |g| g.pdf(k as f64));
        w.row(vec![k.into(), p.into(), g.into()])?;
    }
    files.push(w.finish()?);

    let n_max = outcome_cutoff(&r.light);
    let grid = detection_grid(&state, &r.light, &setting, n_max)?;
    let mut w = CsvWriter::create(&r.out_dir.join("detection_grid.csv"), header, &["n_c", "n_d", "p"])?;
    for (n_c, row) in grid.iter().enumerate() {
        for (n_d, p) in row.iter().enumerate() {
            w.row(vec![n_c.into(), n_d.into(), (*p).into()])?;
        }
    }
    files.push(w.finish()?);

    if r.q_pure {
        let q = q_grid(QSource::Pure(&cond), r.n_theta, r.n_phi)?;
        files.push(write_qgrid(r.out_dir.join("qgrid_pure.csv"), header, &q)?);
    }
    Ok(files)
}

/// One sampled point of a master-equation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesRow {
    pub t: f64,
    pub omega_t: f64,
    /// Conditional means of `J_x, J_y, J_z`.
    pub means: [f64; 3],
    /// `4 (Delta J)^2 / N` of the conditional state.
    pub var_norm: [f64; 3],
    /// Of the unconditioned hybrid state.
    pub trace_err: f64,
    pub herm_err: f64,
}

/// Integrates the master equation with step `dt` to `t_max`, recording the
/// conditional moments every `sample_stride` steps and at the end. `snapshot`
/// is called with the step index and conditional density at every step.
/// Under literal dephasing the conditioning uses the Hermitian part of rho;
/// `herm_err` still reports the raw matrix.
pub fn master_series<F>(
    params: &ModelParams,
    ge: &GroundExcitedAmplitudes,
    outcome: DetectionOutcome,
    t_max: f64,
    dt: f64,
    sample_stride: usize,
    mut snapshot: F,
) -> Result<Vec<SeriesRow>>
where
    F: FnMut(usize, f64, &DMatrix<Complex64>) -> Result<()>,
{
    let grid = TimeGrid::new(t_max, dt, 1)?;
    grid.validate_for(params)?;
    if sample_stride == 0 {
        bail!("sample_stride must be at least 1");
    }
    let steps = grid.steps();
    let ops = spin_operator_matrices(params.n_atoms);
    let n = params.n_atoms;
    let rho0 = initial_density(ge, n)?;
    let mut rows = Vec::with_capacity(steps / sample_stride + 2);
    let mut step = 0usize;
    let mut failure: Option<anyhow::Error> = None;
    let run = integrate_with(params, &rho0, &grid, |s| {
        let here = step;
        step += 1;
        let wanted = here.is_multiple_of(sample_stride) || here == steps;
        // literal dephasing leaves rho non-Hermitian; condition on its Hermitian part
        let cond = if params.dephasing == DephasingForm::Literal {
            let half = Complex64::new(0.5, 0.0);
            let sym = HybridState {
                rho: (&s.rho + s.rho.adjoint()) * half,
                t: s.t,
            };
            conditional_density(params, &sym, outcome)?
        } else {
            conditional_density(params, s, outcome)?
        };
        if let Err(e) = snapshot(here, s.t, &cond) {
            failure = Some(e);
            return Err(Error::InvalidParameter("snapshot failed".into()));
        }
        if wanted {
            let m = ops.moments_of_density(&cond);
            rows.push(SeriesRow {
                t: s.t,
                omega_t: params.omega * s.t,
                means: m.means(),
                var_norm: m.normalized_variances(n),
                trace_err: s.trace_error(),
                herm_err: hermiticity_error(&s.rho),
            });
        }
        Ok(())
    });
    if let Some(e) = failure {
        return Err(e);
    }
    run?;
    Ok(rows)
}

/// First sampled `Omega t` at which `4(Delta J_x)^2/N` passes from at least 1
/// to below 1.
pub fn first_downward_crossing(rows: &[SeriesRow]) -> Option<f64> {
    rows.windows(2)
        .find(|w| w[0].var_norm[0] >= 1.0 && w[1].var_norm[0] < 1.0)
        .map(|w| w[1].omega_t)
}

fn snapshot_steps(r: &Resolved) -> Result<Vec<(usize, f64)>> {
    let t_max = r.t_max()?;
    let steps = (t_max / r.dt).round() as usize;
    r.q_omega_t
        .iter()
        .map(|wt| {
            if r.omega == 0.0 {
                bail!("[qgrid] omega_t snapshots need a non-zero omega");
            }
            let step = (wt / r.omega / r.dt).round() as usize;
            if step > steps {
                bail!("[qgrid] snapshot at omega_t = {wt} lies beyond the end of the run");
            }
            Ok((step, *wt))
        })
        .collect()
}

fn snapshot_name(wt: f64) -> String {
    format!("qgrid_omega_t_{}.csv", format!("{wt:.4}").replace('.', "p"))
}

/// Time series of conditional moments and optional Q snapshots.
pub fn run_master(r: &Resolved, header: &Header) -> Result<Vec<PathBuf>> {
    let params = r.model_params()?;
    let t_max = r.t_max()?;
    let snaps = snapshot_steps(r)?;
    let mut files = Vec::new();
    let mut q_files = Vec::new();
    let rows = master_series(&params, &r.ge, r.outcome, t_max, r.dt, r.sample_stride, |step, t, cond| {
        for (s, wt) in &snaps {
            if *s == step {
                let q = q_grid(QSource::Mixed(cond), r.n_theta, r.n_phi)?;
                let h = header.with_note(&format!("snapshot t = {}", fmt_f64(t)));
                q_files.push(write_qgrid(r.out_dir.join(snapshot_name(*wt)), &h, &q)?);
            }
        }
        Ok(())
    })?;
    let columns = [
        "t",
        "omega_t",
        "jx_mean",
        "jy_mean",
        "jz_mean",
        "jx_var_norm",
        "jy_var_norm",
        "jz_var_norm",
        "trace_err",
        "herm_err",
    ];
    let mut w = CsvWriter::create(&r.out_dir.join("timeseries.csv"), header, &columns)?;
    for row in &rows {
        let mut cells: Vec<Cell> = vec![row.t.into(), row.omega_t.into()];
        cells.extend(row.means.iter().map(|x| Cell::from(*x)));
        cells.extend(row.var_norm.iter().map(|x| Cell::from(*x)));
        cells.push(row.trace_err.into());
        cells.push(row.herm_err.into());
        w.row(cells)?;
    }
    files.push(w.finish()?);
    files.extend(q_files);
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QSourceKind {
    Initial,
    Pure,
    Master,
}

impl std::str::FromStr for QSourceKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(QSourceKind::Initial),
            "pure" => Ok(QSourceKind::Pure),
            "master" => Ok(QSourceKind::Master),
            other => bail!("unknown Q source {other:?} (expected initial, pure or master)"),
        }
    }
}

/// Q function of the initial, pure-conditional or master-conditional state,
/// with its half-maximum lobes.
pub fn run_qfunc(r: &Resolved, header: &Header, source: QSourceKind) -> Result<Vec<PathBuf>> {
    let initial = build_spin_coherent(&r.ge, r.n_atoms)?;
    let (q, tag) = match source {
        QSourceKind::Initial => (q_grid(QSource::Pure(&initial), r.n_theta, r.n_phi)?, "initial"),
        QSourceKind::Pure => {
            let setting = InteractionSetting::from_gt(r.gt()?)?;
            let cond = conditional_state(&initial, &r.light, &setting, r.outcome)?;
            (q_grid(QSource::Pure(&cond), r.n_theta, r.n_phi)?, "pure")
        }
        QSourceKind::Master => {
            let params = r.model_params()?;
            let t_max = r.t_max()?;
            let steps = (t_max / r.dt).round() as usize;
            let mut last = None;
            master_series(&params, &r.ge, r.outcome, t_max, r.dt, usize::MAX, |step, _, cond| {
                if step == steps {
                    last = Some(cond.clone());
                }
                Ok(())
            })?;
            let rho = last.ok_or_else(|| anyhow!("master run produced no final state"))?;
            (q_grid(QSource::Mixed(&rho), r.n_theta, r.n_phi)?, "master")
        }
    };
    let h = header.with_note(&format!("source = {tag}"));
    Ok(vec![
        write_qgrid(r.out_dir.join(format!("qgrid_{tag}.csv")), &h, &q)?,
        write_lobes(r.out_dir.join(format!("qgrid_{tag}_lobes.csv")), &h, &q, 0.5)?,
    ])
}

/// Summary statistics over a list of parameter values.
pub fn run_sweep(r: &Resolved, header: &Header) -> Result<Vec<PathBuf>> {
    let sweep = r.sweep.as_ref().ok_or_else(|| anyhow!("config has no [sweep] section"))?;
    let n = r.n_atoms;
    let nf = n as f64;
    let path = r.out_dir.join("sweep_summary.csv");
    match sweep.mode {
        SweepMode::Pure => {
            let state = build_spin_coherent(&r.ge, n)?;
            let rows: Vec<[f64; 5]> = sweep
                .values
                .par_iter()
                .map(|gt| -> Result<[f64; 5]> {
                    let setting = InteractionSetting::from_gt(*gt)?;
                    let p = detection_probability(&state, &r.light, &setting, r.outcome)?;
                    let cond = conditional_state(&state, &r.light, &setting, r.outcome)?;
                    let (mean, var) = pmf_mean_variance(&cond.probabilities());
                    let peaks = qnd_squeeze::pure_measure::count_local_maxima(&cond.probabilities()) as f64;
                    Ok([p, mean, var, 4.0 * var / nf, peaks])
                })
                .collect::<Result<_>>()?;
            let mut w = CsvWriter::create(
                &path,
                header,
                &["gt", "p_outcome", "k_mean", "k_var", "jx_var_norm", "local_maxima"],
            )?;
            for (gt, row) in sweep.values.iter().zip(&rows) {
                let mut cells: Vec<Cell> = vec![(*gt).into(), row[0].into(), row[1].into(), row[2].into(), row[3].into()];
                cells.push((row[4] as usize).into());
                w.row(cells)?;
            }
            Ok(vec![w.finish()?])
        }
        SweepMode::Master => {
            let t_max = r.t_max()?;
            let rows: Vec<(f64, Vec<SeriesRow>, f64)> = sweep
                .values
                .par_iter()
                .map(|v| -> Result<(f64, Vec<SeriesRow>, f64)> {
                    let (g, gamma) = match sweep.parameter {
                        SweepParameter::GOmegaOverN => {
                            let g = v * r.omega / nf;
                            (g, if r.g == 0.0 { 0.0 } else { r.gamma / r.g * g })
                        }
                        SweepParameter::GammaOverG => (r.g, v * r.g),
                        SweepParameter::Gt => unreachable!("rejected at load"),
                    };
                    let params = ModelParams::new(n, r.omega, g, gamma, r.dephasing, r.light)?;
                    let stiffness = params.stiffness();
                    let dt = if stiffness > 0.0 { r.dt.min(0.8 * master_eq::STEP_BOUND / stiffness) } else { r.dt };
                    let rows = master_series(&params, &r.ge, r.outcome, t_max, dt, 1, |_, _, _| Ok(()))?;
                    Ok((*v, rows, dt))
                })
                .collect::<Result<_>>()?;
            let mut w = CsvWriter::create(
                &path,
                header,
                &[
                    sweep.parameter.name(),
                    "dt",
                    "min_jx_var_norm",
                    "omega_t_at_min",
                    "max_jy_var_norm",
                    "first_downward_crossing",
                    "max_trace_err",
                ],
            )?;
            for (v, series, dt) in &rows {
                let min = series
                    .iter()
                    .min_by(|a, b| a.var_norm[0].total_cmp(&b.var_norm[0]))
                    .context("empty series")?;
                let max_y = series.iter().map(|s| s.var_norm[1]).fold(f64::NEG_INFINITY, f64::max);
                let trace = series.iter().map(|s| s.trace_err).fold(0.0, f64::max);
                let crossing = first_downward_crossing(series).unwrap_or(f64::NAN);
                w.row(vec![
                    (*v).into(),
                    (*dt).into(),
                    min.var_norm[0].into(),
                    min.omega_t.into(),
                    max_y.into(),
                    crossing.into(),
                    trace.into(),
                ])?;
            }
            Ok(vec![w.finish()?])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Oracle,
    Crosscheck,
    Stirling,
    Sweep,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Oracle, Suite::Crosscheck, Suite::Stirling, Suite::Sweep];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Crosscheck => "crosscheck",
            Suite::Stirling => "stirling",
            Suite::Sweep => "sweep",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| anyhow!("unknown suite {s:?} (expected oracle, crosscheck, stirling or sweep)"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationSummary {
    pub version: &'static str,
    pub suites: Vec<Suite>,
    pub fault_injected: bool,
    pub passed: bool,
    pub reports: Vec<OracleReport>,
}

fn oracle_suite(tol: f64) -> Result<Vec<OracleReport>> {
    let light = LightPair::real(1.0, 1.0);
    let mut out = Vec::new();
    for (n, alpha_sq) in [(1usize, 0.5f64), (2, 0.0), (2, 0.3), (3, 0.001)] {
        let ge = GroundExcitedAmplitudes::real(alpha_sq.sqrt(), (1.0f64 - alpha_sq).sqrt())?;
        let state = build_spin_coherent(&ge, n)?;
        for gt in [0.0, 0.3] {
            let setting = InteractionSetting::from_gt(gt)?;
            out.push(fock_oracle_report(&state, &light, &setting, tol)?.with("alpha_sq", alpha_sq));
        }
    }
    Ok(out)
}

fn crosscheck_suite(tol: f64) -> Result<Vec<OracleReport>> {
    let light = LightPair::real(2.0, 2.0);
    let ge = GroundExcitedAmplitudes::real(0.001f64.sqrt(), 0.999f64.sqrt())?;
    [2usize, 5, 30]
        .par_iter()
        .map(|n| {
            let g = 0.25 / *n as f64;
            let params = ModelParams::new(*n, 0.0, g, 0.0, master_eq::DephasingForm::Lindblad, light)?;
            Ok(me_vs_pure_all_outcomes(&params, &ge, 1.0, 1e-8, tol)?)
        })
        .collect()
}

fn stirling_suite(tol: f64) -> Result<Vec<OracleReport>> {
    let ge = GroundExcitedAmplitudes::real(0.0, 1.0)?;
    let light = LightPair::real(20f64.sqrt(), 20f64.sqrt());
    let setting = InteractionSetting::from_gt(0.005)?;
    Ok(stirling_regime_check(&ge, 200, &light, &setting, tol)?.to_vec())
}

/// Runs the selected suites in a fixed order.
pub fn validate(suites: &[Suite], tol: &ValidationTolerances, inject_fault: bool) -> Result<ValidationSummary> {
    let mut selected: Vec<Suite> = suites.to_vec();
    selected.sort();
    selected.dedup();
    let mut reports = Vec::new();
    for suite in &selected {
        let mut part = match suite {
            Suite::Oracle => oracle_suite(tol.oracle)?,
            Suite::Crosscheck => crosscheck_suite(tol.crosscheck)?,
            Suite::Stirling => stirling_suite(tol.stirling)?,
            Suite::Sweep => normalization_sweep(&default_sweep_cases(), &tol.sweep)?,
        };
        for r in &mut part {
            r.name = format!("{}/{}", suite.name(), r.name);
        }
        reports.extend(part);
    }
    if inject_fault {
        let mut part = normalization_sweep(&[fault_injection_case()], &tol.sweep)?;
        for r in &mut part {
            r.name = format!("fault/{}", r.name);
        }
        reports.extend(part);
    }
    let passed = reports.iter().all(|r| r.passed && !r.inconclusive);
    Ok(ValidationSummary {
        version: VERSION,
        suites: selected,
        fault_injected: inject_fault,
        passed,
        reports,
    })
}

pub fn write_validation(summary: &ValidationSummary, out_dir: &std::path::Path, header: &Header) -> Result<Vec<PathBuf>> {
    let mut body = String::new();
    for r in &summary.reports {
        body.push_str(&r.line());
        body.push('\n');
    }
    let status = if summary.passed { "PASS" } else { "FAIL" };
    let names: Vec<&str> = summary.suites.iter().map(|s| s.name()).collect();
    body.push_str(&format!(
        "{status} overall suites=[{}] reports={}\n",
        names.join(","),
        summary.reports.len()
    ));
    let text = write_text(&out_dir.join("validation_report.txt"), header, &body)?;
    let json_path = out_dir.join("validation_report.json");
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    std::fs::write(&json_path, json).with_context(|| format!("writing {}", json_path.display()))?;
    Ok(vec![text, json_path])
}
