//! TOML experiment description and its resolution into typed parameters.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use num_complex::Complex64;
use serde::Deserialize;

use qnd_squeeze::master_eq::{DephasingForm, ModelParams, TimeGrid, STEP_BOUND};
use qnd_squeeze::pure_measure::{most_probable_outcome, DetectionOutcome, InteractionSetting, LightPair};
use qnd_squeeze::spin_core::{bloch_to_ge, BlochAngles, GroundExcitedAmplitudes};
use qnd_squeeze::validation::SweepTolerances;

/// A complex number written either as a bare number or as `"re,im"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ComplexValue {
    Real(f64),
    Text(String),
}

impl ComplexValue {
    pub fn parse(&self) -> Result<Complex64> {
        match self {
            ComplexValue::Real(x) => Ok(Complex64::new(*x, 0.0)),
            ComplexValue::Text(s) => parse_complex(s),
        }
    }
}

pub fn parse_complex(s: &str) -> Result<Complex64> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |p: &str| p.parse::<f64>().with_context(|| format!("bad number {p:?} in {s:?}"));
    match parts.as_slice() {
        [re] => Ok(Complex64::new(num(re)?, 0.0)),
        [re, im] => Ok(Complex64::new(num(re)?, num(im)?)),
        _ => bail!("expected \"re,im\", got {s:?}"),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_atoms: usize,
    pub omega: Option<f64>,
    pub g: Option<f64>,
    /// `g = value * omega / N`.
    pub g_omega_over_n: Option<f64>,
    pub gamma: Option<f64>,
    /// `gamma = value * g`.
    pub gamma_over_g: Option<f64>,
    pub dephasing: Option<DephasingForm>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub alpha: Option<ComplexValue>,
    pub beta: Option<ComplexValue>,
    /// `|alpha|^2`, with real non-negative alpha and beta.
    pub alpha_sq: Option<f64>,
    pub theta: Option<f64>,
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSection {
    pub alpha_l: Option<ComplexValue>,
    pub alpha_r: Option<ComplexValue>,
    /// `|alpha_l|^2`, real positive amplitude.
    pub intensity_l: Option<f64>,
    pub intensity_r: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_max: Option<f64>,
    pub omega_t_max: Option<f64>,
    pub dt: Option<f64>,
    pub sample_stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PureSection {
    pub gt: Option<f64>,
    /// `gt = value / N`.
    pub gt_times_n: Option<f64>,
    /// `gt = value / sqrt(N)`.
    pub gt_times_sqrt_n: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    /// `"most-probable"` or `"n_c,n_d"`.
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QGridSection {
    pub n_theta: Option<usize>,
    pub n_phi: Option<usize>,
    /// Emit a grid for the pure conditional state.
    pub pure: Option<bool>,
    /// `Omega t` values at which the master run writes snapshots.
    pub omega_t: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesSection {
    pub completeness: Option<f64>,
    pub trace: Option<f64>,
    pub hermiticity: Option<f64>,
    pub q_normalization: Option<f64>,
    pub oracle: Option<f64>,
    pub crosscheck: Option<f64>,
    pub stirling: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    Pure,
    Master,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Gt,
    GOmegaOverN,
    GammaOverG,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Gt => "gt",
            SweepParameter::GOmegaOverN => "g_omega_over_n",
            SweepParameter::GammaOverG => "gamma_over_g",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub mode: SweepMode,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub light: LightSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub pure: PureSection,
    #[serde(default)]
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub qgrid: QGridSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub tolerances: TolerancesSection,
    pub sweep: Option<SweepSection>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeSpec {
    MostProbable,
    Explicit(DetectionOutcome),
}

impl std::str::FromStr for OutcomeSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "most-probable" || s == "auto" {
            return Ok(OutcomeSpec::MostProbable);
        }
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| anyhow!("outcome must be \"n_c,n_d\", \"auto\" or \"most-probable\", got {s:?}"))?;
        let n_c = a.trim().parse().with_context(|| format!("bad n_c in {s:?}"))?;
        let n_d = b.trim().parse().with_context(|| format!("bad n_d in {s:?}"))?;
        Ok(OutcomeSpec::Explicit(DetectionOutcome::new(n_c, n_d)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub outcome: Option<OutcomeSpec>,
    pub dephasing: Option<DephasingForm>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationTolerances {
    pub sweep: SweepTolerances,
    pub oracle: f64,
    pub crosscheck: f64,
    pub stirling: f64,
}

/// Fully determined run parameters.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub n_atoms: usize,
    pub omega: f64,
    pub g: f64,
    pub gamma: f64,
    pub dephasing: DephasingForm,
    pub ge: GroundExcitedAmplitudes,
    pub light: LightPair,
    pub t_max: Option<f64>,
    pub dt: f64,
    pub sample_stride: usize,
    pub gt: Option<f64>,
    pub outcome: DetectionOutcome,
    pub outcome_spec: OutcomeSpec,
    pub n_theta: usize,
    pub n_phi: usize,
    pub q_pure: bool,
    pub q_omega_t: Vec<f64>,
    pub out_dir: PathBuf,
    pub tolerances: ValidationTolerances,
    pub sweep: Option<SweepSection>,
}

fn exactly_one<T: Copy>(what: &str, options: &[(&str, Option<T>)]) -> Result<Option<(usize, T)>> {
    let set: Vec<(usize, T)> = options
        .iter()
        .enumerate()
        .filter_map(|(i, (_, v))| v.map(|v| (i, v)))
        .collect();
    match set.len() {
        0 => Ok(None),
        1 => Ok(Some(set[0])),
        _ => {
            let names: Vec<&str> = options.iter().filter(|(_, v)| v.is_some()).map(|(n, _)| *n).collect();
            bail!("{what}: give only one of {}", names.join(", "))
        }
    }
}

fn resolve_initial(sec: &InitialSection) -> Result<GroundExcitedAmplitudes> {
    let by_amplitudes = sec.alpha.is_some() || sec.beta.is_some();
    let by_angles = sec.theta.is_some() || sec.phi.is_some();
    let by_sq = sec.alpha_sq.is_some();
    if [by_amplitudes, by_angles, by_sq].iter().filter(|b| **b).count() > 1 {
        bail!("[initial]: use either alpha/beta, theta/phi or alpha_sq");
    }
    if by_angles {
        let angles = BlochAngles::new(sec.theta.unwrap_or(0.0), sec.phi.unwrap_or(0.0))?;
        return Ok(bloch_to_ge(&angles));
    }
    if let Some(a2) = sec.alpha_sq {
        if !(0.0..=1.0).contains(&a2) {
            bail!("[initial] alpha_sq = {a2} outside [0, 1]");
        }
        return Ok(GroundExcitedAmplitudes::real(a2.sqrt(), (1.0 - a2).sqrt())?);
    }
    let alpha = sec.alpha.as_ref().map(ComplexValue::parse).transpose()?.unwrap_or_default();
    let beta = match &sec.beta {
        Some(b) => b.parse()?,
        None => Complex64::new((1.0 - alpha.norm_sqr()).max(0.0).sqrt(), 0.0),
    };
    Ok(GroundExcitedAmplitudes::new(alpha, beta)?)
}

fn resolve_light(sec: &LightSection) -> Result<LightPair> {
    let side = |amp: &Option<ComplexValue>, intensity: Option<f64>, name: &str| -> Result<Complex64> {
        match (amp, intensity) {
            (Some(_), Some(_)) => bail!("[light]: give alpha_{name} or intensity_{name}, not both"),
            (Some(a), None) => a.parse(),
            (None, Some(i)) if i >= 0.0 => Ok(Complex64::new(i.sqrt(), 0.0)),
            (None, Some(i)) => bail!("[light] intensity_{name} = {i} is negative"),
            (None, None) => Ok(Complex64::new(2.0, 0.0)),
        }
    };
    Ok(LightPair::new(
        side(&sec.alpha_l, sec.intensity_l, "l")?,
        side(&sec.alpha_r, sec.intensity_r, "r")?,
    )?)
}

impl ExperimentConfig {
    pub fn resolve(&self, overrides: &Overrides) -> Result<Resolved> {
        let sys = &self.system;
        let n = sys.n_atoms;
        let nf = n as f64;
        if n == 0 {
            bail!("[system] n_atoms must be at least 1");
        }
        let omega = sys.omega.unwrap_or(PI / 4.0);
        let g = match exactly_one("[system] coupling", &[("g", sys.g), ("g_omega_over_n", sys.g_omega_over_n)])? {
            Some((0, g)) => g,
            Some((_, f)) => f * omega / nf,
            None => 0.0,
        };
        let gamma = match exactly_one("[system] dephasing rate", &[("gamma", sys.gamma), ("gamma_over_g", sys.gamma_over_g)])? {
            Some((0, v)) => v,
            Some((_, f)) => f * g,
            None => 0.0,
        };
        let dephasing = overrides.dephasing.or(sys.dephasing).unwrap_or_default();
        let ge = resolve_initial(&self.initial)?;
        let light = resolve_light(&self.light)?;

        let t_max = match exactly_one("[time] duration", &[("t_max", self.time.t_max), ("omega_t_max", self.time.omega_t_max)])? {
            Some((0, t)) => Some(t),
            Some((_, wt)) => {
                if omega == 0.0 {
                    bail!("[time] omega_t_max needs a non-zero omega");
                }
                Some(wt / omega)
            }
            None => None,
        };
        let params = ModelParams::new(n, omega, g, gamma, dephasing, light)?;
        let stiffness = params.stiffness();
        let dt = match self.time.dt {
            Some(dt) => dt,
            None if stiffness > 0.0 => (0.8 * STEP_BOUND / stiffness).min(0.01),
            None => 0.01,
        };
        let sample_stride = self.time.sample_stride.unwrap_or(10);
        if let Some(t) = t_max {
            TimeGrid::new(t, dt, sample_stride)?.validate_for(&params)?;
        }

        let gt = match exactly_one(
            "[pure] interaction",
            &[("gt", self.pure.gt), ("gt_times_n", self.pure.gt_times_n), ("gt_times_sqrt_n", self.pure.gt_times_sqrt_n)],
        )? {
            Some((0, v)) => Some(v),
            Some((1, v)) => Some(v / nf),
            Some((_, v)) => Some(v / nf.sqrt()),
            None => None,
        };
        if let Some(gt) = gt {
            InteractionSetting::from_gt(gt)?;
        }

        let outcome_spec = match overrides.outcome {
            Some(o) => o,
            None => match &self.measurement.outcome {
                Some(s) => s.parse()?,
                None => OutcomeSpec::MostProbable,
            },
        };
        let outcome = match outcome_spec {
            OutcomeSpec::MostProbable => most_probable_outcome(&light),
            OutcomeSpec::Explicit(o) => o,
        };

        let n_theta = self.qgrid.n_theta.unwrap_or(128);
        let n_phi = self.qgrid.n_phi.unwrap_or(128);
        if n_theta < qnd_squeeze::husimi::MIN_GRID || n_phi < qnd_squeeze::husimi::MIN_GRID {
            bail!("[qgrid] sizes must be at least {}", qnd_squeeze::husimi::MIN_GRID);
        }
        let q_omega_t = self.qgrid.omega_t.clone().unwrap_or_default();
        if let Some(bad) = q_omega_t.iter().find(|w| !(**w >= 0.0)) {
            bail!("[qgrid] omega_t entries must be >= 0, got {bad}");
        }

        let tol = &self.tolerances;
        let base = SweepTolerances::default();
        let tolerances = ValidationTolerances {
            sweep: SweepTolerances {
                completeness: tol.completeness.unwrap_or(base.completeness),
                trace: tol.trace.unwrap_or(base.trace),
                hermiticity: tol.hermiticity.unwrap_or(base.hermiticity),
                q_normalization: tol.q_normalization.unwrap_or(base.q_normalization),
            },
            oracle: tol.oracle.unwrap_or(1e-8),
            crosscheck: tol.crosscheck.unwrap_or(1e-8),
            stirling: tol.stirling.unwrap_or(0.05),
        };
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                bail!("[sweep] values must not be empty");
            }
            let ok = matches!(
                (sw.mode, sw.parameter),
                (SweepMode::Pure, SweepParameter::Gt)
                    | (SweepMode::Master, SweepParameter::GOmegaOverN)
                    | (SweepMode::Master, SweepParameter::GammaOverG)
            );
            if !ok {
                bail!("[sweep] parameter {} does not apply to this mode", sw.parameter.name());
            }
        }

        Ok(Resolved {
            n_atoms: n,
            omega,
            g,
            gamma,
            dephasing,
            ge,
            light,
            t_max,
            dt,
            sample_stride,
            gt,
            outcome,
            outcome_spec,
            n_theta,
            n_phi,
            q_pure: self.qgrid.pure.unwrap_or(false),
            q_omega_t,
            out_dir: overrides
                .out_dir
                .clone()
                .or_else(|| self.output.dir.clone())
                .unwrap_or_else(|| PathBuf::from("out")),
            tolerances,
            sweep: self.sweep.clone(),
        })
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_c(z: Complex64) -> String {
    format!("\"{},{}\"", fmt_f64(z.re), fmt_f64(z.im))
}

impl Resolved {
    pub fn model_params(&self) -> Result<ModelParams> {
        Ok(ModelParams::new(self.n_atoms, self.omega, self.g, self.gamma, self.dephasing, self.light)?)
    }

    pub fn t_max(&self) -> Result<f64> {
        self.t_max.ok_or_else(|| anyhow!("[time] needs t_max or omega_t_max"))
    }

    pub fn gt(&self) -> Result<f64> {
        self.gt.ok_or_else(|| anyhow!("[pure] needs gt, gt_times_n or gt_times_sqrt_n"))
    }

    /// The resolved parameters as TOML-like `key = value` lines in a fixed
    /// order. Output files embed this verbatim.
    pub fn echo(&self) -> Vec<String> {
        let mut s = String::new();
        let _ = writeln!(s, "[system]");
        let _ = writeln!(s, "n_atoms = {}", self.n_atoms);
        let _ = writeln!(s, "omega = {}", fmt_f64(self.omega));
        let _ = writeln!(s, "g = {}", fmt_f64(self.g));
        let _ = writeln!(s, "gamma = {}", fmt_f64(self.gamma));
        let _ = writeln!(s, "dephasing = \"{}\"", self.dephasing);
        let _ = writeln!(s, "[initial]");
        let _ = writeln!(s, "alpha = {}", fmt_c(self.ge.alpha));
        let _ = writeln!(s, "beta = {}", fmt_c(self.ge.beta));
        let _ = writeln!(s, "[light]");
        let _ = writeln!(s, "alpha_l = {}", fmt_c(self.light.alpha_l));
        let _ = writeln!(s, "alpha_r = {}", fmt_c(self.light.alpha_r));
        let _ = writeln!(s, "[time]");
        if let Some(t) = self.t_max {
            let _ = writeln!(s, "t_max = {}", fmt_f64(t));
        }
        let _ = writeln!(s, "dt = {}", fmt_f64(self.dt));
        let _ = writeln!(s, "sample_stride = {}", self.sample_stride);
        if let Some(gt) = self.gt {
            let _ = writeln!(s, "[pure]");
            let _ = writeln!(s, "gt = {}", fmt_f64(gt));
        }
        let _ = writeln!(s, "[measurement]");
        let _ = writeln!(s, "outcome = \"{},{}\"", self.outcome.n_c, self.outcome.n_d);
        let _ = writeln!(s, "[qgrid]");
        let _ = writeln!(s, "n_theta = {}", self.n_theta);
        let _ = writeln!(s, "n_phi = {}", self.n_phi);
        let _ = writeln!(s, "pure = {}", self.q_pure);
        let list: Vec<String> = self.q_omega_t.iter().map(|w| fmt_f64(*w)).collect();
        let _ = writeln!(s, "omega_t = [{}]", list.join(", "));
        let t = &self.tolerances;
        let _ = writeln!(s, "[tolerances]");
        let _ = writeln!(s, "completeness = {}", fmt_f64(t.sweep.completeness));
        let _ = writeln!(s, "trace = {}", fmt_f64(t.sweep.trace));
        let _ = writeln!(s, "hermiticity = {}", fmt_f64(t.sweep.hermiticity));
        let _ = writeln!(s, "q_normalization = {}", fmt_f64(t.sweep.q_normalization));
        let _ = writeln!(s, "oracle = {}", fmt_f64(t.oracle));
        let _ = writeln!(s, "crosscheck = {}", fmt_f64(t.crosscheck));
        let _ = writeln!(s, "stirling = {}", fmt_f64(t.stirling));
        if let Some(sw) = &self.sweep {
            let _ = writeln!(s, "[sweep]");
            let mode = match sw.mode {
                SweepMode::Pure => "pure",
                SweepMode::Master => "master",
            };
            let _ = writeln!(s, "mode = \"{mode}\"");
            let _ = writeln!(s, "parameter = \"{}\"", sw.parameter.name());
            let list: Vec<String> = sw.values.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(s, "values = [{}]", list.join(", "));
        }
        s.lines().map(str::to_string).collect()
    }
}
