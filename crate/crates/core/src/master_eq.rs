//! Tunneling and dephasing in the hybrid coherent-state representation.
//!
//! The joint atom-light density operator is expanded as
//! `sum rho_{kk'} |k; alpha_k><k'; alpha_k'|`, where the light amplitudes of
//! each atom-number sector acquire the phase `-/+ (2k - N) gt / 2` analytically.
//! Only the coefficient matrix `rho_{kk'}` is integrated. Tunneling couples
//! neighbouring sectors weighted by the overlap of their light states;
//! dephasing along `J_x` damps the off-diagonals.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::logmath::{coherent_factor, log_sum_exp, LogComplex};
use crate::pure_measure::{DetectionOutcome, LightPair, PROBABILITY_FLOOR};
use crate::spin_core::{build_spin_coherent, hermiticity_error, GroundExcitedAmplitudes, MAX_ATOMS};
use crate::{Error, Result};

/// Upper bound on `dt * max(Omega, g N, gamma N^2)`.
pub const STEP_BOUND: f64 = 0.05;

const TRACE_TOL: f64 = 1e-8;
const HERMITIAN_TOL: f64 = 1e-9;
const DIAGONAL_SLACK: f64 = 1e-10;

/// Form of the dephasing term acting on `rho_{mm'}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DephasingForm {
    /// `-(gamma/2)(m - m')^2 rho_{mm'}`, from the `J_x` collapse operator.
    #[default]
    Lindblad,
    /// `-gamma (m - m') rho_{mm'}`. Does not preserve Hermiticity.
    Literal,
}

impl fmt::Display for DephasingForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DephasingForm::Lindblad => "lindblad",
            DephasingForm::Literal => "literal",
        })
    }
}

impl FromStr for DephasingForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lindblad" => Ok(DephasingForm::Lindblad),
            "literal" => Ok(DephasingForm::Literal),
            other => Err(Error::InvalidParameter(format!(
                "unknown dephasing form {other:?} (expected lindblad or literal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub n_atoms: usize,
    /// Tunneling frequency.
    pub omega: f64,
    /// Atom-light coupling.
    pub g: f64,
    /// Dephasing rate.
    pub gamma: f64,
    pub dephasing: DephasingForm,
    pub light: LightPair,
}

impl ModelParams {
    pub fn new(
        n_atoms: usize,
        omega: f64,
        g: f64,
        gamma: f64,
        dephasing: DephasingForm,
        light: LightPair,
    ) -> Result<Self> {
        if n_atoms == 0 {
            return Err(Error::InvalidParameter("need at least one atom".into()));
        }
        if n_atoms > MAX_ATOMS {
            return Err(Error::Capacity {
                what: "atom number",
                requested: n_atoms,
                max: MAX_ATOMS,
            });
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dephasing rate must be >= 0, got {gamma}"
            )));
        }
        if !omega.is_finite() || !g.is_finite() {
            return Err(Error::InvalidParameter("omega and g must be finite".into()));
        }
        Ok(Self {
            n_atoms,
            omega,
            g,
            gamma,
            dephasing,
            light,
        })
    }

    /// Fastest rate in the generator, used for the step-size bound.
    pub fn stiffness(&self) -> f64 {
        let n = self.n_atoms as f64;
        self.omega
            .abs()
            .max(self.g.abs() * n)
            .max(self.gamma * n * n)
    }
}

/// Coefficient matrix `rho_{kk'}` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub rho: DMatrix<Complex64>,
    pub t: f64,
}

impl HybridState {
    pub fn trace_error(&self) -> f64 {
        (self.rho.trace() - Complex64::new(1.0, 0.0)).norm()
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.rho)
    }

    /// Trace, finiteness and (in Lindblad mode) Hermiticity and diagonal
    /// range checks.
    pub fn check(&self, form: DephasingForm) -> Result<()> {
        let violation = |detail: String| Error::InvariantViolation { t: self.t, detail };
        if self.rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(violation("non-finite matrix element".into()));
        }
        let drift = self.trace_error();
        if drift > TRACE_TOL {
            return Err(violation(format!("trace drift {drift:e}")));
        }
        if form == DephasingForm::Lindblad {
            let herm = self.hermiticity_error();
            if herm > HERMITIAN_TOL {
                return Err(violation(format!("hermiticity error {herm:e}")));
            }
            for (k, d) in self.rho.diagonal().iter().enumerate() {
                if d.re < -DIAGONAL_SLACK || d.re > 1.0 + DIAGONAL_SLACK {
                    return Err(violation(format!("rho[{k},{k}] = {} out of [0, 1]", d.re)));
                }
            }
        }
        Ok(())
    }
}

/// `|psi><psi|` for the spin coherent state built from `ge`.
pub fn initial_density(ge: &GroundExcitedAmplitudes, n_atoms: usize) -> Result<HybridState> {
    Ok(HybridState {
        rho: build_spin_coherent(ge, n_atoms)?.density(),
        t: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_max: f64,
    pub dt: f64,
    /// Keep every `stride`-th step.
    pub stride: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, dt: f64, stride: usize) -> Result<Self> {
        if !(dt > 0.0) || !(t_max >= 0.0) || !t_max.is_finite() || stride == 0 {
            return Err(Error::InvalidParameter(format!(
                "time grid needs dt > 0, t_max >= 0, stride >= 1; got dt = {dt}, t_max = {t_max}, stride = {stride}"
            )));
        }
        Ok(Self { t_max, dt, stride })
    }

    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    /// Rejects steps that are too coarse for the generator of `params`.
    pub fn validate_for(&self, params: &ModelParams) -> Result<()> {
        let product = self.dt * params.stiffness();
        if product > STEP_BOUND {
            return Err(Error::InvalidParameter(format!(
                "dt * max(Omega, gN, gamma N^2) = {product} exceeds {STEP_BOUND}"
            )));
        }
        Ok(())
    }
}

/// `(alpha_{k,l}(t), alpha_{k,r}(t))`.
pub fn light_amplitudes(params: &ModelParams, k: usize, t: f64) -> Result<(Complex64, Complex64)> {
    if k > params.n_atoms {
        return Err(Error::IndexOutOfRange {
            k,
            n_atoms: params.n_atoms,
        });
    }
    Ok(light_amplitudes_unchecked(params, k, t))
}

fn light_amplitudes_unchecked(params: &ModelParams, k: usize, t: f64) -> (Complex64, Complex64) {
    let phase = (2.0 * k as f64 - params.n_atoms as f64) * params.g * t / 2.0;
    let rot = Complex64::from_polar(1.0, phase);
    (params.light.alpha_l * rot.conj(), params.light.alpha_r * rot)
}

/// Overlaps `<alpha_m|alpha_{m+1}>` and `<alpha_m|alpha_{m-1}>` of the
/// light states of neighbouring sectors. Independent of `m`.
pub fn coherent_overlaps(params: &ModelParams, t: f64) -> (Complex64, Complex64) {
    let gt = params.g * t;
    let il = params.light.alpha_l.norm_sqr();
    let ir = params.light.alpha_r.norm_sqr();
    let down = Complex64::from_polar(1.0, -gt);
    let up = down.conj();
    let plus = (il * down + ir * up - (il + ir)).exp();
    let minus = (il * up + ir * down - (il + ir)).exp();
    (plus, minus)
}

/// Writes `d rho / dt` into `out`.
pub fn rhs_into(params: &ModelParams, rho: &DMatrix<Complex64>, t: f64, out: &mut DMatrix<Complex64>) {
    let n = params.n_atoms;
    let (ov_plus, ov_minus) = coherent_overlaps(params, t);
    let i_omega = Complex64::new(0.0, params.omega);
    // hop[m] = sqrt(m (N - m + 1)) / 2 links m-1 and m
    let hop: Vec<f64> = (0..=n + 1)
        .map(|m| {
            if m == 0 || m > n {
                0.0
            } else {
                ((m * (n - m + 1)) as f64).sqrt() / 2.0
            }
        })
        .collect();
    let from_below = i_omega * ov_minus;
    let from_above = i_omega * ov_plus;
    for mp in 0..=n {
        for m in 0..=n {
            let mut acc = Complex64::new(0.0, 0.0);
            if m > 0 {
                acc += from_below * hop[m] * rho[(m - 1, mp)];
            }
            if m < n {
                acc += from_above * hop[m + 1] * rho[(m + 1, mp)];
            }
            if mp > 0 {
                acc -= i_omega * ov_plus * hop[mp] * rho[(m, mp - 1)];
            }
            if mp < n {
                acc -= i_omega * ov_minus * hop[mp + 1] * rho[(m, mp + 1)];
            }
            let diff = m as f64 - mp as f64;
            let decay = match params.dephasing {
                DephasingForm::Lindblad => 0.5 * params.gamma * diff * diff,
                DephasingForm::Literal => params.gamma * diff,
            };
            out[(m, mp)] = acc - rho[(m, mp)] * decay;
        }
    }
}

pub fn rhs(params: &ModelParams, rho: &DMatrix<Complex64>, t: f64) -> DMatrix<Complex64> {
    let mut out = DMatrix::zeros(rho.nrows(), rho.ncols());
    rhs_into(params, rho, t, &mut out);
    out
}

fn check_shape(params: &ModelParams, rho: &DMatrix<Complex64>) -> Result<()> {
    let dim = params.n_atoms + 1;
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::InvalidParameter(format!(
            "density matrix is {}x{}, expected {dim}x{dim}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    Ok(())
}

/// Fixed-step RK4 from `rho0.t` over `grid`, returning the sampled states
/// (including the initial one). Aborts on the first invariant violation.
pub fn integrate(params: &ModelParams, rho0: &HybridState, grid: &TimeGrid) -> Result<Vec<HybridState>> {
    grid.validate_for(params)?;
    integrate_unguarded(params, rho0, grid)
}

/// [`integrate`] without the step-size guard. Used by negative controls that
/// need to watch an unstable step fail.
pub fn integrate_unguarded(
    params: &ModelParams,
    rho0: &HybridState,
    grid: &TimeGrid,
) -> Result<Vec<HybridState>> {
    let mut samples = Vec::with_capacity(grid.steps() / grid.stride + 2);
    integrate_with(params, rho0, grid, |s| {
        samples.push(s.clone());
        Ok(())
    })?;
    Ok(samples)
}

/// Streams each sampled state to `visit` instead of collecting them.
pub fn integrate_with<F>(params: &ModelParams, rho0: &HybridState, grid: &TimeGrid, mut visit: F) -> Result<()>
where
    F: FnMut(&HybridState) -> Result<()>,
{
    check_shape(params, &rho0.rho)?;
    rho0.check(params.dephasing)?;
    let dim = params.n_atoms + 1;
    let mut state = rho0.clone();
    let start = rho0.t;
    let dt = grid.dt;
    let mut k1 = DMatrix::zeros(dim, dim);
    let mut k2 = DMatrix::zeros(dim, dim);
    let mut k3 = DMatrix::zeros(dim, dim);
    let mut k4 = DMatrix::zeros(dim, dim);
    let mut tmp = DMatrix::zeros(dim, dim);

    visit(&state)?;
    let steps = grid.steps();
    for step in 1..=steps {
        let t = state.t;
        rhs_into(params, &state.rho, t, &mut k1);
        tmp.copy_from(&state.rho);
        add_scaled(&mut tmp, dt / 2.0, &k1);
        rhs_into(params, &tmp, t + dt / 2.0, &mut k2);
        tmp.copy_from(&state.rho);
        add_scaled(&mut tmp, dt / 2.0, &k2);
        rhs_into(params, &tmp, t + dt / 2.0, &mut k3);
        tmp.copy_from(&state.rho);
        add_scaled(&mut tmp, dt, &k3);
        rhs_into(params, &tmp, t + dt, &mut k4);

        k2 += &k3;
        k2 *= Complex64::new(2.0, 0.0);
        k1 += &k2;
        k1 += &k4;
        add_scaled(&mut state.rho, dt / 6.0, &k1);
        // recompute rather than accumulate to keep sample times exact
        state.t = start + step as f64 * dt;

        if step % grid.stride == 0 || step == steps {
            state.check(params.dephasing)?;
            visit(&state)?;
        }
    }
    Ok(())
}

fn add_scaled(y: &mut DMatrix<Complex64>, a: f64, x: &DMatrix<Complex64>) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += xi * a;
    }
}

/// Per-sector detection weights `w_k` with `P = sum_k rho_kk |w_k|^2` and
/// `rho_cond = w rho w^dagger / P`, in log form.
fn sector_weights(params: &ModelParams, t: f64, outcome: DetectionOutcome) -> Vec<LogComplex> {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let i = Complex64::i();
    (0..=params.n_atoms)
        .map(|k| {
            let (al, ar) = light_amplitudes_unchecked(params, k, t);
            let vacuum = LogComplex::from_real_ln(-(al.norm_sqr() + ar.norm_sqr()) / 2.0);
            let to_c = (al + i * ar) * scale;
            let to_d = (i * al + ar) * scale;
            vacuum
                .mul(coherent_factor(to_c, outcome.n_c))
                .mul(coherent_factor(to_d, outcome.n_d))
        })
        .collect()
}

fn ln_detection_probability(params: &ModelParams, state: &HybridState, weights: &[LogComplex]) -> Result<f64> {
    let mut terms = Vec::with_capacity(weights.len());
    let mut imag = 0.0f64;
    for (k, w) in weights.iter().enumerate() {
        let d = state.rho[(k, k)];
        imag = imag.max(d.im.abs());
        if d.re > 0.0 {
            terms.push(d.re.ln() + 2.0 * w.ln_mag);
        }
    }
    if imag > 1e-10 {
        return Err(Error::InvariantViolation {
            t: state.t,
            detail: format!("diagonal has imaginary part {imag:e}"),
        });
    }
    let _ = params;
    Ok(log_sum_exp(terms))
}

/// `P(n_c, n_d)` from the diagonal of `rho` and the sector light amplitudes.
pub fn detection_probability_me(params: &ModelParams, state: &HybridState, outcome: DetectionOutcome) -> Result<f64> {
    check_shape(params, &state.rho)?;
    let weights = sector_weights(params, state.t, outcome);
    Ok(ln_detection_probability(params, state, &weights)?.exp().clamp(0.0, 1.0))
}

/// Atomic density matrix conditioned on detecting `(n_c, n_d)`.
pub fn conditional_density(
    params: &ModelParams,
    state: &HybridState,
    outcome: DetectionOutcome,
) -> Result<DMatrix<Complex64>> {
    check_shape(params, &state.rho)?;
    let weights = sector_weights(params, state.t, outcome);
    let ln_p = ln_detection_probability(params, state, &weights)?;
    let probability = ln_p.exp();
    if !(probability > PROBABILITY_FLOOR) {
        return Err(Error::UnreachableOutcome {
            n_c: outcome.n_c,
            n_d: outcome.n_d,
            probability,
        });
    }
    // w_k / sqrt(P), exponentiated after removing ln sqrt(P)
    let scaled: Vec<Complex64> = weights.iter().map(|w| w.to_complex_shifted(ln_p / 2.0)).collect();
    let dim = params.n_atoms + 1;
    Ok(DMatrix::from_fn(dim, dim, |k, kp| {
        scaled[k] * state.rho[(k, kp)] * scaled[kp].conj()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pure_measure::{conditional_state, detection_probability, poisson, InteractionSetting};
    use crate::spin_core::spin_operator_matrices;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn params(n: usize, omega: f64, g: f64, gamma: f64) -> ModelParams {
        ModelParams::new(n, omega, g, gamma, DephasingForm::Lindblad, LightPair::real(2.0, 2.0)).unwrap()
    }

    fn tilted() -> GroundExcitedAmplitudes {
        GroundExcitedAmplitudes::real(0.001f64.sqrt(), 0.999f64.sqrt()).unwrap()
    }

    fn max_abs(m: &DMatrix<Complex64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn params_validation() {
        let light = LightPair::real(1.0, 1.0);
        assert!(ModelParams::new(0, 1.0, 0.1, 0.0, DephasingForm::Lindblad, light).is_err());
        assert!(ModelParams::new(4, 1.0, 0.1, -0.1, DephasingForm::Lindblad, light).is_err());
        assert_eq!("literal".parse::<DephasingForm>().unwrap(), DephasingForm::Literal);
        assert!("other".parse::<DephasingForm>().is_err());
    }

    #[test]
    fn light_amplitude_examples() {
        let p = ModelParams::new(10, 1.0, 0.3, 0.0, DephasingForm::Lindblad, LightPair::new(c(1.0, 0.5), c(-0.2, 2.0)).unwrap()).unwrap();
        let (l, r) = light_amplitudes(&p, 3, 0.0).unwrap();
        assert_eq!((l, r), (p.light.alpha_l, p.light.alpha_r));
        let (l, r) = light_amplitudes(&p, 5, 17.0).unwrap();
        assert!((l - p.light.alpha_l).norm() < 1e-15 && (r - p.light.alpha_r).norm() < 1e-15);
        // (2k - N) g t / 2 = pi with k = 6
        let t = PI / p.g;
        let (l, r) = light_amplitudes(&p, 6, t).unwrap();
        assert!((l + p.light.alpha_l).norm() < 1e-12 && (r + p.light.alpha_r).norm() < 1e-12);
        for k in 0..=10 {
            let (l, r) = light_amplitudes(&p, k, 2.7).unwrap();
            assert!((l.norm() - p.light.alpha_l.norm()).abs() < 1e-14);
            assert!((r.norm() - p.light.alpha_r.norm()).abs() < 1e-14);
        }
        assert!(light_amplitudes(&p, 11, 0.0).is_err());
    }

    #[test]
    fn overlap_examples() {
        let p = params(10, 1.0, 0.5, 0.0);
        let (a, b) = coherent_overlaps(&p, 0.0);
        assert!((a - c(1.0, 0.0)).norm() < 1e-15 && (b - c(1.0, 0.0)).norm() < 1e-15);
        // gt = pi with |alpha|^2 = 4 in each arm
        let (a, b) = coherent_overlaps(&p, PI / p.g);
        assert!((a - c((-16.0f64).exp(), 0.0)).norm() < 1e-18);
        assert!((b - c((-16.0f64).exp(), 0.0)).norm() < 1e-18);
        for t in [0.3, 1.0, 4.4] {
            let (a, b) = coherent_overlaps(&p, t);
            let expected = (-8.0 * (1.0 - (p.g * t).cos())).exp();
            assert!((a.norm() - expected).abs() < 1e-14);
            assert!((a - b.conj()).norm() < 1e-14);
            assert!(a.norm() <= 1.0);
        }
    }

    #[test]
    fn rhs_without_light_is_commutator_with_jz() {
        let p = params(6, 0.8, 0.0, 0.0);
        let ops = spin_operator_matrices(6);
        let rho = initial_density(&GroundExcitedAmplitudes::new(c(0.3, 0.2), c(0.0, 0.932_737_905_308_881_5)).unwrap(), 6)
            .unwrap()
            .rho;
        let expected = (&ops.jz * &rho - &rho * &ops.jz) * c(0.0, -0.8);
        assert!(max_abs(&(rhs(&p, &rho, 1.7) - expected)) < 1e-14);
    }

    #[test]
    fn rhs_vanishes_without_tunneling_or_dephasing() {
        let p = params(5, 0.0, 0.3, 0.0);
        let rho = initial_density(&tilted(), 5).unwrap().rho;
        assert!(max_abs(&rhs(&p, &rho, 2.0)) == 0.0);
    }

    #[test]
    fn lindblad_rhs_is_traceless_and_hermitian() {
        let p = params(8, 0.7, 0.05, 0.02);
        let rho = initial_density(&GroundExcitedAmplitudes::new(c(0.6, 0.0), c(0.0, 0.8)).unwrap(), 8).unwrap().rho;
        let d = rhs(&p, &rho, 3.3);
        assert!(d.trace().norm() < 1e-12);
        assert!(hermiticity_error(&d) < 1e-13);
    }

    #[test]
    fn pure_dephasing_has_closed_form() {
        let gamma = 0.01;
        let p = params(6, 0.0, 0.0, gamma);
        let rho0 = initial_density(&GroundExcitedAmplitudes::real(0.6, 0.8).unwrap(), 6).unwrap();
        let grid = TimeGrid::new(10.0, 0.01, 100).unwrap();
        let samples = integrate(&p, &rho0, &grid).unwrap();
        for s in &samples {
            for m in 0..=6 {
                for mp in 0..=6 {
                    let d = (m as f64 - mp as f64).powi(2);
                    let expected = rho0.rho[(m, mp)] * (-gamma * d * s.t / 2.0).exp();
                    assert!((s.rho[(m, mp)] - expected).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dephasing_contracts_coherences() {
        let p = params(5, 0.0, 0.0, 0.2);
        let rho0 = initial_density(&tilted(), 5).unwrap();
        let samples = integrate(&p, &rho0, &TimeGrid::new(5.0, 0.01, 10).unwrap()).unwrap();
        for pair in samples.windows(2) {
            for m in 0..=5 {
                assert!((pair[1].rho[(m, m)] - rho0.rho[(m, m)]).norm() < 1e-12);
                for mp in 0..=5 {
                    if m != mp {
                        assert!(pair[1].rho[(m, mp)].norm() <= pair[0].rho[(m, mp)].norm() + 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn step_bound_enforced() {
        let p = params(30, PI / 4.0, 0.0, 0.0);
        let rho0 = initial_density(&tilted(), 30).unwrap();
        let r = integrate(&p, &rho0, &TimeGrid::new(1.0, 0.1, 1).unwrap());
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
        assert!(TimeGrid::new(1.0, 0.0, 1).is_err());
        assert!(TimeGrid::new(1.0, 0.1, 0).is_err());
    }

    #[test]
    fn unstable_step_is_caught() {
        let p = params(10, 1.0, 0.0, 2.0);
        let rho0 = initial_density(&GroundExcitedAmplitudes::real(0.6, 0.8).unwrap(), 10).unwrap();
        let r = integrate_unguarded(&p, &rho0, &TimeGrid::new(50.0, 0.5, 1).unwrap());
        assert!(matches!(r, Err(Error::InvariantViolation { .. })), "{r:?}");
    }

    #[test]
    fn free_precession_matches_closed_form() {
        let n = 10;
        let p = params(n, 0.9, 0.0, 0.0);
        let ops = spin_operator_matrices(n);
        let rho0 = initial_density(&tilted(), n).unwrap();
        let samples = integrate(&p, &rho0, &TimeGrid::new(20.0, 0.01, 50).unwrap()).unwrap();
        for s in samples {
            let m = ops.moments_of_density(&s.rho);
            let e = crate::spin_core::analytic_precession(&tilted(), n, 0.9, s.t);
            for (a, b) in m.means().iter().zip(e.means()) {
                assert!((a - b).abs() < 1e-8, "t = {}: {a} vs {b}", s.t);
            }
            for (a, b) in m.variances().iter().zip(e.variances()) {
                assert!((a - b).abs() < 1e-8, "t = {}: {a} vs {b}", s.t);
            }
        }
    }

    #[test]
    fn detection_probability_at_start_is_poisson_product() {
        let p = params(8, 0.5, 0.2, 0.0);
        let rho0 = initial_density(&tilted(), 8).unwrap();
        for (nc, nd) in [(0, 0), (4, 4), (2, 7)] {
            let pr = detection_probability_me(&p, &rho0, DetectionOutcome::new(nc, nd)).unwrap();
            assert!((pr - poisson(4.0, nc) * poisson(4.0, nd)).abs() < 1e-14);
        }
    }

    #[test]
    fn detection_grid_is_complete() {
        let p = params(8, 0.5, 0.2, 0.0);
        let rho0 = initial_density(&tilted(), 8).unwrap();
        let state = integrate(&p, &rho0, &TimeGrid::new(3.0, 0.01, 300).unwrap()).unwrap().pop().unwrap();
        let cutoff = crate::pure_measure::outcome_cutoff(&p.light);
        let mut total = 0.0;
        for nc in 0..=cutoff {
            for nd in 0..=cutoff {
                total += detection_probability_me(&p, &state, DetectionOutcome::new(nc, nd)).unwrap();
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn no_coupling_means_no_backaction() {
        let p = params(8, 0.5, 0.0, 0.0);
        let rho0 = initial_density(&tilted(), 8).unwrap();
        let state = integrate(&p, &rho0, &TimeGrid::new(2.0, 0.01, 200).unwrap()).unwrap().pop().unwrap();
        let cond = conditional_density(&p, &state, DetectionOutcome::new(3, 6)).unwrap();
        assert!(max_abs(&(cond - &state.rho)) < 1e-12);
    }

    #[test]
    fn matches_pure_model_without_tunneling() {
        let n = 12;
        let p = params(n, 0.0, 0.1, 0.0);
        let t = 1.3;
        let ge = tilted();
        let rho = HybridState { rho: initial_density(&ge, n).unwrap().rho, t };
        let state = build_spin_coherent(&ge, n).unwrap();
        let setting = InteractionSetting::new(p.g, t).unwrap();
        for (nc, nd) in [(4, 4), (1, 6), (0, 3)] {
            let outcome = DetectionOutcome::new(nc, nd);
            let cond = conditional_density(&p, &rho, outcome).unwrap();
            let pure = conditional_state(&state, &p.light, &setting, outcome).unwrap().density();
            assert!(max_abs(&(cond - pure)) < 1e-12);
            let a = detection_probability_me(&p, &rho, outcome).unwrap();
            let b = detection_probability(&state, &p.light, &setting, outcome).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn unreachable_outcome_in_the_dark() {
        let p = ModelParams::new(4, 1.0, 0.1, 0.0, DephasingForm::Lindblad, LightPair::real(0.0, 0.0)).unwrap();
        let rho0 = initial_density(&tilted(), 4).unwrap();
        assert!(matches!(
            conditional_density(&p, &rho0, DetectionOutcome::new(1, 1)),
            Err(Error::UnreachableOutcome { .. })
        ));
    }

    #[test]
    fn literal_mode_breaks_hermiticity_but_keeps_trace() {
        let p = ModelParams::new(6, 0.5, 0.0, 0.05, DephasingForm::Literal, LightPair::real(1.0, 1.0)).unwrap();
        let rho0 = initial_density(&GroundExcitedAmplitudes::real(0.6, 0.8).unwrap(), 6).unwrap();
        let last = integrate(&p, &rho0, &TimeGrid::new(5.0, 0.01, 500).unwrap()).unwrap().pop().unwrap();
        assert!(last.trace_error() < 1e-10);
        assert!(last.hermiticity_error() > 1e-3);
    }

    #[test]
    fn shape_mismatch() {
        let p = params(4, 1.0, 0.0, 0.0);
        let bad = HybridState { rho: DMatrix::identity(3, 3), t: 0.0 };
        assert!(integrate(&p, &bad, &TimeGrid::new(1.0, 0.01, 1).unwrap()).is_err());
    }
}
