//! Collective-spin machinery for N atoms shared between two wells.
//!
//! Basis states are `|k, N-k>` with `k` atoms in the left well. In this basis
//! `J_x = (n_l - n_r)/2` is diagonal with eigenvalue `k - N/2`, while `J_y` and
//! `J_z` move one atom between the wells. The operators are normalised so that
//! `J_z = (n_e - n_g)/2` measures the excited/ground population difference,
//! which fixes the sign of the `J_z` hopping elements to be negative.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::logmath::{ln_binomial, normalize_log_vector, LogComplex};
use crate::{Error, Result};

/// Largest atom number accepted by state constructors.
pub const MAX_ATOMS: usize = 4096;

const GE_NORM_TOL: f64 = 1e-12;
const STATE_NORM_TOL: f64 = 1e-10;
const DENSITY_TRACE_TOL: f64 = 1e-8;
const DENSITY_HERMITIAN_TOL: f64 = 1e-8;
/// Variances below this are reported through `SpinMoments::variance_flagged`.
const VARIANCE_FLAG: f64 = -1e-8;

/// Excited (`alpha`) and ground (`beta`) single-particle amplitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundExcitedAmplitudes {
    pub alpha: Complex64,
    pub beta: Complex64,
}

impl GroundExcitedAmplitudes {
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        let deviation = (alpha.norm_sqr() + beta.norm_sqr() - 1.0).abs();
        if !(deviation <= GE_NORM_TOL) {
            return Err(Error::NotNormalized { deviation });
        }
        Ok(Self { alpha, beta })
    }

    pub fn real(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(Complex64::new(alpha, 0.0), Complex64::new(beta, 0.0))
    }

    /// `arg(alpha) - arg(beta)`.
    pub fn relative_phase(&self) -> f64 {
        self.alpha.arg() - self.beta.arg()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlochAngles {
    pub theta: f64,
    pub phi: f64,
}

impl BlochAngles {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta) {
            return Err(Error::InvalidParameter(format!(
                "theta = {theta} outside [0, pi]"
            )));
        }
        if !(0.0..TAU).contains(&phi) {
            return Err(Error::InvalidParameter(format!(
                "phi = {phi} outside [0, 2pi)"
            )));
        }
        Ok(Self { theta, phi })
    }

    /// Inverse of [`bloch_to_ge`] up to a global phase.
    pub fn from_ge(ge: &GroundExcitedAmplitudes) -> Self {
        let theta = 2.0 * ge.alpha.norm().atan2(ge.beta.norm());
        let phi = if ge.alpha.norm() == 0.0 || ge.beta.norm() == 0.0 {
            0.0
        } else {
            (ge.beta.arg() - ge.alpha.arg()).rem_euclid(TAU)
        };
        // rem_euclid can round up to exactly TAU
        let phi = if phi >= TAU { 0.0 } else { phi };
        Self { theta, phi }
    }
}

/// Pure atomic state in the left/right Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomState {
    amplitudes: DVector<Complex64>,
}

impl AtomState {
    pub fn new(amplitudes: DVector<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidParameter("empty amplitude vector".into()));
        }
        if amplitudes.len() - 1 > MAX_ATOMS {
            return Err(Error::Capacity {
                what: "atom number",
                requested: amplitudes.len() - 1,
                max: MAX_ATOMS,
            });
        }
        let deviation = (amplitudes.norm_squared() - 1.0).abs();
        if !(deviation <= STATE_NORM_TOL) {
            return Err(Error::NotNormalized { deviation });
        }
        Ok(Self { amplitudes })
    }

    pub fn n_atoms(&self) -> usize {
        self.amplitudes.len() - 1
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    /// `|C_k|^2` for k = 0..=N.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    /// `|<self|other>|^2`, insensitive to global phase.
    pub fn fidelity(&self, other: &AtomState) -> f64 {
        self.amplitudes.dotc(&other.amplitudes).norm_sqr()
    }

    /// `|psi><psi|`.
    pub fn density(&self) -> DMatrix<Complex64> {
        &self.amplitudes * self.amplitudes.adjoint()
    }
}

/// `((alpha + beta)/sqrt 2, (beta - alpha)/sqrt 2)`: single-particle
/// amplitudes for the left and right wells.
pub fn ge_to_lr_amplitudes(ge: &GroundExcitedAmplitudes) -> (Complex64, Complex64) {
    (
        (ge.alpha + ge.beta) * FRAC_1_SQRT_2,
        (ge.beta - ge.alpha) * FRAC_1_SQRT_2,
    )
}

pub fn bloch_to_ge(angles: &BlochAngles) -> GroundExcitedAmplitudes {
    let (s, c) = (angles.theta / 2.0).sin_cos();
    GroundExcitedAmplitudes {
        alpha: Complex64::from_polar(s, -angles.phi / 2.0),
        beta: Complex64::from_polar(c, angles.phi / 2.0),
    }
}

/// Binomial amplitudes `sqrt(C(N,k)) eta_l^k eta_r^(N-k)`.
pub fn build_spin_coherent(ge: &GroundExcitedAmplitudes, n_atoms: usize) -> Result<AtomState> {
    let amplitudes = spin_coherent_amplitudes(ge, n_atoms)?;
    AtomState::new(amplitudes)
}

pub(crate) fn spin_coherent_amplitudes(
    ge: &GroundExcitedAmplitudes,
    n_atoms: usize,
) -> Result<DVector<Complex64>> {
    if n_atoms > MAX_ATOMS {
        return Err(Error::Capacity {
            what: "atom number",
            requested: n_atoms,
            max: MAX_ATOMS,
        });
    }
    let (eta_l, eta_r) = ge_to_lr_amplitudes(ge);
    let ln_l = LogComplex::from_complex(eta_l);
    let ln_r = LogComplex::from_complex(eta_r);
    let logs: Vec<LogComplex> = (0..=n_atoms)
        .map(|k| {
            LogComplex::from_real_ln(0.5 * ln_binomial(n_atoms, k))
                .mul(ln_l.powi(k))
                .mul(ln_r.powi(n_atoms - k))
        })
        .collect();
    let amps = normalize_log_vector(&logs).ok_or(Error::NotNormalized { deviation: 1.0 })?;
    Ok(DVector::from_vec(amps))
}

/// Dense `J_x`, `J_y`, `J_z` for a fixed atom number, together with their
/// squares so repeated moment evaluations stay O(N^2).
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub jx: DMatrix<Complex64>,
    pub jy: DMatrix<Complex64>,
    pub jz: DMatrix<Complex64>,
    squares: [DMatrix<Complex64>; 3],
}

/// Ladder factor `sqrt((k+1)(N-k))/2` connecting `|k>` and `|k+1>`.
pub fn ladder(n_atoms: usize, k: usize) -> f64 {
    debug_assert!(k < n_atoms);
    (((k + 1) * (n_atoms - k)) as f64).sqrt() / 2.0
}

pub fn spin_operator_matrices(n_atoms: usize) -> SpinOperators {
    let dim = n_atoms + 1;
    let half = n_atoms as f64 / 2.0;
    let jx = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            Complex64::new(i as f64 - half, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let mut jy = DMatrix::zeros(dim, dim);
    let mut jz = DMatrix::zeros(dim, dim);
    for k in 0..n_atoms {
        let l = ladder(n_atoms, k);
        // J_y = (b_l^+ b_r - b_r^+ b_l) / 2i
        jy[(k + 1, k)] = Complex64::new(0.0, -l);
        jy[(k, k + 1)] = Complex64::new(0.0, l);
        // J_z = -(b_l^+ b_r + b_r^+ b_l) / 2
        jz[(k + 1, k)] = Complex64::new(-l, 0.0);
        jz[(k, k + 1)] = Complex64::new(-l, 0.0);
    }
    let squares = [&jx * &jx, &jy * &jy, &jz * &jz];
    SpinOperators {
        jx,
        jy,
        jz,
        squares,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpinMoments {
    pub jx_mean: f64,
    pub jy_mean: f64,
    pub jz_mean: f64,
    pub jx_var: f64,
    pub jy_var: f64,
    pub jz_var: f64,
    /// Set when a raw variance fell below -1e-8 before clamping.
    pub variance_flagged: bool,
}

impl SpinMoments {
    fn from_raw(means: [f64; 3], seconds: [f64; 3]) -> Self {
        let mut flagged = false;
        let mut vars = [0.0; 3];
        for i in 0..3 {
            let v = seconds[i] - means[i] * means[i];
            if v < VARIANCE_FLAG {
                flagged = true;
            }
            vars[i] = v.max(0.0);
        }
        Self {
            jx_mean: means[0],
            jy_mean: means[1],
            jz_mean: means[2],
            jx_var: vars[0],
            jy_var: vars[1],
            jz_var: vars[2],
            variance_flagged: flagged,
        }
    }

    pub fn means(&self) -> [f64; 3] {
        [self.jx_mean, self.jy_mean, self.jz_mean]
    }

    pub fn variances(&self) -> [f64; 3] {
        [self.jx_var, self.jy_var, self.jz_var]
    }

    /// `4 (Delta J_i)^2 / N`, equal to 1 for a spin coherent state on the
    /// equator of the corresponding axis.
    pub fn normalized_variances(&self, n_atoms: usize) -> [f64; 3] {
        let scale = 4.0 / n_atoms as f64;
        self.variances().map(|v| v * scale)
    }
}

/// `Tr(A B)` without forming the product.
fn trace_of_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

impl SpinOperators {
    pub fn n_atoms(&self) -> usize {
        self.jx.nrows() - 1
    }

    fn ops(&self) -> [&DMatrix<Complex64>; 3] {
        [&self.jx, &self.jy, &self.jz]
    }

    pub fn moments_of_state(&self, psi: &DVector<Complex64>) -> SpinMoments {
        let mut means = [0.0; 3];
        let mut seconds = [0.0; 3];
        for (i, op) in self.ops().into_iter().enumerate() {
            let j_psi = op * psi;
            means[i] = psi.dotc(&j_psi).re;
            seconds[i] = j_psi.norm_squared();
        }
        SpinMoments::from_raw(means, seconds)
    }

    /// Moments of an arbitrary matrix `rho`; only the real parts of the
    /// traces are kept. No validation.
    pub fn moments_of_density(&self, rho: &DMatrix<Complex64>) -> SpinMoments {
        let mut means = [0.0; 3];
        let mut seconds = [0.0; 3];
        for (i, op) in self.ops().into_iter().enumerate() {
            means[i] = trace_of_product(op, rho).re;
            seconds[i] = trace_of_product(&self.squares[i], rho).re;
        }
        SpinMoments::from_raw(means, seconds)
    }
}

pub fn moments_from_state(state: &AtomState) -> Result<SpinMoments> {
    let deviation = (state.amplitudes.norm_squared() - 1.0).abs();
    if !(deviation <= STATE_NORM_TOL) {
        return Err(Error::NotNormalized { deviation });
    }
    Ok(spin_operator_matrices(state.n_atoms()).moments_of_state(&state.amplitudes))
}

pub fn hermiticity_error(rho: &DMatrix<Complex64>) -> f64 {
    let n = rho.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((rho[(i, j)] - rho[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Checks `rho` is square, Hermitian and unit-trace before taking moments.
pub fn moments_from_density(rho: &DMatrix<Complex64>) -> Result<SpinMoments> {
    if rho.nrows() != rho.ncols() || rho.nrows() == 0 {
        return Err(Error::InvalidParameter(format!(
            "density matrix must be square and non-empty, got {}x{}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let deviation = (rho.trace() - Complex64::new(1.0, 0.0)).norm();
    if !(deviation <= DENSITY_TRACE_TOL) {
        return Err(Error::NotNormalized { deviation });
    }
    let herm = hermiticity_error(rho);
    if !(herm <= DENSITY_HERMITIAN_TOL) {
        return Err(Error::NotHermitian { deviation: herm });
    }
    Ok(spin_operator_matrices(rho.nrows() - 1).moments_of_density(rho))
}

/// Closed-form moments of a spin coherent state precessing under
/// `H = Omega J_z` alone.
pub fn analytic_precession(
    ge: &GroundExcitedAmplitudes,
    n_atoms: usize,
    omega: f64,
    t: f64,
) -> SpinMoments {
    let n = n_atoms as f64;
    let ab = ge.alpha.norm() * ge.beta.norm();
    let angle = omega * t - ge.relative_phase();
    let (s, c) = angle.sin_cos();
    SpinMoments {
        jx_mean: n * ab * c,
        jy_mean: n * ab * s,
        jz_mean: n * (ge.alpha.norm_sqr() - ge.beta.norm_sqr()) / 2.0,
        jx_var: n / 4.0 * (1.0 - 4.0 * ab * ab * c * c),
        jy_var: n / 4.0 * (1.0 - 4.0 * ab * ab * s * s),
        jz_var: n * ab * ab,
        variance_flagged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn lr_amplitudes_examples() {
        let (l, r) = ge_to_lr_amplitudes(&GroundExcitedAmplitudes::real(0.0, 1.0).unwrap());
        assert!(close(l, c(FRAC_1_SQRT_2, 0.0), 1e-15));
        assert!(close(r, c(FRAC_1_SQRT_2, 0.0), 1e-15));

        let (l, r) = ge_to_lr_amplitudes(&GroundExcitedAmplitudes::real(1.0, 0.0).unwrap());
        assert!(close(l, c(FRAC_1_SQRT_2, 0.0), 1e-15));
        assert!(close(r, c(-FRAC_1_SQRT_2, 0.0), 1e-15));

        let ge = GroundExcitedAmplitudes::real(0.001f64.sqrt(), 0.999f64.sqrt()).unwrap();
        let (l, r) = ge_to_lr_amplitudes(&ge);
        assert!((l.re - 0.729_113_819_138_382_7).abs() < 1e-12);
        assert!((r.re - 0.684_392_459_588_386_9).abs() < 1e-12);
        assert!((l.norm_sqr() + r.norm_sqr() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unnormalized_ge_rejected() {
        assert!(matches!(
            GroundExcitedAmplitudes::real(1.0, 1.0),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn spin_coherent_small_cases() {
        let ground = GroundExcitedAmplitudes::real(0.0, 1.0).unwrap();
        let s = build_spin_coherent(&ground, 2).unwrap();
        let expected = [0.5, FRAC_1_SQRT_2, 0.5];
        for (a, e) in s.amplitudes().iter().zip(expected) {
            assert!(close(*a, c(e, 0.0), 1e-14), "{a} vs {e}");
        }

        let excited = GroundExcitedAmplitudes::real(1.0, 0.0).unwrap();
        let s = build_spin_coherent(&excited, 2).unwrap();
        let expected = [0.5, -FRAC_1_SQRT_2, 0.5];
        for (a, e) in s.amplitudes().iter().zip(expected) {
            assert!(close(*a, c(e, 0.0), 1e-14), "{a} vs {e}");
        }
    }

    #[test]
    fn spin_coherent_n200_peaks_at_half() {
        let ground = GroundExcitedAmplitudes::real(0.0, 1.0).unwrap();
        let s = build_spin_coherent(&ground, 200).unwrap();
        let p = s.probabilities();
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, 100);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capacity_guard() {
        let ground = GroundExcitedAmplitudes::real(0.0, 1.0).unwrap();
        assert!(matches!(
            build_spin_coherent(&ground, MAX_ATOMS + 1),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn bloch_poles_and_equator() {
        let ge = bloch_to_ge(&BlochAngles::new(0.0, 0.0).unwrap());
        assert!(close(ge.alpha, c(0.0, 0.0), 1e-15) && close(ge.beta, c(1.0, 0.0), 1e-15));
        let ge = bloch_to_ge(&BlochAngles::new(PI, 0.0).unwrap());
        assert!(close(ge.alpha, c(1.0, 0.0), 1e-15) && close(ge.beta, c(0.0, 0.0), 1e-15));
        let ge = bloch_to_ge(&BlochAngles::new(PI / 2.0, 0.0).unwrap());
        assert!(close(ge.alpha, c(FRAC_1_SQRT_2, 0.0), 1e-15));
        assert!(close(ge.beta, c(FRAC_1_SQRT_2, 0.0), 1e-15));
        assert!(BlochAngles::new(-0.1, 0.0).is_err());
        assert!(BlochAngles::new(0.1, TAU).is_err());
    }

    #[test]
    fn operator_examples() {
        let ops = spin_operator_matrices(1);
        assert_eq!(ops.jx[(0, 0)], c(-0.5, 0.0));
        assert_eq!(ops.jx[(1, 1)], c(0.5, 0.0));

        let ops = spin_operator_matrices(2);
        // ladder factor sqrt(2*1)/2 between k = 1 and k = 2
        assert!((ops.jz[(2, 1)].norm() - SQRT_2 / 2.0).abs() < 1e-15);
        assert!((ops.jy[(2, 1)] - c(0.0, -SQRT_2 / 2.0)).norm() < 1e-15);

        for n in [1, 2, 7, 30] {
            let ops = spin_operator_matrices(n);
            for op in ops.ops() {
                assert!(op.trace().norm() < 1e-12);
            }
        }
    }

    fn commutator(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        a * b - b * a
    }

    #[test]
    fn commutation_relations() {
        let i = c(0.0, 1.0);
        for n in [1, 2, 5, 30] {
            let o = spin_operator_matrices(n);
            let checks = [
                commutator(&o.jx, &o.jy) - &o.jz * i,
                commutator(&o.jy, &o.jz) - &o.jx * i,
                commutator(&o.jz, &o.jx) - &o.jy * i,
            ];
            for d in checks {
                assert!(d.iter().all(|z| z.norm() < 1e-10), "N = {n}");
            }
        }
    }

    #[test]
    fn casimir() {
        for n in [1, 2, 5, 30, 60] {
            let o = spin_operator_matrices(n);
            let j = n as f64 / 2.0;
            let cas = &o.squares[0] + &o.squares[1] + &o.squares[2];
            let target = DMatrix::<Complex64>::identity(n + 1, n + 1) * c(j * (j + 1.0), 0.0);
            assert!((cas - target).iter().all(|z| z.norm() < 1e-9), "N = {n}");
        }
    }

    #[test]
    fn moments_of_pole_state() {
        let ground = GroundExcitedAmplitudes::real(0.0, 1.0).unwrap();
        let m = moments_from_state(&build_spin_coherent(&ground, 30).unwrap()).unwrap();
        assert!((m.jz_mean + 15.0).abs() < 1e-10);
        assert!(m.jz_var.abs() < 1e-10);
        assert!((m.jx_var - 7.5).abs() < 1e-10 && (m.jy_var - 7.5).abs() < 1e-10);
    }

    #[test]
    fn moments_of_tilted_state() {
        let ge = GroundExcitedAmplitudes::real(0.001f64.sqrt(), 0.999f64.sqrt()).unwrap();
        let m = moments_from_state(&build_spin_coherent(&ge, 30).unwrap()).unwrap();
        assert!((m.jz_mean + 14.97).abs() < 1e-10);
        assert!((m.jz_var - 0.02997).abs() < 1e-10);
        assert!((m.jx_mean - 0.948_208_837_756_746_5).abs() < 1e-10);
        assert!(m.jy_mean.abs() < 1e-12);
    }

    #[test]
    fn density_moments_agree_with_state_moments() {
        let ge = bloch_to_ge(&BlochAngles::new(1.1, 4.0).unwrap());
        let s = build_spin_coherent(&ge, 12).unwrap();
        let a = moments_from_state(&s).unwrap();
        let b = moments_from_density(&s.density()).unwrap();
        for (x, y) in a.means().iter().zip(b.means()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.variances().iter().zip(b.variances()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn density_validation() {
        let mut rho = DMatrix::<Complex64>::identity(3, 3) * c(0.5, 0.0);
        assert!(matches!(
            moments_from_density(&rho),
            Err(Error::NotNormalized { .. })
        ));
        rho = DMatrix::<Complex64>::identity(3, 3) * c(1.0 / 3.0, 0.0);
        rho[(0, 1)] = c(0.1, 0.0);
        assert!(matches!(
            moments_from_density(&rho),
            Err(Error::NotHermitian { .. })
        ));
        let unnorm = AtomState {
            amplitudes: DVector::from_element(2, c(1.0, 0.0)),
        };
        assert!(moments_from_state(&unnorm).is_err());
    }

    #[test]
    fn analytic_precession_examples() {
        let ground = GroundExcitedAmplitudes::real(0.0, 1.0).unwrap();
        for t in [0.0, 1.3, 50.0] {
            let m = analytic_precession(&ground, 30, 0.7, t);
            assert_eq!((m.jx_mean, m.jy_mean, m.jz_mean), (0.0, 0.0, -15.0));
            assert_eq!((m.jx_var, m.jy_var), (7.5, 7.5));
        }

        let ge = GroundExcitedAmplitudes::new(
            Complex64::from_polar(0.6, 0.9),
            Complex64::from_polar(0.8, 0.2),
        )
        .unwrap();
        let omega = 0.5;
        let m = analytic_precession(&ge, 10, omega, ge.relative_phase() / omega);
        assert!((m.jx_mean - 10.0 * 0.48).abs() < 1e-12);
        assert!(m.jy_mean.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn coherent_state_is_normalized(theta in 0.0..PI, phi in 0.0..TAU, n in 0usize..300) {
            let ge = bloch_to_ge(&BlochAngles::new(theta, phi).unwrap());
            let s = build_spin_coherent(&ge, n).unwrap();
            prop_assert!((s.amplitudes().norm_squared() - 1.0).abs() <= 1e-10);
        }

        #[test]
        fn numerical_moments_match_closed_form(theta in 0.0..PI, phi in 0.0..TAU, n in 1usize..=50) {
            let ge = bloch_to_ge(&BlochAngles::new(theta, phi).unwrap());
            let numeric = moments_from_state(&build_spin_coherent(&ge, n).unwrap()).unwrap();
            let exact = analytic_precession(&ge, n, 1.0, 0.0);
            for (a, b) in numeric.means().iter().zip(exact.means()) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            for (a, b) in numeric.variances().iter().zip(exact.variances()) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }

        #[test]
        fn precession_stays_on_circle(t in 0.0..100.0f64, theta in 0.0..PI, phi in 0.0..TAU) {
            let ge = bloch_to_ge(&BlochAngles::new(theta, phi).unwrap());
            let m = analytic_precession(&ge, 20, 0.8, t);
            let r = 20.0 * ge.alpha.norm() * ge.beta.norm();
            prop_assert!((m.jx_mean.hypot(m.jy_mean) - r).abs() < 1e-10);
            let total = m.jx_mean.powi(2) + m.jy_mean.powi(2) + m.jz_mean.powi(2);
            prop_assert!(total <= 100.0 * (1.0 + 1e-9));
        }

        #[test]
        fn bloch_round_trip(theta in 0.0..PI, phi in 0.0..TAU) {
            let ge = bloch_to_ge(&BlochAngles::new(theta, phi).unwrap());
            let back = bloch_to_ge(&BlochAngles::from_ge(&ge));
            // equal up to a global phase
            let overlap = ge.alpha.conj() * back.alpha + ge.beta.conj() * back.beta;
            prop_assert!((overlap.norm() - 1.0).abs() < 1e-12);
        }
    }
}
