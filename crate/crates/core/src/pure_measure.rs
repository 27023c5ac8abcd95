//! Exact conditional states for a QND probe without tunneling.
//!
//! Each atomic Fock state `|k, N-k>` imprints opposite phases
//! `-/+ gt(k - N/2)` on the two probe beams. After the beams are recombined on
//! a 50:50 beamsplitter, a photon-count record `(n_c, n_d)` multiplies the
//! atomic amplitude `C_k` by the detection amplitude `A_{n_c,n_d}(k)`. The
//! asymptotic forms for many detected photons (Gaussian measurement window and
//! Gaussian conditional distribution) live here as well.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::logmath::{coherent_factor, ln_fact, log_sum_exp, normalize_log_vector, LogComplex};
use crate::spin_core::{ge_to_lr_amplitudes, AtomState, GroundExcitedAmplitudes};
use crate::{Error, Result};

/// Largest photon count a single detector may report.
pub const MAX_PHOTONS: usize = 100_000;

/// Probabilities below this are treated as impossible outcomes.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Coherent amplitudes of the left and right interferometer arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightPair {
    pub alpha_l: Complex64,
    pub alpha_r: Complex64,
}

impl LightPair {
    pub fn new(alpha_l: Complex64, alpha_r: Complex64) -> Result<Self> {
        if !(alpha_l.norm_sqr().is_finite() && alpha_r.norm_sqr().is_finite()) {
            return Err(Error::InvalidParameter(
                "light amplitudes must be finite".into(),
            ));
        }
        Ok(Self { alpha_l, alpha_r })
    }

    pub fn real(alpha_l: f64, alpha_r: f64) -> Self {
        Self {
            alpha_l: Complex64::new(alpha_l, 0.0),
            alpha_r: Complex64::new(alpha_r, 0.0),
        }
    }

    /// `arg(alpha_l) - arg(alpha_r)`.
    pub fn rel_phase(&self) -> f64 {
        self.alpha_l.arg() - self.alpha_r.arg()
    }

    /// `|alpha_l|^2 + |alpha_r|^2`.
    pub fn total_intensity(&self) -> f64 {
        self.alpha_l.norm_sqr() + self.alpha_r.norm_sqr()
    }

    /// Mean photon number per detector.
    pub fn mean_per_detector(&self) -> f64 {
        self.total_intensity() / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DetectionOutcome {
    pub n_c: usize,
    pub n_d: usize,
}

impl DetectionOutcome {
    pub fn new(n_c: usize, n_d: usize) -> Self {
        Self { n_c, n_d }
    }

    fn check_capacity(&self) -> Result<()> {
        let worst = self.n_c.max(self.n_d);
        if worst > MAX_PHOTONS {
            return Err(Error::Capacity {
                what: "photon count",
                requested: worst,
                max: MAX_PHOTONS,
            });
        }
        Ok(())
    }
}

/// Atom-light coupling `g` and interaction time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionSetting {
    pub g: f64,
    pub t: f64,
}

impl InteractionSetting {
    pub fn new(g: f64, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !g.is_finite() || !t.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "interaction needs finite g and t >= 0, got g = {g}, t = {t}"
            )));
        }
        Ok(Self { g, t })
    }

    /// Unit coupling with `t = gt`; only the product enters the pure model.
    pub fn from_gt(gt: f64) -> Result<Self> {
        Self::new(1.0, gt)
    }

    pub fn gt(&self) -> f64 {
        self.g * self.t
    }
}

fn check_index(k: usize, n_atoms: usize) -> Result<()> {
    if k > n_atoms {
        return Err(Error::IndexOutOfRange { k, n_atoms });
    }
    Ok(())
}

/// Output-port amplitudes `(alpha_c(k), alpha_d(k))` after the beamsplitter.
pub fn port_amplitudes(
    light: &LightPair,
    setting: &InteractionSetting,
    k: usize,
    n_atoms: usize,
) -> Result<(Complex64, Complex64)> {
    check_index(k, n_atoms)?;
    Ok(port_amplitudes_unchecked(light, setting.gt(), k, n_atoms))
}

fn port_amplitudes_unchecked(
    light: &LightPair,
    gt: f64,
    k: usize,
    n_atoms: usize,
) -> (Complex64, Complex64) {
    let i = Complex64::i();
    let (s, c) = (gt * (k as f64 - n_atoms as f64 / 2.0)).sin_cos();
    let plus = light.alpha_l + i * light.alpha_r;
    let cross = i * light.alpha_l + light.alpha_r;
    (plus * c - cross * s, cross * c + plus * s)
}

fn log_detection_amplitude(
    light: &LightPair,
    gt: f64,
    outcome: DetectionOutcome,
    k: usize,
    n_atoms: usize,
) -> LogComplex {
    let (ac, ad) = port_amplitudes_unchecked(light, gt, k, n_atoms);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let vacuum = LogComplex::from_real_ln(-light.total_intensity() / 2.0);
    vacuum
        .mul(coherent_factor(ac * scale, outcome.n_c))
        .mul(coherent_factor(ad * scale, outcome.n_d))
}

/// `A_{n_c,n_d}(k)`: projection of the two output coherent states onto
/// `|n_c, n_d>`.
pub fn detection_amplitude(
    light: &LightPair,
    setting: &InteractionSetting,
    outcome: DetectionOutcome,
    k: usize,
    n_atoms: usize,
) -> Result<Complex64> {
    check_index(k, n_atoms)?;
    outcome.check_capacity()?;
    Ok(log_detection_amplitude(light, setting.gt(), outcome, k, n_atoms).to_complex())
}

/// `ln P(n_c, n_d)` together with the per-k log amplitudes that produced it.
fn log_weights(
    state: &AtomState,
    light: &LightPair,
    gt: f64,
    outcome: DetectionOutcome,
) -> (Vec<LogComplex>, f64) {
    let n = state.n_atoms();
    let weighted: Vec<LogComplex> = state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(k, c)| LogComplex::from_complex(*c).mul(log_detection_amplitude(light, gt, outcome, k, n)))
        .collect();
    let ln_p = log_sum_exp(weighted.iter().map(|w| 2.0 * w.ln_mag));
    (weighted, ln_p)
}

/// `P(n_c, n_d) = sum_k |C_k|^2 |A_{n_c,n_d}(k)|^2`.
pub fn detection_probability(
    state: &AtomState,
    light: &LightPair,
    setting: &InteractionSetting,
    outcome: DetectionOutcome,
) -> Result<f64> {
    outcome.check_capacity()?;
    let (_, ln_p) = log_weights(state, light, setting.gt(), outcome);
    Ok(ln_p.exp().clamp(0.0, 1.0))
}

/// Per-detector enumeration bound: `ceil(mu + 10 sqrt(mu))`, at least 20.
pub fn outcome_cutoff(light: &LightPair) -> usize {
    let mu = light.mean_per_detector();
    ((mu + 10.0 * mu.sqrt()).ceil() as usize).max(20)
}

/// `P(n_c, n_d)` for all `0 <= n_c, n_d <= n_max`, indexed `[n_c][n_d]`.
pub fn detection_grid(
    state: &AtomState,
    light: &LightPair,
    setting: &InteractionSetting,
    n_max: usize,
) -> Result<Vec<Vec<f64>>> {
    DetectionOutcome::new(n_max, n_max).check_capacity()?;
    Ok((0..=n_max)
        .into_par_iter()
        .map(|n_c| {
            (0..=n_max)
                .map(|n_d| {
                    let (_, ln_p) = log_weights(state, light, setting.gt(), DetectionOutcome::new(n_c, n_d));
                    ln_p.exp().clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect())
}

/// Post-measurement atomic state `C_k A(k) / sqrt(P)`, phases included.
pub fn conditional_state(
    state: &AtomState,
    light: &LightPair,
    setting: &InteractionSetting,
    outcome: DetectionOutcome,
) -> Result<AtomState> {
    outcome.check_capacity()?;
    let (weighted, ln_p) = log_weights(state, light, setting.gt(), outcome);
    let probability = ln_p.exp();
    if !(probability > PROBABILITY_FLOOR) {
        return Err(Error::UnreachableOutcome {
            n_c: outcome.n_c,
            n_d: outcome.n_d,
            probability,
        });
    }
    let amps = normalize_log_vector(&weighted).ok_or(Error::UnreachableOutcome {
        n_c: outcome.n_c,
        n_d: outcome.n_d,
        probability,
    })?;
    AtomState::new(DVector::from_vec(amps))
}

/// Peak offset `x0` (from N/2) and inverse width `X0` of `|A_{n_c,n_d}(k)|`
/// for many detected photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianWindow {
    pub x0: f64,
    pub big_x0: f64,
    /// `X0 / (gt)^2`, finite even at gt = 0.
    pub curvature: f64,
    /// `phi - arcsin(...)`, so that `x0 = phase_offset / (2 gt)`.
    pub phase_offset: f64,
}

fn window_parts(light: &LightPair, outcome: DetectionOutcome) -> Result<(f64, f64)> {
    let s = light.total_intensity();
    let p = 2.0 * light.alpha_l.norm() * light.alpha_r.norm();
    let (nc, nd) = (outcome.n_c as f64, outcome.n_d as f64);
    if p == 0.0 || nc == 0.0 || nd == 0.0 {
        return Err(Error::InvalidParameter(
            "Gaussian window needs both beams lit and n_c, n_d > 0".into(),
        ));
    }
    let argument = s / p * (nc - nd) / (nc + nd);
    if !(argument.abs() <= 1.0) {
        return Err(Error::AsymptoticDomain { argument });
    }
    let phase_offset = light.rel_phase() - argument.asin();
    let ratio = p / s;
    let curvature = (nc + nd) / (nc * nd) * ((nc + nd).powi(2) * ratio * ratio - (nd - nc).powi(2));
    Ok((phase_offset, curvature))
}

pub fn gaussian_window(
    light: &LightPair,
    setting: &InteractionSetting,
    outcome: DetectionOutcome,
) -> Result<GaussianWindow> {
    let gt = setting.gt();
    if !(gt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Gaussian window needs gt > 0, got {gt}"
        )));
    }
    let (phase_offset, curvature) = window_parts(light, outcome)?;
    Ok(GaussianWindow {
        x0: phase_offset / (2.0 * gt),
        big_x0: gt * gt * curvature,
        curvature,
        phase_offset,
    })
}

/// Gaussian approximation to the conditional distribution of `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalGaussian {
    /// Variance of `k`.
    pub sigma: f64,
    /// Mean of `k`.
    pub k0: f64,
    /// `N |eta_l eta_r|^2 X0`, the squeezing factor.
    pub squeeze: f64,
}

impl ConditionalGaussian {
    pub fn pdf(&self, k: f64) -> f64 {
        (-(k - self.k0).powi(2) / (2.0 * self.sigma)).exp() / (2.0 * PI * self.sigma).sqrt()
    }
}

/// Width `sigma` and peak `k0` of the conditional distribution of `k` for an
/// initial spin coherent state. Valid for `n_c, n_d >> 1`; computed
/// unconditionally.
pub fn conditional_gaussian(
    ge: &GroundExcitedAmplitudes,
    n_atoms: usize,
    light: &LightPair,
    setting: &InteractionSetting,
    outcome: DetectionOutcome,
) -> Result<ConditionalGaussian> {
    let n = n_atoms as f64;
    let (eta_l, eta_r) = ge_to_lr_amplitudes(ge);
    let prior_var = n * eta_l.norm_sqr() * eta_r.norm_sqr();
    let prior_mean = n * eta_l.norm_sqr();
    let gt = setting.gt();
    if gt == 0.0 {
        return Ok(ConditionalGaussian {
            sigma: prior_var,
            k0: prior_mean,
            squeeze: 0.0,
        });
    }
    let (phase_offset, curvature) = window_parts(light, outcome)?;
    let big_x0 = gt * gt * curvature;
    // X0 * x0 = gt * curvature * phase_offset / 2 stays finite as gt -> 0
    let x0_weight = gt * curvature * phase_offset / 2.0;
    let squeeze = prior_var * big_x0;
    Ok(ConditionalGaussian {
        sigma: prior_var / (1.0 + squeeze),
        k0: (prior_mean + squeeze * n / 2.0 + prior_var * x0_weight) / (1.0 + squeeze),
        squeeze,
    })
}

/// Closed-form `P(n_c, n_d)` from the Stirling/Gaussian approximations.
pub fn approx_detection_probability(
    ge: &GroundExcitedAmplitudes,
    n_atoms: usize,
    light: &LightPair,
    setting: &InteractionSetting,
    outcome: DetectionOutcome,
) -> Result<f64> {
    let n = n_atoms as f64;
    let (eta_l, eta_r) = ge_to_lr_amplitudes(ge);
    let prior_var = n * eta_l.norm_sqr() * eta_r.norm_sqr();
    let centre = n * (eta_l.norm_sqr() - eta_r.norm_sqr()) / 2.0;
    let (phase_offset, curvature) = window_parts(light, outcome)?;
    let gt = setting.gt();
    let big_x0 = gt * gt * curvature;
    // X0 (x0 - c)^2 = (curvature/4) (phase_offset - 2 gt c)^2
    let quad = curvature / 4.0 * (phase_offset - 2.0 * gt * centre).powi(2);
    let s = light.total_intensity();
    let (nc, nd) = (outcome.n_c as f64, outcome.n_d as f64);
    let m = nc + nd;
    let ln_p = -0.5 * (4.0 * PI * PI * nc * nd * (1.0 + prior_var * big_x0)).ln()
        + m * (s / m).ln()
        + m
        - s
        - quad / (2.0 * (1.0 + prior_var * big_x0));
    Ok(ln_p.exp())
}

/// Rounded per-detector Poisson mean for both detectors; halves round down.
pub fn most_probable_outcome(light: &LightPair) -> DetectionOutcome {
    let mu = light.mean_per_detector();
    let n = (mu - 0.5).ceil().max(0.0) as usize;
    DetectionOutcome::new(n, n)
}

/// Location of the largest entry of a `[n_c][n_d]` grid. Entries within a
/// relative `1e-12` of each other count as equal, and ties go to the larger
/// `n_c + n_d`, then the larger `n_c`.
pub fn grid_argmax(grid: &[Vec<f64>]) -> Option<DetectionOutcome> {
    let max = grid.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut best: Option<DetectionOutcome> = None;
    for (n_c, row) in grid.iter().enumerate() {
        for (n_d, &p) in row.iter().enumerate() {
            if p >= max * (1.0 - 1e-12) {
                let cand = DetectionOutcome::new(n_c, n_d);
                best = match best {
                    Some(b) if (b.n_c + b.n_d, b.n_c) >= (n_c + n_d, n_c) => Some(b),
                    _ => Some(cand),
                };
            }
        }
    }
    best
}

/// Number of interior local maxima of `pmf` after a 3-point moving average:
/// indices strictly greater than both smoothed neighbours.
pub fn count_local_maxima(pmf: &[f64]) -> usize {
    let len = pmf.len();
    if len < 3 {
        return 0;
    }
    let smoothed: Vec<f64> = (0..len)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(len - 1);
            pmf[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    (1..len - 1)
        .filter(|&i| smoothed[i] > smoothed[i - 1] && smoothed[i] > smoothed[i + 1])
        .count()
}

/// Mean and variance of a distribution over k = 0..len.
pub fn pmf_mean_variance(pmf: &[f64]) -> (f64, f64) {
    let total: f64 = pmf.iter().sum();
    let mean = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum::<f64>() / total;
    let var = pmf
        .iter()
        .enumerate()
        .map(|(k, p)| (k as f64 - mean).powi(2) * p)
        .sum::<f64>()
        / total;
    (mean, var)
}

/// Poisson pmf `e^-mu mu^n / n!`.
pub fn poisson(mu: f64, n: usize) -> f64 {
    if mu == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (n as f64 * mu.ln() - mu - ln_fact(n)).exp()
}
