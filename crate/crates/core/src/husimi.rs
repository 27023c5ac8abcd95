//! Husimi Q function on the Bloch sphere.
//!
//! `Q(theta, phi) = (N + 1)/(4 pi) <theta, phi| rho |theta, phi>`, with the
//! spin coherent states built by the same convention as
//! [`build_spin_coherent`](crate::spin_core::build_spin_coherent).

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::spin_core::{bloch_to_ge, spin_coherent_amplitudes, AtomState, BlochAngles};
use crate::{Error, Result};

pub const MIN_GRID: usize = 16;

/// Clamp for round-off below zero in mixed-state evaluations.
const NEGATIVE_SLACK: f64 = 1e-10;

/// `<theta, phi|k>` for k = 0..=N.
pub fn coherent_overlap_row(angles: &BlochAngles, n_atoms: usize) -> Result<DVector<Complex64>> {
    Ok(spin_coherent_amplitudes(&bloch_to_ge(angles), n_atoms)?.map(|z| z.conj()))
}

fn prefactor(n_atoms: usize) -> f64 {
    (n_atoms as f64 + 1.0) / (4.0 * PI)
}

pub fn q_pure(state: &AtomState, angles: &BlochAngles) -> Result<f64> {
    let row = coherent_overlap_row(angles, state.n_atoms())?;
    Ok(prefactor(state.n_atoms()) * row.dot(state.amplitudes()).norm_sqr())
}

fn check_density(rho: &DMatrix<Complex64>) -> Result<usize> {
    if rho.nrows() == 0 || rho.nrows() != rho.ncols() {
        return Err(Error::InvalidParameter(format!(
            "density matrix must be square and non-empty, got {}x{}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    Ok(rho.nrows() - 1)
}

fn mixed_value(rho: &DMatrix<Complex64>, row: &DVector<Complex64>, n_atoms: usize) -> f64 {
    // <theta,phi| = row, |theta,phi> = row^*
    let ket = row.map(|z| z.conj());
    let v = row.transpose() * rho * ket;
    prefactor(n_atoms) * v[(0, 0)].re
}

pub fn q_mixed(rho: &DMatrix<Complex64>, angles: &BlochAngles) -> Result<f64> {
    let n = check_density(rho)?;
    let row = coherent_overlap_row(angles, n)?;
    let q = mixed_value(rho, &row, n);
    if q < -NEGATIVE_SLACK {
        return Err(Error::InvariantViolation {
            t: 0.0,
            detail: format!("negative Q value {q:e}; density matrix is not positive"),
        });
    }
    Ok(q.max(0.0))
}

/// What to evaluate on the grid.
#[derive(Debug, Clone, Copy)]
pub enum QSource<'a> {
    Pure(&'a AtomState),
    Mixed(&'a DMatrix<Complex64>),
}

/// Q sampled at cell-centred `theta` and uniform `phi`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QGrid {
    pub thetas: Vec<f64>,
    pub phis: Vec<f64>,
    /// `values[(i, j)] = Q(thetas[i], phis[j])`.
    #[serde(skip)]
    pub values: DMatrix<f64>,
    /// Quadrature weight of every cell in row `i`, solid angle included.
    pub weights: Vec<f64>,
}

/// Fejer weights for `int_0^pi f(theta) sin(theta) d theta` on cell centres.
fn fejer_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let theta = (i as f64 + 0.5) * PI / n as f64;
            let tail: f64 = (1..=n / 2)
                .map(|j| (2.0 * j as f64 * theta).cos() / (4.0 * (j * j) as f64 - 1.0))
                .sum();
            2.0 / n as f64 * (1.0 - 2.0 * tail)
        })
        .collect()
}

pub fn q_grid(source: QSource<'_>, n_theta: usize, n_phi: usize) -> Result<QGrid> {
    if n_theta < MIN_GRID || n_phi < MIN_GRID {
        return Err(Error::InvalidParameter(format!(
            "grid must be at least {MIN_GRID}x{MIN_GRID}, got {n_theta}x{n_phi}"
        )));
    }
    let n_atoms = match source {
        QSource::Pure(s) => s.n_atoms(),
        QSource::Mixed(rho) => check_density(rho)?,
    };
    let thetas: Vec<f64> = (0..n_theta).map(|i| (i as f64 + 0.5) * PI / n_theta as f64).collect();
    let phis: Vec<f64> = (0..n_phi).map(|j| j as f64 * 2.0 * PI / n_phi as f64).collect();
    let rows: Vec<Vec<f64>> = thetas
        .par_iter()
        .map(|&theta| {
            phis.iter()
                .map(|&phi| {
                    let row = coherent_overlap_row(&BlochAngles { theta, phi }, n_atoms)?;
                    Ok(match source {
                        QSource::Pure(s) => prefactor(n_atoms) * row.dot(s.amplitudes()).norm_sqr(),
                        QSource::Mixed(rho) => mixed_value(rho, &row, n_atoms).max(0.0),
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let values = DMatrix::from_fn(n_theta, n_phi, |i, j| rows[i][j]);
    let d_phi = 2.0 * PI / n_phi as f64;
    let weights = fejer_weights(n_theta).into_iter().map(|w| w * d_phi).collect();
    Ok(QGrid {
        thetas,
        phis,
        values,
        weights,
    })
}

/// One connected region of `Q >= level`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lobe {
    pub cells: usize,
    /// Quadrature mass of Q inside the region.
    pub mass: f64,
    /// Direction of the Q-weighted mean position vector.
    pub centroid: BlochAngles,
}

fn unit_vector(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

impl QGrid {
    pub fn n_theta(&self) -> usize {
        self.thetas.len()
    }

    pub fn n_phi(&self) -> usize {
        self.phis.len()
    }

    /// Quadrature estimate of the integral of Q over the sphere.
    pub fn normalization(&self) -> f64 {
        (0..self.n_theta())
            .map(|i| self.weights[i] * self.values.row(i).sum())
            .sum()
    }

    pub fn max(&self) -> f64 {
        self.values.max()
    }

    pub fn argmax(&self) -> BlochAngles {
        let (i, j) = self.values.iamax_full();
        BlochAngles {
            theta: self.thetas[i],
            phi: self.phis[j],
        }
    }

    /// Connected components of `{Q >= level}`. Neighbours are the four grid
    /// neighbours with `phi` periodic; cells in the first (last) `theta` row
    /// all touch the pole and are mutually adjacent.
    pub fn super_level_sets(&self, level: f64) -> Vec<Lobe> {
        let (nt, np) = (self.n_theta(), self.n_phi());
        let inside = |i: usize, j: usize| self.values[(i, j)] >= level;
        let mut label = vec![usize::MAX; nt * np];
        let mut lobes = Vec::new();
        for start in 0..nt * np {
            let (si, sj) = (start / np, start % np);
            if label[start] != usize::MAX || !inside(si, sj) {
                continue;
            }
            let id = lobes.len();
            let mut queue = VecDeque::from([(si, sj)]);
            label[start] = id;
            let mut cells = 0;
            let mut mass = 0.0;
            let mut acc = [0.0; 3];
            while let Some((i, j)) = queue.pop_front() {
                cells += 1;
                let m = self.values[(i, j)] * self.weights[i];
                mass += m;
                for (a, u) in acc.iter_mut().zip(unit_vector(self.thetas[i], self.phis[j])) {
                    *a += m * u;
                }
                let mut next = vec![(i, (j + 1) % np), (i, (j + np - 1) % np)];
                if i > 0 {
                    next.push((i - 1, j));
                }
                if i + 1 < nt {
                    next.push((i + 1, j));
                }
                if i == 0 || i == nt - 1 {
                    next.extend((0..np).map(|jj| (i, jj)));
                }
                for (ni, nj) in next {
                    let idx = ni * np + nj;
                    if label[idx] == usize::MAX && inside(ni, nj) {
                        label[idx] = id;
                        queue.push_back((ni, nj));
                    }
                }
            }
            let r = (acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2]).sqrt();
            let theta = if r > 0.0 { (acc[2] / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
            let phi = acc[1].atan2(acc[0]).rem_euclid(2.0 * PI);
            lobes.push(Lobe {
                cells,
                mass,
                centroid: BlochAngles {
                    theta,
                    phi: if phi >= 2.0 * PI { 0.0 } else { phi },
                },
            });
        }
        lobes
    }

    /// Variance of `n . axis` under Q, where `n` is the unit position vector
    /// `(sin theta cos phi, sin theta sin phi, cos theta)`.
    pub fn axis_variance(&self, axis: [f64; 3]) -> f64 {
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..self.n_theta() {
            for j in 0..self.n_phi() {
                let u = unit_vector(self.thetas[i], self.phis[j]);
                let x: f64 = u.iter().zip(axis).map(|(a, b)| a * b).sum();
                let w = self.values[(i, j)] * self.weights[i];
                m0 += w;
                m1 += w * x;
                m2 += w * x * x;
            }
        }
        m2 / m0 - (m1 / m0).powi(2)
    }
}
