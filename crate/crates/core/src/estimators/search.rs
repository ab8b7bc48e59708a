//! Grid evaluation of `Σ_b |b^H (D ⊗ g)|²` shared by both estimators.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SearchGrid;
use crate::antenna::{PolarizationState, SteeringModel, WaveDirection};
use crate::channel::delay_steering;
use crate::error::{Error, Result};

/// How the argmax is located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SearchStrategy {
    /// Every grid point.
    #[default]
    Exhaustive,
    /// Grid subsampled by `factor` in each dimension, then a full-resolution
    /// window of ±`factor` steps around the coarse peak.
    CoarseToFine { factor: usize },
}

/// Precomputed angle steering and per-delay basis contractions.
pub(crate) struct Correlator<'g> {
    grid: &'g SearchGrid,
    n_ports: usize,
    n_pilots: usize,
    n_basis: usize,
    /// `[angle][port]`, angle = a·ne + e.
    steer: Vec<Complex64>,
    steer_norm2: Vec<f64>,
    /// `[delay][basis][port]` holding `Σ_k conj(b[m·n_p + k]) g_k(t)`.
    contracted: Vec<Complex64>,
}

impl<'g> Correlator<'g> {
    pub(crate) fn new(
        grid: &'g SearchGrid,
        model: &SteeringModel,
        pol: &PolarizationState,
        pilot_freqs: &[f64],
        basis: &DMatrix<Complex64>,
    ) -> Result<Self> {
        grid.validate()?;
        if grid.is_empty() {
            return Err(Error::config("empty search grid"));
        }
        let n_ports = model.n_ports();
        let n_pilots = pilot_freqs.len();
        if basis.nrows() != n_ports * n_pilots {
            return Err(Error::config(format!(
                "basis dimension {} != ports {} × pilots {}",
                basis.nrows(),
                n_ports,
                n_pilots
            )));
        }
        let (na, ne, nd) = grid.shape();
        let mut steer = Vec::with_capacity(na * ne * n_ports);
        let mut steer_norm2 = Vec::with_capacity(na * ne);
        for a in 0..na {
            for e in 0..ne {
                let dir = WaveDirection::new(grid.azimuth.value(a), grid.elevation.value(e))?;
                let d = model.steering_vector(&dir, pol);
                steer_norm2.push(d.iter().map(|v| v.norm_sqr()).sum());
                steer.extend(d);
            }
        }
        let n_basis = basis.ncols();
        let mut contracted = Vec::with_capacity(nd * n_basis * n_ports);
        for di in 0..nd {
            let g = delay_steering(grid.delay.value(di), pilot_freqs);
            for b in 0..n_basis {
                let col = basis.column(b);
                for m in 0..n_ports {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (k, gk) in g.iter().enumerate() {
                        acc += col[m * n_pilots + k].conj() * gk;
                    }
                    contracted.push(acc);
                }
            }
        }
        Ok(Self {
            grid,
            n_ports,
            n_pilots,
            n_basis,
            steer,
            steer_norm2,
            contracted,
        })
    }

    /// `(Σ_b |b^H A|², ‖A‖²)` at angle index `angle` and delay index `d`.
    #[inline]
    pub(crate) fn energy(&self, angle: usize, d: usize) -> (f64, f64) {
        let m = self.n_ports;
        let dvec = &self.steer[angle * m..(angle + 1) * m];
        let base = d * self.n_basis * m;
        let mut proj = 0.0;
        for b in 0..self.n_basis {
            let w = &self.contracted[base + b * m..base + (b + 1) * m];
            let mut acc = Complex64::new(0.0, 0.0);
            for (x, y) in dvec.iter().zip(w) {
                acc += x * y;
            }
            proj += acc.norm_sqr();
        }
        (proj, self.steer_norm2[angle] * self.n_pilots as f64)
    }

    /// Objective on every grid point, lexicographic order.
    pub(crate) fn evaluate_all<F>(&self, objective: F) -> Vec<f64>
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        let (na, ne, nd) = self.grid.shape();
        let mut out = vec![0.0; na * ne * nd];
        out.par_chunks_mut(nd).enumerate().for_each(|(angle, row)| {
            for (d, slot) in row.iter_mut().enumerate() {
                let (p, n) = self.energy(angle, d);
                *slot = objective(p, n);
            }
        });
        out
    }

    /// Flat index of the maximum under `strategy`; ties go to the smallest
    /// lexicographic (φ, θ, t).
    pub(crate) fn argmax<F>(&self, objective: F, strategy: SearchStrategy) -> (usize, f64)
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        match strategy {
            SearchStrategy::Exhaustive => first_max(&self.evaluate_all(&objective)),
            SearchStrategy::CoarseToFine { factor } => {
                let factor = factor.max(1);
                let (na, ne, nd) = self.grid.shape();
                let coarse = |n: usize| (0..n).step_by(factor).collect::<Vec<_>>();
                let pts = cartesian(&coarse(na), &coarse(ne), &coarse(nd));
                let (best, _) = self.argmax_over(&pts, &objective);
                let (a0, e0, d0) = self.grid.unravel(best);
                let window = |c: usize, n: usize| {
                    (c.saturating_sub(factor)..(c + factor + 1).min(n)).collect::<Vec<_>>()
                };
                let pts = cartesian(&window(a0, na), &window(e0, ne), &window(d0, nd));
                self.argmax_over(&pts, &objective)
            }
        }
    }

    fn argmax_over<F>(&self, points: &[(usize, usize, usize)], objective: &F) -> (usize, f64)
    where
        F: Fn(f64, f64) -> f64 + Sync,
    {
        let (_, ne, _) = self.grid.shape();
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for &(a, e, d) in points {
            let (p, n) = self.energy(a * ne + e, d);
            let v = objective(p, n);
            let idx = self.grid.index(a, e, d);
            if v > best.1 || (v == best.1 && idx < best.0) {
                best = (idx, v);
            }
        }
        best
    }
}

fn cartesian(a: &[usize], e: &[usize], d: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::with_capacity(a.len() * e.len() * d.len());
    for &x in a {
        for &y in e {
            for &z in d {
                out.push((x, y, z));
            }
        }
    }
    out
}

pub(crate) fn first_max(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
