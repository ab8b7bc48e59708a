//! Joint angle-delay estimation: subspace (MUSIC) and single-path SAGE.
//!
//! Both estimators work on pilot-free snapshots (see [`strip_pilots`]) and on
//! the stacked joint vector `y[m·n_p + k]` (port-major, pilot subcarrier
//! minor), which matches the Kronecker order of `A = D(φ, θ) ⊗ g(t)`.

mod sage;
mod search;
mod subspace;

use std::io::Write;

use ndarray::Array3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::antenna::{PolarizationState, SteeringModel, WaveDirection};
use crate::channel::{delay_steering, PortSnapshots};
use crate::error::{Error, Result};
use crate::waveforms::ResourceGrid;

pub use sage::{sage_estimate, SageConfig, SageEstimate};
pub use search::SearchStrategy;
pub use subspace::{
    hermitian_eigen, music_estimate, music_spectrum, noise_subspace, sample_covariance,
    stacked_snapshots, subspace_from_snapshots, CovarianceMatrix, HermitianEigen, NoiseSubspace,
};

/// Inclusive `min..=max` sampled every `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        let axis = Self { min, max, step };
        axis.validate()?;
        Ok(axis)
    }

    /// Single-point axis.
    pub fn fixed(value: f64) -> Self {
        Self {
            min: value,
            max: value,
            step: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::config(format!(
                "axis step must be positive and bounds finite: {self:?}"
            )));
        }
        if self.min > self.max {
            return Err(Error::config(format!("axis min above max: {self:?}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    /// Index of the grid value nearest `x`, clamped to the axis.
    pub fn nearest(&self, x: f64) -> usize {
        let i = ((x - self.min) / self.step).round();
        i.clamp(0.0, (self.len() - 1) as f64) as usize
    }
}

/// Azimuth/elevation in degrees, delay in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub azimuth: Axis,
    pub elevation: Axis,
    pub delay: Axis,
}

impl SearchGrid {
    pub fn validate(&self) -> Result<()> {
        self.azimuth.validate()?;
        self.elevation.validate()?;
        self.delay.validate()?;
        if self.elevation.min < 0.0 || self.elevation.max > 180.0 {
            return Err(Error::config("elevation axis must stay within [0, 180]"));
        }
        if self.delay.min < 0.0 {
            return Err(Error::config("delay axis must be non-negative"));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.azimuth.len(), self.elevation.len(), self.delay.len())
    }

    pub fn len(&self) -> usize {
        let (a, e, d) = self.shape();
        a * e * d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, lexicographic in (azimuth, elevation, delay).
    pub fn index(&self, a: usize, e: usize, d: usize) -> usize {
        let (_, ne, nd) = self.shape();
        (a * ne + e) * nd + d
    }

    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let (_, ne, nd) = self.shape();
        (idx / (ne * nd), (idx / nd) % ne, idx % nd)
    }

    pub fn point(&self, idx: usize) -> (f64, f64, f64) {
        let (a, e, d) = self.unravel(idx);
        (self.azimuth.value(a), self.elevation.value(e), self.delay.value(d))
    }
}

/// Grid point chosen by an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub delay_s: f64,
    pub peak_value: f64,
    /// Iterations run (EM only; 0 for MUSIC).
    pub iterations: usize,
}

/// Joint steering `A = D(φ, θ) ⊗ g(t)`, port-major.
pub fn joint_steering(
    model: &SteeringModel,
    pol: &PolarizationState,
    dir: &WaveDirection,
    delay_s: f64,
    pilot_freqs: &[f64],
) -> Vec<Complex64> {
    let d = model.steering_vector(dir, pol);
    let g = delay_steering(delay_s, pilot_freqs);
    d.iter().flat_map(|x| g.iter().map(move |y| x * y)).collect()
}

/// Removes the known pilot from every occupied cell: `Y · conj(X) / |X|²`.
pub fn strip_pilots(snapshots: &PortSnapshots, grid: &ResourceGrid) -> Result<PortSnapshots> {
    if snapshots.symbols != grid.occupied_symbols() {
        return Err(Error::input("snapshot symbols do not match the grid"));
    }
    let occ = grid.occupied_subcarriers();
    let cols: Vec<usize> = snapshots
        .subcarriers
        .iter()
        .map(|k| {
            occ.binary_search(k)
                .map_err(|_| Error::input(format!("subcarrier {k} is not a pilot")))
        })
        .collect::<Result<_>>()?;
    let values = grid.values();
    let mut data = snapshots.data.clone();
    for ((_, k, s), v) in data.indexed_iter_mut() {
        let x = values[[s, cols[k]]];
        let p = x.norm_sqr();
        *v = if p > 0.0 { *v * x.conj() / p } else { Complex64::new(0.0, 0.0) };
    }
    Ok(PortSnapshots {
        data,
        subcarriers: snapshots.subcarriers.clone(),
        symbols: snapshots.symbols.clone(),
        scs_hz: snapshots.scs_hz,
    })
}

/// Picks at most `max_joint_dim / n_ports` of the `n_occupied` pilot tones,
/// uniformly across the band with both edges kept. Returns positions into
/// the occupied-subcarrier list.
pub fn pilot_decimate(n_occupied: usize, n_ports: usize, max_joint_dim: usize) -> Result<Vec<usize>> {
    if n_ports == 0 || max_joint_dim < 2 * n_ports {
        return Err(Error::config(format!(
            "joint budget {max_joint_dim} below two tones for {n_ports} ports"
        )));
    }
    if n_occupied == 0 {
        return Err(Error::config("no occupied subcarriers to decimate"));
    }
    let budget = max_joint_dim / n_ports;
    if budget >= n_occupied {
        return Ok((0..n_occupied).collect());
    }
    let span = (n_occupied - 1) as f64;
    Ok((0..budget)
        .map(|i| (i as f64 * span / (budget - 1) as f64).round() as usize)
        .collect())
}

/// Slices of a spectrum to export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumSlice {
    All,
    /// Angle plane at one delay index.
    AtDelay(usize),
    /// Delay profile at one (azimuth, elevation) index pair.
    AtAngles(usize, usize),
}

/// MUSIC pseudo-spectrum over a [`SearchGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub grid: SearchGrid,
    /// Indexed by [`SearchGrid::index`].
    pub values: Vec<f64>,
    pub argmax: Estimate,
}

impl Spectrum {
    pub fn as_array(&self) -> Array3<f64> {
        Array3::from_shape_vec(self.grid.shape(), self.values.clone()).expect("grid shape")
    }

    /// CSV `(phi_deg, theta_deg, delay_s, power)`.
    pub fn write_csv<W: Write>(&self, mut out: W, slice: SpectrumSlice) -> Result<()> {
        writeln!(out, "phi_deg,theta_deg,delay_s,power")?;
        let (na, ne, nd) = self.grid.shape();
        for a in 0..na {
            for e in 0..ne {
                for d in 0..nd {
                    let keep = match slice {
                        SpectrumSlice::All => true,
                        SpectrumSlice::AtDelay(dd) => d == dd,
                        SpectrumSlice::AtAngles(aa, ee) => a == aa && e == ee,
                    };
                    if keep {
                        let (phi, theta, tau) = self.grid.point(self.grid.index(a, e, d));
                        let p = self.values[self.grid.index(a, e, d)];
                        writeln!(out, "{phi},{theta},{tau:e},{p:e}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_values_include_both_ends() {
        let a = Axis::new(20.0, 160.0, 1.0).unwrap();
        assert_eq!(a.len(), 141);
        assert_eq!(a.value(140), 160.0);
        let d = Axis::new(0.0, 1e-7, 1e-9).unwrap();
        assert_eq!(d.len(), 101);
        assert!(Axis::new(1.0, 0.0, 1.0).is_err());
        assert!(Axis::new(0.0, 1.0, 0.0).is_err());
        assert_eq!(Axis::fixed(3.0).len(), 1);
        assert_eq!(a.nearest(47.4), 27);
        assert_eq!(a.nearest(-5.0), 0);
    }

    #[test]
    fn grid_index_roundtrip() {
        let g = SearchGrid {
            azimuth: Axis::new(0.0, 9.0, 1.0).unwrap(),
            elevation: Axis::new(10.0, 14.0, 1.0).unwrap(),
            delay: Axis::new(0.0, 2e-9, 1e-9).unwrap(),
        };
        assert_eq!(g.len(), 10 * 5 * 3);
        for idx in 0..g.len() {
            let (a, e, d) = g.unravel(idx);
            assert_eq!(g.index(a, e, d), idx);
        }
    }

    #[test]
    fn decimation_contract() {
        let sel = pilot_decimate(20_000, 6, 64 * 6).unwrap();
        assert_eq!(sel.len(), 64);
        assert_eq!(sel[0], 0);
        assert_eq!(*sel.last().unwrap(), 19_999);
        assert!(sel.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(pilot_decimate(50, 6, 6 * 64).unwrap(), (0..50).collect::<Vec<_>>());
        assert!(pilot_decimate(50, 6, 11).is_err());
    }

    #[test]
    fn decimation_keeps_delay_resolution() {
        // Resolution c/(2·span) depends only on the covered bandwidth.
        let scs = 15e3;
        let occupied: Vec<usize> = (0..20_000).step_by(2).collect();
        let sel = pilot_decimate(occupied.len(), 6, 128 * 6).unwrap();
        let full_span = (occupied[occupied.len() - 1] - occupied[0]) as f64 * scs;
        let dec_span = (occupied[sel[sel.len() - 1]] - occupied[sel[0]]) as f64 * scs;
        let c = crate::channel::SPEED_OF_LIGHT;
        assert_eq!(c / (2.0 * full_span), c / (2.0 * dec_span));
    }
}
