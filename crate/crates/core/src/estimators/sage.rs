use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::search::{Correlator, SearchStrategy};
use super::{joint_steering, Estimate, SearchGrid};
use crate::antenna::{PolarizationState, SteeringModel, WaveDirection};
use crate::error::{Error, Result};

/// Stopping rule for [`sage_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SageConfig {
    /// Residual threshold ξ; `None` means `1e-3·‖Y‖`.
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub strategy: SearchStrategy,
}

fn default_max_iter() -> usize {
    20
}

impl Default for SageConfig {
    fn default() -> Self {
        Self {
            xi: None,
            max_iter: default_max_iter(),
            strategy: SearchStrategy::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageEstimate {
    pub estimate: Estimate,
    /// False when `max_iter` ran out before either stop rule fired.
    pub converged: bool,
    /// `‖Ŷ − Y‖` after each iteration.
    pub residuals: Vec<f64>,
}

/// Single-path SAGE on stacked snapshots `y` (dim × N, see
/// [`super::stacked_snapshots`]).
///
/// E-step: with one path the hidden data is `Ŷ = A ŝ + (Y − A ŝ) = Y`.
/// M-step: maximize `Σ_i |Aᴴ y_i|² / ‖A‖²` over the grid, i.e. the matched
/// filter summed over symbols with a free amplitude `ŝ_i` per symbol; the
/// reported peak value is its square root. Stops when `‖Y − A ŝ‖ < ξ`, when the
/// M-step returns the previous grid point, or after `max_iter`.
pub fn sage_estimate(
    y: &DMatrix<Complex64>,
    grid: &SearchGrid,
    model: &SteeringModel,
    pol: &PolarizationState,
    pilot_freqs: &[f64],
    config: &SageConfig,
) -> Result<SageEstimate> {
    if y.ncols() == 0 {
        return Err(Error::input("no snapshot symbols"));
    }
    if config.max_iter == 0 {
        return Err(Error::config("max_iter must be at least 1"));
    }
    let xi = config.xi.unwrap_or(1e-3 * y.norm());
    if !(xi > 0.0) {
        return Err(Error::config("convergence threshold must be positive"));
    }
    let hidden = y.clone();
    let corr = Correlator::new(grid, model, pol, pilot_freqs, &hidden)?;
    let mut residuals = Vec::new();
    let mut previous: Option<usize> = None;
    let mut converged = false;
    let mut best = (0, 0.0);
    for _ in 0..config.max_iter {
        best = corr.argmax(|p, a2| p / a2, config.strategy);
        let (az, el, tau) = grid.point(best.0);
        let a = joint_steering(model, pol, &WaveDirection::new(az, el)?, tau, pilot_freqs);
        residuals.push(residual(&hidden, &a));
        if *residuals.last().unwrap() < xi || previous == Some(best.0) {
            converged = true;
            break;
        }
        previous = Some(best.0);
    }
    let (az, el, tau) = grid.point(best.0);
    Ok(SageEstimate {
        estimate: Estimate {
            azimuth_deg: az,
            elevation_deg: el,
            delay_s: tau,
            peak_value: best.1.max(0.0).sqrt(),
            iterations: residuals.len(),
        },
        converged,
        residuals,
    })
}

/// `‖Y − A ŝ‖` with the least-squares amplitude per symbol.
fn residual(y: &DMatrix<Complex64>, a: &[Complex64]) -> f64 {
    let a2: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    let mut total = 0.0;
    for col in y.column_iter() {
        let s: Complex64 = a.iter().zip(col.iter()).map(|(ai, yi)| ai.conj() * yi).sum::<Complex64>() / a2;
        total += col
            .iter()
            .zip(a)
            .map(|(yi, ai)| (yi - ai * s).norm_sqr())
            .sum::<f64>();
    }
    total.sqrt()
}
