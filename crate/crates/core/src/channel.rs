//! Parametric multipath channel: delay ramps, Doppler phases, vector-antenna
//! response and circular Gaussian noise, all in the frequency domain.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array3;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::antenna::{PolarizationState, SteeringModel, WaveDirection};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};
use crate::waveforms::{OfdmTiming, ResourceGrid};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub delay_s: f64,
    /// Signed radial speed; positive values advance the Doppler phase
    /// `exp(−j2π·i·T·2v/λ)`.
    #[serde(default)]
    pub doppler_mps: f64,
    pub direction: WaveDirection,
    #[serde(default)]
    pub pol: PolarizationState,
    pub gain: Complex64,
}

impl PathParams {
    /// Unit-gain static path.
    pub fn los(delay_s: f64, direction: WaveDirection) -> Self {
        Self {
            delay_s,
            doppler_mps: 0.0,
            direction,
            pol: PolarizationState::vertical(),
            gain: Complex64::new(1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub paths: Vec<PathParams>,
    pub noise_variance: f64,
    pub carrier_hz: f64,
    pub rng_seed: u64,
}

impl ChannelConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn validate(&self, timing: &OfdmTiming) -> Result<()> {
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(Error::config(format!(
                "noise variance must be finite and >= 0, got {}",
                self.noise_variance
            )));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(Error::config("carrier frequency must be positive"));
        }
        for (i, p) in self.paths.iter().enumerate() {
            if !(p.delay_s >= 0.0) || p.delay_s >= timing.t_sym {
                return Err(Error::config(format!(
                    "path {i}: delay {} s outside [0, symbol duration {})",
                    p.delay_s, timing.t_sym
                )));
            }
            if !p.gain.re.is_finite() || !p.gain.im.is_finite() || !p.doppler_mps.is_finite() {
                return Err(Error::config(format!("path {i}: non-finite parameter")));
            }
        }
        Ok(())
    }
}

/// Received samples `data[[port, subcarrier, symbol]]` on a subset of the
/// occupied resource elements.
#[derive(Debug, Clone, PartialEq)]
pub struct PortSnapshots {
    pub data: Array3<Complex64>,
    /// Absolute subcarrier index of each column.
    pub subcarriers: Vec<usize>,
    /// Absolute symbol index of each slice.
    pub symbols: Vec<usize>,
    pub scs_hz: f64,
}

impl PortSnapshots {
    pub fn n_ports(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_subcarriers(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_symbols(&self) -> usize {
        self.data.shape()[2]
    }

    /// Baseband frequency `k·Δf` of each column.
    pub fn frequencies(&self) -> Vec<f64> {
        self.subcarriers
            .iter()
            .map(|&k| k as f64 * self.scs_hz)
            .collect()
    }

    pub fn mean_power(&self) -> f64 {
        let n = self.data.len();
        if n == 0 {
            return 0.0;
        }
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64
    }

    pub fn scale(&mut self, c: Complex64) {
        self.data.mapv_inplace(|v| v * c);
    }

    /// CSV `(port, subcarrier, symbol, re, im)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "port,subcarrier,symbol,re,im")?;
        for ((m, k, s), v) in self.data.indexed_iter() {
            writeln!(
                out,
                "{m},{},{},{:e},{:e}",
                self.subcarriers[k], self.symbols[s], v.re, v.im
            )?;
        }
        Ok(())
    }
}

/// `exp(−j2π (f_i − f_0) t)`; element 0 is exactly 1.
pub fn delay_steering(delay_s: f64, freqs: &[f64]) -> Vec<Complex64> {
    let f0 = freqs.first().copied().unwrap_or(0.0);
    freqs
        .iter()
        .map(|f| Complex64::from_polar(1.0, -2.0 * PI * (f - f0) * delay_s))
        .collect()
}

/// Doppler factors for symbol `symbol_index`: the per-symbol phase
/// `C^i = exp(−j2π·i·T_total·2v/λ)` and the across-subcarrier term
/// `Dv[m] = exp(−j2π·m·T_sym·2v/(n·λ))`.
pub fn doppler_factors(
    v_mps: f64,
    symbol_index: usize,
    wavelength: f64,
    timing: &OfdmTiming,
    n_subcarriers: usize,
) -> (Complex64, Vec<Complex64>) {
    let c = symbol_phase(v_mps, symbol_index, wavelength, timing);
    let dv = (0..n_subcarriers)
        .map(|m| subcarrier_doppler(v_mps, m, wavelength, timing, n_subcarriers))
        .collect();
    (c, dv)
}

pub(crate) fn symbol_phase(v: f64, i: usize, wavelength: f64, timing: &OfdmTiming) -> Complex64 {
    // Reduce the cycle count before scaling by 2π to keep long records exact.
    let cycles = (i as f64 * timing.t_total() * 2.0 * v / wavelength).fract();
    Complex64::from_polar(1.0, -2.0 * PI * cycles)
}

pub(crate) fn subcarrier_doppler(
    v: f64,
    m: usize,
    wavelength: f64,
    timing: &OfdmTiming,
    n: usize,
) -> Complex64 {
    Complex64::from_polar(
        1.0,
        -2.0 * PI * m as f64 * timing.t_sym * 2.0 * v / (n as f64 * wavelength),
    )
}

/// `σ² = P / 10^(snr/10)`.
pub fn snr_to_noise_variance(snr_db: f64, signal_power: f64) -> Result<f64> {
    if !(signal_power > 0.0) {
        return Err(Error::config(format!(
            "signal power must be positive, got {signal_power}"
        )));
    }
    Ok(signal_power / 10f64.powf(snr_db / 10.0))
}

/// Noiseless received signal on the occupied cells selected by
/// `subcarrier_positions` (indices into the grid's occupied subcarriers;
/// `None` keeps all).
pub fn synthesize_signal(
    grid: &ResourceGrid,
    cfg: &ChannelConfig,
    model: &SteeringModel,
    subcarrier_positions: Option<&[usize]>,
) -> Result<PortSnapshots> {
    let timing = OfdmTiming::normal_cp(grid.scs_hz);
    cfg.validate(&timing)?;
    let occ = grid.occupied_subcarriers();
    let positions: Vec<usize> = match subcarrier_positions {
        Some(p) => {
            if let Some(&bad) = p.iter().find(|&&i| i >= occ.len()) {
                return Err(Error::config(format!(
                    "subcarrier position {bad} outside {} occupied subcarriers",
                    occ.len()
                )));
            }
            p.to_vec()
        }
        None => (0..occ.len()).collect(),
    };
    let subcarriers: Vec<usize> = positions.iter().map(|&i| occ[i]).collect();
    let symbols = grid.occupied_symbols().to_vec();
    let n_ports = model.n_ports();
    let lambda = cfg.wavelength();
    let values = grid.values();
    let mut data = Array3::<Complex64>::zeros((n_ports, subcarriers.len(), symbols.len()));

    for path in &cfg.paths {
        let steer = model.steering_vector(&path.direction, &path.pol);
        if steer.len() != n_ports {
            return Err(Error::config("steering model returned wrong port count"));
        }
        let freq: Vec<Complex64> = subcarriers
            .iter()
            .map(|&k| {
                let g = Complex64::from_polar(
                    1.0,
                    -2.0 * PI * k as f64 * grid.scs_hz * path.delay_s,
                );
                g * subcarrier_doppler(path.doppler_mps, k, lambda, &timing, grid.n_subcarriers)
            })
            .collect();
        for (s, &i) in symbols.iter().enumerate() {
            let c = path.gain * symbol_phase(path.doppler_mps, i, lambda, &timing);
            for (kk, &pos) in positions.iter().enumerate() {
                let base = c * freq[kk] * values[[s, pos]];
                for (m, d) in steer.iter().enumerate() {
                    data[[m, kk, s]] += d * base;
                }
            }
        }
    }
    Ok(PortSnapshots {
        data,
        subcarriers,
        symbols,
        scs_hz: grid.scs_hz,
    })
}

/// Adds circular complex Gaussian noise of total variance `σ²` per sample.
pub fn add_awgn(snapshots: &mut PortSnapshots, noise_variance: f64, rng: &mut SimRng) {
    if noise_variance <= 0.0 {
        return;
    }
    let sd = (noise_variance / 2.0).sqrt();
    for v in snapshots.data.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re * sd, im * sd);
    }
}

/// Signal plus noise drawn from `cfg.rng_seed`.
pub fn synthesize_received(
    grid: &ResourceGrid,
    cfg: &ChannelConfig,
    model: &SteeringModel,
) -> Result<PortSnapshots> {
    synthesize_received_on(grid, cfg, model, None)
}

pub fn synthesize_received_on(
    grid: &ResourceGrid,
    cfg: &ChannelConfig,
    model: &SteeringModel,
    subcarrier_positions: Option<&[usize]>,
) -> Result<PortSnapshots> {
    let mut snaps = synthesize_signal(grid, cfg, model, subcarrier_positions)?;
    let mut rng = rng_from_seed(cfg.rng_seed);
    add_awgn(&mut snaps, cfg.noise_variance, &mut rng);
    Ok(snaps)
}
