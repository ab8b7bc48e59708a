//! Range-Doppler imaging from reflected reference-signal grids.
//!
//! The channel response `H[i, k] = conj(X[i, k])·Y[i, k]` is correlated
//! against `conj(g_k(τ)·Dv_k(ν))·conj(C^i(ν))` with
//! `g_k(τ) = exp(−j2π k Δf τ)`, `Dv_k(ν) = exp(−j2π k T_sym 2ν/(nλ))` and
//! `C^i(ν) = exp(−j2π i T_total 2ν/λ)`. Rows of an image are delays,
//! columns velocities.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::antenna::{ArrayGeometry, ElementKind, SteeringModel};
use crate::channel::{synthesize_received, ChannelConfig, PathParams, PortSnapshots, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::render::{render_pgm, Scaling};
use crate::waveforms::{extended_zadoff_chu, map_to_comb, CombConfig, GridDims, OfdmTiming, ResourceGrid};

/// Point scatterers and the symbol slots that carry the reference signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionScene {
    /// Round-trip delay and radial speed per scatterer.
    pub scatterers: Vec<PathParams>,
    pub symbol_occupancy: Vec<bool>,
}

impl ReflectionScene {
    /// Every `period`-th slot starting at `start`, out of `n_slots`.
    pub fn periodic_occupancy(n_slots: usize, period: usize, start: usize) -> Vec<bool> {
        (0..n_slots)
            .map(|i| i >= start && (i - start).is_multiple_of(period.max(1)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.symbol_occupancy.iter().any(|&b| b) {
            return Err(Error::config("symbol occupancy has no occupied slot"));
        }
        Ok(())
    }
}

/// Radio parameters of an imaging run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagingSetup {
    pub n_subcarriers: usize,
    pub scs_hz: f64,
    pub carrier_hz: f64,
    #[serde(default = "default_comb")]
    pub comb_size: usize,
    #[serde(default)]
    pub comb_offset: usize,
    #[serde(default)]
    pub noise_variance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_root")]
    pub zc_root: u64,
}

fn default_comb() -> usize {
    2
}

fn default_root() -> u64 {
    25
}

impl ImagingSetup {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn timing(&self) -> OfdmTiming {
        OfdmTiming::normal_cp(self.scs_hz)
    }
}

/// Unit-modulus comb grid with the scene's symbol occupancy.
pub fn imaging_grid(scene: &ReflectionScene, setup: &ImagingSetup) -> Result<ResourceGrid> {
    scene.validate()?;
    let n_slots = scene.symbol_occupancy.len();
    let comb = CombConfig::new(setup.comb_size, setup.comb_offset, n_slots);
    let per_symbol = comb.occupied_subcarriers(setup.n_subcarriers).len();
    if per_symbol == 0 {
        return Err(Error::config("comb selects no subcarriers"));
    }
    let base = extended_zadoff_chu(setup.zc_root, per_symbol)?;
    let seq: Vec<Complex64> = (0..n_slots).flat_map(|_| base.iter().copied()).collect();
    let mut grid = map_to_comb(
        &seq,
        &comb,
        GridDims {
            n_subcarriers: setup.n_subcarriers,
            n_symbols: n_slots,
            scs_hz: setup.scs_hz,
        },
    )?;
    grid.retain_symbols(|l| scene.symbol_occupancy[l]);
    Ok(grid)
}

/// Matched-filtered response `H` on the occupied cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelResponse {
    /// `[occupied symbol, occupied subcarrier]`.
    pub values: Array2<Complex64>,
    pub subcarriers: Vec<usize>,
    pub symbols: Vec<usize>,
    /// Total subcarriers `n` of the carrier grid.
    pub n_subcarriers: usize,
    /// Symbol slots `M` spanned by the record, occupied or not.
    pub n_symbol_slots: usize,
    pub scs_hz: f64,
}

/// Element-wise `conj(X)·Y`; cells where `X` is zero come out zero.
pub fn matched_filter_cells(received: &Array2<Complex64>, transmitted: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    if received.dim() != transmitted.dim() {
        return Err(Error::input(format!(
            "received {:?} and transmitted {:?} grids differ in shape",
            received.dim(),
            transmitted.dim()
        )));
    }
    Ok(ndarray::Zip::from(received)
        .and(transmitted)
        .map_collect(|y, x| x.conj() * y))
}

/// Matched filter of single-port snapshots against the transmitted grid.
pub fn matched_filter(received: &PortSnapshots, transmitted: &ResourceGrid) -> Result<ChannelResponse> {
    if received.n_ports() != 1 {
        return Err(Error::input("imaging expects a single receive port"));
    }
    if received.symbols != transmitted.occupied_symbols()
        || received.subcarriers != transmitted.occupied_subcarriers()
    {
        return Err(Error::input("snapshot cells do not match the transmitted grid"));
    }
    let y = received.data.index_axis(ndarray::Axis(0), 0).t().to_owned();
    let values = matched_filter_cells(&y, transmitted.values())?;
    Ok(ChannelResponse {
        values,
        subcarriers: received.subcarriers.clone(),
        symbols: received.symbols.clone(),
        n_subcarriers: transmitted.n_subcarriers,
        n_symbol_slots: transmitted.n_symbols,
        scs_hz: transmitted.scs_hz,
    })
}

/// Synthesizes the echo of `scene` and matched-filters it.
pub fn reflect(scene: &ReflectionScene, setup: &ImagingSetup) -> Result<ChannelResponse> {
    let grid = imaging_grid(scene, setup)?;
    let cfg = ChannelConfig {
        paths: scene.scatterers.clone(),
        noise_variance: setup.noise_variance,
        carrier_hz: setup.carrier_hz,
        rng_seed: setup.seed,
    };
    let model = SteeringModel::new(ArrayGeometry::single(ElementKind::ScalarIsotropic));
    let snaps = synthesize_received(&grid, &cfg, &model)?;
    matched_filter(&snaps, &grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagingParams {
    pub carrier_hz: f64,
    /// Apply the across-subcarrier Doppler term `Dv`.
    #[serde(default = "yes")]
    pub intra_symbol_doppler: bool,
}

fn yes() -> bool {
    true
}

impl ImagingParams {
    pub fn new(carrier_hz: f64) -> Self {
        Self {
            carrier_hz,
            intra_symbol_doppler: true,
        }
    }

    fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAxes {
    pub delay_s: Vec<f64>,
    pub velocity_mps: Vec<f64>,
}

impl ImageAxes {
    /// Delay `d/(nΔf)` for `d < n/K_TC`; velocity `b·λ/(2 M T_total)` for
    /// centered `b`, zero velocity at column `M/2`.
    pub fn natural(h: &ChannelResponse, params: &ImagingParams) -> Result<Self> {
        let comb = comb_spacing(h)?;
        let n = h.n_subcarriers;
        let l = n.div_ceil(comb);
        let df = h.scs_hz;
        let m = h.n_symbol_slots;
        let t_total = OfdmTiming::normal_cp(df).t_total();
        let dv = params.wavelength() / (2.0 * m as f64 * t_total);
        Ok(Self {
            delay_s: (0..l).map(|d| d as f64 / (n as f64 * df)).collect(),
            velocity_mps: (0..m).map(|b| (b as f64 - (m / 2) as f64) * dv).collect(),
        })
    }

    fn validate(&self) -> Result<()> {
        for (name, axis) in [("delay", &self.delay_s), ("velocity", &self.velocity_mps)] {
            if axis.is_empty() || axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::config(format!("{name} axis must be nonempty and strictly increasing")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerImage {
    /// `[delay, velocity]`.
    pub magnitudes: Array2<f64>,
    pub delay_axis: Vec<f64>,
    pub velocity_axis: Vec<f64>,
}

impl RangeDopplerImage {
    /// `(delay index, velocity index, magnitude)` of the first global maximum.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for ((d, v), &m) in self.magnitudes.indexed_iter() {
            if m > best.2 {
                best = (d, v, m);
            }
        }
        best
    }

    pub fn delay_step(&self) -> f64 {
        step(&self.delay_axis)
    }

    pub fn velocity_step(&self) -> f64 {
        step(&self.velocity_axis)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "delay_s,velocity_mps,magnitude")?;
        for ((d, v), m) in self.magnitudes.indexed_iter() {
            writeln!(out, "{:e},{},{:e}", self.delay_axis[d], self.velocity_axis[v], m)?;
        }
        Ok(())
    }

    pub fn to_pgm(&self, scaling: Scaling) -> Result<Vec<u8>> {
        let comment = format!(
            "rows delay_s {:e}..{:e} ({}), cols velocity_mps {}..{} ({})",
            self.delay_axis[0],
            self.delay_axis[self.delay_axis.len() - 1],
            self.delay_axis.len(),
            self.velocity_axis[0],
            self.velocity_axis[self.velocity_axis.len() - 1],
            self.velocity_axis.len()
        );
        render_pgm(self.magnitudes.view(), scaling, &[comment])
    }
}

fn step(axis: &[f64]) -> f64 {
    if axis.len() < 2 {
        0.0
    } else {
        (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64
    }
}

fn check_response(h: &ChannelResponse) -> Result<()> {
    if h.values.is_empty() {
        return Err(Error::input("empty channel response"));
    }
    if h.values.dim() != (h.symbols.len(), h.subcarriers.len()) {
        return Err(Error::input("channel response shape does not match its index lists"));
    }
    if h.symbols.iter().any(|&i| i >= h.n_symbol_slots) {
        return Err(Error::input("symbol index beyond the record length"));
    }
    Ok(())
}

/// Common subcarrier spacing of the response, in subcarriers.
fn comb_spacing(h: &ChannelResponse) -> Result<usize> {
    let k = &h.subcarriers;
    if k.len() < 2 {
        return Ok(1);
    }
    let s = k[1] - k[0];
    if s == 0 || k.windows(2).any(|w| w[1] - w[0] != s) {
        return Err(Error::Unsupported("subcarriers are not uniformly spaced".into()));
    }
    Ok(s)
}

/// Complex image on arbitrary axes by direct summation.
pub fn image_accumulator_on(
    h: &ChannelResponse,
    params: &ImagingParams,
    axes: &ImageAxes,
) -> Result<Array2<Complex64>> {
    check_response(h)?;
    axes.validate()?;
    let lambda = params.wavelength();
    let timing = OfdmTiming::normal_cp(h.scs_hz);
    let n = h.n_subcarriers as f64;
    let nv = axes.velocity_mps.len();
    let cells: Vec<Complex64> = (0..axes.delay_s.len() * nv)
        .into_par_iter()
        .map(|idx| {
            let tau = axes.delay_s[idx / nv];
            let nu = axes.velocity_mps[idx % nv];
            let beta = if params.intra_symbol_doppler {
                timing.t_sym * 2.0 * nu / (n * lambda)
            } else {
                0.0
            };
            let freq: Vec<Complex64> = h
                .subcarriers
                .iter()
                .map(|&k| {
                    let cycles = (k as f64 * (h.scs_hz * tau + beta)).fract();
                    Complex64::from_polar(1.0, 2.0 * PI * cycles)
                })
                .collect();
            let mut acc = Complex64::new(0.0, 0.0);
            for (s, &i) in h.symbols.iter().enumerate() {
                let cycles = (i as f64 * timing.t_total() * 2.0 * nu / lambda).fract();
                let c = Complex64::from_polar(1.0, 2.0 * PI * cycles);
                let row = h.values.row(s);
                let inner: Complex64 = row.iter().zip(&freq).map(|(x, f)| x * f).sum();
                acc += c * inner;
            }
            acc
        })
        .collect();
    Ok(Array2::from_shape_vec((axes.delay_s.len(), nv), cells).expect("shape"))
}

pub fn form_image_on(h: &ChannelResponse, params: &ImagingParams, axes: &ImageAxes) -> Result<RangeDopplerImage> {
    let acc = image_accumulator_on(h, params, axes)?;
    Ok(RangeDopplerImage {
        magnitudes: acc.mapv(|c| c.norm()),
        delay_axis: axes.delay_s.clone(),
        velocity_axis: axes.velocity_mps.clone(),
    })
}

/// Evaluates the natural axes with two FFT passes: slow time per subcarrier,
/// then fast frequency per velocity column. `column` maps each complex
/// delay column to the stored representation.
fn fft_route<T, F>(h: &ChannelResponse, params: &ImagingParams, column: F) -> Result<(ImageAxes, Array2<T>)>
where
    T: Send + Clone + Default,
    F: Fn(Complex64) -> T + Sync,
{
    check_response(h)?;
    let comb = comb_spacing(h)?;
    if !h.n_subcarriers.is_multiple_of(comb) {
        return Err(Error::Unsupported(format!(
            "comb spacing {comb} does not divide {} subcarriers",
            h.n_subcarriers
        )));
    }
    let axes = ImageAxes::natural(h, params)?;
    let m = h.n_symbol_slots;
    let l = h.n_subcarriers / comb;
    let n_occ = h.subcarriers.len();
    let k0 = h.subcarriers[0];
    let mut planner = FftPlanner::<f64>::new();
    let slow = planner.plan_fft_inverse(m);
    let fast = planner.plan_fft_inverse(l);

    // z[j][b] = Σ_s H[s, j] exp(+j2π i_s b / M)
    let z: Vec<Vec<Complex64>> = (0..n_occ)
        .into_par_iter()
        .map(|j| {
            let mut buf = vec![Complex64::new(0.0, 0.0); m];
            for (s, &i) in h.symbols.iter().enumerate() {
                buf[i] = h.values[[s, j]];
            }
            slow.process(&mut buf);
            buf
        })
        .collect();

    let timing = OfdmTiming::normal_cp(h.scs_hz);
    let n = h.n_subcarriers as f64;
    let half = m / 2;
    let cols: Vec<Vec<T>> = (0..m)
        .into_par_iter()
        .map(|bi| {
            let b = bi as i64 - half as i64;
            let b_fft = b.rem_euclid(m as i64) as usize;
            // β = T_sym·2ν/(nλ) with ν = b·λ/(2 M T_total)
            let beta = if params.intra_symbol_doppler {
                timing.t_sym * b as f64 / (n * m as f64 * timing.t_total())
            } else {
                0.0
            };
            let mut buf = vec![Complex64::new(0.0, 0.0); l];
            for (j, &k) in h.subcarriers.iter().enumerate() {
                let ph = Complex64::from_polar(1.0, 2.0 * PI * (k as f64 * beta).fract());
                buf[j] = z[j][b_fft] * ph;
            }
            fast.process(&mut buf);
            buf.iter()
                .enumerate()
                .map(|(d, v)| {
                    let cycles = ((k0 * d) % h.n_subcarriers) as f64 / n;
                    column(v * Complex64::from_polar(1.0, 2.0 * PI * cycles))
                })
                .collect()
        })
        .collect();
    let mut out = Array2::from_elem((l, m), T::default());
    for (b, col) in cols.into_iter().enumerate() {
        for (d, v) in col.into_iter().enumerate() {
            out[[d, b]] = v;
        }
    }
    Ok((axes, out))
}

/// Complex image on the natural axes (see [`ImageAxes::natural`]).
pub fn image_accumulator(h: &ChannelResponse, params: &ImagingParams) -> Result<(ImageAxes, Array2<Complex64>)> {
    fft_route(h, params, |c| c)
}

/// Magnitude image on the natural axes.
pub fn form_image(h: &ChannelResponse, params: &ImagingParams) -> Result<RangeDopplerImage> {
    let (axes, magnitudes) = match fft_route(h, params, |c| c.norm()) {
        Ok(r) => r,
        Err(Error::Unsupported(_)) => {
            let axes = ImageAxes::natural(h, params)?;
            let img = form_image_on(h, params, &axes)?;
            (axes, img.magnitudes)
        }
        Err(e) => return Err(e),
    };
    Ok(RangeDopplerImage {
        magnitudes,
        delay_axis: axes.delay_s,
        velocity_axis: axes.velocity_mps,
    })
}

/// Velocity spacing `λ/(2·S·T_total)` between a scatterer and its aliases
/// under every-`S`-th-symbol occupancy.
pub fn mirror_spacing(period: usize, t_total: f64, wavelength: f64) -> Result<f64> {
    if period == 0 {
        return Err(Error::config("occupancy period must be at least 1"));
    }
    Ok(wavelength / (2.0 * period as f64 * t_total))
}

/// Monostatic down-range of a round-trip delay.
pub fn down_range(delay_s: f64) -> f64 {
    SPEED_OF_LIGHT * delay_s / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Threshold `mean + k·std` over the whole image.
    #[serde(default = "default_k")]
    pub k_sigma: f64,
    /// Alias spacing used for mirror flagging; `None` disables it.
    #[serde(default)]
    pub mirror_spacing_mps: Option<f64>,
}

fn default_k() -> f64 {
    6.0
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            k_sigma: default_k(),
            mirror_spacing_mps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub delay_s: f64,
    pub velocity_mps: f64,
    pub magnitude: f64,
    pub is_mirror: bool,
    pub delay_index: usize,
    pub velocity_index: usize,
}

/// Peaks sorted by descending magnitude.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionList {
    pub peaks: Vec<Detection>,
}

/// Strict local maxima (8-neighborhood, plateaus resolved to their first
/// cell in row-major order) above `mean + k·std`, as `(row, col, value)`
/// sorted by descending value then index.
pub fn local_maxima(grid: &Array2<f64>, k_sigma: f64) -> Vec<(usize, usize, f64)> {
    let n = grid.len() as f64;
    if grid.is_empty() {
        return Vec::new();
    }
    let mean = grid.sum() / n;
    let var = grid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let threshold = mean + k_sigma * var.sqrt();
    let (rows, cols) = grid.dim();
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = grid[[r, c]];
            if !(v > threshold) {
                continue;
            }
            let mut is_max = true;
            'nb: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                        continue;
                    }
                    let w = grid[[rr as usize, cc as usize]];
                    let earlier = (rr, cc) < (r as i64, c as i64);
                    if w > v || (earlier && w == v) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                out.push((r, c, v));
            }
        }
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    out
}

pub fn detect_peaks(image: &RangeDopplerImage, cfg: &DetectionConfig) -> Result<DetectionList> {
    if image.magnitudes.is_empty() {
        return Err(Error::input("empty image"));
    }
    let dv = image.velocity_step();
    let mut peaks: Vec<Detection> = Vec::new();
    for (d, v, m) in local_maxima(&image.magnitudes, cfg.k_sigma) {
        let velocity = image.velocity_axis[v];
        let is_mirror = cfg.mirror_spacing_mps.is_some_and(|spacing| {
            peaks.iter().any(|q| {
                let dvel = velocity - q.velocity_mps;
                let order = (dvel / spacing).round();
                q.delay_index.abs_diff(d) <= 1
                    && order != 0.0
                    && (dvel - order * spacing).abs() <= dv * (1.0 + 1e-9)
            })
        });
        peaks.push(Detection {
            delay_s: image.delay_axis[d],
            velocity_mps: velocity,
            magnitude: m,
            is_mirror,
            delay_index: d,
            velocity_index: v,
        });
    }
    Ok(DetectionList { peaks })
}
