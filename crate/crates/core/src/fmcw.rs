//! FMCW radar: complex-baseband cube synthesis and the range, Doppler and
//! angle FFT chain, plus clustering, tracking and micro-Doppler.
//!
//! A target at range `r`, radial speed `v` and azimuth `az` contributes
//! `a·exp(j2π f_b n/fs)·exp(j4π(r + v·c·T)/λ)·exp(j2π d_m sin(az))` to
//! sample `n` of chirp `c` on rx `m`, with `f_b = 2 s r / c_0` and `T` the
//! chirp repetition time. Positive speed advances the chirp phase.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use ndarray::{Array2, Array3, Axis};
use num_complex::{Complex32, Complex64};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::channel::SPEED_OF_LIGHT;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::sar_imaging::local_maxima;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChirpConfig {
    pub slope_hz_per_s: f64,
    pub f_start_hz: f64,
    pub t_chirp_s: f64,
    pub t_idle_s: f64,
    pub fs_adc_hz: f64,
    pub n_samples: usize,
    pub n_chirps: usize,
    /// Receive element positions along the array axis, in wavelengths.
    pub rx_positions: Vec<f64>,
}

impl Default for ChirpConfig {
    fn default() -> Self {
        Self {
            slope_hz_per_s: 30e12,
            f_start_hz: 77e9,
            t_chirp_s: 40e-6,
            t_idle_s: 10e-6,
            fs_adc_hz: 10e6,
            n_samples: 256,
            n_chirps: 128,
            rx_positions: vec![0.0, 0.5, 1.0, 1.5],
        }
    }
}

impl ChirpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("slope_hz_per_s", self.slope_hz_per_s),
            ("f_start_hz", self.f_start_hz),
            ("t_chirp_s", self.t_chirp_s),
            ("fs_adc_hz", self.fs_adc_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t_idle_s >= 0.0) {
            return Err(Error::config("t_idle_s must be non-negative"));
        }
        if self.n_samples == 0 || self.n_chirps == 0 {
            return Err(Error::config("n_samples and n_chirps must be at least 1"));
        }
        if self.n_samples as f64 > self.fs_adc_hz * self.t_chirp_s * (1.0 + 1e-9) {
            return Err(Error::config(format!(
                "{} samples do not fit in a {} s chirp at {} Hz",
                self.n_samples, self.t_chirp_s, self.fs_adc_hz
            )));
        }
        if self.rx_positions.is_empty() {
            return Err(Error::config("at least one rx channel required"));
        }
        Ok(())
    }

    pub fn n_rx(&self) -> usize {
        self.rx_positions.len()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_start_hz
    }

    /// Chirp repetition time.
    pub fn t_total(&self) -> f64 {
        self.t_chirp_s + self.t_idle_s
    }

    pub fn max_range(&self) -> f64 {
        self.fs_adc_hz * SPEED_OF_LIGHT / (2.0 * self.slope_hz_per_s)
    }

    pub fn range_bin_width(&self) -> f64 {
        self.max_range() / self.n_samples as f64
    }

    pub fn max_velocity(&self) -> f64 {
        self.wavelength() / (4.0 * self.t_total())
    }

    pub fn velocity_bin_width(&self) -> f64 {
        self.wavelength() / (2.0 * self.n_chirps as f64 * self.t_total())
    }

    /// Range of FFT bin `b`.
    pub fn range_of_bin(&self, b: f64) -> f64 {
        b * self.range_bin_width()
    }

    /// Velocity of centered Doppler bin `k` (zero velocity at `n_chirps/2`).
    pub fn velocity_of_bin(&self, k: f64) -> f64 {
        (k - (self.n_chirps / 2) as f64) * self.velocity_bin_width()
    }

    /// Uniform element spacing in wavelengths, if the array is uniform.
    pub fn rx_spacing(&self) -> Option<f64> {
        let p = &self.rx_positions;
        if p.len() < 2 {
            return None;
        }
        let d = p[1] - p[0];
        let uniform = p.windows(2).all(|w| ((w[1] - w[0]) - d).abs() < 1e-9);
        (uniform && d > 0.0).then_some(d)
    }
}

/// Sinusoidal speed modulation `v(t) = v + A sin(2π f t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    pub amplitude_mps: f64,
    pub frequency_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarTarget {
    pub range_m: f64,
    pub velocity_mps: f64,
    pub azimuth_deg: f64,
    #[serde(default = "unit_gain")]
    pub rcs_gain: f64,
    #[serde(default)]
    pub micro_motion: Option<Oscillation>,
}

fn unit_gain() -> f64 {
    1.0
}

impl RadarTarget {
    pub fn new(range_m: f64, velocity_mps: f64, azimuth_deg: f64) -> Self {
        Self {
            range_m,
            velocity_mps,
            azimuth_deg,
            rcs_gain: 1.0,
            micro_motion: None,
        }
    }

    /// Radial displacement from the start position at time `t`.
    fn displacement(&self, t: f64) -> f64 {
        let mut x = self.velocity_mps * t;
        if let Some(o) = self.micro_motion {
            let w = 2.0 * PI * o.frequency_hz;
            x += o.amplitude_mps / w * (1.0 - (w * t).cos());
        }
        x
    }

    pub(crate) fn check(&self, cfg: &ChirpConfig) -> Result<()> {
        if !(0.0..cfg.max_range()).contains(&self.range_m) {
            return Err(Error::config(format!(
                "target range {} m outside unambiguous range [0, {}) m",
                self.range_m,
                cfg.max_range()
            )));
        }
        let peak = self.velocity_mps.abs() + self.micro_motion.map_or(0.0, |o| o.amplitude_mps.abs());
        if peak > cfg.max_velocity() {
            return Err(Error::config(format!(
                "target speed {peak} m/s exceeds unambiguous speed {} m/s",
                cfg.max_velocity()
            )));
        }
        if !(-90.0..=90.0).contains(&self.azimuth_deg) {
            return Err(Error::config(format!(
                "target azimuth {} deg outside [-90, 90]",
                self.azimuth_deg
            )));
        }
        Ok(())
    }
}

/// ADC samples `[rx, chirp, sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCube {
    pub samples: Array3<Complex64>,
}

impl RadarCube {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.samples.dim()
    }
}

pub fn synthesize_cube(targets: &[RadarTarget], cfg: &ChirpConfig, noise_variance: f64, seed: u64) -> Result<RadarCube> {
    cfg.validate()?;
    for t in targets {
        t.check(cfg)?;
        let drift = t.velocity_mps.abs() * cfg.n_chirps as f64 * cfg.t_total();
        if drift >= cfg.range_bin_width() / 2.0 {
            log::warn!(
                "target at {} m moves {drift:.3} m over the frame, more than half a range bin",
                t.range_m
            );
        }
    }
    let lambda = cfg.wavelength();
    let (nr, nc, ns) = (cfg.n_rx(), cfg.n_chirps, cfg.n_samples);
    let mut samples = Array3::<Complex64>::zeros((nr, nc, ns));
    for t in targets {
        let fb = 2.0 * cfg.slope_hz_per_s * t.range_m / SPEED_OF_LIGHT;
        let fast: Vec<Complex64> = (0..ns)
            .map(|n| Complex64::from_polar(1.0, 2.0 * PI * (fb * n as f64 / cfg.fs_adc_hz).fract()))
            .collect();
        let slow: Vec<Complex64> = (0..nc)
            .map(|c| {
                let r = t.range_m + t.displacement(c as f64 * cfg.t_total());
                Complex64::from_polar(t.rcs_gain, 2.0 * PI * (2.0 * r / lambda).fract())
            })
            .collect();
        let sin_az = t.azimuth_deg.to_radians().sin();
        for (m, &d) in cfg.rx_positions.iter().enumerate() {
            let spatial = Complex64::from_polar(1.0, 2.0 * PI * d * sin_az);
            for (c, s) in slow.iter().enumerate() {
                let a = spatial * s;
                for (n, f) in fast.iter().enumerate() {
                    samples[[m, c, n]] += a * f;
                }
            }
        }
    }
    if noise_variance > 0.0 {
        let mut rng = rng_from_seed(seed);
        let sd = (noise_variance / 2.0).sqrt();
        for v in samples.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += Complex64::new(re * sd, im * sd);
        }
    }
    Ok(RadarCube { samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    Rect,
    /// Periodic Hann, `0.5 − 0.5 cos(2πn/N)`.
    #[default]
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

/// Windowed forward FFT of every lane of `data` along `axis`.
fn fft_along(data: &Array3<Complex64>, axis: usize, window: Window) -> Array3<Complex64> {
    let n = data.len_of(Axis(axis));
    let w = window.coefficients(n);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut out = data.clone();
    let mut lanes: Vec<_> = out.lanes_mut(Axis(axis)).into_iter().collect();
    lanes.par_iter_mut().for_each(|lane| {
        let mut buf: Vec<Complex64> = lane.iter().zip(&w).map(|(x, wi)| x * wi).collect();
        fft.process(&mut buf);
        for (dst, v) in lane.iter_mut().zip(buf) {
            *dst = v;
        }
    });
    out
}

/// Range profiles `[rx, chirp, range bin]`.
pub fn range_fft(cube: &RadarCube, window: Window) -> Result<Array3<Complex64>> {
    if cube.samples.len_of(Axis(2)) < 2 {
        return Err(Error::config("range FFT needs at least two samples"));
    }
    Ok(fft_along(&cube.samples, 2, window))
}

/// Range-velocity maps `[rx, velocity bin, range bin]`, zero velocity at
/// row `n_chirps/2`.
pub fn doppler_fft(range_profiles: &Array3<Complex64>, window: Window) -> Result<Array3<Complex64>> {
    let nc = range_profiles.len_of(Axis(1));
    if nc < 2 {
        return Err(Error::config("Doppler FFT needs at least two chirps"));
    }
    let spec = fft_along(range_profiles, 1, window);
    let mut out = spec.clone();
    let half = nc / 2;
    for k in 0..nc {
        out.index_axis_mut(Axis(1), (k + half) % nc)
            .assign(&spec.index_axis(Axis(1), k));
    }
    Ok(out)
}

/// Zero-padded angle spectrum of one rx vector; index `k` of the result is
/// the centered bin `k − n_angle/2`.
pub fn angle_spectrum(rx_values: &[Complex64], n_angle: usize) -> Result<Vec<f64>> {
    if rx_values.len() < 2 {
        return Err(Error::Unsupported("angle FFT needs at least two rx channels".into()));
    }
    if n_angle < rx_values.len() {
        return Err(Error::config("angle FFT size below the rx count"));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n_angle];
    buf[..rx_values.len()].copy_from_slice(rx_values);
    // exp(+j2π d sin az) per element lands on bin +k of the forward transform.
    FftPlanner::new().plan_fft_forward(n_angle).process(&mut buf);
    let half = n_angle / 2;
    Ok((0..n_angle).map(|i| buf[(i + n_angle - half) % n_angle].norm()).collect())
}

/// Azimuth of centered angle bin `k` for element spacing `d` wavelengths.
pub fn azimuth_of_bin(k: f64, n_angle: usize, spacing: f64) -> f64 {
    (k / (n_angle as f64 * spacing)).clamp(-1.0, 1.0).asin().to_degrees()
}

/// Azimuths of the angle-spectrum peaks reaching `rel_threshold` of the
/// strongest one, strongest first.
pub fn angle_fft(rx_values: &[Complex64], n_angle: usize, spacing: f64, rel_threshold: f64) -> Result<Vec<f64>> {
    let spec = angle_spectrum(rx_values, n_angle)?;
    let max = spec.iter().cloned().fold(0.0, f64::max);
    let half = n_angle / 2;
    let mut peaks: Vec<(usize, f64)> = (0..n_angle)
        .filter(|&i| {
            let prev = spec[(i + n_angle - 1) % n_angle];
            let next = spec[(i + 1) % n_angle];
            spec[i] > prev && spec[i] >= next && spec[i] >= rel_threshold * max
        })
        .map(|i| (i, spec[i]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(peaks
        .into_iter()
        .map(|(i, _)| azimuth_of_bin(i as f64 - half as f64, n_angle, spacing))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    #[serde(default)]
    pub range_window: Window,
    #[serde(default)]
    pub doppler_window: Window,
    #[serde(default = "default_n_angle")]
    pub n_angle: usize,
    #[serde(default = "default_k")]
    pub k_sigma: f64,
}

fn default_n_angle() -> usize {
    64
}

fn default_k() -> f64 {
    6.0
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            range_window: Window::Hann,
            doppler_window: Window::Hann,
            n_angle: default_n_angle(),
            k_sigma: default_k(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarDetection {
    pub range_bin: usize,
    /// Centered Doppler row (zero velocity at `n_chirps/2`).
    pub velocity_bin: usize,
    /// Centered angle bin offset from boresight.
    pub angle_bin: i64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub azimuth_deg: f64,
    pub magnitude: f64,
}

impl RadarDetection {
    /// Cartesian position, `y` along boresight.
    pub fn position(&self) -> [f64; 2] {
        let az = self.azimuth_deg.to_radians();
        [self.range_m * az.sin(), self.range_m * az.cos()]
    }
}

/// Range-Doppler magnitude `sqrt(Σ_rx |RD|²)` as `[velocity, range]`.
pub fn range_doppler_magnitude(rd: &Array3<Complex64>) -> Array2<f64> {
    rd.map_axis(Axis(0), |lane| lane.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
}

/// Full chain on one frame: range FFT, Doppler FFT, local-maximum detection
/// on the rx-combined map and an angle FFT at every detected cell.
pub fn process_frame(cube: &RadarCube, cfg: &ChirpConfig, chain: &ChainConfig) -> Result<Vec<RadarDetection>> {
    cfg.validate()?;
    if cube.dims() != (cfg.n_rx(), cfg.n_chirps, cfg.n_samples) {
        return Err(Error::input("cube dimensions do not match the chirp configuration"));
    }
    let spacing = cfg
        .rx_spacing()
        .ok_or_else(|| Error::Unsupported("angle FFT needs a uniform array of ≥ 2 rx".into()))?;
    let rd = doppler_fft(&range_fft(cube, chain.range_window)?, chain.doppler_window)?;
    let mag = range_doppler_magnitude(&rd);
    let half = chain.n_angle as i64 / 2;
    local_maxima(&mag, chain.k_sigma)
        .into_iter()
        .map(|(vb, rb, m)| {
            let rx: Vec<Complex64> = rd.slice(ndarray::s![.., vb, rb]).to_vec();
            let spec = angle_spectrum(&rx, chain.n_angle)?;
            let (best, _) = spec
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            let k = best as i64 - half;
            Ok(RadarDetection {
                range_bin: rb,
                velocity_bin: vb,
                angle_bin: k,
                range_m: cfg.range_of_bin(rb as f64),
                velocity_mps: cfg.velocity_of_bin(vb as f64),
                azimuth_deg: azimuth_of_bin(k as f64, chain.n_angle, spacing),
                magnitude: m,
            })
        })
        .collect()
}

/// DBSCAN result. Every input index is in exactly one cluster or in `noise`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterSet {
    /// Cluster id per point, `None` for noise.
    pub labels: Vec<Option<usize>>,
    /// Member indices, ascending, per cluster.
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

impl ClusterSet {
    /// Partition as sorted member lists, independent of label values.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut p = self.clusters.clone();
        p.sort();
        p
    }

    pub fn centroids(&self, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
        self.clusters
            .iter()
            .map(|c| {
                let n = c.len() as f64;
                let sx: f64 = c.iter().map(|&i| points[i][0]).sum();
                let sy: f64 = c.iter().map(|&i| points[i][1]).sum();
                [sx / n, sy / n]
            })
            .collect()
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// DBSCAN with a uniform-grid neighbor index.
///
/// Neighborhoods are closed balls of radius `eps` and include the point
/// itself. Core points connected through core neighbors form a cluster; a
/// border point joins the cluster of its nearest core neighbor (lower index
/// on exact ties). Clusters are numbered by their lowest core index.
pub fn dbscan(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Result<ClusterSet> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::config("eps must be positive"));
    }
    if min_pts == 0 {
        return Err(Error::config("min_pts must be at least 1"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::input("points must be finite"));
    }
    let cell = |p: [f64; 2]| ((p[0] / eps).floor() as i64, (p[1] / eps).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        buckets.entry(cell(p)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = points
        .par_iter()
        .map(|&p| {
            let (cx, cy) = cell(p);
            let mut out = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(b) = buckets.get(&(cx + dx, cy + dy)) {
                        out.extend(b.iter().copied().filter(|&j| dist2(p, points[j]) <= eps2));
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect();
    Ok(assemble_clusters(points, &neighbors, min_pts))
}

/// Shared cluster assembly from precomputed closed-ball neighbor lists.
pub(crate) fn assemble_clusters(points: &[[f64; 2]], neighbors: &[Vec<usize>], min_pts: usize) -> ClusterSet {
    let n = points.len();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut n_clusters = 0;
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        labels[start] = Some(id);
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for &j in &neighbors[i] {
                if core[j] && labels[j].is_none() {
                    labels[j] = Some(id);
                    stack.push(j);
                }
            }
        }
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let best = neighbors[i]
            .iter()
            .filter(|&&j| core[j])
            .min_by(|&&a, &&b| dist2(points[i], points[a]).total_cmp(&dist2(points[i], points[b])).then(a.cmp(&b)));
        labels[i] = best.and_then(|&j| labels[j]);
    }
    let mut clusters = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        match l {
            Some(c) => clusters[*c].push(i),
            None => noise.push(i),
        }
    }
    ClusterSet {
        labels,
        clusters,
        noise,
    }
}

/// Short-time spectrum over slow time at one range bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `[velocity bin, frame]`, zero velocity at row `window/2`.
    pub magnitudes: Array2<f64>,
    pub velocity_axis: Vec<f64>,
    /// Centre time of each frame, seconds.
    pub time_axis: Vec<f64>,
}

impl Spectrogram {
    /// Velocity of the strongest row in each frame.
    pub fn ridge(&self) -> Vec<f64> {
        self.magnitudes
            .axis_iter(Axis(1))
            .map(|col| {
                let (i, _) = col
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                self.velocity_axis[i]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time_s,velocity_mps,magnitude")?;
        for ((v, t), m) in self.magnitudes.indexed_iter() {
            writeln!(out, "{},{},{:e}", self.time_axis[t], self.velocity_axis[v], m)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub range_bin: usize,
    #[serde(default)]
    pub rx: usize,
    pub window_len: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: Window,
}

/// STFT over slow time of the range-FFT output at `stft.range_bin`.
pub fn micro_doppler(cube: &RadarCube, cfg: &ChirpConfig, stft: &StftConfig) -> Result<Spectrogram> {
    let (nr, nc, ns) = cube.dims();
    if stft.window_len == 0 || stft.window_len > nc {
        return Err(Error::config(format!(
            "STFT window {} must be within 1..={nc} chirps",
            stft.window_len
        )));
    }
    if stft.hop == 0 {
        return Err(Error::config("STFT hop must be at least 1"));
    }
    if stft.range_bin >= ns || stft.rx >= nr {
        return Err(Error::config("range bin or rx index out of range"));
    }
    let profiles = range_fft(cube, Window::Hann)?;
    let slow: Vec<Complex64> = (0..nc).map(|c| profiles[[stft.rx, c, stft.range_bin]]).collect();
    let w = stft.window.coefficients(stft.window_len);
    let n = stft.window_len;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let starts: Vec<usize> = (0..=nc - n).step_by(stft.hop).collect();
    let mut magnitudes = Array2::zeros((n, starts.len()));
    let half = n / 2;
    for (f, &s) in starts.iter().enumerate() {
        let mut buf: Vec<Complex64> = slow[s..s + n].iter().zip(&w).map(|(x, wi)| x * wi).collect();
        fft.process(&mut buf);
        for k in 0..n {
            magnitudes[[(k + half) % n, f]] = buf[k].norm();
        }
    }
    let dv = cfg.wavelength() / (2.0 * n as f64 * cfg.t_total());
    Ok(Spectrogram {
        magnitudes,
        velocity_axis: (0..n).map(|k| (k as f64 - half as f64) * dv).collect(),
        time_axis: starts
            .iter()
            .map(|&s| (s as f64 + (n as f64 - 1.0) / 2.0) * cfg.t_total())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: usize,
    /// `(frame, centroid index within that frame, position)`.
    pub points: Vec<(usize, usize, [f64; 2])>,
}

/// Greedy nearest-neighbor association. Tracks updated in the previous frame
/// may take the closest centroid within `gate_m` (closest pairs first, ties
/// by track id then centroid index); leftovers start new tracks.
pub fn associate_detections(frames: &[Vec<[f64; 2]>], gate_m: f64) -> Result<Vec<Track>> {
    if !(gate_m > 0.0) {
        return Err(Error::config("gate must be positive"));
    }
    let mut tracks: Vec<Track> = Vec::new();
    for (f, centroids) in frames.iter().enumerate() {
        let active: Vec<usize> = tracks
            .iter()
            .enumerate()
            .filter(|(_, t)| f > 0 && t.points.last().is_some_and(|p| p.0 == f - 1))
            .map(|(i, _)| i)
            .collect();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for &t in &active {
            let last = tracks[t].points.last().unwrap().2;
            for (c, &p) in centroids.iter().enumerate() {
                let d = dist2(last, p).sqrt();
                if d <= gate_m {
                    pairs.push((d, t, c));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_track = vec![false; tracks.len()];
        let mut used_centroid = vec![false; centroids.len()];
        for (_, t, c) in pairs {
            if !used_track[t] && !used_centroid[c] {
                used_track[t] = true;
                used_centroid[c] = true;
                tracks[t].points.push((f, c, centroids[c]));
            }
        }
        for (c, &p) in centroids.iter().enumerate() {
            if !used_centroid[c] {
                let id = tracks.len();
                tracks.push(Track {
                    id,
                    points: vec![(f, c, p)],
                });
            }
        }
    }
    Ok(tracks)
}

/// Header `FMCW1 n_rx n_chirps n_samples fs slope f_start`, then
/// little-endian f32 (re, im) pairs in `[rx, chirp, sample]` order.
pub fn write_cube<W: Write>(cube: &RadarCube, cfg: &ChirpConfig, mut out: W) -> Result<()> {
    let (nr, nc, ns) = cube.dims();
    writeln!(
        out,
        "FMCW1 {nr} {nc} {ns} {} {} {}",
        cfg.fs_adc_hz, cfg.slope_hz_per_s, cfg.f_start_hz
    )?;
    let mut bytes = Vec::with_capacity(cube.samples.len() * 8);
    for v in cube.samples.iter() {
        let c = Complex32::new(v.re as f32, v.im as f32);
        bytes.extend_from_slice(&c.re.to_le_bytes());
        bytes.extend_from_slice(&c.im.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Cube header fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeHeader {
    pub n_rx: usize,
    pub n_chirps: usize,
    pub n_samples: usize,
    pub fs_adc_hz: f64,
    pub slope_hz_per_s: f64,
    pub f_start_hz: f64,
}

pub fn read_cube<R: BufRead>(mut input: R) -> Result<(CubeHeader, RadarCube)> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 7 || fields[0] != "FMCW1" {
        return Err(Error::Parse(format!("bad cube header: {:?}", line.trim_end())));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s}: {e}")));
    let float = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
    let header = CubeHeader {
        n_rx: int(fields[1])?,
        n_chirps: int(fields[2])?,
        n_samples: int(fields[3])?,
        fs_adc_hz: float(fields[4])?,
        slope_hz_per_s: float(fields[5])?,
        f_start_hz: float(fields[6])?,
    };
    let n = header.n_rx * header.n_chirps * header.n_samples;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(Error::Parse(format!(
            "expected {} payload bytes, found {}",
            n * 8,
            bytes.len()
        )));
    }
    let values: Vec<Complex64> = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let samples = Array3::from_shape_vec((header.n_rx, header.n_chirps, header.n_samples), values)
        .map_err(|e| Error::Parse(e.to_string()))?;
    Ok((header, RadarCube { samples }))
}

/// One row of the detection CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedDetection {
    pub frame: usize,
    pub detection: RadarDetection,
    pub cluster_id: Option<usize>,
    pub track_id: Option<usize>,
}

pub fn write_detections_csv<W: Write>(rows: &[TrackedDetection], mut out: W) -> Result<()> {
    writeln!(out, "frame,range_m,velocity_mps,azimuth_deg,cluster_id,track_id")?;
    let opt = |v: Option<usize>| v.map_or_else(|| "-1".to_string(), |x| x.to_string());
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.frame,
            r.detection.range_m,
            r.detection.velocity_mps,
            r.detection.azimuth_deg,
            opt(r.cluster_id),
            opt(r.track_id)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn cfg() -> ChirpConfig {
        ChirpConfig::default()
    }

    /// Textbook DBSCAN over an O(n²) neighbor scan.
    fn brute_dbscan(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
        let n = points.len();
        let nb: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| {
                        let dx = points[i][0] - points[j][0];
                        let dy = points[i][1] - points[j][1];
                        (dx * dx + dy * dy).sqrt() <= eps
                    })
                    .collect()
            })
            .collect();
        let core: Vec<bool> = nb.iter().map(|v| v.len() >= min_pts).collect();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for i in 0..n {
            if !core[i] || label[i] != usize::MAX {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([i]);
            label[i] = next;
            while let Some(p) = queue.pop_front() {
                for &q in &nb[p] {
                    if core[q] && label[q] == usize::MAX {
                        label[q] = next;
                        queue.push_back(q);
                    }
                }
            }
            next += 1;
        }
        for i in 0..n {
            if core[i] {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for &j in &nb[i] {
                if core[j] {
                    let d = (points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1]);
                    if best.is_none_or(|(bd, bj)| d < bd || (d == bd && j < bj)) {
                        best = Some((d, j));
                    }
                }
            }
            if let Some((_, j)) = best {
                label[i] = label[j];
            }
        }
        let mut groups = vec![Vec::new(); next];
        for (i, &l) in label.iter().enumerate() {
            if l != usize::MAX {
                groups[l].push(i);
            }
        }
        groups.sort();
        groups
    }

    fn random_points(seed: u64, n: usize) -> Vec<[f64; 2]> {
        let mut rng = rng_from_seed(seed);
        let centres: Vec<[f64; 2]> = (0..4).map(|_| [rng.random::<f64>() * 20.0, rng.random::<f64>() * 20.0]).collect();
        (0..n)
            .map(|i| {
                if i % 5 == 0 {
                    [rng.random::<f64>() * 20.0, rng.random::<f64>() * 20.0]
                } else {
                    let c = centres[i % 4];
                    [
                        c[0] + rng.sample::<f64, _>(StandardNormal),
                        c[1] + rng.sample::<f64, _>(StandardNormal),
                    ]
                }
            })
            .collect()
    }

    #[test]
    fn if_frequency_of_five_metres() {
        let c = ChirpConfig {
            slope_hz_per_s: 3e13,
            ..cfg()
        };
        let fb = 2.0 * c.slope_hz_per_s * 5.0 / SPEED_OF_LIGHT;
        assert!((fb - 1e6).abs() / 1e6 < 1e-3);
        let cube = synthesize_cube(&[RadarTarget::new(5.0, 0.0, 0.0)], &c, 0.0, 0).unwrap();
        let prof = range_fft(&cube, Window::Hann).unwrap();
        let lane: Vec<f64> = (0..c.n_samples).map(|b| prof[[0, 0, b]].norm()).collect();
        let peak = lane.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, (1e6f64 / (10e6 / 256.0)).round() as usize);
        assert!((c.range_of_bin(peak as f64) - 5.0).abs() <= c.range_bin_width());
        assert!((c.range_bin_width() - 0.195).abs() < 1e-3);
    }

    #[test]
    fn static_and_boresight_phases() {
        let c = cfg();
        let cube = synthesize_cube(&[RadarTarget::new(7.0, 0.0, 0.0)], &c, 0.0, 0).unwrap();
        let prof = range_fft(&cube, Window::Hann).unwrap();
        let b = (7.0 / c.range_bin_width()).round() as usize;
        let ref_v = prof[[0, 0, b]];
        for ch in 0..c.n_chirps {
            for rx in 0..c.n_rx() {
                assert!((prof[[rx, ch, b]] - ref_v).norm() < 1e-9 * ref_v.norm());
            }
        }
    }

    #[test]
    fn two_ranges_two_peaks_and_zero_input() {
        let c = cfg();
        let w = c.range_bin_width();
        let cube = synthesize_cube(
            &[RadarTarget::new(20.0 * w, 0.0, 0.0), RadarTarget::new(23.0 * w, 0.0, 0.0)],
            &c,
            0.0,
            0,
        )
        .unwrap();
        let prof = range_fft(&cube, Window::Hann).unwrap();
        let lane: Vec<f64> = (0..c.n_samples).map(|b| prof[[0, 0, b]].norm()).collect();
        let peaks: Vec<usize> = (1..c.n_samples - 1)
            .filter(|&i| lane[i] > lane[i - 1] && lane[i] > lane[i + 1] && lane[i] > 0.1 * lane[20])
            .collect();
        assert_eq!(peaks, vec![20, 23]);

        let zero = RadarCube {
            samples: Array3::zeros((2, 4, 8)),
        };
        assert!(range_fft(&zero, Window::Hann).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn windowed_fft_preserves_energy() {
        let c = ChirpConfig {
            n_chirps: 4,
            ..cfg()
        };
        let cube = synthesize_cube(&[RadarTarget::new(3.3, 1.0, 10.0)], &c, 0.5, 9).unwrap();
        let prof = range_fft(&cube, Window::Hann).unwrap();
        let w = Window::Hann.coefficients(c.n_samples);
        let time: f64 = cube
            .samples
            .lanes(Axis(2))
            .into_iter()
            .map(|l| l.iter().zip(&w).map(|(x, wi)| (x * wi).norm_sqr()).sum::<f64>())
            .sum();
        let freq: f64 = prof.iter().map(|v| v.norm_sqr()).sum();
        assert!((freq / c.n_samples as f64 - time).abs() < 1e-9 * time);
    }

    #[test]
    fn doppler_examples() {
        let c = cfg();
        let r = 40.0 * c.range_bin_width();
        let cube = synthesize_cube(&[RadarTarget::new(r, 0.0, 0.0)], &c, 0.0, 0).unwrap();
        let rd = doppler_fft(&range_fft(&cube, Window::Hann).unwrap(), Window::Rect).unwrap();
        let col: Vec<f64> = (0..c.n_chirps).map(|k| rd[[0, k, 40]].norm_sqr()).collect();
        let total: f64 = col.iter().sum();
        assert!(col[c.n_chirps / 2] > 0.99 * total);

        let vb = c.velocity_bin_width();
        let cube = synthesize_cube(
            &[RadarTarget::new(r, 10.0 * vb, 0.0), RadarTarget::new(r, -17.0 * vb, 0.0)],
            &c,
            0.0,
            0,
        )
        .unwrap();
        let rd = doppler_fft(&range_fft(&cube, Window::Hann).unwrap(), Window::Rect).unwrap();
        let mag = range_doppler_magnitude(&rd);
        let peaks = local_maxima(&mag, 6.0);
        let mut rows: Vec<usize> = peaks.iter().map(|p| p.0).collect();
        rows.sort();
        assert_eq!(rows, vec![c.n_chirps / 2 - 17, c.n_chirps / 2 + 10]);
        assert!(peaks.iter().all(|p| p.1 == 40));

        let plus = synthesize_cube(&[RadarTarget::new(r, 6.3 * vb, 0.0)], &c, 0.0, 0).unwrap();
        let minus = synthesize_cube(&[RadarTarget::new(r, -6.3 * vb, 0.0)], &c, 0.0, 0).unwrap();
        let mp = range_doppler_magnitude(&doppler_fft(&range_fft(&plus, Window::Hann).unwrap(), Window::Rect).unwrap());
        let mm = range_doppler_magnitude(&doppler_fft(&range_fft(&minus, Window::Hann).unwrap(), Window::Rect).unwrap());
        let h = c.n_chirps / 2;
        for k in 1..h {
            assert!((mp[[h + k, 40]] - mm[[h - k, 40]]).abs() < 1e-6 * mp[[h + 6, 40]]);
        }
    }

    #[test]
    fn angle_examples() {
        let c = cfg();
        let r = 30.0 * c.range_bin_width();
        let cube = synthesize_cube(&[RadarTarget::new(r, 0.0, 0.0)], &c, 0.0, 0).unwrap();
        let dets = process_frame(&cube, &c, &ChainConfig::default()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].angle_bin, 0);

        let ramp: Vec<Complex64> = (0..4).map(|m| Complex64::from_polar(1.0, PI / 2.0 * m as f64)).collect();
        let az = angle_fft(&ramp, 64, 0.5, 0.9).unwrap();
        let bin = 2.0 / 64.0;
        assert!((az[0].to_radians().sin() - 0.5).abs() <= bin, "{az:?}");
        assert!((az[0] - 30.0).abs() < 2.0);

        let two: Vec<Complex64> = (0..4)
            .map(|m| {
                let d = 0.5 * m as f64;
                Complex64::from_polar(1.0, 2.0 * PI * d * 20f64.to_radians().sin())
                    + Complex64::from_polar(1.0, -2.0 * PI * d * 20f64.to_radians().sin())
            })
            .collect();
        let mut az = angle_fft(&two, 64, 0.5, 0.5).unwrap();
        az.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(az.len(), 2);
        assert!((az[0] + 20.0).abs() < 4.0 && (az[1] - 20.0).abs() < 4.0);

        assert!(matches!(angle_spectrum(&ramp[..1], 64), Err(Error::Unsupported(_))));
    }

    #[test]
    fn out_of_bounds_targets_rejected() {
        let c = cfg();
        let e = synthesize_cube(&[RadarTarget::new(c.max_range() + 1.0, 0.0, 0.0)], &c, 0.0, 0).unwrap_err();
        assert!(e.to_string().contains("unambiguous range"));
        let e = synthesize_cube(&[RadarTarget::new(5.0, c.max_velocity() * 1.1, 0.0)], &c, 0.0, 0).unwrap_err();
        assert!(e.to_string().contains("unambiguous speed"));
        let bad = ChirpConfig {
            n_samples: 1000,
            ..cfg()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let c = ChirpConfig {
            n_chirps: 8,
            ..cfg()
        };
        let t = [RadarTarget::new(9.0, 2.0, -15.0)];
        let a = synthesize_cube(&t, &c, 0.1, 4).unwrap();
        let b = synthesize_cube(&t, &c, 0.1, 4).unwrap();
        let d = synthesize_cube(&t, &c, 0.1, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }

    #[test]
    fn dbscan_examples() {
        let pts = [
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.1],
            [100.0, 0.0],
            [100.1, 0.0],
            [100.0, 0.1],
        ];
        let cs = dbscan(&pts, 1.0, 3).unwrap();
        assert_eq!(cs.clusters, vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert!(cs.noise.is_empty());
        let lone = dbscan(&[[5.0, 5.0]], 1.0, 2).unwrap();
        assert_eq!(lone.noise, vec![0]);
        assert!(dbscan(&pts, 0.0, 3).is_err());
        assert!(dbscan(&pts, 1.0, 0).is_err());
    }

    #[test]
    fn dbscan_matches_brute_force() {
        for seed in 0..50 {
            let pts = random_points(seed, 50);
            let fast = dbscan(&pts, 1.0, 4).unwrap();
            assert_eq!(fast.partition(), brute_dbscan(&pts, 1.0, 4), "seed {seed}");
            let total: usize = fast.clusters.iter().map(Vec::len).sum::<usize>() + fast.noise.len();
            assert_eq!(total, pts.len());
        }
    }

    #[test]
    fn dbscan_partition_is_order_invariant() {
        let pts = random_points(77, 120);
        let base = dbscan(&pts, 1.2, 5).unwrap();
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        perm.shuffle(&mut rng_from_seed(1));
        let shuffled: Vec<[f64; 2]> = perm.iter().map(|&i| pts[i]).collect();
        let other = dbscan(&shuffled, 1.2, 5).unwrap();
        let mapped: Vec<Vec<usize>> = other
            .clusters
            .iter()
            .map(|c| {
                let mut v: Vec<usize> = c.iter().map(|&i| perm[i]).collect();
                v.sort();
                v
            })
            .collect();
        let mut mapped = mapped;
        mapped.sort();
        assert_eq!(mapped, base.partition());
    }

    #[test]
    fn micro_doppler_constant_velocity_ridge() {
        let c = cfg();
        let vb = c.velocity_bin_width();
        let v = 8.0 * vb;
        let r = 25.0 * c.range_bin_width();
        let cube = synthesize_cube(&[RadarTarget::new(r, v, 0.0)], &c, 0.0, 0).unwrap();
        let stft = StftConfig {
            range_bin: 25,
            rx: 0,
            window_len: 32,
            hop: 8,
            window: Window::Hann,
        };
        let sg = micro_doppler(&cube, &c, &stft).unwrap();
        let ridge = sg.ridge();
        let step = sg.velocity_axis[1] - sg.velocity_axis[0];
        assert!(ridge.iter().all(|&x| (x - ridge[0]).abs() < step));
        assert!((ridge[0] - v).abs() <= step);
        let too_long = StftConfig {
            window_len: 129,
            ..stft
        };
        assert!(micro_doppler(&cube, &c, &too_long).is_err());
    }

    #[test]
    fn micro_doppler_tracks_oscillation() {
        let c = ChirpConfig {
            n_chirps: 512,
            ..cfg()
        };
        let period = 512.0 * c.t_total() / 2.0;
        let target = RadarTarget {
            micro_motion: Some(Oscillation {
                amplitude_mps: 8.0,
                frequency_hz: 1.0 / period,
            }),
            ..RadarTarget::new(25.0 * c.range_bin_width(), 0.0, 0.0)
        };
        let cube = synthesize_cube(&[target], &c, 0.0, 0).unwrap();
        let stft = StftConfig {
            range_bin: 25,
            rx: 0,
            window_len: 16,
            hop: 4,
            window: Window::Hann,
        };
        let sg = micro_doppler(&cube, &c, &stft).unwrap();
        let step = sg.velocity_axis[1] - sg.velocity_axis[0];
        for (t, v) in sg.time_axis.iter().zip(sg.ridge()) {
            let truth = 8.0 * (2.0 * PI * t / period).sin();
            assert!((v - truth).abs() <= 1.5 * step, "t={t} v={v} truth={truth}");
        }

        let silent = micro_doppler(
            &RadarCube {
                samples: Array3::zeros((4, 512, 256)),
            },
            &c,
            &StftConfig { range_bin: 100, ..stft },
        )
        .unwrap();
        assert!(silent.magnitudes.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn association_examples() {
        let frames: Vec<Vec<[f64; 2]>> = (0..10).map(|f| vec![[0.5 * f as f64, 0.0]]).collect();
        let tracks = associate_detections(&frames, 2.0).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].points.len(), 10);

        let jump = vec![vec![[0.0, 0.0]], vec![[0.5, 0.0]], vec![[10.0, 0.0]]];
        let tracks = associate_detections(&jump, 2.0).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].points.len(), 2);
        assert_eq!(tracks[1].points[0].0, 2);

        let parallel: Vec<Vec<[f64; 2]>> = (0..8)
            .map(|f| {
                let x = f as f64;
                if f % 2 == 0 {
                    vec![[x, 0.0], [x, 5.0]]
                } else {
                    vec![[x, 5.0], [x, 0.0]]
                }
            })
            .collect();
        let tracks = associate_detections(&parallel, 2.0).unwrap();
        assert_eq!(tracks.len(), 2);
        for t in &tracks {
            let y0 = t.points[0].2[1];
            assert!(t.points.iter().all(|p| p.2[1] == y0));
        }
        assert!(associate_detections(&parallel, 0.0).is_err());
    }

    #[test]
    fn cube_file_round_trip() {
        let c = ChirpConfig {
            n_chirps: 4,
            n_samples: 16,
            ..cfg()
        };
        let cube = synthesize_cube(&[RadarTarget::new(1.0, 0.5, 5.0)], &c, 0.01, 2).unwrap();
        let mut buf = Vec::new();
        write_cube(&cube, &c, &mut buf).unwrap();
        assert!(buf.starts_with(b"FMCW1 4 4 16 "));
        let (h, back) = read_cube(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!((h.n_rx, h.n_chirps, h.n_samples), (4, 4, 16));
        assert_eq!(h.slope_hz_per_s, c.slope_hz_per_s);
        for (a, b) in cube.samples.iter().zip(back.samples.iter()) {
            assert!((a - b).norm() < 1e-6 * (1.0 + a.norm()));
        }
        buf.pop();
        assert!(matches!(read_cube(std::io::Cursor::new(&buf)), Err(Error::Parse(_))));
    }
}
