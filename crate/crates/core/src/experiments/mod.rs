//! Config-driven scenario runner: positioning Monte Carlo sweeps, imaging
//! scenes and FMCW frames, each writing CSV/PGM outputs plus a checksum
//! manifest.
//!
//! A scenario is one TOML file. `kind` selects the pipeline; the remaining
//! top-level tables configure it (see `configs/` for one example per kind).

mod fmcw_run;
mod imaging_run;
mod manifest;
mod positioning_run;
mod stats;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::antenna::{DipoleVariant, PolarizationState};
use crate::error::{Error, Result};
use crate::estimators::{Axis, SageConfig, SearchGrid, SearchStrategy};
use crate::fmcw::{ChainConfig, ChirpConfig, RadarTarget, StftConfig};
use crate::positioning::StationPose;
use crate::render::Scaling;
use crate::sar_imaging::{DetectionConfig, ImagingSetup};
use crate::waveforms::{OfdmTiming, ReferenceSignalConfig};

pub use fmcw_run::{simulate_fmcw, FmcwOutcome};
pub use imaging_run::{simulate_imaging, ImagingOutcome};
pub use manifest::{sha256_hex, ManifestEntry, OutputSink, RunManifest, MANIFEST_NAME};
pub use positioning_run::{
    compare_estimators, simulate_positioning, EstimatorRun, PositioningOutcome, SweepPoint, TrialRecord,
};
pub use stats::{ks_two_sample, mean, rms, snr_offset_at_matched_error, std_dev, KsResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    PositioningUl,
    PositioningDl,
    PositioningMultibs,
    Imaging,
    Fmcw,
}

impl ScenarioKind {
    pub fn is_positioning(self) -> bool {
        matches!(
            self,
            ScenarioKind::PositioningUl | ScenarioKind::PositioningDl | ScenarioKind::PositioningMultibs
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Monte Carlo trials per sweep point (positioning kinds).
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<ReferenceSignalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub antenna: Option<AntennaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<EstimatorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stations: Vec<StationPose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imaging: Option<ImagingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fmcw: Option<FmcwSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_trials() -> usize {
    1000
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub scs_hz: f64,
    pub carrier_hz: f64,
}

/// Where user positions are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UeRegion {
    /// Uniform in range, azimuth and elevation around the first station.
    Spherical {
        range_m: [f64; 2],
        azimuth_deg: [f64; 2],
        elevation_deg: [f64; 2],
    },
    /// Uniform in an axis-aligned box, absolute coordinates.
    Box { min: [f64; 3], max: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// Per-port, per-resource-element SNR of the received pilots.
    #[serde(default)]
    pub snr_db: f64,
    /// Absolute noise variance; overrides `snr_db` and the sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    pub ue_region: UeRegion,
    /// Snap the measured direction and delay to the search grid.
    #[serde(default)]
    pub on_grid: bool,
    #[serde(default)]
    pub pol: PolarizationState,
    /// Unit-modulus path gain with a uniform random phase per trial.
    #[serde(default = "yes")]
    pub random_phase: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaSection {
    #[serde(default = "one")]
    pub rows: usize,
    #[serde(default = "one")]
    pub cols: usize,
    #[serde(default = "half")]
    pub spacing_wl: f64,
    #[serde(default)]
    pub variant: DipoleVariant,
    /// Measured element pattern (CSV) used instead of ideal dipoles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_csv: Option<PathBuf>,
}

impl Default for AntennaSection {
    fn default() -> Self {
        Self {
            rows: 1,
            cols: 1,
            spacing_wl: 0.5,
            variant: DipoleVariant::default(),
            pattern_csv: None,
        }
    }
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub azimuth: Axis,
    pub elevation: Axis,
    /// Required unless `aoa_only`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<Axis>,
    /// Cap on ports × pilot tones of the joint vector.
    #[serde(default = "default_joint_dim")]
    pub max_joint_dim: usize,
    #[serde(default)]
    pub strategy: SearchStrategy,
    /// Angle-only search: every (tone, symbol) is a spatial snapshot and the
    /// range is taken from the truth.
    #[serde(default)]
    pub aoa_only: bool,
}

fn default_joint_dim() -> usize {
    768
}

impl SearchSection {
    pub fn grid(&self) -> SearchGrid {
        SearchGrid {
            azimuth: self.azimuth,
            elevation: self.elevation,
            delay: if self.aoa_only {
                Axis::fixed(0.0)
            } else {
                self.delay.unwrap_or(Axis::fixed(0.0))
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Music,
    Sage,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Music => "music",
            Method::Sage => "sage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub sage: SageConfig,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Music, Method::Sage]
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            sage: SageConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub snr_db: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancySection {
    pub n_slots: usize,
    #[serde(default = "one")]
    pub period: usize,
    #[serde(default)]
    pub start: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererSpec {
    /// Monostatic down-range.
    pub range_m: f64,
    pub velocity_mps: f64,
    #[serde(default = "unit")]
    pub amplitude: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingSection {
    pub setup: ImagingSetup,
    pub occupancy: OccupancySection,
    pub scatterers: Vec<ScattererSpec>,
    #[serde(default = "yes")]
    pub intra_symbol_doppler: bool,
    /// Mirror flagging uses the occupancy period when no spacing is given.
    #[serde(default)]
    pub detection: DetectionConfig,
    /// Full image as CSV; large for big scenes.
    #[serde(default = "yes")]
    pub write_image_csv: bool,
    #[serde(default)]
    pub scaling: Scaling,
    /// Spacing to print next to the measured one in the summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_mirror_spacing_mps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmcwSection {
    #[serde(default)]
    pub chirp: ChirpConfig,
    pub targets: Vec<RadarTarget>,
    #[serde(default = "one")]
    pub frames: usize,
    /// Time between frame starts; targets advance by `v·period` per frame.
    #[serde(default = "default_frame_period")]
    pub frame_period_s: f64,
    /// Per-sample SNR of a unit-gain target; overrides `noise_variance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub noise_variance: f64,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default = "unit")]
    pub dbscan_eps_m: f64,
    #[serde(default = "one")]
    pub dbscan_min_pts: usize,
    #[serde(default = "default_gate")]
    pub gate_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stft: Option<StftConfig>,
    #[serde(default = "yes")]
    pub write_cube: bool,
}

fn default_frame_period() -> f64 {
    0.05
}

fn default_gate() -> f64 {
    2.0
}

impl FmcwSection {
    pub fn noise_variance(&self) -> f64 {
        match self.snr_db {
            Some(s) => 10f64.powf(-s / 10.0),
            None => self.noise_variance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// Per-trial CSV for positioning kinds.
    #[serde(default = "yes")]
    pub write_trials: bool,
}

fn default_bins() -> usize {
    50
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            histogram_bins: default_bins(),
            write_trials: true,
        }
    }
}

fn check(ok: bool, field: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::validation(field, message))
    }
}

/// Re-labels a module error with the config field it came from.
fn at<T>(field: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Validation { .. } => e,
        other => Error::validation(field, other.to_string()),
    })
}

fn require<'a, T>(v: &'a Option<T>, field: &str, kind: ScenarioKind) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::validation(field, format!("required for kind {kind:?}")))
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// SHA-256 of the canonical serialization with `output_dir` removed.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        Ok(sha256_hex(c.to_toml_string()?.as_bytes()))
    }

    pub fn positioning_stations(&self) -> Vec<StationPose> {
        if self.stations.is_empty() {
            vec![StationPose {
                id: "bs0".into(),
                position: [0.0; 3],
            }]
        } else {
            self.stations.clone()
        }
    }

    /// SNR points of the sweep, or the single channel SNR.
    pub fn snr_points(&self) -> Vec<f64> {
        match (&self.sweep, &self.channel) {
            (Some(s), _) => s.snr_db.clone(),
            (None, Some(c)) => vec![c.snr_db],
            (None, None) => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check(self.trials >= 1, "trials", "must be at least 1")?;
        check(self.seed <= i64::MAX as u64, "seed", "must fit in a signed 64-bit integer")?;
        check(self.output.histogram_bins >= 1, "output.histogram_bins", "must be at least 1")?;
        let pos = self.kind.is_positioning();
        let unused = |present: bool, field: &str| check(!present, field, format!("not used by kind {:?}", self.kind));
        unused(!pos && self.signal.is_some(), "signal")?;
        unused(!pos && self.grid.is_some(), "grid")?;
        unused(!pos && self.channel.is_some(), "channel")?;
        unused(!pos && self.antenna.is_some(), "antenna")?;
        unused(!pos && self.search.is_some(), "search")?;
        unused(!pos && self.estimators.is_some(), "estimators")?;
        unused(!pos && self.sweep.is_some(), "sweep")?;
        unused(!pos && !self.stations.is_empty(), "stations")?;
        unused(self.kind != ScenarioKind::Imaging && self.imaging.is_some(), "imaging")?;
        unused(self.kind != ScenarioKind::Fmcw && self.fmcw.is_some(), "fmcw")?;
        match self.kind {
            ScenarioKind::Imaging => self.validate_imaging(),
            ScenarioKind::Fmcw => self.validate_fmcw(),
            _ => self.validate_positioning(),
        }
    }

    fn validate_positioning(&self) -> Result<()> {
        let kind = self.kind;
        let signal = require(&self.signal, "signal", kind)?;
        let grid = require(&self.grid, "grid", kind)?;
        let channel = require(&self.channel, "channel", kind)?;
        let search = require(&self.search, "search", kind)?;
        at("signal", signal.validate())?;
        at("signal.comb", signal.comb.validate())?;
        check(grid.n_subcarriers >= 1, "grid.n_subcarriers", "must be at least 1")?;
        check(grid.scs_hz > 0.0, "grid.scs_hz", "must be positive")?;
        check(grid.carrier_hz > 0.0, "grid.carrier_hz", "must be positive")?;
        let last_symbol = signal.comb.start_symbol + (signal.comb.n_symbols.max(1) - 1) * signal.comb.symbol_period;
        check(
            last_symbol < grid.n_symbols,
            "grid.n_symbols",
            format!("comb reaches symbol {last_symbol}, grid has {}", grid.n_symbols),
        )?;

        check(channel.snr_db.is_finite(), "channel.snr_db", "must be finite")?;
        if let Some(nv) = channel.noise_variance {
            check(nv >= 0.0 && nv.is_finite(), "channel.noise_variance", "must be finite and >= 0")?;
        }
        at("channel.pol", PolarizationState::new(channel.pol.gamma_deg, channel.pol.eta_deg))?;
        if let Some(s) = &self.sweep {
            check(!s.snr_db.is_empty(), "sweep.snr_db", "must list at least one SNR")?;
            check(s.snr_db.iter().all(|v| v.is_finite()), "sweep.snr_db", "must be finite")?;
        }

        let antenna = self.antenna.clone().unwrap_or_default();
        check(antenna.rows >= 1 && antenna.cols >= 1, "antenna.rows", "array needs at least one element")?;
        check(
            antenna.spacing_wl > 0.0 && antenna.spacing_wl.is_finite(),
            "antenna.spacing_wl",
            "must be positive",
        )?;

        at("search", search.grid().validate())?;
        if !search.aoa_only {
            let delay = search
                .delay
                .ok_or_else(|| Error::validation("search.delay", "required unless aoa_only"))?;
            let t_sym = OfdmTiming::normal_cp(grid.scs_hz).t_sym;
            check(delay.max < t_sym, "search.delay.max", format!("must stay below the symbol duration {t_sym} s"))?;
        }
        check(search.max_joint_dim >= 2, "search.max_joint_dim", "must be at least 2")?;
        if let SearchStrategy::CoarseToFine { factor } = search.strategy {
            check(factor >= 1, "search.strategy.factor", "must be at least 1")?;
        }
        let est = self.estimators.clone().unwrap_or_default();
        check(!est.methods.is_empty(), "estimators.methods", "must name at least one estimator")?;
        check(est.sage.max_iter >= 1, "estimators.sage.max_iter", "must be at least 1")?;
        if let Some(xi) = est.sage.xi {
            check(xi > 0.0, "estimators.sage.xi", "must be positive")?;
        }

        match channel.ue_region {
            UeRegion::Spherical {
                range_m,
                azimuth_deg,
                elevation_deg,
            } => {
                check(
                    0.0 < range_m[0] && range_m[0] <= range_m[1],
                    "channel.ue_region.range_m",
                    "needs 0 < min <= max",
                )?;
                check(azimuth_deg[0] <= azimuth_deg[1], "channel.ue_region.azimuth_deg", "needs min <= max")?;
                check(
                    0.0 <= elevation_deg[0] && elevation_deg[0] <= elevation_deg[1] && elevation_deg[1] <= 180.0,
                    "channel.ue_region.elevation_deg",
                    "needs 0 <= min <= max <= 180",
                )?;
            }
            UeRegion::Box { min, max } => {
                check(
                    (0..3).all(|i| min[i] <= max[i]),
                    "channel.ue_region",
                    "box min must not exceed max",
                )?;
            }
        }

        let stations = self.positioning_stations();
        for (i, s) in stations.iter().enumerate() {
            at(&format!("stations[{i}]"), StationPose::new(s.id.clone(), s.position))?;
        }
        match kind {
            ScenarioKind::PositioningMultibs => {
                check(stations.len() >= 2, "stations", "multi-station runs need at least two stations")?;
                check(!channel.on_grid, "channel.on_grid", "not supported with several stations")?;
            }
            _ => check(
                self.stations.len() <= 1,
                "stations",
                "single-station kinds take at most one station",
            )?,
        }
        Ok(())
    }

    fn validate_imaging(&self) -> Result<()> {
        let im = require(&self.imaging, "imaging", self.kind)?;
        let s = &im.setup;
        check(s.n_subcarriers >= 1, "imaging.setup.n_subcarriers", "must be at least 1")?;
        check(s.scs_hz > 0.0, "imaging.setup.scs_hz", "must be positive")?;
        check(s.carrier_hz > 0.0, "imaging.setup.carrier_hz", "must be positive")?;
        check(s.comb_size >= 1, "imaging.setup.comb_size", "must be at least 1")?;
        check(s.comb_offset < s.comb_size, "imaging.setup.comb_offset", "must be below comb_size")?;
        check(s.noise_variance >= 0.0, "imaging.setup.noise_variance", "must be >= 0")?;
        let o = &im.occupancy;
        check(o.n_slots >= 1, "imaging.occupancy.n_slots", "must be at least 1")?;
        check(o.period >= 1, "imaging.occupancy.period", "must be at least 1")?;
        check(o.start < o.n_slots, "imaging.occupancy.start", "must be below n_slots")?;
        check(!im.scatterers.is_empty(), "imaging.scatterers", "needs at least one scatterer")?;
        let t_sym = s.timing().t_sym;
        for (i, sc) in im.scatterers.iter().enumerate() {
            let delay = 2.0 * sc.range_m / crate::channel::SPEED_OF_LIGHT;
            check(
                sc.range_m >= 0.0 && delay < t_sym,
                &format!("imaging.scatterers[{i}].range_m"),
                "round-trip delay must lie within one symbol",
            )?;
            check(
                sc.velocity_mps.is_finite() && sc.amplitude.is_finite() && sc.phase_deg.is_finite(),
                &format!("imaging.scatterers[{i}]"),
                "must be finite",
            )?;
        }
        check(im.detection.k_sigma.is_finite(), "imaging.detection.k_sigma", "must be finite")?;
        Ok(())
    }

    fn validate_fmcw(&self) -> Result<()> {
        let f = require(&self.fmcw, "fmcw", self.kind)?;
        at("fmcw.chirp", f.chirp.validate())?;
        check(f.frames >= 1, "fmcw.frames", "must be at least 1")?;
        check(f.frame_period_s > 0.0, "fmcw.frame_period_s", "must be positive")?;
        check(f.noise_variance() >= 0.0, "fmcw.noise_variance", "must be >= 0")?;
        check(f.chain.n_angle >= f.chirp.n_rx(), "fmcw.chain.n_angle", "must cover the receive channels")?;
        check(f.dbscan_eps_m > 0.0, "fmcw.dbscan_eps_m", "must be positive")?;
        check(f.dbscan_min_pts >= 1, "fmcw.dbscan_min_pts", "must be at least 1")?;
        check(f.gate_m > 0.0, "fmcw.gate_m", "must be positive")?;
        let last = (f.frames - 1) as f64 * f.frame_period_s;
        for (i, t) in f.targets.iter().enumerate() {
            let r = t.range_m + t.velocity_mps * last;
            check(
                (0.0..f.chirp.max_range()).contains(&t.range_m) && (0.0..f.chirp.max_range()).contains(&r),
                &format!("fmcw.targets[{i}].range_m"),
                format!("must stay within [0, {}) m over all frames", f.chirp.max_range()),
            )?;
            at(&format!("fmcw.targets[{i}]"), t.check(&f.chirp))?;
        }
        if let Some(s) = &f.stft {
            check(s.range_bin < f.chirp.n_samples, "fmcw.stft.range_bin", "outside the range profile")?;
            check(s.rx < f.chirp.n_rx(), "fmcw.stft.rx", "no such receive channel")?;
            check(
                s.window_len >= 1 && s.window_len <= f.chirp.n_chirps,
                "fmcw.stft.window_len",
                "must lie in [1, n_chirps]",
            )?;
            check(s.hop >= 1, "fmcw.stft.hop", "must be at least 1")?;
        }
        Ok(())
    }

    /// Output directory: explicit argument, then `output_dir`, then `out/`.
    pub fn resolve_output_dir(&self, explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Validates, runs the configured pipeline and writes every output plus
/// `manifest.txt` into `out_dir`.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    let mut sink = OutputSink::create(out_dir)?;
    sink.write("config.toml", config_for_output(config)?.as_bytes())?;
    match config.kind {
        ScenarioKind::Imaging => imaging_run::write_outputs(config, &mut sink)?,
        ScenarioKind::Fmcw => fmcw_run::write_outputs(config, &mut sink)?,
        _ => positioning_run::write_outputs(config, &mut sink)?,
    }
    sink.finish(config.config_hash()?, config.seed)
}

fn config_for_output(config: &ScenarioConfig) -> Result<String> {
    let mut c = config.clone();
    c.output_dir = None;
    c.to_toml_string()
}
