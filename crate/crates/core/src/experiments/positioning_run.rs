//! Monte Carlo positioning: generate → channel → estimate → position → score.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::manifest::{OutputSink, RunManifest};
use super::stats::{mean, rms, std_dev};
use super::{ChannelSection, Method, ScenarioConfig, ScenarioKind, UeRegion};
use crate::antenna::{
    ArrayGeometry, ElementKind, ElementResponse, PolarizationState, SteeringModel, TabulatedPattern, WaveDirection,
};
use crate::channel::{add_awgn, snr_to_noise_variance, synthesize_signal, ChannelConfig, PathParams, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::estimators::{
    music_estimate, pilot_decimate, sage_estimate, stacked_snapshots, strip_pilots, subspace_from_snapshots, Estimate,
    SageConfig, SearchGrid, SearchStrategy,
};
use crate::positioning::{
    back_solve, euclidean_error, fix_from_estimate, multi_station_average, range_from_delay, single_station_fix,
    LinkDirection, PositionFix, RmseReport, StationPose,
};
use crate::rng::{rng_from_seed, stream_seed, trial_seed, SimRng};
use crate::waveforms::{GridDims, ResourceGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub truth: [f64; 3],
    pub estimate: [f64; 3],
    pub error_m: f64,
    /// Great-circle error of the measured direction (first station).
    pub angle_error_deg: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// All trials of one estimator at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRun {
    /// `music`/`sage`; multi-station runs add `<method>-station0` for the
    /// first station alone.
    pub label: String,
    pub records: Vec<TrialRecord>,
}

impl EstimatorRun {
    pub fn errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error_m).collect()
    }

    pub fn angle_errors(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.angle_error_deg).collect()
    }

    pub fn mean_error(&self) -> f64 {
        mean(&self.errors())
    }

    pub fn aoa_rmse(&self) -> f64 {
        rms(&self.angle_errors())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub runs: Vec<EstimatorRun>,
}

impl SweepPoint {
    pub fn run(&self, label: &str) -> Option<&EstimatorRun> {
        self.runs.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositioningOutcome {
    pub points: Vec<SweepPoint>,
}

struct Plan {
    grid: ResourceGrid,
    positions: Vec<usize>,
    model: SteeringModel,
    search: SearchGrid,
    strategy: SearchStrategy,
    aoa_only: bool,
    link: LinkDirection,
    stations: Vec<StationPose>,
    channel: ChannelSection,
    carrier_hz: f64,
    methods: Vec<Method>,
    sage: SageConfig,
}

fn build_model(cfg: &ScenarioConfig) -> Result<SteeringModel> {
    let a = cfg.antenna.clone().unwrap_or_default();
    let geometry = ArrayGeometry::rectangular(a.rows, a.cols, a.spacing_wl, ElementKind::IdealVa6Port)?;
    let response = match &a.pattern_csv {
        Some(p) => ElementResponse::Tabulated(TabulatedPattern::from_csv(BufReader::new(File::open(p)?))?),
        None => ElementResponse::Ideal(a.variant),
    };
    Ok(SteeringModel::with_response(geometry, response))
}

impl Plan {
    fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let (signal, grid, channel, search) = match (&cfg.signal, &cfg.grid, &cfg.channel, &cfg.search) {
            (Some(s), Some(g), Some(c), Some(q)) => (s, g, c, q),
            _ => return Err(Error::validation("kind", "positioning sections missing")),
        };
        let rg = signal.build_grid(GridDims {
            n_subcarriers: grid.n_subcarriers,
            n_symbols: grid.n_symbols,
            scs_hz: grid.scs_hz,
        })?;
        let model = build_model(cfg)?;
        // Angle-only snapshots are port vectors, so only the tone count is capped.
        let ports = if search.aoa_only { 1 } else { model.n_ports() };
        let positions = pilot_decimate(rg.occupied_subcarriers().len(), ports, search.max_joint_dim)?;
        let est = cfg.estimators.clone().unwrap_or_default();
        let mut sage = est.sage;
        sage.strategy = search.strategy;
        Ok(Self {
            grid: rg,
            positions,
            model,
            search: search.grid(),
            strategy: search.strategy,
            aoa_only: search.aoa_only,
            link: match cfg.kind {
                ScenarioKind::PositioningDl => LinkDirection::Downlink,
                _ => LinkDirection::Uplink,
            },
            stations: cfg.positioning_stations(),
            channel: *channel,
            carrier_hz: grid.carrier_hz,
            methods: est.methods,
            sage,
        })
    }

    fn labels(&self) -> Vec<String> {
        let mut v: Vec<String> = self.methods.iter().map(|m| m.label().to_string()).collect();
        if self.stations.len() > 1 {
            v.extend(self.methods.iter().map(|m| format!("{}-station0", m.label())));
        }
        v
    }

    fn measured(&self, dir: WaveDirection) -> WaveDirection {
        match self.link {
            LinkDirection::Uplink => dir,
            LinkDirection::Downlink => dir.reversed(),
        }
    }

    /// True user position and, for on-grid draws, the exact (range, measured
    /// direction) seen by the first station.
    fn draw_user(&self, rng: &mut SimRng) -> Result<([f64; 3], Option<(f64, WaveDirection)>)> {
        let uniform = |rng: &mut SimRng, [a, b]: [f64; 2]| a + (b - a) * rng.random::<f64>();
        let bs = &self.stations[0];
        match self.channel.ue_region {
            UeRegion::Spherical {
                range_m,
                azimuth_deg,
                elevation_deg,
            } => {
                let r = uniform(rng, range_m);
                let az = uniform(rng, azimuth_deg);
                let el = uniform(rng, elevation_deg);
                let dir = WaveDirection::new(az, el)?;
                if !self.channel.on_grid {
                    return Ok((single_station_fix(bs, r, &dir)?.position, None));
                }
                let m = self.measured(dir);
                let s = &self.search;
                let az_g = s.azimuth.value(s.azimuth.nearest(m.azimuth_deg));
                let el_g = s.elevation.value(s.elevation.nearest(m.elevation_deg));
                let r_g = if self.aoa_only {
                    r
                } else {
                    range_from_delay(s.delay.value(s.delay.nearest(r / SPEED_OF_LIGHT)))
                };
                let m_g = WaveDirection::new(az_g, el_g)?;
                let truth = single_station_fix(bs, r_g, &self.measured(m_g))?.position;
                Ok((truth, Some((r_g, m_g))))
            }
            UeRegion::Box { min, max } => {
                let p = [
                    uniform(rng, [min[0], max[0]]),
                    uniform(rng, [min[1], max[1]]),
                    uniform(rng, [min[2], max[2]]),
                ];
                Ok((p, None))
            }
        }
    }

    /// Pilot-free stacked snapshots and the frequencies they span.
    fn observe(
        &self,
        range_m: f64,
        measured: WaveDirection,
        phase: f64,
        snr_db: f64,
        noise_seed: u64,
    ) -> Result<(DMatrix<Complex64>, Vec<f64>)> {
        let path = PathParams {
            delay_s: range_m / SPEED_OF_LIGHT,
            doppler_mps: 0.0,
            direction: measured,
            pol: self.channel.pol,
            gain: Complex64::from_polar(1.0, phase),
        };
        let cfg = ChannelConfig {
            paths: vec![path],
            noise_variance: 0.0,
            carrier_hz: self.carrier_hz,
            rng_seed: noise_seed,
        };
        let mut snaps = synthesize_signal(&self.grid, &cfg, &self.model, Some(&self.positions))?;
        let nv = match self.channel.noise_variance {
            Some(v) => v,
            None => snr_to_noise_variance(snr_db, snaps.mean_power())?,
        };
        add_awgn(&mut snaps, nv, &mut rng_from_seed(noise_seed));
        let clean = strip_pilots(&snaps, &self.grid)?;
        if self.aoa_only {
            let (m, k, s) = clean.data.dim();
            let y = DMatrix::from_fn(m, k * s, |row, col| clean.data[[row, col / s, col % s]]);
            return Ok((y, vec![0.0]));
        }
        let all: Vec<usize> = (0..clean.n_subcarriers()).collect();
        Ok((stacked_snapshots(&clean, &all)?, clean.frequencies()))
    }

    fn estimate(&self, method: Method, y: &DMatrix<Complex64>, freqs: &[f64]) -> Result<(Estimate, bool)> {
        let pol: &PolarizationState = &self.channel.pol;
        match method {
            Method::Music => {
                let sub = subspace_from_snapshots(y, 1)?;
                let e = music_estimate(&sub, &self.search, &self.model, pol, freqs, self.strategy)?;
                Ok((e, true))
            }
            Method::Sage => {
                let s = sage_estimate(y, &self.search, &self.model, pol, freqs, &self.sage)?;
                Ok((s.estimate, s.converged))
            }
        }
    }

    fn fix(&self, bs: &StationPose, est: &Estimate, true_range: f64) -> Result<PositionFix> {
        if self.aoa_only {
            let m = WaveDirection::new(est.azimuth_deg, est.elevation_deg)?;
            return single_station_fix(bs, true_range, &self.measured(m));
        }
        fix_from_estimate(bs, est, self.link)
    }

    /// One record per label, in [`Plan::labels`] order.
    fn trial(&self, seed: u64, trial: usize, snr_db: f64) -> Result<Vec<TrialRecord>> {
        let ts = trial_seed(seed, trial as u64);
        let mut rng = rng_from_seed(stream_seed(ts, 0));
        let (truth, snapped) = self.draw_user(&mut rng)?;
        let nm = self.methods.len();
        // [station][method] -> (fix, angle error, estimate, converged)
        let mut per_station = Vec::with_capacity(self.stations.len());
        for (b, bs) in self.stations.iter().enumerate() {
            let phase = if self.channel.random_phase {
                2.0 * PI * rng.random::<f64>()
            } else {
                0.0
            };
            let (range, measured) = match snapped {
                Some(v) if b == 0 => v,
                _ => {
                    let (r, d) = back_solve(bs, truth);
                    (r, self.measured(d))
                }
            };
            let (y, freqs) = self.observe(range, measured, phase, snr_db, stream_seed(ts, 1 + b as u64))?;
            let mut row = Vec::with_capacity(nm);
            for &m in &self.methods {
                let (est, converged) = self.estimate(m, &y, &freqs)?;
                let found = WaveDirection::new(est.azimuth_deg, est.elevation_deg)?;
                row.push((self.fix(bs, &est, range)?, measured.angle_to(&found), est, converged));
            }
            per_station.push(row);
        }
        let record = |pos: [f64; 3], i: usize| TrialRecord {
            trial,
            truth,
            estimate: pos,
            error_m: euclidean_error(pos, truth),
            angle_error_deg: per_station[0][i].1,
            iterations: per_station[0][i].2.iterations,
            converged: per_station[0][i].3,
        };
        let mut out = Vec::with_capacity(self.labels().len());
        if self.stations.len() == 1 {
            for i in 0..nm {
                out.push(record(per_station[0][i].0.position, i));
            }
        } else {
            for i in 0..nm {
                let fixes: Vec<PositionFix> = per_station.iter().map(|row| row[i].0.clone()).collect();
                out.push(record(multi_station_average(&fixes)?, i));
            }
            for i in 0..nm {
                out.push(record(per_station[0][i].0.position, i));
            }
        }
        Ok(out)
    }
}

/// Runs every trial at every sweep point. Trials share their seeds across
/// sweep points and estimators.
pub fn simulate_positioning(cfg: &ScenarioConfig) -> Result<PositioningOutcome> {
    cfg.validate()?;
    if !cfg.kind.is_positioning() {
        return Err(Error::validation("kind", "not a positioning scenario"));
    }
    let plan = Plan::new(cfg)?;
    let labels = plan.labels();
    let mut points = Vec::new();
    for snr in cfg.snr_points() {
        let trials: Vec<Vec<TrialRecord>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| plan.trial(cfg.seed, t, snr))
            .collect::<Result<_>>()?;
        let runs = labels
            .iter()
            .enumerate()
            .map(|(i, label)| EstimatorRun {
                label: label.clone(),
                records: trials.iter().map(|t| t[i].clone()).collect(),
            })
            .collect();
        log::info!("snr {snr} dB: {} trials done", cfg.trials);
        points.push(SweepPoint { snr_db: snr, runs });
    }
    Ok(PositioningOutcome { points })
}

pub(super) fn write_outputs(cfg: &ScenarioConfig, sink: &mut OutputSink) -> Result<()> {
    let outcome = simulate_positioning(cfg)?;
    let bins = cfg.output.histogram_bins;
    sink.write_with("summary.csv", |out| {
        writeln!(out, "snr_db,estimator,trials,mean_error_m,std_error_m,aoa_rmse_deg,unconverged")?;
        for p in &outcome.points {
            for r in &p.runs {
                let e = r.errors();
                let unconverged = r.records.iter().filter(|x| !x.converged).count();
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    p.snr_db,
                    r.label,
                    e.len(),
                    mean(&e),
                    std_dev(&e),
                    r.aoa_rmse(),
                    unconverged
                )?;
            }
        }
        Ok(())
    })?;
    if cfg.output.write_trials {
        sink.write_with("trials.csv", |out| {
            writeln!(
                out,
                "snr_db,estimator,trial,true_x,true_y,true_z,est_x,est_y,est_z,err_m,angle_err_deg,iterations,converged"
            )?;
            for p in &outcome.points {
                for r in &p.runs {
                    for t in &r.records {
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                            p.snr_db,
                            r.label,
                            t.trial,
                            t.truth[0],
                            t.truth[1],
                            t.truth[2],
                            t.estimate[0],
                            t.estimate[1],
                            t.estimate[2],
                            t.error_m,
                            t.angle_error_deg,
                            t.iterations,
                            t.converged
                        )?;
                    }
                }
            }
            Ok(())
        })?;
    }
    for p in &outcome.points {
        for r in &p.runs {
            let report = RmseReport::from_errors(r.errors(), bins)?;
            let tag = format!("{}_snr{}", r.label, p.snr_db);
            sink.write_with(&format!("report_{tag}.csv"), |out| report.write_csv(out))?;
            sink.write_with(&format!("hist_{tag}.csv"), |out| report.histogram.write_csv(out))?;
        }
    }
    Ok(())
}

/// Runs both estimators on the same snapshots and writes paired errors
/// (`comparison.csv`) plus per-estimator mean and spread
/// (`comparison_summary.csv`).
pub fn compare_estimators(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    if !cfg.kind.is_positioning() {
        return Err(Error::validation("kind", "comparison needs a positioning scenario"));
    }
    let methods = cfg.estimators.clone().unwrap_or_default().methods;
    if !(methods.contains(&Method::Music) && methods.contains(&Method::Sage)) {
        return Err(Error::validation("estimators.methods", "comparison needs both music and sage"));
    }
    let outcome = simulate_positioning(cfg)?;
    let mut sink = OutputSink::create(out_dir)?;
    sink.write("config.toml", super::config_for_output(cfg)?.as_bytes())?;
    let pair = |p: &SweepPoint| -> Result<(Vec<f64>, Vec<f64>)> {
        match (p.run("music"), p.run("sage")) {
            (Some(a), Some(b)) => Ok((a.errors(), b.errors())),
            _ => Err(Error::input("missing estimator run")),
        }
    };
    sink.write_with("comparison.csv", |out| {
        writeln!(out, "snr_db,trial,music_err_m,sage_err_m")?;
        for p in &outcome.points {
            let (a, b) = pair(p)?;
            for (t, (x, y)) in a.iter().zip(&b).enumerate() {
                writeln!(out, "{},{t},{x},{y}", p.snr_db)?;
            }
        }
        Ok(())
    })?;
    sink.write_with("comparison_summary.csv", |out| {
        writeln!(out, "snr_db,estimator,mean_m,std_m")?;
        for p in &outcome.points {
            let (a, b) = pair(p)?;
            writeln!(out, "{},music,{},{}", p.snr_db, mean(&a), std_dev(&a))?;
            writeln!(out, "{},sage,{},{}", p.snr_db, mean(&b), std_dev(&b))?;
        }
        Ok(())
    })?;
    sink.finish(cfg.config_hash()?, cfg.seed)
}
