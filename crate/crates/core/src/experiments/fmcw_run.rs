use std::io::Write;

use ndarray::Array2;

use super::manifest::OutputSink;
use super::{FmcwSection, ScenarioConfig, ScenarioKind};
use crate::error::{Error, Result};
use crate::fmcw::{
    associate_detections, dbscan, doppler_fft, micro_doppler, process_frame, range_doppler_magnitude, range_fft,
    synthesize_cube, write_cube, write_detections_csv, RadarCube, RadarTarget, Spectrogram, Track, TrackedDetection,
};
use crate::render::{render_pgm, Scaling};
use crate::rng::{stream_seed, trial_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct FmcwOutcome {
    /// Detections per frame with their cluster and track.
    pub frames: Vec<Vec<TrackedDetection>>,
    /// Tracks over the cluster centroids of each frame.
    pub tracks: Vec<Track>,
    pub first_cube: RadarCube,
    /// Frame-0 range-Doppler magnitude, `[velocity, range]`.
    pub range_doppler: Array2<f64>,
    pub spectrogram: Option<Spectrogram>,
}

fn section(cfg: &ScenarioConfig) -> Result<&FmcwSection> {
    match (&cfg.fmcw, cfg.kind) {
        (Some(s), ScenarioKind::Fmcw) => Ok(s),
        _ => Err(Error::validation("kind", "not an FMCW scenario")),
    }
}

/// Targets moved to their frame-`f` start range.
fn targets_at(section: &FmcwSection, frame: usize) -> Vec<RadarTarget> {
    let t = frame as f64 * section.frame_period_s;
    section
        .targets
        .iter()
        .map(|x| RadarTarget {
            range_m: x.range_m + x.velocity_mps * t,
            ..*x
        })
        .collect()
}

pub fn simulate_fmcw(cfg: &ScenarioConfig) -> Result<FmcwOutcome> {
    cfg.validate()?;
    let s = section(cfg)?;
    let nv = s.noise_variance();
    let mut frames = Vec::with_capacity(s.frames);
    let mut centroids = Vec::with_capacity(s.frames);
    let mut first = None;
    for f in 0..s.frames {
        let cube = synthesize_cube(
            &targets_at(s, f),
            &s.chirp,
            nv,
            stream_seed(trial_seed(cfg.seed, f as u64), 0),
        )?;
        let dets = process_frame(&cube, &s.chirp, &s.chain)?;
        let points: Vec<[f64; 2]> = dets.iter().map(|d| d.position()).collect();
        let clusters = dbscan(&points, s.dbscan_eps_m, s.dbscan_min_pts)?;
        centroids.push(clusters.centroids(&points));
        frames.push(
            dets.into_iter()
                .zip(&clusters.labels)
                .map(|(detection, &cluster_id)| TrackedDetection {
                    frame: f,
                    detection,
                    cluster_id,
                    track_id: None,
                })
                .collect::<Vec<_>>(),
        );
        if f == 0 {
            first = Some(cube);
        }
    }
    let tracks = associate_detections(&centroids, s.gate_m)?;
    for track in &tracks {
        for &(f, c, _) in &track.points {
            for d in frames[f].iter_mut().filter(|d| d.cluster_id == Some(c)) {
                d.track_id = Some(track.id);
            }
        }
    }
    let first_cube = first.ok_or_else(|| Error::validation("fmcw.frames", "must be at least 1"))?;
    let rd = doppler_fft(&range_fft(&first_cube, s.chain.range_window)?, s.chain.doppler_window)?;
    let spectrogram = match &s.stft {
        Some(stft) => Some(micro_doppler(&first_cube, &s.chirp, stft)?),
        None => None,
    };
    Ok(FmcwOutcome {
        frames,
        tracks,
        range_doppler: range_doppler_magnitude(&rd),
        first_cube,
        spectrogram,
    })
}

pub(super) fn write_outputs(cfg: &ScenarioConfig, sink: &mut OutputSink) -> Result<()> {
    let s = section(cfg)?;
    let out = simulate_fmcw(cfg)?;
    let rows: Vec<TrackedDetection> = out.frames.iter().flatten().copied().collect();
    sink.write_with("detections.csv", |w| write_detections_csv(&rows, w))?;
    sink.write_with("tracks.csv", |w| {
        writeln!(w, "track_id,frame,x_m,y_m")?;
        for t in &out.tracks {
            for &(f, _, p) in &t.points {
                writeln!(w, "{},{f},{},{}", t.id, p[0], p[1])?;
            }
        }
        Ok(())
    })?;
    sink.write_with("summary.csv", |w| {
        writeln!(w, "frame,n_detections,n_clusters")?;
        for (f, dets) in out.frames.iter().enumerate() {
            let mut ids: Vec<usize> = dets.iter().filter_map(|d| d.cluster_id).collect();
            ids.sort_unstable();
            ids.dedup();
            writeln!(w, "{f},{},{}", dets.len(), ids.len())?;
        }
        Ok(())
    })?;
    let comment = format!(
        "rows velocity bins ({}), cols range bins ({})",
        out.range_doppler.nrows(),
        out.range_doppler.ncols()
    );
    sink.write("range_doppler.pgm", &render_pgm(out.range_doppler.view(), Scaling::Log, &[comment])?)?;
    if let Some(sg) = &out.spectrogram {
        let comment = format!(
            "rows velocity_mps {}..{}, cols time_s {}..{}",
            sg.velocity_axis[0],
            sg.velocity_axis[sg.velocity_axis.len() - 1],
            sg.time_axis[0],
            sg.time_axis[sg.time_axis.len() - 1]
        );
        sink.write("spectrogram.pgm", &render_pgm(sg.magnitudes.view(), Scaling::Log, &[comment])?)?;
        sink.write_with("spectrogram.csv", |w| sg.write_csv(w))?;
    }
    if s.write_cube {
        sink.write_with("frame0.cube", |w| write_cube(&out.first_cube, &s.chirp, w))?;
    }
    Ok(())
}
