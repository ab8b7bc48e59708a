use std::io::Write;

use num_complex::Complex64;

use super::manifest::OutputSink;
use super::{ImagingSection, ScenarioConfig, ScenarioKind};
use crate::antenna::WaveDirection;
use crate::channel::{PathParams, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::rng::trial_seed;
use crate::sar_imaging::{
    detect_peaks, down_range, form_image, mirror_spacing, reflect, DetectionConfig, DetectionList, ImagingParams,
    RangeDopplerImage, ReflectionScene,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ImagingOutcome {
    pub image: RangeDopplerImage,
    pub detections: DetectionList,
    /// `λ/(2·S·T_total)` for occupancy period `S > 1`.
    pub predicted_mirror_spacing_mps: Option<f64>,
    /// Velocity gap between the strongest peak and the nearest detection at
    /// the same delay (±1 cell) with at least half its magnitude.
    pub measured_mirror_spacing_mps: Option<f64>,
}

pub fn scene_of(section: &ImagingSection) -> Result<ReflectionScene> {
    let scatterers = section
        .scatterers
        .iter()
        .map(|s| {
            Ok(PathParams {
                delay_s: 2.0 * s.range_m / SPEED_OF_LIGHT,
                doppler_mps: s.velocity_mps,
                direction: WaveDirection::new(0.0, 90.0)?,
                pol: Default::default(),
                gain: Complex64::from_polar(s.amplitude, s.phase_deg.to_radians()),
            })
        })
        .collect::<Result<_>>()?;
    let o = &section.occupancy;
    Ok(ReflectionScene {
        scatterers,
        symbol_occupancy: ReflectionScene::periodic_occupancy(o.n_slots, o.period, o.start),
    })
}

/// Builds the scene, forms the image and detects peaks. The noise stream is
/// `trial_seed(seed, setup.seed)`.
pub fn simulate_imaging(cfg: &ScenarioConfig) -> Result<ImagingOutcome> {
    cfg.validate()?;
    let section = match (&cfg.imaging, cfg.kind) {
        (Some(s), ScenarioKind::Imaging) => s,
        _ => return Err(Error::validation("kind", "not an imaging scenario")),
    };
    let mut setup = section.setup.clone();
    setup.seed = trial_seed(cfg.seed, setup.seed);
    let scene = scene_of(section)?;
    let h = reflect(&scene, &setup)?;
    let params = ImagingParams {
        carrier_hz: setup.carrier_hz,
        intra_symbol_doppler: section.intra_symbol_doppler,
    };
    let image = form_image(&h, &params)?;
    let period = section.occupancy.period;
    let predicted = if period > 1 {
        Some(mirror_spacing(period, setup.timing().t_total(), setup.wavelength())?)
    } else {
        None
    };
    let det_cfg = DetectionConfig {
        mirror_spacing_mps: section.detection.mirror_spacing_mps.or(predicted),
        ..section.detection
    };
    let detections = detect_peaks(&image, &det_cfg)?;
    let measured = detections.peaks.first().and_then(|top| {
        detections
            .peaks
            .iter()
            .skip(1)
            .filter(|p| p.delay_index.abs_diff(top.delay_index) <= 1 && p.magnitude >= 0.5 * top.magnitude)
            .map(|p| (p.velocity_mps - top.velocity_mps).abs())
            .filter(|&d| d > 0.0)
            .min_by(f64::total_cmp)
    });
    Ok(ImagingOutcome {
        image,
        detections,
        predicted_mirror_spacing_mps: predicted,
        measured_mirror_spacing_mps: measured,
    })
}

pub(super) fn write_outputs(cfg: &ScenarioConfig, sink: &mut OutputSink) -> Result<()> {
    let out = simulate_imaging(cfg)?;
    let section = cfg.imaging.as_ref().ok_or_else(|| Error::validation("imaging", "missing"))?;
    sink.write("image.pgm", &out.image.to_pgm(section.scaling)?)?;
    if section.write_image_csv {
        sink.write_with("image.csv", |w| out.image.write_csv(w))?;
    }
    sink.write_with("detections.csv", |w| {
        writeln!(w, "delay_s,range_m,velocity_mps,magnitude,is_mirror")?;
        for p in &out.detections.peaks {
            writeln!(
                w,
                "{:e},{},{},{:e},{}",
                p.delay_s,
                down_range(p.delay_s),
                p.velocity_mps,
                p.magnitude,
                p.is_mirror
            )?;
        }
        Ok(())
    })?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let (d, v, _) = out.image.argmax();
    sink.write_with("summary.csv", |w| {
        writeln!(w, "key,value")?;
        writeln!(w, "delay_step_s,{:e}", out.image.delay_step())?;
        writeln!(w, "range_step_m,{}", down_range(out.image.delay_step()))?;
        writeln!(w, "velocity_step_mps,{}", out.image.velocity_step())?;
        writeln!(w, "peak_range_m,{}", down_range(out.image.delay_axis[d]))?;
        writeln!(w, "peak_velocity_mps,{}", out.image.velocity_axis[v])?;
        writeln!(w, "n_detections,{}", out.detections.peaks.len())?;
        writeln!(
            w,
            "n_mirrors,{}",
            out.detections.peaks.iter().filter(|p| p.is_mirror).count()
        )?;
        writeln!(w, "predicted_mirror_spacing_mps,{}", opt(out.predicted_mirror_spacing_mps))?;
        writeln!(w, "measured_mirror_spacing_mps,{}", opt(out.measured_mirror_spacing_mps))?;
        writeln!(w, "reference_mirror_spacing_mps,{}", opt(section.reference_mirror_spacing_mps))?;
        Ok(())
    })
}
