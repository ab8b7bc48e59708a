//! Cartesian fixes from (range, direction) and Monte Carlo error scoring.
//!
//! A direction `(φ, θ)` always points from the station toward the user:
//! `X = X_BS + r·sinθ·cosφ`, `Y = Y_BS + r·sinθ·sinφ`, `Z = Z_BS + r·cosθ`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::antenna::WaveDirection;
use crate::channel::SPEED_OF_LIGHT;
use crate::error::{Error, Result};
use crate::estimators::Estimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationPose {
    pub id: String,
    pub position: [f64; 3],
}

impl StationPose {
    pub fn new(id: impl Into<String>, position: [f64; 3]) -> Result<Self> {
        if position.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("station coordinates must be finite"));
        }
        Ok(Self {
            id: id.into(),
            position,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    pub position: [f64; 3],
    pub source_station: String,
    pub range_m: f64,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

/// Which end measured the angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkDirection {
    /// Station measures the arrival direction of the user's signal.
    #[default]
    Uplink,
    /// User measures the arrival direction of the station's signal; the
    /// station-to-user direction is its reverse.
    Downlink,
}

pub fn range_from_delay(delay_s: f64) -> f64 {
    SPEED_OF_LIGHT * delay_s
}

pub fn single_station_fix(bs: &StationPose, range_m: f64, dir: &WaveDirection) -> Result<PositionFix> {
    if !(range_m >= 0.0) {
        return Err(Error::input(format!("range must be non-negative, got {range_m}")));
    }
    let u = dir.unit_vector();
    Ok(PositionFix {
        position: [
            bs.position[0] + range_m * u[0],
            bs.position[1] + range_m * u[1],
            bs.position[2] + range_m * u[2],
        ],
        source_station: bs.id.clone(),
        range_m,
        azimuth_deg: dir.azimuth_deg,
        elevation_deg: dir.elevation_deg,
    })
}

/// Fix from an estimator output, undoing the downlink reversal if needed.
pub fn fix_from_estimate(bs: &StationPose, est: &Estimate, link: LinkDirection) -> Result<PositionFix> {
    let measured = WaveDirection::new(est.azimuth_deg, est.elevation_deg)?;
    let dir = match link {
        LinkDirection::Uplink => measured,
        LinkDirection::Downlink => measured.reversed(),
    };
    single_station_fix(bs, range_from_delay(est.delay_s), &dir)
}

/// Recovers `(r, direction)` of `position` as seen from `bs`.
pub fn back_solve(bs: &StationPose, position: [f64; 3]) -> (f64, WaveDirection) {
    let d = [
        position[0] - bs.position[0],
        position[1] - bs.position[1],
        position[2] - bs.position[2],
    ];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    (r, WaveDirection::from_vector(d))
}

/// Per-station weighting for [`multi_station_average_with`].
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Averaging {
    #[default]
    Uniform,
    /// Weights `1/σ²_b`, one variance per fix.
    InverseVariance(Vec<f64>),
}

/// Coordinate-wise arithmetic mean.
pub fn multi_station_average(fixes: &[PositionFix]) -> Result<[f64; 3]> {
    multi_station_average_with(fixes, &Averaging::Uniform)
}

pub fn multi_station_average_with(fixes: &[PositionFix], averaging: &Averaging) -> Result<[f64; 3]> {
    if fixes.is_empty() {
        return Err(Error::input("no fixes to average"));
    }
    let weights: Vec<f64> = match averaging {
        Averaging::Uniform => vec![1.0; fixes.len()],
        Averaging::InverseVariance(var) => {
            if var.len() != fixes.len() {
                return Err(Error::input("one variance per fix required"));
            }
            if var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::input("variances must be positive and finite"));
            }
            var.iter().map(|v| 1.0 / v).collect()
        }
    };
    let total: f64 = weights.iter().sum();
    let mut out = [0.0; 3];
    for (fix, w) in fixes.iter().zip(&weights) {
        for (o, p) in out.iter_mut().zip(fix.position) {
            *o += w * p;
        }
    }
    Ok(out.map(|v| v / total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    /// Probability density per bin.
    pub densities: Vec<f64>,
}

impl Histogram {
    /// Normalized histogram on `[0, max(values)]`; an all-zero sample uses `[0, 1]`.
    pub fn of(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::config("histogram needs at least one bin"));
        }
        if values.is_empty() {
            return Err(Error::input("histogram of an empty sample"));
        }
        let hi = values.iter().cloned().fold(0.0, f64::max);
        let hi = if hi > 0.0 { hi } else { 1.0 };
        let width = hi / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = ((v / width).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        let n = values.len() as f64;
        let densities = counts.iter().map(|&c| c as f64 / (n * width)).collect();
        Ok(Self { edges, densities })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_lo,bin_hi,density")?;
        for (i, d) in self.densities.iter().enumerate() {
            writeln!(out, "{},{},{}", self.edges[i], self.edges[i + 1], d)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    /// Euclidean 3D error of each trial.
    pub errors: Vec<f64>,
    /// Mean error over the first `i + 1` trials.
    pub running_mean: Vec<f64>,
    pub mean_rmse: f64,
    pub std_dev: f64,
    pub histogram: Histogram,
}

impl RmseReport {
    pub fn from_errors(errors: Vec<f64>, bins: usize) -> Result<Self> {
        let histogram = Histogram::of(&errors, bins)?;
        let mut running_mean = Vec::with_capacity(errors.len());
        let mut acc = 0.0;
        for (i, e) in errors.iter().enumerate() {
            acc += e;
            running_mean.push(acc / (i + 1) as f64);
        }
        let n = errors.len() as f64;
        let mean_rmse = acc / n;
        let var = errors.iter().map(|e| (e - mean_rmse).powi(2)).sum::<f64>() / n;
        Ok(Self {
            errors,
            running_mean,
            mean_rmse,
            std_dev: var.sqrt(),
            histogram,
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "trial,err_m,running_mean_rmse_m")?;
        for (i, (e, m)) in self.errors.iter().zip(&self.running_mean).enumerate() {
            writeln!(out, "{i},{e},{m}")?;
        }
        Ok(())
    }
}

pub fn euclidean_error(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn score_trials(estimates: &[[f64; 3]], truth: &[[f64; 3]], bins: usize) -> Result<RmseReport> {
    if estimates.len() != truth.len() {
        return Err(Error::input(format!(
            "{} estimates for {} ground-truth points",
            estimates.len(),
            truth.len()
        )));
    }
    let errors = estimates
        .iter()
        .zip(truth)
        .map(|(&e, &t)| euclidean_error(e, t))
        .collect();
    RmseReport::from_errors(errors, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn origin() -> StationPose {
        StationPose::new("bs0", [0.0; 3]).unwrap()
    }

    fn fix_at(p: [f64; 3]) -> PositionFix {
        PositionFix {
            position: p,
            source_station: "x".into(),
            range_m: 0.0,
            azimuth_deg: 0.0,
            elevation_deg: 0.0,
        }
    }

    #[test]
    fn fix_examples() {
        let f = single_station_fix(&origin(), 100.0, &WaveDirection::new(0.0, 90.0).unwrap()).unwrap();
        assert!((f.position[0] - 100.0).abs() < 1e-12);
        assert!(f.position[1].abs() < 1e-12 && f.position[2].abs() < 1e-12);
        for az in [0.0, 77.0, 300.0] {
            let f = single_station_fix(&origin(), 100.0, &WaveDirection::new(az, 0.0).unwrap()).unwrap();
            assert!(f.position[0].abs() < 1e-12 && f.position[1].abs() < 1e-12);
            assert_eq!(f.position[2], 100.0);
        }
        let bs = StationPose::new("b", [10.0, 20.0, 5.0]).unwrap();
        let f = single_station_fix(&bs, 0.0, &WaveDirection::new(12.0, 34.0).unwrap()).unwrap();
        assert_eq!(f.position, [10.0, 20.0, 5.0]);
        assert!(single_station_fix(&bs, -1.0, &WaveDirection::new(0.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn range_examples() {
        assert_eq!(range_from_delay(0.0), 0.0);
        assert!((range_from_delay(1e-6) - 299.792458).abs() < 1e-9);
        assert!((range_from_delay(333.564e-9) - 100.0).abs() < 1e-3);
    }

    #[test]
    fn averaging_examples() {
        let fixes = [fix_at([1.0, 0.0, 0.0]), fix_at([0.0, 1.0, 0.0]), fix_at([0.0, 0.0, 1.0])];
        let m = multi_station_average(&fixes).unwrap();
        for v in m {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let same = vec![fix_at([2.0, -3.0, 4.0]); 3];
        assert_eq!(multi_station_average(&same).unwrap(), [2.0, -3.0, 4.0]);
        assert!(matches!(multi_station_average(&[]), Err(Error::InvalidInput(_))));

        let w = multi_station_average_with(
            &[fix_at([0.0; 3]), fix_at([3.0, 0.0, 0.0])],
            &Averaging::InverseVariance(vec![1.0, 2.0]),
        )
        .unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn averaging_three_stations_cuts_mse_by_three() {
        let mut rng = crate::rng::rng_from_seed(17);
        let trials = 10_000;
        let (mut single, mut avg) = (0.0, 0.0);
        for _ in 0..trials {
            let fixes: Vec<PositionFix> = (0..3)
                .map(|_| fix_at([0.0; 3].map(|_| rng.sample::<f64, _>(StandardNormal))))
                .collect();
            single += euclidean_error(fixes[0].position, [0.0; 3]).powi(2);
            avg += euclidean_error(multi_station_average(&fixes).unwrap(), [0.0; 3]).powi(2);
        }
        let ratio = avg / single;
        assert!((ratio - 1.0 / 3.0).abs() < 0.15 / 3.0, "ratio {ratio}");
    }

    #[test]
    fn scoring_examples() {
        let pts = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let r = score_trials(&pts, &pts, 10).unwrap();
        assert_eq!(r.mean_rmse, 0.0);
        let r = score_trials(&[[3.0, 4.0, 0.0]], &[[0.0; 3]], 4).unwrap();
        assert_eq!(r.mean_rmse, 5.0);
        assert!(score_trials(&pts, &pts[..1], 4).is_err());

        let errs = vec![0.3, 1.2, 0.7, 2.5, 0.1];
        let mut rev = errs.clone();
        rev.reverse();
        let a = RmseReport::from_errors(errs, 5).unwrap();
        let b = RmseReport::from_errors(rev, 5).unwrap();
        assert!((a.running_mean.last().unwrap() - b.running_mean.last().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let mut rng = crate::rng::rng_from_seed(3);
        let v: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 4.0).collect();
        let h = Histogram::of(&v, 37).unwrap();
        let area: f64 = h
            .densities
            .iter()
            .enumerate()
            .map(|(i, d)| d * (h.edges[i + 1] - h.edges[i]))
            .sum();
        assert!((area - 1.0).abs() < 1e-6);
        let z = Histogram::of(&[0.0, 0.0], 3).unwrap();
        assert!((z.densities[0] * (z.edges[1] - z.edges[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_headers() {
        let r = RmseReport::from_errors(vec![1.0, 2.0], 2).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("trial,err_m,running_mean_rmse_m\n0,1,1\n1,2,1.5"));
        let mut buf = Vec::new();
        r.histogram.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("bin_lo,bin_hi,density\n"));
    }

    #[test]
    fn downlink_reverses_direction() {
        let bs = StationPose::new("b", [1.0, 2.0, 3.0]).unwrap();
        let est = Estimate {
            azimuth_deg: 200.0,
            elevation_deg: 120.0,
            delay_s: 1e-7,
            peak_value: 1.0,
            iterations: 0,
        };
        let up = fix_from_estimate(&bs, &est, LinkDirection::Uplink).unwrap();
        let down = fix_from_estimate(&bs, &est, LinkDirection::Downlink).unwrap();
        for i in 0..3 {
            assert!((up.position[i] - bs.position[i] + down.position[i] - bs.position[i]).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn fix_round_trip(r in 0.1f64..1e4, az in 0.0f64..359.9, el in 1.0f64..179.0,
                          x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3) {
            let bs = StationPose::new("b", [x, y, z]).unwrap();
            let dir = WaveDirection::new(az, el).unwrap();
            let f = single_station_fix(&bs, r, &dir).unwrap();
            let (r2, d2) = back_solve(&bs, f.position);
            prop_assert!((r2 - r).abs() <= 1e-9 * r.max(1.0) * 10.0);
            prop_assert!((d2.elevation_deg - el).abs() < 1e-7);
            let daz = (d2.azimuth_deg - az + 180.0).rem_euclid(360.0) - 180.0;
            prop_assert!(daz.abs() < 1e-7);
            prop_assert!((euclidean_error(f.position, bs.position) - r).abs() <= 1e-9 * r.max(1.0));
            // translation equivariance
            let f0 = single_station_fix(&origin(), r, &dir).unwrap();
            for i in 0..3 {
                prop_assert!((f.position[i] - f0.position[i] - bs.position[i]).abs() < 1e-9 * (1.0 + bs.position[i].abs()));
            }
        }

        #[test]
        fn mean_lies_in_bounding_box(pts in proptest::collection::vec(proptest::array::uniform3(-100.0f64..100.0), 1..6)) {
            let fixes: Vec<PositionFix> = pts.iter().map(|&p| fix_at(p)).collect();
            let m = multi_station_average(&fixes).unwrap();
            for i in 0..3 {
                let lo = pts.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
                let hi = pts.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(m[i] >= lo - 1e-9 && m[i] <= hi + 1e-9);
            }
        }
    }
}
