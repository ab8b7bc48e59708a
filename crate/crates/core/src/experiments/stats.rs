use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    /// Largest gap between the two empirical CDFs.
    pub statistic: f64,
    /// Asymptotic two-sided p-value.
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("KS test needs two non-empty samples"));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    })
}

/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2 j² λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Mean horizontal gap, in dB, between two error-vs-SNR curves at matched
/// error: for every point of `better` with a positive error, the SNR at which
/// `worse` reaches the same error (log-error interpolated between
/// neighbouring points) minus that point's SNR. `None` when no point of
/// `better` falls inside the error range spanned by `worse`.
pub fn snr_offset_at_matched_error(snr_db: &[f64], worse: &[f64], better: &[f64]) -> Option<f64> {
    let mut offsets = Vec::new();
    for (i, &target) in better.iter().enumerate() {
        if !(target > 0.0) {
            continue;
        }
        let lt = target.ln();
        for k in 0..snr_db.len().saturating_sub(1) {
            let (a, b) = (worse[k], worse[k + 1]);
            if !(a > 0.0 && b > 0.0) {
                continue;
            }
            let (la, lb) = (a.ln(), b.ln());
            if (la - lt) * (lb - lt) <= 0.0 && la != lb {
                let t = (lt - la) / (lb - la);
                let s = snr_db[k] + t * (snr_db[k + 1] - snr_db[k]);
                offsets.push(s - snr_db[i]);
                break;
            }
        }
    }
    (!offsets.is_empty()).then(|| mean(&offsets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn ks_same_distribution_high_p() {
        let mut rng = crate::rng::rng_from_seed(1);
        let a: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert!(r.p_value > 0.01, "{r:?}");
        let shifted: Vec<f64> = b.iter().map(|x| x + 1.0).collect();
        let r = ks_two_sample(&a, &shifted).unwrap();
        assert!(r.p_value < 1e-6, "{r:?}");
    }

    #[test]
    fn ks_statistic_by_hand() {
        // CDF gap is largest after {1, 2} vs nothing: 2/3.
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[2.5, 4.0, 5.0]).unwrap();
        assert!((r.statistic - 2.0 / 3.0).abs() < 1e-12);
        let same = ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(same.statistic, 0.0);
        assert_eq!(same.p_value, 1.0);
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn offset_of_shifted_curve() {
        let snr = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0];
        let worse: Vec<f64> = snr.iter().map(|s| 10f64.powf(-s / 20.0)).collect();
        let better: Vec<f64> = snr.iter().map(|s| 10f64.powf(-(s + 5.0) / 20.0)).collect();
        let off = snr_offset_at_matched_error(&snr, &worse, &better).unwrap();
        assert!((off - 5.0).abs() < 1e-9, "{off}");
        assert!(snr_offset_at_matched_error(&snr, &worse, &[0.0; 6]).is_none());
    }
}
