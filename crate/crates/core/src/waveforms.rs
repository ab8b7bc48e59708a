//! 5G reference-signal sequences and comb-mapped resource grids.
//!
//! Grids are stored compactly: a comb pattern occupies a lattice of
//! (subcarrier, symbol) cells, so only the occupied lattice is kept and every
//! other cell reads back as exactly zero.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// OFDM symbols per slot with normal cyclic prefix.
pub const SYMBOLS_PER_SLOT: usize = 14;

/// Length of the Gold-sequence fast-forward (`N_c`).
const GOLD_NC: usize = 1600;

/// Zadoff-Chu sequence of odd length.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcSequence {
    pub root: u64,
    pub length: usize,
    pub samples: Vec<Complex64>,
}

/// Generates `exp(-jπ·u·n·(n+1)/N)` for `n in 0..N`.
pub fn generate_zadoff_chu(root: u64, length: usize) -> Result<ZcSequence> {
    if length < 3 || length.is_multiple_of(2) {
        return Err(Error::config(format!(
            "Zadoff-Chu length must be odd and >= 3, got {length}"
        )));
    }
    if root == 0 || gcd(root, length as u64) != 1 {
        return Err(Error::config(format!(
            "Zadoff-Chu root {root} is not coprime with length {length}"
        )));
    }
    let n_len = length as u128;
    let samples = (0..length as u128)
        .map(|n| {
            // Reduce the quadratic exponent modulo 2N so the phase stays exact.
            let q = (root as u128 * n * (n + 1)) % (2 * n_len);
            Complex64::from_polar(1.0, -PI * q as f64 / length as f64)
        })
        .collect();
    Ok(ZcSequence {
        root,
        length,
        samples,
    })
}

/// Zadoff-Chu sequence of the largest prime length not above `length`,
/// cyclically extended to exactly `length` samples.
pub fn extended_zadoff_chu(root: u64, length: usize) -> Result<Vec<Complex64>> {
    let prime = largest_prime_at_most(length)
        .filter(|&p| p >= 3)
        .ok_or_else(|| Error::config(format!("no odd prime <= {length} for ZC base")))?;
    let root = (root % prime as u64).max(1);
    let base = generate_zadoff_chu(root, prime)?;
    Ok((0..length).map(|n| base.samples[n % prime]).collect())
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn largest_prime_at_most(n: usize) -> Option<usize> {
    (2..=n).rev().find(|&c| is_prime(c))
}

fn is_prime(n: usize) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Length-31 Gold sequence and its QPSK mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoRandomSequence {
    pub init_state: u32,
    pub bits: Vec<u8>,
    pub qpsk: Vec<Complex64>,
}

/// Gold sequence `c(n) = x1(n+Nc) ⊕ x2(n+Nc)` with the x2 register seeded
/// by `init_state`. `qpsk` holds `n_bits / 2` symbols.
pub fn generate_pseudo_random(init_state: u32, n_bits: usize) -> Result<PseudoRandomSequence> {
    if n_bits == 0 {
        return Err(Error::config("pseudo-random sequence needs at least one bit"));
    }
    if init_state >= 1 << 31 {
        return Err(Error::config(format!(
            "init_state {init_state} exceeds 31 bits"
        )));
    }
    const MASK: u32 = (1 << 31) - 1;
    // Bit j of each register holds x(n + j).
    let mut x1: u32 = 1;
    let mut x2: u32 = init_state & MASK;
    let step = |x1: &mut u32, x2: &mut u32| {
        let b1 = ((*x1 >> 3) ^ *x1) & 1;
        let b2 = ((*x2 >> 3) ^ (*x2 >> 2) ^ (*x2 >> 1) ^ *x2) & 1;
        *x1 = (*x1 >> 1) | (b1 << 30);
        *x2 = (*x2 >> 1) | (b2 << 30);
    };
    for _ in 0..GOLD_NC {
        step(&mut x1, &mut x2);
    }
    let mut bits = Vec::with_capacity(n_bits);
    for _ in 0..n_bits {
        bits.push(((x1 ^ x2) & 1) as u8);
        step(&mut x1, &mut x2);
    }
    let qpsk = qpsk_map(&bits);
    Ok(PseudoRandomSequence {
        init_state,
        bits,
        qpsk,
    })
}

/// `(1 - 2b(2i))/√2 + j(1 - 2b(2i+1))/√2`; a trailing odd bit is dropped.
pub fn qpsk_map(bits: &[u8]) -> Vec<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    bits.chunks_exact(2)
        .map(|p| {
            Complex64::new(
                (1.0 - 2.0 * p[0] as f64) * s,
                (1.0 - 2.0 * p[1] as f64) * s,
            )
        })
        .collect()
}

/// Reference-signal family. Families differ only in sequence and in the
/// comb sizes they admit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalFamily {
    Srs,
    Prs,
    CsiRs,
}

impl SignalFamily {
    pub fn allowed_comb_sizes(self) -> &'static [usize] {
        match self {
            SignalFamily::Srs => &[2, 4, 8],
            SignalFamily::Prs => &[2, 4, 6, 12],
            SignalFamily::CsiRs => &[2, 4, 6, 8, 12],
        }
    }

    /// Limit on occupied symbols within one slot.
    pub fn max_symbols(self) -> Option<usize> {
        match self {
            SignalFamily::Srs => Some(12),
            _ => None,
        }
    }
}

/// Comb pattern: every `comb_size`-th subcarrier starting at `comb_offset`,
/// on symbols `start_symbol + j * symbol_period` for `j in 0..n_symbols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombConfig {
    pub comb_size: usize,
    pub comb_offset: usize,
    pub n_symbols: usize,
    #[serde(default)]
    pub start_symbol: usize,
    #[serde(default = "one")]
    pub symbol_period: usize,
}

fn one() -> usize {
    1
}

impl CombConfig {
    pub fn new(comb_size: usize, comb_offset: usize, n_symbols: usize) -> Self {
        Self {
            comb_size,
            comb_offset,
            n_symbols,
            start_symbol: 0,
            symbol_period: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4, 6, 8, 12].contains(&self.comb_size) {
            return Err(Error::config(format!(
                "comb size {} not in {{1,2,4,6,8,12}}",
                self.comb_size
            )));
        }
        if self.comb_offset >= self.comb_size {
            return Err(Error::config(format!(
                "comb offset {} must be below comb size {}",
                self.comb_offset, self.comb_size
            )));
        }
        if self.n_symbols == 0 {
            return Err(Error::config("comb must occupy at least one symbol"));
        }
        if self.symbol_period == 0 {
            return Err(Error::config("symbol period must be >= 1"));
        }
        Ok(())
    }

    /// Checks the family-specific limits on top of [`CombConfig::validate`].
    pub fn validate_for(&self, family: SignalFamily) -> Result<()> {
        self.validate()?;
        if !family.allowed_comb_sizes().contains(&self.comb_size) {
            return Err(Error::config(format!(
                "{family:?} does not admit comb size {}",
                self.comb_size
            )));
        }
        if let Some(max) = family.max_symbols() {
            let mut per_slot = std::collections::BTreeMap::new();
            for l in self.occupied_symbols() {
                *per_slot.entry(l / SYMBOLS_PER_SLOT).or_insert(0usize) += 1;
            }
            if let Some((slot, n)) = per_slot.into_iter().find(|&(_, n)| n > max) {
                return Err(Error::config(format!(
                    "{family:?} admits at most {max} symbols per slot, slot {slot} has {n}"
                )));
            }
        }
        Ok(())
    }

    pub fn occupied_subcarriers(&self, n_subcarriers: usize) -> Vec<usize> {
        (self.comb_offset..n_subcarriers)
            .step_by(self.comb_size)
            .collect()
    }

    pub fn occupied_symbols(&self) -> Vec<usize> {
        (0..self.n_symbols)
            .map(|j| self.start_symbol + j * self.symbol_period)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDims {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub scs_hz: f64,
}

/// OFDM symbol timing for a given subcarrier spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmTiming {
    /// Useful symbol duration `1/Δf`.
    pub t_sym: f64,
    /// Cyclic prefix duration.
    pub t_cp: f64,
}

impl OfdmTiming {
    /// Normal cyclic prefix, 144/2048 of the useful symbol.
    pub fn normal_cp(scs_hz: f64) -> Self {
        let t_sym = 1.0 / scs_hz;
        Self {
            t_sym,
            t_cp: t_sym * 144.0 / 2048.0,
        }
    }

    pub fn t_total(&self) -> f64 {
        self.t_sym + self.t_cp
    }
}

/// Subcarrier × symbol grid carrying a comb-mapped reference signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub scs_hz: f64,
    subcarriers: Vec<usize>,
    symbols: Vec<usize>,
    /// `values[[s, k]]`: s-th occupied symbol, k-th occupied subcarrier.
    values: Array2<Complex64>,
}

impl ResourceGrid {
    pub fn occupied_subcarriers(&self) -> &[usize] {
        &self.subcarriers
    }

    pub fn occupied_symbols(&self) -> &[usize] {
        &self.symbols
    }

    /// Occupied values, rows = occupied symbols, columns = occupied subcarriers.
    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn occupied_count(&self) -> usize {
        self.values.len()
    }

    pub fn cell(&self, subcarrier: usize, symbol: usize) -> Complex64 {
        match (
            self.subcarriers.binary_search(&subcarrier),
            self.symbols.binary_search(&symbol),
        ) {
            (Ok(k), Ok(s)) => self.values[[s, k]],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Dense `n_subcarriers × n_symbols` matrix.
    pub fn to_dense(&self) -> Array2<Complex64> {
        let mut dense = Array2::zeros((self.n_subcarriers, self.n_symbols));
        for (s, &l) in self.symbols.iter().enumerate() {
            for (k, &sc) in self.subcarriers.iter().enumerate() {
                dense[[sc, l]] = self.values[[s, k]];
            }
        }
        dense
    }

    /// Drops occupied symbols for which `keep(symbol)` is false.
    pub fn retain_symbols(&mut self, keep: impl Fn(usize) -> bool) {
        let rows: Vec<usize> = (0..self.symbols.len())
            .filter(|&s| keep(self.symbols[s]))
            .collect();
        self.values = self.values.select(ndarray::Axis(0), &rows);
        self.symbols = rows.iter().map(|&s| self.symbols[s]).collect();
    }

    /// CSV dump `(subcarrier_index, symbol_index, re, im)` of occupied cells.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "subcarrier_index,symbol_index,re,im")?;
        for (s, &l) in self.symbols.iter().enumerate() {
            for (k, &sc) in self.subcarriers.iter().enumerate() {
                let v = self.values[[s, k]];
                writeln!(out, "{sc},{l},{:e},{:e}", v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Places `seq` on the comb lattice. `seq` holds one block of
/// `occupied_subcarriers.len()` values per occupied symbol, concatenated.
pub fn map_to_comb(seq: &[Complex64], comb: &CombConfig, dims: GridDims) -> Result<ResourceGrid> {
    comb.validate()?;
    let subcarriers = comb.occupied_subcarriers(dims.n_subcarriers);
    let symbols = comb.occupied_symbols();
    if subcarriers.is_empty() {
        return Err(Error::config("comb selects no subcarriers"));
    }
    if let Some(&last) = symbols.last() {
        if last >= dims.n_symbols {
            return Err(Error::config(format!(
                "comb symbol {last} outside grid of {} symbols",
                dims.n_symbols
            )));
        }
    }
    let per_symbol = subcarriers.len();
    if seq.len() != per_symbol * symbols.len() {
        return Err(Error::config(format!(
            "sequence length {} does not match {} cells per symbol × {} symbols",
            seq.len(),
            per_symbol,
            symbols.len()
        )));
    }
    let values = Array2::from_shape_vec((symbols.len(), per_symbol), seq.to_vec())
        .map_err(|e| Error::config(e.to_string()))?;
    Ok(ResourceGrid {
        n_subcarriers: dims.n_subcarriers,
        n_symbols: dims.n_symbols,
        scs_hz: dims.scs_hz,
        subcarriers,
        symbols,
        values,
    })
}

/// Sequence parameters plus the comb pattern for one reference signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSignalConfig {
    pub family: SignalFamily,
    pub comb: CombConfig,
    /// ZC root for SRS; ignored by the Gold-sequence families.
    #[serde(default = "default_zc_root")]
    pub zc_root: u64,
    /// Base Gold seed for PRS/CSI-RS; symbol `l` uses `init + 1024·l` (mod 2^31).
    #[serde(default = "default_gold_init")]
    pub gold_init: u32,
    /// PRS muting: `muting[slot % len] == true` removes that slot's symbols.
    #[serde(default)]
    pub muting: Option<Vec<bool>>,
}

// Arbitrary defaults; any coprime root or 31-bit seed works.
fn default_zc_root() -> u64 {
    25
}

fn default_gold_init() -> u32 {
    0x1234
}

impl ReferenceSignalConfig {
    pub fn validate(&self) -> Result<()> {
        self.comb.validate_for(self.family)?;
        if self.muting.as_ref().is_some_and(|m| m.is_empty()) {
            return Err(Error::config("muting mask must not be empty"));
        }
        Ok(())
    }

    /// Builds the resource grid for this signal.
    pub fn build_grid(&self, dims: GridDims) -> Result<ResourceGrid> {
        self.validate()?;
        let per_symbol = self.comb.occupied_subcarriers(dims.n_subcarriers).len();
        let symbols = self.comb.occupied_symbols();
        let mut seq = Vec::with_capacity(per_symbol * symbols.len());
        match self.family {
            SignalFamily::Srs => {
                let base = extended_zadoff_chu(self.zc_root, per_symbol)?;
                for _ in &symbols {
                    seq.extend_from_slice(&base);
                }
            }
            SignalFamily::Prs | SignalFamily::CsiRs => {
                for &l in &symbols {
                    let init = (self.gold_init as u64 + 1024 * l as u64) % (1 << 31);
                    let prs = generate_pseudo_random(init as u32, 2 * per_symbol)?;
                    seq.extend_from_slice(&prs.qpsk);
                }
            }
        }
        let mut grid = map_to_comb(&seq, &self.comb, dims)?;
        if let Some(mask) = &self.muting {
            grid.retain_symbols(|l| !mask[(l / SYMBOLS_PER_SLOT) % mask.len()]);
            if grid.occupied_symbols().is_empty() {
                return Err(Error::config("muting pattern removes every symbol"));
            }
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn brute_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, v)| {
                        v * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    /// Bit-array version of the two shift registers, written directly from
    /// the recurrences.
    fn gold_oracle(c_init: u32, n_bits: usize) -> Vec<u8> {
        let total = GOLD_NC + n_bits + 31;
        let mut x1 = vec![0u8; total];
        let mut x2 = vec![0u8; total];
        x1[0] = 1;
        for i in 0..31 {
            x2[i] = ((c_init >> i) & 1) as u8;
        }
        for n in 0..total - 31 {
            x1[n + 31] = (x1[n + 3] + x1[n]) % 2;
            x2[n + 31] = (x2[n + 3] + x2[n + 2] + x2[n + 1] + x2[n]) % 2;
        }
        (0..n_bits)
            .map(|n| (x1[n + GOLD_NC] + x2[n + GOLD_NC]) % 2)
            .collect()
    }

    #[test]
    fn zc_closed_form_values() {
        let zc = generate_zadoff_chu(1, 3).unwrap();
        assert_abs_diff_eq!(zc.samples[0].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(zc.samples[0].im, 0.0, epsilon = 1e-15);
        // exp(-j2π/3)
        assert_abs_diff_eq!(zc.samples[1].re, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(zc.samples[1].im, -0.866_025_403_784_438_6, epsilon = 1e-12);
    }

    #[test]
    fn zc_rejects_bad_params() {
        assert!(matches!(generate_zadoff_chu(2, 8), Err(Error::InvalidConfig(_))));
        assert!(matches!(generate_zadoff_chu(3, 9), Err(Error::InvalidConfig(_))));
        assert!(generate_zadoff_chu(1, 1).is_err());
    }

    #[test]
    fn zc_is_cazac() {
        for (root, len) in [(1, 3), (25, 139), (5, 63), (29, 839)] {
            let zc = generate_zadoff_chu(root, len).unwrap();
            for s in &zc.samples {
                assert!((s.norm() - 1.0).abs() < 1e-12);
            }
            let spec: Vec<f64> = brute_dft(&zc.samples).iter().map(|v| v.norm()).collect();
            let mean = spec.iter().sum::<f64>() / spec.len() as f64;
            let worst = spec.iter().map(|m| (m - mean).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-9, "root {root} len {len}: {worst}");
        }
    }

    #[test]
    fn extended_zc_uses_prime_base() {
        let seq = extended_zadoff_chu(25, 10).unwrap();
        assert_eq!(seq.len(), 10);
        // base length 7, so sample 7 repeats sample 0
        assert_eq!(seq[7], seq[0]);
    }

    #[test]
    fn gold_matches_bit_level_oracle() {
        let seq = generate_pseudo_random(1, 64).unwrap();
        assert_eq!(seq.bits, gold_oracle(1, 64));
        for seed in [0u32, 0x1234, (1 << 31) - 1, 987_654_321] {
            let seq = generate_pseudo_random(seed, 500).unwrap();
            assert_eq!(seq.bits, gold_oracle(seed, 500), "seed {seed}");
        }
    }

    #[test]
    fn gold_is_deterministic_and_unit_modulus() {
        let a = generate_pseudo_random(77, 256).unwrap();
        let b = generate_pseudo_random(77, 256).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.qpsk.len(), 128);
        for s in &a.qpsk {
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
        assert!(generate_pseudo_random(1, 0).is_err());
        assert!(generate_pseudo_random(1 << 31, 4).is_err());
    }

    fn dims(n_sc: usize, n_sym: usize) -> GridDims {
        GridDims {
            n_subcarriers: n_sc,
            n_symbols: n_sym,
            scs_hz: 15e3,
        }
    }

    #[test]
    fn comb_two_offset_zero_rows() {
        let comb = CombConfig::new(2, 0, 1);
        let seq = vec![Complex64::new(1.0, 0.0); 4];
        let grid = map_to_comb(&seq, &comb, dims(8, 1)).unwrap();
        let occupied: Vec<usize> = (0..8).filter(|&k| grid.cell(k, 0).norm() > 0.0).collect();
        assert_eq!(occupied, vec![0, 2, 4, 6]);
    }

    #[test]
    fn comb_mapping_length_mismatch() {
        let comb = CombConfig::new(2, 0, 1);
        let seq = vec![Complex64::new(1.0, 0.0); 3];
        assert!(matches!(
            map_to_comb(&seq, &comb, dims(8, 1)),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn odd_and_even_combs_do_not_overlap() {
        // K_TC1 = 4 at offset 1, K_TC2 = 2 at offset 0: odd vs even lattice.
        let d = dims(48, 2);
        let a = CombConfig::new(4, 1, 2);
        let b = CombConfig::new(2, 0, 2);
        let ga = map_to_comb(&vec![Complex64::new(1.0, 0.0); 12 * 2], &a, d).unwrap();
        let gb = map_to_comb(&vec![Complex64::new(0.0, 1.0); 24 * 2], &b, d).unwrap();
        let (da, db) = (ga.to_dense(), gb.to_dense());
        let overlap = da
            .iter()
            .zip(db.iter())
            .filter(|(x, y)| x.norm() > 0.0 && y.norm() > 0.0)
            .count();
        assert_eq!(overlap, 0);
    }

    #[test]
    fn comb_offsets_partition_subcarriers() {
        for n_sc in [12, 24, 37, 100] {
            for k in [2, 4, 6, 8, 12] {
                let mut hits = vec![0usize; n_sc];
                for off in 0..k {
                    for sc in CombConfig::new(k, off, 1).occupied_subcarriers(n_sc) {
                        hits[sc] += 1;
                    }
                }
                assert!(hits.iter().all(|&h| h == 1), "n_sc {n_sc} K {k}");
            }
        }
    }

    #[test]
    fn family_comb_limits() {
        let mut comb = CombConfig::new(8, 0, 12);
        assert!(comb.validate_for(SignalFamily::Srs).is_ok());
        assert!(comb.validate_for(SignalFamily::Prs).is_err());
        comb.n_symbols = 13;
        assert!(comb.validate_for(SignalFamily::Srs).is_err());
        // 20 symbols straddling two slots: 12 + 8
        comb.n_symbols = 20;
        comb.start_symbol = 2;
        assert!(comb.validate_for(SignalFamily::Srs).is_ok());
        assert!(CombConfig::new(6, 0, 1).validate_for(SignalFamily::Prs).is_ok());
        assert!(CombConfig::new(6, 0, 1).validate_for(SignalFamily::Srs).is_err());
        assert!(CombConfig::new(4, 4, 1).validate().is_err());
    }

    #[test]
    fn srs_and_prs_grids_share_footprint() {
        let d = dims(120, 14);
        let comb = CombConfig::new(4, 2, 4);
        let srs = ReferenceSignalConfig {
            family: SignalFamily::Srs,
            comb: comb.clone(),
            zc_root: 25,
            gold_init: 0,
            muting: None,
        }
        .build_grid(d)
        .unwrap();
        let prs = ReferenceSignalConfig {
            family: SignalFamily::Prs,
            comb,
            zc_root: 0,
            gold_init: 99,
            muting: None,
        }
        .build_grid(d)
        .unwrap();
        assert_eq!(srs.occupied_subcarriers(), prs.occupied_subcarriers());
        assert_eq!(srs.occupied_symbols(), prs.occupied_symbols());
        assert_abs_diff_eq!(srs.energy(), prs.energy(), epsilon = 1e-9);
    }

    #[test]
    fn muting_drops_slots() {
        let cfg = ReferenceSignalConfig {
            family: SignalFamily::Prs,
            comb: CombConfig {
                comb_size: 2,
                comb_offset: 0,
                n_symbols: 4,
                start_symbol: 0,
                symbol_period: 14,
            },
            zc_root: 1,
            gold_init: 3,
            muting: Some(vec![false, true]),
        };
        let grid = cfg.build_grid(dims(24, 56)).unwrap();
        assert_eq!(grid.occupied_symbols(), &[0, 28]);
        assert_eq!(grid.cell(0, 14), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn csv_lists_occupied_cells_only() {
        let comb = CombConfig::new(4, 1, 1);
        let seq = vec![Complex64::new(0.5, -0.5); 3];
        let grid = map_to_comb(&seq, &comb, dims(12, 1)).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "subcarrier_index,symbol_index,re,im");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,0,"));
        assert!(lines[3].starts_with("9,0,"));
    }

    proptest::proptest! {
        #[test]
        fn mapping_preserves_energy(
            k_idx in 0usize..5,
            off_seed in 0usize..12,
            n_sc in 12usize..64,
            n_sym in 1usize..4,
            phases in proptest::collection::vec(0.0f64..6.3, 64 * 4),
            amp in 0.1f64..3.0,
        ) {
            let k = [2, 4, 6, 8, 12][k_idx];
            let comb = CombConfig::new(k, off_seed % k, n_sym);
            let per = comb.occupied_subcarriers(n_sc).len();
            let seq: Vec<Complex64> = phases[..per * n_sym]
                .iter()
                .map(|&p| Complex64::from_polar(amp, p))
                .collect();
            let seq_energy: f64 = seq.iter().map(|v| v.norm_sqr()).sum();
            let grid = map_to_comb(&seq, &comb, dims(n_sc, n_sym)).unwrap();
            let dense_energy: f64 = grid.to_dense().iter().map(|v| v.norm_sqr()).sum();
            proptest::prop_assert!((dense_energy - seq_energy).abs() < 1e-9 * seq_energy.max(1.0));
            for sc in 0..n_sc {
                for l in 0..n_sym {
                    let on_comb = sc % k == comb.comb_offset;
                    proptest::prop_assert_eq!(grid.cell(sc, l).norm() > 0.0, on_comb);
                }
            }
        }
    }
}
