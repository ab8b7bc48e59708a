use nalgebra::DMatrix;
use num_complex::Complex64;

use super::search::{Correlator, SearchStrategy};
use super::{Estimate, SearchGrid, Spectrum};
use crate::antenna::{PolarizationState, SteeringModel};
use crate::channel::PortSnapshots;
use crate::error::{Error, Result};

/// Floor on the MUSIC denominator relative to `‖A‖²`.
const DENOMINATOR_FLOOR: f64 = 1e-15;

/// Hermitian sample covariance of the stacked joint vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    values: DMatrix<Complex64>,
}

impl CovarianceMatrix {
    /// Wraps `m` after forcing exact Hermitian symmetry from its upper triangle.
    pub fn from_matrix(mut m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::input("covariance must be square and non-empty"));
        }
        let n = m.nrows();
        for i in 0..n {
            m[(i, i)].im = 0.0;
            for j in i + 1..n {
                m[(j, i)] = m[(i, j)].conj();
            }
        }
        Ok(Self { values: m })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<Complex64> {
        &self.values
    }
}

/// Stacks `y[m·n_p + k]` for the pilot columns `pilot_positions` of `snapshots`;
/// one matrix column per symbol.
pub fn stacked_snapshots(snapshots: &PortSnapshots, pilot_positions: &[usize]) -> Result<DMatrix<Complex64>> {
    let n_sym = snapshots.n_symbols();
    if n_sym == 0 {
        return Err(Error::input("no snapshot symbols"));
    }
    if pilot_positions.is_empty() {
        return Err(Error::input("no pilot subcarriers selected"));
    }
    if let Some(&bad) = pilot_positions.iter().find(|&&k| k >= snapshots.n_subcarriers()) {
        return Err(Error::input(format!("pilot position {bad} out of range")));
    }
    let m = snapshots.n_ports();
    let n_p = pilot_positions.len();
    Ok(DMatrix::from_fn(m * n_p, n_sym, |row, s| {
        snapshots.data[[row / n_p, pilot_positions[row % n_p], s]]
    }))
}

/// `R = (1/N) Σ_i y_i y_iᴴ` over the N symbols.
pub fn sample_covariance(snapshots: &PortSnapshots, pilot_positions: &[usize]) -> Result<CovarianceMatrix> {
    let y = stacked_snapshots(snapshots, pilot_positions)?;
    let n = y.ncols() as f64;
    CovarianceMatrix::from_matrix(&y * y.adjoint() / Complex64::new(n, 0.0))
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<Complex64>,
}

pub fn hermitian_eigen(m: &DMatrix<Complex64>) -> HermitianEigen {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    HermitianEigen { values, vectors }
}

/// Split of the joint space into signal (K strongest) and noise directions.
#[derive(Debug, Clone)]
pub struct NoiseSubspace {
    dim: usize,
    noise: Option<DMatrix<Complex64>>,
    signal: DMatrix<Complex64>,
    /// Ascending eigenvalues that were computed (all `dim` of them on the
    /// covariance route, the N snapshot-space ones on the Gram route).
    pub eigenvalues: Vec<f64>,
}

impl NoiseSubspace {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_sources(&self) -> usize {
        self.signal.ncols()
    }

    /// The `dim − K` noise eigenvectors, when computed explicitly.
    pub fn noise_basis(&self) -> Option<&DMatrix<Complex64>> {
        self.noise.as_ref()
    }

    pub fn signal_basis(&self) -> &DMatrix<Complex64> {
        &self.signal
    }

    /// `aᴴ E_n E_nᴴ a`.
    pub fn noise_energy(&self, a: &[Complex64]) -> f64 {
        let proj = |basis: &DMatrix<Complex64>| -> f64 {
            basis
                .column_iter()
                .map(|c| c.iter().zip(a).map(|(u, x)| u.conj() * x).sum::<Complex64>().norm_sqr())
                .sum()
        };
        match &self.noise {
            Some(n) if n.ncols() <= self.signal.ncols() => proj(n),
            _ => a.iter().map(|x| x.norm_sqr()).sum::<f64>() - proj(&self.signal),
        }
    }
}

/// Full eigendecomposition of `r`; the `dim − k` smallest eigenvectors span
/// the noise subspace.
pub fn noise_subspace(r: &CovarianceMatrix, k: usize) -> Result<NoiseSubspace> {
    let dim = r.dim();
    if k >= dim {
        return Err(Error::config(format!(
            "number of sources {k} must be below dimension {dim}"
        )));
    }
    let eig = hermitian_eigen(r.values());
    let noise = eig.vectors.columns(0, dim - k).into_owned();
    let signal = eig.vectors.columns(dim - k, k).into_owned();
    Ok(NoiseSubspace {
        dim,
        noise: Some(noise),
        signal,
        eigenvalues: eig.values,
    })
}

/// Subspace split straight from stacked snapshots `y` (dim × N). With fewer
/// snapshots than dimensions the signal eigenvectors come from the N×N Gram
/// matrix `yᴴy/N` (same nonzero spectrum as `yyᴴ/N`) and the noise basis is
/// left implicit as the orthogonal complement.
pub fn subspace_from_snapshots(y: &DMatrix<Complex64>, k: usize) -> Result<NoiseSubspace> {
    let (dim, n) = (y.nrows(), y.ncols());
    if n == 0 {
        return Err(Error::input("no snapshot symbols"));
    }
    if k >= dim {
        return Err(Error::config(format!(
            "number of sources {k} must be below dimension {dim}"
        )));
    }
    let scale = Complex64::new(n as f64, 0.0);
    if n >= dim || k > n {
        let r = CovarianceMatrix::from_matrix(y * y.adjoint() / scale)?;
        return noise_subspace(&r, k);
    }
    let gram = CovarianceMatrix::from_matrix(y.adjoint() * y / scale)?;
    let eig = hermitian_eigen(gram.values());
    let mut signal = DMatrix::zeros(dim, k);
    for j in 0..k {
        let v = eig.vectors.column(n - 1 - j);
        let mut u = y * v;
        let norm = u.norm();
        if norm > 0.0 {
            u /= Complex64::new(norm, 0.0);
        }
        signal.set_column(j, &u);
    }
    Ok(NoiseSubspace {
        dim,
        noise: None,
        signal,
        eigenvalues: eig.values,
    })
}

fn music_correlator<'g>(
    subspace: &NoiseSubspace,
    grid: &'g SearchGrid,
    model: &SteeringModel,
    pol: &PolarizationState,
    pilot_freqs: &[f64],
) -> Result<(Correlator<'g>, bool)> {
    if subspace.dim() != model.n_ports() * pilot_freqs.len() {
        return Err(Error::config(format!(
            "subspace dimension {} does not match {} ports × {} pilots",
            subspace.dim(),
            model.n_ports(),
            pilot_freqs.len()
        )));
    }
    // Project on whichever basis has fewer columns; E_n E_nᴴ = I − U_s U_sᴴ.
    match subspace.noise_basis() {
        Some(n) if n.ncols() <= subspace.signal_basis().ncols() => {
            Ok((Correlator::new(grid, model, pol, pilot_freqs, n)?, true))
        }
        _ => Ok((
            Correlator::new(grid, model, pol, pilot_freqs, subspace.signal_basis())?,
            false,
        )),
    }
}

fn music_objective(noise_form: bool) -> impl Fn(f64, f64) -> f64 + Sync {
    move |proj, a2| {
        let den = if noise_form { proj } else { a2 - proj };
        a2 / den.max(a2 * DENOMINATOR_FLOOR)
    }
}

/// `P = AᴴA / (Aᴴ E_n E_nᴴ A)` with `A = D(φ, θ) ⊗ g(t)` on every grid point.
pub fn music_spectrum(
    subspace: &NoiseSubspace,
    grid: &SearchGrid,
    model: &SteeringModel,
    pol: &PolarizationState,
    pilot_freqs: &[f64],
) -> Result<Spectrum> {
    let (corr, noise_form) = music_correlator(subspace, grid, model, pol, pilot_freqs)?;
    let values = corr.evaluate_all(music_objective(noise_form));
    let (idx, peak) = super::search::first_max(&values);
    let (az, el, tau) = grid.point(idx);
    Ok(Spectrum {
        grid: *grid,
        values,
        argmax: Estimate {
            azimuth_deg: az,
            elevation_deg: el,
            delay_s: tau,
            peak_value: peak,
            iterations: 0,
        },
    })
}

/// MUSIC peak only, optionally with the coarse-to-fine search.
pub fn music_estimate(
    subspace: &NoiseSubspace,
    grid: &SearchGrid,
    model: &SteeringModel,
    pol: &PolarizationState,
    pilot_freqs: &[f64],
    strategy: SearchStrategy,
) -> Result<Estimate> {
    let (corr, noise_form) = music_correlator(subspace, grid, model, pol, pilot_freqs)?;
    let (idx, peak) = corr.argmax(music_objective(noise_form), strategy);
    let (az, el, tau) = grid.point(idx);
    Ok(Estimate {
        azimuth_deg: az,
        elevation_deg: el,
        delay_s: tau,
        peak_value: peak,
        iterations: 0,
    })
}
