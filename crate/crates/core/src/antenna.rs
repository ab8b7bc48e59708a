//! Ideal six-port vector antenna, scalar arrays and steering vectors.
//!
//! Angles are degrees at every public interface. θ is the polar angle from
//! +z and φ the azimuth from +x. The unit vector `k̂(φ, θ)` used for spatial
//! phase is also the Poynting direction of the modeled field.

use std::io::BufRead;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveDirection {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl WaveDirection {
    /// Azimuth is wrapped into `[0, 360)`; elevation must lie in `[0, 180]`.
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        if !azimuth_deg.is_finite() || !(0.0..=180.0).contains(&elevation_deg) {
            return Err(Error::config(format!(
                "direction out of range: azimuth {azimuth_deg}, elevation {elevation_deg}"
            )));
        }
        Ok(Self {
            azimuth_deg: azimuth_deg.rem_euclid(360.0),
            elevation_deg,
        })
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (sp, cp) = self.azimuth_deg.to_radians().sin_cos();
        let (st, ct) = self.elevation_deg.to_radians().sin_cos();
        [st * cp, st * sp, ct]
    }

    /// Direction of `v`; the zero vector maps to the zenith.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r == 0.0 {
            return Self {
                azimuth_deg: 0.0,
                elevation_deg: 0.0,
            };
        }
        let el = (v[2] / r).clamp(-1.0, 1.0).acos().to_degrees();
        let az = v[1].atan2(v[0]).to_degrees().rem_euclid(360.0);
        Self {
            azimuth_deg: az,
            elevation_deg: el,
        }
    }

    /// The antipodal direction.
    pub fn reversed(&self) -> Self {
        Self {
            azimuth_deg: (self.azimuth_deg + 180.0).rem_euclid(360.0),
            elevation_deg: 180.0 - self.elevation_deg,
        }
    }

    /// Great-circle angle to `other`, degrees.
    pub fn angle_to(&self, other: &WaveDirection) -> f64 {
        let a = self.unit_vector();
        let b = other.unit_vector();
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        sin.atan2(dot).to_degrees()
    }
}

/// Polarization by auxiliary angle γ and phase difference η.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationState {
    pub gamma_deg: f64,
    pub eta_deg: f64,
}

impl PolarizationState {
    pub fn new(gamma_deg: f64, eta_deg: f64) -> Result<Self> {
        if !(0.0..=90.0).contains(&gamma_deg) || !(-90.0..=90.0).contains(&eta_deg) {
            return Err(Error::config(format!(
                "polarization out of range: gamma {gamma_deg}, eta {eta_deg}"
            )));
        }
        Ok(Self { gamma_deg, eta_deg })
    }

    /// γ = 90°, η = 0°.
    pub fn vertical() -> Self {
        Self {
            gamma_deg: 90.0,
            eta_deg: 0.0,
        }
    }
}

impl Default for PolarizationState {
    fn default() -> Self {
        Self::vertical()
    }
}

/// `(sin γ·e^{jη}, cos γ)` in the (vertical, horizontal) basis.
pub fn polarization_vector(pol: &PolarizationState) -> [Complex64; 2] {
    polarization_vector_raw(pol.gamma_deg, pol.eta_deg)
}

/// [`polarization_vector`] without range checks, for orthogonal-state math
/// that steps η outside `[-90, 90]`.
pub fn polarization_vector_raw(gamma_deg: f64, eta_deg: f64) -> [Complex64; 2] {
    let (sg, cg) = gamma_deg.to_radians().sin_cos();
    [
        Complex64::from_polar(sg, eta_deg.to_radians()),
        Complex64::new(cg, 0.0),
    ]
}

/// Which sixth row to use in the dipole matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DipoleVariant {
    /// `(0, sin θ)`: both columns are orthonormal E/H triads.
    #[default]
    Corrected,
    /// `(0, −sin φ)`; breaks E ⊥ H.
    Printed,
}

/// 6×2 response of collocated ideal dipoles, rows `(Ex, Ey, Ez, Hx, Hy, Hz)`,
/// columns `(θ-polarization, φ-polarization)`.
pub fn ideal_dipole_matrix(dir: &WaveDirection, variant: DipoleVariant) -> [[f64; 2]; 6] {
    let (sp, cp) = dir.azimuth_deg.to_radians().sin_cos();
    let (st, ct) = dir.elevation_deg.to_radians().sin_cos();
    let last = match variant {
        DipoleVariant::Corrected => st,
        DipoleVariant::Printed => -sp,
    };
    [
        [cp * ct, -sp],
        [sp * ct, cp],
        [-st, 0.0],
        [-sp, -cp * ct],
        [cp, -sp * ct],
        [0.0, last],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementKind {
    IdealVa6Port,
    ScalarIsotropic,
}

/// Element positions in wavelengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub element_positions: Vec<[f64; 3]>,
    pub element_kind: ElementKind,
}

impl ArrayGeometry {
    pub fn new(element_positions: Vec<[f64; 3]>, element_kind: ElementKind) -> Result<Self> {
        if element_positions.is_empty() {
            return Err(Error::config("array needs at least one element"));
        }
        if element_positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::config("element positions must be finite"));
        }
        Ok(Self {
            element_positions,
            element_kind,
        })
    }

    pub fn single(kind: ElementKind) -> Self {
        Self {
            element_positions: vec![[0.0; 3]],
            element_kind: kind,
        }
    }

    /// `rows × cols` rectangular array in the x-y plane.
    pub fn rectangular(rows: usize, cols: usize, spacing_wl: f64, kind: ElementKind) -> Result<Self> {
        let positions = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| [c as f64 * spacing_wl, r as f64 * spacing_wl, 0.0]))
            .collect();
        Self::new(positions, kind)
    }

    pub fn n_elements(&self) -> usize {
        self.element_positions.len()
    }
}

/// Per-element field response.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementResponse {
    Ideal(DipoleVariant),
    Isotropic,
    Tabulated(TabulatedPattern),
}

/// Maps a direction and polarization to an M-port complex response.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringModel {
    geometry: ArrayGeometry,
    response: ElementResponse,
}

impl SteeringModel {
    pub fn new(geometry: ArrayGeometry) -> Self {
        let response = match geometry.element_kind {
            ElementKind::IdealVa6Port => ElementResponse::Ideal(DipoleVariant::Corrected),
            ElementKind::ScalarIsotropic => ElementResponse::Isotropic,
        };
        Self { geometry, response }
    }

    pub fn with_response(geometry: ArrayGeometry, response: ElementResponse) -> Self {
        Self { geometry, response }
    }

    pub fn single_va() -> Self {
        Self::new(ArrayGeometry::single(ElementKind::IdealVa6Port))
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn ports_per_element(&self) -> usize {
        match &self.response {
            ElementResponse::Ideal(_) => 6,
            ElementResponse::Isotropic => 1,
            ElementResponse::Tabulated(t) => t.n_ports,
        }
    }

    pub fn n_ports(&self) -> usize {
        self.ports_per_element() * self.geometry.n_elements()
    }

    /// Response of one element at the origin.
    pub fn element_response(&self, dir: &WaveDirection, pol: &PolarizationState) -> Vec<Complex64> {
        let p = polarization_vector(pol);
        match &self.response {
            ElementResponse::Ideal(variant) => ideal_dipole_matrix(dir, *variant)
                .iter()
                .map(|row| p[0] * row[0] + p[1] * row[1])
                .collect(),
            ElementResponse::Isotropic => vec![Complex64::new(1.0, 0.0)],
            ElementResponse::Tabulated(t) => t
                .interpolate(dir.azimuth_deg, dir.elevation_deg)
                .iter()
                .map(|[a, b]| p[0] * a + p[1] * b)
                .collect(),
        }
    }

    /// Spatial phase `exp(−j2π k̂·r_e)` per element.
    pub fn array_phases(&self, dir: &WaveDirection) -> Vec<Complex64> {
        let k = dir.unit_vector();
        self.geometry
            .element_positions
            .iter()
            .map(|r| {
                let path = k[0] * r[0] + k[1] * r[1] + k[2] * r[2];
                Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * path)
            })
            .collect()
    }

    /// Element blocks `phase_e · response`, concatenated element-major.
    pub fn steering_vector(&self, dir: &WaveDirection, pol: &PolarizationState) -> Vec<Complex64> {
        let element = self.element_response(dir, pol);
        self.array_phases(dir)
            .iter()
            .flat_map(|ph| element.iter().map(move |e| ph * e))
            .collect()
    }
}

/// Measured or simulated per-port pattern sampled on a rectangular (φ, θ) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPattern {
    phis: Vec<f64>,
    thetas: Vec<f64>,
    n_ports: usize,
    /// `[phi][theta][port] -> (θ-pol, φ-pol)`
    values: Vec<[Complex64; 2]>,
}

impl TabulatedPattern {
    /// Reads `phi_deg,theta_deg,port,re_theta,im_theta,re_phi,im_phi` rows
    /// (header required).
    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(Error::Parse(format!("line {}: expected 7 columns", lineno + 1)));
            }
            let num = |i: usize| -> Result<f64> {
                f[i].parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let port = f[2]
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            rows.push((
                num(0)?,
                num(1)?,
                port,
                Complex64::new(num(3)?, num(4)?),
                Complex64::new(num(5)?, num(6)?),
            ));
        }
        let mut phis: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let mut thetas: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let mut ports: Vec<usize> = rows.iter().map(|r| r.2).collect();
        for v in [&mut phis, &mut thetas] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        ports.sort_unstable();
        ports.dedup();
        if phis.len() < 2 || thetas.len() < 2 || ports.is_empty() {
            return Err(Error::Parse("pattern grid needs at least 2×2 points".into()));
        }
        if ports.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(Error::Parse("ports must be numbered 0..n".into()));
        }
        let n_ports = ports.len();
        let expected = phis.len() * thetas.len() * n_ports;
        if rows.len() != expected {
            return Err(Error::Parse(format!(
                "grid is not rectangular: {} rows, expected {expected}",
                rows.len()
            )));
        }
        let zero = Complex64::new(0.0, 0.0);
        let mut values = vec![[zero, zero]; expected];
        let mut seen = vec![false; expected];
        for (phi, theta, port, a, b) in rows {
            let i = phis.binary_search_by(|x| x.total_cmp(&phi)).unwrap();
            let j = thetas.binary_search_by(|x| x.total_cmp(&theta)).unwrap();
            let idx = (i * thetas.len() + j) * n_ports + port;
            if seen[idx] {
                return Err(Error::Parse(format!("duplicate entry at φ={phi}, θ={theta}, port {port}")));
            }
            seen[idx] = true;
            values[idx] = [a, b];
        }
        Ok(Self {
            phis,
            thetas,
            n_ports,
            values,
        })
    }

    pub fn n_ports(&self) -> usize {
        self.n_ports
    }

    fn wraps_azimuth(&self) -> bool {
        let n = self.phis.len();
        let step = self.phis[1] - self.phis[0];
        ((self.phis[n - 1] - self.phis[0]) + step - 360.0).abs() < 1e-6
    }

    /// Bilinear interpolation. θ clamps to the grid; φ wraps when the grid
    /// covers the full circle and clamps otherwise.
    pub fn interpolate(&self, phi: f64, theta: f64) -> Vec<[Complex64; 2]> {
        let (i0, i1, wp) = if self.wraps_azimuth() {
            let phi = (phi - self.phis[0]).rem_euclid(360.0) + self.phis[0];
            let n = self.phis.len();
            match self.phis.iter().rposition(|&p| p <= phi) {
                Some(i) if i + 1 < n => {
                    (i, i + 1, (phi - self.phis[i]) / (self.phis[i + 1] - self.phis[i]))
                }
                _ => {
                    let last = self.phis[n - 1];
                    let span = self.phis[0] + 360.0 - last;
                    (n - 1, 0, (phi - last) / span)
                }
            }
        } else {
            bracket(&self.phis, phi)
        };
        let (j0, j1, wt) = bracket(&self.thetas, theta);
        let nt = self.thetas.len();
        let at = |i: usize, j: usize, p: usize| self.values[(i * nt + j) * self.n_ports + p];
        (0..self.n_ports)
            .map(|p| {
                let mut out = [Complex64::new(0.0, 0.0); 2];
                for (c, o) in out.iter_mut().enumerate() {
                    *o = at(i0, j0, p)[c] * ((1.0 - wp) * (1.0 - wt))
                        + at(i1, j0, p)[c] * (wp * (1.0 - wt))
                        + at(i0, j1, p)[c] * ((1.0 - wp) * wt)
                        + at(i1, j1, p)[c] * (wp * wt);
                }
                out
            })
            .collect()
    }
}

fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    let n = axis.len();
    if x <= axis[0] {
        return (0, 1, 0.0);
    }
    if x >= axis[n - 1] {
        return (n - 2, n - 1, 1.0);
    }
    let i = axis.iter().rposition(|&a| a <= x).unwrap().min(n - 2);
    (i, i + 1, (x - axis[i]) / (axis[i + 1] - axis[i]))
}
