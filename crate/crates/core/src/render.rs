//! 8-bit binary graymap (PGM P5) rendering.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    #[default]
    Linear,
    /// Natural log before min-max normalization. Non-positive cells take the
    /// smallest positive value present.
    Log,
}

/// Min-max normalized bytes, row-major, `round(255·t)`; a constant grid maps
/// to 128 everywhere.
pub fn normalize_bytes(grid: ArrayView2<f64>, scaling: Scaling) -> Result<Vec<u8>> {
    if grid.is_empty() {
        return Err(Error::input("cannot render an empty grid"));
    }
    if grid.iter().any(|v| v.is_nan()) {
        return Err(Error::input("grid contains NaN"));
    }
    let values: Vec<f64> = match scaling {
        Scaling::Linear => grid.iter().copied().collect(),
        Scaling::Log => {
            let floor = grid.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
            if floor.is_infinite() {
                return Ok(vec![128; grid.len()]);
            }
            grid.iter().map(|&v| v.max(floor).ln()).collect()
        }
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(vec![128; values.len()]);
    }
    Ok(values
        .iter()
        .map(|v| (255.0 * (v - lo) / (hi - lo)).round() as u8)
        .collect())
}

/// Complete P5 file. `comment` lines are written after the magic number.
pub fn render_pgm(grid: ArrayView2<f64>, scaling: Scaling, comment: &[String]) -> Result<Vec<u8>> {
    let bytes = normalize_bytes(grid, scaling)?;
    let (rows, cols) = grid.dim();
    let mut out = b"P5\n".to_vec();
    for line in comment {
        for part in line.lines() {
            out.extend_from_slice(format!("# {part}\n").as_bytes());
        }
    }
    out.extend_from_slice(format!("{cols} {rows}\n255\n").as_bytes());
    out.extend_from_slice(&bytes);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};

    #[test]
    fn linear_two_by_two() {
        let g = arr2(&[[0.0, 1.0], [2.0, 3.0]]);
        assert_eq!(normalize_bytes(g.view(), Scaling::Linear).unwrap(), vec![0, 85, 170, 255]);
        let file = render_pgm(g.view(), Scaling::Linear, &["axes x".into()]).unwrap();
        assert_eq!(&file[..], b"P5\n# axes x\n2 2\n255\n\x00\x55\xaa\xff");
    }

    #[test]
    fn constant_is_mid_gray() {
        let g = Array2::from_elem((3, 4), 7.5);
        assert!(normalize_bytes(g.view(), Scaling::Linear).unwrap().iter().all(|&b| b == 128));
        assert!(normalize_bytes(g.view(), Scaling::Log).unwrap().iter().all(|&b| b == 128));
    }

    #[test]
    fn log_decades_are_evenly_spaced() {
        let g = arr2(&[[1.0, 10.0, 100.0]]);
        let b = normalize_bytes(g.view(), Scaling::Log).unwrap();
        let d1 = b[1] as i32 - b[0] as i32;
        let d2 = b[2] as i32 - b[1] as i32;
        assert!((d1 - d2).abs() <= 1, "{b:?}");
    }

    #[test]
    fn empty_grid_rejected() {
        let g = Array2::<f64>::zeros((0, 3));
        assert!(matches!(render_pgm(g.view(), Scaling::Linear, &[]), Err(Error::InvalidInput(_))));
    }
}
