//! Scan lattices.

use crate::error::Result;
use crate::model::{GridSpec, StagePosition};

// Absorbs float error in width / pitch so that e.g. 0.3 / 0.1 still yields 4 columns.
const LATTICE_EPS: f64 = 1e-9;

fn lattice_count(extent: f64, pitch: f64) -> usize {
    (extent / pitch + LATTICE_EPS).floor() as usize + 1
}

/// Number of lattice points per axis, `(columns, rows)`.
pub fn grid_dimensions(spec: &GridSpec) -> Result<(usize, usize)> {
    spec.validate()?;
    Ok((
        lattice_count(spec.width, spec.pitch),
        lattice_count(spec.height, spec.pitch),
    ))
}

/// All lattice points of `spec` in serpentine order: row 0 left to right,
/// row 1 right to left, and so on. Both borders are included.
pub fn generate_grid(spec: &GridSpec) -> Result<Vec<StagePosition>> {
    let (cols, rows) = grid_dimensions(spec)?;
    let mut out = Vec::with_capacity(cols * rows);
    for j in 0..rows {
        let y = spec.origin.y + j as f64 * spec.pitch;
        let push = |i: usize, out: &mut Vec<StagePosition>| {
            out.push(StagePosition::new(
                spec.origin.x + i as f64 * spec.pitch,
                y,
                spec.z,
            ));
        };
        if j % 2 == 0 {
            (0..cols).for_each(|i| push(i, &mut out));
        } else {
            (0..cols).rev().for_each(|i| push(i, &mut out));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn spec(width: f64, height: f64, pitch: f64) -> GridSpec {
        GridSpec {
            origin: StagePosition::new(10.0, 20.0, 0.0),
            width,
            height,
            pitch,
            z: 5.0,
        }
    }

    #[test]
    fn inclusive_counts() {
        assert_eq!(generate_grid(&spec(4.0, 3.0, 1.0)).unwrap().len(), 20);
        assert_eq!(generate_grid(&spec(1.0, 1.0, 0.5)).unwrap().len(), 9);
        assert_eq!(generate_grid(&spec(0.0, 0.0, 1.0)).unwrap().len(), 1);
        assert_eq!(generate_grid(&spec(0.3, 0.0, 0.1)).unwrap().len(), 4);
    }

    #[test]
    fn invalid_pitch() {
        assert!(matches!(
            generate_grid(&spec(1.0, 1.0, 0.0)),
            Err(Error::Validation(_))
        ));
        assert!(generate_grid(&spec(1.0, 1.0, -1.0)).is_err());
        assert!(generate_grid(&spec(1.0, 1.0, f64::NAN)).is_err());
        assert!(generate_grid(&spec(-1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn serpentine_rows_alternate() {
        let pts = generate_grid(&spec(2.0, 1.0, 1.0)).unwrap();
        let xs: Vec<f64> = pts.iter().map(|p| p.x - 10.0).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 2.0, 1.0, 0.0]);
        assert!(pts.iter().all(|p| p.z == 5.0));
        // Consecutive points are always one pitch apart.
        for w in pts.windows(2) {
            assert!((w[0].chebyshev_distance(&w[1]) - 1.0).abs() < 1e-12);
        }
    }
}
