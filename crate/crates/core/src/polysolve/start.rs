use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::SquareSystem;
use crate::error::{Error, Result};

/// Largest number of start points (product of degrees) accepted.
pub const MAX_PATHS: u64 = 1_000_000;

/// Total-degree start system `g_k(x) = x_k^{d_k} - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StartSystem {
    degrees: Vec<u32>,
}

impl StartSystem {
    pub fn new(degrees: &[u32]) -> Result<Self> {
        if degrees.is_empty() {
            return Err(Error::invalid("start system needs at least one equation"));
        }
        if let Some(d) = degrees.iter().find(|&&d| d == 0) {
            return Err(Error::invalid(format!("equation degree must be >= 1, got {d}")));
        }
        bezout_number(degrees)?;
        Ok(StartSystem {
            degrees: degrees.to_vec(),
        })
    }
}

impl SquareSystem for StartSystem {
    fn dim(&self) -> usize {
        self.degrees.len()
    }

    fn degrees(&self) -> Vec<u32> {
        self.degrees.clone()
    }

    fn eval_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        for ((o, &xi), &d) in out.iter_mut().zip(x).zip(&self.degrees) {
            *o = xi.powu(d) - 1.0;
        }
    }

    fn jacobian_into(&self, x: &[Complex64], out: &mut DMatrix<Complex64>) {
        out.fill(Complex64::new(0.0, 0.0));
        for (k, (&xk, &d)) in x.iter().zip(&self.degrees).enumerate() {
            out[(k, k)] = xk.powu(d - 1) * d as f64;
        }
    }
}

/// Product of the degrees, refusing anything above [`MAX_PATHS`].
pub fn bezout_number(degrees: &[u32]) -> Result<u64> {
    let mut total: u64 = 1;
    for &d in degrees {
        total = total
            .checked_mul(d as u64)
            .filter(|&t| t <= MAX_PATHS)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "Bezout number of degrees {degrees:?} exceeds {MAX_PATHS}"
                ))
            })?;
    }
    Ok(total)
}

/// The start system for `degrees` and all of its roots. Coordinate `k` of the
/// roots ranges over the `d_k`-th roots of unity; the first coordinate varies
/// slowest.
pub fn start_system(degrees: &[u32]) -> Result<(StartSystem, Vec<Vec<Complex64>>)> {
    let system = StartSystem::new(degrees)?;
    let unity: Vec<Vec<Complex64>> = degrees
        .iter()
        .map(|&d| {
            (0..d)
                .map(|j| {
                    if j == 0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::from_polar(1.0, TAU * j as f64 / d as f64)
                    }
                })
                .collect()
        })
        .collect();
    let mut points: Vec<Vec<Complex64>> = vec![Vec::with_capacity(degrees.len())];
    for roots in &unity {
        points = points
            .into_iter()
            .flat_map(|p| {
                roots.iter().map(move |r| {
                    let mut q = p.clone();
                    q.push(*r);
                    q
                })
            })
            .collect();
    }
    Ok((system, points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_start_systems() {
        let (_, pts) = start_system(&[1]).unwrap();
        assert_eq!(pts, vec![vec![Complex64::new(1.0, 0.0)]]);

        let (_, pts) = start_system(&[1, 2]).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0], vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]);
        assert!((pts[1][1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);

        let (_, pts) = start_system(&[1, 2, 3]).unwrap();
        assert_eq!(pts.len(), 6);
    }

    #[test]
    fn start_points_are_nonsingular_roots() {
        let degrees = [1, 2, 3, 4];
        let (sys, pts) = start_system(&degrees).unwrap();
        assert_eq!(pts.len(), 24);
        let mut f = vec![Complex64::new(0.0, 0.0); 4];
        let mut j = DMatrix::zeros(4, 4);
        for p in &pts {
            sys.eval_into(p, &mut f);
            assert!(f.iter().all(|v| v.norm() < 1e-14));
            sys.jacobian_into(p, &mut j);
            assert!(j.determinant().norm() > 1.0 - 1e-12);
        }
    }

    #[test]
    fn refuses_bad_degrees() {
        assert!(start_system(&[]).is_err());
        assert!(start_system(&[1, 0]).is_err());
        assert!(start_system(&[1000, 1000, 2]).is_err());
        assert_eq!(bezout_number(&[1, 2, 3, 4, 5, 6]).unwrap(), 720);
    }
}
