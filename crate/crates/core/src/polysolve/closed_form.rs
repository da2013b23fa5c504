use nalgebra::DVector;
use num_complex::Complex64;

use super::{Root, RootStatus};
use crate::error::{Error, Result};
use crate::powersum::PowerSumSystem;

const ZERO_TOL: f64 = 1e-12;
const POLISH_ITERS: usize = 4;

/// Direct solution for one or two unknowns.
///
/// With one unknown the degree-1 equation is linear. With two, the degree-1
/// equation is solved for the variable with the larger coefficient and
/// substituted into the quadratic, which is then solved over the complex
/// numbers.
pub fn closed_form_small(system: &PowerSumSystem) -> Result<Vec<Root>> {
    let n = system.n();
    if !(1..=2).contains(&n) {
        return Err(Error::invalid(format!(
            "closed form is available for n <= 2, got n = {n}"
        )));
    }
    let a = system.a();
    let c = system.constants();
    let col_sums: Vec<f64> = (0..n).map(|j| a.column(j).sum()).collect();
    let col_abs: Vec<f64> = (0..n).map(|j| a.column(j).abs().sum()).collect();
    let linear_vanishes = col_sums
        .iter()
        .zip(&col_abs)
        .all(|(s, t)| s.abs() <= ZERO_TOL * t);
    if linear_vanishes {
        let y_scale = if n >= 2 {
            (c[1] * system.m() as f64).sqrt()
        } else {
            c[0].abs()
        };
        return if c[0].abs() <= ZERO_TOL * y_scale.max(1.0) {
            Err(Error::Degenerate)
        } else {
            Err(Error::Inconsistent)
        };
    }

    let points: Vec<Vec<Complex64>> = if n == 1 {
        vec![vec![Complex64::new(c[0] / col_sums[0], 0.0)]]
    } else {
        let (p, q) = if col_sums[0].abs() >= col_sums[1].abs() {
            (0, 1)
        } else {
            (1, 0)
        };
        // x = u + v * x_q
        let mut u = DVector::zeros(2);
        let mut v = DVector::zeros(2);
        u[p] = c[0] / col_sums[p];
        v[p] = -col_sums[q] / col_sums[p];
        v[q] = 1.0;
        let au = a * &u;
        let av = a * &v;
        let qa = av.norm_squared();
        let qb = 2.0 * au.dot(&av);
        let qc = au.norm_squared() - c[1];
        quadratic_roots(qa, qb, qc)
            .into_iter()
            .map(|t| {
                vec![
                    Complex64::new(u[0], 0.0) + t * v[0],
                    Complex64::new(u[1], 0.0) + t * v[1],
                ]
            })
            .collect()
    };

    let mut roots = Vec::with_capacity(points.len());
    for mut x in points {
        let residual = super::polish(system, &mut x, POLISH_ITERS);
        if roots
            .iter()
            .any(|r: &Root| super::relative_distance(&r.point, &x) <= 1e-12)
        {
            continue;
        }
        let path_index = roots.len();
        roots.push(Root {
            point: x,
            residual,
            status: RootStatus::Refined,
            path_index,
        });
    }
    Ok(roots)
}

/// Roots of `a t^2 + b t + c` with real coefficients, avoiding cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<Complex64> {
    if a == 0.0 {
        return if b == 0.0 {
            Vec::new()
        } else {
            vec![Complex64::new(-c / b, 0.0)]
        };
    }
    let disc = Complex64::new(b * b - 4.0 * a * c, 0.0).sqrt();
    let sign = if b >= 0.0 { 1.0 } else { -1.0 };
    let q = -(Complex64::new(b, 0.0) + disc * sign) / 2.0;
    if q.norm() == 0.0 {
        return vec![Complex64::new(0.0, 0.0); 2];
    }
    vec![q / a, Complex64::new(c, 0.0) / q]
}
