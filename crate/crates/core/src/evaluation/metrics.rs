use nalgebra::Cholesky;
use num_complex::Complex64;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::channel::{CMatrix, Codebooks};
use crate::error::{RapidError, Result};

/// `log2 det(I + (P/N0) W^H H F F^H H^H W)` in bits/s/Hz.
pub fn achievable_rate(
    h: &CMatrix,
    w_d: &CMatrix,
    f_d: &CMatrix,
    power: f64,
    n0: f64,
) -> Result<f64> {
    if w_d.nrows() != h.nrows() || f_d.nrows() != h.ncols() || w_d.ncols() != f_d.ncols() {
        return Err(RapidError::Dimension(format!(
            "H is {}x{}, W_d is {}x{}, F_d is {}x{}",
            h.nrows(),
            h.ncols(),
            w_d.nrows(),
            w_d.ncols(),
            f_d.nrows(),
            f_d.ncols()
        )));
    }
    if !(n0 > 0.0) || !(power >= 0.0) {
        return Err(RapidError::Domain(format!(
            "need P >= 0 and N0 > 0, got {power}, {n0}"
        )));
    }
    let g = w_d.adjoint() * h * f_d;
    let k = g.nrows();
    let gram = &g * g.adjoint() * Complex64::from(power / n0);
    let m = CMatrix::identity(k, k) + gram;
    let chol = Cholesky::new(m)
        .ok_or_else(|| RapidError::Numeric("rate matrix is not positive definite".into()))?;
    let l = chol.l();
    let ln_det: f64 = (0..k).map(|i| 2.0 * l[(i, i)].re.ln()).sum();
    let rate = ln_det / std::f64::consts::LN_2;
    if !rate.is_finite() {
        return Err(RapidError::Numeric("rate is not finite".into()));
    }
    Ok(rate.max(0.0))
}

/// Rate on the true channel when the link uses candidate pairs `(n_b, n_u)`.
pub fn rate_for_pairs(
    h: &CMatrix,
    pairs: &[(usize, usize)],
    codebooks: &Codebooks,
    power: f64,
    n0: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let bs: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let ue: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    achievable_rate(
        h,
        &codebooks.bs.select(&bs),
        &codebooks.ue.select(&ue),
        power,
        n0,
    )
}

/// Number of links whose rate is strictly above `r_th`.
pub fn coverage_counts(rates: &[f64], r_th: f64) -> usize {
    rates.iter().filter(|&&r| r > r_th).count()
}

/// Sample mean and half-width of the normal 95% interval.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Paired t statistics of `treated - control`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub mean_difference: f64,
    pub t: f64,
    /// One-sided p-value for `mean(treated) > mean(control)`.
    pub p_greater: f64,
    /// Two-sided p-value for a nonzero difference.
    pub p_two_sided: f64,
}

pub fn paired_t_test(treated: &[f64], control: &[f64]) -> Result<PairedTest> {
    if treated.len() != control.len() || treated.len() < 2 {
        return Err(RapidError::Dimension(format!(
            "paired test needs two equal samples of at least 2, got {} and {}",
            treated.len(),
            control.len()
        )));
    }
    let d: Vec<f64> = treated.iter().zip(control).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        let p = if mean > 0.0 { 0.0 } else { 1.0 };
        return Ok(PairedTest {
            mean_difference: mean,
            t: if mean == 0.0 {
                0.0
            } else {
                mean.signum() * f64::INFINITY
            },
            p_greater: p,
            p_two_sided: if mean == 0.0 { 1.0 } else { 0.0 },
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| RapidError::Numeric(e.to_string()))?;
    Ok(PairedTest {
        mean_difference: mean,
        t,
        p_greater: 1.0 - dist.cdf(t),
        p_two_sided: 2.0 * (1.0 - dist.cdf(t.abs())),
    })
}
