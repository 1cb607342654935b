//! Independent per-BS estimation of the virtual channel from its measurements.
//!
//! Any approximate minimizer of `||y - A_g A v||^2 + gamma ||v||_1` can feed the
//! fusion stage, so the solver is pluggable:
//!
//! - orthogonal matching pursuit (default, support size at most `K`),
//! - iterative shrinkage-thresholding on the Lasso objective,
//! - exhaustive least squares over every support of size `K` (small `K` only,
//!   used as a test oracle).

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{CMatrix, CVector};
use crate::error::{RapidError, Result};
use crate::measurement::MeasurementRecord;

/// Largest number of supports the exhaustive solver is allowed to visit.
const ORACLE_SUPPORT_LIMIT: f64 = 5e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    #[serde(rename = "orthogonal-matching-pursuit", alias = "omp")]
    OrthogonalMatchingPursuit,
    #[serde(rename = "iterative-shrinkage", alias = "ista")]
    IterativeShrinkage,
    #[serde(rename = "oracle-least-squares", alias = "oracle")]
    OracleLeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub solver: SolverKind,
    pub sparsity_k: usize,
    /// Lasso weight; `None` picks `N0 sqrt(2 ln(N_UE N_BS))`.
    pub gamma: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::OrthogonalMatchingPursuit,
            sparsity_k: 1,
            gamma: None,
            max_iters: 500,
            tol: 1e-9,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sparsity_k == 0 {
            return Err(RapidError::Config("sparsity_k must be at least 1".into()));
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(RapidError::Config(format!("gamma must be >= 0, got {g}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(RapidError::Config(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(RapidError::Config("max_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn gamma_for(&self, record: &MeasurementRecord) -> f64 {
        self.gamma
            .unwrap_or_else(|| record.n0 * (2.0 * (record.num_columns() as f64).ln()).sqrt())
    }
}

/// Estimated virtual channel `V_hat` (`N_BS x N_UE`) and solver diagnostics.
#[derive(Debug, Clone)]
pub struct VirtualChannelEstimate {
    pub v: CMatrix,
    pub residual_norm: f64,
    pub iterations: usize,
    /// `false` when the iteration budget ran out first.
    pub converged: bool,
    pub solver: SolverKind,
    /// Lasso objective after each shrinkage iteration (empty for other solvers).
    pub objective_trace: Vec<f64>,
}

impl VirtualChannelEstimate {
    pub fn support(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for nb in 0..self.v.nrows() {
            for nu in 0..self.v.ncols() {
                if self.v[(nb, nu)] != Complex64::new(0.0, 0.0) {
                    out.push((nb, nu));
                }
            }
        }
        out
    }

    /// Largest-magnitude entry, ties to the lexicographically smaller `(n_b, n_u)`.
    pub fn argmax(&self) -> (usize, usize) {
        argmax_magnitude(&self.v)
    }
}

/// Position of the largest `|V|`, ties resolved to the smaller `(n_b, n_u)`.
pub fn argmax_magnitude(v: &CMatrix) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_mag = f64::NEG_INFINITY;
    for nb in 0..v.nrows() {
        for nu in 0..v.ncols() {
            let m = v[(nb, nu)].norm();
            if m > best_mag {
                best_mag = m;
                best = (nb, nu);
            }
        }
    }
    best
}

pub fn recover(record: &MeasurementRecord, cfg: &RecoveryConfig) -> Result<VirtualChannelEstimate> {
    cfg.validate()?;
    if record.y.len() != record.rows.len() {
        return Err(RapidError::Dimension(format!(
            "{} measurements but {} sensing rows",
            record.y.len(),
            record.rows.len()
        )));
    }
    let y_norm = record.y.norm();
    if y_norm == 0.0 || record.gain == 0.0 {
        return Ok(VirtualChannelEstimate {
            v: CMatrix::zeros(record.n_bs, record.n_ue),
            residual_norm: y_norm,
            iterations: 0,
            converged: true,
            solver: cfg.solver,
            objective_trace: Vec::new(),
        });
    }
    let est = match cfg.solver {
        SolverKind::OrthogonalMatchingPursuit => omp(record, cfg),
        SolverKind::IterativeShrinkage => ista(record, cfg),
        SolverKind::OracleLeastSquares => oracle_least_squares(record, cfg)?,
    };
    if !est.residual_norm.is_finite() {
        return Err(RapidError::Numeric(
            "recovery residual is not finite".into(),
        ));
    }
    Ok(est)
}

fn to_matrix(record: &MeasurementRecord, v: &CVector) -> CMatrix {
    CMatrix::from_column_slice(record.n_bs, record.n_ue, v.as_slice())
}

fn residual(record: &MeasurementRecord, v: &CVector) -> CVector {
    &record.y - record.apply(v) * Complex64::from(record.gain)
}

/// Column order used for tie-breaking: `(n_b, n_u)` lexicographic.
fn lexicographic_columns(record: &MeasurementRecord) -> impl Iterator<Item = usize> + '_ {
    (0..record.n_bs).flat_map(move |nb| (0..record.n_ue).map(move |nu| nu * record.n_bs + nb))
}

/// Dense columns `A_S` of the sensing matrix.
fn support_columns(record: &MeasurementRecord, support: &[usize]) -> CMatrix {
    let mut m = CMatrix::zeros(record.num_measurements(), support.len());
    for (i, row) in record.rows.iter().enumerate() {
        for &(c, a) in &row.entries {
            if let Some(k) = support.iter().position(|&s| s == c) {
                m[(i, k)] = a;
            }
        }
    }
    m
}

fn least_squares(a: &CMatrix, y: &CVector) -> CVector {
    let svd = a.clone().svd(true, true);
    svd.solve(y, 1e-12)
        .unwrap_or_else(|_| CVector::zeros(a.ncols()))
}

fn omp(record: &MeasurementRecord, cfg: &RecoveryConfig) -> VirtualChannelEstimate {
    let norms = record.column_norms();
    let y_norm = record.y.norm();
    let mut support: Vec<usize> = Vec::new();
    let mut coeffs = CVector::zeros(0);
    let mut r = record.y.clone();
    let mut converged = false;
    let mut iterations = 0;

    while support.len() < cfg.sparsity_k {
        if r.norm() <= cfg.tol * y_norm {
            converged = true;
            break;
        }
        let corr = record.apply_adjoint(&r);
        let mut best: Option<(usize, f64)> = None;
        for c in lexicographic_columns(record) {
            if norms[c] == 0.0 || support.contains(&c) {
                continue;
            }
            let score = corr[c].norm() / norms[c];
            let better = match best {
                None => true,
                Some((_, s)) => score > s * (1.0 + 1e-12),
            };
            if better {
                best = Some((c, score));
            }
        }
        let Some((col, score)) = best else { break };
        if score <= 1e-14 * y_norm {
            break;
        }
        support.push(col);
        iterations += 1;
        let a_s = support_columns(record, &support) * Complex64::from(record.gain);
        coeffs = least_squares(&a_s, &record.y);
        r = &record.y - &a_s * &coeffs;
    }
    if support.len() == cfg.sparsity_k || r.norm() <= cfg.tol * y_norm {
        converged = true;
    }

    let mut v = CVector::zeros(record.num_columns());
    for (k, &c) in support.iter().enumerate() {
        v[c] = coeffs[k];
    }
    VirtualChannelEstimate {
        v: to_matrix(record, &v),
        residual_norm: r.norm(),
        iterations,
        converged,
        solver: SolverKind::OrthogonalMatchingPursuit,
        objective_trace: Vec::new(),
    }
}

/// Largest eigenvalue of `A^H A` by power iteration from a fixed start.
fn spectral_norm_sq(record: &MeasurementRecord) -> f64 {
    let n = record.num_columns();
    let mut x = CVector::from_element(n, Complex64::new(1.0 / (n as f64).sqrt(), 0.0));
    let mut lambda = 0.0;
    for _ in 0..200 {
        let z = record.apply_adjoint(&record.apply(&x));
        let nz = z.norm();
        if nz == 0.0 {
            return 0.0;
        }
        let next = nz;
        x = z / Complex64::from(nz);
        if (next - lambda).abs() <= 1e-12 * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda
}

fn soft_threshold(z: Complex64, tau: f64) -> Complex64 {
    let m = z.norm();
    if m <= tau {
        Complex64::new(0.0, 0.0)
    } else {
        z * ((m - tau) / m)
    }
}

fn lasso_objective(record: &MeasurementRecord, v: &CVector, gamma: f64) -> f64 {
    residual(record, v).norm_squared() + gamma * v.iter().map(|z| z.norm()).sum::<f64>()
}

fn ista(record: &MeasurementRecord, cfg: &RecoveryConfig) -> VirtualChannelEstimate {
    let gamma = cfg.gamma_for(record);
    let g = record.gain;
    // 1% headroom on the Lipschitz constant keeps the step strictly stable
    let lipschitz = 2.0 * g * g * spectral_norm_sq(record) * 1.01;
    let step = 1.0 / lipschitz;
    let n = record.num_columns();
    let mut v = CVector::zeros(n);
    let mut trace = vec![lasso_objective(record, &v, gamma)];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        let r = residual(record, &v);
        let grad = record.apply_adjoint(&r) * Complex64::from(-2.0 * g);
        let next = CVector::from_fn(n, |i, _| {
            soft_threshold(v[i] - grad[i] * step, step * gamma)
        });
        let change = (&next - &v).norm();
        let scale = next.norm().max(1e-300);
        v = next;
        trace.push(lasso_objective(record, &v, gamma));
        if change <= cfg.tol * scale {
            converged = true;
            break;
        }
    }
    let residual_norm = residual(record, &v).norm();
    VirtualChannelEstimate {
        v: to_matrix(record, &v),
        residual_norm,
        iterations,
        converged,
        solver: SolverKind::IterativeShrinkage,
        objective_trace: trace,
    }
}

fn n_choose_k(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exhaustive least squares over every support of exactly `K` columns.
fn oracle_least_squares(
    record: &MeasurementRecord,
    cfg: &RecoveryConfig,
) -> Result<VirtualChannelEstimate> {
    let n = record.num_columns();
    let k = cfg.sparsity_k.min(n);
    if n_choose_k(n, k) > ORACLE_SUPPORT_LIMIT {
        return Err(RapidError::Config(format!(
            "oracle least squares over C({n}, {k}) supports is too large"
        )));
    }
    let a = record.dense() * Complex64::from(record.gain);
    let gram = a.adjoint() * &a;
    let corr = a.adjoint() * &record.y;
    let y_sq = record.y.norm_squared();
    // candidates ordered lexicographically by (n_b, n_u)
    let order: Vec<usize> = lexicographic_columns(record).collect();

    let mut best: Option<(f64, Vec<usize>, CVector)> = None;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let cols: Vec<usize> = idx.iter().map(|&i| order[i]).collect();
        let g = DMatrix::from_fn(k, k, |i, j| gram[(cols[i], cols[j])]);
        let b = DVector::from_fn(k, |i, _| corr[cols[i]]);
        if let Some(chol) = Cholesky::new(g) {
            let x = chol.solve(&b);
            let fit: f64 = b.dotc(&x).re;
            let res = (y_sq - fit).max(0.0);
            let better = match &best {
                None => true,
                Some((r, _, _)) => res < *r - 1e-12 * y_sq.max(1e-300),
            };
            if better {
                best = Some((res, cols, x));
            }
        }
        // next combination in lexicographic order
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }

    let mut v = CVector::zeros(n);
    if let Some((_, cols, x)) = best {
        for (c, z) in cols.into_iter().zip(x.iter()) {
            v[c] = *z;
        }
    }
    let residual_norm = residual(record, &v).norm();
    Ok(VirtualChannelEstimate {
        v: to_matrix(record, &v),
        residual_norm,
        iterations: 1,
        converged: true,
        solver: SolverKind::OracleLeastSquares,
        objective_trace: Vec::new(),
    })
}

/// One virtual-channel entry passed to a peer BS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedEntry {
    /// Codebook row `|n_b|`.
    pub row: usize,
    pub n_u: usize,
    pub value: Complex64,
}

/// The `n_d` largest-magnitude nonzero entries of `v` restricted to rows where
/// `row_mask` is set. Ties go to the smaller `(n_b, n_u)`.
pub fn dominant_entries(v: &CMatrix, n_d: usize, row_mask: &[bool]) -> Vec<SharedEntry> {
    let mut entries: Vec<SharedEntry> = Vec::new();
    for nb in 0..v.nrows() {
        if !row_mask.get(nb).copied().unwrap_or(false) {
            continue;
        }
        for nu in 0..v.ncols() {
            let value = v[(nb, nu)];
            if value.norm() > 0.0 {
                entries.push(SharedEntry {
                    row: nb,
                    n_u: nu,
                    value,
                });
            }
        }
    }
    entries.sort_by(|a, b| {
        b.value
            .norm()
            .total_cmp(&a.value.norm())
            .then((a.row, a.n_u).cmp(&(b.row, b.n_u)))
    });
    entries.truncate(n_d);
    entries
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{project_virtual, ChannelMatrix, Codebooks, Path};
    use crate::geometry::candidate_angle;
    use crate::measurement::{draw_schedule, exhaustive_schedule, measure, Terminals};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn terminals() -> Terminals {
        Terminals {
            num_bs: 1,
            n_ue: 16,
            r_ue: 4,
            n_bs: 32,
            r_bs: 8,
        }
    }

    fn on_grid(nb: usize, nu: usize, alpha: Complex64) -> ChannelMatrix {
        let path = Path {
            alpha,
            aoa_local: candidate_angle(nb, 32, 1).unwrap(),
            aod_local: candidate_angle(nu, 16, -1).unwrap(),
        };
        ChannelMatrix::from_paths(path, vec![], 10.0, 32, 16)
    }

    #[test]
    fn zero_measurements_give_zero_estimate() {
        let cb = Codebooks::new(16, 32);
        let sched = draw_schedule(3, 10, &terminals()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = measure(&CMatrix::zeros(32, 16), &sched, 0, &cb, 1.0, 0.0, &mut rng).unwrap();
        for solver in [
            SolverKind::OrthogonalMatchingPursuit,
            SolverKind::IterativeShrinkage,
            SolverKind::OracleLeastSquares,
        ] {
            let cfg = RecoveryConfig {
                solver,
                ..Default::default()
            };
            let est = recover(&rec, &cfg).unwrap();
            assert_eq!(est.v.norm(), 0.0);
        }
    }

    #[test]
    fn omp_recovers_single_on_grid_path_exactly() {
        let cb = Codebooks::new(16, 32);
        let alpha = Complex64::new(0.01, -0.02);
        let ch = on_grid(7, 3, alpha);
        let sched = exhaustive_schedule(&terminals()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = measure(&ch.h, &sched, 0, &cb, 1.0, 0.0, &mut rng).unwrap();
        let est = recover(&rec, &RecoveryConfig::default()).unwrap();
        assert_eq!(est.support(), vec![(7, 3)]);
        assert!((est.v[(7, 3)] - alpha).norm() < 1e-6 * alpha.norm());
        assert!(est.converged);
    }

    #[test]
    fn residual_never_exceeds_zero_estimate() {
        let cb = Codebooks::new(16, 32);
        let sched = draw_schedule(8, 24, &terminals()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = on_grid(2, 9, Complex64::new(0.05, 0.0));
        let rec = measure(&ch.h, &sched, 0, &cb, 1.0, 1e-3, &mut rng).unwrap();
        for solver in [
            SolverKind::OrthogonalMatchingPursuit,
            SolverKind::IterativeShrinkage,
        ] {
            let cfg = RecoveryConfig {
                solver,
                sparsity_k: 3,
                ..Default::default()
            };
            let est = recover(&rec, &cfg).unwrap();
            assert!(est.residual_norm <= rec.y.norm() + 1e-12);
        }
    }

    #[test]
    fn ista_objective_is_monotone() {
        let cb = Codebooks::new(16, 32);
        let sched = draw_schedule(8, 30, &terminals()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ch = on_grid(20, 1, Complex64::new(0.02, 0.01));
        let rec = measure(&ch.h, &sched, 0, &cb, 1.0, 1e-4, &mut rng).unwrap();
        let cfg = RecoveryConfig {
            solver: SolverKind::IterativeShrinkage,
            max_iters: 300,
            ..Default::default()
        };
        let est = recover(&rec, &cfg).unwrap();
        assert!(est.objective_trace.len() > 2);
        for w in est.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = RecoveryConfig {
            sparsity_k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RecoveryConfig {
            tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RecoveryConfig {
            gamma: Some(-1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn solver_names_parse() {
        let k: SolverKind = serde_json::from_str("\"omp\"").unwrap();
        assert_eq!(k, SolverKind::OrthogonalMatchingPursuit);
        let k: SolverKind = serde_json::from_str("\"iterative-shrinkage\"").unwrap();
        assert_eq!(k, SolverKind::IterativeShrinkage);
        let k: SolverKind = serde_json::from_str("\"oracle-least-squares\"").unwrap();
        assert_eq!(k, SolverKind::OracleLeastSquares);
    }

    #[test]
    fn dominant_entries_rules() {
        let mut v = CMatrix::zeros(4, 3);
        v[(0, 0)] = Complex64::new(1.0, 0.0);
        v[(1, 2)] = Complex64::new(0.0, 1.0); // ties with (0,0)
        v[(2, 1)] = Complex64::new(3.0, 0.0);
        v[(3, 0)] = Complex64::new(5.0, 0.0);
        let all = [true; 4];
        let top = dominant_entries(&v, 3, &all);
        let keys: Vec<_> = top.iter().map(|e| (e.row, e.n_u)).collect();
        assert_eq!(keys, vec![(3, 0), (2, 1), (0, 0)]);
        // masked row 3 disappears; fewer than n_d survive
        let mask = [true, true, true, false];
        let top = dominant_entries(&v, 10, &mask);
        assert_eq!(top.len(), 3);
        // full budget equals the masked matrix
        let full = dominant_entries(&v, 12, &all);
        assert_eq!(full.len(), 4);
        for e in full {
            assert_eq!(v[(e.row, e.n_u)], e.value);
        }
    }

    #[test]
    fn project_then_recover_on_grid_with_rdb() {
        let cb = Codebooks::new(16, 32);
        let ch = on_grid(11, 6, Complex64::new(0.3, 0.1));
        let v = project_virtual(&ch.h, &cb).unwrap();
        assert_eq!(argmax_magnitude(v.matrix()), (11, 6));
        let sched = draw_schedule(21, 160, &terminals()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = measure(&ch.h, &sched, 0, &cb, 1.0, 0.0, &mut rng).unwrap();
        let est = recover(&rec, &RecoveryConfig::default()).unwrap();
        assert_eq!(est.argmax(), (11, 6));
    }
}
