//! Ray-intercept probabilistic fusion of per-BS virtual channel estimates.
//!
//! A BS `b` scores each of its candidate pairs `(n_b, n_u)` by asking, for every
//! peer `p`, how likely it is that the UE sits on one of the intercepts of the
//! `n_b` ray with the rays of `p`. Each hypothesis fixes the UE position and, via
//! the UE beam `n_u`, the UE orientation, which in turn predicts the UE beam that
//! `p` should have seen. The peer estimate is read off that prediction.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::channel::{steering, CMatrix, Codebook, Codebooks};
use crate::error::{RapidError, Result};
use crate::geometry::{BipolarIndex, ConditionalFrame, InterceptTable, NetworkDeployment};
use crate::recovery::{dominant_entries, SharedEntry};

/// Path-loss exponent and the variance of the estimated coefficients, which
/// plays the role of the noise power in every posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub beta: f64,
    pub variance: f64,
}

/// Complex normal density of `alpha_hat` when the path at range `r` exists:
/// variance `r^-beta + var`.
pub fn coefficient_likelihood(alpha_hat: Complex64, r: f64, beta: f64, var: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(RapidError::Domain(format!(
            "range must be positive, got {r}"
        )));
    }
    if !(var >= 0.0) {
        return Err(RapidError::Domain(format!(
            "variance must be >= 0, got {var}"
        )));
    }
    let total = r.powf(-beta) + var;
    if !(total > 0.0) {
        return Err(RapidError::Domain("total variance is zero".into()));
    }
    Ok((-alpha_hat.norm_sqr() / total).exp() / (std::f64::consts::PI * total))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log-odds against the path, `ln(s/N0 + 1) - (|a|^2/N0) * s/(s + N0)` with
/// `s = r^-beta`.
fn posterior_log_odds(alpha_sq: f64, r: f64, beta: f64, n0: f64) -> f64 {
    let ln_snr = -beta * r.ln() - n0.ln();
    // s / (s + N0) = 1 / (1 + N0/s)
    let shrink = 1.0 / (1.0 + (-ln_snr).exp());
    softplus(ln_snr) - (alpha_sq / n0) * shrink
}

/// Natural log of [`radial_posterior`].
pub fn log_radial_posterior(alpha_hat: Complex64, r: f64, beta: f64, n0: f64) -> f64 {
    -softplus(posterior_log_odds(alpha_hat.norm_sqr(), r, beta, n0))
}

/// Posterior probability that a path at range `r` produced `alpha_hat`:
/// `1 / (1 + (r^-beta/N0 + 1) exp(-(|a|^2/N0) / (1 + N0 r^beta)))`.
pub fn radial_posterior(alpha_hat: Complex64, r: f64, beta: f64, n0: f64) -> f64 {
    let l = posterior_log_odds(alpha_hat.norm_sqr(), r, beta, n0);
    if l > 0.0 {
        let e = (-l).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + l.exp())
    }
}

/// Both posteriors together: the two ranges describe one UE position.
pub fn joint_pair_probability(
    alpha_b: Complex64,
    alpha_p: Complex64,
    r_b: f64,
    r_p: f64,
    beta: f64,
    n0: f64,
) -> f64 {
    (log_radial_posterior(alpha_b, r_b, beta, n0) + log_radial_posterior(alpha_p, r_p, beta, n0))
        .exp()
}

/// Rows of `holder`'s estimate that some ray of `receiver` can intercept.
pub fn dependency_mask(table: &InterceptTable, holder: usize, receiver: usize) -> Vec<bool> {
    (0..table.array_size())
        .map(|n| {
            BipolarIndex::signed_pair(n).any(|i| !table.intercepts(holder, receiver, i).is_empty())
        })
        .collect()
}

/// Sparse slice of a peer's estimate sent to one receiving BS.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedRays {
    pub origin: usize,
    pub n_d: usize,
    entries: Vec<SharedEntry>,
    // entries grouped by codebook row
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl SharedRays {
    pub fn new(origin: usize, n_d: usize, n_bs: usize, entries: Vec<SharedEntry>) -> Result<Self> {
        if entries.len() > n_d {
            return Err(RapidError::Domain(format!(
                "{} shared entries exceed the budget of {n_d}",
                entries.len()
            )));
        }
        let mut rows = vec![Vec::new(); n_bs];
        for e in &entries {
            let slot = rows.get_mut(e.row).ok_or_else(|| {
                RapidError::Dimension(format!("row {} outside a {n_bs}-row estimate", e.row))
            })?;
            slot.push((e.n_u, e.value));
        }
        Ok(Self {
            origin,
            n_d,
            entries,
            rows,
        })
    }

    /// The `n_d` dominant entries of `v` that `receiver` can use.
    pub fn from_estimate(
        v: &CMatrix,
        table: &InterceptTable,
        origin: usize,
        receiver: usize,
        n_d: usize,
    ) -> Result<Self> {
        let mask = dependency_mask(table, origin, receiver);
        Self::new(origin, n_d, v.nrows(), dominant_entries(v, n_d, &mask))
    }

    pub fn entries(&self) -> &[SharedEntry] {
        &self.entries
    }

    pub fn row(&self, n: usize) -> &[(usize, Complex64)] {
        self.rows.get(n).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// `f_c(n_u)^H u(phi)` for the UE codebook.
fn codebook_response(ue: &Codebook, n_u: usize, a_ue: &nalgebra::DVector<Complex64>) -> Complex64 {
    ue.matrix().column(n_u).dotc(a_ue)
}

/// Peer path coefficient seen along ray `peer_index` when the UE departs at
/// local angle `aod`: the shared row `|peer_index|` steered back onto `aod`.
pub fn conditional_peer_coefficient(
    shared: &SharedRays,
    peer_index: BipolarIndex,
    aod: f64,
    ue: &Codebook,
) -> Complex64 {
    let row = shared.row(peer_index.unipolar());
    if row.is_empty() {
        return Complex64::new(0.0, 0.0);
    }
    let a_ue = steering(aod, ue.size()).into_inner();
    row.iter()
        .map(|&(n_u, value)| value * codebook_response(ue, n_u, &a_ue))
        .sum()
}

/// Everything fixed while BS `own` scores candidates against one peer.
pub struct PairContext<'a> {
    pub table: &'a InterceptTable,
    pub deployment: &'a NetworkDeployment,
    pub codebooks: &'a Codebooks,
    pub params: FusionParams,
    pub own: usize,
}

/// Probability that `(n_b, n_u)` is the LOS pair at BS `own`, judged against one
/// peer's shared rays. Each sign branch of `n_b` and `n_u` carries weight
/// `1/(|S_b| |S_u|)`, split evenly over the intercepts of that `n_b` ray; a ray
/// without intercepts adds nothing.
pub fn pair_beam_probability(
    ctx: &PairContext<'_>,
    n_b: usize,
    n_u: usize,
    v_own: &CMatrix,
    shared: &SharedRays,
) -> f64 {
    let peer = shared.origin;
    let frame = ConditionalFrame::new(ctx.deployment, ctx.own, peer, ctx.codebooks.n_bs());
    pair_probability_in_frame(ctx, &frame, n_b, n_u, v_own, shared)
}

fn pair_probability_in_frame(
    ctx: &PairContext<'_>,
    frame: &ConditionalFrame,
    n_b: usize,
    n_u: usize,
    v_own: &CMatrix,
    shared: &SharedRays,
) -> f64 {
    let FusionParams { beta, variance: n0 } = ctx.params;
    let n_ue = ctx.codebooks.n_ue();
    let alpha_b = v_own[(n_b, n_u)];
    let signs_b = if n_b == 0 { 1.0 } else { 2.0 };
    let signs_u = if n_u == 0 { 1.0 } else { 2.0 };
    let mut total = 0.0;

    for own_index in BipolarIndex::signed_pair(n_b) {
        let intercepts = ctx.table.intercepts(ctx.own, shared.origin, own_index);
        if intercepts.is_empty() {
            continue;
        }
        let weight = 1.0 / (signs_b * signs_u * intercepts.len() as f64);
        for ue_index in BipolarIndex::signed_pair(n_u) {
            let ue_angle = ue_index.angle(n_ue);
            let mut branch = 0.0;
            for ic in intercepts {
                let log_b = log_radial_posterior(alpha_b, ic.r_own, beta, n0);
                let alpha_p = if shared.row(ic.peer_index.unipolar()).is_empty() {
                    Complex64::new(0.0, 0.0)
                } else {
                    let aod = frame.aod(ic, own_index, ue_angle);
                    conditional_peer_coefficient(shared, ic.peer_index, aod, &ctx.codebooks.ue)
                };
                let log_p = log_radial_posterior(alpha_p, ic.r_peer, beta, n0);
                branch += (log_b + log_p).exp();
            }
            total += weight * branch;
        }
    }
    total.clamp(0.0, 1.0)
}

/// Fused `Pr(n_b, n_u)` over every candidate pair of one BS.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamProbabilityMap {
    pub p: DMatrix<f64>,
}

impl BeamProbabilityMap {
    pub fn get(&self, n_b: usize, n_u: usize) -> f64 {
        self.p[(n_b, n_u)]
    }

    /// Highest-probability pair, ties to the smaller `(n_b, n_u)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_p = f64::NEG_INFINITY;
        for n_b in 0..self.p.nrows() {
            for n_u in 0..self.p.ncols() {
                if self.p[(n_b, n_u)] > best_p {
                    best_p = self.p[(n_b, n_u)];
                    best = (n_b, n_u);
                }
            }
        }
        best
    }

    /// Row-major nested arrays.
    pub fn to_json(&self) -> Value {
        let rows: Vec<Vec<f64>> = self
            .p
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        json!(rows)
    }
}

/// Mean of the per-peer maps for BS `own`.
pub fn fuse_network(
    ctx: &PairContext<'_>,
    v_own: &CMatrix,
    shared: &[SharedRays],
) -> Result<BeamProbabilityMap> {
    if shared.is_empty() {
        return Err(RapidError::Domain(
            "fusion needs at least one peer base station".into(),
        ));
    }
    let (n_bs, n_ue) = (ctx.codebooks.n_bs(), ctx.codebooks.n_ue());
    if v_own.nrows() != n_bs || v_own.ncols() != n_ue {
        return Err(RapidError::Dimension(format!(
            "estimate is {}x{}, expected {n_bs}x{n_ue}",
            v_own.nrows(),
            v_own.ncols()
        )));
    }
    if let Some(bad) = shared.iter().find(|s| s.origin == ctx.own) {
        return Err(RapidError::Domain(format!(
            "BS {} cannot fuse its own rays",
            bad.origin
        )));
    }
    let mut p = DMatrix::zeros(n_bs, n_ue);
    for rays in shared {
        let frame = ConditionalFrame::new(ctx.deployment, ctx.own, rays.origin, n_bs);
        for n_b in 0..n_bs {
            for n_u in 0..n_ue {
                p[(n_b, n_u)] += pair_probability_in_frame(ctx, &frame, n_b, n_u, v_own, rays);
            }
        }
    }
    p /= shared.len() as f64;
    Ok(BeamProbabilityMap { p })
}

/// The `count` most probable pairs. Ties go to the larger `|V_hat|`, then to the
/// smaller `(n_b, n_u)`. Pairs below `floor` are never returned.
pub fn select_beams(
    map: &BeamProbabilityMap,
    v: &CMatrix,
    count: usize,
    floor: f64,
) -> Vec<(usize, usize)> {
    let mut cells: Vec<(usize, usize)> = (0..map.p.nrows())
        .flat_map(|n_b| (0..map.p.ncols()).map(move |n_u| (n_b, n_u)))
        .filter(|&(n_b, n_u)| map.p[(n_b, n_u)] >= floor)
        .collect();
    cells.sort_by(|&a, &b| {
        map.p[b]
            .total_cmp(&map.p[a])
            .then(v[b].norm().total_cmp(&v[a].norm()))
            .then(a.cmp(&b))
    });
    cells.truncate(count);
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_intercept_table, BaseStation};
    use approx::assert_relative_eq;

    const BETA: f64 = 4.0;
    const N0: f64 = 1e-5;

    #[test]
    fn likelihood_at_zero() {
        let r: f64 = 20.0;
        let v = coefficient_likelihood(Complex64::new(0.0, 0.0), r, BETA, 1e-6).unwrap();
        assert_relative_eq!(
            v,
            1.0 / (std::f64::consts::PI * (r.powf(-BETA) + 1e-6)),
            max_relative = 1e-14
        );
        assert!(coefficient_likelihood(Complex64::new(0.0, 0.0), 0.0, BETA, 1.0).is_err());
        assert!(coefficient_likelihood(Complex64::new(0.0, 0.0), -1.0, BETA, 1.0).is_err());
    }

    #[test]
    fn likelihood_decreases_with_magnitude() {
        let a = coefficient_likelihood(Complex64::new(1e-3, 0.0), 10.0, BETA, N0).unwrap();
        let b = coefficient_likelihood(Complex64::new(1e-2, 0.0), 10.0, BETA, N0).unwrap();
        assert!(b < a);
    }

    #[test]
    fn posterior_plug_in_at_zero() {
        for r in [1.0_f64, 5.0, 20.0, 70.0] {
            let s = r.powf(-BETA);
            let p = radial_posterior(Complex64::new(0.0, 0.0), r, BETA, N0);
            assert_relative_eq!(p, 1.0 / (2.0 + s / N0), max_relative = 1e-12);
        }
    }

    #[test]
    fn posterior_saturates() {
        let p = radial_posterior(Complex64::new(1e3, 0.0), 10.0, BETA, N0);
        assert_eq!(p, 1.0);
        assert!(log_radial_posterior(Complex64::new(1e3, 0.0), 10.0, BETA, N0) <= 0.0);
    }

    #[test]
    fn joint_is_symmetric() {
        let a = Complex64::new(3e-3, 1e-3);
        let b = Complex64::new(-1e-3, 2e-3);
        let x = joint_pair_probability(a, b, 12.0, 30.0, BETA, N0);
        let y = joint_pair_probability(b, a, 30.0, 12.0, BETA, N0);
        assert_relative_eq!(x, y, max_relative = 1e-14);
    }

    #[test]
    fn shared_budget_enforced() {
        let e = SharedEntry {
            row: 0,
            n_u: 0,
            value: Complex64::new(1.0, 0.0),
        };
        assert!(SharedRays::new(1, 1, 4, vec![e, e]).is_err());
        assert!(SharedRays::new(1, 2, 4, vec![e, e]).is_ok());
    }

    #[test]
    fn peer_coefficient_on_grid_and_empty() {
        let ue = Codebook::new(16);
        let value = Complex64::new(0.3, -0.7);
        let shared = SharedRays::new(
            1,
            4,
            32,
            vec![SharedEntry {
                row: 5,
                n_u: 9,
                value,
            }],
        )
        .unwrap();
        let idx = BipolarIndex::new(-5, 32).unwrap();
        let aod = crate::geometry::candidate_angle(9, 16, 1).unwrap();
        let a = conditional_peer_coefficient(&shared, idx, aod, &ue);
        assert_relative_eq!(a.re, value.re, epsilon = 1e-12);
        assert_relative_eq!(a.im, value.im, epsilon = 1e-12);
        let other = BipolarIndex::new(6, 32).unwrap();
        assert_eq!(
            conditional_peer_coefficient(&shared, other, aod, &ue),
            Complex64::new(0.0, 0.0)
        );
    }

    #[test]
    fn fusion_needs_a_peer() {
        let dep = NetworkDeployment::new(
            vec![
                BaseStation {
                    x: 10.0,
                    y: 0.0,
                    theta: 0.0,
                },
                BaseStation {
                    x: 0.0,
                    y: 10.0,
                    theta: 0.0,
                },
            ],
            0.0,
        )
        .unwrap();
        let table = build_intercept_table(&dep, 8);
        let cb = Codebooks::new(4, 8);
        let ctx = PairContext {
            table: &table,
            deployment: &dep,
            codebooks: &cb,
            params: FusionParams {
                beta: BETA,
                variance: N0,
            },
            own: 0,
        };
        assert!(fuse_network(&ctx, &CMatrix::zeros(8, 4), &[]).is_err());
    }

    #[test]
    fn select_beams_tie_breaks() {
        let map = BeamProbabilityMap {
            p: DMatrix::from_element(2, 3, 0.25),
        };
        let mut v = CMatrix::zeros(2, 3);
        v[(1, 0)] = Complex64::new(2.0, 0.0);
        v[(0, 2)] = Complex64::new(0.0, 1.0);
        let picked = select_beams(&map, &v, 4, 0.0);
        assert_eq!(picked, vec![(1, 0), (0, 2), (0, 0), (0, 1)]);

        let mut spike = map.clone();
        spike.p[(1, 2)] = 0.9;
        assert_eq!(select_beams(&spike, &v, 1, 0.0), vec![(1, 2)]);
        assert_eq!(select_beams(&spike, &v, 3, 0.5), vec![(1, 2)]);
    }
}
