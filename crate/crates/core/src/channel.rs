//! Ground-truth MIMO channels and the virtual (beamspace) channel.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::error::{RapidError, Result};
use crate::geometry::{candidate_angle, wrap_angle, NetworkDeployment};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Half-wavelength ULA response, `u(angle, N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector(CVector);

impl SteeringVector {
    pub fn entries(&self) -> &CVector {
        &self.0
    }

    pub fn into_inner(self) -> CVector {
        self.0
    }
}

/// ULA response with element spacing d = lambda/2: entry k has phase `pi k cos(angle)`.
pub fn steering(angle: f64, size: usize) -> SteeringVector {
    let scale = 1.0 / (size as f64).sqrt();
    let step = PI * angle.cos();
    SteeringVector(CVector::from_fn(size, |k, _| {
        Complex64::from_polar(scale, step * k as f64)
    }))
}

/// Orthonormal candidate beams of one array, one per column.
#[derive(Debug, Clone)]
pub struct Codebook {
    matrix: CMatrix,
}

impl Codebook {
    /// Candidate `n` steers toward `acos(1 - 2n/N)`; every entry lies on the
    /// quantized phase set `exp(j(pi - 2 pi k / N)) / sqrt(N)`.
    pub fn new(size: usize) -> Self {
        let mut matrix = CMatrix::zeros(size, size);
        for n in 0..size {
            let angle = candidate_angle(n, size, 1).expect("n < size");
            matrix.set_column(n, steering(angle, size).entries());
        }
        Self { matrix }
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn column(&self, n: usize) -> CVector {
        self.matrix.column(n).into_owned()
    }

    /// Columns `indexes` stacked side by side.
    pub fn select(&self, indexes: &[usize]) -> CMatrix {
        self.matrix.select_columns(indexes)
    }
}

/// Candidate codebooks of the UE (`F_c`) and of every BS (`W_c`).
#[derive(Debug, Clone)]
pub struct Codebooks {
    pub ue: Codebook,
    pub bs: Codebook,
}

impl Codebooks {
    pub fn new(n_ue: usize, n_bs: usize) -> Self {
        Self {
            ue: Codebook::new(n_ue),
            bs: Codebook::new(n_bs),
        }
    }

    pub fn n_ue(&self) -> usize {
        self.ue.size()
    }

    pub fn n_bs(&self) -> usize {
        self.bs.size()
    }
}

/// One propagation path in local array angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub alpha: Complex64,
    /// Angle of arrival at the BS array.
    pub aoa_local: f64,
    /// Angle of departure at the UE array.
    pub aod_local: f64,
}

/// Channel between the UE and one BS (`N_BS x N_UE`).
#[derive(Debug, Clone)]
pub struct ChannelMatrix {
    pub h: CMatrix,
    /// The line-of-sight path derived from the geometry.
    pub los: Path,
    /// Optional extra scattered paths (stress tests only).
    pub extra: Vec<Path>,
    /// BS-UE distance in meters.
    pub r: f64,
}

impl ChannelMatrix {
    /// Builds `H = sqrt(N_UE N_BS) sum_l alpha_l a_BS(aoa_l) a_UE(aod_l)^H`.
    pub fn from_paths(los: Path, extra: Vec<Path>, r: f64, n_bs: usize, n_ue: usize) -> Self {
        let mut h = CMatrix::zeros(n_bs, n_ue);
        for path in std::iter::once(&los).chain(extra.iter()) {
            h += rank_one(path, n_bs, n_ue);
        }
        Self { h, los, extra, r }
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        std::iter::once(&self.los).chain(self.extra.iter())
    }

    /// Debug dump with complex numbers as `[re, im]` pairs.
    pub fn to_json(&self) -> Value {
        json!({
            "h": complex_matrix_json(&self.h),
            "alpha": [self.los.alpha.re, self.los.alpha.im],
            "aoa_local": self.los.aoa_local,
            "aod_local": self.los.aod_local,
            "r": self.r,
            "extra_paths": self.extra.len(),
        })
    }
}

fn rank_one(path: &Path, n_bs: usize, n_ue: usize) -> CMatrix {
    let gain = path.alpha * ((n_bs * n_ue) as f64).sqrt();
    let a_bs = steering(path.aoa_local, n_bs).into_inner();
    let a_ue = steering(path.aod_local, n_ue).into_inner();
    (a_bs * a_ue.adjoint()) * gain
}

/// Row-major nested `[re, im]` arrays.
pub fn complex_matrix_json(m: &CMatrix) -> Value {
    Value::Array(
        m.row_iter()
            .map(|row| Value::Array(row.iter().map(|z| json!([z.re, z.im])).collect()))
            .collect(),
    )
}

/// Circularly-symmetric complex normal sample with the given variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Local (AOA at BS, AOD at UE) angles of the line-of-sight path to BS `b`.
pub fn los_angles(deployment: &NetworkDeployment, b: usize) -> (f64, f64) {
    let [x, y] = deployment.position(b);
    let aoa_global = (-y).atan2(-x);
    let aod_global = y.atan2(x);
    (
        wrap_angle(aoa_global - deployment.orientation(b)),
        wrap_angle(aod_global - deployment.psi_u),
    )
}

/// Draws the single-path LOS channel to BS `b` with `alpha ~ CN(0, r^-beta)`.
pub fn generate_channel<R: Rng + ?Sized>(
    deployment: &NetworkDeployment,
    b: usize,
    n_bs: usize,
    n_ue: usize,
    beta: f64,
    rng: &mut R,
) -> Result<ChannelMatrix> {
    generate_channel_with_scatter(deployment, b, n_bs, n_ue, beta, 0, 0.0, rng)
}

/// Like [`generate_channel`], plus `extra_paths` scattered paths at uniform random
/// angles whose mean power is `extra_power` times the LOS mean power.
#[allow(clippy::too_many_arguments)]
pub fn generate_channel_with_scatter<R: Rng + ?Sized>(
    deployment: &NetworkDeployment,
    b: usize,
    n_bs: usize,
    n_ue: usize,
    beta: f64,
    extra_paths: usize,
    extra_power: f64,
    rng: &mut R,
) -> Result<ChannelMatrix> {
    if b >= deployment.num_bs() {
        return Err(RapidError::Domain(format!(
            "BS id {b} out of range ({} stations)",
            deployment.num_bs()
        )));
    }
    let r = deployment.radial_distance(b);
    if r <= 0.0 || !r.is_finite() {
        return Err(RapidError::DegenerateDeployment(format!(
            "BS {b} coincides with the UE"
        )));
    }
    let variance = r.powf(-beta);
    let (aoa_local, aod_local) = los_angles(deployment, b);
    let los = Path {
        alpha: complex_normal(rng, variance),
        aoa_local,
        aod_local,
    };
    let extra = (0..extra_paths)
        .map(|_| Path {
            alpha: complex_normal(rng, variance * extra_power),
            aoa_local: rng.random_range(-PI..PI),
            aod_local: rng.random_range(-PI..PI),
        })
        .collect();
    Ok(ChannelMatrix::from_paths(los, extra, r, n_bs, n_ue))
}

/// Beamspace channel `V = W_c^H H F_c / sqrt(N_UE N_BS)` (`N_BS x N_UE`).
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualChannel(pub CMatrix);

impl VirtualChannel {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    /// Inverse map `H = sqrt(N_UE N_BS) W_c V F_c^H`.
    pub fn to_channel(&self, codebooks: &Codebooks) -> CMatrix {
        let scale = ((codebooks.n_bs() * codebooks.n_ue()) as f64).sqrt();
        codebooks.bs.matrix() * &self.0 * codebooks.ue.matrix().adjoint() * Complex64::from(scale)
    }

    /// Column-major stacking, entry `(n_b, n_u)` at `n_u * N_BS + n_b`.
    pub fn vec(&self) -> CVector {
        CVector::from_column_slice(self.0.as_slice())
    }
}

pub fn project_virtual(h: &CMatrix, codebooks: &Codebooks) -> Result<VirtualChannel> {
    if h.nrows() != codebooks.n_bs() || h.ncols() != codebooks.n_ue() {
        return Err(RapidError::Dimension(format!(
            "channel is {}x{}, codebooks expect {}x{}",
            h.nrows(),
            h.ncols(),
            codebooks.n_bs(),
            codebooks.n_ue()
        )));
    }
    let scale = 1.0 / ((codebooks.n_bs() * codebooks.n_ue()) as f64).sqrt();
    Ok(VirtualChannel(
        codebooks.bs.matrix().adjoint() * h * codebooks.ue.matrix() * Complex64::from(scale),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BaseStation;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_error(m: &CMatrix) -> f64 {
        let g = m.adjoint() * m;
        let eye = CMatrix::identity(g.nrows(), g.ncols());
        (g - eye).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn steering_examples() {
        let v = steering(PI / 2.0, 4);
        for z in v.entries().iter() {
            assert_abs_diff_eq!(z.re, 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-15);
        }
        let v = steering(0.0, 2);
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(v.entries()[0].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(v.entries()[1].re, -s, epsilon = 1e-15);
        assert_abs_diff_eq!(v.entries()[1].im, 0.0, epsilon = 1e-15);
        assert_eq!(steering(0.83, 16), steering(-0.83, 16));
        assert_abs_diff_eq!(steering(1.1, 32).entries().norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn codebook_is_unitary_and_quantized() {
        for n in [8, 16, 32] {
            let cb = Codebook::new(n);
            assert!(identity_error(cb.matrix()) < 1e-10);
            for z in cb.matrix().iter() {
                // phase is a multiple of 2 pi / N
                let steps = z.arg() / (2.0 * PI / n as f64);
                assert_abs_diff_eq!(steps, steps.round(), epsilon = 1e-9);
                assert_abs_diff_eq!(z.norm(), 1.0 / (n as f64).sqrt(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn los_angles_on_axis() {
        let dep = NetworkDeployment::new(
            vec![BaseStation {
                x: 30.0,
                y: 0.0,
                theta: 0.0,
            }],
            0.0,
        )
        .unwrap();
        let (aoa, aod) = los_angles(&dep, 0);
        assert_abs_diff_eq!(aod, 0.0);
        assert_abs_diff_eq!(aoa, PI);
    }

    #[test]
    fn degenerate_bs_rejected() {
        let dep = NetworkDeployment::new(
            vec![BaseStation {
                x: 0.0,
                y: 0.0,
                theta: 0.0,
            }],
            0.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            generate_channel(&dep, 0, 8, 4, 4.0, &mut rng),
            Err(RapidError::DegenerateDeployment(_))
        ));
        assert!(generate_channel(&dep, 3, 8, 4, 4.0, &mut rng).is_err());
    }

    #[test]
    fn virtual_projection_round_trip() {
        let cb = Codebooks::new(16, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = CMatrix::from_fn(32, 16, |_, _| complex_normal(&mut rng, 1.0));
        let v = project_virtual(&h, &cb).unwrap();
        let back = v.to_channel(&cb);
        assert!((back - &h).norm() < 1e-9);
        assert_abs_diff_eq!(
            v.matrix().norm(),
            h.norm() / (512f64).sqrt(),
            epsilon = 1e-9
        );
        let zero = project_virtual(&CMatrix::zeros(32, 16), &cb).unwrap();
        assert_eq!(zero.matrix().norm(), 0.0);
        assert!(project_virtual(&CMatrix::zeros(16, 32), &cb).is_err());
    }

    #[test]
    fn on_grid_channel_is_one_sparse_in_beamspace() {
        let cb = Codebooks::new(16, 32);
        let path = Path {
            alpha: Complex64::new(0.3, -0.4),
            aoa_local: -candidate_angle(5, 32, 1).unwrap(),
            aod_local: candidate_angle(11, 16, 1).unwrap(),
        };
        let ch = ChannelMatrix::from_paths(path, vec![], 10.0, 32, 16);
        let v = project_virtual(&ch.h, &cb).unwrap();
        for nb in 0..32 {
            for nu in 0..16 {
                let z = v.matrix()[(nb, nu)];
                if (nb, nu) == (5, 11) {
                    assert_abs_diff_eq!(z.re, 0.3, epsilon = 1e-12);
                    assert_abs_diff_eq!(z.im, -0.4, epsilon = 1e-12);
                } else {
                    assert!(z.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn beamspace_is_blind_to_angle_sign() {
        let cb = Codebooks::new(16, 32);
        let a = Path {
            alpha: Complex64::new(1.0, 0.5),
            aoa_local: 0.9,
            aod_local: -2.1,
        };
        let b = Path {
            aoa_local: -0.9,
            aod_local: 2.1,
            ..a
        };
        let va =
            project_virtual(&ChannelMatrix::from_paths(a, vec![], 1.0, 32, 16).h, &cb).unwrap();
        let vb =
            project_virtual(&ChannelMatrix::from_paths(b, vec![], 1.0, 32, 16).h, &cb).unwrap();
        assert!((va.0 - vb.0).norm() < 1e-12);
    }
}
