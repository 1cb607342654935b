//! Euclidean deployment model and ray-intercept geometry.
//!
//! The user equipment (UE) sits at the origin. Every base station (BS) carries a
//! uniform linear array whose axis is rotated counter-clockwise from the x-axis
//! by its orientation, so a local angle relates to the global frame through
//! `local = global - orientation`.
//!
//! A candidate beam `n` of an `N`-element array points at the local angle
//! `acos(1 - 2n/N)`. Because a ULA cannot tell `+angle` from `-angle`, each
//! candidate beam is really two rays. [`BipolarIndex`] names one of them with a
//! signed index in `-(N-1)..=N-1`.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RapidError, Result};

/// Determinant magnitude below which two rays are treated as parallel.
pub const DET_EPSILON: f64 = 1e-10;

/// Intercepts further than this multiple of the deployment diagonal are dropped.
pub const MAX_RANGE_FACTOR: f64 = 10.0;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; guard the rounding edge
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Local steering angle of candidate beam `n` for an array of `size` elements.
///
/// `sign` selects which of the two ambiguous rays is meant; it is ignored for
/// `n == 0`.
pub fn candidate_angle(n: usize, size: usize, sign: i32) -> Result<f64> {
    if size == 0 || n >= size {
        return Err(RapidError::Domain(format!(
            "candidate index {n} outside 0..{size}"
        )));
    }
    if sign != 1 && sign != -1 {
        return Err(RapidError::Domain(format!(
            "sign must be +1 or -1, got {sign}"
        )));
    }
    let base = (1.0 - 2.0 * n as f64 / size as f64).clamp(-1.0, 1.0).acos();
    Ok(if n == 0 { base } else { sign as f64 * base })
}

/// Signed ("bipolar") candidate ray index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BipolarIndex(i32);

impl BipolarIndex {
    pub fn new(value: i32, size: usize) -> Result<Self> {
        if value.unsigned_abs() as usize >= size {
            return Err(RapidError::Domain(format!(
                "bipolar index {value} outside -({size}-1)..={size}-1"
            )));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> i32 {
        self.0
    }

    /// Codebook column addressed by this ray.
    pub fn unipolar(self) -> usize {
        self.0.unsigned_abs() as usize
    }

    /// `sgn` with `sgn(0) = +1`.
    pub fn sign(self) -> i32 {
        if self.0 < 0 {
            -1
        } else {
            1
        }
    }

    /// Signed local angle of the ray.
    pub fn angle(self, size: usize) -> f64 {
        candidate_angle(self.unipolar(), size, self.sign())
            .expect("bipolar index validated at construction")
    }

    /// Every bipolar index of an array with `size` elements, ascending.
    pub fn all(size: usize) -> impl Iterator<Item = BipolarIndex> {
        let n = size as i32;
        (-(n - 1)..n).map(BipolarIndex)
    }

    /// The distinct rays sharing codebook column `n` (`{-n, n}`, or `{0}`).
    pub fn signed_pair(n: usize) -> impl Iterator<Item = BipolarIndex> {
        let n = n as i32;
        [-n, n]
            .into_iter()
            .take(if n == 0 { 1 } else { 2 })
            .map(BipolarIndex)
    }

    /// Position of this index inside [`BipolarIndex::all`].
    fn slot(self, size: usize) -> usize {
        (self.0 + size as i32 - 1) as usize
    }
}

/// Unit direction of a ray in the global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayDirection {
    pub lx: f64,
    pub ly: f64,
}

impl RayDirection {
    pub fn norm(&self) -> f64 {
        self.lx.hypot(self.ly)
    }
}

/// Global direction of bipolar ray `index` leaving an array rotated by `orientation`.
///
/// The local angle is rotated into the global frame, `angle + orientation`,
/// matching the `local = global - orientation` convention of the channel model.
pub fn ray_direction(index: BipolarIndex, orientation: f64, size: usize) -> RayDirection {
    let global = index.angle(size) + orientation;
    RayDirection {
        lx: global.cos(),
        ly: global.sin(),
    }
}

/// Radial distances `(r_own, r_peer)` at which two rays cross.
///
/// `peer_offset` is the displacement from the owning array to the peer,
/// `D_peer - D_own`. Returns `None` for (near) parallel rays or when the
/// crossing lies behind either array.
pub fn solve_intercept(
    own: BipolarIndex,
    peer: BipolarIndex,
    peer_offset: [f64; 2],
    own_orientation: f64,
    peer_orientation: f64,
    size: usize,
) -> Option<(f64, f64)> {
    let ro = ray_direction(own, own_orientation, size);
    let rp = ray_direction(peer, peer_orientation, size);
    intercept_from_directions(ro, rp, peer_offset)
}

fn intercept_from_directions(
    ro: RayDirection,
    rp: RayDirection,
    [dx, dy]: [f64; 2],
) -> Option<(f64, f64)> {
    let det = rp.lx * ro.ly - ro.lx * rp.ly;
    if det.abs() < DET_EPSILON {
        return None;
    }
    let r_own = (rp.lx * dy - rp.ly * dx) / det;
    let r_peer = (ro.lx * dy - ro.ly * dx) / det;
    (r_own > 0.0 && r_peer > 0.0).then_some((r_own, r_peer))
}

/// One base station: position in meters, orientation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Positions and orientations of every base station around a UE at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDeployment {
    pub base_stations: Vec<BaseStation>,
    pub psi_u: f64,
}

impl NetworkDeployment {
    pub fn new(base_stations: Vec<BaseStation>, psi_u: f64) -> Result<Self> {
        let dep = Self {
            base_stations,
            psi_u,
        };
        dep.validate()?;
        Ok(dep)
    }

    /// Uniform placement on a square of half-width `half_width` around the UE with
    /// uniform orientations.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, num_bs: usize, half_width: f64) -> Self {
        let base_stations = (0..num_bs)
            .map(|_| BaseStation {
                x: rng.random_range(-half_width..half_width),
                y: rng.random_range(-half_width..half_width),
                theta: wrap_angle(rng.random_range(0.0..2.0 * PI)),
            })
            .collect();
        Self {
            base_stations,
            psi_u: wrap_angle(rng.random_range(0.0..2.0 * PI)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |a: f64| a.is_finite() && (-PI..=PI).contains(&a);
        if !in_range(self.psi_u) {
            return Err(RapidError::Domain(format!(
                "UE orientation {} outside [-pi, pi]",
                self.psi_u
            )));
        }
        for (i, bs) in self.base_stations.iter().enumerate() {
            if !in_range(bs.theta) {
                return Err(RapidError::Domain(format!(
                    "BS {i} orientation {} outside [-pi, pi]",
                    bs.theta
                )));
            }
            if !(bs.x.is_finite() && bs.y.is_finite()) {
                return Err(RapidError::Domain(format!("BS {i} position not finite")));
            }
        }
        Ok(())
    }

    pub fn num_bs(&self) -> usize {
        self.base_stations.len()
    }

    pub fn position(&self, b: usize) -> [f64; 2] {
        let bs = &self.base_stations[b];
        [bs.x, bs.y]
    }

    pub fn orientation(&self, b: usize) -> f64 {
        self.base_stations[b].theta
    }

    /// `D_p - D_q`.
    pub fn displacement(&self, p: usize, q: usize) -> [f64; 2] {
        let [xp, yp] = self.position(p);
        let [xq, yq] = self.position(q);
        [xp - xq, yp - yq]
    }

    /// Distance from BS `b` to the UE.
    pub fn radial_distance(&self, b: usize) -> f64 {
        let [x, y] = self.position(b);
        x.hypot(y)
    }

    /// Diagonal of the bounding box around the base stations.
    pub fn diagonal(&self) -> f64 {
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        if self.base_stations.is_empty() {
            return 0.0;
        }
        for bs in &self.base_stations {
            x0 = x0.min(bs.x);
            x1 = x1.max(bs.x);
            y0 = y0.min(bs.y);
            y1 = y1.max(bs.y);
        }
        (x1 - x0).hypot(y1 - y0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dep: Self = serde_json::from_str(text)?;
        dep.validate()?;
        Ok(dep)
    }
}

/// A crossing between a ray of the owning BS and a ray of a peer BS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intercept {
    pub peer_index: BipolarIndex,
    /// Distance along the owning ray.
    pub r_own: f64,
    /// Distance along the peer ray.
    pub r_peer: f64,
    /// Intercept position relative to the owning BS.
    pub offset: [f64; 2],
}

/// Precomputed ray intercepts for every ordered BS pair and every owning ray.
#[derive(Debug, Clone)]
pub struct InterceptTable {
    num_bs: usize,
    size: usize,
    // [own * num_bs + peer][slot of own bipolar index]
    cells: Vec<Vec<Vec<Intercept>>>,
}

impl InterceptTable {
    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    pub fn array_size(&self) -> usize {
        self.size
    }

    /// Intercepts between ray `own_index` of BS `own` and all rays of BS `peer`.
    pub fn intercepts(&self, own: usize, peer: usize, own_index: BipolarIndex) -> &[Intercept] {
        if own == peer || self.cells.is_empty() {
            return &[];
        }
        &self.cells[own * self.num_bs + peer][own_index.slot(self.size)]
    }

    /// Looks up the crossing of `own_index` with `peer_index`.
    pub fn find(
        &self,
        own: usize,
        peer: usize,
        own_index: BipolarIndex,
        peer_index: BipolarIndex,
    ) -> Option<&Intercept> {
        self.intercepts(own, peer, own_index)
            .iter()
            .find(|ic| ic.peer_index == peer_index)
    }

    /// Total number of stored intercepts for the ordered pair.
    pub fn pair_count(&self, own: usize, peer: usize) -> usize {
        if own == peer || self.cells.is_empty() {
            return 0;
        }
        self.cells[own * self.num_bs + peer]
            .iter()
            .map(Vec::len)
            .sum()
    }
}

/// Solves every ray pair of every BS pair once, keeping intercepts within
/// [`MAX_RANGE_FACTOR`] deployment diagonals of both stations.
pub fn build_intercept_table(deployment: &NetworkDeployment, size: usize) -> InterceptTable {
    build_intercept_table_within(deployment, size, MAX_RANGE_FACTOR * deployment.diagonal())
}

/// Like [`build_intercept_table`] with an explicit range limit in meters;
/// `f64::INFINITY` keeps every intercept.
pub fn build_intercept_table_within(
    deployment: &NetworkDeployment,
    size: usize,
    max_range: f64,
) -> InterceptTable {
    let num_bs = deployment.num_bs();
    if num_bs < 2 {
        return InterceptTable {
            num_bs,
            size,
            cells: Vec::new(),
        };
    }
    let pairs: Vec<(usize, usize)> = (0..num_bs)
        .flat_map(|b| ((b + 1)..num_bs).map(move |p| (b, p)))
        .collect();

    let solved: Vec<_> = pairs
        .par_iter()
        .map(|&(b, p)| {
            let (fwd, rev) = solve_pair(deployment, b, p, size, max_range);
            ((b, p), fwd, rev)
        })
        .collect();

    let mut cells = vec![Vec::new(); num_bs * num_bs];
    for ((b, p), fwd, rev) in solved {
        cells[b * num_bs + p] = fwd;
        cells[p * num_bs + b] = rev;
    }
    InterceptTable {
        num_bs,
        size,
        cells,
    }
}

fn solve_pair(
    deployment: &NetworkDeployment,
    b: usize,
    p: usize,
    size: usize,
    max_range: f64,
) -> (Vec<Vec<Intercept>>, Vec<Vec<Intercept>>) {
    let slots = 2 * size - 1;
    let mut fwd = vec![Vec::new(); slots];
    let mut rev = vec![Vec::new(); slots];
    let delta = deployment.displacement(p, b);
    let (tb, tp) = (deployment.orientation(b), deployment.orientation(p));
    let dirs_b: Vec<_> = BipolarIndex::all(size)
        .map(|i| (i, ray_direction(i, tb, size)))
        .collect();
    let dirs_p: Vec<_> = BipolarIndex::all(size)
        .map(|i| (i, ray_direction(i, tp, size)))
        .collect();

    for &(ib, rb) in &dirs_b {
        for &(ip, rp) in &dirs_p {
            let Some((r_b, r_p)) = intercept_from_directions(rb, rp, delta) else {
                continue;
            };
            if r_b > max_range || r_p > max_range {
                continue;
            }
            fwd[ib.slot(size)].push(Intercept {
                peer_index: ip,
                r_own: r_b,
                r_peer: r_p,
                offset: [r_b * rb.lx, r_b * rb.ly],
            });
            rev[ip.slot(size)].push(Intercept {
                peer_index: ib,
                r_own: r_p,
                r_peer: r_b,
                offset: [r_p * rp.lx, r_p * rp.ly],
            });
        }
    }
    (fwd, rev)
}

/// Local angle of departure at the UE toward BS `peer`, conditioned on the UE
/// sitting at the crossing of `own_index` and `peer_index` with its orientation
/// chosen so that UE ray `ue_index` points back at BS `own`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_aod(
    table: &InterceptTable,
    deployment: &NetworkDeployment,
    own: usize,
    peer: usize,
    own_index: BipolarIndex,
    peer_index: BipolarIndex,
    ue_index: BipolarIndex,
    ue_size: usize,
) -> Result<f64> {
    let ic = table
        .find(own, peer, own_index, peer_index)
        .ok_or_else(|| {
            RapidError::Domain(format!(
                "no intercept between ray {} of BS {own} and ray {} of BS {peer}",
                own_index.value(),
                peer_index.value()
            ))
        })?;
    let ctx = ConditionalFrame::new(deployment, own, peer, table.array_size());
    Ok(ctx.aod(ic, own_index, ue_index.angle(ue_size)))
}

/// Per-pair constants used when evaluating many conditional angles.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConditionalFrame {
    peer_offset: [f64; 2],
    own_orientation: f64,
    bs_size: usize,
}

impl ConditionalFrame {
    pub(crate) fn new(
        deployment: &NetworkDeployment,
        own: usize,
        peer: usize,
        bs_size: usize,
    ) -> Self {
        Self {
            peer_offset: deployment.displacement(peer, own),
            own_orientation: deployment.orientation(own),
            bs_size,
        }
    }

    /// UE orientation implied by the hypothesis is
    /// `own_angle + own_orientation + pi - ue_angle`; the AOD toward the peer is
    /// the global bearing from the intercept to the peer minus that orientation.
    pub(crate) fn aod(&self, ic: &Intercept, own_index: BipolarIndex, ue_angle: f64) -> f64 {
        let [dx, dy] = self.peer_offset;
        let [ox, oy] = ic.offset;
        let bearing_from_peer = (oy - dy).atan2(ox - dx);
        wrap_angle(
            bearing_from_peer - own_index.angle(self.bs_size) - self.own_orientation + ue_angle,
        )
    }
}
