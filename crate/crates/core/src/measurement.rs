//! Pilot measurement protocol and the stacked compressed-sensing system.
//!
//! In every slot the UE transmits one pilot per active RF chain, each on a
//! candidate beam, and every BS combines with `R_BS` candidate beams. All beam
//! choices come from a seeded generator shared by the whole network.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_normal, CMatrix, CVector, Codebooks, VirtualChannel};
use crate::error::{RapidError, Result};

/// Coefficients smaller than this are dropped from sensing rows.
const SPARSE_DROP: f64 = 1e-12;

/// Array sizes and RF chain counts of the UE and of every BS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terminals {
    pub num_bs: usize,
    pub n_ue: usize,
    pub r_ue: usize,
    pub n_bs: usize,
    pub r_bs: usize,
}

impl Terminals {
    pub fn validate(&self) -> Result<()> {
        if self.n_ue == 0 || self.n_bs == 0 || self.r_ue == 0 || self.r_bs == 0 {
            return Err(RapidError::Config(
                "array sizes and RF chains must be positive".into(),
            ));
        }
        if self.r_ue > self.n_ue {
            return Err(RapidError::Config(format!(
                "R_UE = {} exceeds N_UE = {}",
                self.r_ue, self.n_ue
            )));
        }
        if self.r_bs > self.n_bs {
            return Err(RapidError::Config(format!(
                "R_BS = {} exceeds N_BS = {}",
                self.r_bs, self.n_bs
            )));
        }
        Ok(())
    }
}

/// Candidate beams used in one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotBeams {
    pub ue: Vec<usize>,
    /// Combining beams, one list per BS.
    pub bs: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamSchedule {
    pub seed: u64,
    pub terminals: Terminals,
    pub slots: Vec<SlotBeams>,
}

impl BeamSchedule {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// UE beams per slot (1 for the exhaustive sweep, `R_UE` otherwise).
    pub fn active_ue_beams(&self) -> usize {
        self.slots
            .first()
            .map_or(self.terminals.r_ue, |s| s.ue.len())
    }
}

/// Random directional beam schedule: in each slot every terminal draws distinct
/// candidate beams uniformly at random.
pub fn draw_schedule(seed: u64, t_e: usize, terminals: &Terminals) -> Result<BeamSchedule> {
    terminals.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = (0..t_e)
        .map(|_| SlotBeams {
            ue: sample(&mut rng, terminals.n_ue, terminals.r_ue).into_vec(),
            bs: (0..terminals.num_bs)
                .map(|_| sample(&mut rng, terminals.n_bs, terminals.r_bs).into_vec())
                .collect(),
        })
        .collect();
    Ok(BeamSchedule {
        seed,
        terminals: *terminals,
        slots,
    })
}

/// Slots needed by the exhaustive sweep, `N_UE * ceil(N_BS / R_BS)`.
pub fn exhaustive_slot_count(n_ue: usize, n_bs: usize, r_bs: usize) -> usize {
    n_ue * n_bs.div_ceil(r_bs)
}

/// Exhaustive search: one UE beam per slot, every BS sweeps its codebook in
/// blocks of `R_BS` before the UE moves to its next beam.
pub fn exhaustive_schedule(terminals: &Terminals) -> Result<BeamSchedule> {
    terminals.validate()?;
    let blocks = terminals.n_bs.div_ceil(terminals.r_bs);
    let mut slots = Vec::with_capacity(terminals.n_ue * blocks);
    for nu in 0..terminals.n_ue {
        for blk in 0..blocks {
            let lo = blk * terminals.r_bs;
            let hi = (lo + terminals.r_bs).min(terminals.n_bs);
            let beams: Vec<usize> = (lo..hi).collect();
            slots.push(SlotBeams {
                ue: vec![nu],
                bs: vec![beams; terminals.num_bs],
            });
        }
    }
    Ok(BeamSchedule {
        seed: 0,
        terminals: *terminals,
        slots,
    })
}

/// Noise-free received vector `sqrt(P / R) W_m^H H F_m s_m` for unit power.
pub(crate) fn slot_signal(
    h: &CMatrix,
    ue_beams: &[usize],
    bs_beams: &[usize],
    codebooks: &Codebooks,
    pilots: &[Complex64],
) -> CVector {
    let mut tx = CVector::zeros(codebooks.n_ue());
    for (&nu, &s) in ue_beams.iter().zip(pilots) {
        tx += codebooks.ue.matrix().column(nu) * s;
    }
    let scale = 1.0 / (ue_beams.len() as f64).sqrt();
    let rx = h * tx;
    CVector::from_iterator(
        bs_beams.len(),
        bs_beams
            .iter()
            .map(|&nb| codebooks.bs.matrix().column(nb).dotc(&rx) * scale),
    )
}

/// Unit-modulus pilots, all equal to one.
pub fn unit_pilots(count: usize) -> Vec<Complex64> {
    vec![Complex64::new(1.0, 0.0); count]
}

/// One slot as seen by a BS: `y_m = sqrt(P/R_UE) W_m^H H F_m s_m + n_m`, with
/// `n_m ~ CN(0, N0 I)`.
#[allow(clippy::too_many_arguments)]
pub fn observe_slot<R: Rng + ?Sized>(
    h: &CMatrix,
    ue_beams: &[usize],
    bs_beams: &[usize],
    codebooks: &Codebooks,
    pilots: &[Complex64],
    power: f64,
    n0: f64,
    rng: &mut R,
) -> Result<CVector> {
    if h.nrows() != codebooks.n_bs() || h.ncols() != codebooks.n_ue() {
        return Err(RapidError::Dimension(format!(
            "channel is {}x{}, codebooks expect {}x{}",
            h.nrows(),
            h.ncols(),
            codebooks.n_bs(),
            codebooks.n_ue()
        )));
    }
    if pilots.len() != ue_beams.len() {
        return Err(RapidError::Dimension(format!(
            "{} pilots for {} UE beams",
            pilots.len(),
            ue_beams.len()
        )));
    }
    let mut y =
        slot_signal(h, ue_beams, bs_beams, codebooks, pilots) * Complex64::from(power.sqrt());
    for z in y.iter_mut() {
        *z += complex_normal(rng, n0);
    }
    Ok(y)
}

/// One sparse row of the sensing matrix: `(column, coefficient)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensingRow {
    pub entries: Vec<(usize, Complex64)>,
}

/// Stacked measurements `y = A_g A vec(V) + n` of one BS.
#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub y: CVector,
    pub rows: Vec<SensingRow>,
    /// Scalar measurement gain `A_g = sqrt(P N_UE N_BS / R_UE)`.
    pub gain: f64,
    pub n0: f64,
    pub n_bs: usize,
    pub n_ue: usize,
}

impl MeasurementRecord {
    pub fn num_columns(&self) -> usize {
        self.n_bs * self.n_ue
    }

    pub fn num_measurements(&self) -> usize {
        self.rows.len()
    }

    /// `A v` (without the gain).
    pub fn apply(&self, v: &CVector) -> CVector {
        CVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| {
                row.entries
                    .iter()
                    .map(|&(c, a)| a * v[c])
                    .sum::<Complex64>()
            }),
        )
    }

    /// `A^H r` (without the gain).
    pub fn apply_adjoint(&self, r: &CVector) -> CVector {
        let mut out = CVector::zeros(self.num_columns());
        for (row, &ri) in self.rows.iter().zip(r.iter()) {
            for &(c, a) in &row.entries {
                out[c] += a.conj() * ri;
            }
        }
        out
    }

    pub fn dense(&self) -> CMatrix {
        let mut a = CMatrix::zeros(self.rows.len(), self.num_columns());
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in &row.entries {
                a[(i, c)] = v;
            }
        }
        a
    }

    /// Euclidean norm of every column of `A`.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.num_columns()];
        for row in &self.rows {
            for &(c, a) in &row.entries {
                sq[c] += a.norm_sqr();
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    /// Debug dump: measurements and sparse rows with complex values as `[re, im]`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "gain": self.gain,
            "n0": self.n0,
            "y": self.y.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "rows": self.rows.iter().map(|r| {
                r.entries.iter().map(|(c, z)| serde_json::json!([c, z.re, z.im])).collect::<Vec<_>>()
            }).collect::<Vec<_>>(),
        })
    }
}

/// Builds the Kronecker-structured sensing block of one slot,
/// `A_m = (s_m^T F_m^T F_c^*) (x) (W_m^H W_c)`, in sparse row form.
pub fn sensing_block(
    ue_beams: &[usize],
    bs_beams: &[usize],
    codebooks: &Codebooks,
    pilots: &[Complex64],
) -> Vec<SensingRow> {
    let n_bs = codebooks.n_bs();
    let fm = codebooks.ue.select(ue_beams);
    let s = CVector::from_column_slice(pilots);
    // s^T F_m^T F_c^* read as a column is F_c^H F_m s
    let left: Vec<Complex64> = (codebooks.ue.matrix().adjoint() * (fm * s))
        .iter()
        .copied()
        .collect();
    let wm = codebooks.bs.select(bs_beams);
    let right: DMatrix<Complex64> = wm.adjoint() * codebooks.bs.matrix();

    (0..bs_beams.len())
        .map(|j| {
            let mut entries = Vec::new();
            for (nu, &l) in left.iter().enumerate() {
                if l.norm() < SPARSE_DROP {
                    continue;
                }
                for nb in 0..n_bs {
                    let c = l * right[(j, nb)];
                    if c.norm() >= SPARSE_DROP {
                        entries.push((nu * n_bs + nb, c));
                    }
                }
            }
            SensingRow { entries }
        })
        .collect()
}

/// Stacks the observations of BS `b` into compressed-sensing form.
pub fn assemble_cs(
    schedule: &BeamSchedule,
    b: usize,
    codebooks: &Codebooks,
    observations: &[CVector],
    power: f64,
    n0: f64,
) -> Result<MeasurementRecord> {
    if observations.len() != schedule.len() {
        return Err(RapidError::Dimension(format!(
            "{} observed slots for a schedule of {}",
            observations.len(),
            schedule.len()
        )));
    }
    if b >= schedule.terminals.num_bs {
        return Err(RapidError::Domain(format!("BS id {b} out of range")));
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (slot, obs) in schedule.slots.iter().zip(observations) {
        if obs.len() != slot.bs[b].len() {
            return Err(RapidError::Dimension(format!(
                "slot observation has {} entries, expected {}",
                obs.len(),
                slot.bs[b].len()
            )));
        }
        let pilots = unit_pilots(slot.ue.len());
        rows.extend(sensing_block(&slot.ue, &slot.bs[b], codebooks, &pilots));
        y.extend(obs.iter().copied());
    }
    let gain = (power * (codebooks.n_ue() * codebooks.n_bs()) as f64
        / schedule.active_ue_beams() as f64)
        .sqrt();
    Ok(MeasurementRecord {
        y: CVector::from_vec(y),
        rows,
        gain,
        n0,
        n_bs: codebooks.n_bs(),
        n_ue: codebooks.n_ue(),
    })
}

/// Runs the whole schedule for BS `b` over channel `h` and assembles the record.
#[allow(clippy::too_many_arguments)]
pub fn measure<R: Rng + ?Sized>(
    h: &CMatrix,
    schedule: &BeamSchedule,
    b: usize,
    codebooks: &Codebooks,
    power: f64,
    n0: f64,
    rng: &mut R,
) -> Result<MeasurementRecord> {
    let observations = schedule
        .slots
        .iter()
        .map(|slot| {
            let pilots = unit_pilots(slot.ue.len());
            observe_slot(h, &slot.ue, &slot.bs[b], codebooks, &pilots, power, n0, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_cs(schedule, b, codebooks, &observations, power, n0)
}

/// Noise-free measurement prediction `A_g A vec(V)`.
pub fn predict(record: &MeasurementRecord, v: &VirtualChannel) -> CVector {
    record.apply(&v.vec()) * Complex64::from(record.gain)
}
