//! Fast invariant checks run by `rapid validate` against a configuration.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{project_virtual, CMatrix, Codebooks};
use crate::error::Result;
use crate::evaluation::config::{dbm_to_linear, ExperimentConfig};
use crate::evaluation::experiment::{
    draw_scene, estimate_network, fuse_all, fusion_params, run_experiment,
};
use crate::fusion::radial_posterior;
use crate::geometry::{ray_direction, BipolarIndex};
use crate::measurement::{exhaustive_schedule, measure, predict};

/// Outcome of one invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

fn codebooks_unitary(cfg: &ExperimentConfig) -> Check {
    let cb = Codebooks::new(cfg.n_ue, cfg.n_bs);
    let err = |m: &CMatrix| {
        (m.adjoint() * m - CMatrix::identity(m.ncols(), m.ncols()))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    };
    let worst = err(cb.ue.matrix()).max(err(cb.bs.matrix()));
    Check::new(
        "codebook unitarity",
        worst <= 1e-10,
        format!("max deviation {worst:.2e}"),
    )
}

fn intercepts_consistent(cfg: &ExperimentConfig, trials: usize) -> Result<Check> {
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for t in 0..trials {
        let scene = draw_scene(cfg, t)?;
        let dep = &scene.deployment;
        for own in 0..dep.num_bs() {
            for peer in (0..dep.num_bs()).filter(|&p| p != own) {
                for i in BipolarIndex::all(cfg.n_bs) {
                    for ic in scene.table.intercepts(own, peer, i) {
                        let ro = ray_direction(i, dep.orientation(own), cfg.n_bs);
                        let rp = ray_direction(ic.peer_index, dep.orientation(peer), cfg.n_bs);
                        let [ox, oy] = dep.position(own);
                        let [px, py] = dep.position(peer);
                        let a = [ox + ic.r_own * ro.lx, oy + ic.r_own * ro.ly];
                        let b = [px + ic.r_peer * rp.lx, py + ic.r_peer * rp.ly];
                        worst = worst.max((a[0] - b[0]).hypot(a[1] - b[1]));
                        count += 1;
                        if !(ic.r_own > 0.0 && ic.r_peer > 0.0) {
                            return Ok(Check::new(
                                "intercept consistency",
                                false,
                                "non-positive range stored".into(),
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(Check::new(
        "intercept consistency",
        worst <= 1e-9,
        format!("{count} intercepts, max mismatch {worst:.2e} m"),
    ))
}

fn measurement_consistent(cfg: &ExperimentConfig, trials: usize) -> Result<Check> {
    let cb = Codebooks::new(cfg.n_ue, cfg.n_bs);
    let es = exhaustive_schedule(&cfg.terminals())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let scene = draw_scene(cfg, t)?;
        for schedule in [&scene.rdb_schedule, &es] {
            let h = &scene.channels[0].h;
            let rec = measure(h, schedule, 0, &cb, 1.0, 0.0, &mut rng)?;
            let want = predict(&rec, &project_virtual(h, &cb)?);
            let scale = want.norm().max(f64::MIN_POSITIVE);
            worst = worst.max((&rec.y - &want).norm() / scale);
        }
    }
    Ok(Check::new(
        "noise-free measurement model",
        worst <= 1e-9,
        format!("max relative error {worst:.2e}"),
    ))
}

fn posterior_bounded(cfg: &ExperimentConfig) -> Check {
    let mut bad = 0;
    let n0 = cfg.n0;
    for i in 0..50 {
        let a = 6.0 * n0.sqrt() * i as f64 / 49.0;
        for j in 0..50 {
            let r = 1.0 + 2.0 * cfg.grid_half_width * j as f64 / 49.0;
            let p = radial_posterior(Complex64::new(a, 0.0), r, cfg.beta, n0);
            if !(p > 0.0 && p < 1.0) {
                bad += 1;
            }
        }
    }
    Check::new(
        "posterior in (0, 1)",
        bad == 0,
        format!("{bad} of 2500 grid points outside"),
    )
}

fn fused_maps_bounded(cfg: &ExperimentConfig, trials: usize) -> Result<Check> {
    if cfg.num_bs < 2 {
        return Ok(Check::new(
            "fused probabilities in [0, 1]",
            true,
            "single BS, nothing to fuse".into(),
        ));
    }
    let cb = Codebooks::new(cfg.n_ue, cfg.n_bs);
    let power = dbm_to_linear(cfg.p_dbm[0]);
    let n_d = cfg.share_n_d.unwrap_or(cfg.n_bs * cfg.n_ue);
    let mut bad = 0;
    for t in 0..trials {
        let scene = draw_scene(cfg, t)?;
        let est: Vec<CMatrix> = estimate_network(cfg, &scene, &scene.rdb_schedule, &cb, power, 1)?
            .into_iter()
            .map(|e| e.v)
            .collect();
        let params = fusion_params(cfg, &scene.rdb_schedule, power);
        for map in fuse_all(&scene, &est, &cb, params, n_d)? {
            bad += map.p.iter().filter(|p| !(0.0..=1.0).contains(*p)).count();
        }
    }
    Ok(Check::new(
        "fused probabilities in [0, 1]",
        bad == 0,
        format!("{bad} cells outside"),
    ))
}

fn results_consistent(cfg: &ExperimentConfig, trials: usize) -> Result<Vec<Check>> {
    let mut small = cfg.clone();
    small.trials = trials;
    let a = run_experiment(&small)?;
    let b = run_experiment(&small)?;
    let same = a.to_csv()? == b.to_csv()?;

    let mut ordered = true;
    let mut monotone = true;
    for t in &a.trials {
        for o in &t.outcomes {
            ordered &= o.min_rate() <= o.mean_rate() + 1e-12
                && o.mean_rate() <= o.max_rate() + 1e-12
                && o.rates.iter().all(|r| *r >= 0.0);
        }
    }
    let mut r_th = small.r_th.clone();
    r_th.sort_by(f64::total_cmp);
    for &p in &small.p_dbm {
        for s in small.schemes.iter().flat_map(|s| [*s, s.baseline()]) {
            if let Some(&low) = r_th.first() {
                for k in 0..small.num_bs {
                    monotone &=
                        a.coverage_at_most(s, p, low, k) <= a.coverage_at_most(s, p, low, k + 1);
                }
            }
            for w in r_th.windows(2) {
                monotone &=
                    a.coverage_at_least(s, p, w[1], 1) <= a.coverage_at_least(s, p, w[0], 1);
            }
        }
    }

    let mut paired = true;
    for t in &a.trials {
        for s in small.schemes.iter().filter(|s| s.cooperative()) {
            for &p in &small.p_dbm {
                paired &= t.get(s.baseline(), p).is_some() && t.get(*s, p).is_some();
            }
        }
    }
    Ok(vec![
        Check::new(
            "deterministic output",
            same,
            format!("{trials} trials run twice"),
        ),
        Check::new("min <= mean <= max, rates >= 0", ordered, String::new()),
        Check::new("coverage CDF monotone", monotone, String::new()),
        Check::new(
            "cooperative schemes paired with baselines",
            paired,
            String::new(),
        ),
    ])
}

/// Runs every invariant on a few trials of `cfg`.
pub fn validate(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    cfg.validate()?;
    let trials = cfg.trials.min(4);
    let mut checks = vec![codebooks_unitary(cfg), posterior_bounded(cfg)];
    checks.push(intercepts_consistent(cfg, trials)?);
    checks.push(measurement_consistent(cfg, trials)?);
    checks.push(fused_maps_bounded(cfg, trials)?);
    checks.extend(results_consistent(cfg, trials)?);
    Ok(checks)
}
