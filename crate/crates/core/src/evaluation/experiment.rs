//! Paired Monte Carlo comparison of the beam-training schemes.
//!
//! Every trial draws one deployment, one set of channels, one pilot schedule and
//! one noise stream per measurement mode. The noise stream is replayed at every
//! transmit power, and a cooperative scheme post-processes exactly the
//! estimates its baseline selected from.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{dbm_to_linear, ExperimentConfig, Scheme};
use super::metrics::{coverage_counts, mean_ci95, paired_t_test, rate_for_pairs};
use crate::channel::{generate_channel_with_scatter, CMatrix, ChannelMatrix, Codebooks};
use crate::error::{RapidError, Result};
use crate::fusion::{
    fuse_network, select_beams, BeamProbabilityMap, FusionParams, PairContext, SharedRays,
};
use crate::geometry::{build_intercept_table_within, InterceptTable, NetworkDeployment};
use crate::measurement::{draw_schedule, exhaustive_schedule, measure, BeamSchedule};
use crate::recovery::{recover, VirtualChannelEstimate};

/// Independent random stream of one trial.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Everything random about one trial, shared by all schemes and powers.
#[derive(Debug, Clone)]
pub struct TrialScene {
    pub deployment: NetworkDeployment,
    pub table: InterceptTable,
    pub channels: Vec<ChannelMatrix>,
    pub rdb_schedule: BeamSchedule,
    pub noise_seed: u64,
}

pub fn draw_scene(cfg: &ExperimentConfig, trial: usize) -> Result<TrialScene> {
    let mut rng = trial_rng(cfg.seed, trial);
    let deployment = loop {
        let dep = NetworkDeployment::random(&mut rng, cfg.num_bs, cfg.grid_half_width);
        if (0..dep.num_bs())
            .all(|b| dep.radial_distance(b) >= cfg.min_distance.max(f64::MIN_POSITIVE))
        {
            break dep;
        }
    };
    let channels = (0..cfg.num_bs)
        .map(|b| {
            generate_channel_with_scatter(
                &deployment,
                b,
                cfg.n_bs,
                cfg.n_ue,
                cfg.beta,
                cfg.expected_paths - 1,
                cfg.nlos_power,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let rdb_schedule = draw_schedule(rng.random(), cfg.t_e, &cfg.terminals())?;
    let noise_seed = rng.random();
    let table = intercept_table(cfg, &deployment);
    Ok(TrialScene {
        deployment,
        table,
        channels,
        rdb_schedule,
        noise_seed,
    })
}

/// Intercept table under the configured range limit.
pub fn intercept_table(cfg: &ExperimentConfig, deployment: &NetworkDeployment) -> InterceptTable {
    let limit = if cfg.max_range_factor.is_finite() {
        cfg.max_range_factor * deployment.diagonal()
    } else {
        f64::INFINITY
    };
    build_intercept_table_within(deployment, cfg.n_bs, limit)
}

/// Per-BS estimates from one measurement mode at one power.
pub fn estimate_network(
    cfg: &ExperimentConfig,
    scene: &TrialScene,
    schedule: &BeamSchedule,
    codebooks: &Codebooks,
    power: f64,
    noise_stream: u64,
) -> Result<Vec<VirtualChannelEstimate>> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.noise_seed);
    rng.set_stream(noise_stream);
    let solver = cfg.recovery();
    scene
        .channels
        .iter()
        .enumerate()
        .map(|(b, ch)| {
            let record = measure(&ch.h, schedule, b, codebooks, power, cfg.n0, &mut rng)?;
            recover(&record, &solver)
        })
        .collect()
}

/// The `count` largest-magnitude entries, ties to the smaller `(n_b, n_u)`.
pub fn strongest_pairs(v: &CMatrix, count: usize) -> Vec<(usize, usize)> {
    let mut cells: Vec<(usize, usize)> = (0..v.nrows())
        .flat_map(|n_b| (0..v.ncols()).map(move |n_u| (n_b, n_u)))
        .collect();
    cells.sort_by(|&a, &b| v[b].norm().total_cmp(&v[a].norm()).then(a.cmp(&b)));
    cells.truncate(count);
    cells
}

/// Fused maps for every BS of the network.
pub fn fuse_all(
    scene: &TrialScene,
    estimates: &[CMatrix],
    codebooks: &Codebooks,
    params: FusionParams,
    n_d: usize,
) -> Result<Vec<BeamProbabilityMap>> {
    let num_bs = estimates.len();
    (0..num_bs)
        .map(|b| {
            let shared = (0..num_bs)
                .filter(|&p| p != b)
                .map(|p| SharedRays::from_estimate(&estimates[p], &scene.table, p, b, n_d))
                .collect::<Result<Vec<_>>>()?;
            let ctx = PairContext {
                table: &scene.table,
                deployment: &scene.deployment,
                codebooks,
                params,
                own: b,
            };
            fuse_network(&ctx, &estimates[b], &shared)
        })
        .collect()
}

/// Measurement gain `A_g = sqrt(P N_UE N_BS / R)` with `R` active UE beams.
pub fn measurement_gain(cfg: &ExperimentConfig, schedule: &BeamSchedule, power: f64) -> f64 {
    (power * (cfg.n_ue * cfg.n_bs) as f64 / schedule.active_ue_beams() as f64).sqrt()
}

pub fn fusion_params(cfg: &ExperimentConfig, schedule: &BeamSchedule, power: f64) -> FusionParams {
    FusionParams {
        beta: cfg.beta,
        variance: cfg.posterior_variance_for(measurement_gain(cfg, schedule, power)),
    }
}

/// One scheme at one power in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub p_dbm: f64,
    /// Achievable rate of each BS link.
    pub rates: Vec<f64>,
    pub selections: Vec<Vec<(usize, usize)>>,
}

impl SchemeOutcome {
    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean_rate(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len() as f64
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn link_options(&self, r_th: f64) -> usize {
        coverage_counts(&self.rates, r_th)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: usize,
    pub outcomes: Vec<SchemeOutcome>,
}

impl TrialOutcome {
    pub fn get(&self, scheme: Scheme, p_dbm: f64) -> Option<&SchemeOutcome> {
        self.outcomes
            .iter()
            .find(|o| o.scheme == scheme && o.p_dbm == p_dbm)
    }
}

/// Schemes to evaluate: the requested ones plus the baselines they pair with.
fn evaluated_schemes(cfg: &ExperimentConfig) -> Vec<Scheme> {
    let mut set: BTreeSet<Scheme> = cfg.schemes.iter().copied().collect();
    for s in &cfg.schemes {
        set.insert(s.baseline());
    }
    set.into_iter().collect()
}

pub fn run_trial(
    cfg: &ExperimentConfig,
    codebooks: &Codebooks,
    trial: usize,
) -> Result<TrialOutcome> {
    let scene = draw_scene(cfg, trial)?;
    let schemes = evaluated_schemes(cfg);
    let es_schedule = if schemes.iter().any(|s| s.exhaustive()) {
        Some(exhaustive_schedule(&cfg.terminals())?)
    } else {
        None
    };
    let n_d = cfg.share_n_d.unwrap_or(cfg.n_bs * cfg.n_ue);
    let mut outcomes = Vec::new();

    for &p_dbm in &cfg.p_dbm {
        let power = dbm_to_linear(p_dbm);
        for exhaustive in [true, false] {
            let modes: Vec<Scheme> = schemes
                .iter()
                .copied()
                .filter(|s| s.exhaustive() == exhaustive)
                .collect();
            if modes.is_empty() {
                continue;
            }
            let (schedule, stream) = match (exhaustive, &es_schedule) {
                (true, Some(es)) => (es, 0),
                _ => (&scene.rdb_schedule, 1),
            };
            let estimates: Vec<CMatrix> =
                estimate_network(cfg, &scene, schedule, codebooks, power, stream)?
                    .into_iter()
                    .map(|e| e.v)
                    .collect();
            let maps = if modes.iter().any(|s| s.cooperative()) {
                let params = fusion_params(cfg, schedule, power);
                Some(fuse_all(&scene, &estimates, codebooks, params, n_d)?)
            } else {
                None
            };
            for scheme in modes {
                let selections: Vec<Vec<(usize, usize)>> = match (&maps, scheme.cooperative()) {
                    (Some(maps), true) => maps
                        .iter()
                        .zip(&estimates)
                        .map(|(m, v)| select_beams(m, v, cfg.streams, cfg.probability_floor))
                        .collect(),
                    _ => estimates
                        .iter()
                        .map(|v| strongest_pairs(v, cfg.streams))
                        .collect(),
                };
                let rates = scene
                    .channels
                    .iter()
                    .zip(&selections)
                    .map(|(ch, sel)| rate_for_pairs(&ch.h, sel, codebooks, power, cfg.n0))
                    .collect::<Result<Vec<_>>>()?;
                outcomes.push(SchemeOutcome {
                    scheme,
                    p_dbm,
                    rates,
                    selections,
                });
            }
        }
    }
    Ok(TrialOutcome { trial, outcomes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateStat {
    Min,
    Mean,
    Max,
}

impl RateStat {
    pub const ALL: [RateStat; 3] = [RateStat::Min, RateStat::Mean, RateStat::Max];

    fn name(self) -> &'static str {
        match self {
            RateStat::Min => "min_rate",
            RateStat::Mean => "mean_rate",
            RateStat::Max => "max_rate",
        }
    }

    fn of(self, o: &SchemeOutcome) -> f64 {
        match self {
            RateStat::Min => o.min_rate(),
            RateStat::Mean => o.mean_rate(),
            RateStat::Max => o.max_rate(),
        }
    }
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub p_dbm: f64,
    pub metric: String,
    pub value: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialOutcome>,
}

impl ExperimentResults {
    /// Per-trial statistic, in trial order.
    pub fn rate_series(&self, scheme: Scheme, p_dbm: f64, stat: RateStat) -> Vec<f64> {
        self.outcomes(scheme, p_dbm).map(|o| stat.of(o)).collect()
    }

    /// Per-trial link-option counts.
    pub fn link_option_series(&self, scheme: Scheme, p_dbm: f64, r_th: f64) -> Vec<usize> {
        self.outcomes(scheme, p_dbm)
            .map(|o| o.link_options(r_th))
            .collect()
    }

    /// Empirical `Pr(N_LO >= k)`.
    pub fn coverage_at_least(&self, scheme: Scheme, p_dbm: f64, r_th: f64, k: usize) -> f64 {
        let s = self.link_option_series(scheme, p_dbm, r_th);
        s.iter().filter(|&&n| n >= k).count() as f64 / s.len() as f64
    }

    /// Empirical `Pr(N_LO <= k)`, the coverage CDF.
    pub fn coverage_at_most(&self, scheme: Scheme, p_dbm: f64, r_th: f64, k: usize) -> f64 {
        let s = self.link_option_series(scheme, p_dbm, r_th);
        s.iter().filter(|&&n| n <= k).count() as f64 / s.len() as f64
    }

    fn outcomes(&self, scheme: Scheme, p_dbm: f64) -> impl Iterator<Item = &SchemeOutcome> + '_ {
        self.trials.iter().filter_map(move |t| t.get(scheme, p_dbm))
    }

    pub fn summary(&self) -> Result<Vec<SummaryRow>> {
        let cfg = &self.config;
        let n = self.trials.len() as f64;
        let mut rows = Vec::new();
        for &p_dbm in &cfg.p_dbm {
            for &scheme in &cfg.schemes {
                let mut push = |metric: String, (value, ci95): (f64, f64)| {
                    rows.push(SummaryRow {
                        scheme,
                        p_dbm,
                        metric,
                        value,
                        ci95,
                    })
                };
                for stat in RateStat::ALL {
                    push(
                        stat.name().into(),
                        mean_ci95(&self.rate_series(scheme, p_dbm, stat)),
                    );
                }
                if scheme.cooperative() {
                    for stat in RateStat::ALL {
                        let t = self.rate_series(scheme, p_dbm, stat);
                        let c = self.rate_series(scheme.baseline(), p_dbm, stat);
                        let d: Vec<f64> = t.iter().zip(&c).map(|(a, b)| a - b).collect();
                        push(format!("{}_gain", stat.name()), mean_ci95(&d));
                        if t.len() >= 2 {
                            let test = paired_t_test(&t, &c)?;
                            push(
                                format!("{}_gain_p_greater", stat.name()),
                                (test.p_greater, 0.0),
                            );
                        }
                    }
                }
                for &r_th in &cfg.r_th {
                    for k in 0..=cfg.num_bs {
                        let binomial = |p: f64| (p, 1.96 * (p * (1.0 - p) / n).sqrt());
                        push(
                            format!("n_lo_le_{k}_rth_{r_th}"),
                            binomial(self.coverage_at_most(scheme, p_dbm, r_th, k)),
                        );
                        push(
                            format!("n_lo_ge_{k}_rth_{r_th}"),
                            binomial(self.coverage_at_least(scheme, p_dbm, r_th, k)),
                        );
                    }
                }
            }
        }
        Ok(rows)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from("scheme,P_dBm,metric,value,ci95\n");
        for r in self.summary()? {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.scheme, r.p_dbm, r.metric, r.value, r.ci95
            )
            .expect("writing to a String");
        }
        Ok(out)
    }

    /// Summary rows, plus per-trial arrays when `verbose`.
    pub fn to_json(&self, verbose: bool) -> Result<Value> {
        let summary: Vec<Value> = self
            .summary()?
            .into_iter()
            .map(|r| {
                json!({
                    "scheme": r.scheme.name(),
                    "P_dBm": r.p_dbm,
                    "metric": r.metric,
                    "value": r.value,
                    "ci95": r.ci95,
                })
            })
            .collect();
        let mut doc = json!({
            "config": serde_json::to_value(&self.config)?,
            "summary": summary,
        });
        if verbose {
            let mut per_trial = Vec::new();
            for &p_dbm in &self.config.p_dbm {
                for scheme in evaluated_schemes(&self.config) {
                    let rates: Vec<Vec<f64>> = self
                        .outcomes(scheme, p_dbm)
                        .map(|o| o.rates.clone())
                        .collect();
                    let selections: Vec<&Vec<Vec<(usize, usize)>>> = self
                        .outcomes(scheme, p_dbm)
                        .map(|o| &o.selections)
                        .collect();
                    per_trial.push(json!({
                        "scheme": scheme.name(),
                        "P_dBm": p_dbm,
                        "min_rate": self.rate_series(scheme, p_dbm, RateStat::Min),
                        "mean_rate": self.rate_series(scheme, p_dbm, RateStat::Mean),
                        "max_rate": self.rate_series(scheme, p_dbm, RateStat::Max),
                        "link_rates": rates,
                        "selections": selections,
                    }));
                }
            }
            doc["trials"] = Value::Array(per_trial);
        }
        Ok(doc)
    }

    /// Writes `results.csv` and `results.json` into `dir`.
    pub fn write(&self, dir: &Path, verbose: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.csv"), self.to_csv()?)?;
        let json = serde_json::to_string_pretty(&self.to_json(verbose)?)?;
        std::fs::write(dir.join("results.json"), json)?;
        Ok(())
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let codebooks = Codebooks::new(cfg.n_ue, cfg.n_bs);
    let work = || -> Result<Vec<TrialOutcome>> {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, &codebooks, t))
            .collect()
    };
    let trials = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| RapidError::Config(format!("cannot start {n} workers: {e}")))?
            .install(work)?,
        None => work()?,
    };
    Ok(ExperimentResults {
        config: cfg.clone(),
        trials,
    })
}

/// Reruns the experiment at each power in `p_dbm`, one power per run.
pub fn sweep(cfg: &ExperimentConfig, p_dbm: &[f64]) -> Result<Vec<ExperimentResults>> {
    p_dbm
        .iter()
        .map(|&p| {
            let mut c = cfg.clone();
            c.p_dbm = vec![p];
            run_experiment(&c)
        })
        .collect()
}

/// Debug view of one trial: deployment, channels, estimates and fused maps.
pub fn trial_detail(cfg: &ExperimentConfig, trial: usize, p_dbm: f64) -> Result<Value> {
    cfg.validate()?;
    let codebooks = Codebooks::new(cfg.n_ue, cfg.n_bs);
    let scene = draw_scene(cfg, trial)?;
    let estimates: Vec<CMatrix> = estimate_network(
        cfg,
        &scene,
        &scene.rdb_schedule,
        &codebooks,
        dbm_to_linear(p_dbm),
        1,
    )?
    .into_iter()
    .map(|e| e.v)
    .collect();
    let params = fusion_params(cfg, &scene.rdb_schedule, dbm_to_linear(p_dbm));
    let maps = if cfg.num_bs >= 2 {
        let n_d = cfg.share_n_d.unwrap_or(cfg.n_bs * cfg.n_ue);
        fuse_all(&scene, &estimates, &codebooks, params, n_d)?
            .iter()
            .map(BeamProbabilityMap::to_json)
            .collect()
    } else {
        Vec::new()
    };
    Ok(json!({
        "deployment": serde_json::to_value(&scene.deployment)?,
        "channels": scene.channels.iter().map(ChannelMatrix::to_json).collect::<Vec<_>>(),
        "estimates": estimates.iter().map(crate::channel::complex_matrix_json).collect::<Vec<_>>(),
        "fused_maps": maps,
    }))
}
