use criterion::{black_box, criterion_group, criterion_main, Criterion};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rapid_core::channel::Codebooks;
use rapid_core::evaluation::experiment::{draw_scene, estimate_network, fuse_all, fusion_params};
use rapid_core::evaluation::{dbm_to_linear, ExperimentConfig};
use rapid_core::geometry::build_intercept_table;
use rapid_core::measurement::measure;
use rapid_core::recovery::recover;

fn pipeline(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let cb = Codebooks::new(cfg.n_ue, cfg.n_bs);
    let scene = draw_scene(&cfg, 0).expect("scene");
    let power = dbm_to_linear(10.0);

    c.bench_function("intercept_table", |b| {
        b.iter(|| build_intercept_table(black_box(&scene.deployment), cfg.n_bs))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rec = measure(
        &scene.channels[0].h,
        &scene.rdb_schedule,
        0,
        &cb,
        power,
        cfg.n0,
        &mut rng,
    )
    .expect("measure");
    let solver = cfg.recovery();
    c.bench_function("omp_recover", |b| {
        b.iter(|| recover(black_box(&rec), &solver).expect("recover"))
    });

    let est: Vec<_> = estimate_network(&cfg, &scene, &scene.rdb_schedule, &cb, power, 1)
        .expect("estimate")
        .into_iter()
        .map(|e| e.v)
        .collect();
    let params = fusion_params(&cfg, &scene.rdb_schedule, power);
    let n_d = cfg.n_bs * cfg.n_ue;
    c.bench_function("fuse_all", |b| {
        b.iter(|| fuse_all(&scene, black_box(&est), &cb, params, n_d).expect("fuse"))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = pipeline
}
criterion_main!(benches);
