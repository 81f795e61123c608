//! Hot-path benchmarks: quantizer fitting, tokenization, the training
//! gradient, view construction, beam decoding, and a full desk-scale epoch.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use sidrec_bench::{desk_run, gaussian_points, random_context, random_params, random_sid};
use sidrec_core::dataset::{leave_last_out, sliding_window_expand, valid_instances};
use sidrec_core::decoding::cpd_decode;
use sidrec_core::evaluate::catalog_sids;
use sidrec_core::linalg::seeded_rng;
use sidrec_core::network::{encode, loss_and_grad, ViewBatchItem};
use sidrec_core::noising::{build_ocn_views, default_schedule, probe_difficulty};
use sidrec_core::synth;
use sidrec_core::tokenizer::{fit_pse, tokenize};
use sidrec_core::train::train;

fn bench_fit_pse(c: &mut Criterion) {
    let points = gaussian_points(512, 16, 1);
    c.bench_function("fit_pse/512x16 n=4 m=8 iters=5", |b| {
        b.iter(|| fit_pse(black_box(&points), 4, 8, 5, 0).unwrap())
    });
}

fn bench_tokenize(c: &mut Criterion) {
    let points = gaussian_points(512, 16, 1);
    let fit = fit_pse(&points, 4, 8, 5, 0).unwrap();
    let ids: Vec<String> = (0..512).map(|i| format!("item{i:04}")).collect();
    c.bench_function("tokenize/512 items", |b| {
        b.iter(|| tokenize(black_box(&ids), &points, &fit.codebooks).unwrap())
    });
}

fn bench_loss_and_grad(c: &mut Criterion) {
    let run = desk_run();
    let cfg = run.model_config();
    let params = random_params(&cfg, 2);
    let mut rng = seeded_rng(3);
    let samples: Vec<_> = (0..16)
        .map(|_| {
            (
                random_context(&cfg, 8, &mut rng),
                random_sid(&cfg, &mut rng),
            )
        })
        .collect();
    let views = build_ocn_views(
        &sidrec_core::noising::DifficultyProfile::from_p_max(vec![0.3, 0.6, 0.9]),
        &default_schedule(cfg.n),
    )
    .unwrap()
    .views;
    let batch: Vec<ViewBatchItem> = samples
        .iter()
        .map(|(ctx, tgt)| ViewBatchItem {
            context: ctx,
            target: tgt,
            views: &views,
        })
        .collect();
    c.bench_function("loss_and_grad/batch=16 views=3", |b| {
        b.iter(|| loss_and_grad(black_box(&batch), &params, &cfg, 0.1, &mut rng).unwrap())
    });
}

fn bench_ocn_views(c: &mut Criterion) {
    let run = desk_run();
    let cfg = run.model_config();
    let params = random_params(&cfg, 2);
    let mut rng = seeded_rng(4);
    let context = random_context(&cfg, 8, &mut rng);
    let target = random_sid(&cfg, &mut rng);
    let state = encode(&context, &params, &cfg).unwrap();
    let schedule = default_schedule(cfg.n);
    c.bench_function("ocn/probe and build views", |b| {
        b.iter(|| {
            let profile = probe_difficulty(&target, &state, &params, &cfg).unwrap();
            build_ocn_views(black_box(&profile), &schedule).unwrap()
        })
    });
}

fn bench_decode(c: &mut Criterion) {
    let run = desk_run();
    let cfg = run.model_config();
    let params = random_params(&cfg, 2);
    let mut rng = seeded_rng(5);
    let context = random_context(&cfg, 8, &mut rng);
    let state = encode(&context, &params, &cfg).unwrap();
    c.bench_function("cpd_decode/b_act=64 k=10", |b| {
        b.iter(|| cpd_decode(black_box(&state), &params, &cfg, 64, 10).unwrap())
    });
}

fn bench_train_epoch(c: &mut Criterion) {
    let (table, log) = synth::generate(12, 10, 9).unwrap();
    let fit = fit_pse(&table.vectors, 3, 4, 10, 9).unwrap();
    let map = tokenize(&table.ids, &table.vectors, &fit.codebooks).unwrap();
    let split = leave_last_out(&log);
    let mut run = desk_run();
    run.set("epochs", "1").unwrap();
    let train_set = sliding_window_expand(&split, &map, run.l_input).unwrap();
    let valid_set = valid_instances(&split, &map, run.l_input).unwrap();
    let catalog = catalog_sids(&map);
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("one epoch, 12 users", |b| {
        b.iter(|| train(black_box(&train_set), &valid_set, &catalog, &run).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_fit_pse,
    bench_tokenize,
    bench_loss_and_grad,
    bench_ocn_views,
    bench_decode,
    bench_train_epoch
);
criterion_main!(benches);
