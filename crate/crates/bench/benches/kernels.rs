use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use tdmpc_lab::harness::{stream, train_step};
use tdmpc_lab::planner::{plan, LearnedModel};
use tdmpc_lab::rng::seeded;
use tdmpc_lab::tensor::{Mlp, MlpSpec};
use tdmpc_lab::{RunConfig, Tape};
use tdmpc_lab_bench::{desk_config, warmed_trainer};

fn matmul(c: &mut Criterion) {
    let (n, k, m) = (64, 64, 64);
    let a: Vec<f64> = (0..n * k).map(|i| (i % 7) as f64 * 0.1).collect();
    let b: Vec<f64> = (0..k * m).map(|i| (i % 5) as f64 * 0.1).collect();
    c.bench_function("matmul_64_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = tape.variable(vec![n, k], a.clone());
            let w = tape.variable(vec![k, m], b.clone());
            let y = tape.matmul(x, w).unwrap();
            let l = tape.sum_all(y);
            tape.backward(l).unwrap();
            black_box(tape.grad(w).map(|g| g[0]))
        })
    });
}

fn mlp(c: &mut Criterion) {
    let mut rng = seeded(0);
    let net = Mlp::new(MlpSpec::new(vec![40, 64, 64, 101]), 1.0, &mut rng).unwrap();
    let x: Vec<f64> = (0..64 * 40).map(|i| (i as f64 * 0.37).sin()).collect();
    c.bench_function("mlp_infer_64_rows", |b| b.iter(|| black_box(net.infer(&x, 64))));
}

fn planner(c: &mut Criterion) {
    let mut group = c.benchmark_group("plan");
    group.sample_size(10);
    for (name, cfg) in [("desk", desk_config()), ("default", RunConfig::default())] {
        let t = warmed_trainer(cfg);
        let z = t.model.encode(&t.buffer.get(0).obs).unwrap();
        let agent = LearnedModel { model: &t.model, policy: &t.policy };
        let mut seed = 0;
        group.bench_function(name, |b| {
            b.iter(|| {
                seed += 1;
                black_box(plan(&agent, &z, None, &t.config.planner, seed, true).unwrap())
            })
        });
    }
    group.finish();
}

fn update(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    let t = warmed_trainer(desk_config());
    let mut counter = 0;
    group.bench_function("desk", |b| {
        b.iter_batched(
            || (t.model.clone(), t.policy.clone(), t.opt.clone(), t.tracker),
            |(mut model, mut policy, mut opt, mut tracker)| {
                counter += 1;
                let mut rng = stream(0, 3, counter);
                let cfg = &t.config;
                black_box(train_step(&t.buffer, &mut model, &mut policy, &mut opt, &mut tracker, cfg.variant, 1.0, cfg, &mut rng, false).unwrap())
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, matmul, mlp, planner, update);
criterion_main!(benches);
