use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use ksc_bench::{agents, bellman, ensemble, hk, ic_feedback};
use ksc_core::{bci_step, micro_step, BinaryFeedback, Penalty};

fn kinetic(c: &mut Criterion) {
    let k = hk();
    let mut g = c.benchmark_group("bci_step");
    for (name, fb) in [
        ("none", BinaryFeedback::None),
        ("ic-l1", ic_feedback(Penalty::L1)),
        ("ic-l2", ic_feedback(Penalty::L2)),
    ] {
        g.bench_function(format!("n20000/{name}"), |b| {
            b.iter_batched_ref(|| ensemble(20_000), |e| bci_step(e, &k, &fb), BatchSize::LargeInput)
        });
    }
    g.finish();
}

fn microscopic(c: &mut Criterion) {
    let k = hk();
    let fb = ic_feedback(Penalty::L1);
    c.bench_function("micro_step/n2000/ic-l1", |b| {
        b.iter_batched_ref(|| agents(2000), |s| micro_step(s, &k, &fb), BatchSize::LargeInput)
    });
}

fn bellman_sweep(c: &mut Criterion) {
    let (model, grid) = bellman(51, 21);
    c.bench_function("bellman_update/51x51/21", |b| b.iter(|| model.update(black_box(&grid)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kinetic, microscopic, bellman_sweep
}
criterion_main!(benches);
