use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use llmrank::ranker::{loss_and_gradients, predict_scores, DropoutMasks, ParamSet, RankerDims};
use llmrank::routing::{evaluate, oracle_decisions};
use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ranker(c: &mut Criterion) {
    let split = llmrank_bench::prepared(1024, 1);
    let inputs = &split.inputs;
    let dims = RankerDims {
        features: inputs.features.ncols(),
        text: inputs.embeddings.ncols(),
        hidden: 256,
        models: inputs.num_models(),
    };
    let params = ParamSet::he_uniform(dims, 0);
    let xf = inputs.features.slice(s![..256, ..]);
    let xt = inputs.embeddings.slice(s![..256, ..]);
    let u = inputs.quality.slice(s![..256, ..]);

    let mut group = c.benchmark_group("ranker");
    group.bench_function("forward_backward_batch_256", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.iter_batched(
            || DropoutMasks::sample(&mut rng, 256, 256, 0.1),
            |masks| loss_and_gradients(black_box(&params), xf, xt, u, 0.5, masks).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.bench_function("predict_1024", |b| {
        b.iter(|| predict_scores(black_box(&params), inputs.features.view(), inputs.embeddings.view()).unwrap())
    });
    group.bench_function("evaluate_oracle_1024", |b| {
        let decisions = oracle_decisions(&split.dataset);
        b.iter(|| evaluate(black_box(&decisions), &split.dataset, 1e3).unwrap())
    });
    group.finish();
}

criterion_group!(benches, ranker);
criterion_main!(benches);
