use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gwork::diffmath::{matmul_t, AdamConfig, AdamState};
use gwork::eval::{build_triplets, far_pool_size};
use gwork::gw::{total_loss, PairedBatch, UnpairedBatch};
use gwork::{Architecture, ContrastiveMode, Dataset, DatasetConfig, Domain, Graph, GwModel, Tensor, Variant};
use rand::{Rng, SeedableRng};

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn matmul(c: &mut Criterion) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(0);
    let x = random(64, 256, &mut rng);
    let w = random(256, 256, &mut rng);
    c.bench_function("matmul_t 64x256x256", |b| b.iter(|| matmul_t(&x, &w)));
}

fn gw_step(c: &mut Criterion) {
    let mut rng = rand::rngs::StdRng::seed_from_u64(1);
    let arch = Architecture { hidden_width: 128, hidden_layers: 3 };
    let model = GwModel::new(Domain::Vision, Domain::Proto, arch, 0).unwrap();
    let (dv, dt) = (Domain::Vision.latent_dim(), Domain::Proto.latent_dim());
    let paired = PairedBatch { v: random(64, dv, &mut rng), t: random(64, dt, &mut rng) };
    let unpaired = UnpairedBatch { v: random(64, dv, &mut rng), t: random(64, dt, &mut rng) };
    let weights = Variant::AllSupAllCycles.default_weights();
    c.bench_function("gw step all_sup width 128 batch 64", |b| {
        b.iter_batched(
            || (model.clone(), AdamState::new(AdamConfig::with_lr(1e-3))),
            |(mut m, mut adam)| {
                let mut g = Graph::new();
                let (loss, _) =
                    total_loss(&mut g, &m, &weights, ContrastiveMode::Literal, &paired, &unpaired, false).unwrap();
                let grads = g.backward(loss).unwrap();
                adam.step(&mut m.store, &grads).unwrap();
                m
            },
            BatchSize::LargeInput,
        )
    });
}

fn data(c: &mut Criterion) {
    let cfg = DatasetConfig { k: 1000, n_test: 0, ..DatasetConfig::default() };
    c.bench_function("generate 1000 records", |b| b.iter(|| Dataset::generate(&cfg).unwrap()));
    let big = Dataset::generate(&DatasetConfig { k: 10_000, n_test: 0, ..DatasetConfig::default() }).unwrap();
    let protos: Vec<_> = big.train.iter().map(|r| r.proto).collect();
    let far = far_pool_size(protos.len());
    c.bench_function("build 1000 odd-one-out triplets over 10k", |b| {
        b.iter(|| build_triplets(&protos, 1000, far, 0, "bench").unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, gw_step, data
}
criterion_main!(benches);
