//! Benchmarks for the hot paths of the pipeline: feature encoding, the
//! objective and its gradients over a training batch, and candidate ranking.

use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use orbitax_core::config::RunConfig;
use orbitax_core::encoder::encode;
use orbitax_core::inference::rank_candidates;
use orbitax_core::losses::{gradients, total_objective, Triplet};
use orbitax_core::synthetic::{planted_features, planted_tree};
use orbitax_core::taxonomy::{compute_radii, sample_triplets, Taxonomy};
use orbitax_core::train::{encode_taxonomy, Trainer};

struct Fixture {
    cfg: RunConfig,
    trainer: Trainer,
    t: Taxonomy,
    features: BTreeMap<String, Vec<f64>>,
    batch: Vec<Triplet>,
}

fn fixture() -> Fixture {
    let cfg = RunConfig::from_toml_str(
        "[model]\nd = 32\nhidden = 32\n\
         [training]\nbatch_size = 32\nn_neg = 2\nseed = 1\n",
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.training.seed);
    let trainer = Trainer::new(&cfg, &mut rng).unwrap();
    let t = Taxonomy::from_edges(&planted_tree(4, 3), None).unwrap();
    let features = planted_features(&t, 32, 0.1, 1).unwrap();
    let (id_triplets, _) = sample_triplets(&t, cfg.training.n_neg, &mut rng).unwrap();
    let batch: Vec<Triplet> = id_triplets
        .into_iter()
        .take(cfg.training.batch_size)
        .map(|tr| Triplet {
            child_feat: features[&tr.child].clone(),
            parent_feat: features[&tr.parent].clone(),
            negative_feat: features[&tr.negative].clone(),
            child_id: tr.child,
            parent_id: tr.parent,
            negative_id: tr.negative,
        })
        .collect();
    Fixture {
        cfg,
        trainer,
        t,
        features,
        batch,
    }
}

fn bench_encode(c: &mut Criterion) {
    let f = fixture();
    let feat = f.features[&f.t.ids()[0]].clone();
    c.bench_function("encode_single_feature_d32", |b| {
        b.iter(|| encode(&f.trainer.params, std::hint::black_box(&feat)).unwrap())
    });
    c.bench_function("encode_taxonomy_85_nodes", |b| {
        b.iter(|| encode_taxonomy(&f.trainer.params, &f.t, &f.features).unwrap())
    });
}

fn bench_objective(c: &mut Criterion) {
    let f = fixture();
    let loss_cfg = f.cfg.loss_config().unwrap();
    c.bench_function("total_objective_batch32", |b| {
        b.iter(|| {
            total_objective(
                std::hint::black_box(&f.batch),
                &f.trainer.params,
                &loss_cfg,
            )
            .unwrap()
        })
    });
    c.bench_function("gradients_batch32", |b| {
        b.iter(|| {
            gradients(
                &f.trainer.params,
                std::hint::black_box(&f.batch),
                &loss_cfg,
            )
            .unwrap()
        })
    });
}

fn bench_rank(c: &mut Criterion) {
    let f = fixture();
    let radii = compute_radii(&f.t);
    let embeddings = encode_taxonomy(&f.trainer.params, &f.t, &f.features).unwrap();
    let gate = f.cfg.gate_config().unwrap();
    let zq = encode(&f.trainer.params, &f.features[&f.t.ids()[3]]).unwrap();
    c.bench_function("rank_candidates_85_nodes", |b| {
        b.iter_batched(
            || zq.clone(),
            |z| rank_candidates("q", &z, &f.t, &radii, &embeddings, &gate, 10).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_encode, bench_objective, bench_rank);
criterion_main!(benches);
