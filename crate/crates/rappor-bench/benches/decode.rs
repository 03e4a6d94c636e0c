//! Aggregator-side cost: the least-squares fit, likelihood caching, the
//! joint fit, and clique assembly.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rappor_core::bits::BitVector;
use rappor_core::dict::CandidateDictionary;
use rappor_core::encode::{bloom_encode, instantaneous_response};
use rappor_core::graph::{find_candidates, NGramGraph};
use rappor_core::joint::{em_fit_cached, JointConfig, JointSide, LikelihoodCache};
use rappor_core::marginal::fit_marginal;
use rappor_core::params::RapporParams;

fn reports_for(
    entries: &[String],
    mixture: &[usize],
    n: usize,
    params: &RapporParams,
    salt: &str,
    seed: u64,
) -> Vec<BitVector> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|r| {
            let value = &entries[mixture[r % mixture.len()]];
            instantaneous_response(&bloom_encode(value, params, salt), params, &mut rng)
        })
        .collect()
}

fn bench_fit_marginal(c: &mut Criterion) {
    let params = RapporParams {
        k: 128,
        h: 2,
        f: 0.0,
        p: 0.25,
        q: 0.75,
    };
    let entries: Vec<String> = (0..100).map(|i| format!("w{i:05}")).collect();
    let dict = CandidateDictionary::bloom(entries.clone(), &params, "full").unwrap();
    let reports = reports_for(&entries, &[0, 0, 0, 1, 1, 2], 5000, &params, "full", 17);
    c.bench_function("fit_marginal_100x128", |b| {
        b.iter(|| fit_marginal(black_box(&reports), &dict, &params, 0.05))
    });
}

fn joint_inputs() -> (LikelihoodCache, LikelihoodCache) {
    let params = RapporParams {
        k: 32,
        h: 2,
        f: 0.0,
        p: 0.2,
        q: 0.8,
    };
    let x_entries: Vec<String> = ["apple", "pear", "plum"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let y_entries: Vec<String> = ["left", "right", "middle"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let x_dict = CandidateDictionary::bloom(x_entries.clone(), &params, "x").unwrap();
    let y_dict = CandidateDictionary::bloom(y_entries.clone(), &params, "y").unwrap();
    let xs = reports_for(&x_entries, &[0, 0, 0, 1, 1, 2], 2000, &params, "x", 5);
    let ys = reports_for(&y_entries, &[0, 1, 1, 2, 0, 0], 2000, &params, "y", 6);
    let lx = LikelihoodCache::build(&xs, &JointSide::new(&x_dict, &params)).unwrap();
    let ly = LikelihoodCache::build(&ys, &JointSide::new(&y_dict, &params)).unwrap();
    (lx, ly)
}

fn bench_likelihood_cache(c: &mut Criterion) {
    let params = RapporParams {
        k: 32,
        h: 2,
        f: 0.0,
        p: 0.2,
        q: 0.8,
    };
    let entries: Vec<String> = ["apple", "pear", "plum"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let dict = CandidateDictionary::bloom(entries.clone(), &params, "x").unwrap();
    let reports = reports_for(&entries, &[0, 0, 0, 1, 1, 2], 2000, &params, "x", 5);
    let side = JointSide::new(&dict, &params);
    c.bench_function("likelihood_cache_2000x3", |b| {
        b.iter(|| LikelihoodCache::build(black_box(&reports), &side))
    });
}

fn bench_em_fit(c: &mut Criterion) {
    let (lx, ly) = joint_inputs();
    let cfg = JointConfig::default();
    c.bench_function("em_fit_3x3_2000", |b| {
        b.iter(|| em_fit_cached(black_box(&lx), black_box(&ly), &cfg))
    });
}

fn bench_find_candidates(c: &mut Criterion) {
    let per_partition = 12;
    let partitions: Vec<Vec<String>> = (0..3)
        .map(|p| {
            (0..per_partition)
                .map(|i| format!("{}{}", char::from(b'a' + p as u8), i))
                .collect()
        })
        .collect();
    let mut graph = NGramGraph::new(partitions);
    for s in 0..8 {
        graph.add_edge((0, s), (1, s), 0.05).unwrap();
        graph.add_edge((1, s), (2, s), 0.05).unwrap();
        graph.add_edge((0, s), (2, s), 0.05).unwrap();
    }
    for s in 0..per_partition {
        graph.add_edge((0, s), (1, (s + 1) % per_partition), 0.01).unwrap();
        graph.add_edge((1, s), (2, (s + 5) % per_partition), 0.01).unwrap();
    }
    c.bench_function("find_candidates_3x12", |b| {
        b.iter(|| find_candidates(black_box(&graph), 1_000_000))
    });
}

criterion_group!(
    benches,
    bench_fit_marginal,
    bench_likelihood_cache,
    bench_em_fit,
    bench_find_candidates
);
criterion_main!(benches);
