//! Pipeline throughput for the rayon backend against the sequential one.
//!
//! Benchmark ids carry the backend name. A default build measures `parallel`
//! plus `parallel-1thread` (the same code confined to a one-thread pool); a
//! `--no-default-features` build measures the plain-loop `sequential` path.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use protogroup::data::{apply_split, generate_blobs, BlobConfig, SplitConfig};
use protogroup::grouping::{jaccard_affinity, representing_sets};
use protogroup::par::is_parallel;
use protogroup::prototypes::assign_prototypes;
use protogroup::trainer::{train_epoch, TrainConfig, TrainState};

fn backends() -> Vec<(&'static str, Option<usize>)> {
    if is_parallel() {
        vec![("parallel", None), ("parallel-1thread", Some(1))]
    } else {
        vec![("sequential", None)]
    }
}

/// Runs `f` inside a pool of `threads` workers, or directly when `None`.
fn within<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f),
        _ => f(),
    }
}

fn pipeline(c: &mut Criterion) {
    let data = apply_split(
        &generate_blobs(&BlobConfig::default()).unwrap(),
        &SplitConfig::default(),
        0,
    )
    .unwrap();
    let cfg = TrainConfig::default();
    let state = TrainState::new(&data, &cfg).unwrap();
    let z = state.embed(&data.features).unwrap();
    let p = assign_prototypes(&z, &state.bank).unwrap();

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for (name, threads) in backends() {
        group.bench_function(format!("{name}/embed+assign"), |b| {
            b.iter(|| within(threads, || assign_prototypes(&state.embed(&data.features).unwrap(), &state.bank).unwrap()))
        });
        group.bench_function(format!("{name}/affinity"), |b| {
            b.iter(|| within(threads, || jaccard_affinity(&representing_sets(&p, cfg.kappa).unwrap())))
        });
        group.bench_function(format!("{name}/epoch"), |b| {
            b.iter_batched(
                || state.clone(),
                |mut s| within(threads, || train_epoch(&mut s, &data, &cfg).unwrap()),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
