//! Compares the pooled job runner against the always-sequential one on a
//! realistic grid workload: many independent solver trials, as issued by the
//! transition/sensitivity commands.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use lmm::losses::LossKind;
use lmm::par::{run_jobs, run_jobs_sequential};
use lmm::problems::gen_matrix;
use lmm::rng::cell_seed;
use lmm::solver::{lmm_run, DampingRule, SolverOptions, StepsizeConfig};

fn trial(seed: u64) -> usize {
    let inst = gen_matrix(true, 12, 12, 2, 2, 1.0, Some(96), LossKind::L1, 0.1, seed).unwrap();
    let cfg = StepsizeConfig::Polyak {
        gamma: 1.0,
        damping: DampingRule::LossProxy { c: 1e-5, p: 1.0 },
        h_star: 0.0,
    };
    let opts = SolverOptions {
        max_iters: 150,
        record_every: 50,
        ..Default::default()
    };
    let t = lmm_run(&inst.map, &inst.loss, &inst.x0, &cfg, &opts, Some(&inst.gt.z_star)).unwrap();
    t.records.len()
}

fn grid_seeds() -> Vec<u64> {
    (0..24).map(|i| cell_seed(9, 96, 0.1, i)).collect()
}

fn bench_runners(c: &mut Criterion) {
    let mut group = c.benchmark_group("grid_24_trials");
    group.sample_size(10);
    group.bench_function("pooled", |b| {
        b.iter_batched(grid_seeds, |s| run_jobs(s, trial), BatchSize::SmallInput)
    });
    group.bench_function("sequential", |b| {
        b.iter_batched(
            grid_seeds,
            |s| run_jobs_sequential(s, trial),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, bench_runners);
criterion_main!(benches);
