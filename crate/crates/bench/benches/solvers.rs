use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use wgdp_bench::fixture;
use wgdp_core::empirical::{ags_default_params, mgr_default_params, run_ags, run_mgr, ProblemScales};
use wgdp_core::online::{run_game, DpFtrl, GameConfig};
use wgdp_core::phased_erm::{make_schedule, run_phased_erm, PhasedOptions};
use wgdp_core::saddle::{solve_to_alpha, SaddleSolver};
use wgdp_core::{PrivacyBudget, RandomStream, RegularizedObjective, SampleOracleSet};

fn saddle(c: &mut Criterion) {
    let mut group = c.benchmark_group("saddle");
    group.sample_size(20);
    for n in [16, 128] {
        let f = fixture(4, 4, n);
        let space = &f.generator.space;
        let obj = RegularizedObjective::new(&f.collection, &f.generator.loss, space, 0.5, 0.1, space.center.clone())
            .expect("objective");
        for (name, solver) in [
            ("averaged", SaddleSolver::Averaged),
            ("primal", SaddleSolver::Primal { max_iterations: 1_000_000 }),
        ] {
            group.bench_with_input(BenchmarkId::new(name, n), &obj, |b, obj| {
                b.iter(|| solve_to_alpha(obj, 1e-2, &space.center, solver).expect("solve"))
            });
        }
    }
    group.finish();
}

fn algorithms(c: &mut Criterion) {
    let mut group = c.benchmark_group("algorithms");
    group.sample_size(10);
    let budget = 4096;
    let privacy = PrivacyBudget::new(1.0, 1e-5).expect("budget");
    let f = fixture(4, 4, budget / 4);
    let (loss, space) = (&f.generator.loss, &f.generator.space);

    group.bench_function("phased_erm", |b| {
        let schedule = make_schedule(budget, 4, 0.05, loss, privacy).expect("schedule");
        b.iter(|| {
            let mut oracles = SampleOracleSet::new(f.instance.groups.clone(), budget).expect("oracles");
            run_phased_erm(&mut oracles, &schedule, loss, space, &PhasedOptions::default(), &RandomStream::new(1))
                .expect("run")
        })
    });

    group.bench_function("oco_game", |b| {
        let config = GameConfig::new(budget / 2, 4, loss.range_bound, privacy).expect("config");
        b.iter(|| {
            let mut oracles = SampleOracleSet::new(f.instance.groups.clone(), budget).expect("oracles");
            let stream = RandomStream::new(1);
            let mut oco = DpFtrl::new(space, loss.lipschitz, config.rounds, privacy, None, stream.child(4))
                .expect("ftrl");
            run_game(&mut oracles, &config, &mut oco, loss, space, &stream).expect("run")
        })
    });

    let scales = ProblemScales::new(budget, loss, space, 4);
    let mgr = mgr_default_params(&scales, privacy).expect("mgr params");
    group.bench_function("mgr", |b| {
        b.iter(|| run_mgr(black_box(&f.collection), &mgr, loss, space, &RandomStream::new(1)).expect("run"))
    });
    let ags = ags_default_params(&scales, privacy).expect("ags params");
    group.bench_function("ags", |b| {
        b.iter(|| run_ags(black_box(&f.collection), &ags, loss, space, &RandomStream::new(1)).expect("run"))
    });
    group.finish();
}

criterion_group!(benches, saddle, algorithms);
criterion_main!(benches);
