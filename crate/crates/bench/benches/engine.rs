use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use reuse_sweep::cluster::{simulate_cluster, ClusterSimConfig};
use reuse_sweep::reuse::{rtma_buckets, ReuseMode};
use reuse_sweep::scheduler::{execute_stage, Discipline, SchedulerConfig};
use reuse_sweep::store::DataStore;
use reuse_sweep::toy::SyntheticExecutor;
use reuse_sweep_bench::Workload;

fn planning(c: &mut Criterion) {
    let mut g = c.benchmark_group("rtma");
    for n in [200, 2000] {
        let w = Workload::new(n, 32);
        let tree = w.tree();
        g.bench_with_input(BenchmarkId::new("buckets_m28", n), &tree, |b, t| {
            b.iter(|| rtma_buckets(t, 28))
        });
        g.bench_with_input(BenchmarkId::new("study_plan_m28", n), &w, |b, w| {
            b.iter(|| w.plan(ReuseMode::Rmsr, 28))
        });
    }
    g.finish();
}

fn execution(c: &mut Criterion) {
    let w = Workload::new(120, 32);
    let plan = w.plan(ReuseMode::Rmsr, 28);
    let stage = &plan.stages[0];
    let mut g = c.benchmark_group("stage");
    for (name, exec) in [
        (
            "toy",
            &w.pipeline as &dyn reuse_sweep::scheduler::TaskExecutor,
        ),
        ("synthetic", &SyntheticExecutor),
    ] {
        g.bench_function(name, |b| {
            b.iter(|| {
                let store = DataStore::new();
                execute_stage(
                    stage,
                    &w.template,
                    &SchedulerConfig::rmsr(2, 2),
                    exec,
                    &store,
                )
                .expect("stage")
            })
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let w = Workload::new(2000, 32);
    let plan = w.plan(ReuseMode::Rmsr, 28);
    let mut g = c.benchmark_group("cluster");
    for nodes in [16, 256] {
        let cfg = ClusterSimConfig {
            nodes,
            workers_per_node: 4,
            active_paths: 2,
            discipline: Discipline::DepthFirst,
            dispatch_overhead: None,
        };
        g.bench_with_input(BenchmarkId::from_parameter(nodes), &cfg, |b, cfg| {
            b.iter(|| simulate_cluster(&plan.stages, &w.template, cfg))
        });
    }
    g.finish();
}

criterion_group!(benches, planning, execution, simulation);
criterion_main!(benches);
