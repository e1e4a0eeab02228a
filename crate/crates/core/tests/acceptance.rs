//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test --test acceptance`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use reuse_sweep::cluster::{simulate_cluster, ClusterSimConfig};
use reuse_sweep::param_space::{
    morris_trajectories, sample, ParameterSet, ParameterSpace, ParameterSpec, SampleMethod,
    SamplePlan,
};
use reuse_sweep::reuse::{
    plan_reuse, rtma_with_events, ReuseMode, ReuseTree, RtmaEvent, StudyPlan,
};
use reuse_sweep::sa::{morris_indices, sobol_vbd};
use reuse_sweep::scheduler::{
    config_for_mode, execute_plan, memory_bound, memory_bound_check, Discipline, TaskExecutor,
};
use reuse_sweep::store::DataStore;
use reuse_sweep::study::{run_study, strip_measured, Study, StudyConfig};
use reuse_sweep::toy::{
    decode_score, dice, reduced_space, synth_image, toy_template, LabelMask, SyntheticExecutor,
    ToyPipeline,
};
use reuse_sweep::workflow::{compact_compose, replica_stages, StageTemplate, TaskTemplate};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn morris_config() -> StudyConfig {
    StudyConfig::load(&configs().join("morris.json")).expect("bundled morris config loads")
}

fn grid_space(names: &[&str], lo: f64, hi: f64, step: f64) -> ParameterSpace {
    ParameterSpace::new(
        names
            .iter()
            .map(|n| ParameterSpec::grid(n, lo, hi, step, lo).unwrap())
            .collect(),
    )
    .unwrap()
}

fn equivalence() -> Outcome {
    let started = Instant::now();
    let space = reduced_space().unwrap();
    let sets = sample(
        &space,
        &SamplePlan::new(SampleMethod::MonteCarlo { count: 120 }, 5),
    )
    .unwrap();
    let pipeline = ToyPipeline::new(space.clone(), synth_image(1, 64, 64, 8).unwrap()).unwrap();
    let template = pipeline.template().unwrap();
    let oracle: Vec<u64> = sets
        .iter()
        .map(|s| pipeline.evaluate(s).unwrap().to_bits())
        .collect();
    ensure!(
        oracle.iter().collect::<BTreeSet<_>>().len() > 1,
        "Dice is constant over the sample, equivalence would be vacuous"
    );

    let mut variants = vec![(ReuseMode::None, 1, 1), (ReuseMode::Stage, 1, 1)];
    variants.extend([2, 4, 8].map(|m| (ReuseMode::Rtma, m, 1)));
    variants.extend([1, 2, 4].map(|ap| (ReuseMode::Rmsr, 28, ap)));
    let mut runs = 0;
    for (mode, m, ap) in variants {
        let plan = StudyPlan::build(&template, &sets, mode, m).unwrap();
        for workers in [1, 4] {
            let cfg = config_for_mode(mode, ap, workers);
            let run = execute_plan(&plan, &template, &cfg, &pipeline, &DataStore::new())
                .map_err(|e| e.to_string())?;
            for (i, payload) in run.outputs.iter().enumerate() {
                let got = decode_score(payload)
                    .ok_or("terminal output is not a score")?
                    .to_bits();
                ensure!(
                    got == oracle[i],
                    "{} M={m} ap={ap} workers={workers}: set {i} differs",
                    mode.name()
                );
            }
            runs += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1}s");
    Ok(format!(
        "{} sets x {runs} runs bit-identical to direct evaluation in {secs:.1}s",
        sets.len()
    ))
}

fn golden_buckets() -> Outcome {
    let space = grid_space(&["p0", "p1", "p2"], 0.0, 3.0, 1.0);
    let tasks = (0..3)
        .map(|i| {
            let prev = format!("t{}", i.max(1) - 1);
            let inputs: Vec<&str> = if i == 0 { vec![] } else { vec![prev.as_str()] };
            TaskTemplate::new(&format!("t{i}"), &[&format!("p{i}")], &inputs, 1.0, 8)
        })
        .collect();
    let template = StageTemplate::new(tasks, &space).unwrap();
    let levels: [[u32; 3]; 12] = [
        [0, 0, 0],
        [0, 0, 1],
        [0, 0, 2],
        [0, 1, 0],
        [0, 1, 1],
        [0, 1, 2],
        [0, 1, 3],
        [1, 0, 0],
        [1, 0, 1],
        [1, 0, 2],
        [1, 1, 0],
        [1, 2, 0],
    ];
    let sets: Vec<ParameterSet> = levels.iter().map(|l| ParameterSet(l.to_vec())).collect();
    let tree = ReuseTree::build(&template, &sets);
    let s4_parent = tree.nodes()[tree.leaf_of(3)].parent.unwrap();
    ensure!(
        (3..7).all(|i| tree.nodes()[tree.leaf_of(i)].parent == Some(s4_parent)),
        "S4-S7 do not share a parent"
    );

    let (buckets, events) = rtma_with_events(&tree, 4);
    let members: Vec<Vec<usize>> = buckets.iter().map(|b| b.members.clone()).collect();
    ensure!(
        members[0] == vec![3, 4, 5, 6],
        "first bucket {:?}",
        members[0]
    );
    ensure!(
        members == vec![vec![3, 4, 5, 6], vec![7, 8, 9, 10], vec![0, 1, 2, 11]],
        "buckets {members:?}"
    );
    let mut seen: Vec<usize> = members.concat();
    seen.sort_unstable();
    ensure!(
        seen == (0..12).collect::<Vec<_>>(),
        "not a partition: {seen:?}"
    );
    ensure!(members.iter().all(|b| b.len() <= 4), "oversize bucket");

    let first_move = events
        .iter()
        .position(|e| matches!(e, RtmaEvent::MoveUp { .. }))
        .ok_or("no move-up")?;
    ensure!(
        events[..first_move].contains(&RtmaEvent::Removed { node: s4_parent }),
        "emptied parent of S4-S7 not removed before move-up"
    );
    let moved: BTreeSet<usize> = events[first_move..]
        .iter()
        .take_while(|e| !matches!(e, RtmaEvent::Bucket { .. }))
        .filter_map(|e| match e {
            RtmaEvent::MoveUp { members, .. } => Some(members.clone()),
            _ => None,
        })
        .flatten()
        .collect();
    ensure!(
        moved == [0, 1, 2, 7, 8, 9, 10, 11].into_iter().collect(),
        "first move-up moved {moved:?}"
    );
    Ok(format!("buckets {members:?}"))
}

fn reuse_monotone() -> Outcome {
    let study = Study::load(morris_config()).unwrap();
    let sets = study.sample().unwrap();
    ensure!(sets.len() == 800, "sample has {} sets", sets.len());
    let t = &study.template;
    let mut fractions = Vec::new();
    for m in [2, 4, 8, 16, 28] {
        fractions.push(plan_reuse(t, &sets, m).unwrap().stats.reuse_fraction);
    }
    ensure!(
        fractions.windows(2).all(|w| w[0] <= w[1]),
        "not monotone: {fractions:?}"
    );

    let compact = compact_compose(t, &sets).unwrap().len();
    let bound = 1.0 - compact as f64 / (sets.len() * t.len()) as f64;
    let instances = plan_reuse(t, &sets, 1).unwrap().unique.len();
    for m in [instances, sets.len(), 10 * sets.len()] {
        let stats = plan_reuse(t, &sets, m).unwrap().stats;
        ensure!(
            stats.executed_tasks == compact,
            "M={m}: {} tasks, compact {compact}",
            stats.executed_tasks
        );
        ensure!(
            stats.reuse_fraction == bound,
            "M={m}: fraction {} vs {bound}",
            stats.reuse_fraction
        );
    }
    ensure!(fractions[4] <= bound, "fraction above the compact bound");
    let shown: Vec<String> = fractions.iter().map(|f| format!("{f:.4}")).collect();
    Ok(format!("fractions [{}] bound {bound:.4}", shown.join(", ")))
}

fn memory_decoupling() -> Outcome {
    let mut details = Vec::new();
    for workers in [1, 2] {
        let mut cfg = morris_config();
        cfg.active_paths = 2;
        cfg.workers = workers;
        let mut peaks = Vec::new();
        let mut pinned = 0;
        for m in [2, 28] {
            cfg.max_bucket_size = m;
            let study = Study::load(cfg.clone()).unwrap();
            let sets = study.sample().unwrap();
            let run = study
                .execute(&sets, ReuseMode::Rmsr)
                .map_err(|e| e.to_string())?;
            let sched = cfg.scheduler(ReuseMode::Rmsr);
            for (trace, stage) in run.run.traces.iter().zip(&run.plan.stages) {
                ensure!(
                    memory_bound_check(trace, stage, &study.template, &sched),
                    "M={m} workers={workers}: trace peak {} over bound",
                    trace.peak_bytes
                );
            }
            if m == 28 {
                pinned = run
                    .plan
                    .stages
                    .iter()
                    .map(|s| memory_bound(s, &study.template, 2).pinned_term)
                    .max()
                    .unwrap();
            }
            peaks.push(run.run.peak_bytes);
        }
        let growth = peaks[1].saturating_sub(peaks[0]);
        ensure!(
            growth <= pinned,
            "workers={workers}: growth {growth} > pinned {pinned}"
        );
        details.push(format!(
            "w{workers}: peak {}->{} (+{growth} <= {pinned})",
            peaks[0], peaks[1]
        ));
    }
    Ok(details.join("; "))
}

/// Counts executed tasks and their summed template cost.
struct Counting<'a> {
    inner: SyntheticExecutor,
    template: &'a StageTemplate,
    cost_millis: AtomicUsize,
}

impl TaskExecutor for Counting<'_> {
    fn run(
        &self,
        task: &TaskTemplate,
        levels: &[u32],
        inputs: &[&[u8]],
    ) -> Result<Vec<u8>, String> {
        let cost = self
            .template
            .tasks()
            .iter()
            .find(|t| t.id == task.id)
            .unwrap()
            .cost;
        self.cost_millis
            .fetch_add((cost * 1000.0).round() as usize, Ordering::Relaxed);
        self.inner.run(task, levels, inputs)
    }
}

fn cost_ordering() -> Outcome {
    let space = reduced_space().unwrap();
    let sets = sample(
        &space,
        &SamplePlan::new(SampleMethod::MonteCarlo { count: 640 }, 9),
    )
    .unwrap();
    let distinct = sets.iter().collect::<BTreeSet<_>>().len();
    let duplicates = sets.len() - distinct;
    let template = toy_template(&space, 64, 64).unwrap();
    let mut costs = Vec::new();
    for (mode, m) in [
        (ReuseMode::Rmsr, 28),
        (ReuseMode::Stage, 1),
        (ReuseMode::None, 1),
    ] {
        let plan = StudyPlan::build(&template, &sets, mode, m).unwrap();
        let counter = Counting {
            inner: SyntheticExecutor,
            template: &template,
            cost_millis: AtomicUsize::new(0),
        };
        execute_plan(
            &plan,
            &template,
            &config_for_mode(mode, 2, 2),
            &counter,
            &DataStore::new(),
        )
        .map_err(|e| e.to_string())?;
        let measured = counter.cost_millis.load(Ordering::Relaxed) as f64 / 1000.0;
        ensure!(
            (measured - plan.stats.executed_cost).abs() < 1e-6,
            "{}: executed {measured} vs planned {}",
            mode.name(),
            plan.stats.executed_cost
        );
        costs.push(measured);
    }
    let (multi, stage, none) = (costs[0], costs[1], costs[2]);
    ensure!(
        none == sets.len() as f64 * template.total_cost(),
        "no-reuse cost {none}"
    );
    ensure!(multi <= stage && stage <= none, "order violated: {costs:?}");
    if duplicates > 0 {
        ensure!(stage < none, "duplicates present but stage == none");
    }
    ensure!(multi < stage, "multi-level reuse removed nothing");
    Ok(format!(
        "{} sets ({duplicates} duplicates): multi {multi} <= stage {stage} <= none {none}",
        sets.len()
    ))
}

fn rtma_vs_rmsr() -> Outcome {
    let mut cfg = morris_config();
    cfg.workers = 2;
    cfg.active_paths = 2;
    let study = Study::load(cfg.clone()).unwrap();
    let sets = study.sample().unwrap();
    let t = &study.template;

    // Bucketing without runtime control keeps every merged branch live.
    let width_demand = |m: usize| {
        StudyPlan::build(t, &sets, ReuseMode::Rtma, m)
            .unwrap()
            .stages
            .iter()
            .map(|s| memory_bound(s, t, s.terminals().len()).total)
            .max()
            .unwrap()
    };
    let cap = width_demand(2);
    let next = width_demand(4);
    ensure!(next > cap, "cap {cap} also admits RTMA M=4 ({next})");

    cfg.max_bucket_size = 28;
    let rmsr_study = Study::load(cfg.clone()).unwrap();
    let run = rmsr_study
        .execute(&sets, ReuseMode::Rmsr)
        .map_err(|e| e.to_string())?;
    ensure!(
        run.run.peak_bytes <= cap,
        "RMSR(2,28) peak {} over cap {cap}",
        run.run.peak_bytes
    );
    ensure!(run.memory_bound_ok, "RMSR(2,28) trace over its bound");

    let rtma = StudyPlan::build(t, &sets, ReuseMode::Rtma, 2).unwrap();
    let sim = |plan: &StudyPlan, discipline| {
        let c = ClusterSimConfig {
            nodes: 1,
            workers_per_node: 2,
            active_paths: 2,
            discipline,
            dispatch_overhead: None,
        };
        simulate_cluster(&plan.stages, t, &c).makespan
    };
    let slow = sim(&rtma, Discipline::BreadthFirst);
    let fast = sim(&run.plan, Discipline::DepthFirst);
    let ratio = slow / fast;
    ensure!(fast < slow, "RMSR {fast} not faster than RTMA {slow}");
    ensure!(ratio >= 1.3, "ratio {ratio:.3}");
    Ok(format!(
        "cap {cap} B (RTMA M=4 needs {next}, RMSR peak {}); makespan {slow:.1} vs {fast:.1}, ratio {ratio:.2}",
        run.run.peak_bytes
    ))
}

fn scaling() -> Outcome {
    let count = 6113;
    let space = grid_space(&["x"], 0.0, (count - 1) as f64, 1.0);
    let template =
        StageTemplate::new(vec![TaskTemplate::new("work", &["x"], &[], 1.0, 8)], &space).unwrap();
    let sets: Vec<ParameterSet> = (0..count as u32).map(|i| ParameterSet(vec![i])).collect();
    let stages = replica_stages(&template, &sets).unwrap();
    let started = Instant::now();
    let report = simulate_cluster(&stages, &template, &ClusterSimConfig::new(256));
    let secs = started.elapsed().as_secs_f64();
    ensure!(report.stages == count, "{} stages", report.stages);
    ensure!(
        report.efficiency >= 0.90,
        "efficiency {:.4}",
        report.efficiency
    );
    ensure!(secs < 10.0, "took {secs:.2}s");
    Ok(format!(
        "efficiency {:.4}, makespan {:.3}, {secs:.3}s",
        report.efficiency, report.makespan
    ))
}

fn sa_oracles() -> Outcome {
    let space = grid_space(&["x1", "x2"], 0.0, 1.0, 0.001);
    let sobol = sobol_vbd(
        &space,
        |s| {
            let u = s.unit_point(&space);
            u[0] + 2.0 * u[1]
        },
        4096,
        11,
    )
    .map_err(|e| e.to_string())?;
    let (s1, s2) = (sobol.entries[0].s, sobol.entries[1].s);
    ensure!(
        (s1 - 0.2).abs() <= 0.05 && (s2 - 0.8).abs() <= 0.05,
        "S1 {s1:.4} S2 {s2:.4}"
    );

    let coef = [3.0, -2.0, 0.5, 0.0];
    let mspace = grid_space(&["a", "b", "c", "d"], 0.0, 1.0, 0.25);
    let trajectories = morris_trajectories(&mspace, 20, 4, 3).unwrap();
    let outputs: Vec<Vec<f64>> = trajectories
        .iter()
        .map(|traj| {
            traj.iter()
                .map(|s| {
                    1.5 + s
                        .unit_point(&mspace)
                        .iter()
                        .zip(coef)
                        .map(|(u, c)| u * c)
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let morris = morris_indices(&mspace, &trajectories, &outputs).map_err(|e| e.to_string())?;
    for (e, c) in morris.entries.iter().zip(coef) {
        ensure!(e.sigma == 0.0, "{}: sigma {}", e.parameter, e.sigma);
        ensure!(
            (e.mu_star - c.abs()).abs() <= f64::EPSILON * 4.0,
            "{}: mu* {}",
            e.parameter,
            e.mu_star
        );
        ensure!(
            (e.mu - c).abs() <= f64::EPSILON * 4.0,
            "{}: mu {}",
            e.parameter,
            e.mu
        );
    }
    Ok(format!("S1 {s1:.4}, S2 {s2:.4}; Morris mu* exact, sigma 0"))
}

fn dice_suite() -> Outcome {
    let mask = |f: fn(usize) -> bool| LabelMask::from_fn(8, 8, f);
    let d = |a: &LabelMask, b: &LabelMask| dice(a, b).unwrap();
    let a = mask(|i| i < 16);
    let cases = [
        ("identical", d(&a, &a), 1.0),
        ("disjoint", d(&a, &mask(|i| i >= 48)), 0.0),
        ("half overlap", d(&a, &mask(|i| (8..24).contains(&i))), 0.5),
        ("both empty", d(&mask(|_| false), &mask(|_| false)), 1.0),
    ];
    for (name, got, want) in cases {
        ensure!(got == want, "{name}: {got} != {want}");
    }
    Ok("identical 1, disjoint 0, half 0.5, empty 1".into())
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut stable = Vec::new();
    let mut files = Vec::new();
    for dir in &dirs {
        let mut cfg = morris_config();
        cfg.workers = 4;
        cfg.out = Some(dir.path().to_path_buf());
        let report = run_study(&cfg).map_err(|e| e.to_string())?;
        stable.push(report.stable_json());
        let text =
            std::fs::read_to_string(dir.path().join("report.json")).map_err(|e| e.to_string())?;
        files.push(strip_measured(&text));
    }
    ensure!(stable[0] == stable[1], "stable reports differ");
    ensure!(files[0] == files[1], "report files differ after stripping");
    ensure!(
        !stable[0].contains("wall_ms"),
        "timing left in stable report"
    );
    Ok(format!(
        "{} byte report identical across runs",
        files[0].len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("correctness equivalence", equivalence),
        ("golden bucket example", golden_buckets),
        ("reuse monotonicity and bound", reuse_monotone),
        ("memory decoupling", memory_decoupling),
        ("cost ordering", cost_ordering),
        ("RTMA vs RMSR gain", rtma_vs_rmsr),
        ("scaling simulation", scaling),
        ("SA oracles", sa_oracles),
        ("Dice suite", dice_suite),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
