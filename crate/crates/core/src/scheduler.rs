//! Depth-first execution of merged stages under an active-path limit.
//!
//! Worker threads share one task stack, a dependency counter per task and a
//! pool of `active_paths` credits. A worker takes a credit when it pops a
//! task and returns it when the task has finished and its newly ready
//! dependents have been pushed. Ready dependents are pushed in reverse child
//! order so the leftmost child is popped next, which walks each path of the
//! merged tree depth-first. Because a credit is held from pop to completion,
//! `active_paths` also caps the number of tasks in flight; with one credit
//! per thread the alternative reading (one path per thread) coincides.
//!
//! Memory follows from the store's reference counts: an output is freed once
//! every consumer has run, so the working set is bounded by the credits in
//! use rather than by the width of the merged tree.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::{Condvar, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::reuse::{ReuseMode, StudyPlan};
use crate::store::{DataStore, Payload, StoreError};
use crate::workflow::{Signature, StageTemplate, TaskTemplate, WorkflowPlan};

/// A pure task body: output bytes from the task, its bound levels and its
/// inputs' bytes. Implementations must return exactly `task.out_bytes` bytes.
pub trait TaskExecutor: Sync {
    fn run(&self, task: &TaskTemplate, levels: &[u32], inputs: &[&[u8]])
        -> Result<Vec<u8>, String>;
}

impl<F> TaskExecutor for F
where
    F: Fn(&TaskTemplate, &[u32], &[&[u8]]) -> Result<Vec<u8>, String> + Sync,
{
    fn run(
        &self,
        task: &TaskTemplate,
        levels: &[u32],
        inputs: &[&[u8]],
    ) -> Result<Vec<u8>, String> {
        self(task, levels, inputs)
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid scheduler config: {0}")]
    Config(String),
    #[error("task `{task}` failed: {message}")]
    Task { task: String, message: String },
    #[error("task `{task}` produced {got} bytes, template declares {expected}")]
    SizeMismatch {
        task: String,
        expected: u64,
        got: usize,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("scheduler invariant violated: {0}")]
    Invariant(String),
}

/// Pop order of the shared ready list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    /// LIFO stack (RMSR).
    DepthFirst,
    /// FIFO queue, level by level.
    BreadthFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SchedulerConfig {
    pub active_paths: usize,
    pub workers: usize,
    pub discipline: Discipline,
}

impl SchedulerConfig {
    pub fn rmsr(active_paths: usize, workers: usize) -> Self {
        SchedulerConfig {
            active_paths,
            workers,
            discipline: Discipline::DepthFirst,
        }
    }

    /// Breadth-first with one credit per worker.
    pub fn rtma(workers: usize) -> Self {
        SchedulerConfig {
            active_paths: workers,
            workers,
            discipline: Discipline::BreadthFirst,
        }
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.active_paths == 0 {
            return Err(ExecError::Config("active_paths must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(ExecError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TaskRecord {
    pub node: usize,
    pub key: Signature,
    pub worker: usize,
    pub start: u64,
    pub end: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TraceSample {
    pub tick: u64,
    pub active_paths: usize,
    pub live_bytes: u64,
}

/// Per-task intervals on a logical clock (one tick per start or end event)
/// plus the active-path and live-byte series sampled at every event.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExecutionTrace {
    pub tasks: Vec<TaskRecord>,
    pub samples: Vec<TraceSample>,
    /// Store high-water mark during the stage, including transient
    /// producer/consumer overlap that falls between samples.
    pub peak_bytes: u64,
}

impl ExecutionTrace {
    pub fn max_active_paths(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.active_paths)
            .max()
            .unwrap_or(0)
    }

    /// Node indices ordered by completion.
    pub fn completion_order(&self) -> Vec<usize> {
        let mut t: Vec<&TaskRecord> = self.tasks.iter().collect();
        t.sort_by_key(|r| r.end);
        t.into_iter().map(|r| r.node).collect()
    }

    /// Node indices ordered by start.
    pub fn start_order(&self) -> Vec<usize> {
        let mut t: Vec<&TaskRecord> = self.tasks.iter().collect();
        t.sort_by_key(|r| r.start);
        t.into_iter().map(|r| r.node).collect()
    }

    /// True when every node ran exactly once and after all of its inputs ended.
    pub fn respects_dependencies(&self, plan: &WorkflowPlan) -> bool {
        let mut span = vec![None; plan.len()];
        for r in &self.tasks {
            if r.start >= r.end || span[r.node].replace((r.start, r.end)).is_some() {
                return false;
            }
        }
        plan.nodes().iter().enumerate().all(|(i, n)| {
            let Some((start, _)) = span[i] else {
                return false;
            };
            n.inputs
                .iter()
                .all(|&j| matches!(span[j], Some((_, end)) if end < start))
        })
    }

    /// Line-oriented export: `task <key> <worker> <start> <end>` records
    /// followed by `sample <tick> <active_paths> <live_bytes>` records.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.tasks {
            let _ = writeln!(out, "task {} {} {} {}", r.key, r.worker, r.start, r.end);
        }
        for s in &self.samples {
            let _ = writeln!(out, "sample {} {} {}", s.tick, s.active_paths, s.live_bytes);
        }
        out
    }
}

struct State {
    ready: VecDeque<usize>,
    waiting_on: Vec<usize>,
    credits: usize,
    unfinished: usize,
    failed: Option<ExecError>,
    tick: u64,
    starts: Vec<u64>,
    records: Vec<TaskRecord>,
    samples: Vec<TraceSample>,
}

impl State {
    fn sample(&mut self, active_paths: usize, store: &DataStore) {
        self.samples.push(TraceSample {
            tick: self.tick,
            active_paths: active_paths - self.credits,
            live_bytes: store.live_bytes(),
        });
    }
}

/// Runs every task of `plan` and leaves the terminal outputs in `store`,
/// each pinned for one read per member. On failure all of the stage's
/// objects are dropped from the store.
pub fn execute_stage(
    plan: &WorkflowPlan,
    template: &StageTemplate,
    cfg: &SchedulerConfig,
    executor: &dyn TaskExecutor,
    store: &DataStore,
) -> Result<ExecutionTrace, ExecError> {
    cfg.validate()?;
    store.reset_peak();
    if plan.is_empty() {
        return Ok(ExecutionTrace {
            peak_bytes: store.peak_bytes(),
            ..ExecutionTrace::default()
        });
    }
    let nodes = plan.nodes();
    let mut ready: VecDeque<usize> = plan.roots().collect();
    if cfg.discipline == Discipline::DepthFirst {
        ready.make_contiguous().reverse();
    }
    let state = Mutex::new(State {
        ready,
        waiting_on: nodes.iter().map(|n| n.inputs.len()).collect(),
        credits: cfg.active_paths,
        unfinished: nodes.len(),
        failed: None,
        tick: 0,
        starts: vec![0; nodes.len()],
        records: Vec::with_capacity(nodes.len()),
        samples: Vec::with_capacity(2 * nodes.len()),
    });
    let wake = Condvar::new();

    let worker = |id: usize| loop {
        let node = {
            let mut st = state.lock().unwrap();
            loop {
                if st.failed.is_some() || st.unfinished == 0 {
                    return;
                }
                if st.credits > 0 && !st.ready.is_empty() {
                    let node = match cfg.discipline {
                        Discipline::DepthFirst => st.ready.pop_back(),
                        Discipline::BreadthFirst => st.ready.pop_front(),
                    }
                    .unwrap();
                    st.credits -= 1;
                    st.tick += 1;
                    st.starts[node] = st.tick;
                    st.sample(cfg.active_paths, store);
                    break node;
                }
                st = wake.wait(st).unwrap();
            }
        };

        let outcome = run_task(plan, node, template, executor, store);

        let mut st = state.lock().unwrap();
        st.credits += 1;
        if let Err(e) = outcome {
            st.failed.get_or_insert(e);
            wake.notify_all();
            return;
        }
        st.tick += 1;
        let record = TaskRecord {
            node,
            key: nodes[node].key,
            worker: id,
            start: st.starts[node],
            end: st.tick,
        };
        st.records.push(record);
        let mut newly_ready = Vec::new();
        for &d in &nodes[node].dependents {
            match st.waiting_on[d].checked_sub(1) {
                Some(left) => {
                    st.waiting_on[d] = left;
                    if left == 0 {
                        newly_ready.push(d);
                    }
                }
                None => {
                    st.failed.get_or_insert(ExecError::Invariant(format!(
                        "dependency counter of node {d} underflowed"
                    )));
                    wake.notify_all();
                    return;
                }
            }
        }
        match cfg.discipline {
            Discipline::DepthFirst => st.ready.extend(newly_ready.into_iter().rev()),
            Discipline::BreadthFirst => st.ready.extend(newly_ready),
        }
        st.unfinished -= 1;
        st.sample(cfg.active_paths, store);
        wake.notify_all();
    };

    std::thread::scope(|scope| {
        for id in 0..cfg.workers {
            let worker = &worker;
            scope.spawn(move || worker(id));
        }
    });

    let st = state.into_inner().unwrap();
    if let Some(e) = st.failed {
        store.purge(nodes.iter().map(|n| &n.key));
        return Err(e);
    }
    Ok(ExecutionTrace {
        tasks: st.records,
        samples: st.samples,
        peak_bytes: store.peak_bytes(),
    })
}

fn run_task(
    plan: &WorkflowPlan,
    node: usize,
    template: &StageTemplate,
    executor: &dyn TaskExecutor,
    store: &DataStore,
) -> Result<(), ExecError> {
    let n = &plan.nodes()[node];
    let task = &template.tasks()[n.task];
    let inputs: Vec<Payload> = n
        .inputs
        .iter()
        .map(|&i| store.get(&plan.nodes()[i].key))
        .collect::<Result<_, _>>()?;
    let views: Vec<&[u8]> = inputs.iter().map(|p| &p[..]).collect();
    let output = executor
        .run(task, &n.levels, &views)
        .map_err(|message| ExecError::Task {
            task: task.id.clone(),
            message,
        })?;
    if output.len() as u64 != task.out_bytes {
        return Err(ExecError::SizeMismatch {
            task: task.id.clone(),
            expected: task.out_bytes,
            got: output.len(),
        });
    }
    store.put(n.key, output.into(), plan.consumer_count(node))?;
    // inputs stay live until the output exists
    for &i in &n.inputs {
        store.release(&plan.nodes()[i].key)?;
    }
    Ok(())
}

/// Reads out (and releases) every terminal output of a finished stage.
pub fn read_terminals(
    plan: &WorkflowPlan,
    store: &DataStore,
) -> Result<Vec<(usize, Payload)>, ExecError> {
    plan.terminals()
        .iter()
        .map(|t| {
            Ok((
                t.instance,
                store.get_and_release(&plan.nodes()[t.node].key)?,
            ))
        })
        .collect()
}

/// Executes one merged stage and returns each member's terminal output.
pub fn rmsr_execute(
    plan: &WorkflowPlan,
    template: &StageTemplate,
    cfg: &SchedulerConfig,
    executor: &dyn TaskExecutor,
    store: &DataStore,
) -> Result<(Vec<(usize, Payload)>, ExecutionTrace), ExecError> {
    let trace = execute_stage(plan, template, cfg, executor, store)?;
    let outputs = read_terminals(plan, store)?;
    Ok((outputs, trace))
}

/// Result of [`execute_plan`].
#[derive(Debug)]
pub struct StudyRun {
    /// Terminal output of each original parameter set.
    pub outputs: Vec<Payload>,
    pub traces: Vec<ExecutionTrace>,
    pub executed_tasks: usize,
    pub peak_bytes: u64,
}

/// Scheduler settings used for a stage of the given mode.
pub fn config_for_mode(mode: ReuseMode, active_paths: usize, workers: usize) -> SchedulerConfig {
    match mode {
        ReuseMode::Rtma => SchedulerConfig::rtma(workers),
        _ => SchedulerConfig::rmsr(active_paths, workers),
    }
}

/// Runs every stage of a study plan one after another and maps terminal
/// outputs back to the original parameter sets.
pub fn execute_plan(
    plan: &StudyPlan,
    template: &StageTemplate,
    cfg: &SchedulerConfig,
    executor: &dyn TaskExecutor,
    store: &DataStore,
) -> Result<StudyRun, ExecError> {
    let mut by_instance: Vec<Option<Payload>> = vec![None; plan.instance_count];
    let mut traces = Vec::with_capacity(plan.stages.len());
    let mut peak = 0;
    for stage in &plan.stages {
        let (outputs, trace) = rmsr_execute(stage, template, cfg, executor, store)?;
        peak = peak.max(trace.peak_bytes);
        for (instance, payload) in outputs {
            by_instance[instance] = Some(payload);
        }
        traces.push(trace);
    }
    let outputs = plan
        .index_map
        .iter()
        .map(|&i| {
            by_instance[i]
                .clone()
                .ok_or_else(|| ExecError::Invariant(format!("instance {i} produced no output")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StudyRun {
        outputs,
        traces,
        executed_tasks: plan.executed_tasks(),
        peak_bytes: peak,
    })
}

/// Static memory bound of a stage under a given number of active paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MemoryBound {
    /// Largest sum of output sizes along any root-to-terminal path.
    pub max_path_bytes: u64,
    /// `active_paths * max_path_bytes`.
    pub path_term: u64,
    /// Outputs that may stay pinned independent of the paths in flight:
    /// every output with two or more dependents, and every terminal output.
    pub pinned_term: u64,
    pub total: u64,
}

pub fn memory_bound(
    plan: &WorkflowPlan,
    template: &StageTemplate,
    active_paths: usize,
) -> MemoryBound {
    let size = |i: usize| template.tasks()[plan.nodes()[i].task].out_bytes;
    let mut path = vec![0u64; plan.len()];
    for (i, n) in plan.nodes().iter().enumerate() {
        path[i] = size(i) + n.inputs.iter().map(|&j| path[j]).max().unwrap_or(0);
    }
    let max_path_bytes = path.iter().copied().max().unwrap_or(0);
    let terminal: std::collections::HashSet<usize> =
        plan.terminals().iter().map(|t| t.node).collect();
    let pinned_term = (0..plan.len())
        .filter(|&i| plan.nodes()[i].dependents.len() >= 2 || terminal.contains(&i))
        .map(size)
        .sum();
    let path_term = active_paths as u64 * max_path_bytes;
    MemoryBound {
        max_path_bytes,
        path_term,
        pinned_term,
        total: path_term + pinned_term,
    }
}

/// True iff the trace's peak stays within [`memory_bound`].
pub fn memory_bound_check(
    trace: &ExecutionTrace,
    plan: &WorkflowPlan,
    template: &StageTemplate,
    cfg: &SchedulerConfig,
) -> bool {
    trace.peak_bytes <= memory_bound(plan, template, cfg.active_paths).total
}
