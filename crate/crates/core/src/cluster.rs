//! Virtual-time simulation of demand-driven stage dispatch over a cluster.
//!
//! A single manager hands whole stages to nodes as they become idle. Each
//! dispatch occupies the manager for a fixed overhead, so dispatches are
//! serialized: a stage starts at `max(node idle, manager idle) + overhead`.
//! A node's time on a stage comes from list-scheduling the stage's tasks on
//! its workers with the same credit and pop-order rules as the threaded
//! scheduler, using template costs as durations.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use serde::Serialize;

use crate::scheduler::Discipline;
use crate::workflow::{StageTemplate, WorkflowPlan};

/// Default per-dispatch overhead as a fraction of the mean stage duration.
pub const DEFAULT_OVERHEAD_FRACTION: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClusterSimConfig {
    pub nodes: usize,
    pub workers_per_node: usize,
    pub active_paths: usize,
    pub discipline: Discipline,
    /// Absolute manager time per dispatch; `None` uses
    /// [`DEFAULT_OVERHEAD_FRACTION`] of the mean stage duration.
    pub dispatch_overhead: Option<f64>,
}

impl ClusterSimConfig {
    pub fn new(nodes: usize) -> Self {
        ClusterSimConfig {
            nodes,
            workers_per_node: 1,
            active_paths: 1,
            discipline: Discipline::DepthFirst,
            dispatch_overhead: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub nodes: usize,
    pub stages: usize,
    pub makespan: f64,
    /// Makespan of the same workload on one node.
    pub serial_makespan: f64,
    pub efficiency: f64,
    /// Sum of task costs run on each node.
    pub node_busy: Vec<f64>,
    pub dispatch_overhead: f64,
}

#[derive(PartialEq)]
struct Finish {
    at: f64,
    seq: usize,
    node: usize,
}

impl Eq for Finish {}

impl Ord for Finish {
    fn cmp(&self, other: &Self) -> Ordering {
        self.at.total_cmp(&other.at).then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Finish {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Simulated time to run one stage on `workers` workers with
/// `active_paths` credits.
pub fn stage_duration(
    plan: &WorkflowPlan,
    template: &StageTemplate,
    workers: usize,
    active_paths: usize,
    discipline: Discipline,
) -> f64 {
    let nodes = plan.nodes();
    let cap = workers.min(active_paths).max(1);
    let mut ready: VecDeque<usize> = plan.roots().collect();
    if discipline == Discipline::DepthFirst {
        ready.make_contiguous().reverse();
    }
    let mut waiting: Vec<usize> = nodes.iter().map(|n| n.inputs.len()).collect();
    let mut running = BinaryHeap::new();
    let mut seq = 0;
    let mut now = 0.0;
    loop {
        while running.len() < cap {
            let next = match discipline {
                Discipline::DepthFirst => ready.pop_back(),
                Discipline::BreadthFirst => ready.pop_front(),
            };
            let Some(node) = next else { break };
            let cost = template.tasks()[nodes[node].task].cost;
            running.push(Reverse(Finish {
                at: now + cost,
                seq,
                node,
            }));
            seq += 1;
        }
        let Some(Reverse(done)) = running.pop() else {
            break;
        };
        now = done.at;
        let mut newly_ready = Vec::new();
        for &d in &nodes[done.node].dependents {
            waiting[d] -= 1;
            if waiting[d] == 0 {
                newly_ready.push(d);
            }
        }
        match discipline {
            Discipline::DepthFirst => ready.extend(newly_ready.into_iter().rev()),
            Discipline::BreadthFirst => ready.extend(newly_ready),
        }
    }
    now
}

/// Demand-driven dispatch of stages with the given durations; returns the
/// makespan and the index of the node each stage ran on.
pub fn dispatch(durations: &[f64], nodes: usize, overhead: f64) -> (f64, Vec<usize>) {
    let mut idle: BinaryHeap<Reverse<Finish>> = (0..nodes.max(1))
        .map(|n| {
            Reverse(Finish {
                at: 0.0,
                seq: n,
                node: n,
            })
        })
        .collect();
    let mut manager_free: f64 = 0.0;
    let mut makespan: f64 = 0.0;
    let mut placement = Vec::with_capacity(durations.len());
    for &d in durations {
        let Reverse(slot) = idle.pop().expect("at least one node");
        let start = slot.at.max(manager_free) + overhead;
        manager_free = start;
        let end = start + d;
        makespan = makespan.max(end);
        placement.push(slot.node);
        idle.push(Reverse(Finish {
            at: end,
            seq: slot.node,
            node: slot.node,
        }));
    }
    (makespan, placement)
}

/// Simulates the stages of a study on `cfg.nodes` nodes.
pub fn simulate_cluster(
    stages: &[WorkflowPlan],
    template: &StageTemplate,
    cfg: &ClusterSimConfig,
) -> SimReport {
    let durations: Vec<f64> = stages
        .iter()
        .map(|s| {
            stage_duration(
                s,
                template,
                cfg.workers_per_node,
                cfg.active_paths,
                cfg.discipline,
            )
        })
        .collect();
    let mean = if durations.is_empty() {
        0.0
    } else {
        durations.iter().sum::<f64>() / durations.len() as f64
    };
    let overhead = cfg
        .dispatch_overhead
        .unwrap_or(DEFAULT_OVERHEAD_FRACTION * mean);
    let nodes = cfg.nodes.max(1);
    let (makespan, placement) = dispatch(&durations, nodes, overhead);
    let (serial_makespan, _) = dispatch(&durations, 1, overhead);
    let mut node_busy = vec![0.0; nodes];
    for (stage, &node) in stages.iter().zip(&placement) {
        node_busy[node] += stage.total_cost(template);
    }
    let efficiency = if makespan > 0.0 {
        serial_makespan / (nodes as f64 * makespan)
    } else {
        1.0
    };
    SimReport {
        nodes,
        stages: stages.len(),
        makespan,
        serial_makespan,
        efficiency,
        node_busy,
        dispatch_overhead: overhead,
    }
}
