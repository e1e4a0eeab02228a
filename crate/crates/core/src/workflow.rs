//! Stage templates and their composition across parameter sets.
//!
//! A stage is a DAG of tasks; each task reads a fixed group of parameters.
//! A task instance is identified by a [`Signature`] over its task id, the
//! levels bound to its parameter slots, and the signatures of its inputs, so
//! two instances collide exactly when their whole upstream parameter prefix
//! is equal.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::param_space::{canonical_key, ParameterSet, ParameterSpace};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("malformed stage template: {0}")]
    Json(#[from] serde_json::Error),
    #[error("stage template has no tasks")]
    Empty,
    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),
    #[error("task `{task}` depends on unknown task `{input}`")]
    UnknownInput { task: String, input: String },
    #[error("task graph contains a cycle through `{0}`")]
    Cycle(String),
    #[error("stage must have exactly one terminal task, found {0:?}")]
    Terminal(Vec<String>),
    #[error("task `{task}` reads unknown parameter `{param}`")]
    UnknownParameter { task: String, param: String },
    #[error("parameter `{0}` is read by more than one task")]
    SharedParameter(String),
    #[error("task `{task}` has invalid cost or size")]
    BadCost { task: String },
    #[error("parameter set {index} has {got} values, template expects {expected}")]
    SetArity {
        index: usize,
        got: usize,
        expected: usize,
    },
}

/// 128-bit task-instance digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Signature(pub u128);

impl Signature {
    /// Synthetic signature of the reuse-tree root.
    pub const ROOT: Signature = Signature(0);

    /// A distinct key derived from this signature, used to keep replicated
    /// copies of one task apart in the object store.
    pub fn salted(self, salt: u64) -> Signature {
        let mut h = Sha256::new();
        h.update(b"salt");
        h.update(self.0.to_be_bytes());
        h.update(salt.to_be_bytes());
        Signature::from_digest(&h.finalize())
    }

    fn from_digest(bytes: &[u8]) -> Signature {
        let mut head = [0u8; 16];
        head.copy_from_slice(&bytes[..16]);
        Signature(u128::from_be_bytes(head))
    }

    pub fn short(&self) -> String {
        format!("{:012x}", self.0 >> 80)
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.short())
    }
}

impl Serialize for Signature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTemplate {
    pub id: String,
    /// Parameter names this task reads, in binding order.
    #[serde(default)]
    pub reads: Vec<String>,
    /// Upstream task ids.
    #[serde(default)]
    pub inputs: Vec<String>,
    /// Simulated execution time units.
    #[serde(default)]
    pub cost: f64,
    /// Size of this task's output object in bytes.
    #[serde(default)]
    pub out_bytes: u64,
}

impl TaskTemplate {
    pub fn new(id: &str, reads: &[&str], inputs: &[&str], cost: f64, out_bytes: u64) -> Self {
        TaskTemplate {
            id: id.to_string(),
            reads: reads.iter().map(|s| s.to_string()).collect(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            cost,
            out_bytes,
        }
    }
}

/// Digest of one task instance.
pub fn task_signature(
    task: &TaskTemplate,
    slot_levels: &[u32],
    input_sigs: &[Signature],
) -> Signature {
    let mut h = Sha256::new();
    h.update((task.id.len() as u32).to_be_bytes());
    h.update(task.id.as_bytes());
    h.update(canonical_key(slot_levels));
    h.update((input_sigs.len() as u32).to_be_bytes());
    for sig in input_sigs {
        h.update(sig.0.to_be_bytes());
    }
    Signature::from_digest(&h.finalize())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTemplate {
    List(Vec<TaskTemplate>),
    Wrapped { tasks: Vec<TaskTemplate> },
}

/// A validated task DAG, stored in topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTemplate {
    tasks: Vec<TaskTemplate>,
    slots: Vec<Vec<usize>>,
    inputs: Vec<Vec<usize>>,
    terminal: usize,
    param_count: usize,
}

impl StageTemplate {
    pub fn new(tasks: Vec<TaskTemplate>, space: &ParameterSpace) -> Result<Self, WorkflowError> {
        if tasks.is_empty() {
            return Err(WorkflowError::Empty);
        }
        let mut by_id = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if by_id.insert(t.id.as_str(), i).is_some() {
                return Err(WorkflowError::DuplicateTask(t.id.clone()));
            }
            if !(t.cost.is_finite() && t.cost >= 0.0) {
                return Err(WorkflowError::BadCost { task: t.id.clone() });
            }
        }
        let mut raw_inputs = Vec::with_capacity(tasks.len());
        for t in &tasks {
            let ins =
                t.inputs
                    .iter()
                    .map(|input| {
                        by_id.get(input.as_str()).copied().ok_or_else(|| {
                            WorkflowError::UnknownInput {
                                task: t.id.clone(),
                                input: input.clone(),
                            }
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
            raw_inputs.push(ins);
        }

        // Kahn's algorithm, always taking the earliest declared ready task
        let n = tasks.len();
        let mut indegree: Vec<usize> = raw_inputs.iter().map(Vec::len).collect();
        let mut dependents = vec![Vec::new(); n];
        for (i, ins) in raw_inputs.iter().enumerate() {
            for &j in ins {
                dependents[j].push(i);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indegree[i] == 0).collect();
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &d in &dependents[i] {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.insert(d);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap();
            return Err(WorkflowError::Cycle(tasks[stuck].id.clone()));
        }
        let sinks: Vec<usize> = (0..n).filter(|&i| dependents[i].is_empty()).collect();
        if sinks.len() != 1 {
            return Err(WorkflowError::Terminal(
                sinks.iter().map(|&i| tasks[i].id.clone()).collect(),
            ));
        }

        let mut position = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            position[i] = pos;
        }
        let mut seen_params = HashSet::new();
        let mut sorted_tasks = Vec::with_capacity(n);
        let mut slots = Vec::with_capacity(n);
        let mut inputs = Vec::with_capacity(n);
        for &i in &order {
            let t = &tasks[i];
            let mut task_slots = Vec::with_capacity(t.reads.len());
            for name in &t.reads {
                let p = space
                    .index_of(name)
                    .ok_or_else(|| WorkflowError::UnknownParameter {
                        task: t.id.clone(),
                        param: name.clone(),
                    })?;
                if !seen_params.insert(p) {
                    return Err(WorkflowError::SharedParameter(name.clone()));
                }
                task_slots.push(p);
            }
            slots.push(task_slots);
            inputs.push(raw_inputs[i].iter().map(|&j| position[j]).collect());
            sorted_tasks.push(t.clone());
        }
        Ok(StageTemplate {
            terminal: position[sinks[0]],
            tasks: sorted_tasks,
            slots,
            inputs,
            param_count: space.len(),
        })
    }

    /// Parses the JSON template format: a list (or `{"tasks": [...]}`) of
    /// `{"id", "reads", "inputs", "cost", "out_bytes"}` objects.
    pub fn parse(text: &str, space: &ParameterSpace) -> Result<Self, WorkflowError> {
        let tasks = match serde_json::from_str::<RawTemplate>(text)? {
            RawTemplate::List(t) | RawTemplate::Wrapped { tasks: t } => t,
        };
        StageTemplate::new(tasks, space)
    }

    pub fn tasks(&self) -> &[TaskTemplate] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Parameter indices read by task `t`.
    pub fn slots(&self, t: usize) -> &[usize] {
        &self.slots[t]
    }

    /// Upstream task indices of task `t`.
    pub fn inputs(&self, t: usize) -> &[usize] {
        &self.inputs[t]
    }

    pub fn terminal(&self) -> usize {
        self.terminal
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn slot_levels(&self, t: usize, set: &ParameterSet) -> Vec<u32> {
        self.slots[t].iter().map(|&p| set.level(p)).collect()
    }

    /// Signature of every task for `set`, in topological order.
    pub fn signatures(&self, set: &ParameterSet) -> Vec<Signature> {
        let mut sigs: Vec<Signature> = Vec::with_capacity(self.tasks.len());
        for t in 0..self.tasks.len() {
            let ins: Vec<Signature> = self.inputs[t].iter().map(|&j| sigs[j]).collect();
            sigs.push(task_signature(
                &self.tasks[t],
                &self.slot_levels(t, set),
                &ins,
            ));
        }
        sigs
    }

    pub fn total_cost(&self) -> f64 {
        self.tasks.iter().map(|t| t.cost).sum()
    }

    fn check_set(&self, index: usize, set: &ParameterSet) -> Result<(), WorkflowError> {
        if set.levels().len() != self.param_count {
            return Err(WorkflowError::SetArity {
                index,
                got: set.levels().len(),
                expected: self.param_count,
            });
        }
        Ok(())
    }
}

/// One task instance in a composed plan.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanNode {
    /// Index into [`StageTemplate::tasks`].
    pub task: usize,
    pub levels: Vec<u32>,
    pub signature: Signature,
    /// Object-store key; equals `signature` unless the plan keeps replicas apart.
    pub key: Signature,
    pub inputs: Vec<usize>,
    pub dependents: Vec<usize>,
}

/// Marks `node` as the terminal output of stage instance `instance`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terminal {
    pub instance: usize,
    pub node: usize,
}

/// A composed task graph. Nodes are in topological order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkflowPlan {
    nodes: Vec<PlanNode>,
    terminals: Vec<Terminal>,
}

impl WorkflowPlan {
    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn terminals(&self) -> &[Terminal] {
        &self.terminals
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Static number of reads of node `i`'s output: one per dependent plus
    /// one per instance whose terminal it is.
    pub fn consumer_count(&self, i: usize) -> usize {
        self.nodes[i].dependents.len() + self.terminals.iter().filter(|t| t.node == i).count()
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].inputs.is_empty())
    }

    pub fn total_cost(&self, template: &StageTemplate) -> f64 {
        self.nodes.iter().map(|n| template.tasks[n.task].cost).sum()
    }

    /// Terminal signature of each instance, keyed by instance id.
    pub fn provenance(&self) -> Vec<(usize, Signature)> {
        self.terminals
            .iter()
            .map(|t| (t.instance, self.nodes[t.node].signature))
            .collect()
    }

    /// `producer -> consumer` lines, one per edge, with nodes labelled
    /// `task-id:key-prefix`.
    pub fn edge_list(&self, template: &StageTemplate) -> String {
        let label = |i: usize| {
            format!(
                "{}:{}",
                template.tasks[self.nodes[i].task].id,
                self.nodes[i].key.short()
            )
        };
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for &d in &node.dependents {
                out.push_str(&format!("{} -> {}\n", label(i), label(d)));
            }
        }
        out
    }

    /// Appends every node of `other`, keeping keys distinct is the caller's job.
    fn extend(&mut self, other: WorkflowPlan) {
        let offset = self.nodes.len();
        self.nodes.extend(other.nodes.into_iter().map(|mut n| {
            n.inputs.iter_mut().for_each(|i| *i += offset);
            n.dependents.iter_mut().for_each(|i| *i += offset);
            n
        }));
        self.terminals
            .extend(other.terminals.into_iter().map(|t| Terminal {
                instance: t.instance,
                node: t.node + offset,
            }));
    }
}

/// Incrementally composes instances into one plan, sharing nodes by key.
pub(crate) struct PlanBuilder<'a> {
    template: &'a StageTemplate,
    plan: WorkflowPlan,
    by_key: HashMap<Signature, usize>,
}

impl<'a> PlanBuilder<'a> {
    pub(crate) fn new(template: &'a StageTemplate) -> Self {
        PlanBuilder {
            template,
            plan: WorkflowPlan::default(),
            by_key: HashMap::new(),
        }
    }

    pub(crate) fn add(&mut self, instance: usize, set: &ParameterSet, salt: Option<u64>) {
        let t = self.template;
        let mut local: Vec<usize> = Vec::with_capacity(t.tasks.len());
        let mut sigs: Vec<Signature> = Vec::with_capacity(t.tasks.len());
        for task in 0..t.tasks.len() {
            let levels = t.slot_levels(task, set);
            let input_sigs: Vec<Signature> = t.inputs[task].iter().map(|&j| sigs[j]).collect();
            let signature = task_signature(&t.tasks[task], &levels, &input_sigs);
            let key = salt.map_or(signature, |s| signature.salted(s));
            let node = match self.by_key.get(&key) {
                Some(&n) => n,
                None => {
                    let n = self.plan.nodes.len();
                    let inputs: Vec<usize> = t.inputs[task].iter().map(|&j| local[j]).collect();
                    for &i in &inputs {
                        self.plan.nodes[i].dependents.push(n);
                    }
                    self.plan.nodes.push(PlanNode {
                        task,
                        levels,
                        signature,
                        key,
                        inputs,
                        dependents: Vec::new(),
                    });
                    self.by_key.insert(key, n);
                    n
                }
            };
            local.push(node);
            sigs.push(signature);
        }
        self.plan.terminals.push(Terminal {
            instance,
            node: local[t.terminal],
        });
    }

    pub(crate) fn finish(self) -> WorkflowPlan {
        self.plan
    }
}

/// One disjoint copy of the task DAG per parameter set, without any sharing.
pub fn replica_compose(
    template: &StageTemplate,
    sets: &[ParameterSet],
) -> Result<WorkflowPlan, WorkflowError> {
    let mut plan = WorkflowPlan::default();
    for stage in replica_stages(template, sets)? {
        plan.extend(stage);
    }
    Ok(plan)
}

/// The replica composition split into one single-instance plan per set.
pub fn replica_stages(
    template: &StageTemplate,
    sets: &[ParameterSet],
) -> Result<Vec<WorkflowPlan>, WorkflowError> {
    sets.iter()
        .enumerate()
        .map(|(i, set)| {
            template.check_set(i, set)?;
            let mut b = PlanBuilder::new(template);
            b.add(i, set, Some(i as u64));
            Ok(b.finish())
        })
        .collect()
}

/// Drops repeated parameter sets. Returns the unique sets in first-occurrence
/// order and, for each input index, the index of its representative.
pub fn stage_level_dedup(sets: &[ParameterSet]) -> (Vec<ParameterSet>, Vec<usize>) {
    let mut first: HashMap<&ParameterSet, usize> = HashMap::new();
    let mut unique = Vec::new();
    let mut map = Vec::with_capacity(sets.len());
    for set in sets {
        let idx = *first.entry(set).or_insert_with(|| {
            unique.push(set.clone());
            unique.len() - 1
        });
        map.push(idx);
    }
    (unique, map)
}

/// Every distinct task instance exactly once: the unconstrained reuse bound.
/// Terminals are tagged with the index of each input set.
pub fn compact_compose(
    template: &StageTemplate,
    sets: &[ParameterSet],
) -> Result<WorkflowPlan, WorkflowError> {
    let mut b = PlanBuilder::new(template);
    for (i, set) in sets.iter().enumerate() {
        template.check_set(i, set)?;
        b.add(i, set, None);
    }
    Ok(b.finish())
}
