//! Reuse tree construction and bucketed stage merging.
//!
//! Stage instances are hung in a prefix tree of task signatures: depth `d`
//! holds the `d`-th task in topological order, and an instance's path spells
//! its signature chain. Buckets of at most `max_bucket_size` instances are
//! carved out bottom-up:
//!
//! 1. *prune*: every node with at least `max_bucket_size` leaf instances
//!    yields `floor(n / max_bucket_size)` full buckets (deepest nodes first,
//!    then leftmost; members in tree order);
//! 2. *move-up*: the leftover instances climb one level, and nodes left
//!    without any instance beneath them are dropped.
//!
//! The two phases repeat until everything sits at the root, where the
//! remainder is chunked in tree order. Each bucket is then merged into one
//! stage whose repeated tasks run once.
//!
//! Tree order is the depth-first order of the instances' final nodes with
//! children in insertion order, so neighbours in that order share the
//! longest prefixes.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::param_space::ParameterSet;
use crate::workflow::{
    replica_stages, stage_level_dedup, PlanBuilder, Signature, StageTemplate, WorkflowError,
    WorkflowPlan,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ReuseTreeNode {
    pub signature: Signature,
    pub depth: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Instances whose full signature chain ends here.
    pub leaves: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReuseTree {
    nodes: Vec<ReuseTreeNode>,
    /// Final node of each instance.
    leaf_of: Vec<usize>,
}

impl ReuseTree {
    pub const ROOT: usize = 0;

    /// Builds the tree over already deduplicated sets; instance `i` is `sets[i]`.
    pub fn build(template: &StageTemplate, sets: &[ParameterSet]) -> ReuseTree {
        let mut nodes = vec![ReuseTreeNode {
            signature: Signature::ROOT,
            depth: 0,
            parent: None,
            children: Vec::new(),
            leaves: Vec::new(),
        }];
        let mut index: HashMap<(usize, Signature), usize> = HashMap::new();
        let mut leaf_of = Vec::with_capacity(sets.len());
        for (i, set) in sets.iter().enumerate() {
            let mut at = Self::ROOT;
            for (d, sig) in template.signatures(set).into_iter().enumerate() {
                at = *index.entry((at, sig)).or_insert_with(|| {
                    let n = nodes.len();
                    nodes.push(ReuseTreeNode {
                        signature: sig,
                        depth: d + 1,
                        parent: Some(at),
                        children: Vec::new(),
                        leaves: Vec::new(),
                    });
                    nodes[at].children.push(n);
                    n
                });
            }
            nodes[at].leaves.push(i);
            leaf_of.push(at);
        }
        ReuseTree { nodes, leaf_of }
    }

    pub fn nodes(&self) -> &[ReuseTreeNode] {
        &self.nodes
    }

    pub fn instance_count(&self) -> usize {
        self.leaf_of.len()
    }

    pub fn leaf_of(&self, instance: usize) -> usize {
        self.leaf_of[instance]
    }

    /// Instances in depth-first order, children visited in insertion order.
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.leaf_of.len());
        let mut stack = vec![Self::ROOT];
        while let Some(n) = stack.pop() {
            out.extend(&self.nodes[n].leaves);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    /// Number of non-root nodes, i.e. distinct task-signature prefixes.
    pub fn task_node_count(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Depth of the shallowest node shared by both instances' paths.
    pub fn common_depth(&self, a: usize, b: usize) -> usize {
        let path = |i: usize| {
            let mut p = Vec::new();
            let mut at = Some(self.leaf_of[i]);
            while let Some(n) = at {
                p.push(n);
                at = self.nodes[n].parent;
            }
            p.reverse();
            p
        };
        path(a)
            .iter()
            .zip(path(b).iter())
            .take_while(|(x, y)| x == y)
            .count()
            - 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Bucket {
    pub members: Vec<usize>,
    /// Signature of the node whose leaves filled the bucket.
    pub formed_at: Signature,
}

/// Bookkeeping events emitted while bucketing, in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RtmaEvent {
    Bucket {
        node: usize,
        members: Vec<usize>,
    },
    MoveUp {
        from: usize,
        to: usize,
        members: Vec<usize>,
    },
    Removed {
        node: usize,
    },
}

/// Groups the tree's instances into buckets of at most `max_bucket_size`.
pub fn rtma_buckets(tree: &ReuseTree, max_bucket_size: usize) -> Vec<Bucket> {
    rtma_with_events(tree, max_bucket_size).0
}

/// [`rtma_buckets`] plus the prune/move-up event log.
pub fn rtma_with_events(tree: &ReuseTree, max_bucket_size: usize) -> (Vec<Bucket>, Vec<RtmaEvent>) {
    assert!(max_bucket_size >= 1, "max_bucket_size must be positive");
    let m = max_bucket_size;
    let nodes = tree.nodes();
    let mut buckets = Vec::new();
    let mut events = Vec::new();

    // Each unassigned instance hangs as a leaf below `position`.
    let mut position: BTreeMap<usize, usize> = (0..tree.instance_count())
        .map(|i| {
            let leaf = tree.leaf_of(i);
            (i, nodes[leaf].parent.unwrap_or(ReuseTree::ROOT))
        })
        .collect();
    let mut alive = live_nodes(tree, &position);
    let mut rank = vec![0; tree.instance_count()];
    for (r, inst) in tree.leaf_order().into_iter().enumerate() {
        rank[inst] = r;
    }

    loop {
        // prune
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&inst, &node) in &position {
            groups.entry(node).or_default().push(inst);
        }
        let mut order: Vec<(usize, Vec<usize>)> = groups.into_iter().collect();
        for (_, members) in order.iter_mut() {
            members.sort_by_key(|&i| rank[i]);
        }
        order.sort_by_key(|(node, members)| {
            (std::cmp::Reverse(nodes[*node].depth), rank[members[0]])
        });
        for (node, members) in &order {
            for chunk in members.chunks_exact(m) {
                for inst in chunk {
                    position.remove(inst);
                }
                events.push(RtmaEvent::Bucket {
                    node: *node,
                    members: chunk.to_vec(),
                });
                buckets.push(Bucket {
                    members: chunk.to_vec(),
                    formed_at: nodes[*node].signature,
                });
            }
        }
        sweep_removed(tree, &position, &mut alive, &mut events);
        if position.is_empty() {
            break;
        }
        if position.values().all(|&n| n == ReuseTree::ROOT) {
            let mut rest: Vec<usize> = position.keys().copied().collect();
            rest.sort_by_key(|&i| rank[i]);
            for chunk in rest.chunks(m) {
                events.push(RtmaEvent::Bucket {
                    node: ReuseTree::ROOT,
                    members: chunk.to_vec(),
                });
                buckets.push(Bucket {
                    members: chunk.to_vec(),
                    formed_at: Signature::ROOT,
                });
            }
            break;
        }

        // move-up
        let mut moves: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&inst, node) in position.iter_mut() {
            if let Some(parent) = nodes[*node].parent {
                moves.entry(*node).or_default().push(inst);
                *node = parent;
            }
        }
        let mut moves: Vec<(usize, Vec<usize>)> = moves.into_iter().collect();
        moves.sort_by_key(|(_, members)| rank[members[0]]);
        for (from, members) in moves {
            events.push(RtmaEvent::MoveUp {
                from,
                to: nodes[from].parent.unwrap(),
                members,
            });
        }
        sweep_removed(tree, &position, &mut alive, &mut events);
    }
    (buckets, events)
}

/// Internal (non-root, non-final) nodes that still have an instance hanging at
/// or below them.
fn live_nodes(tree: &ReuseTree, position: &BTreeMap<usize, usize>) -> Vec<bool> {
    let nodes = tree.nodes();
    let mut alive = vec![false; nodes.len()];
    for &pos in position.values() {
        let mut at = Some(pos);
        while let Some(n) = at {
            if alive[n] {
                break;
            }
            alive[n] = true;
            at = nodes[n].parent;
        }
    }
    alive
}

fn sweep_removed(
    tree: &ReuseTree,
    position: &BTreeMap<usize, usize>,
    alive: &mut [bool],
    events: &mut Vec<RtmaEvent>,
) {
    let now = live_nodes(tree, position);
    for n in 1..alive.len() {
        if alive[n] && !now[n] {
            events.push(RtmaEvent::Removed { node: n });
        }
        alive[n] = now[n];
    }
}

/// A bucket's instances composed into one task tree with repeated tasks removed.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedStage {
    pub plan: WorkflowPlan,
    pub members: Vec<usize>,
    pub formed_at: Signature,
}

impl MergedStage {
    /// Terminal signature of each member, in member order.
    pub fn terminal_signatures(&self) -> Vec<(usize, Signature)> {
        self.plan.provenance()
    }

    /// Number of distinct task instances at each template depth.
    pub fn width_by_task(&self, template: &StageTemplate) -> Vec<usize> {
        let mut width = vec![0; template.len()];
        for n in self.plan.nodes() {
            width[n.task] += 1;
        }
        width
    }
}

/// Merges one bucket; `sets[i]` is the parameter set of instance `i`.
pub fn merge_bucket(
    bucket: &Bucket,
    template: &StageTemplate,
    sets: &[ParameterSet],
) -> MergedStage {
    let mut b = PlanBuilder::new(template);
    for &i in &bucket.members {
        b.add(i, &sets[i], None);
    }
    MergedStage {
        plan: b.finish(),
        members: bucket.members.clone(),
        formed_at: bucket.formed_at,
    }
}

/// Task counts against the fully replicated baseline.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ReuseStats {
    pub total_replica_tasks: usize,
    /// Tasks left after stage-level deduplication alone.
    pub stage_level_tasks: usize,
    pub executed_tasks: usize,
    /// `1 - executed / total_replica`; zero for an empty study.
    pub reuse_fraction: f64,
    /// `1 - executed / stage_level`: the share removed by task-level merging.
    pub task_reuse_fraction: f64,
    pub total_replica_cost: f64,
    pub executed_cost: f64,
    pub cost_reuse_fraction: f64,
    pub bucket_sizes: Vec<usize>,
}

impl ReuseStats {
    fn compute(
        template: &StageTemplate,
        original: usize,
        unique: usize,
        stages: &[WorkflowPlan],
        bucket_sizes: Vec<usize>,
    ) -> Self {
        let per_stage = template.len();
        let total_replica_tasks = original * per_stage;
        let stage_level_tasks = unique * per_stage;
        let executed_tasks: usize = stages.iter().map(WorkflowPlan::len).sum();
        let total_replica_cost = original as f64 * template.total_cost();
        let executed_cost: f64 = stages.iter().map(|s| s.total_cost(template)).sum();
        let frac = |done: f64, all: f64| if all > 0.0 { 1.0 - done / all } else { 0.0 };
        ReuseStats {
            total_replica_tasks,
            stage_level_tasks,
            executed_tasks,
            reuse_fraction: frac(executed_tasks as f64, total_replica_tasks as f64),
            task_reuse_fraction: frac(executed_tasks as f64, stage_level_tasks as f64),
            total_replica_cost,
            executed_cost,
            cost_reuse_fraction: frac(executed_cost, total_replica_cost),
            bucket_sizes,
        }
    }
}

/// Output of [`plan_reuse`].
#[derive(Clone, Debug)]
pub struct ReusePlan {
    pub stages: Vec<MergedStage>,
    pub stats: ReuseStats,
    /// Deduplicated sets; merged-stage members index into this list.
    pub unique: Vec<ParameterSet>,
    /// Original set index to unique instance id.
    pub index_map: Vec<usize>,
    pub tree: ReuseTree,
}

/// Stage-level dedup, reuse tree, bucketing and merging in one step.
pub fn plan_reuse(
    template: &StageTemplate,
    sets: &[ParameterSet],
    max_bucket_size: usize,
) -> Result<ReusePlan, WorkflowError> {
    for (i, s) in sets.iter().enumerate() {
        if s.levels().len() != template.param_count() {
            return Err(WorkflowError::SetArity {
                index: i,
                got: s.levels().len(),
                expected: template.param_count(),
            });
        }
    }
    let (unique, index_map) = stage_level_dedup(sets);
    let tree = ReuseTree::build(template, &unique);
    let buckets = rtma_buckets(&tree, max_bucket_size);
    let stages: Vec<MergedStage> = buckets
        .iter()
        .map(|b| merge_bucket(b, template, &unique))
        .collect();
    let plans: Vec<WorkflowPlan> = stages.iter().map(|s| s.plan.clone()).collect();
    let stats = ReuseStats::compute(
        template,
        sets.len(),
        unique.len(),
        &plans,
        buckets.iter().map(|b| b.members.len()).collect(),
    );
    Ok(ReusePlan {
        stages,
        stats,
        unique,
        index_map,
        tree,
    })
}

/// How a study composes its stage instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReuseMode {
    /// Every parameter set runs its own full copy of the stage.
    None,
    /// Identical parameter sets run once.
    Stage,
    /// Bucketed merging, tasks run breadth-first with one credit per worker.
    Rtma,
    /// Bucketed merging, tasks run depth-first under an active-path limit.
    Rmsr,
}

impl ReuseMode {
    pub const ALL: [ReuseMode; 4] = [
        ReuseMode::None,
        ReuseMode::Stage,
        ReuseMode::Rtma,
        ReuseMode::Rmsr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReuseMode::None => "none",
            ReuseMode::Stage => "stage",
            ReuseMode::Rtma => "rtma",
            ReuseMode::Rmsr => "rmsr",
        }
    }
}

impl std::str::FromStr for ReuseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReuseMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown reuse mode `{s}` (expected none, stage, rtma or rmsr)"))
    }
}

/// Everything needed to execute a study: a list of independent stages whose
/// terminals are tagged with stage-instance ids, and the map from each
/// original parameter set to its stage instance.
#[derive(Clone, Debug)]
pub struct StudyPlan {
    pub mode: ReuseMode,
    pub stages: Vec<WorkflowPlan>,
    pub index_map: Vec<usize>,
    pub instance_count: usize,
    pub stats: ReuseStats,
}

impl StudyPlan {
    pub fn build(
        template: &StageTemplate,
        sets: &[ParameterSet],
        mode: ReuseMode,
        max_bucket_size: usize,
    ) -> Result<StudyPlan, WorkflowError> {
        match mode {
            ReuseMode::None => {
                let stages = replica_stages(template, sets)?;
                let stats = ReuseStats::compute(
                    template,
                    sets.len(),
                    stage_level_dedup(sets).0.len(),
                    &stages,
                    vec![1; sets.len()],
                );
                Ok(StudyPlan {
                    mode,
                    stages,
                    index_map: (0..sets.len()).collect(),
                    instance_count: sets.len(),
                    stats,
                })
            }
            ReuseMode::Stage => {
                let plan = plan_reuse(template, sets, 1)?;
                Ok(StudyPlan::from_reuse(mode, plan))
            }
            ReuseMode::Rtma | ReuseMode::Rmsr => {
                let plan = plan_reuse(template, sets, max_bucket_size.max(1))?;
                Ok(StudyPlan::from_reuse(mode, plan))
            }
        }
    }

    fn from_reuse(mode: ReuseMode, plan: ReusePlan) -> StudyPlan {
        StudyPlan {
            mode,
            instance_count: plan.unique.len(),
            stages: plan.stages.into_iter().map(|s| s.plan).collect(),
            index_map: plan.index_map,
            stats: plan.stats,
        }
    }

    pub fn executed_tasks(&self) -> usize {
        self.stages.iter().map(WorkflowPlan::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_space::{ParameterSpace, ParameterSpec};
    use crate::workflow::{compact_compose, TaskTemplate};

    fn chain(n: usize, levels: f64) -> StageTemplate {
        let space = ParameterSpace::new(
            (0..n)
                .map(|i| {
                    ParameterSpec::grid(&format!("p{i}"), 0.0, levels - 1.0, 1.0, 0.0).unwrap()
                })
                .collect(),
        )
        .unwrap();
        let tasks = (0..n)
            .map(|i| TaskTemplate {
                id: format!("t{i}"),
                reads: vec![format!("p{i}")],
                inputs: if i == 0 {
                    vec![]
                } else {
                    vec![format!("t{}", i - 1)]
                },
                cost: 1.0,
                out_bytes: 8,
            })
            .collect();
        StageTemplate::new(tasks, &space).unwrap()
    }

    fn set(v: &[u32]) -> ParameterSet {
        ParameterSet(v.to_vec())
    }

    #[test]
    fn single_instance_tree() {
        let t = chain(3, 4.0);
        let tree = ReuseTree::build(&t, &[set(&[0, 1, 2])]);
        assert_eq!(tree.task_node_count(), 3);
        assert_eq!(tree.nodes()[tree.leaf_of(0)].depth, 3);
        assert_eq!(
            rtma_buckets(&tree, 4),
            vec![Bucket {
                members: vec![0],
                formed_at: Signature::ROOT
            }]
        );
    }

    #[test]
    fn fork_at_last_level() {
        let t = chain(3, 4.0);
        let tree = ReuseTree::build(&t, &[set(&[0, 1, 2]), set(&[0, 1, 3])]);
        assert_eq!(tree.task_node_count(), 4);
        assert_eq!(tree.common_depth(0, 1), 2);
        let b = rtma_buckets(&tree, 2);
        assert_eq!(b.len(), 1);
        assert_eq!(
            b[0].formed_at,
            tree.nodes()[tree.nodes()[tree.leaf_of(0)].parent.unwrap()].signature
        );
    }

    #[test]
    fn bucket_size_one_is_identity() {
        let t = chain(3, 4.0);
        let sets = vec![set(&[0, 1, 2]), set(&[0, 1, 3]), set(&[1, 1, 3])];
        let plan = plan_reuse(&t, &sets, 1).unwrap();
        assert_eq!(plan.stages.len(), 3);
        assert!(plan.stages.iter().all(|s| s.members.len() == 1));
        assert_eq!(plan.stats.reuse_fraction, 0.0);
        assert_eq!(plan.stats.task_reuse_fraction, 0.0);
    }

    #[test]
    fn oversize_parent_emits_several_full_buckets() {
        let t = chain(2, 8.0);
        let sets: Vec<ParameterSet> = (0..7).map(|i| set(&[0, i])).collect();
        let tree = ReuseTree::build(&t, &sets);
        let (buckets, events) = rtma_with_events(&tree, 3);
        let members: Vec<Vec<usize>> = buckets.iter().map(|b| b.members.clone()).collect();
        assert_eq!(members, vec![vec![0, 1, 2], vec![3, 4, 5], vec![6]]);
        assert!(events
            .iter()
            .any(|e| matches!(e, RtmaEvent::MoveUp { members, .. } if members == &vec![6])));
    }

    #[test]
    fn identical_sets_reuse() {
        let t = chain(4, 3.0);
        for k in 1..6usize {
            let sets = vec![set(&[1, 2, 0, 1]); k];
            let plan = plan_reuse(&t, &sets, k).unwrap();
            let expected = (k - 1) as f64 / k as f64;
            assert!((plan.stats.reuse_fraction - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn merged_width_and_counts() {
        let t = chain(3, 4.0);
        let sets = vec![
            set(&[0, 0, 0]),
            set(&[0, 0, 1]),
            set(&[0, 1, 0]),
            set(&[0, 1, 1]),
        ];
        let plan = plan_reuse(&t, &sets, 4).unwrap();
        assert_eq!(plan.stages.len(), 1);
        let stage = &plan.stages[0];
        assert_eq!(stage.width_by_task(&t), vec![1, 2, 4]);
        assert_eq!(stage.plan.len(), compact_compose(&t, &sets).unwrap().len());
        assert_eq!(stage.terminal_signatures().len(), 4);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in ReuseMode::ALL {
            assert_eq!(m.name().parse::<ReuseMode>().unwrap(), m);
        }
        assert!("bogus".parse::<ReuseMode>().is_err());
    }
}
