//! Reuse-aware execution of parameter sensitivity studies.
//!
//! A study samples parameter sets, composes one stage instance per set,
//! merges instances that share parameter prefixes so common tasks run once,
//! and executes the merged stages with a depth-first scheduler whose memory
//! use is bounded by a number of active paths rather than by bucket size.
//!
//! - [`param_space`]: parameter domains, sampling and Morris trajectories
//! - [`workflow`]: stage templates, task signatures and composed plans
//! - [`reuse`]: the reuse tree, bucket merging and reuse statistics
//! - [`scheduler`]: threaded execution with path credits and memory bounds
//! - [`cluster`]: virtual-time simulation of stage dispatch over nodes
//! - [`store`]: reference-counted object store with byte accounting
//! - [`toy`]: the image segmentation workload
//! - [`sa`]: Morris and Sobol sensitivity indices
//! - [`study`]: config-driven end-to-end runs and reports

pub mod cluster;
pub mod param_space;
pub mod reuse;
pub mod sa;
pub mod scheduler;
pub mod store;
pub mod study;
pub mod toy;
pub mod workflow;

pub use cluster::{simulate_cluster, ClusterSimConfig, SimReport};
pub use param_space::{
    sample, Domain, ParameterSet, ParameterSpace, ParameterSpec, SampleMethod, SamplePlan,
    SpaceError,
};
pub use reuse::{plan_reuse, rtma_buckets, ReuseMode, ReusePlan, ReuseStats, ReuseTree, StudyPlan};
pub use sa::{
    morris_indices, rank_parameters, sobol_indices, sobol_vbd, MorrisIndices, SobolIndices,
};
pub use scheduler::{
    execute_plan, execute_stage, memory_bound, memory_bound_check, rmsr_execute, Discipline,
    ExecError, ExecutionTrace, SchedulerConfig, TaskExecutor,
};
pub use store::{DataStore, StoreError, StoreStats};
pub use study::{compare_modes, run_study, simulate, StudyConfig, StudyError, StudyReport};
pub use workflow::{
    compact_compose, replica_compose, Signature, StageTemplate, TaskTemplate, WorkflowError,
    WorkflowPlan,
};
