//! End-to-end studies: config loading, sampling, planning, execution,
//! analysis and reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{simulate_cluster, ClusterSimConfig, SimReport};
use crate::param_space::{
    sample, ParameterSet, ParameterSpace, SampleMethod, SamplePlan, SpaceError,
};
use crate::reuse::{ReuseMode, ReuseStats, StudyPlan};
use crate::sa::{
    chunk_trajectories, morris_indices, sobol_indices, table, MorrisIndices, SaError, SobolIndices,
};
use crate::scheduler::{
    config_for_mode, execute_plan, memory_bound, ExecError, ExecutionTrace, SchedulerConfig,
    StudyRun, TaskExecutor,
};
use crate::store::DataStore;
use crate::toy::{
    decode_score, synth_image, toy_template, ImageGrid, SyntheticExecutor, ToyError, ToyPipeline,
};
use crate::workflow::{StageTemplate, TaskTemplate, WorkflowError};

pub const ENV_OUT: &str = "REUSE_SWEEP_OUT";
pub const ENV_WORKERS: &str = "REUSE_SWEEP_WORKERS";

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("config error: {0}")]
    Config(String),
    #[error("execution error: {0}")]
    Execution(String),
}

impl StudyError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            StudyError::Config(_) => 2,
            StudyError::Execution(_) => 3,
        }
    }
}

impl From<SpaceError> for StudyError {
    fn from(e: SpaceError) -> Self {
        StudyError::Config(e.to_string())
    }
}

impl From<WorkflowError> for StudyError {
    fn from(e: WorkflowError) -> Self {
        StudyError::Config(e.to_string())
    }
}

impl From<ToyError> for StudyError {
    fn from(e: ToyError) -> Self {
        StudyError::Config(e.to_string())
    }
}

impl From<ExecError> for StudyError {
    fn from(e: ExecError) -> Self {
        StudyError::Execution(e.to_string())
    }
}

impl From<SaError> for StudyError {
    fn from(e: SaError) -> Self {
        StudyError::Execution(e.to_string())
    }
}

/// A file path (relative to the config file) or the content inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Path(PathBuf),
    Inline(serde_json::Value),
}

impl Source {
    fn read(&self, base: &Path) -> Result<String, StudyError> {
        match self {
            Source::Path(p) => {
                let path = base.join(p);
                fs::read_to_string(&path)
                    .map_err(|e| StudyError::Config(format!("reading {}: {e}", path.display())))
            }
            Source::Inline(v) => Ok(v.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    /// Image segmentation scored by Dice.
    #[default]
    Toy,
    /// Digest-valued stand-in tasks over any template.
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSpec {
    #[serde(default = "default_image_seed")]
    pub seed: u64,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_blobs")]
    pub blobs: usize,
    /// PNM file used instead of the synthetic fixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for ImageSpec {
    fn default() -> Self {
        ImageSpec {
            seed: default_image_seed(),
            width: default_side(),
            height: default_side(),
            blobs: default_blobs(),
            path: None,
        }
    }
}

fn default_image_seed() -> u64 {
    1
}

fn default_side() -> usize {
    64
}

fn default_blobs() -> usize {
    8
}

fn default_mode() -> ReuseMode {
    ReuseMode::Rmsr
}

fn default_bucket() -> usize {
    28
}

fn default_paths() -> usize {
    2
}

fn default_workers() -> usize {
    1
}

fn default_nodes() -> Vec<usize> {
    vec![1, 2, 4, 8, 16]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub space: Source,
    #[serde(default)]
    pub pipeline: PipelineKind,
    /// Stage template; the toy pipeline supplies its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<Source>,
    pub sample: SamplePlan,
    #[serde(default = "default_mode")]
    pub mode: ReuseMode,
    #[serde(default = "default_bucket")]
    pub max_bucket_size: usize,
    #[serde(default = "default_paths")]
    pub active_paths: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub image: ImageSpec,
    /// Node counts for `simulate`.
    #[serde(default = "default_nodes")]
    pub nodes: Vec<usize>,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line overrides; `None` keeps the config value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<ReuseMode>,
    pub max_bucket_size: Option<usize>,
    pub active_paths: Option<usize>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl StudyConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, StudyError> {
        let mut cfg: StudyConfig = serde_json::from_str(text)
            .map_err(|e| StudyError::Config(format!("study config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = fs::read_to_string(path)
            .map_err(|e| StudyError::Config(format!("reading {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        StudyConfig::parse(&text, &base)
    }

    /// Applies `REUSE_SWEEP_OUT` and `REUSE_SWEEP_WORKERS` when set.
    pub fn apply_env(&mut self) -> Result<(), StudyError> {
        if let Some(out) = std::env::var_os(ENV_OUT) {
            self.out = Some(PathBuf::from(out));
        }
        if let Ok(w) = std::env::var(ENV_WORKERS) {
            self.workers = w.trim().parse().map_err(|_| {
                StudyError::Config(format!("{ENV_WORKERS}={w} is not a worker count"))
            })?;
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(m) = o.max_bucket_size {
            self.max_bucket_size = m;
        }
        if let Some(a) = o.active_paths {
            self.active_paths = a;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(s) = o.seed {
            self.sample.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: &str| Err(StudyError::Config(m.to_string()));
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.active_paths == 0 {
            return bad("active_paths must be at least 1");
        }
        if matches!(self.mode, ReuseMode::Rtma | ReuseMode::Rmsr) && self.max_bucket_size == 0 {
            return bad("max_bucket_size must be at least 1");
        }
        if self.nodes.contains(&0) {
            return bad("node counts must be at least 1");
        }
        if self.pipeline == PipelineKind::Toy && self.template.is_some() {
            return bad("the toy pipeline defines its own template; remove `template` or use the synthetic pipeline");
        }
        self.sample.validate()?;
        Ok(())
    }

    pub fn scheduler(&self, mode: ReuseMode) -> SchedulerConfig {
        config_for_mode(mode, self.active_paths, self.workers)
    }
}

enum Engine {
    Toy(Box<ToyPipeline>),
    Synthetic(SyntheticExecutor),
}

impl TaskExecutor for Engine {
    fn run(
        &self,
        task: &TaskTemplate,
        levels: &[u32],
        inputs: &[&[u8]],
    ) -> Result<Vec<u8>, String> {
        match self {
            Engine::Toy(p) => p.run(task, levels, inputs),
            Engine::Synthetic(s) => s.run(task, levels, inputs),
        }
    }
}

/// A config with its space, template and executor resolved.
pub struct Study {
    pub config: StudyConfig,
    pub space: ParameterSpace,
    pub template: StageTemplate,
    engine: Engine,
}

/// Outcome of executing one mode.
pub struct ModeRun {
    pub plan: StudyPlan,
    pub run: StudyRun,
    pub scores: Vec<f64>,
    pub wall_ms: f64,
    /// Largest static memory bound over the stages.
    pub memory_bound: u64,
    pub memory_bound_ok: bool,
}

impl Study {
    pub fn load(config: StudyConfig) -> Result<Self, StudyError> {
        config.validate()?;
        let space = ParameterSpace::parse(&config.space.read(&config.base_dir)?)?;
        let image = match &config.image.path {
            Some(p) => {
                let path = config.base_dir.join(p);
                let bytes = fs::read(&path)
                    .map_err(|e| StudyError::Config(format!("reading {}: {e}", path.display())))?;
                ImageGrid::from_pnm(&bytes)?
            }
            None => synth_image(
                config.image.seed,
                config.image.width,
                config.image.height,
                config.image.blobs,
            )?,
        };
        let (template, engine) = match config.pipeline {
            PipelineKind::Toy => {
                let pipeline = ToyPipeline::new(space.clone(), image)?;
                (pipeline.template()?, Engine::Toy(Box::new(pipeline)))
            }
            PipelineKind::Synthetic => {
                let template = match &config.template {
                    Some(src) => StageTemplate::parse(&src.read(&config.base_dir)?, &space)?,
                    None => toy_template(&space, image.width(), image.height())?,
                };
                (template, Engine::Synthetic(SyntheticExecutor))
            }
        };
        Ok(Study {
            config,
            space,
            template,
            engine,
        })
    }

    pub fn executor(&self) -> &dyn TaskExecutor {
        &self.engine
    }

    pub fn pipeline(&self) -> Option<&ToyPipeline> {
        match &self.engine {
            Engine::Toy(p) => Some(p),
            Engine::Synthetic(_) => None,
        }
    }

    pub fn sample(&self) -> Result<Vec<ParameterSet>, StudyError> {
        Ok(sample(&self.space, &self.config.sample)?)
    }

    pub fn plan(&self, sets: &[ParameterSet], mode: ReuseMode) -> Result<StudyPlan, StudyError> {
        Ok(StudyPlan::build(
            &self.template,
            sets,
            mode,
            self.config.max_bucket_size,
        )?)
    }

    pub fn execute(&self, sets: &[ParameterSet], mode: ReuseMode) -> Result<ModeRun, StudyError> {
        let plan = self.plan(sets, mode)?;
        let sched = self.config.scheduler(mode);
        let store = DataStore::new();
        let started = Instant::now();
        let run = execute_plan(&plan, &self.template, &sched, self.executor(), &store)?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        let scores = run
            .outputs
            .iter()
            .map(|p| {
                decode_score(p).ok_or_else(|| {
                    StudyError::Execution("terminal output shorter than 8 bytes".into())
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut bound = 0;
        let mut ok = true;
        for (stage, trace) in plan.stages.iter().zip(&run.traces) {
            let b = memory_bound(stage, &self.template, sched.active_paths).total;
            bound = bound.max(b);
            ok &= trace.peak_bytes <= b;
        }
        Ok(ModeRun {
            plan,
            run,
            scores,
            wall_ms,
            memory_bound: bound,
            memory_bound_ok: ok,
        })
    }

    /// Morris or Sobol indices when the sample method supports them.
    pub fn analyze(
        &self,
        sets: &[ParameterSet],
        scores: &[f64],
    ) -> Result<(Option<MorrisIndices>, Option<SobolIndices>), StudyError> {
        match self.config.sample.method {
            SampleMethod::Morris { .. } => {
                let len = self.space.specs().iter().filter(|s| s.levels() > 1).count() + 1;
                let trajs = chunk_trajectories(sets, len);
                let ys = chunk_trajectories(scores, len);
                Ok((Some(morris_indices(&self.space, &trajs, &ys)?), None))
            }
            SampleMethod::Saltelli { count } => {
                Ok((None, Some(sobol_indices(&self.space, count, scores)?)))
            }
            _ => Ok((None, None)),
        }
    }
}

/// Fields that depend on timing or thread interleaving.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub wall_ms: f64,
    pub peak_bytes: u64,
    pub max_active_paths: usize,
    pub memory_bound_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub parameters: Vec<String>,
    pub sample_count: usize,
    pub unique_sets: usize,
    pub mode: ReuseMode,
    pub stages: usize,
    pub reuse: ReuseStats,
    /// Largest static memory bound over the executed stages.
    pub memory_bound_bytes: u64,
    /// Terminal score of each parameter set, in sample order.
    pub scores: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub morris: Option<MorrisIndices>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sobol: Option<SobolIndices>,
    /// Parameters from most to least influential.
    pub ranking: Vec<String>,
    pub measured: Measured,
}

impl StudyReport {
    pub fn from_json(text: &str) -> Result<Self, StudyError> {
        serde_json::from_str(text).map_err(|e| StudyError::Config(format!("report: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// JSON without the `measured` section.
    pub fn stable_json(&self) -> String {
        strip_measured(&self.to_json())
    }
}

/// Removes the top-level `measured` section of a JSON report.
pub fn strip_measured(json: &str) -> String {
    let mut v: serde_json::Value = match serde_json::from_str(json) {
        Ok(v) => v,
        Err(_) => return json.to_string(),
    };
    if let Some(obj) = v.as_object_mut() {
        obj.remove("measured");
    }
    serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
}

fn max_active(traces: &[ExecutionTrace]) -> usize {
    traces
        .iter()
        .map(ExecutionTrace::max_active_paths)
        .max()
        .unwrap_or(0)
}

/// Samples, plans, executes and analyzes one study. When the config has an
/// output directory the report, sets, trace and fixture are written there.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport, StudyError> {
    let study = Study::load(config.clone())?;
    let sets = study.sample()?;
    let mode = study.config.mode;
    let result = study.execute(&sets, mode)?;
    let (morris, sobol) = study.analyze(&sets, &result.scores)?;
    let names: Vec<String> = study
        .space
        .specs()
        .iter()
        .map(|s| s.name().to_string())
        .collect();
    let ranking = match (&morris, &sobol) {
        (Some(m), _) => m.ranking(),
        (_, Some(s)) => s.ranking(),
        _ => Vec::new(),
    }
    .into_iter()
    .map(|i| names[i].clone())
    .collect();
    let report = StudyReport {
        config: study.config.clone(),
        parameters: names,
        sample_count: sets.len(),
        unique_sets: result.plan.instance_count,
        mode,
        stages: result.plan.stages.len(),
        reuse: result.plan.stats.clone(),
        memory_bound_bytes: result.memory_bound,
        scores: result.scores.clone(),
        morris,
        sobol,
        ranking,
        measured: Measured {
            wall_ms: result.wall_ms,
            peak_bytes: result.run.peak_bytes,
            max_active_paths: max_active(&result.run.traces),
            memory_bound_ok: result.memory_bound_ok,
        },
    };
    if let Some(out) = &study.config.out {
        write_file(out, "report.json", report.to_json().as_bytes())?;
        write_file(out, "report.txt", render_report(&report).as_bytes())?;
        write_file(
            out,
            "sets.txt",
            render_sets(&study.space, &sets, Some(&report.scores)).as_bytes(),
        )?;
        let mut trace = String::new();
        for (i, t) in result.run.traces.iter().enumerate() {
            let _ = writeln!(trace, "# stage {i}");
            trace.push_str(&t.to_text());
        }
        write_file(out, "trace.txt", trace.as_bytes())?;
        if let Some(p) = study.pipeline() {
            write_file(out, "fixture.ppm", &p.image().to_pnm()?)?;
            write_file(out, "reference.pgm", &p.reference().to_pgm()?)?;
        }
    }
    Ok(report)
}

/// Writes `name` inside `dir`, creating the directory if needed.
pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), StudyError> {
    fs::create_dir_all(dir)
        .map_err(|e| StudyError::Execution(format!("creating {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, bytes)
        .map_err(|e| StudyError::Execution(format!("writing {}: {e}", path.display())))
}

/// Header line plus one comma-separated line per set, optionally with scores.
pub fn render_sets(
    space: &ParameterSpace,
    sets: &[ParameterSet],
    scores: Option<&[f64]>,
) -> String {
    let mut out = space.header();
    if scores.is_some() {
        out.push_str(",score");
    }
    out.push('\n');
    for (i, s) in sets.iter().enumerate() {
        out.push_str(&space.render(s));
        if let Some(sc) = scores {
            let _ = write!(out, ",{}", sc[i]);
        }
        out.push('\n');
    }
    out
}

/// Human-readable summary of a report.
pub fn render_report(r: &StudyReport) -> String {
    let mut out = String::new();
    let s = &r.reuse;
    let rows = [
        ("mode", r.mode.name().to_string()),
        ("parameter sets", r.sample_count.to_string()),
        ("unique sets", r.unique_sets.to_string()),
        ("stages", r.stages.to_string()),
        ("replica tasks", s.total_replica_tasks.to_string()),
        ("stage-level tasks", s.stage_level_tasks.to_string()),
        ("executed tasks", s.executed_tasks.to_string()),
        ("reuse fraction", format!("{:.4}", s.reuse_fraction)),
        (
            "task reuse fraction",
            format!("{:.4}", s.task_reuse_fraction),
        ),
        ("executed cost", format!("{}", s.executed_cost)),
        ("memory bound (bytes)", r.memory_bound_bytes.to_string()),
        ("peak bytes", r.measured.peak_bytes.to_string()),
        ("memory bound held", r.measured.memory_bound_ok.to_string()),
        ("wall time (ms)", format!("{:.1}", r.measured.wall_ms)),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    if let Some(m) = &r.morris {
        out.push('\n');
        out.push_str(&m.to_text());
    }
    if let Some(s) = &r.sobol {
        out.push('\n');
        out.push_str(&s.to_text());
    }
    if !r.ranking.is_empty() {
        let _ = writeln!(out, "\nranking: {}", r.ranking.join(" > "));
    }
    out
}

/// One line of [`compare_modes`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeRow {
    pub mode: ReuseMode,
    pub stages: usize,
    pub executed_tasks: usize,
    pub total_cost: f64,
    pub reuse_fraction: f64,
    /// Scores equal those of the first mode, bit for bit.
    pub scores_match: bool,
    pub wall_ms: f64,
    pub peak_bytes: u64,
}

/// Runs the same sample under each mode.
pub fn compare_modes(
    config: &StudyConfig,
    modes: &[ReuseMode],
) -> Result<Vec<ModeRow>, StudyError> {
    if modes.is_empty() {
        return Err(StudyError::Config("no modes to compare".into()));
    }
    let study = Study::load(config.clone())?;
    let sets = study.sample()?;
    let mut rows = Vec::with_capacity(modes.len());
    let mut first: Option<Vec<u64>> = None;
    for &mode in modes {
        let r = study.execute(&sets, mode)?;
        let bits: Vec<u64> = r.scores.iter().map(|s| s.to_bits()).collect();
        let scores_match = first.get_or_insert_with(|| bits.clone()) == &bits;
        rows.push(ModeRow {
            mode,
            stages: r.plan.stages.len(),
            executed_tasks: r.plan.stats.executed_tasks,
            total_cost: r.plan.stats.executed_cost,
            reuse_fraction: r.plan.stats.reuse_fraction,
            scores_match,
            wall_ms: r.wall_ms,
            peak_bytes: r.run.peak_bytes,
        });
    }
    Ok(rows)
}

pub fn render_comparison(rows: &[ModeRow]) -> String {
    let cells: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.mode.name().to_string(),
                r.stages.to_string(),
                r.executed_tasks.to_string(),
                format!("{}", r.total_cost),
                format!("{:.4}", r.reuse_fraction),
                r.scores_match.to_string(),
                format!("{:.1}", r.wall_ms),
                r.peak_bytes.to_string(),
            ]
        })
        .collect();
    table(
        &[
            "mode",
            "stages",
            "tasks",
            "cost",
            "reuse",
            "scores_match",
            "wall_ms",
            "peak_bytes",
        ],
        &cells,
    )
}

/// Simulated cluster runs of the configured mode for each node count.
pub fn simulate(config: &StudyConfig, nodes: &[usize]) -> Result<Vec<SimReport>, StudyError> {
    if nodes.is_empty() {
        return Err(StudyError::Config("no node counts to simulate".into()));
    }
    let study = Study::load(config.clone())?;
    let sets = study.sample()?;
    let plan = study.plan(&sets, study.config.mode)?;
    let sched = study.config.scheduler(study.config.mode);
    Ok(nodes
        .iter()
        .map(|&n| {
            let cfg = ClusterSimConfig {
                nodes: n,
                workers_per_node: sched.workers,
                active_paths: sched.active_paths,
                discipline: sched.discipline,
                dispatch_overhead: None,
            };
            simulate_cluster(&plan.stages, &study.template, &cfg)
        })
        .collect())
}

pub fn render_simulation(rows: &[SimReport]) -> String {
    let cells: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.nodes.to_string(),
                r.stages.to_string(),
                format!("{:.3}", r.makespan),
                format!("{:.4}", r.efficiency),
            ]
        })
        .collect();
    table(&["nodes", "stages", "makespan", "efficiency"], &cells)
}

/// Edge list of every stage of the plan, with bucket members.
pub fn render_plan(study: &Study, plan: &StudyPlan) -> String {
    let mut out = String::new();
    let s = &plan.stats;
    let _ = writeln!(
        out,
        "# mode {} stages {} executed_tasks {} replica_tasks {} reuse_fraction {:.4}",
        plan.mode.name(),
        plan.stages.len(),
        s.executed_tasks,
        s.total_replica_tasks,
        s.reuse_fraction
    );
    for (i, stage) in plan.stages.iter().enumerate() {
        let members: Vec<String> = stage
            .terminals()
            .iter()
            .map(|t| t.instance.to_string())
            .collect();
        let _ = writeln!(out, "# stage {i} members {}", members.join(","));
        out.push_str(&stage.edge_list(&study.template));
    }
    out
}
