//! Workload fixtures shared by the benchmarks.

use reuse_sweep::param_space::{sample, ParameterSet, SampleMethod, SamplePlan};
use reuse_sweep::reuse::{ReuseMode, ReuseTree, StudyPlan};
use reuse_sweep::toy::{reduced_space, synth_image, ToyPipeline};
use reuse_sweep::workflow::StageTemplate;

/// Toy pipeline over the reduced space with Monte Carlo sets.
pub struct Workload {
    pub pipeline: ToyPipeline,
    pub template: StageTemplate,
    pub sets: Vec<ParameterSet>,
}

impl Workload {
    pub fn new(sets: usize, side: usize) -> Workload {
        let space = reduced_space().expect("bundled space");
        let pipeline = ToyPipeline::new(
            space.clone(),
            synth_image(1, side, side, 6).expect("fixture"),
        )
        .expect("pipeline");
        let template = pipeline.template().expect("template");
        let sets = sample(
            &space,
            &SamplePlan::new(SampleMethod::MonteCarlo { count: sets }, 7),
        )
        .expect("sample");
        Workload {
            pipeline,
            template,
            sets,
        }
    }

    pub fn tree(&self) -> ReuseTree {
        ReuseTree::build(&self.template, &self.sets)
    }

    pub fn plan(&self, mode: ReuseMode, max_bucket_size: usize) -> StudyPlan {
        StudyPlan::build(&self.template, &self.sets, mode, max_bucket_size).expect("plan")
    }
}
