//! Episode batches spread over a thread pool. Results keep seed order.

use guidance_core::agents::BatchRunner;
use guidance_core::executor::{
    run_episode, EpisodeLog, EpisodeOptions, ExecError, FallbackMode, GroundingSetup, GuidanceContext,
};
use guidance_core::gsl::{EvalBudget, GslProgram};
use guidance_core::policy::{DynamicsMode, DynamicsModel, Policy};
use guidance_core::sim::TaskSpec;
use rayon::prelude::*;

pub struct ParallelRunner<'a> {
    pub task: &'a TaskSpec,
    pub policy: &'a dyn Policy,
    pub alpha: f64,
    pub n: usize,
    pub dynamics: DynamicsMode,
    pub budget: EvalBudget,
    pub fallback: FallbackMode,
    pub grounding: &'a GroundingSetup,
    pub opts: EpisodeOptions,
}

impl ParallelRunner<'_> {
    pub fn dynamics_model(&self) -> DynamicsModel {
        let ws = self.task.workspace().clone();
        match self.dynamics {
            DynamicsMode::Identity => DynamicsModel::identity(ws),
            DynamicsMode::Clamped => DynamicsModel::clamped(ws),
        }
    }

    /// Every episode is independent, so the logs match a sequential run.
    pub fn run_with(&self, program: Option<&GslProgram>, seeds: &[u64]) -> Result<Vec<EpisodeLog>, ExecError> {
        let ctx = GuidanceContext {
            program,
            alpha: self.alpha,
            n: self.n,
            dynamics: self.dynamics_model(),
            budget: self.budget,
            fallback: self.fallback,
        };
        ctx.validate()?;
        seeds
            .par_iter()
            .map(|&s| run_episode(self.task, self.policy, &ctx, self.grounding, s, self.opts))
            .collect()
    }
}

impl BatchRunner for ParallelRunner<'_> {
    fn run(&self, program: &GslProgram, seeds: &[u64]) -> Result<Vec<EpisodeLog>, ExecError> {
        self.run_with(Some(program), seeds)
    }
}
