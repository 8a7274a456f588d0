//! Shared inputs for the criterion benchmarks in `benches/`.

use rplan_core::directions::extract_all;
use rplan_core::mock::{self, as_steerable, build_trace, MockPlanner, MockPlannerSpec};
use rplan_core::probe::{assemble_design, DesignMatrix, TargetPolicy};
use rplan_core::steering::{SteeringConfig, TokenId};
use rplan_core::Result;

/// Readout-layer design matrix of the default mock trace.
pub fn readout_design(per_level: usize) -> Result<DesignMatrix> {
    let spec = MockPlannerSpec::default();
    let trace = build_trace(&spec, per_level)?;
    assemble_design(&trace, spec.readout_layer, TargetPolicy::MeanOverRollouts)
}

/// Noise-free mock model, mean-direction steering template and prompts.
pub struct SteeringSetup {
    pub model: MockPlanner,
    pub template: SteeringConfig,
    pub prompts: Vec<Vec<TokenId>>,
}

pub fn steering_setup(prompts_per_level: usize) -> Result<SteeringSetup> {
    let spec = MockPlannerSpec::default();
    let set = extract_all(&build_trace(&spec, 100)?)?;
    Ok(SteeringSetup {
        model: as_steerable(&spec.with_noise(0.0))?,
        template: SteeringConfig::new(0.0, set.mean_directions()),
        prompts: mock::prompts_per_level(prompts_per_level)?,
    })
}
