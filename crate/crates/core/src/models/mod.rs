//! Vehicle model and driving scenarios.

pub mod scenarios;
pub mod unicycle;

pub use scenarios::{
    build_intersection_case, build_latency_case, IntersectionSpec, LatencySpec, ScenarioConfig,
    VehicleProblem,
};
pub use unicycle::{unicycle_jacobians, unicycle_step, UnicycleInput, UnicycleState};
