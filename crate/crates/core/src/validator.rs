//! The validator interface the engine is written against.

use crate::lang::ComponentResolver;
use crate::model::{ApiDoc, Plan, TaskInstance, ValidationOutcome};

/// Executes plans from a task's initial state and checks its goal tests.
///
/// Implementations must be deterministic and keep validations of different
/// tasks isolated from one another.
pub trait Validator: Send + Sync {
    fn validate(&self, plan: &Plan, task: &TaskInstance, components: &dyn ComponentResolver) -> ValidationOutcome;

    /// Documentation of every api the meta-domain exposes.
    fn api_docs(&self) -> Vec<ApiDoc>;
}
