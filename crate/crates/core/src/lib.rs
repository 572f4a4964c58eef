//! Distributed greedy maximization of monotone set functions over an agent
//! network, with centralized baselines and exact bound audits.
//!
//! Every agent `i` holds a local function `f_i`; the network jointly
//! maximizes the average `f = (1/n) Σ f_i` under `|S| ≤ K`. Each round the
//! agents run average consensus on their marginal gains, keep the elements
//! within `ψ` of their own best estimate, intersect candidate sets with
//! their neighbors until they agree, and append the lowest-index survivor.
//!
//! Elements and agents are 0-based in the API and 1-based in every
//! human-facing form (`Display`, serialized sets, CSV files).

pub mod analysis;
pub mod baseline;
pub mod graph;
pub mod mixing;
pub mod protocol;
pub mod seeding;
pub mod setfn;
pub mod subset;

pub use analysis::{
    audit_trace, bounds_report, epsilon, psi_min, tradeoff_sweep, BoundsReport, LemmaAudit,
};
pub use baseline::{
    brute_force_optimum, centralized_greedy, perturbed_greedy, GreedyResult, Optimum,
};
pub use graph::{diameter, generate, GraphKind, Network};
pub use mixing::{
    lazy_metropolis_weights, metropolis_weights, uniform_complete_weights, MixingMatrix,
};
pub use protocol::{run, IntersectionRule, PsiChoice, RunConfig, RunTrace};
pub use setfn::{
    check_structure, local_family, FunctionKind, FunctionSpec, LocalFamily, SetFunction,
};
pub use subset::{Element, Subset};
