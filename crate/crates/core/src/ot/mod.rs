//! Optimal transport: exact discrete solvers used as oracles, the dual
//! Wasserstein-1 critic with gradient penalty, the residual map's transport
//! cost, and the cyclical-monotonicity diagnostic.

mod assignment;
mod cloud;
mod critic;
mod exact;
mod monotonicity;
mod transport_cost;

pub use assignment::{hungarian, optimal_assignment, permutations};
pub use cloud::{CostMatrix, Coupling, WeightedCloud, ground_cost};
pub use critic::{CriticLoss, Penalty, critic_wd_loss, gradient_penalty, penalty_at};
pub use exact::{Transport, exact_wasserstein, transport_simplex};
pub use monotonicity::{MonotonicityReport, check_cyclical_monotonicity, conditional_cost_matrix, monotonicity_from_costs};
pub use transport_cost::{CostGradients, CostMode, transport_cost, transport_cost_from_acts};
