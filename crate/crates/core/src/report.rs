use serde::{Deserialize, Serialize};

/// Convergence record of one iterative solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub objective: f64,
    /// Scaled constraint violation at the returned point (0 when feasible).
    pub feasibility: f64,
    /// Scaled norm of the Lagrangian gradient.
    pub stationarity: f64,
    /// Scaled complementary slackness residual; 0 for unconstrained solves.
    pub complementarity: f64,
    pub converged: bool,
    /// Objective after each outer iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

impl SolverReport {
    pub fn summary(&self) -> String {
        format!(
            "{} iterations, objective {:.6e}, feasibility {:.3e}, stationarity {:.3e}, complementarity {:.3e}",
            self.iterations, self.objective, self.feasibility, self.stationarity, self.complementarity
        )
    }
}
