#pragma once

#include <cstddef>

namespace sfa {

/// Splits the trainable-parameter budget beta * N between external adapters
/// (rho share) and internally selected scalars (the rest).
struct BudgetPlan {
    double beta = 0.0;
    double rho = 0.5;
    double beta_e = 0.0;
    double beta_i = 0.0;
    std::size_t total_params = 0;    // N = ‖θ(T)‖
    std::size_t total_quota = 0;     // floor(beta N)
    std::size_t external_quota = 0;  // floor(beta_e N), capped by total_quota
    std::size_t internal_quota = 0;  // floor(beta_i N), capped by what external leaves

    /// beta_i is computed as beta - beta_e, so beta_e + beta_i == beta.
    /// Throws ConfigError unless beta and rho lie in [0, 1].
    static BudgetPlan make(double beta, double rho, std::size_t total_params);
};

}  // namespace sfa
